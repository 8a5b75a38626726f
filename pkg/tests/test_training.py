import logging

import numpy as np
import pytest

from ivos.embedding import FeatureEncoder
from ivos.errors import EmptyReferenceError
from ivos.evaluation import generate_synthetic_video
from ivos.heads import HeadConfig, HeadParams, LossSchedule
from ivos.matching import MatchConfig
from ivos.robot import RobotConfig
from ivos.training import train_stage1, train_stage2

DIM = 8
IN_CHANNELS = DIM + 3


@pytest.fixture(scope="module")
def corpus():
    return [generate_synthetic_video(s, 6, 48, 48, 1, name=f"t{s}") for s in (1, 2)]


@pytest.fixture(scope="module")
def encoder():
    return FeatureEncoder(dim=DIM, stride=4, seed=0, gain=2.5)


def fresh_params(seed=0):
    return HeadParams(HeadConfig(1, 8, 3, True), IN_CHANNELS, seed=seed)


def snapshot(params):
    return [arr.copy() for _, arr in params.named_arrays()]


def test_zero_steps_leaves_params_unchanged(corpus, encoder):
    params = fresh_params()
    before = snapshot(params)
    _, trace = train_stage1(params, corpus, 0, encoder)
    assert trace == []
    for (_, after), b in zip(params.named_arrays(), before):
        assert np.array_equal(after, b)


def test_stage1_is_deterministic(corpus, encoder):
    traces = []
    for _ in range(2):
        params = fresh_params(seed=3)
        _, trace = train_stage1(params, corpus, 12, encoder, lr=0.02, seed=9)
        traces.append(trace)
    assert traces[0] == traces[1]


def test_stage1_loss_decreases(corpus, encoder):
    params = fresh_params(seed=1)
    _, trace = train_stage1(
        params, corpus, 80, encoder, lr=0.05, seed=4,
        schedule=LossSchedule(1.0, 0.5, 60),
    )
    losses = [l for _, l, _ in trace]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_stage2_runs_and_is_deterministic(corpus, encoder):
    traces = []
    for _ in range(2):
        params = fresh_params(seed=5)
        _, trace = train_stage2(
            params, corpus, 9, encoder, robot_cfg=RobotConfig(min_region_cells=5),
            lr=0.02, seed=11,
        )
        traces.append(trace)
    assert traces[0] == traces[1]
    assert len(traces[0]) == 9
    steps = [s for s, _, _ in traces[0]]
    assert steps == list(range(9))


def test_stage2_loss_decreases(corpus, encoder):
    params = fresh_params(seed=2)
    _, trace = train_stage2(
        params, corpus, 60, encoder, robot_cfg=RobotConfig(min_region_cells=5),
        lr=0.05, seed=8, schedule=LossSchedule(1.0, 0.5, 50),
    )
    losses = [l for _, l, _ in trace]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_short_videos_skipped_with_warning(encoder, caplog):
    tiny = generate_synthetic_video(5, 2, 32, 32, 1, name="tiny")
    ok = generate_synthetic_video(6, 4, 32, 32, 1, name="ok")
    params = fresh_params()
    with caplog.at_level(logging.WARNING):
        train_stage1(params, [tiny, ok], 2, encoder)
    assert any("tiny" in rec.message for rec in caplog.records)


def test_all_short_corpus_rejected(encoder):
    tiny = generate_synthetic_video(5, 2, 32, 32, 1, name="tiny")
    with pytest.raises(EmptyReferenceError):
        train_stage1(fresh_params(), [tiny], 2, encoder)
