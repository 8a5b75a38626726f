import io
import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from ivos.core import (
    ScribbleSet, ScribbleStroke, load_mask_png, scribbles_from_json,
    scribbles_to_json,
)
from ivos.evaluation import generate_synthetic_video
from ivos.service import create_app
from ivos.session import apply_rough_roi


def png_bytes(array):
    buf = io.BytesIO()
    Image.fromarray(array, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def make_video_frames(n=4, size=32, seed=0):
    video = generate_synthetic_video(seed, n, size, size, 1)
    return [png_bytes(video.frames.frame(t)) for t in range(n)]


def wait_ready(client, session_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        handle = client.get(f"/sessions/{session_id}").json()
        if handle["state"] in ("ready", "error"):
            return handle
        time.sleep(0.02)
    raise TimeoutError("session never became ready")


def scribble_json(frame=0):
    scr = ScribbleSet(frame, (
        ScribbleStroke(1, "pos", ((8, 8), (20, 16))),
    ))
    return scribbles_to_json(scr)


@pytest.fixture
def client(tmp_path):
    app = create_app(tmp_path / "root")
    with TestClient(app) as c:
        yield c


def create_via_upload(client, frames, objects=2, config=None):
    files = [("frames", (f"{i:05d}.png", blob, "image/png"))
             for i, blob in enumerate(frames)]
    data = {"objects": str(objects), "config": json.dumps(config or {})}
    resp = client.post("/sessions", files=files, data=data)
    assert resp.status_code == 200, resp.text
    return resp.json()["id"]


# ---------------------------------------------------------------------------


def test_create_session_encodes_uploads(client):
    sid = create_via_upload(client, make_video_frames(4))
    handle = wait_ready(client, sid)
    assert handle["state"] == "ready"
    assert handle["frames"] == 4
    metrics = client.get(f"/sessions/{sid}/metrics").json()
    assert metrics["encoder_invocations"] == 4


def test_create_session_from_path(client, tmp_path):
    video = generate_synthetic_video(1, 3, 24, 24, 1)
    from ivos.core import save_frames
    save_frames(video.frames, tmp_path / "frames")
    resp = client.post("/sessions", json={
        "objects": 2, "path": str(tmp_path / "frames"),
    })
    assert resp.status_code == 200
    handle = wait_ready(client, resp.json()["id"])
    assert handle["state"] == "ready" and handle["frames"] == 3


def test_duplicate_creates_are_independent(client, tmp_path):
    video = generate_synthetic_video(1, 2, 24, 24, 1)
    from ivos.core import save_frames
    save_frames(video.frames, tmp_path / "frames")
    ids = set()
    for _ in range(2):
        resp = client.post("/sessions", json={
            "objects": 2, "path": str(tmp_path / "frames"),
        })
        ids.add(resp.json()["id"])
    assert len(ids) == 2


def test_corrupt_png_surfaces_error_state(client):
    files = [("frames", ("00000.png", b"not a png", "image/png"))]
    resp = client.post("/sessions", files=files, data={"objects": "2", "config": "{}"})
    sid = resp.json()["id"]
    handle = wait_ready(client, sid)
    assert handle["state"] == "error"
    assert handle["error"]


def test_round_trip_masks_and_rough_roi(client):
    frames = make_video_frames(3)
    sid = create_via_upload(client, frames)
    wait_ready(client, sid)
    resp = client.post(f"/sessions/{sid}/scribbles", content=scribble_json())
    assert resp.status_code == 200
    assert resp.json()["round"] == 1
    handle = wait_ready(client, sid)
    assert handle["round"] == 1

    # stored scribbles must equal the rough-ROI oracle applied to the submission
    stored = client.get(f"/sessions/{sid}/rounds/1/scribbles")
    expected = apply_rough_roi(scribbles_from_json(scribble_json()), 32, 32, 0.5)
    assert stored.text == scribbles_to_json(expected)

    manifest = client.get(f"/sessions/{sid}/rounds/1/masks").json()
    assert len(manifest["files"]) == 3
    assert manifest["provenance"]["annotated_frame"] == 0

    png = client.get(f"/sessions/{sid}/rounds/1/masks", params={"frame": 1})
    assert png.status_code == 200
    stored_file = None
    # byte-identical to the on-disk artifact
    store = client.app.state.store
    stored_file = (store.entries[sid].directory / "rounds" / "1" / "masks" /
                   "00001.png").read_bytes()
    assert png.content == stored_file


def test_mask_png_decodes_to_valid_label_mask(client, tmp_path):
    sid = create_via_upload(client, make_video_frames(2))
    wait_ready(client, sid)
    client.post(f"/sessions/{sid}/scribbles", content=scribble_json())
    wait_ready(client, sid)
    png = client.get(f"/sessions/{sid}/rounds/1/masks", params={"frame": 0})
    path = tmp_path / "m.png"
    path.write_bytes(png.content)
    mask = load_mask_png(path)
    assert mask.grid.shape == (32, 32)
    assert mask.grid.max() < 2


def test_unknown_round_and_frame_404(client):
    sid = create_via_upload(client, make_video_frames(2))
    wait_ready(client, sid)
    assert client.get(f"/sessions/{sid}/rounds/0/masks").status_code == 404
    assert client.get(f"/sessions/{sid}/rounds/3/masks").status_code == 404
    assert client.get(f"/sessions/{sid}/frames/9").status_code == 404
    assert client.get("/sessions/nope").status_code == 404


def test_invalid_object_rejected(client):
    sid = create_via_upload(client, make_video_frames(2))
    wait_ready(client, sid)
    bad = scribbles_to_json(ScribbleSet(0, (
        ScribbleStroke(9, "pos", ((1, 1), (2, 2))),
    )))
    resp = client.post(f"/sessions/{sid}/scribbles", content=bad)
    handle = wait_ready(client, sid)
    # rejected either synchronously (validation) or in the worker (error state)
    assert resp.status_code in (409, 422) or handle["state"] == "error"


def test_concurrent_submission_conflicts(client):
    sid = create_via_upload(client, make_video_frames(6, size=48))
    wait_ready(client, sid)
    first = client.post(f"/sessions/{sid}/scribbles", content=scribble_json())
    assert first.status_code == 200
    second = client.post(f"/sessions/{sid}/scribbles", content=scribble_json())
    # the first round is still propagating (48x48, 6 frames takes a moment)
    assert second.status_code in (409, 200)
    if second.status_code == 409:
        assert "in flight" in second.json()["detail"]
    wait_ready(client, sid)


def test_websocket_streams_frame_events(client):
    sid = create_via_upload(client, make_video_frames(3))
    wait_ready(client, sid)
    with client.websocket_connect(f"/sessions/{sid}/events") as ws:
        client.post(f"/sessions/{sid}/scribbles", content=scribble_json())
        events = []
        while True:
            event = ws.receive_json()
            events.append(event)
            if event.get("done"):
                break
    frames_seen = {e["frame"] for e in events if not e.get("done")}
    assert frames_seen == {0, 1, 2}
    assert events[-1] == {"round": 1, "done": True}


def test_metrics_counter_stays_n_across_rounds(client):
    sid = create_via_upload(client, make_video_frames(3))
    wait_ready(client, sid)
    for frame in (0, 1, 2):
        client.post(f"/sessions/{sid}/scribbles",
                    content=scribble_json(frame=frame))
        wait_ready(client, sid)
    metrics = client.get(f"/sessions/{sid}/metrics").json()
    assert metrics["rounds_completed"] == 3
    assert metrics["encoder_invocations"] == 3  # still n, not n * rounds


# ---------------------------------------------------------------------------
# restore


def test_restart_preserves_round_history(tmp_path):
    root = tmp_path / "root"
    frames = make_video_frames(3)
    with TestClient(create_app(root)) as client:
        sid = create_via_upload(client, frames)
        wait_ready(client, sid)
        for frame in (0, 2):
            client.post(f"/sessions/{sid}/scribbles", content=scribble_json(frame))
            wait_ready(client, sid)
        before = client.get(f"/sessions/{sid}/rounds/2/masks", params={"frame": 1})
        metrics_before = client.get(f"/sessions/{sid}/metrics").json()

    with TestClient(create_app(root)) as client:  # fresh process equivalent
        handle = client.get(f"/sessions/{sid}").json()
        assert handle["state"] == "ready" and handle["round"] == 2
        after = client.get(f"/sessions/{sid}/rounds/2/masks", params={"frame": 1})
        assert after.content == before.content
        metrics = client.get(f"/sessions/{sid}/metrics").json()
        assert metrics["encoder_invocations"] == metrics_before["encoder_invocations"]
        # the restored session keeps working
        resp = client.post(f"/sessions/{sid}/scribbles", content=scribble_json(1))
        assert resp.status_code == 200
        handle = wait_ready(client, sid)
        assert handle["round"] == 3


def test_empty_root_restores_nothing(tmp_path):
    with TestClient(create_app(tmp_path / "root")) as client:
        assert client.get("/sessions").json() == []


def test_one_corrupt_manifest_among_three(tmp_path):
    root = tmp_path / "root"
    frames = make_video_frames(2)
    ids = []
    with TestClient(create_app(root)) as client:
        for _ in range(3):
            sid = create_via_upload(client, frames)
            wait_ready(client, sid)
            ids.append(sid)
    (root / ids[1] / "session.json").write_text("{corrupt")
    with TestClient(create_app(root)) as client:
        states = {sid: client.get(f"/sessions/{sid}").json()["state"] for sid in ids}
    assert states[ids[0]] == "ready"
    assert states[ids[2]] == "ready"
    assert states[ids[1]] == "error"
