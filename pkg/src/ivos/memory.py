"""Round-spanning map memories.

The global memory folds every matching map (and every augmented map on the
interactive frame) into a per-cell running minimum, so evidence gathered in
earlier rounds is never lost. The local memory archives each round's local
maps verbatim and serves reads from whichever retained round annotated the
frame nearest in time, forgetting rounds older than the retention window.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ScalarMap
from .embedding import load_scalar_map, save_scalar_map
from .errors import ContractViolation


@dataclass(frozen=True)
class ForgettingConfig:
    """Number of most-recent rounds whose local maps stay readable."""

    retained_rounds: int = 2

    def __post_init__(self):
        if self.retained_rounds < 1:
            raise ContractViolation(
                f"retained_rounds must be >= 1, got {self.retained_rounds}"
            )


class GlobalMapMemory:
    """Per (frame, object) running cellwise minimum, initialized to all ones."""

    def __init__(self, n: int, object_count: int, h: int, w: int):
        # n == 0 builds a degenerate empty memory whose reads are all rejected
        if n < 0 or min(object_count, h, w) < 1:
            raise ContractViolation(
                f"global memory dims must be positive, got {(n, object_count, h, w)}"
            )
        self.store = np.ones((n, object_count, h, w), dtype=np.float64)
        self.round_written = np.zeros((n, object_count), dtype=np.int64)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.store.shape

    def _check(self, t: int, o: int) -> None:
        n, oc = self.store.shape[:2]
        if not (0 <= t < n) or not (0 <= o < oc):
            raise ContractViolation(f"(t={t}, o={o}) outside memory of shape {(n, oc)}")

    def write(self, t: int, round_index: int, smap: ScalarMap) -> None:
        self._check(t, smap.object_id)
        if round_index < 1:
            raise ContractViolation(f"rounds are 1-based, got {round_index}")
        if smap.grid.shape != self.store.shape[2:]:
            raise ContractViolation(
                f"map shape {smap.grid.shape} != memory shape {self.store.shape[2:]}"
            )
        slot = self.store[t, smap.object_id]
        np.minimum(slot, smap.grid, out=slot)
        self.round_written[t, smap.object_id] = round_index

    def read(self, t: int, object_id: int) -> ScalarMap:
        self._check(t, object_id)
        return ScalarMap(self.store[t, object_id].copy(), object_id)


class LocalMapMemory:
    """Verbatim per-round archive of local maps with R-round forgetting.

    Entries are keyed (frame, round, object); each round may write a frame
    once. Reads pick, among retained rounds holding an entry for the frame,
    the round whose annotated frame is nearest in time (ties go to the more
    recent round) and return None when nothing is retained.
    """

    def __init__(self, retention: ForgettingConfig = ForgettingConfig()):
        self.retention = retention
        self.store: dict[tuple[int, int, int], np.ndarray] = {}
        self.annotated_frames: dict[int, int] = {}

    def record_annotated_frame(self, round_index: int, frame_index: int) -> None:
        if round_index in self.annotated_frames:
            raise ContractViolation(f"round {round_index} already has an annotated frame")
        if round_index != len(self.annotated_frames) + 1:
            raise ContractViolation(
                f"rounds must be recorded in order; expected "
                f"{len(self.annotated_frames) + 1}, got {round_index}"
            )
        self.annotated_frames[round_index] = frame_index

    def write(self, t: int, round_index: int, object_id: int, smap: ScalarMap) -> None:
        key = (t, round_index, object_id)
        if key in self.store:
            raise ContractViolation(
                f"frame {t} already propagated for object {object_id} in round "
                f"{round_index}"
            )
        self.store[key] = smap.grid.copy()
        self._evict(round_index)

    def _evict(self, current_round: int) -> None:
        horizon = current_round - self.retention.retained_rounds
        if horizon < 1:
            return
        for key in [k for k in self.store if k[1] <= horizon]:
            del self.store[key]

    def retained_rounds_for(self, t: int, current_round: int, object_id: int) -> list[int]:
        lo = current_round - self.retention.retained_rounds + 1
        return sorted(
            r for (frame, r, o) in self.store
            if frame == t and o == object_id and lo <= r <= current_round
        )

    def read(self, t: int, current_round: int, object_id: int) -> tuple[np.ndarray, int] | None:
        """Return (map, serving round) or None when no retained round has one."""
        candidates = self.retained_rounds_for(t, current_round, object_id)
        if not candidates:
            return None
        best = None
        best_dist = None
        for r in candidates:  # ascending, so later rounds win ties
            dist = abs(t - self.annotated_frames[r])
            if best_dist is None or dist <= best_dist:
                best, best_dist = r, dist
        return self.store[(t, best, object_id)].copy(), best


# ---------------------------------------------------------------------------
# snapshot persistence (scalar-map files under a session directory)


def save_memory_snapshot(global_mem: GlobalMapMemory, local_mem: LocalMapMemory,
                         directory: str | Path) -> None:
    directory = Path(directory)
    gdir = directory / "global"
    ldir = directory / "local"
    gdir.mkdir(parents=True, exist_ok=True)
    ldir.mkdir(parents=True, exist_ok=True)
    n, oc = global_mem.store.shape[:2]
    for t in range(n):
        for o in range(oc):
            save_scalar_map(global_mem.store[t, o], gdir / f"t{t:05d}_o{o:03d}.maef")
    for old in ldir.glob("*.maef"):
        old.unlink()
    for (t, r, o), grid in local_mem.store.items():
        save_scalar_map(grid, ldir / f"r{r:04d}_t{t:05d}_o{o:03d}.maef")


def load_memory_snapshot(directory: str | Path, n: int, object_count: int,
                         h: int, w: int, retention: ForgettingConfig,
                         annotated_frames: dict[int, int]) -> tuple[GlobalMapMemory, LocalMapMemory]:
    directory = Path(directory)
    global_mem = GlobalMapMemory(n, object_count, h, w)
    for t in range(n):
        for o in range(object_count):
            path = directory / "global" / f"t{t:05d}_o{o:03d}.maef"
            if path.exists():
                global_mem.store[t, o] = load_scalar_map(path)
    local_mem = LocalMapMemory(retention)
    local_mem.annotated_frames = dict(annotated_frames)
    for path in sorted((directory / "local").glob("*.maef")):
        r, t, o = (int(part[1:]) for part in path.stem.split("_"))
        local_mem.store[(t, r, o)] = load_scalar_map(path)
    return global_mem, local_mem
