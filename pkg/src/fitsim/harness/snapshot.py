"""Versioned text snapshots.

Line 1 is a JSON header; every following line is ``fitness,size`` in
ascending fitness, with fitness written as the shortest round-tripping
decimal. Reloading and continuing reproduces an uninterrupted run exactly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fitsim import _treap
from fitsim.model import ModelState, Params, StateView
from fitsim.rng import COLLISION_STREAM, WORDS_PER_STEP, VariateStream
from fitsim.site_index import NaiveSiteIndex, SiteIndex

FORMAT = "fitsim-snapshot"
VERSION = 1


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class Snapshot:
    params: Params
    n: int
    collision_position: int
    fitness: np.ndarray
    sizes: np.ndarray

    @classmethod
    def from_view(cls, view: StateView) -> "Snapshot":
        return cls(view.params, view.n, view.collision_position, view.fitness, view.sizes)

    @property
    def population(self) -> int:
        return int(self.sizes.sum())

    def header(self) -> dict:
        p = self.params
        return {
            "format": FORMAT,
            "version": VERSION,
            "params": {"p": p.p, "r": p.r, "variant": p.variant, "seed": p.seed, "t0": p.t0},
            "n": self.n,
            "rng": {"main_position": WORDS_PER_STEP * self.n, "collision_position": self.collision_position},
            "population": self.population,
            "sites": int(self.sizes.size),
        }

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(json.dumps(self.header(), sort_keys=True))
        buf.write("\n")
        buf.writelines(f"{x!r},{s}\n" for x, s in zip(self.fitness.tolist(), self.sizes.tolist()))
        return buf.getvalue()

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.dumps())
        tmp.replace(path)
        return path

    def to_state(self, naive: bool = False) -> ModelState:
        if naive:
            index = NaiveSiteIndex()
            index.load_sites(zip(self.fitness.tolist(), self.sizes.tolist()))
        else:
            index = SiteIndex(capacity=max(16, 2 * self.sizes.size))
            if self.sizes.size:
                bad = _bulk_load(index, self.fitness, self.sizes)
                if bad:
                    raise SnapshotError("snapshot fitness values are not strictly increasing")
        collisions = VariateStream(self.params.seed, COLLISION_STREAM, self.collision_position)
        return ModelState(params=self.params, index=index, n=self.n, collisions=collisions)


def _bulk_load(index: SiteIndex, fitness: np.ndarray, sizes: np.ndarray) -> int:
    index.reserve(sizes.size)
    return int(_treap.bulk_insert(*index.arrays, np.ascontiguousarray(fitness, dtype=np.float64),
                                  np.ascontiguousarray(sizes, dtype=np.int64)))


def parse(text: str) -> Snapshot:
    head, _, body = text.partition("\n")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"bad snapshot header: {exc}") from exc
    if header.get("format") != FORMAT:
        raise SnapshotError("not a fitsim snapshot")
    if header.get("version") != VERSION:
        raise SnapshotError(f"unsupported snapshot version {header.get('version')}")
    params = Params(**header["params"])
    if body.strip():
        table = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.float64, ndmin=2)
        fitness = np.ascontiguousarray(table[:, 0])
        sizes = table[:, 1].astype(np.int64)
    else:
        fitness, sizes = np.zeros(0), np.zeros(0, dtype=np.int64)
    if sizes.size != header["sites"] or int(sizes.sum()) != header["population"]:
        raise SnapshotError("snapshot body does not match its header summary")
    if np.any(sizes < 1) or np.any(np.diff(fitness) <= 0):
        raise SnapshotError("snapshot sites must have positive sizes and increasing fitness")
    if header["rng"]["main_position"] != WORDS_PER_STEP * header["n"]:
        raise SnapshotError("main stream position is inconsistent with the step count")
    return Snapshot(params, int(header["n"]), int(header["rng"]["collision_position"]), fitness, sizes)


def read(path: str | Path) -> Snapshot:
    try:
        return parse(Path(path).read_text())
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from exc
