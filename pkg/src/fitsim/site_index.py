"""Size-weighted site collections keyed by fitness.

Two interchangeable implementations:

* :class:`SiteIndex` -- an array-backed treap with cached subtree population
  and site counts; every mutation and sampling query is O(log S).
* :class:`NaiveSiteIndex` -- a flat fitness-sorted pair of arrays with linear
  scans, kept as a reference twin for equivalence tests.

Sites are addressed by their fitness value; a fitness is a stable handle that
survives any internal rebalancing.
"""

from __future__ import annotations

import bisect
import io
from collections import Counter
from typing import Iterable

import numpy as np

from fitsim import _treap


class SiteIndexError(Exception):
    pass


class DuplicateFitnessError(SiteIndexError):
    """Raised when inserting a fitness already present; resample and retry."""


class EmptyIndexError(SiteIndexError):
    pass


class StaleHandleError(SiteIndexError):
    pass


def _check_fitness(fitness: float) -> float:
    fitness = float(fitness)
    if not 0.0 <= fitness <= 1.0:
        raise ValueError(f"fitness must lie in [0, 1], got {fitness}")
    return fitness


def _slot(v: float, total: int) -> int:
    t = int(v * total)
    return total - 1 if t >= total else t


class _SiteIndexBase:
    def __len__(self) -> int:
        return self.total_sites

    def __iter__(self):
        keys, sizes = self.to_arrays()
        return iter(zip(keys.tolist(), sizes.tolist()))

    def sites(self) -> list[tuple[float, int]]:
        return list(self)

    def size_histogram(self, f: float = 0.0) -> dict[int, int]:
        """Counts ``k -> number of sites of size k with fitness >= f``."""
        keys, sizes = self.to_arrays()
        start = int(np.searchsorted(keys, f, side="left"))
        tail = sizes[start:]
        if tail.size == 0:
            return {}
        counts = np.bincount(tail)
        nz = np.flatnonzero(counts)
        return {int(k): int(counts[k]) for k in nz}

    def dump_csv(self) -> str:
        buf = io.StringIO()
        for fitness, size in self:
            buf.write(f"{fitness!r},{size}\n")
        return buf.getvalue()

    def load_sites(self, sites: Iterable[tuple[float, int]]) -> None:
        """Bulk-populate an empty index from ``(fitness, size)`` pairs."""
        if self.total_sites:
            raise SiteIndexError("load_sites requires an empty index")
        for fitness, size in sites:
            if size < 1:
                raise ValueError(f"site size must be positive, got {size}")
            self.insert_site(fitness)
            if size > 1:
                self._add(fitness, size - 1)


class SiteIndex(_SiteIndexBase):
    """Treap-backed site index."""

    def __init__(self, capacity: int = 1024):
        capacity = max(int(capacity), 16)
        self._nodes, self._keys, self._prio, self._meta, self._free = _treap.allocate(capacity)

    # raw arrays, passed straight to the batch kernel
    @property
    def arrays(self):
        return self._nodes, self._keys, self._prio, self._meta, self._free

    @property
    def capacity(self) -> int:
        return self._nodes.shape[0]

    def reserve(self, extra_sites: int) -> None:
        """Guarantee room for ``extra_sites`` further insertions."""
        live_slots = int(self._meta[_treap.NEXT]) - int(self._meta[_treap.FREE_TOP])
        need = live_slots + int(extra_sites)
        if need <= self.capacity:
            return
        cap = self.capacity
        while cap < need:
            cap *= 2
        self._nodes, self._keys, self._prio, self._free = _treap.grow(
            self._nodes, self._keys, self._prio, self._free, cap
        )

    @property
    def total_population(self) -> int:
        return int(_treap.total_population(self._nodes, self._meta))

    @property
    def total_sites(self) -> int:
        return int(_treap.total_sites(self._nodes, self._meta))

    def _node(self, fitness: float) -> int:
        node = _treap.find(self._nodes, self._keys, self._meta, float(fitness))
        if node == -1:
            raise StaleHandleError(f"no site at fitness {fitness!r}")
        return node

    def size_of(self, fitness: float) -> int:
        return int(self._nodes[self._node(fitness), _treap.SIZE])

    def __contains__(self, fitness) -> bool:
        return _treap.find(self._nodes, self._keys, self._meta, float(fitness)) != -1

    def insert_site(self, fitness: float) -> float:
        fitness = _check_fitness(fitness)
        self.reserve(1)
        node = _treap.insert(self._nodes, self._keys, self._prio, self._meta, self._free, fitness)
        if node == -1:
            raise DuplicateFitnessError(f"fitness {fitness!r} already present")
        return fitness

    def sample_individual(self, v: float) -> float:
        total = self.total_population
        if total == 0:
            raise EmptyIndexError("cannot sample from an empty index")
        node = _treap.select_by_population(self._nodes, self._meta, _slot(v, total))
        return float(self._keys[node])

    def sample_site(self, v: float) -> float:
        total = self.total_sites
        if total == 0:
            raise EmptyIndexError("cannot sample from an empty index")
        node = _treap.select_by_rank(self._nodes, self._meta, _slot(v, total))
        return float(self._keys[node])

    def _add(self, fitness: float, delta: int) -> None:
        _treap.add_members(self._nodes, self._node(fitness), delta)

    def increment_site(self, fitness: float) -> None:
        self._add(fitness, 1)

    def lowest_fitness(self) -> float:
        m = _treap.leftmost(self._nodes, self._meta)
        if m == -1:
            raise EmptyIndexError("index is empty")
        return float(self._keys[m])

    def remove_lowest_fitness_member(self) -> float:
        if self.total_population == 0:
            raise EmptyIndexError("cannot remove from an empty index")
        return float(_treap.remove_lowest_member(self._nodes, self._keys, self._meta, self._free))

    def remove_lowest_fitness_site(self) -> tuple[float, int]:
        if self.total_population == 0:
            raise EmptyIndexError("cannot remove from an empty index")
        key, size = _treap.remove_lowest_site(self._nodes, self._keys, self._meta, self._free)
        return float(key), int(size)

    def population_below(self, f: float) -> int:
        """Members at sites with fitness <= f."""
        return int(_treap.population_at_or_below(self._nodes, self._keys, self._meta, float(f)))

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _treap.export_sites(self._nodes, self._keys, self._meta)

    def check_invariants(self) -> None:
        bad = _treap.check_aggregates(self._nodes, self._keys, self._meta)
        if bad:
            raise AssertionError(f"treap invariants violated at {bad} node(s)")

    def load_sites(self, sites: Iterable[tuple[float, int]]) -> None:
        if self.total_sites:
            raise SiteIndexError("load_sites requires an empty index")
        pairs = list(sites)
        fitness = np.array([_check_fitness(x) for x, _ in pairs], dtype=np.float64)
        sizes = np.array([s for _, s in pairs], dtype=np.int64)
        if np.any(sizes < 1):
            raise ValueError("site sizes must be positive")
        self.reserve(sizes.size)
        if _treap.bulk_insert(*self.arrays, fitness, sizes):
            raise DuplicateFitnessError("duplicate fitness in loaded sites")

    def copy(self) -> "SiteIndex":
        other = SiteIndex.__new__(SiteIndex)
        other._nodes = self._nodes.copy()
        other._keys = self._keys.copy()
        other._prio = self._prio.copy()
        other._meta = self._meta.copy()
        other._free = self._free.copy()
        return other


class NaiveSiteIndex(_SiteIndexBase):
    """Reference implementation: sorted flat arrays, linear-time updates."""

    def __init__(self):
        self._keys: list[float] = []
        self._sizes = np.zeros(0, dtype=np.int64)

    @property
    def total_population(self) -> int:
        return int(self._sizes.sum())

    @property
    def total_sites(self) -> int:
        return len(self._keys)

    def _position(self, fitness: float) -> int:
        i = bisect.bisect_left(self._keys, fitness)
        if i == len(self._keys) or self._keys[i] != fitness:
            raise StaleHandleError(f"no site at fitness {fitness!r}")
        return i

    def size_of(self, fitness: float) -> int:
        return int(self._sizes[self._position(float(fitness))])

    def __contains__(self, fitness) -> bool:
        i = bisect.bisect_left(self._keys, float(fitness))
        return i < len(self._keys) and self._keys[i] == float(fitness)

    def insert_site(self, fitness: float) -> float:
        fitness = _check_fitness(fitness)
        i = bisect.bisect_left(self._keys, fitness)
        if i < len(self._keys) and self._keys[i] == fitness:
            raise DuplicateFitnessError(f"fitness {fitness!r} already present")
        self._keys.insert(i, fitness)
        self._sizes = np.insert(self._sizes, i, 1)
        return fitness

    def sample_individual(self, v: float) -> float:
        total = self.total_population
        if total == 0:
            raise EmptyIndexError("cannot sample from an empty index")
        target = _slot(v, total)
        i = int(np.searchsorted(np.cumsum(self._sizes), target, side="right"))
        return self._keys[i]

    def sample_site(self, v: float) -> float:
        total = self.total_sites
        if total == 0:
            raise EmptyIndexError("cannot sample from an empty index")
        return self._keys[_slot(v, total)]

    def _add(self, fitness: float, delta: int) -> None:
        self._sizes[self._position(float(fitness))] += delta

    def increment_site(self, fitness: float) -> None:
        self._add(fitness, 1)

    def lowest_fitness(self) -> float:
        if not self._keys:
            raise EmptyIndexError("index is empty")
        return self._keys[0]

    def remove_lowest_fitness_member(self) -> float:
        if not self._keys:
            raise EmptyIndexError("cannot remove from an empty index")
        key = self._keys[0]
        if self._sizes[0] > 1:
            self._sizes[0] -= 1
        else:
            del self._keys[0]
            self._sizes = self._sizes[1:].copy()
        return key

    def remove_lowest_fitness_site(self) -> tuple[float, int]:
        if not self._keys:
            raise EmptyIndexError("cannot remove from an empty index")
        key, size = self._keys.pop(0), int(self._sizes[0])
        self._sizes = self._sizes[1:].copy()
        return key, size

    def population_below(self, f: float) -> int:
        i = bisect.bisect_right(self._keys, float(f))
        return int(self._sizes[:i].sum())

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self._keys, dtype=np.float64), self._sizes.copy()

    def check_invariants(self) -> None:
        assert all(a < b for a, b in zip(self._keys, self._keys[1:]))
        assert len(self._keys) == self._sizes.size
        assert (self._sizes >= 1).all()

    def copy(self) -> "NaiveSiteIndex":
        other = NaiveSiteIndex()
        other._keys = list(self._keys)
        other._sizes = self._sizes.copy()
        return other


def histogram_from_sites(sites: Iterable[tuple[float, int]], f: float = 0.0) -> dict[int, int]:
    """Brute-force size histogram, used as a test oracle."""
    return dict(Counter(size for fitness, size in sites if fitness >= f))
