"""Exact finite-population cluster state.

Clusters of size >= 2 live in numbered slots of a Fenwick tree whose integer
weights are the cluster sizes; monomers are pooled in a single counter. A
node drawn uniformly from the M units therefore selects the monomer pool with
probability monomer_count/M and a stored cluster with probability size/M,
exactly. A max segment tree over the same slots tracks k_max.

The array-level kernels below are shared with the engine's inner loop.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, NamedTuple

import numpy as np
from numba import njit

from gelshatter.observables import SizeHistogram

__all__ = [
    "SimulationConfig",
    "ConfigError",
    "ClusterPopulation",
    "Entry",
    "EventOutcome",
    "EventTag",
    "coalescence_rate",
    "fragmentation_rate",
]

# Layout of the int64 ``meta`` vector carried by every population.
MON, NCL, FTOP, MASS, CAP, P2, TOPBIT = range(7)
MONOMER_SLOT = -1


class ConfigError(ValueError):
    """Invalid simulation configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class SimulationConfig:
    M: int
    K_hat: float
    F_hat: float
    frag_threshold: int = 1
    seed: int = 0
    max_steps: int = 1_000_000
    sample_interval: int = 1000
    record_histograms: bool = False
    init: str = "monomers"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def _int(name):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ConfigError(name, f"must be an integer, got {v!r}")
            return int(v)

        if _int("M") < 2:
            raise ConfigError("M", "must be >= 2")
        for name in ("K_hat", "F_hat"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(name, "must be a finite non-negative rate")
        if self.K_hat + self.F_hat <= 0:
            raise ConfigError("K_hat", "K_hat + F_hat must be positive")
        if not 1 <= _int("frag_threshold") <= self.M:
            raise ConfigError("frag_threshold", f"must lie in [1, M={self.M}]")
        seed = _int("seed")
        if not 0 <= seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if _int("max_steps") < 1:
            raise ConfigError("max_steps", "must be positive")
        if _int("sample_interval") < 1:
            raise ConfigError("sample_interval", "must be positive")
        if self.init not in ("monomers", "gel"):
            raise ConfigError("init", "must be 'monomers' or 'gel'")

    @property
    def r(self) -> float:
        """Ratio of gelation to shattering time scales, F_hat * M / K_hat."""
        return self.F_hat * self.M / self.K_hat if self.K_hat > 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "M": int(self.M),
            "K_hat": float(self.K_hat),
            "F_hat": float(self.F_hat),
            "frag_threshold": int(self.frag_threshold),
            "seed": int(self.seed),
            "max_steps": int(self.max_steps),
            "sample_interval": int(self.sample_interval),
            "record_histograms": bool(self.record_histograms),
            "init": self.init,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        return cls(**d)


def coalescence_rate(i: int, j: int, cfg: SimulationConfig) -> float:
    return cfg.K_hat * (i / cfg.M) * (j / cfg.M)


def fragmentation_rate(i: int, cfg: SimulationConfig) -> float:
    # Clusters at or below the threshold are immune; threshold 1 only spares monomers.
    if i <= cfg.frag_threshold:
        return 0.0
    return cfg.F_hat * (i / cfg.M)


class EventTag(Enum):
    COALESCED = "coalesced"
    SHATTERED = "shattered"
    NOOP = "noop"


@dataclass(frozen=True)
class EventOutcome:
    tag: EventTag
    sizes: tuple = ()
    attempt: str = ""  # "coalescence" or "fragmentation"


class Entry(NamedTuple):
    """Handle to one population entry.

    ``slot`` is -1 for the monomer pool, in which case ``node`` identifies the
    individual monomer so that two distinct monomers can be merged.
    """

    slot: int
    size: int
    node: int = -1


# --------------------------------------------------------------------------
# array kernels


@njit(cache=True)
def _fen_add(fen, cap, i, delta):
    while i <= cap:
        fen[i] += delta
        i += i & (-i)


@njit(cache=True)
def _fen_find(fen, cap, topbit, v):
    # smallest slot whose prefix sum exceeds v (v is 0-based)
    pos = 0
    step = topbit
    while step > 0:
        nxt = pos + step
        if nxt <= cap and fen[nxt] <= v:
            pos = nxt
            v -= fen[nxt]
        step >>= 1
    return pos + 1


@njit(cache=True)
def _max_set(maxt, p2, slot, val):
    k = p2 + slot - 1
    maxt[k] = val
    k >>= 1
    while k >= 1:
        a = maxt[2 * k]
        b = maxt[2 * k + 1]
        maxt[k] = a if a > b else b
        k >>= 1


@njit(cache=True)
def _kmax(meta, maxt):
    if meta[NCL] > 0:
        return maxt[1]
    return 1


@njit(cache=True)
def _locate(meta, fen, u):
    if u < meta[MON]:
        return MONOMER_SLOT
    return _fen_find(fen, meta[CAP], meta[TOPBIT], u - meta[MON])


@njit(cache=True)
def _remove(meta, fen, size, maxt, free, slot):
    s = size[slot]
    _fen_add(fen, meta[CAP], slot, -s)
    _max_set(maxt, meta[P2], slot, 0)
    size[slot] = 0
    free[meta[FTOP]] = slot
    meta[FTOP] += 1
    meta[NCL] -= 1
    return s


@njit(cache=True)
def _insert(meta, fen, size, maxt, free, s):
    meta[FTOP] -= 1
    slot = free[meta[FTOP]]
    size[slot] = s
    _fen_add(fen, meta[CAP], slot, s)
    _max_set(maxt, meta[P2], slot, s)
    meta[NCL] += 1
    return slot


@njit(cache=True)
def _grow(meta, fen, size, maxt, slot, ds):
    size[slot] += ds
    _fen_add(fen, meta[CAP], slot, ds)
    _max_set(maxt, meta[P2], slot, size[slot])


@njit(cache=True)
def _merge(meta, fen, size, maxt, free, sa, sb):
    """Merge two distinct entries; returns the slot of the merged cluster."""
    if sa != MONOMER_SLOT:
        if sb == MONOMER_SLOT:
            meta[MON] -= 1
            _grow(meta, fen, size, maxt, sa, 1)
        else:
            sbsize = _remove(meta, fen, size, maxt, free, sb)
            _grow(meta, fen, size, maxt, sa, sbsize)
        return sa
    if sb != MONOMER_SLOT:
        meta[MON] -= 1
        _grow(meta, fen, size, maxt, sb, 1)
        return sb
    meta[MON] -= 2
    return _insert(meta, fen, size, maxt, free, 2)


@njit(cache=True)
def _shatter(meta, fen, size, maxt, free, slot):
    s = _remove(meta, fen, size, maxt, free, slot)
    meta[MON] += s
    return s


@njit(cache=True)
def _bounded(raw, pos, n, reject_below):
    # Unbiased draw in [0, n): words below 2**64 mod n are rejected.
    # Returns (value, new_pos); value -1 if the buffer ran out.
    while pos < raw.shape[0]:
        u = raw[pos]
        pos += 1
        if u >= reject_below:
            return np.int64(u % n), pos
    return np.int64(-1), pos


# outcome codes of _one_step
NOOP_COAL, NOOP_FRAG, COALESCED, SHATTERED, STARVED = 0, 1, 2, 3, -1


@njit(cache=True)
def _one_step(meta, fen, size, maxt, free, raw, pos, coal_cut, reject_below, threshold):
    """One event attempt. Returns (code, a, b, new_pos).

    COALESCED: a, b are the merged sizes. SHATTERED: a is the size and b is 1
    if it was (one of) the largest clusters. STARVED: not enough random words
    remained; nothing was changed and pos is unchanged.
    """
    M = meta[MASS]
    start = pos
    if pos >= raw.shape[0]:
        return STARVED, 0, 0, start
    u0 = raw[pos]
    pos += 1
    if (u0 >> np.uint64(11)) < coal_cut:
        u1, pos = _bounded(raw, pos, np.uint64(M), reject_below)
        if u1 < 0:
            return STARVED, 0, 0, start
        u2, pos = _bounded(raw, pos, np.uint64(M), reject_below)
        if u2 < 0:
            return STARVED, 0, 0, start
        s1 = _locate(meta, fen, u1)
        s2 = _locate(meta, fen, u2)
        if s1 == s2 and (s1 != MONOMER_SLOT or u1 == u2):
            return NOOP_COAL, 0, 0, pos
        i = 1 if s1 == MONOMER_SLOT else size[s1]
        j = 1 if s2 == MONOMER_SLOT else size[s2]
        _merge(meta, fen, size, maxt, free, s1, s2)
        return COALESCED, i, j, pos
    u1, pos = _bounded(raw, pos, np.uint64(M), reject_below)
    if u1 < 0:
        return STARVED, 0, 0, start
    s1 = _locate(meta, fen, u1)
    if s1 == MONOMER_SLOT:
        return NOOP_FRAG, 0, 0, pos
    s = size[s1]
    if s <= threshold:
        return NOOP_FRAG, 0, 0, pos
    largest = 1 if s == maxt[1] else 0
    _shatter(meta, fen, size, maxt, free, s1)
    return SHATTERED, s, largest, pos


# --------------------------------------------------------------------------


def _topbit(n: int) -> int:
    return 1 << (n.bit_length() - 1)


class ClusterPopulation:
    """Multiset of cluster sizes over M conserved monomer units.

    Not thread-safe; each simulation owns its population exclusively.
    """

    def __init__(self, M: int):
        if M < 2:
            raise ValueError("M must be >= 2")
        cap = max(1, M // 2)
        p2 = 1 << (cap - 1).bit_length()
        self.meta = np.array([M, 0, cap, M, cap, p2, _topbit(cap)], dtype=np.int64)
        self.fen = np.zeros(cap + 1, dtype=np.int64)
        self.size = np.zeros(cap + 1, dtype=np.int64)
        self.maxt = np.zeros(2 * p2, dtype=np.int64)
        # free-slot stack; popping yields slots 1, 2, 3, ... in order
        self.free = np.arange(cap, 0, -1, dtype=np.int64)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_sizes(cls, M: int, sizes) -> "ClusterPopulation":
        """Build from an iterable of cluster sizes (1s go to the monomer pool)."""
        pop = cls(M)
        sizes = [int(s) for s in sizes]
        if any(s < 1 for s in sizes) or sum(sizes) != M:
            raise ValueError("cluster sizes must be positive and sum to M")
        for s in sizes:
            if s >= 2:
                pop.meta[MON] -= s
                _insert(pop.meta, pop.fen, pop.size, pop.maxt, pop.free, s)
        return pop

    @classmethod
    def from_histogram(cls, hist: SizeHistogram | dict, M: int | None = None) -> "ClusterPopulation":
        if isinstance(hist, SizeHistogram):
            M = hist.M
            items = zip(hist.sizes.tolist(), hist.counts.tolist())
        else:
            items = [(int(k), int(v)) for k, v in hist.items()]
            if M is None:
                M = sum(k * v for k, v in items)
        sizes = []
        for s, c in sorted(items):
            sizes.extend([int(s)] * int(c))
        return cls.from_sizes(M, sizes)

    @classmethod
    def single_gel(cls, M: int) -> "ClusterPopulation":
        return cls.from_sizes(M, [M])

    # -- scalar views --------------------------------------------------------

    @property
    def M(self) -> int:
        return int(self.meta[MASS])

    @property
    def monomer_count(self) -> int:
        return int(self.meta[MON])

    @property
    def n_clusters(self) -> int:
        """Number of stored (size >= 2) clusters."""
        return int(self.meta[NCL])

    @property
    def N(self) -> int:
        return self.monomer_count + self.n_clusters

    @property
    def k_max(self) -> int:
        return int(_kmax(self.meta, self.maxt))

    @property
    def total_mass(self) -> int:
        cap = int(self.meta[CAP])
        s, i = 0, cap
        while i > 0:
            s += int(self.fen[i])
            i -= i & (-i)
        return self.monomer_count + s

    # -- operations ----------------------------------------------------------

    def sample_node_cluster(self, rng: np.random.Generator) -> Entry:
        """Pick a node uniformly and return the entry it belongs to."""
        u = int(rng.integers(self.M))
        slot = int(_locate(self.meta, self.fen, u))
        if slot == MONOMER_SLOT:
            return Entry(MONOMER_SLOT, 1, u)
        return Entry(slot, int(self.size[slot]), u)

    def handles(self) -> Iterator[Entry]:
        for slot in np.flatnonzero(self.size).tolist():
            yield Entry(slot, int(self.size[slot]))

    def monomer(self, node: int = 0) -> Entry:
        if not 0 <= node < self.monomer_count:
            raise ValueError(f"no monomer {node}; pool holds {self.monomer_count}")
        return Entry(MONOMER_SLOT, 1, node)

    def _check_entry(self, e: Entry) -> None:
        if e.slot == MONOMER_SLOT:
            if self.monomer_count < 1:
                raise ValueError("monomer pool is empty")
            return
        if not 1 <= e.slot <= int(self.meta[CAP]) or self.size[e.slot] == 0:
            raise ValueError(f"slot {e.slot} holds no cluster")
        if int(self.size[e.slot]) != e.size:
            raise ValueError(f"stale handle: slot {e.slot} has size {self.size[e.slot]}, not {e.size}")

    def merge(self, a: Entry, b: Entry) -> Entry:
        """Merge two distinct entries into one cluster; returns its handle."""
        self._check_entry(a)
        self._check_entry(b)
        if a.slot == b.slot:
            if a.slot != MONOMER_SLOT or a.node == b.node:
                raise ValueError("cannot merge an entry with itself")
            if self.monomer_count < 2:
                raise ValueError("need two monomers in the pool")
        slot = int(_merge(self.meta, self.fen, self.size, self.maxt, self.free, a.slot, b.slot))
        return Entry(slot, int(self.size[slot]))

    def shatter(self, a: Entry) -> int:
        """Break a stored cluster into monomers; returns the number released."""
        if a.slot == MONOMER_SLOT:
            raise ValueError("cannot shatter the monomer pool")
        self._check_entry(a)
        return int(_shatter(self.meta, self.fen, self.size, self.maxt, self.free, a.slot))

    # -- snapshots -----------------------------------------------------------

    def cluster_sizes(self) -> np.ndarray:
        """Sizes of all stored clusters (slot order)."""
        return self.size[self.size > 0].copy()

    def histogram(self) -> SizeHistogram:
        return SizeHistogram.from_population_arrays(self.monomer_count, self.size, self.M)

    def to_json(self) -> str:
        """Size histogram as a JSON map size -> count."""
        return json.dumps(self.histogram().as_dict())

    @classmethod
    def from_json(cls, text: str) -> "ClusterPopulation":
        return cls.from_histogram({int(k): int(v) for k, v in json.loads(text).items()})

    def state_dict(self) -> dict:
        """Full layout (slot contents and free stack) for exact resume."""
        top = int(self.meta[FTOP])
        return {
            "M": self.M,
            "histogram": {str(k): v for k, v in self.histogram().as_dict().items()},
            "slots": self.size[1:].tolist(),
            "free": self.free[:top].tolist(),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "ClusterPopulation":
        M = int(d["M"])
        pop = cls(M)
        slots = np.asarray(d["slots"], dtype=np.int64)
        if slots.shape[0] != int(pop.meta[CAP]):
            raise ValueError("slot table does not match M")
        for slot in np.flatnonzero(slots).tolist():
            s = int(slots[slot])
            pop.size[slot + 1] = s
            _fen_add(pop.fen, int(pop.meta[CAP]), slot + 1, s)
            _max_set(pop.maxt, int(pop.meta[P2]), slot + 1, s)
        free = np.asarray(d["free"], dtype=np.int64)
        pop.free[: free.shape[0]] = free
        pop.meta[FTOP] = free.shape[0]
        pop.meta[NCL] = int(np.count_nonzero(slots))
        pop.meta[MON] = M - int(slots.sum())
        pop.check()
        if pop.histogram().as_dict() != {int(k): v for k, v in d["histogram"].items()}:
            raise ValueError("histogram does not match slot table")
        return pop

    def copy(self) -> "ClusterPopulation":
        new = object.__new__(ClusterPopulation)
        for name in ("meta", "fen", "size", "maxt", "free"):
            setattr(new, name, getattr(self, name).copy())
        return new

    def check(self) -> None:
        """Verify all structural invariants (O(cap), for tests and checkpoints)."""
        M = self.M
        sizes = self.size[1:]
        live = sizes[sizes > 0]
        if self.monomer_count < 0:
            raise AssertionError("negative monomer count")
        if self.monomer_count + int(live.sum()) != M:
            raise AssertionError("mass not conserved")
        if live.size and (live.min() < 2 or live.max() > M):
            raise AssertionError("stored cluster size out of [2, M]")
        if live.size != self.n_clusters:
            raise AssertionError("cluster count out of sync")
        if self.total_mass != M:
            raise AssertionError("Fenwick weights out of sync")
        if self.k_max != (int(live.max()) if live.size else 1):
            raise AssertionError("max tree out of sync")
        top = int(self.meta[FTOP])
        if sorted(self.free[:top].tolist()) != (np.flatnonzero(sizes == 0) + 1).tolist():
            raise AssertionError("free stack out of sync")

    def __repr__(self) -> str:
        return (f"ClusterPopulation(M={self.M}, N={self.N}, monomers={self.monomer_count}, "
                f"k_max={self.k_max})")
