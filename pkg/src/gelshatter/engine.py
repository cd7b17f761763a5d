"""Discrete-step stochastic coalescence/shattering process.

One computational step is one event attempt: with probability
K_hat / (K_hat + F_hat) two nodes are drawn (size-biased, with replacement)
and their clusters merged; otherwise one node is drawn and its cluster
shattered into monomers if it is larger than ``frag_threshold``. Degenerate
draws are NoOps but still cost a step.

Randomness comes from numpy's PCG64 consumed strictly sequentially as raw
64-bit words, so a run is a pure function of (config, seed) and can be
checkpointed and resumed bit-exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from gelshatter.observables import SizeHistogram, cyclicity_from_signs, recurrence_times
from gelshatter.population import (
    CAP,
    COALESCED,
    MASS,
    MON,
    NCL,
    NOOP_COAL,
    NOOP_FRAG,
    SHATTERED,
    STARVED,
    ClusterPopulation,
    EventOutcome,
    EventTag,
    SimulationConfig,
    _kmax,
    _one_step,
)

__all__ = [
    "RawStream",
    "Simulation",
    "Trajectory",
    "TrajectorySample",
    "child_seed",
    "run",
    "run_ensemble",
    "step",
]

BUFFER_WORDS = 1 << 16
CHUNK_STEPS = 1 << 16

# tally slots filled by the kernel
T_NOOP_COAL, T_NOOP_FRAG, T_COAL, T_SHAT, T_UP, T_DOWN = range(6)


def child_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed for (seed, *keys)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class RawStream:
    """Sequential buffer of raw PCG64 words."""

    def __init__(self, seed: int):
        self.bitgen = np.random.PCG64(int(seed))
        self.buf = np.zeros(0, dtype=np.uint64)
        self.pos = 0

    def refill(self) -> None:
        tail = self.buf[self.pos:]
        fresh = self.bitgen.random_raw(BUFFER_WORDS).astype(np.uint64)
        self.buf = np.concatenate((tail, fresh))
        self.pos = 0

    def words(self, n: int) -> np.ndarray:
        """Consume ``n`` raw words (Python-side helpers and tests)."""
        while self.buf.shape[0] - self.pos < n:
            self.refill()
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def state(self) -> dict:
        return {
            "bit_generator": self.bitgen.state,
            "pending": [format(int(w), "016x") for w in self.buf[self.pos:]],
        }

    @classmethod
    def from_state(cls, d: dict) -> "RawStream":
        s = cls(0)
        s.bitgen.state = d["bit_generator"]
        s.buf = np.array([int(w, 16) for w in d["pending"]], dtype=np.uint64)
        s.pos = 0
        return s

    def fingerprint(self) -> str:
        st = self.bitgen.state["state"]
        h = hashlib.sha256()
        h.update(f"{st['state']}:{st['inc']}".encode())
        h.update(np.ascontiguousarray(self.buf[self.pos:]).tobytes())
        return h.hexdigest()[:32]


def _draw_constants(cfg: SimulationConfig):
    p = cfg.K_hat / (cfg.K_hat + cfg.F_hat)
    coal_cut = np.uint64(min(int(p * 2.0**53), 2**53))
    # reject u < 2**64 mod M; the remaining 2**64 - rem words split evenly mod M
    reject_below = np.uint64(2**64 % cfg.M)
    return coal_cut, reject_below


@njit(cache=True)
def _fen_total(fen, cap):
    s = 0
    i = cap
    while i > 0:
        s += fen[i]
        i -= i & (-i)
    return s


@njit(cache=True)
def _advance(meta, fen, size, maxt, free, raw, pos, n_steps, step0, coal_cut, reject_below,
             threshold, interval, smp, ev, signs, rec_signs, tally):
    done = 0
    n_smp = 0
    n_ev = 0
    kmax = _kmax(meta, maxt)
    while done < n_steps:
        code, a, b, newpos = _one_step(meta, fen, size, maxt, free, raw, pos,
                                       coal_cut, reject_below, threshold)
        if code == STARVED:
            break
        pos = newpos
        done += 1
        t = step0 + done
        tally[code] += 1
        if code == SHATTERED:
            ev[n_ev, 0] = t
            ev[n_ev, 1] = a
            ev[n_ev, 2] = b
            n_ev += 1
        knew = _kmax(meta, maxt)
        sgn = 0
        if knew > kmax:
            tally[T_UP] += 1
            sgn = 1
        elif knew < kmax:
            tally[T_DOWN] += 1
            sgn = -1
        kmax = knew
        if rec_signs:
            signs[done - 1] = sgn
        if t % interval == 0:
            smp[n_smp, 0] = t
            smp[n_smp, 1] = meta[MON] + meta[NCL]
            smp[n_smp, 2] = kmax
            n_smp += 1
            if meta[MON] + _fen_total(fen, meta[CAP]) != meta[MASS]:
                raise RuntimeError("mass conservation violated")
    return done, pos, n_smp, n_ev


class TrajectorySample(NamedTuple):
    step: int
    N: int
    k_max: int
    histogram: SizeHistogram | None = None


@dataclass
class Trajectory:
    config: SimulationConfig
    sample_step: np.ndarray
    sample_N: np.ndarray
    sample_kmax: np.ndarray
    shatter_step: np.ndarray
    shatter_size: np.ndarray
    shatter_largest: np.ndarray
    n_steps: int
    tally: dict
    rng_fingerprint: str
    histograms: list[SizeHistogram] | None = None
    hist_step: np.ndarray | None = None
    signs: np.ndarray | None = field(default=None, repr=False)

    @property
    def samples(self) -> list[TrajectorySample]:
        hmap = {}
        if self.histograms is not None:
            hmap = dict(zip(self.hist_step.tolist(), self.histograms))
        return [TrajectorySample(int(t), int(n), int(k), hmap.get(int(t)))
                for t, n, k in zip(self.sample_step, self.sample_N, self.sample_kmax)]

    @property
    def shatter_events(self) -> list[tuple[int, int, bool]]:
        return [(int(t), int(s), bool(w)) for t, s, w in
                zip(self.shatter_step, self.shatter_size, self.shatter_largest)]

    @property
    def n_up(self) -> int:
        return int(self.tally["k_max_up"])

    @property
    def n_down(self) -> int:
        return int(self.tally["k_max_down"])

    @property
    def cyclicity(self) -> float:
        """Cyclicity over every step of the run (exact, from per-step tallies)."""
        return (self.n_up - self.n_down) / self.n_steps

    def recurrence_times(self) -> np.ndarray:
        return recurrence_times(self)

    @property
    def n_cycles(self) -> int:
        return int(self.recurrence_times().size)

    @property
    def final(self) -> TrajectorySample:
        return self.samples[-1]

    # -- export --------------------------------------------------------------

    def write_csv(self, directory: str | Path, prefix: str = "") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        p1 = directory / f"{prefix}samples.csv"
        with open(p1, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "N", "k_max"])
            w.writerows(zip(self.sample_step.tolist(), self.sample_N.tolist(),
                            self.sample_kmax.tolist()))
        p2 = directory / f"{prefix}shatters.csv"
        with open(p2, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "size", "was_largest"])
            w.writerows(zip(self.shatter_step.tolist(), self.shatter_size.tolist(),
                            self.shatter_largest.astype(int).tolist()))
        return [p1, p2]

    def to_dict(self) -> dict:
        d = {
            "config": self.config.to_dict(),
            "seed": int(self.config.seed),
            "n_steps": int(self.n_steps),
            "tally": {k: int(v) for k, v in self.tally.items()},
            "rng_fingerprint": self.rng_fingerprint,
            "samples": {
                "step": self.sample_step.tolist(),
                "N": self.sample_N.tolist(),
                "k_max": self.sample_kmax.tolist(),
            },
            "shatter_events": {
                "step": self.shatter_step.tolist(),
                "size": self.shatter_size.tolist(),
                "was_largest": self.shatter_largest.astype(int).tolist(),
            },
        }
        if self.histograms is not None:
            d["histograms"] = {
                "step": self.hist_step.tolist(),
                "counts": [h.as_dict() for h in self.histograms],
            }
        return d

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), separators=(",", ":"))
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        cfg = SimulationConfig.from_dict(d["config"])
        s, e = d["samples"], d["shatter_events"]
        hists = hstep = None
        if "histograms" in d:
            hstep = np.asarray(d["histograms"]["step"], dtype=np.int64)
            hists = [SizeHistogram.from_dict({int(k): v for k, v in c.items()}, cfg.M)
                     for c in d["histograms"]["counts"]]
        return cls(
            config=cfg,
            sample_step=np.asarray(s["step"], dtype=np.int64),
            sample_N=np.asarray(s["N"], dtype=np.int64),
            sample_kmax=np.asarray(s["k_max"], dtype=np.int64),
            shatter_step=np.asarray(e["step"], dtype=np.int64),
            shatter_size=np.asarray(e["size"], dtype=np.int64),
            shatter_largest=np.asarray(e["was_largest"], dtype=bool),
            n_steps=int(d["n_steps"]),
            tally=dict(d["tally"]),
            rng_fingerprint=d["rng_fingerprint"],
            histograms=hists,
            hist_step=hstep,
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "Trajectory":
        return cls.from_dict(json.loads(Path(path).read_text()))


_TALLY_NAMES = ("noop_coalescence", "noop_fragmentation", "coalesced", "shattered",
                "k_max_up", "k_max_down")


class Simulation:
    """Resumable driver around the compiled step loop."""

    def __init__(self, cfg: SimulationConfig, record_signs: bool = False,
                 population: ClusterPopulation | None = None):
        cfg.validate()
        self.cfg = cfg
        self.record_signs = record_signs
        if population is None:
            population = (ClusterPopulation.single_gel(cfg.M) if cfg.init == "gel"
                          else ClusterPopulation(cfg.M))
        self.pop = population
        self.stream = RawStream(cfg.seed)
        self.step = 0
        self._tally = np.zeros(6, dtype=np.int64)
        self._smp = [np.array([[0, self.pop.N, self.pop.k_max]], dtype=np.int64)]
        self._ev = []
        self._signs = []
        self._hists = [self.pop.histogram()] if cfg.record_histograms else None
        self._hstep = [0] if cfg.record_histograms else None
        self._coal_cut, self._reject = _draw_constants(cfg)

    def advance(self, n_steps: int) -> "Simulation":
        cfg, pop = self.cfg, self.pop
        interval = cfg.sample_interval
        target = self.step + int(n_steps)
        smp_buf = np.zeros((CHUNK_STEPS // interval + 2, 3), dtype=np.int64)
        ev_buf = np.zeros((CHUNK_STEPS, 3), dtype=np.int64)
        sign_buf = np.zeros(CHUNK_STEPS if self.record_signs else 1, dtype=np.int8)
        while self.step < target:
            chunk = min(target - self.step, CHUNK_STEPS)
            if cfg.record_histograms:
                chunk = min(chunk, interval - self.step % interval)
            if self.stream.buf.shape[0] - self.stream.pos < 8:
                self.stream.refill()
            done, pos, n_smp, n_ev = _advance(
                pop.meta, pop.fen, pop.size, pop.maxt, pop.free,
                self.stream.buf, self.stream.pos, chunk, self.step,
                self._coal_cut, self._reject, cfg.frag_threshold, interval,
                smp_buf, ev_buf, sign_buf, self.record_signs, self._tally)
            self.stream.pos = pos
            self.step += done
            if n_smp:
                self._smp.append(smp_buf[:n_smp].copy())
            if n_ev:
                self._ev.append(ev_buf[:n_ev].copy())
            if self.record_signs and done:
                self._signs.append(sign_buf[:done].copy())
            if done < chunk:
                self.stream.refill()
            if cfg.record_histograms and done and self.step % interval == 0:
                self._hists.append(pop.histogram())
                self._hstep.append(self.step)
        return self

    def trajectory(self) -> Trajectory:
        smp = np.concatenate(self._smp)
        ev = np.concatenate(self._ev) if self._ev else np.zeros((0, 3), dtype=np.int64)
        signs = None
        if self.record_signs:
            signs = np.concatenate(self._signs) if self._signs else np.zeros(0, np.int8)
        return Trajectory(
            config=self.cfg,
            sample_step=smp[:, 0].copy(),
            sample_N=smp[:, 1].copy(),
            sample_kmax=smp[:, 2].copy(),
            shatter_step=ev[:, 0].copy(),
            shatter_size=ev[:, 1].copy(),
            shatter_largest=ev[:, 2].astype(bool),
            n_steps=self.step,
            tally=dict(zip(_TALLY_NAMES, self._tally.tolist())),
            rng_fingerprint=self.stream.fingerprint(),
            histograms=list(self._hists) if self._hists is not None else None,
            hist_step=np.asarray(self._hstep, dtype=np.int64) if self._hstep is not None else None,
            signs=signs,
        )

    # -- checkpointing ---------------------------------------------------------

    def checkpoint(self) -> dict:
        """Everything needed to continue this run bit-exactly."""
        return {
            "format": "gelshatter-checkpoint-1",
            "step": self.step,
            "population": self.pop.state_dict(),
            "rng": self.stream.state(),
            "trajectory": self.trajectory().to_dict(),
        }

    def save_checkpoint(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.checkpoint()))

    @classmethod
    def resume(cls, ckpt: dict | str | Path) -> "Simulation":
        if not isinstance(ckpt, dict):
            ckpt = json.loads(Path(ckpt).read_text())
        if ckpt.get("format") != "gelshatter-checkpoint-1":
            raise ValueError("not a gelshatter checkpoint")
        traj = Trajectory.from_dict(ckpt["trajectory"])
        pop = ClusterPopulation.from_state_dict(ckpt["population"])
        sim = cls(traj.config, population=pop)
        sim.stream = RawStream.from_state(ckpt["rng"])
        sim.step = int(ckpt["step"])
        sim._tally = np.array([traj.tally[k] for k in _TALLY_NAMES], dtype=np.int64)
        sim._smp = [np.stack([traj.sample_step, traj.sample_N, traj.sample_kmax], axis=1)]
        sim._ev = [np.stack([traj.shatter_step, traj.shatter_size,
                             traj.shatter_largest.astype(np.int64)], axis=1)]
        if traj.histograms is not None:
            sim._hists = list(traj.histograms)
            sim._hstep = traj.hist_step.tolist()
        return sim


def step(pop: ClusterPopulation, cfg: SimulationConfig, stream: RawStream) -> EventOutcome:
    """Apply a single event attempt to ``pop``."""
    if stream.buf.shape[0] - stream.pos < 8:
        stream.refill()
    coal_cut, reject_below = _draw_constants(cfg)
    code, a, b, pos = _one_step(pop.meta, pop.fen, pop.size, pop.maxt, pop.free,
                                stream.buf, stream.pos, coal_cut, reject_below, cfg.frag_threshold)
    if code == STARVED:
        stream.refill()
        return step(pop, cfg, stream)
    stream.pos = pos
    if code == COALESCED:
        return EventOutcome(EventTag.COALESCED, (int(a), int(b), int(a + b)), "coalescence")
    if code == SHATTERED:
        return EventOutcome(EventTag.SHATTERED, (int(a),), "fragmentation")
    return EventOutcome(EventTag.NOOP, (), "coalescence" if code == NOOP_COAL else "fragmentation")


def run(cfg: SimulationConfig, record_signs: bool = False) -> Trajectory:
    return Simulation(cfg, record_signs=record_signs).advance(cfg.max_steps).trajectory()


def _replica(cfg: SimulationConfig, k: int, record_signs: bool) -> Trajectory:
    from dataclasses import replace
    return run(replace(cfg, seed=child_seed(cfg.seed, k)), record_signs)


def default_workers() -> int:
    return int(os.environ.get("GELSHATTER_WORKERS", "1"))


def run_ensemble(cfg: SimulationConfig, replicas: int, workers: int | None = None,
                 record_signs: bool = False) -> list[Trajectory]:
    """Independent replicas; replica k is seeded with ``child_seed(cfg.seed, k)``."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    workers = default_workers() if workers is None else workers
    if workers <= 1 or replicas == 1:
        return [_replica(cfg, k, record_signs) for k in range(replicas)]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=workers)(
        delayed(_replica)(cfg, k, record_signs) for k in range(replicas))


def pooled_recurrence_times(trajs: Sequence[Trajectory]) -> np.ndarray:
    """Recurrence intervals of all replicas, each with its own first interval dropped."""
    parts = [t.recurrence_times() for t in trajs]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
