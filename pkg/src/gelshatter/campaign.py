"""Parameter-grid campaigns: replicas over (M, K_hat, F_hat, threshold) points,
per-point scaling statistics and heat maps, a collapse summary, and a
manifest that makes re-runs resumable.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from gelshatter.analysis import (
    InsufficientDataError,
    ScalingPoint,
    classify_regime,
    collapse,
    largest_cluster_scale,
    scaling_point,
    write_scaling_table,
)
from gelshatter.engine import Trajectory, child_seed, default_workers, run
from gelshatter.observables import heatmap
from gelshatter.population import SimulationConfig

log = logging.getLogger(__name__)

DEFAULT_TARGET_CYCLES = 30
DEFAULT_STEP_CAP = 50_000_000


def estimate_recurrence(M: int, K_hat: float, F_hat: float) -> float:
    """Rough mean recurrence time in steps.

    The unforced-cycle estimate sqrt(pi M / (2 F K)) with c = 1, floored at
    1/F_hat, which is the forced-cycle limit it would otherwise undershoot.
    """
    if F_hat <= 0:
        return math.inf
    if K_hat <= 0:
        return 1.0 / F_hat
    return max(1.0 / F_hat, math.sqrt(math.pi * M / (2 * F_hat * K_hat)))


def auto_budget(M: int, K_hat: float, F_hat: float, target_cycles: int = DEFAULT_TARGET_CYCLES,
                cap: int = DEFAULT_STEP_CAP) -> int:
    """Steps for ``target_cycles`` recurrences plus the initial gelation."""
    est = estimate_recurrence(M, K_hat, F_hat)
    gel = M / K_hat if K_hat > 0 else 0.0
    steps = (target_cycles + 1) * est + gel
    return int(min(cap, max(1000, math.ceil(steps))))


@dataclass
class CampaignSpec:
    M: list
    F_hat: list
    K_hat: list | str = "one-minus-F"
    frag_threshold: list = field(default_factory=lambda: [1])
    replicas: int = 4
    seed: int = 0
    steps: int | str = "auto"
    target_cycles: int = DEFAULT_TARGET_CYCLES
    step_cap: int = DEFAULT_STEP_CAP
    sample_interval: int | str = "auto"
    heatmap_bins: int = 100
    out: str = "campaign"

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignSpec":
        d = dict(d)
        for key in ("M", "F_hat", "frag_threshold"):
            if key in d and not isinstance(d[key], list):
                d[key] = [d[key]]
        if "K_hat" in d and not isinstance(d["K_hat"], (list, str)):
            d["K_hat"] = [d["K_hat"]]
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown campaign keys: {sorted(unknown)}")
        spec = cls(**d)
        spec.M = [int(float(m)) for m in spec.M]
        spec.frag_threshold = [int(float(t)) for t in spec.frag_threshold]
        spec.configs()  # validates every point
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "CampaignSpec":
        import tomli
        with open(path, "rb") as fh:
            return cls.from_dict(tomli.load(fh))

    def points(self) -> list[tuple[int, float, float, int]]:
        out = []
        for M, F, T in itertools.product(self.M, self.F_hat, self.frag_threshold):
            if self.K_hat == "one-minus-F":
                Ks = [1.0 - F]
            elif isinstance(self.K_hat, str):
                raise ValueError(f"K_hat: unknown rule {self.K_hat!r}")
            else:
                Ks = self.K_hat
            for K in Ks:
                out.append((int(M), float(K), float(F), int(T)))
        return out

    def configs(self) -> list[SimulationConfig]:
        cfgs = []
        for idx, (M, K, F, T) in enumerate(self.points()):
            steps = (auto_budget(M, K, F, self.target_cycles, self.step_cap)
                     if self.steps == "auto" else int(float(self.steps)))
            if self.sample_interval == "auto":
                si = max(1, steps // 200_000)
            else:
                si = int(self.sample_interval)
            cfgs.append(SimulationConfig(M=M, K_hat=K, F_hat=F, frag_threshold=T,
                                         seed=child_seed(self.seed, idx), max_steps=steps,
                                         sample_interval=si))
        return cfgs


def _task(cfg: SimulationConfig, master: int, point: int, replica: int) -> Trajectory:
    return run(replace(cfg, seed=child_seed(master, point, replica)))


def run_points(cfgs: Sequence[SimulationConfig], replicas: int, master_seed: int,
               workers: int = 1, point_ids: Sequence[int] | None = None) -> list[list[Trajectory]]:
    """Run every (point, replica) task; results grouped per point in index order."""
    point_ids = list(range(len(cfgs))) if point_ids is None else list(point_ids)
    tasks = [(cfg, master_seed, pid, rep) for cfg, pid in zip(cfgs, point_ids)
             for rep in range(replicas)]
    if workers <= 1:
        flat = [_task(*t) for t in tasks]
    else:
        from joblib import Parallel, delayed
        flat = Parallel(n_jobs=workers)(delayed(_task)(*t) for t in tasks)
    return [flat[i * replicas:(i + 1) * replicas] for i in range(len(cfgs))]


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


class Campaign:
    """Runs a CampaignSpec into ``out`` with a resumable manifest."""

    def __init__(self, spec: CampaignSpec, out: str | Path | None = None, workers: int | None = None):
        self.spec = spec
        self.out = Path(out if out is not None else spec.out)
        self.workers = default_workers() if workers is None else workers
        self.manifest_path = self.out / "manifest.json"

    def _load_manifest(self) -> dict:
        if self.manifest_path.exists():
            return json.loads(self.manifest_path.read_text())
        return {"points": {}, "files": {}}

    def _point_done(self, manifest: dict, name: str) -> bool:
        entry = manifest["points"].get(name)
        if not entry or entry.get("status") != "done":
            return False
        for rel, dig in entry["files"].items():
            p = self.out / rel
            if not p.exists() or _digest(p) != dig:
                return False
        return True

    def run(self) -> dict:
        self.out.mkdir(parents=True, exist_ok=True)
        manifest = self._load_manifest()
        manifest["spec"] = asdict(self.spec)
        cfgs = self.spec.configs()
        todo = [i for i in range(len(cfgs)) if not self._point_done(manifest, f"p{i:03d}")]
        log.info("campaign: %d points, %d to run", len(cfgs), len(todo))
        failed = []
        for i in todo:
            name = f"p{i:03d}"
            pdir = self.out / "points" / name
            pdir.mkdir(parents=True, exist_ok=True)
            try:
                trajs = run_points([cfgs[i]], self.spec.replicas, self.spec.seed,
                                   self.workers, point_ids=[i])[0]
                files = self._write_point(pdir, cfgs[i], trajs)
                manifest["points"][name] = {
                    "status": "done",
                    "files": {str(p.relative_to(self.out)): _digest(p) for p in files},
                    "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
                }
            except Exception as exc:  # recorded, campaign continues
                log.exception("point %s failed", name)
                manifest["points"][name] = {"status": "failed", "error": repr(exc), "files": {}}
                failed.append(name)
            _dump(self.manifest_path, manifest)
        summary_files = self._write_summary(len(cfgs))
        manifest["files"] = {str(p.relative_to(self.out)): _digest(p) for p in summary_files}
        manifest["failed"] = failed
        _dump(self.manifest_path, manifest)
        return manifest

    def _write_point(self, pdir: Path, cfg: SimulationConfig, trajs: list[Trajectory]) -> list[Path]:
        sp = scaling_point(trajs)
        kmax = np.concatenate([t.sample_kmax for t in trajs])
        N = np.concatenate([t.sample_N for t in trajs])
        hm = heatmap((kmax, N), cfg.M, self.spec.heatmap_bins)
        hm_path = pdir / "heatmap.csv"
        hm.write(hm_path)
        env = largest_cluster_scale([trajs])[0]
        point = {
            "config": cfg.to_dict(),
            "replicas": len(trajs),
            "scaling": asdict(sp),
            "regime": sp.regime.value,
            "envelope": asdict(env),
            "rng_fingerprints": [t.rng_fingerprint for t in trajs],
            "recurrence_times": [t.recurrence_times().tolist() for t in trajs],
        }
        pj = pdir / "point.json"
        _dump(pj, point)
        return [hm_path, hm_path.with_suffix(".json"), pj]

    def load_points(self, n: int) -> list[dict]:
        out = []
        for i in range(n):
            p = self.out / "points" / f"p{i:03d}" / "point.json"
            if p.exists():
                out.append(json.loads(p.read_text()))
        return out

    def _write_summary(self, n: int) -> list[Path]:
        docs = self.load_points(n)
        points = [ScalingPoint(**d["scaling"]) for d in docs]
        csv_path, json_path = self.out / "scaling.csv", self.out / "scaling.json"
        write_scaling_table(points, csv_path, json_path)
        summary = {}
        try:
            c = collapse(points)
            summary["collapse"] = asdict(c)
        except InsufficientDataError as exc:
            summary["collapse"] = {"error": str(exc)}
        summary["regimes"] = [{"M": p.M, "F_hat": p.F_hat, "r": p.r,
                               "regime": classify_regime(p.r).value} for p in points]
        cj = self.out / "collapse.json"
        _dump(cj, summary)
        return [csv_path, json_path, cj]

    def scaling_points(self) -> list[ScalingPoint]:
        return [ScalingPoint(**d["scaling"]) for d in self.load_points(len(self.spec.points()))]
