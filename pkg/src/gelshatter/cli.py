"""Command-line front end: ``gelshatter {run,sweep,meanfield,analyze,reproduce}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from gelshatter import analysis, meanfield
from gelshatter.campaign import Campaign, CampaignSpec, auto_budget
from gelshatter.engine import Trajectory, default_workers, run, run_ensemble
from gelshatter.observables import ccdf, heatmap, mean_cluster_density, write_size_csv
from gelshatter.population import ConfigError, SimulationConfig

log = logging.getLogger("gelshatter")

# flag -> SimulationConfig field
RUN_FIELDS = {
    "M": "M",
    "K": "K_hat",
    "F": "F_hat",
    "threshold": "frag_threshold",
    "seed": "seed",
    "steps": "max_steps",
    "sample_interval": "sample_interval",
    "histograms": "record_histograms",
    "init": "init",
}
RUN_DEFAULTS = {"K": 0.99, "F": 0.01, "threshold": 1, "seed": 0, "steps": 1_000_000,
                "sample_interval": 1000, "histograms": False, "init": "monomers"}


class UsageError(Exception):
    pass


def int_like(text: str) -> int:
    """Accept 100000, 1e5 or 1_000 for integer flags."""
    try:
        v = float(str(text).replace("_", ""))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v.is_integer():
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(v)


def _load_toml(path) -> dict:
    import tomli
    with open(path, "rb") as fh:
        return tomli.load(fh)


def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty; use --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


def _summary_line(trajs: list[Trajectory]) -> str:
    t = trajs[0]
    f = t.final
    cycles = sum(x.n_cycles for x in trajs)
    kappa = sum(x.n_up - x.n_down for x in trajs) / sum(x.n_steps for x in trajs)
    return (f"final N={f.N} k_max={f.k_max} cycles={cycles} cyclicity={kappa:.4f}"
            + (f" replicas={len(trajs)}" if len(trajs) > 1 else ""))


# --------------------------------------------------------------------------
# run


def build_config(args) -> tuple[SimulationConfig, dict]:
    values = dict(RUN_DEFAULTS)
    extra = {"replicas": 1, "out": None}
    if args.config:
        for key, v in _load_toml(args.config).items():
            key = key.replace("-", "_")
            if key in RUN_FIELDS:
                values[key] = v
            elif key in extra:
                extra[key] = v
            else:
                raise ConfigError(key, "unknown configuration key")
    for key in list(RUN_FIELDS) + list(extra):
        v = getattr(args, key, None)
        if v is not None:
            (values if key in RUN_FIELDS else extra)[key] = v
    if "M" not in values:
        raise ConfigError("M", "system size is required (--M or config file)")
    for key in ("M", "threshold", "seed", "steps", "sample_interval"):
        if isinstance(values[key], (float, str)):
            try:
                values[key] = int_like(values[key])
            except argparse.ArgumentTypeError as exc:
                raise ConfigError(RUN_FIELDS[key], str(exc))
    cfg = SimulationConfig(**{RUN_FIELDS[k]: v for k, v in values.items()})
    return cfg, extra


def cmd_run(args) -> int:
    cfg, extra = build_config(args)
    replicas = int(extra["replicas"])
    out = _prepare_out(Path(extra["out"] or "run-out"), args.force)
    if replicas == 1:
        trajs = [run(cfg)]
    else:
        trajs = run_ensemble(cfg, replicas, workers=args.workers)
    for k, t in enumerate(trajs):
        d = out if replicas == 1 else out / f"replica_{k:03d}"
        t.write_csv(d)
        t.to_json(d / "trajectory.json")
    print(_summary_line(trajs))
    return 0


# --------------------------------------------------------------------------
# sweep


def cmd_sweep(args) -> int:
    spec = CampaignSpec.load(args.campaign)
    out = Path(args.out or spec.out)
    manifest = Campaign(spec, out, workers=args.workers).run()
    s = json.loads((out / "collapse.json").read_text())
    c = s["collapse"]
    if "slope" in c:
        print(f"points={len(spec.points())} slope={c['slope']:.3f} plateau={c['plateau']:.3f}")
    else:
        print(f"points={len(spec.points())} collapse: {c['error']}")
    if manifest["failed"]:
        print(f"failed points: {', '.join(manifest['failed'])}", file=sys.stderr)
        return 1
    return 0


# --------------------------------------------------------------------------
# meanfield


def cmd_meanfield(args) -> int:
    out = _prepare_out(Path(args.out or "meanfield-out"), args.force)
    st = meanfield.monomer_start(args.Kc)
    dt = args.dt or meanfield.rk4_stability_dt(args.Kc, args.K, args.F)
    try:
        end = meanfield.integrate(st, args.K, args.F, dt, args.T)
    except meanfield.IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return 1
    meanfield.write_density_csv(out / "density.csv", end.n, "n_k")
    drift = abs(end.mass - st.mass) / st.mass
    info = {"K_hat": args.K, "F_hat": args.F, "K_c": args.Kc, "dt": dt, "T": args.T,
            "mass_drift": drift}
    if args.F > 0:
        ss = meanfield.catalan_steady_state(args.K, args.F, args.Kc)
        meanfield.write_density_csv(out / "steady_state.csv", ss.rho, "rho_k")
        rho = end.rho
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(rho - ss.rho) / ss.rho
        with open(out / "comparison.csv", "w") as fh:
            fh.write("k,rho_integrated,rho_closed_form,rel_error\n")
            for k in range(args.Kc):
                fh.write(f"{k + 1},{float(rho[k])!r},{float(ss.rho[k])!r},{float(rel[k])!r}\n")
        info.update(gamma=ss.gamma, rho1=ss.rho1, convergence=ss.convergence,
                    max_rel_error_k_le_20=float(np.max(rel[:20])))
        print(f"rho1 closed form={ss.rho1:.6g} integrated={rho[0]:.6g} "
              f"max rel err (k<=20)={info['max_rel_error_k_le_20']:.3e} drift={drift:.2e}")
    else:
        print(f"integrated to T={args.T}; drift={drift:.2e} (no steady state for F=0)")
    _write_json(out / "meanfield.json", info)
    return 0


# --------------------------------------------------------------------------
# analyze


def analyze_trajectory(t: Trajectory, k_min: int = 1) -> dict:
    res = {"config": t.config.to_dict(), "n_steps": t.n_steps, "cyclicity": t.cyclicity,
           "r": t.config.r, "regime": analysis.classify_regime(t.config.r).value
           if t.config.F_hat > 0 else None,
           "recurrence_convention": "first interval after t=0 discarded"}
    tr = t.recurrence_times()
    res["n_cycles"] = int(tr.size)
    if tr.size >= 2:
        cmp_ = analysis.compare_recurrence_models(tr)
        res["recurrence"] = dict(asdict(cmp_), preferred=cmp_.preferred,
                                 g=t.config.F_hat * cmp_.mean)
    if t.histograms:
        alphas = analysis.powerlaw_series(t.histograms, k_min=k_min)
        res["alpha"] = {"step": t.hist_step.tolist(),
                        "alpha": [None if not np.isfinite(a) else float(a) for a in alphas]}
    return res


def cmd_analyze(args) -> int:
    for path in args.trajectories:
        t = Trajectory.from_json(path)
        res = analyze_trajectory(t, args.k_min)
        dest = Path(path).with_name(Path(path).stem + "_analysis.json")
        if dest.exists() and not args.force:
            raise UsageError(f"{dest} exists; use --force")
        _write_json(dest, res)
        rec = res.get("recurrence", {})
        print(f"{path}: cycles={res['n_cycles']} cyclicity={res['cyclicity']:.4f}"
              + (f" g={rec['g']:.3f} preferred={rec['preferred']}" if rec else ""))
    return 0


# --------------------------------------------------------------------------
# reproduce

GNUPLOT = {
    "fig1": """set terminal pngcairo size 900,400
set output 'fig1.png'
set multiplot layout 1,2
set logscale xy
set datafile separator ','
set xlabel 'cluster size'
set ylabel 'clusters larger'
plot 'ccdf.csv' skip 1 u 1:($2>0?$2:1/0) w p pt 7 ps 0.4 t 'time average'
set ylabel 'mean density'
plot 'density.csv' skip 1 u 1:2 w p pt 7 ps 0.4 t 'time average', \\
     'snapshot.csv' skip 1 u 1:2 w l lc rgb 'red' t 'median snapshot', \\
     A*x**(-2.5) w l dt 2 lc rgb 'blue' t 'k^{-5/2}'
unset multiplot
""",
    "fig2": """set terminal pngcairo size 1200,400
set output 'fig2.png'
set datafile separator ','
set multiplot layout 1,3
set xlabel 'k_max'; set ylabel 'N'
plot 'samples.csv' skip 1 u 3:2 w l t ''
set xlabel 'step'; set ylabel 'alpha'
plot 'alpha.csv' skip 1 u 1:2 w l t ''
set ylabel 'k_max'
plot 'samples.csv' skip 1 u 1:3 w l t ''
unset multiplot
""",
    "fig3": """set terminal pngcairo size 800,800
set output 'fig3.png'
set datafile separator ','
set multiplot layout 2,2
set xlabel 'k_max/M'; set ylabel 'N/M'
set view map
FILES = system('ls heatmap_*.csv')
do for [f in FILES] { set title f noenhanced; splot f skip 1 u 3:4:(log(1+$5)) w pm3d t '' }
unset multiplot
""",
    "fig4": """set terminal pngcairo size 1000,400
set output 'fig4.png'
set datafile separator ','
set multiplot layout 1,2
set logscale x
set xlabel 'r'
set logscale y; set ylabel 'F <t_r>'
plot 'scaling.csv' skip 1 u 4:6 w p pt 7 t 'g(r)', x**0.5 w l dt 2 t 'r^{1/2}'
unset logscale y; set ylabel 'cyclicity'
plot 'scaling.csv' skip 1 u 4:7 w p pt 7 t ''
unset multiplot
""",
}


def _fig1(out: Path, seed: int, workers: int, full: bool) -> None:
    cfg = SimulationConfig(M=100_000, K_hat=0.99, F_hat=0.01, frag_threshold=10_000, seed=seed,
                           max_steps=3_000_000, sample_interval=2000, record_histograms=True)
    t = run(cfg)
    hists = burned_in_histograms(t)
    dens = mean_cluster_density(hists)
    write_size_csv(out / "ccdf.csv", ccdf(dens))
    write_size_csv(out / "density.csv", zip(dens.sizes.tolist(), dens.counts.tolist()))
    idx, a_med = analysis.median_snapshot(hists)
    snap = hists[idx]
    write_size_csv(out / "snapshot.csv", zip(snap.sizes.tolist(), snap.counts.tolist()))
    fits = {f"k_min={k}": asdict(analysis.fit_truncated_powerlaw(dens, k_min=k)) for k in (1, 2)}
    _write_json(out / "fit.json", {"config": cfg.to_dict(), "fits": fits,
                                   "median_snapshot_alpha": a_med,
                                   "n_histograms": len(hists)})
    a = fits["k_min=2"]["alpha"]
    print(f"fig1: time-averaged alpha (k_min=2) = {a:.3f}, (k_min=1) = {fits['k_min=1']['alpha']:.3f}")


def burned_in_histograms(t: Trajectory) -> list:
    """Histograms recorded after the first largest-cluster shattering."""
    largest = t.shatter_step[t.shatter_largest]
    first = int(largest[0]) if largest.size else 0
    return [h for s, h in zip(t.hist_step, t.histograms) if s > first]


def _fig2(out: Path, seed: int, workers: int, full: bool) -> None:
    cfg = SimulationConfig(M=100_000, K_hat=0.99, F_hat=0.01, seed=seed,
                           max_steps=1_000_000, sample_interval=500, record_histograms=True)
    t = run(cfg)
    t.write_csv(out)
    alphas = analysis.powerlaw_series(t.histograms)
    write_size_csv(out / "alpha.csv", zip(t.hist_step.tolist(), alphas.tolist()),
                   header=("step", "alpha"))
    first = t.shatter_step[t.shatter_largest][0]
    a = alphas[(t.hist_step > first) & np.isfinite(alphas)]
    print(f"fig2: cycles={t.n_cycles} alpha 5-95% = [{np.percentile(a, 5):.3f}, "
          f"{np.percentile(a, 95):.3f}] mean={a.mean():.3f}")


def _fig3(out: Path, seed: int, workers: int, full: bool) -> None:
    for M in (300, 30_000):
        for F in (1e-3, 1e-1):
            K = 1 - F
            steps = auto_budget(M, K, F, target_cycles=200)
            cfg = SimulationConfig(M=M, K_hat=K, F_hat=F, seed=seed, max_steps=steps,
                                   sample_interval=max(1, steps // 500_000))
            t = run(cfg)
            hm = heatmap((t.sample_kmax, t.sample_N), M, 100)
            hm.write(out / f"heatmap_M{M}_F{F:g}.csv")
            print(f"fig3: M={M} F={F:g} visited cells={int(hm.visited_mask.sum())}")


FIG4_M = [100, 300, 1000, 3000, 10_000]
FIG4_M_FULL = FIG4_M + [30_000, 100_000]
FIG4_F = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1]


def _fig4(out: Path, seed: int, workers: int, full: bool) -> None:
    if full:
        log.warning("fig4 --full includes M up to 1e5; expect hours of runtime")
    spec = CampaignSpec(M=FIG4_M_FULL if full else FIG4_M, F_hat=FIG4_F, replicas=4,
                        seed=seed, out=str(out))
    Campaign(spec, out, workers=workers).run()
    c = json.loads((out / "collapse.json").read_text())["collapse"]
    print(f"fig4: slope={c['slope']:.3f} plateau={c['plateau']:.3f}")


RECIPES = {"fig1": _fig1, "fig2": _fig2, "fig3": _fig3, "fig4": _fig4}


def cmd_reproduce(args) -> int:
    out = _prepare_out(Path(args.out or f"reproduce-{args.figure}"), args.force)
    RECIPES[args.figure](out, args.seed, args.workers, args.full)
    (out / f"{args.figure}.gp").write_text(GNUPLOT[args.figure])
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gelshatter", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=str)
        sp.add_argument("--workers", type=int, default=default_workers())
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    r = sub.add_parser("run", help="simulate one configuration")
    r.add_argument("--config", help="TOML file with run keys; flags override it")
    r.add_argument("--M", type=int_like)
    r.add_argument("--K", type=float)
    r.add_argument("--F", type=float)
    r.add_argument("--threshold", type=int_like)
    r.add_argument("--seed", type=int_like)
    r.add_argument("--steps", type=int_like)
    r.add_argument("--sample-interval", dest="sample_interval", type=int_like)
    r.add_argument("--replicas", type=int_like)
    r.add_argument("--histograms", action="store_true", default=None)
    r.add_argument("--init", choices=["monomers", "gel"])
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a campaign file")
    s.add_argument("campaign")
    common(s)
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("meanfield", help="integrate the mean-field equations")
    m.add_argument("--K", type=float, default=0.1)
    m.add_argument("--F", type=float, default=0.9)
    m.add_argument("--Kc", type=int_like, default=1000)
    m.add_argument("--dt", type=float, default=None)
    m.add_argument("--T", type=float, default=30.0)
    common(m)
    m.set_defaults(func=cmd_meanfield)

    a = sub.add_parser("analyze", help="re-run analysis on stored trajectories")
    a.add_argument("trajectories", nargs="+")
    a.add_argument("--k-min", dest="k_min", type=int_like, default=1)
    a.add_argument("--force", action="store_true")
    a.set_defaults(func=cmd_analyze)

    f = sub.add_parser("reproduce", help="data files for one figure")
    f.add_argument("figure", choices=sorted(RECIPES))
    f.add_argument("--seed", type=int_like, default=0)
    f.add_argument("--full", action="store_true", help="fig4 at full scale (slow)")
    common(f)
    f.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
