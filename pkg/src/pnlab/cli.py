"""Command line entry point: ``pnlab <command> ...``.

Exit codes: 0 ok, 1 property violation, 2 usage error, 3 runtime failure.
Every number written here comes from a library call; this layer only formats.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import lemmas
from .coefficients import kappa_nu_from_lambdas
from .analytics import (AnalysisError, blowup_scan, mean_pde_residual, regularity_report)
from .config import SEED_ENV, ConfigError, ExperimentConfig, parse_config
from .engine import StepFailure, sample_brownian, simulate_batch
from .ensemble import _path_record, probe_nodes, run_ensemble
from .field import Field, FieldError, Trajectory, load_field, save_field
from .manifest import ExperimentManifest

log = logging.getLogger("pnlab")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

TRUNCATION_Q = (1.0, 1.5, 2.0, 3.0, 5.0)
TRUNCATION_K = (0.5, 1.0, 2.0)
POWER_S = (-0.5, 0.5, 1.0, 2.0)


class UsageError(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def _write_lines(path: Path, lines) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def _save_frames(folder: Path, grid, stack) -> list[Path]:
    """``stack`` is ``(frames, *shape, N)``."""
    folder.mkdir(parents=True, exist_ok=True)
    return [save_field(Field(grid, v), folder / f"frame_{k:05d}.pnlf") for k, v in enumerate(stack)]


# ----------------------------------------------------------------------------
# configuration / manifest plumbing
# ----------------------------------------------------------------------------


def _experiment(args, command: str) -> tuple[ExperimentConfig, ExperimentManifest | None]:
    if args.manifest:
        prior = ExperimentManifest.load(args.manifest)
        if prior.command != command:
            raise UsageError(f"manifest was written by {prior.command!r}, not {command!r}")
        exp = parse_config(prior.config_text, env={})
        exp.seed = prior.master_seed
        exp.seed_source = "manifest"
        for key, value in prior.arguments.items():
            setattr(args, key, value)
        return exp, prior
    if not args.config:
        raise UsageError("a config file or --manifest is required")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    return parse_config(text), None


def _manifest(exp: ExperimentConfig, command: str, arguments: dict) -> ExperimentManifest:
    h = exp.hash
    return ExperimentManifest(
        experiment_id=f"{command}-{h[:12]}-s{exp.seed}", command=command, arguments=arguments,
        config_text=exp.text, config=exp.canonical(), config_hash=h, master_seed=exp.seed,
        created=ExperimentManifest.now(), notes={"defaults": exp.defaults, "seed_source": exp.seed_source})


def _finish(man: ExperimentManifest, out: Path, files) -> None:
    man.record_outputs(out, files)
    man.finished = ExperimentManifest.now()
    man.write(out)
    print(f"wrote {len(files)} files and manifest to {out}")


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    exp, _ = _experiment(args, "simulate")
    if args.path is not None:
        exp.path_index = args.path
    cfg = exp.sim
    out = _out_dir(args, "pnlab-simulate")
    path = sample_brownian(exp.seed, exp.path_index, cfg.noise.n_prime, cfg.timegrid)
    res = simulate_batch(cfg, [path])
    stack = np.moveaxis(res.values[0], 1, -1)
    files = _save_frames(out / "frames", cfg.grid, stack)
    rec = _path_record(exp.path_index, exp.seed, int(res.blowup_step[0]), res.times, res.values[0], cfg.grid,
                       cfg.model.a)
    files.append(_write_lines(out / "paths.ndjson", [_dumps(rec)]))
    man = _manifest(exp, "simulate", {"path": exp.path_index})
    man.notes.update({"times": [float(t) for t in res.times], "blowup_step": int(res.blowup_step[0]),
                      "describe": cfg.describe()})
    _finish(man, out, files)
    return EXIT_OK


def cmd_ensemble(args) -> int:
    exp, _ = _experiment(args, "ensemble")
    M = args.M if args.M is not None else exp.M
    workers = args.workers if args.workers is not None else exp.workers
    cfg = exp.sim
    out = _out_dir(args, "pnlab-ensemble")
    res = run_ensemble(cfg, M, exp.seed, workers=workers, chunk_size=exp.chunk_size)
    files = _save_frames(out / "mean", cfg.grid, res.mean.values)
    files += _save_frames(out / "variance", cfg.grid, res.variance)
    files.append(_write_lines(out / "paths.ndjson", res.ndjson_lines()))
    se = res.standard_error
    w = cfg.grid.weights()[..., None]
    rows = [(float(t), float(np.sqrt(np.sum(w * v**2))), float(np.max(np.abs(v))), float(np.max(s)))
            for t, v, s in zip(res.mean.times, res.mean.values, se)]
    files.append(_write_csv(out / "summary.csv", ["t", "mean_l2", "mean_sup", "max_se"], rows))
    man = _manifest(exp, "ensemble", {"M": M})
    man.notes.update({"times": [float(t) for t in res.mean.times], "M": M, "used": res.used,
                      "blowups": res.blowups, "chunk_size": res.chunk_size, "workers": workers,
                      "describe": cfg.describe()})
    _finish(man, out, files)
    return EXIT_OK


def _load_run(run: Path):
    man = ExperimentManifest.load(run)
    exp = parse_config(man.config_text, env={})
    exp.seed = man.master_seed
    times = np.array(man.notes["times"], dtype=float)
    folder = run / ("mean" if man.command == "ensemble" else "frames")
    frames = sorted(folder.glob("frame_*.pnlf"))
    if len(frames) != len(times):
        raise UsageError(f"{folder} holds {len(frames)} frames, the manifest lists {len(times)}")
    traj = Trajectory.from_frames(times, [load_field(f) for f in frames])
    var = None
    if man.command == "ensemble":
        var = np.stack([load_field(f).values for f in sorted((run / "variance").glob("frame_*.pnlf"))])
    return man, exp, traj, var


def _transport_table(exp: ExperimentConfig, traj: Trajectory, var, used: int):
    """Mean against ``Phi((x1 - 1/2) / (sigma sqrt t))`` and the periodic closed form at probe points."""
    cfg = exp.sim
    grid = cfg.grid
    sigma = cfg.noise.sigma
    mid = np.asarray(grid.origin) + 0.5 * np.asarray(grid.extent)
    pts = np.array([np.concatenate([[x1], mid[1:]]) for x1 in exp.analysis.probes])
    idx = probe_nodes(grid, pts)
    xs = grid.coords()[idx]
    h = float(np.max(grid.h))
    rows = []
    for k, t in enumerate(traj.times):
        if t <= 0:
            continue
        mean = traj.values[k].reshape(-1, traj.N)[idx, 0]
        se = np.sqrt(np.maximum(var[k].reshape(-1, traj.N)[idx, 0], 0) / used)
        phi = ndtr((xs[:, 0] - 0.5) / (sigma * np.sqrt(t)))
        exact = exp.u0.transport_mean(xs, float(t), sigma)
        tol = 3 * se + 2 * h
        for j in range(len(idx)):
            rows.append((float(t), float(xs[j, 0]), float(mean[j]), float(se[j]), float(phi[j]),
                         float(exact[j]), float(abs(mean[j] - phi[j])), float(abs(mean[j] - exact[j])),
                         float(tol[j]), int(abs(mean[j] - exact[j]) <= tol[j])))
    header = ["t", "x1", "mean", "se", "phi", "exact", "err_phi", "err_exact", "tol", "within"]
    return header, rows


def cmd_analyze(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise UsageError(f"{run} is not a run directory")
    man, exp, traj, var = _load_run(run)
    out = _out_dir(args, str(run / "analysis"))
    a = exp.analysis
    cfg = exp.sim
    report = regularity_report(traj, a.p_list, a.cap, a.pair_budget, exp.seed, a.margin, exp.canonical())
    report.diagnostics["blowup"] = blowup_scan(traj, cfg.blowup_threshold).as_dict()
    report.diagnostics["source"] = {"command": man.command, "experiment_id": man.experiment_id}
    files = []
    if man.command == "ensemble" and cfg.model.is_linear and cfg.model.constant_matrix is not None:
        sigma = cfg.noise.sigma if cfg.scheme == "stratonovich" else 0.0
        report.diagnostics["mean_pde_residual"] = mean_pde_residual(traj, cfg.model, sigma)
        zero_drift = not np.any(cfg.model.constant_matrix)
        if zero_drift and cfg.grid.periodic and cfg.noise.kind == "gradient" and exp.u0.mean_oracle is not None:
            header, rows = _transport_table(exp, traj, var, int(man.notes["used"]))
            files.append(_write_csv(out / "comparison.csv", header, rows))
            report.diagnostics["transport_within"] = int(sum(r[-1] for r in rows))
            report.diagnostics["transport_rows"] = len(rows)
            for r in rows:
                print("t={:.4g} x1={:.4f} mean={:.5f} se={:.2e} phi={:.5f} exact={:.5f} within={}".format(
                    r[0], r[1], r[2], r[3], r[4], r[5], bool(r[-1])))
    files.append(_write_lines(out / "report.ndjson", [report.to_ndjson()]))
    man2 = _manifest(exp, "analyze", {"run": str(run)})
    _finish(man2, out, files)
    return EXIT_OK


def cmd_verify_lemmas(args) -> int:
    seed = args.seed
    if os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    mu_override = 1.0 if args.debug_wrong_mu else None
    results = []
    for q in TRUNCATION_Q:
        for K in TRUNCATION_K:
            results.append(lemmas.truncation_suite(q, K, args.draws, seed, mu=mu_override))
    for s in POWER_S:
        results.append(lemmas.power_suite(s, args.draws, seed, mu=mu_override))
    results.append(lemmas.mu_identity_suite(1000, seed))
    lines = [_dumps(r.as_dict()) for r in results]
    if args.out:
        _write_lines(Path(args.out), lines)
    else:
        for line in lines:
            print(line)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"VIOLATION in {r.name} {r.params}: {_dumps(r.offending)}", file=sys.stderr)
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_thresholds(args) -> int:
    n, l0, l1 = args.n, args.lambda0, args.lambda1
    rep = {"n": n, "lambda0": l0, "lambda1": l1,
           "dispersion_ratio": l0 / l1,
           "dispersion_ok_parabolic": lemmas.dispersion_ok_parabolic(l0, l1, n),
           "sigma_zero": lemmas.sigma_zero(l0, l1, n)}
    if n >= 2:
        rep["elliptic_value"] = lemmas.elliptic_dispersion_value(l0, l1, n)
        rep["dispersion_ok_elliptic"] = lemmas.dispersion_ok_elliptic(l0, l1, n)
    kappa, nu = kappa_nu_from_lambdas(l0, l1)
    kappa = args.kappa if args.kappa is not None else kappa
    nu = args.nu if args.nu is not None else nu
    rep.update({"kappa": kappa, "nu": nu, "L_H": args.lh, "lh_star_n": lemmas.lh_star_n(n, kappa, nu)})
    a = args.a if args.a is not None else 2.0 * (n + 2)
    sched = lemmas.iteration_schedule(n, a, nu, kappa, args.lh)
    rep["schedule"] = sched.as_dict()
    print(_dumps(rep))
    if args.out:
        _write_lines(Path(args.out), [_dumps(rep)])
    return EXIT_OK


def cmd_schedule(args) -> int:
    sched = lemmas.iteration_schedule(args.n, args.a, args.nu, args.kappa, args.lh, args.margin)
    rep = sched.as_dict()
    print(_dumps(rep))
    if args.out:
        _write_lines(Path(args.out), [_dumps(rep)])
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pnlab", description="Stochastic parabolic system laboratory.")
    p.add_argument("-v", "--verbose", action="store_true", help="log applied defaults and progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", nargs="?", help="INI experiment file")
        sp.add_argument("--manifest", help="re-run from a manifest (file or run directory)")
        sp.add_argument("--out", help="output directory or file")

    s = sub.add_parser("simulate", help="integrate one Brownian path")
    common(s)
    s.add_argument("--path", type=int, help="path index (overrides [run] path_index)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ensemble", help="Monte Carlo ensemble with mean and variance")
    common(s)
    s.add_argument("--M", type=int, help="number of paths (overrides [run] M)")
    s.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("analyze", help="regularity report for a prior run directory")
    s.add_argument("run", help="directory written by simulate or ensemble")
    s.add_argument("--out", help="output directory (default RUN/analysis)")
    s.add_argument("--manifest", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("verify-lemmas", help="randomized inequality suites")
    s.add_argument("--draws", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="NDJSON file (default stdout)")
    s.add_argument("--manifest", help=argparse.SUPPRESS)
    s.add_argument("--debug-wrong-mu", action="store_true", help="negative control: use mu = 1")
    s.set_defaults(func=cmd_verify_lemmas)

    s = sub.add_parser("thresholds", help="dispersion thresholds and the critical noise level")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--lambda0", type=float, required=True)
    s.add_argument("--lambda1", type=float, required=True)
    s.add_argument("--nu", type=float, help="contraction constant (default lambda0/lambda1)")
    s.add_argument("--kappa", type=float, help="default 1/lambda1")
    s.add_argument("--lh", type=float, default=0.0, help="noise Lipschitz constant L_H")
    s.add_argument("--a", type=float, help="integrability exponent (default 2(n+2))")
    s.add_argument("--out")
    s.add_argument("--manifest", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_thresholds)

    s = sub.add_parser("schedule", help="exponent iteration schedule")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--a", type=float, required=True)
    s.add_argument("--nu", type=float, required=True)
    s.add_argument("--kappa", type=float, default=1.0)
    s.add_argument("--lh", type=float, default=0.0)
    s.add_argument("--margin", type=float, default=0.0)
    s.add_argument("--out")
    s.add_argument("--manifest", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_schedule)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"pnlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except lemmas.DomainError as exc:
        print(f"pnlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StepFailure, AnalysisError, FieldError, RuntimeError) as exc:
        diag = getattr(exc, "diagnostics", None)
        print(f"pnlab: runtime failure: {exc}" + (f" {_dumps(diag)}" if diag else ""), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
