"""Command line experiment runner.

``nadmd generate|train|predict|eval|sweep-dt --config <path|preset>``

Everything a run produces lives under one output directory::

    <out>/dataset/          training set
    <out>/model/            model store
    <out>/trajectory.csv    predicted states
    <out>/diagnostics.jsonl per-step interpolation records
    <out>/errors.csv        prediction, reference and absolute error
    <out>/sweep.csv         dt, max-abs and relative l2 error per sweep case

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dmd, systems
from ._csvio import read_csv, write_csv
from .config import ExperimentConfig, load_config
from .errors import ConfigError, NumericalError, RankInfeasibleError, StoreFormatError
from .errors import ExtrapolationError, HorizonError, ParameterizationError
from .online import PredictionTrajectory, Predictor, evaluate, predict

log = logging.getLogger("nadmd")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class _Numerical(Exception):
    """A run finished but produced a flagged numerical failure."""


def _out(cfg: ExperimentConfig, args) -> Path:
    return Path(args.out or cfg.output)


# Steps ======================================================================
def run_generate(cfg: ExperimentConfig, out: Path) -> systems.TrainingSet:
    ts = systems.generate_training_set(
        cfg.system, cfg.grid, cfg.n_snap, cfg.dt, basis=cfg.system.bases(cfg.dt, cfg.nodes),
        cfg=cfg.integrator, seed=cfg.seed, state_box=cfg.state_box,
    )
    systems.save_training_set(ts, out / "dataset")
    print(f"{ts.n_pairs} pairs ({ts.n_points} grid points x {ts.n_snap} snapshots) "
          f"-> {out / 'dataset'}")
    return ts


def run_train(cfg: ExperimentConfig, out: Path, dataset=None) -> dmd.ModelStore:
    ts = systems.load_training_set(dataset or out / "dataset")
    store = dmd.train(ts, cfg.observable, cfg.rank)
    dmd.save(store, out / "model")
    res = dmd.training_residuals(store, ts)
    print(f"rank r = {store.rank} (N = {cfg.observable.dim}, {len(store)} local models)")
    print(f"one-step relative residual: min {res.min():.3e}  median {np.median(res):.3e}  "
          f"max {res.max():.3e} (grid point {int(np.argmax(res))})")
    return store


def run_predict(cfg: ExperimentConfig, out: Path, model=None) -> PredictionTrajectory:
    store = dmd.load(model or out / "model")
    if not np.isclose(store.dt, cfg.dt):
        log.warning("model was trained with dt=%g, config says dt=%g; using the model's",
                    store.dt, cfg.dt)
    predictor = Predictor(store, cfg.ref_node, cfg.interpolant)
    traj = predict(store, cfg.s0, cfg.signals, cfg.T, t0=cfg.t0, predictor=predictor)
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv")
    traj.write_diagnostics(out / "diagnostics.jsonl")
    n_fb = sum(1 for d in traj.diagnostics if d.get("fallback"))
    n_out = sum(1 for d in traj.diagnostics if d.get("outside_state_box"))
    print(f"{len(traj.times)} rows -> {out / 'trajectory.csv'} "
          f"(reference node {predictor.ref_index}, {n_fb} fallback step(s), "
          f"{n_out} step(s) outside the training state box)")
    if traj.diverged:
        raise _Numerical(f"prediction diverged at t={traj.divergence['t']:g}")
    return traj


def run_eval(cfg: ExperimentConfig, out: Path, trajectory=None):
    path = Path(trajectory or out / "trajectory.csv")
    try:
        header, data = read_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read trajectory: {exc}") from None
    n_s = cfg.system.state_dim
    if header[: 1 + n_s] != ["t"] + [f"S_{i + 1}" for i in range(n_s)]:
        raise ConfigError(f"{path}: expected columns t, S_1..S_{n_s}, found {header}")
    times, states = data[:, 0], data[:, 1 : 1 + n_s]
    dt = float(times[1] - times[0]) if len(times) > 1 else cfg.dt
    ref_t, ref_s = systems.integrate_reference(cfg.system, cfg.s0, cfg.signals, cfg.t0, cfg.T,
                                               dt, cfg.integrator)
    if len(times) != len(ref_t) or not np.allclose(times, ref_t, rtol=0, atol=1e-9 * cfg.T):
        raise HorizonError(
            f"trajectory covers t in [{times[0]:g}, {times[-1]:g}] with {len(times)} rows, "
            f"config horizon [{cfg.t0:g}, {cfg.T:g}] needs {len(ref_t)}"
        )
    traj = PredictionTrajectory(times=times, states=states, params=np.zeros((0, 0)))
    rep = evaluate(traj, ref_t, ref_s)
    traj.to_csv(out / "errors.csv", reference=ref_s)
    print(f"max-abs error {rep.max_abs:.6e}  relative l2 error {rep.rel_l2:.6e} "
          f"-> {out / 'errors.csv'}")
    return rep


def run_sweep(cfg: ExperimentConfig, out: Path, dts=None):
    dts = list(dts) if dts else list(cfg.sweep_dts)
    if not dts:
        raise ConfigError("sweep-dt needs at least one dt (--dts or sweep.dts)")
    unique = list(dict.fromkeys(float(x) for x in dts))
    if len(unique) < len(dts):
        log.warning("duplicate dt values removed: %s -> %s", dts, unique)
    rows, failed = [], []
    for dt in unique:
        case = out / f"dt_{dt:g}"
        sub = cfg.with_overrides(dt=dt)
        try:
            run_generate(sub, case)
            run_train(sub, case)
            run_predict(sub, case)
            rep = run_eval(sub, case)
            rows.append([dt, rep.max_abs, rep.rel_l2])
        except (_Numerical, NumericalError, RankInfeasibleError, ExtrapolationError,
                ParameterizationError, HorizonError) as exc:
            log.error("dt=%g failed: %s", dt, exc)
            failed.append(dt)
            rows.append([dt, np.nan, np.nan])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "sweep.csv", ["dt", "max_abs", "rel_l2"], rows)
    print(f"{len(rows)} row(s) -> {out / 'sweep.csv'}")
    for dt, mx, rel in rows:
        print(f"  dt={dt:g}  max-abs {mx:.6e}  relative l2 {rel:.6e}")
    if failed:
        raise _Numerical(f"{len(failed)} sweep case(s) failed: {failed}")
    return rows


# Entry point ================================================================
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nadmd", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="config file, or a preset name (e1, e2, e3, e4, e1_affine)")
    common.add_argument("--out", help="output directory (default: the config's 'output')")
    common.add_argument("--seed", type=int, help="override the sampling seed")
    rank = common.add_mutually_exclusive_group()
    rank.add_argument("--rank", type=int, help="fixed truncation rank")
    rank.add_argument("--energy", type=float, help="energy fraction for the truncation rank")
    common.add_argument("--ref-node", type=int, help="reference grid index (default: center)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="sample the training set")
    p = sub.add_parser("train", parents=[common], help="fit one DMD model per grid point")
    p.add_argument("--dataset", help="training set directory (default: <out>/dataset)")
    p = sub.add_parser("predict", parents=[common], help="predict the test trajectory")
    p.add_argument("--model", help="model store directory (default: <out>/model)")
    p = sub.add_parser("eval", parents=[common], help="compare against the reference solver")
    p.add_argument("--trajectory", help="trajectory CSV (default: <out>/trajectory.csv)")
    p = sub.add_parser("sweep-dt", parents=[common], help="repeat the pipeline per dt")
    p.add_argument("--dts", type=float, nargs="+", help="time steps (default: sweep.dts)")
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    kw = {"seed": args.seed, "ref_node": args.ref_node}
    if args.rank is not None:
        kw["rank"] = {"policy": "fixed", "value": args.rank}
    if args.energy is not None:
        kw["rank"] = {"policy": "energy", "value": args.energy}
    if any(v is not None for v in kw.values()):
        cfg = cfg.with_overrides(**kw)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = _out(cfg, args)
        if args.command == "generate":
            run_generate(cfg, out)
        elif args.command == "train":
            run_train(cfg, out, args.dataset)
        elif args.command == "predict":
            run_predict(cfg, out, args.model)
        elif args.command == "eval":
            run_eval(cfg, out, args.trajectory)
        else:
            run_sweep(cfg, out, args.dts)
    except (_Numerical, NumericalError, RankInfeasibleError, ExtrapolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, StoreFormatError, HorizonError, ParameterizationError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
