"""Command-line experiment harness.

Subcommands: ``simulate``, ``run``, ``gridsearch``, ``sweep`` and
``compare``. Exit codes: 0 on success, 2 on usage errors, 3 on numerical
failures.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments, io, metrics, model, solver
from .errors import InvalidArgumentError, SDecError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("sdecgmca")


class UsageError(Exception):
    pass


def _add_data_args(p, trials=True):
    g = p.add_argument_group("toy data")
    g.add_argument("--n-side", type=int, default=16)
    g.add_argument("--n-sources", type=int, default=3)
    g.add_argument("--n-channels", type=int, default=6)
    g.add_argument("--cond", type=float, default=2.0)
    g.add_argument("--rmin", type=float, default=None, help="minimum channel resolution (default 3*n_side/8)")
    g.add_argument("--cutoff", type=int, default=None, help="source band limit (default 3*n_side/6)")
    g.add_argument("--snr-db", type=float, default=10.0)
    g.add_argument("--sparsity", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0, help="seed (base seed for multi-trial commands)")
    if trials:
        g.add_argument("--trials", type=int, default=10)


def _add_solver_args(p):
    g = p.add_argument_group("solver")
    g.add_argument("--config", type=Path, help="key/value file of solver settings")
    g.add_argument("--c-wu", type=float, default=None)
    g.add_argument("--c-ref", type=float, default=None)
    g.add_argument("--k", type=float, default=None)
    g.add_argument("--k-max", type=float, default=None)


def _add_grid_args(p):
    g = p.add_argument_group("hyperparameter grid")
    g.add_argument("--grid-low", type=float, default=experiments.DEFAULT_GRID[0])
    g.add_argument("--grid-high", type=float, default=experiments.DEFAULT_GRID[1])
    g.add_argument("--grid-count", type=int, default=experiments.DEFAULT_GRID[2])


def build_parser():
    parser = argparse.ArgumentParser(prog="sdecgmca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a toy dataset directory")
    _add_data_args(p, trials=False)
    p.add_argument("--sweep", choices=experiments.SWEEP_VARIABLES, help="write one dataset per value")
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("run", help="run one method on one dataset")
    p.add_argument("--data", type=Path, help="dataset directory (otherwise a toy dataset is simulated)")
    _add_data_args(p, trials=False)
    _add_solver_args(p)
    _add_grid_args(p)
    p.add_argument("--method", default="sdecgmca")
    p.add_argument("--strategy", type=int, default=4)
    p.add_argument("--c", type=float, default=None, help="hyperparameter for nonblind/oracle/odecgmca")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gridsearch", help="grid search of c over seeded trials")
    _add_data_args(p)
    _add_solver_args(p)
    _add_grid_args(p)
    p.add_argument("--method", default="nonblind")
    p.add_argument("--strategy", type=int, default=4)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("sweep", help="metrics as a function of an observation parameter")
    _add_data_args(p)
    _add_solver_args(p)
    _add_grid_args(p)
    p.add_argument("--variable", choices=experiments.SWEEP_VARIABLES, required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--method", nargs="+", default=["nonblind"], dest="methods")
    p.add_argument("--strategy", type=int, nargs="+", default=[2, 3, 4], dest="strategies")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("compare", help="all methods on seeded trials with tuned hyperparameters")
    _add_data_args(p)
    _add_solver_args(p)
    _add_grid_args(p)
    p.add_argument("--method", nargs="+", dest="methods", default=["sdecgmca", "odecgmca", "oracle", "gmca", "hals"])
    p.add_argument("--out", type=Path, required=True)
    return parser


def sim_params(args):
    return model.SimulationParams(
        n_s=args.n_sources,
        n_c=args.n_channels,
        cond=args.cond,
        r_min=args.rmin,
        snr_db=args.snr_db,
        n_side=args.n_side,
        cutoff=args.cutoff,
        sparsity=args.sparsity,
        seed=args.seed,
    )


def solver_config(args, n_s):
    values = {"n_s": n_s}
    if getattr(args, "config", None):
        values.update(io.read_config(args.config))
    for key, attr in (("c_wu", "c_wu"), ("c_ref", "c_ref"), ("k", "k"), ("K_max", "k_max")):
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    return solver.SolverConfig.from_mapping(values)


def _grid(args):
    return experiments.c_grid(args.grid_low, args.grid_high, args.grid_count)


def _method_spec(name, strategy=4, c=None):
    try:
        return experiments.MethodSpec(name, strategy, c)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from exc


def _trial_datasets(args):
    params = sim_params(args)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    return [experiments.trial_dataset(params, t, args.seed) for t in range(args.trials)]


def _metric_rows(path, rows):
    io.write_rows(path, ["trial", "method", "c_a_db", "nmse_db", "nmse_w_db"], rows)


def cmd_simulate(args):
    params = sim_params(args)
    if args.sweep:
        if not args.values:
            raise UsageError("--sweep needs --values")
        for value in args.values:
            ds = model.simulate(experiments.sweep_params(params, args.sweep, value))
            io.write_dataset(args.out / f"{args.sweep}={io.fmt(value)}", ds)
    else:
        io.write_dataset(args.out, model.simulate(params))
    print(f"wrote {args.out}")


def cmd_run(args):
    spec = _method_spec(args.method, args.strategy, args.c)
    ds = io.read_dataset(args.data) if args.data else model.simulate(sim_params(args))
    n_s = ds.truth.A.shape[1] if ds.truth is not None else args.n_sources
    config = solver_config(args, n_s)
    if spec.method in ("nonblind", "oracle") and ds.truth is None:
        raise UsageError(f"{spec.method} needs a dataset with a ground-truth mixing matrix")
    if spec.method in ("nonblind", "oracle", "odecgmca") and spec.c is None:
        if ds.truth is None:
            raise UsageError(f"--c is required for {spec.method} without a ground truth")
        strategy = {"oracle": 4, "odecgmca": 2}.get(spec.method, spec.strategy)
        c_opt, _ = experiments.gridsearch([ds], experiments.MethodSpec("nonblind", strategy), config, _grid(args))
        spec = replace(spec, c=c_opt)
    A, S, resolution, result = experiments.run_method(ds, spec, config)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    io.write_matrix(out / "A.csv", A)
    for n, s in enumerate(S):
        io.write_map(out / f"S_{n}.map", s, ds.grid.n_side)
    if isinstance(result, solver.SolverResult):
        io.write_rows(
            out / "diagnostics.csv",
            ["iter", "stage", "c", "K", "rel_change"],
            ([d["iter"], d["stage"], d["c"], d["K"], d["rel_change"]] for d in result.diagnostics),
        )
    io.write_config(out / "config.txt", {f: getattr(config, f) for f in config.__dataclass_fields__})
    if ds.truth is not None:
        rep = metrics.evaluate(ds, A, S, resolution)
        _metric_rows(out / "metrics.csv", [(0, spec.method, rep.c_a_db, rep.nmse_db, rep.nmse_w_db)])
        print(f"{spec.method}: C_A={io.fmt(rep.c_a_db)} dB NMSE={io.fmt(rep.nmse_db)} dB NMSE_w={io.fmt(rep.nmse_w_db)} dB")
    print(f"wrote {out}")


def cmd_gridsearch(args):
    spec = _method_spec(args.method, args.strategy)
    if spec.method not in ("nonblind", "oracle", "odecgmca"):
        raise UsageError("grid search applies to nonblind, oracle and odecgmca")
    datasets = _trial_datasets(args)
    config = solver_config(args, args.n_sources)
    c_opt, rows = experiments.gridsearch(datasets, spec, config, _grid(args))
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_rows(args.out / "gridsearch.csv", ["c", "mean_nmse_db", "n_ok"], rows)
    io.write_rows(args.out / "c_opt.csv", ["method", "strategy", "c_opt"], [(spec.method, spec.strategy, c_opt)])
    print(f"c_opt = {io.fmt(c_opt)}")


def cmd_sweep(args):
    for m in args.methods:
        _method_spec(m)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    rows = experiments.sweep(
        sim_params(args),
        args.variable,
        args.values,
        args.methods,
        solver_config(args, args.n_sources),
        args.trials,
        args.seed,
        _grid(args),
        tuple(args.strategies),
    )
    args.out.mkdir(parents=True, exist_ok=True)
    header = ["variable", "value", "trial", "method", "status", "c", "c_a_db", "nmse_db", "nmse_w_db"]
    io.write_rows(args.out / "sweep.csv", header, rows)
    io.write_rows(
        args.out / "summary.csv",
        ["variable", "value", "method", "n_ok", "mean_c_a_db", "mean_nmse_db", "mean_nmse_w_db"],
        experiments.summarize_sweep(rows),
    )
    print(f"wrote {args.out}")


def cmd_compare(args):
    for m in args.methods:
        _method_spec(m)
    datasets = _trial_datasets(args)
    config = solver_config(args, args.n_sources)
    rows, c_opt = experiments.compare(datasets, config, _grid(args), tuple(args.methods))
    args.out.mkdir(parents=True, exist_ok=True)
    _metric_rows(args.out / "metrics.csv", rows)
    means = experiments.mean_by_method(rows)
    io.write_rows(
        args.out / "summary.csv",
        ["method", "mean_c_a_db", "mean_nmse_db", "mean_nmse_w_db"],
        ((m, *v) for m, v in means.items()),
    )
    io.write_rows(args.out / "c_opt.csv", ["strategy", "c_opt"], sorted(c_opt.items()))
    for m, (ca, nm, nw) in means.items():
        print(f"{m:10s} C_A={ca:7.2f} NMSE={nm:7.2f} NMSE_w={nw:7.2f}")


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "gridsearch": cmd_gridsearch,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, InvalidArgumentError) as exc:
        print(f"sdecgmca {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SDecError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"sdecgmca {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
