"""Monte-Carlo harness: seeded trials, method dispatch, grid search over the
regularization hyperparameter and sweeps over observation parameters."""

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import baselines, metrics, model, solver
from .errors import InvalidArgumentError, SDecError

log = logging.getLogger(__name__)

METHODS = ("sdecgmca", "odecgmca", "nonblind", "oracle", "gmca", "hals")
SWEEP_VARIABLES = ("cond", "r_min", "n_c", "snr_db")
DEFAULT_GRID = (1e-4, 1e2, 15)


def desk_params(**overrides):
    """Desk-scale toy problem: ``n_side=16``, 3 sources, 6 channels."""
    base = dict(n_s=3, n_c=6, n_side=16)
    base.update(overrides)
    return model.SimulationParams(**base)


def c_grid(low=DEFAULT_GRID[0], high=DEFAULT_GRID[1], count=DEFAULT_GRID[2]):
    if not 0 < low <= high or count < 1:
        raise InvalidArgumentError("grid bounds must satisfy 0 < low <= high and count >= 1")
    return np.geomspace(low, high, int(count))


def trial_seed(seed_base, trial):
    return int(seed_base) + int(trial)


def trial_dataset(params, trial, seed_base=0):
    return model.simulate(replace(params, seed=trial_seed(seed_base, trial)))


def worker_count():
    try:
        return max(1, int(os.environ.get("SDEC_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Ordered map over ``items``, in worker processes when ``SDEC_THREADS > 1``."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class MethodSpec:
    """What to run on one dataset. ``c`` is the regularization hyperparameter
    for ``nonblind``/``oracle``/``odecgmca``; ``sdecgmca`` reads ``c_wu`` and
    ``c_ref`` from the config."""

    method: str
    strategy: int = 4
    c: float = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")


def run_method(dataset, spec, config):
    """Run one method; returns ``(A, S, resolution, result)`` where
    ``resolution`` tells which kernel the source maps are expressed at."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", solver.ConvergenceWarning)
        if spec.method == "sdecgmca":
            res = solver.run_sdecgmca(dataset, config)
            return res.A, res.S, "best", res
        if spec.method == "odecgmca":
            cfg = replace(config, warmup_strategy=2, refine_strategy=2, c_wu=spec.c, c_ref=spec.c)
            res = solver.run_sdecgmca(dataset, cfg)
            return res.A, res.S, "best", res
        if spec.method in ("nonblind", "oracle"):
            if spec.c is None:
                raise InvalidArgumentError(f"method {spec.method} needs a hyperparameter c")
            strategy = 4 if spec.method == "oracle" else spec.strategy
            A = dataset.truth.A
            S = solver.run_nonblind(dataset, A, strategy, spec.c, config)
            return A, S, "best", None
        if spec.method == "gmca":
            res = baselines.run_gmca(model.degrade_to_worst(dataset), config)
            return res.A, res.S, "worst", res
        res = baselines.run_hals_dataset(dataset, config.n_s, seed=dataset.params.get("seed", 0))
        return res.A, res.S, "worst", res


def evaluate(dataset, spec, config):
    A, S, resolution, _ = run_method(dataset, spec, config)
    return metrics.evaluate(dataset, A, S, resolution)


def _safe_evaluate(job):
    dataset, spec, config = job
    try:
        return evaluate(dataset, spec, config)
    except SDecError as exc:
        log.warning("%s failed: %s", spec.method, exc)
        return None


def gridsearch(datasets, spec, config, grid):
    """Evaluate ``spec`` at each ``c`` of ``grid`` on every dataset.

    Returns ``(c_opt, rows)`` with one row ``(c, mean_nmse_db, n_ok)`` per
    grid point. ``c_opt`` maximizes the mean NMSE; ties go to the smaller
    ``c``. Failed runs are left out of the mean.
    """
    grid = np.sort(np.asarray(grid, dtype=float))
    jobs = [(ds, replace(spec, c=float(c)), config) for c in grid for ds in datasets]
    reports = parallel_map(_safe_evaluate, jobs)
    rows = []
    n = len(datasets)
    for i, c in enumerate(grid):
        vals = [r.nmse_db for r in reports[i * n : (i + 1) * n] if r is not None]
        rows.append((float(c), float(np.mean(vals)) if vals else -np.inf, len(vals)))
    if all(r[2] == 0 for r in rows):
        raise SDecError("every grid-search run failed")
    means = np.array([r[1] for r in rows])
    return float(grid[int(np.argmax(means))]), rows


def tune(datasets, config, grid):
    """Mean-optimal non-blind hyperparameters for strategies 2, 3 and 4."""
    return {s: gridsearch(datasets, MethodSpec("nonblind", s), config, grid)[0] for s in (2, 3, 4)}


def compare(datasets, config, grid, methods=("sdecgmca", "odecgmca", "oracle", "gmca", "hals"), c_opt=None):
    """Run every method on every dataset with grid-searched hyperparameters.

    SDecGMCA uses the non-blind optima of strategy 3 (warm-up) and 4
    (refinement); oDecGMCA and the oracle use those of strategies 2 and 4.
    Returns ``(rows, c_opt)`` with rows ``(trial, method, c_a, nmse, nmse_w)``
    (``None`` metrics for failed runs).
    """
    for m in methods:
        MethodSpec(m)
    if c_opt is None:
        c_opt = tune(datasets, config, grid)
    sdec_cfg = replace(config, c_wu=c_opt[3], c_ref=c_opt[4])
    specs = {
        "sdecgmca": (MethodSpec("sdecgmca"), sdec_cfg),
        "odecgmca": (MethodSpec("odecgmca", 2, c_opt[2]), config),
        "oracle": (MethodSpec("oracle", 4, c_opt[4]), config),
        "nonblind": (MethodSpec("nonblind", 4, c_opt[4]), config),
        "gmca": (MethodSpec("gmca"), config),
        "hals": (MethodSpec("hals"), config),
    }
    jobs = [(ds, *specs[m]) for ds in datasets for m in methods]
    reports = parallel_map(_safe_evaluate, jobs)
    rows = []
    for k, rep in enumerate(reports):
        trial, m = divmod(k, len(methods))
        if rep is None:
            rows.append((trial, methods[m], None, None, None))
        else:
            rows.append((trial, methods[m], rep.c_a_db, rep.nmse_db, rep.nmse_w_db))
    return rows, c_opt


def mean_by_method(rows):
    """``{method: (mean c_a, mean nmse, mean nmse_w)}`` over successful rows."""
    out = {}
    for method in dict.fromkeys(r[1] for r in rows):
        ok = [r for r in rows if r[1] == method and r[3] is not None]
        out[method] = tuple(float(np.mean([r[i] for r in ok])) if ok else np.nan for i in (2, 3, 4))
    return out


def sweep_params(base, variable, value):
    if variable not in SWEEP_VARIABLES:
        raise InvalidArgumentError(f"unknown sweep variable {variable!r}")
    cast = int if variable == "n_c" else float
    return replace(base, **{variable: cast(value)})


def sweep(base, variable, values, methods, config, trials, seed_base=0, grid=None, strategies=(2, 3, 4)):
    """Metrics for every ``(value, trial, method)``.

    Hyperparameters are grid-searched per value on that value's trials
    (non-blind strategy ``s`` for ``nonblind``; 3 and 4 for ``sdecgmca``; 2 for
    ``odecgmca``; 4 for ``oracle``). A failed run gives a row with status
    ``failed`` instead of aborting. Rows are
    ``(variable, value, trial, method, status, c, c_a, nmse, nmse_w)``.
    """
    values = list(values)
    if not values:
        raise InvalidArgumentError("sweep needs at least one value")
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    specs = []
    for m in methods:
        if m == "nonblind":
            specs.extend(MethodSpec(m, s) for s in strategies)
        else:
            specs.append(MethodSpec(m))
    grid = c_grid() if grid is None else grid
    rows = []
    for value in values:
        params = sweep_params(base, variable, value)
        datasets = []
        for t in range(trials):
            try:
                datasets.append(trial_dataset(params, t, seed_base))
            except SDecError as exc:
                log.warning("simulation failed: %s", exc)
                rows.extend((variable, value, t, _label(s), "failed", None, None, None, None) for s in specs)
        cache = {}

        def tuned(strategy):
            if strategy not in cache:
                cache[strategy] = gridsearch(datasets, MethodSpec("nonblind", strategy), config, grid)[0]
            return cache[strategy]

        for spec in specs if datasets else ():
            cfg = config
            if spec.method in ("nonblind", "oracle"):
                spec = replace(spec, c=tuned(4 if spec.method == "oracle" else spec.strategy))
            elif spec.method == "odecgmca":
                spec = replace(spec, c=tuned(2))
            elif spec.method == "sdecgmca":
                cfg = replace(config, c_wu=tuned(3), c_ref=tuned(4))
            reports = parallel_map(_safe_evaluate, [(ds, spec, cfg) for ds in datasets])
            for ds, rep in zip(datasets, reports):
                t = ds.params["seed"] - seed_base
                if rep is None:
                    rows.append((variable, value, t, _label(spec), "failed", spec.c, None, None, None))
                else:
                    rows.append(
                        (variable, value, t, _label(spec), "ok", spec.c, rep.c_a_db, rep.nmse_db, rep.nmse_w_db)
                    )
    return rows


def _label(spec):
    return f"nonblind{spec.strategy}" if spec.method == "nonblind" else spec.method


def summarize_sweep(rows):
    """Mean metrics per ``(value, method)`` over successful rows."""
    out = []
    for value in dict.fromkeys(r[1] for r in rows):
        for label in dict.fromkeys(r[3] for r in rows):
            ok = [r for r in rows if r[1] == value and r[3] == label and r[4] == "ok"]
            if ok:
                out.append((rows[0][0], value, label, len(ok), *(float(np.mean([r[i] for r in ok])) for i in (6, 7, 8))))
    return out
