"""File formats: maps, harmonic coefficients, tables and dataset directories."""

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import model, sphere
from .errors import InvalidArgumentError

MAP_MAGIC = "SDEC-MAP v1"


def fmt(value):
    """Stable text form of a number; infinities become ``inf``/``-inf``."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(value)


def write_map(path, values, n_side):
    path = Path(path)
    values = np.asarray(values, dtype=float)
    if values.shape != (12 * n_side**2,):
        raise InvalidArgumentError(f"map of {values.size} pixels does not match n_side={n_side}")
    if path.suffix == ".csv":
        path.write_text("".join(fmt(v) + "\n" for v in values))
        return
    with open(path, "wb") as fh:
        fh.write(f"{MAP_MAGIC} n_side={n_side}\n".encode("ascii"))
        fh.write(values.astype("<f8").tobytes())


def read_map(path):
    """Return ``(values, n_side)``; CSV maps infer ``n_side`` from their length."""
    path = Path(path)
    if path.suffix == ".csv":
        values = np.array([float(line) for line in path.read_text().split()])
        n_side = int(round(math.sqrt(values.size / 12)))
        if 12 * n_side**2 != values.size:
            raise InvalidArgumentError(f"{values.size} values is not a valid pixel count")
        return values, n_side
    raw = path.read_bytes()
    end = raw.find(b"\n")
    header = raw[:end].decode("ascii", errors="replace") if end >= 0 else ""
    if not header.startswith(MAP_MAGIC + " n_side="):
        raise InvalidArgumentError(f"{path} is not a map file")
    n_side = int(header.split("=", 1)[1])
    values = np.frombuffer(raw[end + 1 :], dtype="<f8").astype(float)
    if values.size != 12 * n_side**2:
        raise InvalidArgumentError(f"{path}: expected {12 * n_side**2} pixels, found {values.size}")
    return values, n_side


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_alm(path, alm):
    l_max = sphere.lmax_from_size(alm.shape[-1])
    ell, emm = sphere.alm_lm(l_max)
    write_rows(path, ["l", "m", "re", "im"], zip(ell, emm, alm.real, alm.imag))


def read_alm(path):
    rows = read_rows(path)
    ell = np.array([int(r["l"]) for r in rows])
    emm = np.array([int(r["m"]) for r in rows])
    l_max = int(ell.max())
    alm = np.zeros(sphere.n_alm(l_max), dtype=complex)
    alm[sphere.alm_index(ell, emm, l_max)] = [complex(float(r["re"]), float(r["im"])) for r in rows]
    return alm


def write_matrix(path, A):
    A = np.atleast_2d(A)
    write_rows(path, [f"col{j}" for j in range(A.shape[1])], A)


def read_matrix(path):
    rows = read_rows(path)
    return np.array([[float(v) for v in r.values()] for r in rows])


def write_table(path, index_names, table):
    """Write a 2-D array as long-form rows ``i, l, value``."""
    write_rows(path, list(index_names), ((i, l, v) for i, row in enumerate(table) for l, v in enumerate(row)))


def read_table(path):
    rows = read_rows(path)
    keys = list(rows[0].keys())
    i = np.array([int(r[keys[0]]) for r in rows])
    l = np.array([int(r[keys[1]]) for r in rows])
    out = np.zeros((i.max() + 1, l.max() + 1))
    out[i, l] = [float(r[keys[2]]) for r in rows]
    return out


def write_filters(path, filters):
    write_table(path, ["j", "l", "value"], filters.bands)


def write_eps(path, eps):
    write_table(path, ["n", "l", "eps"], eps)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return fmt(v) if math.isinf(v) or math.isnan(v) else v
    return value


def write_json(path, data):
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def write_dataset(directory, dataset):
    """Dataset layout: ``meta.json``, ``X_<nu>.map``, ``kernels.csv`` and,
    with a ground truth, ``A.csv``, ``S_<n>.map`` and ``S_<n>_alm.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n_side = dataset.grid.n_side
    ks = dataset.kernels
    meta = {
        "n_side": n_side,
        "sigma2": dataset.sigma2,
        "resolutions": None if ks.resolutions is None else ks.resolutions.tolist(),
        "params": dataset.params,
        "n_channels": dataset.n_channels,
        "n_sources": None if dataset.truth is None else dataset.truth.A.shape[1],
    }
    write_json(directory / "meta.json", meta)
    for nu, x in enumerate(dataset.X):
        write_map(directory / f"X_{nu}.map", x, n_side)
    write_table(directory / "kernels.csv", ["nu", "l", "value"], ks.kernels)
    if dataset.truth is not None:
        write_matrix(directory / "A.csv", dataset.truth.A)
        for n, s in enumerate(dataset.truth.S):
            write_map(directory / f"S_{n}.map", s, n_side)
            write_alm(directory / f"S_{n}_alm.csv", dataset.truth.S_hat[n])


def read_dataset(directory):
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise InvalidArgumentError(f"{directory} is not a dataset directory")
    meta = json.loads(meta_path.read_text())
    grid = sphere.build_grid(int(meta["n_side"]))
    X = np.array([read_map(directory / f"X_{nu}.map")[0] for nu in range(meta["n_channels"])])
    res = meta.get("resolutions")
    kernels = model.KernelSet(read_table(directory / "kernels.csv"), None if res is None else np.array(res))
    truth = None
    if (directory / "A.csv").exists():
        n_s = int(meta["n_sources"])
        S = np.array([read_map(directory / f"S_{n}.map")[0] for n in range(n_s)])
        S_hat = np.array([read_alm(directory / f"S_{n}_alm.csv") for n in range(n_s)])
        truth = model.GroundTruth(read_matrix(directory / "A.csv"), S, S_hat)
    return model.Dataset.from_maps(grid, X, kernels, float(meta["sigma2"]), truth, meta.get("params"))


def write_config(path, mapping):
    Path(path).write_text("".join(f"{k} = {fmt(v)}\n" for k, v in mapping.items()))


def read_config(path):
    """Key/value file (``key = value`` or ``key: value``, ``#`` comments).

    Values are parsed as booleans, ``none``, integers or floats when possible.
    """
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise InvalidArgumentError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split(sep, 1))
        out[key] = _parse_value(value)
    return out


def _parse_value(text):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text
