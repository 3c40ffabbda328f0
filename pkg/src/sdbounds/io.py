"""File formats: matrices, observation paths, model files and certificates.

Matrices are UTF-8 CSV, one row per line, no header. Discrete observations
on disk are 1-based; the Python API is 0-based, and the readers and writers
here do the conversion.

Model files are JSON objects::

    {
      "X": 25,
      "P": "P.csv",                       # path, relative to the model file
      "observation": {"kind": "discrete", "Y": 25, "B": "B.csv"}
                  or {"kind": "gaussian", "sigma_v": 0.5, "levels": [...] | "levels.csv"},
      "g": [1, 2, ...]                    # optional, defaults to 1..X
    }
"""

import csv
import json
import os
from pathlib import Path

import numpy as np

from .copositive import OrderVerdict
from .errors import DimensionMismatch
from .hmm import DiscreteObservation, GaussianObservation, HmmModel, TransitionMatrix


def read_matrix(path):
    """Read a headerless numeric CSV as a 2-D float array."""
    A = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2, encoding="utf-8")
    return A


def write_matrix(path, A, fmt="%.17g"):
    np.savetxt(path, np.atleast_2d(np.asarray(A, dtype=float)), delimiter=",", fmt=fmt,
               encoding="utf-8")


def read_vector(path):
    return np.loadtxt(path, delimiter=",", dtype=float, ndmin=1, encoding="utf-8").ravel()


def read_observations(path, discrete):
    """Read an observation path (one value per line or comma separated).

    Discrete observations are converted from 1-based to 0-based integers.
    """
    v = read_vector(path)
    if discrete:
        if np.any(v != np.round(v)) or v.min() < 1:
            raise ValueError("discrete observations must be positive integers (1-based)")
        return (v.astype(np.int64) - 1).tolist()
    return v.tolist()


def write_observations(path, ys, discrete):
    with open(path, "w", encoding="utf-8") as fh:
        for y in ys:
            fh.write(f"{int(y) + 1}\n" if discrete else f"{float(y)!r}\n")


def write_rows(path, header, rows):
    """Write a CSV table with a header row (used for experiment output)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def _resolve(base, ref):
    p = Path(ref)
    return p if p.is_absolute() else Path(base) / p


def load_model(path):
    """Load an :class:`HmmModel` from a JSON model file."""
    path = Path(path)
    spec = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    P = TransitionMatrix(read_matrix(_resolve(base, spec["P"])))
    X = int(spec.get("X", P.n_states))
    if X != P.n_states:
        raise DimensionMismatch(f"model declares X={X} but P has {P.n_states} states")
    o = spec["observation"]
    kind = o["kind"]
    if kind == "discrete":
        obs = DiscreteObservation(read_matrix(_resolve(base, o["B"])))
        if "Y" in o and int(o["Y"]) != obs.n_obs:
            raise DimensionMismatch(f"model declares Y={o['Y']} but B has {obs.n_obs} columns")
    elif kind == "gaussian":
        lv = o.get("levels")
        levels = (np.arange(1, X + 1, dtype=float) if lv is None
                  else read_vector(_resolve(base, lv)) if isinstance(lv, str)
                  else np.asarray(lv, dtype=float))
        obs = GaussianObservation(levels, float(o["sigma_v"]))
    else:
        raise ValueError(f"unknown observation kind {kind!r}")
    g = spec.get("g")
    if isinstance(g, str):
        g = read_vector(_resolve(base, g))
    return HmmModel(P, obs, g)


def save_model(path, model, matrix_dir=None):
    """Write ``model`` as a JSON model file plus CSV matrices beside it."""
    path = Path(path)
    d = Path(matrix_dir) if matrix_dir is not None else path.parent
    d.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    p_file = d / f"{stem}_P.csv"
    write_matrix(p_file, model.P.entries)
    spec = {"X": model.n_states, "P": os.path.relpath(p_file, path.parent),
            "g": model.g.tolist()}
    if isinstance(model.obs, DiscreteObservation):
        b_file = d / f"{stem}_B.csv"
        write_matrix(b_file, model.obs.B)
        spec["observation"] = {"kind": "discrete", "Y": model.obs.n_obs,
                               "B": os.path.relpath(b_file, path.parent)}
    else:
        spec["observation"] = {"kind": "gaussian", "sigma_v": model.obs.sigma,
                               "levels": model.obs.levels.tolist()}
    path.write_text(json.dumps(spec, indent=2), encoding="utf-8")
    return path


def save_certificate(path, verdict, extra=None):
    """Write an order verdict (partitions and per-cell minimum entries) as JSON."""
    d = verdict.to_dict()
    if extra:
        d = {**extra, **d}
    Path(path).write_text(json.dumps(d, indent=1), encoding="utf-8")


def load_certificate(path):
    return OrderVerdict.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default), encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
