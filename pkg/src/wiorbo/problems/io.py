"""Plain-text save/load for problem instances.

Layout, one item per line::

    wiorbo-instance 1
    kind <kind>
    param <name> <value>          (zero or more)
    array <name> <dim> <dim> ...  (followed by the rows)
    <row of decimal values>

Arrays are written row-major with the last axis on one line, using the
shortest repr that round-trips a double, so reload is bit-exact.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .cleaning import DataCleaningSmall
from .composition import ConditionalLinearComp, LinearComp
from .irm import SyntheticIRM
from .minimax import QuadMinimax
from .quadratic import QuadraticBilevel

MAGIC = "wiorbo-instance 1"


def _indexed(arrays, prefix):
    keys = sorted((k for k in arrays if k.startswith(prefix)), key=lambda k: int(k[len(prefix) :]))
    return [arrays[k] for k in keys]


_BUILDERS = {
    "quadratic_bilevel": lambda a, p: QuadraticBilevel(a["A"], a["B"], a["b"], a["t"], a["s"], **p),
    "irm": lambda a, p: SyntheticIRM(a["x_true"], a["c"], a["labels"], _indexed(a, "noisy_"), **p),
    "data_cleaning": lambda a, p: DataCleaningSmall(
        a["a_tr"], a["l_tr"], a["a_val"], a["l_val"], a["corrupted"].astype(bool), **p
    ),
    "quad_minimax": lambda a, p: QuadMinimax(a["P"], a["s"], a["C"], a["e"], a["D"]),
    "linear_comp": lambda a, p: LinearComp(a["M"], a["o"], a["a"], **p),
    "linear_ccomp": lambda a, p: ConditionalLinearComp(_indexed(a, "M_"), _indexed(a, "o_"), a["a"], **p),
}


def dumps(problem) -> str:
    lines = [MAGIC, f"kind {problem.kind}"]
    for name, value in problem.params().items():
        lines.append(f"param {name} {float(value)!r}")
    for name, arr in problem.arrays().items():
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(" ".join(["array", name, *map(str, arr.shape)]))
        rows = arr.reshape(1, 1) if arr.ndim == 0 else arr.reshape(-1, arr.shape[-1])
        for row in rows:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def loads(text: str):
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ValueError("not a wiorbo instance file (bad header)")
    pos = 1
    kind, params, arrays = None, {}, {}
    while pos < len(lines):
        parts = lines[pos].split()
        pos += 1
        if not parts:
            continue
        tag = parts[0]
        if tag == "kind":
            kind = parts[1]
        elif tag == "param":
            params[parts[1]] = float(parts[2])
        elif tag == "array":
            name, shape = parts[1], tuple(int(s) for s in parts[2:])
            size = int(np.prod(shape)) if shape else 1
            width = shape[-1] if shape else 1
            nrows = size // width if width else 0
            vals = []
            for _ in range(nrows):
                if pos >= len(lines):
                    raise ValueError(f"array {name!r} is truncated")
                vals.extend(float(v) for v in lines[pos].split())
                pos += 1
            if len(vals) != size:
                raise ValueError(f"array {name!r} has {len(vals)} values, expected {size}")
            arrays[name] = np.array(vals, dtype=np.float64).reshape(shape)
        else:
            raise ValueError(f"line {pos}: unknown record {tag!r}")
    if kind not in _BUILDERS:
        raise ValueError(f"unknown or missing problem kind {kind!r}")
    return _BUILDERS[kind](arrays, params)


def save_instance(problem, path) -> None:
    """Write atomically: a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(dumps(problem))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_instance(path):
    with open(path) as fh:
        return loads(fh.read())
