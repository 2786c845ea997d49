"""Experiment configuration files.

Configs are TOML with fixed sections. Every key is checked against the
schema below; an unknown key or a wrong type is a ConfigError naming the
field and the line it sits on.

    [problem]   name, seed, then generator keywords (p, d, m, n, ...)
    [algorithm] name, samplers
    [run]       epochs, eta, gamma, rho, iota, decay, eval_interval,
                max_wall_seconds, inner_epochs, warm_start, two_phase,
                theory_rates
    [trials]    seeds
    [output]    dir
    [targets]   grad_norm
    [fit]       order_epochs, k_values
"""

from __future__ import annotations

import inspect
import math
import re
import sys
from dataclasses import dataclass, field, replace

from ..errors import ConfigError
from ..problems import (
    gen_data_cleaning_small,
    gen_irm,
    gen_linear_comp,
    gen_quad_minimax,
    gen_quadratic_bilevel,
)
from ..sampler import Strategy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# problem name -> (generator, fixed keywords, algorithms it supports)
PROBLEMS = {
    "quadratic_bilevel": (gen_quadratic_bilevel, {}, ("wior_bo", "wior_cbo")),
    "data_cleaning": (gen_data_cleaning_small, {}, ("wior_bo", "wior_cbo")),
    "irm": (gen_irm, {}, ("wior_cbo",)),
    "quad_minimax": (gen_quad_minimax, {}, ("wior_minimax",)),
    "linear_comp": (gen_linear_comp, {"conditional": False}, ("wior_comp",)),
    "linear_ccomp": (gen_linear_comp, {"conditional": True}, ("wior_ccomp",)),
}
ALGORITHMS = ("wior_bo", "wior_cbo", "wior_comp", "wior_ccomp", "wior_minimax")
DOUBLE_LOOP = ("wior_cbo", "wior_ccomp")

_NUM = (int, float)
SCHEMA = {
    "problem": {"name": str, "seed": int},
    "algorithm": {"name": str, "samplers": list},
    "run": {
        "epochs": int,
        "eta": _NUM,
        "gamma": _NUM,
        "rho": _NUM,
        "iota": _NUM,
        "decay": _NUM,
        "eval_interval": int,
        "max_wall_seconds": _NUM,
        "inner_epochs": int,
        "warm_start": str,
        "two_phase": bool,
        "theory_rates": bool,
    },
    "trials": {"seeds": list},
    "output": {"dir": str},
    "targets": {"grad_norm": _NUM},
    "fit": {"order_epochs": int, "k_values": list},
}
REQUIRED = {"problem": ("name",), "algorithm": ("name",), "run": ("epochs",), "trials": ("seeds",)}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    problem_seed: int = 0
    problem_params: dict = field(default_factory=dict)
    algorithm: str = "wior_bo"
    samplers: tuple = (Strategy.RANDOM_RESHUFFLE,)
    run: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    out_dir: str | None = None
    grad_norm_target: float = 1e-3
    fit_order_epochs: int = 256
    fit_k_values: tuple | None = None
    source: str | None = None

    def with_seed_offset(self, k: int) -> "ExperimentConfig":
        return replace(self, seeds=tuple(s + k for s in self.seeds))

    def with_out_dir(self, path: str) -> "ExperimentConfig":
        return replace(self, out_dir=path)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """1-based line of ``[section]`` or of ``key = ...`` inside it."""
    if text is None:
        return None
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"^\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return no
    return None


def _fail(text, section, key, message):
    line = _line_of(text, section, key)
    where = f"{section}.{key}" if key else f"[{section}]"
    loc = f" (line {line})" if line else ""
    raise ConfigError(f"{where}{loc}: {message}")


def _check_type(text, section, key, value, expected):
    ok = isinstance(value, expected) and not (expected is not bool and isinstance(value, bool))
    if expected is _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    if not ok:
        name = "number" if expected is _NUM else expected.__name__
        _fail(text, section, key, f"expected {name}, got {type(value).__name__}")


def _generator_keys(name):
    gen, fixed, _ = PROBLEMS[name]
    params = inspect.signature(gen).parameters
    return {k for k in params if k not in ("seed", *fixed)}


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None

    for section, body in data.items():
        if section not in SCHEMA:
            _fail(text, section, None, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(f"{section}: expected a [{section}] table")
    for section, keys in REQUIRED.items():
        for key in keys:
            if key not in data.get(section, {}):
                _fail(text, section, key, "missing required key")

    prob = dict(data["problem"])
    pname = prob.pop("name")
    if pname not in PROBLEMS:
        _fail(text, "problem", "name", f"unknown problem {pname!r}; choose from {sorted(PROBLEMS)}")
    pseed = prob.pop("seed", 0)
    _check_type(text, "problem", "seed", pseed, int)
    allowed = _generator_keys(pname)
    for key, value in prob.items():
        if key not in allowed:
            _fail(text, "problem", key, f"unknown key for problem {pname!r}; allowed: {sorted(allowed)}")
        if isinstance(value, dict):
            _fail(text, "problem", key, "nested tables are not allowed")

    for section in ("algorithm", "run", "trials", "output", "targets", "fit"):
        for key, value in data.get(section, {}).items():
            if key not in SCHEMA[section]:
                _fail(text, section, key, f"unknown key; allowed: {sorted(SCHEMA[section])}")
            _check_type(text, section, key, value, SCHEMA[section][key])

    alg = data["algorithm"]["name"]
    if alg not in ALGORITHMS:
        _fail(text, "algorithm", "name", f"unknown algorithm {alg!r}; choose from {list(ALGORITHMS)}")
    if alg not in PROBLEMS[pname][2]:
        _fail(text, "algorithm", "name", f"{alg} cannot run on problem {pname!r}")
    try:
        samplers = tuple(Strategy.parse(s) for s in data["algorithm"].get("samplers", ["random_reshuffle"]))
    except ValueError as exc:
        _fail(text, "algorithm", "samplers", str(exc))
    if not samplers:
        _fail(text, "algorithm", "samplers", "at least one sampler is required")

    seeds = data["trials"]["seeds"]
    if not seeds:
        _fail(text, "trials", "seeds", "at least one trial seed is required")
    if not all(isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2**64 for s in seeds):
        _fail(text, "trials", "seeds", "seeds must be non-negative 64-bit integers")

    run = dict(data["run"])
    if run["epochs"] < 1:
        _fail(text, "run", "epochs", "must be >= 1")
    if not run.get("theory_rates", False):
        for key in ("eta", "gamma", "rho"):
            if key not in run and not (alg == "wior_minimax" and key == "rho"):
                hint = " (or set theory_rates = true)" if alg in DOUBLE_LOOP else ""
                _fail(text, "run", key, f"missing required key{hint}")
    for key in ("eta", "gamma", "rho", "decay"):
        if key in run and not (math.isfinite(run[key]) and run[key] >= 0):
            _fail(text, "run", key, "must be finite and >= 0")
    if "iota" in run and not run["iota"] > 0:
        _fail(text, "run", "iota", "must be > 0")
    if alg in DOUBLE_LOOP:
        run.setdefault("inner_epochs", 1)
        if run["inner_epochs"] < 1:
            _fail(text, "run", "inner_epochs", "must be >= 1")
        if run.get("warm_start", "fresh") not in ("fresh", "carry"):
            _fail(text, "run", "warm_start", "must be 'fresh' or 'carry'")
    else:
        for key in ("inner_epochs", "warm_start", "two_phase", "theory_rates"):
            if key in run:
                _fail(text, "run", key, f"only applies to double-loop algorithms, not {alg}")
    if "eval_interval" in run and run["eval_interval"] < 1:
        _fail(text, "run", "eval_interval", "must be >= 1")

    target = data.get("targets", {}).get("grad_norm", 1e-3)
    if not target > 0:
        _fail(text, "targets", "grad_norm", "must be > 0")
    fit = data.get("fit", {})
    order_epochs = fit.get("order_epochs", 256)
    if order_epochs < 1:
        _fail(text, "fit", "order_epochs", "must be >= 1")
    k_values = fit.get("k_values")
    if k_values is not None and (not k_values or not all(isinstance(k, int) and k >= 1 for k in k_values)):
        _fail(text, "fit", "k_values", "must be a non-empty list of positive integers")

    return ExperimentConfig(
        problem=pname,
        problem_seed=pseed,
        problem_params=prob,
        algorithm=alg,
        samplers=samplers,
        run=run,
        seeds=tuple(seeds),
        out_dir=data.get("output", {}).get("dir"),
        grad_norm_target=float(target),
        fit_order_epochs=order_epochs,
        fit_k_values=tuple(k_values) if k_values else None,
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))
