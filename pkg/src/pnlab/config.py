"""INI experiment configuration: parsing, validation, defaults and hashing.

Sections ``[grid] [model] [noise] [run] [analysis]``; keys are case-sensitive.
Every default that gets applied is logged at INFO level.
"""

from __future__ import annotations

import configparser
import difflib
import logging
import math
import os
from dataclasses import dataclass, field

from .analytics import config_hash
from .coefficients import gallery, noise_gallery
from .engine import SimConfig, noise_cfl_bound
from .field import Boundary, GridSpec
from .initial import initial_condition

__all__ = ["ConfigError", "ExperimentConfig", "AnalysisSettings", "parse_config", "load_config", "SCHEMA",
           "EXECUTION_KEYS"]

log = logging.getLogger(__name__)

SEED_ENV = "PNL_SEED"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _steps(text: str):
    return "auto" if text.strip().lower() == "auto" else int(text)


# (parser, default); a default of None means "optional, no value"
SCHEMA = {
    "grid": {
        "n": (int, 2),
        "extent": (_floats, (1.0,)),
        "cells": (_ints, (32,)),
        "boundary": (str, "dirichlet"),
        "origin": (_floats, (0.0,)),
        "max_nodes": (int, 2**26),
    },
    "model": {
        "name": (str, "identity"),
        "N": (int, 1),
        "lambda0": (float, None),
        "lambda1": (float, None),
        "omega": (float, None),
    },
    "noise": {
        "name": (str, "none"),
        "sigma": (float, 0.0),
        "amplitude": (float, None),
    },
    "run": {
        "T": (float, 0.1),
        "steps": (_steps, 100),
        "scheme": (str, "ito"),
        "snapshot_every": (int, 1),
        "c_safe": (float, 0.5),
        "blowup_threshold": (float, 1e12),
        "seed": (int, 0),
        "u0": (str, "sin-product"),
        "u0_mode": (int, None),
        "u0_width": (float, None),
        "u0_eps": (float, None),
        "u0_center": (float, None),
        "u0_gamma": (float, None),
        "M": (int, 1),
        "path_index": (int, 0),
        "workers": (int, 1),
        "chunk_size": (int, 0),
    },
    "analysis": {
        "margin": (float, 0.1),
        "pair_budget": (int, 4096),
        "p_list": (_floats, (2.0, 3.0, 4.0, 6.0, 8.0)),
        "cap": (float, 10.0),
        "probes": (_floats, (0.4375, 0.5, 0.5625)),
    },
}

# settings that change how a run executes but never what it computes
EXECUTION_KEYS = {("run", "workers")}


@dataclass(frozen=True)
class AnalysisSettings:
    margin: float = 0.1
    pair_budget: int = 4096
    p_list: tuple = (2.0, 3.0, 4.0, 6.0, 8.0)
    cap: float = 10.0
    probes: tuple = (0.4375, 0.5, 0.5625)


@dataclass
class ExperimentConfig:
    sim: SimConfig
    seed: int
    M: int
    path_index: int
    workers: int
    chunk_size: int | None
    analysis: AnalysisSettings
    values: dict
    text: str = ""
    defaults: list = field(default_factory=list)
    seed_source: str = "config"

    @property
    def u0(self):
        return self.sim.u0_closed

    def canonical(self) -> dict:
        """JSON-ready settings without execution-only keys (input to the config hash)."""
        out = {}
        for sec, keys in self.values.items():
            out[sec] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in keys.items()
                        if (sec, k) not in EXECUTION_KEYS}
        out["run"]["seed"] = self.seed
        return out

    @property
    def hash(self) -> str:
        return config_hash(self.canonical())


def _unknown(kind: str, name: str, valid) -> ConfigError:
    near = difflib.get_close_matches(name, list(valid), n=3, cutoff=0.5)
    hint = f"; nearest valid: {', '.join(near)}" if near else f"; valid: {', '.join(sorted(valid))}"
    return ConfigError(f"unknown {kind} {name!r}{hint}")


def _read(text: str) -> dict:
    cp = configparser.ConfigParser(strict=True, interpolation=None, default_section="__defaults__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise _unknown("section", sec, SCHEMA)
        values[sec] = {}
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise _unknown(f"key in [{sec}]", key, SCHEMA[sec])
            parse = SCHEMA[sec][key][0]
            try:
                values[sec][key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from None
    return values


def _with_defaults(values: dict) -> tuple[dict, list]:
    out, applied = {}, []
    for sec, keys in SCHEMA.items():
        out[sec] = {}
        for key, (_, default) in keys.items():
            if key in values.get(sec, {}):
                out[sec][key] = values[sec][key]
            elif default is not None:
                out[sec][key] = default
                applied.append(f"[{sec}] {key} = {default!r}")
                log.info("default applied: [%s] %s = %r", sec, key, default)
    return out, applied


def _per_axis(vals: tuple, n: int, what: str) -> tuple:
    if len(vals) == 1:
        return vals * n
    if len(vals) != n:
        raise ConfigError(f"[grid] {what} needs 1 or {n} entries, got {len(vals)}")
    return vals


def _grid(g: dict) -> GridSpec:
    n = g["n"]
    try:
        boundary = Boundary(g["boundary"].lower())
    except ValueError:
        raise _unknown("boundary", g["boundary"], [b.value for b in Boundary]) from None
    try:
        return GridSpec(_per_axis(g["extent"], n, "extent"), _per_axis(g["cells"], n, "cells"), boundary,
                        _per_axis(g["origin"], n, "origin"), max_nodes=g["max_nodes"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[grid] {exc}") from None


def _model(m: dict, n: int):
    params = {k: m[k] for k in ("lambda0", "lambda1", "omega") if k in m}
    try:
        return gallery(m["name"], n, m["N"], **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[model] {exc}") from None


def _noise(z: dict, n: int, N: int):
    params = {"amplitude": z["amplitude"]} if "amplitude" in z else {}
    try:
        return noise_gallery(z["name"], n, N, sigma=z["sigma"], **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[noise] {exc}") from None


_U0_KEYS = {"u0_mode": "mode", "u0_width": "width", "u0_eps": "eps", "u0_center": "center", "u0_gamma": "gamma"}


def _initial(r: dict):
    params = {v: r[k] for k, v in _U0_KEYS.items() if k in r}
    try:
        return initial_condition(r["u0"], **params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[run] u0: {exc}") from None


def parse_config(text: str, env=None) -> ExperimentConfig:
    """Validated experiment from INI text; ``PNL_SEED`` in ``env`` overrides the seed."""
    env = os.environ if env is None else env
    values, defaults = _with_defaults(_read(text))
    grid = _grid(values["grid"])
    model = _model(values["model"], grid.n)
    noise = _noise(values["noise"], grid.n, model.N)
    run = values["run"]
    ic = _initial(run)
    try:
        u0 = ic.sample(grid)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[run] u0 cannot be sampled: {exc}") from None
    if u0.N != model.N:
        raise ConfigError(f"u0 has {u0.N} components, the model has N={model.N}")
    steps = run["steps"]
    if steps == "auto":
        bound = noise_cfl_bound(grid, noise, run["c_safe"])
        steps = 100 if math.isinf(bound) else max(1, math.ceil(run["T"] / bound))
        log.info("steps = auto resolved to %d", steps)
    try:
        sim = SimConfig(grid, model, noise, u0, run["T"], steps, run["scheme"], run["snapshot_every"],
                        run["c_safe"], run["blowup_threshold"], ic)
    except ValueError as exc:  # includes StabilityError, which quotes the bound
        raise ConfigError(str(exc)) from None
    seed, source = run["seed"], "config"
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        source = SEED_ENV
    if run["M"] < 1 or run["workers"] < 1 or run["chunk_size"] < 0 or run["path_index"] < 0:
        raise ConfigError("[run] needs M >= 1, workers >= 1, chunk_size >= 0, path_index >= 0")
    a = values["analysis"]
    analysis = AnalysisSettings(a["margin"], a["pair_budget"], tuple(a["p_list"]), a["cap"], tuple(a["probes"]))
    if not 0 <= analysis.margin < 0.5:
        raise ConfigError("[analysis] margin must lie in [0, 0.5)")
    return ExperimentConfig(sim, seed, run["M"], run["path_index"], run["workers"], run["chunk_size"] or None,
                            analysis, values, text, defaults, source)


def load_config(path, env=None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), env)

