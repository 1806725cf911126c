"""Experiment configuration: a single JSON document.

Matrices are row-major nested lists; ``Q`` and ``R`` also accept
``{"diag": [...]}``. ``snr_db`` may be ``"inf"`` or ``null`` to disable
noise. Parsing normalizes everything to tuples so parsed configs compare
by value.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from typing import Optional

import numpy as np

from .decoder import DEFAULT_MAX_CANDIDATES


class ConfigError(ValueError):
    pass


def _matrix(value, name: str, size: Optional[int] = None) -> tuple:
    if isinstance(value, dict):
        if set(value) != {"diag"}:
            raise ConfigError(f"{name}: expected a nested list or {{'diag': [...]}}")
        M = np.diag(np.asarray(value["diag"], dtype=float))
    else:
        M = np.atleast_2d(np.asarray(value, dtype=float))
    if M.ndim != 2:
        raise ConfigError(f"{name} must be a matrix")
    if size is not None and M.shape != (size, size):
        raise ConfigError(f"{name} must be {size}x{size}, got {M.shape}")
    return tuple(tuple(float(v) for v in row) for row in M)


def _levels(value) -> tuple:
    if not value:
        raise ConfigError("control_set.levels must be non-empty")
    if isinstance(value[0], (list, tuple)):
        return tuple(tuple(float(v) for v in ch) for ch in value)
    return tuple(float(v) for v in value)


def _snr(value) -> float:
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "+inf", "none")):
        return math.inf
    return float(value)


@dataclass(frozen=True)
class ExperimentConfig:
    A: tuple
    B: tuple
    C: tuple
    levels: tuple
    delta_bound: Optional[float]
    N_p: int
    N_f: tuple
    Q: tuple
    R: tuple
    lambda_a: float
    regularizer: str
    collect_steps: int
    snr_db: float
    data_seed: int
    max_steps: int
    cl_steps: int
    methods: tuple
    reference: tuple
    cl_seed: int
    cl_noise: bool
    out_dir: str
    trace: bool
    enum_cap: int = DEFAULT_MAX_CANDIDATES

    @property
    def n(self) -> int:
        return len(self.A)

    @property
    def m(self) -> int:
        return len(self.B[0])

    @property
    def p(self) -> int:
        return len(self.C)

    @property
    def reference_spec(self) -> dict:
        return {k: _unfreeze(v) for k, v in self.reference}

    def channel_levels(self) -> tuple:
        if self.levels and isinstance(self.levels[0], tuple):
            return self.levels
        return tuple(self.levels for _ in range(self.m))

    def with_overrides(self, nf=None, seed=None, method=None, out=None,
                       trace=None) -> "ExperimentConfig":
        cfg = self
        if nf is not None:
            cfg = replace(cfg, N_f=(int(nf),))
        if seed is not None:
            cfg = replace(cfg, data_seed=int(seed), cl_seed=int(seed))
        if method is not None:
            cfg = replace(cfg, methods=(method.upper(),))
        if out is not None:
            cfg = replace(cfg, out_dir=str(out))
        if trace:
            cfg = replace(cfg, trace=True)
        validate(cfg)
        return cfg


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    if isinstance(v, dict):
        return tuple(sorted((k, _freeze(x)) for k, x in v.items()))
    return v


def _unfreeze(v):
    if isinstance(v, tuple):
        return [_unfreeze(x) for x in v]
    return v


def parse(doc: dict) -> ExperimentConfig:
    try:
        plant, cs, hz = doc["plant"], doc["control_set"], doc["horizons"]
        wts, data, cl = doc["weights"], doc["data"], doc["closed_loop"]
        out = doc.get("output", {})
        A = _matrix(plant["A"], "A")
        B = _matrix(plant["B"], "B")
        C = _matrix(plant["C"], "C")
        nf = hz["N_f"]
        cfg = ExperimentConfig(
            A=A, B=B, C=C,
            levels=_levels(cs["levels"]),
            delta_bound=None if cs.get("delta_bound") is None else float(cs["delta_bound"]),
            N_p=int(hz["N_p"]),
            N_f=tuple(int(v) for v in (nf if isinstance(nf, list) else [nf])),
            Q=_matrix(wts["Q"], "Q", len(C)),
            R=_matrix(wts["R"], "R", len(B[0])),
            lambda_a=float(wts["lambda_a"]),
            regularizer=str(wts.get("regularizer", "projection")).lower(),
            collect_steps=int(data["collect_steps"]),
            snr_db=_snr(data.get("snr_db")),
            data_seed=int(data.get("seed", 0)),
            max_steps=int(data.get("max_steps", 100_000)),
            cl_steps=int(cl["steps"]),
            methods=tuple(str(s).upper() for s in cl.get("methods", ["SDA", "ENUM"])),
            reference=_freeze(cl.get("reference", {"kind": "constant", "value": 0.0})),
            cl_seed=int(cl.get("seed", 0)),
            cl_noise=bool(cl.get("noise", False)),
            out_dir=str(out.get("directory", "results")),
            trace=bool(out.get("trace", False)),
            enum_cap=int(doc.get("enum_cap", DEFAULT_MAX_CANDIDATES)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc!r}") from exc
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    n = len(cfg.A)
    if any(len(r) != n for r in cfg.A):
        raise ConfigError("A must be square")
    if len(cfg.B) != n or len(cfg.C[0]) != n:
        raise ConfigError("plant dimensions are inconsistent")
    if cfg.N_p < 1 or not cfg.N_f or min(cfg.N_f) < 1:
        raise ConfigError("N_p and N_f must be >= 1")
    if not cfg.lambda_a > 0:
        raise ConfigError("lambda_a must be positive")
    R = np.asarray(cfg.R)
    if not np.allclose(R, R.T) or np.min(np.linalg.eigvalsh(R)) <= 0:
        raise ConfigError("R must be symmetric positive definite")
    Q = np.asarray(cfg.Q)
    if not np.allclose(Q, Q.T) or np.min(np.linalg.eigvalsh(Q)) < -1e-12:
        raise ConfigError("Q must be symmetric positive semidefinite")
    if cfg.regularizer not in ("projection", "two_norm"):
        raise ConfigError(f"unknown regularizer {cfg.regularizer!r}")
    if cfg.delta_bound is not None and cfg.delta_bound < 0:
        raise ConfigError("delta_bound must be nonnegative")
    levels = cfg.channel_levels()
    if len(levels) != cfg.m:
        raise ConfigError(f"need one level list per input channel ({cfg.m})")
    for ch in levels:
        if not ch or any(b <= a for a, b in zip(ch, ch[1:])):
            raise ConfigError("levels must be non-empty and strictly increasing")
    bad = set(cfg.methods) - {"SDA", "ENUM"}
    if bad or not cfg.methods:
        raise ConfigError(f"methods must be drawn from SDA, ENUM (got {list(cfg.methods)})")
    if "ENUM" in cfg.methods:
        count = math.prod(len(ch) for ch in levels) ** max(cfg.N_f)
        if count > cfg.enum_cap:
            raise ConfigError(f"ENUM needs {count} candidates at N_f={max(cfg.N_f)} "
                              f"(cap {cfg.enum_cap})")
    if cfg.cl_steps < 0:
        raise ConfigError("closed_loop.steps must be nonnegative")
    need = cfg.N_p + max(cfg.N_f) + 1
    if cfg.collect_steps < need:
        raise ConfigError(f"data.collect_steps={cfg.collect_steps} is below the minimum window "
                          f"length N_p + N_f + 1 = {need}")


def serialize(cfg: ExperimentConfig) -> dict:
    return {
        "plant": {"A": _unfreeze(cfg.A), "B": _unfreeze(cfg.B), "C": _unfreeze(cfg.C)},
        "control_set": {"levels": _unfreeze(cfg.levels), "delta_bound": cfg.delta_bound},
        "horizons": {"N_p": cfg.N_p, "N_f": list(cfg.N_f)},
        "weights": {"Q": _unfreeze(cfg.Q), "R": _unfreeze(cfg.R), "lambda_a": cfg.lambda_a,
                    "regularizer": cfg.regularizer},
        "data": {"collect_steps": cfg.collect_steps,
                 "snr_db": "inf" if math.isinf(cfg.snr_db) else cfg.snr_db,
                 "seed": cfg.data_seed, "max_steps": cfg.max_steps},
        "closed_loop": {"steps": cfg.cl_steps, "methods": list(cfg.methods),
                        "reference": cfg.reference_spec, "seed": cfg.cl_seed,
                        "noise": cfg.cl_noise},
        "output": {"directory": cfg.out_dir, "trace": cfg.trace},
        "enum_cap": cfg.enum_cap,
    }


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse(doc)


def default_document() -> dict:
    text = resources.files("fcsdpc").joinpath("configs/default.json").read_text()
    return json.loads(text)


def default_config() -> ExperimentConfig:
    return parse(copy.deepcopy(default_document()))


def dump(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(serialize(cfg), fh, indent=2)
