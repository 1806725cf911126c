"""Truncated integer least squares over a finite control set.

Two solvers share one problem type and one cost evaluator:

``sphere_decode``
    Depth-first branch and bound over the components of ``u`` in natural
    order, with the switching bound enforced while branching and the
    incumbent initialized by constrained sequential rounding.
``enumerate_ils``
    Exhaustive scan of every alphabet sequence, used as the optimality oracle.

The hot loops live in a Cython extension (``_kernels``); if it is not built
the pure-Python kernels (``_pykernels``) are used instead. Set
``FCSDPC_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import functools
import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..plant import ControlSet
from . import _pykernels

try:
    from . import _kernels as _ckernels
except ImportError:  # extension not built
    _ckernels = None

DEFAULT_MAX_CANDIDATES = 10 ** 7


def available_backends() -> list:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def _default_backend() -> str:
    if os.environ.get("FCSDPC_PURE_PYTHON") or _ckernels is None:
        return "python"
    return "cython"


BACKEND = _default_backend()


def _kernels(backend: Optional[str]):
    name = backend or BACKEND
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("the Cython extension is not built")
        return _ckernels
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown backend {name!r}")


@dataclass(frozen=True)
class IlsProblem:
    """``min ||L u - target||^2`` over alphabet sequences obeying the switching bound.

    ``u`` stacks ``N_f`` blocks of ``m`` channels; ``u_prev`` is ``u(-1)``.
    """

    L_factor: np.ndarray
    target: np.ndarray
    cs: ControlSet
    u_prev: np.ndarray

    def __post_init__(self):
        L = np.ascontiguousarray(self.L_factor, dtype=float)
        t = np.ascontiguousarray(self.target, dtype=float).reshape(-1)
        N = len(t)
        if L.shape != (N, N):
            raise ValueError(f"L_factor must be {N}x{N}, got {L.shape}")
        if np.any(np.triu(L, 1) != 0.0):
            raise ValueError("L_factor must be lower triangular")
        if np.any(np.diag(L) <= 0.0):
            raise ValueError("L_factor must have a positive diagonal")
        if N % self.cs.m:
            raise ValueError(f"target length {N} is not a multiple of m={self.cs.m}")
        u_prev = np.asarray(self.u_prev, dtype=float).reshape(-1)
        if u_prev.shape != (self.cs.m,):
            raise ValueError(f"u_prev must have length {self.cs.m}")
        object.__setattr__(self, "L_factor", L)
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "u_prev", u_prev)

    @classmethod
    def trusted(cls, L_factor: np.ndarray, target: np.ndarray, cs: ControlSet,
                u_prev: np.ndarray) -> "IlsProblem":
        """Skip validation; for a factor already checked and a float ``target`` and ``u_prev``."""
        p = object.__new__(cls)
        for name, v in (("L_factor", L_factor), ("target", target), ("cs", cs),
                        ("u_prev", u_prev)):
            object.__setattr__(p, name, v)
        return p

    @property
    def m(self) -> int:
        return self.cs.m

    @property
    def N_f(self) -> int:
        return len(self.target) // self.cs.m

    def candidate_count(self) -> int:
        return int(np.prod([len(self.cs.levels[i % self.m]) for i in range(len(self.target))],
                           dtype=object))

    def tables(self):
        """Padded levels, level counts, and admissible first moves and transitions."""
        levels, nlev, trans = _alphabet_tables(self.cs)
        return levels, nlev, _first_moves(self.cs, tuple(self.u_prev.tolist())), trans

    def values(self, idx) -> np.ndarray:
        return np.array([self.cs.levels[i % self.m][int(k)] for i, k in enumerate(idx)])


@functools.lru_cache(maxsize=64)
def _alphabet_tables(cs: ControlSet):
    K = max(len(ch) for ch in cs.levels)
    levels = np.zeros((cs.m, K))
    nlev = np.zeros(cs.m, dtype=np.intc)
    trans = np.zeros((cs.m, K, K), dtype=np.uint8)
    for c, ch in enumerate(cs.levels):
        nlev[c] = len(ch)
        levels[c, :len(ch)] = ch
        for j, a in enumerate(ch):
            for k, b in enumerate(ch):
                trans[c, j, k] = cs.step_ok(b, a)
    for arr in (levels, nlev, trans):
        arr.setflags(write=False)
    return levels, nlev, trans


@functools.lru_cache(maxsize=1024)
def _first_moves(cs: ControlSet, u_prev: tuple):
    K = max(len(ch) for ch in cs.levels)
    first = np.zeros((cs.m, K), dtype=np.uint8)
    for c, ch in enumerate(cs.levels):
        for k, v in enumerate(ch):
            first[c, k] = cs.step_ok(v, u_prev[c])
    first.setflags(write=False)
    return first


@dataclass
class SolveResult:
    u_opt: np.ndarray
    cost: float
    nodes_explored: int
    wall_time_ns: int
    method: str
    u_idx: np.ndarray
    radii: list = field(default_factory=list)

    @property
    def wall_time(self) -> float:
        return self.wall_time_ns * 1e-9


def ils_cost(L, u, target) -> float:
    """``||L u - target||^2`` accumulated row by row in a fixed order.

    Both solvers and both backends produce exactly this value for the
    sequence they return.
    """
    L = np.asarray(L, dtype=float).tolist()
    u = [float(v) for v in np.asarray(u).reshape(-1)]
    t = [float(v) for v in np.asarray(target).reshape(-1)]
    cost = 0.0
    for i in range(len(t)):
        r = 0.0
        Li = L[i]
        for j in range(i + 1):
            r = r + Li[j] * u[j]
        r = r - t[i]
        cost = cost + r * r
    return cost


def initial_guess(p: IlsProblem, backend: Optional[str] = None):
    """Sequential rounding of the back-substituted solution to admissible levels.

    Returns:
        ``(u_init, radius)`` where ``radius`` is the cost of ``u_init``.
    """
    levels, nlev, first, trans = p.tables()
    idx = _kernels(backend).babai(p.L_factor, p.target, levels, nlev, p.m, first, trans)
    u = p.values(idx)
    return u, ils_cost(p.L_factor, u, p.target)


def sphere_decode(p: IlsProblem, backend: Optional[str] = None,
                  trace: Optional[list] = None) -> SolveResult:
    """Global minimizer by sphere decoding.

    Args:
        p: Problem instance.
        backend: ``"cython"`` or ``"python"``; defaults to :data:`BACKEND`.
        trace: If a list is given, visited nodes and improving leaves are
            appended to it (forces the Python kernels).
    """
    if trace is not None:
        backend = "python"
    k = _kernels(backend)
    t0 = time.perf_counter_ns()
    levels, nlev, first, trans = p.tables()
    if trace is None:
        idx, cost, nodes, radii = k.sphere(p.L_factor, p.target, levels, nlev, p.m, first, trans)
    else:
        idx, cost, nodes, radii = k.sphere(p.L_factor, p.target, levels, nlev, p.m,
                                           first, trans, trace=trace)
    elapsed = time.perf_counter_ns() - t0
    u = p.values(idx)
    final = ils_cost(p.L_factor, u, p.target)
    if final != cost:
        raise RuntimeError(f"search cost {cost!r} disagrees with evaluator {final!r}")
    return SolveResult(u_opt=u, cost=final, nodes_explored=int(nodes), wall_time_ns=elapsed,
                       method="SDA", u_idx=np.asarray(idx), radii=list(radii))


def enumerate_ils(p: IlsProblem, backend: Optional[str] = None,
                  max_candidates: int = DEFAULT_MAX_CANDIDATES) -> SolveResult:
    """Exhaustive minimizer; ``nodes_explored`` is the number of feasible sequences."""
    count = p.candidate_count()
    if count > max_candidates:
        raise ValueError(f"enumeration needs {count} candidates (cap {max_candidates})")
    k = _kernels(backend)
    t0 = time.perf_counter_ns()
    levels, nlev, first, trans = p.tables()
    idx, cost, feasible = k.enumerate_all(p.L_factor, p.target, levels, nlev, p.m, first, trans)
    elapsed = time.perf_counter_ns() - t0
    u = p.values(idx)
    final = ils_cost(p.L_factor, u, p.target)
    if final != cost:
        raise RuntimeError(f"scan cost {cost!r} disagrees with evaluator {final!r}")
    return SolveResult(u_opt=u, cost=final, nodes_explored=int(feasible), wall_time_ns=elapsed,
                       method="ENUM", u_idx=np.asarray(idx))


SOLVERS = {"SDA": sphere_decode, "ENUM": enumerate_ils}


def solve(p: IlsProblem, method: str, backend: Optional[str] = None) -> SolveResult:
    try:
        fn = SOLVERS[method.upper()]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(SOLVERS)}") from None
    return fn(p, backend=backend)


def dump_trace(trace: list, path) -> None:
    """Write a solve trace as JSON lines."""
    with open(path, "w") as fh:
        for entry in trace:
            fh.write(json.dumps(entry) + "\n")
