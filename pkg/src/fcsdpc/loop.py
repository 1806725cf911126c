"""Receding-horizon closed loop around the condensed FCS-DPC problem."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .condense import (CondensedProblem, WeightConfig, condense_dpc, dpc_gradient_maps,
                       dpc_hessian, lower_factor)
from .data import _sample_inputs, measurement_noise
from .decoder import IlsProblem, SolveResult, solve
from .plant import ControlSet, PlantModel, step
from .predictor import ImplicitPredictor, RegWeights, SpcPredictor, implicit_predictor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class XiBuffer:
    """Last ``N_p`` applied inputs and measured outputs, oldest first."""

    u_hist: tuple
    y_hist: tuple

    @property
    def N_p(self) -> int:
        return len(self.u_hist)

    @property
    def u_prev(self) -> np.ndarray:
        return self.u_hist[-1]

    def xi(self) -> np.ndarray:
        """``(u_p, y_p)`` stacked in the row order of ``Wp``."""
        return np.concatenate([np.concatenate(self.u_hist), np.concatenate(self.y_hist)])

    def shifted(self, u, y) -> "XiBuffer":
        u = np.array(u, dtype=float)
        y = np.array(y, dtype=float)
        return XiBuffer(self.u_hist[1:] + (u,), self.y_hist[1:] + (y,))


class ReferenceSignal:
    """Output reference indexed by absolute time.

    Kinds: ``constant`` (``value``), ``sine`` (``amplitude``, ``period``,
    optional ``phase`` and ``offset``) and ``steps`` (``values`` cycled every
    ``every`` samples).
    """

    def __init__(self, spec: dict, p: int):
        self.spec = dict(spec)
        self.p = p
        kind = self.spec.get("kind", "constant")
        if kind not in ("constant", "sine", "steps"):
            raise ValueError(f"unknown reference kind {kind!r}")
        self.kind = kind

    def _vec(self, key, default=0.0) -> np.ndarray:
        v = np.asarray(self.spec.get(key, default), dtype=float)
        return np.broadcast_to(v, (self.p,)).copy()

    def __call__(self, k: int) -> np.ndarray:
        if self.kind == "constant":
            return self._vec("value")
        if self.kind == "sine":
            w = 2 * np.pi / float(self.spec["period"])
            return self._vec("offset") + self._vec("amplitude") * np.sin(w * k + self._vec("phase"))
        values = np.asarray(self.spec["values"], dtype=float).reshape(-1, self.p)
        return values[(k // int(self.spec["every"])) % len(values)].copy()

    def window(self, k: int, N_f: int) -> np.ndarray:
        """Stacked ``y_ref(k+1), ..., y_ref(k+N_f)``."""
        return np.concatenate([self(k + i) for i in range(1, N_f + 1)])


@dataclass
class StepLog:
    k: int
    xi: np.ndarray
    u_applied: np.ndarray
    y_measured: np.ndarray
    objective: float
    result: SolveResult
    step_time_ns: int
    x_true: Optional[np.ndarray] = None
    hessian_checksum: Optional[str] = None


@dataclass
class TimingStats:
    n: int
    min: float
    q25: float
    median: float
    q75: float
    max: float
    mean: float
    outliers: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def checksum(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class DpcController:
    """Fitted FCS-DPC controller with the Hessian factored once.

    Only the gradient is rebuilt per step, from ``(xi, u_prev, y_ref)``; the
    reference enters through ``g_dpc`` and never touches ``H`` or ``L``.
    """

    def __init__(self, spc: SpcPredictor, w: RegWeights, wc: WeightConfig, cs: ControlSet):
        self.spc, self.w, self.wc, self.cs = spc, w, wc, cs
        self.pred: ImplicitPredictor = implicit_predictor(spc, w, wc.Q_bar, wc.lambda_a)
        self.H = dpc_hessian(self.pred, w, wc)
        self.L = lower_factor(self.H)
        self.factorizations = 1
        self.F_xi, self.F_uprev, self.F_ref = dpc_gradient_maps(self.pred, w, wc)
        for a in (self.H, self.L, self.F_xi, self.F_uprev, self.F_ref):
            a.setflags(write=False)
        self._LT = np.ascontiguousarray(self.L.T)
        # validates the factor once; per-step problems reuse it unchecked
        IlsProblem(self.L, np.zeros(self.L.shape[0]), cs, cs.rest())

    @property
    def N_f(self) -> int:
        return self.wc.N_f

    @property
    def N_p(self) -> int:
        p = self.spc.O_spc.shape[0] // self.N_f
        return self.spc.O_spc.shape[1] // (self.cs.m + p)

    def hessian_checksum(self) -> str:
        return checksum(self.H, self.L)

    def problem(self, xi, u_prev, y_ref) -> IlsProblem:
        f = self.F_xi @ xi + self.F_uprev @ u_prev + self.F_ref @ y_ref
        # L u_unc = -L^{-T} f
        target = -solve_triangular(self._LT, f, lower=False, check_finite=False)
        return IlsProblem.trusted(self.L, target, self.cs, np.asarray(u_prev, dtype=float))

    def condensed(self, xi, u_prev, y_ref) -> CondensedProblem:
        """Full re-condensation from scratch (used to audit the cache)."""
        return condense_dpc(self.pred, self.spc, self.w, self.wc, xi, u_prev, y_ref)


def warmup(plant: PlantModel, cs: ControlSet, N_p: int, seed: int, x0=None,
           noise_std=None, noise_rng=None):
    """Drive the plant with ``N_p`` random admissible inputs.

    Returns:
        ``(buffer, x)``: the filled past window and the plant state after it.
    """
    rng = np.random.default_rng(seed)
    u_seq = _sample_inputs(cs, N_p, rng, cs.rest())
    x = np.zeros(plant.n) if x0 is None else np.asarray(x0, dtype=float)
    us, ys = [], []
    for u in u_seq:
        x, y = step(plant, x, u)
        if noise_std is not None:
            y = y + measurement_noise(noise_rng, noise_std)
        us.append(u.copy())
        ys.append(y)
    return XiBuffer(tuple(us), tuple(ys)), x


def controller_step(buffer: XiBuffer, ctrl: DpcController, ref: ReferenceSignal, k: int,
                    method: str = "SDA", backend=None):
    """Solve at absolute time ``k`` and return the first input block with its log.

    The recorded time is the gradient assembly plus the solver's own timed
    section (tables, initial guess, search). Reading the buffer, sampling the
    reference and the post-solve cost re-check stay outside.
    """
    xi = buffer.xi()
    u_prev = buffer.u_prev
    y_ref = ref.window(k, ctrl.N_f)
    t0 = time.perf_counter_ns()
    prob = ctrl.problem(xi, u_prev, y_ref)
    assembly = time.perf_counter_ns() - t0
    res = solve(prob, method, backend=backend)
    elapsed = assembly + res.wall_time_ns
    m = ctrl.cs.m
    u_apply = res.u_opt[:m].copy()
    entry = StepLog(k=k, xi=xi, u_applied=u_apply, y_measured=np.empty(0),
                    objective=res.cost, result=res, step_time_ns=elapsed)
    return u_apply, entry


@dataclass
class Scenario:
    plant: PlantModel
    controller: DpcController
    reference: ReferenceSignal
    steps: int
    methods: Sequence[str] = ("SDA", "ENUM")
    seed: int = 0
    noise_std: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None
    backend: Optional[str] = None
    audit: bool = False


def run_closed_loop(sc: Scenario) -> dict:
    """Run each method on its own copy of the loop.

    Returns:
        Mapping method -> list of :class:`StepLog`.
    """
    cs = sc.controller.cs
    N_p = sc.controller.N_p
    out = {}
    for method in sc.methods:
        noise_rng = np.random.default_rng(sc.seed + 1) if sc.noise_std is not None else None
        buf, x = warmup(sc.plant, cs, N_p, sc.seed, sc.x0, sc.noise_std, noise_rng)
        logs = []
        try:
            for k in range(sc.steps):
                u, entry = controller_step(buf, sc.controller, sc.reference, k, method, sc.backend)
                entry.x_true = x.copy()
                x, y = step(sc.plant, x, u)
                if sc.noise_std is not None:
                    y = y + measurement_noise(noise_rng, sc.noise_std)
                entry.y_measured = y
                if sc.audit:
                    fresh = sc.controller.condensed(entry.xi, buf.u_prev,
                                                    sc.reference.window(k, sc.controller.N_f))
                    entry.hessian_checksum = checksum(fresh.H, fresh.L_factor)
                logs.append(entry)
                buf = buf.shifted(u, y)
        except Exception:
            log.error("closed loop (%s) aborted at step %d", method, len(logs))
            out[method] = logs
            raise
        out[method] = logs
    return out


def _stats(samples) -> TimingStats:
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ValueError("need at least one sample")
    q25, med, q75 = np.percentile(s, [25, 50, 75])
    fence = q75 + 1.5 * (q75 - q25)
    return TimingStats(n=int(s.size), min=float(s.min()), q25=float(q25), median=float(med),
                       q75=float(q75), max=float(s.max()), mean=float(s.mean()),
                       outliers=[float(v) for v in s if v > fence])


def timing_summary(logs) -> dict:
    """Boxplot statistics of per-step solve time (ns) per method.

    ``logs`` is either an iterable of :class:`StepLog` (timed by
    ``step_time_ns``) or a mapping ``method -> samples``. Methods without
    samples are omitted. Outliers are the samples above ``q75 + 1.5 IQR``.
    """
    if isinstance(logs, dict):
        pooled = {k: list(v) for k, v in logs.items()}
    else:
        pooled = {}
        for e in logs:
            pooled.setdefault(e.result.method, []).append(e.step_time_ns)
    return {k: _stats(v) for k, v in pooled.items() if len(v)}


def steps_header(m: int, p: int) -> list:
    return (["k", "method"] + [f"u_{i + 1}" for i in range(m)] + [f"y_{i + 1}" for i in range(p)]
            + ["cost", "nodes", "solve_time_ns"])


def write_steps_csv(logs, path, m: int, p: int) -> None:
    """One row per step; ``solve_time_ns`` is the timed gradient assembly plus solve."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(steps_header(m, p))
        for e in logs:
            w.writerow([e.k, e.result.method] + [repr(float(v)) for v in e.u_applied]
                       + [repr(float(v)) for v in e.y_measured]
                       + [repr(e.result.cost), e.result.nodes_explored, e.step_time_ns])


def write_timing_json(records, path) -> None:
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1)
