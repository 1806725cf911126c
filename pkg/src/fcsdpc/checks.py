"""Property suite behind ``fcsdpc verify`` and the acceptance tests.

Every check draws its randomness from one seed, compares an implementation
against an independent oracle and returns a :class:`CheckResult`. Counts and
tolerances default to the acceptance thresholds; ``quick=True`` in
:func:`run_suite` shrinks the counts (never the tolerances) for smoke runs.
"""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .condense import (WeightConfig, condense_dpc, condense_mpc, diff_operators,
                       dpc_objective, lower_factor)
from .config import ExperimentConfig
from .data import (DataMatrix, NoiseSpec, add_output_noise, build_hankel, check_rank,
                   collect_excitation, collect_until_exciting, min_columns)
from .decoder import IlsProblem, enumerate_ils, sphere_decode
from .experiment import plant_of, control_set_of, run_horizon, scenario_for
from .loop import DpcController, ReferenceSignal, run_closed_loop
from .plant import ControlSet, is_feasible, multistep, random_plant, step
from .predictor import (ImplicitPredictor, RegularizerKind, dpc_inner_oracle, fit_spc,
                        h_star, h_star_oracle, implicit_predictor, reg_weights)

log = logging.getLogger(__name__)

KINDS = (RegularizerKind.PROJECTION, RegularizerKind.TWO_NORM)
TERNARY = (-1.0, 0.0, 1.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<26} {self.detail} ({self.seconds:.1f}s)"


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2 ** 31))


def noisy_dataset(rng: np.random.Generator, n: int, m: int, p: int, N_p: int, N_f: int,
                  snr_db: float = 30.0) -> DataMatrix:
    """Hankel data from a random stable plant with output noise (full row rank)."""
    while True:
        plant = random_plant(rng, n, m, p, rho=0.8)
        cs = ControlSet.shared(TERNARY, m)
        steps = 3 * min_columns(m, p, N_p, N_f) + N_p + N_f
        clean = collect_excitation(plant, cs, steps, _seed(rng))
        noisy = add_output_noise(clean, NoiseSpec(snr_db, _seed(rng)))
        D = build_hankel(noisy, N_p, N_f)
        if check_rank(D, n).full_row_rank:
            return D


def _random_dims(rng, m=None, N_f=None):
    n = int(rng.integers(2, 5))
    m = int(rng.integers(1, 3)) if m is None else m
    p = int(rng.integers(1, 3))
    N_p = int(rng.integers(2, 4))
    N_f = int(rng.integers(1, 4)) if N_f is None else N_f
    return n, m, p, N_p, N_f


def _loguniform(rng, lo, hi) -> float:
    return float(10 ** rng.uniform(np.log10(lo), np.log10(hi)))


def _random_ils(rng: np.random.Generator) -> IlsProblem:
    m = int(rng.integers(1, 4))
    N_f = int(rng.integers(1, 5))
    N = m * N_f
    G = rng.standard_normal((N, N))
    H = G @ G.T + 0.1 * np.eye(N)
    L = lower_factor(H)
    u_unc = rng.uniform(-1.5, 1.5, N)
    bound = 1.0 if rng.random() < 0.5 else None
    cs = ControlSet.shared(TERNARY, m, bound)
    u_prev = rng.choice(TERNARY, m)
    return IlsProblem(L, L @ u_unc, cs, u_prev)


def check_oracle_optimality(seed: int, count: int = 500, budget_s: float = 60.0) -> CheckResult:
    """Sphere decoding and enumeration agree exactly on random instances."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(count):
        p = _random_ils(rng)
        a, b = sphere_decode(p), enumerate_ils(p)
        if not (np.array_equal(a.u_opt, b.u_opt) and a.cost == b.cost):
            bad += 1
    dt = time.perf_counter() - t0
    return CheckResult("oracle_optimality", bad == 0 and dt < budget_s,
                       f"{count - bad}/{count} identical, {dt:.1f}s < {budget_s:.0f}s", dt)


def check_implicit_predictor(seed: int, count: int = 50,
                             corrupt: Optional[Callable[[ImplicitPredictor],
                                                        ImplicitPredictor]] = None
                             ) -> CheckResult:
    """Closed-form implicit predictor equals the directly minimized inner problem."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        n, m, p, N_p, N_f = _random_dims(rng)
        D = noisy_dataset(rng, n, m, p, N_p, N_f)
        spc, w = fit_spc(D), reg_weights(D)
        Q_bar = np.kron(np.eye(N_f), np.diag(rng.uniform(0.5, 2.0, p)))
        xi = rng.standard_normal((m + p) * N_p)
        u_f = rng.standard_normal(m * N_f)
        y_ref = rng.standard_normal(p * N_f)
        for kind in KINDS:
            lam = _loguniform(rng, 0.1, 1e3)
            pred = implicit_predictor(spc, w, Q_bar, lam, y_ref)
            if corrupt is not None:
                pred = corrupt(pred)
            y_hat = pred.predict(xi, u_f)
            y_star, _ = dpc_inner_oracle(D, kind, lam, Q_bar, xi, u_f, y_ref)
            err = np.max(np.abs(y_star - y_hat)) / (1.0 + np.max(np.abs(y_hat)))
            worst = max(worst, float(err))
    return CheckResult("implicit_predictor", worst <= 1e-6,
                       f"worst scaled error {worst:.2e} <= 1e-06 over {count} datasets x 2 kinds")


def check_h_star(seed: int, count: int = 100) -> CheckResult:
    """Closed-form optimal regularizer equals the generator-space oracle."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    per_dataset = 10
    for kind in KINDS:
        done = 0
        while done < count:
            n, m, p, N_p, N_f = _random_dims(rng)
            D = noisy_dataset(rng, n, m, p, N_p, N_f)
            spc, w = fit_spc(D), reg_weights(D)
            lam = _loguniform(rng, 0.1, 1e3)
            for _ in range(min(per_dataset, count - done)):
                xi = rng.standard_normal((m + p) * N_p)
                u_f = rng.standard_normal(m * N_f)
                y_f = rng.standard_normal(p * N_f)
                h = h_star(w, kind, lam, xi, u_f, y_f, spc)
                ho = h_star_oracle(D, kind, lam, xi, u_f, y_f)
                worst = max(worst, abs(h - ho) / abs(ho))
                done += 1
    return CheckResult("h_star_closed_form", worst <= 1e-6,
                       f"worst relative error {worst:.2e} <= 1e-06 over {count} triples x 2 kinds")


def original_dpc_cost(D: DataMatrix, wc: WeightConfig, xi, u_f, u_prev, y_ref) -> float:
    """Regularized DPC cost at ``u_f`` with ``(y_f, a)`` minimized in generator space."""
    ops = diff_operators(D.m, D.N_f)
    y_f, _ = dpc_inner_oracle(D, wc.kind, wc.lambda_a, wc.Q_bar, xi, u_f, y_ref)
    ey = y_f - y_ref
    du = ops.I_op @ u_f - ops.L_op @ u_prev
    return (float(ey @ wc.Q_bar @ ey) + float(du @ wc.R_bar @ du)
            + h_star_oracle(D, wc.kind, wc.lambda_a, xi, u_f, y_f))


def check_reduced_equivalence(seed: int, count: int = 50) -> CheckResult:
    """Argmin of the original DPC cost over the feasible set equals the ILS argmin."""
    rng = np.random.default_rng(seed)
    m, N_f = 2, 2
    agree = 0
    for i in range(count):
        n, _, p, N_p, _ = _random_dims(rng, m=m, N_f=N_f)
        D = noisy_dataset(rng, n, m, p, N_p, N_f)
        spc, w = fit_spc(D), reg_weights(D)
        wc = WeightConfig(Q=np.diag(rng.uniform(0.5, 2.0, p)), R=np.diag(rng.uniform(1e-3, 1.0, m)),
                          lambda_a=_loguniform(rng, 1.0, 1e3), kind=KINDS[i % 2], N_f=N_f)
        cs = ControlSet.shared(TERNARY, m, 1.0)
        xi = rng.standard_normal((m + p) * N_p)
        u_prev = rng.choice(TERNARY, m)
        y_ref = rng.standard_normal(p * N_f)
        best_u, best_J = None, np.inf
        for u in itertools.product(TERNARY, repeat=m * N_f):  # lexicographic in level index
            u = np.array(u)
            if not is_feasible(u, cs, u_prev):
                continue
            J = original_dpc_cost(D, wc, xi, u, u_prev, y_ref)
            if J < best_J:
                best_u, best_J = u, J
        ctrl = DpcController(spc, w, wc, cs)
        res = sphere_decode(ctrl.problem(xi, u_prev, y_ref))
        agree += bool(np.array_equal(res.u_opt, best_u))
    return CheckResult("reduced_ils_equivalence", agree == count,
                       f"{agree}/{count} argmins identical (m=2, N_f=2)")


# (n, p, N_p) with p N_p = n, so [Wp; Uf] has full row rank on exact data
_EXACT_DIMS = ((2, 1, 2), (3, 1, 3), (4, 2, 2), (2, 2, 1), (4, 1, 4))


def check_exact_data(seed: int, count: int = 100, per_dataset: int = 10) -> CheckResult:
    """On noise-free data the SPC predictor reproduces the model-based prediction."""
    rng = np.random.default_rng(seed)
    worst, done, datasets = 0.0, 0, 0
    while done < count:
        n, p, N_p = _EXACT_DIMS[int(rng.integers(len(_EXACT_DIMS)))]
        m = int(rng.integers(1, 4))
        N_f = int(rng.integers(1, 4))
        plant = random_plant(rng, n, m, p, rho=0.8)
        cs = ControlSet.shared(TERNARY, m)
        steps = 2 * min_columns(m, p, N_p, N_f) + N_p + N_f
        traj = collect_until_exciting(plant, cs, N_p, N_f, steps, _seed(rng))
        D = build_hankel(traj, N_p, N_f)
        if not check_rank(D, n).satisfied:
            return CheckResult("exact_data_consistency", False,
                               f"rank condition failed for n={n}, m={m}, N_p={N_p}, N_f={N_f}")
        datasets += 1
        spc = fit_spc(D)
        O, T = multistep(plant, N_f)
        for _ in range(min(per_dataset, count - done)):
            x = rng.standard_normal(n)
            u_p = rng.standard_normal((N_p, m))
            y_p = []
            for u in u_p:
                x, y = step(plant, x, u)
                y_p.append(y)
            xi = np.concatenate([u_p.ravel(), np.concatenate(y_p)])
            u_f = rng.standard_normal(m * N_f)
            err = float(np.max(np.abs(spc.predict(xi, u_f) - (O @ x + T @ u_f))))
            worst = max(worst, err)
            done += 1
    return CheckResult("exact_data_consistency", worst <= 1e-8,
                       f"worst error {worst:.2e} <= 1e-08 over {count} pairs, {datasets} datasets")


def _spread(quad, cost) -> float:
    d = np.asarray(quad) - np.asarray(cost)
    return float((d.max() - d.min()) / max(np.max(np.abs(cost)), np.finfo(float).tiny))


def check_derivation_rule(seed: int, count: int = 20, samples: int = 20) -> CheckResult:
    """Quadratic form minus directly evaluated cost is constant in ``u_f``."""
    rng = np.random.default_rng(seed)
    worst_mpc = worst_dpc = 0.0
    for i in range(count):
        n, m, p, _, N_f = _random_dims(rng)
        N_f = int(rng.integers(1, 5))
        plant = random_plant(rng, n, m, p)
        O, T = multistep(plant, N_f)
        Qh = rng.standard_normal((p, p))
        wc = WeightConfig(Q=Qh @ Qh.T, R=np.diag(rng.uniform(1e-3, 1.0, m)),
                          lambda_a=1.0, kind="projection", N_f=N_f)
        ops = diff_operators(m, N_f)
        x0, u_prev = rng.standard_normal(n), rng.standard_normal(m)
        y_ref = rng.standard_normal(p * N_f)
        cp = condense_mpc(O, T, wc, x0, u_prev, y_ref)
        quad, cost = [], []
        for _ in range(samples):
            u = rng.uniform(-1.0, 1.0, m * N_f)
            e = O @ x0 + T @ u - y_ref
            du = ops.I_op @ u - ops.L_op @ u_prev
            quad.append(cp.quadratic(u))
            cost.append(float(e @ wc.Q_bar @ e + du @ wc.R_bar @ du))
        worst_mpc = max(worst_mpc, _spread(quad, cost))
    for i in range(count):
        n, m, p, N_p, N_f = _random_dims(rng)
        D = noisy_dataset(rng, n, m, p, N_p, N_f)
        spc, w = fit_spc(D), reg_weights(D)
        wc = WeightConfig(Q=np.diag(rng.uniform(0.5, 2.0, p)), R=np.diag(rng.uniform(1e-3, 1.0, m)),
                          lambda_a=_loguniform(rng, 0.1, 1e3), kind=KINDS[i % 2], N_f=N_f)
        pred = implicit_predictor(spc, w, wc.Q_bar, wc.lambda_a)
        xi, u_prev = rng.standard_normal((m + p) * N_p), rng.standard_normal(m)
        y_ref = rng.standard_normal(p * N_f)
        cp = condense_dpc(pred, spc, w, wc, xi, u_prev, y_ref)
        quad, cost = [], []
        for _ in range(samples):
            u = rng.uniform(-1.0, 1.0, m * N_f)
            quad.append(cp.quadratic(u))
            cost.append(dpc_objective(pred, spc, w, wc, xi, u, u_prev, y_ref))
        worst_dpc = max(worst_dpc, _spread(quad, cost))
    ok = worst_mpc <= 1e-7 and worst_dpc <= 1e-7
    return CheckResult("derivation_rule", ok,
                       f"relative spread mpc {worst_mpc:.1e}, dpc {worst_dpc:.1e} <= 1e-07")


def check_factorization(seed: int, count: int = 100, max_size: int = 12) -> CheckResult:
    """``lower_factor`` gives a lower-triangular ``L`` with ``L'L = H``."""
    rng = np.random.default_rng(seed)
    worst, tri = 0.0, True
    for _ in range(count):
        N = int(rng.integers(1, max_size + 1))
        G = rng.standard_normal((N, N))
        H = _loguniform(rng, 1e-3, 1e3) * (G @ G.T + 1e-2 * np.eye(N))
        L = lower_factor(H)
        tri &= bool(np.all(np.triu(L, 1) == 0.0))
        worst = max(worst, float(np.max(np.abs(L.T @ L - H)) / np.max(np.abs(H))))
    return CheckResult("factorization", tri and worst <= 1e-10,
                       f"worst ||L'L-H||max/||H||max {worst:.1e} <= 1e-10, triangular={tri}")


def check_closed_loop(cfg: ExperimentConfig, steps: int = 800, N_f: int = 2,
                      budget_s: float = 300.0) -> CheckResult:
    """SDA and ENUM closed loops coincide; SDA is faster and visits fewer nodes."""
    cfg = replace(cfg, methods=("SDA", "ENUM"), cl_steps=steps)
    t0 = time.perf_counter()
    logs, records = run_horizon(cfg, N_f)
    dt = time.perf_counter() - t0
    same = all(np.array_equal(a.u_applied, b.u_applied) and np.array_equal(a.y_measured, b.y_measured)
               for a, b in zip(logs["SDA"], logs["ENUM"]))
    same &= len(logs["SDA"]) == len(logs["ENUM"]) == steps
    rec = {r["method"]: r for r in records}
    faster = rec["SDA"]["median"] < rec["ENUM"]["median"]
    fewer = rec["SDA"]["mean_nodes"] < rec["ENUM"]["mean_nodes"]
    detail = (f"identical={same}, median ns SDA {rec['SDA']['median']:.0f} < ENUM "
              f"{rec['ENUM']['median']:.0f}, mean nodes SDA {rec['SDA']['mean_nodes']:.1f} < "
              f"ENUM leaves {rec['ENUM']['mean_nodes']:.1f}, {dt:.0f}s < {budget_s:.0f}s")
    return CheckResult("closed_loop_equivalence", same and faster and fewer and dt < budget_s,
                       detail, dt)


def check_noise_calibration(cfg: ExperimentConfig, seed: int, samples: int = 100_000,
                            snr_db: float = 40.0) -> CheckResult:
    """Measured per-channel SNR of the added output noise is within 0.5 dB of target."""
    rng = np.random.default_rng(seed)
    clean = collect_excitation(plant_of(cfg), control_set_of(cfg), samples, _seed(rng))
    noisy = add_output_noise(clean, NoiseSpec(snr_db, _seed(rng)))
    noise = noisy.y - clean.y
    snr = 10 * np.log10(np.mean(clean.y ** 2, axis=0) / np.mean(noise ** 2, axis=0))
    dev = float(np.max(np.abs(snr - snr_db)))
    return CheckResult("noise_calibration", dev <= 0.5 and samples >= 100_000,
                       f"per-channel SNR {np.round(snr, 3).tolist()} dB, max deviation "
                       f"{dev:.3f} <= 0.5 over {samples} samples")


def check_hessian_cache(cfg: ExperimentConfig, steps: int = 800, N_f: int = 2) -> CheckResult:
    """Hessian and factor checksums stay constant under a time-varying reference."""
    cfg = replace(cfg, methods=("SDA",), cl_steps=steps)
    sc, _ = scenario_for(cfg, N_f, audit=True)
    windows = {sc.reference.window(k, N_f).tobytes() for k in range(min(steps, 50))}
    if len(windows) < 2:
        sc.reference = ReferenceSignal({"kind": "sine", "amplitude": 1.0, "period": 200}, cfg.p)
    ctrl = sc.controller
    before = ctrl.hessian_checksum()
    logs = run_closed_loop(sc)["SDA"]
    sums = {e.hessian_checksum for e in logs} | {ctrl.hessian_checksum(), before}
    ok = len(sums) == 1 and ctrl.factorizations == 1 and len(logs) == steps
    return CheckResult("hessian_cache", ok,
                       f"{len(sums)} distinct checksum(s) over {len(logs)} steps, "
                       f"factorizations={ctrl.factorizations}")


def run_suite(cfg: ExperimentConfig, seed: Optional[int] = None, quick: bool = False,
              corrupt: Optional[Callable] = None, only: Optional[set] = None) -> list:
    """Run the property checks in order; ``only`` selects checks by name."""
    base = cfg.data_seed if seed is None else seed
    s = lambda i: int(np.random.SeedSequence([base, i]).generate_state(1)[0])  # noqa: E731
    q = (lambda full, small: small) if quick else (lambda full, small: full)
    steps = q(800, 60)
    plan = [
        ("oracle_optimality", lambda: check_oracle_optimality(s(1), q(500, 40))),
        ("implicit_predictor", lambda: check_implicit_predictor(s(2), q(50, 5), corrupt)),
        ("h_star_closed_form", lambda: check_h_star(s(3), q(100, 10))),
        ("reduced_ils_equivalence", lambda: check_reduced_equivalence(s(4), q(50, 4))),
        ("exact_data_consistency", lambda: check_exact_data(s(5), q(100, 10))),
        ("derivation_rule", lambda: check_derivation_rule(s(6), q(20, 3))),
        ("factorization", lambda: check_factorization(s(7), q(100, 10))),
        ("closed_loop_equivalence", lambda: check_closed_loop(cfg, steps)),
        ("noise_calibration", lambda: check_noise_calibration(cfg, s(9))),
        ("hessian_cache", lambda: check_hessian_cache(cfg, steps)),
    ]
    results = []
    for name, fn in plan:
        if only is not None and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crashing property is a failing property
            log.exception("check %s raised", name)
            res = CheckResult(name, False, f"raised {type(exc).__name__}: {exc}")
        if not res.seconds:
            res.seconds = time.perf_counter() - t0
        results.append(res)
    return results


CHECK_NAMES = ("oracle_optimality", "implicit_predictor", "h_star_closed_form",
               "reduced_ils_equivalence", "exact_data_consistency", "derivation_rule",
               "factorization", "closed_loop_equivalence", "noise_calibration", "hessian_cache")
