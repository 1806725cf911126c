"""Condense the FCS-MPC and FCS-DPC costs into ``1/2 u'Hu + f'u`` and factor ``H``.

The linear terms are obtained by expanding the squared norms of the costs
directly; ``tests/test_condense.py`` pins them to the costs by checking that
quadratic form minus cost is constant in ``u_f``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .predictor import (ImplicitPredictor, RegularizerKind, RegWeights, SpcPredictor,
                        h_star)


@dataclass(frozen=True)
class DiffOperators:
    """``Delta u_f = I_op u_f - L_op u_prev``."""

    I_op: np.ndarray
    L_op: np.ndarray


def diff_operators(m: int, N_f: int) -> DiffOperators:
    if m < 1 or N_f < 1:
        raise ValueError("m and N_f must be >= 1")
    I_op = np.eye(m * N_f) - np.eye(m * N_f, k=-m)
    L_op = np.zeros((m * N_f, m))
    L_op[:m] = np.eye(m)
    return DiffOperators(I_op, L_op)


@dataclass(frozen=True)
class WeightConfig:
    Q: np.ndarray
    R: np.ndarray
    lambda_a: float
    kind: RegularizerKind
    N_f: int

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if not np.allclose(Q, Q.T, atol=1e-12) or not np.allclose(R, R.T, atol=1e-12):
            raise ValueError("Q and R must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ValueError("Q must be positive semidefinite")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc
        if not self.lambda_a > 0:
            raise ValueError("lambda_a must be positive")
        if self.N_f < 1:
            raise ValueError("N_f must be >= 1")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "kind", RegularizerKind.parse(self.kind))

    @property
    def Q_bar(self) -> np.ndarray:
        return np.kron(np.eye(self.N_f), self.Q)

    @property
    def R_bar(self) -> np.ndarray:
        return np.kron(np.eye(self.N_f), self.R)


@dataclass(frozen=True)
class CondensedProblem:
    H: np.ndarray
    f: np.ndarray
    L_factor: np.ndarray
    u_unc: np.ndarray
    u_unc_t: np.ndarray

    @classmethod
    def from_hessian(cls, H: np.ndarray, f: np.ndarray) -> "CondensedProblem":
        L = lower_factor(H)
        u_unc, u_unc_t = transform(L, f)
        return cls(H=H, f=f, L_factor=L, u_unc=u_unc, u_unc_t=u_unc_t)

    def quadratic(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return 0.5 * float(u @ self.H @ u) + float(self.f @ u)


def lower_factor(H) -> np.ndarray:
    """Lower-triangular ``L`` with positive diagonal and ``L' L = H``.

    With ``J`` the reversal permutation, ``J H J = G G'`` (standard Cholesky)
    gives ``L = J G' J``.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    if not np.allclose(H, H.T, rtol=0, atol=1e-12 * max(1.0, np.abs(H).max())):
        raise ValueError("H must be symmetric")
    try:
        G = np.linalg.cholesky(H[::-1, ::-1])
    except np.linalg.LinAlgError as exc:
        raise ValueError("H is not positive definite") from exc
    return np.ascontiguousarray(G.T[::-1, ::-1])


def transform(L_factor: np.ndarray, f: np.ndarray):
    """Unconstrained optimum ``-H^{-1} f`` and its image ``L u_unc = -L^{-T} f``."""
    f = np.asarray(f, dtype=float)
    u_unc_t = -solve_triangular(L_factor.T, f, lower=False)
    u_unc = solve_triangular(L_factor, u_unc_t, lower=True)
    return u_unc, u_unc_t


def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2


def condense_mpc(O, T, wc: WeightConfig, x0, u_prev, y_ref) -> CondensedProblem:
    """``||O x0 + T u - y_ref||_Q^2 + ||I u - L u_prev||_R^2`` in standard form."""
    O, T = np.asarray(O, dtype=float), np.asarray(T, dtype=float)
    m = T.shape[1] // wc.N_f
    ops = diff_operators(m, wc.N_f)
    Qb, Rb = wc.Q_bar, wc.R_bar
    H = _sym(2 * (T.T @ Qb @ T + ops.I_op.T @ Rb @ ops.I_op))
    e = O @ np.asarray(x0, dtype=float) - np.asarray(y_ref, dtype=float)
    f = 2 * (T.T @ Qb @ e - ops.I_op.T @ Rb @ ops.L_op @ np.asarray(u_prev, dtype=float))
    return CondensedProblem.from_hessian(H, f)


def dpc_hessian(pred: ImplicitPredictor, w: RegWeights, wc: WeightConfig) -> np.ndarray:
    """Hessian of the DPC cost; it does not depend on ``xi``, ``u_prev`` or the reference."""
    m = pred.T_dpc.shape[1] // wc.N_f
    ops = diff_operators(m, wc.N_f)
    lam = wc.lambda_a
    H = 2 * (pred.T_dpc.T @ wc.Q_bar @ pred.T_dpc
             + ops.I_op.T @ wc.R_bar @ ops.I_op
             + lam * pred.dT.T @ w.Q_reg @ pred.dT)
    if wc.kind is RegularizerKind.TWO_NORM:
        H = H + 2 * lam * w.R_reg
    return _sym(H)


def dpc_gradient(pred: ImplicitPredictor, w: RegWeights, wc: WeightConfig,
                 xi, u_prev, y_ref) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float)
    m = pred.T_dpc.shape[1] // wc.N_f
    ops = diff_operators(m, wc.N_f)
    lam = wc.lambda_a
    g = pred.offset(y_ref)
    f = 2 * (pred.T_dpc.T @ wc.Q_bar @ (pred.O_dpc @ xi + g - y_ref)
             - ops.I_op.T @ wc.R_bar @ ops.L_op @ np.asarray(u_prev, dtype=float)
             + lam * pred.dT.T @ w.Q_reg @ (pred.dO @ xi + g))
    if wc.kind is RegularizerKind.TWO_NORM:
        f = f - 2 * lam * w.R_reg @ (w.Uf_Wp_pinv @ xi)
    return f


def dpc_gradient_maps(pred: ImplicitPredictor, w: RegWeights, wc: WeightConfig):
    """Matrices ``(F_xi, F_uprev, F_ref)`` with ``f = F_xi xi + F_uprev u_prev + F_ref y_ref``.

    Same expansion as :func:`dpc_gradient`, with the affine pieces collected so
    a closed loop only needs three matrix-vector products per step.
    """
    m = pred.T_dpc.shape[1] // wc.N_f
    ops = diff_operators(m, wc.N_f)
    lam = wc.lambda_a
    TQ = pred.T_dpc.T @ wc.Q_bar
    dTQ = lam * pred.dT.T @ w.Q_reg
    F_xi = 2 * (TQ @ pred.O_dpc + dTQ @ pred.dO)
    if wc.kind is RegularizerKind.TWO_NORM:
        F_xi = F_xi - 2 * lam * w.R_reg @ w.Uf_Wp_pinv
    F_uprev = -2 * ops.I_op.T @ wc.R_bar @ ops.L_op
    F_ref = 2 * (TQ @ (pred.ref_gain - np.eye(pred.ref_gain.shape[0])) + dTQ @ pred.ref_gain)
    return F_xi, F_uprev, F_ref


def condense_dpc(pred: ImplicitPredictor, spc: SpcPredictor, w: RegWeights, wc: WeightConfig,
                 xi, u_prev, y_ref) -> CondensedProblem:
    """Standard form of the DPC cost with ``y_f`` replaced by the implicit predictor.

    The offset ``g_dpc`` is recomputed from ``y_ref``, so ``pred`` may have
    been built for any reference.
    """
    H = dpc_hessian(pred, w, wc)
    f = dpc_gradient(pred, w, wc, xi, u_prev, y_ref)
    try:
        return CondensedProblem.from_hessian(H, f)
    except ValueError as exc:
        raise ValueError(f"{exc}; conditioning: {w.conditioning}") from exc


def dpc_objective(pred: ImplicitPredictor, spc: SpcPredictor, w: RegWeights, wc: WeightConfig,
                  xi, u_f, u_prev, y_ref) -> float:
    """Full DPC cost at ``u_f`` with ``y_f`` from the implicit predictor (constants included)."""
    u_f = np.asarray(u_f, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float)
    m = pred.T_dpc.shape[1] // wc.N_f
    ops = diff_operators(m, wc.N_f)
    y_f = pred.O_dpc @ xi + pred.T_dpc @ u_f + pred.offset(y_ref)
    du = ops.I_op @ u_f - ops.L_op @ np.asarray(u_prev, dtype=float)
    ey = y_f - y_ref
    return (float(ey @ wc.Q_bar @ ey) + float(du @ wc.R_bar @ du)
            + h_star(w, wc.kind, wc.lambda_a, xi, u_f, y_f, spc))
