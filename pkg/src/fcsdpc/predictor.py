"""SPC predictor, regularizer weights and the implicit DPC predictor.

The closed forms (``h_star``, ``implicit_predictor``) are checked against
oracles that work directly with the generator vector ``a``
(``h_star_oracle``, ``dpc_inner_oracle``); the oracles share no code with
the closed forms beyond numpy's SVD.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import DataMatrix, numerical_rank

log = logging.getLogger(__name__)

PINV_RCOND = 1e-10
COND_WARN = 1e12
GRAM_COND_MAX = 1e15


class RegularizerKind(enum.Enum):
    PROJECTION = "projection"  # lambda_a * ||(I - Pi) a||^2
    TWO_NORM = "two_norm"      # lambda_a * ||a||^2

    @classmethod
    def parse(cls, value) -> "RegularizerKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


class ConditioningError(ValueError):
    """A matrix the predictor must invert is numerically singular."""


@dataclass(frozen=True)
class SpcPredictor:
    O_spc: np.ndarray
    T_spc: np.ndarray

    def predict(self, xi, u_f) -> np.ndarray:
        return self.O_spc @ np.asarray(xi, dtype=float) + self.T_spc @ np.asarray(u_f, dtype=float)


@dataclass(frozen=True)
class RegWeights:
    Q_reg: np.ndarray
    R_reg: np.ndarray
    Wp_gram_inv: np.ndarray
    Uf_Wp_pinv: np.ndarray
    Pi: np.ndarray
    conditioning: dict


@dataclass(frozen=True)
class ImplicitPredictor:
    """Affine predictor ``y_f = O_dpc xi + T_dpc u_f + g_dpc``.

    ``ref_gain`` maps a reference window to ``g_dpc`` so the reference can
    change without refitting.
    """

    O_dpc: np.ndarray
    T_dpc: np.ndarray
    g_dpc: np.ndarray
    dO: np.ndarray
    dT: np.ndarray
    ref_gain: np.ndarray

    def predict(self, xi, u_f) -> np.ndarray:
        return (self.O_dpc @ np.asarray(xi, dtype=float)
                + self.T_dpc @ np.asarray(u_f, dtype=float) + self.g_dpc)

    def offset(self, y_ref) -> np.ndarray:
        return self.ref_gain @ np.asarray(y_ref, dtype=float)


def _spd_inverse(M: np.ndarray, what: str) -> np.ndarray:
    try:
        c = cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"{what} is not positive definite") from exc
    inv = cho_solve(c, np.eye(M.shape[0]))
    return (inv + inv.T) / 2


def _cond(M: np.ndarray, what: str) -> float:
    c = float(np.linalg.cond(M))
    if c > COND_WARN:
        log.warning("condition number of %s is %.3e", what, c)
    else:
        log.debug("condition number of %s is %.3e", what, c)
    return c


def projection_matrix(D: DataMatrix, max_cond: float = GRAM_COND_MAX) -> np.ndarray:
    """Orthogonal projector onto the row space of ``[Wp; Uf]``."""
    M = D.M
    gram = M @ M.T
    cond = np.linalg.cond(gram)
    if not cond < max_cond:
        raise ConditioningError(
            f"Gram matrix of [Wp; Uf] has condition number {cond:.3e} (limit {max_cond:.1e}); "
            "the regularizer weights would be dominated by rounding error")
    return M.T @ cho_solve(cho_factor(gram, lower=True), M)


def fit_spc(D: DataMatrix) -> SpcPredictor:
    """Least-squares multi-step predictor ``Yf pinv([Wp; Uf])``."""
    M = D.M
    rank = numerical_rank(M, PINV_RCOND)
    if rank < M.shape[0]:
        raise ValueError(
            f"[Wp; Uf] is rank deficient: numerical rank {rank} < {M.shape[0]} rows")
    K = D.Yf @ np.linalg.pinv(M, rcond=PINV_RCOND)
    k = (D.m + D.p) * D.N_p
    return SpcPredictor(O_spc=K[:, :k], T_spc=K[:, k:])


def reg_weights(D: DataMatrix) -> RegWeights:
    Pi = projection_matrix(D)
    Wp, Uf, Yf = D.Wp, D.Uf, D.Yf
    I = np.eye(D.ell)
    resid = Yf @ (I - Pi) @ Yf.T
    resid = (resid + resid.T) / 2
    Wp_gram_inv = _spd_inverse(Wp @ Wp.T, "Wp Wp^T")
    Pw = Wp.T @ Wp_gram_inv @ Wp
    uresid = Uf @ (I - Pw) @ Uf.T
    uresid = (uresid + uresid.T) / 2
    conditioning = {
        "gram_M": _cond(D.M @ D.M.T, "[Wp;Uf][Wp;Uf]^T"),
        "Yf_resid": _cond(resid, "Yf (I - Pi) Yf^T"),
        "Uf_resid": _cond(uresid, "Uf (I - Pw) Uf^T"),
    }
    return RegWeights(
        Q_reg=_spd_inverse(resid, "Yf (I - Pi) Yf^T"),
        R_reg=_spd_inverse(uresid, "Uf (I - Pw) Uf^T"),
        Wp_gram_inv=Wp_gram_inv,
        Uf_Wp_pinv=Uf @ Wp.T @ Wp_gram_inv,
        Pi=Pi,
        conditioning=conditioning,
    )


def _wnorm2(v: np.ndarray, W: np.ndarray) -> float:
    return float(v @ W @ v)


def h_star(w: RegWeights, kind, lambda_a: float, xi, u_f, y_f, spc: SpcPredictor) -> float:
    """Closed-form optimal regularizer cost for fixed ``(xi, u_f, y_f)``."""
    kind = RegularizerKind.parse(kind)
    xi, u_f, y_f = (np.asarray(v, dtype=float) for v in (xi, u_f, y_f))
    val = lambda_a * _wnorm2(y_f - spc.predict(xi, u_f), w.Q_reg)
    if kind is RegularizerKind.TWO_NORM:
        val += lambda_a * _wnorm2(u_f - w.Uf_Wp_pinv @ xi, w.R_reg)
        val += lambda_a * _wnorm2(xi, w.Wp_gram_inv)
    return val


def _row_space_split(M: np.ndarray):
    """Pseudoinverse and orthonormal null-space basis of a full-row-rank ``M``."""
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(s > PINV_RCOND * s[0]))
    pinv = Vt[:r].T @ ((U[:, :r] / s[:r]).T)
    return pinv, Vt[:r].T, Vt[r:].T


def h_star_oracle(D: DataMatrix, kind, lambda_a: float, xi, u_f, y_f) -> float:
    """``min_a h(a)`` subject to ``[Wp; Uf; Yf] a = (xi, u_f, y_f)``, solved in ``a``-space."""
    kind = RegularizerKind.parse(kind)
    z = np.concatenate([np.asarray(v, dtype=float).ravel() for v in (xi, u_f, y_f)])
    S = D.stacked
    S_pinv, _, S_null = _row_space_split(S)
    a_p = S_pinv @ z
    if np.linalg.norm(S @ a_p - z) > 1e-8 * (1.0 + np.linalg.norm(z)):
        raise ValueError("equality system is inconsistent (data matrix lacks full row rank)")
    if kind is RegularizerKind.TWO_NORM:
        return lambda_a * float(a_p @ a_p)
    # null(S) lies inside null([Wp;Uf]) = range(I - Pi), so the minimizer removes
    # the null(S) component of (I - Pi) a_p
    _, M_row, _ = _row_space_split(D.M)
    r = a_p - M_row @ (M_row.T @ a_p)
    r = r - S_null @ (S_null.T @ r)
    return lambda_a * float(r @ r)


def dpc_inner_oracle(D: DataMatrix, kind, lambda_a: float, Q_bar, xi, u_f, y_ref):
    """Minimize ``||y_f - y_ref||_Q^2 + h(a)`` over ``(y_f, a)`` for fixed ``(xi, u_f)``.

    Parametrizes ``a = a_p + N z`` with ``a_p`` in the row space of
    ``[Wp; Uf]`` and ``N`` an orthonormal null-space basis, which turns both
    regularizers into a ridge problem in ``z``.

    Returns:
        ``(y_f, value)``: the minimizing output sequence and the optimal value.
    """
    kind = RegularizerKind.parse(kind)
    Q_bar = np.asarray(Q_bar, dtype=float)
    z0 = np.concatenate([np.asarray(xi, dtype=float).ravel(), np.asarray(u_f, dtype=float).ravel()])
    M_pinv, _, N = _row_space_split(D.M)
    a_p = M_pinv @ z0
    G = D.Yf @ N
    e = D.Yf @ a_p - np.asarray(y_ref, dtype=float)
    z = -np.linalg.solve(G.T @ Q_bar @ G + lambda_a * np.eye(G.shape[1]), G.T @ Q_bar @ e)
    y_f = D.Yf @ (a_p + N @ z)
    r = y_f - y_ref
    value = float(r @ Q_bar @ r) + lambda_a * float(z @ z)
    if kind is RegularizerKind.TWO_NORM:
        value += lambda_a * float(a_p @ a_p)
    return y_f, value


def implicit_predictor(spc: SpcPredictor, w: RegWeights, Q_bar, lambda_a: float,
                       y_ref=None) -> ImplicitPredictor:
    """Blend of the SPC prediction and the reference, weighted by ``lambda_a Q_reg`` and ``Q_bar``."""
    if not lambda_a > 0:
        raise ValueError("lambda_a must be positive")
    Q_bar = np.asarray(Q_bar, dtype=float)
    lhs = lambda_a * w.Q_reg + Q_bar
    _cond(lhs, "lambda_a Q_reg + Q_bar")
    c = cho_factor(lhs, lower=True)
    wq = lambda_a * w.Q_reg
    O_dpc = cho_solve(c, wq @ spc.O_spc)
    T_dpc = cho_solve(c, wq @ spc.T_spc)
    ref_gain = cho_solve(c, Q_bar)
    y_ref = np.zeros(Q_bar.shape[0]) if y_ref is None else np.asarray(y_ref, dtype=float)
    return ImplicitPredictor(
        O_dpc=O_dpc, T_dpc=T_dpc, g_dpc=ref_gain @ y_ref,
        dO=O_dpc - spc.O_spc, dT=T_dpc - spc.T_spc, ref_gain=ref_gain,
    )


def export_json(path, spc: SpcPredictor, w: Optional[RegWeights] = None,
                pred: Optional[ImplicitPredictor] = None) -> None:
    """Write the fitted matrices as row-major nested lists."""
    doc = {"O_spc": spc.O_spc.tolist(), "T_spc": spc.T_spc.tolist()}
    if w is not None:
        doc.update(Q_reg=w.Q_reg.tolist(), R_reg=w.R_reg.tolist(),
                   Wp_gram_inv=w.Wp_gram_inv.tolist(), Uf_Wp_pinv=w.Uf_Wp_pinv.tolist(),
                   conditioning=w.conditioning)
    if pred is not None:
        doc.update(O_dpc=pred.O_dpc.tolist(), T_dpc=pred.T_dpc.tolist(),
                   g_dpc=pred.g_dpc.tolist(), dO=pred.dO.tolist(), dT=pred.dT.tolist())
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
