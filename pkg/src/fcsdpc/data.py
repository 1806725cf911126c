"""Excitation data collection, noise injection and Hankel data matrices."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .plant import ControlSet, PlantModel, Trajectory, simulate

DEFAULT_RANK_TOL = 1e-9


@dataclass(frozen=True)
class DataMatrix:
    """Hankel partition of one long trajectory.

    Column ``t`` holds the window starting at sample ``t``:
    ``Up = u(t..t+Np-1)``, ``Yp = y(t..t+Np-1)``, ``Uf = u(t+Np..t+Np+Nf-1)``
    and ``Yf = y(t+Np+1..t+Np+Nf)``. The two blocks dropped by the predictor
    (``y(t+Np)`` and ``u(t+Np+Nf)``) are kept so the full ``Np+Nf+1`` window
    can be rank-checked.
    """

    Up: np.ndarray
    Uf: np.ndarray
    Yp: np.ndarray
    Yf: np.ndarray
    y_now: np.ndarray
    u_tail: np.ndarray
    N_p: int
    N_f: int
    m: int
    p: int

    @property
    def ell(self) -> int:
        return self.Up.shape[1]

    @property
    def Wp(self) -> np.ndarray:
        return np.vstack([self.Up, self.Yp])

    @property
    def M(self) -> np.ndarray:
        """``[Wp; Uf]``, the rows the predictor conditions on."""
        return np.vstack([self.Up, self.Yp, self.Uf])

    @property
    def D(self) -> np.ndarray:
        return np.vstack([self.Up, self.Uf, self.Yp, self.Yf])

    @property
    def stacked(self) -> np.ndarray:
        """``[Wp; Uf; Yf]``, row order matching ``(xi, u_f, y_f)``."""
        return np.vstack([self.Up, self.Yp, self.Uf, self.Yf])

    def extended(self) -> np.ndarray:
        """Full ``L = Np+Nf+1`` window: all input blocks, then all output blocks."""
        U = np.vstack([self.Up, self.Uf, self.u_tail])
        Y = np.vstack([self.Yp, self.y_now, self.Yf])
        return np.vstack([U, Y])


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be a number (use +inf to disable noise)")

    @property
    def enabled(self) -> bool:
        return math.isfinite(self.snr_db)


@dataclass(frozen=True)
class RankReport:
    numerical_rank: int
    target: int
    satisfied: bool
    partition_rank: int
    rows: int
    full_row_rank: bool

    def as_dict(self) -> dict:
        return {
            "numerical_rank": self.numerical_rank,
            "target": self.target,
            "satisfied": self.satisfied,
            "partition_rank": self.partition_rank,
            "rows": self.rows,
            "full_row_rank": self.full_row_rank,
        }


def _sample_inputs(cs: ControlSet, steps: int, rng: np.random.Generator,
                   u_prev: np.ndarray) -> np.ndarray:
    u = np.empty((steps, cs.m))
    prev = np.array(u_prev, dtype=float)
    for k in range(steps):
        for c, levels in enumerate(cs.levels):
            while True:
                v = levels[rng.integers(len(levels))]
                if cs.step_ok(v, prev[c]):
                    break
            u[k, c] = v
        prev = u[k]
    return u


def collect_excitation(model: PlantModel, cs: ControlSet, steps: int, seed: int,
                       x0=None, u_prev=None) -> Trajectory:
    """Noise-free response to uniformly random inputs that respect the switching bound.

    Each component is drawn uniformly from its alphabet and redrawn until it is
    within ``cs.delta_bound`` of the previously applied value. ``u_prev``
    defaults to the level closest to zero on each channel.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if cs.m != model.m:
        raise ValueError("control set and plant disagree on the input count")
    x0 = np.zeros(model.n) if x0 is None else x0
    u_prev = cs.rest() if u_prev is None else u_prev
    rng = np.random.default_rng(seed)
    return simulate(model, x0, _sample_inputs(cs, steps, rng, u_prev))


def min_columns(m: int, p: int, N_p: int, N_f: int) -> int:
    """Columns needed for a square-or-wider data matrix."""
    return (m + p) * (N_p + N_f)


def collect_until_exciting(model: PlantModel, cs: ControlSet, N_p: int, N_f: int,
                           steps: int, seed: int, max_steps: int = 100_000,
                           x0=None) -> Trajectory:
    """Keep sampling until the input is persistently exciting and ``ell`` is large enough.

    The input sequence is extended (never restarted) in chunks of ``steps``
    samples from a single seeded stream, so the result only depends on the
    arguments.

    Raises:
        RuntimeError: If ``max_steps`` is reached first.
    """
    if steps < N_p + N_f + 1:
        raise ValueError(
            f"collect_steps={steps} is below the minimum window length {N_p + N_f + 1}")
    rng = np.random.default_rng(seed)
    order = N_p + N_f + 1 + model.n
    u = _sample_inputs(cs, steps, rng, cs.rest())
    while True:
        ell = len(u) - (N_p + N_f)
        if (ell >= min_columns(model.m, model.p, N_p, N_f)
                and len(u) >= order and check_persistency(u, order)):
            break
        if len(u) >= max_steps:
            raise RuntimeError(
                f"input not persistently exciting of order {order} after {len(u)} steps")
        u = np.vstack([u, _sample_inputs(cs, min(steps, max_steps - len(u)), rng, u[-1])])
    x0 = np.zeros(model.n) if x0 is None else x0
    return simulate(model, x0, u)


def noise_std(y: np.ndarray, snr_db: float) -> np.ndarray:
    """Per-channel noise standard deviation giving ``snr_db`` against ``y``'s mean-square power."""
    power = np.mean(np.square(y), axis=0)
    if np.any(power == 0.0):
        bad = np.flatnonzero(power == 0.0).tolist()
        raise ValueError(f"SNR undefined: zero signal power on output channel(s) {bad}")
    return np.sqrt(power / 10.0 ** (snr_db / 10.0))


def add_output_noise(traj: Trajectory, spec: NoiseSpec) -> Trajectory:
    """Add white Gaussian noise to the outputs, calibrated per channel over the whole record."""
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    if not spec.enabled:
        return Trajectory(u=traj.u.copy(), y=traj.y.copy(),
                          x=None if traj.x is None else traj.x.copy())
    std = noise_std(traj.y, spec.snr_db)
    rng = np.random.default_rng(spec.seed)
    y = traj.y + rng.standard_normal(traj.y.shape) * std
    return Trajectory(u=traj.u.copy(), y=y, x=None if traj.x is None else traj.x.copy())


def block_hankel(X: np.ndarray, rows: int) -> np.ndarray:
    """Block-Hankel matrix with ``rows`` block rows from a (time x channels) array."""
    X = np.asarray(X, dtype=float)
    N, c = X.shape
    cols = N - rows + 1
    if cols < 1:
        raise ValueError(f"need at least {rows} samples, got {N}")
    H = np.empty((rows * c, cols))
    for i in range(rows):
        H[i * c:(i + 1) * c] = X[i:i + cols].T
    return H


def build_hankel(traj: Trajectory, N_p: int, N_f: int) -> DataMatrix:
    if N_p < 1 or N_f < 1:
        raise ValueError("horizons must be >= 1")
    need = N_p + N_f + 1
    if len(traj) < need:
        raise ValueError(f"trajectory too short: need at least {need} samples, got {len(traj)}")
    Hu = block_hankel(traj.u, need)
    Hy = block_hankel(traj.y, need)
    m, p = traj.u.shape[1], traj.y.shape[1]
    return DataMatrix(
        Up=Hu[:m * N_p],
        Uf=Hu[m * N_p:m * (N_p + N_f)],
        u_tail=Hu[m * (N_p + N_f):],
        Yp=Hy[:p * N_p],
        y_now=Hy[p * N_p:p * (N_p + 1)],
        Yf=Hy[p * (N_p + 1):],
        N_p=N_p, N_f=N_f, m=m, p=p,
    )


def numerical_rank(M: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def check_rank(D: DataMatrix, n: int, tol: float = DEFAULT_RANK_TOL) -> RankReport:
    """Rank of the full window against ``L m + n`` plus the full-row-rank test on ``D``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    L = D.N_p + D.N_f + 1
    rank = numerical_rank(D.extended(), tol)
    target = L * D.m + n
    part = numerical_rank(D.D, tol)
    rows = D.D.shape[0]
    return RankReport(rank, target, rank == target, part, rows, part == rows)


def check_persistency(u_data, order: int, tol: float = DEFAULT_RANK_TOL) -> bool:
    u_data = np.asarray(u_data, dtype=float)
    if u_data.ndim == 1:
        u_data = u_data[:, None]
    if order < 1 or len(u_data) < order:
        raise ValueError("need len(u_data) >= order >= 1")
    H = block_hankel(u_data, order)
    return numerical_rank(H, tol) == H.shape[0]


def write_trajectory_csv(traj: Trajectory, path) -> None:
    m, p = traj.u.shape[1], traj.y.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"u_{i + 1}" for i in range(m)] + [f"y_{i + 1}" for i in range(p)])
        for k, (u, y) in enumerate(zip(traj.u, traj.y)):
            w.writerow([k] + [repr(float(v)) for v in u] + [repr(float(v)) for v in y])


def read_trajectory_csv(path) -> Trajectory:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    ui = [i for i, h in enumerate(header) if h.startswith("u_")]
    yi = [i for i, h in enumerate(header) if h.startswith("y_")]
    u = np.array([[float(r[i]) for i in ui] for r in body]).reshape(len(body), len(ui))
    y = np.array([[float(r[i]) for i in yi] for r in body]).reshape(len(body), len(yi))
    return Trajectory(u=u, y=y)


def persistency_order(N_p: int, N_f: int, n: int) -> int:
    return N_p + N_f + 1 + n


def data_quality(D: DataMatrix, u_data: np.ndarray, n: int,
                 tol: float = DEFAULT_RANK_TOL) -> dict:
    """Rank and excitation diagnostics as a JSON-ready dict."""
    report = check_rank(D, n, tol)
    order = persistency_order(D.N_p, D.N_f, n)
    pe = len(u_data) >= order and check_persistency(u_data, order, tol)
    wide = D.ell >= min_columns(D.m, D.p, D.N_p, D.N_f)
    return {
        "eq_rank": report.as_dict(),
        "persistency_order": order,
        "persistently_exciting": pe,
        "columns": D.ell,
        "square_or_wider": wide,
        "satisfied": bool(report.full_row_rank and pe and wide),
    }


def measurement_noise(rng: Optional[np.random.Generator], std: np.ndarray) -> np.ndarray:
    """One sample of zero-mean measurement noise with per-channel ``std``."""
    if rng is None:
        return np.zeros_like(std)
    return rng.standard_normal(std.shape) * std
