"""LTI plant simulation, finite control sets and the model-based predictor."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MEMBERSHIP_TOL = 1e-12


@dataclass(frozen=True)
class PlantModel:
    """Discrete-time LTI plant ``x+ = A x + B u``, ``y = C x`` (no feed-through)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {C.shape}")
        for name, M in (("A", A), ("B", B), ("C", C)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))


@dataclass(frozen=True)
class ControlSet:
    """Finite alphabet per input channel plus an optional switching bound.

    Attributes:
        levels: One strictly increasing tuple of admissible values per channel.
        delta_bound: Bound on ``max_c |u_c(k) - u_c(k-1)|``; ``None`` disables it.

    The integer map of a level is its index within its channel's tuple.
    """

    levels: tuple
    delta_bound: Optional[float] = None

    def __post_init__(self):
        chans = tuple(tuple(float(v) for v in ch) for ch in self.levels)
        if not chans:
            raise ValueError("control set needs at least one channel")
        for ch in chans:
            if not ch:
                raise ValueError("every channel needs at least one level")
            if not all(np.isfinite(ch)):
                raise ValueError("levels must be finite")
            if any(b <= a for a, b in zip(ch, ch[1:])):
                raise ValueError(f"levels must be strictly increasing: {ch}")
        if self.delta_bound is not None:
            if not self.delta_bound >= 0:
                raise ValueError("delta_bound must be nonnegative")
            object.__setattr__(self, "delta_bound", float(self.delta_bound))
        object.__setattr__(self, "levels", chans)

    @classmethod
    def shared(cls, levels: Sequence[float], m: int,
               delta_bound: Optional[float] = None) -> "ControlSet":
        return cls(tuple(tuple(levels) for _ in range(m)), delta_bound)

    @property
    def m(self) -> int:
        return len(self.levels)

    def to_index(self, channel: int, value: float) -> int:
        """Snap ``value`` to its level index, or raise if it is off-alphabet."""
        ch = np.asarray(self.levels[channel])
        k = int(np.argmin(np.abs(ch - value)))
        if abs(ch[k] - value) > MEMBERSHIP_TOL:
            raise ValueError(f"{value} is not a level of channel {channel}")
        return k

    def contains(self, channel: int, value: float) -> bool:
        ch = np.asarray(self.levels[channel])
        return bool(np.min(np.abs(ch - value)) <= MEMBERSHIP_TOL)

    def step_ok(self, a: float, b: float) -> bool:
        if self.delta_bound is None:
            return True
        return abs(a - b) <= self.delta_bound + MEMBERSHIP_TOL

    def rest(self) -> np.ndarray:
        """The level closest to zero on each channel (used as a default ``u(-1)``)."""
        return np.array([ch[int(np.argmin(np.abs(ch)))] for ch in self.levels])


@dataclass
class Trajectory:
    """Input/output record; ``x`` (if kept) has one more sample than ``u``."""

    u: np.ndarray
    y: np.ndarray
    x: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.u.ndim != 2 or self.y.ndim != 2:
            raise ValueError("u and y must be 2-D (time x channels)")
        if len(self.u) != len(self.y):
            raise ValueError("u and y must have equal length")
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float)
            if len(self.x) != len(self.u) + 1:
                raise ValueError("x must have len(u) + 1 samples")

    def __len__(self) -> int:
        return len(self.u)


def step(model: PlantModel, x, u):
    """Advance one sample. Returns ``(x_next, y)`` with ``y`` from the pre-update state."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape != (model.n,):
        raise ValueError(f"state must have length {model.n}, got {x.shape}")
    if u.shape != (model.m,):
        raise ValueError(f"input must have length {model.m}, got {u.shape}")
    return model.A @ x + model.B @ u, model.C @ x


def simulate(model: PlantModel, x0, u_seq) -> Trajectory:
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.m)
    xs = [np.asarray(x0, dtype=float).reshape(-1)]
    if xs[0].shape != (model.n,):
        raise ValueError(f"x0 must have length {model.n}")
    ys = []
    for u in u_seq:
        x_next, y = step(model, xs[-1], u)
        xs.append(x_next)
        ys.append(y)
    return Trajectory(u=u_seq, y=np.reshape(ys, (len(u_seq), model.p)), x=np.array(xs))


def multistep(model: PlantModel, N_f: int):
    """Stacked predictor ``y(1..N_f) = O x(0) + T u(0..N_f-1)``.

    ``O = [CA; ...; CA^N_f]`` and ``T`` is block lower-triangular with ``CB``
    on the diagonal blocks.
    """
    if N_f < 1:
        raise ValueError("N_f must be >= 1")
    n, m, p = model.n, model.m, model.p
    A, B, C = model.A, model.B, model.C
    O = np.zeros((p * N_f, n))
    T = np.zeros((p * N_f, m * N_f))
    markov = []  # C A^i B
    CAi = C.copy()
    for i in range(N_f):
        markov.append(CAi @ B)
        CAi = CAi @ A
        O[i * p:(i + 1) * p] = CAi
    for i in range(N_f):
        for j in range(i + 1):
            T[i * p:(i + 1) * p, j * m:(j + 1) * m] = markov[i - j]
    return O, T


def is_feasible(u_seq, cs: ControlSet, u_prev) -> bool:
    """Alphabet membership of every component plus the switching bound."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, cs.m)
    prev = np.asarray(u_prev, dtype=float).reshape(-1)
    for u in u_seq:
        for c in range(cs.m):
            if not cs.contains(c, u[c]) or not cs.step_ok(u[c], prev[c]):
                return False
        prev = u
    return True


def random_plant(rng: np.random.Generator, n: int, m: int, p: int,
                 rho: float = 0.9) -> PlantModel:
    """Gaussian ``(A, B, C)`` with ``A`` rescaled to spectral radius ``rho``."""
    A = rng.standard_normal((n, n))
    A *= rho / np.max(np.abs(np.linalg.eigvals(A)))
    return PlantModel(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)))
