"""Bernoulli noise schedules (beta, alpha, alpha_bar and the flip bias b)."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Precomputed schedule tables.

    Arrays are stored 0-based (``beta[0]`` is beta_1) but every public
    accessor speaks in timesteps ``t`` in ``[1, T]``.  ``b`` follows the
    recursion ``b_t = (1 - beta_t) b_{t-1} + beta_t / 2`` with ``b_1 = beta_1/2``.
    """

    kind: str
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    b: np.ndarray
    beta_start: float = float("nan")
    beta_end: float = float("nan")

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [1, {self.T}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_t(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t, with the convention alpha_bar_0 = 1."""
        t = int(t)
        if t == 0:
            return 1.0
        return float(self.alpha_bar[self._check_t(t) - 1])

    def b_at(self, t: int) -> float:
        """Cumulative flip bias b_t, with b_0 = 0."""
        t = int(t)
        if t == 0:
            return 0.0
        return float(self.b[self._check_t(t) - 1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,beta,alpha,alpha_bar,b\n")
        for i in range(self.T):
            row = (self.beta[i], self.alpha[i], self.alpha_bar[i], self.b[i])
            buf.write(f"{i + 1}," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    def params(self) -> dict:
        return {"kind": self.kind, "T": self.T,
                "beta_start": self.beta_start, "beta_end": self.beta_end}

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return self.T == other.T and np.array_equal(self.beta, other.beta)


def _cosine_betas(T: int, s: float = 0.008, max_beta: float = 0.999) -> np.ndarray:
    def f(t):
        return math.cos((t / T + s) / (1 + s) * math.pi / 2) ** 2

    return np.array([min(1.0 - f(i + 1) / f(i), max_beta) for i in range(T)],
                    dtype=np.float64)


def schedule_from_betas(beta, kind: str = "custom", **meta) -> NoiseSchedule:
    beta = np.asarray(beta, dtype=np.float64).copy()
    if beta.ndim != 1 or beta.size < 1:
        raise ValueError("beta must be a non-empty 1-d array")
    if np.any(~np.isfinite(beta)) or np.any(beta <= 0) or np.any(beta > 1):
        raise ValueError("every beta_t must lie in (0, 1]")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    b = np.empty_like(beta)
    b[0] = 0.5 * beta[0]
    for i in range(1, beta.size):
        b[i] = (1.0 - beta[i]) * b[i - 1] + 0.5 * beta[i]
    for arr in (beta, alpha, alpha_bar, b):
        arr.flags.writeable = False
    return NoiseSchedule(kind, int(beta.size), beta, alpha, alpha_bar, b, **meta)


def build_schedule(kind: str = "linear", T: int = 1000,
                   beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Build a linear or squared-cosine schedule with ``T`` steps.

    The cosine kind ignores the beta bounds and clips each beta_t at 0.999.
    """
    T = int(T)
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if kind == "linear":
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ValueError("linear schedule needs 0 < beta_start <= beta_end < 1, "
                             f"got ({beta_start}, {beta_end})")
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        return schedule_from_betas(beta, "linear", beta_start=float(beta_start),
                                   beta_end=float(beta_end))
    if kind == "cosine":
        return schedule_from_betas(_cosine_betas(T), "cosine")
    raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")


def flip_probability(schedule: NoiseSchedule, t: int) -> float:
    """Probability that a bit of z_0 is flipped in z_t: (1 - alpha_bar_t) / 2."""
    return (1.0 - schedule.alpha_bar_at(schedule._check_t(t))) / 2.0
