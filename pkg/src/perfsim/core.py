"""Shared numeric types: problem constants, step-size schedules, RNG plumbing.

Conventions used throughout the package:

* a decision vector ``theta`` is a 1-D float64 array of fixed length ``d``,
* all exposed quantities are finite (NaN/Inf are rejected at boundaries),
* randomness always flows through :class:`RngStream` so that a run is
  reproducible from a single 64-bit seed.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

__all__ = [
    "as_param",
    "ProblemConstants",
    "ConstantSchedule",
    "InverseSchedule",
    "StepSchedule",
    "step_at",
    "ScheduleReport",
    "check_schedule",
    "RngStream",
]


def as_param(values, d: Optional[int] = None) -> np.ndarray:
    """Coerce ``values`` to a finite 1-D float64 decision vector.

    Scalars become length-1 vectors. Raises ``ValueError`` on non-finite
    entries or on a length mismatch with ``d``.
    """
    theta = np.atleast_1d(np.asarray(values, dtype=float))
    if theta.ndim != 1:
        raise ValueError(f"decision vector must be 1-D, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("decision vector has non-finite entries")
    if d is not None and theta.shape[0] != d:
        raise ValueError(f"decision vector has length {theta.shape[0]}, expected {d}")
    return theta


@dataclass(frozen=True)
class ProblemConstants:
    """Declared regularity constants of a performative learning problem.

    ``mu_tilde = mu - lipschitz * sensitivity`` is always stored derived;
    rate-guaranteed runs require it to be positive (the stability regime
    ``sensitivity < mu / lipschitz``).
    """

    mu: float
    lipschitz: float
    sensitivity: float
    sigma_noise: float = 0.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.lipschitz < 0 or self.sensitivity < 0 or self.sigma_noise < 0:
            raise ValueError("lipschitz, sensitivity and sigma_noise must be >= 0")

    @property
    def mu_tilde(self) -> float:
        return self.mu - self.lipschitz * self.sensitivity

    def require_contraction(self) -> float:
        """Return ``mu_tilde``, raising if the stability condition fails."""
        mt = self.mu_tilde
        if mt <= 0:
            raise ValueError(
                f"mu_tilde = {mt:.6g} <= 0: sensitivity {self.sensitivity} is not "
                f"below mu/L = {self.mu / max(self.lipschitz, 1e-300):.6g}"
            )
        return mt


@dataclass(frozen=True)
class ConstantSchedule:
    """Constant step size ``gamma_k = gamma``."""

    gamma_value: float

    def __post_init__(self):
        if not self.gamma_value > 0:
            raise ValueError("constant step size must be positive")

    def gamma(self, k):
        if np.ndim(k) == 0:
            return float(self.gamma_value)
        return np.full(np.shape(k), float(self.gamma_value))

    def describe(self) -> dict:
        return {"kind": "constant", "gamma": self.gamma_value}


@dataclass(frozen=True)
class InverseSchedule:
    """Diminishing step size ``gamma_k = c0 / (c1 + k)``."""

    c0: float
    c1: float

    def __post_init__(self):
        if not self.c0 > 0 or self.c1 < 0:
            raise ValueError("inverse schedule requires c0 > 0 and c1 >= 0")

    def gamma(self, k):
        k = np.asarray(k, dtype=float)
        with np.errstate(divide="ignore"):
            out = self.c0 / (self.c1 + k)
        return out if out.ndim else float(out)

    def describe(self) -> dict:
        return {"kind": "inverse", "c0": self.c0, "c1": self.c1}


StepSchedule = Union[ConstantSchedule, InverseSchedule]


def step_at(schedule: StepSchedule, k: int) -> float:
    """Step size gamma_k of ``schedule`` at iteration ``k >= 1``."""
    if k < 1:
        raise ValueError("step index k must be >= 1")
    return float(schedule.gamma(k))


@dataclass
class ScheduleReport:
    """Outcome of :func:`check_schedule` over a horizon of K steps.

    ``ratio_ok[k-1]`` / ``cap_ok[k-1]`` hold the per-step verdicts for
    iteration ``k``; the ratio condition at ``k`` compares gamma_{k-1}/gamma_k
    against ``1 + gamma_k * mu_tilde / 4``.
    """

    horizon: int
    gamma_cap: float
    ratio_ok: np.ndarray
    cap_ok: np.ndarray

    @property
    def first_ratio_violation(self) -> Optional[int]:
        bad = np.flatnonzero(~self.ratio_ok)
        return int(bad[0]) + 1 if bad.size else None

    @property
    def first_cap_violation(self) -> Optional[int]:
        bad = np.flatnonzero(~self.cap_ok)
        return int(bad[0]) + 1 if bad.size else None

    @property
    def first_violation(self) -> Optional[int]:
        firsts = [v for v in (self.first_ratio_violation, self.first_cap_violation) if v is not None]
        return min(firsts) if firsts else None

    @property
    def all_ok(self) -> bool:
        return bool(self.ratio_ok.all() and self.cap_ok.all())


def check_schedule(
    schedule: StepSchedule,
    constants: ProblemConstants,
    horizon: int,
    gamma_cap: float,
) -> ScheduleReport:
    """Verify the structurally checkable step-size conditions over 1..K.

    Checks, for every k in 1..horizon:

    * ratio condition  gamma_{k-1}/gamma_k <= 1 + gamma_k * mu_tilde / 4,
    * cap condition    gamma_k <= gamma_cap.

    ``gamma_cap`` stands in for the analysis-only minimum bound whose
    constants cannot be computed from data and must be supplied by the
    caller. ``gamma_0`` is evaluated from the schedule formula (infinite for
    an inverse schedule with c1 = 0, which makes the k = 1 ratio check fail).

    Raises ``ValueError`` if the schedule is increasing anywhere in 1..K.
    """
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    if not gamma_cap > 0:
        raise ValueError("gamma_cap must be positive")
    mu_tilde = constants.require_contraction()

    gammas = np.asarray(schedule.gamma(np.arange(0, horizon + 1)), dtype=float)
    steps = gammas[1:]
    if np.any(steps[1:] > steps[:-1]):
        k_bad = int(np.flatnonzero(steps[1:] > steps[:-1])[0]) + 2
        raise ValueError(f"schedule is increasing at k = {k_bad}")

    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = gammas[:-1] / steps
    ratio_ok = ratios <= 1.0 + steps * mu_tilde / 4.0
    cap_ok = steps <= gamma_cap
    return ScheduleReport(horizon=horizon, gamma_cap=gamma_cap,
                          ratio_ok=ratio_ok, cap_ok=cap_ok)


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream addressed by a seed and a substream path.

    Two streams with equal ``(seed, path)`` replay bit-exactly. Substreams
    derived with fixed indices let runs that share dynamics share randomness:
    one root seed per trial, one substream per component.
    """

    seed: int
    path: tuple = ()

    def substream(self, index: int) -> "RngStream":
        return dataclasses.replace(self, path=self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.path))
