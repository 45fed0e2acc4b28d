"""Continuous-time formulation: SDE coefficients, scores and reverse samplers.

Per mode, with ``c(t) = k_eff^2 * dlambda/dt``::

    forward:  dX = -c/2 X dt + sqrt(c S0) dW
    reverse:  dX = [-c/2 X - c S0 score] dt + sqrt(c S0) dW_bar
    flow ODE: dX = [-c/2 X - c/2 S0 score] dt

Reverse integrators run on a uniform decreasing grid from the start time down
to ``1/N`` and finish with one Tweedie step ``X0 = (X + D^2 score) / A``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from skild.ddpm import Denoiser, DiffusionState, _s0, _safe_div, convert_prediction
from skild.errors import NumericalError, ValidationError
from skild.schedule import ALPHA_FLOOR, CoefficientTables, ScheduleSpec, lambda_dot, lambda_of_t
from skild.spectral import FrequencyGrid

ScoreFunction = Callable[[float, np.ndarray], np.ndarray]

__all__ = [
    "ScoreFunction",
    "SdeCoefficients",
    "em_reverse",
    "gaussian_score",
    "ode_reverse",
    "pc_reverse",
    "score_from_denoiser",
    "sde_coefficients",
    "tweedie_x0",
]


@dataclass(frozen=True)
class SdeCoefficients:
    drift: np.ndarray  # f / X, i.e. -k^2 lambda_dot / 2
    diffusion: np.ndarray  # g
    rate: np.ndarray  # k^2 lambda_dot


def sde_coefficients(spec: ScheduleSpec, grid: FrequencyGrid, S0, t: float) -> SdeCoefficients:
    if not 0 < t <= 1:
        raise ValidationError(f"t must lie in (0, 1], got {t}")
    ld = lambda_dot(spec, t)
    if not np.isfinite(ld):
        raise NumericalError(f"lambda_dot is not finite at t={t}")
    if ld < 0:
        raise ValidationError(f"schedule is not monotone at t={t} (lambda_dot={ld:.6g})")
    k_sq = np.maximum(grid.k_mag, spec.k_c) ** 2
    rate = k_sq * ld
    return SdeCoefficients(-0.5 * rate, np.sqrt(rate * _s0(S0)), rate)


def gaussian_score(S0) -> ScoreFunction:
    """Exact score ``-X / S0`` of the stationary law ``N(0, S0)``."""
    s0 = _s0(S0)

    def score(t: float, x: np.ndarray) -> np.ndarray:
        return _safe_div(-x, np.broadcast_to(s0, np.shape(x)))

    return score


def score_from_denoiser(denoiser: Denoiser, tables: CoefficientTables, S0) -> ScoreFunction:
    """Turn a discrete-time denoiser into a score ``-eps_hat / (sqrt(S0) sqrt(1 - abar))``.

    Continuous ``t`` maps to the nearest grid index ``n = round(t N)`` (at
    least 1); the same ``abar_n`` is used for the conversion and the score.
    """
    s0 = _s0(S0)
    sq = np.sqrt(s0)

    def score(t: float, x: np.ndarray) -> np.ndarray:
        n = min(max(int(round(t * tables.N)), 1), tables.N)
        kind, pred = denoiser.predict(n, x)
        eps = pred if kind == "epsilon" else convert_prediction(kind, pred, n, x, tables, s0)["epsilon"]
        b = np.sqrt(tables.one_minus_alpha_bar(n))
        return _safe_div(-np.asarray(eps), np.broadcast_to(sq * b, np.shape(x)))

    return score


def tweedie_x0(spec: ScheduleSpec, grid: FrequencyGrid, S0, t: float, x, score_value) -> np.ndarray:
    """``E[X0 | X] = (X + D_t^2 score) / A_t`` with ``A_t`` floored like the sampler."""
    k_sq = np.maximum(grid.k_mag, spec.k_c) ** 2
    lam = lambda_of_t(spec, t)
    A = np.exp(-0.5 * k_sq * lam)
    D2 = _s0(S0) * -np.expm1(-k_sq * lam)
    return (x + D2 * score_value) / np.maximum(A, np.sqrt(ALPHA_FLOOR))


def _grid(spec: ScheduleSpec, t_start: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    t_end = 1.0 / spec.N
    if t_start <= t_end:
        raise ValidationError(f"start time {t_start} must exceed the final time {t_end}")
    return np.linspace(t_start, t_end, steps + 1)


def _start(start, spec: ScheduleSpec) -> tuple[float, np.ndarray]:
    if isinstance(start, DiffusionState):
        return start.n / spec.N, np.array(start.field, dtype=np.float64)
    t0, field = start
    return float(t0), np.array(field, dtype=np.float64)


def _check(x, j):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"reverse integrator produced non-finite values at step {j}")


def _em_step(x, t, dt, score, spec, grid, s0, rng, noise: bool):
    co = sde_coefficients(spec, grid, s0, t)
    drift = co.drift * x - co.rate * s0 * score(t, x)
    x = x + drift * dt
    if noise:
        x = x + co.diffusion * np.sqrt(-dt) * rng.standard_normal(x.shape)
    return x


def em_reverse(
    start,
    score: ScoreFunction,
    spec: ScheduleSpec,
    grid: FrequencyGrid,
    S0,
    steps: int,
    rng: np.random.Generator,
    denoise_final: bool = True,
) -> np.ndarray:
    """Euler-Maruyama on the reverse SDE.

    ``start`` is a :class:`DiffusionState` (time ``n/N``) or a ``(t, field)``
    pair.
    """
    s0 = _s0(S0)
    t0, x = _start(start, spec)
    ts = _grid(spec, t0, steps)
    for j in range(steps):
        x = _em_step(x, ts[j], ts[j + 1] - ts[j], score, spec, grid, s0, rng, True)
        _check(x, j)
    if denoise_final:
        x = tweedie_x0(spec, grid, s0, ts[-1], x, score(ts[-1], x))
    return x


def ode_reverse(
    start,
    score: ScoreFunction,
    spec: ScheduleSpec,
    grid: FrequencyGrid,
    S0,
    steps: int,
    denoise_final: bool = True,
) -> np.ndarray:
    """Explicit Euler on the probability-flow ODE (score coefficient ``g^2/2``)."""
    s0 = _s0(S0)
    t0, x = _start(start, spec)
    ts = _grid(spec, t0, steps)
    for j in range(steps):
        t, dt = ts[j], ts[j + 1] - ts[j]
        co = sde_coefficients(spec, grid, s0, t)
        x = x + (co.drift * x - 0.5 * co.rate * s0 * score(t, x)) * dt
        _check(x, j)
    if denoise_final:
        x = tweedie_x0(spec, grid, s0, ts[-1], x, score(ts[-1], x))
    return x


def pc_reverse(
    start,
    score: ScoreFunction,
    spec: ScheduleSpec,
    grid: FrequencyGrid,
    S0,
    steps: int,
    corrector_iters: int,
    step_scale: float,
    rng: np.random.Generator,
    denoise_final: bool = True,
) -> np.ndarray:
    """EM predictor plus ``corrector_iters`` preconditioned Langevin updates.

    Corrector: ``X <- X + S0 score(t, X) eta + sqrt(2 S0 eta) xi`` at the
    predictor's new time level, with ``eta = step_scale``.
    """
    if corrector_iters < 0:
        raise ValidationError(f"corrector_iters must be >= 0, got {corrector_iters}")
    if corrector_iters and not 0 < step_scale < 2:
        raise ValidationError(f"corrector step must lie in (0, 2), got {step_scale}")
    s0 = _s0(S0)
    t0, x = _start(start, spec)
    ts = _grid(spec, t0, steps)
    noise_scale = np.sqrt(2.0 * s0 * step_scale)
    for j in range(steps):
        x = _em_step(x, ts[j], ts[j + 1] - ts[j], score, spec, grid, s0, rng, True)
        t_new = ts[j + 1]
        for _ in range(corrector_iters):
            x = x + s0 * score(t_new, x) * step_scale + noise_scale * rng.standard_normal(x.shape)
        _check(x, j)
    if denoise_final:
        x = tweedie_x0(spec, grid, s0, ts[-1], x, score(ts[-1], x))
    return x
