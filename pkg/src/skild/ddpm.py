"""Discrete frequency-space diffusion: forward process, posterior, samplers.

Every function works on arrays shaped ``(..., H, W)``; leading axes (batch,
channels) broadcast against the coefficient tables and ``S0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from skild.errors import NumericalError, ValidationError
from skild.schedule import ALPHA_FLOOR, CoefficientTables

KINDS = ("epsilon", "x0", "w_velocity", "v_velocity")

__all__ = [
    "KINDS",
    "CheatDenoiser",
    "Denoiser",
    "DiffusionState",
    "GaussianOracleDenoiser",
    "ancestral_sample",
    "convert_prediction",
    "forward_marginal",
    "forward_step",
    "gaussian_oracle_denoiser",
    "generate",
    "loss_value",
    "posterior",
]


@dataclass
class DiffusionState:
    n: int
    field: np.ndarray


class Denoiser(Protocol):
    def predict(self, n: int, field: np.ndarray) -> tuple[str, np.ndarray]: ...


def _s0(S0) -> np.ndarray:
    return np.asarray(getattr(S0, "values", S0), dtype=np.float64)


def _safe_div(num, den):
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=np.broadcast_to(den != 0, out.shape))
    return out


def forward_marginal(x0, n: int, tables: CoefficientTables, S0, rng: np.random.Generator) -> DiffusionState:
    """Sample ``X_n = sqrt(abar) X0 + sqrt(1 - abar) sqrt(S0) eps``."""
    if not 1 <= n <= tables.N:
        raise ValidationError(f"timestep {n} outside [1, {tables.N}]")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    xn = np.sqrt(tables.alpha_bar(n)) * x0 + np.sqrt(tables.one_minus_alpha_bar(n) * _s0(S0)) * eps
    return DiffusionState(n, xn)


def forward_step(x_prev, n: int, tables: CoefficientTables, S0, rng: np.random.Generator) -> np.ndarray:
    """One Markov transition ``X_{n-1} -> X_n``."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps = rng.standard_normal(x_prev.shape)
    return np.sqrt(tables.alpha(n)) * x_prev + np.sqrt(tables.beta(n) * _s0(S0)) * eps


def posterior(x_n, x0, n: int, tables: CoefficientTables, S0=None):
    """Mean and variance of ``q(X_{n-1} | X_n, X_0)``.

    Modes with ``1 - abar_n = 0`` carry no noise; they pass ``x0`` through with
    zero variance. The variance is ``S0 * beta_tilde`` when ``S0`` is given,
    otherwise the bare ``beta_tilde`` factor.
    """
    om = tables.one_minus_alpha_bar(n)
    om_prev = tables.one_minus_alpha_bar(n - 1)
    c0 = _safe_div(np.sqrt(tables.alpha_bar(n - 1)) * tables.beta(n), om)
    cn = _safe_div(np.sqrt(tables.alpha(n)) * om_prev, om)
    mean = c0 * x0 + cn * x_n
    mean = np.where(om > 0, mean, np.broadcast_to(x0, mean.shape))
    bt = tables.beta_tilde(n)
    var = bt if S0 is None else bt * _s0(S0)
    return mean, var


def convert_prediction(kind_in: str, pred, n: int, x_n, tables: CoefficientTables, S0) -> dict:
    """Express one prediction as all four targets.

    With ``a = sqrt(abar_n)``, ``b = sqrt(1 - abar_n)`` and colored noise
    ``z = sqrt(S0) eps``::

        x_n = a x0 + b z,   w = a z - b x0,   v = w / sqrt(S0)

    The ``x0``-from-``eps`` division uses ``max(a, sqrt(ALPHA_FLOOR))``; the
    returned ``"floored"`` mask marks modes where that clamp was active.
    Modes with ``S0 = 0`` get ``eps = v = 0``; modes with ``b = 0`` get
    ``z = 0`` when it cannot be inferred.
    """
    if kind_in not in KINDS:
        raise ValidationError(f"unknown prediction kind {kind_in!r}")
    x_n = np.asarray(x_n, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    s0 = _s0(S0)
    sq = np.sqrt(s0)
    a = np.sqrt(tables.alpha_bar(n))
    b = np.sqrt(tables.one_minus_alpha_bar(n))
    a_floor = np.sqrt(ALPHA_FLOOR)
    floored = np.broadcast_to(a < a_floor, x_n.shape)

    if kind_in == "epsilon":
        eps = pred
        z = sq * eps
        x0 = (x_n - b * z) / np.maximum(a, a_floor)
    elif kind_in == "x0":
        x0 = pred
        z = _safe_div(x_n - a * x0, np.broadcast_to(b, x_n.shape))
        eps = _safe_div(z, np.broadcast_to(sq, z.shape))
    else:
        w = pred if kind_in == "w_velocity" else pred * sq
        x0 = a * x_n - b * w
        z = b * x_n + a * w
        eps = _safe_div(z, np.broadcast_to(sq, z.shape))
        floored = np.zeros(x_n.shape, dtype=bool)
    if kind_in in ("epsilon", "x0"):
        w = a * z - b * x0
        if kind_in == "x0":
            floored = np.zeros(x_n.shape, dtype=bool)
    v = _safe_div(w, np.broadcast_to(sq, w.shape))
    return {"epsilon": eps, "x0": x0, "w_velocity": w, "v_velocity": v, "floored": floored}


def _epsilon(denoiser: Denoiser, n: int, x_n, tables, S0) -> np.ndarray:
    kind, pred = denoiser.predict(n, x_n)
    pred = np.asarray(pred, dtype=np.float64)
    if not np.all(np.isfinite(pred)):
        raise NumericalError(f"denoiser returned non-finite values at timestep {n}")
    if kind == "epsilon":
        return pred
    return convert_prediction(kind, pred, n, x_n, tables, S0)["epsilon"]


def ancestral_sample(
    start: DiffusionState,
    denoiser: Denoiser,
    tables: CoefficientTables,
    S0,
    rng: np.random.Generator,
    stop_n: int = 0,
) -> np.ndarray:
    """Run ``X_{n-1} = mu(n, X_n) + sqrt(S0 beta_tilde_n) eps`` down to ``stop_n``.

    The mean uses the epsilon form with ``alpha_n`` floored at ``ALPHA_FLOOR``
    in the ``1/sqrt(alpha_n)`` factor only. ``beta_tilde_1 = 0`` makes the last
    step deterministic.
    """
    if not tables.N >= start.n > stop_n >= 0:
        raise ValidationError(f"need N >= start.n > stop_n >= 0, got start {start.n}, stop {stop_n}")
    s0 = _s0(S0)
    sq = np.sqrt(s0)
    x = np.array(start.field, dtype=np.float64)
    for n in range(start.n, stop_n, -1):
        eps_hat = _epsilon(denoiser, n, x, tables, s0)
        om = tables.one_minus_alpha_bar(n)
        coef = _safe_div(tables.beta(n) * sq, np.sqrt(om))
        mean = (x - coef * eps_hat) / np.sqrt(tables.alpha(n, floored=True))
        noise = rng.standard_normal(x.shape)
        x = mean + np.sqrt(s0 * tables.beta_tilde(n)) * noise
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"ancestral sampler produced non-finite values at timestep {n}")
    return x


def generate(
    denoiser: Denoiser,
    tables: CoefficientTables,
    S0,
    rng: np.random.Generator,
    batch: tuple[int, ...] = (),
) -> np.ndarray:
    """Draw ``X_N ~ N(0, S0)`` per mode and run the ancestral sampler to 0."""
    s0 = _s0(S0)
    shape = tuple(batch) + np.broadcast_shapes(s0.shape, tables.grid.shape)
    xN = np.sqrt(s0) * rng.standard_normal(shape)
    return ancestral_sample(DiffusionState(tables.N, xN), denoiser, tables, s0, rng)


def loss_value(denoiser: Denoiser, x0, n: int, S0, tables: CoefficientTables, rng: np.random.Generator) -> float:
    """One-draw epsilon-prediction loss, averaged over identifiable modes.

    Modes that receive no noise (``1 - abar_n = 0`` or ``S0 = 0``) are
    excluded: their epsilon never reaches ``X_n``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    s0 = _s0(S0)
    eps = rng.standard_normal(x0.shape)
    xn = np.sqrt(tables.alpha_bar(n)) * x0 + np.sqrt(tables.one_minus_alpha_bar(n) * s0) * eps
    eps_hat = _epsilon(denoiser, n, xn, tables, s0)
    live = np.broadcast_to((tables.one_minus_alpha_bar(n) > 0) & (s0 > 0), x0.shape)
    if not live.any():
        return 0.0
    return float(np.mean(((eps - eps_hat) ** 2)[live]))


class GaussianOracleDenoiser:
    """Bayes-optimal epsilon predictor for data distributed as ``N(0, S0)``.

    ``eps_hat = sqrt(1 - abar_n) X_n / sqrt(S0)``, equivalently the score
    ``-X / S0`` at every time.
    """

    def __init__(self, S0, tables: CoefficientTables):
        self.s0 = _s0(S0)
        self.tables = tables

    def predict(self, n: int, field: np.ndarray) -> tuple[str, np.ndarray]:
        b = np.sqrt(self.tables.one_minus_alpha_bar(n))
        return "epsilon", _safe_div(b * field, np.broadcast_to(np.sqrt(self.s0), np.shape(field)))


class CheatDenoiser:
    """Returns the true ``X0`` regardless of the input; makes the posterior exact."""

    def __init__(self, x0):
        self.x0 = np.asarray(x0, dtype=np.float64)

    def predict(self, n: int, field: np.ndarray) -> tuple[str, np.ndarray]:
        return "x0", np.broadcast_to(self.x0, np.shape(field))


def gaussian_oracle_denoiser(S0, tables: CoefficientTables) -> GaussianOracleDenoiser:
    return GaussianOracleDenoiser(S0, tables)
