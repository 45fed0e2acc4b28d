"""Dataset variance spectra and the regularised power-law model.

The model is ``S0(k) = C * (k^2 + k0_sq)^(-a)``. Fitting happens in log space
over every non-DC mode of the 2-D grid (no radial pre-averaging).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import least_squares

from skild.errors import NumericalError, ValidationError
from skild.spectral import FrequencyGrid, dct2

__all__ = [
    "PowerLawParams",
    "VarianceAccumulator",
    "VarianceSpectrum",
    "estimate_variance_spectrum",
    "eval_power_law",
    "fit_power_law",
]


@dataclass(frozen=True)
class VarianceSpectrum:
    values: np.ndarray
    sample_count: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("variance spectrum contains non-finite values")
        if np.any(vals < 0):
            raise ValidationError("variance spectrum contains negative values")
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


class VarianceAccumulator:
    """Streaming per-mode mean/variance (Welford, mergeable via Chan et al.)."""

    def __init__(self, shape: tuple[int, ...] | None = None):
        self.shape = None if shape is None else tuple(shape)
        self.count = 0
        self.mean: np.ndarray | None = None
        self.m2: np.ndarray | None = None

    def add(self, coeffs: np.ndarray, index: int | None = None) -> None:
        x = np.asarray(coeffs, dtype=np.float64)
        if self.shape is None:
            self.shape = x.shape
        if x.shape != self.shape:
            where = f"sample {index}" if index is not None else "sample"
            raise ValidationError(f"{where} has shape {x.shape}, expected {self.shape}")
        if self.mean is None:
            self.mean = np.zeros(self.shape)
            self.m2 = np.zeros(self.shape)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "VarianceAccumulator") -> "VarianceAccumulator":
        if other.count == 0:
            return self
        if self.count == 0:
            self.shape, self.count = other.shape, other.count
            self.mean, self.m2 = other.mean.copy(), other.m2.copy()
            return self
        if other.shape != self.shape:
            raise ValidationError(f"cannot merge accumulators of shape {self.shape} and {other.shape}")
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self.m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        self.count = n
        return self

    def result(self) -> VarianceSpectrum:
        if self.count < 2:
            raise ValidationError(f"need at least 2 samples to estimate a variance, got {self.count}")
        # population variance: E[X^2] - E[X]^2
        return VarianceSpectrum(np.maximum(self.m2 / self.count, 0.0), self.count)


def estimate_variance_spectrum(dataset: Iterable[np.ndarray]) -> VarianceSpectrum:
    """Per-mode variance of the DCT coefficients of a stream of pixel fields."""
    acc = VarianceAccumulator()
    for i, field_ in enumerate(dataset):
        acc.add(dct2(field_), index=i)
    return acc.result()


@dataclass(frozen=True)
class PowerLawParams:
    C: float
    k0_sq: float
    a: float
    stderr: dict = field(default_factory=dict)
    modes_fitted: int = 0
    at_bound: tuple[str, ...] = ()

    def __post_init__(self):
        if not (np.isfinite(self.C) and self.C > 0):
            raise ValidationError(f"C must be > 0, got {self.C}")
        if not (np.isfinite(self.k0_sq) and self.k0_sq >= 0):
            raise ValidationError(f"k0_sq must be >= 0, got {self.k0_sq}")
        if not (np.isfinite(self.a) and self.a >= 0):
            raise ValidationError(f"a must be >= 0, got {self.a}")

    def __call__(self, k_sq: np.ndarray) -> np.ndarray:
        return self.C * (np.asarray(k_sq, dtype=np.float64) + self.k0_sq) ** (-self.a)

    def to_json(self) -> dict:
        return {
            "C": self.C,
            "k0_sq": self.k0_sq,
            "a": self.a,
            "stderr": dict(self.stderr),
            "modes_fitted": self.modes_fitted,
            "at_bound": list(self.at_bound),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PowerLawParams":
        try:
            return cls(
                C=float(obj["C"]),
                k0_sq=float(obj["k0_sq"]),
                a=float(obj["a"]),
                stderr=dict(obj.get("stderr", {})),
                modes_fitted=int(obj.get("modes_fitted", 0)),
                at_bound=tuple(obj.get("at_bound", ())),
            )
        except KeyError as exc:
            raise ValidationError(f"power-law params missing field {exc.args[0]!r}") from None


def eval_power_law(params: PowerLawParams, grid: FrequencyGrid, channels: int | None = None) -> VarianceSpectrum:
    """Tabulate ``C (k_mag^2 + k0_sq)^(-a)`` on ``grid``.

    With ``channels`` the same table is repeated along a leading channel axis.
    """
    k_sq = grid.k_mag**2
    if params.k0_sq == 0 and params.a > 0 and np.any(k_sq == 0):
        raise ValidationError("k0_sq = 0 gives infinite variance at the DC mode")
    vals = params(k_sq)
    if channels is not None:
        vals = np.broadcast_to(vals, (channels,) + vals.shape).copy()
    return VarianceSpectrum(vals)


def _decay_slope(log_ksq: np.ndarray, log_s: np.ndarray) -> float:
    A = np.vstack([log_ksq, np.ones_like(log_ksq)]).T
    slope, _ = np.linalg.lstsq(A, log_s, rcond=None)[0]
    return float(slope)


def fit_power_law(
    spectrum: VarianceSpectrum | np.ndarray,
    grid: FrequencyGrid,
    max_nfev: int = 2000,
) -> PowerLawParams:
    """Fit ``log S0 = log C - a log(k^2 + k0_sq)`` by nonlinear least squares.

    All non-DC modes are used (pooled over channels). Standard errors come
    from the Gauss-Newton covariance ``s^2 (J^T J)^-1`` at the optimum.

    Raises
    ------
    ValidationError
        Non-positive values on fitted modes, or a spectrum that does not decay
        with ``|k|`` (the model is degenerate there).
    NumericalError
        The solver exhausted ``max_nfev`` evaluations.
    """
    values = spectrum.values if isinstance(spectrum, VarianceSpectrum) else np.asarray(spectrum, float)
    if values.shape[-2:] != grid.shape:
        raise ValidationError(f"spectrum shape {values.shape} does not match grid {grid.shape}")
    mask = grid.k_mag > 0
    k_sq = np.broadcast_to(grid.k_mag**2, values.shape)[np.broadcast_to(mask, values.shape)]
    s = values[np.broadcast_to(mask, values.shape)]
    if s.size < 3:
        raise ValidationError("need at least 3 non-DC modes to fit a power law")
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ValidationError("spectrum must be strictly positive on every non-DC mode")
    log_s = np.log(s)
    if _decay_slope(np.log(k_sq), log_s) > -1e-3:
        raise ValidationError("spectrum does not decay with |k|; power-law fit is degenerate")

    a0, k0_0 = 1.0, np.pi**2
    i_low = int(np.argmin(k_sq))
    logc0 = log_s[i_low] + a0 * np.log(k_sq[i_low] + k0_0)

    def resid(p):
        logc, k0, a = p
        return log_s - logc + a * np.log(k_sq + k0)

    def jac(p):
        _, k0, a = p
        return np.column_stack([-np.ones_like(k_sq), a / (k_sq + k0), np.log(k_sq + k0)])

    res = least_squares(
        resid,
        x0=[logc0, k0_0, a0],
        jac=jac,
        bounds=([-np.inf, 0.0, 0.0], [np.inf, np.inf, np.inf]),
        method="trf",
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=max_nfev,
    )
    if res.status == 0:
        raise NumericalError(
            f"power-law fit did not converge in {max_nfev} evaluations; "
            f"last residual norm {np.linalg.norm(res.fun):.6g}"
        )
    logc, k0, a = (float(v) for v in res.x)
    J = res.jac
    dof = max(s.size - 3, 1)
    s2 = float(res.fun @ res.fun) / dof
    try:
        cov = s2 * np.linalg.inv(J.T @ J)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(3, np.inf)
    names = ("C", "k0_sq", "a")
    at_bound = tuple(n for n, act in zip(names, res.active_mask) if act != 0)
    C = float(np.exp(logc))
    return PowerLawParams(
        C=C,
        k0_sq=k0,
        a=a,
        stderr={"C": C * float(se[0]), "k0_sq": float(se[1]), "a": float(se[2])},
        modes_fitted=int(s.size),
        at_bound=at_bound,
    )
