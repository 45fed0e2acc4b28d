"""Schedule families, per-mode DDPM coefficients, SNR and effective resolution.

Two families are supported, both carrying a multiplicative ``t`` so that
``lambda(0) = 0``:

* ``log_linear``: ``lambda(t) = t * 10**(lambda_i + (lambda_f - lambda_i) t)``
* ``linear``:     ``lambda(t) = theta t / (lambda_i (1 - t) + lambda_f t)**2``

In the linear family ``lambda_i`` and ``lambda_f`` are the wavenumber scales of
the damping front at the start and end of the process. The timestep grid is
uniform, ``t_n = n / N``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from skild.errors import ValidationError
from skild.spectral import FrequencyGrid

ALPHA_FLOOR = 1e-6
FAMILIES = ("log_linear", "linear")

__all__ = [
    "ALPHA_FLOOR",
    "CoefficientTables",
    "ScheduleSpec",
    "build_tables",
    "choose_start_timestep",
    "effective_resolution",
    "lambda_dot",
    "lambda_of_t",
    "snr",
]


@dataclass(frozen=True)
class ScheduleSpec:
    family: str
    lambda_i: float
    lambda_f: float
    theta: float | None = None
    k_c: float = 0.0
    N: int = 1000

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"family: must be one of {FAMILIES}, got {self.family!r}")
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N < 1:
            raise ValidationError(f"N: must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        for name in ("lambda_i", "lambda_f", "k_c"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"{name}: must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.k_c < 0:
            raise ValidationError(f"k_c: must be >= 0, got {self.k_c}")
        if self.family == "linear":
            if self.theta is None or not math.isfinite(self.theta) or self.theta <= 0:
                raise ValidationError(f"theta: linear family needs theta > 0, got {self.theta!r}")
            object.__setattr__(self, "theta", float(self.theta))
            if self.lambda_i <= 0 or self.lambda_f <= 0:
                raise ValidationError("lambda_i, lambda_f: linear family needs positive front scales")
        t = np.linspace(0.0, 1.0, 10_001)
        lam = lambda_of_t(self, t)
        if not np.all(np.isfinite(lam)) or not np.all(np.diff(lam) > 0):
            raise ValidationError("schedule: lambda(t) is not strictly increasing on (0, 1]")

    def to_json(self) -> dict:
        d = asdict(self)
        if self.family != "linear":
            d.pop("theta")
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ScheduleSpec":
        known = {"family", "lambda_i", "lambda_f", "theta", "k_c", "N"}
        extra = set(obj) - known
        if extra:
            raise ValidationError(f"{sorted(extra)[0]}: unknown schedule field")
        for req in ("family", "lambda_i", "lambda_f"):
            if req not in obj:
                raise ValidationError(f"{req}: required field missing")
        return cls(**{k: obj[k] for k in known if k in obj})

    def times(self) -> np.ndarray:
        return np.arange(self.N + 1, dtype=np.float64) / self.N

    def scaled(self, factor: float) -> "ScheduleSpec":
        """Rescale the linear-family front scales to a grid ``factor`` times larger."""
        if self.family != "linear":
            raise ValidationError("only linear schedules carry wavenumber front scales")
        return ScheduleSpec(
            "linear", self.lambda_i * factor, self.lambda_f * factor, self.theta, self.k_c * factor, self.N
        )


def lambda_of_t(spec: ScheduleSpec, t):
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0) | (t > 1)):
        raise ValidationError("t must lie in [0, 1]")
    if spec.family == "log_linear":
        out = t * 10.0 ** (spec.lambda_i + (spec.lambda_f - spec.lambda_i) * t)
    else:
        denom = spec.lambda_i * (1.0 - t) + spec.lambda_f * t
        if np.any(denom <= 0):
            raise ValidationError("linear schedule denominator is not positive")
        out = spec.theta * t / denom**2
    return out if out.ndim else float(out)


def lambda_dot(spec: ScheduleSpec, t):
    """Closed-form ``d lambda / dt``."""
    t = np.asarray(t, dtype=np.float64)
    if spec.family == "log_linear":
        d = spec.lambda_f - spec.lambda_i
        out = 10.0 ** (spec.lambda_i + d * t) * (1.0 + t * math.log(10.0) * d)
    else:
        denom = spec.lambda_i * (1.0 - t) + spec.lambda_f * t
        slope = spec.lambda_f - spec.lambda_i
        out = spec.theta * (denom - 2.0 * t * slope) / denom**3
    return out if out.ndim else float(out)


class CoefficientTables:
    """Per-mode DDPM coefficients for one schedule on one grid.

    Rows are computed on demand from ``lambda_n`` so memory stays
    ``O(H W)`` for large grids. ``alpha_bar(0)`` is identically one.
    """

    def __init__(self, spec: ScheduleSpec, grid: FrequencyGrid):
        if grid.k_c != spec.k_c:
            grid = grid.with_cutoff(spec.k_c)
        self.spec = spec
        self.grid = grid
        self.N = spec.N
        self.t = spec.times()
        self.lam = np.asarray(lambda_of_t(spec, self.t))
        self.k_sq = grid.k_eff_sq

    def _check(self, n: int, lo: int = 0) -> int:
        if not lo <= n <= self.N:
            raise ValidationError(f"timestep {n} outside [{lo}, {self.N}]")
        return int(n)

    def alpha_bar(self, n: int) -> np.ndarray:
        n = self._check(n)
        return np.exp(-self.k_sq * self.lam[n])

    def one_minus_alpha_bar(self, n: int) -> np.ndarray:
        n = self._check(n)
        return -np.expm1(-self.k_sq * self.lam[n])

    def alpha(self, n: int, floored: bool = False) -> np.ndarray:
        n = self._check(n, 1)
        a = np.exp(-self.k_sq * (self.lam[n] - self.lam[n - 1]))
        return np.maximum(a, ALPHA_FLOOR) if floored else a

    def beta(self, n: int) -> np.ndarray:
        n = self._check(n, 1)
        return -np.expm1(-self.k_sq * (self.lam[n] - self.lam[n - 1]))

    def beta_tilde(self, n: int) -> np.ndarray:
        n = self._check(n, 1)
        om = self.one_minus_alpha_bar(n)
        num = self.beta(n) * self.one_minus_alpha_bar(n - 1)
        out = np.zeros_like(om)
        np.divide(num, om, out=out, where=om > 0)
        return out

    def snr(self, n: int) -> np.ndarray:
        ab = self.alpha_bar(n)
        om = self.one_minus_alpha_bar(n)
        out = np.full_like(ab, np.inf)
        np.divide(ab, om, out=out, where=om > 0)
        return out


def build_tables(spec: ScheduleSpec, grid: FrequencyGrid) -> CoefficientTables:
    return CoefficientTables(spec, grid)


def snr(tables: CoefficientTables, n: int) -> np.ndarray:
    """``alpha_bar / (1 - alpha_bar)`` per mode; ``+inf`` where no noise is injected."""
    return tables.snr(n)


def effective_resolution(spec: ScheduleSpec, t: float, tau: float, size: int | None = None) -> float:
    """Continuous effective resolution at time ``t`` for SNR threshold ``tau``.

    The threshold wavenumber solves ``SNR(k) = tau``; dividing by ``sqrt(2) pi``
    converts it to a diagonal mode index. Returns ``inf`` (or ``size``) when
    ``lambda(t) = 0``.
    """
    if not tau > 0:
        raise ValidationError(f"threshold must be > 0, got {tau}")
    lam = lambda_of_t(spec, t)
    if lam <= 0:
        return float(size) if size is not None else math.inf
    k_thr = math.sqrt(math.log1p(1.0 / tau) / lam)
    r = k_thr / (math.sqrt(2.0) * math.pi)
    if size is not None:
        r = min(max(r, 0.0), float(size))
    return r


def choose_start_timestep(spec: ScheduleSpec, target_resolution: float, tau: float) -> int:
    """Smallest ``n`` whose effective resolution is at or below the target."""
    r = np.array([effective_resolution(spec, n / spec.N, tau) for n in range(1, spec.N + 1)])
    lo, hi = r[-1], r[0]
    if not lo <= target_resolution <= hi:
        raise ValidationError(
            f"target resolution {target_resolution} not achievable; range is [{lo:.6g}, {hi:.6g}]"
        )
    return int(np.flatnonzero(r <= target_resolution)[0]) + 1
