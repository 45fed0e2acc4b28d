"""Evaluation layer: four-point correlator, paired bootstrap, bicubic reference.

``kappa4`` follows the corner convention ``s00 = s(i, j)``, ``s01 = s(i, j+d)``,
``s10 = s(i+d, j)``, ``s11 = s(i+d, j+d)`` averaged over all periodic
translations. ``C_a`` averages both edge orientations and ``C_b`` both
diagonals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from skild.errors import ValidationError
from skild.rng import make_rng
from skild.schedule import ScheduleSpec, build_tables, lambda_of_t
from skild.spectral import FrequencyGrid, dct2, frequency_grid, idct2, radial_average

DEFAULT_SIDES = (1, 2, 4, 8, 16, 32, 64)

__all__ = [
    "DEFAULT_SIDES",
    "BootstrapPlan",
    "Kappa4Row",
    "bicubic_down_up",
    "bicubic_resize",
    "compare_signal_vs_bicubic",
    "corner_moments",
    "kappa4",
    "paired_bootstrap",
    "psnr",
    "radial_spectrum_report",
    "to_spins",
]


def to_spins(fields: np.ndarray) -> np.ndarray:
    """Project real fields onto ``{-1, +1}`` by sign (zero maps to ``+1``)."""
    return np.where(np.asarray(fields) >= 0, 1.0, -1.0)


def corner_moments(fields: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-field translation averages of ``G4``, ``C_a``, ``C_b`` at side ``d``."""
    s = np.asarray(fields, dtype=np.float64)
    s01 = np.roll(s, -d, axis=-1)
    s10 = np.roll(s, -d, axis=-2)
    s11 = np.roll(s10, -d, axis=-1)
    ax = (-2, -1)
    g4 = (s * s01 * s10 * s11).mean(axis=ax)
    ca = 0.5 * ((s * s01).mean(axis=ax) + (s * s10).mean(axis=ax))
    cb = 0.5 * ((s * s11).mean(axis=ax) + (s01 * s10).mean(axis=ax))
    return g4, ca, cb


def _kappa_from_means(m: np.ndarray) -> float:
    return float(m[0] - 2.0 * m[1] ** 2 - m[2] ** 2)


@dataclass(frozen=True)
class BootstrapPlan:
    resamples: int = 1000
    confidence: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.resamples < 1:
            raise ValidationError(f"resamples must be >= 1, got {self.resamples}")
        if not 0 < self.confidence < 1:
            raise ValidationError(f"confidence must lie in (0, 1), got {self.confidence}")

    def index_rows(self, n: int) -> Iterator[np.ndarray]:
        """The shared index matrix, one row at a time (same rows on every call)."""
        rng = make_rng(self.seed)
        for _ in range(self.resamples):
            yield rng.integers(0, n, size=n)


def paired_bootstrap(
    values: Mapping[str, np.ndarray],
    plan: BootstrapPlan,
    statistic: Callable[[np.ndarray], float] | None = None,
) -> dict[str, tuple[float, float]]:
    """Percentile CIs of a statistic for several aligned methods.

    Each resample row of the shared index matrix is applied to every method,
    preserving the per-sample pairing. ``values[m]`` is ``(n,)`` or
    ``(n, k)``; the default statistic is the mean over samples.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in values.items()}
    lengths = {a.shape[0] for a in arrays.values()}
    if len(lengths) != 1:
        raise ValidationError(f"methods are not aligned: sample counts {sorted(lengths)}")
    n = lengths.pop()
    stat = statistic if statistic is not None else (lambda x: float(np.mean(x, axis=0)))
    draws = {k: np.empty(plan.resamples) for k in arrays}
    for r, idx in enumerate(plan.index_rows(n)):
        for k, a in arrays.items():
            draws[k][r] = stat(a[idx])
    q = (1.0 - plan.confidence) / 2.0
    return {k: (float(np.quantile(d, q)), float(np.quantile(d, 1.0 - q))) for k, d in draws.items()}


@dataclass(frozen=True)
class Kappa4Row:
    side: int
    G4: float
    C_a: float
    C_b: float
    kappa4: float
    ci_low: float
    ci_high: float
    samples: int
    thresholded: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def kappa4(
    fields,
    sides: Sequence[int] = DEFAULT_SIDES,
    plan: BootstrapPlan | None = None,
    threshold: bool | None = None,
) -> list[Kappa4Row]:
    """Connected four-point correlator ``G4 - 2 C_a^2 - C_b^2`` per side length.

    Non-spin inputs are sign-thresholded (``threshold=None`` decides
    automatically). With a ``plan``, ``ci_low``/``ci_high`` are paired
    bootstrap percentile bounds over images; otherwise they are NaN.
    """
    s = np.asarray(fields, dtype=np.float64)
    if s.ndim == 2:
        s = s[None]
    if s.ndim != 3 or s.shape[-1] != s.shape[-2]:
        raise ValidationError(f"expected square fields (n, L, L), got shape {s.shape}")
    L = s.shape[-1]
    is_spin = bool(np.all(np.abs(s) == 1))
    do_threshold = (not is_spin) if threshold is None else threshold
    if do_threshold:
        s = to_spins(s)
    elif not is_spin:
        raise ValidationError("fields are not +-1 valued; enable thresholding")
    rows = []
    for d in sides:
        if not 1 <= d < L:
            raise ValidationError(f"side {d} must satisfy 1 <= d < L={L}")
        per = np.column_stack(corner_moments(s, d))
        m = per.mean(axis=0)
        lo = hi = math.nan
        if plan is not None:
            lo, hi = paired_bootstrap({"k": per}, plan, lambda x: _kappa_from_means(x.mean(axis=0)))["k"]
        rows.append(Kappa4Row(int(d), *map(float, m), _kappa_from_means(m), lo, hi, s.shape[0], do_threshold))
    return rows


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    out = np.zeros_like(x)
    m1 = x <= 1
    m2 = (x > 1) & (x < 2)
    out[m1] = ((a + 2) * x[m1] - (a + 3)) * x[m1] ** 2 + 1
    out[m2] = (((x[m2] - 5) * x[m2] + 8) * x[m2] - 4) * a
    return out


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Antialiased bicubic weights mapping ``n_in`` samples to ``n_out``.

    Output pixel ``i`` is centred at ``(i + 1/2) * scale`` in input coordinates;
    on downsampling the kernel is stretched by ``scale``. Rows are normalised
    over the in-bounds taps.
    """
    scale = n_in / n_out
    support = 2.0 * max(scale, 1.0)
    inv = 1.0 / max(scale, 1.0)
    W = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * scale
        lo = max(int(math.floor(center - support)), 0)
        hi = min(int(math.ceil(center + support)), n_in)
        j = np.arange(lo, hi)
        w = _cubic((j + 0.5 - center) * inv)
        W[i, lo:hi] = w / w.sum()
    return W


def bicubic_resize(field: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    x = np.asarray(field, dtype=np.float64)
    Wh = _resample_matrix(x.shape[-2], out_h)
    Ww = _resample_matrix(x.shape[-1], out_w)
    return np.einsum("ij,...jk,lk->...il", Wh, x, Ww)


def bicubic_down_up(field: np.ndarray, factor: int) -> np.ndarray:
    """Antialiased bicubic downsample by ``factor`` then bicubic upsample back."""
    x = np.asarray(field, dtype=np.float64)
    h, w = x.shape[-2:]
    if factor < 1 or h % factor or w % factor:
        raise ValidationError(f"factor {factor} must divide both dimensions {h}x{w}")
    small = bicubic_resize(x, h // factor, w // factor)
    return bicubic_resize(small, h, w)


def psnr(mse: float, peak: float = 1.0) -> float:
    return math.inf if mse == 0 else 10.0 * math.log10(peak**2 / mse)


def compare_signal_vs_bicubic(
    x0: np.ndarray,
    spec: ScheduleSpec,
    n: int,
    factor: int,
    value_range: tuple[float, float] = (-1.0, 1.0),
) -> tuple[float, float]:
    """MSE and PSNR between the noise-free forward signal and bicubic down-up.

    ``x0`` is in ``value_range``; both images are mapped to ``[0, 1]`` before
    comparison (PSNR peak 1). The signal is ``idct2(sqrt(abar_n) dct2(x0))``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    lo, hi = value_range
    grid = frequency_grid(*x0.shape[-2:])
    tables = build_tables(spec, grid)
    signal = idct2(np.sqrt(tables.alpha_bar(n)) * dct2(x0))
    denorm = lambda v: (v - lo) / (hi - lo)  # noqa: E731
    ref = bicubic_down_up(denorm(x0), factor)
    mse = float(np.mean((denorm(signal) - ref) ** 2))
    return mse, psnr(mse)


def radial_spectrum_report(
    fields: np.ndarray,
    grid: FrequencyGrid,
    bins: int,
    spec: ScheduleSpec | None = None,
    t: float | None = None,
    tau: float = 0.1,
) -> list[dict]:
    """Radially binned mean DCT power, optionally flagged against the SNR cutoff.

    With ``spec`` and ``t``, each row carries ``k_thr`` and ``above_threshold``
    (bin centre below the threshold wavenumber, i.e. signal survives).
    """
    X = dct2(np.asarray(fields, dtype=np.float64))
    X = X.reshape((-1,) + grid.shape)
    power = (X**2).mean(axis=0)
    centers, means = radial_average(power, grid, bins)
    k_thr = None
    if spec is not None and t is not None:
        lam = lambda_of_t(spec, t)
        k_thr = math.inf if lam == 0 else math.sqrt(math.log1p(1.0 / tau) / lam)
    rows = []
    for c, m in zip(centers, means):
        row = {"k": float(c), "power": float(m)}
        if k_thr is not None:
            row["k_thr"] = k_thr
            row["above_threshold"] = bool(max(c, spec.k_c) <= k_thr)
        rows.append(row)
    return rows
