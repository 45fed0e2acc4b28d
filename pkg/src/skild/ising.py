"""Critical 2-D Ising data: Wolff cluster sampler, exact enumeration, forward init.

Spins live on an ``L x L`` periodic square lattice with coupling ``J = 1``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from skild.ddpm import DiffusionState, forward_marginal
from skild.errors import ValidationError
from skild.rng import chain_rng
from skild.schedule import CoefficientTables, ScheduleSpec, build_tables
from skild.spectral import dct2, frequency_grid
from skild.spectrum import PowerLawParams, eval_power_law

BETA_C = 0.5 * math.log(1.0 + math.sqrt(2.0))

# front scales put the t = 1 effective resolution at L/4 for L = 128 (tau = 0.1)
ISING_SCHEDULE = ScheduleSpec("linear", lambda_i=564.2461, lambda_f=275.4361, theta=9.0, k_c=0.0, N=1000)
ISING_S0 = PowerLawParams(C=0.26641, k0_sq=3.0, a=0.811056)

__all__ = [
    "BETA_C",
    "ISING_S0",
    "ISING_SCHEDULE",
    "WolffChain",
    "bond_probability",
    "wolff_step",
    "exact_enumeration",
    "generate_dataset",
    "ising_forward_init",
    "ising_schedule",
    "random_lattice",
]


def bond_probability(beta: float) -> float:
    return -math.expm1(-2.0 * beta)


def random_lattice(L: int, rng: np.random.Generator) -> np.ndarray:
    return np.where(rng.random((L, L)) < 0.5, -1, 1).astype(np.int8)


def _neighbours(L: int) -> list[tuple[int, int, int, int]]:
    nb = []
    for i in range(L):
        for j in range(L):
            nb.append(
                (
                    ((i + 1) % L) * L + j,
                    ((i - 1) % L) * L + j,
                    i * L + (j + 1) % L,
                    i * L + (j - 1) % L,
                )
            )
    return nb


class WolffChain:
    """One Wolff Markov chain.

    Uniform draws come from a buffered stream of the chain's generator and
    are consumed in a fixed order: one seed index per step, then one uniform
    per candidate bond in breadth-first order.
    """

    _BUF = 4096

    def __init__(self, lattice: np.ndarray, beta: float, rng: np.random.Generator):
        lattice = np.asarray(lattice)
        if lattice.ndim != 2 or lattice.shape[0] != lattice.shape[1]:
            raise ValidationError(f"lattice must be square, got shape {lattice.shape}")
        if not np.all(np.abs(lattice) == 1):
            raise ValidationError("lattice entries must be -1 or +1")
        if beta < 0:
            raise ValidationError(f"beta must be >= 0, got {beta}")
        self.L = lattice.shape[0]
        self.beta = float(beta)
        self.p = bond_probability(beta) if math.isfinite(beta) else 1.0
        self.rng = rng
        self.flipped_since_save = 0
        self._s = [int(v) for v in lattice.ravel()]
        self._nb = _neighbours(self.L)
        self._buf = rng.random(self._BUF)
        self._pos = 0

    @property
    def spins(self) -> np.ndarray:
        return np.array(self._s, dtype=np.int8).reshape(self.L, self.L)

    def _uniform(self) -> float:
        if self._pos == self._BUF:
            self._buf = self.rng.random(self._BUF)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def step(self) -> int:
        """Grow and flip one cluster; return its size."""
        s, nb, p = self._s, self._nb, self.p
        n_sites = self.L * self.L
        seed = int(self._uniform() * n_sites)
        s_star = s[seed]
        in_cluster = {seed}
        frontier = deque([seed])
        while frontier:
            site = frontier.popleft()
            for nbr in nb[site]:
                if s[nbr] == s_star and nbr not in in_cluster and self._uniform() < p:
                    in_cluster.add(nbr)
                    frontier.append(nbr)
        for site in in_cluster:
            s[site] = -s_star
        size = len(in_cluster)
        self.flipped_since_save += size
        return size


wolff_step = WolffChain.step


@dataclass
class IsingDataset:
    samples: list[np.ndarray]
    manifest: dict = field(default_factory=dict)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)


def generate_dataset(
    L: int,
    chains: int,
    burn_in: int,
    samples: int,
    seed: int,
    beta: float = BETA_C,
    spacing: int | None = None,
    chain_offset: int = 0,
    spacing_unit: str = "flips",
) -> IsingDataset:
    """Run ``chains`` Wolff chains and save configurations on the spacing gate.

    After ``burn_in`` steps per chain, the current configuration of every
    chain is saved (in chain order) whenever each chain has flipped at least
    ``spacing`` spins since the previous save (default ``2 L^2``).

    With ``spacing_unit="steps"`` every chain instead advances exactly
    ``spacing`` Wolff steps between saves. The flip-count gate is a stopping
    rule that favours states reached by a large cluster, which biases
    observables on small lattices; the step gate is unbiased.
    """
    if L < 2 or chains < 1 or burn_in < 0 or samples < 0:
        raise ValidationError("need L >= 2, chains >= 1, burn_in >= 0, samples >= 0")
    if spacing_unit not in ("flips", "steps"):
        raise ValidationError(f"spacing_unit must be 'flips' or 'steps', got {spacing_unit!r}")
    if spacing is None:
        spacing = 2 * L * L if spacing_unit == "flips" else 1
    spacing = int(spacing)
    if spacing < 1:
        raise ValidationError(f"spacing must be >= 1, got {spacing}")
    runs = []
    for c in range(chains):
        rng = chain_rng(seed, chain_offset + c)
        runs.append(WolffChain(random_lattice(L, rng), beta, rng))
    for ch in runs:
        for _ in range(burn_in):
            ch.step()
        ch.flipped_since_save = 0
    out: list[np.ndarray] = []
    while len(out) < samples:
        for ch in runs:
            if spacing_unit == "steps":
                for _ in range(spacing):
                    ch.step()
            else:
                while ch.flipped_since_save < spacing:
                    ch.step()
        for ch in runs:
            if len(out) < samples:
                out.append(ch.spins)
            ch.flipped_since_save = 0
    manifest = {
        "generator": "wolff",
        "L": L,
        "beta": beta,
        "p": bond_probability(beta),
        "chains": chains,
        "chain_offset": chain_offset,
        "burn_in": burn_in,
        "spacing": spacing,
        "spacing_unit": spacing_unit,
        "samples": samples,
        "seed": int(seed),
        "boundary": "periodic",
    }
    return IsingDataset(out, manifest)


def _all_configs(L: int) -> np.ndarray:
    n = L * L
    codes = np.arange(1 << n, dtype=np.uint32)
    bits = (codes[:, None] >> np.arange(n, dtype=np.uint32)) & 1
    return (2 * bits.astype(np.int8) - 1).reshape(-1, L, L)


def exact_enumeration(L: int, beta: float, sides=(1,)) -> dict:
    """Exact Boltzmann averages over all ``2^(L^2)`` periodic configurations.

    Returns energy per site, ``|m|``, axis pair correlators ``C(r)`` and the
    four-corner moments ``G4``, ``C_a``, ``C_b``, ``kappa4`` for each side.
    """
    from skild.observables import corner_moments

    if not 1 <= L <= 4:
        raise ValidationError(f"exact enumeration supports L <= 4, got {L}")
    for d in sides:
        if not 1 <= d < L:
            raise ValidationError(f"side {d} must satisfy 1 <= d < L={L}")
    cfg = _all_configs(L).astype(np.float64)
    bonds = (cfg * np.roll(cfg, -1, axis=1) + cfg * np.roll(cfg, -1, axis=2)).sum(axis=(1, 2))
    if math.isinf(beta):
        logw = np.where(bonds == bonds.max(), 0.0, -np.inf)
    else:
        logw = beta * bonds
    logw = logw - logw.max()
    w = np.exp(logw)
    Z = w.sum()
    p = w / Z

    def avg(x):
        return float(p @ x)

    mag = cfg.mean(axis=(1, 2))
    pair = {r: avg((cfg * np.roll(cfg, -r, axis=2)).mean(axis=(1, 2))) for r in range(L)}
    out = {
        "L": L,
        "beta": beta,
        "states": int(cfg.shape[0]),
        "log_Z": float(np.log(Z) + (beta * bonds.max() if math.isfinite(beta) else 0.0)),
        "energy": avg(-bonds / (L * L)),
        "abs_m": avg(np.abs(mag)),
        "m2": avg(mag**2),
        "pair": pair,
        "corners": {},
    }
    for d in sides:
        g4, ca, cb = (avg(v) for v in corner_moments(cfg, d))
        out["corners"][int(d)] = {"G4": g4, "C_a": ca, "C_b": cb, "kappa4": g4 - 2 * ca**2 - cb**2}
    return out


def ising_schedule(L: int) -> ScheduleSpec:
    """The Ising schedule rescaled from ``L = 128`` to an ``L x L`` lattice."""
    return ISING_SCHEDULE if L == 128 else ISING_SCHEDULE.scaled(L / 128)


def ising_forward_init(
    lattice: np.ndarray,
    n0: int,
    spec: ScheduleSpec | None = None,
    S0_params: PowerLawParams = ISING_S0,
    rng: np.random.Generator | None = None,
    tables: CoefficientTables | None = None,
) -> DiffusionState:
    """DCT a spin field (or a batch of them) and sample the forward marginal at ``n0``."""
    lattice = np.asarray(lattice, dtype=np.float64)
    L = lattice.shape[-1]
    grid = frequency_grid(L, L)
    if tables is None:
        tables = build_tables(spec if spec is not None else ising_schedule(L), grid)
    S0 = eval_power_law(S0_params, grid)
    rng = rng if rng is not None else np.random.default_rng()
    return forward_marginal(dct2(lattice), n0, tables, S0, rng)
