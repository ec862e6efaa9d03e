"""Classical Monte Carlo baselines: Wolff clusters for the ferromagnet,
sequential-scan Metropolis for arbitrary couplings, and parallel
tempering for the disordered models.

Energies of +-1 spins and +-1 couplings stay in integer arithmetic
throughout; acceptance tests exponentiate integer energy differences.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lattice import CouplingField, LatticeGeometry, energy, magnetization


class UnsupportedModelError(ValueError):
    pass


def neighbor_tables(couplings: CouplingField) -> tuple[np.ndarray, np.ndarray]:
    """(N, 4) neighbour indices and matching bond couplings, cached.

    Column order is right, left, down, up; the coupling column holds the
    bond shared with that neighbour.
    """
    cached = getattr(couplings, "_neighbor_tables", None)
    if cached is not None:
        return cached
    geom = couplings.geometry
    right = geom.right_indices()
    down = geom.down_indices()
    n = geom.n_sites
    left = np.empty(n, dtype=np.int64)
    left[right] = np.arange(n)
    up = np.empty(n, dtype=np.int64)
    up[down] = np.arange(n)
    nbr = np.stack([right, left, down, up], axis=1)
    jj = np.stack(
        [
            couplings.horizontal,
            couplings.horizontal[left],
            couplings.vertical,
            couplings.vertical[up],
        ],
        axis=1,
    ).astype(np.int64)
    couplings._neighbor_tables = (nbr, jj)
    return nbr, jj


@dataclass
class ChainState:
    """One Markov chain: spins, target beta, its own rng and counters."""

    spins: np.ndarray
    beta: float
    rng: np.random.Generator
    sweeps: int = 0
    proposed: int = 0
    accepted: int = 0

    @classmethod
    def random(
        cls, geometry: LatticeGeometry, beta: float, seed
    ) -> "ChainState":
        rng = np.random.default_rng(seed)
        spins = rng.choice(np.array([-1, 1], dtype=np.int8), size=geometry.n_sites)
        return cls(spins=spins, beta=beta, rng=rng)


def wolff_update(state: ChainState, couplings: CouplingField) -> int:
    """Grow and flip one Wolff cluster; returns the cluster size.

    Bonds parallel to the seed spin are activated with p = 1 - exp(-2 beta);
    only the uniform ferromagnet is supported.
    """
    if not getattr(couplings, "_ferro_ok", False):
        if not couplings.is_ferromagnetic():
            raise UnsupportedModelError(
                "wolff updates require a uniform ferromagnetic coupling field"
            )
        couplings._ferro_ok = True
    nbr, _ = neighbor_tables(couplings)
    spins = state.spins
    p_add = -math.expm1(-2.0 * state.beta)
    seed_site = int(state.rng.integers(spins.size))
    target = spins[seed_site]
    in_cluster = np.zeros(spins.size, dtype=bool)
    in_cluster[seed_site] = True
    frontier = np.array([seed_site])
    size = 1
    while frontier.size:
        cand = nbr[frontier].ravel()
        trial = (spins[cand] == target) & ~in_cluster[cand]
        accepted = cand[trial & (state.rng.random(cand.size) < p_add)]
        new = np.unique(accepted)
        new = new[~in_cluster[new]]
        if new.size == 0:
            break
        in_cluster[new] = True
        size += new.size
        frontier = new
    spins[in_cluster] = -spins[in_cluster]
    state.sweeps += 1
    return size


def metropolis_sweep(state: ChainState, couplings: CouplingField) -> int:
    """One fixed-order scan of single-spin flips; returns accepted count.

    Each site is proposed once, in site order, with acceptance
    min(1, exp(-beta dE)) evaluated from the four current neighbours.
    """
    nbr, jj = neighbor_tables(couplings)
    u = state.rng.random(state.spins.size)
    s = state.spins.tolist()
    nb = nbr.tolist()
    jl = jj.tolist()
    beta = state.beta
    accepted = 0
    for i in range(len(s)):
        n0, n1, n2, n3 = nb[i]
        j0, j1, j2, j3 = jl[i]
        de = 2 * s[i] * (j0 * s[n0] + j1 * s[n1] + j2 * s[n2] + j3 * s[n3])
        if de <= 0 or u[i] < math.exp(-beta * de):
            s[i] = -s[i]
            accepted += 1
    state.spins = np.array(s, dtype=np.int8)
    state.sweeps += 1
    state.proposed += len(s)
    state.accepted += accepted
    return accepted


def wolff_run(
    couplings: CouplingField,
    beta: float,
    updates: int,
    seed,
    burn_in: int = 1000,
    thin: int = 1,
    configs_out: list | None = None,
) -> tuple[np.ndarray, np.ndarray, ChainState]:
    """Wolff chain with burn-in and thinning; returns (energies, mags, state).

    A list passed as configs_out collects a copy of every retained
    configuration.
    """
    state = ChainState.random(couplings.geometry, beta, seed)
    energies = []
    mags = []
    for k in range(burn_in + updates):
        wolff_update(state, couplings)
        if k >= burn_in and (k - burn_in) % thin == 0:
            energies.append(int(energy(state.spins, couplings)))
            mags.append(int(magnetization(state.spins)))
            if configs_out is not None:
                configs_out.append(state.spins.copy())
    return np.array(energies, dtype=np.float64), np.array(mags, dtype=np.float64), state


def metropolis_run(
    couplings: CouplingField,
    beta: float,
    sweeps: int,
    seed,
    burn_in: int = 10000,
    thin: int = 10,
    configs_out: list | None = None,
) -> tuple[np.ndarray, np.ndarray, ChainState]:
    """Metropolis chain with burn-in and thinning; returns (energies, mags, state)."""
    state = ChainState.random(couplings.geometry, beta, seed)
    energies = []
    mags = []
    for k in range(burn_in + sweeps):
        metropolis_sweep(state, couplings)
        if k >= burn_in and (k - burn_in) % thin == 0:
            energies.append(int(energy(state.spins, couplings)))
            mags.append(int(magnetization(state.spins)))
            if configs_out is not None:
                configs_out.append(state.spins.copy())
    return np.array(energies, dtype=np.float64), np.array(mags, dtype=np.float64), state


@dataclass
class TemperingLadder:
    """Inverse-temperature ladder for replica exchange."""

    betas: np.ndarray
    swap_interval: int = 1

    def __post_init__(self) -> None:
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.size < 1:
            raise ValueError("ladder needs at least one rung")
        if np.any(np.diff(self.betas) < 0):
            raise ValueError("ladder betas must be non-decreasing")
        if self.swap_interval < 1:
            raise ValueError("swap interval must be positive")
        if self.betas.size == 1:
            warnings.warn("single-rung ladder degrades to plain Metropolis")


def geometric_ladder(beta_max: float, count: int = 16, beta_min: float = 0.1) -> np.ndarray:
    """Geometrically spaced betas from beta_min up to beta_max."""
    if count == 1:
        return np.array([beta_max])
    return beta_min * (beta_max / beta_min) ** (np.arange(count) / (count - 1))


@dataclass
class TemperingResult:
    betas: np.ndarray
    energies: np.ndarray        # (rungs, samples)
    magnetizations: np.ndarray  # (rungs, samples)
    configs: np.ndarray | None  # (samples, N) at the recorded rung
    swap_rates: np.ndarray      # (rungs - 1,)
    final_spins: np.ndarray = field(repr=False, default=None)


def _replica_sweep(
    spins: np.ndarray,
    betas: np.ndarray,
    u: np.ndarray,
    nbr: np.ndarray,
    jj: np.ndarray,
) -> None:
    # same fixed scan order as metropolis_sweep, advanced for all rungs at once
    for i in range(spins.shape[1]):
        de = 2.0 * spins[:, i] * (spins[:, nbr[i]] @ jj[i])
        flip = (de <= 0.0) | (u[:, i] < np.exp(-betas * np.maximum(de, 0.0)))
        spins[:, i] = np.where(flip, -spins[:, i], spins[:, i])


def parallel_tempering_run(
    ladder: TemperingLadder,
    couplings: CouplingField,
    sweeps: int,
    seed,
    burn_in: int = 10000,
    thin: int = 10,
    record_rung: int | None = None,
) -> TemperingResult:
    """Replica-exchange Metropolis over the ladder.

    Every replica owns an rng stream (SeedSequence children, one per rung,
    plus one for swap decisions).  After each swap_interval sweeps,
    adjacent pairs of alternating parity attempt a configuration exchange
    with acceptance min(1, exp((b_a - b_b)(E_a - E_b))).  Samples are
    recorded after burn_in every thin sweeps; record_rung selects the rung
    whose configurations are kept.
    """
    geom = couplings.geometry
    betas = ladder.betas
    rungs = betas.size
    if isinstance(seed, np.random.SeedSequence):
        children = seed.spawn(rungs + 1)
    else:
        children = np.random.SeedSequence(seed).spawn(rungs + 1)
    replica_rngs = [np.random.default_rng(s) for s in children[:rungs]]
    swap_rng = np.random.default_rng(children[rungs])
    nbr, jj = neighbor_tables(couplings)
    spins = np.stack(
        [r.choice(np.array([-1, 1], dtype=np.int8), size=geom.n_sites) for r in replica_rngs]
    ).astype(np.float64)
    energies: list[np.ndarray] = []
    mags: list[np.ndarray] = []
    configs: list[np.ndarray] = []
    swap_tries = np.zeros(max(rungs - 1, 1))
    swap_hits = np.zeros(max(rungs - 1, 1))
    parity = 0
    for sweep in range(1, burn_in + sweeps + 1):
        u = np.stack([r.random(geom.n_sites) for r in replica_rngs])
        _replica_sweep(spins, betas, u, nbr, jj)
        if sweep % ladder.swap_interval == 0 and rungs > 1:
            e = energy(spins.astype(np.int8), couplings).astype(np.float64)
            for k in range(parity, rungs - 1, 2):
                delta = (betas[k] - betas[k + 1]) * (e[k] - e[k + 1])
                swap_tries[k] += 1
                if delta >= 0.0 or swap_rng.random() < math.exp(delta):
                    spins[[k, k + 1]] = spins[[k + 1, k]]
                    e[[k, k + 1]] = e[[k + 1, k]]
                    swap_hits[k] += 1
            parity ^= 1
        if sweep > burn_in and (sweep - burn_in) % thin == 0:
            snap = spins.astype(np.int8)
            energies.append(energy(snap, couplings).astype(np.float64))
            mags.append(magnetization(snap).astype(np.float64))
            if record_rung is not None:
                configs.append(snap[record_rung].copy())
    with np.errstate(invalid="ignore"):
        rates = np.where(swap_tries > 0, swap_hits / np.maximum(swap_tries, 1), 0.0)
    return TemperingResult(
        betas=betas,
        energies=np.array(energies).T if energies else np.zeros((rungs, 0)),
        magnetizations=np.array(mags).T if mags else np.zeros((rungs, 0)),
        configs=np.array(configs, dtype=np.int8) if configs else None,
        swap_rates=rates[: max(rungs - 1, 0)],
        final_spins=spins.astype(np.int8),
    )
