"""Exact references: full enumeration for small systems and the closed-form
free energy of the finite ferromagnetic torus.

Free energies follow the convention F = -log Z, i.e. beta is absorbed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import CouplingField, LatticeGeometry, energy, magnetization
from .logspace import logsumexp, signed_logsumexp

# Critical coupling of the square-lattice ferromagnet.
BETA_C = 0.5 * np.log(1.0 + np.sqrt(2.0))

ENUMERATION_LIMIT = 24


@dataclass
class EnumerationResult:
    """Boltzmann sums over every configuration of a small system.

    State index k encodes the configuration through its bits: bit j of k is
    0 where spin j is +1 and 1 where it is -1, so index 0 is the all-up
    state and site order matches the autoregressive (row-major) order.
    """

    geometry: LatticeGeometry
    beta: float
    energies: np.ndarray
    log_weights: np.ndarray
    log_z: float
    free_energy: float
    mean_energy: float
    mean_magnetization: float
    mean_abs_magnetization: float

    def spins(self, indices: np.ndarray) -> np.ndarray:
        """Decode state indices into +-1 configurations, one per row."""
        n = self.geometry.n_sites
        bits = (np.atleast_1d(indices)[:, None] >> np.arange(n)) & 1
        return (1 - 2 * bits).astype(np.int8)

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_z)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw configurations from the exact Boltzmann distribution."""
        idx = rng.choice(self.log_weights.size, size=count, p=self.probabilities())
        return self.spins(idx)


def enumerate_boltzmann(couplings: CouplingField, beta: float) -> EnumerationResult:
    """Enumerate all 2^N states of a system with N <= 24 sites."""
    geom = couplings.geometry
    n = geom.n_sites
    if n > ENUMERATION_LIMIT:
        raise ValueError(
            f"refusing to enumerate {n} sites; enumeration is limited to "
            f"{ENUMERATION_LIMIT} sites"
        )
    idx = np.arange(2**n, dtype=np.uint32)
    spins = (1 - 2 * ((idx[:, None] >> np.arange(n, dtype=np.uint32)) & 1)).astype(np.int8)
    e = energy(spins, couplings).astype(np.float64)
    lw = -beta * e
    log_z = logsumexp(lw)
    p = np.exp(lw - log_z)
    mag = magnetization(spins).astype(np.float64)
    return EnumerationResult(
        geometry=geom,
        beta=beta,
        energies=e,
        log_weights=lw,
        log_z=log_z,
        free_energy=-log_z,
        mean_energy=float(p @ e),
        mean_magnetization=float(p @ mag),
        mean_abs_magnetization=float(p @ np.abs(mag)),
    )


def _prefix_bits(prefix: np.ndarray, site: int) -> int:
    bits = 0
    for j in range(site):
        if prefix[j] == -1:
            bits |= 1 << j
    return bits


def exact_conditional(result: EnumerationResult, prefix: np.ndarray, site: int) -> float:
    """p(s_site = +1 | s_0..s_{site-1} = prefix) from the exact weights."""
    log_up, log_down = _conditional_log_parts(result, prefix, site)
    return float(np.exp(log_up - np.logaddexp(log_up, log_down)))


def exact_conditional_logit(result: EnumerationResult, prefix: np.ndarray, site: int) -> float:
    """log p(+1|prefix) - log p(-1|prefix), computed in log-space."""
    log_up, log_down = _conditional_log_parts(result, prefix, site)
    return float(log_up - log_down)


def _conditional_log_parts(result: EnumerationResult, prefix: np.ndarray, site: int) -> tuple[float, float]:
    n = result.geometry.n_sites
    if not 0 <= site < n:
        raise ValueError("site outside lattice")
    idx = np.arange(result.log_weights.size, dtype=np.uint32)
    mask = (1 << site) - 1
    matched = (idx & mask) == _prefix_bits(np.asarray(prefix), site)
    up_bit = ((idx >> site) & 1) == 0
    log_up = logsumexp(result.log_weights[matched & up_bit])
    log_down = logsumexp(result.log_weights[matched & ~up_bit])
    return log_up, log_down


def _log_2cosh(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax))


def _log_abs_2sinh(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    with np.errstate(divide="ignore"):
        return ax + np.log1p(-np.exp(-2.0 * ax))


def kaufman_free_energy(length: int, beta: float) -> float:
    """Exact total free energy -log Z of the L x L ferromagnetic torus.

    Z is assembled from four products over the transfer-matrix spectrum,

        Z = (1/2) (2 sinh 2b)^(N/2) (P1 + P2 + P3 + P4),

    with P1/P2 the products of 2cosh/2sinh(L g_r / 2) over odd r and P3/P4
    the same over even r.  For r > 0, cosh g_r = cosh 2b coth 2b - cos(pi
    r / L); g_0 = 2b + log tanh b carries a sign, which makes P4 negative
    below the critical coupling.  Everything runs in log-space so lattices
    well past L = 64 stay in range.
    """
    if length < 2:
        raise ValueError("length must be at least 2")
    if beta <= 0:
        raise ValueError("beta must be positive")
    n = length * length
    r = np.arange(2 * length)
    c = np.cosh(2 * beta) / np.tanh(2 * beta) - np.cos(np.pi * r / length)
    gamma = np.arccosh(np.maximum(c, 1.0))
    gamma[0] = 2 * beta + np.log(np.tanh(beta))
    x = 0.5 * length * gamma
    odd, even = x[1::2], x[0::2]
    log_terms = np.array(
        [
            _log_2cosh(odd).sum(),
            _log_abs_2sinh(odd).sum(),
            _log_2cosh(even).sum(),
            _log_abs_2sinh(even).sum(),
        ]
    )
    signs = np.array([1.0, 1.0, 1.0, np.sign(gamma[0]) if gamma[0] != 0.0 else 0.0])
    log_bracket, sign = signed_logsumexp(log_terms, signs)
    if sign <= 0.0:
        raise ArithmeticError("partition function came out non-positive")
    log_z = -np.log(2.0) + 0.5 * n * np.log(2.0 * np.sinh(2.0 * beta)) + log_bracket
    return float(-log_z)
