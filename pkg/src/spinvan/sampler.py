"""Ancestral sampling with an incremental hidden-state cache, plus an
independence-Metropolis chain driven by the model as proposal.

Sampling one site costs a rank-1 cache update and one output-row product
instead of a full forward pass: after fixing spin i, the cached hidden
pre-activations equal b1 + w1[:, :i+1] @ s[:i+1], and the logit of the
next site reads the activation of that cache through one row of w2.
Prior logits are evaluated through the per-site factor tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arnet import ModelParameters, leaky_relu
from .lattice import CouplingField, energy
from .logspace import log_sigmoid
from .priors import PriorSpec, prior_logits_site_batch


@dataclass
class SamplerCache:
    """Running state of a batched ancestral pass."""

    pre_activations: np.ndarray  # (M, H): b1 + w1[:, :cursor] @ s[:cursor]
    outputs: np.ndarray          # (M, N): h_i for sites already sampled
    log_q: np.ndarray            # (M,)
    cursor: int = 0


@dataclass
class SampleBatch:
    spins: np.ndarray
    log_q: np.ndarray
    energies: np.ndarray

    @property
    def size(self) -> int:
        return self.spins.shape[0]


def init_cache(params: ModelParameters, count: int) -> SamplerCache:
    return SamplerCache(
        pre_activations=np.tile(params.b1, (count, 1)),
        outputs=np.zeros((count, params.geometry.n_sites)),
        log_q=np.zeros(count),
        cursor=0,
    )


def sample_sites(
    params: ModelParameters,
    spec: PriorSpec,
    count: int,
    rng: np.random.Generator,
    n_sites: int | None = None,
) -> tuple[np.ndarray, SamplerCache]:
    """Sample the first n_sites spins ancestrally (all sites by default).

    Consumes one uniform variate per (sample, site) in site-major order.
    Returns the int8 spin batch (entries beyond the cursor are zero) and
    the cache for inspection.
    """
    n = params.geometry.n_sites
    n_sites = n if n_sites is None else n_sites
    cache = init_cache(params, count)
    spins = np.zeros((count, n), dtype=np.int8)
    for i in range(n_sites):
        a = leaky_relu(cache.pre_activations, params.alpha)
        h = a @ params.w2[i] + params.b2[i]
        logit = h + prior_logits_site_batch(spec, spins, i)
        u = rng.random(count)
        s = np.where(u < 0.5 * (1.0 + np.tanh(0.5 * logit)), 1, -1).astype(np.int8)
        spins[:, i] = s
        s_f = s.astype(np.float64)
        cache.outputs[:, i] = h
        cache.log_q += log_sigmoid(s_f * logit)
        cache.pre_activations += s_f[:, None] * params.w1[:, i][None, :]
        cache.cursor = i + 1
    return spins, cache


def ancestral_sample(
    params: ModelParameters,
    spec: PriorSpec,
    couplings: CouplingField,
    count: int,
    rng: np.random.Generator,
) -> SampleBatch:
    """Draw a batch of configurations with their log q and energies."""
    spins, cache = sample_sites(params, spec, count, rng)
    return SampleBatch(spins=spins, log_q=cache.log_q, energies=energy(spins, couplings).astype(np.float64))


def neural_mcmc_chain(
    params: ModelParameters,
    spec: PriorSpec,
    couplings: CouplingField,
    chain_length: int,
    rng: np.random.Generator,
    block: int = 256,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Independence Metropolis with the model as proposal.

    Proposals are drawn in blocks; each accept test compares
    -beta E - log q between proposal and current state.  The first
    proposal starts the chain.  Returns (configs, energies, acceptance
    rate over the remaining chain_length - 1 steps).
    """
    if chain_length < 1:
        raise ValueError("chain length must be positive")
    n = params.geometry.n_sites
    beta = spec.beta
    configs = np.empty((chain_length, n), dtype=np.int8)
    energies = np.empty(chain_length)
    accepted = 0
    produced = 0
    cur_spins = None
    cur_score = -np.inf
    while produced < chain_length:
        batch = ancestral_sample(params, spec, couplings, min(block, chain_length - produced), rng)
        scores = -beta * batch.energies - batch.log_q
        u = rng.random(batch.size)
        for j in range(batch.size):
            if cur_spins is None:
                cur_spins, cur_energy, cur_score = batch.spins[j], batch.energies[j], scores[j]
            elif np.log(u[j]) < scores[j] - cur_score:
                cur_spins, cur_energy, cur_score = batch.spins[j], batch.energies[j], scores[j]
                accepted += 1
            configs[produced] = cur_spins
            energies[produced] = cur_energy
            produced += 1
    rate = accepted / (chain_length - 1) if chain_length > 1 else 1.0
    return configs, energies, rate
