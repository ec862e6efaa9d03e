"""Ancestral sampling, incremental cache, and the independence chain."""

import dataclasses

import numpy as np
import pytest

from spinvan.arnet import init_model, log_prob
from spinvan.exact import enumerate_boltzmann
from spinvan.lattice import LatticeGeometry, make_couplings
from spinvan.priors import make_prior, sample_prior
from spinvan.sampler import ancestral_sample, neural_mcmc_chain, sample_sites


def randomize(params, seed):
    rng = np.random.default_rng(seed)
    params.w1[:] = rng.standard_normal(params.w1.shape) * params.mask1
    params.b1[:] = 0.3 * rng.standard_normal(params.b1.shape)
    params.w2[:] = 0.7 * rng.standard_normal(params.w2.shape) * params.mask2
    params.b2[:] = 0.3 * rng.standard_normal(params.b2.shape)
    return params


def test_uniform_model_has_uniform_marginals():
    geom = LatticeGeometry(4)
    couplings = make_couplings("ferromagnetic", geom)
    params = init_model(geom, seed=0)
    spec = make_prior("ising", 0, 0.5, geom)
    rng = np.random.default_rng(1)
    batch = ancestral_sample(params, spec, couplings, 100000, rng)
    p_up = (batch.spins == 1).mean(axis=0)
    assert np.all(np.abs(p_up - 0.5) < 5 * 0.5 / np.sqrt(100000))
    assert np.allclose(batch.log_q, -16 * np.log(2.0), atol=1e-12)


def test_cached_log_q_matches_full_pass():
    geom = LatticeGeometry(6)
    couplings = make_couplings("ea-binary", geom, seed=5)
    for kind, cpl in (("ising", None), ("ea", couplings)):
        spec = make_prior(kind, 3, 0.6, geom, couplings=cpl)
        params = randomize(init_model(geom, seed=2), seed=3)
        rng = np.random.default_rng(4)
        batch = ancestral_sample(params, spec, couplings if cpl else make_couplings("ferromagnetic", geom), 4096, rng)
        recomputed = log_prob(params, spec, batch.spins)
        assert np.max(np.abs(batch.log_q - recomputed)) < 1e-12


def test_sampling_is_reproducible():
    geom = LatticeGeometry(4)
    couplings = make_couplings("ferromagnetic", geom)
    spec = make_prior("ising", 2, 0.44, geom)
    params = randomize(init_model(geom, seed=6), seed=7)
    a = ancestral_sample(params, spec, couplings, 128, np.random.default_rng(8))
    b = ancestral_sample(params, spec, couplings, 128, np.random.default_rng(8))
    assert np.array_equal(a.spins, b.spins)
    assert np.array_equal(a.log_q, b.log_q)
    assert np.array_equal(a.energies, b.energies)


def test_fresh_model_reproduces_prior_sampling():
    """With a zero second layer the sampler and the bare prior consume the
    same uniforms and must produce the same stream."""
    geom = LatticeGeometry(6)
    couplings = make_couplings("ferromagnetic", geom)
    spec = make_prior("ising", 2, 0.44, geom)
    params = init_model(geom, seed=9)
    batch = ancestral_sample(params, spec, couplings, 512, np.random.default_rng(10))
    prior_spins, prior_log_q = sample_prior(spec, 512, np.random.default_rng(10))
    assert np.array_equal(batch.spins, prior_spins)
    assert np.allclose(batch.log_q, prior_log_q, atol=1e-10)


def test_partial_sampling_and_cache_state():
    geom = LatticeGeometry(3)
    spec = make_prior("ising", 2, 0.5, geom)
    params = randomize(init_model(geom, seed=11), seed=12)
    rng = np.random.default_rng(13)
    spins, cache = sample_sites(params, spec, 32, rng, n_sites=5)
    assert cache.cursor == 5
    assert np.all(spins[:, 5:] == 0)
    assert np.all(np.abs(spins[:, :5]) == 1)
    assert np.all(cache.log_q <= 0)
    # full run: cached pre-activations equal the direct affine map
    spins, cache = sample_sites(params, spec, 32, rng)
    assert cache.cursor == 9
    direct = spins.astype(float) @ params.w1.T + params.b1
    assert np.allclose(cache.pre_activations, direct, atol=1e-12)


def test_sampled_frequencies_match_model_distribution():
    """Empirical frequencies on 2x2 agree with exp(log_prob) state by state."""
    geom = LatticeGeometry(2)
    couplings = make_couplings("ferromagnetic", geom)
    spec = make_prior("ising", 1, 0.5, geom)
    params = randomize(init_model(geom, hidden=6, seed=14), seed=15)
    idx_all = np.arange(16, dtype=np.uint32)
    configs = (1 - 2 * ((idx_all[:, None] >> np.arange(4, dtype=np.uint32)) & 1)).astype(np.int8)
    q = np.exp(log_prob(params, spec, configs))
    draws = 40000
    batch = ancestral_sample(params, spec, couplings, draws, np.random.default_rng(16))
    bits = (batch.spins < 0).astype(np.int64)
    idx = bits @ (1 << np.arange(4))
    counts = np.bincount(idx, minlength=16)
    sigma = np.sqrt(draws * q * (1 - q))
    assert np.all(np.abs(counts - draws * q) < 5 * sigma + 1e-9)


def test_chain_accepts_everything_when_model_is_exact():
    """A uniform proposal targeting an infinite-temperature system never
    rejects, because the weight ratio is identically one."""
    geom = LatticeGeometry(3)
    couplings = make_couplings("ferromagnetic", geom)
    spec = dataclasses.replace(make_prior("ising", 0, 0.5, geom), beta=0.0)
    params = init_model(geom, seed=0)
    configs, energies, rate = neural_mcmc_chain(params, spec, couplings, 500, np.random.default_rng(17))
    assert rate == 1.0
    assert np.array_equal(energies, [float(e) for e in map(int, energies)])


def test_chain_matches_enumeration_3x3():
    geom = LatticeGeometry(3)
    couplings = make_couplings("ferromagnetic", geom)
    beta = 0.44
    spec = make_prior("ising", 2, beta, geom)
    params = init_model(geom, seed=0)
    exact = enumerate_boltzmann(couplings, beta)
    chain_length = 20000
    configs, energies, rate = neural_mcmc_chain(
        params, spec, couplings, chain_length, np.random.default_rng(18)
    )
    assert 0.3 < rate < 1.0
    # block the correlated chain before comparing to the exact mean
    blocks = energies.reshape(100, -1).mean(axis=1)
    err = blocks.std(ddof=1) / np.sqrt(blocks.size)
    assert abs(blocks.mean() - exact.mean_energy) < 5 * err


def test_chain_rejects_bad_length():
    geom = LatticeGeometry(2)
    couplings = make_couplings("ferromagnetic", geom)
    spec = make_prior("ising", 1, 0.5, geom)
    params = init_model(geom, seed=0)
    with pytest.raises(ValueError):
        neural_mcmc_chain(params, spec, couplings, 0, np.random.default_rng(19))
