"""Masked autoregressive network: ordering, probabilities, checkpoints."""

import numpy as np
import pytest

from spinvan.arnet import (
    CheckpointError,
    build_masks,
    conditional_probs,
    forward,
    init_model,
    load_checkpoint,
    log_prob,
    rng_from_state_string,
    rng_state_string,
    save_checkpoint,
    write_atomic,
)
from spinvan.lattice import LatticeGeometry, make_couplings, save_couplings
from spinvan.logspace import sigmoid
from spinvan.priors import make_prior, prior_logits_batched


def randomize(params, seed):
    """Fill every unmasked weight with noise; masked entries stay zero."""
    rng = np.random.default_rng(seed)
    params.w1[:] = rng.standard_normal(params.w1.shape) * params.mask1
    params.b1[:] = 0.3 * rng.standard_normal(params.b1.shape)
    params.w2[:] = rng.standard_normal(params.w2.shape) * params.mask2
    params.b2[:] = 0.3 * rng.standard_normal(params.b2.shape)
    return params


def random_spins(rng, count, n):
    return rng.choice(np.array([-1, 1], dtype=np.int8), size=(count, n))


def all_configs(n):
    idx = np.arange(2**n, dtype=np.uint32)
    return (1 - 2 * ((idx[:, None] >> np.arange(n, dtype=np.uint32)) & 1)).astype(np.int8)


def test_mask_composition_is_strictly_lower_triangular():
    for n, hidden in ((9, 9), (16, 7), (4, 40)):
        mask1, mask2 = build_masks(n, hidden)
        reach = mask2 @ mask1
        for i in range(n):
            assert np.all(reach[i, i:] == 0.0)
    # every later output keeps some dependence on earlier inputs
    mask1, mask2 = build_masks(9, 9)
    reach = mask2 @ mask1
    assert np.all(reach[np.tril_indices(9, k=-1)] > 0)


def test_forward_zero_weights_is_zero():
    geom = LatticeGeometry(3)
    params = init_model(geom, seed=0)
    params.w1[:] = 0.0
    rng = np.random.default_rng(1)
    spins = random_spins(rng, 8, 9)
    assert np.all(forward(params, spins) == 0.0)


def test_output_ignores_current_and_future_inputs():
    geom = LatticeGeometry(3)
    params = randomize(init_model(geom, hidden=13, seed=2), seed=3)
    rng = np.random.default_rng(4)
    base = random_spins(rng, 20, 9)
    h0 = forward(params, base)
    for j in range(9):
        flipped = base.copy()
        flipped[:, j] *= -1
        h1 = forward(params, flipped)
        assert np.array_equal(h1[:, : j + 1], h0[:, : j + 1])
        if j < 8:
            assert not np.array_equal(h1[:, j + 1 :], h0[:, j + 1 :])


def test_first_output_is_its_bias():
    geom = LatticeGeometry(3)
    params = randomize(init_model(geom, seed=5), seed=6)
    rng = np.random.default_rng(7)
    spins = random_spins(rng, 16, 9)
    assert np.allclose(forward(params, spins)[:, 0], params.b2[0], atol=0)


def test_init_is_deterministic():
    geom = LatticeGeometry(4)
    a = init_model(geom, seed=11)
    b = init_model(geom, seed=11)
    c = init_model(geom, seed=12)
    assert np.array_equal(a.w1, b.w1)
    assert not np.array_equal(a.w1, c.w1)
    assert a.hidden == geom.n_sites


def test_init_respects_masks_and_zeros():
    geom = LatticeGeometry(4)
    params = init_model(geom, hidden=10, seed=1)
    assert np.all(params.w1 * (1 - params.mask1) == 0.0)
    assert np.all(params.w2 == 0.0)
    assert np.all(params.b1 == 0.0)
    assert np.all(params.b2 == 0.0)
    with pytest.raises(ValueError):
        init_model(geom, hidden=0)


def test_conditional_probs_zero_model():
    geom = LatticeGeometry(4)
    params = init_model(geom, seed=0)
    spec = make_prior("ising", 1, 0.5, geom)
    spins = np.ones((1, 16), dtype=np.int8)
    q = conditional_probs(params, spec, spins)[0]
    assert q[0] == 0.5
    # interior site with both fixed neighbors up: logit 2.0
    assert np.isclose(q[geom.site(2, 2)], 1.0 / (1.0 + np.exp(-2.0)), atol=1e-12)
    assert np.isclose(q[geom.site(2, 2)], 0.880797, atol=1e-6)
    assert np.all((q > 0) & (q < 1))


def test_conditional_probs_logit_roundtrip():
    geom = LatticeGeometry(3)
    params = randomize(init_model(geom, seed=8), seed=9)
    spec = make_prior("ising", 2, 0.44, geom)
    rng = np.random.default_rng(10)
    spins = random_spins(rng, 12, 9)
    logits = forward(params, spins) + prior_logits_batched(spec, spins)
    q = conditional_probs(params, spec, spins)
    keep = np.abs(logits) <= 20
    recovered = np.log(q[keep]) - np.log1p(-q[keep])
    assert np.allclose(recovered, logits[keep], atol=1e-10)


def test_log_prob_uniform_model():
    geom = LatticeGeometry(4)
    params = init_model(geom, seed=0)
    spec = make_prior("ising", 0, 0.7, geom)
    rng = np.random.default_rng(11)
    spins = random_spins(rng, 6, 16)
    assert np.allclose(log_prob(params, spec, spins), -16 * np.log(2.0), atol=1e-12)


def test_log_prob_equals_per_site_sum():
    geom = LatticeGeometry(3)
    params = randomize(init_model(geom, seed=13), seed=14)
    spec = make_prior("ising", 3, 0.5, geom)
    rng = np.random.default_rng(15)
    spins = random_spins(rng, 10, 9)
    q = conditional_probs(params, spec, spins)
    per_site = np.where(spins == 1, q, 1.0 - q)
    assert np.allclose(log_prob(params, spec, spins), np.log(per_site).sum(axis=1), atol=1e-12)


def test_log_prob_normalizes_exhaustively():
    geom = LatticeGeometry(3)
    couplings = make_couplings("ea-binary", geom, seed=4)
    configs = all_configs(9)
    for kind, cpl in (("ising", None), ("ea", couplings)):
        spec = make_prior(kind, 2, 0.6, geom, couplings=cpl)
        params = randomize(init_model(geom, hidden=11, seed=16), seed=17)
        total = np.exp(log_prob(params, spec, configs)).sum()
        assert np.isclose(total, 1.0, atol=1e-12)


def test_log_prob_hand_set_weights_2x2():
    geom = LatticeGeometry(2)
    params = init_model(geom, hidden=4, seed=0)
    params.w1[:] = 0.7 * params.mask1
    params.b1[:] = np.array([0.1, -0.2, 0.3, 0.0])
    params.w2[:] = -0.5 * params.mask2
    params.b2[:] = np.array([0.2, 0.0, -0.1, 0.4])
    spec = make_prior("ising", 1, 0.5, geom)
    configs = all_configs(4)
    log_q = log_prob(params, spec, configs)
    assert np.isclose(np.exp(log_q).sum(), 1.0, atol=1e-12)
    assert np.all(log_q < 0)
    # site 0 of every configuration is governed by sigma(b2[0])
    q0 = sigmoid(np.array(0.2))
    up = configs[:, 0] == 1
    direct = np.where(up, q0, 1 - q0)
    other = np.exp(log_q) / direct
    assert np.isclose(other[up].sum(), 1.0, atol=1e-12)
    assert np.isclose(other[~up].sum(), 1.0, atol=1e-12)


def test_rng_state_string_roundtrip():
    rng = np.random.default_rng(99)
    rng.random(17)
    clone = rng_from_state_string(rng_state_string(rng))
    assert np.array_equal(clone.random(32), rng.random(32))


def test_write_atomic_replaces_content(tmp_path):
    path = tmp_path / "file.txt"
    write_atomic(str(path), "first\n")
    write_atomic(str(path), "second\n")
    assert path.read_text() == "second\n"
    assert list(tmp_path.iterdir()) == [path]


def test_checkpoint_roundtrip(tmp_path):
    geom = LatticeGeometry(3)
    params = randomize(init_model(geom, hidden=7, seed=20), seed=21)
    spec = make_prior("ising", 2, 0.44, geom)
    rng = np.random.default_rng(5)
    rng.random(3)
    path = tmp_path / "model.txt"
    save_checkpoint(str(path), params, spec, rng_state=rng_state_string(rng))
    loaded, loaded_spec, meta = load_checkpoint(str(path))
    for name in ("w1", "b1", "w2", "b2"):
        assert np.array_equal(getattr(loaded, name), getattr(params, name))
    assert loaded.hidden == 7
    assert loaded.alpha == params.alpha
    assert loaded_spec.kind == "ising"
    assert loaded_spec.order == 2
    assert loaded_spec.beta == 0.44
    assert np.array_equal(loaded_spec.factors, spec.factors)
    restored = rng_from_state_string(meta["rng"])
    assert np.array_equal(restored.random(8), rng.random(8))


def test_checkpoint_disordered_couplings(tmp_path):
    geom = LatticeGeometry(4)
    couplings = make_couplings("ea-binary", geom, seed=33)
    spec = make_prior("ea", 3, 0.6, geom, couplings=couplings)
    params = randomize(init_model(geom, seed=22), seed=23)
    save_couplings(str(tmp_path / "couplings.txt"), couplings)
    path = tmp_path / "model.txt"
    save_checkpoint(str(path), params, spec, coupling_path="couplings.txt")
    loaded, loaded_spec, _ = load_checkpoint(str(path))
    assert np.array_equal(loaded_spec.factors, spec.factors)
    # an explicit coupling field overrides the recorded file
    loaded2, loaded_spec2, _ = load_checkpoint(str(path), couplings=couplings)
    assert np.array_equal(loaded_spec2.factors, spec.factors)
    assert np.array_equal(loaded2.w1, params.w1)


def test_checkpoint_disordered_requires_couplings(tmp_path):
    geom = LatticeGeometry(4)
    couplings = make_couplings("ea-binary", geom, seed=34)
    spec = make_prior("ea", 1, 0.6, geom, couplings=couplings)
    params = init_model(geom, seed=0)
    path = tmp_path / "model.txt"
    save_checkpoint(str(path), params, spec)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bogus.txt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(CheckpointError, match="spinvan-ckpt v1"):
        load_checkpoint(str(path))


def test_checkpoint_rejects_missing_tensor(tmp_path):
    geom = LatticeGeometry(2)
    params = init_model(geom, seed=0)
    spec = make_prior("ising", 1, 0.5, geom)
    path = tmp_path / "model.txt"
    save_checkpoint(str(path), params, spec)
    text = path.read_text().splitlines()
    start = next(i for i, line in enumerate(text) if line.startswith("tensor w2"))
    end = next(i for i in range(start + 1, len(text)) if text[i].startswith("tensor "))
    path.write_text("\n".join(text[:start] + text[end:]) + "\n")
    with pytest.raises(CheckpointError, match="w2"):
        load_checkpoint(str(path))
