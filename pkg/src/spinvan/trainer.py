"""Score-function training of the autoregressive model.

The objective is the variational free energy F_q = E_q[log q + beta E].
Its gradient is estimated per batch as

    mean_j (signal_j - baseline) * grad log q(s_j),

with signal = log q + beta E and the batch mean of the signal as
baseline.  grad log q is exact backpropagation through the two masked
layers; the prior logits are constants with respect to the parameters.
Optimization is Adam; masked weights receive exactly zero gradient and
therefore never move.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arnet import ModelParameters, init_model, leaky_relu
from .lattice import CouplingField, LatticeGeometry, magnetization
from .logspace import log_sigmoid, sigmoid
from .priors import PriorSpec, make_prior, prior_logits_batched
from .sampler import SampleBatch, ancestral_sample

PARAM_FIELDS = ("w1", "b1", "w2", "b2")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def norm(self) -> float:
        return float(
            np.sqrt(sum(float((getattr(self, f) ** 2).sum()) for f in PARAM_FIELDS))
        )


@dataclass
class TrainConfig:
    length: int
    kind: str
    order: int
    beta: float
    era_count: int
    hidden: int | None = None
    batch_size: int = 4096
    era_length: int = 100
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2 (baseline needs a mean)")
        if self.era_length < 1 or self.era_count < 0:
            raise ValueError("era sizes out of range")


@dataclass
class RunMetrics:
    update: int
    era: int
    f_q: float
    ess: float
    m_mean: float
    m_abs_mean: float
    grad_norm: float

    def to_dict(self) -> dict:
        return {
            "update": self.update,
            "era": self.era,
            "f_q": self.f_q,
            "ess": self.ess,
            "m_mean": self.m_mean,
            "m_abs_mean": self.m_abs_mean,
            "grad_norm": self.grad_norm,
        }


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParameters) -> "AdamState":
        state = cls()
        for name in PARAM_FIELDS:
            state.m[name] = np.zeros_like(getattr(params, name))
            state.v[name] = np.zeros_like(getattr(params, name))
        return state


def adam_step(
    params: ModelParameters,
    grads: Gradients,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name in PARAM_FIELDS:
        g = getattr(grads, name)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        getattr(params, name)[...] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _score_backprop(
    params: ModelParameters,
    s: np.ndarray,
    z: np.ndarray,
    a: np.ndarray,
    g_out: np.ndarray,
) -> Gradients:
    """Backpropagate an output-side cotangent through both masked layers."""
    gw2 = (g_out.T @ a) * params.mask2
    gb2 = g_out.sum(axis=0)
    g_a = g_out @ params.w2
    g_z = g_a * np.where(z > 0.0, 1.0, params.alpha)
    gw1 = (g_z.T @ s) * params.mask1
    gb1 = g_z.sum(axis=0)
    return Gradients(gw1, gb1, gw2, gb2)


def weighted_score_gradient(
    params: ModelParameters,
    spec: PriorSpec,
    spins: np.ndarray,
    weights: np.ndarray,
) -> Gradients:
    """sum_j weights_j * grad_theta log q(s_j), exactly."""
    s = np.atleast_2d(spins).astype(np.float64)
    z = s @ params.w1.T + params.b1
    a = leaky_relu(z, params.alpha)
    h = a @ params.w2.T + params.b2
    x = s * (h + prior_logits_batched(spec, spins))
    g_out = s * sigmoid(-x) * np.asarray(weights)[:, None]
    return _score_backprop(params, s, z, a, g_out)


def loss_and_gradient(
    params: ModelParameters, spec: PriorSpec, batch: SampleBatch
) -> tuple[float, Gradients]:
    """Batch F_q estimate and its score-function gradient.

    log q is recomputed from the spins so the gradient and the loss refer
    to the same forward pass; the sampler's cached log q agrees with it to
    rounding.
    """
    s = batch.spins.astype(np.float64)
    z = s @ params.w1.T + params.b1
    a = leaky_relu(z, params.alpha)
    h = a @ params.w2.T + params.b2
    x = s * (h + prior_logits_batched(spec, batch.spins))
    log_q = log_sigmoid(x).sum(axis=1)
    signal = log_q + spec.beta * batch.energies
    f_q_value = float(signal.mean())
    weights = (signal - f_q_value) / batch.size
    g_out = s * sigmoid(-x) * weights[:, None]
    return f_q_value, _score_backprop(params, s, z, a, g_out)


def train(
    config: TrainConfig,
    couplings: CouplingField,
    on_metrics=None,
    on_era=None,
) -> tuple[ModelParameters, list[RunMetrics]]:
    """Run the full training loop.

    Seeds derive from SeedSequence(config.seed).spawn(2): child 0 seeds
    model initialization, child 1 the sampler stream.  on_metrics is
    called once per update with a RunMetrics; on_era with (era index,
    params, sampler rng) once before the first update (era 0, the freshly
    initialized model) and again after each completed era.  Raises
    TrainingDiverged when the loss or gradient stops being finite.
    """
    from .estimators import ess, log_weights

    geometry = LatticeGeometry(config.length)
    if couplings.geometry.length != config.length:
        raise ValueError("coupling geometry does not match config")
    spec = make_prior(
        config.kind, config.order, config.beta, geometry,
        couplings if config.kind == "ea" else None,
    )
    init_ss, sample_ss = np.random.SeedSequence(config.seed).spawn(2)
    params = init_model(geometry, config.hidden, seed=init_ss, alpha=config.alpha)
    rng = np.random.default_rng(sample_ss)
    adam = AdamState.for_params(params)
    metrics: list[RunMetrics] = []
    update = 0
    if on_era is not None:
        on_era(0, params, rng)
    for era in range(1, config.era_count + 1):
        for _ in range(config.era_length):
            update += 1
            batch = ancestral_sample(params, spec, couplings, config.batch_size, rng)
            f_q_value, grads = loss_and_gradient(params, spec, batch)
            grad_norm = grads.norm()
            if not np.isfinite(f_q_value) or not np.isfinite(grad_norm):
                raise TrainingDiverged(
                    f"non-finite loss or gradient at update {update} "
                    f"(f_q={f_q_value}, grad_norm={grad_norm})"
                )
            adam_step(
                params, grads, adam,
                lr=config.learning_rate,
                beta1=config.adam_beta1,
                beta2=config.adam_beta2,
                eps=config.adam_eps,
            )
            m = magnetization(batch.spins).astype(np.float64) / geometry.n_sites
            record = RunMetrics(
                update=update,
                era=era,
                f_q=f_q_value,
                ess=ess(log_weights(batch, config.beta)),
                m_mean=float(m.mean()),
                m_abs_mean=float(np.abs(m).mean()),
                grad_norm=grad_norm,
            )
            metrics.append(record)
            if on_metrics is not None:
                on_metrics(record)
        if on_era is not None:
            on_era(era, params, rng)
    return params, metrics
