"""Free-energy estimators, importance-sampling diagnostics and bootstrap
errors.

Free energies follow F = -log Z.  Log-weights of neural samples are
log w = -beta E - log q; their normalized mean gives the unbiased
partition-function estimate Z_nis, and F_nis = -log Z_nis bounds F from
above in expectation, while F_mc computed from Boltzmann samples bounds
it from below.  The mode-coverage indicator is w_bar = exp(F_mc - F_nis).
Every reduction shifts by the maximum before exponentiating.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .lattice import CouplingField, energy, magnetization
from .logspace import logmeanexp
from .sampler import SampleBatch


def log_weights(batch: SampleBatch, beta: float) -> np.ndarray:
    return -beta * batch.energies - batch.log_q


def ess(log_w: np.ndarray) -> float:
    """Normalized effective sample size <w>^2 / <w^2>, in (0, 1]."""
    log_w = np.asarray(log_w, dtype=np.float64)
    if log_w.size == 0:
        raise ValueError("no weights")
    shift = np.max(log_w)
    if not np.isfinite(shift):
        raise ValueError("all weights vanish")
    w = np.exp(log_w - shift)
    return float(w.mean() ** 2 / (w**2).mean())


def f_q(batch: SampleBatch, beta: float) -> float:
    """Variational estimate: mean of log q + beta E over the batch."""
    return float((batch.log_q + beta * batch.energies).mean())


def f_nis(log_w: np.ndarray, sample_count: int | None = None) -> float:
    """-log of the sample mean of the importance weights."""
    log_w = np.asarray(log_w, dtype=np.float64)
    count = log_w.size if sample_count is None else sample_count
    shift = np.max(log_w)
    return float(-(np.log(np.exp(log_w - shift).sum() / count) + shift))


def f_mc(log_q_mc: np.ndarray, energies_mc: np.ndarray, beta: float) -> float:
    """Lower-bound estimate from Boltzmann samples: log <q e^{beta E}>_p."""
    return logmeanexp(np.asarray(log_q_mc) + beta * np.asarray(energies_mc))


def w_bar(f_mc_value: float, f_nis_value: float) -> float:
    return float(np.exp(f_mc_value - f_nis_value))


def nis_observable(log_w: np.ndarray, values: np.ndarray) -> float:
    """Self-normalized importance-sampling average of an observable."""
    log_w = np.asarray(log_w, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    w = np.exp(log_w - np.max(log_w))
    return float((w * values).sum() / w.sum())


def bootstrap_error(
    values: np.ndarray,
    weights: np.ndarray | None = None,
    resamples: int = 1000,
    rng: np.random.Generator | None = None,
    statistic=None,
) -> float:
    """Standard deviation of a statistic over with-replacement resamples.

    By default the statistic is the plain mean of `values`, or their
    weight-normalized mean when log-`weights` are given.  A callable
    statistic(values, weights) overrides it; resampling always acts on the
    sample index set, keeping value/weight pairs together.
    """
    values = np.asarray(values)
    if values.size == 0:
        raise ValueError("nothing to resample")
    if values.size == 1:
        warnings.warn("bootstrap over a single sample has zero spread")
        return 0.0
    rng = np.random.default_rng() if rng is None else rng
    if statistic is None:
        if weights is None:
            statistic = lambda v, _: float(np.mean(v))
        else:
            statistic = lambda v, w: nis_observable(w, v)
    out = np.empty(resamples)
    for k in range(resamples):
        idx = rng.integers(values.size, size=values.size)
        out[k] = statistic(values[idx], None if weights is None else np.asarray(weights)[idx])
    return float(out.std(ddof=1))


@dataclass
class EstimateReport:
    """One row of estimates with bootstrap errors, JSON-serializable."""

    beta: float
    kind: str
    order: int
    sample_count: int
    columns: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "beta": self.beta,
            "kind": self.kind,
            "order": self.order,
            "sample_count": self.sample_count,
        }
        out.update(self.columns)
        return out


def estimate_report(
    batch: SampleBatch,
    beta: float,
    kind: str,
    order: int,
    couplings: CouplingField,
    mc_configs: np.ndarray | None = None,
    mc_log_q: np.ndarray | None = None,
    resamples: int = 1000,
    rng: np.random.Generator | None = None,
    mags: np.ndarray | None = None,
) -> EstimateReport:
    """Assemble the full estimator table for one sample batch.

    Variational columns average directly over the batch; *_nis columns
    reweight by the importance weights.  When Boltzmann samples and their
    model log-probabilities are supplied, F_mc, w_bar and MC observable
    columns are added.  Precomputed magnetizations may be passed for
    batches whose spins were sampled in chunks and discarded.
    """
    rng = np.random.default_rng() if rng is None else rng
    lw = log_weights(batch, beta)
    if mags is None:
        mags = magnetization(batch.spins).astype(np.float64)
    fq_values = batch.log_q + beta * batch.energies
    cols: dict[str, float] = {}
    cols["f_q"] = float(fq_values.mean())
    cols["f_q_err"] = bootstrap_error(fq_values, resamples=resamples, rng=rng)
    cols["f_nis"] = f_nis(lw)
    cols["f_nis_err"] = bootstrap_error(
        lw, resamples=resamples, rng=rng, statistic=lambda v, _: f_nis(v)
    )
    cols["ess"] = ess(lw)
    cols["ess_err"] = bootstrap_error(
        lw, resamples=resamples, rng=rng, statistic=lambda v, _: ess(v)
    )
    for name, values in (
        ("e", batch.energies),
        ("m", mags),
        ("m_abs", np.abs(mags)),
    ):
        cols[f"{name}_var"] = float(values.mean())
        cols[f"{name}_var_err"] = bootstrap_error(values, resamples=resamples, rng=rng)
        cols[f"{name}_nis"] = nis_observable(lw, values)
        cols[f"{name}_nis_err"] = bootstrap_error(
            values, weights=lw, resamples=resamples, rng=rng
        )
    if mc_configs is not None:
        if mc_log_q is None:
            raise ValueError("mc samples need their model log-probabilities")
        mc_e = energy(mc_configs, couplings).astype(np.float64)
        mc_m = magnetization(mc_configs).astype(np.float64)
        fmc_inputs = np.asarray(mc_log_q) + beta * mc_e
        cols["f_mc"] = logmeanexp(fmc_inputs)
        cols["f_mc_err"] = bootstrap_error(
            fmc_inputs, resamples=resamples, rng=rng, statistic=lambda v, _: logmeanexp(v)
        )
        cols["w_bar"] = w_bar(cols["f_mc"], cols["f_nis"])
        cols["e_mc"] = float(mc_e.mean())
        cols["e_mc_err"] = bootstrap_error(mc_e, resamples=resamples, rng=rng)
        cols["m_mc"] = float(mc_m.mean())
        cols["m_abs_mc"] = float(np.abs(mc_m).mean())
        cols["m_abs_mc_err"] = bootstrap_error(np.abs(mc_m), resamples=resamples, rng=rng)
    return EstimateReport(
        beta=beta, kind=kind, order=order, sample_count=batch.log_q.size, columns=cols
    )
