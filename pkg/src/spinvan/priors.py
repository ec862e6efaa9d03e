"""Analytic conditional priors for autoregressive sampling of spin systems.

For row-major site order, the conditional distribution of spin i given all
earlier spins admits an expansion in t = tanh(beta).  Truncating at order
t^k yields a logit that is linear in a handful of already-fixed spins:

    order 1:  2b (s_up + s_left)
    order 2:  + 2 t^2 s_upright
    order 3:  + 2 t^3 (s_upright2 + s_left)
    order 4:  + 2 t^4 (s_upright + s_upright3 + s_left2)

where s_upright{2,3} sit in the previous row, 2 and 3 columns to the
right.  For bond disorder each coefficient becomes a product of
t_ij = tanh(beta J_ij) along the shortest interaction path through the
summed-over spins, and the order-1 coefficient is 2 b J per bond.

Context handling follows the padded-lattice picture: the previous row
wraps periodically in the horizontal direction, while context above the
first row or to the left of a row's start does not exist and contributes
zero (the corresponding factor is zero).  Vertical periodicity is ignored
for every row; the same formulas apply to the last row even though bonds
there wrap back to row 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import CouplingField, LatticeGeometry, energy, make_couplings
from .logspace import log_sigmoid, sigmoid

PRIOR_KINDS = ("ising", "ea")
MAX_ORDER = 4

# Term offsets (drow, dcol) relative to the target site, in kernel order.
# Rows above wrap horizontally; same-row context never wraps.
_OFFSETS = (
    (-1, 0),   # up
    (0, -1),   # left
    (-1, 1),   # up-right
    (-1, 2),   # up-right-right
    (-1, 3),   # up-right-right-right
    (0, -2),   # left-left
)


@dataclass
class PriorSpec:
    """A prior of given kind and truncation order at fixed beta.

    factors[t, i] is the coefficient with which term t's context spin
    enters the logit of site i (zero where that context does not exist);
    neighbors[t, i] is the flat index of that context spin.  All context
    spins precede site i in row-major order by construction.
    """

    kind: str
    order: int
    beta: float
    geometry: LatticeGeometry
    factors: np.ndarray = field(repr=False)
    neighbors: np.ndarray = field(repr=False)

    @property
    def t(self) -> float:
        return float(np.tanh(self.beta))


def _ising_coefficients(order: int, beta: float) -> np.ndarray:
    """Scalar kernel coefficients per term for the uniform ferromagnet."""
    t = np.tanh(beta)
    coeff = np.zeros(len(_OFFSETS))
    if order >= 1:
        coeff[0] += 2.0 * beta
        coeff[1] += 2.0 * beta
    if order >= 2:
        coeff[2] += 2.0 * t**2
    if order >= 3:
        coeff[3] += 2.0 * t**3
        coeff[1] += 2.0 * t**3
    if order >= 4:
        coeff[2] += 2.0 * t**4
        coeff[4] += 2.0 * t**4
        coeff[5] += 2.0 * t**4
    return coeff


def precompute_ea_factors(order: int, beta: float, couplings: CouplingField) -> np.ndarray:
    """Per-site factor tables for a bond-disordered system.

    Each entry is the product of tanh(beta J) over the bonds of the
    interaction path that connects the context spin to the target site,
    except the order-1 terms, which carry the exact single-bond weight
    2 beta J.  Paths that would need context above the top row or left of
    the row start get factor 0.
    """
    geom = couplings.geometry
    length = geom.length
    jh = couplings.horizontal.reshape(length, length).astype(np.float64)
    jv = couplings.vertical.reshape(length, length).astype(np.float64)
    th = np.tanh(beta * jh)
    tv = np.tanh(beta * jv)

    def at(a: np.ndarray, dr: int, dc: int) -> np.ndarray:
        # value of a at (r + dr, c + dc) with torus wrap, as an (L, L) grid
        return np.roll(a, (-dr, -dc), axis=(0, 1))

    fac = np.zeros((len(_OFFSETS), length, length))
    if order >= 1:
        fac[0] += 2.0 * beta * at(jv, -1, 0)
        fac[1] += 2.0 * beta * at(jh, 0, -1)
    if order >= 2:
        fac[2] += 2.0 * at(tv, -1, 1) * th
    if order >= 3:
        fac[3] += 2.0 * at(tv, -1, 2) * at(th, 0, 1) * th
        fac[1] += 2.0 * at(tv, 0, -1) * at(th, 1, -1) * tv
    if order >= 4:
        fac[2] += 2.0 * at(tv, -1, 1) * at(tv, 0, 1) * at(th, 1, 0) * tv
        fac[4] += 2.0 * at(tv, -1, 3) * at(th, 0, 2) * at(th, 0, 1) * th
        fac[5] += 2.0 * at(tv, 0, -2) * at(th, 1, -2) * at(th, 1, -1) * tv

    for term, (dr, dc) in enumerate(_OFFSETS):
        if dr < 0:
            fac[term, 0, :] = 0.0
        if dc < 0:
            fac[term, :, :(-dc)] = 0.0
    return fac.reshape(len(_OFFSETS), geom.n_sites)


def _neighbor_table(geometry: LatticeGeometry) -> np.ndarray:
    length = geometry.length
    rows, cols = np.divmod(np.arange(geometry.n_sites), length)
    nbr = np.zeros((len(_OFFSETS), geometry.n_sites), dtype=np.int64)
    for term, (dr, dc) in enumerate(_OFFSETS):
        nbr[term] = ((rows + dr) % length) * length + (cols + dc) % length
    return nbr


def make_prior(
    kind: str,
    order: int,
    beta: float,
    geometry: LatticeGeometry,
    couplings: CouplingField | None = None,
) -> PriorSpec:
    if kind not in PRIOR_KINDS:
        raise ValueError(f"unknown prior kind {kind!r}")
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"prior order must be in 0..{MAX_ORDER}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if kind == "ea":
        if couplings is None:
            raise ValueError("ea priors need a coupling field")
        if couplings.geometry.length != geometry.length:
            raise ValueError("coupling geometry does not match")
        factors = precompute_ea_factors(order, beta, couplings)
    else:
        uniform = make_couplings("ferromagnetic", geometry)
        factors = precompute_ea_factors(order, beta, uniform)
    return PriorSpec(
        kind=kind,
        order=order,
        beta=beta,
        geometry=geometry,
        factors=factors,
        neighbors=_neighbor_table(geometry),
    )


def prior_logit_site(spec: PriorSpec, prefix: np.ndarray, site: int) -> float:
    """Logit of p(s_site = +1) given the spins before `site`.

    Entries of `prefix` at positions >= site are never read.
    """
    if not 0 <= site < spec.geometry.n_sites:
        raise ValueError("site outside lattice")
    prefix = np.asarray(prefix)
    total = 0.0
    for term in range(spec.factors.shape[0]):
        f = spec.factors[term, site]
        if f != 0.0:
            total += f * float(prefix[spec.neighbors[term, site]])
    return total


def prior_logits_site_batch(spec: PriorSpec, spins: np.ndarray, site: int) -> np.ndarray:
    """Per-site logits for a whole batch at once; reads only spins < site."""
    out = np.zeros(spins.shape[0])
    for term in range(spec.factors.shape[0]):
        f = spec.factors[term, site]
        if f != 0.0:
            out += f * spins[:, spec.neighbors[term, site]]
    return out


def _padded(spins2: np.ndarray) -> np.ndarray:
    """Batch of configurations with the context padding of the kernel picture:
    one zero row on top, two zero columns on the left, and three columns on
    the right that repeat the row's first spins (horizontal wrap)."""
    m, length, _ = spins2.shape
    out = np.zeros((m, length + 1, length + 5))
    out[:, 1:, 2 : 2 + length] = spins2
    wrap_cols = np.arange(3) % length
    out[:, 1:, 2 + length :] = spins2[:, :, wrap_cols]
    return out


def prior_logits_batched(spec: PriorSpec, spins: np.ndarray) -> np.ndarray:
    """Prior logits of every site for a batch of full configurations.

    The result at site i depends only on spins before i, so evaluating a
    complete configuration reproduces the sampling-time logits exactly.
    The ferromagnetic kind runs as a fixed-coefficient kernel correlation
    over the padded lattice; the disordered kind multiplies shifted spin
    planes by the per-site factor tables.
    """
    geom = spec.geometry
    length = geom.length
    single = spins.ndim == 1
    s = np.atleast_2d(spins)
    pad = _padded(s.reshape(-1, length, length).astype(np.float64))
    out = np.zeros((s.shape[0], length, length))
    if spec.kind == "ising":
        coeff = _ising_coefficients(spec.order, spec.beta)
        for term, (dr, dc) in enumerate(_OFFSETS):
            if coeff[term] != 0.0:
                out += coeff[term] * pad[:, 1 + dr : 1 + dr + length, 2 + dc : 2 + dc + length]
    else:
        fac = spec.factors.reshape(len(_OFFSETS), length, length)
        for term, (dr, dc) in enumerate(_OFFSETS):
            if np.any(fac[term] != 0.0):
                out += fac[term] * pad[:, 1 + dr : 1 + dr + length, 2 + dc : 2 + dc + length]
    out = out.reshape(s.shape[0], geom.n_sites)
    return out[0] if single else out


def sample_prior(
    spec: PriorSpec, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral samples from the prior alone (no network correction).

    Returns (spins, log q) with spins int8 of shape (count, N).  One
    uniform variate is consumed per (sample, site), in site-major order.
    Within a row, the previous-row contribution to the logits is gathered
    in one vectorized pass; the same-row left terms are added site by site
    as spins become available.
    """
    geom = spec.geometry
    length = geom.length
    fac = spec.factors.reshape(len(_OFFSETS), length, length)
    prev_terms = [
        (term, (np.arange(length) + dc) % length)
        for term, (dr, dc) in enumerate(_OFFSETS)
        if dr < 0 and np.any(fac[term] != 0.0)
    ]
    spins = np.empty((count, geom.n_sites), dtype=np.int8)
    log_q = np.zeros(count)
    # site-major working buffers: row index first, batch second
    row = np.empty((length, count))
    prev = np.empty((length, count))
    for r in range(length):
        logits = np.zeros((length, count))
        if r > 0:
            for term, cols in prev_terms:
                logits += fac[term, r][:, None] * prev[cols]
        u = rng.random((length, count))
        for c in range(length):
            x = logits[c]
            f_left, f_left2 = fac[1, r, c], fac[5, r, c]
            if f_left != 0.0:
                x += f_left * row[c - 1]
            if f_left2 != 0.0:
                x += f_left2 * row[c - 2]
            row[c] = np.where(u[c] < 0.5 * (1.0 + np.tanh(0.5 * x)), 1.0, -1.0)
        log_q += log_sigmoid(row * logits).sum(axis=0)
        spins[:, r * length : (r + 1) * length] = row.T
        row, prev = prev, row
    return spins, log_q


def prior_only_f_q(
    spec: PriorSpec,
    couplings: CouplingField,
    sample_count: int,
    seed: int,
    chunk: int = 1 << 16,
) -> tuple[float, float]:
    """Variational free-energy estimate of the bare prior.

    Draws `sample_count` ancestral samples (in chunks), evaluates
    log q + beta E per sample, and returns the mean together with its
    standard error.
    """
    rng = np.random.default_rng(seed)
    values = np.empty(sample_count)
    done = 0
    while done < sample_count:
        m = min(chunk, sample_count - done)
        spins, log_q = sample_prior(spec, m, rng)
        values[done : done + m] = log_q + spec.beta * energy(spins, couplings)
        done += m
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(sample_count))


def export_factor_tables(path: str, spec: PriorSpec) -> None:
    """Dump the factor tables in the checkpoint tensor-record format."""
    from .tensorio import write_tensor

    with open(path, "w") as fh:
        fh.write("spinvan-factors v1\n")
        fh.write(f"meta kind {spec.kind}\n")
        fh.write(f"meta order {spec.order}\n")
        fh.write(f"meta beta {spec.beta!r}\n")
        fh.write(f"meta L {spec.geometry.length}\n")
        write_tensor(fh, "factors", spec.factors)
        write_tensor(fh, "neighbors", spec.neighbors.astype(np.float64))
