"""Masked two-layer autoregressive network over row-major spin order.

The network computes a correction h to the analytic prior logits; the
conditional for site i is sigma(h_i + prior_logit_i).  Autoregression is
enforced through connectivity masks: hidden unit k carries a degree d(k)
cycling over 1..N-1, the first layer admits input j into unit k iff
j < d(k), and the second admits unit k into output i iff d(k) <= i.  Any
input-output path therefore satisfies j < i, and output 0 reduces to the
bias b2[0].

The second-layer weights start at zero, so a freshly initialized model
reproduces the bare prior exactly.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .lattice import CouplingField, LatticeGeometry, load_couplings
from .logspace import log_sigmoid, sigmoid
from .priors import PriorSpec, make_prior, prior_logits_batched
from .tensorio import read_tensor, write_tensor

CHECKPOINT_MAGIC = "spinvan-ckpt v1"
LEAKY_SLOPE = 0.01


@dataclass
class ModelParameters:
    geometry: LatticeGeometry
    hidden: int
    alpha: float
    w1: np.ndarray = field(repr=False)
    b1: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)
    b2: np.ndarray = field(repr=False)
    mask1: np.ndarray = field(repr=False)
    mask2: np.ndarray = field(repr=False)

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            self.geometry,
            self.hidden,
            self.alpha,
            self.w1.copy(),
            self.b1.copy(),
            self.w2.copy(),
            self.b2.copy(),
            self.mask1,
            self.mask2,
        )


def hidden_degrees(n_sites: int, hidden: int) -> np.ndarray:
    """Degree of each hidden unit, cycling over 1..N-1."""
    return 1 + np.arange(hidden) % (n_sites - 1)


def build_masks(n_sites: int, hidden: int) -> tuple[np.ndarray, np.ndarray]:
    d = hidden_degrees(n_sites, hidden)
    mask1 = (np.arange(n_sites)[None, :] < d[:, None]).astype(np.float64)
    mask2 = (d[None, :] <= np.arange(n_sites)[:, None]).astype(np.float64)
    return mask1, mask2


def init_model(
    geometry: LatticeGeometry,
    hidden: int | None = None,
    seed: int = 0,
    alpha: float = LEAKY_SLOPE,
) -> ModelParameters:
    """Fresh parameters: first layer random with per-unit fan-in scaling,
    second layer and biases zero (so the initial model equals the prior)."""
    n = geometry.n_sites
    hidden = n if hidden is None else hidden
    if hidden < 1:
        raise ValueError("hidden width must be positive")
    mask1, mask2 = build_masks(n, hidden)
    rng = np.random.default_rng(seed)
    fan_in = np.maximum(mask1.sum(axis=1), 1.0)
    w1 = rng.standard_normal((hidden, n)) / np.sqrt(fan_in)[:, None] * mask1
    return ModelParameters(
        geometry=geometry,
        hidden=hidden,
        alpha=alpha,
        w1=w1,
        b1=np.zeros(hidden),
        w2=np.zeros((n, hidden)),
        b2=np.zeros(n),
        mask1=mask1,
        mask2=mask2,
    )


def leaky_relu(z: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(z > 0.0, z, alpha * z)


def forward(params: ModelParameters, spins: np.ndarray) -> np.ndarray:
    """Network logits h for a batch of configurations; shape (M, N)."""
    s = np.atleast_2d(spins).astype(np.float64)
    z = s @ params.w1.T + params.b1
    a = leaky_relu(z, params.alpha)
    h = a @ params.w2.T + params.b2
    return h[0] if spins.ndim == 1 else h


def conditional_probs(params: ModelParameters, spec: PriorSpec, spins: np.ndarray) -> np.ndarray:
    """q(s_i = +1 | s_<i) for every site of every configuration."""
    return sigmoid(forward(params, spins) + prior_logits_batched(spec, spins))


def log_prob(params: ModelParameters, spec: PriorSpec, spins: np.ndarray) -> np.ndarray:
    """log q(s) per configuration, accumulated in log-space."""
    single = spins.ndim == 1
    s = np.atleast_2d(spins)
    logits = forward(params, s) + prior_logits_batched(spec, s)
    lq = log_sigmoid(s * logits).sum(axis=1)
    return float(lq[0]) if single else lq


def rng_state_string(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, separators=(",", ":"))


def rng_from_state_string(state: str) -> np.random.Generator:
    parsed = json.loads(state)
    bitgen = np.random.PCG64()
    bitgen.state = parsed
    return np.random.Generator(bitgen)


def write_atomic(path: str, content: str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(
    path: str,
    params: ModelParameters,
    spec: PriorSpec,
    rng_state: str = "",
    coupling_path: str = "",
) -> None:
    """Write a self-describing text checkpoint.

    Holds the geometry, prior kind/order/beta, the four weight tensors and
    the sampler rng state; for disordered priors the coupling file is
    referenced by name rather than inlined.
    """
    import io

    buf = io.StringIO()
    buf.write(CHECKPOINT_MAGIC + "\n")
    buf.write(f"meta L {params.geometry.length}\n")
    buf.write(f"meta hidden {params.hidden}\n")
    buf.write(f"meta alpha {params.alpha!r}\n")
    buf.write(f"meta kind {spec.kind}\n")
    buf.write(f"meta order {spec.order}\n")
    buf.write(f"meta beta {spec.beta!r}\n")
    if coupling_path:
        buf.write(f"meta couplings {coupling_path}\n")
    if rng_state:
        buf.write(f"meta rng {rng_state}\n")
    write_tensor(buf, "w1", params.w1)
    write_tensor(buf, "b1", params.b1)
    write_tensor(buf, "w2", params.w2)
    write_tensor(buf, "b2", params.b2)
    write_atomic(path, buf.getvalue())


class CheckpointError(Exception):
    pass


def load_checkpoint(
    path: str, couplings: CouplingField | None = None
) -> tuple[ModelParameters, PriorSpec, dict]:
    """Read a checkpoint back into parameters and a prior.

    For 'ea' checkpoints a coupling field must be supplied, or reachable
    through the recorded coupling-file path (resolved relative to the
    checkpoint's directory).
    """
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != CHECKPOINT_MAGIC:
            raise CheckpointError(
                f"{path} is not a checkpoint: expected magic {CHECKPOINT_MAGIC!r}, "
                f"found {first!r}"
            )
        meta: dict[str, str] = {}
        tensors: dict[str, np.ndarray] = {}
        lines = iter(fh.read().splitlines())
        for line in lines:
            if line.startswith("meta "):
                key, _, value = line[5:].partition(" ")
                meta[key] = value
            elif line.startswith("tensor "):
                name, array = read_tensor(lines, line)
                tensors[name] = array
            elif line.strip():
                raise CheckpointError(f"unrecognized checkpoint line: {line!r}")
    try:
        geometry = LatticeGeometry(int(meta["L"]))
        hidden = int(meta["hidden"])
        alpha = float(meta["alpha"])
        kind = meta["kind"]
        order = int(meta["order"])
        beta = float(meta["beta"])
        w1, b1, w2, b2 = (tensors[k] for k in ("w1", "b1", "w2", "b2"))
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} is missing field {exc}") from exc
    mask1, mask2 = build_masks(geometry.n_sites, hidden)
    params = ModelParameters(
        geometry=geometry,
        hidden=hidden,
        alpha=alpha,
        w1=w1 * mask1,
        b1=b1,
        w2=w2 * mask2,
        b2=b2,
        mask1=mask1,
        mask2=mask2,
    )
    if kind == "ea" and couplings is None and "couplings" in meta:
        candidate = os.path.join(os.path.dirname(os.path.abspath(path)), meta["couplings"])
        if os.path.exists(candidate):
            couplings = load_couplings(candidate)
    if kind == "ea" and couplings is None:
        raise CheckpointError("ea checkpoint needs a coupling field to rebuild its prior")
    spec = make_prior(kind, order, beta, geometry, couplings)
    return params, spec, meta
