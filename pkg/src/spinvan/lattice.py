"""Square-lattice geometry, coupling fields and spin-configuration utilities.

Sites of an L x L periodic lattice are numbered row-major: site i sits at
row i // L, column i % L.  Bonds are stored in two flat arrays of length
N = L*L: horizontal[i] couples site i to its right neighbour and
vertical[i] couples site i to the neighbour below, both with wrap-around.
Spins take values in {-1, +1} and are stored as int8 arrays, one flat
configuration per row when batched.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LatticeGeometry:
    """Row-major L x L torus."""

    length: int

    def __post_init__(self) -> None:
        if self.length < 2:
            raise ValueError("lattice length must be at least 2")

    @property
    def n_sites(self) -> int:
        return self.length * self.length

    def row_col(self, site: int) -> tuple[int, int]:
        return site // self.length, site % self.length

    def site(self, row: int, col: int) -> int:
        length = self.length
        return (row % length) * length + (col % length)

    def right_indices(self) -> np.ndarray:
        """Flat index of each site's right neighbour (periodic)."""
        length = self.length
        cols = np.arange(self.n_sites) % length
        return np.arange(self.n_sites) - cols + (cols + 1) % length

    def down_indices(self) -> np.ndarray:
        """Flat index of each site's lower neighbour (periodic)."""
        return (np.arange(self.n_sites) + self.length) % self.n_sites


@dataclass
class CouplingField:
    """Bond couplings on the torus; entries are +-1 for the models used here."""

    geometry: LatticeGeometry
    horizontal: np.ndarray
    vertical: np.ndarray
    kind: str = "custom"
    seed: int = 0

    def __post_init__(self) -> None:
        n = self.geometry.n_sites
        self.horizontal = np.asarray(self.horizontal)
        self.vertical = np.asarray(self.vertical)
        if self.horizontal.shape != (n,) or self.vertical.shape != (n,):
            raise ValueError("coupling arrays must have one entry per site")

    def is_ferromagnetic(self) -> bool:
        return bool(np.all(self.horizontal == 1) and np.all(self.vertical == 1))


COUPLING_KINDS = ("ferromagnetic", "ea-binary")


def make_couplings(kind: str, geometry: LatticeGeometry, seed: int = 0) -> CouplingField:
    """Draw a coupling field.

    kind 'ferromagnetic' sets every bond to +1; 'ea-binary' draws each bond
    independently and uniformly from {-1, +1} using the given seed.
    """
    n = geometry.n_sites
    if kind == "ferromagnetic":
        h = np.ones(n, dtype=np.int8)
        v = np.ones(n, dtype=np.int8)
    elif kind == "ea-binary":
        rng = np.random.default_rng(seed)
        h = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
        v = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    else:
        raise ValueError(f"unknown coupling kind {kind!r}")
    return CouplingField(geometry, h, v, kind=kind, seed=seed)


def energy(spins: np.ndarray, couplings: CouplingField) -> np.ndarray:
    """Nearest-neighbour energy -sum_<ij> J_ij s_i s_j.

    Accepts a single flat configuration (N,) or a batch (M, N) and returns
    a scalar or an (M,) array.  With int8 inputs and +-1 couplings the sum
    is carried out in integer arithmetic, so the result is exact.
    """
    geom = couplings.geometry
    length = geom.length
    single = spins.ndim == 1
    s = np.atleast_2d(spins)
    if s.shape[1] != geom.n_sites:
        raise ValueError("configuration size does not match geometry")
    s2 = s.reshape(-1, length, length)
    h2 = couplings.horizontal.reshape(length, length)
    v2 = couplings.vertical.reshape(length, length)
    right = np.roll(s2, -1, axis=2)
    down = np.roll(s2, -1, axis=1)
    e = -(h2 * s2 * right).sum(axis=(1, 2)) - (v2 * s2 * down).sum(axis=(1, 2))
    return e[0] if single else e


def magnetization(spins: np.ndarray) -> np.ndarray:
    """Total magnetization sum_i s_i (unnormalized)."""
    return spins.sum(axis=-1)


def validate_spins(spins: np.ndarray, geometry: LatticeGeometry) -> None:
    if spins.shape[-1] != geometry.n_sites:
        raise ValueError("configuration size does not match geometry")
    if not np.all(np.abs(spins) == 1):
        raise ValueError("spins must be +-1")


def save_couplings(path: str, couplings: CouplingField) -> None:
    """Write a coupling field as text: a header line, then one bond per line.

    The horizontal block comes first in row-major site order, then the
    vertical block.
    """
    lines = [f"L {couplings.geometry.length} kind {couplings.kind} seed {couplings.seed}"]
    lines.extend(str(int(j)) for j in couplings.horizontal)
    lines.extend(str(int(j)) for j in couplings.vertical)
    _replace_with(path, "\n".join(lines) + "\n")


def load_couplings(path: str) -> CouplingField:
    with open(path) as fh:
        header = fh.readline().split()
        body = fh.read().split()
    if len(header) != 6 or header[0] != "L" or header[2] != "kind" or header[4] != "seed":
        raise ValueError(f"malformed coupling header in {path}")
    length = int(header[1])
    geom = LatticeGeometry(length)
    n = geom.n_sites
    values = np.array([int(tok) for tok in body], dtype=np.int8)
    if values.size != 2 * n:
        raise ValueError(f"expected {2 * n} bond entries in {path}, found {values.size}")
    return CouplingField(geom, values[:n], values[n:], kind=header[3], seed=int(header[5]))


def _replace_with(path: str, content: str) -> None:
    """Write content to path atomically via a sibling temp file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".lattice-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_configurations(path: str, spins: np.ndarray) -> None:
    """Write configurations as text, N space-separated +-1 entries per line."""
    s = np.atleast_2d(spins)
    _replace_with(path, "".join(" ".join(str(int(x)) for x in row) + "\n" for row in s))


def load_configurations(path: str, geometry: LatticeGeometry) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([int(tok) for tok in line.split()])
    spins = np.array(rows, dtype=np.int8)
    validate_spins(spins, geometry)
    return spins
