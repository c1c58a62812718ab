"""Geometry of stacked square layers and the pairwise dipolar coupling table.

Sites are indexed layer-major: ``index = (i_z * L_y + i_y) * L_x + i_x`` over
the occupied sites only.  Default units are ``C_dd = 1`` and ``a_lat = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRUNCATIONS = ("full", "nearest_layer")


@dataclass(frozen=True)
class LatticeSpec:
    """Multilayer geometry.

    ``filling < 1`` removes sites by independent coin flips (see
    :func:`build_coupling_matrix`).  ``periodic_z`` wraps the layer index with
    the minimum-image convention; in-plane boundaries are always open.
    """

    L_x: int
    L_y: int
    L_z: int
    a_lat: float = 1.0
    a_Z: float = 1.0
    filling: float = 1.0
    C_dd: float = 1.0
    periodic_z: bool = False

    def __post_init__(self):
        for name in ("L_x", "L_y", "L_z"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not self.a_lat > 0 or not self.a_Z > 0:
            raise ValueError("lattice spacings a_lat and a_Z must be positive")
        if not 0 < self.filling <= 1:
            raise ValueError(f"filling must lie in (0, 1], got {self.filling!r}")

    @property
    def sites_per_layer(self) -> int:
        return self.L_x * self.L_y

    def grid_positions(self) -> np.ndarray:
        """Positions of every grid site (occupied or not), shape ``(n, 3)``."""
        iz, iy, ix = np.meshgrid(
            np.arange(self.L_z), np.arange(self.L_y), np.arange(self.L_x), indexing="ij"
        )
        pos = np.stack(
            [ix.ravel() * self.a_lat, iy.ravel() * self.a_lat, iz.ravel() * self.a_Z], axis=1
        )
        return pos.astype(float)

    def grid_layers(self) -> np.ndarray:
        return np.repeat(np.arange(self.L_z), self.sites_per_layer)


@dataclass(frozen=True)
class CouplingMatrix:
    """Dense symmetric coupling table over the occupied sites.

    ``V`` is read-only so the same instance can be shared between worker
    threads.
    """

    n_sites: int
    V: np.ndarray
    positions: np.ndarray
    layer: np.ndarray
    n_layers: int
    truncation: str = "full"
    layer_sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        for arr in (self.V, self.positions, self.layer):
            arr.flags.writeable = False
        sizes = np.bincount(self.layer, minlength=self.n_layers)
        sizes.flags.writeable = False
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def layer_sign(self) -> np.ndarray:
        """(-1)**i_z per site, the staggered-field pattern."""
        return np.where(self.layer % 2 == 0, 1.0, -1.0)


def dipolar_coupling(dr, C_dd: float = 1.0) -> float:
    """``C_dd / r**3 * (1 - 3 Z**2)`` with ``Z`` the z-component of the unit separation."""
    dr = np.asarray(dr, dtype=float)
    r2 = float(dr @ dr)
    if r2 == 0.0:
        raise ValueError("dipolar coupling undefined for zero separation (self-interaction)")
    r = np.sqrt(r2)
    return C_dd / (r2 * r) * (1.0 - 3.0 * dr[2] ** 2 / r2)


def _pair_couplings(pos: np.ndarray, C_dd: float, z_period: float | None) -> np.ndarray:
    d = pos[:, None, :] - pos[None, :, :]
    if z_period is not None:
        d[..., 2] -= z_period * np.round(d[..., 2] / z_period)
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, 1.0)
    V = C_dd * (1.0 - 3.0 * d[..., 2] ** 2 / r2) / r2**1.5
    np.fill_diagonal(V, 0.0)
    # exact symmetry regardless of rounding in the displacement arithmetic
    return 0.5 * (V + V.T)


def occupied_mask(spec: LatticeSpec, rng_seed: int = 0) -> np.ndarray:
    n = spec.sites_per_layer * spec.L_z
    if spec.filling >= 1.0:
        return np.ones(n, dtype=bool)
    rng = np.random.Generator(np.random.Philox(key=int(rng_seed)))
    return rng.random(n) < spec.filling


def layer_distance(li: np.ndarray, lj: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    dz = np.abs(li - lj)
    if spec.periodic_z:
        dz = np.minimum(dz, spec.L_z - dz)
    return dz


def build_coupling_matrix(
    spec: LatticeSpec, rng_seed: int = 0, truncation: str = "full"
) -> CouplingMatrix:
    """All-pairs dipolar couplings over the occupied sites, open in-plane boundaries.

    ``rng_seed`` only matters for ``filling < 1``.  ``truncation="nearest_layer"``
    keeps in-plane pairs and pairs in adjacent layers.
    """
    if truncation not in TRUNCATIONS:
        raise ValueError(f"truncation must be one of {TRUNCATIONS}, got {truncation!r}")
    mask = occupied_mask(spec, rng_seed)
    pos = spec.grid_positions()[mask]
    layer = spec.grid_layers()[mask]
    z_period = spec.L_z * spec.a_Z if spec.periodic_z else None
    V = _pair_couplings(pos, spec.C_dd, z_period)
    if truncation == "nearest_layer":
        V = np.where(layer_distance(layer[:, None], layer[None, :], spec) <= 1, V, 0.0)
    return CouplingMatrix(
        n_sites=len(pos), V=V, positions=pos, layer=layer, n_layers=spec.L_z,
        truncation=truncation,
    )


def layer_averaged_coupling(cm: CouplingMatrix) -> np.ndarray:
    """``V_av[i, j] = sum of V over site pairs in layers (i, j) / (N_i N_j)``.

    Self-pairs contribute zero on the diagonal.  With vacancies the
    normalisation uses the occupied counts of each layer.
    """
    onehot = np.zeros((cm.n_layers, cm.n_sites))
    onehot[cm.layer, np.arange(cm.n_sites)] = 1.0
    sums = onehot @ cm.V @ onehot.T
    sizes = cm.layer_sizes.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        vav = sums / np.outer(sizes, sizes)
    return np.nan_to_num(vav)


def nearest_layer_coupling(vav: np.ndarray) -> float:
    """The scale ``V = V_av[i, i+1]``, averaged over ``i`` (all equal at unit filling)."""
    vav = np.asarray(vav)
    if vav.shape[0] < 2:
        raise ValueError("nearest-layer coupling needs at least two layers")
    return float(np.mean(np.diagonal(vav, offset=1)))
