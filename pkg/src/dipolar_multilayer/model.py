"""XXZ parameters, layer-selective product states and the classical kernels.

Spin configurations are component-major arrays of shape ``(3, n_sites)`` or,
for a batch of trajectories, ``(3, n_sites, n_traj)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import TRUNCATIONS, CouplingMatrix, layer_averaged_coupling, nearest_layer_coupling


@dataclass(frozen=True)
class ModelSpec:
    J_perp: float = 1.0
    J_z: float = 1.0
    staggered_h: float = 0.0
    truncation: str = "full"

    def __post_init__(self):
        if self.truncation not in TRUNCATIONS:
            raise ValueError(f"truncation must be one of {TRUNCATIONS}, got {self.truncation!r}")

    @property
    def heisenberg(self) -> bool:
        return self.J_perp == self.J_z


@dataclass(frozen=True)
class InitialStateSpec:
    """One Bloch unit vector per layer."""

    directions: np.ndarray

    def __post_init__(self):
        d = np.array(self.directions, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3:
            raise ValueError(f"directions must have shape (L_z, 3), got {d.shape}")
        norms = np.linalg.norm(d, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError(f"directions must be unit vectors, norms {norms}")
        d.flags.writeable = False
        object.__setattr__(self, "directions", d)

    @property
    def n_layers(self) -> int:
        return self.directions.shape[0]

    def is_antialigned_bilayer(self) -> bool:
        return self.n_layers == 2 and np.allclose(self.directions, [[0, 0, -1], [0, 0, 1]])


def preset_antialigned_bilayer(L_z: int = 2) -> InitialStateSpec:
    """Layer 0 down, layer 1 up, so that ``S_1^z(0) = -S_0^z(0) = N/2``."""
    if L_z != 2:
        raise ValueError(f"anti-aligned bilayer preset needs L_z = 2, got {L_z}")
    return InitialStateSpec(np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]))


def preset_xyz_spiral(L_z: int) -> InitialStateSpec:
    """Layer directions x, y, z repeating with period 3."""
    if L_z < 3:
        raise ValueError(f"the xyz spiral needs at least 3 layers, got {L_z}")
    return InitialStateSpec(np.eye(3)[np.arange(L_z) % 3])


def tms_staggered_field(spec_or_cm, cm: CouplingMatrix | None = None) -> float:
    """Field amplitude ``h = -S V`` cancelling the Ising-induced boson number term.

    Accepts ``(cm)`` or ``(spec, cm)``; the lattice spec is not needed.
    """
    cm = spec_or_cm if cm is None else cm
    if cm.n_layers != 2:
        raise ValueError("the two-mode-squeezing field is defined for a bilayer")
    S = cm.layer_sizes[0] / 2.0
    return -S * nearest_layer_coupling(layer_averaged_coupling(cm))


def _check_state(state: np.ndarray, cm: CouplingMatrix) -> None:
    if state.shape[0] != 3 or state.shape[1] != cm.n_sites:
        raise ValueError(
            f"spin array shape {state.shape} does not match (3, {cm.n_sites}, ...)"
        )


def _couple(V: np.ndarray, state: np.ndarray) -> np.ndarray:
    """``sum_j V_ij s_j^a`` for one state (3, n) or a batch (3, n, m)."""
    return state @ V.T if state.ndim == 2 else np.matmul(V, state)


def effective_field(state: np.ndarray, cm: CouplingMatrix, model: ModelSpec) -> np.ndarray:
    """Local field ``B_i = dE/ds_i``; the dynamics is ``ds_i/dt = B_i x s_i``."""
    state = np.asarray(state, dtype=float)
    _check_state(state, cm)
    B = _couple(cm.V, state)
    B[0] *= model.J_perp
    B[1] *= model.J_perp
    B[2] *= model.J_z
    if model.staggered_h:
        h = model.staggered_h * cm.layer_sign
        B[2] += h if state.ndim == 2 else h[:, None]
    return B


def classical_energy(state: np.ndarray, cm: CouplingMatrix, model: ModelSpec):
    """Classical XXZ energy; a float, or one value per trajectory for batches."""
    state = np.asarray(state, dtype=float)
    _check_state(state, cm)
    Vs = _couple(cm.V, state)
    pair = 0.5 * (
        model.J_perp * np.sum(state[0] * Vs[0] + state[1] * Vs[1], axis=0)
        + model.J_z * np.sum(state[2] * Vs[2], axis=0)
    )
    h = model.staggered_h * cm.layer_sign
    field = np.tensordot(h, state[2], axes=(0, 0))
    energy = pair + field
    return float(energy) if state.ndim == 2 else energy
