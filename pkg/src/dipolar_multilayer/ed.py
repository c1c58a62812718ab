"""Exact state-vector evolution for small systems.

Two Hilbert spaces are supported: ``n <= 14`` spin-1/2 sites (bit ``k`` of a
basis index is site ``k``, 1 meaning up), and a chain of collective layer spins
of length ``S`` each (tensor index ``k`` per layer, ``m = S - k``).  Both use
matrix-free Hamiltonian application and fixed-step RK4 on the Schrodinger
equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .lattice import CouplingMatrix, LatticeSpec
from .model import InitialStateSpec, ModelSpec

MAX_SPINS = 14
MAX_COLLECTIVE_DIM = 20000
ED_STEP = 0.02  # dt * (bound on ||H||)

AXES = {"x": 0, "y": 1, "z": 2}


@dataclass
class StateVector:
    amplitudes: np.ndarray
    dims: tuple

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def _axis(a) -> int:
    return AXES[a] if isinstance(a, str) else int(a)


def _angles(n):
    x, y, z = n
    return math.acos(max(-1.0, min(1.0, z))), math.atan2(y, x)


# --------------------------------------------------------------------------
# spin-1/2 lattice


class SpinHalfHamiltonian:
    """XXZ Hamiltonian of all occupied sites plus the staggered field."""

    def __init__(self, cm: CouplingMatrix, model: ModelSpec):
        n = cm.n_sites
        if n > MAX_SPINS:
            raise ValueError(f"{n} spins exceed the exact-evolution cap of {MAX_SPINS}")
        self.n = n
        self.dim = 1 << n
        self.dims = (self.dim,)
        idx = np.arange(self.dim)
        self.bits = ((idx[None, :] >> np.arange(n)[:, None]) & 1).astype(float)  # (n, dim)
        sz = self.bits - 0.5
        V = cm.V
        diag = model.J_z * 0.5 * np.einsum("id,ij,jd->d", sz, V, sz)
        diag += model.staggered_h * (cm.layer_sign @ sz)
        self.diag = diag
        self.flips = []
        row = np.abs(diag)
        for i in range(n):
            for j in range(i + 1, n):
                c = 0.5 * model.J_perp * V[i, j]
                if c == 0.0:
                    continue
                differ = self.bits[i] != self.bits[j]
                self.flips.append((idx ^ ((1 << i) | (1 << j)), np.where(differ, c, 0.0)))
                row = row + np.abs(c) * differ
        self.norm_bound = float(np.max(row)) if self.dim else 0.0

    def apply(self, psi: np.ndarray) -> np.ndarray:
        out = self.diag * psi
        for perm, coef in self.flips:
            out += coef * psi[perm]
        return out

    def spin_op(self, site: int, axis, psi: np.ndarray) -> np.ndarray:
        a = _axis(axis)
        b = self.bits[site]
        if a == 2:
            return (b - 0.5) * psi
        src = psi[np.arange(self.dim) ^ (1 << site)]
        if a == 0:
            return 0.5 * src
        return np.where(b == 0, 0.5j, -0.5j) * src

    def product_state(self, directions_per_site: np.ndarray) -> StateVector:
        psi = np.ones(1, dtype=complex)
        for k in reversed(range(self.n)):
            th, ph = _angles(directions_per_site[k])
            site = np.array([math.sin(th / 2) * np.exp(1j * ph), math.cos(th / 2)])  # (down, up)
            psi = np.kron(psi, site)
        return StateVector(psi, self.dims)

    def n_units(self) -> int:
        return self.n


# --------------------------------------------------------------------------
# collective layer chain


def spin_matrices(S: float):
    """``(S^x, S^y, S^z)`` in the basis ``m = S, S-1, ..., -S``."""
    d = int(round(2 * S)) + 1
    m = S - np.arange(d)
    sp = np.zeros((d, d))
    for k in range(1, d):
        sp[k - 1, k] = math.sqrt(S * (S + 1) - m[k] * (m[k] + 1))
    sx = 0.5 * (sp + sp.T)
    sy = -0.5j * (sp - sp.T)
    return sx.astype(complex), sy, np.diag(m).astype(complex)


def coherent_state(S: float, n) -> np.ndarray:
    """Spin-``S`` coherent state along ``n``: ``c_m ~ cos^{S+m} sin^{S-m} e^{-i m phi}``."""
    th, ph = _angles(np.asarray(n, dtype=float))
    d = int(round(2 * S)) + 1
    m = S - np.arange(d)
    c, s = math.cos(th / 2), math.sin(th / 2)
    k_up = np.rint(S + m).astype(int)
    k_dn = np.rint(S - m).astype(int)
    amp = np.sqrt(comb(int(round(2 * S)), k_up)) * c ** k_up * s ** k_dn
    return amp * np.exp(-1j * m * ph)


class CollectiveHamiltonian:
    """``sum_{i<j} V_ij [J_perp (S^x S^x + S^y S^y) + J_z S^z S^z] + sum_i h_i S_i^z``."""

    def __init__(self, L_z: int, S: float, vav, model: ModelSpec | None = None):
        model = model or ModelSpec()
        if abs(2 * S - round(2 * S)) > 1e-12 or S <= 0:
            raise ValueError("S must be a positive half-integer")
        d = int(round(2 * S)) + 1
        if d ** L_z > MAX_COLLECTIVE_DIM:
            raise ValueError(f"dimension {d}**{L_z} exceeds the cap {MAX_COLLECTIVE_DIM}")
        vav = np.asarray(vav, dtype=float)
        if vav.shape != (L_z, L_z):
            raise ValueError("V_av must be L_z x L_z")
        self.L, self.S, self.d = L_z, S, d
        self.dims = (d,) * L_z
        self.dim = d ** L_z
        self.ops = spin_matrices(S)
        self.model = model
        self.vav = vav
        self.fields = model.staggered_h * np.where(np.arange(L_z) % 2 == 0, 1.0, -1.0)
        m = S - np.arange(d)
        grids = np.meshgrid(*([m] * L_z), indexing="ij")
        diag = np.zeros(self.dims)
        for i in range(L_z):
            diag += self.fields[i] * grids[i]
            for j in range(i + 1, L_z):
                diag += model.J_z * vav[i, j] * grids[i] * grids[j]
        self.diag = diag.ravel()
        flip = 0.0
        for i in range(L_z):
            for j in range(i + 1, L_z):
                flip += abs(model.J_perp * vav[i, j]) * 2 * S * S
        self.norm_bound = float(np.max(np.abs(self.diag)) + flip)

    def _local(self, op, layer, psi_t):
        return np.moveaxis(np.tensordot(op, psi_t, axes=(1, layer)), 0, layer)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        sx, sy, _ = self.ops
        sp = (sx + 1j * sy)
        sm = (sx - 1j * sy)
        t = psi.reshape(self.dims)
        out = self.diag * psi
        jp = self.model.J_perp
        for i in range(self.L):
            spi = self._local(sp, i, t)
            smi = self._local(sm, i, t)
            for j in range(i + 1, self.L):
                c = 0.5 * jp * self.vav[i, j]
                if c == 0.0:
                    continue
                out += c * (self._local(sm, j, spi) + self._local(sp, j, smi)).ravel()
        return out

    def spin_op(self, layer: int, axis, psi: np.ndarray) -> np.ndarray:
        op = self.ops[_axis(axis)]
        return self._local(op, layer, psi.reshape(self.dims)).ravel()

    def product_state(self, directions: np.ndarray) -> StateVector:
        psi = np.ones(1, dtype=complex)
        for layer in range(self.L):
            psi = np.kron(psi, coherent_state(self.S, directions[layer]))
        return StateVector(psi, self.dims)

    def n_units(self) -> int:
        return self.L


# --------------------------------------------------------------------------
# evolution


def _rk4(ham, psi: np.ndarray, h: float) -> np.ndarray:
    f = lambda v: -1j * ham.apply(v)
    k1 = f(psi)
    k2 = f(psi + 0.5 * h * k1)
    k3 = f(psi + 0.5 * h * k2)
    k4 = f(psi + h * k3)
    return psi + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve(ham, psi0: StateVector, times, dt: float | None = None) -> list[StateVector]:
    """States at the sorted non-negative ``times`` (equal RK4 substeps between them)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be sorted and non-negative")
    if dt is None:
        dt = ED_STEP / ham.norm_bound if ham.norm_bound > 0 else 1.0
    psi = np.array(psi0.amplitudes, dtype=complex)
    out, now = [], 0.0
    for t in times:
        span = t - now
        n = int(math.ceil(span / dt - 1e-9)) if span > 0 else 0
        for _ in range(n):
            psi = _rk4(ham, psi, span / n)
        now = t
        out.append(StateVector(psi.copy(), psi0.dims))
    return out


def _site_directions(init: InitialStateSpec, cm: CouplingMatrix) -> np.ndarray:
    return init.directions[cm.layer]


def evolve_full(spec: LatticeSpec, init: InitialStateSpec, cm: CouplingMatrix,
                model: ModelSpec, t, dt: float | None = None):
    """Spin-1/2 evolution of the product state; one state for scalar ``t``, else a list."""
    if cm.n_sites > MAX_SPINS:
        raise ValueError(f"{cm.n_sites} spins exceed the exact-evolution cap of {MAX_SPINS}")
    if init.n_layers != spec.L_z:
        raise ValueError("initial state and lattice disagree on the number of layers")
    ham = SpinHalfHamiltonian(cm, model)
    psi0 = ham.product_state(_site_directions(init, cm))
    states = evolve(ham, psi0, t, dt)
    return states[0] if np.ndim(t) == 0 else states


def evolve_collective(L_z: int, S: float, vav, t, directions, model: ModelSpec | None = None,
                      dt: float | None = None):
    """Evolution of the collective layer chain from the coherent product state."""
    ham = CollectiveHamiltonian(L_z, S, vav, model)
    psi0 = ham.product_state(np.asarray(directions, dtype=float))
    states = evolve(ham, psi0, t, dt)
    return states[0] if np.ndim(t) == 0 else states


# --------------------------------------------------------------------------
# expectation values


def expectation(ham, state: StateVector, unit: int, axis) -> float:
    psi = state.amplitudes
    return float(np.real(np.vdot(psi, ham.spin_op(unit, axis, psi))))


def spin_expectations(ham, states) -> np.ndarray:
    """``<S_u^a>`` for every unit (site or layer) and axis: shape (n_t, n_units, 3)."""
    return np.array([
        [[expectation(ham, st, u, a) for a in range(3)] for u in range(ham.n_units())]
        for st in states
    ])


def second_moment(ham, state: StateVector, u: int, a, v: int, b) -> complex:
    psi = state.amplitudes
    return complex(np.vdot(psi, ham.spin_op(u, a, ham.spin_op(v, b, psi))))


def energy(ham, state: StateVector) -> float:
    psi = state.amplitudes
    return float(np.real(np.vdot(psi, ham.apply(psi))))


def exact_greens(ham, state: StateVector, A, B, times, dt: float | None = None) -> np.ndarray:
    """``i <[A(0), B(t)]>`` with ``A = (unit, axis)`` and ``B = (unit, axis)``.

    Evolves ``psi`` and ``A psi``; the commutator is ``2 i Im <A psi(t)| B |psi(t)>``.
    """
    psi = state.amplitudes
    phi = StateVector(ham.spin_op(A[0], A[1], psi), state.dims)
    ps = evolve(ham, state, times, dt)
    fs = evolve(ham, phi, times, dt)
    vals = []
    for p, f in zip(ps, fs):
        z = np.vdot(f.amplitudes, ham.spin_op(B[0], B[1], p.amplitudes))
        vals.append(1j * (2j * z.imag))
    return np.array(vals)
