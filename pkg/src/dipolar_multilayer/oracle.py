"""Closed-form references: two-mode squeezing, Holstein-Primakoff quadratic
forms around non-collinear product states, the bosonic Kitaev chain and
short-time spin Green's functions.

Boson conventions
-----------------
Around a spin of length ``S`` pointing along the local ``z`` axis::

    S^x = sqrt(S/2) (a + a^dag),  S^y = sqrt(S/2) (-i a + i a^dag),  S^z = S - a^dag a

Quadratures are ``x = (a + a^dag)/sqrt(2)`` and ``p = (a - a^dag)/(i sqrt(2))``, so
``S^x ~ sqrt(S) x`` and ``S^y ~ sqrt(S) p``.  Quadratic forms are stored as::

    H_2 = 1/2 sum_ij (a_i, a_i^dag) [[H++, H+-], [H-+, H--]]_ij (a_j, a_j^dag)^T
    H_1 = sum_i (h+_i a_i + h-_i a_i^dag)

Number terms ``c a^dag a`` are split symmetrically, ``H+-_ii = H-+_ii = c``,
dropping the constant ``c/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

EPS = np.zeros((3, 3, 3))
for _a, _b, _c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    EPS[_a, _b, _c], EPS[_a, _c, _b] = 1.0, -1.0

AXES = {"x": 0, "y": 1, "z": 2}


# --------------------------------------------------------------------------
# two-mode squeezing


def tms_pair_number(S: float, V: float, t):
    """``2 sinh^2(S V t)`` (even in ``V``)."""
    return 2.0 * np.sinh(S * V * np.asarray(t, dtype=float)) ** 2


def tms_variance(N: float, S: float, V: float, t, branch: int):
    """``N/2 exp(branch * 2 S V t)``; branch ``+1`` anti-squeezed, ``-1`` squeezed (V > 0)."""
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    return 0.5 * N * np.exp(branch * 2.0 * S * V * np.asarray(t, dtype=float))


# --------------------------------------------------------------------------
# rotations


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Proper rotation by ``angle`` about the unit vector ``axis`` (Rodrigues)."""
    u = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-12:
        raise ValueError(f"rotation axis must be a unit vector, |axis| = {np.linalg.norm(u)}")
    K = np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def rotation_to(n) -> np.ndarray:
    """Minimal rotation taking ``z`` to ``n``; ``-z`` uses a half turn about ``x``."""
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    z = np.array([0.0, 0.0, 1.0])
    c = float(n @ z)
    axis = np.cross(z, n)
    s = np.linalg.norm(axis)
    if s < 1e-14:
        return np.eye(3) if c > 0 else rotation_matrix([1.0, 0.0, 0.0], math.pi)
    return rotation_matrix(axis / s, math.atan2(s, c))


SPIRAL_AXIS = np.ones(3) / math.sqrt(3.0)


def spiral_rotations(n_layers: int) -> np.ndarray:
    """``R_j`` about ``(1,1,1)/sqrt 3`` by ``(j+1) 2 pi/3`` so ``R_j z`` cycles x, y, z."""
    return np.array([
        rotation_matrix(SPIRAL_AXIS, (j + 1) * 2.0 * math.pi / 3.0) for j in range(n_layers)
    ])


# --------------------------------------------------------------------------
# Holstein-Primakoff quadratic forms


@dataclass
class QuadraticBosonForm:
    n_modes: int
    h_plus: np.ndarray
    h_minus: np.ndarray
    Hpp: np.ndarray
    Hpm: np.ndarray
    Hmp: np.ndarray
    Hmm: np.ndarray
    S: float = 1.0

    @property
    def blocks(self) -> np.ndarray:
        return np.block([[self.Hpp, self.Hpm], [self.Hmp, self.Hmm]])

    def hermiticity_error(self) -> float:
        """Violation of ``H+- = (H+-)^dag = (H-+)^T``, ``H-- = (H++)^*`` and ``h- = (h+)^*``."""
        return max(
            np.max(np.abs(self.Hpm - self.Hpm.conj().T)),
            np.max(np.abs(self.Hmp - self.Hpm.T)),
            np.max(np.abs(self.Hpp - self.Hmm.conj())),
            np.max(np.abs(self.Hpp - self.Hpp.T)),
            np.max(np.abs(self.Hmp - self.Hpm.T)),
            np.max(np.abs(self.h_plus - self.h_minus.conj())),
        )

    def quadrature_matrix(self) -> np.ndarray:
        """Real symmetric ``K`` with ``H_2 = 1/2 c^T K c + const``, ``c = (x, p)``."""
        n = self.n_modes
        W = np.block([[np.eye(n), 1j * np.eye(n)], [np.eye(n), -1j * np.eye(n)]]) / math.sqrt(2.0)
        K = W.T @ self.blocks @ W
        K = 0.5 * (K + K.T)
        if np.max(np.abs(K.imag)) > 1e-10 * max(1.0, np.max(np.abs(K))):
            raise ValueError("quadratic form is not Hermitian")
        return K.real


def hp_quadratic(
    directions, couplings, S: float, fields=None, rotations=None
) -> QuadraticBosonForm:
    """Linear and quadratic boson terms of ``1/2 sum_{i!=j} S_i^T J_ij S_j + sum_i f_i . S_i``.

    Parameters
    ----------
    directions : (n, 3) array
        Classical spin direction of each (collective) site.
    couplings : (n, n, 3, 3) array
        Lab-frame coupling matrices with ``J_ji = J_ij^T``; diagonal ignored.
    S : float
        Spin length of every site.
    fields : (n, 3) array, optional
        Lab-frame Zeeman fields ``f_i``.
    rotations : (n, 3, 3) array, optional
        Local-to-lab rotations with ``R_i z = n_i``.  The transverse gauge of
        the bosons follows these; by default the minimal rotation is used.
    """
    d = np.asarray(directions, dtype=float)
    n = len(d)
    if np.any(np.abs(np.linalg.norm(d, axis=1) - 1.0) > 1e-12):
        raise ValueError("directions must be unit vectors")
    J = np.array(couplings, dtype=float)
    if J.shape != (n, n, 3, 3):
        raise ValueError(f"couplings must have shape {(n, n, 3, 3)}, got {J.shape}")
    J[np.arange(n), np.arange(n)] = 0.0
    if np.max(np.abs(J - J.transpose(1, 0, 3, 2))) > 1e-12:
        raise ValueError("couplings must satisfy J_ji = J_ij^T")
    R = np.array([rotation_to(v) for v in d]) if rotations is None else np.asarray(rotations, float)
    if np.max(np.abs(R[:, :, 2] - d)) > 1e-12:
        raise ValueError("rotations must map z onto the directions")
    f = np.zeros((n, 3)) if fields is None else np.asarray(fields, dtype=float)

    Jt = np.einsum("iab,ijbc,jcd->ijad", R.transpose(0, 2, 1), J, R)
    ft = np.einsum("iba,ib->ia", R, f)

    c = math.sqrt(S / 2.0)
    m_a = np.array([c, -1j * c])          # coefficient of a in (S^x, S^y)
    m_d = m_a.conj()                      # coefficient of a^dag
    T = Jt[:, :, :2, :2]
    Hpp = np.einsum("a,ijab,b->ij", m_a, T, m_a)
    Hpm = np.einsum("a,ijab,b->ij", m_a, T, m_d)
    Hmp = np.einsum("a,ijab,b->ij", m_d, T, m_a)
    Hmm = np.einsum("a,ijab,b->ij", m_d, T, m_d)

    number = -S * Jt[:, :, 2, 2].sum(axis=1) - ft[:, 2]
    Hpm = Hpm + np.diag(number)
    Hmp = Hmp + np.diag(number)

    g = S * Jt[:, :, :2, 2].sum(axis=1) + ft[:, :2]
    h_plus = g @ m_a
    h_minus = g @ m_d
    return QuadraticBosonForm(n, h_plus, h_minus, Hpp, Hpm, Hmp, Hmm, S=S)


def heisenberg_chain_couplings(n: int, J: float, periodic: bool = True) -> np.ndarray:
    cpl = np.zeros((n, n, 3, 3))
    for i in range(n if periodic else n - 1):
        j = (i + 1) % n
        cpl[i, j] += J * np.eye(3)
        cpl[j, i] += J * np.eye(3)
    return cpl


def tms_hamiltonian_check(S: float, V: float, staggered: bool = False, tol: float = 1e-12):
    """HP form of the anti-aligned collective bilayer ``V S_0 . S_1``.

    Verifies the blocks ``S V (a^dag b^dag + a b) + S V (a^dag a + b^dag b)``
    (mode 0 is ``b`` on the down layer, mode 1 is ``a``).  With
    ``staggered=True`` the field ``h = -S V`` is included and the number
    block must vanish.
    """
    directions = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]])
    cpl = np.zeros((2, 2, 3, 3))
    cpl[0, 1] = cpl[1, 0] = V * np.eye(3)
    fields = None
    if staggered:
        h = -S * V
        fields = np.array([[0.0, 0.0, h], [0.0, 0.0, -h]])
    form = hp_quadratic(directions, cpl, S, fields=fields)
    anomalous = np.array([[0.0, S * V], [S * V, 0.0]])
    number = np.zeros((2, 2)) if staggered else S * V * np.eye(2)
    err = max(
        np.max(np.abs(form.Hpp - anomalous)), np.max(np.abs(form.Hmm - anomalous)),
        np.max(np.abs(form.Hpm - number)), np.max(np.abs(form.Hmp - number)),
        np.max(np.abs(form.h_plus)), np.max(np.abs(form.h_minus)),
    )
    if err > tol * max(1.0, abs(S * V)):
        raise ValueError(f"two-mode-squeezing blocks mismatch by {err:.3e}")
    return form


# --------------------------------------------------------------------------
# spiral state


def spiral_rotating_frame(J: float, S: float = 1.0) -> np.ndarray:
    """Uniform field ``w`` with ``H_U = H - w . sum_i S_i`` for the xyz spiral.

    ``w = J S (1, 1, 1)``: the mean-field motion of the spiral is a rigid
    rotation about ``(1,1,1)`` at rate ``|w| = sqrt 3 J S``.
    """
    return J * S * np.ones(3)


def spiral_hp_form(n_layers: int, J: float, S: float, rotating_frame: bool = True,
                   periodic: bool = True) -> QuadraticBosonForm:
    """HP form of the nearest-neighbour Heisenberg chain around the xyz spiral."""
    directions = np.eye(3)[np.arange(n_layers) % 3]
    fields = None
    if rotating_frame:
        fields = -np.tile(spiral_rotating_frame(J, S), (n_layers, 1))
    return hp_quadratic(
        directions, heisenberg_chain_couplings(n_layers, J, periodic), S,
        fields=fields, rotations=spiral_rotations(n_layers),
    )


def measure_spiral_rotation_rate(J: float = 1.0, S: float = 1.0, t_max: float | None = None,
                                 n_steps: int = 4000) -> float:
    """Angular velocity of the classical periodic 3-site chain started in the spiral.

    Integrates ``ds_i/dt = B_i x s_i`` with ``B_i = J (s_{i-1} + s_{i+1})`` by
    RK4 and fits the unwrapped azimuth of site 0 about ``(1,1,1)``.
    """
    if t_max is None:
        t_max = 4.0 * math.pi / (abs(J) * S)
    s = S * np.eye(3)

    def rhs(s):
        B = J * (np.roll(s, 1, axis=0) + np.roll(s, -1, axis=0))
        return np.cross(B, s)

    e1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    e2 = np.cross(SPIRAL_AXIS, e1)
    h = t_max / n_steps
    angles = np.empty(n_steps + 1)
    for k in range(n_steps + 1):
        angles[k] = math.atan2(s[0] @ e2, s[0] @ e1)
        if k < n_steps:
            k1 = rhs(s); k2 = rhs(s + 0.5 * h * k1); k3 = rhs(s + 0.5 * h * k2); k4 = rhs(s + h * k3)
            s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    t = np.linspace(0.0, t_max, n_steps + 1)
    slope = np.polyfit(t, np.unwrap(angles), 1)[0]
    return float(slope)


# --------------------------------------------------------------------------
# bosonic Kitaev chain


def symplectic_form(n: int) -> np.ndarray:
    """``Omega = [[0, 1], [-1, 0]]`` in the ``(x_1..x_n, p_1..p_n)`` ordering."""
    Z, I = np.zeros((n, n)), np.eye(n)
    return np.block([[Z, I], [-I, Z]])


def _shift(n: int) -> np.ndarray:
    return np.eye(n, k=1)


@dataclass(frozen=True)
class KitaevChain:
    """Open bosonic Kitaev chain in quadrature form.

    The dynamical matrix is ``M = 2 SV [[Sh, 0], [0, -Sh^T]]`` with ``Sh`` the
    single upper shift, i.e. ``dx_j/dt = 2 SV x_{j+1}`` and
    ``dp_j/dt = -2 SV p_{j-1}``.  This sign makes the propagator reproduce the
    chiral commutators of :func:`kitaev_commutator`.
    """

    n_layers: int
    coupling: float  # S V

    @property
    def dynamical_matrix(self) -> np.ndarray:
        Sh = _shift(self.n_layers)
        Z = np.zeros_like(Sh)
        return 2.0 * self.coupling * np.block([[Sh, Z], [Z, -Sh.T]])

    def propagator(self, t: float) -> np.ndarray:
        return kitaev_propagator(self.n_layers, self.coupling, t)

    def greens(self, t: float) -> np.ndarray:
        return kitaev_greens_matrix(self.n_layers, self.coupling, t)

    def zero_modes(self) -> np.ndarray:
        """Indices of the stationary quadratures ``x_n`` and ``p_1``."""
        return np.array([self.n_layers - 1, self.n_layers])


def kitaev_propagator(n: int, SV: float, t: float) -> np.ndarray:
    """``exp(t M)`` as the terminating series ``sum_{k<n} (t M)^k / k!``."""
    if n < 2:
        raise ValueError("the chain needs at least two sites")
    tM = t * KitaevChain(n, SV).dynamical_matrix
    T = np.eye(2 * n)
    term = np.eye(2 * n)
    for k in range(1, n):
        term = term @ tM / k
        T = T + term
    return T


def kitaev_commutator(r: int, SV: float, t: float, kind: str) -> complex:
    """Bulk commutators of the chiral chain.

    ``xp``: ``[x_j, p_{j+r}(t)] = i (-2 SV t)^r / r!`` for ``r >= 0``;
    ``px``: ``[p_j, x_{j-r}(t)] = -i (2 SV t)^r / r!`` for ``r >= 0``;
    ``xx`` and ``pp`` vanish.
    """
    if kind in ("xx", "pp"):
        return 0j
    if r < 0:
        return 0j
    if kind == "xp":
        return 1j * (-2.0 * SV * t) ** r / math.factorial(r)
    if kind == "px":
        return -1j * (2.0 * SV * t) ** r / math.factorial(r)
    raise ValueError(f"kind must be one of xp, px, xx, pp; got {kind!r}")


def kitaev_greens_matrix(n: int, SV: float, t: float) -> np.ndarray:
    """``[c_a(0), c_b(t)] = (G T^T)_ab`` with ``G = [[0, i], [-i, 0]]``."""
    G = 1j * symplectic_form(n)
    return G @ kitaev_propagator(n, SV, t).T


# --------------------------------------------------------------------------
# generic linearised dynamics (diagnostic)


def quadratic_propagator(form: QuadraticBosonForm, t: float) -> np.ndarray:
    """``exp(t Omega K)`` for a form without linear terms (generic ``expm``)."""
    if max(np.max(np.abs(form.h_plus)), np.max(np.abs(form.h_minus))) > 1e-9:
        raise ValueError("linear terms present; change frame first")
    A = symplectic_form(form.n_modes) @ form.quadrature_matrix()
    return scipy.linalg.expm(t * A)


def linearized_spin_greens(form: QuadraticBosonForm, rotations, source: int, t: float) -> np.ndarray:
    """Spin response ``G[j, a, b]`` of source ``source`` from the quadratic dynamics.

    The target index ``b`` is expressed in the frame co-moving with the
    reference of ``form`` (for the spiral, the rotating frame).  Singular
    values and left vectors are unaffected by that frame.
    """
    n, S = form.n_modes, form.S
    T = quadratic_propagator(form, t)
    C = 1j * symplectic_form(n) @ T.T  # [c_a(0), c_b(t)]
    R = np.asarray(rotations, dtype=float)
    out = np.zeros((n, 3, 3))
    for j in range(n):
        block = np.real(1j * S * C[np.ix_([source, n + source], [j, n + j])])
        # local transverse (x, y) -> lab via columns 0, 1 of R
        out[j] = R[source][:, :2] @ block @ R[j][:, :2].T
    return out


# --------------------------------------------------------------------------
# short-time expansion


def short_time_greens(i: int, j: int, alpha, beta, V_ij: float, state,
                      J=(1.0, 1.0, 1.0)) -> complex:
    """Coefficient of ``t`` in ``<[S_i^alpha, S_j^beta(t)]>`` on a product state.

    ``state`` holds the mean spin vector of every site or layer.  For an XXZ
    bond ``V_ij sum_g J_g S_i^g S_j^g`` the coefficient is
    ``-i V_ij sum J_g eps[g, beta, d] eps[alpha, g, m] <S_i^m> <S_j^d>``.
    """
    a = AXES[alpha] if isinstance(alpha, str) else int(alpha)
    b = AXES[beta] if isinstance(beta, str) else int(beta)
    if i == j:
        raise ValueError("same-site Green's functions need higher orders")
    if a == b:
        raise ValueError("equal-axis Green's functions need higher orders")
    m = np.asarray(state, dtype=float)
    Jv = np.asarray(J, dtype=float)
    val = np.einsum("g,gd,gm,m,d->", Jv, EPS[:, b, :], EPS[a, :, :], m[i], m[j])
    return -1j * V_ij * val
