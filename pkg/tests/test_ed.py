import math

import numpy as np
import pytest

from dipolar_multilayer import ed
from dipolar_multilayer.lattice import LatticeSpec, build_coupling_matrix, layer_averaged_coupling
from dipolar_multilayer.model import InitialStateSpec, ModelSpec, preset_antialigned_bilayer
from dipolar_multilayer.oracle import short_time_greens, tms_pair_number


@pytest.fixture
def pair():
    spec = LatticeSpec(1, 1, 2, a_Z=1.0)
    cm = build_coupling_matrix(spec)
    return spec, cm


def test_two_spin_exchange(pair):
    spec, cm = pair
    V = cm.V[0, 1]
    init = InitialStateSpec([[0, 0, 1], [0, 0, -1]])
    ts = np.linspace(0, 4, 9)
    for J in (1.0, 0.6):
        model = ModelSpec(J, J)
        ham = ed.SpinHalfHamiltonian(cm, model)
        states = ed.evolve_full(spec, init, cm, model, ts)
        sz = ed.spin_expectations(ham, states)[:, 0, 2]
        assert np.allclose(sz, 0.5 * np.cos(V * J * ts), atol=1e-9)


def test_ising_conserves_sz(pair):
    spec, cm = pair
    init = InitialStateSpec([[1, 0, 0], [0, 0.6, 0.8]])
    model = ModelSpec(J_perp=0.0, J_z=1.0, staggered_h=0.4)
    ham = ed.SpinHalfHamiltonian(cm, model)
    states = ed.evolve_full(spec, init, cm, model, [0.0, 1.0, 3.0])
    sz = ed.spin_expectations(ham, states)[:, :, 2]
    assert np.allclose(sz, sz[0], atol=1e-10)


def test_unitarity_energy_and_symmetry():
    spec = LatticeSpec(2, 2, 2, a_Z=1.5)
    cm = build_coupling_matrix(spec)
    init = InitialStateSpec([[1, 0, 0], [0, 0.6, 0.8]])
    model = ModelSpec(0.7, 1.2, 0.3)
    ham = ed.SpinHalfHamiltonian(cm, model)
    ts = [0.0, 1.0, 2.0]
    states = ed.evolve_full(spec, init, cm, model, ts)
    assert max(abs(s.norm - 1) for s in states) < 1e-8 * ts[-1]
    E = [ed.energy(ham, s) for s in states]
    assert np.allclose(E, E[0], atol=1e-8)
    # [H, S^z_total] = 0
    psi = np.random.default_rng(1).normal(size=ham.dim) + 0j
    Sz = lambda v: sum(ham.spin_op(k, "z", v) for k in range(ham.n))
    assert np.abs(ham.apply(Sz(psi)) - Sz(ham.apply(psi))).max() < 1e-12
    with pytest.raises(ValueError):
        ed.SpinHalfHamiltonian(build_coupling_matrix(LatticeSpec(4, 4, 1)), model)


def test_dense_reference():
    """Matrix-free S^a and H agree with explicit Kronecker products."""
    spec = LatticeSpec(3, 1, 1)
    cm = build_coupling_matrix(spec)
    model = ModelSpec(0.8, 1.1, 0.25)
    ham = ed.SpinHalfHamiltonian(cm, model)
    sx = np.array([[0, 1], [1, 0]]) / 2
    sy = np.array([[0, -1j], [1j, 0]]) / 2
    sz = np.diag([0.5, -0.5])
    # basis order of a single site in ham is (down, up); flip so kron(up, down) matches
    P = np.array([[0, 1], [1, 0]])
    ops = [P @ o @ P for o in (sx, sy, sz)]

    def site(op, k):
        out = np.eye(1)
        for j in reversed(range(3)):
            out = np.kron(out, op if j == k else np.eye(2))
        return out

    H = np.zeros((8, 8), complex)
    for i in range(3):
        for j in range(i + 1, 3):
            H += cm.V[i, j] * (model.J_perp * (site(ops[0], i) @ site(ops[0], j)
                                               + site(ops[1], i) @ site(ops[1], j))
                               + model.J_z * site(ops[2], i) @ site(ops[2], j))
        H += model.staggered_h * site(ops[2], i)
    psi = np.random.default_rng(0).normal(size=8) + 1j * np.random.default_rng(1).normal(size=8)
    assert np.allclose(ham.apply(psi), H @ psi, atol=1e-13)
    for a in range(3):
        for k in range(3):
            assert np.allclose(ham.spin_op(k, a, psi), site(ops[a], k) @ psi, atol=1e-14)


def test_product_state_expectations():
    spec = LatticeSpec(2, 1, 2)
    cm = build_coupling_matrix(spec)
    d = np.array([[0.6, 0.0, 0.8], [0.0, -0.6, 0.8]])
    ham = ed.SpinHalfHamiltonian(cm, ModelSpec())
    st = ham.product_state(d[cm.layer])
    m = ed.spin_expectations(ham, [st])[0]
    assert np.allclose(m, 0.5 * d[cm.layer], atol=1e-14)
    col = ed.CollectiveHamiltonian(2, 1.5, np.zeros((2, 2)))
    m = ed.spin_expectations(col, [col.product_state(d)])[0]
    assert np.allclose(m, 1.5 * d, atol=1e-12)


def test_collective_spin_half_matches_full(pair):
    spec, cm = pair
    init = InitialStateSpec([[1, 0, 0], [0, 0.6, 0.8]])
    model = ModelSpec(0.9, 1.1, 0.2)
    ts = [0.5, 2.0]
    full = ed.evolve_full(spec, init, cm, model, ts)
    coll = ed.evolve_collective(2, 0.5, layer_averaged_coupling(cm), ts, init.directions, model)
    hf = ed.SpinHalfHamiltonian(cm, model)
    hc = ed.CollectiveHamiltonian(2, 0.5, layer_averaged_coupling(cm), model)
    assert np.allclose(ed.spin_expectations(hf, full), ed.spin_expectations(hc, coll), atol=1e-9)


def test_collective_pair_creation_and_sz():
    S, V = 2.0, -1.0
    vav = np.array([[0.0, V], [V, 0.0]])
    model = ModelSpec(staggered_h=-S * V)
    ham = ed.CollectiveHamiltonian(2, S, vav, model)
    ts = np.linspace(0, 0.3 / (S * abs(V)), 4)
    states = ed.evolve_collective(2, S, vav, ts, preset_antialigned_bilayer().directions, model)
    m = ed.spin_expectations(ham, states)
    npair = 2 * S + m[:, 0, 2] - m[:, 1, 2]
    ref = tms_pair_number(S, V, ts)
    # early-time growth with O(1/S) corrections
    assert np.allclose(npair, ref, rtol=0.5 / S + 0.05, atol=1e-12)
    tot = m[:, 0, 2] + m[:, 1, 2]
    assert np.allclose(tot, tot[0], atol=1e-10)
    with pytest.raises(ValueError):
        ed.CollectiveHamiltonian(6, 10.0, np.zeros((6, 6)))


def test_exact_greens_t0_and_slope():
    spec = LatticeSpec(1, 1, 3, a_Z=1.0)
    cm = build_coupling_matrix(spec)
    d = np.eye(3)
    ham = ed.SpinHalfHamiltonian(cm, ModelSpec())
    psi = ham.product_state(d[cm.layer])
    g0 = ed.exact_greens(ham, psi, (2, "x"), (0, "z"), [0.0])
    assert g0[0] == 0
    h = 1e-3
    state = 0.5 * d
    for (i, a), (j, b) in (((2, "x"), (0, "z")), ((2, "y"), (1, "z")), ((0, "y"), (1, "x"))):
        g = ed.exact_greens(ham, psi, (i, a), (j, b), [h])[0]
        coeff = short_time_greens(i, j, a, b, cm.V[i, j], state)
        assert g.real == pytest.approx((1j * coeff).real * h, rel=1e-3, abs=1e-12)
        assert abs(g.imag) < 1e-14
