import math
import warnings

import numpy as np
import pytest

from dipolar_multilayer.dtwa import (
    SPIN_LENGTH, EnsembleConfig, IntegrationError, StepSizeWarning, collective_spins,
    local_frames, recommended_dt, run_ensemble, sample_batch, sample_initial, step_rk4,
)
from dipolar_multilayer.lattice import LatticeSpec, build_coupling_matrix
from dipolar_multilayer.model import (
    InitialStateSpec, ModelSpec, classical_energy, preset_antialigned_bilayer, preset_xyz_spiral,
)


@pytest.fixture
def bilayer():
    cm = build_coupling_matrix(LatticeSpec(3, 3, 2, a_Z=2.0))
    return cm, preset_antialigned_bilayer(), ModelSpec(staggered_h=0.1)


def test_frames_are_right_handed():
    dirs = np.vstack([np.eye(3), -np.eye(3), [[0.6, 0.0, 0.8]]])
    for f, n in zip(local_frames(dirs), dirs):
        assert np.allclose(f @ f.T, np.eye(3), atol=1e-14)
        assert np.allclose(np.cross(f[0], f[1]), n)


def test_sampling_z_values_and_frequencies():
    cm = build_coupling_matrix(LatticeSpec(1, 1, 1))
    init = InitialStateSpec([[0, 0, 1]])
    s = sample_batch(init, cm, range(4000), master_seed=3)[:, 0, :]
    assert np.all(np.isin(s[:2], [-0.5, 0.5])) and np.all(s[2] == 0.5)
    combos = (s[0] > 0).astype(int) * 2 + (s[1] > 0)
    counts = np.bincount(combos, minlength=4)
    # each outcome has probability 1/4; 4-sigma binomial band
    assert np.all(np.abs(counts - 1000) < 4 * math.sqrt(4000 * 0.25 * 0.75))


def test_sampling_statistics():
    cm = build_coupling_matrix(LatticeSpec(4, 4, 3))
    init = InitialStateSpec([[0, 0, 1], [1, 0, 0], [0, 0.6, 0.8]])
    M = 3000
    s = sample_batch(init, cm, range(M), master_seed=11)
    assert np.allclose(np.linalg.norm(s, axis=0), SPIN_LENGTH, atol=1e-14)
    mean = s.mean(axis=2)
    for i in range(cm.n_sites):
        ref = 0.5 * init.directions[cm.layer[i]]
        assert np.all(np.abs(mean[:, i] - ref) < 4.5 * 0.5 / math.sqrt(M) + 1e-12)
    N = 16
    Sx = s[0, cm.layer == 0, :].sum(axis=0)
    sq = Sx ** 2
    assert abs(sq.mean() - N / 4) < 4 * sq.std() / math.sqrt(M)


def test_stream_independent_of_grouping():
    cm = build_coupling_matrix(LatticeSpec(3, 3, 2))
    init = preset_antialigned_bilayer()
    a = sample_batch(init, cm, range(10), 5)
    b = np.concatenate([sample_batch(init, cm, [k], 5) for k in range(10)], axis=2)
    assert np.array_equal(a, b)
    assert np.array_equal(sample_initial(init, cm, 4, 5).spins, a[:, :, 4])
    assert not np.array_equal(sample_batch(init, cm, [0], 6), a[:, :, :1])


def test_larmor_precession():
    cm = build_coupling_matrix(LatticeSpec(1, 1, 1))
    omega = 2.0
    model = ModelSpec(staggered_h=omega)
    s0 = np.array([[0.5], [0.0], [0.5]])
    n = 400
    dt = 2 * math.pi / omega / n
    s = s0.copy()
    for _ in range(n):
        s = step_rk4(s, cm, model, dt)
    assert np.allclose(s, s0, atol=1e-8)
    # quarter turn: ds/dt = B x s with B along +z rotates x towards +y
    s = s0.copy()
    for _ in range(n // 4):
        s = step_rk4(s, cm, model, dt)
    assert s[1, 0] == pytest.approx(0.5, abs=1e-8)


def test_conservation_at_recommended_dt(bilayer):
    cm, init, model = bilayer
    dt = recommended_dt(init, cm, model, master_seed=1, n_probe=20)
    s = sample_batch(init, cm, range(20), 1)
    E0 = classical_energy(s, cm, model)
    Sz0 = s[2].sum(axis=0)
    L0 = np.linalg.norm(s, axis=0)
    steps = int(5.0 / dt)
    worst = 0.0
    for _ in range(steps):
        prev = np.linalg.norm(s, axis=0)
        s = step_rk4(s, cm, model, dt)
        worst = max(worst, np.max(np.abs(np.linalg.norm(s, axis=0) - prev)))
    assert worst < 1e-10
    assert np.max(np.abs(np.linalg.norm(s, axis=0) - L0)) < 1e-8
    E = classical_energy(s, cm, model)
    assert np.max(np.abs(E - E0) / np.abs(E0)) < 1e-6
    assert np.max(np.abs(s[2].sum(axis=0) - Sz0)) < 1e-9


def test_nan_detection(bilayer):
    cm, init, model = bilayer
    s = sample_batch(init, cm, range(3), 0)
    s[0, 0, 1] = np.nan
    with pytest.raises(IntegrationError) as exc:
        step_rk4(s, cm, model, 0.01)
    assert exc.value.trajectories == [1]

    def poison(x):
        x[0, 0, 2] = np.inf

    cfg = EnsembleConfig(n_traj=5, dt=0.01, t_max=0.05, sample_times=(0.0, 0.05))
    with pytest.raises(IntegrationError) as exc:
        run_ensemble(cfg, init, cm, model, transform=poison)
    assert exc.value.trajectories == [2]


def test_step_warning(bilayer):
    cm, init, model = bilayer
    cfg = EnsembleConfig(n_traj=4, dt=0.5, t_max=1.0, sample_times=(0.0, 1.0), n_blocks=2)
    with pytest.warns(StepSizeWarning):
        run_ensemble(cfg, init, cm, model)


def test_config_validation():
    for bad in (dict(dt=0), dict(sample_times=(0.5, 0.2)), dict(sample_times=(0.0, 2.0)),
                dict(integrator="euler"), dict(n_traj=0)):
        with pytest.raises(ValueError):
            EnsembleConfig(**bad)


def test_initial_moments(bilayer):
    cm, init, model = bilayer
    cfg = EnsembleConfig(n_traj=2000, dt=0.01, t_max=0.0, sample_times=(0.0,), chunk_size=500)
    acc = run_ensemble(cfg, init, cm, model)
    m1, m2 = acc.means()
    N = 9
    assert abs(m1[0, 5] - N / 2) < 1e-12  # S_1^z
    assert abs(m1[0, 2] + N / 2) < 1e-12
    S2 = m2[0, 0, 0] + m2[0, 1, 1] + m2[0, 2, 2]
    # sigma of Sx^2 + Sy^2 per trajectory ~ sqrt(2) N/4 * sqrt(2)
    assert abs(S2 - N / 2 * (N / 2 + 1)) < 4 * (N / 2) / math.sqrt(2000) * 2
    assert acc.n_traj == 2000 and acc.counts.tolist() == [100] * 20


def test_thread_and_chunk_invariance(bilayer):
    cm, init, model = bilayer
    base = dict(n_traj=60, master_seed=9, dt=0.01, t_max=0.4, sample_times=(0.0, 0.2, 0.4))
    cfg = EnsembleConfig(chunk_size=16, **base)
    a = run_ensemble(cfg, init, cm, model, threads=1)
    b = run_ensemble(cfg, init, cm, model, threads=3)
    assert np.array_equal(a.s1, b.s1) and np.array_equal(a.s2, b.s2)
    c = run_ensemble(EnsembleConfig(chunk_size=7, **base), init, cm, model)
    assert np.allclose(a.s1, c.s1, rtol=0, atol=1e-12 * np.abs(a.s1).max())
    assert np.allclose(a.s2, c.s2, rtol=0, atol=1e-12 * np.abs(a.s2).max())


def test_traj_range_matches_full_run(bilayer):
    cm, init, model = bilayer
    cfg = EnsembleConfig(n_traj=40, dt=0.01, t_max=0.2, sample_times=(0.1, 0.2), chunk_size=10)
    full = run_ensemble(cfg, init, cm, model)
    part = run_ensemble(cfg, init, cm, model, traj_range=(0, 2))
    assert np.allclose(part.s1[0], full.s1[0])
    assert part.counts[0] == 2 and part.counts[1:].sum() == 0


def test_collective_layout():
    cm = build_coupling_matrix(LatticeSpec(2, 1, 3))
    s = np.arange(3 * 6 * 2, dtype=float).reshape(3, 6, 2)
    S = collective_spins(s, cm)
    assert S.shape == (9, 2)
    assert S[3 * 1 + 2, 0] == s[2, 2, 0] + s[2, 3, 0]


def test_short_time_spiral_magnetization():
    """Single layer x surrounded by y and z rotates as the mean-field predicts."""
    cm = build_coupling_matrix(LatticeSpec(2, 2, 3, a_Z=2.0))
    init = preset_xyz_spiral(3)
    model = ModelSpec()
    t = 0.05
    cfg = EnsembleConfig(n_traj=400, dt=0.005, t_max=t, sample_times=(0.0, t), chunk_size=100)
    acc = run_ensemble(cfg, init, cm, model)
    m1, _ = acc.means()
    # classical mean-field slope d<S_0>/dt = sum_j V_0j <s_j> x <s_0> (product of means)
    mean = 0.5 * init.directions[cm.layer].T
    B = cm.V @ mean.T
    slope = np.cross(B, mean.T)  # (n, 3)
    ref = m1[0, :3] + t * slope[cm.layer == 0].sum(axis=0)
    assert np.allclose(m1[1, :3], ref, atol=0.15 * np.abs(t * slope).max() + 0.02)
