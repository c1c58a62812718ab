import math

import numpy as np
import pytest

from dipolar_multilayer.dtwa import EnsembleConfig, MomentAccumulator, run_ensemble
from dipolar_multilayer.lattice import LatticeSpec, build_coupling_matrix
from dipolar_multilayer.model import InitialStateSpec, ModelSpec, preset_antialigned_bilayer
from dipolar_multilayer.observables import (
    ObservableSeries, antisqueezed_quadratures, fit_power_law, min_variance_scan, pair_number,
    quadrature_variance, spin_length_sq, squeezed_quadratures, to_db,
)


@pytest.fixture(scope="module")
def t0_bilayer():
    cm = build_coupling_matrix(LatticeSpec(4, 4, 2, a_Z=3.0))
    cfg = EnsembleConfig(n_traj=2000, dt=0.01, t_max=0.0, sample_times=(0.0,), chunk_size=500)
    return cm, run_ensemble(cfg, preset_antialigned_bilayer(), cm, ModelSpec())


def test_series_validation():
    with pytest.raises(ValueError):
        ObservableSeries("x", [0, 1], [1], [0])
    with pytest.raises(ValueError):
        ObservableSeries("x", [0], [1], [-1])


def test_t0_values(t0_bilayer):
    cm, acc = t0_bilayer
    N = 16
    npair = pair_number(acc)
    assert abs(npair.values[0]) < 1e-12
    for q in ("sq1", "sq2", "asq1", "asq2"):
        v = quadrature_variance(acc, q)
        assert abs(v.values[0] - N / 2) < 4 * v.stderr[0] + 1e-9
        assert v.values[0] >= 0
    s = spin_length_sq(acc, 0)
    assert abs(s.values[0] - N / 2 * (N / 2 + 1)) < 4 * s.stderr[0]
    assert spin_length_sq(acc, 0, normalize=True).values[0] == pytest.approx(s.values[0] / N ** 2)
    total = quadrature_variance(acc, "sq1").values[0] + quadrature_variance(acc, "asq1").values[0]
    err = quadrature_variance(acc, "sq1").stderr[0] + quadrature_variance(acc, "asq1").stderr[0]
    assert abs(total - N) < 4 * err


def test_single_spin_length_constant():
    cm = build_coupling_matrix(LatticeSpec(1, 1, 1))
    init = InitialStateSpec([[0, 0, 1]])
    cfg = EnsembleConfig(n_traj=50, dt=0.01, t_max=1.0, sample_times=(0.0, 0.5, 1.0), n_blocks=5)
    acc = run_ensemble(cfg, init, cm, ModelSpec(staggered_h=0.7))
    s = spin_length_sq(acc, 0)
    assert np.allclose(s.values, 0.75, atol=1e-10)


def test_pair_number_requires_preset():
    cm = build_coupling_matrix(LatticeSpec(1, 1, 2))
    acc = MomentAccumulator(np.array([0.0]), cm.layer_sizes, 2,
                            directions=np.array([[0, 0, 1.0], [0, 0, 1.0]]))
    with pytest.raises(ValueError):
        pair_number(acc)
    with pytest.raises(ValueError):
        quadrature_variance(acc, "sq9")


def test_quadrature_labels():
    assert squeezed_quadratures(+1.0) == ("sq1", "sq2")
    assert squeezed_quadratures(-1.0) == ("asq1", "asq2")
    assert antisqueezed_quadratures(-1.0) == ("sq1", "sq2")


def test_db():
    s = ObservableSeries("v", [0, 1], [50.0, 25.0], [1.0, 1.0])
    d = to_db(s, 50.0)
    assert d.values[0] == 0 and d.values[1] == pytest.approx(-3.0103, abs=1e-4)


def test_min_scan_flags():
    t = np.linspace(0, 1, 11)
    mono = min_variance_scan(ObservableSeries("m", t, 1 - t, 0 * t))
    assert mono.at_boundary and mono.t_min == 1.0
    const = min_variance_scan(ObservableSeries("c", t, 0 * t + 2, 0 * t))
    assert const.at_boundary and const.t_min == 0.0


@pytest.mark.parametrize("c", [1e-3, 1e-2, 5e-2])
def test_min_scan_two_exponentials(c):
    N, SV = 100.0, 1.0
    t = np.linspace(0, 4, 81)
    v = N / 2 * np.exp(-2 * SV * t) + c * np.exp(2 * SV * t)
    scan = min_variance_scan(ObservableSeries("v", t, v, 0 * t))
    t_exact = math.log(N / 2 / c) / (4 * SV)
    assert not scan.at_boundary
    assert abs(scan.t_min - t_exact) < t[1] - t[0]
    v_exact = N / 2 * math.exp(-2 * SV * t_exact) + c * math.exp(2 * SV * t_exact)
    assert scan.value == pytest.approx(v_exact, rel=1e-2)


def test_power_law_fit():
    x = np.array([36.0, 64.0, 100.0, 144.0])
    p, c = fit_power_law(x, 3.0 * x ** -0.5)
    assert p == pytest.approx(-0.5) and math.exp(c) == pytest.approx(3.0)
