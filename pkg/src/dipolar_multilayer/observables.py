"""Physical observables from ensemble moments, with jackknife error bars."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dtwa import MomentAccumulator

AXIS = {"x": 0, "y": 1, "z": 2}

# (coefficient, layer, axis) terms; labels follow the V > 0 convention
QUADRATURES = {
    "sq1": ((1.0, 0, "x"), (1.0, 1, "y")),
    "sq2": ((1.0, 0, "y"), (-1.0, 1, "x")),
    "asq1": ((1.0, 0, "x"), (-1.0, 1, "y")),
    "asq2": ((1.0, 0, "y"), (1.0, 1, "x")),
}


@dataclass
class ObservableSeries:
    name: str
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (len(self.times) == len(self.values) == len(self.stderr)):
            raise ValueError("times, values and stderr must have equal lengths")
        if np.any(self.stderr < 0):
            raise ValueError("negative standard error")

    def __len__(self):
        return len(self.times)


def _idx(layer: int, axis: str) -> int:
    return 3 * layer + AXIS[axis]


def layer_magnetization(acc: MomentAccumulator, layer: int, axis: str) -> ObservableSeries:
    k = _idx(layer, axis)
    v, e = acc.jackknife(lambda m1, m2: m1[:, k])
    return ObservableSeries(f"S{layer}_{axis}", acc.times, v, e)


def spin_length_sq(acc: MomentAccumulator, layer: int, normalize: bool = False) -> ObservableSeries:
    """``<S_i^2> = sum_a <(S_i^a)^2>``, optionally divided by ``N^2``."""
    ks = [_idx(layer, a) for a in "xyz"]
    norm = float(acc.layer_sizes[layer]) ** 2 if normalize else 1.0
    v, e = acc.jackknife(lambda m1, m2: sum(m2[:, k, k] for k in ks) / norm)
    return ObservableSeries(f"spin_length_sq_L{layer}", acc.times, v, e)


def pair_number(acc: MomentAccumulator) -> ObservableSeries:
    """Excitation count ``N + <S_0^z> - <S_1^z>`` of the anti-aligned bilayer."""
    d = acc.directions
    if d is None or d.shape[0] != 2 or not np.allclose(d, [[0, 0, -1], [0, 0, 1]]):
        raise ValueError("pair number is defined for the anti-aligned bilayer preset")
    N = float(acc.layer_sizes[0])
    z0, z1 = _idx(0, "z"), _idx(1, "z")
    v, e = acc.jackknife(lambda m1, m2: N + m1[:, z0] - m1[:, z1])
    return ObservableSeries("pair_number", acc.times, v, e)


def quadrature_variance(acc: MomentAccumulator, which: str) -> ObservableSeries:
    """Variance of a hybrid cross-layer quadrature such as ``S_0^x + S_1^y``."""
    if acc.n_layers != 2:
        raise ValueError("hybrid quadratures are defined for a bilayer")
    try:
        terms = QUADRATURES[which]
    except KeyError:
        raise ValueError(f"unknown quadrature {which!r}; choose from {sorted(QUADRATURES)}")
    c = np.zeros(6)
    for coef, layer, axis in terms:
        c[_idx(layer, axis)] = coef

    def var(m1, m2):
        return np.einsum("k,tkl,l->t", c, m2, c) - (m1 @ c) ** 2

    v, e = acc.jackknife(var)
    return ObservableSeries(f"var_{which}", acc.times, v, e)


def squeezed_quadratures(V: float) -> tuple[str, str]:
    """Labels of the squeezed pair for the sign of the interlayer coupling.

    The quadratic pair Hamiltonian ``S V (a^dag b^dag + a b)`` squeezes
    ``S_0^x + S_1^y`` when ``V > 0``; for ``V < 0`` the roles of the two
    families swap.
    """
    return ("sq1", "sq2") if V > 0 else ("asq1", "asq2")


def antisqueezed_quadratures(V: float) -> tuple[str, str]:
    return ("asq1", "asq2") if V > 0 else ("sq1", "sq2")


def to_db(series: ObservableSeries, reference: float) -> ObservableSeries:
    """``10 log10(value / reference)``; -3 dB means half the coherent variance."""
    v = 10.0 * np.log10(series.values / reference)
    e = 10.0 / np.log(10.0) * series.stderr / np.abs(series.values)
    return ObservableSeries(series.name + "_dB", series.times, v, e)


@dataclass(frozen=True)
class MinimumScan:
    t_min: float
    value: float
    at_boundary: bool
    index: int


def min_variance_scan(series: ObservableSeries) -> MinimumScan:
    """Grid minimum refined by the parabola through it and its two neighbours.

    A minimum on the first or last sample is returned unrefined and flagged.
    """
    t, v = series.times, series.values
    i = int(np.argmin(v))
    if i == 0 or i == len(v) - 1:
        return MinimumScan(float(t[i]), float(v[i]), True, i)
    x0, x1, x2 = t[i - 1 : i + 2]
    y0, y1, y2 = v[i - 1 : i + 2]
    # divided differences of the interpolating parabola
    d01 = (y1 - y0) / (x1 - x0)
    d12 = (y2 - y1) / (x2 - x1)
    curv = (d12 - d01) / (x2 - x0)
    if curv <= 0:
        return MinimumScan(float(t[i]), float(v[i]), False, i)
    tv = 0.5 * (x0 + x1) - d01 / (2.0 * curv)
    tv = min(max(tv, x0), x2)
    yv = y0 + d01 * (tv - x0) + curv * (tv - x0) * (tv - x1)
    return MinimumScan(float(tv), float(yv), False, i)


def fit_power_law(x, y) -> tuple[float, float]:
    """Least-squares ``log y = p log x + c``; returns ``(p, c)``."""
    p, c = np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)
    return float(p), float(c)
