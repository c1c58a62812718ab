"""Discrete truncated Wigner ensembles.

Each trajectory starts from a discrete phase-space sample of the product
state and follows the classical precession ``ds_i/dt = B_i x s_i``.  Ensemble
statistics are streamed into :class:`MomentAccumulator` objects.

Randomness
----------
Trajectory ``k`` draws from a Philox stream keyed by ``(master_seed, k)``.
The raw 64-bit words are read as one little-endian bit string; site ``i``
uses bits ``2 i`` and ``2 i + 1`` for its two transverse signs.  Results are
therefore independent of how trajectories are grouped or scheduled.

Parallelism
-----------
Trajectories are processed in chunks of ``chunk_size``.  Chunks may run on
several worker threads, but each chunk always has the same shape and the
partial moments are combined by a pairwise tree in chunk order.  The output
does not depend on the thread count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .lattice import CouplingMatrix
from .model import InitialStateSpec, ModelSpec, effective_field

SPIN_LENGTH = math.sqrt(3.0) / 2.0
STEP_GUIDANCE = 0.05
# automatic steps stay below the guidance so |s| drifts < 1e-10 per step
AUTO_STEP_FRACTION = 0.7


class IntegrationError(RuntimeError):
    """A trajectory produced non-finite values."""

    def __init__(self, message: str, trajectories: Sequence[int]):
        super().__init__(message)
        self.trajectories = list(trajectories)


class StepSizeWarning(UserWarning):
    pass


@dataclass
class TrajectoryState:
    spins: np.ndarray  # (3, n_sites)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.spins, axis=0)


@dataclass(frozen=True)
class EnsembleConfig:
    n_traj: int = 2000
    master_seed: int = 0
    dt: float = 0.01
    t_max: float = 1.0
    sample_times: tuple = (0.0, 1.0)
    integrator: str = "rk4_fixed"
    chunk_size: int = 250
    n_blocks: int = 20

    def __post_init__(self):
        times = tuple(float(t) for t in self.sample_times)
        object.__setattr__(self, "sample_times", times)
        if self.integrator != "rk4_fixed":
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_traj < 1 or self.chunk_size < 1 or self.n_blocks < 1:
            raise ValueError("n_traj, chunk_size and n_blocks must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")
        if not times:
            raise ValueError("sample_times is empty")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("sample_times must be sorted")
        if times[0] < 0 or times[-1] > self.t_max * (1 + 1e-12):
            raise ValueError("sample_times must lie in [0, t_max]")


# --------------------------------------------------------------------------
# initial conditions


def _signs(master_seed: int, traj_index: int, n_sites: int) -> np.ndarray:
    """Fair +-1 signs of shape (2, n_sites) from the (seed, trajectory) stream."""
    bitgen = np.random.Philox(key=np.array([master_seed, traj_index], dtype=np.uint64))
    n_words = (2 * n_sites + 63) // 64
    words = bitgen.random_raw(n_words).astype("<u8")
    bits = np.unpackbits(words.view(np.uint8), bitorder="little")[: 2 * n_sites]
    # bit 2i -> first sign of site i, bit 2i+1 -> second sign
    return (2.0 * bits.reshape(n_sites, 2).T - 1.0)


def local_frames(directions: np.ndarray) -> np.ndarray:
    """Right-handed frames ``(e1, e2, n)`` per direction, shape (L, 3, 3)."""
    frames = np.empty((len(directions), 3, 3))
    for k, n in enumerate(np.asarray(directions, dtype=float)):
        a = np.array([0.0, 1.0, 0.0]) if abs(n[0]) > 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = a - (a @ n) * n
        e1 /= np.linalg.norm(e1)
        frames[k] = (e1, np.cross(n, e1), n)
    return frames


def sample_batch(
    init: InitialStateSpec, cm: CouplingMatrix, traj_indices, master_seed: int
) -> np.ndarray:
    """Initial spins for several trajectories, shape (3, n_sites, len(traj_indices))."""
    if init.n_layers != cm.n_layers:
        raise ValueError(f"{init.n_layers} layer directions for {cm.n_layers} layers")
    frames = local_frames(init.directions)[cm.layer]  # (n, 3, 3)
    out = np.empty((3, cm.n_sites, len(traj_indices)))
    for col, k in enumerate(traj_indices):
        sg = _signs(master_seed, int(k), cm.n_sites)
        out[:, :, col] = 0.5 * (
            sg[0][:, None] * frames[:, 0] + sg[1][:, None] * frames[:, 1] + frames[:, 2]
        ).T
    return out


def sample_initial(
    init: InitialStateSpec, cm: CouplingMatrix, traj_index: int, master_seed: int
) -> TrajectoryState:
    """Discrete Wigner sample: ``s = (sigma1 e1 + sigma2 e2 + n) / 2`` per site."""
    return TrajectoryState(sample_batch(init, cm, [traj_index], master_seed)[:, :, 0])


# --------------------------------------------------------------------------
# integration


class _Precession:
    """RK4 for ``ds/dt = B x s`` with preallocated work arrays."""

    def __init__(self, cm: CouplingMatrix, model: ModelSpec, shape):
        self.V = cm.V
        self.scale = np.array([model.J_perp, model.J_perp, model.J_z])[:, None, None]
        h = model.staggered_h * cm.layer_sign
        self.h = h[:, None] if model.staggered_h else None
        self.B = np.empty(shape)
        self.k = [np.empty(shape) for _ in range(4)]
        self.tmp = np.empty(shape)
        self.scratch = np.empty(shape[1:])

    def rhs(self, s: np.ndarray, out: np.ndarray) -> np.ndarray:
        B = self.B
        np.matmul(self.V, s, out=B)
        B *= self.scale
        if self.h is not None:
            B[2] += self.h
        w = self.scratch
        np.multiply(B[1], s[2], out=out[0]); np.multiply(B[2], s[1], out=w); out[0] -= w
        np.multiply(B[2], s[0], out=out[1]); np.multiply(B[0], s[2], out=w); out[1] -= w
        np.multiply(B[0], s[1], out=out[2]); np.multiply(B[1], s[0], out=w); out[2] -= w
        return out

    def step(self, s: np.ndarray, dt: float) -> None:
        """Advance ``s`` in place by one RK4 step."""
        k1, k2, k3, k4 = self.k
        tmp = self.tmp
        self.rhs(s, k1)
        np.multiply(k1, 0.5 * dt, out=tmp); tmp += s
        self.rhs(tmp, k2)
        np.multiply(k2, 0.5 * dt, out=tmp); tmp += s
        self.rhs(tmp, k3)
        np.multiply(k3, dt, out=tmp); tmp += s
        self.rhs(tmp, k4)
        k2 += k3
        k2 *= 2.0
        k1 += k2
        k1 += k4
        k1 *= dt / 6.0
        s += k1


def step_rk4(state, cm: CouplingMatrix, model: ModelSpec, dt: float):
    """One classical RK4 step; accepts a :class:`TrajectoryState` or a spin array."""
    spins = state.spins if isinstance(state, TrajectoryState) else state
    s = np.array(spins, dtype=float)
    squeeze = s.ndim == 2
    if squeeze:
        s = s[:, :, None]
    _Precession(cm, model, s.shape).step(s, dt)
    if not np.all(np.isfinite(s)):
        bad = np.nonzero(~np.all(np.isfinite(s), axis=(0, 1)))[0]
        raise IntegrationError("non-finite spins after RK4 step", bad.tolist())
    s = s[:, :, 0] if squeeze else s
    return TrajectoryState(s) if isinstance(state, TrajectoryState) else s


def max_field(states: np.ndarray, cm: CouplingMatrix, model: ModelSpec) -> float:
    B = effective_field(states, cm, model)
    return float(np.sqrt(np.max(np.sum(B * B, axis=0))))


def recommended_dt(
    init: InitialStateSpec, cm: CouplingMatrix, model: ModelSpec,
    master_seed: int = 0, n_probe: int = 250,
) -> float:
    """``AUTO_STEP_FRACTION * STEP_GUIDANCE / max|B|`` over the first ``n_probe`` samples."""
    probe = sample_batch(init, cm, range(n_probe), master_seed)
    return AUTO_STEP_FRACTION * STEP_GUIDANCE / max_field(probe, cm, model)


# --------------------------------------------------------------------------
# moments


def collective_spins(states: np.ndarray, cm: CouplingMatrix) -> np.ndarray:
    """Layer sums flattened to index ``3 * layer + axis``: shape (3 L_z, n_traj)."""
    onehot = np.zeros((cm.n_layers, cm.n_sites))
    onehot[cm.layer, np.arange(cm.n_sites)] = 1.0
    S = np.einsum("ln,anm->lam", onehot, states)
    return S.reshape(3 * cm.n_layers, -1)


@dataclass
class MomentAccumulator:
    """Per-block sums of collective layer spins and their products.

    ``s1[b, t, k]`` and ``s2[b, t, k, l]`` hold sums over the trajectories of
    jackknife block ``b`` at sample time ``t``; ``k = 3 * layer + axis``.
    """

    times: np.ndarray
    layer_sizes: np.ndarray
    n_blocks: int
    counts: np.ndarray = field(default=None)
    s1: np.ndarray = field(default=None)
    s2: np.ndarray = field(default=None)
    directions: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        dim = 3 * len(self.layer_sizes)
        nt = len(self.times)
        if self.counts is None:
            self.counts = np.zeros(self.n_blocks, dtype=np.int64)
            self.s1 = np.zeros((self.n_blocks, nt, dim))
            self.s2 = np.zeros((self.n_blocks, nt, dim, dim))

    @property
    def n_traj(self) -> int:
        return int(self.counts.sum())

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    def add(self, t_index: int, S: np.ndarray, blocks: np.ndarray) -> None:
        for b in np.unique(blocks):
            Sb = S[:, blocks == b]
            self.s1[b, t_index] += Sb.sum(axis=1)
            self.s2[b, t_index] += Sb @ Sb.T

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if not np.array_equal(self.times, other.times) or self.n_blocks != other.n_blocks:
            raise ValueError("cannot merge accumulators with different layouts")
        return MomentAccumulator(
            self.times, self.layer_sizes, self.n_blocks,
            counts=self.counts + other.counts, s1=self.s1 + other.s1, s2=self.s2 + other.s2,
            directions=self.directions,
        )

    def means(self):
        n = self.counts.sum()
        return self.s1.sum(axis=0) / n, self.s2.sum(axis=0) / n

    def jackknife(self, func: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        """Estimate ``func(first, second)`` and its jackknife error over blocks."""
        m1, m2 = self.means()
        value = np.asarray(func(m1, m2), dtype=float)
        used = np.nonzero(self.counts)[0]
        if len(used) < 2:
            return value, np.zeros_like(value)
        n = self.counts.sum()
        t1, t2 = self.s1.sum(axis=0), self.s2.sum(axis=0)
        loo = np.array([
            func((t1 - self.s1[b]) / (n - self.counts[b]), (t2 - self.s2[b]) / (n - self.counts[b]))
            for b in used
        ])
        B = len(used)
        err = np.sqrt((B - 1) / B * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
        return value, err

    def restrict(self, blocks) -> "MomentAccumulator":
        blocks = np.asarray(blocks)
        mask = np.zeros(self.n_blocks, dtype=bool)
        mask[blocks] = True
        return MomentAccumulator(
            self.times, self.layer_sizes, self.n_blocks,
            counts=np.where(mask, self.counts, 0),
            s1=np.where(mask[:, None, None], self.s1, 0.0),
            s2=np.where(mask[:, None, None, None], self.s2, 0.0),
            directions=self.directions,
        )


def _tree_merge(items):
    items = list(items)
    while len(items) > 1:
        merged = [a.merge(b) for a, b in zip(items[::2], items[1::2])]
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]


def _substeps(times: np.ndarray, dt: float):
    """(number of steps, step size) for each interval between sample times."""
    edges = np.concatenate([[0.0], times])
    plan = []
    for a, b in zip(edges[:-1], edges[1:]):
        span = b - a
        n = int(math.ceil(span / dt - 1e-9)) if span > 0 else 0
        plan.append((n, span / n if n else 0.0))
    return plan


def run_ensemble(
    cfg: EnsembleConfig,
    init: InitialStateSpec,
    cm: CouplingMatrix,
    model: ModelSpec,
    threads: int = 1,
    transform: Callable[[np.ndarray], None] | None = None,
    traj_range: tuple[int, int] | None = None,
) -> MomentAccumulator:
    """Run ``cfg.n_traj`` trajectories and return moments at ``cfg.sample_times``.

    ``transform`` modifies each chunk's initial spins in place (used by the
    linear-response estimator).  ``traj_range`` restricts the run to a
    sub-range of trajectory indices while keeping their block labels.
    """
    start, stop = traj_range if traj_range is not None else (0, cfg.n_traj)
    if not 0 <= start < stop <= cfg.n_traj:
        raise ValueError(f"invalid trajectory range {(start, stop)}")
    times = np.asarray(cfg.sample_times)
    plan = _substeps(times, cfg.dt)
    n_blocks = min(cfg.n_blocks, cfg.n_traj)
    chunks = [
        np.arange(a, min(a + cfg.chunk_size, stop)) for a in range(start, stop, cfg.chunk_size)
    ]

    def work(indices):
        s = sample_batch(init, cm, indices, cfg.master_seed)
        if transform is not None:
            transform(s)
        blocks = indices * n_blocks // cfg.n_traj
        acc = MomentAccumulator(times, cm.layer_sizes, n_blocks, directions=init.directions)
        np.add.at(acc.counts, blocks, 1)
        integ = _Precession(cm, model, s.shape)
        for t_index, (n_steps, h) in enumerate(plan):
            for _ in range(n_steps):
                integ.step(s, h)
            if not np.all(np.isfinite(s)):
                bad = indices[~np.all(np.isfinite(s), axis=(0, 1))]
                raise IntegrationError(
                    f"non-finite spins before t = {times[t_index]:g}", bad.tolist()
                )
            acc.add(t_index, collective_spins(s, cm), blocks)
        return acc

    probe = sample_batch(init, cm, chunks[0][: min(len(chunks[0]), 250)], cfg.master_seed)
    if transform is not None:
        transform(probe)
    bmax = max_field(probe, cm, model)
    if cfg.dt * bmax > STEP_GUIDANCE * (1 + 1e-9):
        warnings.warn(
            f"dt * max|B| = {cfg.dt * bmax:.3g} exceeds the RK4 guidance {STEP_GUIDANCE}",
            StepSizeWarning, stacklevel=2,
        )

    with threadpool_limits(limits=1):
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                partials = list(pool.map(work, chunks))
        else:
            partials = [work(c) for c in chunks]
    return _tree_merge(partials)
