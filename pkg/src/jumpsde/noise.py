"""Reproducible driving randomness on a jump-adapted grid.

A :class:`NoisePath` holds one realization of the driving noise: the merged
partition (base grid ∪ jump times), Brownian *values* W at every partition
point, and the marked jump records.  Storing W values rather than increments
makes refinement consistency exact: refining inserts interior points by
Brownian bridging and preserves every existing W value verbatim, so coarse
increments are recovered bitwise as differences of the same stored floats.

Streams are derived counter-based from (master_seed, path_index, purpose):
distinct purposes and path indices give independent Philox streams, and the
same triple reproduces the same draws on any machine or schedule.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .coefficients import MarkSpace

__all__ = [
    "ScenarioSeed",
    "NoisePath",
    "sample_noise",
    "refine",
    "couple",
    "dump_noise",
    "load_noise",
    "NoiseBatch",
    "build_noise_batch",
]


def _tag_int(purpose: str) -> int:
    return int.from_bytes(hashlib.blake2s(purpose.encode("utf-8"),
                                          digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ScenarioSeed:
    """Derivation root for all randomness of one simulated scenario."""

    master_seed: int
    path_index: int = 0

    def stream(self, purpose: str) -> np.random.Generator:
        """Independent generator for (master_seed, path_index, purpose)."""
        ss = np.random.SeedSequence(
            [self.master_seed & 0xFFFFFFFFFFFFFFFF, self.path_index,
             _tag_int(purpose)])
        return np.random.Generator(np.random.Philox(ss))

    def path(self, path_index: int) -> "ScenarioSeed":
        return replace(self, path_index=int(path_index))


@dataclass(frozen=True)
class NoisePath:
    """One noise realization on the merged (grid ∪ jump-times) partition."""

    horizon: float
    dt: float
    intensity: float
    brownian_dim: int
    times: np.ndarray          # (n_pts,) merged partition, times[0] = 0
    W: np.ndarray              # (n_pts, brownian_dim), W[0] = 0
    is_jump: np.ndarray        # (n_pts,) bool, True where times[i] is a jump
    jump_times: np.ndarray     # (K,) strictly increasing in (0, T]
    jump_marks: np.ndarray     # (K, mark_dim)
    jump_indices: np.ndarray   # (K,) positions of the jumps in `times`
    master_seed: int = 0
    path_index: int = 0

    @property
    def n_cells(self) -> int:
        return len(self.times) - 1

    @property
    def increments(self) -> np.ndarray:
        """Brownian increments over the merged cells, shape (n_cells, nb)."""
        return np.diff(self.W, axis=0)

    def base_times(self) -> np.ndarray:
        return self.times[~self.is_jump]

    def validate(self) -> None:
        assert self.times[0] == 0.0
        assert np.all(np.diff(self.times) > 0.0), "partition not increasing"
        assert np.all(np.diff(self.jump_times) > 0.0)
        assert abs(self.times[-1] - self.horizon) <= 1e-9 * max(self.horizon, 1.0)
        assert np.all(self.times[self.jump_indices] == self.jump_times)


def _base_grid(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"dt={dt:g} does not evenly divide T={T:g}")
    grid = np.arange(n + 1, dtype=float) * dt
    grid[-1] = T
    return grid


def _merge_jumps(base: np.ndarray, jump_times: np.ndarray):
    """Insert jump times into the base grid; jumps landing exactly on a
    grid point (probability zero) reuse that point."""
    on_grid = np.isin(jump_times, base)
    insert = jump_times[~on_grid]
    pos = np.searchsorted(base, insert)
    times = np.insert(base, pos, insert)
    is_jump = np.zeros(len(times), dtype=bool)
    jump_idx = np.searchsorted(times, jump_times)
    is_jump[jump_idx] = True
    return times, is_jump, jump_idx


def sample_noise(seed: ScenarioSeed, T: float, dt: float,
                 marks: MarkSpace | None = None,
                 brownian_dim: int = 1) -> NoisePath:
    """Sample jumps (Poisson count, uniform order-statistic times, iid
    marks from μ/λ) and Brownian increments on the merged partition."""
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    base = _base_grid(T, dt)
    lam = 0.0 if marks is None else marks.total_mass
    if lam > 0.0:
        rng_j = seed.stream("jumps")
        k = int(rng_j.poisson(lam * T))
        jump_times = np.sort(rng_j.random(k) * T)
        jump_times = jump_times[(jump_times > 0.0) & (jump_times <= T)]
        jump_marks = marks.sample(rng_j, len(jump_times))
    else:
        jump_times = np.empty(0)
        jump_marks = np.empty((0, 1 if marks is None else marks.dimension))
    times, is_jump, jump_idx = _merge_jumps(base, jump_times)
    rng_w = seed.stream("brownian")
    deltas = np.diff(times)
    z = rng_w.standard_normal((len(deltas), brownian_dim))
    W = np.concatenate([np.zeros((1, brownian_dim)),
                        np.cumsum(z * np.sqrt(deltas)[:, None], axis=0)])
    return NoisePath(horizon=T, dt=dt, intensity=lam,
                     brownian_dim=brownian_dim, times=times, W=W,
                     is_jump=is_jump, jump_times=jump_times,
                     jump_marks=jump_marks, jump_indices=jump_idx,
                     master_seed=seed.master_seed, path_index=seed.path_index)


def couple(noise: NoisePath) -> NoisePath:
    """Shared handle for common-random-numbers coupling.

    NoisePath is immutable, so the realization itself is the handle: every
    simulation consuming it sees the identical W, jump times and marks.
    """
    return noise


def refine(noise: NoisePath, factor: int, seed: ScenarioSeed) -> NoisePath:
    """Subdivide each base cell by ``factor`` with conditional bridging.

    Jump times and marks are preserved exactly.  Existing W values are kept
    verbatim and interior values are drawn from the Brownian bridge between
    them, so increment sums over the old cells recover the old increments
    bitwise.
    """
    if factor < 2 or int(factor) != factor:
        raise ValueError("factor must be an integer >= 2")
    factor = int(factor)
    n_coarse = int(round(noise.horizon / noise.dt))
    dt_f = noise.dt / factor
    fine_base = np.arange(n_coarse * factor + 1, dtype=float) * dt_f
    # reuse the coarse base values verbatim so the old points stay bitwise
    fine_base[::factor] = noise.base_times()
    times, is_jump, jump_idx = _merge_jumps(fine_base, noise.jump_times)

    nb = noise.brownian_dim
    W = np.full((len(times), nb), np.nan)
    old_pos = np.searchsorted(times, noise.times)
    W[old_pos] = noise.W
    known = np.zeros(len(times), dtype=bool)
    known[old_pos] = True

    rng = seed.stream(f"refine-{factor}")
    # cells of the coarse merged partition, located in the fine partition
    starts, ends = old_pos[:-1], old_pos[1:]
    interior_count = ends - starts - 1
    # fast path: cells subdivided into exactly `factor` uniform pieces
    regular = interior_count == factor - 1
    reg_s = starts[regular]
    reg_e = ends[regular]
    if len(reg_s):
        t_prev = times[reg_s].copy()
        w_prev = W[reg_s].copy()
        t_end = times[reg_e]
        w_end = W[reg_e]
        for j in range(1, factor):
            s = times[reg_s + j]
            span = t_end - t_prev
            frac = (s - t_prev) / span
            var = (s - t_prev) * (t_end - s) / span
            z = rng.standard_normal((len(reg_s), nb))
            w_new = w_prev + frac[:, None] * (w_end - w_prev) \
                + np.sqrt(var)[:, None] * z
            W[reg_s + j] = w_new
            t_prev = s
            w_prev = w_new
    # general path: cells split by jump times (rare), sequential bridging
    for s_idx, e_idx, cnt in zip(starts[~regular], ends[~regular],
                                 interior_count[~regular]):
        if cnt == 0:
            continue
        t_prev, w_prev = times[s_idx], W[s_idx]
        t_end, w_end = times[e_idx], W[e_idx]
        for pos in range(s_idx + 1, e_idx):
            s = times[pos]
            span = t_end - t_prev
            var = (s - t_prev) * (t_end - s) / span
            w_new = w_prev + (s - t_prev) / span * (w_end - w_prev) \
                + np.sqrt(var) * rng.standard_normal(nb)
            W[pos] = w_new
            t_prev, w_prev = s, w_new
    return NoisePath(horizon=noise.horizon, dt=dt_f, intensity=noise.intensity,
                     brownian_dim=nb, times=times, W=W, is_jump=is_jump,
                     jump_times=noise.jump_times, jump_marks=noise.jump_marks,
                     jump_indices=jump_idx, master_seed=noise.master_seed,
                     path_index=noise.path_index)


# ---------------------------------------------------------------------------
# Binary dump / restore (versioned header, little-endian float64)
# ---------------------------------------------------------------------------

_MAGIC = b"JSDENOIS"
_VERSION = 1


def dump_noise(noise: NoisePath, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<QQII", len(noise.times), len(noise.jump_times),
                             noise.brownian_dim, noise.jump_marks.shape[1]))
        fh.write(struct.pack("<dddqq", noise.horizon, noise.dt,
                             noise.intensity, noise.master_seed,
                             noise.path_index))
        for arr in (noise.times, noise.W, noise.jump_times, noise.jump_marks):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(noise.jump_indices,
                                      dtype="<u8").tobytes())


def load_noise(path) -> NoisePath:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a jumpsde noise dump")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported noise dump version {version}")
        n_pts, k, nb, dm = struct.unpack("<QQII", fh.read(24))
        horizon, dt, lam, master, pidx = struct.unpack("<dddqq", fh.read(40))

        def arr(count, shape):
            data = np.frombuffer(fh.read(count * 8), dtype="<f8")
            return data.reshape(shape).astype(float)

        times = arr(n_pts, (n_pts,))
        W = arr(n_pts * nb, (n_pts, nb))
        jump_times = arr(k, (k,))
        jump_marks = arr(k * dm, (k, dm))
        jump_idx = np.frombuffer(fh.read(k * 8), dtype="<u8").astype(np.int64)
    is_jump = np.zeros(n_pts, dtype=bool)
    is_jump[jump_idx] = True
    return NoisePath(horizon=horizon, dt=dt, intensity=lam, brownian_dim=nb,
                     times=times, W=W, is_jump=is_jump, jump_times=jump_times,
                     jump_marks=jump_marks, jump_indices=jump_idx,
                     master_seed=master, path_index=pidx)


# ---------------------------------------------------------------------------
# Batch packing for the vectorized engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _JumpEvent:
    path: int                # column in the batch
    cell: int                # base-grid cell index
    segments: tuple          # ((tau, mark, dW_before), ...) in time order
    dW_tail: np.ndarray      # increment from the last jump to the cell end
    t_start: float
    t_end: float


@dataclass(frozen=True)
class NoiseBatch:
    """Structure-of-arrays view over per-path noise for batched stepping.

    ``dW[i, p]`` is the full increment of path p over base cell i; cells
    containing jumps additionally carry :class:`_JumpEvent` records with the
    exact intra-cell sub-increments, derived from the same merged-partition
    floats the per-path integrator consumes.
    """

    base: np.ndarray                 # (n_cells+1,)
    dW: np.ndarray                   # (n_cells, P, nb)
    events_by_cell: dict             # cell -> tuple of _JumpEvent
    n_paths: int
    brownian_dim: int


def build_noise_batch(paths: Sequence[NoisePath]) -> NoiseBatch:
    if not paths:
        raise ValueError("no paths given")
    base = paths[0].base_times()
    nb = paths[0].brownian_dim
    n_cells = len(base) - 1
    dW = np.empty((n_cells, len(paths), nb))
    events: dict[int, list] = {}
    for p, noise in enumerate(paths):
        if len(noise.base_times()) != len(base) or noise.brownian_dim != nb:
            raise ValueError("paths must share the base grid and dimension")
        base_pos = np.flatnonzero(~noise.is_jump)
        Wb = noise.W[base_pos]
        dW[:, p, :] = np.diff(Wb, axis=0)
        if len(noise.jump_times) == 0:
            continue
        cells = np.searchsorted(base, noise.jump_times, side="right") - 1
        cells = np.clip(cells, 0, n_cells - 1)
        for cell in np.unique(cells):
            sel = np.flatnonzero(cells == cell)
            start_idx = base_pos[cell]
            end_idx = base_pos[cell + 1]
            segs = []
            prev = start_idx
            for k in sel:
                j = noise.jump_indices[k]
                segs.append((float(noise.jump_times[k]),
                             noise.jump_marks[k].copy(),
                             noise.W[j] - noise.W[prev]))
                prev = j
            tail = noise.W[end_idx] - noise.W[prev]
            events.setdefault(int(cell), []).append(_JumpEvent(
                path=p, cell=int(cell), segments=tuple(segs), dW_tail=tail,
                t_start=float(base[cell]), t_end=float(base[cell + 1])))
    return NoiseBatch(base=base, dW=dW,
                      events_by_cell={c: tuple(v) for c, v in events.items()},
                      n_paths=len(paths), brownian_dim=nb)
