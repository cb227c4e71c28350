"""Time stepping for jump SDEs along a sampled noise path.

The continuous part advances by (optionally drift-tamed) Euler steps over
the merged jump-adapted partition; at each jump time the state receives
h(X_{τ−}, u) evaluated at the exact pre-jump state, which makes pure-jump
dynamics exact on the grid.  The compensated jump integral is realized as
jump sums minus the compensator drift c(X)dt (models driven by the raw
measure set ``compensated=False`` and skip the drift).

Explosion is detected as the first time |X| reaches the configured
threshold (the numerical stand-in for the exit-time localization), or as a
non-finite state (overflow variant).  Exploded trajectories never report
values past the explosion time.

Two engines share the identical per-step arithmetic: :func:`simulate` is
the per-path reference, :func:`simulate_batch` steps many paths at once on
a common base grid and is what the experiment harness uses.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientModel
from .noise import NoiseBatch, NoisePath

__all__ = [
    "SchemeConfig",
    "Trajectory",
    "TrajectorySet",
    "BatchResult",
    "simulate",
    "simulate_batch",
    "simulate_flow",
    "exact_linear_jump",
]

_SCHEMES = ("euler", "tamed_euler")


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme selection, explosion threshold and taming step convention.

    The tamed drift is f/(1 + Δt·|f|) with Δt the base grid step (or
    ``taming_dt`` when set); the factor vanishes as Δt → 0.
    """

    scheme: str = "tamed_euler"
    r_explode: float = 1e6
    taming_dt: float | None = None

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}")
        if self.r_explode <= 0:
            raise ValueError("r_explode must be positive")


@dataclass(frozen=True)
class Trajectory:
    """States on the merged grid; jump times carry pre- and post-values."""

    times: np.ndarray            # (n_pts,)
    states: np.ndarray           # (n_pts, m) — càdlàg values (post-jump)
    jump_indices: np.ndarray     # indices into `times` of applied jumps
    jump_pre_states: np.ndarray  # (K, m) states at τ− (before the jump map)
    exploded: bool = False
    explosion_time: float | None = None
    explosion_kind: str | None = None   # "threshold" | "overflow"
    model_name: str = ""

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def sup_norm(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.states**2, axis=1))))

    def to_csv(self, path) -> None:
        """time, state components, jump flag; RFC-4180, '.' decimals."""
        m = self.states.shape[1]
        jump_mask = np.zeros(len(self.times), dtype=bool)
        jump_mask[self.jump_indices] = True
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["time"] + [f"x{i}" for i in range(m)] + ["jump"])
            for i, t in enumerate(self.times):
                w.writerow([repr(float(t))]
                           + [repr(float(v)) for v in self.states[i]]
                           + [int(jump_mask[i])])


@dataclass(frozen=True)
class TrajectorySet:
    trajectories: tuple
    noise: NoisePath

    def __iter__(self):
        return iter(self.trajectories)

    def __len__(self):
        return len(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]


def _step_factory(model: CoefficientModel, cfg: SchemeConfig, base_dt: float):
    """One continuous Euler substep, identical arithmetic for both engines."""
    tame = cfg.scheme == "tamed_euler"
    dt0 = base_dt if cfg.taming_dt is None else cfg.taming_dt
    subtract_comp = (model.compensated and model.has_jumps
                     and model.compensator is not None)

    def step(x, delta, dw):
        f = model.drift(x)
        if tame:
            nf = np.sqrt(np.einsum("...i,...i->...", f, f))
            f = f / (1.0 + dt0 * nf)[..., None]
        g = model.diffusion(x)
        incr = f * delta + np.einsum("...ij,...j->...i", g, dw)
        if subtract_comp:
            incr = incr - model.compensator(x) * delta
        return x + incr

    return step


def simulate(model: CoefficientModel, x0, noise: NoisePath,
             cfg: SchemeConfig = SchemeConfig()) -> Trajectory:
    """Advance one path along the merged partition of ``noise``.

    Deterministic: identical (model, x0, noise, cfg) give a bitwise
    identical trajectory.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if len(x0) != model.dimension:
        raise ValueError(f"x0 has dimension {len(x0)}, model wants "
                         f"{model.dimension}")
    if noise.brownian_dim != model.brownian_dim:
        raise ValueError("noise and model disagree on the Brownian dimension")
    if model.has_jumps and model.marks is not None and \
            noise.jump_marks.shape[1] != model.marks.dimension:
        raise ValueError("noise and model disagree on the mark dimension")
    if float(np.sqrt(np.sum(x0 * x0))) >= cfg.r_explode:
        raise ValueError("initial condition norm must be below r_explode")

    step = _step_factory(model, cfg, noise.dt)
    times = noise.times
    n_pts = len(times)
    states = np.empty((n_pts, len(x0)))
    states[0] = x0
    x = x0.copy()
    jump_of_index = {int(j): k for k, j in enumerate(noise.jump_indices)}
    jump_idx, jump_pre = [], []
    exploded = False
    expl_time = None
    expl_kind = None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_pts - 1):
            delta = times[i + 1] - times[i]
            dw = noise.W[i + 1] - noise.W[i]
            x = step(x, delta, dw)
            k = jump_of_index.get(i + 1)
            if k is not None and model.jump is not None:
                pre = x
                x = pre + model.jump(pre, noise.jump_marks[k])
                jump_idx.append(i + 1)
                jump_pre.append(pre)
            if not np.all(np.isfinite(x)):
                exploded, expl_time, expl_kind = True, times[i + 1], "overflow"
                states = states[: i + 1]
                times = times[: i + 1]
                break
            states[i + 1] = x
            if float(np.sqrt(np.sum(x * x))) >= cfg.r_explode:
                exploded, expl_time, expl_kind = True, times[i + 1], "threshold"
                states = states[: i + 2]
                times = times[: i + 2]
                break
    m = len(x0)
    return Trajectory(
        times=np.asarray(times), states=states,
        jump_indices=np.asarray([j for j in jump_idx if j < len(times)],
                                dtype=int),
        jump_pre_states=(np.asarray([p for j, p in zip(jump_idx, jump_pre)
                                     if j < len(times)])
                         if jump_pre else np.empty((0, m))),
        exploded=exploded, explosion_time=expl_time, explosion_kind=expl_kind,
        model_name=model.name)


def simulate_flow(model: CoefficientModel, x0_list, noise: NoisePath,
                  cfg: SchemeConfig = SchemeConfig()) -> TrajectorySet:
    """Coupled trajectories: every initial point consumes the identical
    noise realization; explosion flags are per initial point."""
    trajs = tuple(simulate(model, x0, noise, cfg) for x0 in x0_list)
    return TrajectorySet(trajectories=trajs, noise=noise)


# ---------------------------------------------------------------------------
# Batched engine
# ---------------------------------------------------------------------------

@dataclass
class JumpRecord:
    row: int
    time: float
    pre: np.ndarray
    post: np.ndarray


@dataclass
class BatchResult:
    times: np.ndarray                 # base grid (n_cells+1,)
    final: np.ndarray                 # (B, m) stopped states
    exploded: np.ndarray              # (B,) bool
    explosion_time: np.ndarray        # (B,) nan where not exploded
    explosion_kind: np.ndarray        # (B,) int8: 0 none, 1 threshold, 2 overflow
    skeleton: np.ndarray | None       # (n_cells+1, B, m) when recorded
    jump_records: list = field(default_factory=list)

    @property
    def any_active_explosions(self) -> bool:
        return bool(np.any(self.exploded))


def simulate_batch(model: CoefficientModel, x0s, batch: NoiseBatch,
                   cfg: SchemeConfig = SchemeConfig(),
                   path_rows: np.ndarray | None = None,
                   record: str = "none",
                   record_jumps: bool = False) -> BatchResult:
    """Step a batch of states over the shared base grid.

    ``path_rows[b]`` selects which path's noise drives state row b (rows
    may share a path for common-random-numbers coupling).  Uses the same
    per-step arithmetic as :func:`simulate`; exploded rows freeze at their
    stopped value.
    """
    x = np.array(x0s, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.dimension:
        raise ValueError("x0s must have shape (B, model.dimension)")
    B = x.shape[0]
    if path_rows is None:
        path_rows = np.arange(B)
    else:
        path_rows = np.asarray(path_rows, dtype=int)
    if len(path_rows) != B:
        raise ValueError("path_rows must map every state row to a path")
    norms0 = np.sqrt(np.sum(x * x, axis=1))
    if np.any(norms0 >= cfg.r_explode):
        raise ValueError("initial condition norms must be below r_explode")

    base = batch.base
    n_cells = len(base) - 1
    step = _step_factory(model, cfg, float(base[1] - base[0]))
    active = np.ones(B, dtype=bool)
    expl_time = np.full(B, np.nan)
    expl_kind = np.zeros(B, dtype=np.int8)
    skeleton = None
    if record == "full":
        skeleton = np.empty((n_cells + 1, B, x.shape[1]))
        skeleton[0] = x
    jump_records: list[JumpRecord] = []

    # rows affected by jump events, resolved once per cell below
    rows_by_path: dict[int, np.ndarray] = {}

    def rows_of(path):
        got = rows_by_path.get(path)
        if got is None:
            got = np.flatnonzero(path_rows == path)
            rows_by_path[path] = got
        return got

    def _freeze(rows, x_prev, t) -> np.ndarray:
        """Stop rows that left the finite ball: overflowed rows report the
        last finite state, threshold crossers keep the crossing value.
        Returns the surviving subset of rows."""
        sub = x[rows]
        n = np.sqrt(np.sum(sub * sub, axis=1))
        finite = np.isfinite(n)
        crossed = finite & (n >= cfg.r_explode)
        bad = ~finite
        if np.any(bad):
            r = rows[bad]
            active[r] = False
            expl_time[r] = t
            expl_kind[r] = 2
            x[r] = x_prev[bad]
        if np.any(crossed):
            r = rows[crossed]
            active[r] = False
            expl_time[r] = t
            expl_kind[r] = 1
        return rows[finite & ~crossed]

    def _advance(rows, delta, dw, t_next):
        """One continuous substep on the given rows."""
        x_prev = x[rows]
        x[rows] = step(x_prev, delta, dw)
        return _freeze(rows, x_prev, t_next)

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_cells):
            t0, t1 = base[i], base[i + 1]
            delta = t1 - t0
            events = batch.events_by_cell.get(i, ())
            event_rows = np.zeros(B, dtype=bool)
            for ev in events:
                event_rows[rows_of(ev.path)] = True
            bulk = np.flatnonzero(active & ~event_rows)
            if len(bulk):
                _advance(bulk, delta, batch.dW[i][path_rows[bulk]], t1)
            for ev in events:
                rows = rows_of(ev.path)
                rows = rows[active[rows]]
                t_prev = ev.t_start
                for (tau, mark, dw_seg) in ev.segments:
                    if len(rows) == 0:
                        break
                    rows = _advance(rows, tau - t_prev, dw_seg, tau)
                    if len(rows) and model.jump is not None:
                        pre = x[rows].copy()
                        x[rows] = pre + model.jump(pre, mark)
                        if record_jumps:
                            for r, pv, qv in zip(rows, pre, x[rows]):
                                jump_records.append(JumpRecord(
                                    row=int(r), time=tau, pre=pv.copy(),
                                    post=qv.copy()))
                        rows = _freeze(rows, pre, tau)
                    t_prev = tau
                if len(rows):
                    _advance(rows, t1 - t_prev, ev.dW_tail, t1)
            if skeleton is not None:
                skeleton[i + 1] = x
    return BatchResult(times=base, final=x, exploded=expl_kind > 0,
                       explosion_time=expl_time, explosion_kind=expl_kind,
                       skeleton=skeleton, jump_records=jump_records)


# ---------------------------------------------------------------------------
# Exact solvers for the pure-jump fixtures
# ---------------------------------------------------------------------------

def exact_linear_jump(x0: float, a: float, noise: NoisePath) -> Trajectory:
    """Exact solution of dX = a·X_{τ−} dN: X_t = x0·(1+a)^{N_t}.

    Reproduced exactly at every merged grid time; pre-jump states carry
    one factor less.
    """
    counts = np.searchsorted(noise.jump_times, noise.times, side="right")
    states = (float(x0) * (1.0 + a) ** counts)[:, None]
    ks = np.arange(1, len(noise.jump_times) + 1)
    pre = (float(x0) * (1.0 + a) ** (ks - 1))[:, None]
    return Trajectory(times=noise.times, states=states,
                      jump_indices=noise.jump_indices.astype(int),
                      jump_pre_states=pre, model_name=f"linear_jump(a={a:g})")
