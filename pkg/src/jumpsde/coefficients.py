"""Coefficient triples (f, g, h) for jump SDEs, plus numeric certificates.

A :class:`CoefficientModel` bundles the drift f, diffusion g and jump
coefficient h of

    dX = f(X)dt + g(X)dW + jump part driven by a marked Poisson measure,

together with the compensator c(x) = ∫ h(x,u) μ(du) and metadata used by the
integrator and the experiment harness.  All coefficient callables are
vectorized: states have shape (..., m), marks (..., d), the diffusion returns
(..., m, n).

Certificates are sampling-based: each checker evaluates the claimed
inequalities on a declared sample region, fits the smallest admissible
constants, and reports witnesses when the required constant keeps growing
with the sample radius (which is how a genuinely inadmissible coefficient is
refuted at desk scale).
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "CoefficientEvaluationError",
    "GaugeDomainError",
    "CertificateRefuted",
    "InverseMismatch",
    "ExpressionError",
    "MarkSpace",
    "CoefficientModel",
    "GrowthGauge",
    "GrowthSampleSpec",
    "GrowthReport",
    "LogLipschitzCertificate",
    "ComparisonCertificate",
    "JumpHomeoCertificate",
    "JumpHomeoReport",
    "eval_coefficients",
    "check_growth_assumption",
    "check_log_lipschitz",
    "check_comparison_assumption",
    "apply_cutoff",
    "check_jump_homeomorphism",
    "compile_expression",
    "build_model",
    "build_gauge",
    "BUILTIN_MODELS",
    "BUILTIN_GAUGES",
    "xlog",
    "xsqrtlog",
    "double_log_factor",
]


class CoefficientEvaluationError(ValueError):
    """A coefficient returned a non-finite value at a finite state."""

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x)


class GaugeDomainError(ValueError):
    """The growth gauge was sampled below its domain threshold K."""


class CertificateRefuted(Exception):
    """No finite constants fit: the required constant grows with the radius.

    ``witnesses`` holds one (N, x, y, ratio, family) record per sampled
    level, tracking where the worst violation occurred.
    """

    def __init__(self, message, witnesses=None):
        super().__init__(message)
        self.witnesses = witnesses or []


class InverseMismatch(ValueError):
    """The declared jump inverse fails the round-trip identity."""


class ExpressionError(ValueError):
    """Rejected expression in the model DSL."""


# ---------------------------------------------------------------------------
# Scalar helpers with the continuous-extension conventions.
# x·log|x|, x·sqrt|log|x|| and the double-log factor are 0 where the raw
# expression is 0·∞ (x=0) or contains log 0 (|x|=1 for the double-log form).
# ---------------------------------------------------------------------------

def _safe_logabs(x):
    ax = np.abs(np.asarray(x, dtype=float))
    return np.log(np.where(ax > 0.0, ax, 1.0))


def xlog(x):
    """x·log|x| with the limit value 0 at x = 0."""
    x = np.asarray(x, dtype=float)
    return x * _safe_logabs(x)


def xsqrtlog(x):
    """x·sqrt(|log|x||) with the limit value 0 at x = 0."""
    x = np.asarray(x, dtype=float)
    return x * np.sqrt(np.abs(_safe_logabs(x)))


def double_log_factor(x):
    """x·(1−exp(−(x−1)²))·log|log|x||, extended by 0 at x = 0 and |x| = 1."""
    x = np.asarray(x, dtype=float)
    t = _safe_logabs(x)
    at = np.abs(t)
    loglog = np.log(np.where(at > 0.0, at, 1.0))
    out = x * (1.0 - np.exp(-((x - 1.0) ** 2))) * loglog
    return np.where((x == 0.0) | (t == 0.0), 0.0, out)


def _smoothstep5(t):
    """Degree-5 smoothstep: 0 below 0, 1 above 1, C² in between."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


# ---------------------------------------------------------------------------
# Mark space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkSpace:
    """Finite-activity mark measure μ = total_mass · (normalized law).

    ``sampler_spec`` names the normalized law; ``params`` are its parameters:

    ==================  =========================================
    gaussian            (scale,)        isotropic N(0, scale²I)
    uniform_ball        (radius,)       uniform on the ball
    uniform_interval    (low, high)     1-d uniform on [low, high]
    point_mass          (v1, ..., vd)   Dirac at the given point
    ==================  =========================================

    ``total_mass`` is the jump intensity λ = μ(𝒰); zero is the explicit
    jumpless sentinel.  ``moment(p)`` returns ∫|u|^p μ(du) in closed form.
    """

    dimension: int
    total_mass: float
    sampler_spec: str
    params: tuple = (1.0,)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("mark dimension must be >= 1")
        if not math.isfinite(self.total_mass) or self.total_mass < 0.0:
            raise ValueError("total_mass must be finite and >= 0")
        if self.sampler_spec not in ("gaussian", "uniform_ball",
                                     "uniform_interval", "point_mass"):
            raise ValueError(f"unknown mark law {self.sampler_spec!r}")
        if self.sampler_spec == "uniform_interval" and self.dimension != 1:
            raise ValueError("uniform_interval marks are one-dimensional")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    # -- sampling -----------------------------------------------------------
    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n marks from the normalized law μ/λ, shape (n, dimension)."""
        d = self.dimension
        if self.sampler_spec == "gaussian":
            return self.params[0] * rng.standard_normal((n, d))
        if self.sampler_spec == "uniform_ball":
            z = rng.standard_normal((n, d))
            norm = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
            norm[norm == 0.0] = 1.0
            radii = self.params[0] * rng.random((n, 1)) ** (1.0 / d)
            return z / norm * radii
        if self.sampler_spec == "uniform_interval":
            low, high = self.params
            return rng.uniform(low, high, (n, 1))
        return np.tile(np.asarray(self.params, dtype=float), (n, 1))

    # -- exact moments ------------------------------------------------------
    def moment(self, p: float) -> float:
        """∫ |u|^p μ(du) (closed form for every builtin law)."""
        lam = self.total_mass
        if lam == 0.0:
            return 0.0
        if self.sampler_spec == "gaussian":
            s, d = self.params[0], self.dimension
            chi = 2.0 ** (p / 2.0) * math.gamma((d + p) / 2.0) / math.gamma(d / 2.0)
            return lam * s**p * chi
        if self.sampler_spec == "uniform_ball":
            r, d = self.params[0], self.dimension
            return lam * r**p * d / (d + p)
        if self.sampler_spec == "uniform_interval":
            a, b = self.params
            if a >= 0.0:
                val = (b ** (p + 1) - a ** (p + 1)) / ((p + 1) * (b - a))
            elif b <= 0.0:
                val = ((-a) ** (p + 1) - (-b) ** (p + 1)) / ((p + 1) * (b - a))
            else:
                val = (b ** (p + 1) + (-a) ** (p + 1)) / ((p + 1) * (b - a))
            return lam * val
        v = np.asarray(self.params)
        return lam * float(np.sqrt(np.sum(v * v))) ** p

    def mean_measure(self) -> np.ndarray:
        """∫ u μ(du) as a vector (λ times the mean of the normalized law)."""
        if self.sampler_spec == "gaussian" or self.sampler_spec == "uniform_ball":
            mean = np.zeros(self.dimension)
        elif self.sampler_spec == "uniform_interval":
            a, b = self.params
            mean = np.array([(a + b) / 2.0])
        else:
            mean = np.asarray(self.params, dtype=float)
        return self.total_mass * mean


# ---------------------------------------------------------------------------
# Coefficient model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientModel:
    """Evaluable (f, g, h) triple with compensator and declared metadata.

    ``jump_factor``, when set, declares the product structure
    h(x, u) = jump_factor(x) · u   (scalar marks), which unlocks closed-form
    mark integrals.  ``compensated`` selects whether the jump integral is
    driven by the compensated measure (the integrator then subtracts
    c(X)dt); the pure-jump counterexample models set it False.

    All callables must be pure; evaluation is reentrant and the dataclass is
    frozen so instances are safe to share across workers.
    """

    dimension: int
    brownian_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    jump: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    marks: MarkSpace | None = None
    compensator: Callable[[np.ndarray], np.ndarray] | None = None
    jump_factor: Callable[[np.ndarray], np.ndarray] | None = None
    compensated: bool = True
    bounded: bool = False          # f and g uniformly bounded
    jump_bounded: bool = False     # sup_{x,u} |h(x,u)| < inf
    invertible_jumps: bool = False  # declared: x -> x + h(x,u) is invertible
    exact_solution: str | None = None
    name: str = "custom"
    spec: dict | None = None

    @property
    def intensity(self) -> float:
        return 0.0 if self.marks is None else self.marks.total_mass

    @property
    def has_jumps(self) -> bool:
        return self.jump is not None and self.intensity > 0.0

    def jump_square_integral(self, x: np.ndarray) -> np.ndarray:
        """∫ |h(x,u)|² μ(du), exact for product-structure jumps."""
        return self.jump_power_integral(x, 1)

    def jump_power_integral(self, x: np.ndarray, p: float,
                            nodes: np.ndarray | None = None) -> np.ndarray:
        """∫ |h(x,u)|^{2p} μ(du); falls back to fixed-node quadrature."""
        if not self.has_jumps:
            return np.zeros(np.shape(x)[:-1])
        if self.jump_factor is not None:
            fac = self.jump_factor(x)
            mag = np.sqrt(np.einsum("...i,...i->...", fac, fac))
            return mag ** (2.0 * p) * self.marks.moment(2.0 * p)
        if nodes is None:
            nodes = self.marks.sample(np.random.default_rng(0), 512)
        vals = np.stack([self.jump(x, np.broadcast_to(u, x.shape[:-1] + (len(u),)))
                         for u in nodes])
        mags = np.sqrt(np.einsum("k...i,k...i->k...", vals, vals))
        return self.intensity * np.mean(mags ** (2.0 * p), axis=0)


def quadrature_compensator(jump, marks: MarkSpace, n_nodes: int = 512,
                           seed: int = 0) -> Callable:
    """Fixed-node Monte Carlo compensator c(x) ≈ λ·mean_q h(x, u_q)."""
    nodes = marks.sample(np.random.default_rng(seed), n_nodes)
    lam = marks.total_mass

    def comp(x):
        acc = None
        for u in nodes:
            v = jump(x, np.broadcast_to(u, x.shape[:-1] + (len(u),)))
            acc = v if acc is None else acc + v
        return (lam / n_nodes) * acc

    return comp


def eval_coefficients(model: CoefficientModel, x, u=None):
    """Evaluate (f(x), g(x), h(x,u), c(x)); h is None when u is not given.

    Raises :class:`CoefficientEvaluationError` when any output is
    non-finite at a finite input (a user-model bug or a missing singularity
    convention).
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dimension:
        raise ValueError(f"state dimension {x.shape[-1]} != model dimension "
                         f"{model.dimension}")
    if not np.all(np.isfinite(x)):
        raise ValueError("state must be finite")
    f = model.drift(x)
    g = model.diffusion(x)
    h = None
    if u is not None:
        if model.jump is None:
            raise ValueError("model has no jump coefficient")
        h = model.jump(x, np.asarray(u, dtype=float))
    if model.compensator is not None:
        c = model.compensator(x)
    else:
        c = np.zeros_like(f)
    for label, val in (("drift", f), ("diffusion", g), ("jump", h),
                       ("compensator", c)):
        if val is not None and not np.all(np.isfinite(val)):
            raise CoefficientEvaluationError(
                f"{label} returned a non-finite value", x=x)
    return f, g, h, c


# ---------------------------------------------------------------------------
# Growth gauge (the admissible super-linear envelope)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthGauge:
    """Nondecreasing C¹ envelope function ρ on [K, ∞).

    ``declared_divergent`` is the user attestation that ∫ 1/(sρ(s)+1) ds
    diverges — not finitely checkable, so the validator only tests the
    necessary conditions on a sample grid.
    """

    rho: Callable[[np.ndarray], np.ndarray]
    rho_prime: Callable[[np.ndarray], np.ndarray]
    K: float = 0.0
    declared_divergent: bool = True
    name: str = "custom"

    def rho_checked(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < self.K):
            bad = float(np.min(s))
            raise GaugeDomainError(
                f"gauge {self.name!r} sampled at s={bad:g} below threshold "
                f"K={self.K:g}")
        return self.rho(s)

    def validate(self, s_grid=None) -> dict:
        """Necessary-condition check: ρ ≥ 1 nondecreasing, sρ'/ρ ↓ 0."""
        if s_grid is None:
            s_grid = np.geomspace(max(self.K, 1e-6) + 1e-12, 1e12, 200)
        r = self.rho_checked(s_grid)
        ratio = s_grid * self.rho_prime(s_grid) / r
        tail = ratio[-20:]
        return {
            "nondecreasing": bool(np.all(np.diff(r) >= -1e-12)),
            "at_least_one": bool(np.all(r >= 1.0 - 1e-12)),
            "ratio_decreasing_tail": bool(np.all(np.diff(tail) <= 1e-12)),
            "ratio_tail_value": float(tail[-1]),
            "declared_divergent": self.declared_divergent,
        }


BUILTIN_GAUGES = {}


def _register_gauge(name, rho, rho_prime, K=0.0):
    BUILTIN_GAUGES[name] = GrowthGauge(rho=rho, rho_prime=rho_prime, K=K,
                                       declared_divergent=True, name=name)


_register_gauge("log", lambda s: np.log(np.e + s), lambda s: 1.0 / (np.e + s))
_register_gauge("const", lambda s: np.ones_like(np.asarray(s, dtype=float)),
                lambda s: np.zeros_like(np.asarray(s, dtype=float)))


def build_gauge(spec) -> GrowthGauge:
    if isinstance(spec, GrowthGauge):
        return spec
    if spec in BUILTIN_GAUGES:
        return BUILTIN_GAUGES[spec]
    raise ValueError(f"unknown gauge {spec!r}")


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogLipschitzCertificate:
    C: float
    sigma: float
    K: float
    p_list: tuple
    C_of_p: dict
    dimension: int
    N_list: tuple
    per_N: dict  # N -> fitted constant at the chosen sigma


@dataclass(frozen=True)
class ComparisonCertificate:
    """Modulus family for the one-dimensional comparison assumption."""

    r_M: Callable[[float, np.ndarray], np.ndarray]  # (M, u) -> r_M(u)
    monotone_h: bool
    drift_C: float
    drift_sigma: float
    divergence_attested: bool = True


@dataclass(frozen=True)
class JumpHomeoCertificate:
    inverse: Callable[[np.ndarray, np.ndarray], np.ndarray]  # Λ_u(y)
    K_inv: float


@dataclass(frozen=True)
class GrowthSampleSpec:
    radii: tuple = tuple(np.geomspace(1e-2, 1e6, 17))
    per_radius: int = 8
    tail_points: int = 6
    slope_tol: float = 0.1
    seed: int = 0


@dataclass
class GrowthReport:
    passed: bool
    fitted_C: float
    slopes: dict
    witness: dict | None
    radii: tuple
    per_radius_max: dict
    dimension: int


def _directions(rng, count, m):
    z = rng.standard_normal((count, m))
    n = np.sqrt(np.sum(z * z, axis=1, keepdims=True))
    n[n == 0.0] = 1.0
    return z / n


def check_growth_assumption(model: CoefficientModel, gauge: GrowthGauge,
                            sample_spec: GrowthSampleSpec | None = None
                            ) -> GrowthReport:
    """Certify |f| ≤ C(|x|ρ(|x|²)+1), ‖g‖² and ∫|h|²μ ≤ C(|x|²ρ(|x|²)+1).

    Fits the smallest C ≥ 1 making all three hold over the sample, then
    refutes when the per-radius worst ratio keeps growing: a positive
    log-log tail slope means no fixed C can work on larger balls.
    """
    spec = sample_spec or GrowthSampleSpec()
    rng = np.random.default_rng(spec.seed)
    m = model.dimension
    radii = np.asarray(spec.radii, dtype=float)
    q = {"drift": [], "diffusion": [], "jump": []}
    argmax_x = {"drift": None, "diffusion": None, "jump": None}
    for r in radii:
        dirs = _directions(rng, spec.per_radius, m)
        xs = r * dirs
        rho_val = gauge.rho_checked(r * r)
        den1 = r * rho_val + 1.0
        den2 = r * r * rho_val + 1.0
        f = model.drift(xs)
        g = model.diffusion(xs)
        rf = np.sqrt(np.einsum("ki,ki->k", f, f)) / den1
        rg = np.einsum("kij,kij->k", g, g) / den2
        rh = model.jump_power_integral(xs, 1) / den2
        for fam, vals in (("drift", rf), ("diffusion", rg), ("jump", rh)):
            mx = float(np.max(vals)) if len(vals) else 0.0
            q[fam].append(mx)
            # keep the sample point attaining the worst ratio at the
            # outermost radius; that is the violation witness on FAIL
            argmax_x[fam] = xs[int(np.argmax(vals))]

    slopes = {}
    passed = True
    witness = None
    logr = np.log(radii)
    for fam, series in q.items():
        arr = np.maximum(np.asarray(series), 1e-300)
        tail = slice(-spec.tail_points, None)
        slope = float(np.polyfit(logr[tail], np.log(arr[tail]), 1)[0])
        slopes[fam] = slope
        if slope > spec.slope_tol and arr[-1] > 1e-12:
            passed = False
            witness = {"family": fam, "radius": float(radii[-1]),
                       "x": argmax_x[fam].tolist(),
                       "ratio": float(series[-1]), "tail_slope": slope}
    fitted_C = max(1.0, max(max(v) for v in q.values()))
    return GrowthReport(passed=passed, fitted_C=fitted_C, slopes=slopes,
                        witness=witness, radii=tuple(float(r) for r in radii),
                        per_radius_max={k: tuple(v) for k, v in q.items()},
                        dimension=m)


def _sample_pairs(rng, N, count, m):
    """Pairs covering the two-case split: joint small, midrange, boundary,
    and near-coincident pairs."""
    quarters = [count // 4, (count * 2) // 5, count // 8]
    quarters.append(count - sum(quarters))
    xs, ys = [], []
    # both inside the 1/N ball
    d = _directions(rng, 2 * quarters[0], m)
    r = (rng.random((2 * quarters[0], 1)) ** 2) / N
    pts = d * r
    xs.append(pts[: quarters[0]])
    ys.append(pts[quarters[0]:])
    # both with radius in [1/N, N], log-uniform
    d = _directions(rng, 2 * quarters[1], m)
    r = np.exp(rng.uniform(np.log(1.0 / N), np.log(N), (2 * quarters[1], 1)))
    pts = d * r
    xs.append(pts[: quarters[1]])
    ys.append(pts[quarters[1]:])
    # near the boundary radius N
    d = _directions(rng, 2 * quarters[2], m)
    r = rng.uniform(0.9 * N, N, (2 * quarters[2], 1))
    pts = d * r
    xs.append(pts[: quarters[2]])
    ys.append(pts[quarters[2]:])
    # tiny separations at mixed radii
    d = _directions(rng, quarters[3], m)
    r = np.exp(rng.uniform(np.log(1.0 / N), np.log(0.99 * N), (quarters[3], 1)))
    base = d * r
    eps = np.exp(rng.uniform(np.log(1e-9), 0.0, (quarters[3], 1)))
    xs.append(base)
    ys.append(base + eps * _directions(rng, quarters[3], m))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    keep = (np.sqrt(np.sum(x * x, axis=1)) <= N) & \
           (np.sqrt(np.sum(y * y, axis=1)) <= N)
    return x[keep], y[keep]


def check_log_lipschitz(model: CoefficientModel, N_list=(10, 100, 1000),
                        pairs_per_N: int = 400, p_list=(2,),
                        sigma_grid=(0.5, 1.0, 1.5), seed: int = 0,
                        growth_slope_tol: float = 0.1
                        ) -> LogLipschitzCertificate:
    """Fit minimal (C, σ) for the local log-Lipschitz inequalities.

    For each level N the required constant is the worst sampled ratio
        |f(x)−f(y)| / (log N (|x−y| + N^{-σ}))
    (and the squared / 2p-power analogues for g and h).  A certificate
    exists when that constant stabilizes across the N ladder for some σ;
    raises :class:`CertificateRefuted` when it grows for every σ.
    """
    N_arr = tuple(int(N) for N in N_list)
    if any(N <= math.e for N in N_arr):
        raise ValueError("every N must exceed e")
    rng = np.random.default_rng(seed)
    m = model.dimension
    samples = {}
    for N in N_arr:
        x, y = _sample_pairs(rng, N, pairs_per_N, m)
        dist = np.sqrt(np.sum((x - y) ** 2, axis=1))
        df = model.drift(x) - model.drift(y)
        dfn = np.sqrt(np.einsum("ki,ki->k", df, df))
        dg = model.diffusion(x) - model.diffusion(y)
        dgn = np.einsum("kij,kij->k", dg, dg)
        dh = {}
        if model.has_jumps:
            if model.jump_factor is not None:
                dfac = model.jump_factor(x) - model.jump_factor(y)
                mag = np.sqrt(np.einsum("ki,ki->k", dfac, dfac))
                for p in p_list:
                    dh[p] = mag ** (2 * p) * model.marks.moment(2 * p)
            else:
                nodes = model.marks.sample(np.random.default_rng(seed + 7), 256)
                diffs = np.stack(
                    [model.jump(x, np.broadcast_to(u, x.shape[:-1] + (len(u),)))
                     - model.jump(y, np.broadcast_to(u, y.shape[:-1] + (len(u),)))
                     for u in nodes])
                mags = np.sqrt(np.einsum("kni,kni->kn", diffs, diffs))
                for p in p_list:
                    dh[p] = model.intensity * np.mean(mags ** (2 * p), axis=0)
        else:
            for p in p_list:
                dh[p] = np.zeros_like(dist)
        samples[N] = (dist, dfn, dgn, dh)

    def constants(sigma):
        per_N, per_N_p = {}, {p: {} for p in p_list}
        for N in N_arr:
            dist, dfn, dgn, dh = samples[N]
            logN = math.log(N)
            cf = np.max(dfn / (logN * (dist + N ** (-sigma))))
            cg = np.max(dgn / (logN * (dist ** 2 + N ** (-2.0 * sigma))))
            per_N[N] = float(max(cf, cg))
            for p in p_list:
                cp = np.max(dh[p] / (logN * (dist ** (2 * p)
                                             + N ** (-2.0 * sigma * p))))
                per_N_p[p][N] = float(cp)
        return per_N, per_N_p

    logNs = np.log(np.asarray(N_arr, dtype=float))
    best = None
    refutation = []
    for sigma in sigma_grid:
        per_N, per_N_p = constants(sigma)
        vals = np.asarray([per_N[N] for N in N_arr])
        slope = float(np.polyfit(logNs, np.log(np.maximum(vals, 1e-300)), 1)[0])
        fitted = float(np.max(vals))
        growing = slope > growth_slope_tol and fitted > 1e-12
        if growing:
            refutation.append((sigma, slope, per_N))
            continue
        if best is None or fitted < best[0]:
            bestCp = {p: float(max(per_N_p[p].values())) for p in p_list}
            best = (fitted, sigma, per_N, bestCp)
    if best is None:
        witnesses = []
        sigma, slope, per_N = refutation[0]
        for N in N_arr:
            dist, dfn, dgn, _ = samples[N]
            logN = math.log(N)
            ratios = dfn / (logN * (dist + N ** (-sigma)))
            k = int(np.argmax(ratios))
            witnesses.append({"N": N, "ratio": float(ratios[k]),
                              "separation": float(dist[k])})
        raise CertificateRefuted(
            f"required constant grows with N (slope {slope:.2f} at "
            f"sigma={sigma}) for {model.name!r}", witnesses=witnesses)
    fitted, sigma, per_N, C_of_p = best
    return LogLipschitzCertificate(
        C=fitted, sigma=float(sigma), K=math.e, p_list=tuple(p_list),
        C_of_p=C_of_p, dimension=m, N_list=N_arr, per_N=per_N)


def check_comparison_assumption(model: CoefficientModel,
                                cert: ComparisonCertificate,
                                M_list=(10, 100), pairs_per_M: int = 300,
                                seed: int = 0) -> dict:
    """Sampled check of the comparison assumption (dimension 1 only).

    Verifies the r_M modulus bounds for g and the jump integral, the
    drift log-Lipschitz bound, r_M monotone on a grid, and h(·,u)
    nondecreasing on sampled ordered pairs.
    """
    if model.dimension != 1:
        raise ValueError("comparison certificates are one-dimensional")
    rng = np.random.default_rng(seed)
    ok = {"modulus": True, "drift": True, "monotone_r": True,
          "monotone_h": True}
    worst = 0.0
    for M in M_list:
        x, y = _sample_pairs(rng, M, pairs_per_M, 1)
        dist = np.abs((x - y)[:, 0])
        rM = cert.r_M(M, dist)
        dg = model.diffusion(x) - model.diffusion(y)
        dgn = np.einsum("kij,kij->k", dg, dg)
        ok["modulus"] &= bool(np.all(dgn <= rM ** 2 + 1e-12))
        dh2 = np.zeros_like(dist)
        if model.has_jumps:
            if model.jump_factor is not None:
                dfac = (model.jump_factor(x) - model.jump_factor(y))[:, 0]
                dh2 = dfac ** 2 * model.marks.moment(2)
            else:
                nodes = model.marks.sample(np.random.default_rng(seed + 5), 128)
                acc = np.zeros_like(dist)
                for u in nodes:
                    ub = np.broadcast_to(u, (len(x), len(u)))
                    dv = (model.jump(x, ub) - model.jump(y, ub))[:, 0]
                    acc += dv * dv
                dh2 = model.intensity * acc / len(nodes)
        ok["modulus"] &= bool(np.all(dh2 <= rM ** 2 + 1e-12))
        df = np.abs((model.drift(x) - model.drift(y))[:, 0])
        bound = cert.drift_C * math.log(M) * (dist + M ** (-cert.drift_sigma))
        ok["drift"] &= bool(np.all(df <= bound + 1e-12))
        worst = max(worst, float(np.max(df / np.maximum(bound, 1e-300))))
        grid = np.geomspace(1e-8, 1.0, 200)
        ok["monotone_r"] &= bool(np.all(np.diff(cert.r_M(M, grid)) >= -1e-15))
    if model.has_jumps:
        xs = np.sort(rng.uniform(-5.0, 5.0, 64))[:, None]
        us = model.marks.sample(rng, 32)
        for u in us:
            hv = model.jump(xs, np.broadcast_to(u, (len(xs), len(u))))[:, 0]
            ok["monotone_h"] &= bool(np.all(np.diff(hv) >= -1e-12))
    passed = all(ok.values()) and cert.monotone_h
    return {"passed": passed, "checks": ok, "worst_drift_ratio": worst}


# ---------------------------------------------------------------------------
# Localization
# ---------------------------------------------------------------------------

def cutoff_profile(x_norm, R):
    """φ_R: 1 on |x| ≤ R+1, 0 on |x| ≥ R+3, quintic smoothstep between
    (|φ'_R| ≤ 15/16 < 1)."""
    return 1.0 - _smoothstep5((np.asarray(x_norm, dtype=float) - (R + 1.0)) / 2.0)


def apply_cutoff(model: CoefficientModel, R: float) -> CoefficientModel:
    """Localize: (φ_R f, φ_R g, φ_R h) with the compensator rescaled by φ_R."""
    if R <= 0:
        raise ValueError("cutoff radius must be positive")

    def norm(x):
        return np.sqrt(np.einsum("...i,...i->...", x, x))

    base = model

    def drift(x):
        return cutoff_profile(norm(x), R)[..., None] * base.drift(x)

    def diffusion(x):
        return cutoff_profile(norm(x), R)[..., None, None] * base.diffusion(x)

    jump = None
    jump_factor = None
    compensator = None
    if base.jump is not None:
        def jump(x, u):
            return cutoff_profile(norm(x), R)[..., None] * base.jump(x, u)
        if base.jump_factor is not None:
            def jump_factor(x):
                return cutoff_profile(norm(x), R)[..., None] * base.jump_factor(x)
        if base.compensator is not None:
            def compensator(x):
                return cutoff_profile(norm(x), R)[..., None] * base.compensator(x)

    spec = None
    if base.spec is not None:
        spec = {"cutoff": {"base": base.spec, "R": float(R)}}
    # invertible_jumps carries over: the flag declares the base jump-map
    # structure, which localization is treated as preserving
    return replace(base, drift=drift, diffusion=diffusion, jump=jump,
                   jump_factor=jump_factor, compensator=compensator,
                   bounded=True, jump_bounded=base.jump is not None,
                   name=f"{base.name}|cutoff(R={R:g})", spec=spec)


# ---------------------------------------------------------------------------
# Jump homeomorphism certificate
# ---------------------------------------------------------------------------

@dataclass
class JumpHomeoReport:
    passed: bool
    max_roundtrip_error: float
    max_lipschitz_ratio: float
    max_growth_ratio: float
    K_inv: float
    witness: dict | None


def check_jump_homeomorphism(model: CoefficientModel,
                             cert: JumpHomeoCertificate,
                             n_states: int = 200, n_marks: int = 64,
                             radius: float = 50.0, tol: float = 1e-9,
                             seed: int = 0, strict: bool = False
                             ) -> JumpHomeoReport:
    """Verify Λ_u(x + h(x,u)) = x plus the two Λ bounds on samples.

    Returns a verdict report; with ``strict=True`` a failed round-trip
    raises :class:`InverseMismatch` instead.
    """
    if model.jump is None or model.marks is None:
        raise ValueError("model has no jump coefficient")
    rng = np.random.default_rng(seed)
    m = model.dimension
    xs = radius * (rng.random((n_states, 1)) ** 2) * _directions(rng, n_states, m)
    ys = radius * (rng.random((n_states, 1)) ** 2) * _directions(rng, n_states, m)
    us = model.marks.sample(rng, n_marks)
    max_rt, max_lip, max_growth = 0.0, 0.0, 0.0
    witness = None
    for u in us:
        ub = np.broadcast_to(u, (n_states, len(u)))
        fwd = xs + model.jump(xs, ub)
        back = cert.inverse(fwd, ub)
        err = np.sqrt(np.einsum("ki,ki->k", back - xs, back - xs))
        scale = 1.0 + np.sqrt(np.einsum("ki,ki->k", xs, xs))
        rel = err / scale
        k = int(np.argmax(rel))
        if rel[k] > max_rt:
            max_rt = float(rel[k])
            witness = {"x": xs[k].tolist(), "u": u.tolist(),
                       "roundtrip_error": float(rel[k])}
        lx = cert.inverse(xs, ub)
        ly = cert.inverse(ys, ub)
        num = np.sqrt(np.einsum("ki,ki->k", lx - ly, lx - ly))
        den = np.sqrt(np.einsum("ki,ki->k", xs - ys, xs - ys))
        max_lip = max(max_lip, float(np.max(num / np.maximum(den, 1e-300))))
        gr = np.sqrt(np.einsum("ki,ki->k", lx, lx)) / scale
        max_growth = max(max_growth, float(np.max(gr)))
    rt_ok = max_rt <= tol
    if strict and not rt_ok:
        raise InverseMismatch(
            f"round-trip error {max_rt:.3e} exceeds tolerance {tol:g} "
            f"(witness {witness})")
    passed = rt_ok and max_lip <= cert.K_inv * (1 + 1e-9) \
        and max_growth <= cert.K_inv * (1 + 1e-9)
    return JumpHomeoReport(passed=passed, max_roundtrip_error=max_rt,
                           max_lipschitz_ratio=max_lip,
                           max_growth_ratio=max_growth, K_inv=cert.K_inv,
                           witness=None if passed else witness)


def linear_jump_certificate(marks: MarkSpace) -> JumpHomeoCertificate:
    """Certificate for h(x,u) = x·u with marks bounded strictly inside 1:
    Γ_u(x) = (1+u)x, Λ_u(y) = y/(1+u), K_inv = 1/(1 − sup|u|)."""
    if marks.sampler_spec == "uniform_interval":
        umax = max(abs(marks.params[0]), abs(marks.params[1]))
    elif marks.sampler_spec == "uniform_ball":
        umax = marks.params[0]
    elif marks.sampler_spec == "point_mass":
        umax = float(np.sqrt(np.sum(np.asarray(marks.params) ** 2)))
    else:
        raise ValueError("linear-jump inverse needs bounded marks")
    if umax >= 1.0:
        raise ValueError("marks must be bounded strictly inside 1")

    def inverse(y, u):
        return y / (1.0 + u[..., :1])

    return JumpHomeoCertificate(inverse=inverse, K_inv=1.0 / (1.0 - umax))


def identity_jump_certificate() -> JumpHomeoCertificate:
    return JumpHomeoCertificate(inverse=lambda y, u: y, K_inv=1.0)


# ---------------------------------------------------------------------------
# Expression DSL
# ---------------------------------------------------------------------------

_DSL_FUNCS = {"log": np.log, "exp": np.exp, "sqrt": np.sqrt,
              "abs": np.abs, "pow": np.power}
_DSL_CONSTS = {"e": math.e, "pi": math.pi}
_DSL_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_DSL_UNARY = (ast.UAdd, ast.USub)


def _validate_expr(node, variables):
    if isinstance(node, ast.Expression):
        _validate_expr(node.body, variables)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _DSL_BINOPS):
        _validate_expr(node.left, variables)
        _validate_expr(node.right, variables)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _DSL_UNARY):
        _validate_expr(node.operand, variables)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _DSL_FUNCS:
            raise ExpressionError(f"function not allowed: "
                                  f"{ast.dump(node.func)}")
        if node.keywords:
            raise ExpressionError("keyword arguments not allowed")
        for arg in node.args:
            _validate_expr(arg, variables)
    elif isinstance(node, ast.Name):
        if node.id not in variables and node.id not in _DSL_CONSTS:
            raise ExpressionError(f"unknown name {node.id!r}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExpressionError(f"constant not allowed: {node.value!r}")
    else:
        raise ExpressionError(f"syntax not allowed: {type(node).__name__}")


def compile_expression(source: str, variables=("x", "u")) -> Callable:
    """Compile an arithmetic expression over the given variables.

    Allowed: + - * / **, unary ±, the functions log/exp/sqrt/abs/pow,
    numeric literals and the constants e, pi.  Anything else raises
    :class:`ExpressionError`.
    """
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {source!r}: {exc}") from None
    _validate_expr(tree, variables)
    code = compile(tree, "<jumpsde-dsl>", "eval")
    env = dict(_DSL_FUNCS)
    env.update(_DSL_CONSTS)

    def fn(**kwargs):
        scope = dict(env)
        scope.update(kwargs)
        with np.errstate(all="ignore"):
            return eval(code, {"__builtins__": {}}, scope)

    fn.source = source
    return fn


# ---------------------------------------------------------------------------
# Builtin model registry and config parsing
# ---------------------------------------------------------------------------

def _as_state_fn(scalar_fn):
    """Lift a scalar function to (..., 1) state arrays."""
    def fn(x):
        return scalar_fn(x[..., 0])[..., None]
    return fn


def _zero_drift(x):
    return np.zeros_like(x)


def _zero_diffusion(x):
    return np.zeros(x.shape + (1,))


def _marks_from_spec(spec) -> MarkSpace | None:
    if spec is None:
        return None
    if isinstance(spec, MarkSpace):
        return spec
    return MarkSpace(dimension=int(spec.get("dimension", 1)),
                     total_mass=float(spec.get("total_mass", 1.0)),
                     sampler_spec=spec.get("distribution", "uniform_interval"),
                     params=tuple(spec.get("params", (-0.5, 0.5))))


def _product_jump(factor_fn):
    def jump(x, u):
        return factor_fn(x) * u[..., :1]
    return jump


def _mark_bound(marks: MarkSpace | None) -> float:
    """sup |u| of the normalized mark law (inf for unbounded laws)."""
    if marks is None:
        return 0.0
    if marks.sampler_spec == "uniform_interval":
        return max(abs(marks.params[0]), abs(marks.params[1]))
    if marks.sampler_spec == "uniform_ball":
        return marks.params[0]
    if marks.sampler_spec == "point_mass":
        return float(np.sqrt(np.sum(np.asarray(marks.params) ** 2)))
    return math.inf


def _closed_form_compensator(factor_fn, marks: MarkSpace):
    mean = marks.mean_measure()

    def comp(x):
        return factor_fn(x) * mean[0]
    return comp


def _log_model(params: dict) -> CoefficientModel:
    jump_mode = params.get("jump", "sqrtlog")
    diffusion_on = bool(params.get("diffusion", True))
    drift_shift = float(params.get("drift_shift", 0.0))
    marks = _marks_from_spec(params.get("marks", {"distribution":
                                                  "uniform_interval",
                                                  "params": (-0.5, 0.5),
                                                  "total_mass": 1.0}))
    if jump_mode == "none":
        marks = None

    def drift(x):
        return xlog(x[..., 0])[..., None] - drift_shift

    if diffusion_on:
        def diffusion(x):
            return xsqrtlog(x[..., 0])[..., None, None]
    else:
        diffusion = _zero_diffusion

    factors = {"sqrtlog": xsqrtlog, "linear": lambda s: np.asarray(s, dtype=float),
               "bounded": np.tanh}
    jump = jump_factor = compensator = None
    jump_bounded = False
    invertible = True
    if jump_mode != "none":
        if jump_mode not in factors:
            raise ValueError(f"unknown log_model jump mode {jump_mode!r}")
        factor = _as_state_fn(factors[jump_mode])
        jump = _product_jump(factor)
        jump_factor = factor
        compensator = _closed_form_compensator(factor, marks)
        jump_bounded = jump_mode == "bounded"
        # x + x·u and x + tanh(x)·u are strictly increasing in x for
        # sup|u| < 1; the sqrt-log factor has an unbounded slope at |x|=1
        invertible = jump_mode in ("linear", "bounded") \
            and _mark_bound(marks) < 1.0
    return CoefficientModel(
        dimension=1, brownian_dim=1, drift=drift, diffusion=diffusion,
        jump=jump, marks=marks, compensator=compensator,
        jump_factor=jump_factor, compensated=True, jump_bounded=jump_bounded,
        invertible_jumps=invertible,
        exact_solution="log_power" if (not diffusion_on and jump_mode == "none"
                                       and drift_shift == 0.0) else None,
        name="log_model", spec={"builtin": "log_model", **params})


def _pure_jump_scale(scale, lam) -> CoefficientModel:
    marks = MarkSpace(dimension=1, total_mass=float(lam),
                      sampler_spec="point_mass", params=(1.0,))

    def factor(x):
        return scale * x

    # f = g = 0 are uniformly bounded; the jump map x -> (1+a)x collapses
    # for a = -1 (everything lands on 0) but reflects invertibly for a = -2
    return CoefficientModel(
        dimension=1, brownian_dim=1, drift=_zero_drift,
        diffusion=_zero_diffusion, jump=_product_jump(factor), marks=marks,
        compensator=_closed_form_compensator(factor, marks),
        jump_factor=factor, compensated=False, bounded=True,
        invertible_jumps=(scale != -1.0),
        exact_solution="linear_jump",
        name="pure_jump_flip" if scale == -1.0 else "pure_jump_double_flip",
        spec={"builtin": "pure_jump_flip" if scale == -1.0
              else "pure_jump_double_flip", "lam": float(lam)})


def _zero_model(params) -> CoefficientModel:
    lam = float(params.get("lam", 0.0))
    marks = None
    jump = jump_factor = compensator = None
    if lam > 0.0:
        marks = MarkSpace(dimension=1, total_mass=lam,
                          sampler_spec="uniform_interval", params=(-0.5, 0.5))

        def jump_factor(x):
            return np.zeros_like(x)
        jump = _product_jump(jump_factor)
        compensator = _closed_form_compensator(jump_factor, marks)
    return CoefficientModel(
        dimension=1, brownian_dim=1, drift=_zero_drift,
        diffusion=_zero_diffusion, jump=jump, marks=marks,
        compensator=compensator, jump_factor=jump_factor,
        bounded=True, jump_bounded=True, invertible_jumps=True, name="zero",
        spec={"builtin": "zero", **params})


def _quadratic_drift(params) -> CoefficientModel:
    def drift(x):
        return x * x
    return CoefficientModel(
        dimension=1, brownian_dim=1, drift=drift, diffusion=_zero_diffusion,
        name="quadratic_drift", spec={"builtin": "quadratic_drift"})


def _double_log_jump(params) -> CoefficientModel:
    marks = _marks_from_spec(params.get("marks", {"distribution": "gaussian",
                                                  "params": (1.0,),
                                                  "total_mass": 1.0}))
    factor = _as_state_fn(double_log_factor)
    return CoefficientModel(
        dimension=1, brownian_dim=1, drift=_zero_drift,
        diffusion=_zero_diffusion, jump=_product_jump(factor), marks=marks,
        compensator=_closed_form_compensator(factor, marks),
        jump_factor=factor, name="double_log_jump",
        spec={"builtin": "double_log_jump", **params})


BUILTIN_MODELS = {
    "log_model": _log_model,
    "pure_jump_flip": lambda params: _pure_jump_scale(-1.0,
                                                      params.get("lam", 1.0)),
    "pure_jump_double_flip": lambda params: _pure_jump_scale(
        -2.0, params.get("lam", 1.0)),
    "zero": _zero_model,
    "quadratic_drift": _quadratic_drift,
    "double_log_jump": _double_log_jump,
}


def _dsl_model(spec: dict) -> CoefficientModel:
    marks = _marks_from_spec(spec.get("marks"))
    fx = compile_expression(spec["f"], ("x",)) if "f" in spec else None
    gx = compile_expression(spec["g"], ("x",)) if "g" in spec else None
    hxu = compile_expression(spec["h"], ("x", "u")) if "h" in spec else None

    def drift(x):
        if fx is None:
            return np.zeros_like(x)
        return np.asarray(fx(x=x[..., 0]), dtype=float)[..., None] \
            * np.ones_like(x)

    def diffusion(x):
        if gx is None:
            return np.zeros(x.shape + (1,))
        return np.asarray(gx(x=x[..., 0]), dtype=float)[..., None, None] \
            * np.ones(x.shape + (1,))

    jump = compensator = None
    if hxu is not None:
        if marks is None:
            raise ValueError("dsl model with a jump needs a mark space")

        def jump(x, u):
            return np.asarray(hxu(x=x[..., 0], u=u[..., 0]),
                              dtype=float)[..., None] * np.ones_like(x)
        if "c" in spec:
            cx = compile_expression(spec["c"], ("x",))

            def compensator(x):
                return np.asarray(cx(x=x[..., 0]), dtype=float)[..., None] \
                    * np.ones_like(x)
        else:
            compensator = quadrature_compensator(jump, marks)
    return CoefficientModel(
        dimension=1, brownian_dim=1, drift=drift, diffusion=diffusion,
        jump=jump, marks=marks, compensator=compensator,
        compensated=bool(spec.get("compensated", True)),
        name=spec.get("name", "dsl"), spec={"dsl": dict(spec)})


def build_model(spec) -> CoefficientModel:
    """Build a model from a builtin name, a config dict, or pass through."""
    if isinstance(spec, CoefficientModel):
        return spec
    if isinstance(spec, str):
        spec = {"builtin": spec}
    if "cutoff" in spec:
        inner = spec["cutoff"]
        return apply_cutoff(build_model(inner["base"]), float(inner["R"]))
    if "dsl" in spec:
        return _dsl_model(spec["dsl"])
    if "builtin" in spec:
        name = spec["builtin"]
        if name not in BUILTIN_MODELS:
            raise ValueError(f"unknown builtin model {name!r}; known: "
                             f"{sorted(BUILTIN_MODELS)}")
        params = {k: v for k, v in spec.items() if k != "builtin"}
        return BUILTIN_MODELS[name](params)
    raise ValueError("model spec needs one of: builtin | dsl | cutoff")
