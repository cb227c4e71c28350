"""Analytic gadgets built from a growth gauge or a comparison modulus.

Two constructions:

* :class:`LyapunovPair` — Ψ(ξ) = ∫₀^ξ ds/(sρ(s)+1) by adaptive Simpson
  quadrature, with Φ₊ = exp(Ψ) (concave) and Φ₋ = exp(−Ψ) (decreasing).
  Used by the non-explosion and escape experiments.

* :class:`YamadaSequence` — levels a₀=1 > a₁ > ... solved from
  ∫_{aₙ}^{aₙ₋₁} du/r²(u) = n, a continuous bump φₙ with unit integral and
  r²φₙ ≤ 2/n, and the C² smoothers ψₙ(x) = ∫₀ˣ∫₀ʸ φₙ(z) dz dy · 1_{x>0}
  increasing to x⁺.

Both objects are immutable after construction and safe to share.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .coefficients import GrowthGauge

__all__ = [
    "QuadratureError",
    "ConstructionError",
    "adaptive_simpson",
    "LyapunovPair",
    "build_lyapunov",
    "YamadaSequence",
    "build_yamada_sequence",
    "MODULI",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class ConstructionError(RuntimeError):
    """The smoother sequence cannot be built: the modulus integral fails
    to supply enough mass (numerically violated divergence hypothesis)."""


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10,
                     max_depth: int = 52) -> float:
    """Adaptive Simpson with interval bisection, absolute tolerance tol."""
    if a == b:
        return 0.0

    def simpson(x0, x2, f0, f1, f2):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, x2, f0, f1, f2, whole, eps, depth):
        xm = 0.5 * (x0 + x2)
        xl = 0.5 * (x0 + xm)
        xr = 0.5 * (xm + x2)
        fl = f(xl)
        fr = f(xr)
        left = simpson(x0, xm, f0, fl, f1)
        right = simpson(xm, x2, f1, fr, f2)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps or (xm <= x0 or x2 <= xm):
            return left + right + delta / 15.0
        if depth <= 0:
            raise QuadratureError(
                f"adaptive Simpson did not converge on [{x0:g}, {x2:g}]")
        half = 0.5 * eps
        return (recurse(x0, xm, f0, fl, f1, left, half, depth - 1)
                + recurse(xm, x2, f1, fr, f2, right, half, depth - 1))

    mid = 0.5 * (a + b)
    fa, fm, fb = f(a), f(mid), f(b)
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, max_depth)


# ---------------------------------------------------------------------------
# Ψ and Φ = exp(±Ψ)
# ---------------------------------------------------------------------------

class LyapunovPair:
    """Ψ and Φ₊/Φ₋ evaluators built from a growth gauge.

    ``psi`` integrates adaptively from the nearest cached knot (absolute
    error ≤ tol); ``psi_interp`` is the fast vectorized table lookup used by
    the experiment harness (piecewise-linear between dense knots).
    """

    def __init__(self, gauge: GrowthGauge, sign: str, quad_tolerance: float,
                 xi_max: float = 1e14, knots_per_decade: int = 32):
        if sign not in ("plus", "minus"):
            raise ValueError("sign must be 'plus' or 'minus'")
        if quad_tolerance <= 0:
            raise ValueError("tolerance must be positive")
        self.gauge = gauge
        self.sign = sign
        self.quad_tolerance = quad_tolerance
        self.xi_max = float(xi_max)

        def integrand(s):
            return 1.0 / (s * float(gauge.rho_checked(s)) + 1.0)

        self._integrand = integrand
        decades = math.log10(xi_max) + 6
        n_knots = int(decades * knots_per_decade)
        knots = np.concatenate(([0.0], np.geomspace(1e-6, xi_max, n_knots)))
        seg_tol = quad_tolerance / max(len(knots), 1)
        vals = np.empty_like(knots)
        vals[0] = 0.0
        for i in range(1, len(knots)):
            vals[i] = vals[i - 1] + adaptive_simpson(
                integrand, knots[i - 1], knots[i], seg_tol)
        self._knots = knots
        self._psi_knots = vals

    # -- accurate scalar evaluation ------------------------------------------
    def psi(self, xi: float) -> float:
        """Ψ(ξ) with absolute quadrature error ≤ the pair tolerance."""
        xi = float(xi)
        if xi < 0:
            raise ValueError("psi is defined for xi >= 0")
        if xi > self.xi_max:
            raise ValueError(f"xi={xi:g} beyond table limit {self.xi_max:g}")
        k = int(np.searchsorted(self._knots, xi, side="right")) - 1
        return float(self._psi_knots[k] + adaptive_simpson(
            self._integrand, self._knots[k], xi, self.quad_tolerance))

    def phi_plus(self, xi: float) -> float:
        return math.exp(self.psi(xi))

    def phi_minus(self, xi: float) -> float:
        return math.exp(-self.psi(xi))

    def phi(self, xi: float) -> float:
        """Φ in the orientation selected at build time."""
        return self.phi_plus(xi) if self.sign == "plus" else self.phi_minus(xi)

    # -- fast vectorized evaluation -------------------------------------------
    def psi_interp(self, xi: np.ndarray) -> np.ndarray:
        """Table interpolation of Ψ (for batch statistics)."""
        xi = np.asarray(xi, dtype=float)
        return np.interp(np.clip(xi, 0.0, self.xi_max), self._knots,
                         self._psi_knots)

    def psi_grid(self, grid: np.ndarray) -> np.ndarray:
        """Ψ along an increasing grid by cumulative per-segment quadrature.

        Adjacent values share all quadrature error except the connecting
        segment, so finite differences of the result carry only the
        per-segment tolerance — required for second-difference tests.
        """
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0) or grid[0] < 0:
            raise ValueError("grid must be increasing and nonnegative")
        seg_tol = self.quad_tolerance / 50.0
        out = np.empty_like(grid)
        out[0] = self.psi(grid[0])
        for i in range(1, len(grid)):
            out[i] = out[i - 1] + adaptive_simpson(
                self._integrand, grid[i - 1], grid[i], seg_tol)
        return out

    def phi_plus_interp(self, xi):
        return np.exp(self.psi_interp(xi))

    def phi_minus_interp(self, xi):
        return np.exp(-self.psi_interp(xi))

    # -- verification ----------------------------------------------------------
    def derivative_identity_residual(self, grid=None) -> float:
        """max over the grid of |Φ'(ξ)(ξρ(ξ)+1) − s·Φ(ξ)| / Φ(ξ), with
        Φ' from central differences (s = ±1 by orientation).

        The difference step balances FD truncation against the quadrature
        tolerance, flooring the verifiable residual near 1e-7.
        """
        if grid is None:
            grid = np.geomspace(1e-3, 1e3, 25)
        s = 1.0 if self.sign == "plus" else -1.0
        worst = 0.0
        for xi in grid:
            h = max(xi, 1.0) * 1e-3
            lo = max(xi - h, 0.0)
            num = (self.phi(xi + h) - self.phi(lo)) / (xi + h - lo)
            den = xi * float(self.gauge.rho_checked(xi)) + 1.0
            phi = self.phi(xi)
            worst = max(worst, abs(num * den - s * phi) / phi)
        return worst

    def concavity_defect(self, grid=None) -> float:
        """max second difference of Φ₊ over the grid (≤ ~tol when ρ is
        admissible).  Uses cumulative quadrature so adjacent values share
        their error."""
        if grid is None:
            grid = np.linspace(0.0, 1e3, 1001)
        vals = np.exp(self.psi_grid(np.asarray(grid, dtype=float)))
        second = vals[:-2] - 2.0 * vals[1:-1] + vals[2:]
        return float(np.max(second))


def build_lyapunov(gauge: GrowthGauge, sign: str = "plus",
                   tol: float = 1e-10, xi_max: float = 1e14,
                   check: bool = True) -> LyapunovPair:
    """Build the pair and verify the derivative identity on a check grid."""
    pair = LyapunovPair(gauge, sign, tol, xi_max=xi_max)
    if check:
        residual = pair.derivative_identity_residual()
        floor = max(100.0 * tol, 1e-6)
        if residual > floor:
            raise QuadratureError(
                f"derivative identity residual {residual:.2e} exceeds "
                f"{floor:.1e}; gauge {gauge.name!r} may be non-smooth")
    return pair


# ---------------------------------------------------------------------------
# Yamada–Watanabe sequence
# ---------------------------------------------------------------------------

# bump profile in the mass coordinate v ∈ [0,1]: zero outside [0.05, 0.95],
# quintic ramps over [0.05, 0.15] and [0.85, 0.95], plateau 1 between.
# ∫ b dv = 0.8 exactly, so the normalizing constant is 0.625 for every r.
_RAMP_LO, _RAMP_HI, _MARGIN = 0.05, 0.15, 0.05


def _bump(v):
    v = np.asarray(v, dtype=float)
    up = np.clip((v - _RAMP_LO) / (_RAMP_HI - _RAMP_LO), 0.0, 1.0)
    down = np.clip(((1.0 - _MARGIN) - v) / (_RAMP_HI - _RAMP_LO), 0.0, 1.0)
    s_up = up * up * up * (10.0 + up * (-15.0 + 6.0 * up))
    s_down = down * down * down * (10.0 + down * (-15.0 + 6.0 * down))
    return s_up * s_down


_BUMP_MASS = 0.8  # ∫_0^1 b(v) dv for the profile above


@dataclass(frozen=True)
class _LevelTable:
    """Cached quadrature nodes for one smoother ψₙ on (aₙ, aₙ₋₁)."""

    u: np.ndarray       # grid nodes, increasing
    phi: np.ndarray     # φₙ at nodes
    F: np.ndarray       # ∫₀^u φₙ (cumulative)
    psi: np.ndarray     # ∫₀^u F (cumulative)


class YamadaSequence:
    """Levels aₙ and C² smoothers ψₙ(x) ↑ x⁺ for a comparison modulus r."""

    def __init__(self, r, levels, tables, tol):
        self.r = r
        self.levels = np.asarray(levels, dtype=float)
        self._tables = tuple(tables)
        self.tol = tol

    @property
    def n_max(self) -> int:
        return len(self.levels) - 1

    def _table(self, n) -> _LevelTable:
        if not 1 <= n <= self.n_max:
            raise IndexError(f"level n={n} outside 1..{self.n_max}")
        return self._tables[n - 1]

    def phi_n(self, n: int, x) -> np.ndarray:
        """The bump φₙ: support inside (aₙ, aₙ₋₁), ∫φₙ = 1, r²φₙ ≤ 2/n."""
        t = self._table(n)
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = (x > t.u[0]) & (x < t.u[-1])
        if np.any(inside):
            out[inside] = np.interp(x[inside], t.u, t.phi)
        return out

    def psi_n(self, n: int, x) -> np.ndarray:
        """ψₙ(x): 0 for x ≤ 0, C², equals x − const for x ≥ aₙ₋₁."""
        t = self._table(n)
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        hi = x >= t.u[-1]
        out[hi] = t.psi[-1] + (x[hi] - t.u[-1])
        mid = (x > t.u[0]) & (x < t.u[-1])
        if np.any(mid):
            xm = x[mid]
            idx = np.clip(np.searchsorted(t.u, xm, side="right") - 1, 0,
                          len(t.u) - 2)
            d = xm - t.u[idx]
            out[mid] = t.psi[idx] + t.F[idx] * d + 0.5 * t.phi[idx] * d * d
        return out

    def psi_n_prime(self, n: int, x) -> np.ndarray:
        """ψ'ₙ = ∫₀ˣ φₙ ∈ [0, 1]."""
        t = self._table(n)
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[x >= t.u[-1]] = 1.0
        mid = (x > t.u[0]) & (x < t.u[-1])
        if np.any(mid):
            xm = x[mid]
            idx = np.clip(np.searchsorted(t.u, xm, side="right") - 1, 0,
                          len(t.u) - 2)
            d = xm - t.u[idx]
            out[mid] = t.F[idx] + t.phi[idx] * d
        return np.clip(out, 0.0, 1.0)

    def psi_n_second(self, n: int, x) -> np.ndarray:
        """ψ''ₙ = φₙ."""
        return self.phi_n(n, x)

    def smoother_constant(self, n: int) -> float:
        """const with ψₙ(x) = x − const for x ≥ aₙ₋₁ (0 ≤ const ≤ aₙ₋₁)."""
        t = self._table(n)
        return float(t.u[-1] - t.psi[-1])

    def dump_tables(self, path) -> None:
        """CSV dump of the levels and ψₙ samples for inspection."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["n", "a_n"])
            for n, a in enumerate(self.levels):
                w.writerow([n, repr(float(a))])
            w.writerow([])
            w.writerow(["n", "x", "psi_n", "psi_n_prime", "psi_n_second"])
            for n in range(1, self.n_max + 1):
                xs = np.geomspace(self.levels[n] * 0.5, 2.0, 64)
                for x in xs:
                    w.writerow([n, repr(float(x)),
                                repr(float(self.psi_n(n, x))),
                                repr(float(self.psi_n_prime(n, x))),
                                repr(float(self.psi_n_second(n, x)))])


def _mass_integral(r, w_lo: float, w_hi: float, tol: float) -> float:
    """∫ du/r²(u) over [e^{w_lo}, e^{w_hi}] in the log coordinate."""
    def integrand(w):
        u = math.exp(w)
        return u / float(r(u)) ** 2
    return adaptive_simpson(integrand, w_lo, w_hi, tol)


def build_yamada_sequence(r, n_max: int, tol: float = 1e-10,
                          grid_size: int = 4097) -> YamadaSequence:
    """Solve the levels by bisection and assemble the C² smoothers.

    ``r`` must be nondecreasing, continuous and positive on (0, 1] with
    divergent ∫₀ du/r² (user-attested); a :class:`ConstructionError` means
    the required mass could not be found before floating-point underflow,
    i.e. the divergence hypothesis fails numerically.
    """
    probe = np.geomspace(1e-12, 1.0, 64)
    rv = np.asarray([float(r(u)) for u in probe])
    if np.any(rv <= 0.0) or np.any(np.diff(rv) < -1e-15):
        raise ValueError("modulus r must be positive and nondecreasing")

    levels = [1.0]
    tables = []
    quad_tol = min(tol, 1e-12)
    w_floor = -720.0  # below this exp(w) underflows
    for n in range(1, n_max + 1):
        w_hi = math.log(levels[-1])
        # bracket: expand downward until the mass integral reaches n
        span = 1.0
        w_lo = w_hi - span
        while _mass_integral(r, w_lo, w_hi, quad_tol) < n:
            span *= 2.0
            w_lo = w_hi - span
            if w_lo < w_floor:
                raise ConstructionError(
                    f"cannot place level {n}: ∫ du/r² reaches only "
                    f"{_mass_integral(r, w_floor, w_hi, quad_tol):.3f} < {n} "
                    "before underflow (modulus integral converges)")
        lo, hi = w_lo, w_hi
        # bisection on the monotone map a ↦ ∫_a^{a_{n-1}} du/r²
        while hi - lo > 1e-13 * max(1.0, abs(lo)):
            mid = 0.5 * (lo + hi)
            if _mass_integral(r, mid, w_hi, quad_tol) >= n:
                lo = mid
            else:
                hi = mid
        w_n = 0.5 * (lo + hi)
        a_n = math.exp(w_n)
        levels.append(a_n)

        # dense grid in the log coordinate over [a_n, a_{n-1}]
        w_grid = np.linspace(w_n, w_hi, grid_size)
        u = np.exp(w_grid)
        u[0], u[-1] = a_n, levels[-2]
        r_u = np.asarray([float(r(v)) for v in u])
        # mass coordinate v(u) = (1/n)∫_u^{a_{n-1}} du/r², cumulative trapezoid
        dens = u / r_u**2          # du/r² = (u dw)/r² in the log coordinate
        seg = 0.5 * (dens[:-1] + dens[1:]) * np.diff(w_grid)
        mass_from_right = np.concatenate(([0.0], np.cumsum(seg[::-1])))[::-1]
        total = mass_from_right[0]
        v = mass_from_right / total
        theta = (n / 2.0) / (n * _BUMP_MASS) * _bump(v)
        phi = theta * 2.0 / (n * r_u**2)
        # cumulative ∫ φ du and ∫ F du (trapezoid on the same nodes)
        du = np.diff(u)
        F = np.concatenate(([0.0], np.cumsum(0.5 * (phi[:-1] + phi[1:]) * du)))
        if F[-1] <= 0.0:
            raise ConstructionError(f"bump mass vanished at level {n}")
        scale = 1.0 / F[-1]   # exact unit integral on the discrete nodes
        if scale > 1.6:       # would push r²φₙ above the 2/n cap
            raise ConstructionError(
                f"cannot normalize φ_{n}: required scale {scale:.3f}")
        phi *= scale
        F *= scale
        psi = np.concatenate(([0.0], np.cumsum(0.5 * (F[:-1] + F[1:]) * du)))
        tables.append(_LevelTable(u=u, phi=phi, F=F, psi=psi))
    return YamadaSequence(r, levels, tables, tol)


MODULI = {
    "linear": lambda u: np.asarray(u, dtype=float),
    "sqrt": lambda u: np.sqrt(np.asarray(u, dtype=float)),
    # Yamada-type modulus for x·log|x| coefficients
    "xlog": lambda u: np.asarray(u, dtype=float)
    * np.sqrt(np.maximum(1.0, -np.log(np.minimum(np.asarray(u, dtype=float),
                                                 1.0)))),
}
