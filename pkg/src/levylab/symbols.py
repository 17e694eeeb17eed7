"""Levy characteristic exponents, operator symbols, and analytic gates.

The exponent families implemented here are the closed forms used throughout
the lab: isotropic stable ``|xi|^alpha``, multifractal sums
``sum_i c_i |xi|^{alpha_i}``, the relativistic stable exponent
``(|xi|^2 + m^{2/alpha})^{alpha/2} - m``, the quadratic Wiener exponent, an
anisotropic product of one-dimensional stables, and a piecewise-linear
tabulated exponent for experiments with hand-made symbols.

On top of the families sit the analytic diagnostics that gate the stability
machinery: growth of ``Re psi`` against ``log(1+|xi|)`` (existence of bounded
transition densities), domination of a family by a fixed reference exponent,
and the sup distance between two exponents on a frequency grid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError, TabulationRangeError

__all__ = [
    "Stable",
    "Multifractal",
    "RelativisticStable",
    "Brownian",
    "StableProduct",
    "TabulatedSymbol",
    "ConstantOperatorSymbol",
    "CoefficientSpec",
    "OperatorSpec",
    "char_exponent",
    "operator_symbol",
    "HWVerdict",
    "HWReport",
    "hartman_wintner_check",
    "default_hw_radii",
    "DominationReport",
    "domination_check",
    "symbol_distance",
    "unit_directions",
]


def _as_points(xi, dim: int) -> np.ndarray:
    """Coerce input to an array of points with shape (..., dim)."""
    x = np.asarray(xi, dtype=float)
    if dim == 1:
        if x.ndim == 0 or x.shape[-1] != 1:
            x = x[..., np.newaxis]
        return x
    if x.ndim == 0 or x.shape[-1] != dim:
        raise DimensionMismatchError(
            f"expected points in R^{dim}, got array of shape {x.shape}"
        )
    return x


def _radii(xi, dim: int) -> np.ndarray:
    pts = _as_points(xi, dim)
    return np.sqrt(np.sum(pts * pts, axis=-1))


class LevySymbol:
    """Base class: a characteristic exponent psi on R^k with psi(0) = 0.

    ``symmetric`` declares that psi is real and even; it is asserted by the
    test suite for every closed-form family below.
    """

    dim: int = 1
    symmetric: bool = True

    def exponent(self, xi):
        raise NotImplementedError

    def __call__(self, xi):
        return self.exponent(xi)

    # Smallest stable index driving the family's tails; None when the family
    # has no polynomial tail (used by heavy-tail guards downstream).
    def min_stable_index(self) -> float | None:
        return None


@dataclass(frozen=True)
class Stable(LevySymbol):
    """Isotropic stable exponent |xi|^alpha, alpha in (0, 2]."""

    alpha: float
    dim: int = 1
    symmetric: bool = field(default=True, init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")

    def exponent(self, xi):
        return _radii(xi, self.dim) ** self.alpha

    def min_stable_index(self):
        return self.alpha if self.alpha < 2.0 else None


@dataclass(frozen=True)
class Multifractal(LevySymbol):
    """Sum of isotropic stable exponents: sum_i c_i |xi|^{alpha_i}."""

    terms: tuple[tuple[float, float], ...]  # (weight c_i >= 0, index alpha_i)
    dim: int = 1
    symmetric: bool = field(default=True, init=False)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((float(c), float(a)) for c, a in self.terms))
        if not self.terms:
            raise ValueError("at least one (c, alpha) term required")
        for c, a in self.terms:
            if c < 0:
                raise ValueError(f"weights must be nonnegative, got {c}")
            if not 0.0 < a <= 2.0:
                raise ValueError(f"indices must lie in (0, 2], got {a}")

    def exponent(self, xi):
        r = _radii(xi, self.dim)
        out = np.zeros_like(r)
        for c, a in self.terms:
            out += c * r**a
        return out

    def min_stable_index(self):
        active = [a for c, a in self.terms if c > 0 and a < 2.0]
        return min(active) if active else None


@dataclass(frozen=True)
class RelativisticStable(LevySymbol):
    """Relativistic stable exponent (|xi|^2 + m^{2/alpha})^{alpha/2} - m."""

    alpha: float
    m: float
    dim: int = 1
    symmetric: bool = field(default=True, init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if self.m <= 0:
            raise ValueError(f"m must be positive, got {self.m}")

    def exponent(self, xi):
        r2 = _radii(xi, self.dim) ** 2
        return (r2 + self.m ** (2.0 / self.alpha)) ** (self.alpha / 2.0) - self.m

    def min_stable_index(self):
        # Tempering makes the tails exponential; no polynomial index.
        return None


@dataclass(frozen=True)
class Brownian(LevySymbol):
    """Quadratic exponent |xi|^2 / 2 of a standard Wiener driver."""

    dim: int = 1
    symmetric: bool = field(default=True, init=False)

    def exponent(self, xi):
        return 0.5 * _radii(xi, self.dim) ** 2


@dataclass(frozen=True)
class StableProduct(LevySymbol):
    """Anisotropic product driver: sum_j |xi_j|^{alpha_j}.

    Characteristic exponent of a vector of independent one-dimensional
    symmetric stable processes, one per coordinate.
    """

    alphas: tuple[float, ...]
    symmetric: bool = field(default=True, init=False)

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        for a in self.alphas:
            if not 0.0 < a <= 2.0:
                raise ValueError(f"indices must lie in (0, 2], got {a}")

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.alphas)

    def exponent(self, xi):
        pts = _as_points(xi, self.dim)
        out = np.zeros(pts.shape[:-1])
        for j, a in enumerate(self.alphas):
            out += np.abs(pts[..., j]) ** a
        return out

    def min_stable_index(self):
        active = [a for a in self.alphas if a < 2.0]
        return min(active) if active else None


@dataclass(frozen=True)
class TabulatedSymbol(LevySymbol):
    """Radial exponent tabulated on an increasing |xi| grid.

    Evaluation interpolates linearly between nodes; querying outside the
    tabulated range raises instead of extrapolating, so that growth
    diagnostics cannot be silently corrupted by invented tails.
    """

    radii: tuple[float, ...]
    values: tuple[float, ...]
    dim: int = 1
    symmetric: bool = field(default=True, init=False)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 2:
            raise ValueError("radii and values must be 1-d arrays of equal length >= 2")
        if not np.all(np.diff(r) > 0):
            raise ValueError("radii must be strictly increasing")
        if r[0] != 0.0 or v[0] != 0.0:
            raise ValueError("tabulation must start at |xi| = 0 with value 0")
        object.__setattr__(self, "radii", tuple(r))
        object.__setattr__(self, "values", tuple(v))

    def exponent(self, xi):
        r = _radii(xi, self.dim)
        rmax = self.radii[-1]
        if np.any(r > rmax * (1 + 1e-12)):
            raise TabulationRangeError(
                f"|xi| = {float(np.max(r)):g} outside tabulated range [0, {rmax:g}]"
            )
        return np.interp(r, self.radii, self.values)


def char_exponent(spec: LevySymbol, xi):
    """Evaluate the characteristic exponent of ``spec`` at frequency ``xi``."""
    return spec.exponent(xi)


# ---------------------------------------------------------------------------
# Operators: drift / diffusion / jump-coefficient triples around an exponent.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSpec:
    """A coefficient function with its declared bound and Lipschitz constant.

    ``fn`` must be vectorized over leading axes: input of shape (..., d)
    produces output of shape (..., out_shape).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    bound: float
    lipschitz: float

    def __post_init__(self):
        if self.bound <= 0 or self.lipschitz < 0:
            raise ValueError("declared bound must be positive, Lipschitz constant nonnegative")

    def __call__(self, x):
        return self.fn(x)


def _const_fn(value: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    arr = np.asarray(value, dtype=float)

    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(arr, x.shape[:-1] + arr.shape)

    return fn


@dataclass(frozen=True)
class OperatorSpec:
    """State-dependent generator data: drift b, diffusion sigma, jump matrix gamma.

    The full symbol is  p(x, xi) = -i (b(x), xi) + (a(x) xi, xi)/2
    + psi(gamma(x)^T xi)  with a = sigma sigma^T.
    """

    dim: int
    b: CoefficientSpec
    sigma: CoefficientSpec
    gamma: CoefficientSpec
    psi: LevySymbol
    constant: bool = False

    @classmethod
    def levy(cls, psi: LevySymbol, dim: int | None = None,
             b=None, sigma=None, gamma=None) -> "OperatorSpec":
        """Constant-coefficient operator; defaults b = 0, sigma = 0, gamma = I."""
        k = psi.dim
        d = k if dim is None else dim
        b_arr = np.zeros(d) if b is None else np.broadcast_to(np.asarray(b, float), (d,))
        s_arr = np.zeros((d, d)) if sigma is None else np.asarray(sigma, float) * np.eye(d) \
            if np.ndim(sigma) == 0 else np.asarray(sigma, float)
        g_arr = np.eye(d, k) if gamma is None else np.asarray(gamma, float) * np.eye(d, k) \
            if np.ndim(gamma) == 0 else np.asarray(gamma, float)
        if s_arr.shape != (d, d) or g_arr.shape != (d, k):
            raise DimensionMismatchError("sigma must be d x d and gamma d x k")
        mk = lambda a: CoefficientSpec(_const_fn(a), bound=max(1e-12, float(np.max(np.abs(a))) + 1.0), lipschitz=0.0)
        return cls(dim=d, b=mk(b_arr), sigma=mk(s_arr), gamma=mk(g_arr), psi=psi, constant=True)

    def coefficients_at(self, x):
        """Evaluate (b, sigma, gamma) at points x of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        return self.b(x), self.sigma(x), self.gamma(x)

    def validate(self, sample_points, rng=None, tol: float = 1e-9):
        """Spot-verify declared bounds, Lipschitz constants and PSD of a(x).

        Raises ValueError on the first violated declaration.
        """
        x = np.asarray(sample_points, dtype=float)
        if x.ndim == 1:
            x = x[:, np.newaxis] if self.dim == 1 else x[np.newaxis, :]
        rng = np.random.default_rng(0) if rng is None else rng
        perm = rng.permutation(x.shape[0])
        for name, coeff in (("b", self.b), ("sigma", self.sigma), ("gamma", self.gamma)):
            vals = np.asarray(coeff(x), dtype=float)
            mags = np.sqrt(np.sum(vals.reshape(vals.shape[0], -1) ** 2, axis=-1))
            if np.any(mags > coeff.bound + tol):
                raise ValueError(f"coefficient {name} exceeds declared bound {coeff.bound}")
            other = np.asarray(coeff(x[perm]), dtype=float)
            dv = np.sqrt(np.sum((vals - other).reshape(vals.shape[0], -1) ** 2, axis=-1))
            dx = np.sqrt(np.sum((x - x[perm]) ** 2, axis=-1))
            mask = dx > 0
            if np.any(dv[mask] > coeff.lipschitz * dx[mask] + tol):
                raise ValueError(f"coefficient {name} violates declared Lipschitz constant")
        sig = np.asarray(self.sigma(x), dtype=float)
        a = np.einsum("...ij,...kj->...ik", sig, sig)
        eigs = np.linalg.eigvalsh(a)
        if np.any(eigs < -tol):
            raise ValueError("a(x) = sigma sigma^T must be positive semidefinite")
        return True


@dataclass(frozen=True)
class ConstantOperatorSymbol(LevySymbol):
    """Effective exponent p(xi) of a constant-coefficient operator.

    Behaves like a (possibly complex, possibly asymmetric) characteristic
    exponent on R^d, so the density machinery can invert it directly.
    """

    op: OperatorSpec

    def __post_init__(self):
        if not self.op.constant:
            raise ValueError("only constant-coefficient operators have a state-free symbol")
        x0 = np.zeros((1, self.op.dim))
        b = np.asarray(self.op.b(x0), float)[0]
        object.__setattr__(self, "symmetric", bool(np.all(b == 0.0) and self.op.psi.symmetric))

    @property
    def dim(self) -> int:  # type: ignore[override]
        return self.op.dim

    def exponent(self, xi):
        pts = _as_points(xi, self.op.dim)
        x0 = np.zeros(pts.shape[:-1] + (self.op.dim,))
        return operator_symbol(self.op, x0, pts)

    def min_stable_index(self):
        return self.op.psi.min_stable_index()


def operator_symbol(op: OperatorSpec, x, xi):
    """Full symbol p(x, xi) = -i(b, xi) + (a xi, xi)/2 + psi(gamma^T xi)."""
    pts_x = _as_points(x, op.dim)
    pts_xi = _as_points(xi, op.dim)
    b, sig, gam = op.coefficients_at(pts_x)
    b = np.asarray(b, dtype=float)
    sig = np.asarray(sig, dtype=float)
    gam = np.asarray(gam, dtype=float)
    drift = np.einsum("...i,...i->...", b, pts_xi)
    a = np.einsum("...ij,...kj->...ik", sig, sig)
    quad = 0.5 * np.einsum("...i,...ij,...j->...", pts_xi, a, pts_xi)
    jump_arg = np.einsum("...ik,...i->...k", gam, pts_xi)
    jump = op.psi.exponent(jump_arg)
    return -1j * drift + quad + jump


# ---------------------------------------------------------------------------
# Analytic gates.
# ---------------------------------------------------------------------------

class HWVerdict(enum.Enum):
    SATISFIED = "Satisfied"
    FAILED = "Failed"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class HWReport:
    radii: tuple[float, ...]
    ratios: tuple[float, ...]
    verdict: HWVerdict
    threshold: float


def unit_directions(dim: int, count: int = 32) -> np.ndarray:
    """Deterministic quasi-uniform direction sample on the unit sphere."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    rng = np.random.default_rng(20240901)
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def default_hw_radii(r_max: float = 1e6, count: int = 13) -> np.ndarray:
    return np.geomspace(1.0, r_max, count)


def hartman_wintner_check(spec: LevySymbol, radii=None, *, threshold: float | None = None,
                          r_min: float = 1e3, directions: int = 32) -> HWReport:
    """Growth diagnostic: min over directions of Re psi(xi) / log(1 + |xi|).

    The underlying condition is a limit, so the verdict is a heuristic on a
    finite radius schedule: ``Satisfied`` when the ratio is above the
    threshold and still increasing over the last three radii, ``Failed``
    when the ratio sequence looks bounded, ``Inconclusive`` otherwise.
    """
    radii = default_hw_radii() if radii is None else np.asarray(radii, dtype=float)
    if radii.size == 0:
        raise ValueError("radii schedule must not be empty")
    if radii.size >= 2 and not np.all(np.diff(radii) > 0):
        raise ValueError("radii must be strictly increasing")
    if radii[-1] < r_min:
        raise ValueError(f"last radius {radii[-1]:g} below r_min = {r_min:g}")
    thr = 10.0 * spec.dim if threshold is None else threshold
    dirs = unit_directions(spec.dim, directions)
    ratios = []
    for r in radii:
        vals = np.real(np.asarray(spec.exponent(r * dirs), dtype=complex))
        ratios.append(float(np.min(vals) / np.log1p(r)))
    ratios_arr = np.asarray(ratios)
    if ratios_arr.size >= 3:
        tail = ratios_arr[-3:]
        increasing = bool(tail[0] < tail[1] < tail[2])
    else:
        increasing = bool(np.all(np.diff(ratios_arr) > 0)) if ratios_arr.size > 1 else False
    if increasing and ratios_arr[-1] >= thr:
        verdict = HWVerdict.SATISFIED
    elif not increasing and ratios_arr[-1] < thr:
        verdict = HWVerdict.FAILED
    else:
        verdict = HWVerdict.INCONCLUSIVE
    return HWReport(tuple(radii), tuple(ratios), verdict, thr)


@dataclass(frozen=True)
class DominationReport:
    per_member: tuple[bool | None, ...]  # None for members before start_index
    all_pass: bool
    radius: float
    start_index: int


def domination_check(family: Sequence[LevySymbol], reference: LevySymbol,
                     start_index: int, radius: float, *, factor: float = 100.0,
                     n_radii: int = 17, directions: int = 16,
                     tol: float = 1e-12) -> DominationReport:
    """Check Re psi_n(xi) >= reference(xi) for all n >= start_index, |xi| >= radius."""
    dim = reference.dim
    for s in family:
        if s.dim != dim:
            raise DimensionMismatchError("all symbols must share the dimension")
    dirs = unit_directions(dim, directions)
    radii = np.geomspace(radius, radius * factor, n_radii)
    grid = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    ref_vals = np.real(np.asarray(reference.exponent(grid), dtype=complex))
    per: list[bool | None] = []
    for n, s in enumerate(family):
        if n < start_index:
            per.append(None)
            continue
        vals = np.real(np.asarray(s.exponent(grid), dtype=complex))
        per.append(bool(np.all(vals >= ref_vals - tol)))
    checked = [p for p in per if p is not None]
    return DominationReport(tuple(per), bool(checked and all(checked)), radius, start_index)


def symbol_distance(a: LevySymbol, b: LevySymbol, xi_grid) -> float:
    """Max absolute gap |psi_a(xi) - psi_b(xi)| over a frequency grid."""
    if a.dim != b.dim:
        raise DimensionMismatchError("symbols must share the dimension")
    pts = _as_points(xi_grid, a.dim)
    if pts.size == 0:
        raise ValueError("xi grid must not be empty")
    va = np.asarray(a.exponent(pts), dtype=complex)
    vb = np.asarray(b.exponent(pts), dtype=complex)
    return float(np.max(np.abs(va - vb)))
