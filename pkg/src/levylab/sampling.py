"""Increment generators for the driving noise (time, Wiener, pure-jump).

Reproducibility contract: every draw comes from a counter-based Philox
generator keyed by ``(master_seed, path index, component index)`` plus a
block counter, so identical configuration and master seed reproduce the same
streams bit-for-bit, independent of scheduling.

Samplers are exact in law for every supported family:

* symmetric stable (any alpha in (0, 2]) via the Chambers-Mallows-Stuck
  transform of a shared (uniform, exponential) pair; the formula is a single
  expression continuous in alpha, which is what makes common-random-numbers
  coupling across a parameter schedule meaningful;
* isotropic stable vectors via subordination of a Gaussian by a one-sided
  stable variable (Kanter's representation);
* relativistic stable via the same subordination with an exponentially
  tilted subordinator, realized by rejection on a fixed block of candidates;
* multifractal sums as independent stable components (exponents add).

The empirical characteristic-function check at the bottom is the acceptance
gate for all of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import symbols as sym
from .errors import DimensionMismatchError, LevyLabError

__all__ = [
    "RngStream",
    "CoupledDriver",
    "gaussian_increment",
    "stable_increment",
    "jump_increment",
    "empirical_exponent_check",
]

_MASK64 = (1 << 64) - 1

# Component index layout inside a stream family (see RngStream.child):
#   0            Brownian primitives for the diffusion part of the SDE
#   1 + 8*i + s  jump primitives for term i, slot s in {U, E, V, G}
_SLOT_U, _SLOT_E, _SLOT_V, _SLOT_G = 0, 1, 2, 3


def _jump_component(term: int, slot: int) -> int:
    return 1 + 8 * term + slot


@dataclass(frozen=True)
class RngStream:
    """Value-like handle on a counter-based random stream.

    Identical ``(master_seed, stream_id, counter)`` triples always reproduce
    the same draws; distinct stream ids are independent in the
    counter-based-generator sense.
    """

    master_seed: int
    stream_id: tuple[int, int] = (0, 0)
    counter: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=(self.master_seed & _MASK64, self.stream_id[0] & _MASK64,
                     self.stream_id[1] & _MASK64)
        )
        key = ss.generate_state(2, np.uint64)
        ctr = np.array([0, 0, self.counter & _MASK64, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=ctr))

    def child(self, path: int, component: int) -> "RngStream":
        return RngStream(self.master_seed, (path, component), 0)

    def advance(self, blocks: int = 1) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id, self.counter + blocks)


# ---------------------------------------------------------------------------
# Distributional transforms of base primitives (uniform / exponential / gauss).
# ---------------------------------------------------------------------------

def cms_symmetric(alpha: float, u: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Standard symmetric alpha-stable variate from (U, E).

    U ~ Uniform(-pi/2, pi/2), E ~ Exp(1); the output has characteristic
    function exp(-|xi|^alpha).  One formula covers all alpha in (0, 2]
    (alpha = 2 degenerates to 2 sin(U) sqrt(E), an exact N(0, 2) variate),
    so the map is continuous in alpha for fixed primitives.
    """
    if not 0.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if alpha == 1.0:
        return np.tan(u)
    s = np.sin(alpha * u) / np.cos(u) ** (1.0 / alpha)
    w = (np.cos((1.0 - alpha) * u) / e) ** ((1.0 - alpha) / alpha)
    return s * w


def kanter_onesided(a: float, v: np.ndarray, e: np.ndarray) -> np.ndarray:
    """One-sided stable variate S >= 0 with E exp(-lam S) = exp(-lam^a).

    Kanter's representation: V ~ Uniform(0, 1), E ~ Exp(1).  Degenerates to
    the constant 1 at a = 1.
    """
    if not 0.0 < a <= 1.0:
        raise ValueError(f"one-sided index must lie in (0, 1], got {a}")
    if a == 1.0:
        return np.ones_like(np.asarray(v, dtype=float))
    v = np.clip(v, 1e-15, 1.0 - 1e-16)
    num = np.sin(np.pi * a * v) ** a * np.sin(np.pi * (1.0 - a) * v) ** (1.0 - a)
    den = np.sin(np.pi * v)
    return (num / den) ** (1.0 / (1.0 - a)) / e ** ((1.0 - a) / a)


def stable_from_primitives(alpha: float, dt: float, u: np.ndarray, e: np.ndarray,
                           g: np.ndarray | None = None, *, isotropic: bool = False
                           ) -> np.ndarray:
    """Stable increment over dt from explicit primitives.

    Product flavor (default): per-coordinate CMS draws, characteristic
    function exp(-dt sum_j |xi_j|^alpha).  Isotropic flavor: sqrt(2 S) G
    with S a one-sided (alpha/2)-stable, characteristic function
    exp(-dt |xi|^alpha); requires Gaussian primitives ``g``.
    """
    if not isotropic:
        return dt ** (1.0 / alpha) * cms_symmetric(alpha, u, e)
    if g is None:
        raise ValueError("isotropic sampling needs Gaussian primitives")
    if alpha == 2.0:
        s = np.full(u.shape[:-1] + (1,), dt)
    else:
        # u doubles as the Kanter uniform (rescaled from (-pi/2, pi/2) to (0,1))
        v = u[..., :1] / np.pi + 0.5
        s = dt ** (2.0 / alpha) * kanter_onesided(alpha / 2.0, v, e[..., :1])
    return np.sqrt(2.0 * s) * g


def relativistic_from_primitives(alpha: float, m: float, dt: float,
                                 u_blk: np.ndarray, e_blk: np.ndarray,
                                 v_blk: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Relativistic stable increment via a tilted one-sided subordinator.

    The subordinator candidate block has shape (..., B): the first candidate
    accepted under exponential tilting exp(-theta S) is used; if the whole
    block is rejected (probability ~ (1 - e^{-dt m})^B) the last candidate is
    taken, a deterministic fallback whose bias is far below Monte Carlo
    resolution.  Fixed primitive consumption keeps coupled streams aligned.
    """
    if alpha == 2.0:
        return np.sqrt(2.0 * dt) * g
    theta = m ** (2.0 / alpha)
    v01 = u_blk / np.pi + 0.5
    cand = dt ** (2.0 / alpha) * kanter_onesided(alpha / 2.0, v01, e_blk)
    accept = v_blk <= np.exp(-theta * cand)
    accept[..., -1] = True
    first = np.argmax(accept, axis=-1)
    s = np.take_along_axis(cand, first[..., None], axis=-1)
    return np.sqrt(2.0 * s) * g


# ---------------------------------------------------------------------------
# Public samplers operating on streams.
# ---------------------------------------------------------------------------

def _shape(size, tail: tuple[int, ...]) -> tuple[int, ...]:
    if size is None:
        return tail
    if np.isscalar(size):
        return (int(size),) + tail
    return tuple(size) + tail


def gaussian_increment(stream: RngStream, dt: float, d: int, size=None) -> np.ndarray:
    """Sample N(0, dt I_d); shape (*size, d)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = stream.generator()
    return rng.normal(0.0, np.sqrt(dt), size=_shape(size, (d,)))


def stable_increment(stream: RngStream, alpha: float, dt: float, k: int = 1,
                     *, isotropic: bool = False, size=None) -> np.ndarray:
    """Symmetric stable increment over dt; shape (*size, k).

    Empirical characteristic function matches exp(-dt |xi|^alpha)
    (isotropic) or exp(-dt sum |xi_j|^alpha) (product of independents).
    """
    rng = stream.generator()
    shp = _shape(size, (k,))
    u = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=shp)
    e = rng.standard_exponential(size=shp)
    g = rng.standard_normal(size=shp) if (isotropic and k > 1) else None
    if isotropic and k > 1:
        return stable_from_primitives(alpha, dt, u, e, g, isotropic=True)
    return stable_from_primitives(alpha, dt, u, e)


_REL_BLOCK = 8


def jump_increment(stream: RngStream, spec: sym.LevySymbol, dt: float, size=None) -> np.ndarray:
    """Increment of the pure-jump driver with exponent ``spec`` over dt."""
    k = spec.dim
    if isinstance(spec, sym.Stable):
        return stable_increment(stream, spec.alpha, dt, k, isotropic=(k > 1), size=size)
    if isinstance(spec, sym.StableProduct):
        rng = stream.generator()
        shp = _shape(size, (k,))
        u = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=shp)
        e = rng.standard_exponential(size=shp)
        out = np.empty(shp)
        for j, a in enumerate(spec.alphas):
            out[..., j] = dt ** (1.0 / a) * cms_symmetric(a, u[..., j], e[..., j])
        return out
    if isinstance(spec, sym.Brownian):
        return gaussian_increment(stream, dt, k, size=size)
    if isinstance(spec, sym.Multifractal):
        rng = stream.generator()
        shp = _shape(size, (k,))
        out = np.zeros(shp)
        for c, a in spec.terms:
            u = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=shp)
            e = rng.standard_exponential(size=shp)
            g = rng.standard_normal(size=shp) if k > 1 else None
            if c == 0.0:
                continue
            if k > 1:
                out += stable_from_primitives(a, c * dt, u, e, g, isotropic=True)
            else:
                out += stable_from_primitives(a, c * dt, u, e)
        return out
    if isinstance(spec, sym.RelativisticStable):
        rng = stream.generator()
        base = _shape(size, (k,))
        blk = base[:-1] + (_REL_BLOCK,)
        u = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=blk)
        e = rng.standard_exponential(size=blk)
        v = rng.uniform(0.0, 1.0, size=blk)
        g = rng.standard_normal(size=base)
        return relativistic_from_primitives(spec.alpha, spec.m, dt, u, e, v, g)
    raise LevyLabError(f"unsupported jump family: {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Common-random-numbers driver for coupled families.
# ---------------------------------------------------------------------------

class CoupledDriver:
    """One pool of base primitives serving a whole family of symbols.

    Two symbols from the same family consume the same primitives in the same
    order, so pathwise distances between their increments measure parameter
    sensitivity rather than sampling noise.  Primitives are drawn per
    ``(path, component)`` stream and cached; `jump_increments` is a pure
    transform of the cache.
    """

    def __init__(self, stream: RngStream, n_paths: int, n_steps: int,
                 template: sym.LevySymbol, d: int):
        self.stream = stream
        self.n_paths = int(n_paths)
        self.n_steps = int(n_steps)
        self.template = template
        self.d = int(d)
        self._cache: dict[tuple, np.ndarray] = {}

    # -- primitive pools ----------------------------------------------------

    def _pool(self, component: int, kind: str, tail: tuple[int, ...]) -> np.ndarray:
        key = (component, kind, tail)
        if key not in self._cache:
            out = np.empty((self.n_paths, self.n_steps) + tail)
            for i in range(self.n_paths):
                rng = self.stream.child(i, component).generator()
                if kind == "uniform_angle":
                    out[i] = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=(self.n_steps,) + tail)
                elif kind == "exponential":
                    out[i] = rng.standard_exponential(size=(self.n_steps,) + tail)
                elif kind == "uniform":
                    out[i] = rng.uniform(0.0, 1.0, size=(self.n_steps,) + tail)
                elif kind == "gaussian":
                    out[i] = rng.standard_normal(size=(self.n_steps,) + tail)
                else:  # pragma: no cover - internal
                    raise ValueError(kind)
            self._cache[key] = out
        return self._cache[key]

    def brownian_increments(self, dt: float) -> np.ndarray:
        """Wiener increments, shape (n_paths, n_steps, d)."""
        return np.sqrt(dt) * self._pool(0, "gaussian", (self.d,))

    def _family_kind(self, spec: sym.LevySymbol) -> str:
        if isinstance(spec, (sym.Stable, sym.Brownian)):
            return "stable"
        if isinstance(spec, sym.StableProduct):
            return "product"
        if isinstance(spec, sym.Multifractal):
            return "multifractal"
        if isinstance(spec, sym.RelativisticStable):
            return "relativistic"
        raise LevyLabError(f"unsupported jump family: {type(spec).__name__}")

    def jump_increments(self, spec: sym.LevySymbol, dt: float) -> np.ndarray:
        """Jump increments for ``spec`` from the shared pool; (n_paths, n_steps, k)."""
        if spec.dim != self.template.dim:
            raise DimensionMismatchError("member dimension differs from the template")
        kind = self._family_kind(spec)
        tkind = self._family_kind(self.template)
        k = spec.dim
        # A relativistic pool also serves its stable (mass -> 0) limit.
        if tkind == "relativistic" and kind in ("relativistic", "stable"):
            u = self._pool(_jump_component(0, _SLOT_U), "uniform_angle", (_REL_BLOCK,))
            e = self._pool(_jump_component(0, _SLOT_E), "exponential", (_REL_BLOCK,))
            v = self._pool(_jump_component(0, _SLOT_V), "uniform", (_REL_BLOCK,))
            g = self._pool(_jump_component(0, _SLOT_G), "gaussian", (k,))
            if isinstance(spec, sym.RelativisticStable):
                return relativistic_from_primitives(spec.alpha, spec.m, dt, u, e, v, g)
            alpha = spec.alpha if isinstance(spec, sym.Stable) else 2.0
            if alpha == 2.0:
                return np.sqrt(2.0 * dt) * g
            v01 = u[..., :1] / np.pi + 0.5
            s = dt ** (2.0 / alpha) * kanter_onesided(alpha / 2.0, v01, e[..., :1])
            return np.sqrt(2.0 * s) * g
        if kind != tkind:
            raise LevyLabError(
                f"cannot couple a {kind} member to a {tkind} template"
            )
        if kind == "stable":
            u = self._pool(_jump_component(0, _SLOT_U), "uniform_angle", (k,))
            e = self._pool(_jump_component(0, _SLOT_E), "exponential", (k,))
            alpha = 2.0 if isinstance(spec, sym.Brownian) else spec.alpha
            scale = 0.5 if isinstance(spec, sym.Brownian) else 1.0
            if k > 1:
                g = self._pool(_jump_component(0, _SLOT_G), "gaussian", (k,))
                return stable_from_primitives(alpha, scale * dt, u, e, g, isotropic=True)
            return stable_from_primitives(alpha, scale * dt, u, e)
        if kind == "product":
            u = self._pool(_jump_component(0, _SLOT_U), "uniform_angle", (k,))
            e = self._pool(_jump_component(0, _SLOT_E), "exponential", (k,))
            out = np.empty_like(u)
            for j, a in enumerate(spec.alphas):
                out[..., j] = dt ** (1.0 / a) * cms_symmetric(a, u[..., j], e[..., j])
            return out
        if kind == "multifractal":
            if len(spec.terms) != len(self.template.terms):
                raise LevyLabError("multifractal members must share the term count")
            out = np.zeros((self.n_paths, self.n_steps, k))
            for i, (c, a) in enumerate(spec.terms):
                u = self._pool(_jump_component(i, _SLOT_U), "uniform_angle", (k,))
                e = self._pool(_jump_component(i, _SLOT_E), "exponential", (k,))
                if c == 0.0:
                    continue
                if k > 1:
                    g = self._pool(_jump_component(i, _SLOT_G), "gaussian", (k,))
                    out += stable_from_primitives(a, c * dt, u, e, g, isotropic=True)
                else:
                    out += stable_from_primitives(a, c * dt, u, e)
            return out
        raise LevyLabError(f"unsupported jump family: {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Empirical validation.
# ---------------------------------------------------------------------------

def empirical_exponent_check(samples: np.ndarray, dt: float, spec: sym.LevySymbol,
                             xi_grid) -> float:
    """Max over the grid of |empirical CF - exp(-dt psi(xi))|.

    The validation band used by the tests is 3 / sqrt(len(samples)).
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, np.newaxis]
    pts = np.asarray(xi_grid, dtype=float)
    if pts.ndim == 0 or (pts.ndim == 1 and spec.dim == 1):
        pts = np.atleast_1d(pts)[:, np.newaxis]
    if pts.shape[-1] != spec.dim:
        raise DimensionMismatchError("xi grid dimension does not match the symbol")
    emp = np.mean(np.exp(1j * x @ pts.T), axis=0)
    target = np.exp(-dt * np.asarray(spec.exponent(pts), dtype=complex))
    return float(np.max(np.abs(emp - target)))
