"""Reaction terms f(t, x, y) and the transformations the solvers need.

The model families are f = h1(t, x) - h2(t, x) * q(y) with q(y) = y |y|^{p-1}
or q(y) = e^y - 1 and h2 >= 0, plus constant and linear test nonlinearities.
Whatever the family, a spec carries a declared one-sided monotonicity
constant mu with  (f(t,x,y) - f(t,x,y'))(y - y') <= mu |y - y'|^2,  and the
machinery to reduce to mu = 0 (exponential change of variables), to a
bounded zero-slice (truncation), and to a Lipschitz-in-y approximation
(discrete inf-convolution over a symmetric grid).

Hypothesis checks here are randomized certificates: they can falsify a
declaration and report a witness, never prove it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import CoarseGridError

__all__ = [
    "Nonlinearity",
    "power_reaction",
    "exponential_reaction",
    "constant_reaction",
    "linear_reaction",
    "mu_transform",
    "truncate",
    "inf_convolution",
    "envelope",
    "MonotonicityCertificate",
    "monotonicity_certificate",
    "envelope_certificate",
]

_EXP_OVERFLOW_Y = 700.0


def _as_callable(value) -> Callable:
    if callable(value):
        return value
    arr = float(value)

    def fn(t, x):
        return np.broadcast_to(np.asarray(arr), np.broadcast_shapes(np.shape(t), np.shape(x)))

    return fn


@dataclass(frozen=True)
class Nonlinearity:
    """A reaction term with declared monotonicity and envelope data.

    ``fn(t, x, y)`` must broadcast over array arguments.  ``envelope_h`` and
    ``growth_g`` declare the bound |f(t,x,y) - f(t,x,0)| <= h(t,x) g(|y|);
    they gate which stability theorems a run may claim.
    """

    fn: Callable
    mu: float
    kind: str
    params: dict = field(default_factory=dict)
    h1: Callable | None = None
    h2: Callable | None = None
    envelope_h: Callable | None = None
    growth_g: Callable | None = None

    def __call__(self, t, x, y):
        return self.fn(t, x, y)

    def zero_slice(self, t, x):
        """f(t, x, 0) with broadcasting."""
        return self.fn(t, x, np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x))))


def power_reaction(p: float = 3.0, h1=0.0, h2=1.0) -> Nonlinearity:
    """f = h1 - h2 * y|y|^{p-1}; decreasing in y for h2 >= 0, so mu = 0."""
    if p < 1:
        raise ValueError("power index p must be >= 1")
    h1f, h2f = _as_callable(h1), _as_callable(h2)

    def fn(t, x, y):
        y = np.asarray(y, dtype=float)
        return h1f(t, x) - h2f(t, x) * y * np.abs(y) ** (p - 1.0)

    return Nonlinearity(
        fn=fn, mu=0.0, kind="power", params={"p": p}, h1=h1f, h2=h2f,
        envelope_h=h2f, growth_g=lambda r: np.asarray(r, dtype=float) ** p,
    )


def exponential_reaction(h1=0.0, h2=1.0) -> Nonlinearity:
    """f = h1 - h2 * (e^y - 1); raises on arguments that overflow exp."""
    h1f, h2f = _as_callable(h1), _as_callable(h2)

    def fn(t, x, y):
        y = np.asarray(y, dtype=float)
        if np.any(y > _EXP_OVERFLOW_Y):
            raise OverflowError(
                f"exponential reaction evaluated at y > {_EXP_OVERFLOW_Y:g}"
            )
        return h1f(t, x) - h2f(t, x) * np.expm1(y)

    return Nonlinearity(
        fn=fn, mu=0.0, kind="exponential", params={}, h1=h1f, h2=h2f,
        envelope_h=h2f, growth_g=lambda r: np.expm1(np.asarray(r, dtype=float)),
    )


def constant_reaction(c: float) -> Nonlinearity:
    def fn(t, x, y):
        return np.broadcast_to(
            np.asarray(float(c)),
            np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(y)),
        )

    return Nonlinearity(fn=fn, mu=0.0, kind="constant", params={"c": c},
                        envelope_h=_as_callable(0.0), growth_g=lambda r: np.zeros_like(np.asarray(r, dtype=float)))


def linear_reaction(lam: float) -> Nonlinearity:
    def fn(t, x, y):
        return lam * np.asarray(y, dtype=float)

    return Nonlinearity(fn=fn, mu=max(lam, 0.0), kind="linear", params={"lam": lam},
                        envelope_h=_as_callable(abs(lam)), growth_g=lambda r: np.asarray(r, dtype=float))


# ---------------------------------------------------------------------------
# Transformations.
# ---------------------------------------------------------------------------

def mu_transform(spec: Nonlinearity) -> Nonlinearity:
    """Reduce the monotonicity constant to 0 by exponential rescaling.

    The transformed term is  e^{mu t} f(t, x, e^{-mu t} y) - mu y;  solutions
    map by Y_t -> e^{mu t} Y_t (martingale part alike) and the terminal datum
    picks up the factor e^{mu T}.  With mu = 0 this is the identity.
    """
    if spec.mu == 0.0:
        return spec
    mu = spec.mu
    base = spec.fn

    def fn(t, x, y):
        scale = np.exp(mu * np.asarray(t, dtype=float))
        y = np.asarray(y, dtype=float)
        return scale * base(t, x, y / scale) - mu * y

    return Nonlinearity(fn=fn, mu=0.0, kind="transformed",
                        params={"mu_original": mu, "base_kind": spec.kind},
                        envelope_h=None, growth_g=None)


def truncate(spec: Nonlinearity, k: float) -> Nonlinearity:
    """Clamp the zero slice: f - f(.,.,0) + clip(f(.,.,0), [-k, k])."""
    if k <= 0:
        raise ValueError("truncation level k must be positive")
    base = spec.fn

    def fn(t, x, y):
        zero = np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x), np.shape(y)))
        f0 = base(t, x, zero)
        return base(t, x, y) - f0 + np.clip(f0, -k, k)

    return Nonlinearity(fn=fn, mu=spec.mu, kind="truncated",
                        params={"k": k, "base_kind": spec.kind},
                        h1=spec.h1, h2=spec.h2,
                        envelope_h=spec.envelope_h, growth_g=spec.growth_g)


def inf_convolution(spec: Nonlinearity, m: float, z_grid, *,
                    max_spacing: float = 0.1) -> Nonlinearity:
    """Discrete Lipschitz regularization  min_z ( m |y - z| + f(t, x, z) ).

    Requires a mu = 0 spec (apply ``mu_transform`` first).  On grid points
    the regularization is exactly m-Lipschitz in y and sits below f; off the
    grid the ordering holds up to m * spacing, which is the documented error
    budget of replacing the dense index set by a finite symmetric grid.
    """
    if spec.mu != 0.0:
        raise ValueError("inf-convolution expects a mu = 0 (nonincreasing) spec")
    if m <= 0:
        raise ValueError("penalty slope m must be positive")
    grid = np.asarray(z_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise ValueError("z grid must be a 1-d array with >= 3 points")
    spacing = float(np.max(np.diff(np.sort(grid))))
    if spacing > max_spacing:
        raise CoarseGridError(
            f"z grid spacing {spacing:g} exceeds max_spacing {max_spacing:g}"
        )
    base = spec.fn

    def fn(t, x, y):
        t_b, x_b, y_b = np.broadcast_arrays(
            np.asarray(t, dtype=float), np.asarray(x, dtype=float),
            np.asarray(y, dtype=float)
        )
        vals = m * np.abs(y_b[..., None] - grid) + base(
            t_b[..., None], x_b[..., None], np.broadcast_to(grid, y_b.shape + grid.shape)
        )
        return np.min(vals, axis=-1)

    return Nonlinearity(fn=fn, mu=0.0, kind="inf_conv",
                        params={"m": m, "spacing": spacing, "base_kind": spec.kind},
                        envelope_h=None, growth_g=None)


def envelope(spec: Nonlinearity, r: float, t, x):
    """sup over |y| <= r of |f(t, x, y) - f(t, x, 0)|.

    Closed form for the monotone model families (attained at y = +-r);
    generic specs fall back to a dense grid max over [-r, r].
    """
    if r <= 0:
        raise ValueError("radius r must be positive")
    if spec.kind == "power" and spec.h2 is not None:
        p = spec.params["p"]
        return np.abs(spec.h2(t, x)) * r**p
    if spec.kind == "exponential" and spec.h2 is not None:
        return np.abs(spec.h2(t, x)) * math.expm1(r)
    if spec.kind == "constant":
        return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)))
    if spec.kind == "linear":
        return abs(spec.params["lam"]) * r * np.ones(np.broadcast_shapes(np.shape(t), np.shape(x)))
    ys = np.linspace(-r, r, 513)
    f0 = spec.zero_slice(t, x)
    out = np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)))
    for y in ys:
        out = np.maximum(out, np.abs(spec.fn(t, x, np.full_like(out, y)) - f0))
    return out


# ---------------------------------------------------------------------------
# Randomized certificates.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonotonicityCertificate:
    max_quotient: float
    passed: bool
    witness: tuple | None


def monotonicity_certificate(spec: Nonlinearity, n_samples: int = 4000, *,
                             t_range=(0.0, 1.0), x_range=(-3.0, 3.0),
                             y_range=(-3.0, 3.0), tol: float = 1e-9,
                             seed: int = 0) -> MonotonicityCertificate:
    """Randomized check of (f(y) - f(y'))(y - y') <= mu |y - y'|^2.

    Half the samples pair nearby y values to probe the local slope, half are
    independent.  A failing certificate carries the witnessing sample; a
    passing one is evidence only, not a proof.
    """
    rng = np.random.default_rng(seed)
    t = rng.uniform(*t_range, size=n_samples)
    x = rng.uniform(*x_range, size=n_samples)
    y1 = rng.uniform(*y_range, size=n_samples)
    y2 = np.empty(n_samples)
    half = n_samples // 2
    y2[:half] = rng.uniform(*y_range, size=half)
    y2[half:] = y1[half:] + rng.uniform(-1e-4, 1e-4, size=n_samples - half)
    keep = np.abs(y1 - y2) > 1e-12
    t, x, y1, y2 = t[keep], x[keep], y1[keep], y2[keep]
    quot = (spec.fn(t, x, y1) - spec.fn(t, x, y2)) * (y1 - y2) / (y1 - y2) ** 2
    i = int(np.argmax(quot))
    max_q = float(quot[i])
    passed = max_q <= spec.mu + tol
    witness = None if passed else (float(t[i]), float(x[i]), float(y1[i]), float(y2[i]))
    return MonotonicityCertificate(max_q, passed, witness)


def envelope_certificate(spec: Nonlinearity, n_samples: int = 2000, *,
                         t_range=(0.0, 1.0), x_range=(-3.0, 3.0),
                         y_range=(-3.0, 3.0), tol: float = 1e-9,
                         seed: int = 0) -> bool:
    """Spot-verify the declared |f(t,x,y) - f(t,x,0)| <= h(t,x) g(|y|)."""
    if spec.envelope_h is None or spec.growth_g is None:
        raise ValueError("spec declares no envelope data")
    rng = np.random.default_rng(seed)
    t = rng.uniform(*t_range, size=n_samples)
    x = rng.uniform(*x_range, size=n_samples)
    y = rng.uniform(*y_range, size=n_samples)
    lhs = np.abs(spec.fn(t, x, y) - spec.zero_slice(t, x))
    rhs = np.abs(spec.envelope_h(t, x)) * spec.growth_g(np.abs(y))
    return bool(np.all(lhs <= rhs + tol))
