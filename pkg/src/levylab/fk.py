"""Fixed-point solver for the semilinear terminal-value problem.

The solution is the fixed point of the map

    u(s, x)  <-  (P_{T-s} phi)(x) + integral_s^T (P_{t-s} f(t, ., u(t, .)))(x) dt

iterated from u = 0 after reducing the reaction term to monotonicity
constant 0 (the exponential rescaling is inverted on output).  Semigroup
applications P_t come in two flavors:

* density mode (constant coefficients, d = 1): lattice quadrature against
  Fourier-inverted transition kernels.  Kernels for every multiple of the
  time step are built once per solve, and each Picard sweep is assembled in
  the frequency domain, so a sweep costs a handful of FFTs;
* montecarlo mode (constant coefficients): translation invariance lets one
  shared pool of exact increments estimate (P_t g)(x) = E g(x + X_t) on the
  whole lattice at once.

Variable-coefficient (Levy-type) operators have no transition-density
formula; their pointwise solution values are produced by the backward
path solver instead (see the bsde module) and orchestrated by the lab.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nonlinearity as nl
from . import sampling, sde
from . import symbols as sym
from .density import invert_density
from .errors import ConvergenceError, DimensionMismatchError, TruncationWarning

__all__ = [
    "GridFunction",
    "SolveReport",
    "DensityPropagator",
    "McPropagator",
    "apply_semigroup",
    "solve_fixed_point",
    "check_apriori_bound",
    "BoundCheck",
    "check_l2_l1_bounds",
    "NormBoundsReport",
    "default_probes",
]

BOUNDARY_LEAK_GUARD = 1e-3


def _effective_symbol(op_or_spec) -> sym.LevySymbol:
    if isinstance(op_or_spec, sym.OperatorSpec):
        if not op_or_spec.constant:
            raise ValueError(
                "semigroup quadrature needs a constant-coefficient operator; "
                "variable-coefficient solves go through the path solver"
            )
        return sym.ConstantOperatorSymbol(op_or_spec)
    return op_or_spec


def _as_operator(op_or_spec) -> sym.OperatorSpec:
    if isinstance(op_or_spec, sym.OperatorSpec):
        return op_or_spec
    return sym.OperatorSpec.levy(op_or_spec)


# ---------------------------------------------------------------------------
# Grid functions.
# ---------------------------------------------------------------------------

@dataclass
class GridFunction:
    """u sampled on time knots x space lattice.

    Interpolation: multilinear in space, left-constant in time (the value on
    [s_j, s_{j+1}) is the knot value at s_j), matching the backward reading
    of the fixed-point identity.
    """

    s_knots: np.ndarray            # (J + 1,), s_J = T
    axes: tuple[np.ndarray, ...]   # space lattice axes
    values: np.ndarray             # (J + 1, *space shape)

    def __post_init__(self):
        self.s_knots = np.asarray(self.s_knots, dtype=float)
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def T(self) -> float:
        return float(self.s_knots[-1])

    def time_index(self, t) -> np.ndarray:
        idx = np.searchsorted(self.s_knots, np.asarray(t, dtype=float), side="right") - 1
        return np.clip(idx, 0, len(self.s_knots) - 1)

    def eval(self, t, x):
        """Evaluate at scalar time t and point(s) x (shape (..., d) or (...))."""
        j = int(self.time_index(t))
        slab = self.values[j]
        if self.dim == 1:
            xq = np.asarray(x, dtype=float)
            xq = xq[..., 0] if (xq.ndim and xq.shape[-1] == 1) else xq
            return np.interp(xq, self.axes[0], slab)
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(self.axes, slab, bounds_error=False, fill_value=None)
        pts = np.asarray(x, dtype=float)
        clipped = np.stack(
            [np.clip(pts[..., i], self.axes[i][0], self.axes[i][-1])
             for i in range(self.dim)], axis=-1)
        return interp(clipped)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s"] + [f"x{i + 1}" for i in range(self.dim)] + ["u"])
            mesh = np.meshgrid(*self.axes, indexing="ij")
            flat = [m.ravel() for m in mesh]
            for j, s in enumerate(self.s_knots):
                vals = self.values[j].ravel()
                for row in zip(*flat, vals):
                    writer.writerow([repr(s)] + [repr(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            d = len(header) - 2
            rows = np.array([[float(v) for v in row] for row in reader])
        s_knots = np.unique(rows[:, 0])
        axes = tuple(np.unique(rows[:, 1 + i]) for i in range(d))
        shape = (len(s_knots),) + tuple(len(a) for a in axes)
        values = rows[:, -1].reshape(shape)
        return cls(s_knots, axes, values)

    def to_npz(self, path):
        np.savez_compressed(path, s_knots=self.s_knots, values=self.values,
                            **{f"axis{i}": a for i, a in enumerate(self.axes)})

    @classmethod
    def from_npz(cls, path) -> "GridFunction":
        data = np.load(path)
        axes = tuple(data[k] for k in sorted(d for d in data.files if d.startswith("axis")))
        return cls(data["s_knots"], axes, data["values"])


@dataclass
class SolveReport:
    """Diagnostics of one fixed-point solve."""

    mode: str
    iterations: int
    converged: bool
    sweep_gaps: list[float]
    residuals: dict[tuple[float, float], float] = field(default_factory=dict)
    boundary_leak: float = 0.0
    mc_stderr: float = 0.0
    regime: dict = field(default_factory=dict)


def default_probes(T: float, box_halfwidth: float = 1.0) -> list[tuple[float, float]]:
    """Default probe set {0, T/2} x {0, +-1} scaled to the lattice box."""
    xs = [0.0, box_halfwidth, -box_halfwidth]
    return [(s, x) for s in (0.0, T / 2.0) for x in xs]


# ---------------------------------------------------------------------------
# Semigroup propagators.
# ---------------------------------------------------------------------------

class DensityPropagator:
    """Kernel-bank semigroup on a uniform 1-d lattice.

    Kernels p_dt on the lattice offset grid are built by Fourier inversion
    and applied by linear FFT convolution, which is exactly the lattice
    trapezoid quadrature of the convolution integral.
    """

    def __init__(self, op_or_spec, axis: np.ndarray, *, cutoff: float | None = None,
                 n_quad: int | None = None, tail_tol: float = 1e-8,
                 hw_override: bool = False):
        self.spec = _effective_symbol(op_or_spec)
        if self.spec.dim != 1:
            raise ValueError("density propagation is implemented for d = 1")
        self.axis = np.asarray(axis, dtype=float)
        self.dz = float(self.axis[1] - self.axis[0])
        self.n = self.axis.size
        self.cutoff = cutoff
        self.n_quad = n_quad
        self.tail_tol = tail_tol
        self.hw_override = hw_override
        self._kernels: dict[float, np.ndarray] = {}
        self.max_leak = 0.0
        n_full = 3 * self.n - 2
        self.n_fft = 1 << max(1, (n_full - 1)).bit_length()
        self._kernel_hat: dict[float, np.ndarray] = {}
        w = np.full(self.n, self.dz)
        w[0] *= 0.5
        w[-1] *= 0.5
        self._w_space = w

    def _offsets(self) -> np.ndarray:
        half = (self.n - 1) * self.dz
        return np.linspace(-half, half, 2 * self.n - 1)

    def kernel(self, dt: float) -> np.ndarray:
        key = round(dt, 12)
        if key not in self._kernels:
            grid = invert_density(self.spec, dt, self._offsets(), self.cutoff,
                                  self.n_quad, tail_tol=self.tail_tol,
                                  hw_override=self.hw_override)
            k = grid.values
            leak = max(0.0, 1.0 - float(np.trapezoid(k, self._offsets())))
            self.max_leak = max(self.max_leak, leak)
            if leak > BOUNDARY_LEAK_GUARD:
                warnings.warn(
                    f"lattice truncation: {leak:.2e} of the time-{dt:g} kernel mass "
                    f"falls outside the box", TruncationWarning, stacklevel=2)
            self._kernels[key] = k
        return self._kernels[key]

    def kernel_hat(self, dt: float) -> np.ndarray:
        key = round(dt, 12)
        if key not in self._kernel_hat:
            self._kernel_hat[key] = np.fft.rfft(self.kernel(dt), self.n_fft)
        return self._kernel_hat[key]

    def weighted_hat(self, values: np.ndarray) -> np.ndarray:
        return np.fft.rfft(values * self._w_space, self.n_fft)

    def from_hat(self, acc_hat: np.ndarray) -> np.ndarray:
        full = np.fft.irfft(acc_hat, self.n_fft)
        return full[self.n - 1: 2 * self.n - 1]

    def apply(self, values: np.ndarray, dt: float) -> np.ndarray:
        """(P_dt g) on the lattice for lattice samples g."""
        if dt == 0.0:
            return np.asarray(values, dtype=float).copy()
        return self.from_hat(self.kernel_hat(dt) * self.weighted_hat(np.asarray(values, dtype=float)))


class McPropagator:
    """Shared-increment Monte Carlo semigroup for constant-coefficient operators.

    One pool of exact process increments on the knot grid serves every
    (source knot, target knot) pair: the displacement over [s_j, s_l] is the
    prefix-sum difference S_l - S_j, identical across lattice points, which
    is valid precisely because the operator is translation invariant.
    """

    def __init__(self, op_or_spec, axis: np.ndarray, t_knots: np.ndarray,
                 n_paths: int, stream: sampling.RngStream):
        op = _as_operator(op_or_spec)
        if not op.constant:
            raise ValueError("montecarlo semigroup needs a constant-coefficient operator")
        if op.dim != 1:
            raise ValueError("montecarlo propagation is implemented for d = 1")
        self.op = op
        self.axis = np.asarray(axis, dtype=float)
        self.t_knots = np.asarray(t_knots, dtype=float)
        dt = float(self.t_knots[1] - self.t_knots[0])
        bundle = sde.euler_paths(op, float(self.t_knots[0]), 0.0,
                                 float(self.t_knots[-1]), dt, n_paths, stream=stream)
        self.positions = bundle.paths[:, :, 0]   # (M, J + 1), started at 0
        self.n_paths = n_paths
        self.outside_fraction = 0.0

    def displacements(self, j: int, l: int) -> np.ndarray:
        return self.positions[:, l] - self.positions[:, j]

    def apply_between(self, g, j: int, l: int) -> np.ndarray:
        """(P_{t_l - t_j} g) on the lattice; g is a callable or lattice samples."""
        if l == j:
            if callable(g):
                return np.asarray(g(self.axis), dtype=float)
            return np.asarray(g, dtype=float).copy()
        disp = self.displacements(j, l)
        pts = self.axis[None, :] + disp[:, None]
        if callable(g):
            vals = g(pts)
        else:
            lo, hi = self.axis[0], self.axis[-1]
            frac = float(np.mean((pts < lo) | (pts > hi)))
            self.outside_fraction = max(self.outside_fraction, frac)
            if frac > BOUNDARY_LEAK_GUARD:
                warnings.warn(
                    f"{frac:.2e} of Monte Carlo displacements leave the lattice box",
                    TruncationWarning, stacklevel=2)
            vals = np.interp(pts, self.axis, np.asarray(g, dtype=float))
        return np.mean(vals, axis=0)


def apply_semigroup(op_or_spec, g, t: float, mode: str = "density", *,
                    axis, cutoff: float | None = None, n_quad: int | None = None,
                    n_paths: int = 20000, stream: sampling.RngStream | None = None,
                    tail_tol: float = 1e-8) -> np.ndarray:
    """One semigroup application x -> E g(X_t^{0,x}) on a lattice axis."""
    axis = np.asarray(axis, dtype=float)
    if mode == "density":
        prop = DensityPropagator(op_or_spec, axis, cutoff=cutoff, n_quad=n_quad,
                                 tail_tol=tail_tol)
        vals = np.asarray(g(axis) if callable(g) else g, dtype=float)
        return prop.apply(vals, t)
    if mode == "montecarlo":
        if stream is None:
            raise ValueError("montecarlo mode needs an RngStream")
        knots = np.array([0.0, t])
        prop = McPropagator(op_or_spec, axis, knots, n_paths, stream)
        return prop.apply_between(g, 0, 1)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Fixed-point solve.
# ---------------------------------------------------------------------------

def _time_weights(J: int, dt: float) -> np.ndarray:
    """w[j, l] = trapezoid weight of knot l in the integral over [s_j, T]."""
    w = np.zeros((J + 1, J + 1))
    for j in range(J + 1):
        if j == J:
            continue
        w[j, j:] = dt
        w[j, j] *= 0.5
        w[j, J] *= 0.5
    return w


def solve_fixed_point(op_or_spec, phi, f: nl.Nonlinearity, *, T: float,
                      n_knots: int = 64, axis, mode: str = "density",
                      tol: float | None = None, max_iter: int = 40,
                      cutoff: float | None = None, n_quad: int | None = None,
                      n_paths: int = 4000, stream: sampling.RngStream | None = None,
                      probes=None, tail_tol: float = 1e-8,
                      hw_override: bool = False) -> tuple[GridFunction, SolveReport]:
    """Solve the terminal-value problem on [0, T] x lattice.

    ``phi`` is a callable terminal datum.  The reaction term is reduced to
    mu = 0 internally and the rescaling is inverted on output, so the
    returned grid function satisfies u(T, .) = phi exactly.
    """
    axis = np.asarray(axis, dtype=float)
    knots = np.linspace(0.0, T, n_knots + 1)
    dt = knots[1] - knots[0]
    J = n_knots
    mu = f.mu
    ft = nl.mu_transform(f)
    phi_vals = np.asarray(phi(axis), dtype=float)
    phi_til = math.exp(mu * T) * phi_vals
    wt = _time_weights(J, dt)
    if tol is None:
        tol = 1e-9 if mode == "density" else 1e-6

    if mode == "density":
        prop = DensityPropagator(op_or_spec, axis, cutoff=cutoff, n_quad=n_quad,
                                 tail_tol=tail_tol, hw_override=hw_override)
        khat = [None] + [prop.kernel_hat(l * dt) for l in range(1, J + 1)]
        phi_hat = prop.weighted_hat(phi_til)

        def sweep(u_prev: np.ndarray) -> np.ndarray:
            fvals = np.stack([ft(knots[l], axis, u_prev[l]) for l in range(J + 1)])
            fhat = np.stack([prop.weighted_hat(fvals[l]) for l in range(J + 1)])
            u_new = np.empty_like(u_prev)
            u_new[J] = phi_til
            for j in range(J):
                lags = np.arange(1, J - j + 1)
                k_stack = np.stack([khat[l] for l in lags])
                acc = khat[J - j] * phi_hat
                acc = acc + np.sum(wt[j, j + 1: J + 1, None] * k_stack * fhat[j + 1: J + 1], axis=0)
                u_new[j] = prop.from_hat(acc) + wt[j, j] * fvals[j]
            return u_new
    elif mode == "montecarlo":
        if stream is None:
            raise ValueError("montecarlo mode needs an RngStream")
        prop = McPropagator(op_or_spec, axis, knots, n_paths, stream)

        def sweep(u_prev: np.ndarray) -> np.ndarray:
            fvals = np.stack([ft(knots[l], axis, u_prev[l]) for l in range(J + 1)])
            u_new = np.empty_like(u_prev)
            u_new[J] = phi_til
            for j in range(J):
                acc = prop.apply_between(phi_til, j, J)
                acc = acc + wt[j, j] * fvals[j]
                for l in range(j + 1, J + 1):
                    acc = acc + wt[j, l] * prop.apply_between(fvals[l], j, l)
                u_new[j] = acc
            return u_new
    else:
        raise ValueError(f"unknown mode {mode!r}")

    u = np.zeros((J + 1, axis.size))
    u[J] = phi_til
    gaps: list[float] = []
    converged = False
    for _ in range(max_iter):
        u_next = sweep(u)
        gap = float(np.max(np.abs(u_next - u)))
        gaps.append(gap)
        u = u_next
        if gap < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"fixed-point iteration did not reach tol = {tol:g} in {max_iter} sweeps "
            f"(last gap {gaps[-1]:.3e})"
        )

    # residual of one extra sweep, then invert the rescaling
    resid_grid = np.abs(sweep(u) - u)
    scale = np.exp(-mu * knots)[:, None]
    values = scale * u
    values[J] = phi_vals
    gf = GridFunction(knots, (axis,), values)

    probes = default_probes(T) if probes is None else probes
    residuals = {}
    for (s_p, x_p) in probes:
        j = int(np.clip(np.searchsorted(knots, s_p, side="right") - 1, 0, J))
        residuals[(s_p, x_p)] = float(
            math.exp(-mu * knots[j]) * np.interp(x_p, axis, resid_grid[j]))

    f0 = np.stack([np.abs(np.asarray(f.zero_slice(knots[l], axis), dtype=float))
                   for l in range(J + 1)])
    regime = {
        "terminal_abs_finite": bool(np.all(np.isfinite(np.abs(phi_vals)))),
        "zero_slice_integral_max": float(np.max(wt[0] @ f0)),
    }
    report = SolveReport(
        mode=mode, iterations=len(gaps), converged=converged, sweep_gaps=gaps,
        residuals=residuals,
        boundary_leak=getattr(prop, "max_leak", getattr(prop, "outside_fraction", 0.0)),
        regime=regime,
    )
    return gf, report


# ---------------------------------------------------------------------------
# A priori bound checks.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    ok: bool
    margins: dict
    witnesses: list


def check_apriori_bound(u: GridFunction, op_or_spec, phi, f: nl.Nonlinearity,
                        mode: str = "density", *, probes=None,
                        slack: float = 1e-3, n_paths: int = 20000,
                        stream: sampling.RngStream | None = None,
                        cutoff: float | None = None, n_quad: int | None = None
                        ) -> BoundCheck:
    """Pointwise bound  |u(s,x)| <= e^{mu(T-s)} E(|phi(X_T)| + int_s^T |f0(t, X_t)| dt)."""
    knots = u.s_knots
    axis = u.axes[0]
    J = len(knots) - 1
    dt = float(knots[1] - knots[0])
    wt = _time_weights(J, dt)
    mu = f.mu
    probes = default_probes(u.T) if probes is None else probes

    abs_phi = lambda x: np.abs(np.asarray(phi(x), dtype=float))
    f0_abs = [np.abs(np.asarray(f.zero_slice(knots[l], axis), dtype=float))
              for l in range(J + 1)]

    if mode == "density":
        prop = DensityPropagator(op_or_spec, axis, cutoff=cutoff, n_quad=n_quad)
        rhs_rows = {}
        for j in sorted({int(np.clip(np.searchsorted(knots, s, side="right") - 1, 0, J))
                         for s, _ in probes}):
            acc = prop.apply(abs_phi(axis), (J - j) * dt)
            for l in range(j, J + 1):
                acc = acc + wt[j, l] * prop.apply(f0_abs[l], (l - j) * dt)
            rhs_rows[j] = acc
        mc_slack = 0.0
    elif mode == "montecarlo":
        if stream is None:
            raise ValueError("montecarlo mode needs an RngStream")
        prop = McPropagator(op_or_spec, axis, knots, n_paths, stream)
        rhs_rows = {}
        sems = []
        for j in sorted({int(np.clip(np.searchsorted(knots, s, side="right") - 1, 0, J))
                         for s, _ in probes}):
            acc = prop.apply_between(abs_phi, j, J)
            samp = abs_phi(prop.axis[None, :] + prop.displacements(j, J)[:, None])
            sems.append(float(np.max(np.std(samp, axis=0))) / math.sqrt(prop.n_paths))
            for l in range(j, J + 1):
                acc = acc + wt[j, l] * prop.apply_between(f0_abs[l], j, l)
            rhs_rows[j] = acc
        mc_slack = 3.0 * max(sems)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    margins, witnesses = {}, []
    for (s_p, x_p) in probes:
        j = int(np.clip(np.searchsorted(knots, s_p, side="right") - 1, 0, J))
        lhs = abs(float(u.eval(knots[j], np.atleast_1d(x_p))))
        rhs = math.exp(mu * (u.T - knots[j])) * float(np.interp(x_p, axis, rhs_rows[j]))
        margin = rhs + slack + mc_slack - lhs
        margins[(s_p, x_p)] = margin
        if margin < 0:
            witnesses.append((s_p, x_p, lhs, rhs))
    return BoundCheck(ok=not witnesses, margins=margins, witnesses=witnesses)


@dataclass(frozen=True)
class NormBoundsReport:
    ok: bool
    checks: dict  # name -> (lhs, rhs)


def check_l2_l1_bounds(u: GridFunction, phi, f: nl.Nonlinearity, *,
                       rel_slack: float = 1e-6) -> NormBoundsReport:
    """Lattice versions of the L2 / L1 a priori estimates for Levy operators.

    Checks, with mu the declared monotonicity constant and f0 = f(., ., 0):
      * ||u(s)||_2^2 <= 2 e^{2 mu T} (||phi||_2^2 + (T-s) ||f0||_{L2((s,T)xR)}^2)
      * ||u(s)||_1   <= e^{mu (T-s)} (||phi||_1 + ||f0||_{L1(Q_T)})
      * ||f_u||_{L1(Q_T)} <= e^{mu T} (||phi||_1 + 2 ||f0||_{L1(Q_T)}) + mu ||u||_{L1(Q_T)}
    """
    axis = u.axes[0]
    knots = u.s_knots
    T = u.T
    mu = f.mu
    phi_vals = np.asarray(phi(axis), dtype=float)
    f0 = np.stack([np.asarray(f.zero_slice(t, axis), dtype=float) for t in knots])
    fu = np.stack([np.asarray(f(knots[j], axis, u.values[j]), dtype=float)
                   for j in range(len(knots))])
    l1_phi = float(np.trapezoid(np.abs(phi_vals), axis))
    l2_phi_sq = float(np.trapezoid(phi_vals**2, axis))
    space_l1_f0 = np.trapezoid(np.abs(f0), axis, axis=1)
    space_l2_f0_sq = np.trapezoid(f0**2, axis, axis=1)
    l1_f0_qt = float(np.trapezoid(space_l1_f0, knots))
    l1_u_qt = float(np.trapezoid(np.trapezoid(np.abs(u.values), axis, axis=1), knots))
    l1_fu_qt = float(np.trapezoid(np.trapezoid(np.abs(fu), axis, axis=1), knots))

    checks: dict[str, tuple[float, float]] = {}
    ok = True
    for j, s in enumerate(knots[:-1]):
        lhs2 = float(np.trapezoid(u.values[j]**2, axis))
        tail_l2 = float(np.trapezoid(space_l2_f0_sq[j:], knots[j:]))
        rhs2 = 2.0 * math.exp(2.0 * mu * T) * (l2_phi_sq + (T - s) * tail_l2)
        checks[f"l2_s{j}"] = (lhs2, rhs2)
        ok &= lhs2 <= rhs2 * (1 + rel_slack) + 1e-12
        lhs1 = float(np.trapezoid(np.abs(u.values[j]), axis))
        rhs1 = math.exp(mu * (T - s)) * (l1_phi + l1_f0_qt)
        checks[f"l1_s{j}"] = (lhs1, rhs1)
        ok &= lhs1 <= rhs1 * (1 + rel_slack) + 1e-12
    rhs_fu = math.exp(mu * T) * (l1_phi + 2.0 * l1_f0_qt) + mu * l1_u_qt
    checks["l1_fu"] = (l1_fu_qt, rhs_fu)
    ok &= l1_fu_qt <= rhs_fu * (1 + rel_slack) + 1e-12
    return NormBoundsReport(ok=bool(ok), checks=checks)
