"""Flow maps: closed forms, the RK4 oracle, flow programs and Jacobian determinants."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from . import _backend
from .errors import BlowUpGuard, DimensionMismatch, FlowError, PoleReached, SingularMatrix
from .expm import affine_propagator
from .fields import (
    Affine, Box, Conjugated, Separable, Sum, VectorField, field_from_dict, fd_jacobian, negate,
)


@dataclass(frozen=True)
class IntegratorConfig:
    steps_per_unit: int = 1000
    guard: float = 1e6

    def __post_init__(self):
        if int(self.steps_per_unit) < 1:
            raise ValueError("steps_per_unit must be >= 1")
        if not self.guard > 0:
            raise ValueError("guard must be positive")

    def refined(self, factor):
        return IntegratorConfig(self.steps_per_unit * int(factor), self.guard)


DEFAULT_CONFIG = IntegratorConfig()


def _batch(x, dim=None):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if dim is not None and X.shape[1] != dim:
        raise DimensionMismatch(f"point of shape {x.shape} does not match dim {dim}")
    return X, single


def _unbatch(X, single):
    return X[0] if single else X


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


@lru_cache(maxsize=512)
def _propagator_cached(key_A, key_b, d, t):
    A = np.frombuffer(key_A).reshape(d, d)
    b = np.frombuffer(key_b)
    M, v = affine_propagator(A, b, t)
    M.setflags(write=False)
    v.setflags(write=False)
    return M, v


def affine_flow_matrices(A, b, t):
    A = np.ascontiguousarray(A, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    return _propagator_cached(A.tobytes(), b.tobytes(), b.size, float(t))


def flow_affine(A, b, tau, x):
    """Flow of ``x' = A x + b`` at signed time ``tau`` via the augmented matrix exponential."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    X, single = _batch(x, b.size)
    M, v = affine_flow_matrices(A, b, tau)
    return _unbatch(X @ M.T + v, single)


def flow_relu(sign, tau, x):
    """Flow of ``x' = sign * ReLU(x)``: positive coordinates scale by ``exp(sign * tau)``."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x * math.exp(sign * tau), x)


def flow_mobius_1d(tau, x):
    """Flow of ``x' = x^2``: ``x / (1 - tau x)``; raises PoleReached when ``tau x >= 1``."""
    x = np.asarray(x, dtype=float)
    if np.any(tau * x >= 1.0):
        raise PoleReached(f"trajectory reaches the pole (tau*x >= 1) at tau={tau}")
    return x / (1.0 - tau * x)


def _separable_closed(f, t, X):
    name = f.act.name
    on = f.mask > 0
    if name in ("relu", "neg_relu", "leaky_relu"):
        rate = t if name != "neg_relu" else -t
        neg_rate = f.act.p0 * t if name == "leaky_relu" else 0.0
        Y = np.where(X > 0, X * math.exp(rate), X * math.exp(neg_rate))
        return np.where(on, Y, X)
    if name == "quadratic" or (name == "power" and int(f.act.p0) == 2):
        Xm = np.where(on, X, 0.0)
        if np.any(t * Xm >= 1.0):
            raise PoleReached(f"trajectory reaches the pole (tau*x >= 1) at tau={t}")
        return np.where(on, X / (1.0 - t * Xm), X)
    return None


def closed_form(f, t, X):
    """Closed-form flow of ``f`` at signed time ``t`` on a batch, or None."""
    if t == 0:
        return X.copy()
    if isinstance(f, Affine):
        M, v = affine_flow_matrices(f.A, f.b, t)
        return X @ M.T + v
    if isinstance(f, Separable):
        return _separable_closed(f, t, X)
    if isinstance(f, Sum) and len(f.terms) == 1:
        c, g = f.terms[0]
        if c == 0:
            return X.copy()
        return closed_form(g, c * t, X)
    if isinstance(f, Conjugated):
        WS = f.W @ f.S
        c = WS[0, 0]
        if c != 0 and np.allclose(WS, c * np.eye(f.dim), rtol=0, atol=1e-13 * max(1.0, abs(c))):
            Y = closed_form(f.base, c * t, X @ f.W.T + f.b)
            if Y is None:
                return None
            try:
                return np.linalg.solve(f.W, (Y - f.b).T).T
            except np.linalg.LinAlgError:
                return None
    return None


# ---------------------------------------------------------------------------
# Numerical oracle
# ---------------------------------------------------------------------------


def _integrate(f, t, X, cfg, track_logdet=False):
    """RK4 for signed time ``t``; returns ``(X, logdet)``."""
    n = int(math.ceil(abs(t) * cfg.steps_per_unit - 1e-9))
    if n == 0:
        return X.copy(), np.zeros(X.shape[0])
    dt = abs(t) / n
    sign = 1.0 if t > 0 else -1.0
    low = f.lower()
    if low is not None:
        if sign < 0:
            low = low.scaled(-1.0)
        Y, ld, status, step = _backend.rk4_lowered(
            X, low.A, low.c, low.S, low.W, low.B, low.codes, low.params, low.trace_weights,
            dt, n, cfg.guard, track_logdet,
        )
    else:
        fun = lambda Z: sign * f._eval(Z)
        div = (lambda Z: sign * np.trace(f._jac(Z), axis1=1, axis2=2)) if track_logdet else None
        Y, ld, status, step = _backend.rk4_generic(fun, X, dt, n, cfg.guard, div)
    if status != 0:
        raise BlowUpGuard(f"state left the guard radius {cfg.guard:g} at step {step + 1}/{n}")
    return np.asarray(Y), np.asarray(ld)


def flow_numeric(f, tau, x, cfg=None):
    """Fixed-step RK4 of ``x' = sign(tau) f(x)`` over ``|tau|`` with ``ceil(|tau| * steps_per_unit)`` steps."""
    cfg = cfg or DEFAULT_CONFIG
    if not math.isfinite(tau):
        raise ValueError("tau must be finite")
    X, single = _batch(x, f.dim)
    Y, _ = _integrate(f, float(tau), X, cfg)
    return _unbatch(Y, single)


def flow_map(f, tau, x, cfg=None, numeric=False):
    """``phi_f^tau(x)``: closed form when the kind has one, else RK4."""
    cfg = cfg or DEFAULT_CONFIG
    X, single = _batch(x, f.dim)
    Y = None if numeric else closed_form(f, float(tau), X)
    if Y is None:
        Y, _ = _integrate(f, float(tau), X, cfg)
    return _unbatch(Y, single)


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------

FORWARD = 1
BACKWARD = -1


@dataclass(frozen=True, eq=False)
class Leg:
    field: VectorField
    duration: float
    direction: int = FORWARD

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration >= 0):
            raise ValueError(f"leg duration must be finite and >= 0, got {self.duration}")
        if self.direction not in (FORWARD, BACKWARD):
            raise ValueError("direction must be +1 (forward) or -1 (backward)")

    def effective_field(self):
        return self.field if self.direction == FORWARD else negate(self.field)

    def flipped(self):
        return Leg(self.field, self.duration, -self.direction)

    def to_dict(self):
        return {"field": self.field.to_dict(), "duration": self.duration,
                "direction": "forward" if self.direction == FORWARD else "backward"}

    @classmethod
    def from_dict(cls, d):
        direction = d.get("direction", "forward")
        return cls(field_from_dict(d["field"]), float(d["duration"]),
                   FORWARD if direction in ("forward", 1) else BACKWARD)


@dataclass(frozen=True, eq=False)
class FlowProgram:
    legs: tuple
    dim: int

    def __init__(self, legs=(), dim=None):
        legs = tuple(legs)
        if dim is None:
            if not legs:
                raise ValueError("an empty program needs an explicit dim")
            dim = legs[0].field.dim
        if any(leg.field.dim != dim for leg in legs):
            raise DimensionMismatch("all legs must share the program dimension")
        object.__setattr__(self, "legs", legs)
        object.__setattr__(self, "dim", int(dim))

    def __len__(self):
        return len(self.legs)

    def then(self, other):
        """Program applying ``self`` first and ``other`` afterwards."""
        if other.dim != self.dim:
            raise DimensionMismatch("programs have different dimensions")
        return FlowProgram(self.legs + other.legs, self.dim)

    def __add__(self, other):
        return self.then(other)

    @property
    def total_time(self):
        return float(sum(leg.duration for leg in self.legs))

    def apply(self, x, cfg=None):
        return apply(self, x, cfg)

    def invert(self):
        return invert(self)

    def fields(self):
        return [leg.effective_field() for leg in self.legs]

    def to_dict(self):
        return {"dim": self.dim, "legs": [leg.to_dict() for leg in self.legs]}

    @classmethod
    def from_dict(cls, d):
        return cls([Leg.from_dict(l) for l in d.get("legs", [])], int(d["dim"]))


def leg(field, duration, direction=FORWARD):
    return Leg(field, float(duration), direction)


def program(*legs, dim=None):
    return FlowProgram(legs, dim)


def identity_program(dim):
    return FlowProgram((), dim)


def apply(P, x, cfg=None):
    """Apply the legs left to right; flow errors are re-raised with the leg index."""
    cfg = cfg or DEFAULT_CONFIG
    X, single = _batch(x, P.dim)
    X = X.copy()
    for i, lg in enumerate(P.legs):
        try:
            X = _batch(flow_map(lg.effective_field(), lg.duration, X, cfg), P.dim)[0]
        except FlowError as err:
            raise err.with_leg(i) from None
    return _unbatch(X, single)


def invert(P):
    return FlowProgram(tuple(lg.flipped() for lg in reversed(P.legs)), P.dim)


# ---------------------------------------------------------------------------
# Conjugation identities
# ---------------------------------------------------------------------------


def conjugated_flow(f, A, b, tau, x, cfg=None):
    """Flow of ``A^{-1} f(A x + b)``: ``A^{-1}(phi_f^tau(A x + b) - b)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(f.dim) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape != (f.dim, f.dim) or b.size != f.dim:
        raise DimensionMismatch("A, b do not conform to the field")
    if not np.isfinite(np.linalg.cond(A)) or abs(np.linalg.det(A)) == 0:
        raise SingularMatrix("conjugating matrix is singular")
    X, single = _batch(x, f.dim)
    Y = _batch(flow_map(f, tau, X @ A.T + b, cfg), f.dim)[0]
    return _unbatch(np.linalg.solve(A, (Y - b).T).T, single)


def conjugated_field(f, A, b=None):
    """The field ``A^{-1} f(A x + b)`` as a Conjugated kind."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if abs(np.linalg.det(A)) == 0:
        raise SingularMatrix("conjugating matrix is singular")
    return Conjugated(np.linalg.inv(A), A, b, f)


def scaled_shift_flow(f, s, a, b, tau, x, cfg=None):
    """Flow of ``s f(a x + b)``: ``a^{-1}(phi_f^{a s tau}(a x + b) - b)``."""
    if a == 0:
        raise SingularMatrix("scale a must be nonzero")
    b = np.zeros(f.dim) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    X, single = _batch(x, f.dim)
    Y = _batch(flow_map(f, a * s * tau, a * X + b, cfg), f.dim)[0]
    return _unbatch((Y - b) / a, single)


def scaled_shift_field(f, s, a, b=None):
    d = f.dim
    return Sum([(s, Conjugated(np.eye(d), a * np.eye(d), b, f))])


# ---------------------------------------------------------------------------
# Jacobian determinants and volumes
# ---------------------------------------------------------------------------


def jacobian_det_along_flow(P, x, t_grid, cfg=None, log=False):
    """det J of ``x -> phi^t(x)`` at the program times in ``t_grid`` via the Liouville equation.

    Time runs through the legs consecutively, from 0 to ``P.total_time``.
    Returns an array of shape ``(len(t_grid),)`` for one point, or
    ``(m, len(t_grid))`` for a batch.
    """
    cfg = cfg or DEFAULT_CONFIG
    X, single = _batch(x, P.dim)
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1:
        raise ValueError("t_grid must be 1-d")
    if np.any(np.diff(grid) < 0):
        raise ValueError("t_grid must be nondecreasing")
    T = P.total_time
    if grid.size and (grid[0] < 0 or grid[-1] > T + 1e-12):
        raise ValueError(f"t_grid must lie in [0, {T}]")
    out = np.zeros((X.shape[0], grid.size))
    ld = np.zeros(X.shape[0])
    t_now = 0.0
    gi = 0
    while gi < grid.size and grid[gi] <= t_now:
        out[:, gi] = ld
        gi += 1
    for i, lg in enumerate(P.legs):
        f = lg.effective_field()
        t_end = t_now + lg.duration
        cuts = [g for g in grid[gi:] if g < t_end] + [t_end]
        try:
            for cut in cuts:
                seg = cut - t_now
                if seg > 0:
                    if isinstance(f, Affine):
                        M, v = affine_flow_matrices(f.A, f.b, seg)
                        X = X @ M.T + v
                        ld = ld + np.trace(f.A) * seg
                    else:
                        X, dld = _integrate(f, seg, X, cfg, track_logdet=True)
                        ld = ld + dld
                t_now = cut
                while gi < grid.size and grid[gi] <= t_now + 1e-12:
                    out[:, gi] = ld
                    gi += 1
        except FlowError as err:
            raise err.with_leg(i) from None
        t_now = t_end
    while gi < grid.size:
        out[:, gi] = ld
        gi += 1
    res = out if log else np.exp(out)
    return res[0] if single else res


def det_table_csv(t_grid, dets):
    lines = ["t,detJ"]
    for t, v in zip(t_grid, dets):
        lines.append(f"{t:.12g},{v:.12g}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Disk:
    """Euclidean ball; named for the planar case used in the volume diagnostics."""

    center: tuple
    radius: float = 1.0

    @property
    def dim(self):
        return len(self.center)

    @property
    def volume(self):
        d = self.dim
        return float(np.exp(0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1)) * self.radius ** d)

    def sample(self, rng, n):
        d = self.dim
        g = rng.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radius * rng.random(n) ** (1.0 / d)
        return np.asarray(self.center, dtype=float) + g * r[:, None]


def _region_volume(region):
    if isinstance(region, Disk):
        return region.volume
    return float(np.prod(region.upper - region.lower))


def _region_sample(region, rng, n):
    if isinstance(region, Disk):
        return region.sample(rng, n)
    return region.lower + rng.random((n, region.dim)) * (region.upper - region.lower)


@dataclass(frozen=True)
class VolumeComparison:
    volumes: tuple
    stderrs: tuple
    samples: int

    @property
    def difference(self):
        return self.volumes[0] - self.volumes[1]

    @property
    def combined_stderr(self):
        return math.hypot(*self.stderrs)

    def agree(self, k=3.0):
        # the floor covers exactly constant integrands, whose sampled stderr is 0
        floor = 1e-12 * max(1.0, abs(self.volumes[0]), abs(self.volumes[1]))
        return abs(self.difference) <= k * self.combined_stderr + floor

    @property
    def ratio(self):
        return self.volumes[0] / self.volumes[1]

    def ratio_stderr(self):
        v1, v2 = self.volumes
        s1, s2 = self.stderrs
        return abs(v1 / v2) * math.hypot(s1 / v1, s2 / v2)


def region_rng(seed, index):
    """Counter-based generator; region ``index`` gets its own key."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(index)]))


def map_jacobian_det(g, X):
    J = fd_jacobian(g, X)
    return np.linalg.det(J)


def volume_comparison(P, regions, mc_samples, seed, cfg=None):
    """Monte Carlo ``int_region det J_P`` for each region.

    ``P`` is a FlowProgram (det J via the Liouville equation) or a callable
    map on ``(m, d)`` batches (det J by central differences).
    """
    regions = list(regions)
    if len(regions) < 1:
        raise ValueError("need at least one region")
    if mc_samples < 2:
        raise ValueError("mc_samples must be >= 2")
    vols, ses = [], []
    for i, region in enumerate(regions):
        pts = _region_sample(region, region_rng(seed, i), int(mc_samples))
        if isinstance(P, FlowProgram):
            dets = jacobian_det_along_flow(P, pts, [P.total_time], cfg)[:, 0]
        else:
            dets = map_jacobian_det(P, pts)
        area = _region_volume(region)
        vols.append(area * float(np.mean(dets)))
        ses.append(area * float(np.std(dets, ddof=1)) / math.sqrt(mc_samples))
    return VolumeComparison(tuple(vols), tuple(ses), int(mc_samples))
