"""Exact interpolation of finitely many points by flow programs.

The main primitive moves one point ``p`` to ``q`` while fixing a finite set
``F``: in an affine frame where ``p`` and ``q`` lie on one ray in the open
positive orthant and ``F`` in the open negative orthant, a ReLU leg scales
only the moving point.  All legs are closed-form, so moves are exact up to
rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from ..errors import (
    DegenerateConfiguration, DimensionMismatch, InvalidProblem, SteeringFailed, TargetOutsideRadius,
    ToleranceNotMet,
)
from ..fields import Affine, Conjugated, RELU, Separable, VectorField, constant, negate, relu_field
from ..flows import BACKWARD, FORWARD, DEFAULT_CONFIG, FlowProgram, Leg, apply
from .certificates import family_rng, lifted_row, sample_family_field

SKIP_TOL = 1e-14


# ---------------------------------------------------------------------------
# Problem types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterpolationProblem:
    x: np.ndarray
    y: np.ndarray
    tolerance: float = 1e-6

    def __init__(self, x, y, tolerance=1e-6):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.shape != y.shape or x.ndim != 2 or x.shape[0] < 1:
            raise InvalidProblem(f"x and y must be (N, d) arrays of equal shape, got {x.shape} and {y.shape}")
        if not tolerance > 0:
            raise InvalidProblem("tolerance must be > 0")
        for name, P in (("x", x), ("y", y)):
            for i in range(P.shape[0]):
                for j in range(i + 1, P.shape[0]):
                    if np.array_equal(P[i], P[j]):
                        raise InvalidProblem(f"{name}[{i}] and {name}[{j}] coincide")
        if x.shape[1] == 1 and x.shape[0] > 1:
            order = np.argsort(x[:, 0])
            if np.any(np.diff(y[order, 0]) <= 0):
                raise InvalidProblem("1-d data must be increasing in the same order (flow maps are increasing)")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "tolerance", float(tolerance))

    @property
    def N(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def residual(self, P, cfg=None):
        return float(np.max(np.abs(apply(P, self.x, cfg) - self.y)))

    def to_dict(self):
        return {"x": self.x.tolist(), "y": self.y.tolist(), "tolerance": self.tolerance}

    @classmethod
    def from_dict(cls, d):
        return cls(d["x"], d["y"], d.get("tolerance", 1e-6))


@dataclass(frozen=True)
class CanonicalConfig:
    N: int
    dim: int = 2

    def __post_init__(self):
        if self.N < 1 or self.dim < 1:
            raise ValueError("need N >= 1 and dim >= 1")

    @property
    def points(self):
        Z = np.zeros((self.N, self.dim))
        Z[:, 0] = np.arange(1, self.N + 1)
        return Z

    @property
    def delta(self):
        return 1.0 / (2.0 * self.N)


# ---------------------------------------------------------------------------
# Isolate and scale
# ---------------------------------------------------------------------------


class _NotSeparable(Exception):
    pass


def _margin_lp(p, q, F):
    """Max-margin hyperplane ``n.x = c`` with ``p, q`` above and ``F`` below, ``|n|_inf <= 1``."""
    d = p.size
    # variables (n, c, gamma); minimize -gamma
    rows = [np.concatenate([-p, [1.0, 1.0]]), np.concatenate([-q, [1.0, 1.0]])]
    rows += [np.concatenate([f, [-1.0, 1.0]]) for f in F]
    bounds = [(-1.0, 1.0)] * d + [(None, None), (None, 1e6)]
    res = linprog(np.r_[np.zeros(d + 1), -1.0], A_ub=np.array(rows), b_ub=np.zeros(len(rows)),
                  bounds=bounds, method="highs")
    if res.status != 0:
        raise _NotSeparable("margin LP failed")
    return res.x[:d], res.x[d], res.x[d + 1]


def _direction_lp(p, q, F, gamma, sense):
    """Among hyperplanes with margin ``gamma``, extremize ``n.(q - p)``."""
    d = p.size
    rows = [np.concatenate([-p, [1.0]]), np.concatenate([-q, [1.0]])]
    rows += [np.concatenate([f, [-1.0]]) for f in F]
    res = linprog(np.r_[sense * (q - p), 0.0], A_ub=np.array(rows), b_ub=np.full(len(rows), -gamma),
                  bounds=[(-1.0, 1.0)] * d + [(None, None)], method="highs")
    if res.status != 0:
        return None
    return res.x[:d], res.x[d]


def _givens_legs(v):
    """Rotation legs (flows of skew fields, time 1) taking direction ``v`` to ``|v| e_0``."""
    d = v.size
    v = v.astype(float).copy()
    legs = []
    R = np.eye(d)
    for k in range(1, d):
        theta = math.atan2(v[k], v[0])
        if theta == 0.0:
            continue
        G = np.zeros((d, d))
        G[0, k] = theta
        G[k, 0] = -theta
        c, s = math.cos(theta), math.sin(theta)
        Rk = np.eye(d)
        Rk[0, 0] = Rk[k, k] = c
        Rk[0, k] = s
        Rk[k, 0] = -s
        v = Rk @ v
        v[k] = 0.0
        R = Rk @ R
        legs.append(Leg(Affine(G), 1.0))
    return legs, R


def _move_legs(p, q, F, n, c):
    """Legs for the exact move ``p -> q`` fixing ``F`` given a separating hyperplane ``(n, c)``."""
    d = p.size
    s = float(n @ (q - p))
    hp, hq = float(n @ p - c), float(n @ q - c)
    if hp <= 0 or hq <= 0 or abs(s) <= 1e-12 * np.linalg.norm(q - p):
        return None
    lam = hq / hp
    o = p + ((c - n @ p) / s) * (q - p)
    fwd = [Leg(constant(-o), 1.0)]
    rot, R = _givens_legs(n / np.linalg.norm(n))
    fwd += rot
    yp = R @ (p - o)
    YF = (np.asarray(F) - o) @ R.T
    if d > 1:
        K = 0.0
        if yp[0] <= 0:
            return None
        K = max(K, float(np.max(-yp[1:] / yp[0])))
        if len(F):
            if np.any(YF[:, 0] >= 0):
                return None
            K = max(K, float(np.max(YF[:, 1:] / np.abs(YF[:, :1]))))
        K += 1.0
        N = np.zeros((d, d))
        N[1:, 0] = K
        fwd.append(Leg(Affine(N), 1.0))
    scale = Leg(relu_field(d), abs(math.log(lam)), FORWARD if lam > 1 else BACKWARD)
    back = [lg.flipped() for lg in reversed(fwd)]
    return fwd + [scale] + back


def move_point(p, q, fixed, free=None, cfg=None):
    """Program sending ``p`` to ``q`` and fixing every point of ``fixed``.

    ``free`` points are only used to pick, among candidate frames, the one
    that disturbs them least.  Raises ``_NotSeparable`` when ``[p, q]`` meets
    the convex hull of ``fixed``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = p.size
    F = np.asarray(fixed, dtype=float).reshape(-1, d)
    if F.shape[0] == 0:
        return FlowProgram([Leg(constant(q - p), 1.0)], d)
    if d == 1:
        return _move_1d(p, q, F)
    n, c, gamma = _margin_lp(p, q, F)
    scale = max(1.0, float(np.max(np.abs(np.vstack([F, p, q])))))
    if gamma <= 1e-9 * scale:
        raise _NotSeparable("segment meets the hull of the fixed points")
    cands = [(n, c)]
    for sense in (1.0, -1.0):
        sol = _direction_lp(p, q, F, 0.5 * gamma, sense)
        if sol is not None:
            cands.append(sol)
    free = np.zeros((0, d)) if free is None else np.asarray(free, dtype=float).reshape(-1, d)
    best, best_score = None, math.inf
    for n_, c_ in cands:
        legs = _move_legs(p, q, F, n_, c_)
        if legs is None:
            continue
        P = FlowProgram(legs, d)
        try:
            pts = apply(P, np.vstack([p, F, free]), cfg)
        except Exception:
            continue
        err = max(float(np.max(np.abs(pts[0] - q))), float(np.max(np.abs(pts[1:1 + len(F)] - F))))
        moved = float(np.max(np.abs(pts[1 + len(F):] - free))) if len(free) else 0.0
        score = moved + 1e6 * err
        if score < best_score:
            best, best_score = P, score
    if best is None:
        raise _NotSeparable("no usable frame")
    return best


def _move_1d(p, q, F):
    """1-d move fixing points left of an anchor (translate, +-ReLU, translate back)."""
    a = float(np.max(F[:, 0]))
    if not (p[0] > a and q[0] > a):
        raise _NotSeparable("1-d moves fix only points to the left of the moving point")
    lam = (q[0] - a) / (p[0] - a)
    T = Leg(constant([-a]), 1.0)
    scale = Leg(relu_field(1), abs(math.log(lam)), FORWARD if lam > 1 else BACKWARD)
    return FlowProgram([T, scale, T.flipped()], 1)


# ---------------------------------------------------------------------------
# Steering and local interpolation
# ---------------------------------------------------------------------------


def _scramble(d, rng):
    """A random bounded program (rotation, shift, ReLU leg) used to restart degenerate steering."""
    G = rng.uniform(-1.0, 1.0, (d, d))
    G = G - G.T
    return FlowProgram([
        Leg(Affine(G), 1.0),
        Leg(constant(rng.uniform(-1.0, 1.0, d)), 1.0),
        Leg(relu_field(d), float(rng.uniform(0.2, 0.8))),
    ], d)


def _sequential_moves(X, targets, cfg, fix_all_placed=True):
    """Move point ``k`` to ``targets[k]`` in order, fixing the already placed ``targets[:k]``."""
    N, d = X.shape
    legs = []
    cur = X.copy()
    for k in range(N):
        p, q = cur[k], targets[k]
        if np.max(np.abs(p - q)) <= SKIP_TOL:
            continue
        P = move_point(p, q, targets[:k], cur[k + 1:], cfg)
        cur = apply(P, cur, cfg)
        cur[k] = q if np.max(np.abs(cur[k] - q)) < 1e-9 else cur[k]
        legs.extend(P.legs)
    return FlowProgram(legs, d)


def steer_to_canonical(points, cfg=None, seed=0, max_restarts=20, integ=None):
    """Program taking ``points[i]`` to ``z_i = (i+1) e_1`` (``cfg`` a CanonicalConfig).

    Points are placed one at a time.  Placing a point fails only when its
    segment to ``z_i`` meets the already placed axis segment; the construction
    then restarts after a random bounded prefix program.  In 1-d the inputs
    must be sorted and a monotone construction is used.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    N, d = X.shape
    cfg = cfg or CanonicalConfig(N, d)
    if cfg.N != N or cfg.dim != d:
        raise DimensionMismatch("configuration does not match the points")
    for i in range(N):
        for j in range(i + 1, N):
            if np.array_equal(X[i], X[j]):
                raise DegenerateConfiguration(f"points {i} and {j} coincide")
    Z = cfg.points
    if d == 1:
        if N > 1 and np.any(np.diff(X[:, 0]) <= 0):
            raise SteeringFailed("1-d steering needs strictly increasing inputs", X)
        return monotone_1d(X[:, 0], Z[:, 0])
    rng = np.random.default_rng(seed)
    prefix = FlowProgram((), d)
    start = X
    for _ in range(max_restarts + 1):
        try:
            P = prefix.then(_sequential_moves(start, Z, integ))
        except _NotSeparable:
            P = None
        if P is not None:
            res = float(np.max(np.linalg.norm(apply(P, X, integ) - Z, axis=1)))
            if res < 0.5 * cfg.delta:
                return P
        step = _scramble(d, rng)
        prefix = prefix.then(step)
        start = apply(prefix, X, integ)
    raise SteeringFailed("steering did not converge after restarts", X)


def local_uip_relu(cfg, targets, integ=None):
    """Program over affine and +-ReLU fields mapping ``z_i`` exactly to ``targets[i]``.

    Stage ``i`` moves point ``i`` to its target and fixes the targets of
    points ``0..i-1``; points not yet placed may be displaced.
    """
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    if Y.shape != (cfg.N, cfg.dim):
        raise DimensionMismatch("targets do not match the configuration")
    Z = cfg.points
    dist = np.linalg.norm(Y - Z, axis=1)
    if np.any(dist >= cfg.delta):
        i = int(np.argmax(dist))
        raise TargetOutsideRadius(f"target {i} is {dist[i]:.3g} from z_{i}, radius {cfg.delta:.3g}")
    if cfg.dim == 1:
        return monotone_1d(Z[:, 0], Y[:, 0])
    try:
        return _sequential_moves(Z, Y, integ)
    except _NotSeparable as err:
        raise SteeringFailed(f"local stage failed: {err}", Y) from None


def monotone_1d(x, y):
    """Program over ``{a x + b, +-ReLU}`` mapping increasing ``x`` to increasing ``y``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    N = x.size
    if N > 1 and (np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0)):
        raise InvalidProblem("1-d data must be strictly increasing")
    if N == 1:
        if x[0] == y[0]:
            return FlowProgram((), 1)
        return FlowProgram([Leg(constant([y[0] - x[0]]), 1.0)], 1)
    legs = []
    alpha = (y[1] - y[0]) / (x[1] - x[0])
    if alpha != 1.0:
        legs.append(Leg(Affine([[math.log(alpha)]]), 1.0))
    shift = y[0] - alpha * x[0]
    if shift != 0.0:
        legs.append(Leg(constant([shift]), 1.0))
    P = FlowProgram(legs, 1)
    cur = apply(P, x[:, None])[:, 0]
    cur[:2] = y[:2]
    for k in range(2, N):
        if abs(cur[k] - y[k]) <= SKIP_TOL:
            continue
        mv = _move_1d(np.array([cur[k]]), np.array([y[k]]), y[:k, None])
        cur = apply(mv, cur[:, None])[:, 0]
        cur[:k + 1] = y[:k + 1]
        P = P.then(mv)
    return P


# ---------------------------------------------------------------------------
# Families and interpolation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Family:
    """A symmetric control family: ``ass`` (affine plus +-f), ``aff`` (S f(Wx+b)) or ``diag``."""

    kind: str
    f: VectorField

    def __post_init__(self):
        if self.kind not in ("ass", "aff", "diag"):
            raise ValueError(f"unknown family kind {self.kind!r}")

    def contains(self, g):
        if self.kind == "ass":
            if isinstance(g, Affine):
                return True
            key = g.to_dict()
            return key in (self.f.to_dict(), negate(self.f).to_dict())
        if not isinstance(g, Conjugated) or g.base.to_dict() != self.f.to_dict():
            return False
        if self.kind == "diag":
            return _is_diag(g.S) and _is_diag(g.W)
        return True

    def program_in_family(self, P):
        return all(self.contains(lg.effective_field()) for lg in P.legs)

    def sample(self, rng):
        return sample_family_field(self.f, self.kind, rng)


def _is_diag(M):
    return bool(np.all(M[~np.eye(M.shape[0], dtype=bool)] == 0))


def family_from_spec(spec, dim):
    """``'ass_relu'``, ``('diag', f)``, ``('aff', f)`` or a Family."""
    if isinstance(spec, Family):
        return spec
    if spec == "ass_relu":
        return Family("ass", relu_field(dim))
    kind, f = spec
    return Family(kind, f)


def interpolate(problem, family="ass_relu", seed=0, cfg=None, **kw):
    """Flow program ``Phi`` with ``Phi(x_i) = y_i`` up to ``problem.tolerance``.

    For the affine-plus-ReLU family this is ``phi2^{-1} o phi4 o phi3^{-1} o
    phi1`` with ``phi1, phi2`` steering ``x`` and ``y`` onto the canonical
    configuration and ``phi3, phi4`` local stages; for ``aff``/``diag``
    families a span-based continuation is used.
    """
    fam = family_from_spec(family, problem.dim)
    if fam.kind == "ass":
        P = _interpolate_ass(problem, fam, seed, cfg)
    else:
        P = span_steer(problem.x, problem.y, fam, problem.tolerance, seed=seed, cfg=cfg, **kw)
    res = problem.residual(P, cfg)
    if not res <= problem.tolerance:
        raise ToleranceNotMet(f"residual {res:.3e} exceeds tolerance {problem.tolerance:.3e}", res)
    return P


def _interpolate_ass(problem, fam, seed, cfg):
    if not isinstance(fam.f, Separable) or fam.f.act.name != "relu" or not np.all(fam.f.mask == 1):
        raise ValueError("the constructive route needs the elementwise ReLU family")
    N, d = problem.x.shape
    if d == 1:
        order = np.argsort(problem.x[:, 0])
        return monotone_1d(problem.x[order, 0], problem.y[order, 0])
    conf = CanonicalConfig(N, d)
    phi1 = steer_to_canonical(problem.x, conf, seed=seed, integ=cfg)
    phi2 = steer_to_canonical(problem.y, conf, seed=seed + 1, integ=cfg)
    phi3 = local_uip_relu(conf, apply(phi1, problem.x, cfg), cfg)
    phi4 = local_uip_relu(conf, apply(phi2, problem.y, cfg), cfg)
    return phi1.then(phi3.invert()).then(phi4).then(phi2.invert())


def span_steer(X, Y, family, tol, seed=0, cfg=None, max_iter=80, max_step=0.25, samples=None):
    """Continuation ``X -> Y`` with family fields chosen by least-norm span coefficients.

    Each iteration samples family fields, solves ``M alpha = step`` for the
    lifted field matrix ``M`` at the current points and appends one leg per
    field with duration ``|alpha_k|`` (backward legs for negative weights).
    A step is accepted only if it reduces the residual; otherwise the step
    length is halved.  Rank-deficient iterations resample.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    N, d = X.shape
    dN = N * d
    count = 4 * dN if samples is None else int(samples)
    cur = X.copy()
    legs = []
    step_cap = max_step
    draw = 0
    for it in range(max_iter):
        R = Y - cur
        res = float(np.max(np.abs(R)))
        if res <= 0.1 * tol:
            break
        fields = [family.sample(family_rng(seed, draw + k)) for k in range(count)]
        draw += count
        M = np.stack([lifted_row(g, cur) for g in fields], axis=1)
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= 1e-8 * s[0]:
            continue
        step = R.reshape(-1)
        norm = float(np.max(np.abs(step)))
        if norm > step_cap:
            step = step * (step_cap / norm)
        alpha = np.linalg.lstsq(M, step, rcond=None)[0]
        new_legs = [Leg(g, abs(a), FORWARD if a > 0 else BACKWARD) for g, a in zip(fields, alpha) if a != 0]
        P = FlowProgram(new_legs, d)
        try:
            nxt = apply(P, cur, cfg)
        except Exception:
            step_cap *= 0.5
            continue
        if float(np.max(np.abs(Y - nxt))) < res:
            cur = nxt
            legs.extend(new_legs)
            step_cap = min(max_step, step_cap * 2.0)
        else:
            step_cap *= 0.5
    return FlowProgram(legs, d)
