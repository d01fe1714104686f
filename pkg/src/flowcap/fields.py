"""Vector fields on R^d: construction, evaluation, Jacobians and brackets.

A field is an immutable tree of a few kinds (affine, separable activation,
affine conjugation, weighted sum, named examples, marginal profile).  All
evaluation routines accept either a single point of shape ``(d,)`` or a batch
of shape ``(m, d)`` and return the matching shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import DimensionMismatch, EmptyBox

_EPS = np.finfo(float).eps
FD_STEP = _EPS ** (1.0 / 3.0)


def _frozen(a, ndim=None):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

# integer codes shared with the RK4 kernels
ACT_CODES = {
    "relu": 0,
    "neg_relu": 1,
    "leaky_relu": 2,
    "softplus": 3,
    "sin": 4,
    "cos": 5,
    "power": 6,
    "gaussian": 7,
    "quadratic": 8,
}


@dataclass(frozen=True)
class Activation:
    """Scalar activation applied elementwise.

    ``p0``/``p1`` hold the kind parameters: slope for ``leaky_relu``,
    sharpness for ``softplus``, exponent for ``power``, (center, width) for
    ``gaussian``.
    """

    name: str
    p0: float = 0.0
    p1: float = 0.0

    def __post_init__(self):
        if self.name not in ACT_CODES:
            raise ValueError(f"unknown activation {self.name!r}")
        if self.name == "leaky_relu" and self.p0 < 0:
            raise ValueError("leaky_relu slope must be >= 0")
        if self.name == "softplus" and self.p0 <= 0:
            raise ValueError("softplus sharpness must be > 0")
        if self.name == "power" and (self.p0 < 2 or int(self.p0) != self.p0):
            raise ValueError("power exponent must be an integer >= 2")
        if self.name == "gaussian" and self.p1 <= 0:
            raise ValueError("gaussian width must be > 0")

    @property
    def code(self):
        return ACT_CODES[self.name]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        n = self.name
        if n == "relu":
            return np.maximum(t, 0.0)
        if n == "neg_relu":
            return -np.maximum(t, 0.0)
        if n == "leaky_relu":
            return np.where(t > 0, t, self.p0 * t)
        if n == "softplus":
            return np.logaddexp(0.0, self.p0 * t)
        if n == "sin":
            return np.sin(t)
        if n == "cos":
            return np.cos(t)
        if n == "power":
            return t ** int(self.p0)
        if n == "gaussian":
            z = (t - self.p0) / self.p1
            return np.exp(-z * z)
        return t * t  # quadratic

    def deriv(self, t):
        """Scalar derivative; the subgradient 0 is used at ReLU kinks."""
        t = np.asarray(t, dtype=float)
        n = self.name
        if n == "relu":
            return (t > 0).astype(float)
        if n == "neg_relu":
            return -(t > 0).astype(float)
        if n == "leaky_relu":
            return np.where(t > 0, 1.0, self.p0)
        if n == "softplus":
            return self.p0 / (1.0 + np.exp(-self.p0 * t))
        if n == "sin":
            return np.cos(t)
        if n == "cos":
            return -np.sin(t)
        if n == "power":
            k = int(self.p0)
            return k * t ** (k - 1)
        if n == "gaussian":
            z = (t - self.p0) / self.p1
            return -2.0 * z / self.p1 * np.exp(-z * z)
        return 2.0 * t

    def to_dict(self):
        out = {"name": self.name}
        if self.name == "leaky_relu":
            out["slope"] = self.p0
        elif self.name == "softplus":
            out["sharpness"] = self.p0
        elif self.name == "power":
            out["n"] = int(self.p0)
        elif self.name == "gaussian":
            out["center"] = self.p0
            out["width"] = self.p1
        return out

    @classmethod
    def from_dict(cls, d):
        name = d["name"]
        if name == "leaky_relu":
            return cls(name, float(d.get("slope", 0.01)))
        if name == "softplus":
            return cls(name, float(d.get("sharpness", 1.0)))
        if name == "power":
            return cls(name, float(d["n"]))
        if name == "gaussian":
            return cls(name, float(d.get("center", 0.0)), float(d.get("width", 1.0)))
        return cls(name)


RELU = Activation("relu")
NEG_RELU = Activation("neg_relu")
SIN = Activation("sin")
COS = Activation("cos")
QUADRATIC = Activation("quadratic")


def leaky_relu(slope):
    return Activation("leaky_relu", float(slope))


def softplus(sharpness=1.0):
    return Activation("softplus", float(sharpness))


def power(n):
    return Activation("power", float(n))


def gaussian(center=0.0, width=1.0):
    return Activation("gaussian", float(center), float(width))


# ---------------------------------------------------------------------------
# Box
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lo = np.atleast_1d(np.array(lower, dtype=float))
        hi = np.atleast_1d(np.array(upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise EmptyBox(f"empty box: lower={lo}, upper={hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo, hi, dim):
        return cls(np.full(dim, lo), np.full(dim, hi))

    @property
    def dim(self):
        return self.lower.size

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    def inflate(self, radius):
        return Box(self.lower - radius, self.upper + radius)

    def halton(self, n):
        """First ``n`` points of the unscrambled Halton sequence mapped to the box."""
        u = qmc.Halton(d=self.dim, scramble=False).random(n)
        return self.lower + u * (self.upper - self.lower)

    def corners(self):
        d = self.dim
        bits = (np.arange(2 ** d)[:, None] >> np.arange(d)) & 1
        return np.where(bits == 1, self.upper, self.lower)

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lower"], d["upper"])


def sample_points(box, samples):
    """Deterministic sample set: box corners (d <= 10), the center, then Halton points.

    The Halton part is a prefix of a fixed sequence, so sample sets are nested
    in ``samples``.
    """
    parts = []
    if box.dim <= 10:
        parts.append(box.corners())
    parts.append(box.center[None, :])
    parts.append(box.halton(samples))
    return np.vstack(parts)


# ---------------------------------------------------------------------------
# Lowered form consumed by the RK4 kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lowered:
    """``f(x) = A x + c + sum_k S_k act_k(W_k x + b_k)`` in flat arrays."""

    A: np.ndarray
    c: np.ndarray
    S: np.ndarray  # (K, d, d)
    W: np.ndarray  # (K, d, d)
    B: np.ndarray  # (K, d)
    codes: np.ndarray  # (K,) int64
    params: np.ndarray  # (K, 2)

    @property
    def dim(self):
        return self.c.size

    @property
    def trace_weights(self):
        # tr(S diag(a') W) = sum_i a'_i (W S)_ii
        if self.S.shape[0] == 0:
            return np.zeros((0, self.dim))
        return np.einsum("kij,kji->ki", self.W, self.S)

    def scaled(self, coef):
        return Lowered(coef * self.A, coef * self.c, coef * self.S, self.W, self.B, self.codes, self.params)

    @staticmethod
    def concat(parts, dim):
        A = np.zeros((dim, dim))
        c = np.zeros(dim)
        S, W, B, codes, params = [], [], [], [], []
        for p in parts:
            A = A + p.A
            c = c + p.c
            S.append(p.S)
            W.append(p.W)
            B.append(p.B)
            codes.append(p.codes)
            params.append(p.params)
        return Lowered(
            A,
            c,
            np.concatenate(S) if S else np.zeros((0, dim, dim)),
            np.concatenate(W) if W else np.zeros((0, dim, dim)),
            np.concatenate(B) if B else np.zeros((0, dim)),
            np.concatenate(codes).astype(np.int64) if codes else np.zeros(0, np.int64),
            np.concatenate(params) if params else np.zeros((0, 2)),
        )


def _single_term(dim, act, S, W=None, b=None):
    W = np.eye(dim) if W is None else W
    b = np.zeros(dim) if b is None else b
    return Lowered(
        np.zeros((dim, dim)),
        np.zeros(dim),
        np.asarray(S, float)[None],
        np.asarray(W, float)[None],
        np.asarray(b, float)[None],
        np.array([act.code], dtype=np.int64),
        np.array([[act.p0, act.p1]]),
    )


# ---------------------------------------------------------------------------
# Field kinds
# ---------------------------------------------------------------------------


class VectorField:
    """Base class; subclasses implement ``_eval`` and ``_jac`` on (m, d) batches."""

    dim: int

    def _eval(self, X):
        raise NotImplementedError

    def _jac(self, X):
        raise NotImplementedError

    def lower(self) -> Optional[Lowered]:
        return None

    def to_dict(self):
        raise NotImplementedError

    def __call__(self, x):
        return eval_field(self, x)

    def __neg__(self):
        return negate(self)

    def __add__(self, other):
        return Sum([(1.0, self), (1.0, other)])

    def __rmul__(self, coef):
        return Sum([(float(coef), self)])


@dataclass(frozen=True, eq=False)
class Affine(VectorField):
    A: np.ndarray
    b: np.ndarray

    def __init__(self, A, b=None):
        A = _frozen(np.atleast_2d(np.asarray(A, dtype=float)), 2)
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        b = np.zeros(A.shape[0]) if b is None else b
        b = _frozen(np.atleast_1d(np.asarray(b, dtype=float)), 1)
        if b.size != A.shape[0]:
            raise DimensionMismatch("b does not conform to A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.b.size

    def _eval(self, X):
        return X @ self.A.T + self.b

    def _jac(self, X):
        return np.broadcast_to(self.A, (X.shape[0],) + self.A.shape).copy()

    def lower(self):
        d = self.dim
        return Lowered(
            np.array(self.A), np.array(self.b), np.zeros((0, d, d)), np.zeros((0, d, d)),
            np.zeros((0, d)), np.zeros(0, np.int64), np.zeros((0, 2)),
        )

    def to_dict(self):
        return {"dim": self.dim, "kind": "affine", "A": self.A.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True, eq=False)
class Separable(VectorField):
    """``x -> (mask_i * act(x_i))_i``."""

    act: Activation
    mask: np.ndarray

    def __init__(self, act, dim=None, mask=None):
        if mask is None:
            if dim is None:
                raise ValueError("need dim or mask")
            mask = np.ones(dim)
        mask = _frozen((np.asarray(mask, dtype=float) != 0).astype(float), 1)
        if dim is not None and mask.size != dim:
            raise DimensionMismatch("mask does not conform to dim")
        object.__setattr__(self, "act", act)
        object.__setattr__(self, "mask", mask)

    @property
    def dim(self):
        return self.mask.size

    def _eval(self, X):
        return self.act(X) * self.mask

    def _jac(self, X):
        m, d = X.shape
        J = np.zeros((m, d, d))
        idx = np.arange(d)
        J[:, idx, idx] = self.act.deriv(X) * self.mask
        return J

    def lower(self):
        return _single_term(self.dim, self.act, np.diag(self.mask))

    def to_dict(self):
        return {"dim": self.dim, "kind": "separable", "activation": self.act.to_dict(),
                "mask": self.mask.astype(int).tolist()}


@dataclass(frozen=True, eq=False)
class Conjugated(VectorField):
    """``x -> S base(W x + b)``."""

    S: np.ndarray
    W: np.ndarray
    b: np.ndarray
    base: VectorField

    def __init__(self, S, W, b, base):
        d = base.dim
        S = _frozen(np.atleast_2d(S), 2)
        W = _frozen(np.atleast_2d(W), 2)
        b = _frozen(np.zeros(d) if b is None else np.atleast_1d(b), 1)
        if S.shape != (d, d) or W.shape != (d, d) or b.size != d:
            raise DimensionMismatch("conjugation matrices do not conform to the base field")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "base", base)

    @property
    def dim(self):
        return self.base.dim

    def _eval(self, X):
        return self.base._eval(X @ self.W.T + self.b) @ self.S.T

    def _jac(self, X):
        Jb = self.base._jac(X @ self.W.T + self.b)
        return self.S @ Jb @ self.W

    def lower(self):
        low = self.base.lower()
        if low is None:
            return None
        S0, W0, b0 = self.S, self.W, self.b
        return Lowered(
            S0 @ low.A @ W0,
            S0 @ (low.A @ b0 + low.c),
            np.einsum("ij,kjl->kil", S0, low.S),
            np.einsum("kij,jl->kil", low.W, W0),
            np.einsum("kij,j->ki", low.W, b0) + low.B,
            low.codes,
            low.params,
        )

    def to_dict(self):
        return {"dim": self.dim, "kind": "conjugated", "S": self.S.tolist(), "W": self.W.tolist(),
                "b": self.b.tolist(), "base": self.base.to_dict()}


@dataclass(frozen=True, eq=False)
class Sum(VectorField):
    """Weighted sum; nested sums are flattened at construction."""

    terms: tuple

    def __init__(self, terms):
        flat = []
        for coef, f in terms:
            coef = float(coef)
            if not math.isfinite(coef):
                raise ValueError("sum coefficients must be finite")
            if isinstance(f, Sum):
                flat.extend((coef * c, g) for c, g in f.terms)
            else:
                flat.append((coef, f))
        if not flat:
            raise ValueError("empty sum")
        d = flat[0][1].dim
        if any(g.dim != d for _, g in flat):
            raise DimensionMismatch("sum terms have different dimensions")
        object.__setattr__(self, "terms", tuple(flat))

    @property
    def dim(self):
        return self.terms[0][1].dim

    def _eval(self, X):
        out = np.zeros_like(X)
        for c, f in self.terms:
            out += c * f._eval(X)
        return out

    def _jac(self, X):
        m, d = X.shape
        out = np.zeros((m, d, d))
        for c, f in self.terms:
            out += c * f._jac(X)
        return out

    def lower(self):
        parts = []
        for c, f in self.terms:
            low = f.lower()
            if low is None:
                return None
            parts.append(low.scaled(c))
        return Lowered.concat(parts, self.dim)

    def to_dict(self):
        return {"dim": self.dim, "kind": "sum",
                "terms": [{"coef": c, "field": f.to_dict()} for c, f in self.terms]}


NAMED_FIELDS = {
    "permute_relu": "(x1, x2) -> (ReLU(x2), ReLU(x1)); divergence free",
    "sinsum": "(x1, x2) -> (sin x1 + sin x2, sin x1 + sin x2); fully coordinate nonlinear",
    "gauss": "every component exp(-|x|^2); integrable with nonzero integral",
}

_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class Named(VectorField):
    name: str
    dim: int = 2

    def __post_init__(self):
        if self.name not in NAMED_FIELDS:
            raise ValueError(f"unknown named field {self.name!r}")
        if self.name in ("permute_relu", "sinsum") and self.dim != 2:
            raise DimensionMismatch(f"{self.name} is two-dimensional")
        if self.dim < 1:
            raise DimensionMismatch("dim must be positive")

    def _eval(self, X):
        if self.name == "permute_relu":
            return np.maximum(X[:, ::-1], 0.0)
        if self.name == "sinsum":
            s = np.sin(X[:, 0]) + np.sin(X[:, 1])
            return np.stack([s, s], axis=1)
        g = np.exp(-np.sum(X * X, axis=1))
        return np.repeat(g[:, None], self.dim, axis=1)

    def _jac(self, X):
        m = X.shape[0]
        if self.name == "permute_relu":
            J = np.zeros((m, 2, 2))
            J[:, 0, 1] = X[:, 1] > 0
            J[:, 1, 0] = X[:, 0] > 0
            return J
        if self.name == "sinsum":
            row = np.cos(X)
            return np.stack([row, row], axis=1)
        g = np.exp(-np.sum(X * X, axis=1))
        row = -2.0 * X * g[:, None]
        return np.repeat(row[:, None, :], self.dim, axis=1)

    def lower(self):
        if self.name == "permute_relu":
            return _single_term(2, RELU, _SWAP)
        if self.name == "sinsum":
            return _single_term(2, SIN, np.ones((2, 2)))
        return None

    def to_dict(self):
        return {"dim": self.dim, "kind": "named", "name": self.name}


@dataclass(frozen=True, eq=False)
class Marginal(VectorField):
    """Profile ``x -> int f(x_1, y) dy`` over ``[-R, R]^(d-1)`` by tensor trapezoid rule."""

    base: VectorField
    radius: float
    nodes: int

    @property
    def dim(self):
        return self.base.dim

    def _grid(self):
        d = self.dim
        t = np.linspace(-self.radius, self.radius, self.nodes)
        w = np.full(self.nodes, t[1] - t[0])
        w[0] = w[-1] = 0.5 * (t[1] - t[0])
        if d == 1:
            return np.zeros((1, 0)), np.ones(1)
        mesh = np.meshgrid(*([t] * (d - 1)), indexing="ij")
        Y = np.stack([g.ravel() for g in mesh], axis=1)
        wm = np.meshgrid(*([w] * (d - 1)), indexing="ij")
        W = np.prod(np.stack([g.ravel() for g in wm], axis=1), axis=1)
        return Y, W

    def _integrate(self, X, fn):
        Y, w = self._grid()
        m, q = X.shape[0], Y.shape[0]
        pts = np.hstack([np.repeat(X[:, :1], q, axis=0), np.tile(Y, (m, 1))])
        vals = fn(pts)
        vals = vals.reshape((m, q) + vals.shape[1:])
        # same summation order for every row, so equal x_1 gives bitwise-equal profiles
        w = w.reshape((1, q) + (1,) * (vals.ndim - 2))
        return np.sum(vals * w, axis=1)

    def _eval(self, X):
        return self._integrate(X, self.base._eval)

    def _jac(self, X):
        m, d = X.shape
        J = np.zeros((m, d, d))
        J[:, :, 0] = self._integrate(X, lambda P: self.base._jac(P)[:, :, 0])
        return J

    def to_dict(self):
        return {"dim": self.dim, "kind": "marginal", "radius": self.radius, "nodes": self.nodes,
                "base": self.base.to_dict()}


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def constant(b):
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return Affine(np.zeros((b.size, b.size)), b)


def linear(A):
    return Affine(A)


def relu_field(dim, mask=None):
    return Separable(RELU, dim=dim, mask=mask)


def neg_relu_field(dim, mask=None):
    return Separable(NEG_RELU, dim=dim, mask=mask)


def elementwise(act, dim, mask=None):
    return Separable(act, dim=dim, mask=mask)


def named(name, dim=2):
    return Named(name, dim)


def negate(f):
    """The field ``-f``, keeping closed-form kinds recognisable."""
    if isinstance(f, Affine):
        return Affine(-f.A, -f.b)
    if isinstance(f, Separable) and f.act.name in ("relu", "neg_relu"):
        other = NEG_RELU if f.act.name == "relu" else RELU
        return Separable(other, mask=f.mask)
    if isinstance(f, Conjugated):
        return Conjugated(-f.S, f.W, f.b, f.base)
    if isinstance(f, Sum):
        return Sum([(-c, g) for c, g in f.terms])
    return Sum([(-1.0, f)])


def difference_field(f, shift):
    """``x -> f(x + c) - f(x)``, a member of the sum-augmented family."""
    d = f.dim
    c = np.atleast_1d(np.asarray(shift, dtype=float))
    return Sum([(1.0, Conjugated(np.eye(d), np.eye(d), c, f)), (-1.0, f)])


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def field_to_dict(f):
    return f.to_dict()


def field_from_dict(d):
    kind = d["kind"]
    if kind == "affine":
        return Affine(d["A"], d.get("b"))
    if kind == "separable":
        act = Activation.from_dict(d["activation"])
        return Separable(act, dim=d.get("dim"), mask=d.get("mask"))
    if kind == "conjugated":
        return Conjugated(d["S"], d["W"], d.get("b"), field_from_dict(d["base"]))
    if kind == "sum":
        return Sum([(t["coef"], field_from_dict(t["field"])) for t in d["terms"]])
    if kind == "named":
        return Named(d["name"], int(d.get("dim", 2)))
    if kind == "marginal":
        return Marginal(field_from_dict(d["base"]), float(d["radius"]), int(d["nodes"]))
    raise ValueError(f"unknown field kind {kind!r}")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _as_batch(f, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != f.dim:
        raise DimensionMismatch(f"point of shape {x.shape} does not match field dim {f.dim}")
    return X, single


def eval_field(f, x):
    X, single = _as_batch(f, x)
    out = f._eval(X)
    return out[0] if single else out


def fd_jacobian(fun, x, one_sided=False):
    """Finite-difference Jacobian of ``fun`` mapping (m, d) -> (m, d') batches."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    m, d = X.shape
    h = FD_STEP * (1.0 + np.abs(X))
    cols = []
    f0 = fun(X) if one_sided else None
    for j in range(d):
        E = np.zeros_like(X)
        E[:, j] = h[:, j]
        if one_sided:
            cols.append((fun(X + E) - f0) / h[:, j:j + 1])
        else:
            cols.append((fun(X + E) - fun(X - E)) / (2.0 * h[:, j:j + 1]))
    return np.stack(cols, axis=2)


def jacobian(f, x, method="analytic"):
    """Jacobian of ``f`` at ``x``.

    ``method`` is ``"analytic"`` (every built-in kind), ``"central"`` or
    ``"forward"`` (finite differences with step ``eps**(1/3) * (1 + |x_i|)``).
    """
    X, single = _as_batch(f, x)
    if method == "analytic":
        J = f._jac(X)
    elif method in ("central", "forward"):
        J = fd_jacobian(f._eval, X, one_sided=(method == "forward"))
    else:
        raise ValueError(f"unknown jacobian method {method!r}")
    return J[0] if single else J


def divergence(f, x, method="analytic"):
    J = jacobian(f, x, method)
    return np.trace(J, axis1=-2, axis2=-1)


def lie_bracket(f, g, x):
    """``[f, g](x) = Dg(x) f(x) - Df(x) g(x)``."""
    if f.dim != g.dim:
        raise DimensionMismatch("fields have different dimensions")
    X, single = _as_batch(f, x)
    out = np.einsum("mij,mj->mi", g._jac(X), f._eval(X)) - np.einsum("mij,mj->mi", f._jac(X), g._eval(X))
    return out[0] if single else out


def lipschitz_estimate(f, box, samples=256):
    """Largest Jacobian operator norm over a deterministic sample of ``box``.

    This is a sampled lower bound for the true Lipschitz constant on the box,
    not a certified bound.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if box.dim != f.dim:
        raise DimensionMismatch("box and field dimensions differ")
    P = sample_points(box, samples)
    J = f._jac(P)
    return float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2))))


@dataclass(frozen=True)
class SliceVerdict:
    nonlinear: bool
    shift: Optional[np.ndarray] = None
    residual: float = 0.0

    @property
    def linear(self):
        return not self.nonlinear


def slice_nonlinearity_test(f, component, direction, shifts, interval=(-1.0, 1.0), tol=None, samples=201):
    """Fit an affine function to ``t -> f_component(t e_direction + b)`` for each shift ``b``.

    Indices are 0-based.  Returns the first shift whose max fit residual
    exceeds ``tol`` (default ``1e-6 * (range + 1)`` of the sampled values).
    """
    d = f.dim
    if not (0 <= component < d and 0 <= direction < d):
        raise DimensionMismatch("component/direction out of range")
    shifts = [np.atleast_1d(np.asarray(b, dtype=float)) for b in shifts]
    if not shifts:
        raise ValueError("need at least one shift")
    lo, hi = float(interval[0]), float(interval[1])
    if not hi > lo:
        raise ValueError("interval is degenerate")
    t = np.linspace(lo, hi, samples)
    V = np.vstack([np.ones_like(t), t]).T
    worst = 0.0
    for b in shifts:
        if b.size != d:
            raise DimensionMismatch("shift does not match field dim")
        X = np.tile(b, (samples, 1))
        X[:, direction] += t
        y = f._eval(X)[:, component]
        coef, *_ = np.linalg.lstsq(V, y, rcond=None)
        res = float(np.max(np.abs(V @ coef - y)))
        thr = tol if tol is not None else 1e-6 * (float(np.ptp(y)) + 1.0)
        worst = max(worst, res)
        if res > thr:
            return SliceVerdict(True, b, res)
    return SliceVerdict(False, None, worst)


def is_coordinate_nonlinear(f, component, shifts, interval=(-1.0, 1.0), tol=None):
    """Every direction has a nonlinear slice of ``f_component`` for some shift."""
    return all(
        slice_nonlinearity_test(f, component, j, shifts, interval, tol).nonlinear
        for j in range(f.dim)
    )


def is_fully_coordinate_nonlinear(f, shifts, interval=(-1.0, 1.0), tol=None):
    return all(is_coordinate_nonlinear(f, i, shifts, interval, tol) for i in range(f.dim))
