"""Splitting and commutator schemes, the Gronwall error bound, and convergence-order fits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import BlowUpGuard, DimensionMismatch, FlowError, NonPositiveError
from .fields import Box, VectorField, fd_jacobian, lie_bracket, lipschitz_estimate, negate, sample_points
from .flows import DEFAULT_CONFIG, BACKWARD, FORWARD, FlowProgram, Leg, flow_map


def _batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != dim:
        raise DimensionMismatch(f"point of shape {x.shape} does not match dim {dim}")
    return X.copy(), single


def _check_guard(X, cfg):
    if not np.all(np.abs(X) <= cfg.guard):
        raise BlowUpGuard(f"state left the guard radius {cfg.guard:g}")


# ---------------------------------------------------------------------------
# Schemes
# ---------------------------------------------------------------------------


def _validate_terms(terms):
    terms = [(float(a), f) for a, f in terms]
    if not terms:
        raise ValueError("need at least one term")
    if any(not a > 0 for a, _ in terms):
        raise ValueError("Lie-Trotter weights must be positive")
    d = terms[0][1].dim
    if any(f.dim != d for _, f in terms):
        raise DimensionMismatch("terms have different dimensions")
    return terms, d


def lie_trotter(terms, tau, n, x, cfg=None):
    """``(phi_{f_m}^{a_m tau/n} o ... o phi_{f_1}^{a_1 tau/n})^n (x)``."""
    cfg = cfg or DEFAULT_CONFIG
    terms, d = _validate_terms(terms)
    if tau < 0 or n < 1:
        raise ValueError("need tau >= 0 and n >= 1")
    X, single = _batch(x, d)
    m = len(terms)
    for j in range(int(n)):
        for i, (a, f) in enumerate(terms):
            try:
                X = np.atleast_2d(flow_map(f, a * tau / n, X, cfg))
                _check_guard(X, cfg)
            except FlowError as err:
                raise err.with_leg(j * m + i) from None
    return X[0] if single else X


def lie_trotter_program(terms, tau, n):
    terms, d = _validate_terms(terms)
    legs = [Leg(f, a * tau / n) for _ in range(int(n)) for a, f in terms]
    return FlowProgram(legs, d)


def commutator_scheme(f1, f2, tau, n, x, cfg=None):
    """``Psi^n(x)`` with ``Psi = phi_{f2}^h o phi_{f1}^h o phi_{-f2}^h o phi_{-f1}^h``, ``h = sqrt(tau/n)``.

    Approximates the flow of ``[f1, f2]`` at time ``tau``.  States leaving the
    guard radius (or reaching a closed-form pole) raise BlowUpGuard.
    """
    cfg = cfg or DEFAULT_CONFIG
    if f1.dim != f2.dim:
        raise DimensionMismatch("fields have different dimensions")
    if tau < 0 or n < 1:
        raise ValueError("need tau >= 0 and n >= 1")
    X, single = _batch(x, f1.dim)
    h = math.sqrt(tau / n)
    seq = (negate(f1), negate(f2), f1, f2)
    for j in range(int(n)):
        for i, g in enumerate(seq):
            try:
                X = np.atleast_2d(flow_map(g, h, X, cfg))
                _check_guard(X, cfg)
            except FlowError as err:
                raise err.with_leg(4 * j + i) from None
    return X[0] if single else X


def commutator_program(f1, f2, tau, n):
    """The same composition as :func:`commutator_scheme`, as a program over ``{+-f1, +-f2}``."""
    h = math.sqrt(tau / n)
    step = [Leg(f1, h, BACKWARD), Leg(f2, h, BACKWARD), Leg(f1, h), Leg(f2, h)]
    return FlowProgram(step * int(n), f1.dim)


class BracketField(VectorField):
    """``[f1, f2]`` as a field (analytic evaluation, finite-difference Jacobian)."""

    def __init__(self, f1, f2):
        if f1.dim != f2.dim:
            raise DimensionMismatch("fields have different dimensions")
        self.f1, self.f2 = f1, f2
        self.dim = f1.dim

    def _eval(self, X):
        return lie_bracket(self.f1, self.f2, X)

    def _jac(self, X):
        return fd_jacobian(self._eval, X)

    def to_dict(self):
        raise TypeError("bracket fields are not serializable")


# Approximate flows compose: a bracket of approximate flows is again an
# approximate flow, which realizes iterated brackets such as [f, [g, h]].


class FieldFlow:
    def __init__(self, f, cfg=None):
        self.f = f
        self.dim = f.dim
        self.cfg = cfg or DEFAULT_CONFIG

    def __call__(self, t, X):
        out = np.atleast_2d(flow_map(self.f, t, X, self.cfg))
        _check_guard(out, self.cfg)
        return out


class CommutatorFlow:
    """Approximate flow of ``[a, b]`` built from approximate flows ``a`` and ``b``.

    Time ``t`` uses ``ceil(|t| * steps_per_unit)`` scheme steps; negative time
    uses the swapped bracket ``[b, a] = -[a, b]``.
    """

    def __init__(self, a, b, steps_per_unit=64):
        self.a, self.b = a, b
        self.dim = a.dim
        self.steps_per_unit = int(steps_per_unit)

    def __call__(self, t, X):
        if t == 0:
            return np.array(X, dtype=float)
        first, second = (self.a, self.b) if t > 0 else (self.b, self.a)
        n = max(1, int(math.ceil(abs(t) * self.steps_per_unit)))
        h = math.sqrt(abs(t) / n)
        for _ in range(n):
            X = first(-h, X)
            X = second(-h, X)
            X = first(h, X)
            X = second(h, X)
        return X


class LieTrotterFlow:
    """Approximate flow of ``sum_i a_i f_i`` from approximate flows of the ``f_i``."""

    def __init__(self, terms, steps_per_unit=64):
        self.terms = [(float(a), g) for a, g in terms]
        self.dim = self.terms[0][1].dim
        self.steps_per_unit = int(steps_per_unit)

    def __call__(self, t, X):
        if t == 0:
            return np.array(X, dtype=float)
        n = max(1, int(math.ceil(abs(t) * self.steps_per_unit)))
        for _ in range(n):
            for a, g in self.terms:
                X = g(a * t / n, X)
        return X


# ---------------------------------------------------------------------------
# Gronwall bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GronwallBound:
    L: float
    V: float
    tau: float
    delta: float
    omega_tau: Box
    radius: float
    bound: float

    def to_dict(self):
        return {"L": self.L, "V": self.V, "tau": self.tau, "delta": self.delta, "radius": self.radius,
                "bound": self.bound, "omega_tau": self.omega_tau.to_dict()}


def gronwall_factor(L, tau):
    """``(e^{L tau} - 1) / L`` with the limit ``tau`` at ``L = 0``."""
    if abs(L * tau) < 1e-8:
        return tau * (1.0 + 0.5 * L * tau)
    return math.expm1(L * tau) / L


def gronwall_bound(f1, box, tau, delta, samples=256, max_iter=25):
    """Error bound ``delta (e^{L tau} - 1) / L`` for flows of fields within ``delta`` of ``f1``.

    ``V`` is the sampled max of ``|f1|`` on ``box``; ``L`` is re-estimated on
    the inflated box (radius ``(V + 1) tau e^{L tau}``) until it stops growing.
    """
    if delta < 0 or tau < 0:
        raise ValueError("need delta >= 0 and tau >= 0")
    if box.dim != f1.dim:
        raise DimensionMismatch("box and field dimensions differ")
    P = sample_points(box, samples)
    V = float(np.max(np.linalg.norm(f1._eval(P), axis=1)))
    L = lipschitz_estimate(f1, box, samples)
    for _ in range(max_iter):
        radius = (V + 1.0) * tau * math.exp(L * tau)
        L_new = lipschitz_estimate(f1, box.inflate(radius), samples)
        if L_new <= L * (1.0 + 1e-12):
            break
        L = L_new
    radius = (V + 1.0) * tau * math.exp(L * tau)
    bound = float(delta * gronwall_factor(L, tau))
    return GronwallBound(L, V, float(tau), float(delta), box.inflate(radius), radius, bound)


# ---------------------------------------------------------------------------
# Convergence fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    scheme: str
    n_values: tuple
    dts: tuple
    errors: tuple
    slope: float
    stderr: float
    window: tuple
    monotone: bool
    reference: str = ""
    exact: bool = False

    def within(self, target, tol):
        return abs(self.slope - target) <= tol

    def to_csv(self):
        lines = ["n,dt,error"]
        for n, dt, e in zip(self.n_values, self.dts, self.errors):
            lines.append(f"{n},{dt:.12e},{e:.12e}")
        return "\n".join(lines) + "\n"

    def summary(self):
        return {"scheme": self.scheme, "reference": self.reference, "slope": self.slope,
                "stderr": self.stderr, "window": list(self.window), "monotone": self.monotone,
                "exact": self.exact, "n_values": list(self.n_values)}


def fit_convergence(runs, tau=1.0, scheme="", reference=""):
    """Least-squares slope of log(error) against log(dt) over the largest half of the n-values.

    The window keeps at least three points so the slope has a standard error.
    """
    by_n = {}
    for n, e in runs:
        by_n[int(n)] = float(e)
    ns = sorted(by_n)
    if len(ns) < 4:
        raise ValueError(">=4 distinct n-values required")
    if any(n <= 0 for n in ns):
        raise ValueError("n-values must be positive")
    errs = [by_n[n] for n in ns]
    if any(not e > 0 for e in errs):
        raise NonPositiveError("errors must be positive to fit a log-log slope")
    dts = [tau / n for n in ns]
    k = max(len(ns) // 2, 3)
    win = slice(len(ns) - k, len(ns))
    fit = stats.linregress(np.log(dts[win]), np.log(errs[win]))
    monotone = all(b <= a for a, b in zip(errs, errs[1:]))
    return ConvergenceReport(scheme, tuple(ns), tuple(dts), tuple(errs), float(fit.slope),
                             float(fit.stderr), tuple(ns[win]), monotone, reference)


def sup_error(A, B):
    return float(np.max(np.abs(np.asarray(A) - np.asarray(B))))


def convergence_study(run, reference, box, n_values, tau=1.0, points=64, scheme="", reference_name="",
                      exact_tol=0.0):
    """Errors of ``run(n, X)`` against ``reference(X)`` on a fixed Halton set, then the slope fit.

    If every error is ``<= exact_tol`` the scheme is reported as exact
    instead of fitted.
    """
    X = box.halton(points)
    ref = reference(X)
    rows = sorted((int(n), sup_error(run(int(n), X), ref)) for n in set(n_values))
    if all(e <= exact_tol for _, e in rows):
        ns = tuple(n for n, _ in rows)
        return ConvergenceReport(scheme, ns, tuple(tau / n for n in ns), tuple(e for _, e in rows),
                                 float("nan"), float("nan"), (), True, reference_name, exact=True)
    return fit_convergence(rows, tau, scheme, reference_name)


def lie_trotter_study(terms, tau, box, n_values, reference=None, cfg=None, points=64):
    """Lie-Trotter against ``reference`` (default: RK4 of the sum with 10x finer steps)."""
    cfg = cfg or DEFAULT_CONFIG
    terms, d = _validate_terms(terms)
    if reference is None:
        from .fields import Sum
        from .flows import flow_numeric

        total = Sum(terms)
        fine = cfg.refined(10)
        reference = lambda X: flow_numeric(total, tau, X, fine)
    return convergence_study(lambda n, X: lie_trotter(terms, tau, n, X, cfg), reference, box, n_values, tau,
                             points, "lie_trotter", "closed form or fine RK4")


def commutator_study(f1, f2, tau, box, n_values, reference=None, cfg=None, points=64):
    """Commutator scheme against ``reference`` (default: fine RK4 of the bracket field)."""
    cfg = cfg or DEFAULT_CONFIG
    if reference is None:
        from .flows import flow_numeric

        br = BracketField(f1, f2)
        fine = cfg.refined(10)
        reference = lambda X: flow_numeric(br, tau, X, fine)
    return convergence_study(lambda n, X: commutator_scheme(f1, f2, tau, n, X, cfg), reference, box, n_values,
                             tau, points, "commutator", "closed form or fine RK4 of the bracket")
