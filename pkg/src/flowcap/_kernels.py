"""Pure numpy RK4 kernels; the reference implementation of the compiled ``_rk4`` module."""
import numpy as np

OK = 0
BLOWUP = 1


def act_eval(code, p0, p1, u):
    if code == 0:
        return np.maximum(u, 0.0)
    if code == 1:
        return -np.maximum(u, 0.0)
    if code == 2:
        return np.where(u > 0, u, p0 * u)
    if code == 3:
        au = p0 * u
        return np.log1p(np.exp(-np.abs(au))) + np.maximum(au, 0.0)
    if code == 4:
        return np.sin(u)
    if code == 5:
        return np.cos(u)
    if code == 6:
        return u ** int(p0)
    if code == 7:
        z = (u - p0) / p1
        return np.exp(-z * z)
    return u * u


def act_deriv(code, p0, p1, u):
    if code == 0:
        return (u > 0).astype(float)
    if code == 1:
        return -(u > 0).astype(float)
    if code == 2:
        return np.where(u > 0, 1.0, p0)
    if code == 3:
        return p0 / (1.0 + np.exp(-p0 * u))
    if code == 4:
        return np.cos(u)
    if code == 5:
        return -np.sin(u)
    if code == 6:
        k = int(p0)
        return k * u ** (k - 1)
    if code == 7:
        z = (u - p0) / p1
        return -2.0 * z / p1 * np.exp(-z * z)
    return 2.0 * u


def _rhs(X, A, c, S, W, B, codes, params, TW, want_div):
    F = X @ A.T + c
    div = np.full(X.shape[0], np.trace(A)) if want_div else None
    for k in range(codes.shape[0]):
        U = X @ W[k].T + B[k]
        F += act_eval(codes[k], params[k, 0], params[k, 1], U) @ S[k].T
        if want_div:
            div += act_deriv(codes[k], params[k, 0], params[k, 1], U) @ TW[k]
    return F, div


def rk4_lowered(X, A, c, S, W, B, codes, params, TW, dt, nsteps, guard, track_logdet):
    """Integrate ``nsteps`` RK4 steps for the lowered field; returns ``(X, logdet, status, step)``."""
    X = np.array(X, dtype=float, copy=True)
    m = X.shape[0]
    ld = np.zeros(m)
    args = (A, c, S, W, B, codes, params, TW, track_logdet)
    for step in range(nsteps):
        k1, d1 = _rhs(X, *args)
        k2, d2 = _rhs(X + 0.5 * dt * k1, *args)
        k3, d3 = _rhs(X + 0.5 * dt * k2, *args)
        k4, d4 = _rhs(X + dt * k3, *args)
        X += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if track_logdet:
            ld += (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        if not np.all(np.abs(X) <= guard):
            return X, ld, BLOWUP, step
    return X, ld, OK, nsteps


def rk4_generic(fun, X, dt, nsteps, guard, divfun=None):
    """RK4 for any batched right-hand side ``fun``; ``divfun`` adds a log-det channel."""
    X = np.array(X, dtype=float, copy=True)
    ld = np.zeros(X.shape[0])
    for step in range(nsteps):
        k1 = fun(X)
        X2 = X + 0.5 * dt * k1
        k2 = fun(X2)
        X3 = X + 0.5 * dt * k2
        k3 = fun(X3)
        X4 = X + dt * k3
        k4 = fun(X4)
        if divfun is not None:
            ld += (dt / 6.0) * (divfun(X) + 2.0 * divfun(X2) + 2.0 * divfun(X3) + divfun(X4))
        X = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.abs(X) <= guard):
            return X, ld, BLOWUP, step
    return X, ld, OK, nsteps
