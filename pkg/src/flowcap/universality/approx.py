"""Builders that realize ReLU-like and single-axis fields inside augmented control families."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import BudgetExceeded, DimensionMismatch, TailMassTooLarge
from ..expm import expm
from ..fields import Affine, Conjugated, Marginal, Named, Separable, Sum, VectorField, softplus
from ..flows import BACKWARD, FlowProgram, Leg

LN2 = math.log(2.0)


def relu_from_softplus(a, dim=1):
    """``t -> ln(1 + e^{a t}) / a`` elementwise, with its exact sup deviation ``ln 2 / a`` from ReLU."""
    if not a > 0:
        raise ValueError("sharpness a must be > 0")
    g = Sum([(1.0 / a, Separable(softplus(a), dim=dim))])
    return g, LN2 / a


@dataclass(frozen=True)
class SumFit:
    field: VectorField
    residual: float
    coefficients: np.ndarray
    atoms: tuple  # (a_i, b_i)


def _dictionary(act, radius, terms):
    """Atoms ``(a, b)``: the activation itself, a constant, then paired scales ``k pi / (2R)``."""
    atoms = [(1.0, 0.0)]
    b0 = 1.0
    for cand in (1.0, 0.5, 2.0, -1.0, 0.0):
        if abs(float(act(cand))) > 1e-3:
            b0 = cand
            break
    atoms.append((0.0, b0))
    k = 1
    while len(atoms) < terms:
        a = k * math.pi / (2.0 * radius)
        atoms.append((a, 0.0))
        if len(atoms) < terms:
            atoms.append((a, math.pi / 2.0))
        k += 1
    return atoms[:terms]


def relu_from_sums(act, box, terms, tol, grid=2001, dim=1):
    """Least-squares fit of ``ReLU`` on ``box`` by ``sum_i s_i act(a_i t + b_i)`` with ``a_i >= 0``.

    Raises BudgetExceeded (carrying the best residual) when the sup residual on
    the grid exceeds ``tol``.
    """
    if box.dim != 1:
        raise DimensionMismatch("relu_from_sums needs a 1-d box")
    if terms < 1:
        raise ValueError("terms must be >= 1")
    lo, hi = float(box.lower[0]), float(box.upper[0])
    radius = max(abs(lo), abs(hi), 1e-12)
    t = np.linspace(lo, hi, grid)
    atoms = _dictionary(act, radius, int(terms))
    V = np.stack([act(a * t + b) for a, b in atoms], axis=1)
    target = np.maximum(t, 0.0)
    exact = [k for k in range(V.shape[1]) if np.array_equal(V[:, k], target)]
    if exact:
        coef = np.zeros(V.shape[1])
        coef[exact[0]] = 1.0
    else:
        coef, *_ = np.linalg.lstsq(V, target, rcond=None)
    residual = float(np.max(np.abs(V @ coef - target)))
    if not residual <= tol:
        raise BudgetExceeded(f"sup residual {residual:.3e} exceeds tol {tol:.3e} with {terms} terms", residual)
    base = Separable(act, dim=dim)
    I = np.eye(dim)
    parts = [(s, Conjugated(I, a * I, np.full(dim, b), base)) for s, (a, b) in zip(coef, atoms)]
    return SumFit(Sum(parts), residual, coef, tuple(atoms))


# ---------------------------------------------------------------------------
# Broadcast and augmentation identities
# ---------------------------------------------------------------------------


def axis_swap_generator(d, k, j):
    G = np.zeros((d, d))
    G[k, j] = 1.0
    G[j, k] = -1.0
    return G


@dataclass(frozen=True)
class Broadcast:
    matrix: np.ndarray
    field: VectorField
    program: FlowProgram


def broadcast_coordinate(f, k, j, tau=1.0):
    """Move a field acting through axis ``k`` onto axis ``j`` by a quarter rotation.

    With ``A = exp((pi/2) G)``, ``G = e_k e_j^T - e_j e_k^T``, the conjugated
    field ``A^{-1} f(A x)`` reads ``x_j`` where ``f`` read ``x_k`` and writes
    slot ``j`` where ``f`` wrote slot ``k``.  ``program`` realizes its flow for
    time ``tau`` as rotate, flow ``f``, rotate back.  Indices are 0-based.
    """
    d = f.dim
    if d < 2:
        raise DimensionMismatch("broadcast needs d >= 2")
    if not (0 <= k < d and 0 <= j < d):
        raise DimensionMismatch(f"axis out of range for d={d}: k={k}, j={j}")
    if k == j:
        raise ValueError("source and target axes must differ")
    G = axis_swap_generator(d, k, j)
    A = expm(0.5 * math.pi * G)
    A = np.round(A, 15) + 0.0
    field = Conjugated(A.T, A, np.zeros(d), f)
    rot = Affine(G)
    prog = FlowProgram([Leg(rot, 0.5 * math.pi), Leg(f, tau), Leg(rot, 0.5 * math.pi, BACKWARD)], d)
    return Broadcast(A, field, prog)


def single_axis(act, d, k=0):
    """``sigma(x_k) e_k``."""
    mask = np.zeros(d)
    mask[k] = 1.0
    return Separable(act, mask=mask)


def _tail_estimate(f, radius, nodes, probes):
    inner = Marginal(f, radius, nodes)
    outer = Marginal(f, 2.0 * radius, 2 * nodes - 1)
    return float(np.max(np.abs(outer._eval(probes) - inner._eval(probes))))


def marginalize(f, radius, nodes, tol=1e-8, probes=(-1.0, 0.0, 1.0)):
    """``x -> int_{[-R,R]^{d-1}} f(x_1, y) dy`` by tensor trapezoid rule with ``nodes`` per axis.

    Integrability is checked by comparing against the doubled radius at a few
    ``x_1`` values; a difference above ``tol`` raises TailMassTooLarge.
    """
    if radius <= 0 or nodes < 2:
        raise ValueError("need radius > 0 and nodes >= 2")
    d = f.dim
    P = np.zeros((len(probes), d))
    P[:, 0] = probes
    if d > 1:
        tail = _tail_estimate(f, radius, nodes, P)
        if tail > tol:
            raise TailMassTooLarge(f"integrand mass outside radius {radius} is about {tail:.3e}", tail)
    return Marginal(f, float(radius), int(nodes))


def squeeze_conjugation(fbar, eps):
    """``A_eps^{-1} fbar(A_eps x)`` with ``A_eps = diag(1, 1/eps, ..., 1/eps)``."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    d = fbar.dim
    diag = np.full(d, 1.0 / eps)
    diag[0] = 1.0
    return Conjugated(np.diag(1.0 / diag), np.diag(diag), np.zeros(d), fbar)


def squeeze_matrix(d, eps):
    diag = np.full(d, 1.0 / eps)
    diag[0] = 1.0
    return np.diag(diag)


_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def simple_aff_expansion(S, A, b):
    """``S ReLU(A x + b)`` as ``sum_ij s_ij f(P E_ij (A x + b))`` with ``f`` the permuted ReLU.

    Every term is a scalar multiple of ``f(W x + c)``, i.e. a member of the
    affine-conjugate family of ``f``.
    """
    S = np.asarray(S, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if S.shape != (2, 2) or A.shape != (2, 2) or b.shape != (2,):
        raise DimensionMismatch("simple_aff_expansion works in d = 2")
    f = Named("permute_relu")
    terms = []
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = 1.0
            M = _SWAP @ E
            terms.append((S[i, j], Conjugated(np.eye(2), M @ A, M @ b, f)))
    return Sum(terms)
