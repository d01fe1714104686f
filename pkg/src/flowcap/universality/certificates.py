"""Sampled span certificates for lifted control families on point configurations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import DegenerateConfiguration, DimensionMismatch
from ..fields import Conjugated, VectorField

FAMILIES = ("aff", "diag")
SAMPLE_RANGE = 2.0


def family_rng(seed, index):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(index)]))


def sample_family_field(f, family, rng):
    """One field ``S f(W x + b)`` (aff) or ``D f(Lambda x + b)`` (diag), entries uniform in [-2, 2]."""
    d = f.dim
    r = SAMPLE_RANGE
    if family == "aff":
        S = rng.uniform(-r, r, (d, d))
        W = rng.uniform(-r, r, (d, d))
    elif family == "diag":
        S = np.diag(rng.uniform(-r, r, d))
        W = np.diag(rng.uniform(-r, r, d))
    else:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    b = rng.uniform(-r, r, d)
    return Conjugated(S, W, b, f)


def lifted_row(g, X):
    """``(g(x_1), ..., g(x_N))`` flattened point-major."""
    return g._eval(X).reshape(-1)


def check_configuration(X, tol=0.0):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    for i in range(N):
        for j in range(i + 1, N):
            if np.max(np.abs(X[i] - X[j])) <= tol:
                raise DegenerateConfiguration(f"points {i} and {j} coincide")
    return X


def rref(M, tol=1e-10):
    """Reduced row echelon form with partial pivoting."""
    R = np.array(M, dtype=float, copy=True)
    rows, cols = R.shape
    r = 0
    scale = max(1.0, float(np.max(np.abs(R)))) if R.size else 1.0
    for c in range(cols):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(R[r:, c])))
        if abs(R[p, c]) <= tol * scale:
            R[r:, c] = 0.0
            continue
        R[[r, p]] = R[[p, r]]
        R[r] /= R[r, c]
        others = np.arange(rows) != r
        R[others] -= np.outer(R[others, c], R[r])
        r += 1
    return R[:r]


@dataclass(frozen=True)
class SpanCertificate:
    configuration: np.ndarray
    family: str
    matrix: np.ndarray
    singular_values: np.ndarray
    threshold: float
    rank: int
    witness: Optional[np.ndarray]
    field: VectorField
    seed: int

    @property
    def full_rank(self):
        return self.rank == self.matrix.shape[1]

    @property
    def verdict(self):
        return "FullRank" if self.full_rank else "Deficient"

    @property
    def null_dim(self):
        return self.matrix.shape[1] - self.rank

    def witness_by_component(self):
        """Witness as a ``(d, N)`` array: row ``k`` holds the weights of component ``k``."""
        if self.witness is None:
            return None
        N, d = self.configuration.shape
        return self.witness.reshape(N, d).T

    def witness_residual(self, rows=None):
        """Max ``|c . row|`` over ``rows`` (default: the sampled matrix)."""
        if self.witness is None:
            raise ValueError("full-rank certificates carry no witness")
        M = self.matrix if rows is None else rows
        return float(np.max(np.abs(M @ self.witness)))

    def fresh_rows(self, count, seed=None):
        seed = self.seed + 1_000_003 if seed is None else seed
        X = self.configuration
        return np.stack([lifted_row(sample_family_field(self.field, self.family, family_rng(seed, i)), X)
                         for i in range(count)])

    def singular_values_csv(self):
        lines = ["index,sigma"]
        lines += [f"{i},{s:.12e}" for i, s in enumerate(self.singular_values)]
        return "\n".join(lines) + "\n"

    def to_dict(self):
        out = {"family": self.family, "verdict": self.verdict, "rank": self.rank,
               "size": int(self.matrix.shape[1]), "threshold": self.threshold,
               "samples": int(self.matrix.shape[0]), "seed": self.seed,
               "configuration": self.configuration.tolist(),
               "singular_values": self.singular_values.tolist()}
        if self.witness is not None:
            out["witness"] = self.witness_by_component().tolist()
        return out


def span_certificate(f, family, X, samples=None, seed=0, threshold=1e-10):
    """Sample lifted family fields at configuration ``X`` (shape ``(N, d)``) and decide full rank.

    FullRank when ``sigma_min > threshold * sigma_max``.  Otherwise the witness
    is a unit co-vector in the numerical null space, canonicalized as the first
    row of the reduced row echelon form of a null-space basis (so it does not
    depend on the SVD's choice of basis), with its first nonzero entry positive.
    """
    X = check_configuration(X)
    N, d = X.shape
    if d != f.dim:
        raise DimensionMismatch("configuration dimension differs from the field")
    dN = d * N
    count = 4 * dN if samples is None else int(samples)
    if count < dN:
        raise ValueError(f"need at least dN = {dN} samples, got {count}")
    rows = [lifted_row(sample_family_field(f, family, family_rng(seed, i)), X) for i in range(count)]
    M = np.stack(rows)
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    sv = np.zeros(dN)
    sv[: s.size] = s
    smax = sv[0] if sv.size else 0.0
    rank = int(np.sum(sv > threshold * smax)) if smax > 0 else 0
    witness = None
    if rank < dN:
        null = Vt[rank:]
        R = rref(null)
        c = R[0] if R.shape[0] else null[0]
        c = c / np.linalg.norm(c)
        nz = np.flatnonzero(np.abs(c) > 1e-12)
        if nz.size and c[nz[0]] < 0:
            c = -c
        witness = c
    return SpanCertificate(X, family, M, sv, float(threshold), rank, witness, f, int(seed))


def omega_configuration(N, d, rng, low=-2.0, high=2.0):
    """Configuration with every coordinate strictly increasing in the point index."""
    while True:
        X = np.sort(rng.uniform(low, high, (N, d)), axis=0)
        if N == 1 or np.all(np.diff(X, axis=0) > 1e-3):
            return X


def in_omega(X):
    X = np.atleast_2d(X)
    return bool(np.all(np.diff(X, axis=0) > 0))
