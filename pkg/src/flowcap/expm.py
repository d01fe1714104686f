"""Matrix exponential by scaling and squaring with a degree-13 Pade approximant."""
import numpy as np

_B13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152


def expm(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expm needs a square matrix")
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norm1 = np.max(np.sum(np.abs(A), axis=0))
    if norm1 == 0:
        return np.eye(n)
    s = 0
    if norm1 > _THETA13:
        s = int(np.ceil(np.log2(norm1 / _THETA13)))
    A = A / (2.0 ** s)
    b = _B13
    I = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    return R


def affine_propagator(A, b, t):
    """Return ``(M, v)`` with ``phi(x) = M x + v`` for the flow of ``x' = A x + b`` at time ``t``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b.size
    if not np.any(A):
        return np.eye(d), b * t
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d] = A * t
    aug[:d, d] = b * t
    E = expm(aug)
    return E[:d, :d], E[:d, d]
