import numpy as np

from flowcap.fields import (
    COS, QUADRATIC, SIN, Affine, Conjugated, Named, Separable, Sum, gaussian, leaky_relu, power, relu_field,
    softplus,
)


def smooth_zoo(rng, d=2):
    """One field of every kind with an everywhere-smooth analytic Jacobian."""
    A = rng.normal(size=(d, d))
    W = rng.normal(size=(d, d))
    zoo = {
        "affine": Affine(A, rng.normal(size=d)),
        "softplus": Separable(softplus(2.5), dim=d),
        "sin": Separable(SIN, dim=d),
        "cos": Separable(COS, dim=d, mask=[1] + [0] * (d - 1)),
        "power3": Separable(power(3), dim=d),
        "gaussian": Separable(gaussian(0.3, 0.8), dim=d),
        "quadratic": Separable(QUADRATIC, dim=d),
        "conjugated": Conjugated(A, W, rng.normal(size=d), Separable(SIN, dim=d)),
        "sum": Sum([(0.7, Affine(A)), (-1.3, Separable(softplus(1.0), dim=d))]),
        "gauss": Named("gauss", d),
    }
    if d == 2:
        zoo["sinsum"] = Named("sinsum")
    return zoo


def kinked_zoo(rng, d=2):
    """Kinds with kinks (ReLU family); evaluate away from the kink set."""
    zoo = {
        "relu": relu_field(d),
        "leaky": Separable(leaky_relu(0.3), dim=d),
        "conj_relu": Conjugated(rng.normal(size=(d, d)), np.eye(d), np.zeros(d), relu_field(d)),
    }
    if d == 2:
        zoo["permute_relu"] = Named("permute_relu")
    return zoo


def off_kink_points(rng, m, d, margin=1e-3, low=-3.0, high=3.0):
    X = rng.uniform(low, high, (m, d))
    X[np.abs(X) < margin] += 2 * margin
    return X
