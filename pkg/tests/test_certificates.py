import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowcap.errors import DegenerateConfiguration, DimensionMismatch
from flowcap.fields import SIN, Affine, Named, Separable, relu_field
from flowcap.universality.certificates import (
    family_rng, in_omega, lifted_row, omega_configuration, rref, sample_family_field, span_certificate,
)

SYMMETRIC = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])


def test_single_point_sin_full_rank():
    cert = span_certificate(Separable(SIN, dim=1), "diag", [[0.7]])
    assert cert.verdict == "FullRank"
    assert cert.rank == 1
    assert cert.witness is None


def test_sinsum_symmetric_deficient_witness():
    cert = span_certificate(Named("sinsum"), "diag", SYMMETRIC)
    assert cert.verdict == "Deficient"
    c = cert.witness_by_component()
    expect = np.array([[1.0, -1.0, 1.0, -1.0], [0.0, 0.0, 0.0, 0.0]]) / 2.0
    assert np.max(np.abs(c - expect)) <= 1e-6
    assert np.linalg.norm(cert.witness) == pytest.approx(1.0, abs=1e-15)


def test_deficient_witness_out_of_sample():
    cert = span_certificate(Named("sinsum"), "diag", SYMMETRIC)
    smax = cert.singular_values[0]
    assert cert.witness_residual() <= cert.threshold * smax
    assert cert.witness_residual(cert.fresh_rows(100)) <= cert.threshold * smax


@pytest.mark.parametrize("N", [3, 4, 5])
@pytest.mark.parametrize("seed", range(5))
def test_sinsum_omega_full_rank(N, seed):
    X = omega_configuration(N, 2, np.random.default_rng(100 * N + seed))
    assert in_omega(X)
    cert = span_certificate(Named("sinsum"), "diag", X, seed=seed)
    assert cert.verdict == "FullRank"
    assert cert.matrix.shape == (4 * 2 * N, 2 * N)


def test_aff_family_relu_full_rank():
    X = np.array([[0.0, 0.5], [1.0, -1.0], [-0.3, 0.2]])
    assert span_certificate(relu_field(2), "aff", X).full_rank


def test_linear_field_rank_deficient_lifted():
    X = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    cert = span_certificate(Affine(np.eye(2)), "diag", X)
    assert cert.verdict == "Deficient"
    assert cert.witness_residual(cert.fresh_rows(50)) <= 1e-10 * cert.singular_values[0]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_rank_monotone_in_samples(seed):
    X = np.random.default_rng(seed).uniform(-2, 2, (3, 2))
    ranks = [span_certificate(Named("sinsum"), "diag", X, samples=k, seed=seed).rank for k in (6, 8, 12, 24)]
    assert all(b >= a for a, b in zip(ranks, ranks[1:]))


def test_certificate_errors():
    with pytest.raises(DegenerateConfiguration):
        span_certificate(Named("sinsum"), "diag", [[0.0, 1.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        span_certificate(Named("sinsum"), "diag", SYMMETRIC, samples=3)
    with pytest.raises(DimensionMismatch):
        span_certificate(Named("sinsum"), "diag", [[0.0, 1.0, 2.0]])
    with pytest.raises(ValueError):
        span_certificate(Named("sinsum"), "full", SYMMETRIC)


def test_sampling_deterministic_and_index_keyed():
    f = Named("sinsum")
    a = sample_family_field(f, "aff", family_rng(3, 7))
    b = sample_family_field(f, "aff", family_rng(3, 7))
    assert a.to_dict() == b.to_dict()
    d = sample_family_field(f, "diag", family_rng(3, 8))
    assert np.count_nonzero(d.S - np.diag(np.diag(d.S))) == 0
    assert np.all(np.abs(d.W) <= 2.0) and np.all(np.abs(d.b) <= 2.0)


def test_lifted_row_point_major():
    X = np.array([[0.1, 0.2], [0.3, 0.4]])
    g = Affine(np.eye(2))
    assert np.array_equal(lifted_row(g, X), [0.1, 0.2, 0.3, 0.4])


def test_rref_canonical_under_basis_change():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(2, 5))
    M = rng.normal(size=(2, 2)) @ B
    assert np.allclose(rref(B), rref(M), atol=1e-12)


def test_singular_values_csv_and_dict():
    cert = span_certificate(Named("sinsum"), "diag", SYMMETRIC)
    lines = cert.singular_values_csv().splitlines()
    assert lines[0] == "index,sigma"
    assert len(lines) == 9
    doc = json.loads(json.dumps(cert.to_dict()))
    assert doc["verdict"] == "Deficient" and len(doc["witness"]) == 2


def test_omega_membership():
    assert in_omega(np.array([[0.0, 0.0], [1.0, 2.0]]))
    assert not in_omega(SYMMETRIC)
