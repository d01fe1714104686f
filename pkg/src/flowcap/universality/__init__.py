"""Approximation builders, span certificates and the interpolation engine."""
from .approx import (
    broadcast_coordinate, marginalize, relu_from_softplus, relu_from_sums, simple_aff_expansion,
    single_axis, squeeze_conjugation,
)
from .certificates import SpanCertificate, span_certificate
from .interpolation import (
    CanonicalConfig, Family, InterpolationProblem, interpolate, local_uip_relu, span_steer,
    steer_to_canonical,
)
