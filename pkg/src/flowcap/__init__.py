"""Flow maps of control families: construction, composition, schemes and interpolation."""
from ._backend import BACKEND
from .errors import *  # noqa: F401,F403
from .fields import (
    Activation, Affine, Box, Conjugated, Marginal, Named, Separable, Sum, VectorField,
    constant, difference_field, divergence, eval_field, field_from_dict, jacobian, lie_bracket,
    lipschitz_estimate, named, negate, relu_field, slice_nonlinearity_test,
)
from .flows import (
    Disk, FlowProgram, IntegratorConfig, Leg, apply, conjugated_flow, flow_affine, flow_map,
    flow_mobius_1d, flow_numeric, flow_relu, invert, jacobian_det_along_flow, scaled_shift_flow,
    volume_comparison,
)
from .schemes import (
    ConvergenceReport, GronwallBound, commutator_scheme, fit_convergence, gronwall_bound, lie_trotter,
)

__version__ = "0.1.0"
