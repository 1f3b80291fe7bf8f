"""Controlled path-dependent SDEs: simulation, value functions, and verification."""
from .errors import (DivergenceError, EvaluationError, InvalidConfigError, InvalidInputError, InvalidSpecError,
                     PathHJBError, ResourceError, UnsupportedFieldError)
from .families import build_spec, demo_spec, fault_spec, integral_spec, random_bounded_spec, tree_spec
from .fields import RandomField, catalog, crosscheck_suite, estimate_decomposition, estimate_dw_grad, estimate_grad_dw
from .model import (ModelSpec, RandomnessContext, check_lipschitz, check_superparabolic, classical_bounds,
                    generator, hamiltonian)
from .path_space import (DiscretePath, HolderClassParams, TimeGrid, d0, first_holder_exit, holder_seminorm,
                         horizontal_extend, in_holder_ball, vertical_perturb)
from .simulate import ControlPolicy, NoiseBundle, SimResult, moment_report, sample_noise, simulate
from .value import (FeatureSpec, ValueSurface, build_tree, cost_mc, dpp_residual, enumerate_strategies, lsmc_value,
                    tree_backward_induction)
from .verify import CheckReport, classical_residual, ito_residual, kolmogorov_check, run_suite

__version__ = "0.1.0"
