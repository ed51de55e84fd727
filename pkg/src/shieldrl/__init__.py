"""Safe policy optimization with learned dynamics and a conformal action shield.

The package combines four pieces that are useful separately and designed to
compose: a hidden-parameter continuous-control environment (:mod:`.env`), a
basis-function dynamics learner with online coefficient identification
(:mod:`.function_encoder`), an adaptive conformal calibrator for model error
(:mod:`.conformal`), and a safety-regularized actor-critic (:mod:`.sro`)
whose actions can be filtered through a predictive shield (:mod:`.shield`).
The :mod:`.harness` subpackage wires them into reproducible experiments.
"""

from . import conformal, env, function_encoder, harness, numerics, seeding, shield, sro

__version__ = "0.1.0"

__all__ = [
    "conformal",
    "env",
    "function_encoder",
    "harness",
    "numerics",
    "seeding",
    "shield",
    "sro",
    "__version__",
]
