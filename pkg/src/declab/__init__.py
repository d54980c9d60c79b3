"""declab: Decision-Estimation Coefficient computations, E2D simulation and hard families."""

from .dec import DecCertificate, dec_dual_lp, dec_lp, igw
from .e2d import ExperimentConfig, run_experiment
from .errors import DeclabError
from .families import family_lower_bound, make_family, verify_family
from .models import Model, ModelClass
from .probkit import DivergenceKind

__version__ = "0.1.0"

__all__ = [
    "DecCertificate", "DeclabError", "DivergenceKind", "ExperimentConfig", "Model", "ModelClass",
    "dec_dual_lp", "dec_lp", "family_lower_bound", "igw", "make_family", "run_experiment",
    "verify_family",
]
