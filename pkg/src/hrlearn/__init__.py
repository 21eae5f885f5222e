"""High-order regularized extreme learning machines and Q-learning on cart-pole."""

from . import cartpole, elmnet, errors, experiment, metrics, qagent, regcore
from .elmnet import Batch, ElmModel, init_elm, load_model, predict, save_model, train_hr
from .regcore import (
    Custom,
    EigComplement,
    EigShiftClamp,
    HrConfig,
    Mode,
    RegProblem,
    ResidualTarget,
    Scalar,
    hr_solve,
)

__all__ = [
    "Batch", "Custom", "EigComplement", "EigShiftClamp", "ElmModel", "HrConfig", "Mode",
    "RegProblem", "ResidualTarget", "Scalar", "cartpole", "elmnet", "errors", "experiment",
    "hr_solve", "init_elm", "load_model", "metrics", "predict", "qagent", "regcore",
    "save_model", "train_hr",
]
__version__ = "0.1.0"
