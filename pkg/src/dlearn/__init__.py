"""D-Learning family of individualized treatment rule estimators with variance stabilization."""
from .dataset import BINARY, MULTI, Dataset
from .dgp import SCENARIOS, LabeledDataset, ScenarioSpec, generate, scenario, truth_rule
from .errors import (DLearnError, InvalidConfig, InvalidInput, InvalidMode, MissingArm,
                     ParseError, SingularDesign, UndefinedValue)
from .learners import (ITRModel, decision_scores, fit_adlearning, fit_base, fit_dlearning,
                       fit_rdlearning, predict_rule)
from .linmod import LASSO_CV, NONE, Regularization
from .metrics import EvalResult, aggregate, ape, empirical_value, misclassification
from .stabilizer import ResidVarConfig, oracle_stabilize, squared_residuals, stabilize

__version__ = "0.1.0"
