"""Learning nonautonomous dynamics from snapshot pairs.

Inputs are parameterized locally in time, one DMD surrogate is fitted per
point of a Cartesian parameter grid, and predictions under new inputs
interpolate bases on the Grassmann manifold and operators on the manifold
of nonsingular matrices.
"""

from .dmd import LocalROM, ModelStore, RankPolicy, train
from .manifold import InterpolantSpec
from .observables import ObservableSpec, lift, unlift
from .online import Predictor, evaluate, predict
from .signals import InputSignal, LocalBasis, ParameterGrid, cartesian_grid
from .systems import TrainingSet, generate_training_set, get_system, integrate_reference

__version__ = "0.1.0"

__all__ = [
    "InputSignal",
    "InterpolantSpec",
    "LocalBasis",
    "LocalROM",
    "ModelStore",
    "ObservableSpec",
    "ParameterGrid",
    "Predictor",
    "RankPolicy",
    "TrainingSet",
    "cartesian_grid",
    "evaluate",
    "generate_training_set",
    "get_system",
    "integrate_reference",
    "lift",
    "predict",
    "train",
    "unlift",
]
