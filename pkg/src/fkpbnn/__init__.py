"""Particle-based training of partially stochastic neural networks.

The deterministic parameters ``psi`` are fitted by stochastic gradient
ascent on the marginal log-likelihood, with gradients obtained from a
weighted particle approximation of the posterior over the stochastic
layer ``phi``.
"""
from .algorithms import (
    BatchMode, BatchSchedule, TrainConfig, TrainResult, TrainState, fisher_gradient, map_train,
    ohsmc_step, ohsmc_train, posterior_hmc, sgsmc_step, sgsmc_train, smc_pass, smc_step, smc_train,
)
from .datasets import Dataset, load_csv, make_crescent_data, make_moons_data, make_regression_data
from .estimators import PBNNClassifier, PBNNRegressor
from .exceptions import (
    ConfigError, CSVFormatError, KernelTargetError, NonFiniteError, SingularParameterError,
    WeightCollapseError,
)
from .kernels import HMC, MRTH, OU, RandomWalk
from .metrics import PredictiveEnsemble, accuracy, ece, nlpd, rmse
from .models import CrescentModel, GaussianPrior, LinearGaussianModel, PBNNModel
from .nn import Activation, LikelihoodKind, NetworkSpec, ParamSplit
from .particles import Ensemble, ResamplePolicy, Scheme

__version__ = "0.1.0"
