"""Data preparation, training dispatch and evaluation for one seed of a run."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .algorithms import TrainConfig, TrainResult, map_train, ohsmc_train, posterior_hmc, sgsmc_train, smc_train
from .datasets import Dataset, load_csv, make_crescent_data, make_moons_data, make_regression_data, regression_function
from .kernels import HMC
from .metrics import PredictiveEnsemble, accuracy, ece, nlpd, rmse
from .models import CrescentModel, PBNNModel
from .nn import LikelihoodKind
from .particles import Ensemble, resample

CRESCENT_PSI_INIT = 0.1


def make_data(cfg, seed) -> Dataset:
    if cfg.experiment == "crescent":
        return make_crescent_data(cfg.psi_true, cfg.phi_true, cfg.n_data, seed)
    if cfg.experiment == "regression":
        return make_regression_data(cfg.n_per_split, seed)
    if cfg.experiment == "moons":
        return make_moons_data(cfg.n_per_split, cfg.noise_std, seed)
    return load_csv(cfg.csv_path, cfg.target_columns, cfg.label_mode, shuffle_seed=seed)


def make_model(cfg, data: Dataset, n_workers=1):
    train = data.train
    if cfg.experiment == "crescent":
        return CrescentModel(train.y[:, 0])
    return PBNNModel(cfg.network, cfg.likelihood, train.x, train.y, n_workers=n_workers)


def initial_psi(cfg, model, seed):
    if cfg.psi_init is not None:
        return np.asarray(cfg.psi_init, dtype=float)
    if cfg.experiment == "crescent":
        return np.array([CRESCENT_PSI_INIT])
    return nn.init_params(cfg.network, seed).psi


def initial_phi(cfg, model):
    """Starting point for point estimates and HMC chains: configured, else the prior mean."""
    if cfg.phi_init is not None:
        return np.asarray(cfg.phi_init, dtype=float)
    return model.prior.mean.copy()


@dataclass
class Fit:
    psi: np.ndarray
    ensemble: Ensemble
    result: TrainResult


def train(model, algorithm: str, psi0, config: TrainConfig, seed, phi0=None, hmc: HMC | None = None,
          hmc_samples=1000, hmc_burn=2000, validate=None, record_psi=False, on_record=None) -> Fit:
    """Run ``algorithm`` (``smc``, ``sgsmc``, ``ohsmc``, ``map``, ``map_hmc`` or
    ``sgsmc_hmc``) and return the estimate of ``psi`` with a posterior ensemble.

    The ``*_hmc`` pipelines replace the trainer's ensemble by HMC draws at the
    learnt ``psi``.
    """
    algorithm = algorithm.lower()
    base = algorithm[:-4] if algorithm.endswith("_hmc") else algorithm
    kwargs = dict(seed=seed, validate=validate, record_psi=record_psi, on_record=on_record)
    if base == "smc":
        res = smc_train(model, psi0, config, **kwargs)
    elif base == "sgsmc":
        res = sgsmc_train(model, psi0, config, **kwargs)
    elif base == "ohsmc":
        res = ohsmc_train(model, psi0, config, **kwargs)
    elif base == "map":
        res = map_train(model, psi0, config, phi0=phi0, **kwargs)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    ens = res.ensemble
    if algorithm != base:
        if base == "map":
            init = res.phi
        else:
            init = ens.weights @ ens.positions
        # separate stream so the HMC stage does not perturb the trainer's draws
        draws = posterior_hmc(model, res.psi, hmc, hmc_samples, hmc_burn,
                              seed=np.random.SeedSequence([int(seed or 0), 1]), init=init)
        ens = Ensemble.uniform(draws)
    return Fit(res.psi, ens, res)


def evaluation_ensemble(ens: Ensemble, n_particles: int, seed) -> Ensemble:
    """Resample to ``n_particles`` when the ensemble has a different size (and more than one member)."""
    if ens.n_particles == n_particles or ens.n_particles == 1:
        return ens
    rng = np.random.default_rng(np.random.SeedSequence([int(seed or 0), 2]))
    return resample(ens, "systematic", rng, n_particles)


def predictive(model: PBNNModel, psi, ens: Ensemble, x) -> PredictiveEnsemble:
    return PredictiveEnsemble(model.predict(psi, ens.positions, x), ens.weights)


def score(lik, pe: PredictiveEnsemble, y, reference=None) -> dict:
    """Metrics for a held-out split: NLPD plus RMSE (regression) or ECE and accuracy."""
    lik = LikelihoodKind(lik)
    out = {"nlpd": nlpd(pe, y, lik)}
    if lik is LikelihoodKind.GAUSSIAN_UNIT_VAR:
        out["rmse"] = rmse(pe, y if reference is None else reference)
    else:
        out["ece"] = ece(pe, y)
        out["accuracy"] = accuracy(pe, y)
    return out


def run_seed(cfg, seed, on_record=None, n_workers=None) -> dict:
    """Train and evaluate one seed; returns metrics, the fitted state and records."""
    data = make_data(cfg, seed)
    model = make_model(cfg, data, cfg.n_workers if n_workers is None else n_workers)
    psi0 = initial_psi(cfg, model, seed)
    phi0 = initial_phi(cfg, model)
    validate = None
    val = data.validation
    if cfg.experiment != "crescent" and cfg.early_stopping and len(val) > 0:
        def validate(psi, ens):
            return nlpd(predictive(model, psi, ens, val.x), val.y, cfg.likelihood)
    fit = train(model, cfg.algorithm, psi0, cfg.train_config(), seed, phi0, cfg.hmc,
                cfg.hmc_samples, cfg.hmc_burn, validate, record_psi=True, on_record=on_record)
    metrics = {}
    if cfg.experiment == "crescent":
        psi_hat = float(fit.psi[0])
        metrics = {"psi_hat": psi_hat, "psi_error": abs(psi_hat - cfg.psi_true)}
    else:
        test = data.test
        ens = evaluation_ensemble(fit.ensemble, cfg.eval_particles, seed)
        ref = regression_function(test.x) if cfg.experiment == "regression" else None
        metrics = score(cfg.likelihood, predictive(model, fit.psi, ens, test.x), test.y, ref)
    return {"metrics": metrics, "fit": fit, "data": data}
