"""Training algorithms for partially stochastic networks.

Three particle trainers share the Fisher-identity gradient estimator:

* :func:`smc_train` runs a full-data SMC sweep per parameter update,
* :func:`sgsmc_train` runs a cold-started SMC sweep over a mini-batch,
* :func:`ohsmc_train` keeps one ensemble alive across updates and reweights
  it once per mini-batch.

:func:`map_train` is the joint point-estimate baseline and
:func:`posterior_hmc` samples ``phi`` at a fixed ``psi``.

All trainers ascend the log-likelihood and emit one record per update.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import optim
from .exceptions import NonFiniteError, WeightCollapseError
from .kernels import HMC, MRTH, LogTarget, RandomWalk, apply_kernel, hmc_sample
from .models import FkModel
from .particles import ALWAYS, Ensemble, ResamplePolicy, ess, maybe_resample, reweight

log = logging.getLogger(__name__)

# psi vectors up to this length are copied into every trace record
PSI_RECORD_MAX = 16


class BatchMode(str, enum.Enum):
    IID_UNIFORM = "iid_uniform"
    EPOCH_SHUFFLE = "epoch_shuffle"


@dataclass(frozen=True)
class BatchSchedule:
    """Mini-batch index generator over ``dataset_size`` observations.

    ``EPOCH_SHUFFLE`` visits a fresh permutation per epoch in consecutive
    blocks of ``batch_size`` (the last block may be shorter);
    ``IID_UNIFORM`` draws every index independently and uniformly.
    """

    mode: BatchMode
    batch_size: int
    dataset_size: int

    def __post_init__(self):
        object.__setattr__(self, "mode", BatchMode(self.mode))
        if not 1 <= self.batch_size <= self.dataset_size:
            raise ValueError(f"batch size must lie in [1, {self.dataset_size}], got {self.batch_size}")

    @property
    def batches_per_epoch(self) -> int:
        return -(-self.dataset_size // self.batch_size)

    def epoch(self, rng) -> list:
        N, M = self.dataset_size, self.batch_size
        if self.mode is BatchMode.IID_UNIFORM:
            return [rng.integers(0, N, size=M) for _ in range(self.batches_per_epoch)]
        perm = rng.permutation(N)
        return [perm[s:s + M] for s in range(0, N, M)]


@dataclass
class TrainConfig:
    """Settings shared by the trainers.

    ``epochs`` counts passes over the data; for :func:`smc_train` one epoch is
    one update. ``n_iterations``, when set, caps the number of updates.
    """

    n_particles: int = 1000
    batch_size: int = 20
    epochs: int = 200
    n_iterations: Optional[int] = None
    kernel: object = field(default_factory=lambda: RandomWalk(0.01))
    resample_policy: ResamplePolicy = ALWAYS
    resample_scheme: str = "stratified"
    optimizer: str = "adam"
    schedule: object = field(default_factory=lambda: optim.Constant(0.01))
    batch_mode: BatchMode = BatchMode.EPOCH_SHUFFLE

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        if self.epochs < 0 or (self.n_iterations is not None and self.n_iterations < 0):
            raise ValueError("epochs and n_iterations must be non-negative")
        self.resample_policy = ResamplePolicy.parse(self.resample_policy)
        self.batch_mode = BatchMode(self.batch_mode)


@dataclass
class TrainState:
    """Everything a trainer carries between updates."""

    psi: np.ndarray
    ensemble: Optional[Ensemble]
    optimizer_state: optim.OptState
    iteration: int
    rng: np.random.Generator
    rng_seed: object = None
    n_reinit: int = 0

    def __post_init__(self):
        if self.ensemble is not None and self.ensemble.positions.ndim != 2:
            raise ValueError("ensemble positions must be (J, d)")


@dataclass
class TrainResult:
    """Output of a training run.

    ``psi`` and ``ensemble`` are the best snapshot under the validation
    score when one was supplied, else the final ones.
    """

    psi: np.ndarray
    ensemble: Optional[Ensemble]
    records: list
    state: TrainState
    psi_trace: Optional[np.ndarray] = None
    best_iteration: Optional[int] = None
    best_score: Optional[float] = None
    phi: Optional[np.ndarray] = None


Validator = Callable[[np.ndarray, Ensemble], float]


def init_state(model: FkModel, psi0, config: TrainConfig, seed, ensemble: Ensemble | None = None) -> TrainState:
    psi0 = np.array(psi0, dtype=float).reshape(-1)
    if psi0.shape[0] != model.dim_psi:
        raise ValueError(f"psi0 has length {psi0.shape[0]}, model expects {model.dim_psi}")
    if ensemble is not None and ensemble.dim != model.dim_phi:
        raise ValueError("ensemble dimension does not match the model")
    opt = optim.make_optimizer(config.optimizer, config.schedule, psi0.shape[0])
    return TrainState(psi0, ensemble, opt, 0, np.random.default_rng(seed), seed)


# --- gradient estimation -----------------------------------------------------------

def fisher_gradient(e: Ensemble, grad_fn) -> np.ndarray:
    """``sum_j w_j grad_fn(phi_j)``; ``grad_fn`` maps ``(J, d)`` positions to ``(J, w)``."""
    G = np.atleast_2d(np.asarray(grad_fn(e.positions), dtype=float))
    if G.shape[0] != e.n_particles:
        raise ValueError(f"grad_fn returned {G.shape[0]} rows for {e.n_particles} particles")
    bad = ~np.all(np.isfinite(G), axis=1)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"non-finite gradient for particle {j}", particle=j)
    return e.weights @ G


def _prefix_target(model, psi, idx):
    def log_density(phi):
        return model.log_posterior(psi, phi, idx)

    def grad(phi):
        return model.grad_log_posterior(psi, phi, idx)

    return LogTarget(log_density, grad)


def smc_pass(model: FkModel, psi, idx, J: int, kernel, policy=ALWAYS, scheme="stratified", rng=None):
    """One SMC sweep over the observations ``idx`` in the given order.

    At step ``n`` the ensemble is (maybe) resampled, moved by ``kernel``
    targeting ``pi(phi) p(y_idx[:n] | phi; psi)``, then reweighted with
    ``p(y_idx[n] | phi; psi)``. Returns ``(ensemble, log_lik, grad)``, where
    ``log_lik`` sums the log-evidence increments and ``grad`` is the Fisher
    estimate of ``d log p(y_idx; psi) / d psi``.
    """
    rng = np.random.default_rng(rng)
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    psi = np.asarray(psi, dtype=float)
    ens = Ensemble.uniform(model.prior.sample(J, rng))
    for n in range(idx.shape[0]):
        ens, _ = maybe_resample(ens, policy, scheme, rng)
        pos = apply_kernel(kernel, ens.positions, rng, _prefix_target(model, psi, idx[:n]), model.prior)
        ens = ens.with_positions(pos)
        try:
            ens, _ = reweight(ens, model.log_potential(psi, pos, idx[n:n + 1]))
        except WeightCollapseError as err:
            raise WeightCollapseError(f"weights collapsed at step {n + 1}", step=n + 1) from err
    if idx.shape[0] == 0:
        return ens, 0.0, np.zeros(model.dim_psi)
    grad = model.expected_grad_psi(psi, ens.positions, ens.weights, idx)
    return ens, ens.log_evidence, grad


# --- single updates ----------------------------------------------------------------

def _record(state, ens, **extra):
    rec = {"iteration": state.iteration, **extra}
    if ens is not None:
        rec["ess"] = ess(ens)
    rec["psi_norm"] = float(np.linalg.norm(state.psi))
    if state.psi.shape[0] <= PSI_RECORD_MAX:
        rec["psi"] = state.psi.tolist()
    return rec


def _ascend(state: TrainState, grad) -> TrainState:
    opt, psi = optim.step(state.optimizer_state, state.psi, grad, state.iteration)
    return replace(state, psi=psi, optimizer_state=opt, iteration=state.iteration + 1)


def smc_step(model: FkModel, state: TrainState, config: TrainConfig):
    """Full-data SMC sweep in dataset order followed by one optimiser step."""
    idx = np.arange(model.n_data)
    ens, ll, g = smc_pass(model, state.psi, idx, config.n_particles, config.kernel,
                          config.resample_policy, config.resample_scheme, state.rng)
    new = _ascend(replace(state, ensemble=ens), g)
    return new, _record(state, ens, log_lik=ll)


def sgsmc_step(model: FkModel, state: TrainState, idx, config: TrainConfig):
    """Cold-started SMC sweep over the batch ``idx``; gradient scaled by ``N / M``."""
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    try:
        ens, ll, g = smc_pass(model, state.psi, idx, config.n_particles, config.kernel,
                              config.resample_policy, config.resample_scheme, state.rng)
    except WeightCollapseError as err:
        raise WeightCollapseError(f"weights collapsed in batch {state.iteration}: {err}",
                                  step=state.iteration) from err
    new = _ascend(replace(state, ensemble=ens), model.n_data / idx.shape[0] * g)
    return new, _record(state, ens, log_lik=ll)


def ohsmc_step(model: FkModel, state: TrainState, idx, config: TrainConfig):
    """Warm-started update: resample, move, reweight with the whole-batch
    potential, then ascend along ``N / M`` times the weighted gradient.

    A weight collapse restarts the ensemble from the prior and increments
    ``state.n_reinit``.
    """
    if isinstance(config.kernel, (MRTH, HMC)):
        raise ValueError("the open-horizon update takes a random-walk or OU move")
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    rng = state.rng
    ens = state.ensemble
    if ens is None:
        ens = Ensemble.uniform(model.prior.sample(config.n_particles, rng))
    ens, _ = maybe_resample(ens, config.resample_policy, config.resample_scheme, rng)
    ens = ens.with_positions(apply_kernel(config.kernel, ens.positions, rng, prior=model.prior))
    n_reinit = state.n_reinit
    try:
        ens, inc = reweight(ens, model.log_potential(state.psi, ens.positions, idx))
    except WeightCollapseError:
        n_reinit += 1
        log.warning("weights collapsed at iteration %d; restarting the ensemble from the prior",
                    state.iteration)
        ens = Ensemble.uniform(model.prior.sample(ens.n_particles, rng))
        ens, inc = reweight(ens, model.log_potential(state.psi, ens.positions, idx))
    g = model.expected_grad_psi(state.psi, ens.positions, ens.weights, idx)
    new = _ascend(replace(state, ensemble=ens, n_reinit=n_reinit), model.n_data / idx.shape[0] * g)
    return new, _record(state, ens, log_potential=inc)


# --- training loops ----------------------------------------------------------------

def _run(step_fn, model, state, config, validate, record_psi, on_record, per_epoch_batches):
    records = []
    trace = [state.psi.copy()] if record_psi else None
    best = (None, None, None, None)  # score, iteration, psi, ensemble
    limit = config.n_iterations
    for epoch in range(config.epochs):
        batches = per_epoch_batches(state.rng)
        for idx in batches:
            if limit is not None and state.iteration >= limit:
                break
            state, rec = step_fn(model, state, idx, config)
            rec["epoch"] = epoch
            records.append(rec)
            if trace is not None:
                trace.append(state.psi.copy())
            # the epoch's last record is held back so it can carry the validation score
            if on_record is not None and len(records) > 1 and records[-2]["epoch"] == epoch:
                on_record(records[-2])
        else:
            if validate is not None and records:
                score = float(validate(state.psi, state.ensemble))
                records[-1]["val_nlpd"] = score
                if best[0] is None or score < best[0]:
                    best = (score, state.iteration, state.psi.copy(), state.ensemble)
            if on_record is not None and records and records[-1]["epoch"] == epoch:
                on_record(records[-1])
            continue
        if on_record is not None and records and records[-1]["epoch"] == epoch:
            on_record(records[-1])
        break
    psi, ens = (state.psi, state.ensemble) if best[0] is None else (best[2], best[3])
    return TrainResult(psi, ens, records, state,
                       None if trace is None else np.array(trace),
                       best[1], best[0])


def smc_train(model: FkModel, psi0, config: TrainConfig, seed=None, validate: Validator | None = None,
              record_psi=False, on_record=None) -> TrainResult:
    """Repeated full-data SMC sweeps from fresh prior draws, one update per epoch."""
    state = init_state(model, psi0, config, seed)
    return _run(lambda m, s, idx, c: smc_step(m, s, c), model, state, config, validate,
                record_psi, on_record, lambda rng: [None])


def sgsmc_train(model: FkModel, psi0, config: TrainConfig, seed=None, validate: Validator | None = None,
                record_psi=False, on_record=None) -> TrainResult:
    state = init_state(model, psi0, config, seed)
    sched = BatchSchedule(config.batch_mode, config.batch_size, model.n_data)
    return _run(sgsmc_step, model, state, config, validate, record_psi, on_record, sched.epoch)


def ohsmc_train(model: FkModel, psi0, config: TrainConfig, seed=None, validate: Validator | None = None,
                record_psi=False, on_record=None, ensemble: Ensemble | None = None) -> TrainResult:
    state = init_state(model, psi0, config, seed, ensemble)
    if state.ensemble is None:
        state.ensemble = Ensemble.uniform(model.prior.sample(config.n_particles, state.rng))
    sched = BatchSchedule(config.batch_mode, config.batch_size, model.n_data)
    return _run(ohsmc_step, model, state, config, validate, record_psi, on_record, sched.epoch)


def _map_value_and_grads(model, psi, phi, idx):
    if hasattr(model, "value_and_grads"):
        return model.value_and_grads(psi, phi, idx)
    ll = float(model.log_potential(psi, phi[None], idx)[0])
    return ll, model.grad_psi(psi, phi[None], idx)[0], model.grad_phi(psi, phi[None], idx)[0]


def map_train(model: FkModel, psi0, config: TrainConfig, seed=None, phi0=None,
              validate: Validator | None = None, record_psi=False, on_record=None) -> TrainResult:
    """Joint ascent on ``(N/M) log p(y_S | phi; psi) + log pi(phi)`` over mini-batches.

    ``phi0`` defaults to a prior draw. The result carries the point estimate
    as a one-particle ensemble and in ``phi``.
    """
    psi0 = np.array(psi0, dtype=float).reshape(-1)
    d = model.dim_phi
    rng = np.random.default_rng(seed)
    phi0 = model.prior.sample(1, rng)[0] if phi0 is None else np.array(phi0, dtype=float).reshape(d)
    theta_opt = optim.make_optimizer(config.optimizer, config.schedule, psi0.shape[0] + d)
    w = psi0.shape[0]
    sched = BatchSchedule(config.batch_mode, config.batch_size, model.n_data)
    holder = {"theta": np.concatenate([psi0, phi0]), "opt": theta_opt}
    state = TrainState(psi0, Ensemble.uniform(phi0[None]), theta_opt, 0, rng, seed)

    def step(m, s, idx, c):
        theta = holder["theta"]
        psi, phi = theta[:w], theta[w:]
        scale = m.n_data / idx.shape[0]
        ll, g_psi, g_phi = _map_value_and_grads(m, psi, phi, idx)
        obj = scale * ll + float(m.prior.logpdf(phi))
        if not np.isfinite(obj):
            raise FloatingPointError(f"MAP objective is not finite at iteration {s.iteration}")
        g = np.concatenate([scale * g_psi, scale * g_phi + m.prior.grad(phi)])
        opt, theta = optim.step(holder["opt"], theta, g, s.iteration)
        holder["theta"], holder["opt"] = theta, opt
        new = replace(s, psi=theta[:w].copy(), ensemble=Ensemble.uniform(theta[w:][None].copy()),
                      optimizer_state=opt, iteration=s.iteration + 1)
        return new, _record(s, None, objective=obj)

    res = _run(step, model, state, config, validate, record_psi, on_record, sched.epoch)
    res.phi = res.ensemble.positions[0].copy()
    return res


def posterior_hmc(model: FkModel, psi, spec: HMC | None = None, n_samples=1000, n_burn=2000,
                  seed=None, init=None, idx=None, return_info=False):
    """HMC draws from ``p(phi | y_idx; psi)`` (all observations by default).

    ``init`` defaults to the prior mean; pass ``(K, d)`` to run ``K`` chains.
    """
    spec = spec or HMC()
    idx = np.arange(model.n_data) if idx is None else np.asarray(idx, dtype=np.intp)
    psi = np.asarray(psi, dtype=float)
    target = _prefix_target(model, psi, idx)
    init = model.prior.mean.copy() if init is None else init
    return hmc_sample(target, init, n_samples, n_burn, spec, np.random.default_rng(seed), return_info)


TRAINERS = {
    "smc": smc_train,
    "sgsmc": sgsmc_train,
    "ohsmc": ohsmc_train,
    "map": map_train,
}
