"""Run configuration: INI-style files with named sections.

Values are Python literals (``[1, 20, 1]``, ``0.01``, ``'text'``); anything
that does not parse as a literal is kept as a bare string. A section named
``kernel.<algorithm>`` overrides ``kernel`` when that algorithm runs.
Overrides given as ``section.key=value`` take precedence over the file.
"""
from __future__ import annotations

import ast
import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import optim
from .exceptions import ConfigError
from .kernels import HMC, MRTH, parse_kernel, kernel_to_dict
from .nn import Activation, LikelihoodKind, NetworkSpec
from .particles import ResamplePolicy, Scheme
from .algorithms import BatchMode, TrainConfig

EXPERIMENTS = ("crescent", "regression", "moons", "csv")
ALGORITHMS = ("smc", "sgsmc", "ohsmc", "map", "map_hmc", "sgsmc_hmc")
LABEL_MODES = ("regression", "binary", "categorical")

# fields that change where or how fast a run executes but not its results
_RUNTIME_ONLY = ("output_dir", "n_workers", "jobs", "seeds")


@dataclass
class RunConfig:
    """Fully validated description of an experiment."""

    experiment: str
    algorithm: str = "ohsmc"
    seeds: list = field(default_factory=lambda: [0])
    # data
    n_per_split: int = 100
    noise_std: float = 0.3
    psi_true: float = 1.0
    phi_true: tuple = (0.0, 0.0)
    n_data: int = 100
    csv_path: str | None = None
    target_columns: list = field(default_factory=list)
    label_mode: str = "regression"
    # model
    network: NetworkSpec | None = None
    likelihood: str | None = None
    psi_init: list | None = None
    phi_init: list | None = None
    # training
    n_particles: int = 1000
    batch_size: int = 20
    epochs: int = 200
    n_iterations: int | None = None
    batch_mode: str = "epoch_shuffle"
    resample_policy: str = "always"
    resample_scheme: str = "stratified"
    early_stopping: bool = True
    optimizer: str = "adam"
    schedule: object = field(default_factory=lambda: optim.Constant(0.01))
    kernel: object = None
    hmc: HMC = field(default_factory=HMC)
    hmc_samples: int = 1000
    hmc_burn: int = 2000
    eval_particles: int = 1000
    # runtime
    output_dir: str = "runs"
    n_workers: int = 1
    jobs: int = 1

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            n_particles=self.n_particles, batch_size=self.batch_size, epochs=self.epochs,
            n_iterations=self.n_iterations, kernel=self.kernel,
            resample_policy=ResamplePolicy.parse(self.resample_policy),
            resample_scheme=self.resample_scheme, optimizer=self.optimizer,
            schedule=self.schedule, batch_mode=self.batch_mode)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("network", "schedule", "kernel", "hmc")}
        d["network"] = None if self.network is None else self.network.to_dict()
        d["schedule"] = schedule_to_dict(self.schedule)
        d["kernel"] = kernel_to_dict(self.kernel)
        d["hmc"] = kernel_to_dict(self.hmc)
        d["phi_true"] = list(self.phi_true)
        return d

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _RUNTIME_ONLY}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def schedule_to_dict(s) -> dict:
    if isinstance(s, optim.ExpDecay):
        return {"kind": "exp_decay", "lr0": s.lr0, "rate": s.rate, "period": s.period}
    return {"kind": "constant", "lr": s.lr}


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def read_sections(path) -> dict:
    """Parse a config file into ``{section: {key: value}}``."""
    parser = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
                                       interpolation=None)
    parser.optionxform = str
    try:
        with Path(path).open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found") from None
    except configparser.Error as err:
        raise ConfigError(str(path), f"cannot parse: {err}") from None
    return {s: {k: _literal(v) for k, v in parser[s].items()} for s in parser.sections()}


def apply_overrides(sections: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; the section is everything before the last dot."""
    out = {s: dict(v) for s, v in sections.items()}
    for item in overrides or ():
        lhs, sep, rhs = item.partition("=")
        section, dot, key = lhs.strip().rpartition(".")
        if not sep or not dot or not key:
            raise ConfigError(lhs.strip() or item, "override must look like section.key=value")
        out.setdefault(section, {})[key] = _literal(rhs)
    return out


_KNOWN = {
    "experiment": {"name", "seeds", "n_per_split", "noise_std", "psi_true", "phi_true", "n_data",
                   "csv_path", "target_columns", "label_mode"},
    "algorithm": {"name", "n_particles", "batch_size", "epochs", "n_iterations", "batch_mode",
                  "resample_policy", "resample_scheme", "early_stopping", "psi_init", "phi_init",
                  "eval_particles"},
    "network": {"sizes", "activation", "output_activation", "stochastic_layer", "likelihood",
                "gelu_approximate"},
    "optimizer": {"name", "schedule", "lr", "lr0", "rate", "period"},
    "kernel": None,
    "hmc": {"n_leapfrog", "step_size", "n_samples", "n_burn"},
    "run": {"output_dir", "n_workers", "jobs"},
}


def _get(sec, name, key, typ, default=None, required=False):
    path = f"{name}.{key}"
    if key not in sec:
        if required:
            raise ConfigError(path, "required field is missing")
        return default
    v = sec[key]
    try:
        if typ is int:
            if isinstance(v, bool) or float(v) != int(v):
                raise ValueError
            return int(v)
        if typ is float:
            if isinstance(v, bool):
                raise ValueError
            return float(v)
        if typ is bool:
            if not isinstance(v, bool):
                raise ValueError
            return v
        if typ is list:
            if isinstance(v, (int, float)):
                return [v]
            return list(v)
        return str(v)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected {typ.__name__}, got {v!r}") from None


def _choice(value, options, path):
    v = str(value).lower()
    if v not in options:
        raise ConfigError(path, f"must be one of {', '.join(options)}; got {value!r}")
    return v


def build_config(sections: dict) -> RunConfig:
    """Validate parsed sections into a :class:`RunConfig`; errors name the field."""
    for s, keys in sections.items():
        base = s.split(".", 1)[0]
        if base not in _KNOWN:
            raise ConfigError(s, "unknown section")
        allowed = _KNOWN[base]
        if allowed is not None:
            for k in keys:
                if k not in allowed:
                    raise ConfigError(f"{s}.{k}", "unknown field")
    ex = sections.get("experiment", {})
    al = sections.get("algorithm", {})
    rn = sections.get("run", {})
    experiment = _choice(_get(ex, "experiment", "name", str, required=True), EXPERIMENTS, "experiment.name")
    algorithm = _choice(_get(al, "algorithm", "name", str, "ohsmc"), ALGORITHMS, "algorithm.name")
    cfg = RunConfig(experiment=experiment, algorithm=algorithm)

    seeds = _get(ex, "experiment", "seeds", list, [0])
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        raise ConfigError("experiment.seeds", "must be a non-empty list of non-negative integers")
    cfg.seeds = [int(s) for s in seeds]
    cfg.n_per_split = _get(ex, "experiment", "n_per_split", int, cfg.n_per_split)
    cfg.noise_std = _get(ex, "experiment", "noise_std", float, cfg.noise_std)
    cfg.psi_true = _get(ex, "experiment", "psi_true", float, cfg.psi_true)
    cfg.n_data = _get(ex, "experiment", "n_data", int, cfg.n_data)
    phi_true = _get(ex, "experiment", "phi_true", list, list(cfg.phi_true))
    if len(phi_true) != 2:
        raise ConfigError("experiment.phi_true", "needs two entries")
    cfg.phi_true = tuple(float(v) for v in phi_true)
    if cfg.n_per_split < 1:
        raise ConfigError("experiment.n_per_split", "must be positive")
    if cfg.n_data < 1:
        raise ConfigError("experiment.n_data", "must be positive")
    if cfg.noise_std < 0:
        raise ConfigError("experiment.noise_std", "must be non-negative")
    if experiment == "crescent" and cfg.psi_true == 0:
        raise ConfigError("experiment.psi_true", "the crescent model is undefined at 0")
    if experiment == "csv":
        cfg.csv_path = _get(ex, "experiment", "csv_path", str, required=True)
        cfg.target_columns = _get(ex, "experiment", "target_columns", list, required=True)
        if not cfg.target_columns:
            raise ConfigError("experiment.target_columns", "needs at least one column")
        cfg.label_mode = _choice(_get(ex, "experiment", "label_mode", str, "regression"), LABEL_MODES,
                                 "experiment.label_mode")

    cfg.n_particles = _get(al, "algorithm", "n_particles", int, cfg.n_particles)
    cfg.batch_size = _get(al, "algorithm", "batch_size", int, cfg.batch_size)
    cfg.epochs = _get(al, "algorithm", "epochs", int, cfg.epochs)
    cfg.n_iterations = _get(al, "algorithm", "n_iterations", int, None)
    cfg.eval_particles = _get(al, "algorithm", "eval_particles", int, cfg.eval_particles)
    for key in ("n_particles", "batch_size", "eval_particles"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"algorithm.{key}", "must be positive")
    if cfg.epochs < 0:
        raise ConfigError("algorithm.epochs", "must be non-negative")
    if cfg.n_iterations is not None and cfg.n_iterations < 0:
        raise ConfigError("algorithm.n_iterations", "must be non-negative")
    cfg.batch_mode = _choice(_get(al, "algorithm", "batch_mode", str, cfg.batch_mode),
                             tuple(m.value for m in BatchMode), "algorithm.batch_mode")
    try:
        cfg.resample_policy = str(_get(al, "algorithm", "resample_policy", str, "always")).lower()
        ResamplePolicy.parse(cfg.resample_policy)
    except ValueError as err:
        raise ConfigError("algorithm.resample_policy", str(err)) from None
    cfg.resample_scheme = _choice(_get(al, "algorithm", "resample_scheme", str, cfg.resample_scheme),
                                  tuple(s.value for s in Scheme), "algorithm.resample_scheme")
    cfg.early_stopping = _get(al, "algorithm", "early_stopping", bool, True)
    cfg.psi_init = _get(al, "algorithm", "psi_init", list, None)
    cfg.phi_init = _get(al, "algorithm", "phi_init", list, None)

    cfg.network, cfg.likelihood = _build_network(sections, experiment)
    if experiment == "crescent":
        n_psi, n_phi = 1, 2
    else:
        n_psi, n_phi = cfg.network.dim_psi, cfg.network.dim_phi
    if cfg.psi_init is not None and len(cfg.psi_init) != n_psi:
        raise ConfigError("algorithm.psi_init", f"needs {n_psi} entries, got {len(cfg.psi_init)}")
    if cfg.phi_init is not None and len(cfg.phi_init) != n_phi:
        raise ConfigError("algorithm.phi_init", f"needs {n_phi} entries, got {len(cfg.phi_init)}")

    cfg.optimizer, cfg.schedule = _build_optimizer(sections.get("optimizer", {}))
    cfg.kernel = _build_kernel(sections, algorithm)
    hm = sections.get("hmc", {})
    try:
        cfg.hmc = HMC(_get(hm, "hmc", "n_leapfrog", int, 100), _get(hm, "hmc", "step_size", float, 0.01))
    except ValueError as err:
        raise ConfigError("hmc", str(err)) from None
    cfg.hmc_samples = _get(hm, "hmc", "n_samples", int, cfg.hmc_samples)
    cfg.hmc_burn = _get(hm, "hmc", "n_burn", int, cfg.hmc_burn)
    if cfg.hmc_samples < 1 or cfg.hmc_burn < 0:
        raise ConfigError("hmc.n_samples", "needs n_samples >= 1 and n_burn >= 0")

    cfg.output_dir = _get(rn, "run", "output_dir", str, cfg.output_dir)
    cfg.n_workers = _get(rn, "run", "n_workers", int, 1)
    cfg.jobs = _get(rn, "run", "jobs", int, 1)
    if cfg.n_workers < 1:
        raise ConfigError("run.n_workers", "must be positive")
    if cfg.jobs < 1:
        raise ConfigError("run.jobs", "must be positive")
    return cfg


def _build_network(sections, experiment):
    net = sections.get("network")
    if experiment == "crescent":
        if net:
            raise ConfigError("network", "the crescent experiment takes no network")
        return None, None
    if not net:
        raise ConfigError("network", "required for this experiment")
    sizes = _get(net, "network", "sizes", list, required=True)
    if len(sizes) < 2 or not all(isinstance(s, int) and s >= 1 for s in sizes):
        raise ConfigError("network.sizes", "needs at least two positive integers")
    try:
        act = Activation(str(_get(net, "network", "activation", str, "GELU")).upper())
    except ValueError:
        raise ConfigError("network.activation", "unknown activation") from None
    try:
        out_act = Activation(str(_get(net, "network", "output_activation", str, "NONE")).upper())
    except ValueError:
        raise ConfigError("network.output_activation", "unknown activation") from None
    layer = _get(net, "network", "stochastic_layer", int, required=True)
    try:
        spec = NetworkSpec.mlp(sizes, act, out_act, layer,
                               gelu_approximate=_get(net, "network", "gelu_approximate", bool, True))
    except ValueError as err:
        raise ConfigError("network", str(err)) from None
    default_lik = {Activation.SIGMOID: "BERNOULLI_FROM_PROB",
                   Activation.SOFTMAX: "CATEGORICAL_FROM_PROBS"}.get(out_act, "GAUSSIAN_UNIT_VAR")
    try:
        lik = LikelihoodKind(str(_get(net, "network", "likelihood", str, default_lik)).upper())
    except ValueError:
        raise ConfigError("network.likelihood", "unknown likelihood") from None
    return spec, lik.value


def _build_optimizer(sec):
    name = _choice(_get(sec, "optimizer", "name", str, "adam"), ("adam", "sgd"), "optimizer.name")
    kind = _choice(_get(sec, "optimizer", "schedule", str, "constant"), ("constant", "exp_decay"),
                   "optimizer.schedule")
    if kind == "constant":
        lr = _get(sec, "optimizer", "lr", float, 0.01)
        if lr < 0:
            raise ConfigError("optimizer.lr", "must be non-negative")
        return name, optim.Constant(lr)
    lr0 = _get(sec, "optimizer", "lr0", float, required=True)
    rate = _get(sec, "optimizer", "rate", float, required=True)
    period = _get(sec, "optimizer", "period", float, required=True)
    if lr0 < 0 or rate <= 0 or period <= 0:
        raise ConfigError("optimizer", "exp_decay needs lr0 >= 0, rate > 0 and period > 0")
    return name, optim.ExpDecay(lr0, rate, period)


def _build_kernel(sections, algorithm):
    base = algorithm.split("_")[0] if algorithm.endswith("_hmc") else algorithm
    name = f"kernel.{base}" if f"kernel.{base}" in sections else "kernel"
    sec = dict(sections.get(name, {}))
    if not sec:
        sec = {"kind": "mrth"} if base in ("smc", "sgsmc") else {"kind": "random_walk"}
    sec.setdefault("kind", "random_walk")
    try:
        kernel = parse_kernel(sec)
    except (TypeError, ValueError) as err:
        raise ConfigError(name, str(err)) from None
    if isinstance(kernel, HMC):
        raise ConfigError(f"{name}.kind", "HMC is a posterior sampler, not an SMC move")
    if base == "ohsmc" and isinstance(kernel, MRTH):
        raise ConfigError(f"{name}.kind", "ohsmc takes a random_walk or ou move")
    return kernel


def load_config(path, overrides=()) -> RunConfig:
    return build_config(apply_overrides(read_sections(path), overrides))
