"""Experiment configuration: TOML in, validated dataclasses out.

Every field has a default, and the defaults are the reference hyperparameters
(kappa = rho = lambda = 0.5, 128 bins, detection at 512 tokens, groups of 16,
20 cold-start steps), so a file containing only ``experiment = "..."`` runs
the standard setting.
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields

from rollprune.errors import ConfigError, DomainError
from rollprune.sim import EngineConfig
from rollprune.survival import SurvivalPolicy
from rollprune.workload import WorkloadConfig, validate_workload

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXPERIMENTS = ("calibration", "theory", "train_sim", "kappa_sweep", "tts")


@dataclass
class PolicyParams:
    kappa: float = 0.5
    rho: float = 0.5
    lambda_: float = 0.5
    p_min: float = 0.05
    p_max: float = 0.95
    min_survivors: int = 2
    cold_start_steps: int = 20
    steering: str = "adaptive"

    def build(self) -> SurvivalPolicy:
        return SurvivalPolicy(kappa=self.kappa, rho=self.rho, lam=self.lambda_,
                              p_min=self.p_min, p_max=self.p_max,
                              min_survivors=self.min_survivors,
                              cold_start_steps=self.cold_start_steps,
                              steering=self.steering)


@dataclass
class CalibratorParams:
    B: int = 128
    alpha: float = 1.0
    buffer_capacity: int = 8192
    shared_buffer: bool = True


@dataclass
class TrainParams:
    steps: int = 220
    prompts_per_step: int = 16
    learning_rate: float = 0.0
    arms: list = field(default_factory=lambda: ["none", "random", "arrol"])


@dataclass
class TheoryParams:
    G: int = 17
    epsilon: float = 0.05
    delta: float = 0.05
    rho: float = 0.5
    trials: int = 10_000
    lemma_instances: int = 1000
    max_G: int = 16
    hoeffding_G: list = field(default_factory=lambda: [9, 17])
    hoeffding_t: list = field(default_factory=lambda: [0.1, 0.2, 0.34, 0.5])
    hoeffding_trials: int = 100_000


@dataclass
class CalibrationParams:
    observations: int = 10_000


@dataclass
class SweepParams:
    kappas: list = field(default_factory=lambda: [1.0, 0.75, 0.5, 0.25])


@dataclass
class TTSParams:
    questions: int = 1000
    k: int = 32
    quality_auc: float = 0.8
    confidence_auc: float = 0.65
    num_distractors: int = 3
    resamples: int = 1000
    candidates: str = ""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    output_dir: str = ""
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    policy: PolicyParams = field(default_factory=PolicyParams)
    engine: EngineConfig = field(default_factory=EngineConfig)
    calibrator: CalibratorParams = field(default_factory=CalibratorParams)
    train: TrainParams = field(default_factory=TrainParams)
    theory: TheoryParams = field(default_factory=TheoryParams)
    calibration: CalibrationParams = field(default_factory=CalibrationParams)
    sweep: SweepParams = field(default_factory=SweepParams)
    tts: TTSParams = field(default_factory=TTSParams)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"]["lambda"] = d["policy"].pop("lambda_")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


SECTIONS = {
    "policy": PolicyParams,
    "engine": EngineConfig,
    "calibrator": CalibratorParams,
    "train": TrainParams,
    "theory": TheoryParams,
    "calibration": CalibrationParams,
    "sweep": SweepParams,
    "tts": TTSParams,
}


def _build_section(name, cls, raw, problems):
    if not isinstance(raw, dict):
        problems[name] = "must be a table"
        return cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        attr = "lambda_" if (cls is PolicyParams and key == "lambda") else key
        if attr not in known:
            problems[f"{name}.{key}"] = "unknown field"
            continue
        kwargs[attr] = value
    try:
        return cls(**kwargs)
    except (DomainError, TypeError, ValueError) as exc:
        problems[name] = str(exc)
        return cls()


def _build_workload(raw, problems):
    if not isinstance(raw, dict):
        problems["workload"] = "must be a table"
        return WorkloadConfig()
    known = {f.name for f in fields(WorkloadConfig)}
    for key in raw:
        if key not in known:
            problems[f"workload.{key}"] = "unknown field"
    base = WorkloadConfig()
    kwargs = {k: v for k, v in raw.items() if k in known}
    for nested in ("difficulty", "length", "score_model"):
        if not isinstance(kwargs.get(nested, {}), dict):
            problems[f"workload.{nested}"] = "must be a table"
            kwargs.pop(nested)
        elif nested in kwargs:
            default = getattr(base, nested)
            user = kwargs[nested]
            # same kind (or none given): fill unspecified parameters from the default
            if user.get("kind", default["kind"]) == default["kind"]:
                kwargs[nested] = {**default, **user}
    cfg = WorkloadConfig.__new__(WorkloadConfig)
    for f in fields(WorkloadConfig):
        setattr(cfg, f.name, kwargs.get(f.name, getattr(base, f.name)))
    for k, v in validate_workload(cfg).items():
        problems[f"workload.{k}"] = v
    return cfg


def from_dict(raw: dict) -> ExperimentConfig:
    problems: dict = {}
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        problems["experiment"] = f"must be one of {EXPERIMENTS}, got {exp!r}"
    top_known = {"experiment", "seed", "output_dir", "workload", *SECTIONS}
    for key in raw:
        if key not in top_known:
            problems[key] = "unknown field"
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        problems["seed"] = "must be a nonnegative integer"
    out = raw.get("output_dir", "")
    if not isinstance(out, str):
        problems["output_dir"] = "must be a string"

    sections = {name: _build_section(name, cls, raw.get(name, {}), problems)
                for name, cls in SECTIONS.items()}
    workload = _build_workload(raw.get("workload", {}), problems)
    if "policy" not in problems:
        try:
            sections["policy"].build()
        except DomainError as exc:
            problems["policy"] = str(exc)
    arms = sections["train"].arms
    if any(a not in ("none", "random", "arrol") for a in arms):
        problems["train.arms"] = "arms must be drawn from none, random, arrol"
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(experiment=exp, seed=seed, output_dir=out or f"runs/{exp}",
                            workload=workload, **sections)


def load(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError({"": f"config file {path} not found"}) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError({"": f"cannot parse {path}: {exc}"}) from None
    return from_dict(raw)


def with_override(raw: dict, param: str, value) -> dict:
    """Copy of ``raw`` with ``param`` set.  Bare names are looked up in the
    sections (``kappa`` -> ``policy.kappa``)."""
    out = json.loads(json.dumps(raw))
    if "." in param:
        path = param.split(".")
    else:
        owners = [name for name, cls in SECTIONS.items()
                  if param in {("lambda" if f.name == "lambda_" else f.name) for f in fields(cls)}]
        if param in {f.name for f in fields(WorkloadConfig)}:
            owners.append("workload")
        if param in ("seed", "output_dir"):
            owners = []
            path = [param]
        elif len(owners) != 1:
            raise ConfigError({param: f"ambiguous or unknown parameter (matches {owners})"})
        else:
            path = [owners[0], param]
    node = out
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value
    return out
