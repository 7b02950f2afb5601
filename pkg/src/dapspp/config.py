"""Run configuration: JSON schema, validation and task presets.

A config file is a JSON object::

    {
      "task": "blur",                  # preset name; fills in missing sections
      "prior": {"kind": "smooth_gmm", "shape": [16, 16], ...},
      "operator": {"name": "gaussian_blur", "shape": [16, 16], ...},
      "measurement": {"gamma": 0.05, "truth_seed": 0},   # or "y": [...]
      "sampler": {"algorithm": "dapspp", "eta0": 1e-4, "J": 8, ...},
      "seeds": [0, 1, 2],
      "out_dir": "runs/blur"
    }

Only ``task`` is required; every other section defaults to the preset and
keys given in the file override the preset key by key.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .operators import CONVENTIONS, DOUBLED, operator_from_dict
from .prior import prior_from_dict
from .refine import RefineConfig
from .sampler import SamplerConfig
from .schedule import NoiseSchedule, StepSizeSchedule

ALGORITHMS = ("dapspp", "daps", "dps")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SamplerSettings:
    algorithm: str = "dapspp"
    sigma_max: float = 100.0
    sigma_min: float = 0.1
    n_steps: int = 51  # schedule levels; K = n_steps - 1 cycles
    rho: float = -7.0
    eta0: float = 1e-4
    delta: float = 1e-2
    J: int = 2
    gamma_eff: float = 0.01
    grad_convention: str = DOUBLED
    sigma_bar: float = 0.5
    ode_steps: int = 1
    ode_method: str = "rk4"
    with_prior: bool = False
    diagnostics: bool = True

    @property
    def K(self) -> int:
        return self.n_steps - 1

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("sampler.algorithm", f"expected one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.grad_convention not in CONVENTIONS:
            raise ConfigError("sampler.grad_convention", f"expected one of {CONVENTIONS}")
        if self.rho == 0:
            raise ConfigError("sampler.rho", "rho must be nonzero")
        if not self.sigma_min > 0:
            raise ConfigError("sampler.sigma_min", "must be positive")
        if not self.sigma_max > self.sigma_min:
            raise ConfigError("sampler.sigma_max", "must exceed sigma_min")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ConfigError("sampler.n_steps", "must be an integer >= 2")
        if not self.eta0 > 0:
            raise ConfigError("sampler.eta0", "must be positive")
        if not 0 < self.delta <= 1:
            raise ConfigError("sampler.delta", "must lie in (0, 1]")
        if int(self.J) != self.J or self.J < 0:
            raise ConfigError("sampler.J", "must be a nonnegative integer")
        if not self.gamma_eff > 0:
            raise ConfigError("sampler.gamma_eff", "must be positive")
        if not self.sigma_min < self.sigma_bar < self.sigma_max:
            raise ConfigError("sampler.sigma_bar", "must lie strictly between sigma_min and sigma_max")
        if int(self.ode_steps) != self.ode_steps or self.ode_steps < 1:
            raise ConfigError("sampler.ode_steps", "must be a positive integer")
        if self.ode_method not in ("euler", "rk4"):
            raise ConfigError("sampler.ode_method", "expected 'euler' or 'rk4'")

    def to_sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(
            schedule=NoiseSchedule(self.sigma_max, self.sigma_min, int(self.n_steps), self.rho),
            step_sizes=StepSizeSchedule(self.eta0, self.delta),
            refine=RefineConfig(
                n_steps=int(self.J), eta=self.eta0, with_prior=self.with_prior,
                grad_convention=self.grad_convention, gamma=self.gamma_eff,
            ),
            sigma_bar=self.sigma_bar,
            ode_steps_below_bar=int(self.ode_steps),
            ode_method=self.ode_method,
            seed=int(seed),
            diagnostics=self.diagnostics,
        )


@dataclass(frozen=True)
class RunConfig:
    task: str
    prior: dict
    operator: dict
    measurement: dict
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    seeds: tuple = (0,)
    out_dir: str | None = None

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
                raise ConfigError("seeds", f"seeds must be unsigned 64-bit integers, got {s!r}")
        self.sampler.validate()
        try:
            model = prior_from_dict(self.prior)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("prior", str(exc)) from None
        try:
            op = operator_from_dict(self.operator)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("operator", str(exc)) from None
        if op.in_dim != model.dim:
            raise ConfigError("operator", f"input dimension {op.in_dim} does not match prior dimension {model.dim}")
        gamma = self.measurement.get("gamma")
        if not isinstance(gamma, (int, float)) or not gamma > 0:
            raise ConfigError("measurement.gamma", f"must be a positive number, got {gamma!r}")
        y = self.measurement.get("y")
        if y is not None and len(y) != op.out_dim:
            raise ConfigError("measurement.y", f"expected {op.out_dim} entries, got {len(y)}")
        return model, op

    def to_dict(self) -> dict:
        out = {
            "task": self.task,
            "prior": copy.deepcopy(self.prior),
            "operator": copy.deepcopy(self.operator),
            "measurement": copy.deepcopy(self.measurement),
            "sampler": asdict(self.sampler),
            "seeds": list(self.seeds),
        }
        if self.out_dir is not None:
            out["out_dir"] = self.out_dir
        return out

    def with_sampler(self, **changes) -> "RunConfig":
        return replace(self, sampler=replace(self.sampler, **changes))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

IMG = [16, 16]

# 2D two-component mixture observed through its first coordinate
POSTERIOR_2D_PRIOR = {
    "kind": "gmm",
    "weights": [0.4, 0.6],
    "means": [[-1.0, -1.5], [1.0, 1.5]],
    "covariances": [[[1.0, 0.5], [0.5, 1.0]], [[0.8, -0.3], [-0.3, 0.6]]],
}

SMOOTH_PRIOR = {"kind": "smooth_gmm", "shape": IMG, "n_components": 3, "tau2": 0.02,
                "length_scale": 2.0, "nugget": 1e-3, "seed": 0}

PRESETS = {
    "posterior2d": {
        "prior": POSTERIOR_2D_PRIOR,
        "operator": {"name": "mask", "mask": [1, 0]},
        "measurement": {"gamma": 0.1, "y": [0.2]},
        "sampler": {"eta0": 1e-2, "delta": 0.2, "J": 2, "gamma_eff": 0.1,
                    "grad_convention": "exact-score"},
    },
    "isotropic": {
        "prior": {"kind": "isotropic", "mu": 0.5, "tau2": 0.25, "dim": 64},
        "operator": {"name": "gaussian_blur", "shape": [8, 8], "size": 7, "std": 1.5},
        "measurement": {"gamma": 0.01, "truth_seed": 0},
        "sampler": {"eta0": 1e-4, "J": 8},
    },
    "blur": {
        "prior": SMOOTH_PRIOR,
        "operator": {"name": "gaussian_blur", "shape": IMG, "size": 7, "std": 1.5},
        "measurement": {"gamma": 0.05, "truth_seed": 0},
        "sampler": {"eta0": 1e-4, "J": 8},
    },
    "motion_blur": {
        "prior": SMOOTH_PRIOR,
        "operator": {"name": "motion_blur", "shape": IMG, "length": 5},
        "measurement": {"gamma": 0.05, "truth_seed": 0},
        "sampler": {"eta0": 1e-4, "J": 8},
    },
    "sr4": {
        "prior": SMOOTH_PRIOR,
        "operator": {"name": "downsample", "shape": IMG, "k": 4},
        "measurement": {"gamma": 0.05, "truth_seed": 0},
        "sampler": {"eta0": 1e-3, "J": 2},
    },
    "inpaint": {
        "prior": SMOOTH_PRIOR,
        "operator": {"name": "box_mask", "shape": IMG, "box": [4, 12, 4, 12]},
        "measurement": {"gamma": 0.05, "truth_seed": 0},
        "sampler": {"eta0": 1e-4, "J": 5},
    },
    "hdr": {
        "prior": SMOOTH_PRIOR,
        "operator": {"name": "hdr", "dim": 256, "alpha": 2.0},
        "measurement": {"gamma": 0.05, "truth_seed": 0},
        "sampler": {"eta0": 2.5e-5, "J": 5},
    },
    "phase": {
        "prior": {"kind": "smooth_gmm", "shape": [8, 8], "n_components": 3, "tau2": 0.02,
                  "length_scale": 1.5, "nugget": 1e-3, "seed": 0},
        "operator": {"name": "phase", "shape": [8, 8], "oversample": 2},
        "measurement": {"gamma": 0.05, "truth_seed": 0},
        "sampler": {"eta0": 2e-7, "J": 50},
    },
}

_SAMPLER_KEYS = {f.name for f in fields(SamplerSettings)}
_TOP_KEYS = {"task", "prior", "operator", "measurement", "sampler", "seeds", "out_dir"}


def preset(name: str, **sampler_changes) -> RunConfig:
    """The named task preset as a validated ``RunConfig``."""
    return config_from_dict({"task": name, "sampler": sampler_changes})


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level key")
    task = raw.get("task")
    if task not in PRESETS:
        raise ConfigError("task", f"unknown task {task!r}; known: {sorted(PRESETS)}")
    base = copy.deepcopy(PRESETS[task])

    def section(name):
        value = raw.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(name, "must be a JSON object")
        merged = dict(base.get(name, {}))
        # a different kind/name replaces the preset section instead of merging
        kind_key = "kind" if name == "prior" else "name"
        if kind_key in value and value[kind_key] != merged.get(kind_key):
            merged = {}
        merged.update(copy.deepcopy(value))
        return merged

    sampler_raw = section("sampler")
    bad = set(sampler_raw) - _SAMPLER_KEYS
    if bad:
        raise ConfigError(f"sampler.{sorted(bad)[0]}", "unknown sampler key")
    try:
        sampler = SamplerSettings(**sampler_raw)
    except TypeError as exc:
        raise ConfigError("sampler", str(exc)) from None
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, (list, tuple)):
        raise ConfigError("seeds", "must be a list of integers")
    cfg = RunConfig(
        task=task,
        prior=section("prior"),
        operator=section("operator"),
        measurement=section("measurement"),
        sampler=sampler,
        seeds=tuple(seeds),
        out_dir=raw.get("out_dir"),
    )
    cfg.validate()
    return cfg


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", str(exc)) from None
    return config_from_dict(raw)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass
class Problem:
    model: object
    measurement: object
    x_true: object = None  # None when y is given explicitly


def build_problem(cfg: RunConfig) -> Problem:
    """Instantiate prior and operator and obtain the measurement.

    With ``measurement.y`` the observation is used as given; otherwise a
    ground truth is drawn from the prior with ``truth_seed`` and observed with
    noise ``gamma``.
    """
    from . import rng as rngs
    from .operators import Measurement, simulate_measurement

    model, op = cfg.validate()
    gamma = float(cfg.measurement["gamma"])
    if cfg.measurement.get("y") is not None:
        y = [float(v) for v in cfg.measurement["y"]]
        return Problem(model, Measurement(np.asarray(y), gamma, op))
    truth_seed = int(cfg.measurement.get("truth_seed", 0))
    x_true = model.sample(rngs.stream(truth_seed, "truth"))
    meas = simulate_measurement(op, x_true, gamma, rngs.stream(truth_seed, "noise"))
    return Problem(model, meas, x_true)
