"""Run configuration: one JSON document that fully determines a CLI run.

Loading is schema-strict. Unknown keys, wrong types and invariant violations
raise :class:`ConfigError` naming the offending field, before any compute.
"""
from __future__ import annotations

import hashlib
import json
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass, replace

from .constrained import TrainConfig
from .controller import ControlTask, SolveOptions
from .harness import ExperimentConfig, substream_seed
from .sim import SimConfig


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


@dataclass(frozen=True)
class LearningSection:
    delta: float = 0.1
    eps: float = 0.1
    iterations: int = 3000
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    alpha_lambda: float = 0.01
    lambda0: float = 0.0
    val_fraction: float = 0.1


@dataclass(frozen=True)
class ExperimentSection:
    mode: str = "full"
    objective: str = "constrained"
    collection_duration: float = 252.0
    eval_episodes: int = 100
    bounces_per_episode: int = 20
    analytic_roll_error: float = 0.1
    roll_bound: float = 0.4
    pitch_bound: float = 0.4
    hidden_layers: tuple[int, ...] = (128, 128)
    dagger_rounds: int = 0
    dagger_duration: float = 60.0


@dataclass(frozen=True)
class SweepSection:
    roll_errors: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2)
    episodes: int = 50


@dataclass(frozen=True)
class DemoSection:
    target: tuple[float, float] = (0.5, -0.3)
    v_min: float = 3.0
    v_max: float = 5.0
    bounces: int = 20
    obstacles: tuple[tuple[float, float, float, float], ...] = ()


@dataclass(frozen=True)
class SimSection:
    gravity: float = 9.81
    restitution_alpha: float = 0.8
    hit_plane_height: float = 0.0
    workspace_radius: float = 1.5
    paddle_radius: float = 0.15
    dt: float = 0.01
    drop_height: tuple[float, float] = (0.8, 1.2)
    drop_spread: float = 0.2


@dataclass(frozen=True)
class ControllerSection:
    alpha_a: float = 0.01
    step_decay: float = 0.99
    alpha_lambda: float = 0.1
    lambda0: float = 0.0
    max_iterations: int = 500
    tol: float = 1e-5
    violation_tol: float = 1e-3
    warm_start: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    sim: SimSection = field(default_factory=SimSection)
    learning: LearningSection = field(default_factory=LearningSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    demo: DemoSection = field(default_factory=DemoSection)

    # -- conversions to the module configs --

    def sim_config(self) -> SimConfig:
        return SimConfig(**asdict(self.sim), seed=substream_seed(self.seed, "sim"))

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(**asdict(self.experiment), delta=self.learning.delta, eps=self.learning.eps, seed=self.seed)

    def train_config(self) -> TrainConfig:
        d = asdict(self.learning)
        del d["delta"], d["eps"]
        return TrainConfig(**d, seed=substream_seed(self.seed, "batches"))

    def solve_options(self) -> SolveOptions:
        return SolveOptions(**asdict(self.controller))

    def demo_task(self) -> ControlTask:
        e, d = self.experiment, self.demo
        return ControlTask(list(d.target), -e.roll_bound, e.roll_bound, -e.pitch_bound, e.pitch_bound,
                           d.v_min, d.v_max, [list(r) for r in d.obstacles])

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """Short content hash of everything but ``out_dir`` (where outputs go does not change them)."""
        doc = self.to_dict()
        del doc["out_dir"]
        return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None) -> RunConfig:
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if out_dir is not None:
            cfg = replace(cfg, out_dir=out_dir)
        return cfg


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


# -- strict parsing --------------------------------------------------------------

def _coerce(value, tp, path):
    origin = typing.get_origin(tp)
    if is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, args)))
    raise TypeError(f"unsupported config type {tp!r}")


def _build(cls, doc, path=""):
    if not isinstance(doc, dict):
        raise ConfigError(path, f"expected an object, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    kwargs = {}
    for name, f in known.items():
        sub = f"{path}.{name}" if path else name
        if name in doc:
            kwargs[name] = _coerce(doc[name], hints[name], sub)
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ConfigError(sub, "missing required field")
    return cls(**kwargs)


def _names(cls):
    return {f.name for f in fields(cls)}


def _check(section: str, make, names=()):
    try:
        return make()
    except ValueError as exc:
        msg = str(exc)
        # module errors start with the field name when there is a single culprit
        head = msg.split()[0] if msg else ""
        path = f"{section}.{head}" if head in names else section
        raise ConfigError(path, msg) from None


def validate(cfg: RunConfig) -> RunConfig:
    """Run every module-level invariant check; raise ConfigError on the first failure."""
    if cfg.seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    if not cfg.out_dir:
        raise ConfigError("out_dir", "must be a nonempty path")
    L = cfg.learning
    if not L.delta > 0:
        raise ConfigError("learning.delta", "must be positive")
    if not L.eps >= 0:
        raise ConfigError("learning.eps", "must be nonnegative")
    _check("sim", cfg.sim_config, _names(SimSection))
    _check("learning", cfg.train_config, _names(LearningSection))
    _check("experiment", cfg.experiment_config, _names(ExperimentSection))
    _check("controller", cfg.solve_options, _names(ControllerSection))
    if any(h < 1 for h in cfg.experiment.hidden_layers):
        raise ConfigError("experiment.hidden_layers", "layer widths must be positive")
    if not cfg.sweep.roll_errors:
        raise ConfigError("sweep.roll_errors", "must list at least one roll error")
    if cfg.sweep.episodes < 1:
        raise ConfigError("sweep.episodes", "must be at least 1")
    if not cfg.demo.v_min < cfg.demo.v_max:
        raise ConfigError("demo.v_max", "v_min must be below v_max")
    if cfg.demo.bounces < 0:
        raise ConfigError("demo.bounces", "must be nonnegative")
    _check("demo", cfg.demo_task, _names(DemoSection))
    return cfg


def config_from_dict(doc) -> RunConfig:
    return validate(_build(RunConfig, doc))


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("", f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(doc)
