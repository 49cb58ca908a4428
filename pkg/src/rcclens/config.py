"""Experiment configuration: an INI file with one section per step.

Every key has a default, so an empty file is a valid configuration.
``Config.dumps`` writes every key back, and ``loads(dumps(c)) == c``.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

ENV_OUTPUT_DIR = "RCCLENS_OUTPUT_DIR"
ENV_WORKERS = "RCCLENS_WORKERS"


class ConfigError(ValueError):
    pass


def _opt(default, section: str, key: str, doc: str = ""):
    return field(default=default, metadata={"section": section, "key": key, "doc": doc})


@dataclass(frozen=True)
class Config:
    scenario: str = _opt("reference", "scenario", "name", "bundled simulator scenario")
    input_dim: int = _opt(32, "scenario", "input_dim", "width of the rendered model input")

    model_path: str = _opt("", "model", "path", "trained model file; empty means train one")
    hidden: tuple = _opt((64, 32), "model", "hidden", "hidden layer widths, comma separated")
    train_epochs: int = _opt(60, "model", "epochs")
    train_lr: float = _opt(0.05, "model", "learning_rate")
    train_size: int = _opt(4000, "model", "simulator_samples", "simulator training pool size")
    field_size: int = _opt(400, "model", "field_samples", "field (real-world analog) pool size")
    test_size: int = _opt(3000, "test", "size", "uniform test set size")

    max_k: int = _opt(10, "clustering", "max_k", "largest cluster count tried per layer")
    layers: tuple = _opt((), "clustering", "layers", "heatmap layers; empty means every hidden layer")
    lrp_epsilon: float = _opt(0.01, "clustering", "lrp_epsilon")

    pair_population: int = _opt(25, "search.pair", "population")
    pair_iterations: int = _opt(100, "search.pair", "iterations")
    pair_restarts: int = _opt(4, "search.pair", "restarts")
    pair_crossover: float = _opt(0.7, "search.pair", "crossover")
    pair_mutation: float = _opt(0.3, "search.pair", "mutation")
    unsafe_population: int = _opt(25, "search.unsafe", "population")
    unsafe_iterations: int = _opt(100, "search.unsafe", "iterations")
    unsafe_crossover: float = _opt(0.3, "search.unsafe", "crossover")
    unsafe_mutation: float = _opt(0.3, "search.unsafe", "mutation")
    safe_population: int = _opt(25, "search.safe", "population")
    safe_iterations: int = _opt(100, "search.safe", "iterations")
    safe_crossover: float = _opt(0.3, "search.safe", "crossover")
    safe_mutation: float = _opt(0.3, "search.safe", "mutation")

    retrain_S: float = _opt(5.0, "retrain", "S", "percent of the simulator pool kept")
    retrain_R: float = _opt(100.0, "retrain", "R", "percent of the field pool kept")
    retrain_per_cluster: int = _opt(50, "retrain", "per_cluster", "unsafe samples per characterized cluster")
    retrain_repetitions: int = _opt(3, "retrain", "repetitions")
    retrain_epochs: int = _opt(20, "retrain", "epochs")
    retrain_lr: float = _opt(0.05, "retrain", "learning_rate")

    eval_samples: int = _opt(500, "evaluate", "samples", "expression samples per cluster")

    output_dir: str = _opt("rcclens-out", "run", "output_dir")
    seed: int = _opt(0, "run", "seed", "master seed")
    workers: int = _opt(1, "run", "workers", "processes for per-cluster work")

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.endswith(("crossover", "mutation")) and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{_where(f)}: probability {v} outside [0, 1]")
            if isinstance(v, int) and not isinstance(v, bool) and v < 0:
                raise ConfigError(f"{_where(f)}: must be nonnegative")
        for name in ("pair_population", "unsafe_population", "safe_population"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name}: population must be at least 2")
        if not (0 <= self.retrain_S <= 100 and 0 <= self.retrain_R <= 100):
            raise ConfigError("retrain: S and R must be percentages")
        if self.retrain_repetitions < 1 or self.workers < 1:
            raise ConfigError("retrain.repetitions and run.workers must be >= 1")
        if self.test_size < 1 or self.train_size + self.field_size < 1:
            raise ConfigError("data set sizes must be positive")

    # -- text form ------------------------------------------------------

    def dumps(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.metadata["key"], _format(getattr(self, f.name)))
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}".rstrip() for k, v in cp.items(sec))
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def loads(cls, text: str) -> "Config":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed configuration: {exc}") from None
        known = {(f.metadata["section"], f.metadata["key"]): f for f in fields(cls)}
        values = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                f = known.get((sec, key))
                if f is None:
                    raise ConfigError(f"unknown key {sec}.{key}")
                values[f.name] = _parse(f, raw)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "Config":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
        return cls.loads(text)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def override(self, assignments) -> "Config":
        """Apply ``section.key=value`` strings."""
        known = {f"{f.metadata['section']}.{f.metadata['key']}": f for f in fields(self)}
        values = {}
        for a in assignments:
            k, sep, v = a.partition("=")
            f = known.get(k.strip())
            if not sep or f is None:
                raise ConfigError(f"bad override {a!r}; expected section.key=value with a known key")
            values[f.name] = _parse(f, v.strip())
        return replace(self, **values)

    def with_environment(self, env=None) -> "Config":
        env = os.environ if env is None else env
        values = {}
        if env.get(ENV_OUTPUT_DIR):
            values["output_dir"] = env[ENV_OUTPUT_DIR]
        if env.get(ENV_WORKERS):
            values["workers"] = _parse(_field("workers"), env[ENV_WORKERS])
        return replace(self, **values)


def _field(name):
    return next(f for f in fields(Config) if f.name == name)


def _where(f) -> str:
    return f"{f.metadata['section']}.{f.metadata['key']}"


def _format(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(f, raw: str):
    kind = type(f.default)
    try:
        if kind is tuple:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw.strip()) if kind is not str else raw.strip()
    except ValueError:
        raise ConfigError(f"{_where(f)}: cannot parse {raw!r} as {kind.__name__}") from None


def describe() -> str:
    """Documentation of every key, grouped by section."""
    out, last = [], None
    for f in fields(Config):
        sec = f.metadata["section"]
        if sec != last:
            out.append(f"[{sec}]")
            last = sec
        doc = f.metadata.get("doc") or ""
        out.append(f"  {f.metadata['key']} = {_format(f.default)}" + (f"    ; {doc}" if doc else ""))
    return "\n".join(out) + "\n"
