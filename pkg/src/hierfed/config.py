"""TOML run configuration: fail-closed parsing and round-trippable dicts.

Sections: [model], [population] (optional when [run].data_dir is set),
[schedule], [solver], [run]. Unknown sections or keys are errors so
experiment manifests stay trustworthy.
"""

import dataclasses

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .datagen import PopulationConfig
from .engine import RunConfig
from .errors import ConfigurationError
from .local_training import LocalSolverConfig
from .models import ModelSpec
from .schedule import MetaLawSchedule


@dataclasses.dataclass(frozen=True)
class ResolvedConfig:
    run: RunConfig
    population: PopulationConfig | None = None
    data_dir: str | None = None


def _build(cls, section, data, coerce=()):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigurationError(f"[{section}]: unknown key(s) {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigurationError(f"[{section}]: {e}") from None


def from_dict(doc):
    known = {"model", "population", "schedule", "solver", "run"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(f"unknown section(s) {sorted(unknown)}")
    for sec in ("model", "schedule", "solver", "run"):
        if sec not in doc:
            raise ConfigurationError(f"missing section [{sec}]")
    model = _build(ModelSpec, "model", dict(doc["model"]))
    schedule = dict(doc["schedule"])
    if "thresholds" in schedule:
        schedule["thresholds"] = tuple(schedule["thresholds"])
    schedule = _build(MetaLawSchedule, "schedule", schedule)
    solver = _build(LocalSolverConfig, "solver", dict(doc["solver"]))
    run_sec = dict(doc["run"])
    data_dir = run_sec.pop("data_dir", None)
    if "limited_agents" in run_sec:
        run_sec["limited_agents"] = tuple(run_sec["limited_agents"])
    run = _build(
        RunConfig, "run",
        dict(run_sec, model=model, schedule=schedule, solver=solver),
    )
    population = None
    if "population" in doc:
        pop = dict(doc["population"])
        for key in ("num_features", "num_classes"):
            if key in pop and pop[key] != getattr(model, key):
                raise ConfigurationError(f"[population].{key} disagrees with [model]")
            pop[key] = getattr(model, key)
        population = _build(PopulationConfig, "population", pop)
    if population is None and data_dir is None:
        raise ConfigurationError("need a [population] section or [run].data_dir")
    return ResolvedConfig(run=run, population=population, data_dir=data_dir)


def to_dict(resolved):
    run = dataclasses.asdict(resolved.run)
    model = run.pop("model")
    schedule = run.pop("schedule")
    solver = run.pop("solver")
    schedule["thresholds"] = list(schedule["thresholds"])
    run["limited_agents"] = list(run["limited_agents"])
    if resolved.data_dir is not None:
        run["data_dir"] = resolved.data_dir
    doc = {"model": model, "schedule": schedule, "solver": solver, "run": run}
    if resolved.population is not None:
        doc["population"] = dataclasses.asdict(resolved.population)
    return doc


def load_config(path):
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"no such config file: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}") from None
    return from_dict(doc)
