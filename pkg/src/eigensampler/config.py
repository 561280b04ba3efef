"""Experiment configuration: strict JSON schema and initial-state grammar.

Unknown keys anywhere in the document are hard errors — a silently
ignored typo ("stpes": 2000) would poison benchmark claims.  Every
optional key has its default filled in during validation, so the resolved
config echoed into result bundles is complete and sufficient (with the
seed) to reproduce a run.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import Forced, MonteCarlo, QuantumState, plus_state
from .excited import Deterministic, FilterMethod, LevelSpec, SpectrumConfig, Stochastic
from .model import build_distribution, build_tfim

SCHEMA_VERSION = 1

_SITE_STATES = {
    "0": np.array([1.0, 0.0]),
    "1": np.array([0.0, 1.0]),
    "+": np.array([1.0, 1.0]) / np.sqrt(2),
    "-": np.array([1.0, -1.0]) / np.sqrt(2),
}


class ConfigError(ValueError):
    """Configuration document violates the schema."""


def parse_initial_state(text: str, n: int) -> QuantumState:
    """Initial-state grammar: "plus", "zero", or one of 0/1/+/- per site.

    Site 0 is the leftmost character and the most significant bit of the
    basis index, matching the model's spin convention.
    """
    if text == "plus":
        return plus_state(n)
    if text == "zero":
        vec = np.zeros(2**n)
        vec[0] = 1.0
        return QuantumState(vector=vec)
    if len(text) != n:
        raise ConfigError(
            f"initial state {text!r} has {len(text)} sites, model has {n}"
        )
    vec = np.array([1.0])
    for ch in text:
        if ch not in _SITE_STATES:
            raise ConfigError(
                f"initial state {text!r}: unknown site state {ch!r} "
                f"(expected one of 0, 1, +, -)"
            )
        vec = np.kron(vec, _SITE_STATES[ch])
    return QuantumState(vector=vec)


def _require_mapping(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    return obj


def _check_keys(mapping: dict, allowed, where: str):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(repr, unknown))}")


def _get_num(mapping, key, where, default=None, low=None, high=None,
             low_open=False, high_open=False):
    if key not in mapping:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    val = mapping[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    val = float(val)
    if low is not None and (val <= low if low_open else val < low):
        raise ConfigError(f"{where}.{key}: {val} out of range")
    if high is not None and (val >= high if high_open else val > high):
        raise ConfigError(f"{where}.{key}: {val} out of range")
    return val


def _get_int(mapping, key, where, default=None, low=None, high=None):
    if key not in mapping:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    val = mapping[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
    if low is not None and val < low:
        raise ConfigError(f"{where}.{key}: {val} below minimum {low}")
    if high is not None and val > high:
        raise ConfigError(f"{where}.{key}: {val} above maximum {high}")
    return val


def _get_bool(mapping, key, where, default):
    val = mapping.get(key, default)
    if not isinstance(val, bool):
        raise ConfigError(f"{where}.{key}: expected true/false, got {val!r}")
    return val


def _get_str(mapping, key, where, default=None, choices=None):
    if key not in mapping:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    val = mapping[key]
    if not isinstance(val, str):
        raise ConfigError(f"{where}.{key}: expected a string, got {val!r}")
    if choices is not None and val not in choices:
        raise ConfigError(
            f"{where}.{key}: {val!r} not one of {', '.join(map(repr, choices))}"
        )
    return val


@dataclass(frozen=True)
class ModelSection:
    type: str
    sites: int
    coupling: float
    field: float
    periodic: bool
    second_coupling: float
    shifts: Optional[dict]


@dataclass(frozen=True)
class RunSection:
    eta: float
    steps: int
    policy: object
    representation: str
    record_every: int
    ensemble_size: int


@dataclass(frozen=True)
class ExcitedSection:
    levels: int
    schedule: object
    method: FilterMethod
    per_level: tuple


@dataclass(frozen=True)
class OutputSection:
    directory: str
    formats: tuple


@dataclass(frozen=True)
class SweepSection:
    axes: dict
    max_points: int
    fixed_time: bool


@dataclass
class ExperimentConfig:
    seed: int
    model: ModelSection
    run: RunSection
    excited: ExcitedSection
    output: OutputSection
    oracle_levels: int
    sweep: Optional[SweepSection]
    resolved: dict = field(repr=False, default_factory=dict)

    def hamiltonian_terms(self):
        return build_tfim(
            self.model.sites,
            J=self.model.coupling,
            B=self.model.field,
            periodic=self.model.periodic,
            K=self.model.second_coupling,
        )

    def distribution(self):
        return build_distribution(self.hamiltonian_terms(), shifts=self.model.shifts)

    def spectrum_config(self, seed=None, representation=None, ensemble_member=None):
        base = self.seed if seed is None else seed
        if ensemble_member is not None:
            base = (base, ensemble_member)
        return SpectrumConfig(
            levels=self.excited.levels,
            eta=self.run.eta,
            steps=self.run.steps,
            schedule=self.excited.schedule,
            method=self.excited.method,
            policy=self.run.policy,
            representation=representation or self.run.representation,
            seed=base,
            record_every=self.run.record_every,
            per_level=self.excited.per_level,
        )


def _parse_model(section, where="model") -> tuple[ModelSection, dict]:
    sec = _require_mapping(section, where)
    _check_keys(sec, ("type", "L", "J", "B", "K", "periodic", "shifts"), where)
    mtype = _get_str(sec, "type", where, default="tfim", choices=("tfim", "xxzz"))
    sites = _get_int(sec, "L", where, low=2, high=20)
    coupling = _get_num(sec, "J", where, default=1.0)
    fieldval = _get_num(sec, "B", where, default=0.5)
    periodic = _get_bool(sec, "periodic", where, default=True)
    second = _get_num(sec, "K", where, default=0.0)
    if mtype == "tfim" and second != 0.0:
        raise ConfigError(f"{where}.K: nonzero K requires type \"xxzz\"")
    shifts = sec.get("shifts")
    if shifts is not None:
        shifts = _require_mapping(shifts, f"{where}.shifts")
        for label, value in shifts.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(
                    f"{where}.shifts.{label}: expected a number, got {value!r}"
                )
        shifts = {k: float(v) for k, v in shifts.items()}
    model = ModelSection(
        type=mtype, sites=sites, coupling=coupling, field=fieldval,
        periodic=periodic, second_coupling=second, shifts=shifts,
    )
    resolved = {
        "type": mtype, "L": sites, "J": coupling, "B": fieldval,
        "periodic": periodic, "K": second, "shifts": shifts,
    }
    return model, resolved


def _parse_policy(value, where):
    if value == "forced":
        return Forced(), "forced"
    if isinstance(value, dict):
        _check_keys(value, ("monte-carlo",), where)
        if "monte-carlo" in value:
            inner = _require_mapping(value["monte-carlo"], f"{where}.monte-carlo")
            _check_keys(inner, ("max_restarts",), f"{where}.monte-carlo")
            restarts = _get_int(inner, "max_restarts", f"{where}.monte-carlo",
                                default=0, low=0)
            return MonteCarlo(max_restarts=restarts), {
                "monte-carlo": {"max_restarts": restarts}
            }
    raise ConfigError(
        f'{where}: expected "forced" or {{"monte-carlo": {{...}}}}, got {value!r}'
    )


def _parse_run(section, where="run") -> tuple[RunSection, dict]:
    sec = _require_mapping(section, where)
    _check_keys(
        sec,
        ("eta", "steps", "policy", "representation", "seed", "record_every",
         "ensemble_size"),
        where,
    )
    eta = _get_num(sec, "eta", where, low=0.0, high=1.0, low_open=True, high_open=True)
    steps = _get_int(sec, "steps", where, low=1)
    policy, policy_echo = _parse_policy(sec.get("policy", "forced"), f"{where}.policy")
    representation = _get_str(sec, "representation", where, default="pure",
                              choices=("pure", "mixed"))
    record_every = _get_int(sec, "record_every", where, default=10, low=1)
    ensemble = _get_int(sec, "ensemble_size", where, default=16, low=1)
    run = RunSection(
        eta=eta, steps=steps, policy=policy, representation=representation,
        record_every=record_every, ensemble_size=ensemble,
    )
    resolved = {
        "eta": eta, "steps": steps, "policy": policy_echo,
        "representation": representation, "record_every": record_every,
        "ensemble_size": ensemble,
    }
    return run, resolved


def _parse_level_spec(entry, n_sites, where) -> tuple[LevelSpec, dict]:
    sec = _require_mapping(entry, where)
    _check_keys(sec, ("init", "eta", "steps", "period"), where)
    init = sec.get("init")
    if init is not None:
        init = _get_str(sec, "init", where)
        parse_initial_state(init, n_sites)  # validate eagerly
    eta = sec.get("eta")
    if eta is not None:
        eta = _get_num(sec, "eta", where, low=0.0, high=1.0,
                       low_open=True, high_open=True)
    steps = sec.get("steps")
    if steps is not None:
        steps = _get_int(sec, "steps", where, low=1)
    period = sec.get("period")
    if period is not None:
        period = _get_int(sec, "period", where, low=1)
    spec = LevelSpec(init=init, eta=eta, steps=steps, period=period)
    return spec, {"init": init, "eta": eta, "steps": steps, "period": period}


def _parse_excited(section, n_sites, where="excited") -> tuple[ExcitedSection, dict]:
    sec = _require_mapping(section, where)
    _check_keys(sec, ("levels", "period", "p_lift", "method", "per_level"), where)
    levels = _get_int(sec, "levels", where, default=1, low=1)
    if "period" in sec and "p_lift" in sec:
        raise ConfigError(f"{where}: give either period or p_lift, not both")
    if "p_lift" in sec:
        p_lift = _get_num(sec, "p_lift", where, low=0.0, low_open=True)
        schedule = Stochastic(p_lift=p_lift)
        schedule_echo = {"p_lift": p_lift}
    else:
        period = _get_int(sec, "period", where, default=2, low=1)
        schedule = Deterministic(period=period)
        schedule_echo = {"period": period}
    method_name = _get_str(sec, "method", where, default="exact-exponential",
                           choices=tuple(m.value for m in FilterMethod))
    method = FilterMethod(method_name)
    raw_levels = sec.get("per_level", [])
    if not isinstance(raw_levels, list):
        raise ConfigError(f"{where}.per_level: expected a list")
    if len(raw_levels) > levels:
        raise ConfigError(
            f"{where}.per_level: {len(raw_levels)} entries for {levels} levels"
        )
    specs, spec_echo = [], []
    for i, entry in enumerate(raw_levels):
        spec, echo = _parse_level_spec(entry, n_sites, f"{where}.per_level[{i}]")
        specs.append(spec)
        spec_echo.append(echo)
    excited = ExcitedSection(
        levels=levels, schedule=schedule, method=method, per_level=tuple(specs)
    )
    resolved = {
        "levels": levels, **schedule_echo, "method": method_name,
        "per_level": spec_echo,
    }
    return excited, resolved


def _parse_output(section, where="output") -> tuple[OutputSection, dict]:
    sec = _require_mapping(section, where)
    _check_keys(sec, ("directory", "formats"), where)
    directory = _get_str(sec, "directory", where, default="results")
    formats = sec.get("formats", ["csv", "json", "png"])
    if not isinstance(formats, list) or not formats:
        raise ConfigError(f"{where}.formats: expected a non-empty list")
    for fmt in formats:
        if fmt not in ("csv", "json", "png"):
            raise ConfigError(f"{where}.formats: unknown format {fmt!r}")
    out = OutputSection(directory=directory, formats=tuple(formats))
    return out, {"directory": directory, "formats": list(formats)}


def _parse_sweep(section, where="sweep") -> tuple[SweepSection, dict]:
    sec = _require_mapping(section, where)
    _check_keys(sec, ("eta", "steps", "p_lift", "L", "max_points", "fixed_time"), where)
    max_points = _get_int(sec, "max_points", where, default=64, low=1)
    fixed_time = _get_bool(sec, "fixed_time", where, default=False)
    axes = {}
    for axis in ("eta", "steps", "p_lift", "L"):
        if axis not in sec:
            continue
        values = sec[axis]
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{where}.{axis}: expected a non-empty list")
        for v in values:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{where}.{axis}: expected numbers, got {v!r}")
        if axis in ("steps", "L") and not all(isinstance(v, int) for v in values):
            raise ConfigError(f"{where}.{axis}: expected integers")
        axes[axis] = list(values)
    if not axes:
        raise ConfigError(f"{where}: no sweep axis given")
    total = 1
    for values in axes.values():
        total *= len(values)
    if total > max_points:
        raise ConfigError(
            f"{where}: grid has {total} points, above max_points={max_points}"
        )
    sweep = SweepSection(axes=axes, max_points=max_points, fixed_time=fixed_time)
    return sweep, {**axes, "max_points": max_points, "fixed_time": fixed_time}


def validate_config(doc: dict) -> ExperimentConfig:
    """Validate a parsed JSON document and fill in every default."""
    top = _require_mapping(doc, "config")
    _check_keys(
        top,
        ("schema_version", "seed", "model", "run", "excited", "output",
         "oracle", "sweep"),
        "config",
    )
    version = _get_int(top, "schema_version", "config", default=SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"config.schema_version: {version} unsupported (expected {SCHEMA_VERSION})"
        )
    if "model" not in top:
        raise ConfigError("config.model: required")
    if "run" not in top:
        raise ConfigError("config.run: required")
    # seed is accepted at top level or inside run (but not both)
    run_sec = _require_mapping(top["run"], "run")
    if "seed" in top and "seed" in run_sec:
        raise ConfigError("config.seed: given both at top level and in run")
    if "seed" in run_sec:
        seed = _get_int(run_sec, "seed", "run", low=0, high=2**64 - 1)
    else:
        seed = _get_int(top, "seed", "config", default=0, low=0, high=2**64 - 1)
    model, model_echo = _parse_model(top["model"])
    run, run_echo = _parse_run(top["run"])
    excited, excited_echo = _parse_excited(top.get("excited", {}), model.sites)
    output, output_echo = _parse_output(top.get("output", {}))
    oracle_sec = _require_mapping(top.get("oracle", {}), "oracle")
    _check_keys(oracle_sec, ("levels",), "oracle")
    oracle_levels = _get_int(oracle_sec, "levels", "oracle", default=8, low=1)
    sweep, sweep_echo = (None, None)
    if "sweep" in top:
        sweep, sweep_echo = _parse_sweep(top["sweep"])
    resolved = {
        "schema_version": version,
        "seed": seed,
        "model": model_echo,
        "run": run_echo,
        "excited": excited_echo,
        "output": output_echo,
        "oracle": {"levels": oracle_levels},
    }
    if sweep_echo is not None:
        resolved["sweep"] = sweep_echo
    return ExperimentConfig(
        seed=seed, model=model, run=run, excited=excited, output=output,
        oracle_levels=oracle_levels, sweep=sweep, resolved=resolved,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(doc)


def worker_count() -> int:
    """Worker cap from EIGENSAMPLER_THREADS (default 1, minimum 1)."""
    raw = os.environ.get("EIGENSAMPLER_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"EIGENSAMPLER_THREADS must be an integer, got {raw!r}")
