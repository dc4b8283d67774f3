"""Configuration documents: YAML in, validated dataclasses out.

One human-editable document per subcommand.  Defaults follow the benchmark
conventions (50 000 particles, disk radius 10, resampler shrinkage
0.99995); unknown keys are a hard error so a typo cannot silently fall
back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Optional

import yaml

from .bench import EnsembleConfig
from .experiment import OutlierConfig, RunConfig
from .model import NoiseModel
from .policy import PolicyParams
from .smc import ResampleConfig

__all__ = [
    "ConfigError",
    "ParseError",
    "ValidationError",
    "OracleCheckConfig",
    "TableConfig",
    "GridSearchConfig",
    "load_config",
    "config_to_dict",
]

DEFAULT_MAX_SHOTS = 10_000
ORACLE_MAX_RADIUS = 3.0
ORACLE_MAX_SHOTS = 100


class ConfigError(Exception):
    """Base for configuration problems."""


class ParseError(ConfigError):
    """The document is not valid YAML or not a mapping."""


class ValidationError(ConfigError):
    """A field is missing, unknown, badly typed or out of range."""


@dataclass(frozen=True)
class OracleCheckConfig:
    """Small-instance settings for the filter-versus-grid comparison."""

    n_particles: int = 10_000
    radius_r0: float = 3.0
    shots: int = 50
    grid_points: int = 301
    seed: int = 0
    noise: NoiseModel = NoiseModel(0.0)
    resample: ResampleConfig = ResampleConfig()

    def __post_init__(self):
        if self.radius_r0 <= 0.0 or self.radius_r0 > ORACLE_MAX_RADIUS:
            raise ValueError(
                f"radius_r0 must lie in (0, {ORACLE_MAX_RADIUS}] for an oracle check, "
                f"got {self.radius_r0}"
            )
        if not (0 <= self.shots <= ORACLE_MAX_SHOTS):
            raise ValueError(
                f"shots must lie in [0, {ORACLE_MAX_SHOTS}] for an oracle check, "
                f"got {self.shots}"
            )
        if self.n_particles < 2:
            raise ValueError(f"n_particles must be at least 2, got {self.n_particles}")
        if self.grid_points < 300:
            raise ValueError(f"grid_points must be at least 300, got {self.grid_points}")


@dataclass(frozen=True)
class TableConfig:
    ensemble: EnsembleConfig
    thresholds: tuple[float, ...]
    checkpoints: tuple[int, ...]


@dataclass(frozen=True)
class GridSearchConfig:
    ensemble: EnsembleConfig
    a_values: tuple[float, ...]
    b_values: tuple[float, ...]
    budget_shots: int


def _as_mapping(raw: Any, ctx: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ValidationError(f"{ctx} must be a mapping, got {type(raw).__name__}")
    return dict(raw)


def _reject_unknown(raw: dict, ctx: str) -> None:
    if raw:
        names = ", ".join(repr(k) for k in sorted(map(str, raw)))
        raise ValidationError(f"unknown key(s) {names} in {ctx}")


def _take(raw: dict, key: str, ctx: str, kind: type, default: Any, required: bool = False):
    if key not in raw:
        if required:
            raise ValidationError(f"missing required key '{key}' in {ctx}")
        return default
    value = raw.pop(key)
    if value is None and not required:
        return default
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"'{key}' in {ctx} must be a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"'{key}' in {ctx} must be an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ValidationError(f"'{key}' in {ctx} must be a boolean, got {value!r}")
        return value
    raise AssertionError(f"unsupported field kind {kind}")


def _build(ctx: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ValidationError(f"{ctx}: {exc}") from exc


def _policy_from(raw: Any, ctx: str) -> PolicyParams:
    section = _as_mapping(raw, ctx)
    kwargs = dict(
        a_policy=_take(section, "a_policy", ctx, float, None, required=True),
        b_policy=_take(section, "b_policy", ctx, float, None, required=True),
        m_prime_max=_take(section, "m_prime_max", ctx, int, 39),
        c_threshold=_take(section, "c_threshold", ctx, int, 15),
        robust=_take(section, "robust", ctx, bool, False),
        nonadaptive_radius=_take(section, "nonadaptive_radius", ctx, float, None),
    )
    _reject_unknown(section, ctx)
    return _build(ctx, PolicyParams, **kwargs)


def _noise_from(raw: Any, ctx: str) -> NoiseModel:
    section = _as_mapping(raw, ctx)
    p_error = _take(section, "p_error", ctx, float, 0.0)
    _reject_unknown(section, ctx)
    return _build(ctx, NoiseModel, p_error=p_error)


def _resample_from(raw: Any, ctx: str) -> ResampleConfig:
    section = _as_mapping(raw, ctx)
    kwargs = dict(
        a_lw=_take(section, "a_lw", ctx, float, 0.99995),
        ess_threshold=_take(section, "ess_threshold", ctx, float, 0.5),
        systematic=_take(section, "systematic", ctx, bool, True),
    )
    _reject_unknown(section, ctx)
    return _build(ctx, ResampleConfig, **kwargs)


def _outlier_from(raw: Any, ctx: str) -> Optional[OutlierConfig]:
    if raw is None:
        return None
    section = _as_mapping(raw, ctx)
    kwargs = dict(
        block_shots=_take(section, "block_shots", ctx, int, 10_000),
        agreement_threshold=_take(section, "agreement_threshold", ctx, float, 0.1),
    )
    _reject_unknown(section, ctx)
    return _build(ctx, OutlierConfig, **kwargs)


def _run_from(raw: Any, ctx: str) -> RunConfig:
    section = _as_mapping(raw, ctx)
    policy = _policy_from(section.pop("policy", None), f"{ctx}.policy")
    noise = _noise_from(section.pop("noise", None), f"{ctx}.noise")
    resample = _resample_from(section.pop("resample", None), f"{ctx}.resample")
    outlier = _outlier_from(section.pop("outlier_correction", None), f"{ctx}.outlier_correction")
    kwargs = dict(
        max_shots=_take(section, "max_shots", ctx, int, DEFAULT_MAX_SHOTS),
        n_particles=_take(section, "n_particles", ctx, int, 50_000),
        radius_R0=_take(section, "radius_r0", ctx, float, 10.0),
        seed=_take(section, "seed", ctx, int, 0),
        record_stride=_take(section, "record_stride", ctx, int, None),
        ideal_inference=_take(section, "ideal_inference", ctx, bool, False),
    )
    _reject_unknown(section, ctx)
    return _build(
        ctx,
        RunConfig,
        policy=policy,
        noise=noise,
        resample=resample,
        outlier_correction=outlier,
        **kwargs,
    )


def _ensemble_from(raw: Any, ctx: str, extra_keys: tuple[str, ...] = ()) -> tuple[EnsembleConfig, dict]:
    section = _as_mapping(raw, ctx)
    extras = {key: section.pop(key, None) for key in extra_keys}
    if "base" not in section:
        raise ValidationError(f"missing required key 'base' in {ctx}")
    base = _run_from(section.pop("base"), f"{ctx}.base")
    n_samples = _take(section, "n_samples", ctx, int, None, required=True)
    parallelism = _take(section, "parallelism", ctx, int, 1)
    variants_raw = section.pop("variants", None)
    _reject_unknown(section, ctx)
    variants: Optional[tuple[PolicyParams, ...]] = None
    if variants_raw is not None:
        if not isinstance(variants_raw, list) or not variants_raw:
            raise ValidationError(f"'variants' in {ctx} must be a nonempty list")
        variants = tuple(
            _policy_from(entry, f"{ctx}.variants[{i}]") for i, entry in enumerate(variants_raw)
        )
    cfg = _build(
        ctx,
        EnsembleConfig,
        n_samples=n_samples,
        base=base,
        variants=variants,
        parallelism=parallelism,
    )
    return cfg, extras


def _float_list(raw: Any, ctx: str) -> tuple[float, ...]:
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"{ctx} must be a nonempty list of numbers")
    values = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(f"{ctx}[{i}] must be a number, got {v!r}")
        values.append(float(v))
    return tuple(values)


def _int_list(raw: Any, ctx: str) -> tuple[int, ...]:
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"{ctx} must be a nonempty list of integers")
    values = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(f"{ctx}[{i}] must be an integer, got {v!r}")
        values.append(v)
    return tuple(values)


def _oracle_from(raw: Any, ctx: str) -> OracleCheckConfig:
    section = _as_mapping(raw, ctx)
    noise = _noise_from(section.pop("noise", None), f"{ctx}.noise")
    resample = _resample_from(section.pop("resample", None), f"{ctx}.resample")
    kwargs = dict(
        n_particles=_take(section, "n_particles", ctx, int, 10_000),
        radius_r0=_take(section, "radius_r0", ctx, float, 3.0),
        shots=_take(section, "shots", ctx, int, 50),
        grid_points=_take(section, "grid_points", ctx, int, 301),
        seed=_take(section, "seed", ctx, int, 0),
    )
    _reject_unknown(section, ctx)
    return _build(ctx, OracleCheckConfig, noise=noise, resample=resample, **kwargs)


def load_config(path: str, kind: str = "run"):
    """Read, parse and validate the config document for one subcommand.

    kind is one of run, ensemble, table, gridsearch, oracle-check.  Raises
    ParseError for a malformed document, ValidationError for schema
    violations, and lets I/O errors (OSError) propagate.
    """
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a mapping")

    if kind == "run":
        return _run_from(raw, "run config")
    if kind == "ensemble":
        cfg, _ = _ensemble_from(raw, "ensemble config")
        return cfg
    if kind == "table":
        cfg, extras = _ensemble_from(
            raw, "table config", extra_keys=("thresholds", "checkpoints")
        )
        if extras["thresholds"] is None:
            raise ValidationError("missing required key 'thresholds' in table config")
        if extras["checkpoints"] is None:
            raise ValidationError("missing required key 'checkpoints' in table config")
        return TableConfig(
            ensemble=cfg,
            thresholds=_float_list(extras["thresholds"], "thresholds"),
            checkpoints=_int_list(extras["checkpoints"], "checkpoints"),
        )
    if kind == "gridsearch":
        cfg, extras = _ensemble_from(
            raw, "gridsearch config", extra_keys=("a_values", "b_values", "budget_shots")
        )
        if extras["budget_shots"] is None:
            raise ValidationError("missing required key 'budget_shots' in gridsearch config")
        if isinstance(extras["budget_shots"], bool) or not isinstance(extras["budget_shots"], int):
            raise ValidationError("'budget_shots' must be an integer")
        return GridSearchConfig(
            ensemble=cfg,
            a_values=_float_list(extras["a_values"], "a_values"),
            b_values=_float_list(extras["b_values"], "b_values"),
            budget_shots=extras["budget_shots"],
        )
    if kind == "oracle-check":
        return _oracle_from(raw, "oracle-check config")
    raise ValueError(f"unknown config kind {kind!r}")


def _policy_to_dict(params: PolicyParams) -> dict:
    out = {
        "a_policy": params.a_policy,
        "b_policy": params.b_policy,
        "m_prime_max": params.m_prime_max,
        "c_threshold": params.c_threshold,
        "robust": params.robust,
    }
    if params.nonadaptive_radius is not None:
        out["nonadaptive_radius"] = params.nonadaptive_radius
    return out


def _run_to_dict(cfg: RunConfig) -> dict:
    out = {
        "max_shots": cfg.max_shots,
        "n_particles": cfg.n_particles,
        "radius_r0": cfg.radius_R0,
        "seed": cfg.seed,
        "ideal_inference": cfg.ideal_inference,
        "policy": _policy_to_dict(cfg.policy),
        "noise": {"p_error": cfg.noise.p_error},
        "resample": {
            "a_lw": cfg.resample.a_lw,
            "ess_threshold": cfg.resample.ess_threshold,
            "systematic": cfg.resample.systematic,
        },
    }
    if cfg.record_stride is not None:
        out["record_stride"] = cfg.record_stride
    if cfg.outlier_correction is not None:
        out["outlier_correction"] = {
            "block_shots": cfg.outlier_correction.block_shots,
            "agreement_threshold": cfg.outlier_correction.agreement_threshold,
        }
    return out


def config_to_dict(cfg) -> dict:
    """Serialize a validated config back to its document form; reloading
    the emitted document yields an equal config."""
    if isinstance(cfg, RunConfig):
        return _run_to_dict(cfg)
    if isinstance(cfg, EnsembleConfig):
        out = {
            "n_samples": cfg.n_samples,
            "parallelism": cfg.parallelism,
            "base": _run_to_dict(cfg.base),
        }
        if cfg.variants is not None:
            out["variants"] = [_policy_to_dict(v) for v in cfg.variants]
        return out
    if isinstance(cfg, TableConfig):
        out = config_to_dict(cfg.ensemble)
        out["thresholds"] = list(cfg.thresholds)
        out["checkpoints"] = list(cfg.checkpoints)
        return out
    if isinstance(cfg, GridSearchConfig):
        out = config_to_dict(cfg.ensemble)
        out["a_values"] = list(cfg.a_values)
        out["b_values"] = list(cfg.b_values)
        out["budget_shots"] = cfg.budget_shots
        return out
    if isinstance(cfg, OracleCheckConfig):
        return {
            "n_particles": cfg.n_particles,
            "radius_r0": cfg.radius_r0,
            "shots": cfg.shots,
            "grid_points": cfg.grid_points,
            "seed": cfg.seed,
            "noise": {"p_error": cfg.noise.p_error},
            "resample": {
                "a_lw": cfg.resample.a_lw,
                "ess_threshold": cfg.resample.ess_threshold,
                "systematic": cfg.resample.systematic,
            },
        }
    raise TypeError(f"cannot serialize config of type {type(cfg).__name__}")
