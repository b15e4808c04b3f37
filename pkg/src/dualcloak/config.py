"""Run configuration: strict, versioned JSON schema plus dotted overrides.

Unknown keys anywhere in the tree are rejected so hyperparameter typos fail
loudly instead of silently running defaults. The parsed RunConfig
round-trips: parse -> to_dict -> parse gives an equal value.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .attacks import AttackConfig
from .errors import ConfigError, ParameterError
from .imaging import BlurParams

__all__ = [
    "RunConfig",
    "SCHEMA_VERSION",
    "apply_overrides",
    "load_config",
    "per_image_seed",
]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AttributeConfig:
    name: Optional[str] = None
    file: Optional[str] = None
    strength: Optional[float] = None


@dataclass(frozen=True)
class ParserConfig:
    name: str = "annotations"
    annotation_dir: Optional[str] = None


@dataclass(frozen=True)
class IoConfig:
    input: Optional[str] = None
    output_dir: Optional[str] = None
    save_mask: bool = True
    save_intermediate: bool = True
    record_timings: bool = False


@dataclass(frozen=True)
class ApiConfig:
    url: Optional[str] = None
    timeout: float = 10.0
    retries: int = 2
    # Upper bound on concurrent in-flight requests; 1 means sequential.
    max_parallel: int = 1


@dataclass(frozen=True)
class RunConfig:
    attack: AttackConfig = field(default_factory=AttackConfig)
    ensemble: tuple = ("toy-conv-a", "toy-conv-b", "toy-conv-c")
    holdout: Optional[str] = "toy-conv-d"
    generator: Optional[str] = "toy-ae"
    attribute: AttributeConfig = field(default_factory=AttributeConfig)
    parser: ParserConfig = field(default_factory=ParserConfig)
    target_image: Optional[str] = None
    io: IoConfig = field(default_factory=IoConfig)
    api: ApiConfig = field(default_factory=ApiConfig)
    thresholds_file: Optional[str] = None
    far: float = 0.01
    seed: int = 0
    workers: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "workers": self.workers,
            "far": self.far,
            "attack": {
                "mode": self.attack.mode,
                "epsilon": self.attack.epsilon,
                "epsilon_iter": self.attack.epsilon_iter,
                "off_steps": self.attack.off_steps,
                "eta": self.attack.eta,
                "eta_iter": self.attack.eta_iter,
                "n_latent_steps": self.attack.n_latent_steps,
                "gamma": self.attack.gamma,
                "blur": {
                    "kernel_size": self.attack.blur.kernel_size,
                    "sigma": self.attack.blur.sigma,
                },
                "targeted": self.attack.targeted,
                "composition": self.attack.composition,
            },
            "ensemble": list(self.ensemble),
            "holdout": self.holdout,
            "generator": self.generator,
            "attribute": {
                "name": self.attribute.name,
                "file": self.attribute.file,
                "strength": self.attribute.strength,
            },
            "parser": {
                "name": self.parser.name,
                "annotation_dir": self.parser.annotation_dir,
            },
            "target_image": self.target_image,
            "io": {
                "input": self.io.input,
                "output_dir": self.io.output_dir,
                "save_mask": self.io.save_mask,
                "save_intermediate": self.io.save_intermediate,
                "record_timings": self.io.record_timings,
            },
            "api": {
                "url": self.api.url,
                "timeout": self.api.timeout,
                "retries": self.api.retries,
                "max_parallel": self.api.max_parallel,
            },
            "thresholds_file": self.thresholds_file,
        }


def _check_keys(d: dict, allowed, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(d).__name__}")
    unknown = set(d) - set(allowed)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(
            f"unknown config key {where}{sorted(unknown)[0]!r} "
            f"(allowed: {', '.join(sorted(allowed))})"
        )


def _typed(d: dict, key: str, kinds, path: str, default=None, required=False):
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(f"{path}{key} is required")
        return default
    value = d[key]
    if kinds is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kinds is int and isinstance(value, bool):
        raise ConfigError(f"{path}{key}: expected int, got bool")
    if not isinstance(value, kinds if isinstance(kinds, tuple) else (kinds,)):
        want = kinds.__name__ if not isinstance(kinds, tuple) else "/".join(k.__name__ for k in kinds)
        raise ConfigError(f"{path}{key}: expected {want}, got {type(value).__name__}")
    return value


def _parse_attack(d: dict) -> AttackConfig:
    _check_keys(d, {"mode", "epsilon", "epsilon_iter", "off_steps", "eta",
                    "eta_iter", "n_latent_steps", "gamma", "blur", "targeted",
                    "composition"}, "attack")
    blur_d = d.get("blur", {}) or {}
    _check_keys(blur_d, {"kernel_size", "sigma"}, "attack.blur")
    defaults = AttackConfig()
    try:
        blur = BlurParams(
            kernel_size=_typed(blur_d, "kernel_size", int, "attack.blur.",
                               defaults.blur.kernel_size),
            sigma=_typed(blur_d, "sigma", float, "attack.blur.", defaults.blur.sigma),
        )
        return AttackConfig(
            mode=_typed(d, "mode", str, "attack.", defaults.mode),
            epsilon=_typed(d, "epsilon", float, "attack.", defaults.epsilon),
            epsilon_iter=_typed(d, "epsilon_iter", float, "attack.",
                                defaults.epsilon_iter),
            off_steps=_typed(d, "off_steps", int, "attack.", defaults.off_steps),
            eta=_typed(d, "eta", float, "attack.", defaults.eta),
            eta_iter=_typed(d, "eta_iter", float, "attack.", defaults.eta_iter),
            n_latent_steps=_typed(d, "n_latent_steps", int, "attack.",
                                  defaults.n_latent_steps),
            gamma=_typed(d, "gamma", float, "attack.", defaults.gamma),
            blur=blur,
            targeted=_typed(d, "targeted", bool, "attack.", defaults.targeted),
            composition=_typed(d, "composition", str, "attack.",
                               defaults.composition),
        )
    except ParameterError as exc:
        raise ConfigError(f"attack: {exc}") from exc


def parse_config(data: dict) -> RunConfig:
    _check_keys(data, {"schema_version", "seed", "workers", "far", "attack",
                       "ensemble", "holdout", "generator", "attribute",
                       "parser", "target_image", "io", "api",
                       "thresholds_file"}, "")
    version = _typed(data, "schema_version", int, "", required=True)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {version} unsupported; this build reads {SCHEMA_VERSION}"
        )

    ensemble = data.get("ensemble")
    if ensemble is None:
        ensemble = RunConfig().ensemble
    elif (not isinstance(ensemble, list) or not ensemble
          or not all(isinstance(n, str) for n in ensemble)):
        raise ConfigError("ensemble: expected a non-empty list of embedder names")

    attr_d = data.get("attribute", {}) or {}
    _check_keys(attr_d, {"name", "file", "strength"}, "attribute")
    parser_d = data.get("parser", {}) or {}
    _check_keys(parser_d, {"name", "annotation_dir"}, "parser")
    io_d = data.get("io", {}) or {}
    _check_keys(io_d, {"input", "output_dir", "save_mask", "save_intermediate",
                       "record_timings"}, "io")
    api_d = data.get("api", {}) or {}
    _check_keys(api_d, {"url", "timeout", "retries", "max_parallel"}, "api")

    parser_name = _typed(parser_d, "name", str, "parser.", "annotations")
    if parser_name != "annotations":
        raise ConfigError(
            f"parser.name: only 'annotations' is configurable here, got {parser_name!r}"
        )

    far = _typed(data, "far", float, "", 0.01)
    if not 0.0 < far <= 1.0:
        raise ConfigError(f"far: must be in (0, 1], got {far}")
    workers = _typed(data, "workers", int, "")
    if workers is not None and workers < 1:
        raise ConfigError(f"workers: must be >= 1, got {workers}")
    api = ApiConfig(
        url=_typed(api_d, "url", str, "api."),
        timeout=_typed(api_d, "timeout", float, "api.", 10.0),
        retries=_typed(api_d, "retries", int, "api.", 2),
        max_parallel=_typed(api_d, "max_parallel", int, "api.", 1),
    )
    if api.max_parallel < 1:
        raise ConfigError(f"api.max_parallel: must be >= 1, got {api.max_parallel}")
    if api.retries < 0:
        raise ConfigError(f"api.retries: must be >= 0, got {api.retries}")
    if api.timeout <= 0:
        raise ConfigError(f"api.timeout: must be > 0, got {api.timeout}")

    return RunConfig(
        attack=_parse_attack(data.get("attack", {}) or {}),
        ensemble=tuple(ensemble),
        holdout=_typed(data, "holdout", str, ""),
        generator=_typed(data, "generator", str, ""),
        attribute=AttributeConfig(
            name=_typed(attr_d, "name", str, "attribute."),
            file=_typed(attr_d, "file", str, "attribute."),
            strength=_typed(attr_d, "strength", float, "attribute."),
        ),
        parser=ParserConfig(
            name=parser_name,
            annotation_dir=_typed(parser_d, "annotation_dir", str, "parser."),
        ),
        target_image=_typed(data, "target_image", str, ""),
        io=IoConfig(
            input=_typed(io_d, "input", str, "io."),
            output_dir=_typed(io_d, "output_dir", str, "io."),
            save_mask=_typed(io_d, "save_mask", bool, "io.", True),
            save_intermediate=_typed(io_d, "save_intermediate", bool, "io.", True),
            record_timings=_typed(io_d, "record_timings", bool, "io.", False),
        ),
        api=api,
        thresholds_file=_typed(data, "thresholds_file", str, ""),
        far=far,
        seed=_typed(data, "seed", int, "", 0),
        workers=workers,
    )


def apply_overrides(data: dict, overrides) -> dict:
    """Apply dotted-path overrides (["attack.mode=ftm", "seed=3"]) to a raw
    config dict. Values parse as JSON with a bare-string fallback."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {dotted!r} descends into non-object {part!r}")
            node = nxt
        node[parts[-1]] = value
    return out


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if overrides:
        data = apply_overrides(data, overrides)
    return parse_config(data)


def per_image_seed(master_seed: int, name: str) -> int:
    """Stable per-image seed: hash the master seed with the file name, so a
    reordered or filtered input set reproduces identical per-image results."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
