"""Pipeline configuration: a single JSON file, environment overrides
(``DEREC_`` prefix), and validation with the defaults the pipeline is
documented to run at (k=10, flat index, per-claim scope, length budget
512).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .corpus import SPLITS, resolve_scheme
from .errors import ValidationError
from .retrieve import SCOPES

ENV_PREFIX = "DEREC_"


@dataclass
class PipelineConfig:
    dataset: str
    scheme: str
    out_dir: str = "derec-out"
    seed: int = 0

    # embedding stage
    provider: str = "hash"
    dim: int = 64
    model: str = "default"
    max_batch: int = 64
    timeout: float = 30.0
    retries: int = 2
    claim_prefix: str = ""
    evidence_prefix: str = ""

    # retrieval stage
    k: int = 10
    scope: str = "per-claim"
    index_kind: str = "flat"
    n_clusters: int = 32
    n_probe: int = 8

    # verification stage
    classifier: str = "head"  # "head" or a service URL
    max_len: int = 512
    epochs: int = 200
    lr: float = 0.1
    batch_size: int = 32
    l2: float = 0.0
    train_split: str = "train"
    eval_split: str = "test"


# dataclasses stores annotations as strings under `from __future__ import
# annotations`; resolve the (all scalar) field types once.
_FIELD_TYPES = {
    f.name: {"str": str, "int": int, "float": float}[f.type]
    for f in dataclasses.fields(PipelineConfig)
}
_REQUIRED = ("dataset", "scheme")


def _coerce(name: str, value, target_type):
    if isinstance(value, target_type) and not (
        target_type is float and isinstance(value, bool)
    ):
        return value
    if target_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        try:
            if target_type is int:
                return int(value)
            if target_type is float:
                return float(value)
            if target_type is str:
                return value
        except ValueError:
            pass
    raise ValidationError(
        f"config key {name!r}: expected {target_type.__name__}, got {value!r}"
    )


def _apply(settings: dict, source: Mapping, *, from_env: bool) -> None:
    for key, value in source.items():
        if from_env:
            if not key.startswith(ENV_PREFIX):
                continue
            key = key[len(ENV_PREFIX):].lower()
            if key not in _FIELD_TYPES:
                continue  # unrelated environment variable
        elif key not in _FIELD_TYPES:
            raise ValidationError(f"unknown config key {key!r}")
        settings[key] = _coerce(key, value, _FIELD_TYPES[key])


def load_config(path=None, *, overrides: Mapping | None = None,
                env: Mapping | None = None) -> PipelineConfig:
    """Merge file < environment < explicit overrides, then validate."""
    settings: dict = {}
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ValidationError(f"config file {path}: not a JSON object")
        _apply(settings, raw, from_env=False)

    _apply(settings, env if env is not None else os.environ, from_env=True)

    if overrides:
        _apply(settings, {k: v for k, v in overrides.items() if v is not None},
               from_env=False)

    missing = [key for key in _REQUIRED if key not in settings]
    if missing:
        raise ValidationError(f"config is missing required key(s): {missing}")

    config = PipelineConfig(**settings)
    check_config(config)
    return config


def check_config(config: PipelineConfig) -> None:
    resolve_scheme(config.scheme)
    if config.k < 1:
        raise ValidationError(f"k must be >= 1, got {config.k}")
    if config.scope not in SCOPES:
        raise ValidationError(f"scope must be one of {SCOPES}, got {config.scope!r}")
    if config.index_kind not in ("flat", "clustered"):
        raise ValidationError(
            f"index_kind must be 'flat' or 'clustered', got {config.index_kind!r}"
        )
    if config.dim < 1:
        raise ValidationError(f"dim must be >= 1, got {config.dim}")
    if config.max_len < 3:
        raise ValidationError(f"max_len must be >= 3, got {config.max_len}")
    if config.epochs < 1 or config.batch_size < 1:
        raise ValidationError("epochs and batch_size must be >= 1")
    if config.max_batch < 1:
        raise ValidationError(f"max_batch must be >= 1, got {config.max_batch}")
    for name in (config.train_split, config.eval_split):
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r} in config")
    if not (config.provider == "hash"
            or config.provider.startswith(("http://", "https://"))):
        raise ValidationError(
            f"provider must be 'hash' or an http(s) URL, got {config.provider!r}"
        )
    if not (config.classifier == "head"
            or config.classifier.startswith(("http://", "https://"))):
        raise ValidationError(
            f"classifier must be 'head' or an http(s) URL, got {config.classifier!r}"
        )

    dataset_path = Path(config.dataset)
    if dataset_path.exists():
        _check_scheme_against_dataset(dataset_path, config.scheme)


def _check_scheme_against_dataset(path: Path, scheme) -> None:
    """Reject configs whose scheme contradicts the dataset's labels."""
    scheme = resolve_scheme(scheme)
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                label = json.loads(line).get("label")
            except (json.JSONDecodeError, AttributeError):
                return  # full validation happens at ingest
            if isinstance(label, str) and label not in scheme:
                raise ValidationError(
                    f"scheme {scheme.name} contradicts dataset {path} "
                    f"(line {line_no} has label {label!r})"
                )


def validate_config(path, *, env: Mapping | None = None) -> PipelineConfig:
    """Load and validate a config file; all defaults resolved."""
    return load_config(path, env=env)
