"""Strict JSON config documents for experiment runs.

Unknown keys are errors, not warnings: a typoed loss weight silently falling
back to its default would invalidate an experiment. Missing keys take the
documented defaults. Every config hashes reproducibly for run manifests.
"""

import hashlib
import json

from .dataio import SynthSpec
from .exceptions import ConfigError
from .losses import KDParams, MarginParams
from .ranking import ScoreParams
from .trainer import ExperimentConfig, LossWeights, OptimizerParams, Schedule

CONFIG_VERSION = 1

_TOP_KEYS = {
    "version", "dataset", "variant", "teacher_hidden", "student_hidden",
    "embed_dim", "teacher_embed_dim", "activation", "weights", "score", "kd",
    "margin", "optimizer", "schedule", "batch_size", "positives_per_batch",
    "enumeration_cap", "seed",
}
_SECTION_KEYS = {
    "weights": {"classification", "verification", "triplet", "transfer"},
    "score": {"alpha", "beta"},
    "kd": {"temperature", "weight"},
    "optimizer": {"lr", "momentum", "weight_decay"},
    "schedule": {"epochs", "decay_epochs", "decay_factor"},
}
_SYNTH_KEYS = {
    "num_identities", "samples_per_identity", "feature_dim",
    "intra_class_stddev", "inter_class_separation", "heldout_fraction", "seed",
}


def _reject_unknown(doc: dict, allowed: set, context: str):
    unknown = set(doc) - allowed
    if unknown:
        names = ", ".join(sorted(f"{context}{k}" for k in unknown))
        raise ConfigError(f"unknown config key(s): {names}")


def _section(doc: dict, name: str, cls, **renames):
    sub = doc.get(name)
    if sub is None:
        return cls()
    if not isinstance(sub, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    _reject_unknown(sub, _SECTION_KEYS[name], f"{name}.")
    kwargs = {renames.get(k, k): v for k, v in sub.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from exc


def parse_synth_spec(doc: dict) -> SynthSpec:
    if not isinstance(doc, dict):
        raise ConfigError("dataset spec must be an object")
    _reject_unknown(doc, _SYNTH_KEYS, "dataset.")
    try:
        return SynthSpec(**doc)
    except ValueError as exc:
        raise ConfigError(f"bad dataset spec: {exc}") from exc


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    if "version" not in doc:
        raise ConfigError("config must declare a 'version' field")
    if doc["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {doc['version']!r}")
    _reject_unknown(doc, _TOP_KEYS, "")

    dataset = doc.get("dataset")
    if isinstance(dataset, dict):
        dataset = parse_synth_spec(dataset)
    elif dataset is not None and not isinstance(dataset, str):
        raise ConfigError("dataset must be a path string or a synth-spec object")

    if "margin" in doc and not isinstance(doc["margin"], (int, float)):
        raise ConfigError("margin must be a number")

    kwargs = {}
    for key in ("variant", "embed_dim", "teacher_embed_dim", "activation",
                "batch_size", "positives_per_batch", "enumeration_cap", "seed"):
        if key in doc:
            kwargs[key] = doc[key]
    if "teacher_hidden" in doc:
        kwargs["teacher_hidden"] = tuple(doc["teacher_hidden"])
    if "student_hidden" in doc:
        kwargs["student_hidden"] = tuple(doc["student_hidden"])
    try:
        return ExperimentConfig(
            dataset=dataset,
            weights=_section(doc, "weights", LossWeights),
            score=_section(doc, "score", ScoreParams),
            kd=_section(doc, "kd", KDParams),
            margin=MarginParams(margin=doc["margin"]) if "margin" in doc else MarginParams(),
            optimizer=_section(doc, "optimizer", OptimizerParams),
            schedule=_section(doc, "schedule", Schedule),
            **kwargs,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(doc)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(config.to_dict()).encode()).hexdigest()
