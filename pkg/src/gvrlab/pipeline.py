"""Schema-validated JSON configuration shared by every command."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

SECTIONS = ("flow_degrade", "sdedit", "model", "train", "sampler", "attention", "curation")


class ConfigError(ValueError):
    """Invalid configuration; ``pointer`` is the JSON pointer of the offending value."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


@lru_cache(maxsize=1)
def schema() -> dict:
    text = resources.files("gvrlab").joinpath("schema/pipeline.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def _fill_defaults(doc: dict) -> dict:
    out = {}
    props = schema()["properties"]
    for name in SECTIONS:
        section = dict(doc.get(name, {}))
        for key, spec in props[name]["properties"].items():
            section.setdefault(key, copy.deepcopy(spec.get("default")))
        out[name] = section
    return out


def validate(doc) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            path += extra[:1]
            message = f"unknown key {extra[0]!r}" if extra else err.message
            raise ConfigError(message, _pointer(path))
        raise ConfigError(err.message, _pointer(path))


@dataclass(frozen=True)
class PipelineConfig:
    """All sections with defaults filled in; each is a plain dict."""

    flow_degrade: dict
    sdedit: dict
    model: dict
    train: dict
    sampler: dict
    attention: dict
    curation: dict

    @classmethod
    def from_dict(cls, doc) -> "PipelineConfig":
        validate(doc)
        full = _fill_defaults(doc)
        cfg = cls(**full)
        cfg._check_semantics()
        return cfg

    @classmethod
    def load(cls, path=None) -> "PipelineConfig":
        if path is None:
            return cls.from_dict({})
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"not valid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {name: copy.deepcopy(getattr(self, name)) for name in SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def _check_semantics(self) -> None:
        """Cross-field rules the schema cannot express, reported with pointers."""
        for name, build in (("model", self.model_config), ("flow_degrade", self.flow_params),
                            ("curation", self.curation_config)):
            try:
                build()
            except ValueError as exc:
                raise ConfigError(str(exc), "/" + name) from exc

    # typed views ---------------------------------------------------------------

    def flow_params(self):
        from .degrade import FlowDegradeParams

        return FlowDegradeParams.from_dict(self.flow_degrade)

    def model_config(self):
        from .model import GvrConfig

        return GvrConfig.from_dict(self.model)

    def curation_config(self):
        from .curation import CurationConfig

        return CurationConfig.from_dict(self.curation)
