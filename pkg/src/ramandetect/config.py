"""Experiment configuration file and deterministic output helpers."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .atom import AtomModel, build_ba137
from .pumping import DetectionSetup, default_setup
from .stats import REFERENCE_MODEL, HistogramModel
from .transfer import TransferConfig

CONFIG_KEYS = {"atom", "setup", "histogram_model", "transfer", "seed", "out"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration document."""


@dataclass
class ExperimentConfig:
    atom: AtomModel = field(default_factory=build_ba137)
    setup: DetectionSetup = field(default_factory=default_setup)
    model: HistogramModel = REFERENCE_MODEL
    transfer: TransferConfig = field(default_factory=TransferConfig)
    seed: int | None = None
    out: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        if not isinstance(d, Mapping):
            raise ConfigError("configuration must be a JSON object")
        extra = set(d) - CONFIG_KEYS
        if extra:
            raise ConfigError(f"unknown configuration keys: {sorted(extra)}")
        atom = build_ba137(d.get("atom"))
        if "setup" in d:
            setup = DetectionSetup.from_dict({"atom": atom.to_dict(), **d["setup"]})
            atom = setup.atom
        elif "atom" in d:
            setup = None  # default beams only make sense for the default atom
            try:
                setup = replace(default_setup(atom.b_field), atom=atom)
            except (ValueError, KeyError):
                pass
        else:
            setup = default_setup()
        seed = d.get("seed")
        if seed is not None and (not isinstance(seed, int) or seed < 0 or seed >= 2**64):
            raise ConfigError("seed must be an integer in [0, 2^64)")
        return cls(
            atom=atom,
            setup=setup,
            model=HistogramModel.from_dict(d["histogram_model"]) if "histogram_model" in d else REFERENCE_MODEL,
            transfer=TransferConfig.from_dict(d.get("transfer", {})),
            seed=seed,
            out=d.get("out"),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        d = {
            "setup": self.setup.to_dict() if self.setup is not None else None,
            "histogram_model": self.model.to_dict(),
            "transfer": self.transfer.to_dict(),
        }
        if self.seed is not None:
            d["seed"] = self.seed
        if self.out is not None:
            d["out"] = self.out
        return d


def atomic_write(path: str | os.PathLike, data: str | bytes):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
