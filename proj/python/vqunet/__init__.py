"""Python bindings for the VQUNet purification core.

Configs are plain dicts mirroring the JSON config files; missing keys take the
desk-scale defaults and unknown keys raise ``ConfigError``.
"""

import json

from . import _vqunet
from ._vqunet import (
    CheckpointError,
    Classifier,
    ConfigError,
    Error,
    IdxError,
    ShapeError,
    VQUNet,
    attack,
    load_idx,
    nearest_code,
    synthetic_dataset,
)

__all__ = [
    "CheckpointError",
    "Classifier",
    "ConfigError",
    "Error",
    "IdxError",
    "ShapeError",
    "VQUNet",
    "attack",
    "desk_scale_config",
    "full_run",
    "load_idx",
    "make_classifier",
    "make_purifier",
    "nearest_code",
    "resolve_config",
    "synthetic_dataset",
    "train_classifier",
    "version",
]

__version__ = _vqunet.version()


def version():
    return _vqunet.version()


def desk_scale_config():
    return json.loads(_vqunet.desk_scale_config_json())


def resolve_config(config):
    """Validates a run config dict and fills in every default."""
    return json.loads(_vqunet.resolve_config_json(json.dumps(config)))


def make_purifier(config):
    """Builds an untrained purifier from a purifier config dict."""
    return VQUNet(json.dumps(config))


def make_classifier(config):
    return Classifier(json.dumps(config))


def train_classifier(images, labels, config):
    return _vqunet.train_classifier(images, labels, json.dumps(config))


def full_run(config):
    """Trains every model, evaluates and writes the report; returns out_dir."""
    return _vqunet.full_run(json.dumps(config))
