"""Conditioned-latent VAE for image anomaly classification."""

import json
from pathlib import Path

from . import _clvae
from ._clvae import (
    ClvaeError,
    ConfigError,
    DataError,
    NumericalError,
    cluster_loss,
    distance_loss,
    frechet_distance,
    kl_divergence,
    kmeans,
    reconstruction_loss,
    roc_auc,
)

__all__ = [
    "ClvaeError", "ConfigError", "DataError", "NumericalError",
    "default_config", "config_hash", "with_overrides",
    "generate", "train", "evaluate", "sweep", "report",
    "cluster_loss", "distance_loss", "frechet_distance", "kl_divergence",
    "kmeans", "reconstruction_loss", "roc_auc",
]


def default_config():
    return json.loads(_clvae.default_config())


def with_overrides(config, **dotted):
    """Copy of config with keys like train__epochs=3 (double underscore = dot)."""
    out = json.loads(json.dumps(config))
    for key, value in dotted.items():
        node = out
        *parents, leaf = key.split("__")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return json.loads(_clvae.normalize_config(json.dumps(out)))


def config_hash(config):
    return _clvae.config_hash(json.dumps(config))


def generate(config):
    return Path(_clvae.generate(json.dumps(config)))


def train(config):
    return Path(_clvae.train(json.dumps(config)))


def evaluate(config, checkpoint=""):
    run = Path(_clvae.evaluate(json.dumps(config), str(checkpoint)))
    return json.loads((run / "report.json").read_text())


def sweep(config):
    run = Path(_clvae.sweep(json.dumps(config)))
    return json.loads((run / "sweep.json").read_text())


def report(run_dir):
    return Path(_clvae.report(str(run_dir)))
