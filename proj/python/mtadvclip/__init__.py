"""Multi-task adversarial attacks against a toy CLIP and its dense-prediction derivatives."""

import json

from . import _core
from ._core import (
    ConfigError,
    GateFailure,
    UndefinedAsr,
    asr,
    kl_divergence,
    miou,
    pgd_step,
    project_linf,
    recall_at_1,
    round_decimal,
    softmax_distribution,
    split_budget,
)

__all__ = [
    "ConfigError",
    "GateFailure",
    "UndefinedAsr",
    "asr",
    "attack",
    "default_config",
    "generate",
    "generate_dataset",
    "kl_divergence",
    "miou",
    "pgd_step",
    "project_linf",
    "recall_at_1",
    "report",
    "resolve_config",
    "round_decimal",
    "run_all",
    "softmax_distribution",
    "split_budget",
    "train",
]


def default_config():
    """The built-in run configuration as a dict."""
    return json.loads(_core.default_config_json())


def resolve_config(config=None):
    """Applies `config` on top of the defaults and returns the full configuration."""
    return json.loads(_core.resolve_config_json(json.dumps(config or {})))


def generate_dataset(spec=None):
    """Generates the synthetic shapes dataset; returns {"train", "val", "test"} lists of samples."""
    return _core.generate_dataset(json.dumps(spec or {}))


def _command(fn):
    def run(config=None, out="", overwrite=False, resume=False):
        return fn(json.dumps(config or {}), str(out), overwrite, resume)

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


generate = _command(_core.generate)
train = _command(_core.train)
attack = _command(_core.attack)
report = _command(_core.report)
run_all = _command(_core.run_all)
