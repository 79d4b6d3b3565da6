"""JSON checkpoints for policies, reward models and density models."""
from __future__ import annotations

import json
import os

import numpy as np

from .clustering import Clustering
from .density import FADensity
from .nn import MlpParams
from .policies import SoftmaxPolicy, TwoStagePolicy
from .regression import RewardModel
from .types import ActionSet

FORMAT_VERSION = 1


def _actions(a: ActionSet):
    return [[float(v) for v in row] for row in a.embeddings]


def to_dict(obj) -> dict:
    if isinstance(obj, SoftmaxPolicy):
        return {
            "kind": "softmax_policy",
            "beta": float(obj.beta),
            "action_embeddings": _actions(obj.action_set),
            "mlp": obj.mlp.to_dict(),
        }
    if isinstance(obj, TwoStagePolicy):
        return {
            "kind": "two_stage_policy",
            "first_stage": to_dict(obj.first_stage),
            "clustering": obj.clustering.to_dict(),
            "reward_model": None if obj.reward_model is None else to_dict(obj.reward_model),
        }
    if isinstance(obj, RewardModel):
        return {
            "kind": "reward_model",
            "action_embeddings": _actions(obj.action_set),
            "y_mean": float(obj.y_mean),
            "y_std": float(obj.y_std),
            "mlp": obj.mlp.to_dict(),
        }
    if isinstance(obj, FADensity):
        return obj.to_dict()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def from_dict(d: dict):
    kind = d.get("kind")
    if kind == "softmax_policy":
        return SoftmaxPolicy(MlpParams.from_dict(d["mlp"]), ActionSet(np.array(d["action_embeddings"])), float(d["beta"]))
    if kind == "two_stage_policy":
        rm = d.get("reward_model")
        return TwoStagePolicy(from_dict(d["first_stage"]), Clustering.from_dict(d["clustering"]), None if rm is None else from_dict(rm))
    if kind == "reward_model":
        return RewardModel(
            MlpParams.from_dict(d["mlp"]), ActionSet(np.array(d["action_embeddings"])), float(d["y_mean"]), float(d["y_std"])
        )
    if kind == "fa_density":
        return FADensity.from_dict(d)
    raise ValueError(f"unknown checkpoint kind {kind!r}")


def save(obj, path) -> None:
    payload = {"format_version": FORMAT_VERSION, **to_dict(obj)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"), allow_nan=False)
        fh.write("\n")


def load(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {d.get('format_version')!r}")
    return from_dict(d)
