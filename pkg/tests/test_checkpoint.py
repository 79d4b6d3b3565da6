import numpy as np
import pytest

from dso_opl import checkpoint
from dso_opl.clustering import cluster_actions
from dso_opl.density import fit_density_model
from dso_opl.kernels import KernelConfig
from dso_opl.nn import init_mlp
from dso_opl.policies import SoftmaxPolicy, TwoStagePolicy
from dso_opl.regression import RewardModel
from dso_opl.types import ActionSet

from helpers import random_dataset


def _objects():
    rng = np.random.default_rng(0)
    acts = ActionSet(rng.normal(size=(6, 2)))
    pol = SoftmaxPolicy.initialize(3, acts, beta=0.5, hidden=4, rng=rng)
    rm = RewardModel(init_mlp(5, 1, 4, rng), acts, 0.3, 2.0)
    cl = cluster_actions(acts, 2, rng=1)
    first = SoftmaxPolicy.initialize(3, ActionSet(cl.centers), hidden=4, rng=rng)
    dens = fit_density_model(random_dataset(rng, n=10, support=1), KernelConfig("uniform", 0.7), epochs=1, hidden=4, rng=0)
    return {"policy": pol, "reward_model": rm, "two_stage": TwoStagePolicy(first, cl, rm), "density": dens}


@pytest.mark.parametrize("name", ["policy", "reward_model", "two_stage", "density"])
def test_round_trip_preserves_predictions(tmp_path, name):
    obj = _objects()[name]
    path = tmp_path / f"{name}.json"
    checkpoint.save(obj, path)
    back = checkpoint.load(path)
    assert type(back) is type(obj)
    X = np.random.default_rng(1).normal(size=(4, 3))
    if name == "density":
        S = np.random.default_rng(2).normal(size=(4, 4))
        X = np.random.default_rng(1).normal(size=(4, 5))
        assert np.array_equal(back.predict(X, S), obj.predict(X, S))
        assert back.kernel == obj.kernel
    elif name == "reward_model":
        assert np.array_equal(back.predict_all(X), obj.predict_all(X))
    else:
        assert np.array_equal(back.action_probs(X), obj.action_probs(X))
    checkpoint.save(back, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_bad_checkpoints(tmp_path):
    with pytest.raises(TypeError):
        checkpoint.to_dict(object())
    with pytest.raises(ValueError):
        checkpoint.from_dict({"kind": "mystery"})
    p = tmp_path / "old.json"
    p.write_text('{"format_version": 0, "kind": "softmax_policy"}')
    with pytest.raises(ValueError, match="unsupported"):
        checkpoint.load(p)
    with pytest.raises(FileNotFoundError):
        checkpoint.load(tmp_path / "missing.json")
