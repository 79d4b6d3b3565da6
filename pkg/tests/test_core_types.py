from dataclasses import replace

import numpy as np
import pytest

from dso_opl.types import (
    ActionSet,
    Context,
    LoggedDataset,
    Sentence,
    as_batch,
    validate_dataset,
)
from helpers import random_dataset


def test_well_formed_dataset_has_no_violations():
    ds = random_dataset(np.random.default_rng(0), n=3)
    assert validate_dataset(ds) == []


def test_zero_propensity_is_flagged_at_its_record():
    ds = random_dataset(np.random.default_rng(1), n=3)
    bad = replace(ds.records[0], propensity=0.0)
    problems = validate_dataset(LoggedDataset((bad,) + ds.records[1:], ds.metadata))
    assert [(v.index, v.field) for v in problems] == [(0, "propensity")]


def test_propensity_one_is_valid():
    ds = random_dataset(np.random.default_rng(2), n=2)
    ok = replace(ds.records[1], propensity=1.0)
    assert validate_dataset(LoggedDataset((ds.records[0], ok), ds.metadata)) == []


def test_size_mismatch():
    ds = random_dataset(np.random.default_rng(3), n=4)
    meta = replace(ds.metadata, size=5)
    problems = validate_dataset(LoggedDataset(ds.records, meta))
    assert len(problems) == 1 and problems[0].field == "size" and problems[0].index is None


def test_action_out_of_range_and_bad_dims():
    ds = random_dataset(np.random.default_rng(4), n=2, n_actions=3)
    r0 = replace(ds.records[0], action=3)
    r1 = replace(ds.records[1], sentence=Sentence(np.zeros(7)))
    fields = {(v.index, v.field) for v in validate_dataset(LoggedDataset((r0, r1), ds.metadata))}
    assert fields == {(0, "action"), (1, "sentence")}


def test_non_finite_sentence_is_reported_not_raised():
    ds = random_dataset(np.random.default_rng(7), n=1, dims=(2, 3, 2, 2))
    bad = replace(ds.records[0], sentence=Sentence(np.array([1.0, np.nan])))
    problems = validate_dataset(LoggedDataset((bad,), ds.metadata))
    assert [(v.index, v.field) for v in problems] == [(0, "sentence")]


def test_validation_is_idempotent_and_pure():
    ds = random_dataset(np.random.default_rng(5), n=3)
    before = [r.reward for r in ds.records]
    assert validate_dataset(ds) == validate_dataset(ds)
    assert [r.reward for r in ds.records] == before


def test_value_objects_reject_bad_input():
    with pytest.raises(ValueError):
        Sentence(np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        ActionSet(np.zeros((0, 3)))


def test_batch_columns():
    ds = random_dataset(np.random.default_rng(6), n=5, support=2)
    b = as_batch(ds)
    assert b.contexts.shape == (5, 5)
    assert b.sentences.shape == (5, 4) and b.noisy_sentences.shape == (5, 4)
    assert np.array_equal(b.actions, [r.action for r in ds.records])
    sub = b.take(np.array([4, 0]))
    assert np.array_equal(sub.rewards, b.rewards[[4, 0]])
    assert np.array_equal(Context(ds.records[0].context.user, ds.records[0].context.query).vector, b.contexts[0])
