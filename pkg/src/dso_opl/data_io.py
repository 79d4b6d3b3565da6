"""JSON Lines serialization of logged feedback.

Layout: a header line ``{"meta_data": {...}}`` followed by one record per line::

    {"meta_data": {"size": 2, "reward_type": "continuous", "reward_std": 1.0,
                   "action_embeddings": [[...], ...], "dims": {...}, "seed": 0}}
    {"context": [...], "query": [...], "action": 3, "action_choice_probability": 0.2,
     "sentence": {"embedding": [...], "noisy_embedding": [...]}, "reward": 1.5}

``context`` holds the user features. A sentence without a noisy embedding is
written as a bare list. Floats use Python's shortest round-trip ``repr``, so
writes are byte-deterministic and reads reproduce every bit.
"""
from __future__ import annotations

import io
import json
import os
from typing import Any, Dict, List, Optional

import numpy as np

from .types import (
    ActionSet,
    Context,
    DatasetMetadata,
    Dims,
    LoggedDataset,
    LoggedRecord,
    Sentence,
    validate_dataset,
)

REQUIRED_KEYS = ("context", "query", "action", "sentence", "reward")
OPTIONAL_KEYS = ("user_id", "item_id", "action_choice_probability", "expected_reward", "density_support_sentences")
_KEY_ORDER = (
    "user_id",
    "item_id",
    "context",
    "query",
    "action",
    "action_choice_probability",
    "sentence",
    "reward",
    "expected_reward",
    "density_support_sentences",
)
HEADER_KEY = "meta_data"


class JsonlFormatError(ValueError):
    """Malformed input; ``line`` is the 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class DatasetValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        shown = "; ".join(str(v) for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"invalid dataset: {shown}{more}")


class JsonlWriteError(OSError):
    def __init__(self, message, records_written: int, bytes_written: int):
        super().__init__(message)
        self.records_written = records_written
        self.bytes_written = bytes_written


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _floats(v) -> List[float]:
    return [float(x) for x in np.asarray(v, dtype=np.float64).ravel()]


def _sentence_obj(s: Sentence):
    if s.noisy_embedding is None:
        return _floats(s.embedding)
    return {"embedding": _floats(s.embedding), "noisy_embedding": _floats(s.noisy_embedding)}


def _header(meta: DatasetMetadata) -> Dict[str, Any]:
    d = meta.dims
    out = {
        "size": int(meta.size),
        "reward_type": meta.reward_type,
        "reward_std": float(meta.reward_std),
        "action_embeddings": [_floats(row) for row in meta.action_set.embeddings],
    }
    if meta.action_list is not None:
        out["action_list"] = list(meta.action_list)
    out["dims"] = {"user": d.user, "query": d.query, "action": d.action, "sentence": d.sentence}
    out["seed"] = meta.seed
    return {HEADER_KEY: out}


def record_to_obj(rec: LoggedRecord) -> Dict[str, Any]:
    fields = {
        "user_id": rec.user_id,
        "item_id": rec.item_id,
        "context": _floats(rec.context.user),
        "query": _floats(rec.context.query),
        "action": int(rec.action),
        "action_choice_probability": None if rec.propensity is None else float(rec.propensity),
        "sentence": _sentence_obj(rec.sentence),
        "reward": float(rec.reward),
        "expected_reward": None if rec.expected_reward is None else float(rec.expected_reward),
        "density_support_sentences": (
            None
            if rec.density_support_sentences is None
            else [_sentence_obj(s) for s in rec.density_support_sentences]
        ),
    }
    out = {k: fields[k] for k in _KEY_ORDER if fields[k] is not None}
    for k in sorted(rec.extra):
        out[k] = rec.extra[k]
    return out


def dumps_jsonl(dataset: LoggedDataset) -> bytes:
    lines = [_dumps(_header(dataset.metadata))]
    lines.extend(_dumps(record_to_obj(r)) for r in dataset.records)
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_jsonl(dataset: LoggedDataset, sink) -> int:
    """Write ``dataset`` to a path or binary stream; returns the number of records written."""
    problems = validate_dataset(dataset)
    if problems:
        raise DatasetValidationError(problems)
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            return write_jsonl(dataset, fh)
    written = 0
    nbytes = 0
    lines = [(_dumps(_header(dataset.metadata)) + "\n").encode("utf-8")]
    lines.extend((_dumps(record_to_obj(r)) + "\n").encode("utf-8") for r in dataset.records)
    for i, chunk in enumerate(lines):
        try:
            sink.write(chunk)
        except OSError as err:
            raise JsonlWriteError(
                f"write failed after {written} records ({nbytes} bytes): {err}", written, nbytes
            ) from err
        nbytes += len(chunk)
        written = i  # header is line 0
    return len(dataset.records)


def _vector(obj, key, lineno, expected: Optional[int] = None, index: Optional[int] = None):
    if not isinstance(obj, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
        raise JsonlFormatError(f"{key!r} must be a list of numbers", lineno)
    arr = np.array(obj, dtype=np.float64)
    if expected is not None and arr.shape[0] != expected:
        raise JsonlFormatError(f"record {index}: {key!r} has {arr.shape[0]} entries, header dims say {expected}", lineno)
    return arr


def _sentence(obj, key, lineno, dim, index) -> Sentence:
    if isinstance(obj, dict):
        unknown = set(obj) - {"embedding", "noisy_embedding"}
        if unknown or "embedding" not in obj:
            raise JsonlFormatError(f"{key!r} object needs 'embedding' and optionally 'noisy_embedding'", lineno)
        emb = _vector(obj["embedding"], key, lineno, dim, index)
        noisy = obj.get("noisy_embedding")
        noisy = None if noisy is None else _vector(noisy, key, lineno, dim, index)
        return Sentence(emb, noisy)
    return Sentence(_vector(obj, key, lineno, dim, index))


def _parse_header(obj, lineno) -> DatasetMetadata:
    if not isinstance(obj, dict) or set(obj) != {HEADER_KEY} or not isinstance(obj[HEADER_KEY], dict):
        raise JsonlFormatError(f"first line must be the {HEADER_KEY!r} header", lineno)
    m = obj[HEADER_KEY]
    for key in ("size", "reward_type", "reward_std", "dims"):
        if key not in m:
            raise JsonlFormatError(f"header is missing {key!r}", lineno)
    dims_obj = m["dims"]
    try:
        dims = Dims(int(dims_obj["user"]), int(dims_obj["query"]), int(dims_obj["action"]), int(dims_obj["sentence"]))
    except (KeyError, TypeError, ValueError) as err:
        raise JsonlFormatError(f"header dims must have integer user/query/action/sentence: {err}", lineno) from None
    action_list = m.get("action_list")
    if "action_embeddings" in m:
        action_set = ActionSet(np.array(m["action_embeddings"], dtype=np.float64).reshape(-1, dims.action))
    elif action_list:
        # only prompt strings are known: identify actions by one-hot embeddings
        action_set = ActionSet(np.eye(len(action_list)))
        dims = Dims(dims.user, dims.query, len(action_list), dims.sentence)
    else:
        raise JsonlFormatError("header needs 'action_embeddings' or 'action_list'", lineno)
    return DatasetMetadata(
        size=int(m["size"]),
        action_set=action_set,
        dims=dims,
        reward_type=str(m["reward_type"]),
        reward_std=float(m["reward_std"]),
        seed=m.get("seed"),
        action_list=None if action_list is None else tuple(action_list),
    )


def _parse_record(obj, lineno, index, meta: DatasetMetadata, strict: bool) -> LoggedRecord:
    if not isinstance(obj, dict):
        raise JsonlFormatError("record must be a JSON object", lineno)
    for key in REQUIRED_KEYS:
        if key not in obj:
            raise JsonlFormatError(f"record {index} is missing required key {key!r}", lineno)
    unknown = [k for k in obj if k not in REQUIRED_KEYS and k not in OPTIONAL_KEYS]
    if unknown and strict:
        raise JsonlFormatError(f"record {index} has unknown key {unknown[0]!r} (strict mode)", lineno)
    d = meta.dims
    action = obj["action"]
    if isinstance(action, bool) or not isinstance(action, int):
        raise JsonlFormatError(f"record {index}: 'action' must be an integer index", lineno)
    reward = obj["reward"]
    if isinstance(reward, bool) or not isinstance(reward, (int, float)):
        raise JsonlFormatError(f"record {index}: 'reward' must be a number", lineno)
    support = obj.get("density_support_sentences")
    if support is not None:
        if not isinstance(support, list):
            raise JsonlFormatError(f"record {index}: 'density_support_sentences' must be a list", lineno)
        support = tuple(_sentence(s, "density_support_sentences", lineno, d.sentence, index) for s in support)
    prop = obj.get("action_choice_probability")
    exp_r = obj.get("expected_reward")
    return LoggedRecord(
        context=Context(
            _vector(obj["context"], "context", lineno, d.user, index),
            _vector(obj["query"], "query", lineno, d.query, index),
        ),
        action=action,
        sentence=_sentence(obj["sentence"], "sentence", lineno, d.sentence, index),
        reward=float(reward),
        propensity=None if prop is None else float(prop),
        expected_reward=None if exp_r is None else float(exp_r),
        density_support_sentences=support,
        user_id=obj.get("user_id"),
        item_id=obj.get("item_id"),
        extra={k: obj[k] for k in unknown},
    )


def read_jsonl(source, strict: bool = True) -> LoggedDataset:
    """Parse a path, bytes, or a text/binary stream written by :func:`write_jsonl`."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return read_jsonl(fh, strict)
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    meta = None
    records = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise JsonlFormatError(f"malformed JSON: {err.msg}", lineno) from None
        if meta is None:
            meta = _parse_header(obj, lineno)
            continue
        records.append(_parse_record(obj, lineno, len(records), meta, strict))
    if meta is None:
        raise JsonlFormatError("empty input: no header line")
    dataset = LoggedDataset(tuple(records), meta)
    problems = validate_dataset(dataset)
    if problems:
        raise DatasetValidationError(problems)
    return dataset
