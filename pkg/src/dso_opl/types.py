"""Domain vocabulary: contexts, actions, sentences, logged records, datasets."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

REWARD_TYPES = ("continuous", "binary")


def _vec(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _same(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True, eq=False)
class Context:
    """A user feature vector and a query vector; ``x = (u, q)``."""

    user: np.ndarray
    query: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "user", _vec(self.user))
        object.__setattr__(self, "query", _vec(self.query))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.user, self.query])

    def __eq__(self, other):
        return isinstance(other, Context) and _same(self.user, other.user) and _same(self.query, other.query)


@dataclass(frozen=True, eq=False)
class ActionSet:
    """Candidate actions; row ``a`` of ``embeddings`` is the embedding of action ``a``."""

    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ValueError(f"action embeddings must be a non-empty matrix, got shape {emb.shape}")
        if not np.all(np.isfinite(emb)):
            raise ValueError("action embeddings must be finite")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __eq__(self, other):
        return isinstance(other, ActionSet) and _same(self.embeddings, other.embeddings)


@dataclass(frozen=True, eq=False)
class Sentence:
    """Sentence embedding plus an optional perturbed copy used only for kernel distances."""

    embedding: np.ndarray
    noisy_embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "embedding", _vec(self.embedding))
        if self.noisy_embedding is not None:
            noisy = _vec(self.noisy_embedding)
            if noisy.shape != self.embedding.shape:
                raise ValueError("noisy_embedding must match the embedding dimension")
            object.__setattr__(self, "noisy_embedding", noisy)

    def for_kernel(self, use_noisy: bool) -> np.ndarray:
        if use_noisy and self.noisy_embedding is not None:
            return self.noisy_embedding
        return self.embedding

    def __eq__(self, other):
        return (
            isinstance(other, Sentence)
            and _same(self.embedding, other.embedding)
            and _same(self.noisy_embedding, other.noisy_embedding)
        )


@dataclass(frozen=True, eq=False)
class LoggedRecord:
    context: Context
    action: int
    sentence: Sentence
    reward: float
    propensity: Optional[float] = None
    expected_reward: Optional[float] = None
    density_support_sentences: Optional[Tuple[Sentence, ...]] = None
    user_id: Optional[Any] = None
    item_id: Optional[Any] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, LoggedRecord):
            return False
        return (
            self.context == other.context
            and self.action == other.action
            and self.sentence == other.sentence
            and _float_eq(self.reward, other.reward)
            and _float_eq(self.propensity, other.propensity)
            and _float_eq(self.expected_reward, other.expected_reward)
            and _tuple_eq(self.density_support_sentences, other.density_support_sentences)
            and self.user_id == other.user_id
            and self.item_id == other.item_id
            and self.extra == other.extra
        )


def _float_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return float(a) == float(b) or (np.isnan(a) and np.isnan(b))


def _tuple_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return len(a) == len(b) and all(x == y for x, y in zip(a, b))


@dataclass(frozen=True)
class Dims:
    user: int
    query: int
    action: int
    sentence: int

    @property
    def context(self) -> int:
        return self.user + self.query


@dataclass(frozen=True, eq=False)
class DatasetMetadata:
    size: int
    action_set: ActionSet
    dims: Dims
    reward_type: str = "continuous"
    reward_std: float = 1.0
    seed: Optional[int] = None
    action_list: Optional[Tuple[str, ...]] = None

    def __eq__(self, other):
        return (
            isinstance(other, DatasetMetadata)
            and self.size == other.size
            and self.action_set == other.action_set
            and self.dims == other.dims
            and self.reward_type == other.reward_type
            and _float_eq(self.reward_std, other.reward_std)
            and self.seed == other.seed
            and self.action_list == other.action_list
        )


@dataclass(frozen=True, eq=False)
class LoggedBatch:
    """Column view of logged records used by the estimators.

    Optional columns hold precomputed per-row quantities: ``qhat`` and
    ``logging_probs`` are ``(rows, |A|)`` tables, ``density`` is the estimated
    logging marginal density of each logged sentence.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    sentences: np.ndarray
    propensities: Optional[np.ndarray] = None
    noisy_sentences: Optional[np.ndarray] = None
    qhat: Optional[np.ndarray] = None
    logging_probs: Optional[np.ndarray] = None
    density: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.contexts.shape[0]

    def kernel_sentences(self, use_noisy: bool) -> np.ndarray:
        if use_noisy and self.noisy_sentences is not None:
            return self.noisy_sentences
        return self.sentences

    def take(self, idx) -> "LoggedBatch":
        def pick(a):
            return None if a is None else a[idx]

        return LoggedBatch(
            contexts=self.contexts[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            sentences=self.sentences[idx],
            propensities=pick(self.propensities),
            noisy_sentences=pick(self.noisy_sentences),
            qhat=pick(self.qhat),
            logging_probs=pick(self.logging_probs),
            density=pick(self.density),
        )

    def replace(self, **changes) -> "LoggedBatch":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    records: Tuple[LoggedRecord, ...]
    metadata: DatasetMetadata

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other):
        return (
            isinstance(other, LoggedDataset)
            and self.metadata == other.metadata
            and len(self.records) == len(other.records)
            and all(a == b for a, b in zip(self.records, other.records))
        )

    @property
    def action_set(self) -> ActionSet:
        return self.metadata.action_set

    @cached_property
    def batch(self) -> LoggedBatch:
        """All records as columns (built once)."""
        return records_to_batch(self.records)


def records_to_batch(records: Sequence[LoggedRecord]) -> LoggedBatch:
    if len(records) == 0:
        raise ValueError("cannot build a batch from zero records")
    contexts = np.stack([r.context.vector for r in records])
    sentences = np.stack([r.sentence.embedding for r in records])
    noisy = None
    if all(r.sentence.noisy_embedding is not None for r in records):
        noisy = np.stack([r.sentence.noisy_embedding for r in records])
    props = None
    if all(r.propensity is not None for r in records):
        props = np.array([r.propensity for r in records], dtype=np.float64)
    return LoggedBatch(
        contexts=contexts,
        actions=np.array([r.action for r in records], dtype=np.int64),
        rewards=np.array([r.reward for r in records], dtype=np.float64),
        sentences=sentences,
        propensities=props,
        noisy_sentences=noisy,
    )


def as_batch(data) -> LoggedBatch:
    """Accept a batch, a dataset, or a sequence of records."""
    if isinstance(data, LoggedBatch):
        return data
    if isinstance(data, LoggedDataset):
        return data.batch
    return records_to_batch(list(data))


@dataclass(frozen=True)
class Violation:
    index: Optional[int]
    field: str
    message: str

    def __str__(self):
        where = "metadata" if self.index is None else f"record {self.index}"
        return f"{where}: {self.field}: {self.message}"


def validate_dataset(dataset: LoggedDataset) -> List[Violation]:
    """Every invariant violation in ``dataset``; an empty list means well-formed."""
    out: List[Violation] = []
    meta = dataset.metadata
    dims = meta.dims
    n_actions = len(meta.action_set)
    if meta.size != len(dataset.records):
        out.append(Violation(None, "size", f"metadata size {meta.size} != {len(dataset.records)} records"))
    if meta.reward_type not in REWARD_TYPES:
        out.append(Violation(None, "reward_type", f"must be one of {REWARD_TYPES}, got {meta.reward_type!r}"))
    if not (np.isfinite(meta.reward_std) and meta.reward_std >= 0):
        out.append(Violation(None, "reward_std", "must be finite and nonnegative"))
    if meta.action_set.dim != dims.action:
        out.append(Violation(None, "action_set", f"embedding dim {meta.action_set.dim} != dims.action {dims.action}"))
    if meta.action_list is not None and len(meta.action_list) != n_actions:
        out.append(Violation(None, "action_list", f"{len(meta.action_list)} names for {n_actions} actions"))

    for i, r in enumerate(dataset.records):
        c = r.context
        if c.user.shape[0] != dims.user:
            out.append(Violation(i, "context", f"user dim {c.user.shape[0]} != {dims.user}"))
        if c.query.shape[0] != dims.query:
            out.append(Violation(i, "query", f"query dim {c.query.shape[0]} != {dims.query}"))
        if not (np.all(np.isfinite(c.user)) and np.all(np.isfinite(c.query))):
            out.append(Violation(i, "context", "non-finite entries"))
        if not isinstance(r.action, (int, np.integer)) or not 0 <= r.action < n_actions:
            out.append(Violation(i, "action", f"{r.action!r} outside [0, {n_actions})"))
        if r.propensity is not None and not (0.0 < r.propensity <= 1.0):
            out.append(Violation(i, "propensity", f"{r.propensity!r} outside (0, 1]"))
        if not np.isfinite(r.reward):
            out.append(Violation(i, "reward", "non-finite"))
        if meta.reward_type == "binary" and np.isfinite(r.reward) and r.reward not in (0.0, 1.0):
            out.append(Violation(i, "reward", f"{r.reward!r} is not binary"))
        if r.expected_reward is not None and not np.isfinite(r.expected_reward):
            out.append(Violation(i, "expected_reward", "non-finite"))
        sentences = [("sentence", r.sentence)]
        for j, s in enumerate(r.density_support_sentences or ()):
            sentences.append((f"density_support_sentences[{j}]", s))
        for name, s in sentences:
            if s.embedding.shape[0] != dims.sentence:
                out.append(Violation(i, name, f"dim {s.embedding.shape[0]} != {dims.sentence}"))
            elif not np.all(np.isfinite(s.embedding)) or (
                s.noisy_embedding is not None and not np.all(np.isfinite(s.noisy_embedding))
            ):
                out.append(Violation(i, name, "non-finite entries"))
    return out


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    """A policy-gradient estimate shaped like the policy's parameters."""

    params: Any  # MlpParams
    sample_count: int

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.params.arrays())))

    def is_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(g))) for g in self.params.arrays())
