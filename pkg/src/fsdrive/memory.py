"""Dialogue-exemplar memory with pluggable embeddings and cosine retrieval.

Past two-stage dialogues are embedded, stored append-only, and retrieved by
similarity as in-context exemplars for the slow system. Retrieval is an
exact linear scan; store sizes here stay small.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

__all__ = ["MemoryItem", "EmbeddingProvider", "HashEmbedding", "MemoryStore", "cosine"]

_TOKEN_RE = re.compile(r"\w+")


class EmbeddingError(RuntimeError):
    """Embedding provider failed or was given empty content."""


@dataclass(frozen=True)
class MemoryItem:
    item_id: str
    human: dict[str, str]  # stage1/stage2 human messages
    answer: dict[str, str]  # stage1/stage2 answers
    embedding: np.ndarray  # unit norm
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"embedding must be unit-norm, got {norm}")


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbedding:
    """Deterministic feature hashing of token n-grams, unit-normalized.

    A stand-in for a real embedding endpoint: identical text maps to an
    identical vector, related texts share n-gram buckets, and the keyed hash
    makes the mapping stable across processes.
    """

    def __init__(self, dim: int = 64, seed: int = 0, ngrams: Sequence[int] = (1, 2)) -> None:
        self.dim = dim
        self._key = seed.to_bytes(8, "little", signed=True)
        self._ngrams = tuple(ngrams)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty content")
        tokens = _TOKEN_RE.findall(text.lower())
        vec = np.zeros(self.dim)
        for n in self._ngrams:
            for i in range(len(tokens) - n + 1):
                gram = " ".join(tokens[i : i + n]).encode()
                digest = hashlib.blake2b(gram, key=self._key, digest_size=8).digest()
                value = int.from_bytes(digest, "little")
                idx = value % self.dim
                sign = 1.0 if (value >> 32) & 1 else -1.0
                vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise EmbeddingError(f"content produced no features: {text[:40]!r}")
        return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


class MemoryStore:
    """Append-only exemplar store with similarity retrieval.

    Single writer; retrieval reads a consistent snapshot. With ``path`` set,
    every new item is appended to a JSONL file whose records carry a JSON
    header and the raw embedding bytes, so reloads are bitwise-faithful.
    """

    def __init__(self, provider: EmbeddingProvider, path: str | Path | None = None) -> None:
        self.provider = provider
        self.path = Path(path) if path is not None else None
        self.items: list[MemoryItem] = []
        self._content_ids: dict[str, str] = {}
        if self.path is not None and self.path.exists():
            self._load(self.path)

    # -- persistence --------------------------------------------------------

    @staticmethod
    def _encode(item: MemoryItem) -> str:
        return json.dumps(
            {
                "id": item.item_id,
                "human": item.human,
                "answer": item.answer,
                "tags": list(item.tags),
                "dim": len(item.embedding),
                "embedding_b64": base64.b64encode(
                    np.asarray(item.embedding, dtype=np.float64).tobytes()
                ).decode(),
            }
        )

    @staticmethod
    def _decode(line: str) -> MemoryItem:
        rec = json.loads(line)
        emb = np.frombuffer(base64.b64decode(rec["embedding_b64"]), dtype=np.float64)
        if len(emb) != rec["dim"]:
            raise ValueError(f"corrupt record for item {rec['id']}")
        return MemoryItem(
            item_id=rec["id"],
            human=rec["human"],
            answer=rec["answer"],
            embedding=emb,
            tags=tuple(rec["tags"]),
        )

    def _load(self, path: Path) -> None:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                item = self._decode(line)
                self.items.append(item)
                self._content_ids[self._content_hash(item.human, item.answer)] = item.item_id

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for item in self.items:
                fh.write(self._encode(item) + "\n")

    # -- recording -----------------------------------------------------------

    @staticmethod
    def _content_hash(human: dict[str, str], answer: dict[str, str]) -> str:
        blob = json.dumps([human, answer], sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def record(
        self, human: dict[str, str], answer: dict[str, str], tags: Sequence[str] = ()
    ) -> str:
        """Embed and append one complete two-stage dialogue; returns its id.

        Identical content within this store's lifetime is deduplicated to a
        single item.
        """
        for stage in ("stage1", "stage2"):
            if not human.get(stage) or not answer.get(stage):
                raise ValueError(f"dialogue incomplete: missing {stage}")
        key = self._content_hash(human, answer)
        if key in self._content_ids:
            return self._content_ids[key]
        embedding = self.provider.embed(human["stage1"])
        item_id = f"m{len(self.items):06d}-{key[:8]}"
        item = MemoryItem(
            item_id=item_id,
            human=dict(human),
            answer=dict(answer),
            embedding=embedding,
            tags=tuple(tags),
        )
        self.items.append(item)
        self._content_ids[key] = item_id
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(self._encode(item) + "\n")
        return item_id

    # -- retrieval -----------------------------------------------------------

    def retrieve(self, query: np.ndarray, k: int) -> list[MemoryItem]:
        """Top-k items by cosine similarity, ties broken by newest insertion."""
        if k < 0:
            raise ValueError("k must be non-negative")
        if k == 0 or not self.items:
            return []
        sims = np.array([cosine(query, item.embedding) for item in self.items])
        recency = np.arange(len(self.items))
        order = np.lexsort((-recency, -sims))
        return [self.items[i] for i in order[:k]]

    def retrieve_text(self, text: str, k: int) -> list[MemoryItem]:
        if k == 0 or not self.items:
            return []
        return self.retrieve(self.provider.embed(text), k)

    def __len__(self) -> int:
        return len(self.items)
