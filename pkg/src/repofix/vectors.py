"""
Vector store for embedding documents.

Exact (brute-force) cosine search over a build-then-freeze index, with a
pluggable embedder: a deterministic token-hash embedder for offline use and an
HTTP embedder for any OpenAI-style embeddings endpoint.
"""

import hashlib
import json
import logging
import os
import re
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol

import httpx
import numpy as np

from repofix.config import EmbedderConfig
from repofix.core import (
    ConfigurationError,
    CorruptArtifactError,
    EmbeddingDocument,
    EmbeddingError,
    VectorIndexError,
)

logger = logging.getLogger(__name__)

INDEX_FILE = "vectors.idx"
DOCS_FILE = "embedding_docs.jsonl"
INDEX_MAGIC = b"RFXVEC"
INDEX_VERSION = 1
# Scores equal to this many decimals rank as ties.
SCORE_DECIMALS = 12
_HEADER = struct.Struct("<6sHI")

STOP_WORDS = frozenset(
    "a an and are as at be by for from has have in is it of on or that the "
    "this to was were will with".split()
)
_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_TOKEN = re.compile(r"[A-Za-z0-9]+")


class Embedder(Protocol):
    dim: int

    def embed_text(self, text: str) -> List[float]: ...


def tokenize_text(text: str) -> List[str]:
    """Lower-cased word tokens; snake_case and camelCase identifiers are split."""
    tokens = []
    for raw in _TOKEN.findall(_CAMEL.sub(" ", text)):
        token = raw.lower()
        if token not in STOP_WORDS:
            tokens.append(token)
    return tokens


class HashEmbedder:
    """Deterministic bag-of-words embedder hashing tokens into dim buckets."""

    def __init__(self, dim: int = 64):
        if dim <= 0:
            raise ConfigurationError("Embedding dimension must be positive")
        self.dim = dim

    def bucket(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed_text(self, text: str) -> List[float]:
        values = [0.0] * self.dim
        for token in tokenize_text(text):
            values[self.bucket(token)] += 1.0
        return values


class HttpEmbedder:
    """Embedder backed by a remote embeddings endpoint.

    Request: POST {base_url}/embeddings {"model": ..., "input": text}
    Response: {"data": [{"embedding": [...]}]}
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key: Optional[str] = None,
        timeout: float = 30.0,
        retries: int = 3,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        if not base_url:
            raise ConfigurationError("Remote embedder requires a base URL")
        self.dim = dim
        self.model = model
        self.retries = max(1, retries)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = httpx.Client(
            base_url=base_url, headers=headers, timeout=timeout, transport=transport
        )

    def embed_text(self, text: str) -> List[float]:
        last_error: Optional[Exception] = None
        for attempt in range(1, self.retries + 1):
            try:
                response = self.client.post(
                    "/embeddings", json={"model": self.model, "input": text}
                )
                response.raise_for_status()
                return list(response.json()["data"][0]["embedding"])
            except (httpx.TransportError, httpx.HTTPStatusError) as e:
                last_error = e
                logger.warning(f"Embedder request failed (attempt {attempt}): {e}")
                if attempt < self.retries:
                    time.sleep(min(2 ** (attempt - 1), 8))
            except (KeyError, IndexError, TypeError, ValueError) as e:
                raise EmbeddingError(f"Malformed embedder response: {e}") from e
        raise EmbeddingError(
            f"Embedder unavailable after {self.retries} attempts: {last_error}",
            retryable=True,
        ) from last_error

    def close(self) -> None:
        self.client.close()


def make_embedder(
    config: EmbedderConfig, transport: Optional[httpx.BaseTransport] = None
) -> Embedder:
    if config.backend == "hash":
        return HashEmbedder(config.dim)
    if config.backend == "http":
        return HttpEmbedder(
            base_url=config.base_url,
            model=config.model,
            dim=config.dim,
            api_key=os.environ.get(config.api_key_env),
            timeout=config.timeout,
            retries=config.retries,
            transport=transport,
        )
    raise ConfigurationError(f"Unknown embedder backend '{config.backend}'")


def embed(text: str, embedder: Embedder) -> np.ndarray:
    """Embeds text, checking the embedder's declared dimension."""
    if not text or not text.strip():
        raise EmbeddingError("Cannot embed empty text")
    values = np.asarray(embedder.embed_text(text), dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != embedder.dim:
        raise ConfigurationError(
            f"Embedder returned dimension {values.shape[-1] if values.ndim else 0}, "
            f"expected {embedder.dim}"
        )
    if not np.all(np.isfinite(values)):
        raise EmbeddingError("Embedder returned non-finite values")
    return values


@dataclass(frozen=True)
class IndexEntry:
    id: int
    vector: np.ndarray
    doc: EmbeddingDocument


@dataclass(frozen=True)
class RetrievalResult:
    entry: IndexEntry
    score: float


class VectorIndex:
    """Exact cosine index. Entries are added, then the index is frozen."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise VectorIndexError("Index dimension must be positive")
        self.dim = dim
        self.entries: List[IndexEntry] = []
        self._ids: Dict[int, int] = {}
        self._frozen = False
        self._matrix: Optional[np.ndarray] = None
        self._norms: Optional[np.ndarray] = None
        self._id_array: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def add(self, doc: EmbeddingDocument, vector, entry_id: Optional[int] = None) -> int:
        if self._frozen:
            raise VectorIndexError("Cannot add entries to a frozen index")
        values = np.asarray(vector, dtype=np.float64)
        if values.shape != (self.dim,):
            raise VectorIndexError(
                f"Vector dimension {values.shape} does not match index dimension {self.dim}"
            )
        if not np.all(np.isfinite(values)):
            raise VectorIndexError("Vectors must be finite")
        if entry_id is None:
            entry_id = max(self._ids, default=-1) + 1
        if entry_id in self._ids:
            raise VectorIndexError(f"Duplicate index id {entry_id}")
        self._ids[entry_id] = len(self.entries)
        self.entries.append(IndexEntry(id=entry_id, vector=values, doc=doc))
        return entry_id

    def freeze(self) -> "VectorIndex":
        if not self._frozen:
            self._frozen = True
            if self.entries:
                self._matrix = np.vstack([e.vector for e in self.entries])
            else:
                self._matrix = np.zeros((0, self.dim))
            self._norms = np.linalg.norm(self._matrix, axis=1)
            self._id_array = np.array([e.id for e in self.entries], dtype=np.int64)
        return self

    def scores(self, query) -> np.ndarray:
        """Cosine similarity of query against every entry; zero vectors score 0."""
        self.freeze()
        assert self._matrix is not None and self._norms is not None
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise VectorIndexError(
                f"Query dimension {q.shape} does not match index dimension {self.dim}"
            )
        q_norm = float(np.linalg.norm(q))
        denom = self._norms * q_norm
        dots = self._matrix @ q
        with np.errstate(divide="ignore", invalid="ignore"):
            result = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
        return np.clip(result, -1.0, 1.0)

    def search(self, query, k: int) -> List[RetrievalResult]:
        """Top-k entries by cosine score; ties broken by ascending id."""
        if k < 1:
            raise VectorIndexError("k must be at least 1")
        if not self.entries:
            raise VectorIndexError("Cannot search an empty index")
        scores = np.round(self.scores(query), SCORE_DECIMALS)
        assert self._id_array is not None
        order = np.lexsort((self._id_array, -scores))
        return [
            RetrievalResult(entry=self.entries[i], score=float(scores[i]))
            for i in order[: min(k, len(self.entries))]
        ]


def _doc_to_dict(entry_id: int, doc: EmbeddingDocument) -> Dict:
    return {
        "id": entry_id,
        "document": doc.document,
        "file_name": doc.file_name,
        "parent_class": doc.parent_class,
        "unit_ref": [doc.unit_ref[0], doc.unit_ref[1]],
    }


def _doc_from_dict(data: Dict) -> EmbeddingDocument:
    return EmbeddingDocument(
        document=data["document"],
        file_name=data["file_name"],
        parent_class=data.get("parent_class"),
        unit_ref=(data["unit_ref"][0], int(data["unit_ref"][1])),
    )


def write_documents(path: Path, items: Iterable[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for entry_id, doc in items:
            f.write(json.dumps(_doc_to_dict(entry_id, doc), sort_keys=True) + "\n")


def read_documents(path: Path) -> Dict[int, EmbeddingDocument]:
    docs: Dict[int, EmbeddingDocument] = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                data = json.loads(line)
                docs[int(data["id"])] = _doc_from_dict(data)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CorruptArtifactError(f"Corrupt document file {path}: {e}") from e
    except FileNotFoundError as e:
        raise CorruptArtifactError(f"Missing document file {path}") from e
    return docs


def persist(index: VectorIndex, directory) -> Path:
    """Writes vectors.idx and embedding_docs.jsonl into directory."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    ids = [e.id for e in index.entries]
    header = json.dumps({"dim": index.dim, "count": len(ids), "ids": ids}).encode()
    matrix = (
        np.vstack([e.vector for e in index.entries]).astype("<f8")
        if index.entries
        else np.zeros((0, index.dim), dtype="<f8")
    )
    path = out / INDEX_FILE
    with open(path, "wb") as f:
        f.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, len(header)))
        f.write(header)
        f.write(matrix.tobytes())
    write_documents(out / DOCS_FILE, ((e.id, e.doc) for e in index.entries))
    logger.debug(f"Persisted {len(ids)} vectors to {path}")
    return path


def load(directory) -> VectorIndex:
    """Reads an index written by persist; the result is frozen."""
    src = Path(directory)
    path = src / INDEX_FILE
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise CorruptArtifactError(f"Missing vector index {path}") from e

    if len(raw) < _HEADER.size:
        raise CorruptArtifactError(f"Truncated vector index {path}")
    magic, version, header_len = _HEADER.unpack_from(raw)
    if magic != INDEX_MAGIC:
        raise CorruptArtifactError(f"{path} is not a vector index (bad magic)")
    if version != INDEX_VERSION:
        raise CorruptArtifactError(
            f"Vector index version mismatch (expected {INDEX_VERSION}, got {version})"
        )
    body_start = _HEADER.size + header_len
    try:
        header = json.loads(raw[_HEADER.size : body_start].decode())
        dim, count, ids = int(header["dim"]), int(header["count"]), header["ids"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CorruptArtifactError(f"Corrupt vector index header in {path}: {e}") from e

    expected = count * dim * 8
    body = raw[body_start:]
    if len(body) != expected or len(ids) != count:
        raise CorruptArtifactError(
            f"Truncated vector index {path}: expected {expected} bytes of vectors, "
            f"found {len(body)}"
        )
    matrix = np.frombuffer(body, dtype="<f8").reshape(count, dim)
    docs = read_documents(src / DOCS_FILE)

    index = VectorIndex(dim)
    for row, entry_id in enumerate(ids):
        if entry_id not in docs:
            raise CorruptArtifactError(f"Vector {entry_id} has no document in {DOCS_FILE}")
        index.add(docs[entry_id], matrix[row].copy(), entry_id=entry_id)
    return index.freeze()
