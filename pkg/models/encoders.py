"""Text encoders that turn prompts into fixed-width embedding vectors."""

from __future__ import annotations

import hashlib
from collections.abc import Iterable
from pathlib import Path
from typing import Protocol

import numpy as np
import structlog

from services.errors import ConfigError, EmbeddingLookupError, LoadError, MissingInputError

logger = structlog.get_logger(__name__)

MIN_WIDTH = 8


class TextEncoder(Protocol):
    """Deterministic prompt-to-vector mapping."""

    d_t: int

    def encode(self, prompt: str) -> np.ndarray: ...


def hash_encode(prompt: str, seed: int, d_t: int) -> np.ndarray:
    """Pseudo-random unit vector derived from ``(seed, prompt)``.

    The SHA-256 digest of the seed and UTF-8 prompt bytes seeds a NumPy
    generator; its standard-normal draw is scaled to unit length.
    """
    if d_t < MIN_WIDTH:
        raise ConfigError(f"d_t must be at least {MIN_WIDTH}, got {d_t}")
    digest = hashlib.sha256(f"{seed}\x00".encode() + prompt.encode("utf-8")).digest()
    entropy = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, len(digest), 4)]
    vector = np.random.default_rng(np.random.SeedSequence(entropy)).standard_normal(d_t)
    return vector / np.linalg.norm(vector)


class HashTextEncoder:
    """Stand-in text encoder for tests and synthetic runs."""

    def __init__(self, d_t: int, seed: int = 0) -> None:
        if d_t < MIN_WIDTH:
            raise ConfigError(f"d_t must be at least {MIN_WIDTH}, got {d_t}")
        self.d_t = d_t
        self.seed = seed

    def encode(self, prompt: str) -> np.ndarray:
        return hash_encode(prompt, self.seed, self.d_t)


class FileTextEncoder:
    """Encoder backed by precomputed embeddings; unknown prompts are errors."""

    def __init__(self, table: dict[str, np.ndarray]) -> None:
        widths = {vector.shape[0] for vector in table.values()}
        if len(widths) != 1:
            raise LoadError(f"embedding table must have one width, got {sorted(widths)}")
        self.table = table
        self.d_t = widths.pop()

    def encode(self, prompt: str) -> np.ndarray:
        try:
            return self.table[prompt]
        except KeyError:
            raise EmbeddingLookupError(f"no embedding for prompt {prompt!r}") from None

    @classmethod
    def from_file(cls, path: str | Path) -> FileTextEncoder:
        return cls(load_embeddings(path))


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Parse ``prompt<TAB>f1<TAB>...<TAB>f_dt`` lines into a lookup table.

    Raises:
        MissingInputError: If the file does not exist
        LoadError: On a malformed line, an inconsistent width, a duplicate
            prompt or an empty file; the message names the line number
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(path)
    table: dict[str, np.ndarray] = {}
    width: int | None = None
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            prompt, _, rest = line.partition("\t")
            if not prompt or not rest:
                raise LoadError(f"{path}:{line_no}: expected 'prompt<TAB>floats'")
            try:
                vector = np.array([float(x) for x in rest.split("\t")], dtype=np.float64)
            except ValueError as err:
                raise LoadError(f"{path}:{line_no}: malformed float ({err})") from err
            if width is None:
                width = vector.shape[0]
            elif vector.shape[0] != width:
                raise LoadError(
                    f"{path}:{line_no}: expected {width} floats, got {vector.shape[0]}"
                )
            if not np.all(np.isfinite(vector)):
                raise LoadError(f"{path}:{line_no}: non-finite value")
            if prompt in table:
                raise LoadError(f"{path}:{line_no}: duplicate prompt {prompt!r}")
            table[prompt] = vector
    if not table:
        raise LoadError(f"{path}: no embeddings found")
    logger.info("Embeddings loaded", path=str(path), prompts=len(table), width=width)
    return table


def write_embeddings(path: str | Path, rows: Iterable[tuple[str, np.ndarray]]) -> None:
    """Write embeddings with shortest round-trip float formatting."""
    lines = []
    for prompt, vector in rows:
        if "\t" in prompt or "\n" in prompt:
            raise LoadError(f"prompt {prompt!r} contains a tab or newline")
        lines.append("\t".join([prompt, *(repr(float(x)) for x in vector)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
