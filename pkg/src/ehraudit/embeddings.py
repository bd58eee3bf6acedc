"""Code-embedding tables and the cosine ground cost between codes.

Embeddings are ingested from a TSV file produced offline by whatever encoder
the deployment uses; nothing here runs a neural model. The ground cost
between two codes is the cosine distance ``1 - cos(h(a), h(b))`` of their
stored vectors, which lands in [0, 2] and is invariant to vector scale.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import EmbeddingTableError, UndefinedCosineError, UnknownCodeError

POLICY_ERROR = "error"
POLICY_ZERO = "zero_vector"


class EmbeddingTable:
    """Immutable map from code id to a fixed-dimension real vector."""

    def __init__(self, dim: int, vectors: dict, default_policy: str = POLICY_ERROR):
        if dim <= 0:
            raise EmbeddingTableError(f"dim must be positive, got {dim}")
        if default_policy not in (POLICY_ERROR, POLICY_ZERO):
            raise EmbeddingTableError(f"unknown default policy {default_policy!r}")
        self.dim = dim
        self.default_policy = default_policy
        self._vectors = {}
        for code, vec in vectors.items():
            arr = np.asarray(vec, dtype=float)
            if arr.shape != (dim,):
                raise EmbeddingTableError(
                    f"code {code!r}: expected {dim} components, got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise EmbeddingTableError(f"code {code!r}: non-finite components")
            self._vectors[code] = arr
        self._norms = {c: float(np.linalg.norm(v)) for c, v in self._vectors.items()}
        self._zero = np.zeros(dim)

    def __contains__(self, code: str) -> bool:
        return code in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def codes(self):
        return self._vectors.keys()

    def lookup(self, code: str) -> np.ndarray:
        if code in self._vectors:
            return self._vectors[code]
        if self.default_policy == POLICY_ZERO:
            return self._zero
        raise UnknownCodeError(f"no embedding for code {code!r}")

    def ground_cost(self, a: str, b: str) -> float:
        """Cosine distance between two codes' embeddings, in [0, 2].

        A stored all-zero vector has no direction and raises. Unknown codes
        under the zero_vector policy cost a flat 1.0 against everything,
        which is exactly the silent corruption the default error policy
        exists to prevent; opting in is the caller's responsibility.
        """
        va, vb = self.lookup(a), self.lookup(b)
        na = self._norms.get(a, 0.0)
        nb = self._norms.get(b, 0.0)
        if a in self._vectors and na == 0.0:
            raise UndefinedCosineError(f"stored vector for {a!r} is zero")
        if b in self._vectors and nb == 0.0:
            raise UndefinedCosineError(f"stored vector for {b!r} is zero")
        if a == b:
            return 0.0
        if na == 0.0 or nb == 0.0:
            return 1.0
        cos = float(np.dot(va, vb) / (na * nb))
        return min(2.0, max(0.0, 1.0 - cos))

    def cost_matrix(self, codes_a, codes_b) -> np.ndarray:
        """Pairwise ground costs; vectorized over both code lists."""
        mat = np.empty((len(codes_a), len(codes_b)))
        for i, a in enumerate(codes_a):
            for j, b in enumerate(codes_b):
                mat[i, j] = self.ground_cost(a, b)
        return mat


def load_table(stream, default_policy: str = POLICY_ERROR) -> EmbeddingTable:
    """Load an embedding TSV: header ``dim\\t<D>``, then ``<code>\\tv1..vD``."""
    if isinstance(stream, bytes):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = [ln.rstrip("\n") for ln in stream]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise EmbeddingTableError("empty embedding file")
    header = lines[0].split("\t")
    if len(header) != 2 or header[0] != "dim":
        raise EmbeddingTableError(f"bad header {lines[0]!r}, expected 'dim\\t<D>'")
    try:
        dim = int(header[1])
    except ValueError as exc:
        raise EmbeddingTableError(f"bad dimension {header[1]!r}") from exc
    vectors = {}
    for ln in lines[1:]:
        parts = ln.split("\t")
        code = parts[0]
        if len(parts) - 1 != dim:
            raise EmbeddingTableError(
                f"code {code!r}: expected {dim} values, got {len(parts) - 1}"
            )
        if code in vectors:
            raise EmbeddingTableError(f"duplicate code {code!r}")
        try:
            vectors[code] = [float(x) for x in parts[1:]]
        except ValueError as exc:
            raise EmbeddingTableError(f"code {code!r}: non-numeric value") from exc
    return EmbeddingTable(dim, vectors, default_policy)


def dump_table(table: EmbeddingTable) -> str:
    """Inverse of :func:`load_table`, for fixtures and round-trips."""
    lines = [f"dim\t{table.dim}"]
    for code in table.codes():
        vec = table.lookup(code)
        lines.append(code + "\t" + "\t".join(repr(float(x)) for x in vec))
    return "\n".join(lines) + "\n"
