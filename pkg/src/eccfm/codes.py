"""Binary linear block codes: GF(2) algebra, alist I/O, encoding and syndromes.

All bit vectors are indexed ``0..n-1`` in alist column order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class CodeError(ValueError):
    """Invalid code definition or incompatible operand."""


class AlistError(CodeError):
    """Malformed alist document; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"alist line {line}: " if line is not None else "alist: "
        super().__init__(prefix + message)


class RankDeficientError(CodeError):
    def __init__(self, rank: int, rows: int):
        self.rank = rank
        self.rows = rows
        super().__init__(f"parity-check matrix is rank deficient: rank {rank} < {rows} rows")


def gf2_rank(a: np.ndarray) -> int:
    """Rank of a binary matrix over GF(2)."""
    m = (np.asarray(a, dtype=np.uint8) & 1).copy()
    rows, cols = m.shape
    rank = 0
    for c in range(cols):
        if rank == rows:
            break
        pivots = np.nonzero(m[rank:, c])[0]
        if pivots.size == 0:
            continue
        p = rank + pivots[0]
        if p != rank:
            m[[rank, p]] = m[[p, rank]]
        hits = np.nonzero(m[:, c])[0]
        hits = hits[hits != rank]
        m[hits] ^= m[rank]
        rank += 1
    return rank


def gf2_rref(a: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2) and the list of pivot columns."""
    m = (np.asarray(a, dtype=np.uint8) & 1).copy()
    rows, cols = m.shape
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nz = np.nonzero(m[r:, c])[0]
        if nz.size == 0:
            continue
        p = r + nz[0]
        if p != r:
            m[[r, p]] = m[[p, r]]
        hits = np.nonzero(m[:, c])[0]
        hits = hits[hits != r]
        m[hits] ^= m[r]
        pivots.append(c)
        r += 1
    return m, pivots


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """An ``m x n`` binary parity-check matrix ``H``."""

    rows: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.rows)
        if h.ndim != 2:
            raise CodeError(f"H must be 2-D, got shape {h.shape}")
        if not np.all((h == 0) | (h == 1)):
            raise CodeError("H entries must be 0 or 1")
        h = h.astype(np.uint8)
        m, n = h.shape
        if m >= n:
            raise CodeError(f"need fewer checks than bits, got m={m}, n={n}")
        if np.any(h.sum(axis=1) == 0):
            raise CodeError(f"row {int(np.argmin(h.sum(axis=1)))} of H is empty")
        if np.any(h.sum(axis=0) == 0):
            raise CodeError(f"column {int(np.argmin(h.sum(axis=0)))} of H is empty")
        h.setflags(write=False)
        object.__setattr__(self, "rows", h)

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @cached_property
    def rank(self) -> int:
        return gf2_rank(self.rows)

    @cached_property
    def row_supports(self) -> tuple[np.ndarray, ...]:
        return tuple(np.flatnonzero(r) for r in self.rows)

    @cached_property
    def col_supports(self) -> tuple[np.ndarray, ...]:
        return tuple(np.flatnonzero(c) for c in self.rows.T)

    @cached_property
    def padded_supports(self) -> np.ndarray:
        """``(m, max_row_weight)`` index array, padded with ``n`` (a sentinel column)."""
        w = max(len(s) for s in self.row_supports)
        out = np.full((self.m, w), self.n, dtype=np.intp)
        for j, s in enumerate(self.row_supports):
            out[j, : len(s)] = s
        return out

    @cached_property
    def edge_scatter(self) -> np.ndarray:
        """One-hot ``(m * w, n + 1)`` map from padded edges to columns (last = sentinel)."""
        idx = self.padded_supports.ravel()
        out = np.zeros((idx.size, self.n + 1))
        out[np.arange(idx.size), idx] = 1.0
        return out

    @property
    def col_weights(self) -> np.ndarray:
        return self.rows.sum(axis=0).astype(int)

    @property
    def row_weights(self) -> np.ndarray:
        return self.rows.sum(axis=1).astype(int)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.array(self.rows.shape, dtype="<i8").tobytes())
        h.update(np.packbits(self.rows, axis=None).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ParityCheckMatrix):
            return NotImplemented
        return self.rows.shape == other.rows.shape and bool(np.array_equal(self.rows, other.rows))

    def __hash__(self):
        return hash(self.digest())


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Systematic generator ``[I_k | P^T]`` in permuted coordinates.

    ``rows[:, j]`` is codeword position ``column_permutation[j]``; :attr:`matrix`
    gives the generator in original column order.
    """

    rows: np.ndarray
    column_permutation: np.ndarray

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    @cached_property
    def matrix(self) -> np.ndarray:
        g = np.zeros_like(self.rows)
        g[:, self.column_permutation] = self.rows
        g.setflags(write=False)
        return g


def derive_generator(H: ParityCheckMatrix) -> GeneratorMatrix:
    """Row-reduce ``H`` to ``[P | I_{n-k}]`` (with column swaps) and return ``G = [I_k | P^T]``."""
    n, m = H.n, H.m
    # eliminate from the right so trailing columns become pivots where possible and
    # already-systematic matrices keep the identity permutation
    rref, rev_pivots = gf2_rref(H.rows[:, ::-1])
    if len(rev_pivots) < m:
        raise RankDeficientError(len(rev_pivots), m)
    rref = rref[:, ::-1]
    pivots = [n - 1 - c for c in rev_pivots]
    order = np.argsort(pivots)
    rref, pivots = rref[order], sorted(pivots)
    k = n - m
    free = [c for c in range(n) if c not in set(pivots)]
    perm = np.array(free + pivots, dtype=np.intp)
    hp = rref[:, perm]
    p = hp[:, :k]
    g = np.concatenate([np.eye(k, dtype=np.uint8), p.T.astype(np.uint8)], axis=1)
    g.setflags(write=False)
    perm.setflags(write=False)
    return GeneratorMatrix(rows=g, column_permutation=perm)


def _as_bits(v, length: int, what: str) -> np.ndarray:
    b = np.asarray(v)
    if b.shape[-1:] != (length,):
        raise CodeError(f"{what} must have length {length}, got shape {b.shape}")
    if not np.all((b == 0) | (b == 1)):
        raise CodeError(f"{what} must be binary")
    return b.astype(np.uint8)


def encode(message, G: GeneratorMatrix) -> np.ndarray:
    """``x = m G`` over GF(2); accepts a single message or a ``(B, k)`` batch."""
    msg = _as_bits(message, G.k, "message")
    return (msg.astype(np.int64) @ G.matrix.astype(np.int64) % 2).astype(np.uint8)


def hard_syndrome(y_b, H: ParityCheckMatrix) -> np.ndarray:
    """``s = H y_b^T mod 2`` for a word or a ``(B, n)`` batch."""
    b = _as_bits(y_b, H.n, "word")
    return (b.astype(np.int64) @ H.rows.T.astype(np.int64) % 2).astype(np.uint8)


# --- alist -----------------------------------------------------------------

def parse_alist(text: str) -> ParityCheckMatrix:
    """Parse MacKay's alist format (1-based indices, zero padding ignored)."""
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(no, toks) for no, toks in lines if toks]
    pos = 0

    def take(count: int | None = None) -> tuple[int, list[int]]:
        nonlocal pos
        if pos >= len(lines):
            raise AlistError("unexpected end of document", lines[-1][0] if lines else None)
        no, toks = lines[pos]
        pos += 1
        try:
            vals = [int(t) for t in toks]
        except ValueError:
            raise AlistError(f"non-integer token in {toks!r}", no) from None
        if count is not None and len(vals) != count:
            raise AlistError(f"expected {count} integers, found {len(vals)}", no)
        return no, vals

    no, (n, m) = take(2)
    if n <= 0 or m <= 0:
        raise AlistError(f"invalid dimensions n={n}, m={m}", no)
    no, (max_col_w, max_row_w) = take(2)
    no_cw, col_w = take(n)
    no_rw, row_w = take(m)
    if max(col_w) > max_col_w:
        raise AlistError(f"column weight {max(col_w)} exceeds declared maximum {max_col_w}", no_cw)
    if max(row_w) > max_row_w:
        raise AlistError(f"row weight {max(row_w)} exceeds declared maximum {max_row_w}", no_rw)

    h = np.zeros((m, n), dtype=np.uint8)
    for i in range(n):
        no, idx = take()
        _check_index_line(idx, col_w[i], m, no)
        for j in idx[: col_w[i]]:
            h[j - 1, i] = 1
    row_lines: list[tuple[int, list[int]]] = []
    for j in range(m):
        no, idx = take()
        _check_index_line(idx, row_w[j], n, no)
        row_lines.append((no, idx[: row_w[j]]))
    for j, (no, idx) in enumerate(row_lines):
        if sorted(i - 1 for i in idx) != list(np.flatnonzero(h[j])):
            raise AlistError(f"row {j + 1} list disagrees with column lists", no)
    if pos != len(lines):
        raise AlistError("trailing content after row lists", lines[pos][0])
    try:
        return ParityCheckMatrix(h)
    except CodeError as exc:
        raise AlistError(str(exc)) from None


def _check_index_line(idx: list[int], weight: int, upper: int, no: int) -> None:
    if len(idx) < weight:
        raise AlistError(f"expected {weight} indices, found {len(idx)}", no)
    live, pad = idx[:weight], idx[weight:]
    if any(v < 1 or v > upper for v in live):
        raise AlistError(f"index out of range 1..{upper} in {live}", no)
    if len(set(live)) != len(live):
        raise AlistError(f"duplicate index in {live}", no)
    if any(v != 0 for v in pad):
        raise AlistError(f"more indices than declared weight {weight}", no)


def serialize_alist(H: ParityCheckMatrix) -> str:
    cw, rw = H.col_weights, H.row_weights
    dc, dr = int(cw.max()), int(rw.max())
    out = [f"{H.n} {H.m}", f"{dc} {dr}", " ".join(map(str, cw)), " ".join(map(str, rw))]
    for s in H.col_supports:
        out.append(" ".join(str(j + 1) for j in s) + " 0" * (dc - len(s)))
    for s in H.row_supports:
        out.append(" ".join(str(i + 1) for i in s) + " 0" * (dr - len(s)))
    return "\n".join(out) + "\n"


def parse_dense(text: str) -> ParityCheckMatrix:
    """Dense 0/1 grid, one row of ``H`` per line (whitespace optional)."""
    rows = []
    for no, ln in enumerate(text.splitlines(), start=1):
        s = ln.replace(" ", "").replace("\t", "").replace(",", "")
        if not s or s.startswith("#"):
            continue
        if set(s) - {"0", "1"}:
            raise CodeError(f"dense grid line {no}: non-binary entry")
        rows.append([int(c) for c in s])
    if not rows or len({len(r) for r in rows}) != 1:
        raise CodeError("dense grid rows must be non-empty and of equal length")
    return ParityCheckMatrix(np.array(rows, dtype=np.uint8))


# --- built-in codes ----------------------------------------------------------

HAMMING74_H = np.array(
    [
        [1, 0, 1, 0, 1, 0, 1],
        [0, 1, 1, 0, 0, 1, 1],
        [0, 0, 0, 1, 1, 1, 1],
    ],
    dtype=np.uint8,
)

REPETITION2_H = np.array([[1, 1]], dtype=np.uint8)


@dataclass(frozen=True)
class LinearCode:
    """A named code: parity-check matrix plus its derived generator."""

    name: str
    H: ParityCheckMatrix
    G: GeneratorMatrix = field(repr=False)

    @classmethod
    def from_parity_check(cls, name: str, H: ParityCheckMatrix) -> "LinearCode":
        return cls(name, H, derive_generator(H))

    @property
    def n(self) -> int:
        return self.H.n

    @property
    def k(self) -> int:
        return self.G.k

    @property
    def m(self) -> int:
        return self.H.m

    @property
    def rate(self) -> float:
        return self.k / self.n

    def codewords(self) -> np.ndarray:
        """All ``2^k`` codewords; row ``i`` encodes the message with binary value ``i`` (MSB first)."""
        if self.k > 16:
            raise CodeError(f"refusing to enumerate 2^{self.k} codewords")
        idx = np.arange(2**self.k)
        msgs = ((idx[:, None] >> np.arange(self.k - 1, -1, -1)) & 1).astype(np.uint8)
        return encode(msgs, self.G)


BUILTIN_CODES = {
    "hamming74": HAMMING74_H,
    "rep2": REPETITION2_H,
}


def load_code(source: str | Path) -> LinearCode:
    """Built-in id (``hamming74``, ``rep2``) or a path to an ``.alist`` / dense ``.txt`` file."""
    key = str(source)
    if key in BUILTIN_CODES:
        return LinearCode.from_parity_check(key, ParityCheckMatrix(BUILTIN_CODES[key]))
    path = Path(key)
    if not path.is_file():
        raise FileNotFoundError(f"code file not found: {path}")
    text = path.read_text()
    H = parse_alist(text) if path.suffix.lower() == ".alist" else parse_dense(text)
    return LinearCode.from_parity_check(path.stem, H)
