"""Bit-exact sparse encoding primitives.

Everything here is built around one convention: bit i of a mask corresponds
to element i of the dense vector it describes, and textual renderings put
index 0 leftmost.  All containers are immutable after construction; the
operations are pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError, StructureError

DEFAULT_STEP_BITS = 4
DEFAULT_VALUE_BITS = 10


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


class BitMask:
    """Fixed-length bit vector marking the nonzero positions of a dense vector."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        self.bits = _frozen(np.asarray(bits, dtype=bool))
        if self.bits.ndim != 1:
            raise DimensionError("a BitMask is one-dimensional")

    @classmethod
    def from_string(cls, text: str) -> "BitMask":
        """Parse a textual mask, index 0 leftmost ('0010' sets bit 2)."""
        return cls([c == "1" for c in text])

    def to01(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    def popcount(self) -> int:
        return int(self.bits.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __getitem__(self, i: int) -> bool:
        return bool(self.bits[i])

    def __eq__(self, other) -> bool:
        return isinstance(other, BitMask) and len(self) == len(other) and bool(
            np.array_equal(self.bits, other.bits)
        )

    def __hash__(self):
        return hash(self.to01())

    def __and__(self, other: "BitMask") -> "BitMask":
        return work_mask(self, other)

    def __repr__(self) -> str:
        return f"BitMask('{self.to01()}')"


def work_mask(wm: BitMask, am: BitMask) -> BitMask:
    """AND of weight and activation masks; its popcount is the exact MAC count."""
    if len(wm) != len(am):
        raise DimensionError(f"mask lengths differ: {len(wm)} vs {len(am)}")
    return BitMask(wm.bits & am.bits)


def lnzd(mask: BitMask, start: int = 0) -> int | None:
    """Leading non-zero detect: smallest set index >= start, or None."""
    if start < 0 or start > len(mask):
        raise ParameterError(f"start {start} outside [0, {len(mask)}]")
    rest = np.flatnonzero(mask.bits[start:])
    if rest.size == 0:
        return None
    return start + int(rest[0])


def prefix_popcount(mask: BitMask, idx: int) -> int:
    """Number of set bits strictly before idx: the compact address of element idx."""
    if idx < 0 or idx > len(mask):
        raise ParameterError(f"idx {idx} outside [0, {len(mask)}]")
    return int(mask.bits[:idx].sum())


@dataclass(frozen=True)
class CompactVector:
    """Nonzero values plus the bitmask saying where they live."""

    mask: BitMask
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if len(self.values) != self.mask.popcount():
            raise StructureError(
                f"{len(self.values)} values for a mask with "
                f"{self.mask.popcount()} set bits"
            )
        if np.any(self.values == 0):
            raise StructureError("zero values must never occupy compact storage")

    @property
    def dim(self) -> int:
        return len(self.mask)

    @property
    def nnz(self) -> int:
        return len(self.values)


def encode_vector(dense) -> CompactVector:
    """Compact a dense vector: mask bit i set iff dense[i] != 0."""
    dense = np.asarray(dense)
    mask = dense != 0
    return CompactVector(BitMask(mask), dense[mask])


def decode_vector(v: CompactVector) -> np.ndarray:
    """Inverse of encode_vector; decode(encode(x)) == x elementwise."""
    out = np.zeros(v.dim, dtype=v.values.dtype if v.nnz else np.float64)
    out[v.mask.bits] = v.values
    return out


class CompactMatrix:
    """Column-compact matrix: per output-neuron column, nonzeros plus a bitmask.

    ``values`` holds the nonzeros column-major (column j's values are
    ``values[col_ptr[j]:col_ptr[j+1]]``, ascending row order).  ``quant``
    carries the sign-split scales when the values are quantized codes.
    """

    __slots__ = ("rows", "cols", "mask", "values", "col_ptr", "quant",
                 "_dense_cache", "_signsplit_cache")

    def __init__(self, mask: np.ndarray, values: np.ndarray, quant=None):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise DimensionError("matrix mask must be 2-D")
        values = np.asarray(values)
        if len(values) != int(mask.sum()):
            raise StructureError(
                f"{len(values)} values for a mask with {int(mask.sum())} set bits"
            )
        if np.any(values == 0):
            raise StructureError("zero values must never occupy compact storage")
        self.rows, self.cols = mask.shape
        self.mask = _frozen(mask)
        self.values = _frozen(values)
        self.col_ptr = _frozen(np.concatenate(
            [[0], np.cumsum(mask.sum(axis=0))]).astype(np.int64))
        self.quant = quant
        self._dense_cache = None
        self._signsplit_cache = None

    @classmethod
    def from_dense(cls, dense, quant=None) -> "CompactMatrix":
        dense = np.asarray(dense)
        if dense.ndim != 2:
            raise DimensionError("expected a 2-D matrix")
        if dense.size == 0:
            raise DimensionError("empty matrix")
        mask = dense != 0
        # column-major gather, ascending row order inside each column
        vals = dense.T[mask.T]
        return cls(mask, vals, quant=quant)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self) -> tuple:
        return (self.rows, self.cols)

    def col_nnz(self) -> np.ndarray:
        return np.diff(self.col_ptr)

    def column(self, j: int) -> CompactVector:
        return CompactVector(BitMask(self.mask[:, j]),
                             self.values[self.col_ptr[j]:self.col_ptr[j + 1]])

    def decode(self) -> np.ndarray:
        if self._dense_cache is None:
            dense = np.zeros((self.cols, self.rows), dtype=self.values.dtype
                             if self.nnz else np.float64)
            dense[self.mask.T] = self.values
            self._dense_cache = _frozen(dense.T)
        return self._dense_cache

    def sign_split(self):
        """Dense (positive, negative-magnitude) code matrices, cached.

        Returned as float64 so BLAS can do the dot products; every partial
        sum is an integer far below 2**53, so the arithmetic stays exact.
        """
        if self._signsplit_cache is None:
            dense = self.decode().astype(np.float64)
            pos = np.where(dense > 0, dense, 0.0)
            neg = np.where(dense < 0, -dense, 0.0)
            self._signsplit_cache = (_frozen(pos), _frozen(neg))
        return self._signsplit_cache

    def __eq__(self, other) -> bool:
        return (isinstance(other, CompactMatrix)
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"CompactMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


# ---------------------------------------------------------------------------
# Baseline encodings: CSR (EIE-style) and run-length
# ---------------------------------------------------------------------------


def _delta_encode(positions: np.ndarray, step_bits: int):
    """Run-length deltas with zero-padding escape.

    Returns (deltas, is_pad) where a pad entry carries the maximum delta and a
    zero value, bridging gaps longer than 2**step_bits - 1 positions.
    """
    max_step = (1 << step_bits) - 1
    deltas, is_pad = [], []
    prev = -1
    for p in positions:
        gap = int(p) - prev - 1
        while gap > max_step:
            deltas.append(max_step)
            is_pad.append(True)
            prev += max_step + 1
            gap = int(p) - prev - 1
        deltas.append(gap)
        is_pad.append(False)
        prev = int(p)
    return np.asarray(deltas, dtype=np.int64), np.asarray(is_pad, dtype=bool)


def _delta_decode(deltas: np.ndarray, is_pad: np.ndarray) -> np.ndarray:
    positions = np.cumsum(np.asarray(deltas) + 1) - 1
    return positions[~np.asarray(is_pad, dtype=bool)]


@dataclass(frozen=True)
class CsrPartition:
    columns: np.ndarray       # global column indices owned by this partition
    row_offsets: np.ndarray   # rows+1 entries addressing this partition's values
    deltas: np.ndarray        # local-column run-length steps, pads included
    is_pad: np.ndarray
    values: np.ndarray        # pad entries hold value 0

    def __post_init__(self):
        for name in ("columns", "row_offsets", "deltas", "is_pad", "values"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass(frozen=True)
class CsrMatrix:
    """EIE-style CSR: every partition keeps a full row-offset array.

    Partitions own interleaved columns (column j goes to partition
    j % num_partitions).  Within a partition, values are stored row-major;
    ``row_offsets[i]`` counts entries (pads included) in rows < i, so reading
    offsets i and i+1 brackets the partition's work for activation i.
    ``offset_bits`` is sized once from the whole matrix's nonzero count so the
    row-offset storage is exactly linear in the partition count.
    """

    rows: int
    cols: int
    num_partitions: int
    step_bits: int
    offset_bits: int
    partitions: tuple

    def total_entries(self) -> int:
        return sum(len(p.values) for p in self.partitions)

    def pad_entries(self) -> int:
        return sum(int(p.is_pad.sum()) for p in self.partitions)

    def decode(self) -> np.ndarray:
        dtype = None
        for p in self.partitions:
            real = p.values[~p.is_pad]
            if len(real):
                dtype = real.dtype
                break
        dense = np.zeros((self.rows, self.cols), dtype=dtype or np.float64)
        for p in self.partitions:
            for i in range(self.rows):
                lo, hi = p.row_offsets[i], p.row_offsets[i + 1]
                if lo == hi:
                    continue
                local = _delta_decode(p.deltas[lo:hi], p.is_pad[lo:hi])
                keep = ~p.is_pad[lo:hi]
                dense[i, p.columns[local]] = p.values[lo:hi][keep]
        return dense


def encode_csr(m: CompactMatrix, num_partitions: int,
               step_bits: int = DEFAULT_STEP_BITS) -> CsrMatrix:
    """Losslessly re-encode a compact matrix as partitioned CSR."""
    if num_partitions < 1:
        raise ParameterError("num_partitions must be >= 1")
    if step_bits < 1:
        raise ParameterError("step_bits must be >= 1")
    dense_mask = m.mask
    offset_bits = max(1, math.ceil(math.log2(m.nnz + 1))) if m.nnz else 1
    dense = m.decode()
    parts = []
    for p in range(num_partitions):
        cols = np.arange(p, m.cols, num_partitions)
        sub = dense_mask[:, cols]
        deltas_all, pads_all, values_all = [], [], []
        offsets = np.zeros(m.rows + 1, dtype=np.int64)
        for i in range(m.rows):
            local = np.flatnonzero(sub[i])
            d, ip = _delta_encode(local, step_bits)
            deltas_all.append(d)
            pads_all.append(ip)
            vals = np.zeros(len(d), dtype=dense.dtype)
            vals[~ip] = dense[i, cols[local]]
            values_all.append(vals)
            offsets[i + 1] = offsets[i] + len(d)
        parts.append(CsrPartition(
            columns=cols,
            row_offsets=offsets,
            deltas=np.concatenate(deltas_all) if deltas_all else np.zeros(0, np.int64),
            is_pad=np.concatenate(pads_all) if pads_all else np.zeros(0, bool),
            values=np.concatenate(values_all) if values_all else np.zeros(0),
        ))
    return CsrMatrix(rows=m.rows, cols=m.cols, num_partitions=num_partitions,
                     step_bits=step_bits, offset_bits=offset_bits,
                     partitions=tuple(parts))


@dataclass(frozen=True)
class RunLengthMatrix:
    """Per-column run-length encoding of the nonzero weights only."""

    rows: int
    cols: int
    step_bits: int
    col_ptr: np.ndarray       # entry offsets per column, pads included
    deltas: np.ndarray
    is_pad: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("col_ptr", "deltas", "is_pad", "values"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def total_entries(self) -> int:
        return len(self.deltas)

    def pad_entries(self) -> int:
        return int(self.is_pad.sum())

    def decode(self) -> np.ndarray:
        real = self.values[~self.is_pad]
        dense = np.zeros((self.rows, self.cols),
                         dtype=real.dtype if len(real) else np.float64)
        for j in range(self.cols):
            lo, hi = self.col_ptr[j], self.col_ptr[j + 1]
            rows_j = _delta_decode(self.deltas[lo:hi], self.is_pad[lo:hi])
            keep = ~self.is_pad[lo:hi]
            dense[rows_j, j] = self.values[lo:hi][keep]
        return dense


def encode_runlength(m: CompactMatrix,
                     step_bits: int = DEFAULT_STEP_BITS) -> RunLengthMatrix:
    """Losslessly re-encode a compact matrix with per-column step indices."""
    if step_bits < 1:
        raise ParameterError("step_bits must be >= 1")
    dense = m.decode()
    deltas_all, pads_all, values_all = [], [], []
    col_ptr = np.zeros(m.cols + 1, dtype=np.int64)
    for j in range(m.cols):
        rows_j = np.flatnonzero(m.mask[:, j])
        d, ip = _delta_encode(rows_j, step_bits)
        vals = np.zeros(len(d), dtype=dense.dtype)
        vals[~ip] = dense[rows_j, j]
        deltas_all.append(d)
        pads_all.append(ip)
        values_all.append(vals)
        col_ptr[j + 1] = col_ptr[j] + len(d)
    return RunLengthMatrix(
        rows=m.rows, cols=m.cols, step_bits=step_bits, col_ptr=col_ptr,
        deltas=np.concatenate(deltas_all) if deltas_all else np.zeros(0, np.int64),
        is_pad=np.concatenate(pads_all) if pads_all else np.zeros(0, bool),
        values=np.concatenate(values_all) if values_all else np.zeros(0),
    )


def encode_runlength_vector(dense, step_bits: int = DEFAULT_STEP_BITS):
    """Vector-level run-length deltas (pads included), mostly for tests."""
    dense = np.asarray(dense)
    d, ip = _delta_encode(np.flatnonzero(dense), step_bits)
    return d, ip


# ---------------------------------------------------------------------------
# Footprint accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncodingFootprint:
    """Exact bit accounting for one encoding of one matrix."""

    format: str
    num_partitions: int
    value_bits: int
    mask_bits: int
    row_offset_bits: int
    column_index_bits: int
    total_bits: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(
            self, "total_bits",
            self.value_bits + self.mask_bits + self.row_offset_bits
            + self.column_index_bits)

    @property
    def metadata_bits(self) -> int:
        return self.mask_bits + self.row_offset_bits + self.column_index_bits


def csr_row_offset_bits(rows: int, nnz: int, num_partitions: int) -> int:
    """Row-offset storage: one full (rows+1)-entry array per partition."""
    width = max(1, math.ceil(math.log2(nnz + 1))) if nnz else 1
    return num_partitions * (rows + 1) * width


def _pad_count(positions: np.ndarray, segment_ids: np.ndarray,
               step_bits: int) -> int:
    """Padding entries for delta sequences that reset per segment.

    A gap of g zeros costs g >> step_bits escapes; the leading gap of a
    segment measures from position -1.
    """
    if len(positions) == 0:
        return 0
    gaps = np.empty(len(positions), dtype=np.int64)
    gaps[0] = positions[0]
    same = segment_ids[1:] == segment_ids[:-1]
    gaps[1:] = np.where(same, positions[1:] - positions[:-1] - 1,
                        positions[1:])
    return int((gaps >> step_bits).sum())


def csr_entry_count(mask: np.ndarray, num_partitions: int,
                    step_bits: int) -> int:
    """Stored entries (values + pads) across all CSR partitions, without
    materializing the encoding."""
    mask = np.asarray(mask, dtype=bool)
    total = int(mask.sum())
    for p in range(num_partitions):
        sub = mask[:, p::num_partitions]
        rows_idx, cols_idx = np.nonzero(sub)
        total += _pad_count(cols_idx, rows_idx, step_bits)
    return total


def runlength_entry_count(mask: np.ndarray, step_bits: int) -> int:
    """Stored entries (values + pads) for per-column run-length encoding."""
    mask = np.asarray(mask, dtype=bool)
    cols_idx, rows_idx = np.nonzero(mask.T)
    return int(mask.sum()) + _pad_count(rows_idx, cols_idx, step_bits)


def metadata_footprint(fmt: str, m: CompactMatrix, num_partitions: int = 1,
                       value_bits: int | None = None,
                       step_bits: int = DEFAULT_STEP_BITS) -> EncodingFootprint:
    """Exact per-format bit counts for a concrete matrix.

    Bitmask metadata is independent of the partition count; CSR row-offset
    bits are exactly linear in it.  Padding entries forced by narrow step
    indices are charged to both the value and index tallies.
    """
    if value_bits is None:
        value_bits = m.quant.bits if m.quant is not None else DEFAULT_VALUE_BITS
    if fmt == "bitmask":
        return EncodingFootprint(
            format=fmt, num_partitions=num_partitions,
            value_bits=m.nnz * value_bits,
            mask_bits=m.rows * m.cols,
            row_offset_bits=0, column_index_bits=0)
    if fmt == "csr":
        entries = csr_entry_count(m.mask, num_partitions, step_bits)
        return EncodingFootprint(
            format=fmt, num_partitions=num_partitions,
            value_bits=entries * value_bits,
            mask_bits=0,
            row_offset_bits=csr_row_offset_bits(m.rows, m.nnz, num_partitions),
            column_index_bits=entries * step_bits)
    if fmt == "runlength":
        entries = runlength_entry_count(m.mask, step_bits)
        return EncodingFootprint(
            format=fmt, num_partitions=num_partitions,
            value_bits=entries * value_bits,
            mask_bits=0,
            row_offset_bits=0,
            column_index_bits=entries * step_bits)
    raise ParameterError(f"unknown encoding format {fmt!r}")
