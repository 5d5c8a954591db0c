"""Dense real tensors: transforms, EWMM with multiplication counting,
reordered tiles for nesting, and the WTEN file format.

Tensors are plain ``numpy.ndarray`` objects. Nesting tiles use axis 0 for
the innermost level, so along axis ``j`` neighbouring entries are ``r**j``
apart in the source vector.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .kerngen import WinogradKernel


class MultCounter:
    """Thread-safe tally of EWMM multiplications."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.total = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.total += int(n)


_active: list[MultCounter] = []
_active_lock = threading.Lock()


@contextlib.contextmanager
def counting() -> Iterator[MultCounter]:
    """Count every EWMM multiplication made inside the block (all threads)."""
    c = MultCounter()
    with _active_lock:
        _active.append(c)
    try:
        yield c
    finally:
        with _active_lock:
            _active.remove(c)


def _record(n: int) -> None:
    with _active_lock:
        counters = list(_active)
    for c in counters:
        c.add(n)


def mode_product(t: np.ndarray, M: np.ndarray, axis: int) -> np.ndarray:
    """Multiply every mode-``axis`` fiber of ``t`` by ``M``."""
    M = np.asarray(M)
    if not -t.ndim <= axis < t.ndim:
        raise ValueError(f"axis {axis} out of range for rank {t.ndim}")
    if M.ndim != 2 or M.shape[1] != t.shape[axis]:
        raise ValueError(f"matrix {M.shape} does not match axis {axis} of length {t.shape[axis]}")
    return np.moveaxis(np.tensordot(M, t, axes=(1, axis)), 0, axis)


def ewmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"EWMM shape mismatch: {a.shape} vs {b.shape}")
    _record(a.size)
    return a * b


def ewmm_accumulate(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """EWMM of transformed tiles with transform-domain channel accumulation.

    ``u`` is ``(Cin, T, L)`` (tiles, tile elements) and ``v`` is
    ``(Cout, Cin, L)``; the result is ``(Cout, T, L)``. Every one of the
    ``Cout * Cin * T * L`` products is counted.
    """
    cin, t, n = u.shape
    cout = v.shape[0]
    if v.shape != (cout, cin, n):
        raise ValueError(f"EWMM shape mismatch: {u.shape} vs {v.shape}")
    _record(cout * cin * t * n)
    return np.einsum("ctl,ocl->otl", u, v)


@dataclass(frozen=True)
class ReorderedTile:
    tensor: np.ndarray
    source_offset: int


def level_spacing(rs: Sequence[int]) -> list[int]:
    """Index distance of each nesting level: 1, r0, r0*r1, ..."""
    out, s = [], 1
    for r in rs:
        out.append(s)
        s *= r
    return out


def index_pattern(extents: Sequence[int], spacing: Sequence[int]) -> np.ndarray:
    """Array of shape ``extents`` holding ``sum_j i_j * spacing[j]``."""
    pat = np.zeros(tuple(extents), dtype=np.int64)
    for j, (n, s) in enumerate(zip(extents, spacing)):
        shape = [1] * len(extents)
        shape[j] = n
        pat = pat + (np.arange(n, dtype=np.int64) * s).reshape(shape)
    return pat


def reorder_filter(w, r: int, d: int) -> ReorderedTile:
    """Reshape a 1D filter into a rank-``d`` tile with all sides ``r``.

    Entry ``(k0, ..., k_{d-1})`` is ``w[k0 + k1*r + ... ]``; the tail is
    zero-filled.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    if len(w) > r**d:
        raise ValueError(f"filter of length {len(w)} does not fit in {r}**{d}")
    padded = np.zeros(r**d, dtype=w.dtype)
    padded[: len(w)] = w
    pat = index_pattern([r] * d, level_spacing([r] * d))
    return ReorderedTile(padded[pat], 0)


def input_window(l: int, r: int, d: int) -> int:
    """Input span of one depth-``d`` slice: W1 = l, Wj = r**(j-1)*(l-1) + W(j-1)."""
    w = l
    for j in range(2, d + 1):
        w = r ** (j - 1) * (l - 1) + w
    return w


def reorder_input_slice(x, offset: int, kernel: WinogradKernel, d: int) -> ReorderedTile:
    """Cut the input slice at ``offset`` into a rank-``d`` tile with sides ``l``.

    Along axis ``j`` the inner slide has stride ``r**j``; for ``d == 2`` column
    ``k`` is ``x[offset + k*r : offset + k*r + l]``.
    """
    x = np.asarray(x)
    width = input_window(kernel.l, kernel.r, d)
    if offset < 0 or offset + width > len(x):
        raise IndexError(f"slice [{offset}, {offset + width}) outside input of length {len(x)}")
    pat = index_pattern([kernel.l] * d, level_spacing([kernel.r] * d))
    return ReorderedTile(x[offset + pat], offset)


# -- WTEN / CSV files -------------------------------------------------------

_MAGIC = b"WTEN"


class TensorFormatError(ValueError):
    pass


def write_tensor(path, t: np.ndarray) -> None:
    t = np.asarray(t, dtype="<f8")
    if t.ndim < 1 or 0 in t.shape:
        raise ValueError("tensors need rank >= 1 and no empty dimensions")
    header = "WTEN v1 {} {}\n".format(t.ndim, " ".join(str(n) for n in t.shape))
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(t).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a WTEN file; ``.csv`` files (rank <= 2) are accepted too."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(4)
        if head != _MAGIC:
            if path.suffix.lower() == ".csv":
                return _read_csv(path)
            raise TensorFormatError(f"{path}: not a WTEN file")
        line = head + f.readline()
        payload = f.read()
    fields = line.decode("ascii").split()
    if len(fields) < 3 or fields[1] != "v1":
        raise TensorFormatError(f"{path}: bad WTEN header {line!r}")
    rank = int(fields[2])
    dims = tuple(int(v) for v in fields[3:])
    if len(dims) != rank or rank < 1 or any(n < 1 for n in dims):
        raise TensorFormatError(f"{path}: bad WTEN shape {dims} for rank {rank}")
    count = int(np.prod(dims))
    if len(payload) != 8 * count:
        raise TensorFormatError(f"{path}: payload has {len(payload)} bytes, expected {8 * count}")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)


def _read_csv(path: Path) -> np.ndarray:
    rows = [line for line in path.read_text().splitlines() if line.strip()]
    data = np.array([[float(v) for v in line.split(",")] for line in rows], dtype=np.float64)
    if data.shape[0] == 1:
        return data[0]
    return data
