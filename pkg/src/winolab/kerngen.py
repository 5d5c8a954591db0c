"""Exact Cook-Toom construction of Winograd F(m, r) transform matrices.

A kernel F(m, r) computes ``m`` outputs of a valid cross-correlation of an
``l = m + r - 1`` input tile with an ``r``-tap filter as::

    y = AT @ ((BT @ x) * (G @ w))

Matrices are built over :class:`fractions.Fraction` so that correctness can
be checked exactly; :func:`to_float_kernel` converts them for execution.
"""

from __future__ import annotations

import functools
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

Rational = Fraction
Matrix = tuple[tuple[Fraction, ...], ...]


class _Infinity:
    """The point at infinity: evaluation there picks the leading coefficient."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INF"

    def __str__(self) -> str:
        return "inf"

    def __reduce__(self):
        return (_Infinity, ())


INF = _Infinity()
InterpolationPoint = Union[Fraction, _Infinity]


def _point_sequence():
    yield Fraction(0)
    yield Fraction(1)
    yield Fraction(-1)
    for v in (Fraction(2), Fraction(1, 2), Fraction(4), Fraction(1, 4),
              Fraction(3), Fraction(1, 3), Fraction(3, 2), Fraction(2, 3)):
        yield v
        yield -v
    k = 5
    while True:
        for v in (Fraction(k), Fraction(1, k)):
            yield v
            yield -v
        k += 1


def make_points(l: int) -> list[InterpolationPoint]:
    """Return ``l`` distinct interpolation points.

    Finite points come in the order 0, 1, -1, 2, -2, 1/2, -1/2, 4, -4, 1/4,
    -1/4, 3, -3, 1/3, -1/3, 3/2, -3/2, 2/3, -2/3, ...; small magnitudes go
    first to keep the Vandermonde entries small. For ``l >= 2`` the last slot
    is the point at infinity.
    """
    if l < 1:
        raise ValueError(f"need at least one point, got l={l}")
    if l == 1:
        return [Fraction(0)]
    seq = _point_sequence()
    return [next(seq) for _ in range(l - 1)] + [INF]


@dataclass(frozen=True)
class WinogradKernel:
    m: int
    r: int
    l: int
    AT: Matrix
    G: Matrix
    BT: Matrix
    points: tuple[InterpolationPoint, ...]

    def __hash__(self) -> int:
        return hash((self.m, self.r, self.l))

    @property
    def name(self) -> str:
        return f"F({self.m},{self.r})"

    def __repr__(self) -> str:
        return f"WinogradKernel{self.name[1:]}"


def _eval_rows(points: Sequence[InterpolationPoint], n: int) -> list[list[Fraction]]:
    # Evaluation of a degree-(n-1) polynomial at each point.
    rows = []
    for p in points:
        if p is INF:
            rows.append([Fraction(0)] * (n - 1) + [Fraction(1)])
        else:
            rows.append([p**j for j in range(n)])
    return rows


def _inverse(a: list[list[Fraction]]) -> list[list[Fraction]]:
    n = len(a)
    aug = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(a)]
    for col in range(n):
        pivot = next((i for i in range(col, n) if aug[i][col] != 0), None)
        if pivot is None:
            raise ZeroDivisionError("singular matrix")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv_p = 1 / aug[col][col]
        aug[col] = [v * inv_p for v in aug[col]]
        for i in range(n):
            if i != col and aug[i][col] != 0:
                f = aug[i][col]
                aug[i] = [vi - f * vc for vi, vc in zip(aug[i], aug[col])]
    return [row[n:] for row in aug]


def _transpose(a: Sequence[Sequence[Fraction]]) -> list[list[Fraction]]:
    return [list(col) for col in zip(*a)]


def _freeze(a: Sequence[Sequence[Fraction]]) -> Matrix:
    return tuple(tuple(Fraction(v) for v in row) for row in a)


@functools.lru_cache(maxsize=None)
def generate_kernel(m: int, r: int) -> WinogradKernel:
    """Build F(m, r) by Cook-Toom interpolation.

    The correlation is the transpose of the linear convolution of an
    ``m``-vector with the ``r``-tap filter: evaluate both factors at the
    points, multiply, and interpolate with the inverse Vandermonde matrix.
    Transposing that bilinear algorithm gives ``AT``, ``G`` and ``BT``.

    F(1, r) is returned as the native dot product (``BT`` and ``G`` the
    identity, ``AT`` a row of ones): with no overlap between tiles there is
    nothing to save.
    """
    if m < 1 or r < 1:
        raise ValueError(f"F(m, r) needs m >= 1 and r >= 1, got m={m}, r={r}")
    l = m + r - 1
    points = make_points(l)
    finite = [p for p in points if p is not INF]
    if len(set(finite)) != len(finite) or len(finite) < len(points) - 1:
        raise ValueError(f"interpolation points for l={l} are not distinct: {points}")

    if m == 1:
        eye = [[Fraction(int(i == j)) for j in range(r)] for i in range(r)]
        return WinogradKernel(m, r, l, _freeze([[Fraction(1)] * r]), _freeze(eye),
                              _freeze(eye), tuple(points))

    vand = _eval_rows(points, l)
    interp = _inverse(vand)
    AT = _transpose(_eval_rows(points, m))
    G = _eval_rows(points, r)
    BT = _transpose(interp)
    return WinogradKernel(m, r, l, _freeze(AT), _freeze(G), _freeze(BT), tuple(points))


def _matvec(a: Matrix, v: Sequence[Fraction]) -> list[Fraction]:
    return [sum((x * y for x, y in zip(row, v)), Fraction(0)) for row in a]


def apply_exact(k: WinogradKernel, x: Sequence[Fraction], w: Sequence[Fraction]) -> list[Fraction]:
    """Run the kernel on one tile in exact arithmetic."""
    u = _matvec(k.BT, x)
    v = _matvec(k.G, w)
    return _matvec(k.AT, [a * b for a, b in zip(u, v)])


def correlate_exact(x: Sequence[Fraction], w: Sequence[Fraction]) -> list[Fraction]:
    n = len(x) - len(w) + 1
    return [sum((x[i + j] * w[j] for j in range(len(w))), Fraction(0)) for i in range(n)]


def _shape_ok(k: WinogradKernel) -> bool:
    def dims(a):
        return len(a), (len(a[0]) if a else 0)

    return (k.l == k.m + k.r - 1 and dims(k.AT) == (k.m, k.l)
            and dims(k.G) == (k.l, k.r) and dims(k.BT) == (k.l, k.l))


def verify_kernel(k: WinogradKernel, trials: int = 100, seed: int = 0) -> bool:
    """Exact check that ``k`` computes the valid cross-correlation.

    The identity is bilinear in (x, w), so it is first checked on every pair
    of basis vectors, which already proves it. ``trials`` random rational
    pairs (numerators in [-100, 100]) are checked on top, and ``BT`` must be
    invertible.
    """
    if not _shape_ok(k):
        return False
    zero, one = Fraction(0), Fraction(1)
    for i in range(k.l):
        x = [one if a == i else zero for a in range(k.l)]
        for j in range(k.r):
            w = [one if b == j else zero for b in range(k.r)]
            if apply_exact(k, x, w) != correlate_exact(x, w):
                return False
    rng = random.Random(seed)

    def rand_vec(n):
        return [Fraction(rng.randint(-100, 100), rng.randint(1, 100)) for _ in range(n)]

    for _ in range(trials):
        x, w = rand_vec(k.l), rand_vec(k.r)
        if apply_exact(k, x, w) != correlate_exact(x, w):
            return False
    try:
        _inverse([list(row) for row in k.BT])
    except ZeroDivisionError:
        return False
    return True


@functools.lru_cache(maxsize=None)
def _float_cache(k: WinogradKernel, dtype: str):
    def conv(a):
        # float() of a Fraction is correctly rounded
        arr = np.array([[float(v) for v in row] for row in a], dtype=np.float64)
        arr = arr.astype(dtype)
        arr.setflags(write=False)
        return arr

    return conv(k.AT), conv(k.G), conv(k.BT)


def to_float_kernel(k: WinogradKernel, dtype=np.float64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return read-only float ``(AT, G, BT)`` arrays for execution."""
    return _float_cache(k, np.dtype(dtype).name)


def kernel_to_dict(k: WinogradKernel) -> dict:
    def fr(a):
        return [[str(v) for v in row] for row in a]

    return {
        "m": k.m,
        "r": k.r,
        "l": k.l,
        "points": [str(p) for p in k.points],
        "AT": fr(k.AT),
        "G": fr(k.G),
        "BT": fr(k.BT),
    }


def kernel_from_dict(d: dict) -> WinogradKernel:
    def parse(a):
        return _freeze([[Fraction(v) for v in row] for row in a])

    points = tuple(INF if p == "inf" else Fraction(p) for p in d["points"])
    return WinogradKernel(int(d["m"]), int(d["r"]), int(d["l"]), parse(d["AT"]),
                          parse(d["G"]), parse(d["BT"]), points)
