"""Convolution engines.

Every engine computes the valid (unpadded) multichannel cross-correlation

    y[o, i, j] = sum_c sum_a sum_b x[c, S*i + a, S*j + b] * w[o, c, a, b]

and agrees with :func:`direct_conv` up to rounding. Arrays are laid out as
``x: (Cin, *spatial)`` and ``w: (Cout, Cin, *filter)``; single-channel
arrays (``x`` and ``w`` of the same rank, 1 or 2) are accepted and return a
single-channel result. 1D and 2D problems are supported.

The Winograd engines share one tiled core. Along each spatial axis an
:class:`AxisScheme` describes a stack of kernels (innermost first): a plain
Winograd tile is one level, nested Winograd is ``d`` levels of the same
kernel. Transforms are applied per level and the transformed input and
filter tiles meet in a single EWMM, accumulated over input channels.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .kerngen import WinogradKernel, generate_kernel, to_float_kernel
from .tensor import ewmm_accumulate, index_pattern, level_spacing, mode_product


class EngineKind(str, enum.Enum):
    native = "native"
    direct_winograd = "direct_winograd"
    ola = "ola"
    nested = "nested"
    plan = "plan"


@dataclass(frozen=True)
class ConvSpec:
    """Problem description. ``C``/``W`` are ``None`` for 1D convolution."""

    R: int
    S: int
    H: int
    C: int | None = None
    W: int | None = None
    Cin: int = 1
    Cout: int = 1

    def __post_init__(self):
        if self.S < 1 or self.Cin < 1 or self.Cout < 1:
            raise ValueError(f"invalid spec {self}")
        for f, n in zip(self.filter_shape, self.input_shape):
            if f < 1 or f > n:
                raise ValueError(f"filter {self.filter_shape} does not fit input {self.input_shape}")

    @property
    def dims(self) -> int:
        return 1 if self.C is None else 2

    @property
    def filter_shape(self) -> tuple[int, ...]:
        return (self.R,) if self.C is None else (self.R, self.C)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return (self.H,) if self.C is None else (self.H, self.W)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return tuple((n - f) // self.S + 1 for n, f in zip(self.input_shape, self.filter_shape))

    @classmethod
    def infer(cls, x, w, stride: int = 1) -> "ConvSpec":
        xc, wc, _ = _channels(x, w)
        sp, fs = xc.shape[1:], wc.shape[2:]
        if len(sp) == 1:
            return cls(R=fs[0], S=stride, H=sp[0], Cin=xc.shape[0], Cout=wc.shape[0])
        return cls(R=fs[0], C=fs[1], S=stride, H=sp[0], W=sp[1], Cin=xc.shape[0], Cout=wc.shape[0])


def _channels(x, w):
    x = np.asarray(x)
    w = np.asarray(w)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    w = w.astype(x.dtype, copy=False)
    if x.ndim == w.ndim and x.ndim in (1, 2):
        return x[None], w[None, None], True
    if w.ndim == x.ndim + 1 and x.ndim in (2, 3):
        if w.shape[1] != x.shape[0]:
            raise ValueError(f"channel mismatch: input has {x.shape[0]}, filter expects {w.shape[1]}")
        return x, w, False
    raise ValueError(f"unsupported ranks: input {x.shape}, filter {w.shape}")


def _prepare(x, w, spec: ConvSpec | None, stride_ok: bool = False):
    xc, wc, single = _channels(x, w)
    stride = 1 if spec is None else spec.S
    if spec is not None:
        got = ConvSpec.infer(x, w, stride)
        if got != spec:
            raise ValueError(f"arrays do not match spec: {got} vs {spec}")
    if stride != 1 and not stride_ok:
        raise ValueError(f"engine requires stride 1, got {stride}")
    for n, f in zip(xc.shape[1:], wc.shape[2:]):
        if f > n:
            raise ValueError(f"filter {wc.shape[2:]} larger than input {xc.shape[1:]}")
    return xc, wc, single, stride


def _finish(y, single):
    return y[0] if single else y


def direct_conv(x, w, spec: ConvSpec | None = None) -> np.ndarray:
    """Reference valid cross-correlation (the oracle for all other engines)."""
    xc, wc, single, s = _prepare(x, w, spec, stride_ok=True)
    fs = wc.shape[2:]
    win = sliding_window_view(xc, fs, axis=tuple(range(1, xc.ndim)))
    win = win[(slice(None),) + (slice(None, None, s),) * len(fs)]
    if len(fs) == 1:
        y = np.einsum("cia,oca->oi", win, wc)
    else:
        y = np.einsum("cijab,ocab->oij", win, wc)
    return _finish(y, single)


# -- tiled Winograd core ----------------------------------------------------


@dataclass(frozen=True)
class AxisScheme:
    """Stack of Winograd kernels along one spatial axis, innermost first.

    Level ``j`` has index distance ``prod(r_0..r_{j-1})``. A unit computes
    the outputs at ``sum_j i_j * spacing_j`` (``i_j < m_j``) from inputs at
    ``sum_j i_j * spacing_j`` (``i_j < l_j``). ``repeat`` groups units so the
    output length is tiled in multiples of ``repeat`` units.
    """

    levels: tuple[WinogradKernel, ...]
    repeat: int = 1

    @property
    def spacing(self) -> list[int]:
        return level_spacing([k.r for k in self.levels])

    @property
    def reach(self) -> int:
        return math.prod(k.r for k in self.levels)

    @property
    def window(self) -> int:
        return 1 + sum((k.l - 1) * s for k, s in zip(self.levels, self.spacing))

    @property
    def mults(self) -> int:
        return math.prod(k.l for k in self.levels)

    def input_pattern(self) -> np.ndarray:
        return index_pattern([k.l for k in self.levels], self.spacing)

    def filter_pattern(self) -> np.ndarray:
        return index_pattern([k.r for k in self.levels], self.spacing)

    def output_pattern(self) -> np.ndarray:
        return index_pattern([k.m for k in self.levels], self.spacing)

    def distinct_outputs(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct output offsets and, for each, the first flat multi-index producing it."""
        flat = self.output_pattern().ravel()
        pos, first = np.unique(flat, return_index=True)
        return pos, first

    @property
    def span(self) -> int:
        """Extent of one unit's outputs; equals the distinct count when contiguous."""
        return int(self.output_pattern().max()) + 1

    @property
    def contiguous(self) -> bool:
        return len(self.distinct_outputs()[0]) == self.span

    def tiling(self, n_out: int):
        return _tiling(self, n_out)


@functools.lru_cache(maxsize=4096)
def _tiling(scheme: AxisScheme, n_out: int):
    """Unit origins covering ``[0, n_out)`` and, per output, its source unit
    and flat multi-index (first unit wins, lexicographically-first index)."""
    pos, first = scheme.distinct_outputs()
    src_unit = np.full(n_out, -1, dtype=np.int64)
    src_idx = np.zeros(n_out, dtype=np.int64)
    offsets: list[int] = []

    def place(o):
        tgt = o + pos
        ok = tgt < n_out
        tgt, q = tgt[ok], first[ok]
        free = src_unit[tgt] < 0
        src_unit[tgt[free]] = len(offsets)
        src_idx[tgt[free]] = q[free]
        offsets.append(o)

    if scheme.contiguous:
        units = -(-n_out // len(pos))
        units = -(-units // scheme.repeat) * scheme.repeat
        for u in range(units):
            place(u * len(pos))
    else:
        # gaps in the output pattern (m < r): start each unit at the first hole
        while (src_unit < 0).any():
            place(int(np.flatnonzero(src_unit < 0)[0]))
    offsets_arr = np.asarray(offsets, dtype=np.int64)
    for a in (offsets_arr, src_unit, src_idx):
        a.setflags(write=False)
    return offsets_arr, src_unit, src_idx


def _broadcast_patterns(patterns: Sequence[np.ndarray], lead: Sequence[np.ndarray] | None = None):
    """Index arrays for fancy indexing of a tensor with one axis group per
    spatial dimension: ``(*lead_axes, *tile_axes_0, *tile_axes_1, ...)``."""
    D = len(patterns)
    ranks = [p.ndim for p in patterns]
    out = []
    for a, p in enumerate(patterns):
        shape = []
        if lead is not None:
            shape += [len(lead[a]) if b == a else 1 for b in range(D)]
        for b in range(D):
            shape += list(p.shape) if b == a else [1] * ranks[b]
        idx = p if lead is None else lead[a].reshape((-1,) + (1,) * p.ndim) + p
        out.append(idx.reshape(shape))
    return out


def tiled_winograd(xc: np.ndarray, wc: np.ndarray, schemes: Sequence[AxisScheme],
                   n_out: Sequence[int]) -> np.ndarray:
    """Run the Winograd core. ``xc`` is ``(Cin, *sp)``, ``wc`` is
    ``(Cout, Cin, *fs)``; returns ``(Cout, *n_out)``. Inputs are zero-padded
    as needed and the filter is zero-padded up to each scheme's reach."""
    D = len(schemes)
    dtype = xc.dtype
    cin, cout = xc.shape[0], wc.shape[0]
    tilings = [s.tiling(n) for s, n in zip(schemes, n_out)]

    need = [int(t[0][-1]) + s.window for s, t in zip(schemes, tilings)]
    pad = [(0, 0)] + [(0, max(0, nd - n)) for nd, n in zip(need, xc.shape[1:])]
    xp = np.pad(xc, pad)
    for f, s in zip(wc.shape[2:], schemes):
        if f > s.reach:
            raise ValueError(f"filter side {f} exceeds kernel reach {s.reach}")
    wp = np.pad(wc, [(0, 0), (0, 0)] + [(0, s.reach - f) for f, s in zip(wc.shape[2:], schemes)])

    u = xp[(slice(None),) + tuple(_broadcast_patterns(
        [s.input_pattern() for s in schemes], [t[0] for t in tilings]))]
    v = wp[(slice(None), slice(None)) + tuple(_broadcast_patterns([s.filter_pattern() for s in schemes]))]

    axis_u, axis_v = 1 + D, 2
    for s in schemes:
        for k in s.levels:
            AT, G, BT = to_float_kernel(k, dtype)
            u = mode_product(u, BT, axis_u)
            v = mode_product(v, G, axis_v)
            axis_u += 1
            axis_v += 1

    tiles = u.shape[1:1 + D]
    tile_shape = u.shape[1 + D:]
    m = ewmm_accumulate(u.reshape(cin, math.prod(tiles), -1), v.reshape(cout, cin, -1))
    m = m.reshape((cout,) + tiles + tile_shape)

    axis = 1 + D
    for s in schemes:
        for k in s.levels:
            m = mode_product(m, to_float_kernel(k, dtype)[0], axis)
            axis += 1
    m = m.reshape((cout,) + tiles + tuple(math.prod(kk.m for kk in s.levels) for s in schemes))

    units = [t[1] for t in tilings]
    flat = [t[2] for t in tilings]
    sel = []
    for group in (units, flat):
        for a, arr in enumerate(group):
            shape = [1] * D
            shape[a] = len(arr)
            sel.append(arr.reshape(shape))
    return m[(slice(None),) + tuple(sel)]


# -- engines ----------------------------------------------------------------


def _outputs(xc, wc, stride=1):
    return tuple((n - f) // stride + 1 for n, f in zip(xc.shape[1:], wc.shape[2:]))


def winograd_conv(x, w, spec: ConvSpec | None = None, kernel: WinogradKernel | None = None) -> np.ndarray:
    """Tiled Winograd convolution with a single kernel level per axis.

    Tiles of ``l`` inputs advance by ``m``; filters shorter than ``r`` are
    zero-padded. F(1, r) falls back to :func:`direct_conv`.
    """
    if kernel is None:
        raise ValueError("winograd_conv needs a kernel")
    xc, wc, single, _ = _prepare(x, w, spec)
    if max(wc.shape[2:]) > kernel.r:
        raise ValueError(f"filter {wc.shape[2:]} larger than {kernel.name}; use ola, nested or a plan")
    if kernel.m == 1:
        return direct_conv(x, w, spec)
    schemes = [AxisScheme((kernel,))] * (xc.ndim - 1)
    return _finish(tiled_winograd(xc, wc, schemes, _outputs(xc, wc)), single)


def direct_winograd_conv(x, w, spec: ConvSpec | None = None, m: int = 2) -> np.ndarray:
    """Winograd with one F(m, R) kernel per axis sized to the whole filter."""
    xc, wc, single, _ = _prepare(x, w, spec)
    schemes = [AxisScheme((generate_kernel(m, f),)) for f in wc.shape[2:]]
    return _finish(tiled_winograd(xc, wc, schemes, _outputs(xc, wc)), single)


def ola_conv(x, w, spec: ConvSpec | None = None, kernel: WinogradKernel | None = None) -> np.ndarray:
    """Overlap-and-add: split the filter into ``r``-tap blocks per axis, run
    the kernel on each block against the correspondingly shifted input and
    sum the partial outputs."""
    if kernel is None:
        raise ValueError("ola_conv needs a kernel")
    xc, wc, single, _ = _prepare(x, w, spec)
    r = kernel.r
    n_out = _outputs(xc, wc)
    fs = wc.shape[2:]
    scheme = AxisScheme((kernel,))
    y = None
    for blocks in np.ndindex(*(-(-f // r) for f in fs)):
        xs = xc[(slice(None),) + tuple(slice(b * r, None) for b in blocks)]
        ws = wc[(slice(None), slice(None)) + tuple(slice(b * r, (b + 1) * r) for b in blocks)]
        part = tiled_winograd(xs, ws, [scheme] * len(fs), n_out)
        y = part if y is None else y + part
    return _finish(y, single)


def nesting_depth(side: int, r: int) -> int:
    """Smallest ``d >= 1`` with ``side <= r**d``."""
    if r < 2:
        if side > r:
            raise ValueError(f"a kernel with r={r} cannot nest up to {side} taps")
        return 1
    d = 1
    while r**d < side:
        d += 1
    return d


def nested_scheme(side: int, kernel: WinogradKernel, depth: int | None = None,
                  mixed: bool = False) -> AxisScheme:
    """Axis scheme for nested Winograd on a filter of ``side`` taps.

    ``mixed`` uses two levels: ``kernel`` inside and F(m, ceil(side / r))
    outside, instead of repeating ``kernel`` at every level.
    """
    if mixed:
        if side <= kernel.r:
            return AxisScheme((kernel,))
        outer = generate_kernel(kernel.m, -(-side // kernel.r))
        return AxisScheme((kernel, outer))
    d = nesting_depth(side, kernel.r) if depth is None else depth
    if d < 1 or side > kernel.r**d:
        raise ValueError(f"filter side {side} does not fit {kernel.name} nested to depth {d}")
    return AxisScheme((kernel,) * d)


def nested_conv(x, w, spec: ConvSpec | None = None, kernel: WinogradKernel | None = None,
                depth: int | None = None, mixed: bool = False) -> np.ndarray:
    """Nested Winograd: the filter is reshaped into an ``r**d`` hypercube per
    axis, input slices are cut by inner slides of stride ``r**j``, and both
    are transformed along every nesting level. Redundant outputs (``m > r``)
    are discarded. 2D problems nest each spatial axis independently."""
    if kernel is None:
        raise ValueError("nested_conv needs a kernel")
    xc, wc, single, _ = _prepare(x, w, spec)
    schemes = [nested_scheme(f, kernel, depth, mixed) for f in wc.shape[2:]]
    return _finish(tiled_winograd(xc, wc, schemes, _outputs(xc, wc)), single)


def phase_lengths(R: int, S: int) -> list[int]:
    """Taps per stride phase: ``ceil((R - t) / S)`` for ``t < min(S, R)``.

    With ``R = r'*S + p`` the first ``p`` phases have ``r' + 1`` taps."""
    return [-(-(R - t) // S) for t in range(min(S, R))]


def polyphase(xc, wc, stride: int):
    """Yield ``(x_phase, w_phase)`` for every combination of per-axis phases
    with at least one tap."""
    fs = wc.shape[2:]
    ranges = [range(min(stride, f)) for f in fs]
    for ts in np.ndindex(*(len(r) for r in ranges)):
        sl = tuple(slice(t, None, stride) for t in ts)
        yield ts, xc[(slice(None),) + sl], wc[(slice(None), slice(None)) + sl]


def strided_conv(x, w, spec: ConvSpec, kernel: WinogradKernel | None = None,
                 phase_engine: str | EngineKind = EngineKind.nested,
                 pad_short_phases: bool = False, **phase_options) -> np.ndarray:
    """Stride-S convolution as the sum of S**dims stride-1 phase convolutions.

    Input phase ``t`` is ``x[t::S]`` and filter phase ``t`` is ``w[t::S]``.
    With ``pad_short_phases`` every phase filter is zero-padded to the
    longest phase length so a single kernel size serves all phases. Other
    keyword options go to the phase engine.
    """
    if spec is None or spec.S < 2:
        raise ValueError("strided_conv needs a spec with stride >= 2")
    xc, wc, single, s = _prepare(x, w, spec, stride_ok=True)
    n_out = _outputs(xc, wc, s)
    engine = EngineKind(phase_engine)
    longest = [-(-f // s) for f in wc.shape[2:]]
    y = np.zeros((wc.shape[0],) + n_out, dtype=xc.dtype)
    for _, xp, wp in polyphase(xc, wc, s):
        if pad_short_phases:
            wp = np.pad(wp, [(0, 0), (0, 0)] + [(0, L - f) for L, f in zip(longest, wp.shape[2:])])
        need = [n + f - 1 for n, f in zip(n_out, wp.shape[2:])]
        xp = np.pad(xp, [(0, 0)] + [(0, max(0, nd - n)) for nd, n in zip(need, xp.shape[1:])])
        xp = xp[(slice(None),) + tuple(slice(0, nd) for nd in need)]
        y += run_engine(engine, xp, wp, None, kernel, **phase_options)
    return _finish(y, single)


def run_engine(engine: str | EngineKind, xc, wc, spec: ConvSpec | None,
               kernel: WinogradKernel | None, **options) -> np.ndarray:
    engine = EngineKind(engine)
    if spec is not None and spec.S > 1 and engine is not EngineKind.native:
        if engine is EngineKind.plan:
            from .planner import plan_conv
            return plan_conv(xc, wc, spec, kernel, **options)
        return strided_conv(xc, wc, spec, kernel, phase_engine=engine, **options)
    if engine is EngineKind.native:
        return direct_conv(xc, wc, spec)
    if engine is EngineKind.direct_winograd:
        if kernel is None:
            raise ValueError("direct_winograd needs a kernel for its output tile size m")
        return direct_winograd_conv(xc, wc, spec, kernel.m)
    if engine is EngineKind.ola:
        return ola_conv(xc, wc, spec, kernel)
    if engine is EngineKind.nested:
        return nested_conv(xc, wc, spec, kernel, **options)
    from .planner import plan_conv
    return plan_conv(xc, wc, spec, kernel, **options)


def multichannel_wrap(engine: str | EngineKind, x, w, spec: ConvSpec | None = None,
                      kernel: WinogradKernel | None = None, **options) -> np.ndarray:
    """Run ``engine`` on a multichannel problem ``x: (Cin, ...)``,
    ``w: (Cout, Cin, ...)``.

    Input channels are accumulated in the transform domain inside the
    Winograd core, so each output channel gets one inverse transform per tile.
    """
    x, w = np.asarray(x), np.asarray(w)
    if w.ndim != x.ndim + 1 or w.shape[1] != x.shape[0]:
        raise ValueError(f"channel mismatch: input {x.shape}, filter {w.shape}")
    return run_engine(engine, x, w, spec, kernel, **options)
