"""Multiplication-complexity model, numerical-error harness and the
engine-versus-oracle sweep.

Only EWMM (general) multiplications are counted; transform arithmetic is
multiplication by constants and is left out. Costs factor over spatial
dimensions, so a 2D count is the per-axis count squared.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .engines import (ConvSpec, EngineKind, direct_conv, nested_scheme, phase_lengths,
                      run_engine)
from .kerngen import WinogradKernel, generate_kernel
from .planner import decompose, resolve_lengths, term_scheme
from .tensor import counting

DEFAULT_KERNELS = ((2, 2), (3, 3), (4, 4), (6, 3))
DEFAULT_METHODS = (EngineKind.ola, EngineKind.nested, EngineKind.direct_winograd)


@dataclass(frozen=True)
class CostReport:
    method: EngineKind
    filter_side: int
    kernel: tuple[int, int]
    dims: int
    stride: int
    mults_per_tile: int
    outputs_per_tile: int
    adds_per_output: Fraction | None = None

    @property
    def mults_per_output(self) -> Fraction:
        return Fraction(self.mults_per_tile, self.outputs_per_tile)


def _unit_cost(method: EngineKind, f: int, kernel: WinogradKernel, mixed: bool,
               exact_leaves: bool) -> tuple[int, int]:
    """(multiplications, outputs) of one stride-1 unit along one axis."""
    m, r, l = kernel.m, kernel.r, kernel.l
    if method is EngineKind.native:
        return f, 1
    if method is EngineKind.direct_winograd:
        return m + f - 1, m
    if method is EngineKind.ola:
        if f <= r:
            return l, m
        return -(-f // r) * l, m
    if method is EngineKind.nested:
        scheme = nested_scheme(f, kernel, mixed=mixed)
    else:
        scheme = term_scheme(resolve_lengths(decompose(f, 1, kernel, exact_leaves)))
    if not scheme.contiguous:
        raise ValueError(f"{kernel.name} leaves gaps between nested outputs; no closed form")
    return scheme.mults, scheme.span


def _axis_cost(method: EngineKind, R: int, kernel: WinogradKernel, stride: int, mixed: bool,
               exact_leaves: bool) -> tuple[int, int]:
    units = [_unit_cost(method, f, kernel, mixed, exact_leaves) for f in phase_lengths(R, stride)]
    M = math.lcm(*(o for _, o in units))
    return sum(M // o * u for u, o in units), M


def count_mults(method, R: int, kernel: WinogradKernel | None = None, dims: int = 2,
                stride: int = 1, mixed: bool = False, exact_leaves: bool = False) -> CostReport:
    """Closed-form EWMM multiplications per output for one method.

    Per axis: native ``R``; direct Winograd F(m, R) ``(m+R-1)/m``; OLA
    ``ceil(R/r)*l/m``; nested ``l**d / O_d`` with ``d = ceil(log_r R)``. With
    stride ``S`` each phase is costed separately and the phase terms are
    brought to a common output length (their least common multiple).
    """
    method = EngineKind(method)
    if kernel is None:
        if method is not EngineKind.native:
            raise ValueError(f"{method.value} needs a kernel")
        kernel = generate_kernel(1, 1)
    if dims not in (1, 2) or stride < 1 or R < 1:
        raise ValueError(f"unsupported shape: R={R}, dims={dims}, stride={stride}")
    mults, M = _axis_cost(method, R, kernel, stride, mixed, exact_leaves)
    return CostReport(method, R, (kernel.m, kernel.r), dims, stride, mults**dims, M**dims)


def instrumented_mults(method, R: int, kernel: WinogradKernel, dims: int = 2, stride: int = 1,
                       tiles: int = 2, seed: int = 0, **options) -> tuple[int, int]:
    """Run the real engine on a problem covering exactly ``tiles`` cost tiles
    per axis and return ``(EWMM count, number of cost tiles)``."""
    method = EngineKind(method)
    _, M = _axis_cost(method, R, kernel, stride, options.get("mixed", False),
                      options.get("exact_leaves", False))
    n = (tiles * M - 1) * stride + R
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1,) + (n,) * dims)
    w = rng.standard_normal((1, 1) + (R,) * dims)
    spec = ConvSpec.infer(x, w, stride)
    with counting() as c:
        run_engine(method, x, w, spec, kernel, **options)
    return c.total, tiles**dims


def sweep(filter_sides: Iterable[int] = range(3, 13), kernels=DEFAULT_KERNELS,
          methods=DEFAULT_METHODS, dims: int = 2, stride: int = 1) -> list[CostReport]:
    out = []
    for m, r in kernels:
        k = generate_kernel(m, r)
        for R in filter_sides:
            for method in methods:
                out.append(count_mults(method, R, k, dims, stride))
    return out


CSV_HEADER = "method,filter_side,kernel_m,kernel_r,dims,mults_per_tile,outputs_per_tile,mults_per_output"


def to_csv(reports: Sequence[CostReport]) -> str:
    lines = [CSV_HEADER]
    for c in reports:
        lines.append(f"{c.method.value},{c.filter_side},{c.kernel[0]},{c.kernel[1]},{c.dims},"
                     f"{c.mults_per_tile},{c.outputs_per_tile},{float(c.mults_per_output)!r}")
    return "\n".join(lines) + "\n"


def speedup_ratio(R: int, kernel: WinogradKernel, baseline=EngineKind.ola,
                  candidate=EngineKind.nested, dims: int = 2, stride: int = 1) -> Fraction:
    """Baseline multiplications per output over the candidate's."""
    return (count_mults(baseline, R, kernel, dims, stride).mults_per_output
            / count_mults(candidate, R, kernel, dims, stride).mults_per_output)


# -- numerical error --------------------------------------------------------


@dataclass(frozen=True)
class ErrorReport:
    method: EngineKind
    precision: int
    max_relative_error: float
    mean_relative_error: float


def relative_error(y: np.ndarray, ref: np.ndarray) -> float:
    """max |y - ref| / max |ref| (0 when both vanish)."""
    scale = float(np.abs(ref).max())
    diff = float(np.abs(np.asarray(y, dtype=np.float64) - ref).max())
    if scale == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / scale


def measure_error(method, R: int, kernel: WinogradKernel | None, precision: int = 32,
                  trials: int = 100, seed: int = 0, size: int | None = None) -> ErrorReport:
    """Relative error of a 2D single-channel run against the 64-bit oracle.

    Data are uniform in [-1, 1] and rounded to the working precision before
    either side runs, so only arithmetic error is measured. For
    ``direct_winograd`` the kernel supplies ``m`` and F(m, R) is used.
    """
    method = EngineKind(method)
    dtype = {32: np.float32, 64: np.float64}[precision]
    size = size or R + 15
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(trials):
        x = rng.uniform(-1, 1, (1, size, size)).astype(dtype)
        w = rng.uniform(-1, 1, (1, 1, R, R)).astype(dtype)
        ref = direct_conv(x.astype(np.float64), w.astype(np.float64))
        errs.append(relative_error(run_engine(method, x, w, None, kernel), ref))
    return ErrorReport(method, precision, max(errs), float(np.mean(errs)))


# -- oracle sweep -----------------------------------------------------------


@dataclass(frozen=True)
class VerifyRow:
    engine: str
    kernel: tuple[int, int]
    R: int
    S: int
    trials: int
    max_error: float
    passed: bool


STRIDE1_ENGINES = (EngineKind.direct_winograd, EngineKind.ola, EngineKind.nested, EngineKind.plan)


def _verify_one(cfg, trials: int, seed: int, tolerance: float, index: int) -> VerifyRow:
    engine, (m, r), R, S = cfg
    k = generate_kernel(m, r)
    rng = np.random.default_rng([seed, index])
    worst = 0.0
    for _ in range(trials):
        H = R + S * int(rng.integers(0, 10))
        W = R + S * int(rng.integers(0, 10))
        cin, cout = (int(v) for v in rng.integers(1, 3, 2))
        x = rng.standard_normal((cin, H, W))
        w = rng.standard_normal((cout, cin, R, R))
        spec = ConvSpec.infer(x, w, S)
        y = run_engine(engine, x, w, spec, k)
        worst = max(worst, relative_error(y, direct_conv(x, w, spec)))
    name = engine.value if S == 1 or engine is EngineKind.plan else f"stride[{engine.value}]"
    return VerifyRow(name, (m, r), R, S, trials, worst, worst <= tolerance)


def worker_count() -> int:
    cap = os.environ.get("WINOLAB_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def oracle_suite(trials: int = 50, seed: int = 0, tolerance: float = 1e-6,
                 kernels=DEFAULT_KERNELS, sides: Iterable[int] = range(3, 13),
                 strides: Iterable[int] = (1, 2, 3), engines=STRIDE1_ENGINES,
                 threads: int | None = None) -> list[VerifyRow]:
    """Compare every engine with :func:`direct_conv` on random problems.

    Strided configurations run the stride-1 engines on each stride phase
    (the plan engine uses its own decomposition). Results do not depend on
    the number of worker threads.
    """
    configs = [(EngineKind(e), tuple(k), R, S)
               for S in strides for k in kernels for R in sides for e in engines]
    threads = threads or worker_count()

    def job(i):
        return _verify_one(configs[i], trials, seed, tolerance, i)

    if threads == 1:
        return [job(i) for i in range(len(configs))]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(job, range(len(configs))))
