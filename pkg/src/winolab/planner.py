"""Decomposition of F(M, R; S) into an expression tree over one Winograd kernel.

Node kinds:

* :class:`Leaf` -- one kernel application (filter zero-padded to ``r``)
* :class:`Nest` -- the kernel nested ``levels`` deep (filter up to ``r**levels``)
* :class:`Sum` -- stride phases, one term per phase, accumulated
* :class:`Repeat` -- ``n`` back-to-back runs of the child to match output lengths

Trees are planned per spatial axis; a 2D convolution with a square filter
shares a single tree between both axes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .engines import AxisScheme, ConvSpec, _prepare, _finish, phase_lengths, polyphase, tiled_winograd
from .kerngen import WinogradKernel, generate_kernel


@dataclass(frozen=True)
class Leaf:
    kernel: WinogradKernel
    effective_r: int
    length: int | None = None

    def __post_init__(self):
        if not 1 <= self.effective_r <= self.kernel.r:
            raise ValueError(f"effective_r={self.effective_r} outside [1, {self.kernel.r}]")


@dataclass(frozen=True)
class Nest:
    child: "Plan"
    levels: int
    length: int | None = None

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("a Nest needs at least 2 levels")


@dataclass(frozen=True)
class Sum:
    terms: tuple["Plan", ...]
    length: int | None = None


@dataclass(frozen=True)
class Repeat:
    n: int
    child: "Plan"
    length: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("Repeat needs n >= 1")


Plan = Union[Leaf, Nest, Sum, Repeat]


def nested_outputs(m: int, r: int, levels: int) -> int:
    """O_1 = m, O_j = (m - 1) * r**(j-1) + O_(j-1); equals m**levels when m == r."""
    o = m
    for j in range(2, levels + 1):
        o = (m - 1) * r ** (j - 1) + o
    return o


def _stride1(R: int, kernel: WinogradKernel, exact_leaves: bool) -> Plan:
    if R <= kernel.r:
        if exact_leaves and R < kernel.r:
            return Leaf(generate_kernel(kernel.m, R), R)
        return Leaf(kernel, R)
    levels = 1
    while kernel.r**levels < R:
        levels += 1
    return Nest(Leaf(kernel, kernel.r), levels)


def decompose(R: int, S: int, kernel: WinogradKernel, exact_leaves: bool = False) -> Plan:
    """Rewrite F(M, R; S) until every leaf fits ``kernel``.

    Stride > 1 becomes a Sum over the stride phases (``R = r'*S + p``: ``p``
    phases of ``r' + 1`` taps, then ``S - p`` of ``r'``). A stride-1 filter
    longer than ``r`` becomes a Nest of ``ceil(log_r R)`` levels. Short leaves
    run on ``kernel`` with zero padding unless ``exact_leaves`` asks for a
    true F(m, R') kernel.
    """
    if R < 1 or S < 1:
        raise ValueError(f"need R >= 1 and S >= 1, got R={R}, S={S}")
    if kernel.r < 2 and R > kernel.r:
        raise ValueError(f"{kernel.name} cannot decompose a {R}-tap filter")
    if S > 1:
        return Sum(tuple(_stride1(n, kernel, exact_leaves) for n in phase_lengths(R, S)))
    return _stride1(R, kernel, exact_leaves)


def resolve_lengths(p: Plan) -> Plan:
    """Fill in output lengths bottom-up; Sum terms are brought to the least
    common multiple of their lengths by wrapping them in Repeat nodes."""
    if isinstance(p, Leaf):
        return replace(p, length=p.kernel.m)
    if isinstance(p, Nest):
        if not isinstance(p.child, Leaf):
            raise ValueError("only a Leaf can be nested")
        k = p.child.kernel
        return replace(p, child=resolve_lengths(p.child), length=nested_outputs(k.m, k.r, p.levels))
    if isinstance(p, Repeat):
        child = resolve_lengths(p.child)
        return replace(p, child=child, length=p.n * child.length)
    terms = [resolve_lengths(t) for t in p.terms]
    M = math.lcm(*(t.length for t in terms))
    terms = [t if t.length == M else Repeat(M // t.length, t, M) for t in terms]
    return replace(p, terms=tuple(terms), length=M)


# -- reverse Polish serialization -------------------------------------------


@dataclass(frozen=True)
class RpnToken:
    op: str  # KERNEL, NEST, SUM, REPEAT
    args: tuple[int, ...]

    def __str__(self) -> str:
        if self.op == "KERNEL":
            m, r, e = self.args
            return f"K{m},{r}" + ("" if e == r else f"/{e}")
        return {"NEST": "NEST", "SUM": "SUM", "REPEAT": "REP"}[self.op] + str(self.args[0])

    @classmethod
    def parse(cls, text: str) -> "RpnToken":
        try:
            if text.startswith("K"):
                body, _, eff = text[1:].partition("/")
                m, r = (int(v) for v in body.split(","))
                return cls("KERNEL", (m, r, int(eff) if eff else r))
            for prefix, op in (("NEST", "NEST"), ("SUM", "SUM"), ("REP", "REPEAT")):
                if text.startswith(prefix):
                    return cls(op, (int(text[len(prefix):]),))
        except ValueError:
            pass
        raise ValueError(f"bad RPN token {text!r}")


def to_rpn(p: Plan) -> list[RpnToken]:
    if isinstance(p, Leaf):
        return [RpnToken("KERNEL", (p.kernel.m, p.kernel.r, p.effective_r))]
    if isinstance(p, Nest):
        return to_rpn(p.child) + [RpnToken("NEST", (p.levels,))]
    if isinstance(p, Repeat):
        return to_rpn(p.child) + [RpnToken("REPEAT", (p.n,))]
    out = []
    for t in p.terms:
        out += to_rpn(t)
    return out + [RpnToken("SUM", (len(p.terms),))]


def parse_rpn(tokens) -> Plan:
    """Stack-evaluate a token list (or a space-separated string) into a
    resolved plan."""
    if isinstance(tokens, str):
        tokens = [RpnToken.parse(t) for t in tokens.split()]
    stack: list[Plan] = []
    for tok in tokens:
        if tok.op == "KERNEL":
            m, r, e = tok.args
            stack.append(Leaf(generate_kernel(m, r), e))
            continue
        arity = tok.args[0] if tok.op == "SUM" else 1
        if arity < 1 or len(stack) < arity:
            raise ValueError(f"stack underflow at {tok}")
        if tok.op == "SUM":
            terms = tuple(stack[-arity:])
            del stack[-arity:]
            stack.append(Sum(terms))
        elif tok.op == "NEST":
            stack.append(Nest(stack.pop(), tok.args[0]))
        else:
            stack.append(Repeat(tok.args[0], stack.pop()))
    if len(stack) != 1:
        raise ValueError(f"malformed RPN: {len(stack)} values left on the stack")
    return resolve_lengths(stack[0])


def rpn_string(p: Plan) -> str:
    return " ".join(str(t) for t in to_rpn(p))


def plan_to_dict(p: Plan) -> dict:
    if isinstance(p, Leaf):
        return {"kind": "leaf", "m": p.kernel.m, "r": p.kernel.r,
                "effective_r": p.effective_r, "length": p.length}
    if isinstance(p, Nest):
        return {"kind": "nest", "levels": p.levels, "length": p.length, "child": plan_to_dict(p.child)}
    if isinstance(p, Repeat):
        return {"kind": "repeat", "n": p.n, "length": p.length, "child": plan_to_dict(p.child)}
    return {"kind": "sum", "length": p.length, "terms": [plan_to_dict(t) for t in p.terms]}


def plan_from_dict(d: dict) -> Plan:
    kind = d["kind"]
    if kind == "leaf":
        return Leaf(generate_kernel(d["m"], d["r"]), d["effective_r"], d.get("length"))
    if kind == "nest":
        return Nest(plan_from_dict(d["child"]), d["levels"], d.get("length"))
    if kind == "repeat":
        return Repeat(d["n"], plan_from_dict(d["child"]), d.get("length"))
    if kind == "sum":
        return Sum(tuple(plan_from_dict(t) for t in d["terms"]), d.get("length"))
    raise ValueError(f"unknown plan node {kind!r}")


def plan_to_json(p: Plan) -> str:
    return json.dumps(plan_to_dict(p), indent=2)


def format_tree(p: Plan, indent: int = 0) -> str:
    pad = "  " * indent
    n = "?" if p.length is None else p.length
    if isinstance(p, Leaf):
        return f"{pad}Leaf {p.kernel.name} effective_r={p.effective_r} -> {n}"
    if isinstance(p, Nest):
        return f"{pad}Nest levels={p.levels} -> {n}\n" + format_tree(p.child, indent + 1)
    if isinstance(p, Repeat):
        return f"{pad}Repeat n={p.n} -> {n}\n" + format_tree(p.child, indent + 1)
    return f"{pad}Sum -> {n}\n" + "\n".join(format_tree(t, indent + 1) for t in p.terms)


# -- execution --------------------------------------------------------------


def term_scheme(p: Plan) -> AxisScheme:
    """Axis scheme executing one stride-1 term."""
    if isinstance(p, Leaf):
        return AxisScheme((p.kernel,))
    if isinstance(p, Nest):
        if not isinstance(p.child, Leaf):
            raise ValueError("only a Leaf can be nested")
        return AxisScheme((p.child.kernel,) * p.levels)
    if isinstance(p, Repeat):
        inner = term_scheme(p.child)
        return replace(inner, repeat=inner.repeat * p.n)
    raise ValueError("a Sum cannot appear inside a stride-1 term")


def _phase_terms(p: Plan, R: int, S: int) -> list[Plan]:
    if isinstance(p, Sum):
        if S < 2 or len(p.terms) != min(S, R):
            raise ValueError(f"Sum of {len(p.terms)} terms does not match R={R}, S={S}")
        return list(p.terms)
    if S != 1:
        raise ValueError(f"stride {S} needs a Sum at the plan root")
    return [p]


def execute_plan(p, x, w, spec: ConvSpec | None = None) -> np.ndarray:
    """Run a plan (or one plan per spatial axis) on ``x`` and ``w``.

    The Sum root splits input and filter into stride phases and accumulates
    the phase results; each term runs on the tiled Winograd core.
    """
    xc, wc, single, s = _prepare(x, w, spec, stride_ok=True)
    fs = wc.shape[2:]
    plans = list(p) if isinstance(p, (tuple, list)) else [p] * len(fs)
    if len(plans) != len(fs):
        raise ValueError(f"{len(plans)} axis plans for a {len(fs)}D problem")
    terms = [_phase_terms(pl, f, s) for pl, f in zip(plans, fs)]
    n_out = tuple((n - f) // s + 1 for n, f in zip(xc.shape[1:], fs))
    y = np.zeros((wc.shape[0],) + n_out, dtype=xc.dtype)
    for ts, xp, wp in polyphase(xc, wc, s):
        schemes = [term_scheme(terms[a][t]) for a, t in enumerate(ts)]
        y += tiled_winograd(xp, wp, schemes, n_out)
    return _finish(y, single)


def plan_for(spec: ConvSpec, kernel: WinogradKernel, exact_leaves: bool = False):
    """Resolved plan for ``spec``: one tree, or a (height, width) pair for a
    rectangular 2D filter."""
    plans = [resolve_lengths(decompose(f, spec.S, kernel, exact_leaves)) for f in spec.filter_shape]
    if len(plans) == 1 or spec.R == spec.C:
        return plans[0]
    return tuple(plans)


def plan_conv(x, w, spec: ConvSpec | None, kernel: WinogradKernel,
              exact_leaves: bool = False) -> np.ndarray:
    if kernel is None:
        raise ValueError("planning needs a kernel")
    if spec is None:
        spec = ConvSpec.infer(x, w)
    return execute_plan(plan_for(spec, kernel, exact_leaves), x, w, spec)
