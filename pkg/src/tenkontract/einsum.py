"""Pairwise einsum signatures and their GEMM classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .network import GroupLabel, MergePlan

OPS_PER_ELEMENT = 8


@dataclass(frozen=True)
class EinsumSpec:
    """``out = sum over contracted of lhs * rhs`` with labelled operands.

    A sparse merge carries a :class:`MergePlan`; the two operand groups
    ``plan.group_a``/``plan.group_b`` collapse into the output group
    ``GroupLabel(plan.merged)`` and act as an indexed batch dimension.
    """

    lhs: tuple
    rhs: tuple
    out: tuple
    dims: Mapping = field(hash=False, compare=False)
    plan: MergePlan | None = field(default=None, hash=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "lhs", tuple(self.lhs))
        object.__setattr__(self, "rhs", tuple(self.rhs))
        object.__setattr__(self, "out", tuple(self.out))
        for name in ("lhs", "rhs", "out"):
            labels = getattr(self, name)
            if len(set(labels)) != len(labels):
                raise ValueError(f"repeated label in {name}: {labels}")
        missing = [lab for lab in self.lhs + self.rhs + self.out if lab not in self.dims]
        if missing:
            raise ValueError(f"no extent for labels {missing}")
        known = set(self.lhs) | set(self.rhs)
        extra = [lab for lab in self.out if lab not in known and lab != self.merged_group]
        if extra:
            raise ValueError(f"output labels {extra} appear in neither operand")

    @classmethod
    def parse(cls, expr: str, dims: Mapping[str, int] | int = 2) -> "EinsumSpec":
        """Single-character labels, ``"ab,bc->ac"``."""
        inputs, out = expr.replace(" ", "").split("->")
        lhs, rhs = inputs.split(",")
        if isinstance(dims, int):
            dims = {c: dims for c in lhs + rhs + out}
        return cls(tuple(lhs), tuple(rhs), tuple(out), dict(dims))

    @property
    def group_a(self) -> GroupLabel | None:
        return GroupLabel(self.plan.group_a) if self.plan is not None else None

    @property
    def group_b(self) -> GroupLabel | None:
        return GroupLabel(self.plan.group_b) if self.plan is not None else None

    @property
    def merged_group(self) -> GroupLabel | None:
        return GroupLabel(self.plan.merged) if self.plan is not None else None

    @property
    def batch(self) -> tuple:
        rhs, out = set(self.rhs), set(self.out)
        return tuple(lab for lab in self.lhs if lab in rhs and lab in out)

    @property
    def contracted(self) -> tuple:
        rhs, out = set(self.rhs), set(self.out)
        return tuple(lab for lab in self.lhs if lab in rhs and lab not in out)

    @property
    def free_lhs(self) -> tuple:
        skip = set(self.rhs) | {self.group_a}
        return tuple(lab for lab in self.lhs if lab not in skip)

    @property
    def free_rhs(self) -> tuple:
        skip = set(self.lhs) | {self.group_b}
        return tuple(lab for lab in self.rhs if lab not in skip)

    def extent(self, labels: Sequence) -> int:
        return math.prod(self.dims[lab] for lab in labels)

    @property
    def bmnk(self) -> tuple[int, int, int, int]:
        b = self.extent(self.batch)
        if self.plan is not None:
            b *= self.plan.dim
        return b, self.extent(self.free_lhs), self.extent(self.free_rhs), self.extent(self.contracted)

    @property
    def tcc(self) -> int:
        b, m, n, k = self.bmnk
        return OPS_PER_ELEMENT * b * m * n * k

    def sizes(self) -> tuple[int, int, int]:
        return self.extent(self.lhs), self.extent(self.rhs), self.extent(self.out)

    def tmc(self, sizeof: int = 8) -> int:
        return sizeof * sum(self.sizes())

    def __str__(self) -> str:
        def fmt(labels):
            return " ".join(map(repr, labels))
        return f"{fmt(self.lhs)}, {fmt(self.rhs)} -> {fmt(self.out)}"

    def to_json(self) -> dict:
        from .network import label_to_json

        return {
            "lhs": [label_to_json(x) for x in self.lhs],
            "rhs": [label_to_json(x) for x in self.rhs],
            "out": [label_to_json(x) for x in self.out],
        }


@dataclass(frozen=True)
class GemmShape:
    b: int
    m: int
    n: int
    k: int
    trans_a: bool = False
    trans_b: bool = False
    sparse: bool = False

    @property
    def macs(self) -> int:
        return self.b * self.m * self.n * self.k

    def to_json(self) -> dict:
        return {"b": self.b, "m": self.m, "n": self.n, "k": self.k,
                "trans_a": self.trans_a, "trans_b": self.trans_b, "sparse": self.sparse}


@dataclass(frozen=True)
class NotFormable:
    reason: str

    def __bool__(self) -> bool:
        return False


def _split_two_runs(seq: tuple, first: set, second: set, name: str):
    """Split ``seq`` into two contiguous blocks drawn from ``first``/``second``.

    Returns ``(run_first, run_second, swapped)`` or a :class:`NotFormable`.
    """
    runs = []
    for lab in seq:
        kind = 0 if lab in first else 1
        if not runs or runs[-1][0] != kind:
            runs.append((kind, [lab]))
        else:
            runs[-1][1].append(lab)
    if len(runs) > 2:
        return NotFormable(f"{name} interleaves free and contracted labels: {seq}")
    blocks = {kind: tuple(labs) for kind, labs in runs}
    swapped = bool(runs) and runs[0][0] == 1 and len(runs) == 2
    return blocks.get(0, ()), blocks.get(1, ()), swapped


def required_layout(spec: EinsumSpec):
    """Operand orders that make ``spec`` a GEMM without touching its output.

    Returns ``(lhs, rhs)`` label tuples, or :class:`NotFormable` if the
    output order itself is not ``[batch, M, N]``.
    """
    out = spec.out
    batch = spec.batch
    nb = len(batch)
    lead = tuple(out[:nb + (1 if spec.plan is not None else 0)])
    want_lead = set(batch) | ({spec.merged_group} if spec.plan is not None else set())
    if set(lead) != want_lead:
        return NotFormable("batch labels do not lead the output")
    rest = out[len(lead):]
    free_a, free_b = spec.free_lhs, spec.free_rhs
    m_run = tuple(rest[:len(free_a)])
    n_run = tuple(rest[len(free_a):])
    if set(m_run) != set(free_a) or set(n_run) != set(free_b):
        return NotFormable("output is not [batch, M, N]")
    dense_batch = tuple(lab for lab in lead if lab in set(batch))
    lhs_batch = dense_batch if spec.plan is None else (spec.group_a,) + dense_batch
    rhs_batch = dense_batch if spec.plan is None else (spec.group_b,) + dense_batch
    k_run = spec.contracted
    return lhs_batch + m_run + k_run, rhs_batch + k_run + n_run


def classify_gemm(spec: EinsumSpec) -> GemmShape | NotFormable:
    """GEMM shape of ``spec`` under its current label orders, or why not."""
    batch = spec.batch
    contracted = set(spec.contracted)
    free_a, free_b = spec.free_lhs, spec.free_rhs
    sparse = spec.plan is not None

    if sparse:
        lhs_batch = (spec.group_a,) + batch
        rhs_batch = (spec.group_b,) + batch
        out_batch = (spec.merged_group,) + batch
    else:
        lhs_batch = rhs_batch = out_batch = batch
    nb = len(lhs_batch)

    # batch labels must lead every operand and agree in order
    if spec.lhs[:nb] != lhs_batch or spec.rhs[:nb] != rhs_batch or spec.out[:nb] != out_batch:
        if sparse and spec.lhs[:1] != (spec.group_a,):
            return NotFormable("lhs does not start with its sample group")
        if sparse and spec.rhs[:1] != (spec.group_b,):
            return NotFormable("rhs does not start with its sample group")
        if sparse and spec.out[:1] != (spec.merged_group,):
            return NotFormable("output does not start with the merged sample group")
        return NotFormable("batch labels do not lead all operands in one order")

    parts_a = _split_two_runs(spec.lhs[nb:], set(free_a), contracted, "lhs")
    if isinstance(parts_a, NotFormable):
        return parts_a
    m_run, k_run_a, trans_a = parts_a
    parts_b = _split_two_runs(spec.rhs[nb:], contracted, set(free_b), "rhs")
    if isinstance(parts_b, NotFormable):
        return parts_b
    k_run_b, n_run, trans_b = parts_b
    if k_run_a != k_run_b:
        return NotFormable("contracted labels ordered differently in lhs and rhs")
    if spec.out[nb:] != m_run + n_run:
        return NotFormable("output is not [batch, M, N] in operand order")
    b, m, n, k = spec.bmnk
    return GemmShape(b, m, n, k, trans_a, trans_b, sparse)
