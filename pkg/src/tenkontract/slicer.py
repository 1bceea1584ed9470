"""Dynamic slicing: cut bonds until the peak working set fits a budget."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable

from .network import TensorNetwork, label_key
from .pathopt import AnnealSchedule, ContractionTree, ScoreParams, sa_optimize


class BudgetError(RuntimeError):
    """The memory budget cannot be met."""

    def __init__(self, msg: str, residual: int | None = None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True)
class SliceSet:
    bonds: tuple = ()
    dims: tuple = ()

    def __post_init__(self):
        if len(self.bonds) != len(self.dims):
            raise ValueError("one dimension per sliced bond")

    @classmethod
    def from_tree(cls, tree: ContractionTree) -> "SliceSet":
        return cls(tuple(tree.sliced), tuple(tree.net.bonds[b].dim for b in tree.sliced))

    @property
    def n_subtasks(self) -> int:
        return math.prod(self.dims)

    def __len__(self) -> int:
        return len(self.bonds)

    def digits(self, task_index: int) -> tuple[int, ...]:
        """Mixed-radix digits; the most recently sliced bond varies fastest."""
        if not 0 <= task_index < self.n_subtasks:
            raise IndexError(f"subtask {task_index} outside [0, {self.n_subtasks})")
        out = []
        for d in reversed(self.dims):
            task_index, r = divmod(task_index, d)
            out.append(r)
        return tuple(reversed(out))

    def assignment(self, task_index: int) -> dict:
        return dict(zip(self.bonds, self.digits(task_index)))


_UNITS = {
    "": 1, "b": 1,
    "k": 1024, "kb": 1000, "kib": 1024,
    "m": 1024 ** 2, "mb": 1000 ** 2, "mib": 1024 ** 2,
    "g": 1024 ** 3, "gb": 1000 ** 3, "gib": 1024 ** 3,
    "t": 1024 ** 4, "tb": 1000 ** 4, "tib": 1024 ** 4,
}


def parse_mem_budget(text: str | int) -> int:
    """Bytes from ``"4GiB"``, ``"512MB"``, ``"1e6"`` or a plain integer."""
    if isinstance(text, int):
        return text
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*([A-Za-z]*)\s*", str(text))
    if not m or m.group(2).lower() not in _UNITS:
        raise ValueError(f"cannot parse memory budget {text!r}")
    value = float(m.group(1)) * _UNITS[m.group(2).lower()]
    if value <= 0:
        raise ValueError("memory budget must be positive")
    return int(value)


def peak_memory(tree: ContractionTree) -> int:
    """Largest per-step working set in bytes.

    Counts both operands, the output and one transposition buffer the size
    of the larger operand.
    """
    sizeof = tree.model.sizeof_data
    steps = tree.steps()
    if not steps:
        return sizeof * max(tree.info(leaf).size for leaf in tree.leaves)
    peak = 0
    for s in steps:
        a, b = tree.children[s]
        sa, sb = tree.info(a).size, tree.info(b).size
        peak = max(peak, sa + sb + tree.info(s).size + max(sa, sb))
    return sizeof * peak


def slice_candidates(tree: ContractionTree) -> list:
    done = set(tree.sliced)
    return sorted((bid for bid, b in tree.net.bonds.items()
                   if not b.open and not b.sliced and bid not in done), key=label_key)


def select_slice_bond(tree: ContractionTree):
    """Closed bond whose slicing shrinks the largest intermediate the most.

    Ties go to the smallest total T_cc summed over all resulting subtasks,
    then to the smallest bond id.
    """
    candidates = slice_candidates(tree)
    if not candidates:
        raise BudgetError("no closed bonds left to slice")
    steps = tree.steps()
    rows = []
    for s in steps:
        a, b = tree.children[s]
        info = tree.info(s)
        rows.append((info.labels, tree.info(a).labels | tree.info(b).labels, info.size, info.tcc))
    tsc = max((r[2] for r in rows), default=0)
    best = None
    for bond in candidates:
        d = tree.dim(bond)
        new_tsc = max((size // d if bond in labels else size for labels, _, size, _ in rows), default=0)
        # slicing multiplies the task count by d and divides touched steps by d
        total = sum(tcc if bond in inputs else tcc * d for _, inputs, _, tcc in rows)
        key = (-(tsc - new_tsc), total, label_key(bond))
        if best is None or key < best[0]:
            best = (key, bond)
    return best[1]


def apply_slice(net: TensorNetwork, tree: ContractionTree, bond) -> tuple[TensorNetwork, ContractionTree]:
    b = net.bonds.get(bond)
    if b is None:
        raise KeyError(f"no bond {bond!r}")
    if b.open:
        raise ValueError(f"bond {bond!r} is open and cannot be sliced")
    if b.sliced or bond in tree.sliced:
        raise ValueError(f"bond {bond!r} is already sliced")
    new_net = net.mark_sliced([bond])
    return new_net, tree.with_slices(tree.sliced + (bond,), net=new_net)


def dynamic_slice(net: TensorNetwork, tree: ContractionTree, mem_budget: int, finetune_sweeps: int = 30,
                  params: ScoreParams = ScoreParams(), seed: int = 0,
                  tmin: float = 0.02) -> tuple[ContractionTree, SliceSet]:
    """Slice, fine-tune, repeat until :func:`peak_memory` fits ``mem_budget``."""
    sizeof = tree.model.sizeof_data
    largest_leaf = sizeof * max(tree.info(leaf).size for leaf in tree.leaves)
    if mem_budget < largest_leaf:
        raise BudgetError(f"budget {mem_budget} B is below the largest input tensor ({largest_leaf} B)",
                          largest_leaf)
    fine = AnnealSchedule(t0=tmin, tmin=tmin, decay=1.0, sweeps=finetune_sweeps)
    rounds = 0
    while peak_memory(tree) > mem_budget:
        if not slice_candidates(tree):
            raise BudgetError(f"all bonds sliced and the peak is still {peak_memory(tree)} B "
                              f"(budget {mem_budget} B)", peak_memory(tree))
        bond = select_slice_bond(tree)
        net, tree = apply_slice(net, tree, bond)
        if finetune_sweeps:
            tree = sa_optimize(params=params, schedule=fine, seed=seed + rounds, init=tree)
        rounds += 1
    return tree, SliceSet.from_tree(tree)


def subtask_network(net: TensorNetwork, slices: SliceSet, task_index: int) -> TensorNetwork:
    """Copy of ``net`` with every sliced bond fixed to this subtask's value."""
    values = slices.assignment(task_index)
    out = net.copy()
    for bond, v in values.items():
        b = net.bonds[bond]
        if b.open:
            raise ValueError(f"bond {bond!r} is open")
        for tid in b.endpoints:
            out.tensors[tid] = out.tensors[tid].fix(bond, v)
        del out.bonds[bond]
    return out


def sliced_networks(net: TensorNetwork, slices: SliceSet) -> Iterable[TensorNetwork]:
    for t in range(slices.n_subtasks):
        yield subtask_network(net, slices, t)
