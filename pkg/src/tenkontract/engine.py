"""Execute contraction trees: TTGT steps, sparse batched GEMM, index reordering."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit
from .einsum import EinsumSpec, GemmShape, NotFormable, classify_gemm, required_layout
from .network import (
    ComplexTensor,
    GroupLabel,
    MergePlan,
    NetworkError,
    SparseState,
    TensorNetwork,
    boundary_tensor,
    circuit_to_network,
)
from .pathopt import ContractionTree
from .precision import EXACT, GemmConfig, PrecisionSchedule, gemm
from .slicer import SliceSet
from .verify import AmplitudeSet

__all__ = [
    "EinsumSpec", "GemmShape", "NotFormable", "classify_gemm",
    "FlopCounter", "StepRecord", "SubtaskError",
    "execute_step", "sparse_batched_gemm", "reorder_topk", "formable_count",
    "contract_subtask", "contract_tree", "contract_all", "run_simulation",
]


class SubtaskError(RuntimeError):
    def __init__(self, task_index: int, cause: str):
        super().__init__(task_index, cause)
        self.task_index = task_index
        self.cause = cause

    def __str__(self) -> str:
        return f"subtask {self.task_index} failed: {self.cause}"


@dataclass
class StepRecord:
    step: int
    tcc: int
    formable: bool
    shape: dict | None
    time: float

    def to_json(self) -> dict:
        return {"step": self.step, "Tcc": self.tcc, "formable": self.formable,
                "shape": self.shape, "time": self.time}


@dataclass
class FlopCounter:
    """Multiply-accumulates actually issued to the GEMM kernel."""

    macs: int = 0
    ops_per_element: int = 8
    records: list[StepRecord] = field(default_factory=list)

    def add(self, macs: int) -> None:
        self.macs += macs

    @property
    def flops(self) -> int:
        return self.macs * self.ops_per_element


def _check_operand(t: ComplexTensor, labels: tuple, spec: EinsumSpec, side: str) -> ComplexTensor:
    if set(t.labels) != set(labels) or len(t.labels) != len(labels):
        raise NetworkError(f"{side} operand labels {t.labels} do not match {labels}")
    for lab, d in zip(t.labels, t.dims):
        if spec.dims[lab] != d:
            raise NetworkError(f"{side} operand has extent {d} on {lab!r}, spec says {spec.dims[lab]}")
    return t


def sparse_batched_gemm(a: np.ndarray, b: np.ndarray, plan: MergePlan, cfg: GemmConfig = EXACT) -> np.ndarray:
    """Slab ``c`` of the result is ``a[ia[c]] @ b[ib[c]]``.

    ``a`` is ``(|A configs|, m, k)`` and ``b`` is ``(|B configs|, k, n)``;
    operands are addressed through the plan's offsets instead of being
    gathered into new arrays first.
    """
    return gemm(a, b, cfg, index=(plan.pairs_a, plan.pairs_b))


def execute_step(a: ComplexTensor, b: ComplexTensor, spec: EinsumSpec, cfg: GemmConfig = EXACT,
                 counter: FlopCounter | None = None) -> ComplexTensor:
    """Evaluate one pairwise einsum by transpose, (batched) GEMM, transpose."""
    a = _check_operand(a, spec.lhs, spec, "lhs")
    b = _check_operand(b, spec.rhs, spec, "rhs")
    out_set = set(spec.out)
    free_a = set(spec.free_lhs)
    free_b = set(spec.free_rhs)
    m_labels = tuple(x for x in spec.out if x in free_a)
    n_labels = tuple(x for x in spec.out if x in free_b)
    k_labels = spec.contracted
    batch = tuple(x for x in spec.out if x in set(spec.batch))
    if set(m_labels) != free_a or set(n_labels) != free_b:
        raise NetworkError(f"output {spec.out} drops free labels")
    head_a = (spec.group_a,) if spec.plan is not None else ()
    head_b = (spec.group_b,) if spec.plan is not None else ()
    head_c = (spec.merged_group,) if spec.plan is not None else ()
    bsz, m, n, k = spec.bmnk

    at = a.transpose_to(head_a + batch + m_labels + k_labels)
    bt = b.transpose_to(head_b + batch + k_labels + n_labels)
    if spec.plan is not None:
        ga, gb = spec.dims[spec.group_a], spec.dims[spec.group_b]
        nb = spec.extent(batch)
        if nb != 1:
            raise NetworkError("dense batch labels alongside a sparse merge are not supported")
        am = at.data.reshape(ga, m, k)
        bm = bt.data.reshape(gb, k, n)
        cm = sparse_batched_gemm(am, bm, spec.plan, cfg)
    else:
        am = at.data.reshape(bsz, m, k)
        bm = bt.data.reshape(bsz, k, n)
        cm = gemm(am, bm, cfg)
    if counter is not None:
        counter.add(bsz * m * n * k)
    c_labels = head_c + batch + m_labels + n_labels
    data = cm.reshape(tuple(spec.dims[x] for x in c_labels))
    if set(c_labels) != out_set:
        raise NetworkError(f"cannot produce output labels {spec.out}")
    return ComplexTensor(c_labels, data).transpose_to(spec.out)


# ---------------------------------------------------------------------------
# index reordering


def formable_count(tree: ContractionTree, k: int | None = None) -> int:
    """GEMM-formable steps among the ``k`` most expensive (all if ``None``)."""
    steps = tree.steps()
    orders = tree.all_orders()
    ranked = _rank(tree, steps)
    if k is not None:
        ranked = ranked[:k]
    return sum(1 for i in ranked if classify_gemm(tree.einsum_spec(steps[i], orders)))


def _rank(tree: ContractionTree, steps) -> list[int]:
    return sorted(range(len(steps)), key=lambda i: (-tree.info(steps[i]).tcc, i))


def reorder_topk(tree: ContractionTree, k: int = 10) -> ContractionTree:
    """Re-lay out producer outputs so the costliest steps become GEMMs.

    Steps are taken in descending T_cc.  A step that is already a GEMM is
    locked.  Otherwise its operands are given the ``[batch, M, K]`` /
    ``[batch, K, N]`` layouts implied by its current output order, which
    means changing the output order of its producers; a producer step that
    was locked earlier may not change, leaves always may.  The step and its
    producer steps are then locked.
    """
    new = tree.copy()
    if k <= 0:
        return new
    new.freeze_orders()
    steps = new.steps()
    modified: set = set()
    for i in _rank(new, steps)[:k]:
        s = steps[i]
        if s in modified:
            continue
        spec = new.einsum_spec(s, new.orders)
        if classify_gemm(spec):
            modified.add(s)
            continue
        layout = required_layout(spec)
        if isinstance(layout, NotFormable):
            continue
        lhs, rhs = layout
        a, b = new.children[s]
        k_alt = tuple(x for x in spec.rhs if x in set(spec.contracted))
        options = [(lhs, rhs)]
        if k_alt != spec.contracted:
            nk = len(spec.contracted)
            na = len(lhs) - nk
            nb_head = len(rhs) - nk - len(spec.free_rhs)
            options.append((lhs[:na] + k_alt, rhs[:nb_head] + k_alt + rhs[nb_head + nk:]))
        for want_a, want_b in options:
            blocked = any(
                new.orders[c] != want and c in new.children and c in modified
                for c, want in ((a, want_a), (b, want_b))
            )
            if not blocked:
                new.orders[a] = want_a
                new.orders[b] = want_b
                modified.add(s)
                modified.update(c for c in (a, b) if c in new.children)
                break
    return new


# ---------------------------------------------------------------------------
# execution


def contract_tree(net: TensorNetwork, tree: ContractionTree, schedule: PrecisionSchedule | None = None,
                  fixed: dict | None = None, counter: FlopCounter | None = None,
                  record: bool = False) -> ComplexTensor:
    """Contract the whole tree with the given bond values fixed."""
    orders = tree.all_orders()
    live: dict = {}
    for leaf in tree.leaves:
        tid = next(iter(leaf))
        live[leaf] = boundary_tensor(net, tid, fixed).transpose_to(orders[leaf])
    for i, s in enumerate(tree.steps()):
        a, b = tree.children[s]
        spec = tree.einsum_spec(s, orders)
        cfg = schedule.config_for(i) if schedule is not None else EXACT
        t0 = time.perf_counter()
        live[s] = execute_step(live.pop(a), live.pop(b), spec, cfg, counter)
        if record and counter is not None:
            shape = classify_gemm(spec)
            counter.records.append(StepRecord(i, tree.info(s).tcc, bool(shape),
                                              shape.to_json() if shape else None,
                                              time.perf_counter() - t0))
    return live[tree.root]


def contract_subtask(net: TensorNetwork, tree: ContractionTree, schedule: PrecisionSchedule | None = None,
                     task_index: int = 0, counter: FlopCounter | None = None,
                     record: bool = False) -> ComplexTensor:
    slices = SliceSet.from_tree(tree)
    return contract_tree(net, tree, schedule, slices.assignment(task_index), counter, record)


def _pairwise_sum(parts: list[np.ndarray]) -> np.ndarray:
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _subtask_worker(args):
    net, tree, schedule, index = args
    counter = FlopCounter()
    try:
        t = contract_subtask(net, tree, schedule, index, counter)
    except Exception as exc:  # surfaced with the subtask index
        raise SubtaskError(index, f"{type(exc).__name__}: {exc}") from exc
    return t, counter.macs


def root_bitstrings(tree: ContractionTree, root: ComplexTensor) -> tuple[str, ...]:
    state = tree.net.state
    groups = [x for x in root.labels if isinstance(x, GroupLabel)]
    if len(root.labels) != 1 or len(groups) != 1:
        raise NetworkError(f"root tensor has labels {root.labels}, expected one sample index")
    qubits = groups[0].qubits
    if qubits != tuple(range(state.n_qubits)):
        raise NetworkError("root sample index does not cover every qubit")
    return tuple("".join(map(str, cfg)) for cfg in state.table(qubits))


def contract_all(tree: ContractionTree, schedule: PrecisionSchedule | None = None, workers: int = 1,
                 counter: FlopCounter | None = None) -> ComplexTensor:
    """Sum of every subtask's root tensor.

    Subtask results are reduced pairwise in index order, so the answer does
    not depend on ``workers``.
    """
    net = tree.net
    n_tasks = SliceSet.from_tree(tree).n_subtasks
    jobs = [(net, tree, schedule, t) for t in range(n_tasks)]
    if workers > 1 and n_tasks > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_tasks)) as pool:
            results = list(pool.map(_subtask_worker, jobs))
    else:
        results = [_subtask_worker(j) for j in jobs]
    if counter is not None:
        counter.add(sum(macs for _, macs in results))
    first = results[0][0]
    return ComplexTensor(first.labels, _pairwise_sum([t.data for t, _ in results]))


def run_simulation(circuit: Circuit, state: SparseState, tree: ContractionTree | None = None,
                   slices: SliceSet | None = None, schedule: PrecisionSchedule | None = None,
                   workers: int = 1, counter: FlopCounter | None = None) -> AmplitudeSet:
    """Amplitudes of ``circuit`` for every bitstring of ``state``."""
    if tree is None:
        from .pathopt import greedy_init

        tree = greedy_init(circuit_to_network(circuit, state))
    net = tree.net
    if net.state is None or net.state.n_qubits != circuit.n_qubits or len(net.tensors) != circuit.n_qubits + circuit.gate_count:
        raise NetworkError("contraction tree was not built for this circuit")
    if state is not net.state and list(state.enumerate()) != list(net.state.enumerate()):
        raise NetworkError("contraction tree was built for a different sparse state")
    have = SliceSet.from_tree(tree)
    if slices is not None and tuple(slices.bonds) != tuple(have.bonds):
        raise NetworkError(f"slice set {slices.bonds} does not match the tree's {have.bonds}")
    root = contract_all(tree, schedule, workers, counter)
    return AmplitudeSet(circuit.n_qubits, root_bitstrings(tree, root), root.data.reshape(-1))
