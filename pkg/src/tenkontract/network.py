"""Tensor-network data model and sparse-state boundary conditions."""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .circuit import Circuit, gate_tensor

Label = Hashable


class NetworkError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class GroupLabel:
    """Index of a tensor's merged open bonds, one entry per sample configuration."""

    qubits: tuple[int, ...]

    def __repr__(self) -> str:
        return "g" + ",".join(map(str, self.qubits))

    def to_json(self) -> str:
        return "g:" + ",".join(map(str, self.qubits))


def label_to_json(label):
    if isinstance(label, GroupLabel):
        return label.to_json()
    return label


def label_from_json(value):
    if isinstance(value, str) and value.startswith("g:"):
        body = value[2:]
        return GroupLabel(tuple(int(q) for q in body.split(",")) if body else ())
    return value


def label_key(label) -> tuple:
    """Total order over mixed label types (ints, strings, groups)."""
    if isinstance(label, GroupLabel):
        return (0, label.qubits)
    if isinstance(label, (int, np.integer)):
        return (1, int(label))
    return (2, str(label))


@dataclass(eq=False)
class ComplexTensor:
    labels: tuple
    data: np.ndarray
    fmt: str = "FP64"

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.data = np.asarray(self.data)
        if self.data.ndim != len(self.labels):
            raise NetworkError(f"tensor has {self.data.ndim} axes but {len(self.labels)} labels")
        if len(set(self.labels)) != len(self.labels):
            raise NetworkError(f"duplicate labels {self.labels}")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def dim_of(self, label) -> int:
        return self.data.shape[self.labels.index(label)]

    def transpose_to(self, labels: Sequence) -> "ComplexTensor":
        labels = tuple(labels)
        if labels == self.labels:
            return self
        if set(labels) != set(self.labels):
            raise NetworkError(f"cannot transpose {self.labels} to {labels}")
        perm = [self.labels.index(lab) for lab in labels]
        return ComplexTensor(labels, np.transpose(self.data, perm), self.fmt)

    def fix(self, label, value: int) -> "ComplexTensor":
        """Slice ``label`` at ``value`` and drop the axis."""
        ax = self.labels.index(label)
        data = np.take(self.data, value, axis=ax)
        return ComplexTensor(self.labels[:ax] + self.labels[ax + 1:], data, self.fmt)


@dataclass(frozen=True)
class Bond:
    id: int
    dim: int
    endpoints: tuple[int, ...]
    open: bool = False
    qubit: int | None = None
    sliced: bool = False


# ---------------------------------------------------------------------------
# sparse states


class StateMode(str, enum.Enum):
    SINGLE = "single"
    FULL = "full"
    SUBSPACE = "subspace"
    SPARSE = "sparse"


MAX_FULL_QUBITS = 30


@dataclass(frozen=True, eq=False)
class SparseState:
    """The set of final-state bitstrings a contraction must produce.

    Qubit 0 is the leftmost character (most significant bit).  ``Full`` and
    ``Subspace`` states are implicit; their configuration tables are
    generated on demand.
    """

    n_qubits: int
    mode: StateMode
    bitstrings: tuple[str, ...] = ()
    open_qubits: tuple[int, ...] = ()
    fixed: tuple[tuple[int, int], ...] = ()

    def __len__(self) -> int:
        if self.mode is StateMode.FULL:
            return 2 ** self.n_qubits
        if self.mode is StateMode.SUBSPACE:
            return 2 ** len(self.open_qubits)
        return len(self.bitstrings)

    def enumerate(self) -> Iterable[str]:
        if self.mode is StateMode.FULL:
            if self.n_qubits > MAX_FULL_QUBITS:
                raise NetworkError(f"refusing to enumerate 2^{self.n_qubits} bitstrings")
            for i in range(2 ** self.n_qubits):
                yield format(i, f"0{self.n_qubits}b")
        elif self.mode is StateMode.SUBSPACE:
            fixed = dict(self.fixed)
            for bits in itertools.product("01", repeat=len(self.open_qubits)):
                chars = [str(fixed.get(q, 0)) for q in range(self.n_qubits)]
                for q, b in zip(self.open_qubits, bits):
                    chars[q] = b
                yield "".join(chars)
        else:
            yield from self.bitstrings

    @property
    def _bit_matrix(self) -> np.ndarray:
        cached = self.__dict__.get("_bits")
        if cached is None:
            cached = np.array([[c == "1" for c in s] for s in self.bitstrings], dtype=np.uint8)
            cached = cached.reshape(len(self.bitstrings), self.n_qubits)
            object.__setattr__(self, "_bits", cached)
        return cached

    def table(self, qubits: Sequence[int]) -> tuple[tuple[int, ...], ...]:
        """Distinct projections onto ``qubits`` in first-occurrence order.

        Scanning is over the lexicographically sorted bitstrings, so for
        implicit states this is plain lexicographic order.
        """
        qubits = tuple(qubits)
        cache = self.__dict__.setdefault("_tables", {})
        hit = cache.get(qubits)
        if hit is not None:
            return hit
        if self.mode is StateMode.FULL:
            out = tuple(itertools.product((0, 1), repeat=len(qubits)))
        elif self.mode is StateMode.SUBSPACE:
            fixed = dict(self.fixed)
            opened = set(self.open_qubits)
            axes = [(0, 1) if q in opened else (fixed.get(q, 0),) for q in qubits]
            out = tuple(itertools.product(*axes))
        else:
            proj = self._bit_matrix[:, list(qubits)]
            seen: dict[tuple[int, ...], None] = {}
            for row in map(tuple, proj.tolist()):
                seen.setdefault(row, None)
            out = tuple(seen)
        cache[qubits] = out
        return out

    def group_dim(self, qubits: Sequence[int]) -> int:
        if self.mode is StateMode.FULL:
            return 2 ** len(qubits)
        if self.mode is StateMode.SINGLE:
            return 1
        if self.mode is StateMode.SUBSPACE:
            opened = set(self.open_qubits)
            return 2 ** sum(1 for q in qubits if q in opened)
        return len(self.table(tuple(qubits)))

    def __repr__(self) -> str:
        return f"SparseState(n={self.n_qubits}, mode={self.mode.value}, count={len(self)})"


def make_sparse_state(n_qubits: int, mode: StateMode | str, bitstrings: Iterable[str] | None = None,
                      *, open_qubits: Iterable[int] | None = None,
                      fixed: Mapping[int, int] | None = None) -> SparseState:
    """Build a normalised sparse state.

    ``Sparse`` and ``Single`` take explicit bitstrings (sorted and
    deduplicated here); ``Full`` takes nothing; ``Subspace`` takes the open
    qubits plus a ``{qubit: bit}`` assignment for the closed ones (missing
    closed qubits are 0).
    """
    mode = StateMode(mode)
    if n_qubits < 1:
        raise NetworkError("n_qubits must be positive")
    if mode in (StateMode.SINGLE, StateMode.SPARSE):
        strings = sorted(set(bitstrings or ()))
        for s in strings:
            if len(s) != n_qubits or set(s) - {"0", "1"}:
                raise NetworkError(f"bad bitstring {s!r} for {n_qubits} qubits")
        if not strings:
            raise NetworkError(f"{mode.value} state needs at least one bitstring")
        if mode is StateMode.SINGLE and len(strings) != 1:
            raise NetworkError("single-amplitude state takes exactly one bitstring")
        return SparseState(n_qubits, mode, tuple(strings))
    if mode is StateMode.FULL:
        return SparseState(n_qubits, mode)
    opened = tuple(sorted(set(open_qubits or ())))
    if any(not 0 <= q < n_qubits for q in opened):
        raise NetworkError("open qubit out of range")
    fixed = dict(fixed or {})
    for q, b in fixed.items():
        if q in opened or not 0 <= q < n_qubits or b not in (0, 1):
            raise NetworkError(f"bad fixed assignment {q}={b}")
    closed = tuple((q, int(fixed.get(q, 0))) for q in range(n_qubits) if q not in opened)
    return SparseState(n_qubits, mode, (), opened, closed)


def read_bitstrings(path) -> list[str]:
    """Bitstring file: one 0/1 string per line; order and repeats preserved."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            s = raw.split("#", 1)[0].strip()
            if not s:
                continue
            if set(s) - {"0", "1"}:
                raise NetworkError(f"{path}:{lineno}: not a bitstring: {s!r}")
            out.append(s)
    if out and len({len(s) for s in out}) != 1:
        raise NetworkError(f"{path}: bitstrings have different lengths")
    return out


def write_bitstrings(bitstrings: Iterable[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in bitstrings:
            fh.write(s + "\n")


@dataclass(frozen=True, eq=False)
class MergePlan:
    """How two open groups combine into one merged sample index.

    ``pairs_a[c]``/``pairs_b[c]`` locate joint configuration ``c`` in the
    config tables of group A and group B.
    """

    group_a: tuple[int, ...]
    group_b: tuple[int, ...]
    merged: tuple[int, ...]
    configs: tuple[tuple[int, ...], ...]
    pairs_a: np.ndarray
    pairs_b: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.configs)


def merge_open_groups(state: SparseState, group_a: Sequence[int], group_b: Sequence[int],
                      table_a=None, table_b=None) -> MergePlan:
    group_a = tuple(sorted(group_a))
    group_b = tuple(sorted(group_b))
    if set(group_a) & set(group_b):
        raise NetworkError(f"open groups overlap: {group_a} and {group_b}")
    table_a = state.table(group_a) if table_a is None else tuple(map(tuple, table_a))
    table_b = state.table(group_b) if table_b is None else tuple(map(tuple, table_b))
    merged = tuple(sorted(group_a + group_b))
    configs = state.table(merged)
    pos = {q: i for i, q in enumerate(merged)}
    sel_a = [pos[q] for q in group_a]
    sel_b = [pos[q] for q in group_b]
    lookup_a = {cfg: i for i, cfg in enumerate(table_a)}
    lookup_b = {cfg: i for i, cfg in enumerate(table_b)}
    ia = np.empty(len(configs), dtype=np.intp)
    ib = np.empty(len(configs), dtype=np.intp)
    try:
        for c, cfg in enumerate(configs):
            ia[c] = lookup_a[tuple(cfg[i] for i in sel_a)]
            ib[c] = lookup_b[tuple(cfg[i] for i in sel_b)]
    except KeyError as exc:
        raise NetworkError(f"config table inconsistent with the sparse state: missing {exc}") from None
    return MergePlan(group_a, group_b, merged, configs, ia, ib)


# ---------------------------------------------------------------------------
# networks


@dataclass(eq=False)
class TensorNetwork:
    tensors: dict[int, ComplexTensor]
    bonds: dict[int, Bond]
    state: SparseState | None = None

    @property
    def open_bonds(self) -> list[Bond]:
        opened = [b for b in self.bonds.values() if b.open]
        return sorted(opened, key=lambda b: (b.qubit if b.qubit is not None else -1, b.id))

    @property
    def n_qubits(self) -> int:
        return sum(1 for b in self.bonds.values() if b.open and b.qubit is not None)

    def copy(self) -> "TensorNetwork":
        return TensorNetwork(dict(self.tensors), dict(self.bonds), self.state)

    def mark_sliced(self, bond_ids: Iterable[int]) -> "TensorNetwork":
        net = self.copy()
        for b in bond_ids:
            net.bonds[b] = replace(net.bonds[b], sliced=True)
        return net

    def to_debug_json(self) -> dict:
        return {
            "tensors": [
                {"id": tid, "labels": [label_to_json(lab) for lab in t.labels], "dims": list(t.dims)}
                for tid, t in sorted(self.tensors.items())
            ],
            "bonds": [
                {"id": b.id, "dim": b.dim, "endpoints": list(b.endpoints), "open": b.open, "qubit": b.qubit}
                for b in sorted(self.bonds.values(), key=lambda b: b.id)
            ],
        }

    @classmethod
    def from_arrays(cls, arrays: Mapping[int, tuple[Sequence, np.ndarray]],
                    open_qubits: Mapping[int, int] | None = None) -> "TensorNetwork":
        """Build a network from ``{tensor_id: (labels, data)}``.

        Labels appearing once become open bonds; ``open_qubits`` tags them
        with qubit indices.
        """
        tensors = {tid: ComplexTensor(labels, np.asarray(data, dtype=complex)) for tid, (labels, data) in arrays.items()}
        ends: dict = {}
        dims: dict = {}
        for tid, t in tensors.items():
            for lab, d in zip(t.labels, t.dims):
                ends.setdefault(lab, []).append(tid)
                if dims.setdefault(lab, d) != d:
                    raise NetworkError(f"bond {lab!r} has inconsistent dims")
        open_qubits = dict(open_qubits or {})
        bonds = {
            lab: Bond(lab, dims[lab], tuple(e), len(e) == 1, open_qubits.get(lab))
            for lab, e in ends.items()
        }
        return cls(tensors, bonds)


def circuit_to_network(circuit: Circuit, state: SparseState | None = None) -> TensorNetwork:
    """Tensor network of ``<x|C|0...0>``.

    Tensor ids: ``0..n-1`` are the |0> input vectors, then one tensor per
    gate in layer order.  The last bond on each qubit's worldline is open
    and carries the qubit index.
    """
    if state is not None and state.n_qubits != circuit.n_qubits:
        raise NetworkError(f"state has {state.n_qubits} qubits, circuit has {circuit.n_qubits}")
    n = circuit.n_qubits
    tensors: dict[int, ComplexTensor] = {}
    ends: dict[int, list[int]] = {}
    next_bond = itertools.count()
    wire = []
    for q in range(n):
        b = next(next_bond)
        tensors[q] = ComplexTensor((b,), np.array([1.0, 0.0], dtype=complex))
        ends[b] = [q]
        wire.append(b)
    tid = n
    for gate in circuit.gates:
        ins = [wire[q] for q in gate.qubits]
        outs = [next(next_bond) for _ in gate.qubits]
        tensors[tid] = ComplexTensor(tuple(outs) + tuple(ins), gate_tensor(gate))
        for b in ins:
            ends[b].append(tid)
        for q, b in zip(gate.qubits, outs):
            ends[b] = [tid]
            wire[q] = b
        tid += 1
    last = {b: q for q, b in enumerate(wire)}
    bonds = {
        b: Bond(b, 2, tuple(e), open=b in last, qubit=last.get(b))
        for b, e in ends.items()
    }
    return TensorNetwork(tensors, bonds, state)


def validate_network(net: TensorNetwork) -> list[str]:
    """All invariant violations found in ``net``; an empty list means valid."""
    problems = []
    for tid, t in sorted(net.tensors.items()):
        for lab, d in zip(t.labels, t.dims):
            b = net.bonds.get(lab)
            if b is None:
                problems.append(f"tensor {tid} references missing bond {lab!r}")
                continue
            if tid not in b.endpoints:
                problems.append(f"tensor {tid} uses bond {lab!r} that does not list it as an endpoint")
            if d != b.dim:
                problems.append(f"tensor {tid} has extent {d} on bond {lab!r} of dim {b.dim}")
    for bid, b in sorted(net.bonds.items(), key=lambda kv: label_key(kv[0])):
        want = 1 if b.open else 2
        if len(b.endpoints) != want:
            kind = "open" if b.open else "closed"
            problems.append(f"{kind} bond {bid!r} has {len(b.endpoints)} endpoints")
        for tid in b.endpoints:
            t = net.tensors.get(tid)
            if t is None:
                problems.append(f"bond {bid!r} lists missing tensor {tid}")
            elif bid not in t.labels:
                problems.append(f"bond {bid!r} lists tensor {tid} which does not carry it")
        if b.open and b.sliced:
            problems.append(f"open bond {bid!r} is marked sliced")
    if net.state is not None:
        tagged = [b.qubit for b in net.bonds.values() if b.open and b.qubit is not None]
        if sorted(tagged) != list(range(net.state.n_qubits)):
            problems.append(f"open qubit tags {sorted(tagged)} do not cover {net.state.n_qubits} qubits")
    return problems


def boundary_labels(net: TensorNetwork, tid: int, sliced: Iterable = ()) -> tuple[tuple, dict]:
    """Labels and extents of tensor ``tid`` as the contraction sees it.

    Sliced bonds are dropped; with a sparse state, open qubit bonds are
    replaced by one :class:`GroupLabel` at the position of the first of them.
    """
    sliced = set(sliced)
    t = net.tensors[tid]
    labels = []
    dims = {}
    qubits = []
    first_open = None
    for lab, d in zip(t.labels, t.dims):
        if lab in sliced:
            continue
        b = net.bonds.get(lab)
        if net.state is not None and b is not None and b.open and b.qubit is not None:
            qubits.append(b.qubit)
            if first_open is None:
                first_open = len(labels)
                labels.append(None)
            continue
        labels.append(lab)
        dims[lab] = d
    if qubits:
        g = GroupLabel(tuple(sorted(qubits)))
        labels[first_open] = g
        dims[g] = net.state.group_dim(g.qubits)
    return tuple(labels), dims


def boundary_tensor(net: TensorNetwork, tid: int, fixed: Mapping = None) -> ComplexTensor:
    """Tensor ``tid`` restricted to the sparse state, with ``fixed`` bonds sliced."""
    t = net.tensors[tid]
    for lab, v in (fixed or {}).items():
        if lab in t.labels:
            t = t.fix(lab, v)
    if net.state is None:
        return t
    open_axes = []
    qubits = []
    for ax, lab in enumerate(t.labels):
        b = net.bonds.get(lab)
        if b is not None and b.open and b.qubit is not None:
            open_axes.append(ax)
            qubits.append(b.qubit)
    if not open_axes:
        return t
    order = np.argsort(qubits)
    open_axes = [open_axes[i] for i in order]
    qubits = [qubits[i] for i in order]
    configs = np.array(net.state.table(tuple(qubits)), dtype=np.intp).reshape(-1, len(qubits))
    moved = np.moveaxis(t.data, open_axes, list(range(len(open_axes))))
    gathered = moved[tuple(configs[:, j] for j in range(len(qubits)))]
    rest = [lab for ax, lab in enumerate(t.labels) if ax not in open_axes]
    pos = min(open_axes)
    data = np.moveaxis(gathered, 0, pos)
    labels = rest[:pos] + [GroupLabel(tuple(qubits))] + rest[pos:]
    return ComplexTensor(tuple(labels), data, t.fmt)
