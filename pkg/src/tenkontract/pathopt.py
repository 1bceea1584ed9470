"""Contraction trees, their cost annotation, and the annealing path search."""

from __future__ import annotations

import heapq
import json
import math
import random
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Mapping

from .einsum import EinsumSpec
from .network import (
    GroupLabel,
    MergePlan,
    TensorNetwork,
    boundary_labels,
    label_from_json,
    label_key,
    label_to_json,
    merge_open_groups,
)

Node = frozenset


@dataclass(frozen=True)
class CostModel:
    ops_per_element: int = 8
    sizeof_data: int = 8

    def __post_init__(self):
        if self.ops_per_element <= 0 or self.sizeof_data <= 0:
            raise ValueError("cost model constants must be positive")


@dataclass(frozen=True)
class BalancePenalty:
    enabled: bool = False
    weight: float = 0.05
    mn_threshold: float = 32
    k_threshold: float = 64

    def __call__(self, m: int, n: int, k: int) -> float:
        if not self.enabled:
            return 0.0
        short = (max(0.0, math.log2(self.mn_threshold / m))
                 + max(0.0, math.log2(self.mn_threshold / n))
                 + max(0.0, math.log2(self.k_threshold / k)))
        return self.weight * short


@dataclass(frozen=True)
class ScoreParams:
    alpha: float = 64.0
    beta: float = 1.0
    balance: BalancePenalty = field(default_factory=BalancePenalty)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: Mapping) -> "ScoreParams":
        return cls(d.get("alpha", 64.0), d.get("beta", 1.0), BalancePenalty(**d.get("balance", {})))


@dataclass(frozen=True)
class AnnealSchedule:
    t0: float = 2.0
    tmin: float = 0.02
    decay: float = 0.98
    sweeps: int = 200

    def temperatures(self) -> Iterator[float]:
        t = self.t0
        for _ in range(self.sweeps):
            yield t
            t = max(self.tmin, t * self.decay)


def _log2(x: float) -> float:
    return math.log2(x) if x > 1 else 0.0


def score_from_totals(tcc: float, tmc: float, tsc: float, params: ScoreParams, penalty: float = 0.0) -> float:
    return _log2(tcc + params.alpha * tmc) + params.beta * _log2(tsc) + penalty


def step_cost(spec: EinsumSpec, model: CostModel = CostModel()) -> tuple[int, int]:
    b, m, n, k = spec.bmnk
    return model.ops_per_element * b * m * n * k, model.sizeof_data * sum(spec.sizes())


@dataclass(frozen=True)
class NodeInfo:
    labels: frozenset
    group: tuple | None
    size: int
    tcc: int = 0
    tmc: int = 0
    b: int = 1
    m: int = 1
    n: int = 1
    k: int = 1


def node_key(node: Node) -> tuple:
    return tuple(sorted(node))


class ContractionTree:
    """Binary contraction tree over the leaves of a tensor network.

    Nodes are frozensets of leaf tensor ids.  Each internal node stores its
    ordered children; costs are cached per node.  Output label orders are
    derived from the children (merged sample group first, then lhs free
    labels, then rhs free labels) unless overridden in ``orders``.
    """

    def __init__(self, net: TensorNetwork, sliced: Iterable = (), model: CostModel = CostModel()):
        self.net = net
        self.model = model
        self.sliced = tuple(sliced)
        self.leaf_labels: dict[int, tuple] = {}
        self._dims: dict = {}
        for tid in sorted(net.tensors):
            labels, dims = boundary_labels(net, tid, self.sliced)
            self.leaf_labels[tid] = labels
            self._dims.update(dims)
        self.children: dict[Node, tuple[Node, Node]] = {}
        self.parent: dict[Node, Node] = {}
        self.orders: dict[Node, tuple] = {}
        self._info: dict[Node, NodeInfo] = {}
        self._plans: dict = {}
        for tid, labels in self.leaf_labels.items():
            node = frozenset((tid,))
            groups = [lab for lab in labels if isinstance(lab, GroupLabel)]
            plain = frozenset(lab for lab in labels if not isinstance(lab, GroupLabel))
            self._info[node] = NodeInfo(plain, groups[0].qubits if groups else None,
                                        math.prod(self.dim(lab) for lab in labels))

    # -- structure -------------------------------------------------------

    @property
    def leaves(self) -> list[Node]:
        return [frozenset((tid,)) for tid in sorted(self.leaf_labels)]

    @property
    def root(self) -> Node:
        return frozenset(self.leaf_labels)

    @property
    def state(self):
        return self.net.state

    def is_leaf(self, node: Node) -> bool:
        return len(node) == 1

    def is_complete(self) -> bool:
        return len(self.children) == len(self.leaf_labels) - 1 and (
            len(self.leaf_labels) == 1 or self.root in self.children)

    def join(self, a: Node, b: Node) -> Node:
        """Record the contraction of ``a`` and ``b`` (both current roots)."""
        if a in self.parent or b in self.parent:
            raise ValueError("operands already consumed")
        if a & b:
            raise ValueError("operands overlap")
        c = a | b
        self.children[c] = (a, b)
        self.parent[a] = c
        self.parent[b] = c
        self._info[c] = self._combine(self._info[a], self._info[b])
        return c

    def copy(self) -> "ContractionTree":
        new = object.__new__(ContractionTree)
        new.net = self.net
        new.model = self.model
        new.sliced = self.sliced
        new.leaf_labels = self.leaf_labels
        new._dims = self._dims
        new._plans = self._plans
        new.children = dict(self.children)
        new.parent = dict(self.parent)
        new.orders = dict(self.orders)
        new._info = dict(self._info)
        return new

    def steps(self) -> list[Node]:
        """Internal nodes in post-order (children before parents, lhs first)."""
        if len(self.leaf_labels) == 1:
            return []
        out = []
        stack = [(self.root, False)]
        while stack:
            node, done = stack.pop()
            if node not in self.children:
                continue
            if done:
                out.append(node)
                continue
            a, b = self.children[node]
            stack.append((node, True))
            stack.append((b, False))
            stack.append((a, False))
        return out

    def subtree_leaves(self, node: Node) -> list[int]:
        return sorted(node)

    # -- costs -----------------------------------------------------------

    def dim(self, label) -> int:
        d = self._dims.get(label)
        if d is None:
            if isinstance(label, GroupLabel):
                d = self.net.state.group_dim(label.qubits)
            else:
                d = self.net.bonds[label].dim
            self._dims[label] = d
        return d

    def _combine(self, ia: NodeInfo, ib: NodeInfo) -> NodeInfo:
        shared = ia.labels & ib.labels
        k = math.prod(self.dim(x) for x in shared)
        m = math.prod(self.dim(x) for x in ia.labels - shared)
        n = math.prod(self.dim(x) for x in ib.labels - shared)
        b = 1
        if ia.group is not None and ib.group is not None:
            group = tuple(sorted(ia.group + ib.group))
            b = self.dim(GroupLabel(group))
        elif ia.group is not None:
            group = ia.group
            m *= self.dim(GroupLabel(group))
        elif ib.group is not None:
            group = ib.group
            n *= self.dim(GroupLabel(group))
        else:
            group = None
        size = b * m * n
        tcc = self.model.ops_per_element * b * m * n * k
        tmc = self.model.sizeof_data * (ia.size + ib.size + size)
        return NodeInfo(ia.labels ^ ib.labels, group, size, tcc, tmc, b, m, n, k)

    def info(self, node: Node) -> NodeInfo:
        return self._info[node]

    def recompute(self) -> None:
        """Refresh every internal node's cached costs."""
        for node in self.steps():
            a, b = self.children[node]
            self._info[node] = self._combine(self._info[a], self._info[b])

    def step_costs(self) -> list[int]:
        return [self._info[s].tcc for s in self.steps()]

    def totals(self, params: ScoreParams | None = None) -> tuple[int, int, int, float]:
        steps = self.steps()
        tcc = sum(self._info[s].tcc for s in steps)
        tmc = sum(self._info[s].tmc for s in steps)
        if steps:
            tsc = max(self._info[s].size for s in steps)
        else:
            tsc = max(i.size for i in self._info.values())
        pen = 0.0
        if params is not None and params.balance.enabled:
            pen = sum(params.balance(self._info[s].m, self._info[s].n, self._info[s].k) for s in steps)
        return tcc, tmc, tsc, pen

    @property
    def total_tcc(self) -> int:
        return sum(self.step_costs())

    @property
    def tsc(self) -> int:
        return self.totals()[2]

    def score(self, params: ScoreParams = ScoreParams()) -> float:
        tcc, tmc, tsc, pen = self.totals(params)
        return score_from_totals(tcc, tmc, tsc, params, pen)

    # -- label orders ----------------------------------------------------

    def _natural(self, node: Node, lo: tuple, ro: tuple) -> tuple:
        ia, ib = (self._info[c] for c in self.children[node])
        shared = ia.labels & ib.labels
        if ia.group is not None and ib.group is not None:
            head = (GroupLabel(self._info[node].group),)
            lo = tuple(x for x in lo if not isinstance(x, GroupLabel))
            ro = tuple(x for x in ro if not isinstance(x, GroupLabel))
        else:
            head = ()
        return head + tuple(x for x in lo if x not in shared) + tuple(x for x in ro if x not in shared)

    def all_orders(self) -> dict[Node, tuple]:
        """Output label order for every node (leaves and steps)."""
        out = {}
        for leaf in self.leaves:
            out[leaf] = self.orders.get(leaf, self.leaf_labels[next(iter(leaf))])
        for node in self.steps():
            if node in self.orders:
                out[node] = self.orders[node]
            else:
                a, b = self.children[node]
                out[node] = self._natural(node, out[a], out[b])
        return out

    def freeze_orders(self) -> None:
        self.orders = self.all_orders()

    def order(self, node: Node) -> tuple:
        if node in self.orders:
            return self.orders[node]
        return self.all_orders()[node]

    def plan(self, ga: tuple, gb: tuple) -> MergePlan:
        key = (ga, gb)
        plan = self._plans.get(key)
        if plan is None:
            plan = merge_open_groups(self.net.state, ga, gb)
            self._plans[key] = plan
        return plan

    def einsum_spec(self, node: Node, orders: Mapping | None = None) -> EinsumSpec:
        orders = orders if orders is not None else self.all_orders()
        a, b = self.children[node]
        lo, ro, out = orders[a], orders[b], orders[node]
        ia, ib = self._info[a], self._info[b]
        plan = None
        if ia.group is not None and ib.group is not None:
            plan = self.plan(ia.group, ib.group)
        dims = {lab: self.dim(lab) for lab in lo + ro + out}
        return EinsumSpec(lo, ro, out, dims, plan)

    def specs(self) -> list[EinsumSpec]:
        orders = self.all_orders()
        return [self.einsum_spec(s, orders) for s in self.steps()]

    # -- slicing ---------------------------------------------------------

    def with_slices(self, sliced: Iterable, net: TensorNetwork | None = None) -> "ContractionTree":
        """Same structure with a new set of sliced bonds (costs recomputed)."""
        new = ContractionTree(net if net is not None else self.net, sliced, self.model)
        new.children = dict(self.children)
        new.parent = dict(self.parent)
        dropped = set(new.sliced)
        new.orders = {node: tuple(x for x in o if x not in dropped) for node, o in self.orders.items()}
        new.recompute()
        return new

    # -- checks ----------------------------------------------------------

    def validate(self) -> None:
        n = len(self.leaf_labels)
        if len(self.children) != n - 1:
            raise ValueError(f"{len(self.children)} internal nodes for {n} leaves")
        for node, (a, b) in self.children.items():
            if a | b != node or a & b:
                raise ValueError(f"node {node_key(node)} is not the disjoint union of its children")
        if n > 1 and self.root not in self.children:
            raise ValueError("tree has no root")
        orders = self.all_orders()
        for node, o in orders.items():
            info = self._info[node]
            want = set(info.labels) | ({GroupLabel(info.group)} if info.group is not None else set())
            if set(o) != want or len(o) != len(want):
                raise ValueError(f"order {o} of node {node_key(node)} does not match its labels")

    def __repr__(self) -> str:
        return f"ContractionTree(leaves={len(self.leaf_labels)}, steps={len(self.children)})"


# ---------------------------------------------------------------------------
# greedy seeding


def greedy_init(net: TensorNetwork, sliced: Iterable = (), model: CostModel = CostModel()) -> ContractionTree:
    """Repeatedly contract the connected pair with the smallest result.

    Ties go to the smaller T_cc and then to the lexicographically smaller
    pair of leaf-id tuples.  Components left once no pair shares a bond are
    joined by outer products, smallest first.
    """
    tree = ContractionTree(net, sliced, model)
    active: set[Node] = set(tree.leaves)
    holders: dict = {}
    for node in active:
        for lab in tree.info(node).labels:
            holders.setdefault(lab, set()).add(node)

    heap: list = []

    def push(a: Node, b: Node) -> None:
        ka, kb = node_key(a), node_key(b)
        if kb < ka:
            a, b, ka, kb = b, a, kb, ka
        info = tree._combine(tree.info(a), tree.info(b))
        heapq.heappush(heap, (info.size, info.tcc, ka, kb, a, b))

    seen = set()
    for lab, nodes in holders.items():
        if len(nodes) == 2:
            a, b = sorted(nodes, key=node_key)
            if (a, b) not in seen:
                seen.add((a, b))
                push(a, b)

    while heap:
        *_, a, b = heapq.heappop(heap)
        if a not in active or b not in active:
            continue
        c = tree.join(a, b)
        active -= {a, b}
        active.add(c)
        neighbours = set()
        for lab in tree.info(a).labels | tree.info(b).labels:
            hs = holders[lab]
            hs.discard(a)
            hs.discard(b)
            if lab in tree.info(c).labels:
                neighbours |= hs
                hs.add(c)
        for nb in sorted(neighbours, key=node_key):
            push(c, nb)

    rest = [(tree.info(n).size, node_key(n), n) for n in active]
    heapq.heapify(rest)
    while len(rest) > 1:
        _, ka, a = heapq.heappop(rest)
        _, kb, b = heapq.heappop(rest)
        if kb < ka:
            a, b = b, a
        c = tree.join(a, b)
        heapq.heappush(rest, (tree.info(c).size, node_key(c), c))
    return tree


# ---------------------------------------------------------------------------
# local updates


@dataclass
class _Undo:
    p: Node
    p_children: tuple
    a: Node
    a_children: tuple
    new: Node
    p_info: NodeInfo
    a_info: NodeInfo


def _internal_sides(tree: ContractionTree, node: Node) -> list[int]:
    return [i for i, c in enumerate(tree.children[node]) if c in tree.children]


def _rotate(tree: ContractionTree, p: Node, side: int, direction: int) -> _Undo:
    a = tree.children[p][side]
    z = tree.children[p][1 - side]
    x, y = tree.children[a]
    undo = _Undo(p, tree.children[p], a, tree.children[a], None, tree._info[p], tree._info[a])
    if direction == 0:
        new = x | z
        tree.children[new] = (x, z)
        tree.children[p] = (new, y)
        tree.parent[x] = new
        tree.parent[z] = new
        tree.parent[y] = p
    else:
        new = y | z
        tree.children[new] = (y, z)
        tree.children[p] = (x, new)
        tree.parent[y] = new
        tree.parent[z] = new
        tree.parent[x] = p
    tree.parent[new] = p
    del tree.children[a]
    del tree.parent[a]
    del tree._info[a]
    tree.orders.pop(a, None)
    ca, cb = tree.children[new]
    tree._info[new] = tree._combine(tree._info[ca], tree._info[cb])
    pa, pb = tree.children[p]
    tree._info[p] = tree._combine(tree._info[pa], tree._info[pb])
    undo.new = new
    return undo


def _undo(tree: ContractionTree, u: _Undo) -> None:
    for c in tree.children.pop(u.new):
        tree.parent[c] = u.a
    del tree.parent[u.new]
    del tree._info[u.new]
    tree.children[u.a] = u.a_children
    tree.children[u.p] = u.p_children
    for c in u.a_children:
        tree.parent[c] = u.a
    for c in u.p_children:
        tree.parent[c] = u.p
    tree._info[u.a] = u.a_info
    tree._info[u.p] = u.p_info


def local_update(tree: ContractionTree, node: Node, direction: int, side: int | None = None) -> ContractionTree | None:
    """Rotate the three descendants below ``node``; ``None`` if impossible.

    With ``A = (X, Y)`` the internal child of ``node`` and ``Z`` the other
    child, direction 0 yields ``((X, Z), Y)`` and direction 1 yields
    ``(X, (Y, Z))``.  ``side`` picks which child plays ``A`` when both are
    internal (default: the first internal one).
    """
    if direction not in (0, 1):
        raise ValueError("direction must be 0 or 1")
    if node not in tree.children:
        return None
    sides = _internal_sides(tree, node)
    if not sides:
        return None
    if side is None:
        side = sides[0]
    elif side not in sides:
        return None
    new = tree.copy()
    _rotate(new, node, side, direction)
    return new


# ---------------------------------------------------------------------------
# simulated annealing


@dataclass
class _Totals:
    tcc: int
    tmc: int
    pen: float
    sizes: Counter

    @property
    def tsc(self) -> int:
        return max(self.sizes) if self.sizes else 0

    def swap(self, old: Iterable[NodeInfo], new: Iterable[NodeInfo], balance: BalancePenalty) -> None:
        for i in old:
            self.tcc -= i.tcc
            self.tmc -= i.tmc
            self.pen -= balance(i.m, i.n, i.k)
            self.sizes[i.size] -= 1
            if not self.sizes[i.size]:
                del self.sizes[i.size]
        for i in new:
            self.tcc += i.tcc
            self.tmc += i.tmc
            self.pen += balance(i.m, i.n, i.k)
            self.sizes[i.size] += 1


def sa_optimize(net: TensorNetwork | None = None, params: ScoreParams = ScoreParams(),
                schedule: AnnealSchedule = AnnealSchedule(), seed: int = 0,
                init: ContractionTree | None = None, trace: list | None = None) -> ContractionTree:
    """Anneal a contraction tree with local rotations.

    One sweep walks the internal nodes top-down from the root; at each node
    a random rotation is proposed and accepted with the Metropolis rule.
    The best tree seen is returned, so the result never scores worse than
    the starting tree (``init`` or the greedy tree).
    """
    if init is None:
        if net is None:
            raise ValueError("need a network or an initial tree")
        init = greedy_init(net)
    tree = init.copy()
    if len(tree.children) < 2:
        return tree
    rng = random.Random(seed)
    balance = params.balance
    tcc, tmc, _, pen = tree.totals(params)
    totals = _Totals(tcc, tmc, pen, Counter(tree._info[s].size for s in tree.children))
    current = score_from_totals(totals.tcc, totals.tmc, totals.tsc, params, totals.pen)
    best_score = current
    best = tree.copy()
    for temp in schedule.temperatures():
        stack = [tree.root]
        while stack:
            p = stack.pop()
            if p not in tree.children:
                continue
            sides = _internal_sides(tree, p)
            if sides:
                side = sides[rng.randrange(len(sides))]
                direction = rng.randrange(2)
                old_p = tree._info[p]
                old_a = tree._info[tree.children[p][side]]
                u = _rotate(tree, p, side, direction)
                totals.swap((old_p, old_a), (tree._info[p], tree._info[u.new]), balance)
                proposed = score_from_totals(totals.tcc, totals.tmc, totals.tsc, params, totals.pen)
                delta = proposed - current
                accept = delta <= 0 or rng.random() < math.exp(-delta / temp)
                if trace is not None:
                    trace.append((temp, delta, accept))
                if accept:
                    current = proposed
                    if current < best_score - 1e-12:
                        best_score = current
                        best = tree.copy()
                else:
                    totals.swap((tree._info[p], tree._info[u.new]), (old_p, old_a), balance)
                    _undo(tree, u)
            for c in reversed(tree.children[p]):
                if c in tree.children:
                    stack.append(c)
    return best


# ---------------------------------------------------------------------------
# order files


def _ref(node: Node, step_index: Mapping[Node, int]) -> str:
    if len(node) == 1 and node not in step_index:
        return f"t{next(iter(node))}"
    return f"s{step_index[node]}"


def tree_to_json(tree: ContractionTree, params: ScoreParams | None = None, slices=None) -> dict:
    steps = tree.steps()
    index = {s: i for i, s in enumerate(steps)}
    orders = tree.all_orders()
    out_steps = []
    for s in steps:
        a, b = tree.children[s]
        spec = tree.einsum_spec(s, orders)
        info = tree.info(s)
        out_steps.append({
            "lhs": _ref(a, index),
            "rhs": _ref(b, index),
            "out": [label_to_json(x) for x in orders[s]],
            "spec": str(spec),
            "Tcc": info.tcc,
            "Tmc": info.tmc,
        })
    d = {
        "leaves": sorted(tree.leaf_labels),
        "leaf_orders": {f"t{next(iter(leaf))}": [label_to_json(x) for x in orders[leaf]]
                        for leaf in tree.leaves if leaf in tree.orders},
        "steps": out_steps,
        "slices": [label_to_json(b) for b in tree.sliced],
        "slice_dims": [tree.net.bonds[b].dim for b in tree.sliced],
        "score": tree.score(params or ScoreParams()),
        "params": (params or ScoreParams()).to_json(),
    }
    return d


def tree_from_json(net: TensorNetwork, d: Mapping, model: CostModel = CostModel()) -> ContractionTree:
    sliced = [label_from_json(b) for b in d.get("slices", [])]
    tree = ContractionTree(net, sliced, model)
    if sorted(d["leaves"]) != sorted(tree.leaf_labels):
        raise ValueError("order file leaves do not match the network")
    made: list[Node] = []

    def resolve(ref: str) -> Node:
        if ref.startswith("t"):
            return frozenset((int(ref[1:]),))
        i = int(ref[1:])
        if i >= len(made):
            raise ValueError(f"step reference {ref} used before it is defined")
        return made[i]

    for step in d["steps"]:
        c = tree.join(resolve(step["lhs"]), resolve(step["rhs"]))
        made.append(c)
        if "out" in step:
            tree.orders[c] = tuple(label_from_json(x) for x in step["out"])
    for ref, labels in d.get("leaf_orders", {}).items():
        tree.orders[frozenset((int(ref[1:]),))] = tuple(label_from_json(x) for x in labels)
    if tree.steps() != made:
        raise ValueError("steps are not listed in post-order")
    tree.validate()
    return tree


def save_order(tree: ContractionTree, path, params: ScoreParams | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree_to_json(tree, params), fh, indent=1)
        fh.write("\n")


def load_order(net: TensorNetwork, path, model: CostModel = CostModel()) -> ContractionTree:
    with open(path, encoding="utf-8") as fh:
        return tree_from_json(net, json.load(fh), model)
