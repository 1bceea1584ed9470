import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import naive_einsum
from tenkontract.circuit import Circuit, Gate, GateKind, random_circuit
from tenkontract.engine import (
    EinsumSpec,
    FlopCounter,
    SubtaskError,
    classify_gemm,
    contract_subtask,
    contract_tree,
    execute_step,
    formable_count,
    reorder_topk,
    run_simulation,
    sparse_batched_gemm,
)
from tenkontract.network import (
    ComplexTensor,
    GroupLabel,
    NetworkError,
    TensorNetwork,
    circuit_to_network,
    make_sparse_state,
    merge_open_groups,
)
from tenkontract.oracle import amplitudes_for, statevector
from tenkontract.pathopt import AnnealSchedule, ContractionTree, greedy_init, sa_optimize
from tenkontract.precision import FP32, TF32, GemmConfig, PrecisionSchedule, SplitMode
from tenkontract.slicer import apply_slice, slice_candidates


def cplx(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_identity_step(rng):
    b = cplx(rng, (2, 2))
    spec = EinsumSpec.parse("ik,kj->ij", 2)
    out = execute_step(ComplexTensor("ik", np.eye(2)), ComplexTensor("kj", b), spec)
    assert np.array_equal(out.data, b)


@pytest.mark.parametrize("expr", ["abd,ed->abe", "akb,kc->abc", "ba,ca->bc", "xab,xbc->xac", "ab,cd->dacb",
                                  "abc,abc->", "ab,b->ab"])
def test_step_matches_naive_loops(rng, expr):
    spec = EinsumSpec.parse(expr, {c: int(rng.integers(1, 4)) for c in "abcdekx"})
    a = cplx(rng, [spec.dims[x] for x in spec.lhs])
    b = cplx(rng, [spec.dims[x] for x in spec.rhs])
    counter = FlopCounter()
    got = execute_step(ComplexTensor(spec.lhs, a), ComplexTensor(spec.rhs, b), spec, counter=counter)
    want = naive_einsum(spec.lhs, spec.rhs, spec.out, a, b, spec.dims)
    np.testing.assert_allclose(got.data, want, atol=1e-12, rtol=0)
    assert counter.flops == spec.tcc


def test_step_label_mismatch():
    spec = EinsumSpec.parse("ab,bc->ac", 2)
    with pytest.raises(NetworkError):
        execute_step(ComplexTensor("ab", np.ones((2, 2))), ComplexTensor("bd", np.ones((2, 2))), spec)
    with pytest.raises(NetworkError):
        execute_step(ComplexTensor("ab", np.ones((2, 3))), ComplexTensor("bc", np.ones((3, 2))), spec)


def worked_sparse_case(rng):
    state = make_sparse_state(3, "sparse", ["100", "101", "001"])
    plan = merge_open_groups(state, [1], [2])
    ga, gb, gm = GroupLabel((1,)), GroupLabel((2,)), GroupLabel((1, 2))
    dims = {ga: len(state.table((1,))), gb: len(state.table((2,))), gm: plan.dim, "k": 3}
    spec = EinsumSpec((ga, "k"), (gb, "k"), (gm,), dims, plan)
    a = cplx(rng, (dims[ga], 3))
    b = cplx(rng, (dims[gb], 3))
    return spec, plan, a, b


def test_worked_sparse_case(rng):
    spec, plan, a, b = worked_sparse_case(rng)
    out = execute_step(ComplexTensor(spec.lhs, a), ComplexTensor(spec.rhs, b), spec)
    assert out.dims == (2,)
    want = [a[plan.pairs_a[c]] @ b[plan.pairs_b[c]] for c in range(plan.dim)]
    np.testing.assert_allclose(out.data, want, atol=1e-14)


def test_sparse_gemm_single_config_is_plain_gemm(rng):
    a = cplx(rng, (3, 2, 4))
    b = cplx(rng, (2, 4, 5))
    s = make_sparse_state(2, "single", ["10"])
    plan = merge_open_groups(s, [0], [1], table_a=[(0,), (1,), (0,)], table_b=[(0,), (1,)])
    assert plan.dim == 1
    out = sparse_batched_gemm(a, b, plan)
    assert np.array_equal(out[0], a[1] @ b[0])


@pytest.mark.parametrize("cfg", [GemmConfig(), GemmConfig(TF32, SplitMode.TRIPLE, FP32), GemmConfig(FP32, 1, FP32)])
@pytest.mark.parametrize("seed", range(4))
def test_sparse_gemm_matches_gather(seed, cfg):
    from tenkontract.precision import gemm

    rng = np.random.default_rng(seed)
    n = 6
    strings = {"".join(rng.choice(["0", "1"], n)) for _ in range(20)}
    state = make_sparse_state(n, "sparse", strings)
    plan = merge_open_groups(state, [0, 2], [1, 3, 5])
    a = cplx(rng, (len(state.table((0, 2))), 3, 4))
    b = cplx(rng, (len(state.table((1, 3, 5))), 4, 2))
    got = sparse_batched_gemm(a, b, plan, cfg)
    want = np.stack([gemm(a[i][None], b[j][None], cfg)[0] for i, j in zip(plan.pairs_a, plan.pairs_b)])
    assert np.array_equal(got, want)


@given(st.integers(0, 10 ** 6))
def test_classified_shape_matches_tcc(seed):
    rng = np.random.default_rng(seed)
    net = circuit_to_network(random_circuit(5, 4, seed), make_sparse_state(5, "full"))
    tree = sa_optimize(net, schedule=AnnealSchedule(sweeps=3), seed=seed)
    tree = reorder_topk(tree, 5)
    for spec in tree.specs():
        shape = classify_gemm(spec)
        if shape:
            assert 8 * shape.macs == spec.tcc


def reorder_case():
    rng = np.random.default_rng(0)
    net = TensorNetwork.from_arrays({
        0: (("a", "k", "y"), cplx(rng, (3, 4, 2))),
        1: (("y", "b"), cplx(rng, (2, 5))),
        2: (("k", "c"), cplx(rng, (4, 6))),
    })
    tree = ContractionTree(net)
    s1 = tree.join(frozenset({0}), frozenset({1}))
    tree.join(s1, frozenset({2}))
    return net, tree, s1


def test_reorder_interleaved_lhs():
    net, tree, s1 = reorder_case()
    spec = tree.einsum_spec(tree.root)
    assert spec.lhs == ("a", "k", "b") and spec.out == ("a", "b", "c")
    assert not classify_gemm(spec)
    new = reorder_topk(tree, 10)
    assert new.order(s1) == ("a", "b", "k")
    shape = classify_gemm(new.einsum_spec(new.root))
    assert shape and (shape.m, shape.n, shape.k) == (15, 6, 4)
    order = tree.order(tree.root)
    assert np.array_equal(contract_tree(net, new).transpose_to(order).data,
                          contract_tree(net, tree).transpose_to(order).data)


def test_reorder_k_zero_unchanged():
    net, tree, _ = reorder_case()
    new = reorder_topk(tree, 0)
    assert new.all_orders() == tree.all_orders()


def test_reorder_producer_locked_by_higher_rank():
    # the root claims s1's layout first; s1 is then skipped
    net, tree, s1 = reorder_case()
    new = reorder_topk(tree, 2)
    assert new.order(s1) == ("a", "b", "k")
    assert new.order(tree.root) == tree.order(tree.root)


@pytest.mark.parametrize("seed", range(3))
def test_reorder_preserves_circuit_output(seed):
    c = random_circuit(7, 8, seed)
    state = make_sparse_state(7, "full")
    net = circuit_to_network(c, state)
    tree = sa_optimize(net, schedule=AnnealSchedule(sweeps=20), seed=seed)
    new = reorder_topk(tree, 10)
    assert formable_count(new, 10) >= formable_count(tree, 10)
    a = run_simulation(c, state, tree)
    b = run_simulation(c, state, new)
    np.testing.assert_allclose(b.amplitudes, a.amplitudes, rtol=0, atol=1e-12 * np.abs(a.amplitudes).max())


def test_sqrt_x_full_state():
    c = Circuit(1, ((Gate(GateKind.SQRT_X, (0,)),),))
    amps = run_simulation(c, make_sparse_state(1, "full"))
    assert amps.bitstrings == ("0", "1")
    np.testing.assert_allclose(amps.amplitudes, [(1 + 1j) / 2, (1 - 1j) / 2], atol=1e-15)


def test_empty_circuit_single_amplitude():
    amps = run_simulation(Circuit(4, ()), make_sparse_state(4, "single", ["0000"]))
    assert amps.amplitudes.tolist() == [1.0]


def test_random_circuit_sparse_matches_oracle():
    c = random_circuit(6, 8, 11)
    rng = np.random.default_rng(1)
    strings = sorted({"".join(rng.choice(["0", "1"], 6)) for _ in range(16)})
    state = make_sparse_state(6, "sparse", strings)
    net = circuit_to_network(c, state)
    tree = greedy_init(net)
    counter = FlopCounter()
    root = contract_subtask(net, tree, counter=counter)
    assert root.labels == (GroupLabel(tuple(range(6))),)
    assert counter.flops == tree.total_tcc
    want = amplitudes_for(c, strings)
    np.testing.assert_allclose(root.data, want.amplitudes, atol=1e-10, rtol=0)


@pytest.mark.parametrize("mode, kw", [
    ("full", {}),
    ("subspace", {"open_qubits": [1, 3], "fixed": {0: 1, 4: 1}}),
    ("single", {"bitstrings": ["10110"]}),
])
def test_modes_match_oracle(mode, kw):
    c = random_circuit(5, 6, 3)
    state = make_sparse_state(5, mode, **kw)
    amps = run_simulation(c, state)
    psi = statevector(c)
    assert list(amps.bitstrings) == list(state.enumerate())
    np.testing.assert_allclose(amps.amplitudes, amplitudes_for(c, amps.bitstrings, psi).amplitudes, atol=1e-12)


def test_fp32_emulation_close_to_oracle():
    c = random_circuit(6, 6, 5)
    state = make_sparse_state(6, "full")
    amps = run_simulation(c, state, schedule=PrecisionSchedule.uniform("fp32"))
    want = statevector(c)
    assert np.abs(amps.amplitudes - want).max() <= 1e-4 * np.abs(want).max()


def test_full_state_is_normalised():
    c = random_circuit(7, 10, 4)
    amps = run_simulation(c, make_sparse_state(7, "full"))
    assert abs(np.sum(np.abs(amps.amplitudes) ** 2) - 1) <= 1e-10


def test_workers_bit_identical():
    c = random_circuit(6, 6, 7)
    state = make_sparse_state(6, "sparse", ["000000", "111111", "010101", "100001"])
    net = circuit_to_network(c, state)
    tree = greedy_init(net)
    for b in slice_candidates(tree)[:2]:
        net, tree = apply_slice(net, tree, b)
    one = run_simulation(c, state, tree, workers=1)
    two = run_simulation(c, state, tree, workers=2)
    assert np.array_equal(one.amplitudes, two.amplitudes)
    plain = run_simulation(c, state)
    np.testing.assert_allclose(one.amplitudes, plain.amplitudes, atol=1e-10, rtol=0)


def test_tree_for_other_circuit_rejected():
    c = random_circuit(4, 3, 1)
    state = make_sparse_state(4, "full")
    tree = greedy_init(circuit_to_network(random_circuit(4, 5, 1), state))
    with pytest.raises(NetworkError):
        run_simulation(c, state, tree)


def test_subtask_error_pickles():
    err = SubtaskError(3, "ValueError: boom")
    again = pickle.loads(pickle.dumps(err))
    assert again.task_index == 3 and "subtask 3" in str(again)


def test_step_records():
    c = random_circuit(4, 3, 2)
    net = circuit_to_network(c, make_sparse_state(4, "full"))
    tree = greedy_init(net)
    counter = FlopCounter()
    contract_tree(net, tree, counter=counter, record=True)
    assert len(counter.records) == len(tree.steps())
    assert sum(r.tcc for r in counter.records) == counter.flops
    assert set(counter.records[0].to_json()) == {"step", "Tcc", "formable", "shape", "time"}
