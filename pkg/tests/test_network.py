import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tenkontract.circuit import Circuit, Gate, GateKind, random_circuit
from tenkontract.network import (
    ComplexTensor,
    GroupLabel,
    NetworkError,
    StateMode,
    TensorNetwork,
    boundary_tensor,
    circuit_to_network,
    label_from_json,
    label_to_json,
    make_sparse_state,
    merge_open_groups,
    read_bitstrings,
    validate_network,
    write_bitstrings,
)

FIG_SAMPLES = ["100", "101", "001"]


def test_sparse_state_normalised():
    s = make_sparse_state(3, "sparse", FIG_SAMPLES + ["100"])
    assert s.bitstrings == ("001", "100", "101")
    assert len(s) == 3


def test_single_state():
    s = make_sparse_state(2, StateMode.SINGLE, ["01"])
    assert list(s.enumerate()) == ["01"]
    with pytest.raises(NetworkError):
        make_sparse_state(2, "single", ["01", "10"])


def test_full_state_enumerates():
    s = make_sparse_state(2, "full")
    assert len(s) == 4
    assert list(s.enumerate()) == ["00", "01", "10", "11"]


def test_full_state_too_large_to_enumerate():
    s = make_sparse_state(40, "full")
    assert len(s) == 2 ** 40
    with pytest.raises(NetworkError):
        next(iter(s.enumerate()))


def test_subspace_state():
    s = make_sparse_state(3, "subspace", open_qubits=[0, 2], fixed={1: 1})
    assert list(s.enumerate()) == ["010", "011", "110", "111"]
    assert s.table((1, 2)) == ((1, 0), (1, 1))
    assert s.group_dim((0, 1)) == 2


@pytest.mark.parametrize("bad", [["10"], ["1a0"], []])
def test_sparse_state_errors(bad):
    with pytest.raises(NetworkError):
        make_sparse_state(3, "sparse", bad)


def test_table_first_occurrence_order():
    s = make_sparse_state(3, "sparse", FIG_SAMPLES)
    # sorted strings are 001, 100, 101
    assert s.table((0,)) == ((0,), (1,))
    assert s.table((2,)) == ((1,), (0,))
    assert s.table((0, 2)) == ((0, 1), (1, 0), (1, 1))


def test_merge_worked_example():
    # qubits b (1) and c (2) of the three samples project onto {00, 01}
    s = make_sparse_state(3, "sparse", FIG_SAMPLES)
    plan = merge_open_groups(s, [1], [2])
    assert plan.dim == 2
    assert plan.configs == ((0, 1), (0, 0))
    assert sorted(plan.configs) == [(0, 0), (0, 1)]


def test_merge_full_is_tensor_product():
    s = make_sparse_state(2, "full")
    plan = merge_open_groups(s, [0], [1])
    assert plan.dim == 4
    assert list(zip(plan.pairs_a, plan.pairs_b)) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_merge_single():
    s = make_sparse_state(2, "single", ["10"])
    plan = merge_open_groups(s, [0], [1], table_a=[(1,)], table_b=[(0,)])
    assert plan.dim == 1 and plan.configs == ((1, 0),)


def test_merge_overlap_rejected():
    s = make_sparse_state(3, "full")
    with pytest.raises(NetworkError):
        merge_open_groups(s, [0, 1], [1, 2])


@st.composite
def sample_sets(draw):
    n = draw(st.integers(2, 10))
    strings = draw(st.lists(st.text("01", min_size=n, max_size=n), min_size=1, max_size=40))
    qubits = list(range(n))
    perm = draw(st.permutations(qubits))
    k = draw(st.integers(1, n - 1))
    j = draw(st.integers(k + 1, n))
    return n, strings, sorted(perm[:k]), sorted(perm[k:j])


@given(sample_sets())
def test_merge_matches_projection(case):
    n, strings, ga, gb = case
    s = make_sparse_state(n, "sparse", strings)
    plan = merge_open_groups(s, ga, gb)
    merged = sorted(ga + gb)
    brute = {tuple(int(x[q]) for q in merged) for x in strings}
    assert plan.dim == len(brute)
    assert set(plan.configs) == brute
    assert plan.dim <= min(len(s), len(s.table(ga)) * len(s.table(gb)))
    ta, tb = s.table(ga), s.table(gb)
    for cfg, ia, ib in zip(plan.configs, plan.pairs_a, plan.pairs_b):
        lookup = dict(zip(merged, cfg))
        assert ta[ia] == tuple(lookup[q] for q in ga)
        assert tb[ib] == tuple(lookup[q] for q in gb)


@given(st.integers(3, 8).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.text("01", min_size=n, max_size=n), min_size=1, max_size=30))))
def test_merge_associative(case):
    n, strings = case
    s = make_sparse_state(n, "sparse", strings)
    a, b, c = [0], list(range(1, n - 1)), [n - 1]
    left = merge_open_groups(s, merge_open_groups(s, a, b).merged, c)
    right = merge_open_groups(s, a, merge_open_groups(s, b, c).merged)
    assert left.configs == right.configs


@given(st.integers(1, 6), st.integers(1, 6))
def test_plan_dims_single_and_full(k, j):
    n = k + j
    full = make_sparse_state(n, "full")
    assert merge_open_groups(full, range(k), range(k, n)).dim == 2 ** n
    single = make_sparse_state(n, "single", ["1" * n])
    assert merge_open_groups(single, range(k), range(k, n)).dim == 1


def test_bitstring_file_round_trip(tmp_path):
    p = tmp_path / "b.txt"
    write_bitstrings(["010", "111", "010"], p)
    assert read_bitstrings(p) == ["010", "111", "010"]
    p.write_text("01\n1x\n")
    with pytest.raises(NetworkError):
        read_bitstrings(p)


def test_label_json_round_trip():
    for lab in (3, "x", GroupLabel((0, 2))):
        assert label_from_json(label_to_json(lab)) == lab


def test_one_gate_network():
    c = Circuit(1, ((Gate(GateKind.SQRT_X, (0,)),),))
    net = circuit_to_network(c, make_sparse_state(1, "single", ["0"]))
    assert len(net.tensors) == 2
    closed = [b for b in net.bonds.values() if not b.open]
    assert len(closed) == 1 and len(net.open_bonds) == 1
    assert validate_network(net) == []


def test_empty_circuit_network():
    net = circuit_to_network(Circuit(3, ()), make_sparse_state(3, "full"))
    assert len(net.tensors) == 3
    assert len(net.open_bonds) == 3
    assert all(t.labels == (b.id,) for t, b in zip(net.tensors.values(), net.open_bonds))


def test_state_mismatch_rejected():
    with pytest.raises(NetworkError):
        circuit_to_network(Circuit(2, ()), make_sparse_state(3, "full"))


def test_validate_missing_bond():
    net = circuit_to_network(random_circuit(3, 2, 0), make_sparse_state(3, "full"))
    bid = next(b.id for b in net.bonds.values() if not b.open)
    bad = net.copy()
    del bad.bonds[bid]
    problems = validate_network(bad)
    assert any(f"bond {bid!r}" in p for p in problems)


def test_validate_three_endpoints():
    net = circuit_to_network(random_circuit(3, 2, 0), make_sparse_state(3, "full"))
    bid, b = next((k, v) for k, v in net.bonds.items() if not v.open)
    bad = net.copy()
    bad.bonds[bid] = replace(b, endpoints=b.endpoints + (0,))
    assert any("3 endpoints" in p for p in validate_network(bad))


def test_debug_json_shape():
    net = circuit_to_network(random_circuit(2, 1, 0), make_sparse_state(2, "full"))
    d = net.to_debug_json()
    assert {"id", "labels", "dims"} <= set(d["tensors"][0])
    assert {"id", "dim", "endpoints", "open", "qubit"} <= set(d["bonds"][0])


def test_from_arrays_open_bonds():
    net = TensorNetwork.from_arrays({0: ("ab", np.ones((2, 3))), 1: ("bc", np.ones((3, 4)))})
    assert {b.id for b in net.open_bonds} == {"a", "c"}
    assert net.bonds["b"].dim == 3
    with pytest.raises(NetworkError):
        TensorNetwork.from_arrays({0: ("ab", np.ones((2, 3))), 1: ("bc", np.ones((2, 4)))})


def test_tensor_transpose_and_fix(rng):
    data = rng.normal(size=(2, 3, 4))
    t = ComplexTensor(("a", "b", "c"), data)
    u = t.transpose_to(("c", "a", "b"))
    np.testing.assert_array_equal(u.data, data.transpose(2, 0, 1))
    np.testing.assert_array_equal(t.fix("b", 2).data, data[:, 2, :])
    with pytest.raises(NetworkError):
        ComplexTensor(("a", "a"), np.zeros((2, 2)))


def test_boundary_tensor_gathers_configs():
    s = make_sparse_state(2, "sparse", ["01", "11"])
    net = TensorNetwork.from_arrays({0: (("x", "y"), np.arange(4).reshape(2, 2))}, open_qubits={"x": 0, "y": 1})
    net = TensorNetwork(net.tensors, net.bonds, s)
    t = boundary_tensor(net, 0)
    assert t.labels == (GroupLabel((0, 1)),)
    np.testing.assert_array_equal(t.data, [1, 3])


@given(st.integers(1, 5), st.integers(0, 4), st.integers(0, 1000))
def test_qubit_zero_is_msb(n, cycles, seed):
    s = make_sparse_state(n, "full")
    strings = list(s.enumerate())
    assert strings == [format(i, f"0{n}b") for i in range(2 ** n)]
    assert all(int(x[0]) == (i >> (n - 1)) for i, x in enumerate(strings))
