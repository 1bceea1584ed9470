"""Tensor-network simulation of random quantum circuits."""

from .circuit import Circuit, Gate, GateKind, generate_random_circuit, parse_circuit, random_circuit
from .engine import contract_all, contract_subtask, execute_step, reorder_topk, run_simulation
from .network import (
    GroupLabel,
    MergePlan,
    SparseState,
    StateMode,
    TensorNetwork,
    circuit_to_network,
    make_sparse_state,
    merge_open_groups,
)
from .pathopt import AnnealSchedule, ContractionTree, CostModel, ScoreParams, greedy_init, sa_optimize
from .precision import FormatSpec, PrecisionSchedule, SplitMode
from .slicer import SliceSet, dynamic_slice
from .verify import AmplitudeSet, VerificationReport, lxeb

__version__ = "0.1.0"
