"""Brute-force state-vector reference and a fidelity-controlled sampler."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .circuit import Circuit
from .verify import AmplitudeSet

MAX_QUBITS = 24


class OracleError(ValueError):
    pass


def _check_size(n: int) -> None:
    if n > MAX_QUBITS:
        raise OracleError(f"state vector of {n} qubits is too large (limit {MAX_QUBITS})")


def statevector(circuit: Circuit, norm_tol: float | None = 1e-12) -> np.ndarray:
    """Amplitudes of ``C|0...0>``, index bit ``n-1-q`` holding qubit ``q``.

    With ``norm_tol`` set, the norm is checked after every layer.
    """
    n = circuit.n_qubits
    _check_size(n)
    psi = np.zeros((2,) * n, dtype=np.complex128)
    psi[(0,) * n] = 1.0
    for depth, layer in enumerate(circuit.layers):
        for gate in layer:
            k = len(gate.qubits)
            u = gate.unitary().reshape((2,) * (2 * k))
            psi = np.tensordot(u, psi, axes=(list(range(k, 2 * k)), list(gate.qubits)))
            psi = np.moveaxis(psi, list(range(k)), list(gate.qubits))
        if norm_tol is not None:
            norm = np.vdot(psi, psi).real
            if abs(norm - 1.0) > norm_tol:
                raise OracleError(f"norm drifted to {norm!r} after layer {depth}")
    return psi.reshape(-1)


def bitstring_index(bits: str) -> int:
    return int(bits, 2)


def index_bitstring(i: int, n: int) -> str:
    return format(i, f"0{n}b")


def amplitudes_for(circuit: Circuit, bitstrings: Sequence[str], psi: np.ndarray | None = None) -> AmplitudeSet:
    n = circuit.n_qubits
    if psi is None:
        psi = statevector(circuit)
    for s in bitstrings:
        if len(s) != n:
            raise OracleError(f"bitstring {s!r} does not have {n} bits")
    idx = np.fromiter((bitstring_index(s) for s in bitstrings), dtype=np.int64, count=len(bitstrings))
    return AmplitudeSet(n, tuple(bitstrings), psi[idx])


def sample(circuit: Circuit, m: int, fidelity: float = 1.0, seed: int = 0,
           psi: np.ndarray | None = None) -> list[str]:
    """``m`` bitstrings: ideal with probability ``fidelity``, else uniform."""
    if not 0.0 <= fidelity <= 1.0:
        raise OracleError("fidelity must lie in [0, 1]")
    n = circuit.n_qubits
    _check_size(n)
    if psi is None:
        psi = statevector(circuit)
    p = np.abs(psi) ** 2
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    ideal = rng.random(m) < fidelity
    out = rng.integers(0, 2 ** n, size=m)
    k = int(ideal.sum())
    if k:
        out[ideal] = rng.choice(2 ** n, size=k, p=p)
    return [index_bitstring(int(i), n) for i in out]
