"""Random quantum circuits: gate set, text/JSON formats and a generator."""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class CircuitError(ValueError):
    """A circuit violates a structural invariant."""


class ParseError(CircuitError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class GateKind(str, enum.Enum):
    SQRT_X = "sx"
    SQRT_Y = "sy"
    SQRT_W = "sw"
    FSIM = "fsim"
    CUSTOM = "u"


SINGLE_QUBIT_KINDS = (GateKind.SQRT_X, GateKind.SQRT_Y, GateKind.SQRT_W)

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_W = (_X + _Y) / math.sqrt(2)


def _principal_sqrt(p: np.ndarray) -> np.ndarray:
    # p is a Hermitian involution, so sqrt(p) = ((1+i) I + (1-i) p) / 2
    return ((1 + 1j) * np.eye(2) + (1 - 1j) * p) / 2


_SQRT_MATRICES = {
    GateKind.SQRT_X: _principal_sqrt(_X),
    GateKind.SQRT_Y: _principal_sqrt(_Y),
    GateKind.SQRT_W: _principal_sqrt(_W),
}


def fsim_matrix(theta: float, phi: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [
            [1, 0, 0, 0],
            [0, c, -1j * s, 0],
            [0, -1j * s, c, 0],
            [0, 0, 0, np.exp(-1j * phi)],
        ],
        dtype=complex,
    )


def _as_matrix_tuple(m) -> tuple:
    arr = np.asarray(m, dtype=complex)
    return tuple(tuple(complex(v) for v in row) for row in arr)


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()
    matrix: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if len(set(self.qubits)) != len(self.qubits):
            raise CircuitError(f"gate {self.kind.value} repeats a qubit: {self.qubits}")
        if self.kind in SINGLE_QUBIT_KINDS:
            if len(self.qubits) != 1 or self.params:
                raise CircuitError(f"{self.kind.value} takes one qubit and no parameters")
        elif self.kind is GateKind.FSIM:
            if len(self.qubits) != 2 or len(self.params) != 2:
                raise CircuitError("fsim takes two qubits and (theta, phi)")
        else:
            if self.matrix is None or len(self.qubits) not in (1, 2):
                raise CircuitError("custom gate needs one or two qubits and a matrix")
            m = np.asarray(self.matrix, dtype=complex)
            dim = 2 ** len(self.qubits)
            if m.shape != (dim, dim):
                raise CircuitError(f"custom gate matrix must be {dim}x{dim}, got {m.shape}")
            if np.max(np.abs(m @ m.conj().T - np.eye(dim))) > 1e-10:
                raise CircuitError("custom gate matrix is not unitary")
            object.__setattr__(self, "matrix", _as_matrix_tuple(m))

    @classmethod
    def fsim(cls, q0: int, q1: int, theta: float, phi: float) -> "Gate":
        return cls(GateKind.FSIM, (q0, q1), (theta, phi))

    @classmethod
    def custom(cls, qubits: Sequence[int], matrix) -> "Gate":
        return cls(GateKind.CUSTOM, tuple(qubits), (), _as_matrix_tuple(matrix))

    def unitary(self) -> np.ndarray:
        """The gate as a ``2^k x 2^k`` matrix; the first listed qubit is the high bit."""
        if self.kind in _SQRT_MATRICES:
            return _SQRT_MATRICES[self.kind].copy()
        if self.kind is GateKind.FSIM:
            return fsim_matrix(*self.params)
        return np.array(self.matrix, dtype=complex)


def gate_tensor(gate: Gate) -> np.ndarray:
    """Gate as a tensor with axes ``(out_0, ..., in_0, ...)``, each of extent 2."""
    k = len(gate.qubits)
    return gate.unitary().reshape((2,) * (2 * k))


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    layers: tuple[tuple[Gate, ...], ...]

    def __post_init__(self):
        if self.n_qubits < 1:
            raise CircuitError("n_qubits must be positive")
        layers = tuple(tuple(layer) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        for li, layer in enumerate(layers):
            seen: set[int] = set()
            for g in layer:
                for q in g.qubits:
                    if not 0 <= q < self.n_qubits:
                        raise CircuitError(f"layer {li}: qubit {q} out of range for {self.n_qubits} qubits")
                    if q in seen:
                        raise CircuitError(f"layer {li}: qubit {q} used twice")
                    seen.add(q)

    @property
    def gates(self) -> list[Gate]:
        return [g for layer in self.layers for g in layer]

    @property
    def gate_count(self) -> int:
        return sum(len(layer) for layer in self.layers)

    # -- text format -------------------------------------------------------

    def to_text(self) -> str:
        lines = [str(self.n_qubits)]
        for li, layer in enumerate(self.layers):
            for g in layer:
                toks = [str(li), g.kind.value, *(str(q) for q in g.qubits)]
                if g.kind is GateKind.FSIM:
                    toks += [repr(p) for p in g.params]
                elif g.kind is GateKind.CUSTOM:
                    for row in g.matrix:
                        for v in row:
                            toks += [repr(v.real), repr(v.imag)]
                lines.append(" ".join(toks))
        return "\n".join(lines) + "\n"

    # -- JSON mirror -------------------------------------------------------

    def to_json(self) -> dict:
        layers = []
        for layer in self.layers:
            out = []
            for g in layer:
                params: dict = {}
                if g.kind is GateKind.FSIM:
                    params = {"theta": g.params[0], "phi": g.params[1]}
                elif g.kind is GateKind.CUSTOM:
                    params = {"matrix": [[[v.real, v.imag] for v in row] for row in g.matrix]}
                out.append({"kind": g.kind.value, "qubits": list(g.qubits), "params": params})
            layers.append(out)
        return {"n_qubits": self.n_qubits, "layers": layers}

    @classmethod
    def from_json(cls, d: dict) -> "Circuit":
        layers = []
        for layer in d["layers"]:
            gates = []
            for g in layer:
                kind = GateKind(g["kind"])
                params = g.get("params") or {}
                if kind is GateKind.FSIM:
                    gates.append(Gate.fsim(*g["qubits"], params["theta"], params["phi"]))
                elif kind is GateKind.CUSTOM:
                    m = [[complex(re, im) for re, im in row] for row in params["matrix"]]
                    gates.append(Gate.custom(g["qubits"], m))
                else:
                    gates.append(Gate(kind, tuple(g["qubits"])))
            layers.append(tuple(gates))
        return cls(int(d["n_qubits"]), tuple(layers))


def parse_circuit(text: str) -> Circuit:
    """Parse the line-oriented circuit format.

    Line 1 holds the qubit count; each later line is
    ``<layer> <sx|sy|sw|fsim|u> <qubit> [<qubit2>] [params...]``.
    ``fsim`` takes ``theta phi``; ``u`` takes the row-major matrix as
    ``re im`` pairs (8 numbers for one qubit, 32 for two).
    """
    n_qubits = None
    by_layer: dict[int, list[Gate]] = {}
    where: dict[int, list[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if n_qubits is None:
            if len(toks) != 1:
                raise ParseError(lineno, "expected the qubit count")
            try:
                n_qubits = int(toks[0])
            except ValueError:
                raise ParseError(lineno, f"bad qubit count {toks[0]!r}") from None
            if n_qubits < 1:
                raise ParseError(lineno, "qubit count must be positive")
            continue
        gate, layer = _parse_gate_line(lineno, toks)
        by_layer.setdefault(layer, []).append(gate)
        where.setdefault(layer, []).append(lineno)
    if n_qubits is None:
        raise ParseError(1, "empty circuit file")
    n_layers = max(by_layer) + 1 if by_layer else 0
    layers = []
    for li in range(n_layers):
        seen: set[int] = set()
        for g, lineno in zip(by_layer.get(li, ()), where.get(li, ())):
            for q in g.qubits:
                if q >= n_qubits:
                    raise ParseError(lineno, f"qubit {q} out of range for {n_qubits} qubits")
                if q in seen:
                    raise ParseError(lineno, f"layer {li}: qubit {q} used twice")
                seen.add(q)
        layers.append(tuple(by_layer.get(li, ())))
    return Circuit(n_qubits, tuple(layers))


def _parse_gate_line(lineno: int, toks: list[str]) -> tuple[Gate, int]:
    if len(toks) < 3:
        raise ParseError(lineno, "expected '<layer> <gate> <qubit> ...'")
    try:
        layer = int(toks[0])
    except ValueError:
        raise ParseError(lineno, f"bad layer index {toks[0]!r}") from None
    if layer < 0:
        raise ParseError(lineno, "negative layer index")
    try:
        kind = GateKind(toks[1])
    except ValueError:
        raise ParseError(lineno, f"unknown gate {toks[1]!r}") from None
    rest = toks[2:]
    try:
        if kind in SINGLE_QUBIT_KINDS:
            if len(rest) != 1:
                raise ParseError(lineno, f"{kind.value} takes exactly one qubit")
            return Gate(kind, (int(rest[0]),)), layer
        if kind is GateKind.FSIM:
            if len(rest) != 4:
                raise ParseError(lineno, "fsim takes two qubits, theta and phi")
            return Gate.fsim(int(rest[0]), int(rest[1]), float(rest[2]), float(rest[3])), layer
        if len(rest) == 1 + 8:
            nq = 1
        elif len(rest) == 2 + 32:
            nq = 2
        else:
            raise ParseError(lineno, "u takes 1 qubit + 8 numbers or 2 qubits + 32 numbers")
        qubits = [int(t) for t in rest[:nq]]
        nums = [float(t) for t in rest[nq:]]
        vals = [complex(nums[i], nums[i + 1]) for i in range(0, len(nums), 2)]
        dim = 2 ** nq
        matrix = [vals[r * dim:(r + 1) * dim] for r in range(dim)]
        return Gate.custom(qubits, matrix), layer
    except ParseError:
        raise
    except CircuitError as exc:
        raise ParseError(lineno, str(exc)) from None
    except ValueError as exc:
        raise ParseError(lineno, f"bad number: {exc}") from None


def load_circuit(path) -> Circuit:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        try:
            return Circuit.from_json(json.loads(text))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise CircuitError(f"{path}: malformed circuit JSON ({exc})") from None
    return parse_circuit(text)


def save_circuit(circuit: Circuit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if str(path).endswith(".json"):
            json.dump(circuit.to_json(), fh, indent=1)
            fh.write("\n")
        else:
            fh.write(circuit.to_text())


# ---------------------------------------------------------------------------
# generator


def generate_random_circuit(
    n_qubits: int,
    n_cycles: int,
    coupler_pattern: Sequence[Sequence[tuple[int, int]]],
    seed: int,
    fsim_params: tuple[float, float] = (math.pi / 2, math.pi / 6),
    avoid_repeats: bool = True,
) -> Circuit:
    """Random circuit of ``n_cycles`` cycles.

    Each cycle is a layer of single-qubit gates drawn from {sqrt X,
    sqrt Y, sqrt W} on every qubit, followed by fsim gates on the edges of
    ``coupler_pattern[cycle % len(coupler_pattern)]``.  With
    ``avoid_repeats`` a qubit never draws the same single-qubit gate twice
    in a row.
    """
    if not coupler_pattern:
        raise CircuitError("coupler pattern list is empty")
    if n_qubits < 1 or n_cycles < 0:
        raise CircuitError("need n_qubits >= 1 and n_cycles >= 0")
    for edges in coupler_pattern:
        for a, b in edges:
            if not (0 <= a < n_qubits and 0 <= b < n_qubits) or a == b:
                raise CircuitError(f"bad coupler edge ({a}, {b}) for {n_qubits} qubits")
    rng = random.Random(seed)
    theta, phi = fsim_params
    previous: list[GateKind | None] = [None] * n_qubits
    layers = []
    for cycle in range(n_cycles):
        singles = []
        for q in range(n_qubits):
            choices = [k for k in SINGLE_QUBIT_KINDS if not (avoid_repeats and k is previous[q])]
            kind = rng.choice(choices)
            previous[q] = kind
            singles.append(Gate(kind, (q,)))
        layers.append(tuple(singles))
        edges = coupler_pattern[cycle % len(coupler_pattern)]
        layers.append(tuple(Gate.fsim(a, b, theta, phi) for a, b in edges))
    return Circuit(n_qubits, tuple(layers))


def line_patterns(n_qubits: int) -> list[list[tuple[int, int]]]:
    """Brick-wall couplers on a chain: even bonds, then odd bonds."""
    even = [(q, q + 1) for q in range(0, n_qubits - 1, 2)]
    odd = [(q, q + 1) for q in range(1, n_qubits - 1, 2)]
    return [p for p in (even, odd) if p]


def grid_patterns(rows: int, cols: int, sequence: str = "ABCDCDAB") -> list[list[tuple[int, int]]]:
    """Coupler layers on a ``rows x cols`` grid.

    A/B are horizontal bonds starting at even/odd columns, C/D vertical
    bonds starting at even/odd rows; ``sequence`` picks the cycle order.
    """
    def q(r, c):
        return r * cols + c

    base = {
        "A": [(q(r, c), q(r, c + 1)) for r in range(rows) for c in range(0, cols - 1, 2)],
        "B": [(q(r, c), q(r, c + 1)) for r in range(rows) for c in range(1, cols - 1, 2)],
        "C": [(q(r, c), q(r + 1, c)) for r in range(0, rows - 1, 2) for c in range(cols)],
        "D": [(q(r, c), q(r + 1, c)) for r in range(1, rows - 1, 2) for c in range(cols)],
    }
    out = []
    for ch in sequence.upper():
        if ch not in base:
            raise CircuitError(f"unknown coupler layer {ch!r}; use A-D")
        if base[ch]:
            out.append(base[ch])
    if not out:
        raise CircuitError("coupler sequence produced no edges")
    return out


def grid_shape(n_qubits: int) -> tuple[int, int]:
    """Most square ``rows x cols`` factorisation of ``n_qubits``."""
    rows = int(math.isqrt(n_qubits))
    while n_qubits % rows:
        rows -= 1
    return rows, n_qubits // rows


def default_patterns(n_qubits: int) -> list[list[tuple[int, int]]]:
    rows, cols = grid_shape(n_qubits)
    if rows == 1:
        pats = line_patterns(n_qubits)
        return pats if pats else [[]]
    return grid_patterns(rows, cols)


def random_circuit(n_qubits: int, n_cycles: int, seed: int) -> Circuit:
    """Generator with the default grid/line couplers for ``n_qubits``."""
    return generate_random_circuit(n_qubits, n_cycles, default_patterns(n_qubits), seed)


def iter_gates(circuit: Circuit) -> Iterable[Gate]:
    for layer in circuit.layers:
        yield from layer
