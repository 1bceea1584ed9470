"""Fidelity estimates, precision error metrics and Porter-Thomas checks."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

DEFAULT_BINS = 50
DEFAULT_RANGE = (-8.0, 4.0)


class VerifyError(ValueError):
    pass


@dataclass(eq=False)
class AmplitudeSet:
    """Amplitudes for a list of bitstrings; repeats count as separate samples."""

    n_qubits: int
    bitstrings: tuple[str, ...]
    amplitudes: np.ndarray

    def __post_init__(self):
        self.bitstrings = tuple(self.bitstrings)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1)
        if len(self.bitstrings) != self.amplitudes.size:
            raise VerifyError("one amplitude per bitstring required")
        if not self.bitstrings:
            raise VerifyError("amplitude set is empty")
        for s in self.bitstrings:
            if len(s) != self.n_qubits:
                raise VerifyError(f"bitstring {s!r} does not have {self.n_qubits} bits")

    @property
    def m(self) -> int:
        return len(self.bitstrings)

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def as_dict(self) -> dict[str, complex]:
        return {s: complex(a) for s, a in zip(self.bitstrings, self.amplitudes)}

    def __getitem__(self, bitstring: str) -> complex:
        return self.as_dict()[bitstring]

    def expand(self, samples: Sequence[str]) -> "AmplitudeSet":
        """Amplitudes for ``samples`` in order, repeats included."""
        lookup = self.as_dict()
        missing = [s for s in samples if s not in lookup]
        if missing:
            raise VerifyError(f"{len(missing)} samples have no amplitude, e.g. {missing[0]}")
        return AmplitudeSet(self.n_qubits, tuple(samples), np.array([lookup[s] for s in samples]))

    def to_text(self) -> str:
        lines = [f"{s} {a.real:.17g} {a.imag:.17g}" for s, a in zip(self.bitstrings, self.amplitudes)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AmplitudeSet":
        bits, amps = [], []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3 or set(parts[0]) - {"0", "1"}:
                raise VerifyError(f"line {lineno}: expected '<bits> <re> <im>'")
            try:
                amps.append(complex(float(parts[1]), float(parts[2])))
            except ValueError:
                raise VerifyError(f"line {lineno}: bad number") from None
            bits.append(parts[0])
        if not bits:
            raise VerifyError("no amplitudes found")
        return cls(len(bits[0]), tuple(bits), np.array(amps))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "AmplitudeSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def lxeb(amps: AmplitudeSet) -> float:
    """``2^N * mean(p) - 1`` over all samples."""
    return float(2.0 ** amps.n_qubits * math.fsum(amps.probabilities) / amps.m - 1.0)


def lxeb_standard_error(amps: AmplitudeSet) -> float:
    """Sample standard error of the LXEB estimate."""
    if amps.m < 2:
        return math.inf
    dp = 2.0 ** amps.n_qubits * amps.probabilities
    return float(np.std(dp, ddof=1) / math.sqrt(amps.m))


def squared_l2(amps: AmplitudeSet) -> float:
    return math.fsum(amps.probabilities)


def squared_l2_error(reference: AmplitudeSet, test: AmplitudeSet) -> float:
    """Relative difference of the squared L2 norms over the same bitstrings."""
    if set(reference.bitstrings) != set(test.bitstrings):
        raise VerifyError("reference and test amplitudes cover different bitstrings")
    ref = squared_l2(reference)
    if ref == 0:
        raise VerifyError("reference norm is zero")
    return abs(ref - squared_l2(test)) / ref


def fl_error(eps_l2sq: float, fl: float) -> float | None:
    """Relative error of the fidelity estimate; ``None`` when ``fl <= 0``."""
    if fl <= 0:
        return None
    return eps_l2sq * (1.0 + fl) / fl


def porter_thomas_pdf(x, fl: float = 0.0):
    """Density of ``x = log(D p)`` for a fidelity-``fl`` mixture."""
    x = np.asarray(x, dtype=float)
    u = np.exp(x)
    out = (1.0 + fl * (u - 1.0)) * np.exp(x - u)
    return float(out) if out.ndim == 0 else out


def porter_thomas_cdf(x, fl: float = 0.0):
    x = np.asarray(x, dtype=float)
    u = np.exp(x)
    out = -np.expm1(-u) - fl * u * np.exp(-u)
    return float(out) if out.ndim == 0 else out


@dataclass
class Histogram:
    edges: np.ndarray
    mass: np.ndarray
    theory: np.ndarray
    fl: float
    ks: float
    excluded: int
    clipped: int

    def rows(self) -> list[dict]:
        return [
            {"x_lo": float(lo), "x_hi": float(hi), "mass": float(m), "theory": float(t)}
            for lo, hi, m, t in zip(self.edges[:-1], self.edges[1:], self.mass, self.theory)
        ]


def histogram_logdp(amps: AmplitudeSet, bins: int = DEFAULT_BINS, x_range: tuple[float, float] = DEFAULT_RANGE,
                    fl: float | None = None) -> Histogram:
    """Normalised histogram of ``log(2^N p)`` and the matching theory masses.

    Zero-probability samples are dropped and counted in ``excluded``; values
    outside ``x_range`` are folded into the end bins (``clipped``), and the
    theory masses of the end bins absorb the tails the same way.
    """
    p = amps.probabilities
    keep = p > 0
    excluded = int(np.count_nonzero(~keep))
    if not keep.any():
        raise VerifyError("every sample has zero probability")
    x = np.log(2.0 ** amps.n_qubits * p[keep])
    if fl is None:
        fl = lxeb(amps)
    lo, hi = x_range
    edges = np.linspace(lo, hi, bins + 1)
    clipped = int(np.count_nonzero((x < lo) | (x >= hi)))
    counts, _ = np.histogram(np.clip(x, lo, np.nextafter(hi, lo)), bins=edges)
    mass = counts / counts.sum()
    # the estimate can stray outside [0, 1]; the mixture weight cannot
    weight = min(max(fl, 0.0), 1.0)
    cdf = porter_thomas_cdf(edges, weight)
    cdf[0], cdf[-1] = 0.0, 1.0
    theory = np.diff(cdf)
    ks = float(stats.kstest(x, lambda t: porter_thomas_cdf(t, weight)).statistic)
    return Histogram(edges, mass, theory, fl, ks, excluded, clipped)


@dataclass
class VerificationReport:
    fl: float
    n_samples: int
    n_qubits: int
    fl_stderr: float
    eps_l2sq: float | None = None
    eps_fl: float | None = None
    histogram: Histogram | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        d = {
            "F_l": self.fl,
            "F_l_stderr": self.fl_stderr,
            "eps_l2sq": self.eps_l2sq,
            "eps_Fl": self.eps_fl,
            "n_samples": self.n_samples,
            "n_qubits": self.n_qubits,
        }
        if self.histogram is not None:
            d["ks"] = self.histogram.ks
            d["excluded"] = self.histogram.excluded
            d["histogram"] = self.histogram.rows()
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x_lo", "x_hi", "mass", "theory"])
        if self.histogram is not None:
            for row in self.histogram.rows():
                w.writerow([f"{row[k]:.17g}" for k in ("x_lo", "x_hi", "mass", "theory")])
        return buf.getvalue()


def verify(amps: AmplitudeSet, reference: AmplitudeSet | None = None, bins: int = DEFAULT_BINS,
           x_range: tuple[float, float] = DEFAULT_RANGE) -> VerificationReport:
    """Full report for ``amps``; error fields need a higher-precision ``reference``."""
    fl = lxeb(amps)
    report = VerificationReport(fl, amps.m, amps.n_qubits, lxeb_standard_error(amps))
    if reference is not None:
        report.eps_l2sq = squared_l2_error(reference, amps)
        report.eps_fl = fl_error(report.eps_l2sq, lxeb(reference))
    if np.any(amps.probabilities > 0):
        report.histogram = histogram_logdp(amps, bins, x_range, fl)
    return report

