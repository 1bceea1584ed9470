"""Software emulation of reduced floating-point formats.

Values are carried as float64 and rounded at three contract points: operand
conversion, product, and accumulation.  This reproduces the rounding
behaviour of narrow hardware formats (TF32, FP16, BF16) and of the
big/small operand split used to recover FP32 accuracy from them; it says
nothing about speed.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class FormatSpec:
    """A binary floating-point format with a hidden leading bit.

    ``subnormals=False`` flushes every result below the smallest normal
    number to a signed zero.
    """

    name: str
    exponent_bits: int
    mantissa_bits: int
    subnormals: bool = True

    @property
    def bias(self) -> int:
        return 2 ** (self.exponent_bits - 1) - 1

    @property
    def max_finite(self) -> float:
        return (2.0 - 2.0 ** -self.mantissa_bits) * 2.0 ** self.bias

    @property
    def min_normal(self) -> float:
        return 2.0 ** (1 - self.bias)

    @property
    def min_subnormal(self) -> float:
        return 2.0 ** (1 - self.bias - self.mantissa_bits)

    def __str__(self) -> str:
        return self.name


FP64 = FormatSpec("FP64", 11, 52)
FP32 = FormatSpec("FP32", 8, 23)
TF32 = FormatSpec("TF32", 8, 10)
FP16 = FormatSpec("FP16", 5, 10)
BF16 = FormatSpec("BF16", 8, 7)

FORMATS = {f.name.lower(): f for f in (FP64, FP32, TF32, FP16, BF16)}


def get_format(name: str | FormatSpec) -> FormatSpec:
    if isinstance(name, FormatSpec):
        return name
    try:
        return FORMATS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown floating format {name!r}; choose from {sorted(FORMATS)}") from None


class SplitMode(enum.IntEnum):
    SINGLE = 1
    TRIPLE = 3


@dataclass(frozen=True)
class Setting:
    """Operand format plus split mode for one contraction step."""

    fmt: FormatSpec
    mode: SplitMode = SplitMode.SINGLE

    def __post_init__(self):
        object.__setattr__(self, "fmt", get_format(self.fmt))
        object.__setattr__(self, "mode", SplitMode(self.mode))

    @property
    def label(self) -> str:
        if self.mode is SplitMode.TRIPLE:
            return f"3x{self.fmt.name}"
        return self.fmt.name

    def to_dict(self) -> dict:
        return {"fmt": self.fmt.name.lower(), "mode": int(self.mode)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Setting":
        return cls(get_format(d["fmt"]), SplitMode(int(d.get("mode", 1))))


@dataclass(frozen=True)
class GemmConfig:
    """Everything a GEMM needs to know about rounding."""

    fmt: FormatSpec = FP64
    mode: SplitMode = SplitMode.SINGLE
    accum: FormatSpec = FP64
    rescale: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fmt", get_format(self.fmt))
        object.__setattr__(self, "mode", SplitMode(self.mode))
        object.__setattr__(self, "accum", get_format(self.accum))

    @property
    def exact(self) -> bool:
        return self.fmt == FP64 and self.accum == FP64 and self.mode is SplitMode.SINGLE


EXACT = GemmConfig()


# ---------------------------------------------------------------------------
# scalar/array rounding


def _is_native32(fmt: FormatSpec) -> bool:
    return fmt.exponent_bits == 8 and fmt.mantissa_bits == 23 and fmt.subnormals


def _is_native64(fmt: FormatSpec) -> bool:
    return fmt.exponent_bits == 11 and fmt.mantissa_bits == 52


def _quantize_real(x: np.ndarray, fmt: FormatSpec) -> np.ndarray:
    if _is_native64(fmt):
        return np.array(x, dtype=np.float64, copy=True)
    if _is_native32(fmt):
        with np.errstate(over="ignore"):
            return x.astype(np.float32).astype(np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    shift = 52 - fmt.mantissa_bits
    bits = x.view(np.uint64)
    lsb = (bits >> np.uint64(shift)) & np.uint64(1)
    # round-to-nearest-even on the dropped low bits; a carry rolls into the exponent
    rounded = (bits + (np.uint64((1 << (shift - 1)) - 1) + lsb)) & ~np.uint64((1 << shift) - 1)
    out = rounded.view(np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.where(np.abs(out) > fmt.max_finite, np.copysign(np.inf, x), out)
        tiny = np.abs(x) < fmt.min_normal
        if fmt.subnormals:
            q = fmt.min_subnormal
            below = np.rint(x / q) * q
        else:
            below = np.copysign(0.0, x)
        out = np.where(tiny, below, out)
        return np.where(np.isfinite(x), out, x)


def quantize(x, fmt: FormatSpec | str):
    """Round ``x`` to ``fmt`` (nearest-even), part-wise for complex input.

    Overflow goes to a signed infinity.  Values below the normal range are
    rounded onto the subnormal grid, or flushed to zero when the format
    disables subnormals.  Scalars come back as Python numbers.
    """
    fmt = get_format(fmt)
    scalar = np.isscalar(x)
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        out = _quantize_real(arr.real, fmt) + 1j * _quantize_real(arr.imag, fmt)
    else:
        out = _quantize_real(arr.astype(np.float64, copy=False), fmt)
    out = out.reshape(arr.shape)
    if scalar:
        return complex(out.item()) if np.iscomplexobj(out) else float(out.item())
    return out


def split(x, fmt: FormatSpec | str):
    """Split ``x`` into ``(big, small)`` with ``x ~ big + small`` in ``fmt``."""
    fmt = get_format(fmt)
    big = quantize(x, fmt)
    small = quantize(np.asarray(x) - np.asarray(big) if not np.isscalar(x) else x - big, fmt)
    return big, small


# ---------------------------------------------------------------------------
# multiply-accumulate kernels


class _Accumulator:
    """Running sum rounded to ``fmt`` after every addition."""

    def __init__(self, shape, fmt: FormatSpec):
        self.fmt = fmt
        if _is_native32(fmt):
            self.dtype = np.float32
        else:
            self.dtype = np.float64
        self.value = np.zeros(shape, dtype=self.dtype)

    def add(self, product: np.ndarray, negate: bool = False) -> None:
        fmt = self.fmt
        if self.dtype is np.float32:
            # float32 arithmetic on float32 operands is correctly rounded
            p = product.astype(np.float32)
            self.value = self.value - p if negate else self.value + p
        elif _is_native64(fmt):
            self.value = self.value - product if negate else self.value + product
        else:
            p = _quantize_real(product, fmt)
            s = self.value - p if negate else self.value + p
            self.value = _quantize_real(s, fmt)


def _operand_parts(x: np.ndarray, setting_fmt: FormatSpec, mode: SplitMode, storage: FormatSpec):
    """Quantized operand terms: ``[x]`` for single mode, ``[big, small]`` for triple."""
    x = quantize(x, storage) if not _is_native64(storage) else x
    if mode is SplitMode.SINGLE:
        return [quantize(x, setting_fmt)]
    big = quantize(x, setting_fmt)
    small = quantize(x - big, setting_fmt)
    return [big, small]


def _pow2_scale(x: np.ndarray) -> float:
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak == 0.0 or not math.isfinite(peak):
        return 1.0
    return 2.0 ** -math.frexp(peak)[1]


def gemm(a: np.ndarray, b: np.ndarray, cfg: GemmConfig = EXACT, index=None) -> np.ndarray:
    """Batched complex/real matrix product under an emulated rounding regime.

    ``a`` has shape ``(Ba, m, k)`` and ``b`` shape ``(Bb, k, n)``.  Without
    ``index`` the batches are aligned (``Ba == Bb``).  With
    ``index=(ia, ib)`` output slab ``c`` is ``a[ia[c]] @ b[ib[c]]``; operand
    slabs are addressed in place rather than gathered up front.

    The emulated path runs the k-loop sequentially so every product and
    every partial sum is rounded in a fixed order.  Triple mode runs three
    passes over k (big*small, small*big, big*big) into one accumulator.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 3 or b.ndim != 3:
        raise ValueError("gemm operands must be rank 3 (batch, rows, cols)")
    if a.shape[2] != b.shape[1]:
        raise ValueError(f"inner extents differ: {a.shape} x {b.shape}")
    if index is None:
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"batch extents differ: {a.shape[0]} vs {b.shape[0]}")
        ia = ib = None
        nbatch = a.shape[0]
    else:
        ia = np.asarray(index[0], dtype=np.intp)
        ib = np.asarray(index[1], dtype=np.intp)
        if ia.shape != ib.shape:
            raise ValueError("index arrays differ in length")
        if ia.size and (ia.min() < 0 or ia.max() >= a.shape[0] or ib.min() < 0 or ib.max() >= b.shape[0]):
            raise IndexError("batched operand offset out of bounds")
        nbatch = ia.size

    m, k, n = a.shape[1], a.shape[2], b.shape[2]
    is_complex = np.iscomplexobj(a) or np.iscomplexobj(b)
    out_dtype = np.complex128 if is_complex else np.float64

    scale = 1.0
    if cfg.rescale:
        sa, sb = _pow2_scale(a), _pow2_scale(b)
        a = a * sa
        b = b * sb
        scale = 1.0 / (sa * sb)

    if cfg.exact:
        out = np.empty((nbatch, m, n), dtype=out_dtype)
        if ia is None:
            np.matmul(a, b, out=out)
        else:
            for c in range(nbatch):
                np.matmul(a[ia[c]], b[ib[c]], out=out[c])
        return out * scale if scale != 1.0 else out

    with np.errstate(over="ignore", invalid="ignore"):
        out = _emulated_gemm(a, b, cfg, ia, ib, nbatch, m, n, k, is_complex)
    return out * scale if scale != 1.0 else out


def _emulated_gemm(a, b, cfg, ia, ib, nbatch, m, n, k, is_complex):
    # k-major contiguous copies so each k-slice is a cheap view
    a_parts = _operand_parts(np.moveaxis(a, 2, 0), cfg.fmt, cfg.mode, cfg.accum)
    b_parts = _operand_parts(np.moveaxis(b, 1, 0), cfg.fmt, cfg.mode, cfg.accum)
    if cfg.mode is SplitMode.SINGLE:
        passes = [(a_parts[0], b_parts[0])]
    else:
        (a_big, a_small), (b_big, b_small) = a_parts, b_parts
        passes = [(a_big, b_small), (a_small, b_big), (a_big, b_big)]

    acc_re = _Accumulator((nbatch, m, n), cfg.accum)
    acc_im = _Accumulator((nbatch, m, n), cfg.accum) if is_complex else None

    for xa, xb in passes:
        xa_re = np.ascontiguousarray(xa.real)
        xb_re = np.ascontiguousarray(xb.real)
        xa_im = np.ascontiguousarray(xa.imag) if is_complex else None
        xb_im = np.ascontiguousarray(xb.imag) if is_complex else None
        for kk in range(k):
            ar = xa_re[kk]
            br = xb_re[kk]
            if ia is not None:
                ar = ar[ia]
                br = br[ib]
            ar = ar[:, :, None]
            br = br[:, None, :]
            acc_re.add(ar * br)
            if is_complex:
                ai = xa_im[kk]
                bi = xb_im[kk]
                if ia is not None:
                    ai = ai[ia]
                    bi = bi[ib]
                ai = ai[:, :, None]
                bi = bi[:, None, :]
                acc_re.add(ai * bi, negate=True)
                acc_im.add(ar * bi)
                acc_im.add(ai * br)

    re = acc_re.value.astype(np.float64)
    if not is_complex:
        return re
    return re + 1j * acc_im.value.astype(np.float64)


def mac_dot(a: Sequence, b: Sequence, fmt: FormatSpec | str = FP32,
            mode: SplitMode | int = SplitMode.SINGLE, accum: FormatSpec | str = FP32):
    """Dot product of two vectors through the emulated MAC chain."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"mac_dot needs equal-length vectors, got {a.shape} and {b.shape}")
    cfg = GemmConfig(get_format(fmt), SplitMode(mode), get_format(accum))
    out = gemm(a[None, None, :], b[None, :, None], cfg)[0, 0, 0]
    return complex(out) if np.iscomplexobj(out) else float(out)


def mac_dot_batch(a: np.ndarray, b: np.ndarray, cfg: GemmConfig) -> np.ndarray:
    """Row-wise dot products ``sum(a[t] * b[t])`` for a stack of vectors."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("mac_dot_batch needs two equal (trials, length) arrays")
    return gemm(a[:, None, :], b[:, :, None], cfg)[:, 0, 0]


# ---------------------------------------------------------------------------
# schedules


@dataclass
class PrecisionSchedule:
    """Per-step precision assignment for a contraction tree.

    Steps are identified by their position in the tree's post-order step
    list.  ``replaced_tcc_ratio`` is filled in by :func:`schedule_from_topk`.
    """

    default: Setting = field(default_factory=lambda: Setting(FP64))
    overrides: dict[int, Setting] = field(default_factory=dict)
    accum: FormatSpec = FP32
    rescale: bool = False
    replaced_tcc_ratio: float | None = None

    @classmethod
    def uniform(cls, fmt: FormatSpec | str, mode: SplitMode | int = SplitMode.SINGLE,
                accum: FormatSpec | str | None = None, rescale: bool = False) -> "PrecisionSchedule":
        fmt = get_format(fmt)
        if accum is None:
            accum = FP64 if fmt == FP64 else FP32
        return cls(Setting(fmt, SplitMode(mode)), {}, get_format(accum), rescale)

    def setting_for(self, step: int) -> Setting:
        return self.overrides.get(step, self.default)

    def config_for(self, step: int) -> GemmConfig:
        s = self.setting_for(step)
        return GemmConfig(s.fmt, s.mode, self.accum, self.rescale)

    def to_json(self) -> dict:
        d = {
            "default": self.default.to_dict(),
            "accum": self.accum.name.lower(),
            "overrides": [{"step": step, **s.to_dict()} for step, s in sorted(self.overrides.items())],
        }
        if self.rescale:
            d["rescale"] = True
        if self.replaced_tcc_ratio is not None:
            d["replaced_tcc_ratio"] = self.replaced_tcc_ratio
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "PrecisionSchedule":
        overrides = {int(o["step"]): Setting.from_dict(o) for o in d.get("overrides", [])}
        return cls(
            Setting.from_dict(d["default"]),
            overrides,
            get_format(d.get("accum", "fp32")),
            bool(d.get("rescale", False)),
            d.get("replaced_tcc_ratio"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def schedule_from_topk(tree, k: int, low: Setting, high: Setting,
                       accum: FormatSpec = FP32, rescale: bool = False) -> PrecisionSchedule:
    """Put the ``k`` most expensive steps (by T_cc) on ``low``, the rest on ``high``."""
    step_costs = tree.step_costs()
    if k < 0 or k > len(step_costs):
        raise ValueError(f"k={k} outside [0, {len(step_costs)}]")
    ranked = sorted(range(len(step_costs)), key=lambda i: (-step_costs[i], i))
    chosen = ranked[:k]
    total = sum(step_costs)
    replaced = sum(step_costs[i] for i in chosen)
    ratio = replaced / total if total else 0.0
    return PrecisionSchedule(high, {i: low for i in chosen}, accum, rescale, ratio)


def relative_errors(computed: np.ndarray, exact: np.ndarray) -> np.ndarray:
    """Elementwise relative error, with non-finite results counted as infinite."""
    computed = np.asarray(computed)
    exact = np.asarray(exact)
    with np.errstate(invalid="ignore", divide="ignore"):
        err = np.abs(computed - exact) / np.abs(exact)
    return np.where(np.isfinite(computed), err, np.inf)


def exact_dots(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Correctly rounded row-wise dots of FP32-representable inputs.

    Products of two FP32 values are exact in float64; ``math.fsum`` then
    rounds the sum once.
    """
    prods = np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)
    return np.array([math.fsum(row) for row in prods])


BENCH_METHODS: dict[str, GemmConfig] = {
    "FP32": GemmConfig(FP32, SplitMode.SINGLE, FP32),
    "1xTF32": GemmConfig(TF32, SplitMode.SINGLE, FP32),
    "3xBF16": GemmConfig(BF16, SplitMode.TRIPLE, FP32),
    "3xTF32": GemmConfig(TF32, SplitMode.TRIPLE, FP32),
    "3xFP16": GemmConfig(FP16, SplitMode.TRIPLE, FP32),
}


def log_uniform_fp32(rng: np.random.Generator, shape, lo: float, hi: float) -> np.ndarray:
    """Log-uniform samples in ``[lo, hi]``, rounded to FP32."""
    x = np.exp(rng.uniform(math.log(lo), math.log(hi), size=shape))
    return x.astype(np.float32).astype(np.float64)


def dot_error_study(trials: int, length: int, lo: float = 1e-7, hi: float = 1e3,
                    methods: Iterable[str] | None = None, seed: int = 0,
                    chunk: int = 2_000) -> dict[str, np.ndarray]:
    """Relative errors of each method's dot product against the exact dot.

    Returns ``{method: errors}`` with one entry per trial.
    """
    names = list(methods) if methods is not None else list(BENCH_METHODS)
    rng = np.random.default_rng(seed)
    errs: dict[str, list[np.ndarray]] = {name: [] for name in names}
    done = 0
    while done < trials:
        t = min(chunk, trials - done)
        a = log_uniform_fp32(rng, (t, length), lo, hi)
        b = log_uniform_fp32(rng, (t, length), lo, hi)
        exact = exact_dots(a, b)
        for name in names:
            errs[name].append(relative_errors(mac_dot_batch(a, b, BENCH_METHODS[name]), exact))
        done += t
    return {name: np.concatenate(v) for name, v in errs.items()}
