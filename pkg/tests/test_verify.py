import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from tenkontract.verify import (
    AmplitudeSet,
    VerifyError,
    fl_error,
    histogram_logdp,
    lxeb,
    lxeb_standard_error,
    porter_thomas_cdf,
    porter_thomas_pdf,
    squared_l2,
    squared_l2_error,
    verify,
)

H = 1 / math.sqrt(2)


def test_lxeb_uniform_is_zero():
    assert lxeb(AmplitudeSet(1, ("0", "1"), [H, H])) == pytest.approx(0.0, abs=1e-15)


def test_lxeb_certain_is_one():
    assert lxeb(AmplitudeSet(1, ("0",), [1.0])) == 1.0


def test_lxeb_counts_repeats():
    amps = AmplitudeSet(2, ("00", "00", "11"), [0.8, 0.8, 0.1])
    assert lxeb(amps) == pytest.approx(4 * (0.64 + 0.64 + 0.01) / 3 - 1)


@given(st.lists(st.complex_numbers(max_magnitude=1, allow_nan=False), min_size=1, max_size=30))
def test_lxeb_is_scaled_l2(values):
    n = 5
    bits = tuple(format(i % 32, "05b") for i in range(len(values)))
    amps = AmplitudeSet(n, bits, values)
    assert lxeb(amps) == 2 ** n * squared_l2(amps) / amps.m - 1


def test_l2_error_examples():
    a = AmplitudeSet(1, ("0", "1"), [math.sqrt(2), math.sqrt(2)])
    b = AmplitudeSet(1, ("0", "1"), [math.sqrt(2.2), math.sqrt(2.2)])
    assert squared_l2_error(a, a) == 0
    assert squared_l2_error(a, b) == pytest.approx(0.1)


def test_l2_error_different_keys():
    with pytest.raises(VerifyError):
        squared_l2_error(AmplitudeSet(1, ("0",), [1]), AmplitudeSet(1, ("1",), [1]))


def test_fl_error_examples():
    assert fl_error(1e-4, 0.01) == pytest.approx(1.01e-2)
    assert fl_error(0.0, 0.3) == 0.0
    assert fl_error(1e-3, 1e9) == pytest.approx(1e-3)
    assert fl_error(1e-3, 0.0) is None
    assert fl_error(1e-3, -0.1) is None


@pytest.mark.parametrize("x, fl, want", [(0, 0, math.exp(-1)), (0, 1, math.exp(-1)), (1, 1, math.exp(2 - math.e))])
def test_pdf_values(x, fl, want):
    assert porter_thomas_pdf(x, fl) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("fl", [0.0, 0.25, 0.5, 1.0])
def test_pdf_normalised(fl):
    total, _ = integrate.quad(lambda x: porter_thomas_pdf(x, fl), -60, 5, limit=200)
    assert abs(total - 1) < 1e-8


@pytest.mark.parametrize("fl", [0.0, 0.5, 1.0])
def test_cdf_is_pdf_integral(fl):
    for x in (-3.0, 0.0, 1.5):
        got, _ = integrate.quad(lambda t: porter_thomas_pdf(t, fl), -60, x, limit=200)
        assert porter_thomas_cdf(x, fl) == pytest.approx(got, abs=1e-10)


def test_histogram_single_sample():
    h = histogram_logdp(AmplitudeSet(2, ("01",), [0.5]))
    assert h.mass.sum() == 1.0
    assert np.count_nonzero(h.mass) == 1


def test_histogram_excludes_zeros():
    amps = AmplitudeSet(2, ("00", "01", "10"), [0.5, 0.0, 0.5])
    h = histogram_logdp(amps)
    assert h.excluded == 1
    assert abs(h.mass.sum() - 1) < 1e-12
    with pytest.raises(VerifyError):
        histogram_logdp(AmplitudeSet(1, ("0",), [0.0]))


def test_histogram_uniform_matches_theory():
    # amplitudes of a random Gaussian state follow Porter-Thomas
    rng = np.random.default_rng(0)
    n = 14
    psi = rng.normal(size=2 ** n) + 1j * rng.normal(size=2 ** n)
    psi /= np.linalg.norm(psi)
    idx = rng.integers(0, 2 ** n, size=20_000)
    amps = AmplitudeSet(n, tuple(format(i, f"0{n}b") for i in idx), psi[idx])
    h = histogram_logdp(amps, fl=0.0)
    assert h.ks < 0.02
    assert np.abs(h.mass - h.theory).max() < 0.01
    assert abs(h.theory.sum() - 1) < 1e-12


def test_text_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    amps = AmplitudeSet(3, ("000", "101", "101"), rng.normal(size=3) + 1j * rng.normal(size=3))
    p = tmp_path / "a.txt"
    amps.save(p)
    again = AmplitudeSet.load(p)
    assert again.bitstrings == amps.bitstrings
    assert np.array_equal(again.amplitudes, amps.amplitudes)


@pytest.mark.parametrize("text", ["", "01 1.0\n", "0x 1 2\n", "01 a 2\n"])
def test_text_errors(text):
    with pytest.raises(VerifyError):
        AmplitudeSet.from_text(text)


def test_set_validation():
    with pytest.raises(VerifyError):
        AmplitudeSet(2, ("0",), [1.0])
    with pytest.raises(VerifyError):
        AmplitudeSet(1, ("0", "1"), [1.0])


def test_expand_restores_multiplicity():
    unique = AmplitudeSet(2, ("00", "11"), [0.6, 0.8])
    full = unique.expand(["11", "00", "11"])
    assert full.m == 3 and full.amplitudes.tolist() == [0.8, 0.6, 0.8]
    with pytest.raises(VerifyError):
        unique.expand(["01"])


def test_report_json_and_csv():
    ref = AmplitudeSet(2, ("00", "01", "11"), [0.6, 0.5, 0.4])
    test = AmplitudeSet(2, ("00", "01", "11"), [0.6, 0.5, 0.41])
    rep = verify(test, ref)
    d = json.loads(rep.dumps())
    assert {"F_l", "eps_l2sq", "eps_Fl", "histogram"} <= set(d)
    assert d["eps_l2sq"] == pytest.approx(squared_l2_error(ref, test))
    assert {"x_lo", "x_hi", "mass", "theory"} == set(d["histogram"][0])
    assert abs(sum(r["mass"] for r in d["histogram"]) - 1) < 1e-12
    lines = rep.to_csv().splitlines()
    assert lines[0] == "x_lo,x_hi,mass,theory" and len(lines) == 51


def test_stderr():
    amps = AmplitudeSet(1, ("0", "1", "0"), [1.0, 0.0, 1.0])
    dp = np.array([2.0, 0.0, 2.0])
    assert lxeb_standard_error(amps) == pytest.approx(dp.std(ddof=1) / math.sqrt(3))
    assert lxeb_standard_error(AmplitudeSet(1, ("0",), [1.0])) == math.inf


def test_histogram_theory_nonnegative_when_estimate_exceeds_one():
    rng = np.random.default_rng(3)
    p = rng.exponential(size=400) / 2 ** 10
    amps = AmplitudeSet(10, [format(i, "010b") for i in range(400)], np.sqrt(p).astype(complex))
    h = histogram_logdp(amps, fl=1.3)
    assert (h.theory >= 0).all()
    assert h.theory.sum() == pytest.approx(1.0)
