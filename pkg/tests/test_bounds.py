import numpy as np
import pytest

from dqlc import bounds
from dqlc.gauss import SourceModel, spectrum


def _spec(M, rho, sx2=1.0):
    return spectrum(SourceModel.from_correlation(M, rho, sx2))


def test_rd_waterfill_examples():
    s = bounds.rd_waterfill(_spec(3, 0.0), 1.0)
    assert (s.D_star, s.R_star) == (1.0, 0.0)
    s = bounds.rd_waterfill(_spec(3, 0.95), 0.05)
    assert s.D_star == pytest.approx(0.05, rel=1e-12)
    assert s.R_star == pytest.approx(0.5 * np.log2(2.9 / 0.05) / 3, rel=1e-12)
    s = bounds.rd_waterfill(_spec(2, 0.0), 0.25)
    assert (s.D_star, s.R_star) == (pytest.approx(0.25), pytest.approx(1.0))
    with pytest.raises(ValueError):
        bounds.rd_waterfill(_spec(2, 0.0), 0.0)


def test_rd_waterfill_monotone():
    sp = _spec(4, 0.7)
    th = np.geomspace(1e-4, 3.0, 50)
    sols = [bounds.rd_waterfill(sp, t) for t in th]
    assert np.all(np.diff([s.D_star for s in sols]) >= 0)
    assert np.all(np.diff([s.R_star for s in sols]) <= 0)


def test_mac_capacity_examples():
    assert bounds.mac_capacity(3, 1.0, 0.0) == pytest.approx(1 / 3)
    assert bounds.mac_capacity(1, 7.0, 0.4) == pytest.approx(0.5 * np.log2(8.0))
    assert bounds.mac_capacity(2, 1.0, 1.0) == pytest.approx(0.25 * np.log2(5.0))
    assert bounds.mac_capacity(2, 1.0, 1.0) == pytest.approx(0.5805, abs=1e-4)


def test_power_for_theta_examples():
    assert bounds.power_for_theta(_spec(3, 0.5), 10.0, 3, 0.5) == 0.0
    assert bounds.power_for_theta(_spec(3, 0.95), 0.05, 3, 0.95) == pytest.approx(57 / 8.7, rel=1e-12)
    assert bounds.power_for_theta(_spec(2, 0.5), 0.5, 2, 0.5) == pytest.approx(2 / 3, rel=1e-12)


def test_threshold_reduces_to_two_source_form():
    for rho in (0.1, 0.5, 0.9):
        assert bounds.waterfill_threshold_snr(2, rho) == pytest.approx(bounds.paper_threshold_snr(rho))
    assert bounds.waterfill_threshold_snr(3, 0.95) == pytest.approx(57 / 8.7)
    assert bounds.waterfill_threshold_snr(3, 1.0) == np.inf


def test_lower_bound_examples():
    b = bounds.distortion_lower_bound(3, 100.0, 0.0)
    assert b.D_lb == pytest.approx(301 ** (-1 / 3), rel=1e-12)
    assert b.sdr_db == pytest.approx(8.26, abs=0.01)
    assert b.regime == bounds.WATERFILL
    thr = 57 / 8.7
    assert bounds._linear_branch(3, thr, 0.95, 1.0) == pytest.approx(0.05, rel=1e-10)
    assert bounds._waterfill_branch(3, thr, 0.95, 1.0) == pytest.approx(0.05, rel=1e-10)
    assert bounds.waterfill_oracle(3, thr, 0.95).D_star == pytest.approx(0.05, rel=1e-8)
    for snr in (0.1, 10.0, 1e4):
        b = bounds.distortion_lower_bound(3, snr, 1.0, 2.0)
        assert b.regime == bounds.LINEAR
        assert b.D_lb == pytest.approx(2.0 / (9 * snr + 1), rel=1e-12)


@pytest.mark.parametrize("M", [2, 3, 4, 5, 7])
@pytest.mark.parametrize("rho", [0.0, 0.2, 0.5, 0.8, 0.95, 0.99])
def test_branch_continuity(M, rho):
    thr = bounds.power_for_theta(_spec(M, rho), 1.0 - rho, M, rho) if rho > 0 else 0.0
    assert thr == pytest.approx(bounds.waterfill_threshold_snr(M, rho), rel=1e-12, abs=1e-15)
    a = bounds._linear_branch(M, thr, rho, 1.0)
    b = bounds._waterfill_branch(M, thr, rho, 1.0)
    assert a == pytest.approx(b, rel=1e-10)


def test_lower_bound_monotone():
    snr = bounds.from_db(np.arange(-10, 60, 0.5))
    for rho in (0.0, 0.5, 0.95):
        D = [bounds.distortion_lower_bound(3, s, rho).D_lb for s in snr]
        assert np.all(np.diff(D) <= 1e-15)
        assert 0 < min(D) and max(D) <= 1.0
    for s in (10.0, 1e3):
        D = [bounds.distortion_lower_bound(3, s, r).D_lb for r in np.linspace(0, 0.99, 30)]
        assert np.all(np.diff(D) <= 1e-15)


def test_sdr_upper_bound_examples():
    assert bounds.sdr_upper_bound_db(3, 100.0, 0.0) == pytest.approx(8.26, abs=0.01)
    assert bounds.sdr_upper_bound_db(3, 1e-12, 0.0) == pytest.approx(0.0, abs=1e-9)
    expect = 10 * np.log10((87001 / (2.9 * 0.0025)) ** (1 / 3))
    assert bounds.sdr_upper_bound_db(3, 1e4, 0.95) == pytest.approx(expect, rel=1e-12)
    # the expression evaluates to 23.6 dB (a quoted 27.2 dB does not follow from it)
    assert expect == pytest.approx(23.597, abs=1e-3)


def test_high_snr_bound():
    assert bounds.high_snr_bound(3, 1e4, 0.0) == pytest.approx(31.07, abs=0.01)
    assert bounds.high_snr_bound(1, 123.0, 0.7) == pytest.approx(123.0)
    exact = 1 / bounds.distortion_lower_bound(3, 1e4, 0.0).D_lb
    assert abs(bounds.high_snr_bound(3, 1e4, 0.0) / exact - 1) < 1e-3
    for rho in (0.0, 0.5, 0.95):
        ratio = bounds.high_snr_bound(3, 1e6, rho) * bounds.distortion_lower_bound(3, 1e6, rho).D_lb
        assert abs(ratio - 1) < 1e-3
    with pytest.raises(ValueError):
        bounds.high_snr_bound(3, 1e4, 1.0)


def test_db_round_trip():
    assert bounds.to_db(bounds.from_db(13.5)) == pytest.approx(13.5)
