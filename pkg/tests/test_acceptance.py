"""Acceptance criteria, one test each; a pass/fail line per criterion is printed at the end of the run."""

import time

import numpy as np
import pytest
from scipy.integrate import simpson

from conftest import ACCEPTANCE_LINES, RHO0_GRID, bin_deviations, pdf_draws
from dqlc import analysis, bounds, codec, harness, uncoded
from dqlc.codec import DqlcParams
from dqlc.gauss import (
    PartitionedGaussian,
    SourceModel,
    conditional_moments,
    covariance,
    last_source_partition,
    make_rng,
    sample,
    sigma_aa_b_closed_form,
)

pytestmark = pytest.mark.acceptance


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def test_criterion_01_bound_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for M in (2, 3, 5):
        for rho in (0.0, 0.3, 0.7, 0.9, 0.95):
            for snr_db in range(0, 52, 2):
                snr = bounds.from_db(snr_db)
                closed = bounds.distortion_lower_bound(M, snr, rho).D_lb
                oracle = bounds.waterfill_oracle(M, snr, rho).D_star
                worst = max(worst, abs(oracle / closed - 1))
    secs = time.perf_counter() - t0
    record(1, worst < 1e-8 and secs < 5, f"max rel diff {worst:.2e}, {secs:.2f} s")


def test_criterion_02_linear_regime():
    worst = 0.0
    for M in (2, 3, 4, 5, 8):
        for rho in (0.0, 0.2, 0.5, 0.8, 0.95, 0.99, 1.0):
            thr = bounds.waterfill_threshold_snr(M, rho)
            for frac in np.linspace(0.0, 1.0, 11):
                snr = frac * min(thr, 1e4)
                d = uncoded.distortion_uncoded(M, snr, rho)
                b = bounds.distortion_lower_bound(M, snr, rho).D_lb
                worst = max(worst, abs(d / b - 1))
    record(2, worst <= 1e-12, f"max rel diff {worst:.2e} below threshold")


def test_criterion_03_uncoded_simulation():
    t0 = time.perf_counter()
    worst = 0.0
    points = [(rho, s) for rho in (0.0, 0.5, 0.9) for s in (0.0, 10.0, 20.0, 30.0)]
    for i, (rho, s) in enumerate(points):
        r = harness.simulate_uncoded(3, rho, s, 10**6, harness._point_seed(31, i))
        exact = float(bounds.to_db(1 / uncoded.distortion_uncoded(3, bounds.from_db(s), rho)))
        worst = max(worst, abs(r.sdr_db - exact))
    secs = time.perf_counter() - t0
    record(3, worst <= 0.05 and secs < 30, f"{len(points)} points, max |dB diff| {worst:.4f}, {secs:.1f} s")


def test_criterion_04_loss_constants():
    got = (analysis.loss_constant(10**4, 16.0), analysis.loss_constant(10**4, 32.0),
           analysis.loss_constant(2, 16.0))
    db = [-float(bounds.to_db(k)) for k in got]
    ok = (abs(db[0] - 7.2) <= 0.15 and abs(db[1] - 10.2) <= 0.15 and abs(db[2] - 3.63) <= 0.005)
    record(4, ok, f"losses {db[0]:.2f}, {db[1]:.2f}, {db[2]:.2f} dB")


def test_criterion_05_gap_rho0(chain_rho0):
    gaps = {s: bounds.sdr_upper_bound_db(3, bounds.from_db(s), 0.0) - chain_rho0.sim_db(s) for s in RHO0_GRID}
    ok = all(1.5 <= g <= 4.5 for g in gaps.values()) and chain_rho0.seconds < 300
    detail = ", ".join(f"{s:g} dB: {g:.2f}" for s, g in gaps.items())
    record(5, ok, f"gaps {detail}; {chain_rho0.seconds:.0f} s")


def test_criterion_06_gap_rho95(chain_rho95):
    gaps = {s: bounds.sdr_upper_bound_db(3, bounds.from_db(s), 0.95) - chain_rho95.sim_db(s)
            for s in (20.0, 30.0, 40.0)}
    detail = ", ".join(f"{s:g} dB: {g:.2f}" for s, g in gaps.items())
    record(6, all(g <= 8.0 for g in gaps.values()), f"gaps {detail}")


def _crossover(chain):
    for s in sorted(chain.sim):
        unc = float(bounds.to_db(1 / uncoded.distortion_uncoded(3, bounds.from_db(s), chain.rho)))
        if chain.sim_db(s) > unc:
            return s
    return None


def test_criterion_07_crossover(chain_rho0, chain_rho95):
    beats = all(chain_rho0.sim_db(s) > float(bounds.to_db(1 / uncoded.distortion_uncoded(3, bounds.from_db(s), 0.0)))
                for s in RHO0_GRID if s >= 10)
    cross = _crossover(chain_rho95)
    ok = beats and cross is not None and 20 <= cross <= 35
    record(7, ok, f"rho=0 beats uncoded from 10 dB: {beats}; rho=0.95 crossover at {cross} dB")


def test_criterion_08_analytic_vs_sim(chain_rho0, chain_rho95):
    diffs = [abs(chain_rho0.analytic_db(s) - chain_rho0.sim_db(s)) for s in RHO0_GRID]
    diffs += [abs(chain_rho95.analytic_db(s) - chain_rho95.sim_db(s)) for s in (20.0, 30.0, 40.0)]
    record(8, max(diffs) <= 0.5, f"max |analytic - sim| {max(diffs):.3f} dB over {len(diffs)} points")


def _mass(pdf, lo, hi):
    z = np.linspace(lo, hi, 400001)
    return float(simpson(pdf(z), x=z))


def test_criterion_09_pdfs(clipped_config, gaussian_config):
    # 200 bins against a 3 SE band: even exact densities exceed it somewhere in about 40% of seeds
    worst_dev, worst_mass = 0.0, 0.0
    for (params, model, sn2), seed in ((clipped_config, 91), (gaussian_config, 92)):
        z, r = pdf_draws(params, model, sn2, seed)
        out = lambda q: codec.channel_output_pdf(q, params, model, sn2)
        if model.rho_x == 0:
            res = lambda q: codec.residual_pdf_clipped(q, 0.0, params, model.sigma_x2, sn2)
        else:
            res = lambda q: codec.residual_pdf_gaussian(q, 0.0, params, model, sn2)
        worst_dev = max(worst_dev, np.abs(bin_deviations(z, out)).max(), np.abs(bin_deviations(r, res)).max())
        span = 1.2 * (np.abs(z).max() + 1)
        worst_mass = max(worst_mass, abs(_mass(out, -span, span) - 1), abs(_mass(res, -span, span) - 1))
    ok = worst_mass <= 1e-6 and worst_dev <= 3.0
    record(9, ok, f"max |mass - 1| {worst_mass:.1e}, worst bin {worst_dev:.2f} SE (50 bins, 1e7 draws)")


def test_criterion_10_conditional_moments():
    rng = np.random.default_rng(10)
    n = 10**6
    worst = 0.0
    for _ in range(5):
        M = int(rng.integers(2, 7))
        rho = float(rng.uniform(0.0, 0.98))
        perm = rng.permutation(M)
        k = int(rng.integers(1, M))
        a, b = tuple(perm[:k]), tuple(perm[k:])
        model = SourceModel.from_correlation(M, rho, float(rng.uniform(0.5, 2.0)))
        pg = PartitionedGaussian(np.zeros(M), covariance(model), a=a, b=b)
        x = sample(model, n, rng=make_rng(1000 + M, k))
        mean, cov = conditional_moments(pg, x[:, list(b)])
        # the conditional law is that of the regression residual, independent of the observation
        e = x[:, list(a)] - mean
        checks = [(e, np.zeros(len(a)))]
        prod = (e[:, :, None] * e[:, None, :]).reshape(n, -1)
        checks.append((prod, cov.reshape(-1)))
        cross = (e[:, :, None] * x[:, list(b)][:, None, :]).reshape(n, -1)
        checks.append((cross, np.zeros(cross.shape[1])))
        for v, target in checks:
            se = v.std(axis=0) / np.sqrt(n)
            worst = max(worst, float(np.max(np.abs(v.mean(axis=0) - target) / se)))
    closed = 0.0
    for M in (2, 3, 5):
        for rho in (0.0, 0.4, 0.95):
            model = SourceModel.from_correlation(M, rho)
            alpha = np.linspace(1.0, 0.3, M)
            _, cov = conditional_moments(last_source_partition(model, alpha), np.zeros(M - 1))
            closed = max(closed, abs(cov[0, 0] - sigma_aa_b_closed_form(model, alpha[-1])))
    record(10, worst <= 3.0 and closed <= 1e-10,
           f"worst statistic {worst:.2f} SE over 5 configurations, closed form diff {closed:.1e}")


def test_criterion_11_degenerate_schedule():
    # the bounded quantizer spans +-10 sigma_x, like the analog clip
    params = DqlcParams(M=3, delta=(1e-3, 1e-3), nq=(20000,), alpha=(1.0, 1.0, 1.0), kappa_M=10.0, xi=1.0)
    diffs = {}
    for i, s in enumerate((10.0, 20.0, 30.0)):
        r = harness.simulate_dqlc(params, 0.999, s, 10**6, harness._point_seed(111, i))
        unc = float(bounds.to_db(1 / uncoded.distortion_uncoded(3, bounds.from_db(s), 0.999)))
        diffs[s] = r.sdr_db - unc
    detail = ", ".join(f"{s:g} dB: {d:+.3f}" for s, d in diffs.items())
    record(11, all(abs(d) <= 0.5 for d in diffs.values()), f"DQLC minus uncoded {detail}")


def test_criterion_12_loss_vs_M():
    levels = (0.0, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99)
    rows = analysis.loss_vs_M_curve(bounds.from_db(100.0), levels, range(1, 41))
    cross = {rho: analysis.loss_crossover(rows, rho) for rho in levels}
    detail = ", ".join(f"rho={rho:g}: {m}" for rho, m in cross.items())
    m = cross[0.95]
    record(12, m is not None and 7 <= m <= 13, f"crossover M at rho=0.95 is {m} ({detail})")
