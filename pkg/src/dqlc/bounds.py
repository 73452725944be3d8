"""Performance limits for the correlated Gaussian source on the Gaussian MAC.

The lower bound assumes fully collaborating encoders: the rate-distortion
function of the Gaussian vector (reverse water-filling over the covariance
spectrum) is equated with the sum capacity of the MAC when the encoder
outputs share the source correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .gauss import SourceModel, Spectrum, spectrum

LINEAR = "linear-optimal"
WATERFILL = "waterfill"


@dataclass(frozen=True)
class WaterfillSolution:
    theta: float
    D_star: float
    R_star: float
    P_star: float = float("nan")


@dataclass(frozen=True)
class BoundCurve:
    snr: float
    rho_x: float
    M: int
    D_lb: float
    sdr_db: float
    regime: str
    sigma_x2: float = 1.0


def to_db(x):
    return 10.0 * np.log10(x)


def from_db(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def rd_waterfill(spec: Spectrum, theta: float) -> WaterfillSolution:
    if theta <= 0:
        raise ValueError("water level must be positive")
    lam = spec.eigenvalues
    D = float(np.mean(np.minimum(theta, lam)))
    with np.errstate(divide="ignore"):
        R = float(np.mean(np.maximum(0.0, 0.5 * np.log2(lam / theta))))
    return WaterfillSolution(theta=float(theta), D_star=D, R_star=R)


def mac_capacity(M: int, snr: float, rho_x: float) -> float:
    """Sum capacity per source symbol, in bits, with equal power and output correlation ``rho_x``."""
    if snr < 0 or not 0 <= rho_x <= 1:
        raise ValueError("need snr >= 0 and 0 <= rho_x <= 1")
    return float(np.log2(1.0 + M * snr * (1.0 + (M - 1) * rho_x)) / (2.0 * M))


def power_for_theta(spec: Spectrum, theta: float, M: int, rho_x: float, sigma_n2: float = 1.0) -> float:
    """Per-encoder power at which the MAC carries the water-filling rate for ``theta``."""
    if theta <= 0:
        raise ValueError("water level must be positive")
    prod = float(np.prod(np.maximum(spec.eigenvalues / theta, 1.0)))
    return sigma_n2 * (prod - 1.0) / (M + M * (M - 1) * rho_x)


def waterfill_threshold_snr(M: int, rho_x: float) -> float:
    """SNR at which the water level reaches the minor eigenvalues.

    Below it only the common component is represented and linear coding is
    optimal. Equal to ``rho/(1-rho^2)`` for two sources.
    """
    if rho_x >= 1.0:
        return float("inf")
    return rho_x / ((1.0 - rho_x) * (1.0 + (M - 1) * rho_x))


def paper_threshold_snr(rho_x: float) -> float:
    """The two-source threshold ``rho/(1-rho^2)``, kept for comparison."""
    if rho_x >= 1.0:
        return float("inf")
    return rho_x / (1.0 - rho_x**2)


def _linear_branch(M, snr, rho, sigma_x2):
    u = 1.0 + (M - 1) * rho
    return sigma_x2 * (1.0 - snr * u**2 / (snr * (M * M * rho + M * (1.0 - rho)) + 1.0))


def _waterfill_branch(M, snr, rho, sigma_x2):
    num = (1.0 + (M - 1) * rho) * (1.0 - rho) ** (M - 1)
    den = snr * (M + M * (M - 1) * rho) + 1.0
    return sigma_x2 * (num / den) ** (1.0 / M)


def distortion_lower_bound(M: int, snr: float, rho_x: float, sigma_x2: float = 1.0) -> BoundCurve:
    if snr < 0:
        raise ValueError("snr must be non-negative")
    if snr <= waterfill_threshold_snr(M, rho_x):
        D, regime = _linear_branch(M, snr, rho_x, sigma_x2), LINEAR
    else:
        D, regime = _waterfill_branch(M, snr, rho_x, sigma_x2), WATERFILL
    return BoundCurve(snr=float(snr), rho_x=float(rho_x), M=int(M), D_lb=float(D),
                      sdr_db=float(to_db(sigma_x2 / D)), regime=regime, sigma_x2=float(sigma_x2))


def waterfill_oracle(M: int, snr: float, rho_x: float, sigma_x2: float = 1.0,
                     rtol: float = 1e-12) -> WaterfillSolution:
    """Lower bound by bisecting the water level until the required power equals ``snr``.

    Works on ``log(theta)`` over ``[1e-15 * lambda1, lambda1]``; independent
    of the closed form in :func:`distortion_lower_bound`.
    """
    spec = spectrum(SourceModel.from_correlation(M, rho_x, sigma_x2))
    lam1 = spec.lambda1
    if snr <= 0:
        sol = rd_waterfill(spec, lam1)
        return WaterfillSolution(sol.theta, sol.D_star, sol.R_star, 0.0)

    def excess(log_theta):
        return power_for_theta(spec, float(np.exp(log_theta)), M, rho_x, 1.0) - snr

    lo, hi = np.log(1e-15 * lam1), np.log(lam1)
    if excess(lo) < 0:
        raise ValueError("snr beyond the bisection bracket")
    log_theta = bisect(excess, lo, hi, xtol=rtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    theta = float(np.exp(log_theta))
    sol = rd_waterfill(spec, theta)
    return WaterfillSolution(theta, sol.D_star, sol.R_star, power_for_theta(spec, theta, M, rho_x, 1.0))


def sdr_upper_bound_db(M: int, snr: float, rho_x: float) -> float:
    return distortion_lower_bound(M, snr, rho_x, 1.0).sdr_db


def high_snr_bound(M: int, snr: float, rho_x: float) -> float:
    """Asymptotic SDR bound (linear scale) for large SNR."""
    if rho_x >= 1.0:
        raise ValueError("the high-SNR bound is singular at rho_x = 1")
    # log domain: (1 - rho)^(M-1) underflows for many sources
    return float(np.exp((np.log(M * snr) - (M - 1) * np.log1p(-rho_x)) / M))
