"""Distributed linear transmission with an MMSE receiver."""

from __future__ import annotations

import numpy as np


def encode_linear(x, P: float, sigma_x2: float = 1.0):
    if P <= 0:
        raise ValueError("power must be positive")
    return np.asarray(x, dtype=float) * np.sqrt(P / sigma_x2)


def wiener_coefficient(M: int, P: float, rho_x: float, sigma_x2: float, sigma_n2: float) -> float:
    """``E[x_m z] / E[z^2]`` for the sum of the scaled sources plus noise."""
    num = np.sqrt(P * sigma_x2) * (1.0 + (M - 1) * rho_x)
    den = P * (M * M * rho_x + M * (1.0 - rho_x)) + sigma_n2
    return float(num / den)


def decode_mmse_linear(z, M: int, P: float, rho_x: float, sigma_x2: float = 1.0, sigma_n2: float = 1.0):
    """Estimate every source from the channel output.

    All sources share the same estimate, so the result has shape
    ``z.shape + (M,)``.
    """
    c = wiener_coefficient(M, P, rho_x, sigma_x2, sigma_n2)
    xh = c * np.asarray(z, dtype=float)
    return np.repeat(xh[..., None], M, axis=-1)


def distortion_uncoded(M: int, snr: float, rho_x: float, sigma_x2: float = 1.0) -> float:
    if snr < 0:
        raise ValueError("snr must be non-negative")
    u = 1.0 + (M - 1) * rho_x
    return float(sigma_x2 * (1.0 - snr * u**2 / (snr * (M * M * rho_x + M * (1.0 - rho_x)) + 1.0)))


def simulate_uncoded(x: np.ndarray, P: float, rho_x: float, sigma_x2: float, sigma_n2: float,
                     noise: np.ndarray) -> np.ndarray:
    """Run encode, GMAC sum and MMSE decode on a batch ``x`` of shape ``(n, M)``."""
    M = x.shape[1]
    z = encode_linear(x, P, sigma_x2).sum(axis=1) + noise
    return decode_mmse_linear(z, M, P, rho_x, sigma_x2, sigma_n2)
