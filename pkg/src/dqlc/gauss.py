"""Symmetric multivariate Gaussian source.

Every source is ``x_m = s + w_m`` with a common component ``s`` and
independent individual components ``w_m`` of equal variance, so the
covariance has ``sigma_x2`` on the diagonal and ``sigma_x2 * rho_x``
everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RNG_ALGORITHM = "numpy.random.Philox (Philox4x64-10, counter-based)"


def make_rng(seed, *stream) -> np.random.Generator:
    """Counter-based generator for ``seed`` and an optional stream key.

    Streams with different keys are statistically independent, so callers
    that run grid points in parallel pass the point index as the key.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SourceModel:
    M: int
    sigma_s2: float
    sigma_w2: float
    sigma_x2: float = field(init=False)
    rho_x: float = field(init=False)

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        if self.sigma_s2 < 0 or self.sigma_w2 < 0:
            raise ValueError("component variances must be non-negative")
        if self.sigma_s2 + self.sigma_w2 <= 0:
            raise ValueError("source variance must be positive")
        object.__setattr__(self, "M", int(self.M))
        sx2 = float(self.sigma_s2) + float(self.sigma_w2)
        object.__setattr__(self, "sigma_x2", sx2)
        object.__setattr__(self, "rho_x", float(self.sigma_s2) / sx2)

    @classmethod
    def from_correlation(cls, M: int, rho_x: float, sigma_x2: float = 1.0) -> "SourceModel":
        if not 0.0 <= rho_x <= 1.0:
            raise ValueError(f"rho_x must lie in [0, 1], got {rho_x}")
        if sigma_x2 <= 0:
            raise ValueError("sigma_x2 must be positive")
        return cls(M, sigma_s2=rho_x * sigma_x2, sigma_w2=(1.0 - rho_x) * sigma_x2)

    @property
    def sigma_x(self) -> float:
        return float(np.sqrt(self.sigma_x2))


@dataclass(frozen=True)
class Spectrum:
    lambda1: float
    lambda_rest: float
    M: int

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([self.lambda1] + [self.lambda_rest] * (self.M - 1))


@dataclass(frozen=True)
class PartitionedGaussian:
    """Gaussian vector split into an unobserved block ``a`` and observed ``b``."""

    mean: np.ndarray
    cov: np.ndarray
    a: tuple
    b: tuple

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        n = mean.size
        if cov.shape != (n, n):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {n}")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * scale):
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(cov)) < -1e-10 * scale:
            raise ValueError("covariance must be positive semidefinite")
        a, b = tuple(int(i) for i in self.a), tuple(int(i) for i in self.b)
        if set(a) & set(b) or not set(a) | set(b) <= set(range(n)) or not a:
            raise ValueError("a and b must be disjoint, non-empty index sets within the vector")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def blocks(self):
        a, b, S = list(self.a), list(self.b), self.cov
        return S[np.ix_(a, a)], S[np.ix_(a, b)], S[np.ix_(b, a)], S[np.ix_(b, b)]


def covariance(model: SourceModel) -> np.ndarray:
    M, sx2, rho = model.M, model.sigma_x2, model.rho_x
    K = np.full((M, M), sx2 * rho)
    np.fill_diagonal(K, sx2)
    return K


def spectrum(model: SourceModel) -> Spectrum:
    sx2, rho, M = model.sigma_x2, model.rho_x, model.M
    return Spectrum(lambda1=sx2 * ((M - 1) * rho + 1.0), lambda_rest=sx2 * (1.0 - rho), M=M)


def sample(model: SourceModel, n: int, seed=0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ``n`` source vectors as an ``(n, M)`` array via ``x_m = s + w_m``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if rng is None:
        rng = make_rng(seed)
    s = rng.standard_normal(n) * np.sqrt(model.sigma_s2)
    w = rng.standard_normal((n, model.M)) * np.sqrt(model.sigma_w2)
    return s[:, None] + w


def pinv_psd(S: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Pseudoinverse of a symmetric PSD matrix, dropping eigenvalues below ``rtol * max``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape == (1, 1):
        return np.array([[1.0 / S[0, 0]]]) if S[0, 0] > 0 else np.zeros((1, 1))
    w, V = np.linalg.eigh(S)
    cut = rtol * max(float(w.max()), 0.0)
    inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
    return (V * inv) @ V.T


def conditional_moments(pg: PartitionedGaussian, y_b) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``y_a`` given ``y_b``.

    ``y_b`` may also be an array of shape ``(n, len(b))``; the mean is then
    returned with shape ``(n, len(a))`` while the covariance is shared.
    """
    Saa, Sab, Sba, Sbb = pg.blocks
    gain = Sab @ pinv_psd(Sbb)
    m_a, m_b = pg.mean[list(pg.a)], pg.mean[list(pg.b)]
    y_b = np.asarray(y_b, dtype=float)
    single = y_b.ndim <= 1
    yb = np.atleast_2d(y_b.reshape(-1, len(pg.b)) if not single else y_b.reshape(1, -1))
    mean = m_a + (yb - m_b) @ gain.T
    cov = Saa - gain @ Sba
    cov = 0.5 * (cov + cov.T)
    return (mean[0] if single else mean), cov


def scaled_source_gaussian(model: SourceModel, gains) -> np.ndarray:
    """Covariance of ``diag(gains) @ x`` for the source model."""
    g = np.asarray(gains, dtype=float)
    return covariance(model) * np.outer(g, g)


def last_source_partition(model: SourceModel, alpha) -> PartitionedGaussian:
    """Split ``[x_1, a_2 x_2, ..., a_M x_M]`` into ``a = {a_M x_M}`` and the rest."""
    gains = np.concatenate([[1.0], np.asarray(alpha, dtype=float).reshape(-1)[1:]])
    if gains.size != model.M:
        raise ValueError("alpha must hold one gain per source")
    M = model.M
    return PartitionedGaussian(
        mean=np.zeros(M), cov=scaled_source_gaussian(model, gains), a=(M - 1,), b=tuple(range(M - 1))
    )


def sigma_aa_b_closed_form(model: SourceModel, alpha_M: float) -> float:
    """Residual variance of ``alpha_M x_M`` given all other sources."""
    M, rho = model.M, model.rho_x
    if M == 1:
        return model.sigma_x2 * alpha_M**2
    return model.sigma_x2 * alpha_M**2 * (1.0 - (M - 1) * rho**2 / (1.0 + (M - 2) * rho))
