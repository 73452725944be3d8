"""Distributed quantizer linear coder: encoders, GMAC, sequential decoder.

Encoders ``1..M-1`` quantize their source with a uniform quantizer limited
to ``N_q`` levels and attenuate the result by ``alpha_m``; encoder ``M``
clips its source to ``+-kappa_M`` and attenuates it.  Encoder 1 has an
unbounded quantizer, gain 1, and sees its source pre-scaled by ``xi`` so
that the power constraint is met without a constrained search.

The receiver strips the stages one by one.  At stage ``m`` the centroid
grid is stretched by ``alpha_m + rho * sum(alpha_k, k > m)`` because the
later, correlated sources shift the mean of each channel segment.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from .gauss import SourceModel, covariance, pinv_psd, sigma_aa_b_closed_form

MIDRISE = "midrise"
MIDTHREAD = "midthread"
CLIPPED = "clipped"
GAUSSIAN = "gaussian"


class ParameterError(ValueError):
    """Parameters outside the region where the scheme or its analysis is valid."""


class OverlapError(ParameterError):
    pass


@dataclass(frozen=True)
class DqlcParams:
    """Encoder and decoder parameters.

    ``delta[0]`` is the step of encoder 1 in the ``xi``-scaled domain, the
    other steps are in source units.  ``nq`` holds the level counts of
    encoders ``2..M-1``.  ``beta=None`` means the Wiener gain is used.
    """

    M: int
    delta: tuple
    nq: tuple
    alpha: tuple
    kappa_M: float
    beta: float | None = None
    xi: float = 1.0
    quantizer_style: str = MIDRISE

    def __post_init__(self):
        M = int(self.M)
        delta = tuple(float(d) for d in np.atleast_1d(self.delta))
        nq = tuple(int(n) for n in np.atleast_1d(self.nq)) if M > 2 else ()
        alpha = tuple(float(a) for a in np.atleast_1d(self.alpha))
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "nq", nq)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "kappa_M", float(self.kappa_M))
        object.__setattr__(self, "xi", float(self.xi))
        if self.beta is not None:
            object.__setattr__(self, "beta", float(self.beta))
        if M < 2:
            raise ParameterError("the scheme needs at least two sources")
        if len(delta) != M - 1 or len(nq) != M - 2 or len(alpha) != M:
            raise ParameterError(
                f"M={M} needs {M - 1} steps, {M - 2} level counts and {M} gains; "
                f"got {len(delta)}, {len(nq)}, {len(alpha)}"
            )
        if alpha[0] != 1.0:
            raise ParameterError("alpha_1 must equal 1")
        if any(a <= 0 for a in alpha) or any(alpha[i + 1] > alpha[i] for i in range(M - 1)):
            raise ParameterError("gains must satisfy 1 = alpha_1 >= alpha_2 >= ... >= alpha_M > 0")
        if any(d <= 0 for d in delta) or self.kappa_M <= 0 or self.xi <= 0:
            raise ParameterError("steps, kappa_M and xi must be positive")
        if self.beta is not None and self.beta <= 0:
            raise ParameterError("beta must be positive")
        if self.quantizer_style not in (MIDRISE, MIDTHREAD):
            raise ParameterError(f"unknown quantizer style {self.quantizer_style!r}")
        for n in nq:
            if n < 2:
                raise ParameterError("level counts must be at least 2")
            if self.quantizer_style == MIDRISE and n % 2:
                raise ParameterError("midrise level counts must be even")
            if self.quantizer_style == MIDTHREAD and not n % 2:
                raise ParameterError("midthread level counts must be odd")

    @property
    def kappa(self) -> tuple:
        """Clip levels of encoders ``2..M``; encoder 1 is unbounded."""
        return tuple(clip_level(d, n, self.quantizer_style)
                     for d, n in zip(self.delta[1:], self.nq)) + (self.kappa_M,)

    def with_wiener_beta(self, sigma_x2: float, sigma_n2: float) -> "DqlcParams":
        return replace(self, beta=wiener_beta(self.alpha[-1], sigma_x2, sigma_n2))

    def resolved_beta(self, sigma_x2: float, sigma_n2: float) -> float:
        if self.beta is not None:
            return self.beta
        return wiener_beta(self.alpha[-1], sigma_x2, sigma_n2)


def wiener_beta(alpha_M: float, sigma_x2: float, sigma_n2: float) -> float:
    return alpha_M * sigma_x2 / (alpha_M**2 * sigma_x2 + sigma_n2)


def clip_level(delta: float, nq: int, style: str = MIDRISE) -> float:
    """Magnitude of the outermost centroid."""
    return (nq - 1) * delta / 2.0


def vartheta_for_rho(rho_x: float) -> float:
    """Stretch of the segment length caused by correlation, between 1 and 2."""
    if rho_x <= 0.3:
        return 1.0
    if rho_x >= 0.7:
        return 2.0
    return 1.0 + (rho_x - 0.3) / 0.4


# quantizers ---------------------------------------------------------------

def quantize(x, delta: float, nq: int | None = None, style: str = MIDRISE):
    """Nearest centroid of a uniform quantizer, saturating at the outer levels.

    Midrise centroids sit at ``(i - 1/2) * delta``, midthread ones at
    ``i * delta``.  ``nq=None`` gives an unbounded quantizer.  Points exactly
    between two centroids go to the one with the smaller magnitude.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.asarray(x, dtype=float)
    mag = np.abs(x) / delta
    sign = np.where(x < 0, -1.0, 1.0)
    if style == MIDRISE:
        idx = np.maximum(np.ceil(mag), 1.0)
        if nq is not None:
            idx = np.minimum(idx, nq // 2)
        return sign * (idx - 0.5) * delta
    if style == MIDTHREAD:
        idx = np.maximum(np.ceil(mag - 0.5), 0.0)
        if nq is not None:
            idx = np.minimum(idx, (nq - 1) // 2)
        return sign * idx * delta
    raise ValueError(f"unknown quantizer style {style!r}")


def centroids(delta: float, nq: int, style: str = MIDRISE) -> np.ndarray:
    if style == MIDRISE:
        return (np.arange(nq) - (nq - 1) / 2.0) * delta
    return (np.arange(nq) - (nq - 1) // 2) * delta


def cells(delta: float, nq: int | None, style: str = MIDRISE, span: float | None = None):
    """Centroids with their cell edges ``(c, lo, hi)``; outer cells extend to infinity.

    An unbounded quantizer is truncated to centroids within ``+-span`` and
    its outer cells are then finite.
    """
    bounded = nq is not None
    if nq is None:
        if span is None:
            raise ValueError("an unbounded quantizer needs a span")
        k = int(np.ceil(span / delta)) + 1
        nq = 2 * k if style == MIDRISE else 2 * k + 1
    c = centroids(delta, nq, style)
    outer = np.inf if bounded else 0.5 * delta
    lo = np.concatenate([[c[0] - outer], 0.5 * (c[1:] + c[:-1])])
    hi = np.concatenate([0.5 * (c[1:] + c[:-1]), [c[-1] + outer]])
    return c, lo, hi


# encoders, channel, decoder ----------------------------------------------

def encode_digital(x, m: int, params: DqlcParams):
    """Output of encoder ``m`` (1-based, ``m < M``)."""
    if not 1 <= m <= params.M - 1:
        raise ValueError(f"digital encoders are 1..{params.M - 1}")
    style = params.quantizer_style
    x = np.asarray(x, dtype=float)
    if m == 1:
        return quantize(params.xi * x, params.delta[0], None, style)
    return params.alpha[m - 1] * quantize(x, params.delta[m - 1], params.nq[m - 2], style)


def encode_analog(x, params: DqlcParams):
    k = params.kappa_M
    return params.alpha[-1] * np.clip(np.asarray(x, dtype=float), -k, k)


def encode(x, params: DqlcParams) -> np.ndarray:
    """All encoder outputs for a batch of shape ``(n, M)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.M:
        raise ValueError(f"expected {params.M} sources per row, got {x.shape[1]}")
    y = np.empty_like(x)
    for m in range(1, params.M):
        y[:, m - 1] = encode_digital(x[:, m - 1], m, params)
    y[:, -1] = encode_analog(x[:, -1], params)
    return y


def channel(y, sigma_n2: float = 0.0, noise=None, rng: np.random.Generator | None = None):
    """GMAC output: the sum over encoders (last axis) plus Gaussian noise."""
    z = np.sum(np.asarray(y, dtype=float), axis=-1)
    if noise is None:
        if sigma_n2 > 0:
            if rng is None:
                raise ValueError("noise variance given without noise samples or a generator")
            noise = rng.standard_normal(z.shape) * np.sqrt(sigma_n2)
        else:
            noise = 0.0
    return z + noise


def segment_length(rho_x: float, sigma_x2: float = 1.0, b: float = 4.0, vartheta: float | None = None) -> float:
    """Channel-free extent ``2 b sqrt(vartheta lambda)`` of a source given the earlier ones."""
    if b <= 0:
        raise ValueError("b must be positive")
    th = vartheta_for_rho(rho_x) if vartheta is None else float(vartheta)
    return float(2.0 * b * np.sqrt(th * sigma_x2 * (1.0 - rho_x)))


def stage_regimes(params: DqlcParams, rho_x: float, sigma_x2: float = 1.0, b: float = 4.0,
                  vartheta: float | None = None) -> tuple:
    """Regime of the segments of encoders ``2..M``.

    ``"clipped"`` when the encoder saturates inside the segment length, so
    its output range no longer follows the earlier sources.
    """
    l_len = segment_length(rho_x, sigma_x2, b, vartheta)
    return tuple(CLIPPED if l_len > 2.0 * k else GAUSSIAN for k in params.kappa)


def decision_scales(params: DqlcParams, rho_x: float, regimes=None) -> np.ndarray:
    """Centroid stretch of every digital stage as seen in the channel.

    Later encoders shift the segment of stage ``m`` by ``rho`` times their
    gain.  With ``regimes`` given, saturating (clipped) encoders are left
    out, since their output range does not move with the earlier sources.
    """
    a = np.asarray(params.alpha, dtype=float)
    if regimes is None:
        follow = np.ones(params.M)
    else:
        follow = np.concatenate([[0.0], [1.0 if r == GAUSSIAN else 0.0 for r in regimes]])
    s = np.array([a[m] + rho_x * (a[m + 1:] * follow[m + 1:]).sum() for m in range(params.M - 1)])
    s[0] = 1.0 + rho_x * (a[1:] * follow[1:]).sum() / params.xi
    return s


def decode_sequential(z, params: DqlcParams, rho_x: float, beta: float | None = None, *,
                      sigma_x2: float = 1.0, b: float = 4.0, stretch: str = "regime"):
    """Stage-wise centroid decisions and the scaled analog residual.

    Returns ``(q_hat, x_hat_M)`` where ``q_hat[:, m]`` is the decided
    centroid of encoder ``m+1`` in that quantizer's own domain.
    ``stretch="uniform"`` shifts every segment by all later encoders;
    the default ``"regime"`` skips saturating ones (see
    :func:`decision_scales`).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if beta is None:
        beta = params.beta
    if beta is None:
        raise ValueError("beta must be set on the parameters or passed explicitly")
    scales = decision_scales(params, rho_x, _stretch_regimes(params, rho_x, sigma_x2, b, stretch))
    style = params.quantizer_style
    q_hat = np.empty(z.shape + (params.M - 1,))
    r = z.copy()
    for m in range(params.M - 1):
        nq = None if m == 0 else params.nq[m - 1]
        q = quantize(r / scales[m], params.delta[m], nq, style)
        q_hat[..., m] = q
        r = r - params.alpha[m] * q
    return q_hat, beta * r


def _stretch_regimes(params, rho_x, sigma_x2, b, stretch):
    if stretch == "uniform":
        return None
    if stretch != "regime":
        raise ValueError(f"unknown stretch {stretch!r}")
    return stage_regimes(params, rho_x, sigma_x2, b)


def quantization_noise_var(params: DqlcParams) -> np.ndarray:
    """Granular error variances ``step^2/12`` of encoders ``1..M-1`` in source units."""
    steps = np.array([params.delta[0] / params.xi] + list(params.delta[1:]))
    return steps**2 / 12.0


def analog_prior(params: DqlcParams, model: SourceModel) -> tuple[np.ndarray, float]:
    """Linear prior of ``x_M`` from the decoded digital estimates.

    Each estimate is modelled as its source plus an independent error of
    variance ``step^2/12``.  Returns the coefficients on the estimates and
    the variance of ``x_M`` around the prior mean.
    """
    M = params.M
    K = covariance(model)
    K[np.arange(M - 1), np.arange(M - 1)] += quantization_noise_var(params)
    cross = K[M - 1, : M - 1]
    coef = pinv_psd(K[: M - 1, : M - 1]) @ cross
    return coef, float(K[M - 1, M - 1] - coef @ cross)


def conditional_gain(params: DqlcParams, model: SourceModel, sigma_n2: float) -> float:
    _, v = analog_prior(params, model)
    a = params.alpha[-1]
    return a * v / (a * a * v + sigma_n2)


def reconstruct(q_hat, x_hat_M, params: DqlcParams, rho_x: float, *, model: SourceModel | None = None,
                sigma_n2: float | None = None, beta: float | None = None, conditional: bool = False):
    """Source estimates from the decoder output, shape ``(n, M)``.

    Digital sources are estimated by their decided centroids (encoder 1
    rescaled by ``1/xi``).  The analog source is ``beta`` times the residual.
    With ``conditional=True`` the analog residual is instead fused with the
    linear prior of ``x_M`` given the other estimates (:func:`analog_prior`);
    this reduces to the plain Wiener estimate for uncorrelated sources.
    """
    q_hat = np.atleast_2d(np.asarray(q_hat, dtype=float))
    x_hat = np.empty(q_hat.shape[:-1] + (params.M,))
    x_hat[..., 0] = q_hat[..., 0] / params.xi
    x_hat[..., 1:-1] = q_hat[..., 1:]
    x_hat[..., -1] = x_hat_M
    if not conditional:
        return x_hat
    if model is None or sigma_n2 is None:
        raise ValueError("conditional reconstruction needs the source model and noise variance")
    b = beta if beta is not None else params.resolved_beta(model.sigma_x2, sigma_n2)
    resid = np.asarray(x_hat_M, dtype=float) / b
    coef, _ = analog_prior(params, model)
    prior = x_hat[..., :-1] @ coef
    g = conditional_gain(params, model, sigma_n2)
    x_hat[..., -1] = prior + g * (resid - params.alpha[-1] * prior)
    return x_hat


def run(x, params: DqlcParams, rho_x: float, noise, *, sigma_x2: float = 1.0, b: float = 4.0, **recon_kw):
    """Encode a batch, pass it through the GMAC with the given noise, decode."""
    z = channel(encode(x, params), noise=noise)
    q_hat, xm = decode_sequential(z, params, rho_x, sigma_x2=sigma_x2, b=b)
    return reconstruct(q_hat, xm, params, rho_x, **recon_kw)


# geometry -----------------------------------------------------------------

@dataclass(frozen=True)
class SegmentGeometry:
    """Channel segment layout.

    ``l[m]`` and ``regime[m]`` refer to stages ``2..M`` (index 0 is stage 2),
    ``d[m]`` to the decision distances of stages ``1..M-1`` and ``width[m]``
    to the channel extent of the segments decoded at stages ``2..M``.
    """

    l: tuple
    vartheta: float
    b: float
    d: tuple
    regime: tuple
    width: tuple
    overlap: tuple

    @property
    def valid(self) -> bool:
        return not any(self.overlap)


def segment_geometry(params: DqlcParams, model: SourceModel, b: float = 4.0,
                     vartheta: float | None = None, stretch: str = "regime") -> SegmentGeometry:
    rho = model.rho_x
    th = vartheta_for_rho(rho) if vartheta is None else float(vartheta)
    M = params.M
    l_len = segment_length(rho, model.sigma_x2, b, th)
    regime = list(stage_regimes(params, rho, model.sigma_x2, b, th))
    scales = decision_scales(params, rho, None if stretch == "uniform" else regime)
    d = tuple(float(params.delta[m] * scales[m]) for m in range(M - 1))
    kappas = params.kappa
    a = params.alpha
    spans = []
    for m in range(2, M + 1):
        kap = kappas[m - 2]
        slope = a[m - 1] if m == M else scales[m - 1]
        spans.append(slope * min(l_len, 2.0 * kap))
    width = np.cumsum(spans[::-1])[::-1]
    overlap = tuple(bool(d[m] < width[m]) for m in range(M - 1))
    return SegmentGeometry(l=(float(l_len),) * (M - 1), vartheta=th, b=float(b), d=d,
                           regime=tuple(regime), width=tuple(float(w) for w in width), overlap=overlap)


# channel output densities -------------------------------------------------

def _npdf(x, var):
    return np.exp(-0.5 * x * x / var) / np.sqrt(2.0 * np.pi * var)


def clipped_residual_pdf(z, mean, var, alpha: float, kappa: float, sigma_n2: float):
    """Density of ``alpha * clip(x, +-kappa) + n`` for ``x ~ N(mean, var)``.

    The Gaussian part is integrated in closed form; the clip masses add two
    noise densities at ``+-alpha*kappa``.
    """
    z = np.asarray(z, dtype=float)
    a2v = alpha * alpha * var
    tot = a2v + sigma_n2
    am = alpha * mean
    zc = z - am
    # y = alpha*x restricted to [-alpha*kappa, alpha*kappa]; posterior of y given z
    post_mean = am + zc * a2v / tot
    post_sd = np.sqrt(a2v * sigma_n2 / tot)
    hi = (alpha * kappa - post_mean) / post_sd
    lo = (-alpha * kappa - post_mean) / post_sd
    inner = _npdf(zc, tot) * (ndtr(hi) - ndtr(lo))
    sd = np.sqrt(var)
    p_hi = ndtr((mean - kappa) / sd)
    p_lo = ndtr((-kappa - mean) / sd)
    return inner + p_hi * _npdf(z - alpha * kappa, sigma_n2) + p_lo * _npdf(z + alpha * kappa, sigma_n2)


def residual_pdf_clipped(z_M, mu: float, params: DqlcParams, sigma_x2: float, sigma_n2: float):
    """Channel density of the clipped analog encoder around a segment centre ``mu``."""
    z = np.asarray(z_M, dtype=float) - mu
    return clipped_residual_pdf(z, 0.0, sigma_x2, params.alpha[-1], params.kappa_M, sigma_n2)


def residual_pdf_gaussian(z_M, mu: float, params: DqlcParams, model: SourceModel, sigma_n2: float):
    """Channel density of the analog encoder when correlation confines the segment."""
    var = sigma_n2 + sigma_aa_b_closed_form(model, params.alpha[-1])
    return _npdf(np.asarray(z_M, dtype=float) - mu, var)


def _cell_probs(lo, hi, mean, sd):
    """Probabilities of the cells ``[lo, hi)`` under ``N(mean, sd^2)``; broadcasts."""
    if sd == 0:
        return ((lo <= mean) & (mean < hi)).astype(float)
    return ndtr((hi - mean) / sd) - ndtr((lo - mean) / sd)


@dataclass(frozen=True)
class MixtureComponents:
    """Centroid-tuple mixture of the channel output.

    ``offset`` is the digital part of ``z`` for each tuple, ``mean`` and
    ``var`` describe ``x_M`` given the tuple, and ``centre`` is the
    decoder-consistent segment centre used by the sequential decisions.
    """

    tuples: np.ndarray
    weights: np.ndarray
    centre: np.ndarray
    offset: np.ndarray
    mean: np.ndarray
    var: float
    tail: float


@lru_cache(maxsize=64)
def _chain_mixture(params: DqlcParams, model: SourceModel, n_sigma: float, b: float = 4.0):
    """Chain the Gaussian law of each source given the centroids fixed so far.

    Centroids are treated as noisy observations of their sources, the noise
    being the granular error ``step^2/12`` of the cell they stand for.
    """
    M, rho, sx = params.M, model.rho_x, model.sigma_x
    style = params.quantizer_style
    scales = decision_scales(params, rho, stage_regimes(params, rho, model.sigma_x2, b))
    K = covariance(model)
    Kn = K.copy()
    Kn[np.arange(M - 1), np.arange(M - 1)] += quantization_noise_var(params)
    c1, lo1, hi1 = cells(params.delta[0], None, style, span=n_sigma * params.xi * sx)
    weights = _cell_probs(lo1, hi1, 0.0, params.xi * sx)
    tail = max(0.0, 1.0 - float(weights.sum()))
    obs = (c1 / params.xi)[:, None]
    centre = c1 * scales[0]
    offset = c1.copy()
    for m in range(2, M + 1):
        idx = list(range(m - 1))
        cross = K[m - 1, idx]
        coef = pinv_psd(Kn[np.ix_(idx, idx)]) @ cross
        cmean = obs @ coef
        cvar = max(float(K[m - 1, m - 1] - coef @ cross), 0.0)
        if m == M:
            break
        c, lo, hi = cells(params.delta[m - 1], params.nq[m - 2], style)
        p = _cell_probs(lo[None, :], hi[None, :], cmean[:, None], np.sqrt(cvar))
        weights = (weights[:, None] * p).reshape(-1)
        centre = (centre[:, None] + c[None, :] * scales[m - 1]).reshape(-1)
        offset = (offset[:, None] + params.alpha[m - 1] * c[None, :]).reshape(-1)
        obs = np.hstack([np.repeat(obs, c.size, axis=0), np.tile(c, obs.shape[0])[:, None]])
        keep = weights > 1e-300
        weights, centre, offset, obs = weights[keep], centre[keep], offset[keep], obs[keep]
    tuples = obs.copy()
    tuples[:, 0] *= params.xi
    return MixtureComponents(tuples, weights, centre, offset, cmean, cvar, tail)


def mixture_components(params: DqlcParams, model: SourceModel, n_sigma: float = 6.0,
                       b: float = 4.0) -> MixtureComponents:
    return _chain_mixture(params, model, float(n_sigma), float(b))


def channel_output_pdf(z, params: DqlcParams, model: SourceModel, sigma_n2: float, *,
                       b: float = 4.0, method: str = "factor", n_sigma: float = 6.0, n_nodes: int = 129):
    """Density of the GMAC output.

    ``method="factor"`` conditions on the common source component, which
    makes the sources independent and the density exact up to a
    Gauss-Hermite rule over that component.  ``method="chain"`` is the
    centroid-tuple mixture, each component being the clipped analog density
    of ``x_M`` given the tuple; it is exact for independent sources and an
    approximation otherwise.
    """
    if method == "factor":
        return _factor_pdf(z, params, model, sigma_n2, n_sigma, n_nodes)
    if method != "chain":
        raise ValueError(f"unknown method {method!r}")
    z = np.asarray(z, dtype=float)
    mix = mixture_components(params, model, n_sigma, b)
    if mix.tail > 1e-9:
        import warnings
        warnings.warn(f"mixture truncation leaves {mix.tail:.2e} probability mass", RuntimeWarning)
    flat = z.reshape(-1)
    acc = np.zeros_like(flat)
    a, kappa = params.alpha[-1], params.kappa_M
    for start in range(0, mix.weights.size, 256):
        sl = slice(start, start + 256)
        comp = clipped_residual_pdf(flat[None, :] - mix.offset[sl, None], mix.mean[sl, None], mix.var,
                                    a, kappa, sigma_n2)
        acc += (mix.weights[sl, None] * comp).sum(axis=0)
    return acc.reshape(z.shape)


def _factor_pdf(z, params, model, sigma_n2, n_sigma, n_nodes):
    z = np.asarray(z, dtype=float)
    flat = z.reshape(-1)
    M, style = params.M, params.quantizer_style
    ss, sw = np.sqrt(model.sigma_s2), np.sqrt(model.sigma_w2)
    if sw == 0:
        raise ValueError("the factor method needs a non-degenerate individual component")
    if ss == 0:
        nodes, wts = np.zeros(1), np.ones(1)
    else:
        # trapezoid rule; spectrally accurate for this smooth, fast-decaying integrand
        nodes = np.linspace(-(n_sigma + 2), n_sigma + 2, n_nodes)
        wts = _npdf(nodes, 1.0)
        wts = wts / wts.sum()
        nodes = nodes * ss
    sx = model.sigma_x
    stage = []
    c1, lo1, hi1 = cells(params.delta[0], None, style, span=(n_sigma + 1) * params.xi * sx)
    stage.append((c1, lo1 / params.xi, hi1 / params.xi))
    for m in range(2, M):
        c, lo, hi = cells(params.delta[m - 1], params.nq[m - 2], style)
        stage.append((params.alpha[m - 1] * c, lo, hi))
    out = np.zeros_like(flat)
    for s, ws in zip(nodes, wts):
        vals = np.zeros(1)
        probs = np.ones(1)
        for y, lo, hi in stage:
            p = _cell_probs(lo, hi, s, sw)
            keep = p > 1e-16
            vals = (vals[:, None] + y[keep][None, :]).reshape(-1)
            probs = (probs[:, None] * p[keep][None, :]).reshape(-1)
        for start in range(0, vals.size, 256):
            v = vals[start:start + 256, None]
            pr = probs[start:start + 256, None]
            comp = clipped_residual_pdf(flat[None, :] - v, s, sw * sw, params.alpha[-1], params.kappa_M,
                                        sigma_n2)
            out += ws * (pr * comp).sum(axis=0)
    return out.reshape(z.shape)
