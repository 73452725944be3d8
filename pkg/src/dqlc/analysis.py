"""Analytic distortion and power of the quantizer linear coder.

Exact term-by-term calculus for three sources, closed-form high-SNR
behaviour for any number of sources, and the numerical parameter search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr, owens_t

from . import bounds, uncoded
from .codec import (
    CLIPPED,
    MIDRISE,
    DqlcParams,
    OverlapError,
    ParameterError,
    analog_prior,
    cells,
    conditional_gain,
    decision_scales,
    segment_geometry,
    stage_regimes,
    vartheta_for_rho,
    wiener_beta,
)
from .gauss import SourceModel, sigma_aa_b_closed_form


class InfeasibleError(ParameterError):
    """The later encoders already use more than the total power budget."""


def qfunc(x):
    return ndtr(-np.asarray(x, dtype=float))


def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


# Gaussian cell sums --------------------------------------------------------

@lru_cache(maxsize=512)
def _cell_table(delta, nq, sigma2, style):
    sd = math.sqrt(sigma2)
    c, lo, hi = cells(delta, nq, style, span=10.0 * sd + delta)
    a, b = lo / sd, hi / sd
    pa = np.where(np.isfinite(a), _phi(np.where(np.isfinite(a), a, 0.0)), 0.0)
    pb = np.where(np.isfinite(b), _phi(np.where(np.isfinite(b), b, 0.0)), 0.0)
    m0 = ndtr(b) - ndtr(a)
    m1 = pa - pb
    apa = np.where(np.isfinite(a), np.where(np.isfinite(a), a, 0.0) * pa, 0.0)
    bpb = np.where(np.isfinite(b), np.where(np.isfinite(b), b, 0.0) * pb, 0.0)
    m2 = m0 + apa - bpb
    return c, sd, m0, m1, m2


def cell_power(delta: float, nq: int | None, sigma2: float, style: str = MIDRISE) -> float:
    """Second moment of the quantizer output for a ``N(0, sigma2)`` input."""
    c, _, m0, _, _ = _cell_table(delta, nq, sigma2, style)
    return float(np.sum(m0 * c * c))


def quantization_distortion(delta: float, nq: int | None, sigma2: float = 1.0, style: str = MIDRISE) -> float:
    """Granular plus overload MSE of a uniform quantizer on ``N(0, sigma2)``."""
    c, sd, m0, m1, m2 = _cell_table(delta, nq, sigma2, style)
    return float(np.sum(sigma2 * m2 - 2.0 * c * sd * m1 + c * c * m0))


def edge_cell_probability(delta: float, nq: int, sigma2: float = 1.0, style: str = MIDRISE) -> float:
    """Probability of landing in one outer (overload) cell."""
    c, lo, hi = cells(delta, nq, style)
    return float(qfunc(hi[-2] / math.sqrt(sigma2)))


# encoder powers ------------------------------------------------------------

def power_encoder_digital(m: int, params: DqlcParams, model: SourceModel) -> float:
    if not 1 <= m <= params.M - 1:
        raise ValueError(f"digital encoders are 1..{params.M - 1}")
    if m == 1:
        return cell_power(params.delta[0], None, params.xi**2 * model.sigma_x2, params.quantizer_style)
    return params.alpha[m - 1] ** 2 * cell_power(params.delta[m - 1], params.nq[m - 2], model.sigma_x2,
                                                 params.quantizer_style)


def analog_power(alpha: float, kappa: float, sigma_x2: float) -> float:
    sd = math.sqrt(sigma_x2)
    k = kappa / sd
    q = float(qfunc(k))
    inner = sigma_x2 * ((1.0 - 2.0 * q) - 2.0 * k * _phi(k))
    return alpha * alpha * (inner + 2.0 * q * kappa * kappa)


def power_encoder_analog(params: DqlcParams, model: SourceModel) -> float:
    return analog_power(params.alpha[-1], params.kappa_M, model.sigma_x2)


def encoder_powers(params: DqlcParams, model: SourceModel) -> np.ndarray:
    p = [power_encoder_digital(m, params, model) for m in range(1, params.M)]
    return np.array(p + [power_encoder_analog(params, model)])


def balance_power(params: DqlcParams, model: SourceModel, P: float) -> DqlcParams:
    """Set ``xi`` so encoder 1 uses exactly the power the others leave over.

    The step of encoder 1 is held fixed in source units, which makes its
    output power exactly quadratic in ``xi``.
    """
    rest = sum(power_encoder_digital(m, params, model) for m in range(2, params.M))
    rest += power_encoder_analog(params, model)
    budget = params.M * P - rest
    if budget <= 0:
        raise InfeasibleError(f"encoders 2..M need {rest:.4g} of the {params.M * P:.4g} power budget")
    step = params.delta[0] / params.xi
    unit = cell_power(step, None, model.sigma_x2, params.quantizer_style)
    xi = math.sqrt(budget / unit)
    return replace(params, xi=xi, delta=(step * xi,) + params.delta[1:])


# source M terms ------------------------------------------------------------

def clipping_distortion(kappa_M: float, sigma_x2: float = 1.0) -> float:
    sd = math.sqrt(sigma_x2)
    k = kappa_M / sd
    return float(2.0 * sigma_x2 * ((1.0 + k * k) * qfunc(k) - k * _phi(k)))


def tail_prob_clipped(t: float, alpha: float, kappa: float, sigma_x2: float, sigma_n2: float) -> float:
    """``Pr{alpha * clip(x, +-kappa) + n >= t}`` by adaptive quadrature over ``x``."""
    sd, sn = math.sqrt(sigma_x2), math.sqrt(sigma_n2)
    po = float(qfunc(kappa / sd))
    mass = po * float(qfunc((t - alpha * kappa) / sn) + qfunc((t + alpha * kappa) / sn))

    def f(x):
        return math.exp(-0.5 * (x / sd) ** 2) / (sd * math.sqrt(2 * math.pi)) * float(qfunc((t - alpha * x) / sn))

    x0 = t / alpha
    pts = [p for p in (x0 - 8 * sn / alpha, x0, x0 + 8 * sn / alpha) if -kappa < p < kappa]
    val, err = quad(f, -kappa, kappa, points=pts or None, epsabs=1e-14, epsrel=1e-10, limit=200)
    if err > 1e-9 + 1e-6 * abs(val):
        raise RuntimeError(f"tail quadrature did not converge (estimate {val:.3e}, error {err:.1e})")
    return val + mass


JOINT = "joint"
DECODER = "decoder"
PLAIN = "plain"
CONDITIONAL = "conditional"
EXACT = "exact"
APPROX = "approx"


def _source_step(params: DqlcParams, m: int) -> float:
    """Step of quantizer ``m`` (1-based) in source units."""
    return params.delta[0] / params.xi if m == 1 else params.delta[m - 1]


_GL64 = np.polynomial.legendre.leggauss(64)


def tail_gauss_uniform(t: float, var: float, halfwidths=()) -> float:
    """``Pr{G + sum(U_i) > t}`` for ``G ~ N(0, var)`` and independent ``U_i ~ U[-h_i, h_i]``.

    One uniform term is integrated in closed form, a second one by
    Gauss-Legendre quadrature.
    """
    h = sorted((float(x) for x in halfwidths if x > 0), reverse=True)
    sd = math.sqrt(var)
    if not h:
        return float(qfunc(t / sd))
    if len(h) > 2:
        raise ValueError("at most two uniform terms are supported")

    def one(tt, hw):
        def psi(x):
            return _phi(x) - x * qfunc(x)
        return sd / (2.0 * hw) * (psi((tt - hw) / sd) - psi((tt + hw) / sd))

    if len(h) == 1:
        return float(one(t, h[0]))
    x, w = _GL64
    u = h[0] * x
    return float(0.5 * np.sum(w * one(t - u, h[1])))


def analog_spread(params: DqlcParams, model: SourceModel, spread: str = DECODER) -> tuple[float, tuple]:
    """Spread of the analog contribution around the centre of its segment.

    Returns the Gaussian variance and the half-widths of uniform terms.
    ``"joint"`` conditions ``alpha_M x_M`` on all other sources.  ``"decoder"``
    matches the sequential decoder, which centres the segment on
    ``rho * q_{M-1}`` and so leaves ``x_M - rho * x_{M-1}`` plus the scaled
    granular error of encoder ``M-1``.
    """
    a = params.alpha[-1]
    if spread == JOINT:
        return sigma_aa_b_closed_form(model, a), ()
    if spread != DECODER:
        raise ValueError(f"unknown spread {spread!r}")
    rho, step = model.rho_x, _source_step(params, params.M - 1)
    return a * a * model.sigma_x2 * (1.0 - rho**2), (a * rho * step / 2.0,)


def analog_spread_var(params: DqlcParams, model: SourceModel, spread: str = DECODER) -> float:
    var, hw = analog_spread(params, model, spread)
    return var + sum(h * h / 3.0 for h in hw)


def anomaly_prob_M(params: DqlcParams, model: SourceModel, sigma_n2: float, regime: str | None = None,
                   b: float = 4.0, spread: str = DECODER) -> float:
    """Probability that the last digital stage crosses a decision boundary.

    Counted for a centroid with neighbours on both sides; see
    :func:`edge_fraction` for the correction at the outer levels.
    """
    geo = segment_geometry(params, model, b)
    regime = regime or geo.regime[-1]
    t = geo.d[-1] / 2.0
    if regime == CLIPPED:
        return min(1.0, 2.0 * tail_prob_clipped(t, params.alpha[-1], params.kappa_M, model.sigma_x2, sigma_n2))
    var, hw = analog_spread(params, model, spread)
    return min(1.0, 2.0 * tail_gauss_uniform(t, sigma_n2 + var, hw))


def edge_fraction(params: DqlcParams, model: SourceModel) -> float:
    """Probability of one outer level of encoder ``M-1`` (zero when it is unbounded)."""
    if params.M < 3:
        return 0.0
    return edge_cell_probability(params.delta[-1], params.nq[-1], model.sigma_x2, params.quantizer_style)


def anomalous_distortion_M(params: DqlcParams, model: SourceModel, sigma_n2: float, b: float = 4.0,
                           spread: str = DECODER) -> float:
    """Large errors of the analog source after a jump of the last digital stage.

    The outer levels have a single neighbour, hence the factor
    ``1 - edge_fraction``.
    """
    geo = segment_geometry(params, model, b)
    p = anomaly_prob_M(params, model, sigma_n2, geo.regime[-1], b, spread)
    p *= 1.0 - edge_fraction(params, model)
    return p * _jump_error2(params, geo)


def _jump_error2(params: DqlcParams, geo) -> float:
    if geo.regime[-1] == CLIPPED:
        return 4.0 * params.kappa_M**2
    return max(geo.l[-1] - _source_step(params, params.M - 1), 0.0) ** 2


def channel_distortion_M(params: DqlcParams, model: SourceModel, sigma_n2: float, beta: float | None = None,
                         estimator: str = PLAIN) -> float:
    """Noise-induced error of the analog source.

    ``"plain"`` scales the residual by ``beta``; ``"conditional"`` fuses it
    with the linear prior from the digital estimates (see
    :func:`dqlc.codec.analog_prior`).
    """
    a = params.alpha[-1]
    if estimator == CONDITIONAL:
        _, v = analog_prior(params, model)
        return v * sigma_n2 / (a * a * v + sigma_n2)
    if estimator != PLAIN:
        raise ValueError(f"unknown estimator {estimator!r}")
    if beta is None:
        beta = params.resolved_beta(model.sigma_x2, sigma_n2)
    return model.sigma_x2 * (1.0 - a * beta) ** 2 + beta**2 * sigma_n2


# exact decision errors -----------------------------------------------------

def bvn_cdf(h, k, r: float):
    """``Pr{X <= h, Y <= k}`` for standard normals with correlation ``|r| < 1``.

    Owen's T form; broadcasts over ``h`` and ``k``.
    """
    h, k = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    h = np.where(h == 0.0, 1e-12, h)
    k = np.where(k == 0.0, 1e-12, k)
    c = math.sqrt(1.0 - r * r)
    with np.errstate(over="ignore", invalid="ignore"):
        ah = (k - r * h) / (h * c)
        ak = (h - r * k) / (k * c)
    out = 0.5 * (ndtr(h) + ndtr(k)) - owens_t(h, ah) - owens_t(k, ak) - 0.5 * (h * k < 0)
    out = np.where(np.isneginf(h) | np.isneginf(k), 0.0, out)
    out = np.where(np.isposinf(h), ndtr(k), out)
    out = np.where(np.isposinf(k), ndtr(h), out)
    return np.clip(out, 0.0, 1.0)


def analog_cdf(t, mean, sd: float, alpha: float, kappa: float, sigma_n2: float):
    """``Pr{alpha * clip(x, +-kappa) + n <= t}`` for ``x ~ N(mean, sd^2)``; broadcasts."""
    scalar = np.ndim(t) == 0 and np.ndim(mean) == 0
    t, mean = np.broadcast_arrays(np.atleast_1d(np.clip(np.asarray(t, dtype=float), -1e150, 1e150)),
                                  np.atleast_1d(np.asarray(mean, dtype=float)))
    lo, hi = (-kappa - mean) / sd, (kappa - mean) / sd
    if sigma_n2 == 0:
        inside = ndtr(np.minimum((t / alpha - mean) / sd, hi)) - ndtr(lo)
        out = np.where(t < -alpha * kappa, 0.0, np.where(t >= alpha * kappa, 1.0, ndtr(lo) + inside))
    else:
        sn = math.sqrt(sigma_n2)
        sy = math.sqrt(alpha * alpha * sd * sd + sigma_n2)
        ky = (t - alpha * mean) / sy
        out = ndtr(ky)
        # only near the clip levels does the saturation change the law
        c = ndtr(lo) + ndtr(-hi) > 1e-17
        if np.any(c):
            lo, hi, ky, tc = lo[c], hi[c], ky[c], t[c]
            mass = ndtr(lo) * ndtr((tc + alpha * kappa) / sn) + ndtr(-hi) * ndtr((tc - alpha * kappa) / sn)
            r = alpha * sd / sy
            out[c] = mass + np.maximum(bvn_cdf(hi, ky, r) - bvn_cdf(lo, ky, r), 0.0)
    return float(out[0]) if scalar else out


def _common_nodes(model: SourceModel, n_sigma: float):
    ss, sw = math.sqrt(model.sigma_s2), math.sqrt(model.sigma_w2)
    if ss == 0.0:
        return np.zeros(1), np.ones(1)
    # spacing of at most sd_w keeps the trapezoid rule far below sampling accuracy
    n = max(33, 2 * int(math.ceil(n_sigma * ss / min(sw, ss / 4.0))) + 1)
    u = np.linspace(-n_sigma, n_sigma, n)
    w = np.exp(-0.5 * u * u)
    return u * ss, w / w.sum()


def jump_probabilities(params: DqlcParams, model: SourceModel, sigma_n2: float, b: float = 4.0,
                       n_sigma: float = 8.0) -> tuple[float, float]:
    """Decision-error probabilities of the two digital stages for three sources.

    Returns ``(p_th2, p_jump3)``: stage 1 decides wrongly, and stage 1 is
    right while stage 2 is wrong.  Given the common component ``s`` the
    sources are independent, so each probability is a sum over the cells
    of encoders 1 and 2 of interval masses of ``alpha_3 clip(x_3) + n``.
    The integral over ``s`` uses the trapezoid rule.
    """
    if params.M != 3 or model.M != 3:
        raise ValueError("jump_probabilities handles exactly three sources")
    sw = math.sqrt(model.sigma_w2)
    if sw == 0.0:
        raise ValueError("the sources must keep an individual component (rho < 1)")
    rho, style = model.rho_x, params.quantizer_style
    s1, s2 = decision_scales(params, rho, stage_regimes(params, rho, model.sigma_x2, b))
    d1, d2 = params.delta
    a2, a3, xi = params.alpha[1], params.alpha[2], params.xi
    nq2 = params.nq[0]
    s, ws = _common_nodes(model, n_sigma)
    s = s[:, None, None]

    # encoder 1 cells near each node, in the xi-scaled domain
    off = 0.5 if style == MIDRISE else 0.0
    w1 = int(math.ceil(2.0 * n_sigma * sw * xi / d1)) + 2
    k0 = np.floor(xi * (s - n_sigma * sw) / d1 - off)
    c1 = (k0 + np.arange(w1)[None, :, None] + off) * d1
    p1 = ndtr(((c1 + d1 / 2) / xi - s) / sw) - ndtr(((c1 - d1 / 2) / xi - s) / sw)

    c2, lo2, hi2 = cells(d2, nq2, style)
    w2 = int(math.ceil(2.0 * n_sigma * sw / d2)) + 2
    if w2 >= nq2:
        j = np.broadcast_to(np.arange(nq2), s.shape[:1] + (1, nq2))
    else:
        j0 = np.clip(np.searchsorted(c2, s - n_sigma * sw) - 1, 0, nq2 - w2)
        j = j0 + np.arange(w2)[None, None, :]
    c2, lo2, hi2 = c2[j], lo2[j], hi2[j]
    p2 = ndtr((hi2 - s) / sw) - ndtr((lo2 - s) / sw)

    w = ws[:, None, None] * p1 * p2
    keep = w > 1e-15
    w = w[keep]
    s, c1, c2, lo2, hi2 = (np.broadcast_to(v, keep.shape)[keep] for v in (s, c1, c2, lo2, hi2))
    base = c1 + a2 * c2
    a_lo, a_hi = s1 * (c1 - d1 / 2) - base, s1 * (c1 + d1 / 2) - base
    b_lo, b_hi = np.maximum(s2 * lo2 - a2 * c2, a_lo), np.minimum(s2 * hi2 - a2 * c2, a_hi)
    b_hi = np.maximum(b_hi, b_lo)

    cdf = analog_cdf(np.stack([a_lo, a_hi, b_lo, b_hi]), s, sw, a3, params.kappa_M, sigma_n2)
    pa = np.maximum(cdf[1] - cdf[0], 0.0)
    pab = np.maximum(cdf[3] - cdf[2], 0.0)
    return float(np.sum(w * (1.0 - pa))), float(np.sum(w * (pa - pab)))


def jump_costs(params: DqlcParams, model: SourceModel, sigma_n2: float, b: float = 4.0) -> tuple[float, float]:
    """Squared shift of the conditional analog estimate after a decision error.

    Returns the costs of a stage-2 jump by one step and of a stage-1 jump,
    after which stage 2 re-centres by the stage-1 step (at most across its
    whole range).  The estimate is linear in the decided centroids and the
    residual, so both shifts follow from the prior coefficients and the
    fusion gain.
    """
    rho = model.rho_x
    coef, _ = analog_prior(params, model)
    g = conditional_gain(params, model, sigma_n2)
    a2, a3 = params.alpha[1], params.alpha[2]
    d1, d2 = params.delta
    s2 = decision_scales(params, rho, stage_regimes(params, rho, model.sigma_x2, b))[1]

    def shift(dx1, dq2, dr):
        prior = coef[0] * dx1 + coef[1] * dq2
        return prior + g * (dr - a3 * prior)

    dq2 = -min(d1 / s2, (params.nq[0] - 1) * d2)
    return (shift(0.0, d2, -a2 * d2) ** 2,
            shift(d1 / params.xi, dq2, -d1 - a2 * dq2) ** 2)


# three-source report -------------------------------------------------------

@dataclass
class DistortionReport:
    D: np.ndarray
    eps_q: np.ndarray
    eps_kappa: np.ndarray
    eps_C: np.ndarray
    eps_an: np.ndarray
    powers: np.ndarray
    probabilities: dict = field(default_factory=dict)
    regimes: tuple = ()

    @property
    def D_avg(self) -> float:
        return float(np.mean(self.D))

    @property
    def P_avg(self) -> float:
        return float(np.mean(self.powers))

    def sdr_db(self, sigma_x2: float = 1.0) -> float:
        return float(bounds.to_db(sigma_x2 / self.D_avg))


def _stage1_spread(params, model, spread):
    sx2, rho = model.sigma_x2, model.rho_x
    a2, a3 = params.alpha[1], params.alpha[2]
    if spread == JOINT:
        return sigma_aa_b_closed_form(model, a3) + sx2 * a2**2 * (1.0 - rho**2), ()
    step1, step2 = _source_step(params, 1), params.delta[1]
    s = a2 + a3
    v = sx2 * (a2**2 + a3**2 + 2.0 * rho * a2 * a3 - rho**2 * s * s)
    return v, (a2 * step2 / 2.0, rho * s * step1 / 2.0)


def distortion_m3(params: DqlcParams, model: SourceModel, snr: float, P: float = 1.0, b: float = 4.0,
                  spread: str = DECODER, estimator: str = CONDITIONAL, jumps: str = EXACT) -> DistortionReport:
    """Per-source distortion terms and encoder powers for three sources.

    Only jumps to neighbouring centroids are accounted for.  A jump of
    stage 1 also throws the analog residual to the far side of its
    segment, which is charged to source 3 together with its own anomalies.
    ``spread`` and ``estimator`` select the segment spread model and the
    analog estimator (see :func:`analog_spread_var`,
    :func:`channel_distortion_M`).  With ``jumps="exact"`` the decision
    error probabilities come from :func:`jump_probabilities`; ``"approx"``
    uses the single-boundary tail formulas instead.  The conditional
    estimator is charged the shifts of :func:`jump_costs`, the plain one a
    jump across its segment.

    Raises :class:`InfeasibleError` when encoders 2 and 3 exceed the power
    budget and :class:`OverlapError` when channel segments overlap.
    """
    if params.M != 3 or model.M != 3:
        raise ValueError("distortion_m3 handles exactly three sources")
    sigma_n2 = P / snr
    sx2 = model.sigma_x2
    style = params.quantizer_style
    P2 = power_encoder_digital(2, params, model)
    P3 = power_encoder_analog(params, model)
    if P2 + P3 >= 3.0 * P:
        raise InfeasibleError("encoders 2 and 3 exceed the total power budget")
    geo = segment_geometry(params, model, b)
    if not geo.valid:
        raise OverlapError(f"channel segments overlap: d={geo.d}, widths={geo.width}")
    P1 = power_encoder_digital(1, params, model)
    reg2, reg3 = geo.regime
    l2 = geo.l[0]
    d1, d2 = geo.d
    a3 = params.alpha[2]
    nq2 = params.nq[0]
    step1 = params.delta[0] / params.xi
    step2 = params.delta[1]
    beta = params.resolved_beta(sx2, sigma_n2)
    var3, hw3 = analog_spread(params, model, spread)

    p_edge = edge_cell_probability(step2, nq2, sx2, style)
    if jumps == EXACT:
        p_th2, p_jump3 = jump_probabilities(params, model, sigma_n2, b)
    elif jumps == APPROX:
        # stage 2 decisions
        p_jump3 = anomaly_prob_M(params, model, sigma_n2, reg3, b, spread) * (1.0 - p_edge)
        # stage 1 decisions
        if reg2 == CLIPPED:
            d_th = d1 / 2.0 - (nq2 - 1) * d2 / 2.0
            if reg3 == CLIPPED:
                p_dth = 2.0 * tail_prob_clipped(d_th, a3, params.kappa_M, sx2, sigma_n2)
            else:
                p_dth = 2.0 * tail_gauss_uniform(d_th, sigma_n2 + var3, hw3)
            p_th2 = min(1.0, p_edge * p_dth)
        else:
            var, hw = _stage1_spread(params, model, spread)
            p_th2 = min(1.0, 2.0 * tail_gauss_uniform(d1 / 2.0, sigma_n2 + var, hw))
    else:
        raise ValueError(f"unknown jumps {jumps!r}")
    if reg2 == CLIPPED:
        e_an2 = p_th2 * (step2 * (nq2 - 1)) ** 2
    else:
        e_an2 = p_th2 * max(l2 - step1, 0.0) ** 2

    if estimator == CONDITIONAL:
        cost2, cost1 = jump_costs(params, model, sigma_n2, b)
    else:
        cost2 = cost1 = _jump_error2(params, geo)
    e_k3 = clipping_distortion(params.kappa_M, sx2)
    e_c3 = channel_distortion_M(params, model, sigma_n2, beta, estimator)
    e_an3 = p_jump3 * cost2 + p_th2 * cost1

    e_q2 = quantization_distortion(step2, nq2, sx2, style)
    e_c2 = step2**2 * p_jump3

    e_q1 = quantization_distortion(step1, None, sx2, style)
    e_c1 = step1**2 * p_th2

    D = np.array([e_q1 + e_c1, e_q2 + e_c2 + e_an2, e_k3 + e_c3 + e_an3])
    return DistortionReport(
        D=D,
        eps_q=np.array([e_q1, e_q2, 0.0]),
        eps_kappa=np.array([0.0, 0.0, e_k3]),
        eps_C=np.array([e_c1, e_c2, e_c3]),
        eps_an=np.array([0.0, e_an2, e_an3]),
        powers=np.array([P1, P2, P3]),
        probabilities={"p_th2": p_th2, "p_jump3": p_jump3, "p_edge2": p_edge},
        regimes=geo.regime,
    )


# high-SNR behaviour ----------------------------------------------------------

@dataclass(frozen=True)
class HighSnrDesign:
    M: int
    alpha2: np.ndarray
    K: float
    C: float
    sdr: float
    bound: float

    @property
    def loss_db(self) -> float:
        return 0.0 - float(bounds.to_db(self.K))

    @property
    def sdr_db(self) -> float:
        return float(bounds.to_db(self.sdr))


def loss_constant(M: int, C: float) -> float:
    """Fraction of the high-SNR bound kept by the scheme."""
    return (3.0 / C) ** (1.0 - 1.0 / M)


def high_snr_design(M: int, snr: float, rho_x: float, b: float = 4.0, vartheta: float | None = None,
                    sigma_n2: float = 1.0) -> HighSnrDesign:
    """Squared gains that equalise the high-SNR distortions of all sources.

    ``alpha2[i]`` holds ``alpha_{i+1}^2`` for ``i >= 1``; ``alpha2[0]`` is the
    remaining power ``M*P - sum(alpha_i^2)`` that encoder 1 spends.
    """
    if rho_x >= 1.0:
        raise ValueError("the high-SNR design is singular at rho_x = 1")
    th = vartheta_for_rho(rho_x) if vartheta is None else vartheta
    C = b * b * th
    K = loss_constant(M, C)
    rho_M = bounds.high_snr_bound(M, snr, rho_x)
    q = (1.0 - rho_x) * K * rho_M / 3.0
    a2 = np.empty(M)
    a2[M - 1] = sigma_n2 * K * rho_M
    for i in range(M - 2, 0, -1):
        a2[i] = a2[i + 1] * C * q
    a2[0] = M * snr * sigma_n2 - a2[1:].sum()
    return HighSnrDesign(M=M, alpha2=a2, K=K, C=C, sdr=K * rho_M, bound=rho_M)


def high_snr_distortions(alpha2, M: int, snr: float, rho_x: float, C: float, sigma_n2: float = 1.0,
                         b_n: float = 0.0) -> np.ndarray:
    """High-SNR distortion approximations for squared gains ``alpha2[1:]``."""
    a2 = np.asarray(alpha2, dtype=float)
    D = np.empty(M)
    for m in range(1, M):
        num = a2[m] * C * (1.0 - rho_x)
        if m == M - 1:
            num += (b_n * b_n) * sigma_n2
        den = 3.0 * (M * snr * sigma_n2 - a2[1:].sum()) if m == 1 else 3.0 * a2[m - 1]
        D[m - 1] = num / den
    D[M - 1] = sigma_n2 / a2[M - 1]
    return D


def loss_vs_M_curve(snr: float, rho_levels, M_range, b: float = 4.0) -> list[dict]:
    """High-SNR loss of the scheme and exact loss of uncoded transmission, in dB."""
    rows = []
    for rho in rho_levels:
        C = b * b * vartheta_for_rho(rho)
        for M in M_range:
            K = loss_constant(M, C)
            bound_db = bounds.distortion_lower_bound(M, snr, rho).sdr_db
            unc_db = float(bounds.to_db(1.0 / uncoded.distortion_uncoded(M, snr, rho)))
            rows.append({"M": M, "rho": rho, "C": C, "dqlc_loss_db": 0.0 - float(bounds.to_db(K)),
                         "uncoded_loss_db": bound_db - unc_db, "bound_sdr_db": bound_db,
                         "uncoded_sdr_db": unc_db})
    return rows


def loss_crossover(rows, rho: float) -> int | None:
    """Smallest ``M`` at which uncoded transmission loses less than the scheme."""
    for r in sorted((r for r in rows if r["rho"] == rho), key=lambda r: r["M"]):
        if r["uncoded_loss_db"] < r["dqlc_loss_db"]:
            return r["M"]
    return None


# parameter search ------------------------------------------------------------

@dataclass(frozen=True)
class SearchConfig:
    """Settings of :func:`optimize_m3`.

    Every level count in ``nq_values`` is screened: all starting points are
    evaluated and the ``screen_starts`` best get a short simplex run of
    ``screen_iter`` iterations.  The ``n_polish`` best level counts then get
    full runs of up to ``polish_iter`` iterations, restarted until the
    relative improvement drops below ``ftol_rel``.  Points whose jump
    probabilities exceed ``max_jump_prob`` are rejected, since the
    nearest-neighbour error calculus assumes jumps are rare.  With a warm
    start and ``nq_window`` set, only level counts within that distance of
    the warm start's are enumerated.
    """

    nq_values: tuple = tuple(range(2, 65, 2))
    margins: tuple = (3.0, 4.5)
    clip_sigmas: tuple = (2.0, 3.0)
    alt_gains: tuple = ((0.7, 0.2), (0.4, 0.05))
    screen_starts: int = 2
    screen_iter: int = 80
    polish_iter: int = 500
    n_polish: int = 3
    restarts: int = 3
    xatol: float = 1e-7
    ftol_rel: float = 1e-6
    b: float = 4.0
    P: float = 1.0
    max_jump_prob: float = 0.05
    nq_window: int | None = None
    use_design: bool = True
    spread: str = DECODER
    estimator: str = CONDITIONAL
    jumps: str = EXACT
    quantizer_style: str = MIDRISE


_PENALTY = 1e3
_MIN_GAIN_RATIO = 1e-3
_KAPPA_RANGE = (1e-2, 20.0)


def _sigmoid(u):
    return 1.0 / (1.0 + math.exp(-u)) if u > -700 else 0.0


def _logit(p):
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return math.log(p / (1.0 - p))


def _params_from_vector(v, nq2: int, model: SourceModel, style: str) -> DqlcParams:
    """Map the unconstrained search vector to parameters.

    ``v = (log step1, log step2, logit alpha2, logit of alpha3/alpha2 rescaled,
    log kappa3/sigma_x)``; gains are kept in ``1 >= alpha2 >= alpha3 > 0``
    and the clip level within a bounded multiple of ``sigma_x``.
    """
    step1, step2 = math.exp(v[0]), math.exp(v[1])
    a2 = _sigmoid(v[2])
    a3 = a2 * (_MIN_GAIN_RATIO + (1.0 - _MIN_GAIN_RATIO) * _sigmoid(v[3]))
    lo, hi = _KAPPA_RANGE
    kappa = model.sigma_x * min(max(math.exp(v[4]), lo), hi)
    return DqlcParams(M=3, delta=(step1, step2), nq=(nq2,), alpha=(1.0, a2, a3), kappa_M=kappa,
                      xi=1.0, quantizer_style=style)


def _vector_from_params(params: DqlcParams, model: SourceModel) -> np.ndarray:
    a2, a3 = params.alpha[1], params.alpha[2]
    r = (a3 / a2 - _MIN_GAIN_RATIO) / (1.0 - _MIN_GAIN_RATIO)
    return np.array([math.log(params.delta[0] / params.xi), math.log(params.delta[1]), _logit(a2),
                     _logit(r), math.log(params.kappa_M / model.sigma_x)])


def _evaluate(v, nq2, model, snr, cfg: SearchConfig):
    """Average analytic distortion, or a penalty growing with the violation."""
    try:
        p = _params_from_vector(v, nq2, model, cfg.quantizer_style)
    except (ParameterError, OverflowError):
        return 10 * _PENALTY
    rest = power_encoder_digital(2, p, model) + power_encoder_analog(p, model)
    if rest >= 3.0 * cfg.P:
        return _PENALTY * (1.0 + rest / (3.0 * cfg.P))
    p = balance_power(p, model, cfg.P)
    geo = segment_geometry(p, model, cfg.b)
    if not geo.valid:
        worst = max((w - d) / d for w, d in zip(geo.width, geo.d))
        return _PENALTY * (1.0 + worst)
    try:
        rep = distortion_m3(p, model, snr, cfg.P, cfg.b, cfg.spread, cfg.estimator, cfg.jumps)
    except (ParameterError, RuntimeError, FloatingPointError):
        return 10 * _PENALTY
    worst = max(rep.probabilities["p_th2"], rep.probabilities["p_jump3"])
    if worst > cfg.max_jump_prob:
        return _PENALTY * (1.0 + worst)
    return rep.D_avg


def _try_start(model, snr, nq2, a2, a3, margin, kappa, cfg):
    P, rho = cfg.P, model.rho_x
    sn = math.sqrt(P / snr)
    lam = model.sigma_x2 * (1.0 - rho)
    l_len = 2.0 * cfg.b * math.sqrt(vartheta_for_rho(rho) * lam)
    w3 = a3 * min(l_len, 2.0 * kappa)
    s2 = a2 + rho * a3
    step2 = (w3 + 2.0 * margin * sn) / s2
    w2 = s2 * min(l_len, (nq2 - 1) * step2) + w3
    d1 = w2 + 2.0 * margin * sn
    p = DqlcParams(M=3, delta=(d1, step2), nq=(nq2,), alpha=(1.0, a2, a3), kappa_M=kappa,
                   xi=math.sqrt(3.0 * P), quantizer_style=cfg.quantizer_style)
    for _ in range(6):
        p = balance_power(replace(p, delta=(d1 / (1.0 + rho * (a2 + a3) / p.xi), step2)), model, P)
    if not segment_geometry(p, model, cfg.b).valid:
        raise OverlapError("start overlaps")
    return p


def design_start(model: SourceModel, snr: float, nq2: int, margin: float = 4.0, clip_sigma: float = 3.0,
                 cfg: SearchConfig = SearchConfig(), gains=None) -> DqlcParams:
    """Starting point that just separates the channel segments.

    The gains come from :func:`high_snr_design` (capped below one) unless
    given.  Steps are chosen so every segment is followed by a guard of
    ``margin`` noise standard deviations; gains and guards shrink until
    the power budget is met.
    """
    sx = model.sigma_x
    if gains is None:
        d = high_snr_design(3, snr, min(model.rho_x, 0.999), cfg.b, sigma_n2=cfg.P / snr)
        a2 = min(math.sqrt(max(d.alpha2[1], 1e-12)) / sx, 0.9)
        a3 = min(math.sqrt(max(d.alpha2[2], 1e-12)) / sx, 0.9 * a2)
    else:
        a2, a3 = gains
    kappa = clip_sigma * sx
    for _ in range(30):
        try:
            return _try_start(model, snr, nq2, a2, a3, margin, kappa, cfg)
        except ParameterError:
            a2, a3, margin = 0.85 * a2, 0.8 * a3, 0.9 * margin
    raise InfeasibleError(f"no feasible start for nq2={nq2}")


def _local_search(v0, nq2, model, snr, cfg, maxiter, restarts):
    from scipy.optimize import minimize

    opts = {"maxiter": maxiter, "xatol": cfg.xatol, "fatol": 0.0, "adaptive": True}
    args = (nq2, model, snr, cfg)
    res = minimize(_evaluate, v0, args=args, method="Nelder-Mead", options=opts)
    best_v, best_f = res.x, float(res.fun)
    for _ in range(restarts):
        if best_f >= _PENALTY:
            break
        r = minimize(_evaluate, best_v, args=args, method="Nelder-Mead", options=opts)
        gain = (best_f - r.fun) / best_f
        if r.fun < best_f:
            best_v, best_f = r.x, float(r.fun)
        if gain < cfg.ftol_rel:
            break
    return best_v, best_f


def _starts(model, snr, nq2, cfg, warm=None):
    out = []
    if warm is not None:
        try:
            out.append(_vector_from_params(replace(warm, nq=(nq2,)), model))
        except (ParameterError, ValueError):
            pass
    gain_sets = ([None] if cfg.use_design else []) + list(cfg.alt_gains)
    for gains in gain_sets:
        for mg in cfg.margins:
            for cs in cfg.clip_sigmas:
                try:
                    out.append(_vector_from_params(design_start(model, snr, nq2, mg, cs, cfg, gains), model))
                except ParameterError:
                    continue
    return out


def optimize_m3(model: SourceModel, snr: float, config: SearchConfig | None = None,
                warm_start: DqlcParams | None = None) -> tuple[DqlcParams, DistortionReport]:
    """Minimise the analytic average distortion for three sources.

    The power constraint is met exactly by rescaling encoder 1 (see
    :func:`balance_power`), so the search is unconstrained in power.  The
    level count of encoder 2 is enumerated.  The analog gain ``beta``
    enters only the channel term of source 3, which the Wiener gain
    minimises exactly, so it is set rather than searched.
    """
    cfg = config or SearchConfig()
    if model.M != 3:
        raise ValueError("optimize_m3 needs a three-source model")
    if not 0.0 <= model.rho_x < 1.0 or snr <= 0:
        raise ValueError("need 0 <= rho_x < 1 and snr > 0")
    nq_values = cfg.nq_values
    if warm_start is not None and cfg.nq_window is not None:
        near = [n for n in nq_values if abs(n - warm_start.nq[0]) <= cfg.nq_window]
        nq_values = near or nq_values
    screened = []
    for nq2 in nq_values:
        starts = _starts(model, snr, nq2, cfg, warm_start)
        ranked = sorted(((_evaluate(v, nq2, model, snr, cfg), i) for i, v in enumerate(starts)))
        best = None
        for f0, i in ranked[: cfg.screen_starts]:
            v, f = _local_search(starts[i], nq2, model, snr, cfg, cfg.screen_iter, 0)
            if best is None or f < best[0]:
                best = (f, v)
        if best is not None and best[0] < _PENALTY:
            screened.append((best[0], nq2, best[1]))
    if not screened:
        raise InfeasibleError(f"no feasible parameters found at snr={snr:g}, rho={model.rho_x:g}")
    screened.sort(key=lambda t: (t[0], t[1]))
    final = []
    for _, nq2, v0 in screened[: cfg.n_polish]:
        v, f = _local_search(v0, nq2, model, snr, cfg, cfg.polish_iter, cfg.restarts)
        final.append((f, nq2, v))
    final.sort(key=lambda t: (t[0], t[1]))
    _, nq2, v = final[0]
    params = balance_power(_params_from_vector(v, nq2, model, cfg.quantizer_style), model, cfg.P)
    params = params.with_wiener_beta(model.sigma_x2, cfg.P / snr)
    return params, distortion_m3(params, model, snr, cfg.P, cfg.b, cfg.spread, cfg.estimator, cfg.jumps)
