"""scikit-learn style wrappers around the transmission schemes.

``fit`` learns the source statistics (and, for the quantizer coder, the
parameters), ``transform`` gives the channel inputs, ``predict`` maps GMAC
outputs back to source estimates and ``score`` runs a simulated
transmission and returns the SDR in dB.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from . import analysis, bounds, codec, uncoded
from .gauss import SourceModel


def estimate_source(X) -> tuple[float, float]:
    """Variance and common correlation of zero-mean, exchangeable columns."""
    X = check_array(X, ensure_min_features=2, ensure_min_samples=2)
    K = X.T @ X / X.shape[0]
    sx2 = float(np.mean(np.diag(K)))
    M = K.shape[0]
    off = (K.sum() - np.trace(K)) / (M * (M - 1))
    return sx2, float(np.clip(off / sx2, 0.0, 1.0))


class _Transmitter(BaseEstimator, TransformerMixin):
    def _fit_source(self, X):
        X = check_array(X, ensure_min_features=2, ensure_min_samples=2)
        sx2, rho = estimate_source(X)
        self.sigma_x2_ = sx2 if self.sigma_x2 is None else float(self.sigma_x2)
        self.rho_ = rho if self.rho is None else float(self.rho)
        self.n_features_in_ = X.shape[1]
        self.sigma_n2_ = self.power / bounds.from_db(self.snr_db)
        return X

    def _check_X(self, X):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def channel(self, Y, random_state=None):
        """Sum the channel inputs and add noise at the fitted SNR."""
        check_is_fitted(self)
        rng = check_random_state(random_state)
        Y = check_array(Y)
        return Y.sum(axis=1) + rng.standard_normal(Y.shape[0]) * np.sqrt(self.sigma_n2_)

    def score(self, X, y=None, random_state=None):
        X = self._check_X(X)
        X_hat = self.predict(self.channel(self.transform(X), random_state))
        return float(bounds.to_db(np.mean(X * X) / np.mean((X - X_hat) ** 2)))


class UncodedTransmitter(_Transmitter):
    """Each encoder scales its source to the power budget; the receiver is linear MMSE."""

    def __init__(self, power=1.0, snr_db=20.0, rho=None, sigma_x2=None):
        self.power = power
        self.snr_db = snr_db
        self.rho = rho
        self.sigma_x2 = sigma_x2

    def fit(self, X, y=None):
        self._fit_source(X)
        return self

    def transform(self, X):
        X = self._check_X(X)
        return uncoded.encode_linear(X, self.power, self.sigma_x2_)

    def predict(self, z):
        check_is_fitted(self)
        z = np.asarray(z, dtype=float).reshape(-1)
        return uncoded.decode_mmse_linear(z, self.n_features_in_, self.power, self.rho_, self.sigma_x2_,
                                          self.sigma_n2_)


class DQLC(_Transmitter):
    """Distributed quantizer linear coder.

    Without ``params`` the parameters are optimised on the analytic
    distortion for the fitted statistics (three sources only).
    """

    def __init__(self, power=1.0, snr_db=20.0, rho=None, sigma_x2=None, params=None, search=None,
                 conditional=True):
        self.power = power
        self.snr_db = snr_db
        self.rho = rho
        self.sigma_x2 = sigma_x2
        self.params = params
        self.search = search
        self.conditional = conditional

    def fit(self, X, y=None):
        X = self._fit_source(X)
        self.model_ = SourceModel.from_correlation(X.shape[1], min(self.rho_, 1.0), self.sigma_x2_)
        if self.params is not None:
            if self.params.M != X.shape[1]:
                raise ValueError(f"params are for M={self.params.M}, X has {X.shape[1]} columns")
            self.params_ = self.params
            if self.params_.beta is None:
                self.params_ = self.params_.with_wiener_beta(self.sigma_x2_, self.sigma_n2_)
            self.report_ = None
        else:
            if X.shape[1] != 3:
                raise ValueError("parameter optimisation needs exactly three sources; pass params otherwise")
            if self.rho_ >= 1.0:
                raise ValueError("cannot optimise for fully correlated sources")
            cfg = self.search or analysis.SearchConfig(P=self.power)
            self.params_, self.report_ = analysis.optimize_m3(self.model_, bounds.from_db(self.snr_db), cfg)
        return self

    def transform(self, X):
        X = self._check_X(X)
        return codec.encode(X, self.params_)

    def predict(self, z):
        check_is_fitted(self)
        z = np.asarray(z, dtype=float).reshape(-1)
        q_hat, xm = codec.decode_sequential(z, self.params_, self.rho_, sigma_x2=self.sigma_x2_)
        return codec.reconstruct(q_hat, xm, self.params_, self.rho_, model=self.model_, sigma_n2=self.sigma_n2_,
                                 conditional=self.conditional)
