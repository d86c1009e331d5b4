"""Finite-blocklength coding kernel: Gaussian tail, dispersion, rate and error probability.

All functions broadcast over numpy arrays. SINR vectors carry the receive
antenna index on the last axis.
"""
import numpy as np
from scipy import special

LN2 = np.log(2.0)


class DegenerateError(ValueError):
    """Raised when every SINR is zero and the dispersion sum vanishes."""


def q_tail(x):
    """Standard normal tail probability P[N(0,1) > x]."""
    # ndtr keeps relative accuracy deep in the lower tail, so Q(x) = ndtr(-x)
    return special.ndtr(-np.asarray(x, dtype=float))


def q_tail_inv(p):
    """Inverse of :func:`q_tail` on (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)) or np.any(np.isnan(p)):
        raise ValueError("q_tail_inv needs 0 < p < 1")
    x = -special.ndtri(p)
    # one Newton polish on log Q keeps relative accuracy in both tails
    q = q_tail(x)
    dens = np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
    x = x + (q - p) / dens
    return x


def dispersion(gamma):
    """Channel dispersion 1 - (1 + gamma)^-2."""
    gamma = np.asarray(gamma, dtype=float)
    # -expm1(-2 log1p(gamma)) is accurate near 0 and stays monotone near 1
    return -np.expm1(-2.0 * np.log1p(gamma))


def _as_sinrs(sinrs):
    s = np.asarray(sinrs, dtype=float)
    if s.ndim == 0:
        s = s[None]
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise ValueError("SINRs must be finite and >= 0")
    return s


def g_metric(n_data, sinrs, rate):
    """Normalized distance between the Shannon sum and the rate.

    g = ln2 * (sum_j log2(1+G_j) - R) / sum_j sqrt(V(G_j) / N_d)
    """
    s = _as_sinrs(sinrs)
    n_data = np.asarray(n_data, dtype=float)
    num = np.sum(np.log1p(s), axis=-1) - LN2 * np.asarray(rate, dtype=float)
    den = np.sum(np.sqrt(dispersion(s)), axis=-1) / np.sqrt(n_data)
    if np.any(den == 0):
        raise DegenerateError("all SINRs are zero; g is undefined")
    return num / den


def dep(n_data, sinrs, rate):
    """Decoding error probability Q(g)."""
    return q_tail(g_metric(n_data, sinrs, rate))


def achievable_rate(n_data, sinrs, eps):
    """Finite-blocklength rate (bits/s/Hz) at error probability ``eps``.

    Not clamped at zero; negative values mean the blocklength is too short.
    """
    s = _as_sinrs(sinrs)
    qinv = q_tail_inv(eps)
    n_data = np.asarray(n_data, dtype=float)
    shannon = np.sum(np.log1p(s), axis=-1) / LN2
    penalty = np.sum(np.sqrt(dispersion(s)), axis=-1) / np.sqrt(n_data) * qinv / LN2
    return shannon - penalty


# scalar-SINR helpers: the same SINR on every one of n_rx antennas

def rate_scalar(gamma, n_rx, n_data, qinv):
    """n_rx * [log2(1+G) - sqrt(V(G)/N_d) * qinv / ln2], vectorized over gamma."""
    gamma = np.asarray(gamma, dtype=float)
    return n_rx * (np.log1p(gamma) - np.sqrt(dispersion(gamma) / n_data) * qinv) / LN2


def dep_scalar(gamma, n_rx, n_data, rate):
    """DEP with n_rx identical SINRs; zero SINR with positive rate gives 1."""
    gamma = np.asarray(gamma, dtype=float)
    rate = np.asarray(rate, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = n_rx * np.log1p(gamma) - LN2 * rate
        den = n_rx * np.sqrt(dispersion(gamma) / n_data)
        g = num / den
    g = np.where(den > 0, g, np.where(rate > 0, -np.inf, np.inf))
    return q_tail(g)
