"""Closed-form SINRs and a Monte Carlo variance oracle."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import channel
from .config import SystemConfig


@dataclass(frozen=True)
class SinrProfile:
    common: np.ndarray
    private: np.ndarray
    private_fallback: np.ndarray
    psi: float


@dataclass(frozen=True)
class OracleEstimate:
    """Monte Carlo SINR estimates with 95% confidence half-widths."""
    profile: SinrProfile
    ci_common: np.ndarray
    ci_private: np.ndarray
    ci_private_fallback: np.ndarray
    var_common: np.ndarray        # E|g w_c|^2 * rho_c per user
    ci_var_common: np.ndarray
    trials: int


def psi(config: SystemConfig, n_tx: int, n_pilot: int, pilot_power: float, xi,
        regime: Optional[str] = None, pis: Optional[dict] = None) -> float:
    """Aggregate precoding and estimation gain of the closed-form SINRs.

    ``pis`` may override the ring averages (keys 1..5), e.g. with oracle values.
    The cross term runs over ordered pairs k != v.
    """
    xi = np.asarray(xi, dtype=float)
    if regime is None:
        regime = channel.regime_for(config, n_pilot, pilot_power)
    p = {w: channel.ring_average(w, config, n_pilot, pilot_power, regime) for w in range(1, 6)}
    if pis:
        p.update(pis)
    h2 = channel.FADING_MOMENT2
    x = n_pilot * pilot_power
    s2 = float(np.sum(xi ** 2))
    cross = float(np.sum(xi) ** 2 - s2)
    own = h2 * x * (p[3] + (n_tx - 1) * p[4]) + n_tx * p[2]
    mixed = h2 * x * (p[1] ** 2 + (n_tx - 1) * p[5] ** 2) + n_tx * p[1] ** 2
    return float(n_tx * h2 * x * (s2 * own + cross * mixed))


def psi_for(config: SystemConfig, kappas, n_tx: int, n_pilot: Optional[int] = None,
            pilot_power: Optional[float] = None) -> float:
    """Psi with xi taken from the ceq of the given users (the pi ratios are 1)."""
    n_pilot = n_tx if n_pilot is None else n_pilot
    pilot_power = config.pilot_power if pilot_power is None else pilot_power
    xi = channel.xi_weights(channel.ceq(kappas, n_pilot, pilot_power), n_tx)
    return psi(config, n_tx, n_pilot, pilot_power, xi)


def closed_form_sinrs(powers, kappas, psi_value: float, approx: bool = False) -> SinrProfile:
    """Common, private and fallback SINRs for powers (p_c, p_private[U]).

    The exact forms keep the unit noise term; ``approx`` returns the power
    ratios obtained when kappa*Psi*sum(p) dominates it.
    """
    p_c, p_p = powers
    p_p = np.asarray(p_p, dtype=float)
    s = np.asarray(kappas, dtype=float) * psi_value
    tot = p_p.sum()
    others = tot - p_p
    if approx:
        with np.errstate(divide="ignore", invalid="ignore"):
            common = np.full(p_p.shape, p_c / tot)
            private = p_p / others
            fallback = p_p / (others + p_c)
    else:
        common = p_c * s / (s * tot + 1.0)
        private = p_p * s / (s * others + 1.0)
        fallback = p_p * s / (s * others + p_c * s + 1.0)
    return SinrProfile(common, private, fallback, float(psi_value))


def _batch_stats(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean over axis 0 and 95% half-width from batch means."""
    m = x.mean(axis=0)
    half = 1.96 * x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
    return m, half


def sinr_oracle(config: SystemConfig, n_tx: int, powers, trials: int,
                rng: np.random.Generator, geometry: Optional[channel.UserGeometry] = None,
                n_pilot: Optional[int] = None, random_z: bool = False,
                batch: int = 256, n_batches: int = 40) -> OracleEstimate:
    """Monte Carlo of the received-signal variances behind the SINR definitions.

    Geometry is held fixed (sampled once when not given); fading, pilot noise
    and precoders are redrawn every trial. Each SINR is the ratio of the
    empirical signal variance to the empirical interference variance plus the
    unit noise, averaged over the receive antennas.
    """
    if trials < 10_000:
        raise ValueError("trials must be >= 1e4")
    p_c, p_p = powers
    p_p = np.asarray(p_p, dtype=float)
    if geometry is None:
        geometry = channel.sample_geometry(config, rng)
    kap = geometry.kappas
    U = kap.size
    n_rx = config.rx_antennas
    n_pilot = n_tx if n_pilot is None else n_pilot
    if n_tx <= U * n_rx:
        raise ValueError("n_tx must exceed U*N_R")
    a, b = channel.mmse_coefficients(kap, n_pilot, config.pilot_power)
    cq = channel.ceq(kap, n_pilot, config.pilot_power)
    xi = channel.xi_weights(cq, n_tx)

    # accumulate per-trial signal/interference energies, grouped into batches
    n_batches = max(2, min(n_batches, trials // batch))
    per_batch = int(np.ceil(trials / n_batches))
    sig_c = np.zeros((n_batches, U))
    sig_p = np.zeros((n_batches, U))
    int_p = np.zeros((n_batches, U))
    done = 0
    for bi in range(n_batches):
        nb = min(per_batch, trials - done)
        if nb <= 0:
            sig_c, sig_p, int_p = sig_c[:bi], sig_p[:bi], int_p[:bi]
            break
        acc_c = np.zeros(U)
        acc_p = np.zeros(U)
        acc_i = np.zeros(U)
        left = nb
        while left > 0:
            m = min(batch, left)
            g = np.sqrt(kap)[None, :, None, None] * channel.crandn(rng, (m, U, n_rx, n_tx))
            nz = channel.crandn(rng, (m, U, n_tx))
            est0 = a[None, :, None] * g[:, :, 0, :] + b[None, :, None] * nz
            if random_z:
                z = channel.crandn(rng, (m, n_tx, U))
                w_p = channel.zf_precoder(z, np.sqrt(n_tx - n_rx))
            else:
                w_p = channel.zf_precoder(np.swapaxes(est0, 1, 2))
            w_c = np.einsum("mun,u->mn", np.conj(est0), xi)
            # received amplitudes at every antenna of every user
            yc = np.matmul(g, w_c[:, None, :, None])[..., 0]       # (m, U, N_R)
            yp = np.matmul(g, w_p[:, None])                        # (m, U, N_R, U)
            e_p = np.abs(yp) ** 2 * p_p[None, None, None, :]
            own = np.einsum("munu->mun", e_p)
            acc_c += (p_c * np.abs(yc) ** 2).mean(axis=2).sum(axis=0)
            acc_p += own.mean(axis=2).sum(axis=0)
            acc_i += (e_p.sum(axis=3) - own).mean(axis=2).sum(axis=0)
            left -= m
        sig_c[bi] = acc_c / nb
        sig_p[bi] = acc_p / nb
        int_p[bi] = acc_i / nb
        done += nb

    mc, hc = _batch_stats(sig_c)
    mp, hp = _batch_stats(sig_p)
    mi, hi = _batch_stats(int_p)
    den_c = mp + mi + 1.0
    den_p = mi + 1.0
    den_f = mi + mc + 1.0
    common = mc / den_c
    private = mp / den_p
    fallback = mp / den_f
    # first-order error propagation for the ratios (terms treated independently)
    ci_c = common * np.sqrt((hc / np.maximum(mc, 1e-300)) ** 2 + ((hp + hi) / den_c) ** 2)
    ci_p = private * np.sqrt((hp / np.maximum(mp, 1e-300)) ** 2 + (hi / den_p) ** 2)
    ci_f = fallback * np.sqrt((hp / np.maximum(mp, 1e-300)) ** 2 + ((hi + hc) / den_f) ** 2)
    prof = SinrProfile(common, private, fallback, float("nan"))
    return OracleEstimate(prof, ci_c, ci_p, ci_f, mc, hc, int(done))


def exact_common_gain(config: SystemConfig, kappas, n_tx: int, n_pilot: Optional[int] = None):
    """Analytic E|g_u w_c|^2 / kappa_u, averaged over receive antennas.

    Derived from the estimator statistics (not the closed-form Psi); used to
    cross-check the oracle itself. Only the first antenna of each user enters
    w_c, so the coherent term appears on one antenna in N_R.
    """
    kap = np.asarray(kappas, dtype=float)
    n_pilot = n_tx if n_pilot is None else n_pilot
    a, b = channel.mmse_coefficients(kap, n_pilot, config.pilot_power)
    xi = channel.xi_weights(channel.ceq(kap, n_pilot, config.pilot_power), n_tx)
    v = a * a * kap + b * b
    return n_tx * (np.sum(xi ** 2 * v) + n_tx * xi ** 2 * a * a * kap / config.rx_antennas)
