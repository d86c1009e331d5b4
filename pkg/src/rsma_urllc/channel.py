"""Geometry, pilot training, precoders and the ring-averaged expectations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import integrate

from .config import SystemConfig

FADING_MOMENT2 = 1.0  # second moment of the unit-variance Rayleigh fading


class DegenerateChannelError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class UserGeometry:
    distances: np.ndarray
    kappas: np.ndarray


@dataclass(frozen=True)
class ChannelRealization:
    true_gains: np.ndarray   # (U, N_R, N_T)
    est_gains: np.ndarray    # (U, N_R, N_T)
    ceq: np.ndarray          # (U,)
    pilot_len: int
    pilot_power: float


@dataclass(frozen=True)
class PrecoderSet:
    common: np.ndarray       # (N_T,)
    private: np.ndarray      # (N_T, U)
    theta: float
    xi: np.ndarray
    pi: np.ndarray
    fading_moment2: float = FADING_MOMENT2


def path_gain(distance, wavelength: float, height: float = 0.0):
    """Free-space large-scale gain [lambda / (4 pi d)]^2 with d the slant range."""
    d2 = np.asarray(distance, dtype=float) ** 2 + height ** 2
    return wavelength ** 2 / ((4 * np.pi) ** 2 * d2)


def sample_geometry(config: SystemConfig, rng: np.random.Generator,
                    num_users: Optional[int] = None) -> UserGeometry:
    """Users uniform over the ring: density 2r / (R_max^2 - R_min^2)."""
    U = config.num_users if num_users is None else num_users
    a2, b2 = config.ring_inner_m ** 2, config.ring_outer_m ** 2
    d = np.sqrt(a2 + (b2 - a2) * rng.random(U))
    return geometry_from_distances(config, d)


def geometry_from_distances(config: SystemConfig, distances) -> UserGeometry:
    d = np.asarray(distances, dtype=float)
    return UserGeometry(d, path_gain(d, config.wavelength_m, config.bs_height_m))


def ceq(kappa, n_pilot, pilot_power):
    """Channel estimation quality sqrt(N_p rho_p) kappa / (1 + N_p rho_p kappa)."""
    x = n_pilot * pilot_power
    kappa = np.asarray(kappa, dtype=float)
    return np.sqrt(x) * kappa / (1.0 + x * kappa)


def mmse_coefficients(kappa, n_pilot, pilot_power):
    """Weights (a, b) of the estimate a*g + b*n."""
    x = n_pilot * pilot_power
    kappa = np.asarray(kappa, dtype=float)
    a = x * kappa / (1.0 + x * kappa)
    b = np.sqrt(x) * kappa / (1.0 + x * kappa)
    return a, b


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular complex Gaussian with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def pilot_train(geometry: UserGeometry, n_tx: int, rx_antennas: int, n_pilot: int,
                pilot_power: float, rng: np.random.Generator) -> ChannelRealization:
    """Draw Rayleigh channels and their MMSE estimates from de-spread pilots."""
    if n_pilot <= rx_antennas:
        raise ValueError(f"n_pilot={n_pilot} must exceed rx_antennas={rx_antennas}")
    kap = geometry.kappas
    U = kap.size
    g = np.sqrt(kap)[:, None, None] * crandn(rng, (U, rx_antennas, n_tx))
    noise = crandn(rng, (U, rx_antennas, n_tx))
    a, b = mmse_coefficients(kap, n_pilot, pilot_power)
    est = a[:, None, None] * g + b[:, None, None] * noise
    return ChannelRealization(g, est, ceq(kap, n_pilot, pilot_power), n_pilot, pilot_power)


def theta_norm(n_tx: int, rx_antennas: int, n_pilot: int, pilot_power: float) -> float:
    """Private precoder normalization sqrt((N_T-N_R) x / (N_R (x+1))), x = N_p rho_p."""
    x = n_pilot * pilot_power
    return float(np.sqrt((n_tx - rx_antennas) * x / (rx_antennas * (x + 1.0))))


def xi_weights(ceqs, n_tx: int, pi=None) -> np.ndarray:
    """Common-precoder weights 1/sqrt(N_T sum_k pi_u(1-w_u^2) / (pi_k(1-w_k^2)))."""
    w2 = 1.0 - np.asarray(ceqs, dtype=float) ** 2
    q = w2 if pi is None else w2 * np.asarray(pi, dtype=float)
    if np.any(q <= 0):
        # zero common power makes every pi ratio 0/0; take them as 1
        q = w2
    ratios = q[:, None] / q[None, :]
    return 1.0 / np.sqrt(n_tx * ratios.sum(axis=1))


def zf_precoder(z: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """scale * Z^* (Z^T Z^*)^-1 for Z of shape (..., N_T, U)."""
    zc = np.conj(z)
    gram = np.swapaxes(z, -1, -2) @ zc
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise DegenerateChannelError("singular Z^T Z^*") from exc
    if not np.all(np.isfinite(inv)):
        raise DegenerateChannelError("singular Z^T Z^*")
    return scale * (zc @ inv)


def build_precoders(realization: ChannelRealization, geometry: UserGeometry, powers,
                    n_tx: int, random_z: bool = False,
                    rng: Optional[np.random.Generator] = None) -> PrecoderSet:
    """ZF private precoders, the common precoder and their normalizations.

    ``powers`` is (power_common, power_private[U]). With ``random_z`` the ZF
    matrix is built from an i.i.d. CN(0,1) matrix scaled by sqrt(N_T - N_R);
    otherwise from the stacked first-antenna channel estimates.
    """
    p_c, p_p = powers
    p_p = np.asarray(p_p, dtype=float)
    U, n_rx, nt = realization.est_gains.shape
    if nt != n_tx:
        raise ValueError("realization antenna count differs from n_tx")
    if n_tx <= U * n_rx:
        raise ValueError(f"n_tx={n_tx} must exceed U*N_R={U * n_rx}")
    if random_z:
        rng = rng if rng is not None else np.random.default_rng()
        z = crandn(rng, (n_tx, U))
        w_p = zf_precoder(z, np.sqrt(n_tx - n_rx))
    else:
        z = realization.est_gains[:, 0, :].T
        w_p = zf_precoder(z)
    g0 = realization.true_gains[:, 0, :]
    eff = np.abs(np.einsum("un,nu->u", g0, w_p)) ** 2
    pi_val = p_c / (np.sum(p_p * eff) + 1.0)
    pi = np.full(U, pi_val)
    xi = xi_weights(realization.ceq, n_tx, pi if p_c > 0 else None)
    w_c = np.conj(realization.est_gains[:, 0, :]).T @ xi
    theta = theta_norm(n_tx, n_rx, realization.pilot_len, realization.pilot_power)
    return PrecoderSet(w_c, w_p, theta, xi, pi)


def precoder_power_oracle(config: SystemConfig, n_tx: int, n_pilot: int, draws: int,
                          rng: np.random.Generator, kappa: float = 1.0, batch: int = 500) -> float:
    """Monte Carlo mean of Tr(W^H W) for ZF on estimated channels.

    N_R users with gain ``kappa`` are trained with ``n_pilot`` pilots; W is
    built from their first-antenna estimates.
    """
    n_rx = config.rx_antennas
    a, b = mmse_coefficients(kappa, n_pilot, config.pilot_power)
    total, done = 0.0, 0
    while done < draws:
        m = min(batch, draws - done)
        g = np.sqrt(kappa) * crandn(rng, (m, n_tx, n_rx))
        z = a * g + b * crandn(rng, (m, n_tx, n_rx))
        w = zf_precoder(z)
        total += float(np.sum(np.abs(w) ** 2))
        done += m
    return total / draws


# ring-averaged expectations of kappa-functions

_INTEGRANDS = {
    1: lambda k, x: k ** 2 / (1 + x * k) ** 2,
    2: lambda k, x: k ** 1.5 / (1 + x * k),
    3: lambda k, x: k ** 3 / (1 + x * k) ** 2,
    4: lambda k, x: k ** 4 / (1 + x * k) ** 2,
    5: lambda k, x: k ** 2 / (1 + x * k),
}
REGIMES = ("large", "small", "unity")


def ring_average(which: int, config: SystemConfig, n_pilot: int, pilot_power: float,
              regime: str = "small") -> float:
    """Closed-form ring average of the requested kappa-function.

    which: 1..5 selects E[k^2/(1+xk)^2], E[k^1.5/(1+xk)], E[k^3/(1+xk)^2],
    E[k^4/(1+xk)^2], E[k^2/(1+xk)] with x = n_pilot * pilot_power.
    ``regime`` picks the branch (x*kappa large, small or near one) used for
    3..5; 1 and 2 ignore it.
    """
    if which not in _INTEGRANDS:
        raise ValueError("which must be in 1..5")
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}")
    lam = config.wavelength_m
    a, b, h = config.ring_inner_m, config.ring_outer_m, config.bs_height_m
    x = n_pilot * pilot_power
    fp2 = (4 * np.pi) ** 2
    if a == b:
        k = float(path_gain(a, lam, h))
        return float(_INTEGRANDS[which](k, x))
    area = b * b - a * a
    if which in (1, 2):
        x_min = lam ** 2 / (fp2 * (b * b + h * h) + x * lam ** 2)
        x_max = lam ** 2 / (fp2 * (a * a + h * h) + x * lam ** 2)
        if which == 1:
            return float(lam ** 2 * (x_max - x_min) / (fp2 * area))
        return float(lam ** 2 * np.log(x_max / x_min) / (fp2 * area))
    ratio4 = lam ** 6 * (b * b + a * a) / ((4 * np.pi) ** 6 * b ** 4 * a ** 4)
    inv6 = lam ** 8 / ((4 * np.pi) ** 8 * area) * (1 / a ** 6 - 1 / b ** 6)
    if which == 3:
        if regime == "large":
            return float(lam ** 2 * np.log(b / a) / (8 * (np.pi * x) ** 2 * area))
        return float(ratio4 / (2 if regime == "small" else 8))
    if which == 4:
        if regime == "large":
            return float(ratio4 / x ** 3)
        return float(inv6 / (3 if regime == "small" else 12))
    if regime == "large":
        return float(lam ** 2 * np.log(b / a) / (8 * np.pi ** 2 * x * area))
    return float(ratio4 / (x ** 3 * (1 if regime == "small" else 2)))


def ring_average_oracle(which: int, config: SystemConfig, n_pilot: int, pilot_power: float) -> float:
    """Adaptive quadrature of E[f(kappa(r))] under the ring density, height included."""
    if which not in _INTEGRANDS:
        raise ValueError("which must be in 1..5")
    lam = config.wavelength_m
    a, b, h = config.ring_inner_m, config.ring_outer_m, config.bs_height_m
    x = n_pilot * pilot_power
    f = _INTEGRANDS[which]
    if a == b:
        return float(f(float(path_gain(a, lam, h)), x))
    # scale out the magnitude so the absolute tolerance is meaningless
    k_ref = float(path_gain(b, lam, h))
    ref = f(k_ref, x)
    val, err = integrate.quad(
        lambda r: f(float(path_gain(r, lam, h)), x) / ref * 2 * r / (b * b - a * a),
        a, b, epsabs=0.0, epsrel=1e-11, limit=200,
    )
    return float(val * ref)


def median_kappa(config: SystemConfig) -> float:
    """Large-scale gain at the median user distance of the ring."""
    r2 = 0.5 * (config.ring_inner_m ** 2 + config.ring_outer_m ** 2)
    return float(path_gain(np.sqrt(r2), config.wavelength_m, config.bs_height_m))


def regime_for(config: SystemConfig, n_pilot: int, pilot_power: float) -> str:
    v = n_pilot * pilot_power * median_kappa(config)
    if v >= 100:
        return "large"
    if v <= 0.01:
        return "small"
    return "unity"
