"""Joint power allocation, rate splitting and antenna selection.

Powers inside the solvers are normalized by the total budget (p = rho / rho_tot),
so every SINR reads p_s / (sum_I p + 1/S) with S = kappa * Psi * rho_tot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import channel, convex, fbl, sinr
from .config import EtrReport, ResourceAllocation, SystemConfig, validate

LN2 = fbl.LN2
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
DEP_ACTIVITY_TOL = 1e-2


class InfeasibleError(RuntimeError):
    """No allocation meets the rate floors and error-probability bounds."""

    def __init__(self, msg, deficit: float = float("nan")):
        super().__init__(msg)
        self.deficit = deficit


# ---------------------------------------------------------------- rate step

def _rate_objective(rate, gamma, n_rx, n_data):
    return rate * (1.0 - fbl.dep_scalar(gamma, n_rx, n_data, rate))


def _rate_objective_slope(rate, gamma, n_rx, n_data):
    """d/dR of R (1 - eps(R)) for n_rx identical SINRs."""
    den = n_rx * np.sqrt(fbl.dispersion(gamma) / n_data)
    g = (n_rx * np.log1p(gamma) - LN2 * rate) / den
    eps = fbl.q_tail(g)
    dens = np.exp(-0.5 * g * g) / np.sqrt(2 * np.pi)
    # d eps / dR = phi(g) * ln2 / den
    return 1.0 - eps - rate * dens * LN2 / den


def golden_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12,
               max_iter: int = 200) -> float:
    """Maximizer of a unimodal scalar function on [lo, hi]."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    cands = [(f(a), a), (fc, c), (fd, d), (f(b), b)]
    return max(cands)[1]


def rate_cap_private(config: SystemConfig, sinrs, n_data: int) -> np.ndarray:
    """Largest private rate with error probability at the bound, floored at 0."""
    gam = np.asarray(getattr(sinrs, "private", sinrs), dtype=float)
    qinv = fbl.q_tail_inv(config.dep_bound)
    return np.maximum(fbl.rate_scalar(gam, config.rx_antennas, n_data, qinv), 0.0)


def _maximize_capped(gamma: float, cap: float, n_rx: int, n_data: int) -> float:
    """argmax of R(1 - eps(R)) on (0, cap]; the objective is concave there."""
    if cap <= 0 or gamma <= 0:
        return 0.0
    if _rate_objective_slope(cap, gamma, n_rx, n_data) >= 0:
        return float(cap)
    r = golden_max(lambda x: float(_rate_objective(x, gamma, n_rx, n_data)), 0.0, cap)
    # Newton polish on the stationarity condition
    for _ in range(20):
        h = 1e-6 * max(r, 1e-6)
        s0 = _rate_objective_slope(r, gamma, n_rx, n_data)
        s1 = _rate_objective_slope(r + h, gamma, n_rx, n_data)
        curv = (s1 - s0) / h
        if curv >= 0:
            break
        step = -s0 / curv
        rn = min(max(r + step, 0.0), cap)
        if abs(rn - r) < 1e-13 * max(1.0, r):
            r = rn
            break
        if _rate_objective(rn, gamma, n_rx, n_data) < _rate_objective(r, gamma, n_rx, n_data):
            break
        r = rn
    return float(r)


def solve_private_rates(config: SystemConfig, sinrs, n_data: int) -> np.ndarray:
    """Per-user maximizer of R (1 - eps_p(R)) on (0, R_cap]."""
    gam = np.asarray(getattr(sinrs, "private", sinrs), dtype=float)
    caps = rate_cap_private(config, gam, n_data)
    return np.array([
        _maximize_capped(g, c, config.rx_antennas, n_data) for g, c in zip(gam, caps)
    ])


def common_cap(config: SystemConfig, common_sinrs, n_data: int) -> float:
    qinv = fbl.q_tail_inv(config.dep_bound)
    caps = fbl.rate_scalar(np.asarray(common_sinrs, dtype=float), config.rx_antennas, n_data, qinv)
    return float(max(np.min(caps), 0.0))


def common_floors(config: SystemConfig, private_rates) -> np.ndarray:
    return np.maximum(config.min_rate - np.asarray(private_rates, dtype=float), 0.0)


def _common_objective(rc, gam_c, floors, best, n_rx, n_data):
    eps = fbl.dep_scalar(gam_c, n_rx, n_data, rc)
    shares = floors.copy()
    shares[best] = rc - (floors.sum() - floors[best])
    return float(np.sum(shares * (1.0 - eps)))


def solve_common_total(config: SystemConfig, sinrs, private_rates, n_data: int) -> float:
    """Common rate maximizing the split objective on (lower, R_c cap].

    Users other than the strongest common receiver hold their floor shares;
    the strongest takes the remainder. Returns 0 when the cap is not positive.
    Raises InfeasibleError when the cap cannot cover the floors.
    """
    gam_c = np.asarray(getattr(sinrs, "common", sinrs), dtype=float)
    cap = common_cap(config, gam_c, n_data)
    floors = common_floors(config, private_rates)
    need = floors.sum()
    if cap <= 0:
        if need > 0:
            raise InfeasibleError("common stream cannot carry the rate floors", need)
        return 0.0
    if need > cap * (1 + 1e-12):
        raise InfeasibleError(f"common cap {cap:.6g} below floor demand {need:.6g}", need - cap)
    best = int(np.argmax(gam_c))
    n_rx = config.rx_antennas
    f = lambda rc: _common_objective(rc, gam_c, floors, best, n_rx, n_data)
    # slope test at the cap, as for the private rates
    h = 1e-7 * cap
    if f(cap) >= f(cap - h):
        return float(cap)
    return float(golden_max(f, need, cap))


def allocate_common_rates(config: SystemConfig, rate_common: float, sinrs, private_rates) -> np.ndarray:
    """Split the common rate: floors to everyone, remainder to the strongest receiver.

    Ties in the common SINR go to the lowest index.
    """
    gam_c = np.asarray(getattr(sinrs, "common", sinrs), dtype=float)
    floors = common_floors(config, private_rates)
    best = int(np.argmax(gam_c))
    rest = floors.sum() - floors[best]
    share = rate_common - rest
    if share < floors[best] - 1e-9 * max(1.0, rate_common):
        raise InfeasibleError(
            f"common rate {rate_common:.6g} short of floors by {floors.sum() - rate_common:.6g}",
            floors.sum() - rate_common,
        )
    out = floors.copy()
    out[best] = max(share, 0.0)
    return out


def etr_total(config: SystemConfig, alloc: ResourceAllocation, sinrs: sinr.SinrProfile,
              exact: bool = False) -> EtrReport:
    """Per-user error probabilities and effective rates of an allocation.

    ``exact`` accounts for a failed common decode: the private stream is then
    decoded against the common interference (fallback SINR).
    """
    n_rx, n_d = config.rx_antennas, alloc.n_data
    eps_c = fbl.dep_scalar(sinrs.common, n_rx, n_d, alloc.rate_common_total)
    eps_p = fbl.dep_scalar(sinrs.private, n_rx, n_d, alloc.rate_private)
    if alloc.rate_common_total <= 0:
        eps_c = np.zeros_like(eps_c)
    eps_p = np.where(alloc.rate_private > 0, eps_p, 0.0)
    etr_c = alloc.rate_common_user * (1.0 - eps_c)
    if exact:
        eps_f = fbl.dep_scalar(sinrs.private_fallback, n_rx, n_d, alloc.rate_private)
        eps_f = np.where(alloc.rate_private > 0, eps_f, 0.0)
        etr_p = alloc.rate_private * (1.0 - eps_c * eps_f - (1.0 - eps_c) * eps_p)
    else:
        etr_p = alloc.rate_private * (1.0 - eps_p)
    return EtrReport(
        dep_common=eps_c, dep_private=eps_p, etr_common=etr_c, etr_private=etr_p,
        total_etr=float(np.sum(etr_c) + np.sum(etr_p)),
        slack_dep_common=config.dep_bound - eps_c,
        slack_dep_private=config.dep_bound - eps_p,
        slack_rate_floor=alloc.rate_common_user + alloc.rate_private - config.min_rate,
    )


# ------------------------------------------------------------- link models

@dataclass(frozen=True)
class LinkModel:
    """Decoding links of one access scheme at a fixed antenna count.

    Each link decodes message ``message[l]`` from power ``signal[l]`` against
    the powers flagged in ``interf[l]`` plus noise ``noise[l]``. With
    ``split_floors`` message 0 is a common stream whose shares top up the
    private rates (messages 1..U) to the floor; otherwise every message has
    its own floor.
    """
    n_pow: int
    signal: np.ndarray
    interf: np.ndarray
    noise: np.ndarray
    message: np.ndarray
    n_msg: int
    split_floors: bool
    n_rx: int
    n_data: int
    qinv: float
    min_rate: float
    fixed_zero: Tuple[int, ...] = ()

    def sinrs(self, p: np.ndarray) -> np.ndarray:
        return p[self.signal] / (self.interf @ p + self.noise)

    def link_caps(self, p: np.ndarray) -> np.ndarray:
        return fbl.rate_scalar(self.sinrs(p), self.n_rx, self.n_data, self.qinv)

    def message_caps(self, p: np.ndarray) -> np.ndarray:
        caps = np.full(self.n_msg, np.inf)
        np.minimum.at(caps, self.message, self.link_caps(p))
        return caps

    def floor_margin(self, rates: np.ndarray) -> float:
        """Smallest slack of the rate floors for the given message rates."""
        r = np.maximum(rates, 0.0)
        if self.split_floors:
            need = np.maximum(self.min_rate - r[1:], 0.0).sum()
            return float(r[0] - need)
        return float(np.min(r - self.min_rate))

    def cap_objective(self, p: np.ndarray) -> Tuple[float, float]:
        """(sum of clipped message caps, floor margin) at powers p."""
        caps = np.maximum(self.message_caps(p), 0.0)
        return float(caps.sum()), self.floor_margin(caps)

    def cap_objective_batch(self, P: np.ndarray, lifted: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """cap_objective for each row of P.

        ``lifted`` measures the floor margin on unclipped caps, as the SCA
        surrogate sees it; negative caps of idle streams then count.
        """
        gam = P[:, self.signal] / (P @ self.interf.T + self.noise)
        lc = fbl.rate_scalar(gam, self.n_rx, self.n_data, self.qinv)
        caps = np.full((P.shape[0], self.n_msg), np.inf)
        for m in range(self.n_msg):
            caps[:, m] = lc[:, self.message == m].min(axis=1)
        raw = caps
        caps = np.maximum(caps, 0.0)
        fl = raw if lifted else caps
        if self.split_floors:
            margin = fl[:, 0] - np.maximum(self.min_rate - fl[:, 1:], 0.0).sum(axis=1)
        else:
            margin = (fl - self.min_rate).min(axis=1)
        return caps.sum(axis=1), margin


def rsma_model(config: SystemConfig, gains: np.ndarray, n_data: int, common: bool = True) -> LinkModel:
    """RSMA links; ``common=False`` gives the SDMA restriction."""
    U = gains.size
    qinv = float(fbl.q_tail_inv(config.dep_bound))
    noise = 1.0 / gains
    if not common:
        interf = np.ones((U, U)) - np.eye(U)
        return LinkModel(U, np.arange(U), interf, noise.copy(), np.arange(U), U, False,
                         config.rx_antennas, n_data, qinv, config.min_rate)
    n_pow = U + 1
    sig = np.concatenate((np.zeros(U, dtype=int), np.arange(1, U + 1)))
    interf = np.zeros((2 * U, n_pow))
    interf[:U, 1:] = 1.0
    interf[U:, 1:] = np.ones((U, U)) - np.eye(U)
    msg = np.concatenate((np.zeros(U, dtype=int), np.arange(1, U + 1)))
    return LinkModel(n_pow, sig, interf, np.concatenate((noise, noise)), msg, U + 1, True,
                     config.rx_antennas, n_data, qinv, config.min_rate)


def sinr_for_rate(rate: float, n_rx: int, n_data: int, qinv: float) -> float:
    """Smallest SINR whose capped rate reaches ``rate`` (bisection, rate >= 0)."""
    lo, hi = 0.0, 1.0
    while fbl.rate_scalar(hi, n_rx, n_data, qinv) < rate:
        hi *= 4.0
        if hi > 1e300:
            return np.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fbl.rate_scalar(mid, n_rx, n_data, qinv) < rate:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return hi


OFF_POWER = 1e-12  # stand-in for a switched-off stream in a starting point
START_MARGIN = 1e-6  # floor slack kept by starting points so the surrogate starts inside
ZOOM_ROUNDS, ZOOM_POINTS = 3, 65


def structured_starts(model: LinkModel, grid: int = 256) -> List[np.ndarray]:
    """Starting powers that meet the floors cheaply and give the rest to one user.

    Split floors: the common stream alone, and the common stream sharing
    power with one user's private stream, the share picked on a grid and
    refined on finer grids around the best point.
    Direct floors: every other message gets the least power that reaches the
    floor SINR (a linear system) and one message takes what is left.
    """
    out = []
    P = model.n_pow
    if model.split_floors:
        # common stream only: private streams off, the common rate carries every floor
        solo = np.full(P, OFF_POWER)
        solo[0] = 1.0 - OFF_POWER * (P - 1)
        solo *= 1.0 - 1e-9
        if model.cap_objective_batch(solo[None, :], lifted=True)[1][0] > START_MARGIN:
            out.append(solo)
        theta = (np.arange(1, grid) / grid)
        for k in range(1, P):
            def family(th):
                th = np.atleast_1d(th)
                Pm = np.full((th.size, P), OFF_POWER)
                Pm[:, 0] = th
                Pm[:, k] = 1.0 - th - OFF_POWER * (P - 2)
                return Pm * (1.0 - 1e-9)
            obj, margin = model.cap_objective_batch(family(theta), lifted=True)
            score = np.where(margin > START_MARGIN, obj, -np.inf)
            if not np.isfinite(score).any():
                continue
            i = int(np.argmax(score))
            th, best = theta[i], score[i]
            lo, hi = theta[max(i - 1, 0)], theta[min(i + 1, theta.size - 1)]
            # zoom in on the bracket with a few vectorized grids
            for _ in range(ZOOM_ROUNDS):
                ths = np.linspace(lo, hi, ZOOM_POINTS)
                o, mg = model.cap_objective_batch(family(ths), lifted=True)
                sc = np.where(mg > START_MARGIN, o, -np.inf)
                j = int(np.argmax(sc))
                if sc[j] > best:
                    th, best = ths[j], sc[j]
                step = ths[1] - ths[0]
                lo, hi = max(th - step, lo), min(th + step, hi)
            out.append(family(th)[0])
        return out
    g_star = sinr_for_rate(model.min_rate, model.n_rx, model.n_data, model.qinv)
    if not np.isfinite(g_star):
        return out
    # per message: shared interference row and the worst (largest) noise
    rows = np.zeros((P, P))
    worst = np.zeros(P)
    for mm in range(P):
        links = np.flatnonzero(model.message == mm)
        if not np.all(model.interf[links] == model.interf[links[0]]):
            return out
        rows[mm] = model.interf[links[0]]
        worst[mm] = model.noise[links].max()
    g_star *= 1.0 + 1e-7  # aim a hair above the floor so the margin is positive
    for k in range(P):
        # p_m = g* (I_m p + n_m) for m != k, and the budget is spent
        M = np.eye(P) - g_star * rows
        rhs = g_star * worst
        M[k] = 1.0
        rhs[k] = 1.0
        try:
            p = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            continue
        if np.all(p > 0):
            p = p * (1.0 - 1e-9)
            if model.cap_objective(p)[1] > 0:
                out.append(p)
    return out


def best_start(model: LinkModel, common: bool = True) -> np.ndarray:
    """Best of the equal split and the structured starts by the cap objective."""
    cands = [initial_powers(model.n_pow, model.split_floors)] + structured_starts(model)
    obj, margin = model.cap_objective_batch(np.array(cands))
    score = np.where(margin > 0, obj, -np.inf)
    if np.isfinite(score).any():
        return cands[int(np.argmax(score))]
    # nothing meets the floors: start from the smallest floor violation
    return cands[int(np.argmax(margin))]


# --------------------------------------------------------------- SCA step

LOG_POWER_FLOOR = -60.0  # powers below exp(-60) of the budget count as off


@dataclass
class ScaState:
    """Auxiliaries of the power subproblem at one accepted iterate.

    Per link: A (g-metric at the lifted rate), C (SINR) and E (interference
    plus noise). For RSMA the first U links are the common stream at each
    user and the last U the private streams; ``halves`` splits them into the
    common (A, C, E) and private (B, D, F) groups.
    """
    iteration: int
    powers: np.ndarray
    A: np.ndarray
    C: np.ndarray
    E: np.ndarray
    rates: np.ndarray
    objective: float

    def halves(self):
        U = self.C.size // 2
        return dict(A=self.A[:U], B=self.A[U:], C=self.C[:U], D=self.C[U:],
                    E=self.E[:U], F=self.E[U:])


class _LiftedSurrogate:
    """Convex restriction of the power subproblem around p_t, rates lifted.

    Variables x = [z (P), y (L), r (M), t (T), s] with z = log p and
    y = log SINR. The SINR bound y <= z_s - log(sum_I e^z + noise) is exact.
    The link rate is bounded below by tangents: log1p(e^y) is convex in y
    and sqrt(V) is concave in the SINR, so both tangents are conservative
    and the surrogate touches the true rate at p_t. t holds the common
    shares topping up private rates to the floor and s the floor margin;
    ``phase`` maximizes s instead of the rate sum.
    """

    def __init__(self, model: LinkModel, p_t: np.ndarray, phase: bool = False):
        self.m = model
        self.phase = phase
        P, L, M = model.n_pow, model.signal.size, model.n_msg
        T = (M - 1) if model.split_floors else 0
        self.P, self.L, self.M, self.T = P, L, M, T
        gam_t = model.sinrs(p_t)
        self.gam_t = gam_t
        self.y_t = np.log(gam_t)
        sv_t = np.sqrt(fbl.dispersion(gam_t))
        self.sp_t = np.log1p(gam_t)
        self.sig_t = gam_t / (1.0 + gam_t)
        self.sv_t = sv_t
        self.dsv_t = (1.0 + gam_t) ** -3 / sv_t
        self.k = model.n_rx / LN2
        self.kq = model.qinv / np.sqrt(model.n_data)

        self.iz = np.arange(P)
        self.iy = P + np.arange(L)
        self.ir = P + L + np.arange(M)
        self.it = P + L + M + np.arange(T)
        self.is_ = P + L + M + T
        n = self.n = self.is_ + 1

        A, b = [], []

        def row():
            r = np.zeros(n)
            A.append(r)
            return r

        self.r_budget = len(A)
        row(); b.append(0.0)
        for k in range(P):
            row()[k] = -1.0
            b.append(LOG_POWER_FLOOR)
        self.r_link = np.arange(len(A), len(A) + L)
        for l in range(L):
            r = row()
            r[self.iy[l]] = 1.0
            r[model.signal[l]] -= 1.0
            b.append(0.0)
        self.r_rate = np.arange(len(A), len(A) + L)
        for l in range(L):
            r = row()
            r[self.ir[model.message[l]]] = 1.0
            r[self.iy[l]] = -self.k * self.sig_t[l]
            b.append(-self.k * (self.sp_t[l] - self.sig_t[l] * self.y_t[l]
                                - self.kq * (sv_t[l] - self.dsv_t[l] * gam_t[l])))
        if model.split_floors:
            for u in range(T):
                r = row(); r[self.ir[u + 1]] = -1.0; r[self.it[u]] = -1.0
                b.append(model.min_rate)
                row()[self.it[u]] = -1.0
                b.append(0.0)
            r = row(); r[self.it] = 1.0; r[self.ir[0]] = -1.0; r[self.is_] = 1.0
            b.append(0.0)
        else:
            for mm in range(M):
                r = row(); r[self.ir[mm]] = -1.0; r[self.is_] = 1.0
                b.append(model.min_rate)
        if phase:
            row()[self.is_] = 1.0
            b.append(-10.0)
        else:
            row()[self.is_] = -1.0
            b.append(0.0)
        self.A = np.array(A)
        self.b = np.array(b)
        self.zeros = np.zeros_like(self.A)
        self.interf_mask = model.interf > 0

    def constraints(self, x):
        m = self.m
        z = x[self.iz]
        y = x[self.iy]
        f = self.A @ x + self.b
        J = self.A.copy()
        Hd = self.zeros.copy()
        W = self.zeros.copy()
        ez = np.exp(z)
        # budget: log sum e^z <= 0
        tot = ez.sum()
        w = ez / tot
        f[self.r_budget] += np.log(tot)
        J[self.r_budget, self.iz] = w
        Hd[self.r_budget, self.iz] = w
        W[self.r_budget, self.iz] = w
        # SINR: y - z_s + log(sum_I e^z + noise) <= 0
        den = m.interf @ ez + m.noise
        wl = m.interf * ez[None, :] / den[:, None]
        f[self.r_link] += np.log(den)
        J[self.r_link, :self.P] += wl
        Hd[self.r_link, :self.P] = wl
        W[self.r_link, :self.P] = wl
        # rate: dispersion tangent in the SINR makes an exp(y) term
        with np.errstate(over="ignore"):
            ey = np.exp(y)
        c = self.k * self.kq * self.dsv_t
        f[self.r_rate] += c * ey
        J[self.r_rate, self.iy] += c * ey
        Hd[self.r_rate, self.iy] = c * ey
        return f, J, Hd, W

    def values(self, x):
        m = self.m
        with np.errstate(over="ignore", invalid="ignore"):
            ez = np.exp(x[self.iz])
            ey = np.exp(x[self.iy])
        f = self.A @ x + self.b
        with np.errstate(over="ignore", invalid="ignore"):
            f[self.r_budget] += np.log(ez.sum())
            f[self.r_link] += np.log(m.interf @ ez + m.noise)
            f[self.r_rate] += self.k * self.kq * self.dsv_t * ey
        return np.where(np.isfinite(f), f, np.inf)

    def objective(self, x):
        g = np.zeros(self.n)
        if self.phase:
            g[self.is_] = 1.0
            return float(x[self.is_]), g, np.zeros(self.n)
        g[self.ir] = 1.0
        return float(np.sum(x[self.ir])), g, np.zeros(self.n)

    def start(self, p):
        """A point at p_t, pulled strictly inside by small margins."""
        m = self.m
        x = np.zeros(self.n)
        z = np.maximum(np.log(np.maximum(p, 1e-300)), LOG_POWER_FLOOR + 1.0)
        z -= max(0.0, np.log(np.exp(z).sum())) + 1e-9
        x[self.iz] = z
        ez = np.exp(z)
        y = z[m.signal] - np.log(m.interf @ ez + m.noise) - 1e-9
        x[self.iy] = y
        ey = np.exp(y)
        rhs = self.k * (self.sp_t + self.sig_t * (y - self.y_t)
                        - self.kq * (self.sv_t + self.dsv_t * (ey - self.gam_t)))
        r = np.full(self.M, np.inf)
        np.minimum.at(r, m.message, rhs)
        r = r - 1e-9 * np.maximum(1.0, np.abs(r))
        x[self.ir] = r
        if m.split_floors:
            t = np.maximum(m.min_rate - r[1:], 0.0) + 1e-9
            x[self.it] = t
            x[self.is_] = r[0] - t.sum() - 1e-9
        else:
            x[self.is_] = float(np.min(r - m.min_rate)) - 1e-9
        if self.phase:
            x[self.is_] = min(x[self.is_], 10.0) - 1.0
        return x

    def powers(self, x):
        return np.exp(x[self.iz])


class _FixedRateSurrogate:
    """Convex restriction of the fixed-rate power subproblem around p_t.

    Variables x = [p (P), c (L), e (L), a (L), s] with c and e the SINR and
    interference bounds scaled by their values at p_t, so the AM-GM bound on
    C * E <= p_s reads (p_s,t / 2)(c^2 + e^2) <= p_s. a_l is bounded by the
    g-metric of link l at its fixed rate, which is concave in the SINR, and
    must stay above Q^-1(eps_th) + s. The objective is sum_l w_l (1 - Q(a_l)).
    """

    def __init__(self, model: LinkModel, p_t: np.ndarray, rates: np.ndarray,
                 weights: np.ndarray, phase: bool = False):
        self.m = model
        self.phase = phase
        self.rates = np.asarray(rates, dtype=float)
        self.w = np.asarray(weights, dtype=float)
        P, L = model.n_pow, model.signal.size
        self.P, self.L = P, L
        E_t = model.interf @ p_t + model.noise
        self.E_t = E_t
        self.ps_t = p_t[model.signal]
        self.C_t = self.ps_t / E_t
        self.ip = np.arange(P)
        self.ic = P + np.arange(L)
        self.ie = P + L + np.arange(L)
        self.ia = P + 2 * L + np.arange(L)
        self.is_ = P + 3 * L
        n = self.n = self.is_ + 1
        A, b = [], []

        def row():
            r = np.zeros(n)
            A.append(r)
            return r

        for k in range(P):
            row()[k] = -1.0
            b.append(0.0)
        row()[self.ip] = 1.0
        b.append(-1.0)
        for l in range(L):
            r = row(); r[self.ip] = model.interf[l]; r[self.ie[l]] = -E_t[l]
            b.append(model.noise[l])
        self.r_amgm = np.arange(len(A), len(A) + L)
        for l in range(L):
            row()[model.signal[l]] = -1.0
            b.append(0.0)
        for l in range(L):
            row()[self.ic[l]] = -1.0
            b.append(0.0)
        self.r_g = np.arange(len(A), len(A) + L)
        for l in range(L):
            row()[self.ia[l]] = 1.0
            b.append(0.0)
        for l in range(L):
            r = row(); r[self.ia[l]] = -1.0; r[self.is_] = 1.0
            b.append(model.qinv)
        if phase:
            row()[self.is_] = 1.0
            b.append(-10.0)
        else:
            row()[self.is_] = -1.0
            b.append(0.0)
        self.A = np.array(A)
        self.b = np.array(b)
        self.zeros = np.zeros_like(self.A)

    def constraints(self, x):
        c, e = x[self.ic], x[self.ie]
        f = self.A @ x + self.b
        J = self.A.copy()
        Hd = self.zeros.copy()
        ra, rg = self.r_amgm, self.r_g
        f[ra] += 0.5 * self.ps_t * (c * c + e * e)
        J[ra, self.ic] = self.ps_t * c
        J[ra, self.ie] = self.ps_t * e
        Hd[ra, self.ic] = self.ps_t
        Hd[ra, self.ie] = self.ps_t
        Cc = self.C_t * c
        with np.errstate(invalid="ignore", divide="ignore"):
            h, dh, d2h = _g_and_derivs(Cc, self.rates, self.m.n_rx, self.m.n_data)
        f[rg] -= h
        J[rg, self.ic] = -dh * self.C_t
        # h is concave in the SINR; clip round-off of the wrong sign
        Hd[rg, self.ic] = np.maximum(-d2h * self.C_t ** 2, 0.0)
        f = np.where(np.isfinite(f), f, np.inf)
        return f, J, Hd

    def objective(self, x):
        g = np.zeros(self.n)
        h = np.zeros(self.n)
        if self.phase:
            g[self.is_] = 1.0
            return float(x[self.is_]), g, h
        a = x[self.ia]
        phi = np.exp(-0.5 * a * a) / np.sqrt(2 * np.pi)
        g[self.ia] = self.w * phi
        h[self.ia] = -self.w * a * phi
        return float(np.sum(self.w * (1.0 - fbl.q_tail(a)))), g, h

    def start(self, p):
        x = np.zeros(self.n)
        x[self.ip] = p
        x[self.ie] = 1.0 + 1e-6
        x[self.ic] = np.sqrt(np.maximum(2.0 - x[self.ie] ** 2 - 1e-6, 1e-12))
        h, _, _ = _g_and_derivs(self.C_t * x[self.ic], self.rates, self.m.n_rx, self.m.n_data)
        x[self.ia] = h - 1e-7 * np.maximum(1.0, np.abs(h))
        x[self.is_] = float(np.min(x[self.ia] - self.m.qinv)) - 1e-7
        if self.phase:
            x[self.is_] = min(x[self.is_], 10.0) - 1.0
        return x

    def powers(self, x):
        return np.maximum(x[self.ip], 0.0)


def _g_and_derivs(C, rates, n_rx, n_data):
    """g-metric of n_rx identical SINRs C and its first two C-derivatives."""
    t = 1.0 + C
    V = fbl.dispersion(C)
    s = np.sqrt(V)
    dV = 2.0 * t ** -3
    d2V = -6.0 * t ** -4
    ds = dV / (2 * s)
    d2s = d2V / (2 * s) - dV * dV / (4 * s ** 3)
    kk = n_rx / np.sqrt(n_data)
    L = n_rx * np.log1p(C) - LN2 * rates
    dL = n_rx / t
    d2L = -n_rx / t ** 2
    D, dD, d2D = kk * s, kk * ds, kk * d2s
    h = L / D
    dh = (dL * D - L * dD) / D ** 2
    d2h = (d2L * D - L * d2D) / D ** 2 - 2 * dD * (dL * D - L * dD) / D ** 3
    return h, dh, d2h


@dataclass
class ScaResult:
    powers: np.ndarray
    states: List[ScaState]
    objective: float
    margin: float
    feasible: bool


BARRIER_T0 = 1.0
BARRIER_MU = 20.0


def _solve_surrogate(sur, p: np.ndarray, gap: float):
    x0 = sur.start(p)
    f0 = sur.constraints(x0)[0]
    if not np.all(f0 < 0):
        x0 = convex.phase_one(sur.constraints, x0)
    res = convex.barrier_maximize(sur.objective, sur.constraints, x0, gap=gap,
                                  t0=BARRIER_T0, mu=BARRIER_MU,
                                  values=getattr(sur, "values", None))
    return sur.powers(res.x), res


def sca_power(model: LinkModel, p0: np.ndarray, tol: float = 1e-6, max_iters: int = 50,
              gap: float = 1e-7) -> ScaResult:
    """SCA over the powers with message rates lifted to their caps.

    The floors are first made feasible by an SCA on the floor margin; the main
    loop then maximizes the sum of message caps. Every accepted iterate raises
    the true (clipped) cap objective and keeps the floor margin >= 0.
    """
    p = np.array(p0, dtype=float)
    states: List[ScaState] = []
    obj, margin = model.cap_objective(p)
    if margin <= 0:
        for _ in range(max_iters):
            try:
                p_new, _ = _solve_surrogate(_LiftedSurrogate(model, p, phase=True), p, gap=1e-6)
            except convex.InfeasibleError:
                break
            obj_new, margin_new = model.cap_objective(p_new)
            if margin_new <= margin + 1e-12:
                break
            p, obj, margin = p_new, obj_new, margin_new
            if margin > 0:
                break
        if margin <= 0:
            return ScaResult(p, states, obj, margin, False)
    states.append(_state(model, p, obj, 0))
    for t in range(1, max_iters + 1):
        sur = _LiftedSurrogate(model, p)
        try:
            p_new, _ = _solve_surrogate(sur, p, gap * max(1.0, abs(obj)))
        except convex.InfeasibleError:
            break
        obj_new, margin_new = model.cap_objective(p_new)
        if margin_new < 0 or obj_new < obj - 1e-12:
            break
        gain = obj_new - obj
        p, obj, margin = p_new, obj_new, margin_new
        states.append(_state(model, p, obj, t))
        if gain < tol * max(1.0, abs(obj)):
            break
    return ScaResult(p, states, obj, margin, True)


def _state(model: LinkModel, p, obj, t) -> ScaState:
    gam = model.sinrs(p)
    E = model.interf @ p + model.noise
    caps = np.maximum(model.message_caps(p), 0.0)
    rates = caps[model.message]
    with np.errstate(divide="ignore", invalid="ignore"):
        A = (model.n_rx * np.log1p(gam) - LN2 * rates) / (
            model.n_rx * np.sqrt(fbl.dispersion(gam) / model.n_data))
    return ScaState(t, p.copy(), A, gam, E, caps, obj)


def sca_power_fixed_rates(model: LinkModel, p0: np.ndarray, link_rates: np.ndarray,
                          link_weights: np.ndarray, tol: float = 1e-6, max_iters: int = 50,
                          gap: float = 1e-8):
    """SCA with the rates held fixed: maximize sum_l w_l (1 - Q(A_l)).

    A_l is bounded by the g-metric of link l at its fixed rate and must reach
    Q^-1(eps_th). Returns (powers, objective history). Raises InfeasibleError
    when no power meets the error bounds at these rates.
    """
    p = np.array(p0, dtype=float)
    history = []

    def true_obj(q):
        gam = model.sinrs(q)
        g = (model.n_rx * np.log1p(gam) - LN2 * link_rates) / (
            model.n_rx * np.sqrt(fbl.dispersion(gam) / model.n_data))
        return float(np.sum(link_weights * (1.0 - fbl.q_tail(g)))), float(np.min(g) - model.qinv)

    obj, margin = true_obj(p)
    if margin < 0:
        for _ in range(max_iters):
            sur = _FixedRateSurrogate(model, p, link_rates, link_weights, phase=True)
            try:
                p_new, _ = _solve_surrogate(sur, p, gap=1e-6)
            except convex.InfeasibleError:
                break
            obj_new, margin_new = true_obj(p_new)
            if margin_new <= margin + 1e-12:
                break
            p, obj, margin = p_new, obj_new, margin_new
            if margin >= 0:
                break
        if margin < 0:
            raise InfeasibleError("rates exceed what any power allocation supports", -margin)
    history.append(obj)
    for _ in range(max_iters):
        sur = _FixedRateSurrogate(model, p, link_rates, link_weights)
        try:
            p_new, _ = _solve_surrogate(sur, p, gap)
        except convex.InfeasibleError:
            break
        obj_new, margin_new = true_obj(p_new)
        if margin_new < -1e-9 or obj_new < obj - 1e-15:
            break
        gain = obj_new - obj
        p, obj = p_new, obj_new
        history.append(obj)
        if gain < tol * max(1.0, abs(obj)):
            break
    return p, history


# ---------------------------------------------------- problem at fixed N_T

@dataclass(frozen=True)
class Instance:
    """A user drop at a fixed antenna count, with pilots N_p = N_T."""
    config: SystemConfig
    kappas: np.ndarray
    n_tx: int
    n_pilot: int
    n_data: int
    psi: float

    @property
    def gains(self) -> np.ndarray:
        return self.kappas * self.psi * self.config.total_power


def make_instance(config: SystemConfig, kappas, n_tx: int) -> Instance:
    kappas = np.asarray(kappas, dtype=float)
    n_pilot = n_tx
    n_data = config.total_cus - n_pilot
    if n_data < 1:
        raise ValueError(f"n_tx={n_tx} leaves no data channel uses")
    psi_val = sinr.psi_for(config, kappas, n_tx, n_pilot)
    return Instance(config, kappas, n_tx, n_pilot, n_data, psi_val)


def sinr_profile(inst: Instance, p_norm: np.ndarray, common: bool = True) -> sinr.SinrProfile:
    rho = np.asarray(p_norm) * inst.config.total_power
    if common:
        powers = (rho[0], rho[1:])
    else:
        powers = (0.0, rho)
    return sinr.closed_form_sinrs(powers, inst.kappas, inst.psi)


def rates_for_powers(inst: Instance, p_norm: np.ndarray, common: bool = True):
    """Optimal rates at fixed powers: private, common total, then the split.

    Returns (sinr profile, private rates, common total, common shares).
    Raises InfeasibleError when the floors cannot be met.
    """
    cfg = inst.config
    prof = sinr_profile(inst, p_norm, common)
    r_p = solve_private_rates(cfg, prof, inst.n_data)
    if common:
        r_c = solve_common_total(cfg, prof, r_p, inst.n_data)
        shares = allocate_common_rates(cfg, r_c, prof, r_p)
    else:
        r_c = 0.0
        shares = np.zeros_like(r_p)
        short = cfg.min_rate - r_p
        if np.any(short > 1e-9):
            raise InfeasibleError("private rates miss the floor", float(short.max()))
    return prof, r_p, r_c, shares


def _allocation(inst: Instance, p_norm, r_p, r_c, shares, common=True) -> ResourceAllocation:
    rho = np.asarray(p_norm) * inst.config.total_power
    pc, pp = (rho[0], rho[1:]) if common else (0.0, rho)
    return ResourceAllocation(inst.n_tx, inst.n_pilot, inst.n_data, float(pc), pp,
                              float(r_c), shares, r_p)


@dataclass
class TraceRecord:
    n_tx: int
    iteration: int
    objective: float
    powers: np.ndarray
    rates: np.ndarray
    stage: str


@dataclass
class OptTrace:
    records: List[TraceRecord] = field(default_factory=list)
    status: str = "converged"
    sca_states: Dict[int, List[ScaState]] = field(default_factory=dict)
    evaluations: Dict[int, float] = field(default_factory=dict)

    def objectives(self, n_tx: Optional[int] = None) -> np.ndarray:
        return np.array([r.objective for r in self.records
                         if n_tx is None or r.n_tx == n_tx])

    def alternations(self, n_tx: int) -> int:
        return sum(1 for r in self.records if r.n_tx == n_tx and r.stage == "rates")

    def is_monotone(self, slack: float = 1e-9) -> bool:
        for n in {r.n_tx for r in self.records}:
            obj = self.objectives(n)
            if np.any(np.diff(obj) < -slack):
                return False
        return True


@dataclass
class InnerResult:
    """Converged solution at one antenna count."""
    n_tx: int
    objective: float
    allocation: Optional[ResourceAllocation]
    report: Optional[EtrReport]
    sinrs: Optional[sinr.SinrProfile]
    powers: Optional[np.ndarray]
    feasible: bool
    records: List[TraceRecord]
    sca_states: List[ScaState]
    status: str


def initial_powers(n_pow: int, common: bool = True) -> np.ndarray:
    """Equal split: half to the common stream, the rest evenly over users."""
    if common:
        U = n_pow - 1
        p = np.concatenate(([0.5], np.full(U, 0.5 / U)))
    else:
        p = np.full(n_pow, 1.0 / n_pow)
    # strictly inside the budget so the barrier can start there
    return p * (1.0 - 1e-9)


def solve_fixed_antennas(config: SystemConfig, kappas, n_tx: int, common: bool = True,
                         exact: bool = False, p0: Optional[np.ndarray] = None) -> InnerResult:
    """Alternate the power step and the rate step at a fixed antenna count."""
    inst = make_instance(config, kappas, n_tx)
    model = rsma_model(config, inst.gains, inst.n_data, common)
    p = best_start(model) if p0 is None else np.array(p0, dtype=float)
    records: List[TraceRecord] = []
    states: List[ScaState] = []

    def score(q):
        prof, r_p, r_c, shares = rates_for_powers(inst, q, common)
        alloc = _allocation(inst, q, r_p, r_c, shares, common)
        rep = etr_total(config, alloc, prof, exact=exact)
        return rep.total_etr, alloc, rep, prof

    try:
        best = score(p)
    except InfeasibleError:
        best = None
    if best is not None:
        records.append(TraceRecord(n_tx, 0, best[0], p.copy(),
                                   _rate_vector(best[1]), "rates"))
    status = "max_iters"
    for it in range(1, config.max_iters + 1):
        res = sca_power(model, p, tol=config.sca_tol, max_iters=config.max_iters)
        states.extend(res.states)
        if not res.feasible:
            if best is None:
                return InnerResult(n_tx, -np.inf, None, None, None, None, False, records,
                                   states, "infeasible")
            status = "converged"
            break
        try:
            cand = score(res.powers)
        except InfeasibleError:
            cand = None
        if cand is None or (best is not None and cand[0] < best[0]):
            # the power step did not improve the scored objective: keep the incumbent
            status = "converged"
            break
        gain = cand[0] - (best[0] if best is not None else 0.0)
        first = best is None
        p, best = res.powers, cand
        records.append(TraceRecord(n_tx, it, best[0], p.copy(), _rate_vector(best[1]), "power"))
        records.append(TraceRecord(n_tx, it, best[0], p.copy(), _rate_vector(best[1]), "rates"))
        if not first and gain < config.jprt_tol:
            status = "converged"
            break
    if best is None:
        return InnerResult(n_tx, -np.inf, None, None, None, None, False, records, states,
                           "infeasible")
    return InnerResult(n_tx, best[0], best[1], best[2], best[3], p, True, records, states, status)


def _rate_vector(alloc: ResourceAllocation) -> np.ndarray:
    return np.concatenate(([alloc.rate_common_total], alloc.rate_common_user, alloc.rate_private))


# -------------------------------------------------------- antenna search

def _unimodal_samples(points: Dict[int, float]) -> bool:
    """True when the sampled values rise then fall (no interior dip)."""
    xs = sorted(points)
    v = np.array([points[x] for x in xs])
    if v.size < 3:
        return True
    finite = np.isfinite(v)
    if not finite.any():
        return False
    k = int(np.argmax(np.where(finite, v, -np.inf)))
    left, right = v[: k + 1], v[k:]
    ok_left = np.all(np.diff(np.where(np.isfinite(left), left, -np.inf)) >= -1e-12)
    ok_right = np.all(np.diff(np.where(np.isfinite(right), right, -np.inf)) <= 1e-12)
    return bool(ok_left and ok_right)


def select_antennas(config: SystemConfig, inner_solver: Callable[[int], float],
                    lo: Optional[int] = None, hi: Optional[int] = None):
    """Integer golden-section search for the antenna count maximizing T(N_T).

    ``inner_solver(n_tx)`` returns the converged objective (``-inf`` when
    infeasible). If the probed values are not unimodal, or the final point is
    not a local peak, a coarse-then-fine scan replaces the search.
    Returns (n_tx*, evaluations dict, used_fallback).
    """
    lo = config.min_tx if lo is None else lo
    hi = config.total_cus - 1 if hi is None else hi
    if hi < lo:
        raise InfeasibleError(f"no admissible antenna count in [{lo}, {hi}]")
    cache: Dict[int, float] = {}

    def T(n):
        n = int(n)
        if n not in cache:
            cache[n] = float(inner_solver(n))
        return cache[n]

    a, b = lo, hi
    while b - a > 3:
        c = int(round(b - GOLDEN * (b - a)))
        d = int(round(a + GOLDEN * (b - a)))
        if c >= d:
            d = c + 1
        fc, fd = T(c), T(d)
        if not (np.isfinite(fc) or np.isfinite(fd)):
            break
        if fc >= fd:
            b = d
        else:
            a = c
    best = max(range(a, b + 1), key=lambda n: (T(n), -n))
    peak = all(T(best) >= T(n) for n in (best - 1, best + 1) if lo <= n <= hi)
    fallback = (not np.isfinite(T(best))) or not peak or not _unimodal_samples(cache)
    if fallback:
        step = max(1, (hi - lo) // 32)
        for n in range(lo, hi + 1, step):
            T(n)
        T(hi)
        coarse = max(cache, key=lambda n: (cache[n], -n))
        for n in range(max(lo, coarse - step), min(hi, coarse + step) + 1):
            T(n)
        best = max(cache, key=lambda n: (cache[n], -n))
    return best, dict(cache), fallback


@dataclass
class JprtResult:
    allocation: Optional[ResourceAllocation]
    report: Optional[EtrReport]
    trace: OptTrace
    sinrs: Optional[sinr.SinrProfile]
    kappas: np.ndarray
    n_tx: int

    @property
    def total_etr(self) -> float:
        return self.report.total_etr if self.report is not None else 0.0

    def __iter__(self):
        # unpacks as (allocation, report, trace)
        return iter((self.allocation, self.report, self.trace))


def search_antennas(config: SystemConfig, kappas, fixed_solver: Callable[[int], InnerResult],
                    n_tx: Optional[int] = None) -> JprtResult:
    """Run ``fixed_solver`` under the antenna search and collect the trace."""
    kappas = np.asarray(kappas, dtype=float)
    results: Dict[int, InnerResult] = {}

    def inner(n):
        if n not in results:
            results[n] = fixed_solver(n)
        return results[n].objective

    trace = OptTrace()
    if n_tx is None:
        best, evals, _ = select_antennas(config, inner)
    else:
        inner(n_tx)
        best, evals = n_tx, {n_tx: results[n_tx].objective}
    trace.evaluations = evals
    for n in sorted(results):
        trace.records.extend(results[n].records)
        trace.sca_states[n] = results[n].sca_states
    res = results[best]
    if not res.feasible:
        trace.status = "infeasible"
        raise InfeasibleError(
            f"no antenna count in [{config.min_tx}, {config.total_cus - 1}] meets the rate floors"
            f" ({len(evals)} counts tried)"
        )
    trace.status = res.status
    trace.records.append(TraceRecord(best, len(res.records), res.objective, res.powers.copy(),
                                     _rate_vector(res.allocation), "antenna"))
    return JprtResult(res.allocation, res.report, trace, res.sinrs, kappas, best)


def draw_kappas(config: SystemConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    return channel.sample_geometry(config, rng).kappas


def jprt(config: SystemConfig, kappas=None, rng: Optional[np.random.Generator] = None,
         common: bool = True, exact: bool = False, n_tx: Optional[int] = None) -> JprtResult:
    """Joint power, rate and antenna optimization for one user drop.

    Without ``kappas`` the drop is sampled from ``config.seed`` (or ``rng``).
    With ``n_tx`` the antenna search is skipped. ``common=False`` pins the
    common stream off (SDMA). Unpacks as (allocation, report, trace).
    Raises InfeasibleError when no antenna count admits the rate floors.
    """
    kappas = draw_kappas(config, rng) if kappas is None else kappas
    return search_antennas(
        config, kappas,
        lambda n: solve_fixed_antennas(config, kappas, n, common=common, exact=exact),
        n_tx,
    )
