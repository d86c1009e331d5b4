"""Baseline access schemes built from the RSMA machinery: SDMA and NOMA."""
from __future__ import annotations

import enum
from typing import List, Optional

import numpy as np

from . import fbl, sinr
from .config import EtrReport, ResourceAllocation, SystemConfig
from .optimizer import (
    InfeasibleError, InnerResult, JprtResult, LinkModel, TraceRecord, best_start, draw_kappas,
    jprt, make_instance, sca_power, search_antennas, sinr_for_rate,
)


class SchemeKind(str, enum.Enum):
    RSMA = "rsma"
    NOMA = "noma"
    SDMA = "sdma"

    @classmethod
    def parse(cls, name) -> "SchemeKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown scheme {name!r}; choose from "
                             f"{', '.join(k.value for k in cls)}") from None


# ------------------------------------------------------------------ SDMA

def sdma_certificate(config: SystemConfig, num_users: Optional[int] = None) -> Optional[str]:
    """Reason why no antenna count can serve every floor without a common stream.

    Private SINRs satisfy G_u < p_u / sum_{k != u} p_k, so meeting the floor
    SINR g* everywhere needs U g* / (1 + g*) <= 1. g* is taken at the
    longest data block, where it is smallest. Returns None when the test
    is inconclusive.
    """
    U = config.num_users if num_users is None else num_users
    if config.min_rate <= 0 or U < 2:
        return None
    n_data = config.total_cus - config.min_tx
    if n_data < 1:
        return None
    qinv = float(fbl.q_tail_inv(config.dep_bound))
    g_star = sinr_for_rate(config.min_rate, config.rx_antennas, n_data, qinv)
    load = U * g_star / (1.0 + g_star)
    if load > 1.0:
        return (f"floor SINR {g_star:.4g} for {U} users needs interference load "
                f"{load:.4g} > 1")
    return None


def solve_sdma(config: SystemConfig, kappas=None, rng=None, exact: bool = False,
               n_tx: Optional[int] = None) -> JprtResult:
    """JPRT with the common stream pinned off (zero power, zero rate)."""
    kappas = draw_kappas(config, rng) if kappas is None else np.asarray(kappas, dtype=float)
    reason = sdma_certificate(config, kappas.size)
    if reason is not None:
        raise InfeasibleError("SDMA cannot meet the rate floors: " + reason)
    return jprt(config, kappas, common=False, exact=exact, n_tx=n_tx)


# ------------------------------------------------------------------ NOMA

def noma_order(kappas) -> np.ndarray:
    """Users by large-scale gain, strongest first (stable on ties)."""
    return np.argsort(-np.asarray(kappas, dtype=float), kind="stable")


def noma_model(config: SystemConfig, gains: np.ndarray, n_data: int):
    """Superposition links with SIC, users in ``noma_order``.

    Position i carries the message of the i-th strongest user. Every user
    j <= i decodes message i while the messages of stronger users (k < i)
    are still present. Returns (model, order, link index table).
    """
    order = noma_order(gains)
    U = gains.size
    noise = 1.0 / gains[order]
    sig, msg, nz, rows = [], [], [], []
    link = -np.ones((U, U), dtype=int)  # link[j, i]: user j decoding message i
    for i in range(U):
        for j in range(i + 1):
            r = np.zeros(U)
            r[:i] = 1.0
            link[j, i] = len(sig)
            sig.append(i)
            msg.append(i)
            nz.append(noise[j])
            rows.append(r)
    qinv = float(fbl.q_tail_inv(config.dep_bound))
    model = LinkModel(U, np.array(sig), np.array(rows), np.array(nz), np.array(msg), U, False,
                      config.rx_antennas, n_data, qinv, config.min_rate)
    return model, order, link


def noma_chain(config: SystemConfig, model: LinkModel, link: np.ndarray, p: np.ndarray,
               rates: np.ndarray):
    """Per-position stage error probabilities and chain success probabilities.

    The user at position i must decode messages U-1, ..., i in turn; its
    success probability is the product of those stage successes.
    """
    gam = model.sinrs(p)
    eps = fbl.dep_scalar(gam, model.n_rx, model.n_data, rates[model.message])
    eps = np.where(rates[model.message] > 0, eps, 0.0)
    U = rates.size
    success = np.ones(U)
    own = np.zeros(U)
    for i in range(U):
        stages = [link[i, k] for k in range(i, U)]
        success[i] = np.prod(1.0 - eps[stages])
        own[i] = eps[link[i, i]]
    return eps, own, success


def solve_noma_fixed(config: SystemConfig, kappas, n_tx: int) -> InnerResult:
    """NOMA at a fixed antenna count: SCA on powers, rates at their caps."""
    inst = make_instance(config, kappas, n_tx)
    model, order, link = noma_model(config, inst.gains, inst.n_data)
    p0 = best_start(model)
    res = sca_power(model, p0, tol=config.sca_tol, max_iters=config.max_iters)
    if not res.feasible:
        return InnerResult(n_tx, -np.inf, None, None, None, None, False, [], res.states,
                           "infeasible")
    p = res.powers
    rates = np.maximum(model.message_caps(p), 0.0)
    eps, own, success = noma_chain(config, model, link, p, rates)
    U = rates.size
    # back to user indexing
    r_user = np.zeros(U)
    p_user = np.zeros(U)
    fail = np.zeros(U)
    own_user = np.zeros(U)
    r_user[order] = rates
    p_user[order] = p * config.total_power
    fail[order] = 1.0 - success
    own_user[order] = own
    etr = r_user * (1.0 - fail)
    alloc = ResourceAllocation(inst.n_tx, inst.n_pilot, inst.n_data, 0.0, p_user, 0.0,
                               np.zeros(U), r_user)
    zeros = np.zeros(U)
    report = EtrReport(
        dep_common=zeros, dep_private=fail, etr_common=zeros, etr_private=etr,
        total_etr=float(etr.sum()),
        slack_dep_common=config.dep_bound - zeros,
        slack_dep_private=config.dep_bound - own_user,
        slack_rate_floor=r_user - config.min_rate,
    )
    # own-stage SINR of every user, for reporting
    gam = model.sinrs(p)
    own_gam = np.zeros(U)
    own_gam[order] = gam[np.diag(link)]
    prof = sinr.SinrProfile(np.zeros(U), own_gam, own_gam, inst.psi)
    obj = report.total_etr
    rv = np.concatenate(([0.0], np.zeros(U), r_user))
    records = [TraceRecord(n_tx, 1, obj, p.copy(), rv, "power"),
               TraceRecord(n_tx, 1, obj, p.copy(), rv, "rates")]
    return InnerResult(n_tx, obj, alloc, report, prof, p, True, records, res.states, "converged")


def solve_noma(config: SystemConfig, kappas=None, rng=None, n_tx: Optional[int] = None) -> JprtResult:
    """NOMA with SIC in large-scale gain order and the same antenna search.

    The allocation stores each user's superposed message in the private
    slots (power_private, rate_private); dep_private holds the probability
    that the user's SIC chain fails.
    """
    kappas = draw_kappas(config, rng) if kappas is None else np.asarray(kappas, dtype=float)
    return search_antennas(config, kappas, lambda n: solve_noma_fixed(config, kappas, n), n_tx)


def solve_scheme(config: SystemConfig, scheme, kappas=None, rng=None, exact: bool = False,
                 n_tx: Optional[int] = None) -> JprtResult:
    kind = SchemeKind.parse(scheme)
    if kind is SchemeKind.RSMA:
        kappas = draw_kappas(config, rng) if kappas is None else kappas
        return jprt(config, kappas, exact=exact, n_tx=n_tx)
    if kind is SchemeKind.SDMA:
        return solve_sdma(config, kappas, rng, exact=exact, n_tx=n_tx)
    return solve_noma(config, kappas, rng, n_tx=n_tx)
