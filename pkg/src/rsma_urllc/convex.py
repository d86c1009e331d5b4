"""Small dense log-barrier solver for smooth convex programs.

Problems have the form

    maximize  f0(x)        (concave)
    s.t.      f_i(x) <= 0  (convex), i = 1..m

where every f_i has a Hessian of the form diag(d_i) - w_i w_i^T. That covers
the SCA surrogates used here (linear, separable and log-sum-exp terms) and
keeps a Newton step to a couple of dense m x n products.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np


class InfeasibleError(RuntimeError):
    pass


@dataclass
class BarrierResult:
    x: np.ndarray
    objective: float
    newton_steps: int
    gap: float


# objective(x) -> (value, gradient, hessian diagonal)
Objective = Callable[[np.ndarray], Tuple[float, np.ndarray, np.ndarray]]
# constraints(x) -> (values (m,), jacobian (m, n), hessian diagonals (m, n)[, W (m, n)])
# where the optional W holds rank-one parts: hess f_i = diag(Hd[i]) - W[i] W[i]^T
Constraints = Callable[[np.ndarray], tuple]


def _unpack(out):
    if len(out) == 3:
        return out[0], out[1], out[2], None
    return out


def _centering(x, t, objective, constraints, tol, max_steps, values=None, alpha=0.25, beta=0.5):
    steps = 0
    f, J, Hd, W = _unpack(constraints(x))
    s = -f
    v0, g0, h0 = objective(x)
    phi = -t * v0 - np.sum(np.log(s))
    while steps < max_steps:
        inv = 1.0 / s
        grad = -t * g0 + J.T @ inv
        H = (J.T * (inv * inv)) @ J
        H[np.diag_indices_from(H)] += inv @ Hd - t * h0
        if W is not None:
            H -= (W.T * inv) @ W
        try:
            dx = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(H, grad, rcond=None)[0]
        lam2 = -grad @ dx
        if not np.isfinite(lam2) or lam2 / 2 <= tol:
            break
        step = 1.0
        while True:
            xn = x + step * dx
            fn = values(xn) if values is not None else _unpack(constraints(xn))[0]
            if np.all(fn < 0):
                vn, gn, hn = objective(xn)
                phin = -t * vn - np.sum(np.log(-fn))
                if phin <= phi - alpha * step * lam2:
                    fn, Jn, Hdn, Wn = _unpack(constraints(xn))
                    break
            step *= beta
            if step < 1e-14:
                return x, steps, True
        x, f, J, Hd, W = xn, fn, Jn, Hdn, Wn
        s = -f
        v0, g0, h0, phi = vn, gn, hn, phin
        steps += 1
    return x, steps, False


def barrier_maximize(objective: Objective, constraints: Constraints, x0: np.ndarray,
                     gap: float = 1e-8, mu: float = 20.0, t0: float = 1.0,
                     newton_tol: float = 1e-10, max_newton: int = 200,
                     values: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> BarrierResult:
    """Maximize ``objective`` from a strictly feasible ``x0``.

    ``values`` may give the constraint values alone, which the line search
    uses to skip derivative work.
    """
    x = np.array(x0, dtype=float)
    f = _unpack(constraints(x))[0]
    if not np.all(f < 0):
        raise InfeasibleError("starting point is not strictly feasible")
    m = f.size
    t = t0
    total = 0
    while True:
        x, steps, stalled = _centering(x, t, objective, constraints, newton_tol, max_newton, values)
        total += steps
        if m / t < gap or stalled:
            break
        t *= mu
    return BarrierResult(x, float(objective(x)[0]), total, m / t)


def phase_one(constraints: Constraints, x0: np.ndarray, margin: float = 1e-9,
              max_rounds: int = 60) -> np.ndarray:
    """Find a strictly feasible point by minimizing the worst violation.

    Raises InfeasibleError when the minimal worst violation stays >= 0.
    """
    x0 = np.asarray(x0, dtype=float)
    f0 = _unpack(constraints(x0))[0]
    if np.all(f0 < -margin):
        return x0
    n = x0.size
    sigma0 = float(np.max(f0)) + 1.0

    def aug_cons(z):
        f, J, Hd, W = _unpack(constraints(z[:n]))
        m = f.size
        Ja = np.empty((m + 1, n + 1))
        Ja[:m, :n] = J
        Ja[:m, n] = -1.0
        Ja[m] = 0.0
        Ja[m, n] = -1.0
        Hda = np.zeros((m + 1, n + 1))
        Hda[:m, :n] = Hd
        Wa = np.zeros((m + 1, n + 1))
        if W is not None:
            Wa[:m, :n] = W
        # sigma >= -1 keeps the auxiliary problem bounded
        return np.append(f - z[n], -z[n] - 1.0), Ja, Hda, Wa

    def aug_obj(z):
        g = np.zeros(n + 1)
        g[n] = -1.0
        return -z[n], g, np.zeros(n + 1)

    z = np.append(x0, sigma0)
    t = 1.0
    for _ in range(max_rounds):
        z, _, stalled = _centering(z, t, aug_obj, aug_cons, 1e-10, 100)
        f = _unpack(constraints(z[:n]))[0]
        if np.all(f < -margin):
            return z[:n]
        if stalled or t > 1e12:
            break
        t *= 10.0
    raise InfeasibleError(f"no strictly feasible point (worst violation {np.max(f):.3e})")
