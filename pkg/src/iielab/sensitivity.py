"""Partial-identification bounds under mediator-outcome confounding.

Three assumption families parameterize how far the counterfactual outcome
regression off the observed mediator cell may deviate from the observed
regression: an absolute deviation (A1), a bounded-outcome risk-ratio (A2),
and a risk-ratio (A3).  Each reduces to signed constants (c, t) and scale
transforms f(tau) feeding a common bound algebra.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_ARMS, Estimand, ScaleError
from .eif import (
    bound_zetas,
    conditional_psi_m1_arm,
    conditional_psi_m2,
    mean_outcome,
    marginalize_outcomes,
)

_KINDS = ("A1", "A2", "A3")


@dataclass(frozen=True)
class SensitivityAssumption:
    """Assumption id plus sensitivity parameter tau in [0, 1).

    ``coefficients()`` returns (c_l, c_u, t_l, t_u, f_l(tau), f_u(tau)) such
    that the deviation band on the off-cell counterfactual regression is
    [(c_l mu + t_l) f_l, (c_u mu + t_u) f_u].
    """

    kind: str
    tau: float

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")
        if not (0.0 <= self.tau < 1.0):
            raise ValueError("tau must lie in [0, 1)")

    def coefficients(self):
        t = self.tau
        if self.kind == "A1":
            return 0, 0, 1, 1, -t, t
        if self.kind == "A2":
            return 1, -1, 0, 1, -t, t
        return 1, 1, 0, 0, -t, t / (1.0 - t)

    @property
    def requires_unit_outcome(self):
        return self.kind == "A2"


def bound_mu(mu, p_joint, sa):
    """Bounds on E[Y^{m1 m2} | a, x] - mu_a(m1, m2, x) for one cell.

    Returns (lower, upper) = (b_l, b_u) * (1 - p_joint).
    """
    mu = np.asarray(mu, dtype=float)
    p_joint = np.asarray(p_joint, dtype=float)
    if sa.requires_unit_outcome and (np.any(mu < 0.0) or np.any(mu > 1.0)):
        raise ScaleError("A2 requires the outcome regression rescaled to [0, 1]")
    cl, cu, tl, tu, fl, fu = sa.coefficients()
    slack = 1.0 - p_joint
    return (cl * mu + tl) * fl * slack, (cu * mu + tu) * fu * slack


def _check_mu_scale(eta, x, arms, sa):
    if not sa.requires_unit_outcome:
        return
    for m1 in (0, 1):
        for m2 in (0, 1):
            mu = eta.mu(arms.a, m1, m2, np.atleast_2d(x))
            if np.any(mu < 0.0) or np.any(mu > 1.0):
                raise ScaleError("A2 requires the outcome regression rescaled to [0, 1]")


def bounds_psi_m1_at_x(eta, x, sa, arms=DEFAULT_ARMS):
    """Pointwise bounds on the conditional effect via mediator one.

    Returns (lower, upper) arrays over the rows of ``x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _check_mu_scale(eta, x, arms, sa)
    cl, cu, tl, tu, fl, fu = sa.coefficients()
    m = marginalize_outcomes(eta, x, arms)
    bar = m.mu_a_m1xm2p - m.mu_a_m1pxm2p
    bar_a = m.mu_a_m1xm2p
    bar_ap = m.mu_a_m1pxm2p
    z = bound_zetas(eta, x, arms)
    ub = (bar + bar_a * fu * cu - bar_ap * fl * cl + tu * fu - tl * fl
          - fu * (cu * z.zeta_1a + tu * z.zeta_2a)
          + fl * (cl * z.zeta_1ap + tl * z.zeta_2ap))
    lb = (bar + bar_a * fl * cl - bar_ap * fu * cu + tl * fl - tu * fu
          - fl * (cl * z.zeta_1a + tl * z.zeta_2a)
          + fu * (cu * z.zeta_1ap + tu * z.zeta_2ap))
    return lb, ub


def bounds_psi_m2_at_x(eta, x, sa, arms=DEFAULT_ARMS):
    """Pointwise bounds on the conditional effect via mediator two."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _check_mu_scale(eta, x, arms, sa)
    cl, cu, tl, tu, fl, fu = sa.coefficients()
    a, ap = arms.a, arms.a_prime
    bar = conditional_psi_m2(eta, x, arms)
    bar_a = np.zeros(x.shape[0])
    bar_ap = np.zeros(x.shape[0])
    for m1 in (0, 1):
        p1 = eta.p_m1(m1, a, x)
        for m2 in (0, 1):
            mu = eta.mu(a, m1, m2, x)
            bar_a = bar_a + mu * eta.p_m2(m2, a, x) * p1
            bar_ap = bar_ap + mu * eta.p_m2(m2, ap, x) * p1
    z = bound_zetas(eta, x, arms)
    ub = (bar + bar_a * fu * cu - bar_ap * fl * cl + tu * fu - tl * fl
          - fu * (cu * z.zeta_1a_m2 + tu * z.zeta_2a_m2)
          + fl * (cl * z.zeta_1ap_m2 + tl * z.zeta_2ap_m2))
    lb = (bar + bar_a * fl * cl - bar_ap * fu * cu + tl * fl - tu * fu
          - fl * (cl * z.zeta_1a_m2 + tl * z.zeta_2a_m2)
          + fu * (cu * z.zeta_1ap_m2 + tu * z.zeta_2ap_m2))
    return lb, ub


def bounds_psi_iie_at_x(eta, x, sa, arms=DEFAULT_ARMS):
    """Pointwise bounds on the total interventional indirect effect.

    The published display omits the identified term psi_bar_{IIE,a'} and swaps
    the roles of the lower/upper deviation bands; the form here is re-derived
    so that tau = 0 collapses to the identified effect and lower <= upper.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _check_mu_scale(eta, x, arms, sa)
    cl, cu, tl, tu, fl, fu = sa.coefficients()
    a, ap = arms.a, arms.a_prime
    psi_a = mean_outcome(eta, a, x)
    bar_iie_ap = np.zeros(x.shape[0])
    for m1 in (0, 1):
        for m2 in (0, 1):
            bar_iie_ap = bar_iie_ap + eta.mu(a, m1, m2, x) * eta.p_joint(m1, m2, ap, x)
    z = bound_zetas(eta, x, arms)
    ub = (psi_a - bar_iie_ap - fl * cl * bar_iie_ap - tl * fl
          + fl * (cl * z.zeta_1_iie + tl * z.zeta_2_iie))
    lb = (psi_a - bar_iie_ap - fu * cu * bar_iie_ap - tu * fu
          + fu * (cu * z.zeta_1_iie + tu * z.zeta_2_iie))
    return lb, ub


def bounds_average(eta, x, x_probs, sa, arms=DEFAULT_ARMS, target="psi_m1"):
    """Bounds on an average effect, by plug-in of the pointwise formulas
    weighted over the covariate law."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    w = np.asarray(x_probs, dtype=float)
    target = str(getattr(target, "value", target))
    if target == "psi_m1":
        lb, ub = bounds_psi_m1_at_x(eta, x, sa, arms)
    elif target == "psi_m2":
        lb, ub = bounds_psi_m2_at_x(eta, x, sa, arms)
    elif target == "psi_iie":
        lb, ub = bounds_psi_iie_at_x(eta, x, sa, arms)
    else:
        raise ValueError("target must be psi_m1, psi_m2 or psi_iie")
    return float(lb @ w), float(ub @ w)


def decompose_bounds(psi_total, iie_bounds, m1_bounds, m2_bounds):
    """Bounds on the direct and covariant effects from component bounds.

    The identities psi = iie_lb + ide_ub = iie_ub + ide_lb hold exactly by
    construction.
    """
    iie_lb, iie_ub = iie_bounds
    m1_lb, m1_ub = m1_bounds
    m2_lb, m2_ub = m2_bounds
    ide_lb = psi_total - iie_ub
    ide_ub = psi_total - iie_lb
    cov_lb = iie_lb - (m1_ub + m2_ub)
    cov_ub = iie_ub - (m1_lb + m2_lb)
    return {
        Estimand.PSI_IDE: (ide_lb, ide_ub),
        Estimand.PSI_COV: (cov_lb, cov_ub),
    }


def recover_known_selection(eta, x, c, t, f_tau, arms=DEFAULT_ARMS):
    """Point-recover the conditional effect under a known equality selection
    mechanism mu* - mu = f(tau) [c mu + t].

    ``c``, ``t`` and ``f_tau`` may be scalars or arrays over the rows of
    ``x`` (the selection mechanism may switch regimes across the domain).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    c = np.asarray(c, dtype=float)
    t = np.asarray(t, dtype=float)
    f = np.asarray(f_tau, dtype=float)
    bar = conditional_psi_m1_arm(eta, x, arms, "a") - conditional_psi_m1_arm(eta, x, arms, "a_prime")
    z = bound_zetas(eta, x, arms)
    return (bar * (1.0 + c * f)
            - c * f * (z.zeta_1a - z.zeta_1ap)
            - t * f * (z.zeta_2a - z.zeta_2ap))
