"""Pointwise evaluation of every influence function: the uncentered curve for
the indirect effect via the first mediator and its arm components, the AIPW
pseudo-outcome for the conditional treatment effect, the ratio function for
the mean proportion mediated, the four bound components with their combined
lower/upper forms, and the extension influence functions for the second
mediator and total-indirect-effect bounds.

All functions are pure in their inputs and vectorized over a
:class:`~iielab.core.Dataset`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_ARMS,
    RATIO_FLOOR,
    Estimand,
    RatioDegenerateError,
    marginalize_outcomes,
)


@dataclass(frozen=True)
class PseudoOutcomes:
    """Influence-function values for each observation of a sample."""

    values: np.ndarray
    estimand: str
    provenance: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.isfinite(v).all():
            raise ValueError("pseudo-outcomes must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.shape[0]


class _Components:
    """Nuisance evaluations shared by the influence functions at a sample."""

    def __init__(self, data, eta, arms):
        a, ap = arms.a, arms.a_prime
        x, n = data.x, data.n
        self.n = n
        self.y = data.y
        self.ind_a = (data.a == a).astype(float)
        self.ind_ap = 1.0 - self.ind_a
        self.pi_a = eta.pi(a, x)
        self.pi_ap = eta.pi(ap, x)
        self.mu = np.empty((2, 2, n))
        self.pj_a = np.empty((2, 2, n))
        for m1 in (0, 1):
            for m2 in (0, 1):
                self.mu[m1, m2] = eta.mu(a, m1, m2, x)
                self.pj_a[m1, m2] = eta.p_joint(m1, m2, a, x)
        self.p1_a = np.stack([eta.p_m1(m, a, x) for m in (0, 1)])
        self.p1_ap = np.stack([eta.p_m1(m, ap, x) for m in (0, 1)])
        self.p2_a = np.stack([eta.p_m2(m, a, x) for m in (0, 1)])
        self.p2_ap = np.stack([eta.p_m2(m, ap, x) for m in (0, 1)])
        rows = np.arange(n)
        self.mu_obs = self.mu[data.m1, data.m2, rows]
        self.pj_a_obs = self.pj_a[data.m1, data.m2, rows]
        self.p1_a_obs = self.p1_a[data.m1, rows]
        self.p1_ap_obs = self.p1_ap[data.m1, rows]
        self.p2_ap_obs = self.p2_ap[data.m2, rows]
        self.marg = marginalize_outcomes(eta, x, arms)
        self.mu_a_m1_obs = self.marg.mu_a_m1[data.m2, rows]
        self.mu_a_m1p_obs = self.marg.mu_a_m1p[data.m2, rows]
        self.mu_a_m2p_obs = self.marg.mu_a_m2p[data.m1, rows]


def _arm_a_values(c):
    resid = c.ind_a / c.pi_a * (c.p1_a_obs * c.p2_ap_obs / c.pj_a_obs) * (c.y - c.mu_obs)
    aug_a = c.ind_a / c.pi_a * (c.mu_a_m2p_obs - c.marg.mu_a_m1xm2p)
    aug_ap = c.ind_ap / c.pi_ap * (c.mu_a_m1_obs - c.marg.mu_a_m1xm2p)
    return resid + aug_a + aug_ap + c.marg.mu_a_m1xm2p


def _arm_aprime_values(c):
    resid = c.ind_a / c.pi_a * (c.p1_ap_obs * c.p2_ap_obs / c.pj_a_obs) * (c.y - c.mu_obs)
    aug1 = c.ind_ap / c.pi_ap * (c.mu_a_m2p_obs - c.marg.mu_a_m1pxm2p)
    aug2 = c.ind_ap / c.pi_ap * (c.mu_a_m1p_obs - c.marg.mu_a_m1pxm2p)
    return resid + aug1 + aug2 + c.marg.mu_a_m1pxm2p


def eif_psi_m1_arm(data, eta, arms=DEFAULT_ARMS, which="a"):
    """Uncentered influence function for one arm component of the effect."""
    c = _Components(data, eta, arms)
    if which == "a":
        values, est = _arm_a_values(c), Estimand.PSI_M1_A
    elif which in ("a_prime", "aprime"):
        values, est = _arm_aprime_values(c), Estimand.PSI_M1_APRIME
    else:
        raise ValueError("which must be 'a' or 'a_prime'")
    return PseudoOutcomes(values, est.value, eta.provenance)


def eif_psi_m1(data, eta, arms=DEFAULT_ARMS):
    """Uncentered influence function for the indirect effect via mediator one."""
    c = _Components(data, eta, arms)
    return PseudoOutcomes(_arm_a_values(c) - _arm_aprime_values(c),
                          Estimand.PSI_M1.value, eta.provenance)


@dataclass(frozen=True)
class CateNuisance:
    """Outcome means by arm and propensity, as needed for the AIPW pseudo-outcome."""

    mu_arm: object   # callable (a, x) -> E[Y | A=a, X=x]
    pi: object       # callable (a, x) -> P(A=a | X=x)
    provenance: str = ""

    @classmethod
    def from_nuisances(cls, eta):
        def mu_arm(a, x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            out = 0.0
            for m1 in (0, 1):
                for m2 in (0, 1):
                    out = out + eta.mu(a, m1, m2, x) * eta.p_joint(m1, m2, a, x)
            return out

        return cls(mu_arm=mu_arm, pi=eta.pi, provenance=eta.provenance)


def eif_cate(data, eta_cate, arms=DEFAULT_ARMS):
    """AIPW pseudo-outcome whose conditional mean given x is the treatment effect."""
    a, ap = arms.a, arms.a_prime
    ind_a = (data.a == a).astype(float)
    pi_a = eta_cate.pi(a, data.x)
    pi_ap = eta_cate.pi(ap, data.x)
    mu_a = eta_cate.mu_arm(a, data.x)
    mu_ap = eta_cate.mu_arm(ap, data.x)
    mu_obs = np.where(data.a == a, mu_a, mu_ap)
    values = (ind_a / pi_a - (1.0 - ind_a) / pi_ap) * (data.y - mu_obs) + mu_a - mu_ap
    return PseudoOutcomes(values, Estimand.PSI_TOTAL.value, eta_cate.provenance)


def conditional_psi_m1(eta, x, arms=DEFAULT_ARMS):
    """Plug-in conditional effect via mediator one at ``x``."""
    m = marginalize_outcomes(eta, x, arms)
    return m.mu_a_m1xm2p - m.mu_a_m1pxm2p


def conditional_psi_m1_arm(eta, x, arms=DEFAULT_ARMS, which="a"):
    m = marginalize_outcomes(eta, x, arms)
    return m.mu_a_m1xm2p if which == "a" else m.mu_a_m1pxm2p


def mean_outcome(eta, a, x):
    """E[Y | A=a, X=x] obtained by marginalizing the outcome regression."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = 0.0
    for m1 in (0, 1):
        for m2 in (0, 1):
            out = out + eta.mu(a, m1, m2, x) * eta.p_joint(m1, m2, a, x)
    return out


def conditional_cate(eta, x, arms=DEFAULT_ARMS):
    return mean_outcome(eta, arms.a, x) - mean_outcome(eta, arms.a_prime, x)


def conditional_psi_m2(eta, x, arms=DEFAULT_ARMS):
    a, ap = arms.a, arms.a_prime
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = 0.0
    for m1 in (0, 1):
        p1 = eta.p_m1(m1, a, x)
        for m2 in (0, 1):
            out = out + eta.mu(a, m1, m2, x) * (eta.p_m2(m2, a, x) - eta.p_m2(m2, ap, x)) * p1
    return out


def conditional_psi_ide(eta, x, arms=DEFAULT_ARMS):
    a, ap = arms.a, arms.a_prime
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = 0.0
    for m1 in (0, 1):
        for m2 in (0, 1):
            out = out + (eta.mu(a, m1, m2, x) - eta.mu(ap, m1, m2, x)) * eta.p_joint(m1, m2, ap, x)
    return out


def conditional_psi_cov(eta, x, arms=DEFAULT_ARMS):
    a, ap = arms.a, arms.a_prime
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = 0.0
    for m1 in (0, 1):
        for m2 in (0, 1):
            dep_a = eta.p_joint(m1, m2, a, x) - eta.p_m1(m1, a, x) * eta.p_m2(m2, a, x)
            dep_ap = eta.p_joint(m1, m2, ap, x) - eta.p_m1(m1, ap, x) * eta.p_m2(m2, ap, x)
            out = out + eta.mu(a, m1, m2, x) * (dep_a - dep_ap)
    return out


def eif_ratio(data, eta, eta_cate, arms=DEFAULT_ARMS, delta=RATIO_FLOOR):
    """Uncentered influence function for the mean of the conditional proportion
    mediated, psi_m1(x) / psi(x).

    Raises
    ------
    RatioDegenerateError
        If |psi(x)| falls below ``delta`` at any observation.
    """
    if eta_cate is None:
        eta_cate = CateNuisance.from_nuisances(eta)
    c = _Components(data, eta, arms)
    psi_x = _cate_curve(eta_cate, data.x, arms)
    if np.any(np.abs(psi_x) < delta):
        raise RatioDegenerateError("|psi(x)| below the ratio floor")
    phi = _arm_a_values(c) - _arm_aprime_values(c)
    psi_m1_x = c.marg.mu_a_m1xm2p - c.marg.mu_a_m1pxm2p
    psi_r_x = psi_m1_x / psi_x
    a = arms.a
    ind_a = (data.a == a).astype(float)
    pi_a = eta_cate.pi(a, data.x)
    pi_ap = eta_cate.pi(arms.a_prime, data.x)
    mu_a = eta_cate.mu_arm(a, data.x)
    mu_ap = eta_cate.mu_arm(arms.a_prime, data.x)
    mu_obs = np.where(data.a == a, mu_a, mu_ap)
    centered_aipw = (ind_a / pi_a - (1.0 - ind_a) / pi_ap) * (data.y - mu_obs)
    values = (phi - psi_m1_x) / psi_x - psi_r_x / psi_x * centered_aipw + psi_r_x
    return PseudoOutcomes(values, Estimand.PROP_MEDIATED_M1.value, eta.provenance)


def _cate_curve(eta_cate, x, arms):
    return eta_cate.mu_arm(arms.a, x) - eta_cate.mu_arm(arms.a_prime, x)


@dataclass(frozen=True)
class BoundZetas:
    """Covariate summaries inside the bound functionals, each a finite sum
    against the nuisance set."""

    zeta_1a: np.ndarray
    zeta_1ap: np.ndarray
    zeta_2a: np.ndarray
    zeta_2ap: np.ndarray
    zeta_1a_m2: np.ndarray
    zeta_1ap_m2: np.ndarray
    zeta_2a_m2: np.ndarray
    zeta_2ap_m2: np.ndarray
    zeta_1_iie: np.ndarray
    zeta_2_iie: np.ndarray


def bound_zetas(eta, x, arms=DEFAULT_ARMS):
    a, ap = arms.a, arms.a_prime
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    z = {name: np.zeros(n) for name in
         ("z1a", "z1ap", "z2a", "z2ap", "z1a_m2", "z1ap_m2", "z2a_m2", "z2ap_m2",
          "z1_iie", "z2_iie")}
    for m1 in (0, 1):
        p1a = eta.p_m1(m1, a, x)
        p1ap = eta.p_m1(m1, ap, x)
        for m2 in (0, 1):
            mu = eta.mu(a, m1, m2, x)
            pj = eta.p_joint(m1, m2, a, x)
            pj_ap = eta.p_joint(m1, m2, ap, x)
            p2a = eta.p_m2(m2, a, x)
            p2ap = eta.p_m2(m2, ap, x)
            z["z1a"] += mu * pj * p1a * p2ap
            z["z1ap"] += mu * pj * p1ap * p2ap
            z["z2a"] += pj * p1a * p2ap
            z["z2ap"] += pj * p1ap * p2ap
            z["z1a_m2"] += mu * pj * p1a * p2a
            z["z1ap_m2"] += mu * pj * p1a * p2ap
            z["z2a_m2"] += pj * p1a * p2a
            z["z2ap_m2"] += pj * p1a * p2ap
            z["z1_iie"] += mu * pj * pj_ap
            z["z2_iie"] += pj * pj_ap
    return BoundZetas(z["z1a"], z["z1ap"], z["z2a"], z["z2ap"], z["z1a_m2"],
                      z["z1ap_m2"], z["z2a_m2"], z["z2ap_m2"], z["z1_iie"], z["z2_iie"])


def _bound_component_values(c, data):
    """phi_{1,a}, phi_{1,a'}, phi_{2,a}, phi_{2,a'} at each observation."""
    n, rows = c.n, np.arange(c.n)
    # zeta summaries from the already-evaluated component tables
    z1a = np.einsum("mkn,mkn,mn,kn->n", c.mu, c.pj_a, c.p1_a, c.p2_ap)
    z1ap = np.einsum("mkn,mkn,mn,kn->n", c.mu, c.pj_a, c.p1_ap, c.p2_ap)
    z2a = np.einsum("mkn,mn,kn->n", c.pj_a, c.p1_a, c.p2_ap)
    z2ap = np.einsum("mkn,mn,kn->n", c.pj_a, c.p1_ap, c.p2_ap)
    # sums over one mediator with the other held at its observed value
    s1_m2 = np.einsum("mkn,mkn,kn->mn", c.mu, c.pj_a, c.p2_ap)   # f(m1) = sum_m2 mu pj p2'
    s1_m1_a = np.einsum("mkn,mkn,mn->kn", c.mu, c.pj_a, c.p1_a)  # f(m2) = sum_m1 mu pj p1
    s1_m1_ap = np.einsum("mkn,mkn,mn->kn", c.mu, c.pj_a, c.p1_ap)
    s2_m2 = np.einsum("mkn,kn->mn", c.pj_a, c.p2_ap)             # f(m1) = sum_m2 pj p2'
    s2_m1_a = np.einsum("mkn,mn->kn", c.pj_a, c.p1_a)            # f(m2) = sum_m1 pj p1
    s2_m1_ap = np.einsum("mkn,mn->kn", c.pj_a, c.p1_ap)

    wa, wap = c.ind_a / c.pi_a, c.ind_ap / c.pi_ap
    phi_1a = (wa * (c.y * c.p1_a_obs * c.p2_ap_obs - z1a)
              + wa * (s1_m2[data.m1, rows] - z1a)
              + wap * (s1_m1_a[data.m2, rows] - z1a)
              + z1a)
    phi_1ap = (wa * (c.y * c.p1_ap_obs * c.p2_ap_obs - z1ap)
               + wap * (s1_m2[data.m1, rows] - z1ap)
               + wap * (s1_m1_ap[data.m2, rows] - z1ap)
               + z1ap)
    phi_2a = (wa * (c.p1_a_obs * c.p2_ap_obs - z2a)
              + wa * (s2_m2[data.m1, rows] - z2a)
              + wap * (s2_m1_a[data.m2, rows] - z2a)
              + z2a)
    phi_2ap = (wa * (c.p1_ap_obs * c.p2_ap_obs - z2ap)
               + wap * (s2_m2[data.m1, rows] - z2ap)
               + wap * (s2_m1_ap[data.m2, rows] - z2ap)
               + z2ap)
    return phi_1a, phi_1ap, phi_2a, phi_2ap


def eif_bound_components(data, eta, arms=DEFAULT_ARMS):
    """Uncentered influence functions of the four bound summaries, as a dict."""
    c = _Components(data, eta, arms)
    phi_1a, phi_1ap, phi_2a, phi_2ap = _bound_component_values(c, data)
    return {"phi_1a": phi_1a, "phi_1ap": phi_1ap, "phi_2a": phi_2a, "phi_2ap": phi_2ap}


def eif_bounds(data, eta, arms, sa):
    """Combined lower/upper influence functions for the bounds on the average
    effect via mediator one.

    The published combination display contains two misprints in the
    t-coefficient slots; the arrangement here is the one whose enumeration
    mean reproduces the direct bound formulas.
    """
    c = _Components(data, eta, arms)
    phi_a = _arm_a_values(c)
    phi_ap = _arm_aprime_values(c)
    phi = phi_a - phi_ap
    phi_1a, phi_1ap, phi_2a, phi_2ap = _bound_component_values(c, data)
    cl, cu, tl, tu, fl, fu = sa.coefficients()
    ub = (phi + fu * cu * phi_a - fl * cl * phi_ap + (tu * fu - tl * fl)
          - fu * (cu * phi_1a + tu * phi_2a) + fl * (cl * phi_1ap + tl * phi_2ap))
    lb = (phi + fl * cl * phi_a - fu * cu * phi_ap + (tl * fl - tu * fu)
          - fl * (cl * phi_1a + tl * phi_2a) + fu * (cu * phi_1ap + tu * phi_2ap))
    return (PseudoOutcomes(lb, Estimand.PSI_M1_LB.value, eta.provenance),
            PseudoOutcomes(ub, Estimand.PSI_M1_UB.value, eta.provenance))


def eif_bound_extensions(data, eta, arms=DEFAULT_ARMS):
    """Influence functions of the six extension summaries used by the bounds
    on the second-mediator and total-indirect effects."""
    a, ap = arms.a, arms.a_prime
    c = _Components(data, eta, arms)
    x, rows = data.x, np.arange(data.n)
    pj_ap = np.empty((2, 2, data.n))
    for m1 in (0, 1):
        for m2 in (0, 1):
            pj_ap[m1, m2] = eta.p_joint(m1, m2, ap, x)
    pj_ap_obs = pj_ap[data.m1, data.m2, rows]
    p2_a_obs = c.p2_a[data.m2, rows]

    z1a_m2 = np.einsum("mkn,mkn,mn,kn->n", c.mu, c.pj_a, c.p1_a, c.p2_a)
    z2a_m2 = np.einsum("mkn,mn,kn->n", c.pj_a, c.p1_a, c.p2_a)
    z1ap_m2 = np.einsum("mkn,mkn,mn,kn->n", c.mu, c.pj_a, c.p1_a, c.p2_ap)  # = zeta_1a
    z2ap_m2 = np.einsum("mkn,mn,kn->n", c.pj_a, c.p1_a, c.p2_ap)            # = zeta_2a
    z1_iie = np.einsum("mkn,mkn,mkn->n", c.mu, c.pj_a, pj_ap)
    z2_iie = np.einsum("mkn,mkn->n", c.pj_a, pj_ap)

    wa, wap = c.ind_a / c.pi_a, c.ind_ap / c.pi_ap

    # weights p(m1|a) p(m2|a): all three score directions sit in arm a
    s1_m2 = np.einsum("mkn,mkn,kn->mn", c.mu, c.pj_a, c.p2_a)
    s1_m1 = np.einsum("mkn,mkn,mn->kn", c.mu, c.pj_a, c.p1_a)
    if_g1a_m2 = (wa * (c.y * c.p1_a_obs * p2_a_obs - z1a_m2)
                 + wa * (s1_m2[data.m1, rows] - z1a_m2)
                 + wa * (s1_m1[data.m2, rows] - z1a_m2)
                 + z1a_m2)
    s2_m2 = np.einsum("mkn,kn->mn", c.pj_a, c.p2_a)
    s2_m1 = np.einsum("mkn,mn->kn", c.pj_a, c.p1_a)
    if_g2a_m2 = (wa * (c.p1_a_obs * p2_a_obs - z2a_m2)
                 + wa * (s2_m2[data.m1, rows] - z2a_m2)
                 + wa * (s2_m1[data.m2, rows] - z2a_m2)
                 + z2a_m2)

    # weights p(m1|a) p(m2|a'): identical functionals to zeta_1a / zeta_2a
    s1_m2p = np.einsum("mkn,mkn,kn->mn", c.mu, c.pj_a, c.p2_ap)
    if_g1ap_m2 = (wa * (c.y * c.p1_a_obs * c.p2_ap_obs - z1ap_m2)
                  + wa * (s1_m2p[data.m1, rows] - z1ap_m2)
                  + wap * (s1_m1[data.m2, rows] - z1ap_m2)
                  + z1ap_m2)
    s2_m2p = np.einsum("mkn,kn->mn", c.pj_a, c.p2_ap)
    if_g2ap_m2 = (wa * (c.p1_a_obs * c.p2_ap_obs - z2ap_m2)
                  + wa * (s2_m2p[data.m1, rows] - z2ap_m2)
                  + wap * (s2_m1[data.m2, rows] - z2ap_m2)
                  + z2ap_m2)

    if_g1_iie = (wa * (c.y * pj_ap_obs - z1_iie)
                 + wap * (c.mu_obs * c.pj_a_obs - z1_iie)
                 + z1_iie)
    if_g2_iie = (wa * (pj_ap_obs - z2_iie)
                 + wap * (c.pj_a_obs - z2_iie)
                 + z2_iie)
    return {
        "gamma_1a_m2": if_g1a_m2,
        "gamma_1ap_m2": if_g1ap_m2,
        "gamma_2a_m2": if_g2a_m2,
        "gamma_2ap_m2": if_g2ap_m2,
        "gamma_1_iie": if_g1_iie,
        "gamma_2_iie": if_g2_iie,
    }
