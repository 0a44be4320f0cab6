"""Shared domain types: observations, nuisance function families, estimand
identifiers, and fully enumerated discrete problems.

Every type here is immutable after construction and safe to share across
parallel workers.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

POSITIVITY_FLOOR = 1e-6
PROB_CLIP = 1e-6  # clipping range for fitted probabilities (inputs are rejected, not clipped)
RATIO_FLOOR = 1e-3  # floor on |psi(x)| before the ratio influence function degenerates


class PositivityError(ValueError):
    """A propensity score or joint mediator probability fell below the floor."""


class RatioDegenerateError(ValueError):
    """|psi(x)| fell below the ratio floor; the ratio influence function is unstable."""


class RankError(ValueError):
    """Rank-deficient design in a projection fit."""


class DegenerateDesignError(ValueError):
    """Second-stage regressor values are degenerate (e.g. all identical)."""


class ScaleError(ValueError):
    """Outcome scale incompatible with the requested sensitivity assumption."""


class Estimand(str, enum.Enum):
    PSI_M1 = "psi_m1"
    PSI_M1_A = "psi_m1_a"
    PSI_M1_APRIME = "psi_m1_aprime"
    PSI_M2 = "psi_m2"
    PSI_COV = "psi_cov"
    PSI_IDE = "psi_ide"
    PSI_TOTAL = "psi_total"
    PROP_MEDIATED_M1 = "prop_mediated_m1"
    PSI_M1_LB = "psi_m1_lb"
    PSI_M1_UB = "psi_m1_ub"
    PSI_M2_LB = "psi_m2_lb"
    PSI_M2_UB = "psi_m2_ub"
    PSI_IIE_LB = "psi_iie_lb"
    PSI_IIE_UB = "psi_iie_ub"
    PSI_COV_LB = "psi_cov_lb"
    PSI_COV_UB = "psi_cov_ub"
    PSI_IDE_LB = "psi_ide_lb"
    PSI_IDE_UB = "psi_ide_ub"


@dataclass(frozen=True)
class ArmPair:
    """Treated arm ``a`` and reference arm ``a_prime`` for the effect contrast."""

    a: int = 1
    a_prime: int = 0

    def __post_init__(self):
        if self.a not in (0, 1) or self.a_prime not in (0, 1):
            raise ValueError("arms must be binary")
        if self.a == self.a_prime:
            raise ValueError("arms must differ")


DEFAULT_ARMS = ArmPair()


def _as_binary(values, name):
    arr = np.asarray(values)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be 0/1")
    return arr.astype(np.int8)


@dataclass(frozen=True)
class Observation:
    """One data row (y, a, x, m1, m2)."""

    y: float
    a: int
    x: np.ndarray
    m1: int
    m2: int

    def __post_init__(self):
        if self.a not in (0, 1) or self.m1 not in (0, 1) or self.m2 not in (0, 1):
            raise ValueError("a, m1, m2 must be binary")
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or x.size < 1 or not np.isfinite(x).all():
            raise ValueError("x must be a finite array of length >= 1")
        if not np.isfinite(self.y):
            raise ValueError("y must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)


class Dataset:
    """Column-oriented sample of observations.

    Parameters
    ----------
    y, a, m1, m2 : array-like of shape (n,)
    x : array-like of shape (n, d) or (n,)
    """

    def __init__(self, y, a, m1, m2, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = _as_binary(a, "a")
        m1 = _as_binary(m1, "m1")
        m2 = _as_binary(m2, "m2")
        n = y.shape[0]
        if not (a.shape[0] == m1.shape[0] == m2.shape[0] == x.shape[0] == n):
            raise ValueError("inconsistent column lengths")
        if not np.isfinite(y).all() or not np.isfinite(x).all():
            raise ValueError("y and x must be finite")
        for arr in (y, a, m1, m2, x):
            arr.setflags(write=False)
        self.y, self.a, self.m1, self.m2, self.x = y, a, m1, m2, x

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def subset(self, idx):
        return Dataset(self.y[idx], self.a[idx], self.m1[idx], self.m2[idx], self.x[idx])

    @classmethod
    def from_observations(cls, rows):
        return cls(
            [r.y for r in rows],
            [r.a for r in rows],
            [r.m1 for r in rows],
            [r.m2 for r in rows],
            np.stack([r.x for r in rows]),
        )

    def observations(self):
        return [Observation(self.y[i], int(self.a[i]), self.x[i], int(self.m1[i]), int(self.m2[i]))
                for i in range(self.n)]


class NuisanceSet:
    """Base class for the four nuisance function families.

    Subclasses implement ``_pi1``, ``mu`` and ``_p_joint``; the marginal
    mediator probabilities default to exact sums of the joint, so any set
    deriving its marginals that way satisfies the marginalized-coherence
    invariant by construction.

    All query methods are vectorized over rows of ``x`` and raise
    :class:`PositivityError` instead of clipping when an input probability
    violates the positivity floor.
    """

    provenance = "true-dgp"
    floor = POSITIVITY_FLOOR

    def _pi1(self, x):
        raise NotImplementedError

    def mu(self, a, m1, m2, x):
        raise NotImplementedError

    def _p_joint(self, m1, m2, a, x):
        raise NotImplementedError

    def pi(self, a, x):
        p1 = np.asarray(self._pi1(x), dtype=float)
        p = p1 if a == 1 else 1.0 - p1
        bad = (p < self.floor) | (p > 1.0 - self.floor)
        if np.any(bad):
            rows = np.flatnonzero(np.atleast_1d(bad))[:10].tolist()
            raise PositivityError(f"propensity outside [floor, 1-floor] at rows {rows}")
        return p

    def p_joint(self, m1, m2, a, x):
        p = np.asarray(self._p_joint(m1, m2, a, x), dtype=float)
        bad = p < self.floor
        if np.any(bad):
            rows = np.flatnonzero(np.atleast_1d(bad))[:10].tolist()
            raise PositivityError(f"joint mediator probability below floor at rows {rows}")
        return p

    def p_m1(self, m1, a, x):
        return self.p_joint(m1, 0, a, x) + self.p_joint(m1, 1, a, x)

    def p_m2(self, m2, a, x):
        return self.p_joint(0, m2, a, x) + self.p_joint(1, m2, a, x)

    def validate_normalization(self, x, atol=1e-10):
        """Check probability normalization at the queried points; raise on violation."""
        total = sum(self.p_joint(m1, m2, 0, x) + self.p_joint(m1, m2, 1, x)
                    for m1 in (0, 1) for m2 in (0, 1))
        if np.any(np.abs(total - 2.0) > atol):
            raise ValueError("joint mediator probabilities do not normalize")
        return True


class TabularNuisanceSet(NuisanceSet):
    """Nuisances tabulated on a finite covariate grid.

    Covariate queries are grid indices: ``x[:, 0]`` holds integer codes
    ``0..k-1`` identifying the grid point.
    """

    def __init__(self, pi1, mu, joint, provenance="true-dgp"):
        pi1 = np.asarray(pi1, dtype=float)
        mu = np.asarray(mu, dtype=float)
        joint = np.asarray(joint, dtype=float)
        if mu.shape != (2, 2, 2, pi1.shape[0]) or joint.shape != mu.shape:
            raise ValueError("mu and joint must have shape (2, 2, 2, k)")
        total = joint.sum(axis=(1, 2))
        if np.any(np.abs(total - 1.0) > 1e-9):
            raise ValueError("joint mediator probabilities must sum to one per (a, x)")
        for arr in (pi1, mu, joint):
            arr.setflags(write=False)
        self._pi1_tab, self._mu_tab, self._joint_tab = pi1, mu, joint
        self.provenance = provenance

    @property
    def k(self):
        return self._pi1_tab.shape[0]

    @staticmethod
    def _idx(x):
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[:, 0]
        return np.asarray(np.rint(x), dtype=int)

    def _pi1(self, x):
        return self._pi1_tab[self._idx(x)]

    def mu(self, a, m1, m2, x):
        return self._mu_tab[a, m1, m2][self._idx(x)]

    def _p_joint(self, m1, m2, a, x):
        return self._joint_tab[a, m1, m2][self._idx(x)]


@dataclass(frozen=True)
class DiscreteProblem:
    """A fully enumerated finite-support joint distribution.

    The outcome law only enters through its conditional mean ``mu``: every
    influence function is affine in y given (a, x, m1, m2), so the conditional
    mean is sufficient for all exact expectations.
    """

    x_probs: np.ndarray          # (k,)
    pi1: np.ndarray              # (k,) P(A=1 | x)
    mu: np.ndarray               # (2, 2, 2, k) indexed [a, m1, m2, grid]
    joint: np.ndarray            # (2, 2, 2, k) indexed [a, m1, m2, grid]

    def __post_init__(self):
        p = np.asarray(self.x_probs, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("x_probs must be a probability vector")
        object.__setattr__(self, "x_probs", p)
        p.setflags(write=False)

    @property
    def k(self):
        return self.x_probs.shape[0]

    @property
    def x_values(self):
        return np.arange(self.k, dtype=float)[:, None]

    def nuisances(self, provenance="true-dgp"):
        return TabularNuisanceSet(self.pi1, self.mu, self.joint, provenance=provenance)


@dataclass(frozen=True)
class MarginalizedOutcomes:
    """The five marginalized outcome models at a batch of covariate points.

    ``mu_a_m1`` / ``mu_a_m1p`` are indexed by m2 (shape (2, n)), ``mu_a_m2p``
    by m1; the cross-marginalized fields are plain (n,) arrays.
    """

    mu_a_m1: np.ndarray
    mu_a_m1p: np.ndarray
    mu_a_m2p: np.ndarray
    mu_a_m1xm2p: np.ndarray
    mu_a_m1pxm2p: np.ndarray


def marginalize_outcomes(eta, x, arms=DEFAULT_ARMS):
    """Marginalize the outcome regression over the mediator laws at ``x``.

    Returns the five marginalized outcome models used by the influence
    functions, each equal to its defining finite sum against ``eta``.
    """
    a, ap = arms.a, arms.a_prime
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    mu = np.empty((2, 2, n))
    for m1 in (0, 1):
        for m2 in (0, 1):
            mu[m1, m2] = eta.mu(a, m1, m2, x)
    p1a = np.stack([eta.p_m1(m, a, x) for m in (0, 1)])
    p1ap = np.stack([eta.p_m1(m, ap, x) for m in (0, 1)])
    p2ap = np.stack([eta.p_m2(m, ap, x) for m in (0, 1)])
    mu_a_m1 = np.einsum("mkn,mn->kn", mu, p1a)      # (m2, n)
    mu_a_m1p = np.einsum("mkn,mn->kn", mu, p1ap)
    mu_a_m2p = np.einsum("mkn,kn->mn", mu, p2ap)    # (m1, n)
    mu_a_m1xm2p = np.einsum("mkn,mn,kn->n", mu, p1a, p2ap)
    mu_a_m1pxm2p = np.einsum("mkn,mn,kn->n", mu, p1ap, p2ap)
    return MarginalizedOutcomes(mu_a_m1, mu_a_m1p, mu_a_m2p, mu_a_m1xm2p, mu_a_m1pxm2p)


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with normal-quantile confidence interval and diagnostics."""

    estimand: str
    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    n: int
    point: float | None = None
    provenance: str = ""
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.se < 0:
            raise ValueError("se must be nonnegative")
        if not (self.ci_lower <= self.estimate <= self.ci_upper):
            raise ValueError("CI must contain the point estimate")


Z975 = 1.959963984540054


def make_report(estimand, estimate, se, n, point=None, provenance="", diagnostics=None):
    est, se = float(estimate), float(se)
    return EstimateReport(
        estimand=str(getattr(estimand, "value", estimand)),
        estimate=est,
        se=se,
        ci_lower=est - Z975 * se,
        ci_upper=est + Z975 * se,
        n=int(n),
        point=None if point is None else float(point),
        provenance=provenance,
        diagnostics=diagnostics or {},
    )
