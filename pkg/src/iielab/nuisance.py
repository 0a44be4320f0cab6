"""Nuisance estimation: basis-expansion learners fit by iteratively
reweighted least squares, synthetic nuisances with prescribed convergence
rates, and cross-fitting fold plans.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import expit, logit
from sklearn.base import BaseEstimator

from .core import PROB_CLIP, Dataset, NuisanceSet

RIDGE_FALLBACK = 1e-4


@dataclass(frozen=True)
class BasisSpec:
    """Feature expansion: piecewise-linear spline (default) or global
    polynomial in each covariate, with saturated indicators when the support
    is small.

    The spline's linear tails keep logit-scale extrapolation bounded where the
    covariate density thins out; a cubic polynomial can push fitted cell
    probabilities to the clipping floor there and blow up inverse weights.
    """

    kind: str = "piecewise-linear-spline"
    degree: int = 3
    knots: int = 4
    saturate_below: int = 10

    def __post_init__(self):
        if self.kind not in ("polynomial", "piecewise-linear-spline"):
            raise ValueError("unknown basis kind")


class Design:
    """Fitted feature map for one covariate matrix; includes an intercept.

    Covariates are winsorized at the 1%/99% training quantiles before the
    expansion: fits in the sparse tails would otherwise be driven by a handful
    of rows, and regional quasi-separation there pushes inverse-probability
    weights to the clipping floor.
    """

    def __init__(self, spec=BasisSpec(), winsor=0.01):
        self.spec = spec
        self.winsor = winsor

    def fit(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self.levels_ = []
        self.lo_ = np.quantile(x, self.winsor, axis=0)
        self.hi_ = np.quantile(x, 1.0 - self.winsor, axis=0)
        xw = np.clip(x, self.lo_, self.hi_)
        self.center_ = xw.mean(axis=0)
        self.scale_ = xw.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        self.knots_ = []
        for j in range(x.shape[1]):
            uniq = np.unique(x[:, j])
            self.levels_.append(uniq if uniq.size <= self.spec.saturate_below else None)
            if self.spec.kind == "piecewise-linear-spline":
                qs = np.linspace(0, 1, self.spec.knots + 2)[1:-1]
                self.knots_.append(np.quantile(xw[:, j], qs))
            else:
                self.knots_.append(None)
        return self

    def transform(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [np.ones(x.shape[0])]
        for j in range(x.shape[1]):
            levels = self.levels_[j]
            if levels is not None:
                for lv in levels[1:]:
                    cols.append((np.abs(x[:, j] - lv) < 1e-12).astype(float))
                continue
            xj = np.clip(x[:, j], self.lo_[j], self.hi_[j])
            z = (xj - self.center_[j]) / self.scale_[j]
            if self.spec.kind == "polynomial":
                for p in range(1, self.spec.degree + 1):
                    cols.append(z ** p)
            else:
                cols.append(z)
                for kn in self.knots_[j]:
                    zk = (kn - self.center_[j]) / self.scale_[j]
                    cols.append(np.maximum(z - zk, 0.0))
        return np.column_stack(cols)

    def fit_transform(self, x):
        return self.fit(x).transform(x)

    @property
    def dim(self):
        return 1 + sum(
            (len(lv) - 1) if lv is not None
            else (self.spec.degree if self.spec.kind == "polynomial" else 1 + self.spec.knots)
            for lv in self.levels_
        )


def _solve_psd(h, g):
    try:
        return np.linalg.solve(h, g)
    except np.linalg.LinAlgError:
        return np.linalg.solve(h + 1e-8 * np.eye(h.shape[0]), g)


class LogisticIRLS(BaseEstimator):
    """Binary logistic regression fit by IRLS with step-halving.

    Diverging coefficients (separation, detected as fitted log-odds running
    away) trigger a ridge-stabilized refit whose penalty escalates until the
    fitted score range is bounded; flagged in ``fallback_``. Predicted
    probabilities are clipped to [1e-6, 1 - 1e-6].
    """

    def __init__(self, tol=1e-8, max_iter=100, ridge=0.0, separation_bound=15.0,
                 score_cap=8.0):
        self.tol = tol
        self.max_iter = max_iter
        self.ridge = ridge
        self.separation_bound = separation_bound
        self.score_cap = score_cap

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        beta, converged, separated = self._irls(X, y, w, self.ridge)
        self.fallback_ = False
        ridge = max(self.ridge, RIDGE_FALLBACK)
        while ((separated or not converged
                or np.max(np.abs(X @ beta)) > self.score_cap) and ridge <= 1e5):
            beta, converged, separated = self._irls(X, y, w, ridge)
            self.fallback_ = True
            ridge *= 10.0
        self.coef_ = beta
        return self

    @staticmethod
    def _deviance(X, y, w, beta, ridge):
        z = X @ beta
        # -2 * log-likelihood via log1p(exp) for stability
        ll = w @ (y * z - np.logaddexp(0.0, z))
        return -2.0 * ll + ridge * beta @ beta

    def _irls(self, X, y, w, ridge):
        beta = np.zeros(X.shape[1])
        eye = np.eye(X.shape[1])
        dev = self._deviance(X, y, w, beta, ridge)
        for _ in range(self.max_iter):
            p = expit(X @ beta)
            wgt = w * p * (1.0 - p)
            grad = X.T @ (w * (y - p)) - ridge * beta
            hess = (X * wgt[:, None]).T @ X + ridge * eye
            step = _solve_psd(hess, grad)
            # step-halving: full Newton steps can overshoot
            scale = 1.0
            for _ in range(30):
                cand = beta + scale * step
                cand_dev = self._deviance(X, y, w, cand, ridge)
                if cand_dev <= dev + 1e-12:
                    break
                scale *= 0.5
            beta = beta + scale * step
            dev = self._deviance(X, y, w, beta, ridge)
            if np.max(np.abs(X @ beta)) > self.separation_bound:
                return beta, False, True
            if np.max(np.abs(scale * step)) < self.tol:
                return beta, True, False
        return beta, False, False

    def predict_proba(self, X):
        p = expit(np.asarray(X, dtype=float) @ self.coef_)
        return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


class MultinomialLogitIRLS(BaseEstimator):
    """Multinomial logit over K cells by Newton iteration (class 0 reference).

    Empty cells get add-half smoothing: half-weight pseudo-rows at the mean
    design point, one per cell, flagged in ``add_half_``.
    """

    def __init__(self, n_classes=4, tol=1e-8, max_iter=100, ridge=0.0,
                 separation_bound=15.0, score_cap=8.0):
        self.n_classes = n_classes
        self.tol = tol
        self.max_iter = max_iter
        self.ridge = ridge
        self.separation_bound = separation_bound
        self.score_cap = score_cap

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        K = self.n_classes
        counts = np.bincount(y, weights=w, minlength=K)
        self.add_half_ = bool(np.any(counts == 0))
        if self.add_half_:
            xbar = X.mean(axis=0, keepdims=True)
            X = np.vstack([X, np.repeat(xbar, K, axis=0)])
            y = np.concatenate([y, np.arange(K)])
            w = np.concatenate([w, np.full(K, 0.5)])
        beta, converged, separated = self._newton(X, y, w, self.ridge)
        self.fallback_ = False
        ridge = max(self.ridge, RIDGE_FALLBACK)
        while ((separated or not converged
                or np.max(np.abs(X @ beta)) > self.score_cap) and ridge <= 1e5):
            beta, converged, separated = self._newton(X, y, w, ridge)
            self.fallback_ = True
            ridge *= 10.0
        self.coef_ = beta  # (p, K-1)
        return self

    def _probs(self, X, beta):
        scores = np.column_stack([np.zeros(X.shape[0]), X @ beta])
        scores -= scores.max(axis=1, keepdims=True)
        ez = np.exp(scores)
        return ez / ez.sum(axis=1, keepdims=True)

    @staticmethod
    def _mn_deviance(X, onehot, w, beta, ridge):
        scores = np.column_stack([np.zeros(X.shape[0]), X @ beta])
        logz = np.log(np.exp(scores - scores.max(axis=1, keepdims=True))
                      .sum(axis=1)) + scores.max(axis=1)
        ll = w @ ((onehot * scores).sum(axis=1) - logz)
        return -2.0 * ll + ridge * float((beta * beta).sum())

    def _newton(self, X, y, w, ridge):
        n, p = X.shape
        K = self.n_classes
        beta = np.zeros((p, K - 1))
        onehot = np.zeros((n, K))
        onehot[np.arange(n), y] = 1.0
        dev = self._mn_deviance(X, onehot, w, beta, ridge)
        for _ in range(self.max_iter):
            probs = self._probs(X, beta)
            grad = np.empty((K - 1) * p)
            for j in range(1, K):
                grad[(j - 1) * p:j * p] = X.T @ (w * (onehot[:, j] - probs[:, j])) - ridge * beta[:, j - 1]
            hess = np.empty(((K - 1) * p, (K - 1) * p))
            for j in range(1, K):
                for l in range(1, K):
                    wgt = w * probs[:, j] * ((j == l) - probs[:, l])
                    hess[(j - 1) * p:j * p, (l - 1) * p:l * p] = (X * wgt[:, None]).T @ X
            hess += ridge * np.eye((K - 1) * p)
            step = _solve_psd(hess, grad).reshape(K - 1, p).T
            scale = 1.0
            for _ in range(30):
                cand = beta + scale * step
                cand_dev = self._mn_deviance(X, onehot, w, cand, ridge)
                if cand_dev <= dev + 1e-12:
                    break
                scale *= 0.5
            beta = beta + scale * step
            dev = self._mn_deviance(X, onehot, w, beta, ridge)
            if np.max(np.abs(X @ beta)) > self.separation_bound:
                return beta, False, True
            if np.max(np.abs(scale * step)) < self.tol:
                return beta, True, False
        return beta, False, False

    def predict_proba(self, X):
        probs = self._probs(np.asarray(X, dtype=float), self.coef_)
        # clip above the positivity floor so renormalization cannot dip below it
        probs = np.clip(probs, 2.0 * PROB_CLIP, 1.0 - PROB_CLIP)
        return probs / probs.sum(axis=1, keepdims=True)


class LinearLS(BaseEstimator):
    """Least-squares regression on a prebuilt design."""

    def fit(self, X, y, sample_weight=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if sample_weight is not None:
            sw = np.sqrt(np.asarray(sample_weight, dtype=float))
            X, y = X * sw[:, None], y * sw
        self.coef_, *_ = np.linalg.lstsq(X, y, rcond=None)
        self.fallback_ = False
        return self

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef_


_CELL_CODE = {(0, 0): 0, (1, 0): 1, (0, 1): 2, (1, 1): 3}


class FittedNuisanceSet(NuisanceSet):
    """Nuisances backed by fitted basis models; marginals are exact sums of
    the fitted joint."""

    provenance = "fitted"

    def __init__(self, design, propensity, mediator_models, outcome, flags):
        self._design = design
        self._propensity = propensity
        self._mediators = mediator_models     # dict arm -> MultinomialLogitIRLS
        self._outcome = outcome               # OutcomeModel
        self.flags = flags

    def _features(self, x):
        return self._design.transform(x)

    def _pi1(self, x):
        return self._propensity.predict_proba(self._features(x))

    def mu(self, a, m1, m2, x):
        return self._outcome.predict(a, m1, m2, self._features(x))

    def _p_joint(self, m1, m2, a, x):
        probs = self._mediators[a].predict_proba(self._features(x))
        return probs[:, _CELL_CODE[(m1, m2)]]


class OutcomeModel:
    """Per-(a, m1, m2) stratum outcome regressions with a pooled fallback.

    Strata with fewer than ``min_per_dim * dim`` observations share a pooled
    per-arm model with mediator indicator features.
    """

    def __init__(self, binary, min_per_dim=10):
        self.binary = binary
        self.min_per_dim = min_per_dim
        self.strata = {}
        self.pooled = {}
        self.pooled_strata = []

    def _new_model(self):
        return LogisticIRLS() if self.binary else LinearLS()

    def fit(self, F, y, a, m1, m2):
        dim = F.shape[1]
        for arm in (0, 1):
            arm_mask = a == arm
            pooled_needed = False
            for v1 in (0, 1):
                for v2 in (0, 1):
                    mask = arm_mask & (m1 == v1) & (m2 == v2)
                    if mask.sum() >= self.min_per_dim * dim:
                        self.strata[(arm, v1, v2)] = self._new_model().fit(F[mask], y[mask])
                    else:
                        pooled_needed = True
                        self.pooled_strata.append((arm, v1, v2))
            if pooled_needed:
                Fp = self._pooled_features(F[arm_mask], m1[arm_mask], m2[arm_mask])
                self.pooled[arm] = self._new_model().fit(Fp, y[arm_mask])
        return self

    @staticmethod
    def _pooled_features(F, m1, m2):
        return np.column_stack([F, m1, m2, m1 * m2])

    def predict(self, a, m1, m2, F):
        key = (a, m1, m2)
        if key in self.strata:
            model = self.strata[key]
            if self.binary:
                return model.predict_proba(F)
            return model.predict(F)
        ones = np.ones(F.shape[0])
        Fp = self._pooled_features(F, m1 * ones, m2 * ones)
        model = self.pooled[a]
        if self.binary:
            return model.predict_proba(Fp)
        return model.predict(Fp)


class NuisanceLearner(BaseEstimator):
    """Fits the full nuisance set from data: a logistic propensity, one
    four-cell multinomial mediator model per arm (marginals by summation),
    and stratified outcome regressions.

    ``mediator_ridge`` is an always-on smoothness prior on the mediator cell
    scores: the joint model is the one nuisance whose fitted probabilities get
    inverted, and unpenalized fits push empty cell-regions to the clipping
    floor, exploding the weights.
    """

    def __init__(self, basis=BasisSpec(), min_per_dim=10, mediator_ridge=1.0):
        self.basis = basis
        self.min_per_dim = min_per_dim
        self.mediator_ridge = mediator_ridge

    def fit(self, data: Dataset):
        if not (np.any(data.a == 0) and np.any(data.a == 1)):
            raise ValueError("both arms must be observed")
        design = Design(self.basis).fit(data.x)
        F = design.transform(data.x)
        flags = {}
        propensity = LogisticIRLS().fit(F, data.a.astype(float))
        flags["propensity_ridge"] = propensity.fallback_
        mediators = {}
        for arm in (0, 1):
            mask = data.a == arm
            if not np.any(mask):
                raise ValueError("empty arm subsample")
            cells = np.array([_CELL_CODE[(v1, v2)] for v1, v2 in
                              zip(data.m1[mask], data.m2[mask])])
            model = MultinomialLogitIRLS(n_classes=4, ridge=self.mediator_ridge).fit(F[mask], cells)
            mediators[arm] = model
            flags[f"mediator_add_half_arm{arm}"] = model.add_half_
            flags[f"mediator_ridge_arm{arm}"] = model.fallback_
        binary = bool(np.isin(data.y, (0.0, 1.0)).all())
        outcome = OutcomeModel(binary, self.min_per_dim).fit(
            F, data.y, data.a, data.m1, data.m2)
        flags["outcome_pooled_strata"] = list(outcome.pooled_strata)
        self.nuisance_set_ = FittedNuisanceSet(design, propensity, mediators, outcome, flags)
        return self

    def nuisance_set(self):
        return self.nuisance_set_


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: np.ndarray
    mode: str = "swap-average"
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("swap-average", "pooled-second-stage"):
            raise ValueError("unknown fold mode")
        self.assignment.setflags(write=False)

    def folds(self):
        for j in range(self.k):
            yield j, self.assignment == j


def make_folds(n, k=2, seed=0, mode="swap-average"):
    """Deterministic fold plan; fold sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < 2 * k:
        raise ValueError("n too small for the requested folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[perm] = np.arange(n) % k
    return FoldPlan(k=k, assignment=assignment, mode=mode, seed=seed)


class CrossFitNuisances:
    """Per-fold nuisance sets, each trained on the fold's complement.

    ``pseudo_outcomes(fn)`` evaluates an influence function out-of-fold: the
    set used for observation i never saw observation i.
    """

    def __init__(self, data, plan, learner_factory):
        self.data = data
        self.plan = plan
        self.eta_by_fold = []
        for j, mask in plan.folds():
            learner = learner_factory()
            eta = learner.fit(data.subset(~mask)).nuisance_set()
            eta.fold = j
            eta.trained_on = "complement"
            self.eta_by_fold.append(eta)

    def pseudo_outcomes(self, fn):
        """fn(data_subset, eta) -> values; assembled into a full-length array."""
        out = np.empty(self.data.n)
        for (j, mask), eta in zip(self.plan.folds(), self.eta_by_fold):
            out[mask] = np.asarray(fn(self.data.subset(mask), eta), dtype=float)
        return out

    def fold_values(self, fn):
        """Per-fold (mask, values) pairs for swap-average second stages."""
        for (j, mask), eta in zip(self.plan.folds(), self.eta_by_fold):
            yield mask, np.asarray(fn(self.data.subset(mask), eta), dtype=float)


# ---------------------------------------------------------------------------
# synthetic nuisances with prescribed rates


@dataclass(frozen=True)
class RateSpec:
    """Convergence-rate recipe: logit-scale noise with mean C n^-alpha and
    variance C^2 n^-2alpha per nuisance component."""

    alpha: dict = field(default_factory=lambda: {"propensity": 0.5, "outcome": 0.5,
                                                 "mediator": 0.5})
    C: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for key, val in self.alpha.items():
            if not (0.0 < val <= 0.5):
                raise ValueError(f"alpha[{key}] must lie in (0, 0.5]")

    def scale(self, component, n):
        return self.C * float(n) ** (-self.alpha[component])


class _Wiggle:
    """Fixed-seed cubic-spline perturbation field with unit amplitude."""

    def __init__(self, rng, domain=(-2.0, 4.0), n_knots=7):
        knots = np.linspace(domain[0], domain[1], n_knots)
        vals = rng.uniform(-1.0, 1.0, size=n_knots)
        self.domain = domain
        self.spline = CubicSpline(knots, vals)

    def __call__(self, x):
        z = np.clip(np.asarray(x, dtype=float), self.domain[0], self.domain[1])
        return np.asarray(self.spline(z))


class SyntheticNuisanceSet(NuisanceSet):
    """True nuisances shifted on the logit scale by a random constant plus a
    smooth covariate-dependent wiggle of the same magnitude.

    A pure constant shift would cancel some second-order products
    identically; the wiggle keeps every error product active.
    """

    provenance = "synthetic"

    def __init__(self, base, n, rates: RateSpec, domain=(-2.0, 4.0)):
        self.base = base
        rng = np.random.default_rng(rates.seed)
        s_pi = rates.scale("propensity", n)
        s_mu = rates.scale("outcome", n)
        s_md = rates.scale("mediator", n)
        self._pi_shift = rng.normal(s_pi, s_pi)
        self._pi_wiggle = _Wiggle(rng, domain)
        self._pi_scale = s_pi
        self._mu_shift = {}
        self._mu_wiggle = {}
        for a in (0, 1):
            for m1 in (0, 1):
                for m2 in (0, 1):
                    self._mu_shift[(a, m1, m2)] = rng.normal(s_mu, s_mu)
                    self._mu_wiggle[(a, m1, m2)] = _Wiggle(rng, domain)
        self._mu_scale = s_mu
        self._cell_shift = {}
        self._cell_wiggle = {}
        for a in (0, 1):
            for cell in range(4):
                self._cell_shift[(a, cell)] = rng.normal(s_md, s_md)
                self._cell_wiggle[(a, cell)] = _Wiggle(rng, domain)
        self._md_scale = s_md

    def _pi1(self, x):
        z = logit(np.clip(self.base.pi(1, x), 1e-12, 1 - 1e-12))
        v = np.asarray(x, dtype=float)
        v = v[:, 0] if v.ndim == 2 else v
        return expit(z + self._pi_shift + self._pi_scale * self._pi_wiggle(v))

    def mu(self, a, m1, m2, x):
        base = np.clip(self.base.mu(a, m1, m2, x), 1e-12, 1 - 1e-12)
        v = np.asarray(x, dtype=float)
        v = v[:, 0] if v.ndim == 2 else v
        shift = self._mu_shift[(a, m1, m2)]
        wig = self._mu_scale * self._mu_wiggle[(a, m1, m2)](v)
        return expit(logit(base) + shift + wig)

    def _cells(self, a, x):
        v = np.asarray(x, dtype=float)
        v = v[:, 0] if v.ndim == 2 else v
        scores = []
        for (m1, m2), code in _CELL_CODE.items():
            base = self.base.p_joint(m1, m2, a, x)
            shift = self._cell_shift[(a, code)]
            wig = self._md_scale * self._cell_wiggle[(a, code)](v)
            scores.append(np.log(base) + shift + wig)
        scores = np.stack(scores, axis=-1)
        scores -= scores.max(axis=-1, keepdims=True)
        ez = np.exp(scores)
        return ez / ez.sum(axis=-1, keepdims=True)

    def _p_joint(self, m1, m2, a, x):
        return self._cells(a, x)[..., _CELL_CODE[(m1, m2)]]


def synthetic_nuisances(eta_true, n, rates: RateSpec, domain=(-2.0, 4.0)):
    """Perturb exact nuisances to mimic estimation error at rate n^-alpha."""
    if getattr(eta_true, "provenance", None) not in ("true-dgp",):
        raise ValueError("synthetic perturbation requires exact-provenance nuisances")
    if rates.C == 0.0:
        return eta_true
    return SyntheticNuisanceSet(eta_true, n, rates, domain)
