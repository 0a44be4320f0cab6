"""Estimators: one-step averages, the projection estimator with sandwich
inference, a local-linear second stage for the DR-Learner, bound estimators,
and the two proportion-mediated strategies.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .core import (
    DEFAULT_ARMS,
    DegenerateDesignError,
    Estimand,
    RankError,
    RatioDegenerateError,
    RATIO_FLOOR,
    make_report,
)
from . import eif as _eif
from .nuisance import CrossFitNuisances, FoldPlan, NuisanceLearner, make_folds

# ---------------------------------------------------------------------------
# one-step estimators


def _pseudo_values(data, eta, estimand, arms, eta_cate=None):
    estimand = str(getattr(estimand, "value", estimand))
    if estimand == Estimand.PSI_M1.value:
        return _eif.eif_psi_m1(data, eta, arms).values
    if estimand == Estimand.PSI_M1_A.value:
        return _eif.eif_psi_m1_arm(data, eta, arms, "a").values
    if estimand == Estimand.PSI_M1_APRIME.value:
        return _eif.eif_psi_m1_arm(data, eta, arms, "a_prime").values
    if estimand == Estimand.PSI_TOTAL.value:
        eta_cate = eta_cate or _eif.CateNuisance.from_nuisances(eta)
        return _eif.eif_cate(data, eta_cate, arms).values
    if estimand == Estimand.PROP_MEDIATED_M1.value:
        eta_cate = eta_cate or _eif.CateNuisance.from_nuisances(eta)
        return _eif.eif_ratio(data, eta, eta_cate, arms).values
    raise ValueError(f"one-step estimator not available for {estimand!r}")


def max_inverse_weight_observed(data, eta, arms=DEFAULT_ARMS):
    rows = np.arange(data.n)
    pi_a = eta.pi(arms.a, data.x)
    p1a = np.stack([eta.p_m1(m, arms.a, data.x) for m in (0, 1)])[data.m1, rows]
    p1ap = np.stack([eta.p_m1(m, arms.a_prime, data.x) for m in (0, 1)])[data.m1, rows]
    p2ap = np.stack([eta.p_m2(m, arms.a_prime, data.x) for m in (0, 1)])[data.m2, rows]
    pj = np.empty(data.n)
    for m1 in (0, 1):
        for m2 in (0, 1):
            mask = (data.m1 == m1) & (data.m2 == m2)
            if np.any(mask):
                pj[mask] = eta.p_joint(m1, m2, arms.a, data.x[mask])
    return float(np.max(np.abs(p1a - p1ap) * p2ap / (pi_a * pj)))


def one_step(data, eta, estimand=Estimand.PSI_M1, arms=DEFAULT_ARMS, eta_cate=None):
    """Sample mean of the estimated uncentered influence function."""
    values = _pseudo_values(data, eta, estimand, arms, eta_cate)
    est = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(data.n))
    diags = {"max_inverse_weight": max_inverse_weight_observed(data, eta, arms)}
    return make_report(estimand, est, se, data.n, provenance=eta.provenance,
                       diagnostics=diags)


def one_step_bounds(data, eta, sa, arms=DEFAULT_ARMS):
    """One-step estimates of the lower and upper bounds with their joint
    covariance."""
    lo, hi = _eif.eif_bounds(data, eta, arms, sa)
    stacked = np.column_stack([lo.values, hi.values])
    mean = stacked.mean(axis=0)
    cov = np.cov(stacked, rowvar=False) / data.n
    diags = {"cov_lb_ub": float(cov[0, 1]), "tau": sa.tau, "assumption": sa.kind}
    rep_lb = make_report(Estimand.PSI_M1_LB, mean[0], np.sqrt(cov[0, 0]), data.n,
                         provenance=eta.provenance, diagnostics=diags)
    rep_ub = make_report(Estimand.PSI_M1_UB, mean[1], np.sqrt(cov[1, 1]), data.n,
                         provenance=eta.provenance, diagnostics=diags)
    return rep_lb, rep_ub


# ---------------------------------------------------------------------------
# projection estimator


def _basis_matrix(basis, v):
    v = np.asarray(v, dtype=float).ravel()
    if callable(basis):
        return np.atleast_2d(basis(v))
    if basis == "linear":
        return np.column_stack([np.ones_like(v), v])
    if basis == "quadratic":
        return np.column_stack([np.ones_like(v), v, v ** 2])
    raise ValueError("basis must be 'linear', 'quadratic' or a callable")


class ProjectionEstimator(BaseEstimator):
    """Weighted least-squares projection of pseudo-outcomes onto a working
    model, with sandwich covariance for the moment condition.

    Parameters
    ----------
    basis : "linear", "quadratic" or callable
        Design builder g(v; beta) linear in beta.
    weight_fn : callable or None
        w(x) weights over the covariate space; uniform when None.
    """

    def __init__(self, basis="linear", weight_fn=None):
        self.basis = basis
        self.weight_fn = weight_fn

    def fit(self, v, y, x=None):
        v = np.asarray(v, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        G = _basis_matrix(self.basis, v)
        n, p = G.shape
        w = np.ones(n) if self.weight_fn is None else np.asarray(self.weight_fn(x), dtype=float)
        sw = np.sqrt(w)
        Gw = G * sw[:, None]
        rank = np.linalg.matrix_rank(Gw)
        if rank < p:
            raise RankError(f"projection design has rank {rank} < {p}")
        beta, *_ = np.linalg.lstsq(Gw, y * sw, rcond=None)
        resid = y - G @ beta
        psi = G * (w * resid)[:, None]            # estimating-function rows
        M = (G * w[:, None]).T @ G / n
        omega = psi.T @ psi / n
        Minv = np.linalg.inv(M)
        self.n_ = n
        self.beta_ = beta
        self.M_ = M
        self.omega_ = omega
        self.cov_beta_ = Minv @ omega @ Minv.T / n
        self._psi_mean = psi.mean(axis=0)
        return self

    def moment_residual(self):
        return self._psi_mean

    def predict(self, v):
        return _basis_matrix(self.basis, v) @ self.beta_

    def predict_with_se(self, v):
        G = _basis_matrix(self.basis, v)
        fit = G @ self.beta_
        se = np.sqrt(np.einsum("ij,jk,ik->i", G, self.cov_beta_, G))
        return fit, se


def fit_projection(pseudo, v, basis="linear", weight_fn=None, x=None):
    """Convenience wrapper returning a fitted :class:`ProjectionEstimator`."""
    return ProjectionEstimator(basis=basis, weight_fn=weight_fn).fit(v, np.asarray(pseudo), x=x)


def project_predict(fit, v, estimand=Estimand.PSI_M1, provenance=""):
    est, se = fit.predict_with_se(np.atleast_1d(v))
    return make_report(estimand, est[0], se[0], fit.n_, point=np.atleast_1d(v)[0],
                       provenance=provenance)


# ---------------------------------------------------------------------------
# local-linear smoother


def _ll_weights(v_train, v_query, h):
    """Local-linear Gaussian-kernel weights, shape (q, n); rows sum to one.

    Falls back to locally-constant weights where the local-linear system is
    singular, and to the nearest training point where the kernel underflows
    entirely (far extrapolation at small bandwidths).
    """
    dv = v_train[None, :] - v_query[:, None]
    d = dv / h
    K = np.exp(-0.5 * d * d)
    s0 = K.sum(axis=1, keepdims=True)
    s1 = (K * dv).sum(axis=1, keepdims=True)
    s2 = (K * dv * dv).sum(axis=1, keepdims=True)
    denom = s0 * s2 - s1 * s1
    out = np.zeros_like(K)
    ll = (denom > 1e-300).ravel()
    nw = ~ll & (s0 > 1e-300).ravel()
    dead = ~(ll | nw)
    if ll.any():
        out[ll] = (K[ll] * (s2[ll] - dv[ll] * s1[ll])) / denom[ll]
    if nw.any():
        out[nw] = K[nw] / s0[nw]
    if dead.any():
        rows = np.flatnonzero(dead)
        out[rows, np.abs(dv[rows]).argmin(axis=1)] = 1.0
    return out


def loo_cv_mse(v, ys, h_grid, max_points=1500):
    """Leave-one-out CV error for each bandwidth and each response vector.

    The kernel matrices are shared across responses, so selecting bandwidths
    for several pseudo-outcome vectors on the same design costs one pass.
    """
    v = np.asarray(v, dtype=float).ravel()
    n = v.shape[0]
    if n > max_points:
        order = np.argsort(v, kind="stable")
        pick = order[np.linspace(0, n - 1, max_points).astype(int)]
        # optimal bandwidths shrink like n^(-1/5); rescale from the CV subsample
        scale = (max_points / n) ** 0.2
    else:
        pick = slice(None)
        scale = 1.0
    v_cv = v[pick]
    ys_cv = [np.asarray(y, dtype=float)[pick] for y in ys]
    mse = np.empty((len(h_grid), len(ys)))
    for i, h in enumerate(h_grid):
        W = _ll_weights(v_cv, v_cv, h)
        diag = np.clip(np.diag(W), None, 1.0 - 1e-8)
        for j, y in enumerate(ys_cv):
            resid = (y - W @ y) / (1.0 - diag)
            mse[i, j] = float(np.mean(resid ** 2))
    return mse, scale


def bandwidth_grid(v, size=20, span=(0.05, 2.0)):
    sd = float(np.std(np.asarray(v, dtype=float)))
    return np.exp(np.linspace(np.log(span[0] * sd), np.log(span[1] * sd), size))


class LocalLinearSmoother(BaseEstimator):
    """Local-linear Gaussian-kernel regression with leave-one-out bandwidth
    selection over a 20-point log grid spanning [0.05, 2] times sd(v)."""

    def __init__(self, bandwidth="cv", cv_grid_size=20, cv_span=(0.05, 2.0),
                 cv_max_points=1500, min_points=20):
        self.bandwidth = bandwidth
        self.cv_grid_size = cv_grid_size
        self.cv_span = cv_span
        self.cv_max_points = cv_max_points
        self.min_points = min_points

    def fit(self, v, y):
        v = np.asarray(v, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if v.shape[0] < self.min_points:
            raise ValueError(f"need at least {self.min_points} points")
        if np.std(v) == 0:
            raise DegenerateDesignError("all smoothing covariate values identical")
        if self.bandwidth == "cv":
            grid = bandwidth_grid(v, self.cv_grid_size, self.cv_span)
            mse, scale = loo_cv_mse(v, [y], grid, self.cv_max_points)
            self.bandwidth_ = float(grid[int(np.argmin(mse[:, 0]))]) * scale
        else:
            self.bandwidth_ = float(self.bandwidth)
        self.v_, self.y_ = v, y
        self._sigma2 = None
        return self

    def weights(self, v_query):
        return _ll_weights(self.v_, np.atleast_1d(np.asarray(v_query, dtype=float)),
                           self.bandwidth_)

    def predict(self, v_query):
        return self.weights(v_query) @ self.y_

    def residual_variance(self):
        if self._sigma2 is None:
            W = self.weights(self.v_)
            fitted = W @ self.y_
            df = max(self.v_.shape[0] - float(np.trace(W)), 1.0)
            self._sigma2 = float(np.sum((self.y_ - fitted) ** 2) / df)
        return self._sigma2

    def predict_with_se(self, v_query):
        W = self.weights(v_query)
        fit = W @ self.y_
        se = np.sqrt(self.residual_variance() * np.sum(W * W, axis=1))
        return fit, se

    def sum_abs_weights(self, v_query):
        return np.abs(self.weights(v_query)).sum(axis=1)


def fit_smoother(y, v, bandwidth="cv", **kwargs):
    return LocalLinearSmoother(bandwidth=bandwidth, **kwargs).fit(v, y)


# ---------------------------------------------------------------------------
# DR-Learner


def _resolve_nuisances(data, learner_or_eta, plan, seed):
    """Cross-fit a learner, or evaluate a fixed (oracle/synthetic) set."""
    if hasattr(learner_or_eta, "pi"):
        return None, learner_or_eta
    if plan is None:
        plan = make_folds(data.n, seed=seed)
    if isinstance(learner_or_eta, NuisanceLearner):
        factory = lambda: NuisanceLearner(**learner_or_eta.get_params())
    elif callable(learner_or_eta):
        factory = learner_or_eta
    else:
        raise TypeError("expected a NuisanceSet, NuisanceLearner or factory")
    return CrossFitNuisances(data, plan, factory), None


class DRLearner(BaseEstimator):
    """Pseudo-outcome regression: estimated influence-function values
    regressed onto the conditioning covariate with a local-linear smoother.

    With a fixed nuisance set the regression runs on the whole sample (the
    oracle configuration); with a learner the nuisances are cross-fit and the
    second stage follows the fold plan mode (swap-average or pooled).
    """

    def __init__(self, learner=None, eta=None, k=2, mode="swap-average", seed=0,
                 v_index=0, bandwidth="cv", pseudo="psi_m1", sa=None,
                 arms=DEFAULT_ARMS, cv_max_points=1500):
        self.learner = learner
        self.eta = eta
        self.k = k
        self.mode = mode
        self.seed = seed
        self.v_index = v_index
        self.bandwidth = bandwidth
        self.pseudo = pseudo
        self.sa = sa
        self.arms = arms
        self.cv_max_points = cv_max_points

    def _pseudo_fn(self):
        kind = self.pseudo
        if kind == "psi_m1":
            return lambda d, eta: _eif.eif_psi_m1(d, eta, self.arms).values
        if kind == "psi_total":
            return lambda d, eta: _eif.eif_cate(
                d, _eif.CateNuisance.from_nuisances(eta), self.arms).values
        if kind == "psi_m1_lb":
            return lambda d, eta: _eif.eif_bounds(d, eta, self.arms, self.sa)[0].values
        if kind == "psi_m1_ub":
            return lambda d, eta: _eif.eif_bounds(d, eta, self.arms, self.sa)[1].values
        if kind == "prop_mediated_m1":
            return lambda d, eta: _eif.eif_ratio(
                d, eta, _eif.CateNuisance.from_nuisances(eta), self.arms).values
        raise ValueError(f"unknown pseudo-outcome kind {self.pseudo!r}")

    def fit(self, data):
        if self.eta is not None:
            plan, source = None, self.eta
        else:
            plan = make_folds(data.n, k=self.k, seed=self.seed, mode=self.mode)
            source = self.learner if self.learner is not None else NuisanceLearner()
        crossfit, fixed_eta = _resolve_nuisances(data, source, plan, self.seed)
        fn = self._pseudo_fn()
        v = data.x[:, self.v_index]
        self.smoothers_ = []
        if fixed_eta is not None:
            values = fn(data, fixed_eta)
            self.smoothers_.append((1.0, LocalLinearSmoother(
                bandwidth=self.bandwidth, cv_max_points=self.cv_max_points).fit(v, values)))
            self.provenance_ = fixed_eta.provenance
        elif plan.mode == "pooled-second-stage":
            values = crossfit.pseudo_outcomes(fn)
            self.smoothers_.append((1.0, LocalLinearSmoother(
                bandwidth=self.bandwidth, cv_max_points=self.cv_max_points).fit(v, values)))
            self.provenance_ = "fitted"
        else:
            share = 1.0 / plan.k
            for mask, values in crossfit.fold_values(fn):
                sm = LocalLinearSmoother(bandwidth=self.bandwidth,
                                         cv_max_points=self.cv_max_points).fit(v[mask], values)
                self.smoothers_.append((share, sm))
            self.provenance_ = "fitted"
        self.n_ = data.n
        return self

    def predict(self, v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return sum(share * sm.predict(v) for share, sm in self.smoothers_)

    def predict_with_se(self, v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        fit = np.zeros(v.shape[0])
        var = np.zeros(v.shape[0])
        for share, sm in self.smoothers_:
            f, s = sm.predict_with_se(v)
            fit += share * f
            var += (share * s) ** 2
        return fit, np.sqrt(var)

    def reports(self, v, estimand=None):
        estimand = estimand or self.pseudo
        fit, se = self.predict_with_se(v)
        out = []
        for vi, fi, si in zip(np.atleast_1d(v), fit, se):
            diags = {"sum_abs_weights": float(sum(
                share * sm.sum_abs_weights([vi])[0] for share, sm in self.smoothers_)),
                "bandwidths": [sm.bandwidth_ for _, sm in self.smoothers_]}
            out.append(make_report(estimand, fi, si, self.n_, point=vi,
                                   provenance=self.provenance_, diagnostics=diags))
        return out


def dr_learner(data, learner_or_eta, v_queries, k=2, mode="swap-average", seed=0,
               arms=DEFAULT_ARMS, pseudo="psi_m1", sa=None, bandwidth="cv"):
    """Fit the pseudo-outcome regression and report estimates at ``v_queries``."""
    eta = learner_or_eta if hasattr(learner_or_eta, "pi") else None
    learner = None if eta is not None else learner_or_eta
    model = DRLearner(learner=learner, eta=eta, k=k, mode=mode, seed=seed,
                      pseudo=pseudo, sa=sa, arms=arms, bandwidth=bandwidth).fit(data)
    return model.reports(np.atleast_1d(v_queries))


def dr_learner_bounds(data, learner_or_eta, sa, v_queries, **kwargs):
    """DR-Learner curves for the lower and upper bound pseudo-outcomes."""
    lb = dr_learner(data, learner_or_eta, v_queries, pseudo="psi_m1_lb", sa=sa, **kwargs)
    ub = dr_learner(data, learner_or_eta, v_queries, pseudo="psi_m1_ub", sa=sa, **kwargs)
    return lb, ub


# ---------------------------------------------------------------------------
# projection front-ends (cross-fit and bounds variants)


def projection_estimate(data, learner_or_eta, v_queries, basis="linear", k=2,
                        mode="swap-average", seed=0, arms=DEFAULT_ARMS,
                        pseudo="psi_m1", sa=None, weight_fn=None):
    """Cross-fit projection estimates of the conditional effect at points.

    With a fixed nuisance set, a single projection is fit on the full sample.
    """
    v = data.x[:, 0]
    if hasattr(learner_or_eta, "pi"):
        values = _projection_pseudo(data, learner_or_eta, pseudo, sa, arms)
        fit = fit_projection(values, v, basis=basis, weight_fn=weight_fn, x=data.x)
        fits = [(1.0, fit)]
        provenance = learner_or_eta.provenance
    else:
        plan = make_folds(data.n, k=k, seed=seed, mode=mode)
        crossfit, _ = _resolve_nuisances(data, learner_or_eta, plan, seed)
        fn = lambda d, eta: _projection_pseudo(d, eta, pseudo, sa, arms)
        if mode == "pooled-second-stage":
            values = crossfit.pseudo_outcomes(fn)
            fits = [(1.0, fit_projection(values, v, basis=basis, weight_fn=weight_fn, x=data.x))]
        else:
            fits = []
            for mask, values in crossfit.fold_values(fn):
                fits.append((1.0 / plan.k,
                             fit_projection(values, v[mask], basis=basis,
                                            weight_fn=weight_fn, x=data.x[mask])))
        provenance = "fitted"
    out = []
    for vq in np.atleast_1d(v_queries):
        est = sum(share * f.predict([vq])[0] for share, f in fits)
        var = sum((share * f.predict_with_se([vq])[1][0]) ** 2 for share, f in fits)
        out.append(make_report(pseudo, est, np.sqrt(var), data.n, point=vq,
                               provenance=provenance))
    return out


def _projection_pseudo(data, eta, pseudo, sa, arms):
    if pseudo == "psi_m1":
        return _eif.eif_psi_m1(data, eta, arms).values
    if pseudo == "psi_total":
        return _eif.eif_cate(data, _eif.CateNuisance.from_nuisances(eta), arms).values
    if pseudo == "psi_m1_lb":
        return _eif.eif_bounds(data, eta, arms, sa)[0].values
    if pseudo == "psi_m1_ub":
        return _eif.eif_bounds(data, eta, arms, sa)[1].values
    if pseudo == "prop_mediated_m1":
        return _eif.eif_ratio(data, eta, _eif.CateNuisance.from_nuisances(eta), arms).values
    if pseudo == "plugin_psi_m1":
        return _eif.conditional_psi_m1(eta, data.x, arms)
    raise ValueError(f"unknown pseudo-outcome kind {pseudo!r}")


def projection_bounds(data, learner_or_eta, sa, v_queries, **kwargs):
    lb = projection_estimate(data, learner_or_eta, v_queries, pseudo="psi_m1_lb", sa=sa, **kwargs)
    ub = projection_estimate(data, learner_or_eta, v_queries, pseudo="psi_m1_ub", sa=sa, **kwargs)
    return lb, ub


def plugin_projection(data, learner_or_eta, v_queries, basis="linear", k=2,
                      mode="swap-average", seed=0, arms=DEFAULT_ARMS, weight_fn=None):
    """Comparator that regresses plug-in conditional-effect values instead of
    influence-function values; its intervals ignore first-stage error."""
    return projection_estimate(data, learner_or_eta, v_queries, basis=basis, k=k,
                               mode=mode, seed=seed, arms=arms,
                               pseudo="plugin_psi_m1", weight_fn=weight_fn)


def plugin_smoother(data, learner_or_eta, v_queries, k=2, mode="swap-average",
                    seed=0, arms=DEFAULT_ARMS, bandwidth="cv"):
    """Smoother comparator on plug-in conditional-effect values."""
    v = data.x[:, 0]
    if hasattr(learner_or_eta, "pi"):
        values = _eif.conditional_psi_m1(learner_or_eta, data.x, arms)
        sm = LocalLinearSmoother(bandwidth=bandwidth).fit(v, values)
        fits, provenance = [(1.0, sm)], learner_or_eta.provenance
    else:
        plan = make_folds(data.n, k=k, seed=seed, mode=mode)
        crossfit, _ = _resolve_nuisances(data, learner_or_eta, plan, seed)
        fn = lambda d, eta: _eif.conditional_psi_m1(eta, d.x, arms)
        fits = []
        if mode == "pooled-second-stage":
            values = crossfit.pseudo_outcomes(fn)
            fits.append((1.0, LocalLinearSmoother(bandwidth=bandwidth).fit(v, values)))
        else:
            for mask, values in crossfit.fold_values(fn):
                fits.append((1.0 / plan.k,
                             LocalLinearSmoother(bandwidth=bandwidth).fit(v[mask], values)))
        provenance = "fitted"
    out = []
    for vq in np.atleast_1d(v_queries):
        est = sum(share * sm.predict([vq])[0] for share, sm in fits)
        var = sum((share * sm.predict_with_se([vq])[1][0]) ** 2 for share, sm in fits)
        out.append(make_report("plugin_psi_m1", est, np.sqrt(var), data.n, point=vq,
                               provenance=provenance))
    return out


# ---------------------------------------------------------------------------
# proportion mediated


def proportion_mediated(data, learner_or_eta, v, mode="separate", k=2,
                        fold_mode="swap-average", seed=0, arms=DEFAULT_ARMS,
                        second_stage="smoother", basis="linear", bandwidth="cv",
                        delta=RATIO_FLOOR):
    """Conditional proportion mediated at ``v`` by one of two strategies.

    ``ratio`` regresses the ratio influence function; ``separate`` takes the
    ratio of two second-stage fits with a delta-method standard error that
    assumes positively dependent errors (conservative).
    """
    v = float(v)
    if mode == "ratio":
        if second_stage == "smoother":
            model = DRLearner(learner=None if hasattr(learner_or_eta, "pi") else learner_or_eta,
                              eta=learner_or_eta if hasattr(learner_or_eta, "pi") else None,
                              k=k, mode=fold_mode, seed=seed, pseudo="prop_mediated_m1",
                              arms=arms, bandwidth=bandwidth).fit(data)
            return model.reports([v], estimand=Estimand.PROP_MEDIATED_M1)[0]
        rep = projection_estimate(data, learner_or_eta, [v], basis=basis, k=k,
                                  mode=fold_mode, seed=seed, arms=arms,
                                  pseudo="prop_mediated_m1")[0]
        return rep
    if mode != "separate":
        raise ValueError("mode must be 'ratio' or 'separate'")
    if second_stage == "smoother":
        num = DRLearner(learner=None if hasattr(learner_or_eta, "pi") else learner_or_eta,
                        eta=learner_or_eta if hasattr(learner_or_eta, "pi") else None,
                        k=k, mode=fold_mode, seed=seed, pseudo="psi_m1",
                        arms=arms, bandwidth=bandwidth).fit(data)
        den = DRLearner(learner=None if hasattr(learner_or_eta, "pi") else learner_or_eta,
                        eta=learner_or_eta if hasattr(learner_or_eta, "pi") else None,
                        k=k, mode=fold_mode, seed=seed, pseudo="psi_total",
                        arms=arms, bandwidth=bandwidth).fit(data)
        num_fit, num_se = num.predict_with_se([v])
        den_fit, den_se = den.predict_with_se([v])
    else:
        num_rep = projection_estimate(data, learner_or_eta, [v], basis=basis, k=k,
                                      mode=fold_mode, seed=seed, arms=arms, pseudo="psi_m1")[0]
        den_rep = projection_estimate(data, learner_or_eta, [v], basis=basis, k=k,
                                      mode=fold_mode, seed=seed, arms=arms, pseudo="psi_total")[0]
        num_fit, num_se = np.array([num_rep.estimate]), np.array([num_rep.se])
        den_fit, den_se = np.array([den_rep.estimate]), np.array([den_rep.se])
    if abs(den_fit[0]) < delta:
        raise RatioDegenerateError("|psi(v)| estimate below the ratio floor")
    est = num_fit[0] / den_fit[0]
    se = np.sqrt((num_se[0] / den_fit[0]) ** 2 + (num_fit[0] * den_se[0] / den_fit[0] ** 2) ** 2)
    return make_report(Estimand.PROP_MEDIATED_M1, est, se, data.n, point=v,
                       provenance="fitted", diagnostics={"mode": mode})
