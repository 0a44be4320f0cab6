"""Simulation laboratory: the piecewise data-generating process, exact truth
curves, the known-selection variant for sensitivity checks, Monte-Carlo
performance tables, and the convergence-rate experiment with synthetic
nuisances.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm

from .core import DEFAULT_ARMS, Dataset, NuisanceSet
from . import eif as _eif
from .estimators import (
    LocalLinearSmoother,
    bandwidth_grid,
    fit_projection,
    loo_cv_mse,
    make_report,
)
from .nuisance import (
    BasisSpec,
    CrossFitNuisances,
    NuisanceLearner,
    RateSpec,
    make_folds,
    synthetic_nuisances,
)

X_DOMAIN = (-2.0, 4.0)


def _pi1(x):
    x = np.asarray(x, dtype=float)
    return np.select(
        [x <= -1.0, x <= 0.0, x <= 1.0, x <= 2.0, x <= 3.0],
        [0.2,
         0.2 + 0.55 * np.abs(x + 1.0),
         0.75 - 0.25 * x,
         0.5 - 0.25 * (x - 1.0) ** 2,
         0.25 + 0.5 * (x - 2.0)],
        default=0.75,
    )


_C1 = -12.0 + 10.0 * np.sin(1.0) + 10.0 * np.cos(1.0)


def _zeta(x):
    x = np.asarray(x, dtype=float)
    return np.select(
        [x <= -0.5, x <= 0.0, x <= 1.0, x <= 1.5, x <= 2.5],
        [x - x ** 2,
         -2.0 + x,
         -12.0 + 10.0 * np.sin(x ** 2) + 10.0 * np.cos(x ** 2),
         _C1 - 5.0 * (x - 1.0) - 5.0 * (x - 1.0) ** 2,
         _C1 - 3.75 + 0.5 * (x - 1.5) - (x - 1.5) ** 2 + 3.0 * (x - 1.5) ** 3],
        default=-4.0 + 2.0 * x,
    )


def _q_m1(a, u, x):
    if u == 1:
        return np.full_like(np.asarray(x, dtype=float), 0.8 if a == 1 else 0.1)
    return 0.55 + 0.05 * (x + 1.0) if a == 1 else 0.15 + 0.1 * (x + 1.0)


def _q_m2(a, u, x):
    if u == 1:
        return np.full_like(np.asarray(x, dtype=float), 0.8 if a == 1 else 0.1)
    return 0.4 + 0.1 * (x + 0.5) if a == 1 else 0.15 + 0.125 * (x + 1.0)


def _pattern(m1, m2, x):
    z = _zeta(x)
    bump = 2.0 * x + 0.5 * x ** 2
    if (m1, m2) == (1, 1):
        return 10.0 + z + bump
    if (m1, m2) == (0, 1):
        return 4.0 + z
    if (m1, m2) == (1, 0):
        return 8.0 + z + bump
    return z


class DgpNuisanceSet(NuisanceSet):
    """Closed-form true nuisances of the simulation DGP."""

    provenance = "true-dgp"

    def __init__(self, dgp):
        self._dgp = dgp

    @staticmethod
    def _col(x):
        x = np.asarray(x, dtype=float)
        return x[:, 0] if x.ndim == 2 else x

    def _pi1(self, x):
        return _pi1(self._col(x))

    def mu(self, a, m1, m2, x):
        return self._dgp.mu(m1, m2, self._col(x))

    def _p_joint(self, m1, m2, a, x):
        return self._dgp.joint(m1, m2, a, self._col(x))


@dataclass(frozen=True)
class TruthCurves:
    x: np.ndarray
    psi_m1: np.ndarray
    psi_m2: np.ndarray
    psi_cov: np.ndarray
    psi_ide: np.ndarray
    psi_total: np.ndarray
    prop_med: np.ndarray

    def frame(self):
        return pd.DataFrame({
            "x": self.x, "psi_m1": self.psi_m1, "psi_m2": self.psi_m2,
            "psi_cov": self.psi_cov, "psi_ide": self.psi_ide,
            "psi_total": self.psi_total, "prop_med": self.prop_med,
        })


class Dgp:
    """Simulation data-generating process on the clamped covariate domain.

    ``dispersion`` is read as the variance of the latent normal covariate by
    default; the pointwise truth curves do not depend on this choice.
    """

    def __init__(self, dispersion=0.5, dispersion_is_variance=True, z_grid=4001):
        self.sd = float(np.sqrt(dispersion)) if dispersion_is_variance else float(dispersion)
        grid = np.linspace(X_DOMAIN[0], X_DOMAIN[1], z_grid)
        values = [ _pattern(m1, m2, grid) for m1 in (0, 1) for m2 in (0, 1) ]
        allv = np.concatenate(values)
        # the rescale needs the pattern minimum; taking both extrema as maxima
        # would degenerate the map
        self.z_upper = float(allv.max())
        self.z_lower = float(allv.min())

    # -- structural functions -------------------------------------------------

    def pi1(self, x):
        return _pi1(x)

    def mu(self, m1, m2, x):
        raw = _pattern(m1, m2, np.asarray(x, dtype=float))
        return (raw - self.z_lower + 10.0) / (self.z_upper - self.z_lower + 20.0)

    def marginal_m1(self, a, x):
        x = np.asarray(x, dtype=float)
        q0, q1 = _q_m1(a, 0, x), _q_m1(a, 1, x)
        return 0.5 * (q0 + q1)

    def marginal_m2(self, a, x):
        x = np.asarray(x, dtype=float)
        q0, q1 = _q_m2(a, 0, x), _q_m2(a, 1, x)
        return 0.5 * (q0 + q1)

    def joint(self, m1, m2, a, x):
        x = np.asarray(x, dtype=float)
        total = 0.0
        for u in (0, 1):
            q1 = _q_m1(a, u, x)
            q2 = _q_m2(a, u, x)
            p1 = q1 if m1 == 1 else 1.0 - q1
            p2 = q2 if m2 == 1 else 1.0 - q2
            total = total + 0.5 * p1 * p2
        return total

    def nuisances(self):
        return DgpNuisanceSet(self)

    # -- sampling --------------------------------------------------------------

    def sample(self, n, seed_or_rng=0):
        rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
            else np.random.default_rng(seed_or_rng)
        x = np.clip(rng.normal(1.0, self.sd, size=n), X_DOMAIN[0], X_DOMAIN[1])
        a = (rng.uniform(size=n) < _pi1(x)).astype(int)
        u = (rng.uniform(size=n) < 0.5).astype(int)
        q1 = np.where(u == 1, np.where(a == 1, 0.8, 0.1),
                      np.where(a == 1, _q_m1(1, 0, x), _q_m1(0, 0, x)))
        q2 = np.where(u == 1, np.where(a == 1, 0.8, 0.1),
                      np.where(a == 1, _q_m2(1, 0, x), _q_m2(0, 0, x)))
        m1 = (rng.uniform(size=n) < q1).astype(int)
        m2 = (rng.uniform(size=n) < q2).astype(int)
        mu = np.empty(n)
        for v1 in (0, 1):
            for v2 in (0, 1):
                mask = (m1 == v1) & (m2 == v2)
                mu[mask] = self.mu(v1, v2, x[mask])
        y = (rng.uniform(size=n) < mu).astype(float)
        return Dataset(y, a, m1, m2, x[:, None])

    # -- truth -----------------------------------------------------------------

    def truth(self, x_grid, arms=DEFAULT_ARMS):
        """Exact conditional effect curves by direct cell summation."""
        x = np.asarray(x_grid, dtype=float).ravel()
        a, ap = arms.a, arms.a_prime
        psi_m1 = np.zeros_like(x)
        psi_m2 = np.zeros_like(x)
        psi_cov = np.zeros_like(x)
        psi_ide = np.zeros_like(x)
        psi = np.zeros_like(x)
        for m1 in (0, 1):
            p1a = self.marginal_m1(a, x)
            p1ap = self.marginal_m1(ap, x)
            p1a = p1a if m1 == 1 else 1.0 - p1a
            p1ap = p1ap if m1 == 1 else 1.0 - p1ap
            for m2 in (0, 1):
                mu = self.mu(m1, m2, x)
                p2a = self.marginal_m2(a, x)
                p2ap = self.marginal_m2(ap, x)
                p2a = p2a if m2 == 1 else 1.0 - p2a
                p2ap = p2ap if m2 == 1 else 1.0 - p2ap
                ja = self.joint(m1, m2, a, x)
                jap = self.joint(m1, m2, ap, x)
                psi_m1 += mu * (p1a - p1ap) * p2ap
                psi_m2 += mu * (p2a - p2ap) * p1a
                psi_cov += mu * ((ja - p1a * p2a) - (jap - p1ap * p2ap))
                psi += mu * ja - mu * jap
                # identical outcome patterns across arms: direct effect is zero
        prop = psi_m1 / psi
        return TruthCurves(x, psi_m1, psi_m2, psi_cov, psi_ide, psi, prop)

    # -- covariate-law quadrature ------------------------------------------------

    def x_quadrature(self, n_nodes=2001):
        lo, hi = X_DOMAIN
        nodes = np.linspace(lo, hi, n_nodes)
        pdf = norm.pdf(nodes, loc=1.0, scale=self.sd)
        w = np.full(n_nodes, (hi - lo) / (n_nodes - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        w = pdf * w
        w[0] += norm.cdf(lo, loc=1.0, scale=self.sd)
        w[-1] += norm.sf(hi, loc=1.0, scale=self.sd)
        return nodes, w / w.sum()

    def average(self, curve_fn, n_nodes=2001):
        nodes, w = self.x_quadrature(n_nodes)
        return float(np.asarray(curve_fn(nodes)) @ w)

    def projection_truth(self, basis="linear", n_nodes=2001, arms=DEFAULT_ARMS,
                         curve="psi_m1"):
        """Population projection coefficients of a conditional effect curve."""
        from .estimators import _basis_matrix

        nodes, w = self.x_quadrature(n_nodes)
        target = getattr(self.truth(nodes, arms), curve)
        G = _basis_matrix(basis, nodes)
        gram = (G * w[:, None]).T @ G
        beta = np.linalg.solve(gram, (G * w[:, None]).T @ target)
        return beta

    def projection_truth_at(self, v, curve="psi_m1", basis="linear", n_nodes=2001,
                            arms=DEFAULT_ARMS):
        """Population projection of a truth curve evaluated at one point."""
        from .estimators import _basis_matrix

        beta = self.projection_truth(basis=basis, n_nodes=n_nodes, arms=arms, curve=curve)
        return float((_basis_matrix(basis, np.array([float(v)])) @ beta)[0])


def max_inverse_weight(x, dgp=None, arms=DEFAULT_ARMS):
    """Largest inverse-probability weight magnitude in the influence function
    at covariate value(s) x: the combined residual weight and its per-arm
    component analogues, maximized over mediator cells."""
    dgp = dgp or Dgp()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    a, ap = arms.a, arms.a_prime
    pi_a = dgp.pi1(x) if a == 1 else 1.0 - dgp.pi1(x)
    best = np.zeros_like(x)
    for m1 in (0, 1):
        p1a = dgp.marginal_m1(a, x)
        p1ap = dgp.marginal_m1(ap, x)
        p1a = p1a if m1 == 1 else 1.0 - p1a
        p1ap = p1ap if m1 == 1 else 1.0 - p1ap
        for m2 in (0, 1):
            p2ap = dgp.marginal_m2(ap, x)
            p2ap = p2ap if m2 == 1 else 1.0 - p2ap
            pj = dgp.joint(m1, m2, a, x)
            denom = pi_a * pj
            best = np.maximum(best, np.abs(p1a - p1ap) * p2ap / denom)
            best = np.maximum(best, p1a * p2ap / denom)
            best = np.maximum(best, p1ap * p2ap / denom)
    return best if best.shape[0] > 1 else float(best[0])


# ---------------------------------------------------------------------------
# selection mechanism


def tau_star(x, sigma):
    x = np.asarray(x, dtype=float)
    step = np.select(
        [x <= -1.0, x <= 0.0, x <= 1.0, x <= 2.0, x <= 3.0],
        [0.01, 0.02, 0.03, 0.02, 0.01],
        default=0.03,
    )
    return sigma * step


class SelectionNuisanceSet(DgpNuisanceSet):
    """The DGP's nuisances with the outcome regression replaced by the biased
    observed regression implied by the known selection mechanism."""

    def __init__(self, dgp, sigma):
        super().__init__(dgp)
        self._sigma = sigma

    def mu(self, a, m1, m2, x):
        xv = self._col(x)
        truth = self._dgp.mu(m1, m2, xv)
        slack = 1.0 - self._dgp.joint(m1, m2, a, xv)
        tau = tau_star(xv, self._sigma)
        denom = 1.0 - tau * slack
        upper_regime = truth / denom
        lower_regime = (truth - tau * slack) / denom
        return np.where(xv >= 1.0, upper_regime, lower_regime)


@dataclass(frozen=True)
class SelectionDgp:
    """Biased nuisances plus everything needed to check the bounds and the
    known-selection recovery on them."""

    dgp: Dgp
    sigma: float
    biased: SelectionNuisanceSet

    def tau(self, x):
        return tau_star(x, self.sigma)

    def true_psi_m1(self, x, arms=DEFAULT_ARMS):
        return self.dgp.truth(x, arms).psi_m1

    def selection_constants(self, x):
        """(c, t, f(tau)) arrays of the equality selection model per point."""
        x = np.asarray(x, dtype=float).ravel()
        tau = self.tau(x)
        c = np.where(x >= 1.0, 1.0, -1.0)
        t = np.where(x >= 1.0, 0.0, 1.0)
        f = np.where(x >= 1.0, -tau, tau)
        return c, t, f


def selection_dgp(sigma=10.0 / 3.0, dgp=None):
    dgp = dgp or Dgp()
    return SelectionDgp(dgp=dgp, sigma=sigma, biased=SelectionNuisanceSet(dgp, sigma))


# ---------------------------------------------------------------------------
# Monte-Carlo tables


@dataclass(frozen=True)
class TableConfig:
    estimators: tuple = ("plugin-linear", "plugin-quadratic",
                         "efficient-linear", "efficient-quadratic",
                         "dr-learner", "plugin-smoother")
    points: tuple = (0.0, 2.0)
    n: int = 1000
    reps: int = 500
    seed: int = 0
    folds: int = 2
    fold_mode: str = "swap-average"
    basis: BasisSpec = field(default_factory=BasisSpec)
    failure_cap: float = 0.01


@dataclass
class McReport:
    rows: list
    reps: int
    seed: int
    failures: list

    def frame(self):
        return pd.DataFrame(self.rows)

    def cell(self, estimator, point):
        for row in self.rows:
            if row["estimator"] == estimator and row["point"] == point:
                return row
        raise KeyError((estimator, point))


class ReplicationFailureCap(RuntimeError):
    pass


def _swap_average_reports(fits, points, n, estimand):
    out = {}
    for p in points:
        est = sum(share * f.predict([p])[0] for share, f in fits)
        var = sum((share * f.predict_with_se([p])[1][0]) ** 2 for share, f in fits)
        out[p] = make_report(estimand, est, np.sqrt(var), n, point=p)
    return out


def _table_one_rep(dgp, cfg, rep_seed, arms):
    rng = np.random.default_rng(rep_seed)
    data = dgp.sample(cfg.n, rng)
    plan = make_folds(cfg.n, cfg.folds, seed=int(rep_seed % 2 ** 31), mode=cfg.fold_mode)
    crossfit = CrossFitNuisances(data, plan, lambda: NuisanceLearner(basis=cfg.basis))
    v = data.x[:, 0]
    phi_folds = list(crossfit.fold_values(
        lambda d, eta: _eif.eif_psi_m1(d, eta, arms).values))
    plug_folds = list(crossfit.fold_values(
        lambda d, eta: _eif.conditional_psi_m1(eta, d.x, arms)))
    results = {}
    for name in cfg.estimators:
        if name in ("efficient-linear", "efficient-quadratic",
                    "plugin-linear", "plugin-quadratic"):
            basis = "linear" if name.endswith("linear") else "quadratic"
            folds = phi_folds if name.startswith("efficient") else plug_folds
            fits = [(1.0 / cfg.folds, fit_projection(vals, v[mask], basis=basis))
                    for mask, vals in folds]
            results[name] = _swap_average_reports(fits, cfg.points, cfg.n, name)
        elif name in ("dr-learner", "plugin-smoother"):
            folds = phi_folds if name == "dr-learner" else plug_folds
            fits = [(1.0 / cfg.folds, LocalLinearSmoother().fit(v[mask], vals))
                    for mask, vals in folds]
            results[name] = _swap_average_reports(fits, cfg.points, cfg.n, name)
        else:
            raise ValueError(f"unknown estimator {name!r}")
    return results


def _table_rep_safe(dgp, cfg, rep_seed, arms):
    try:
        return rep_seed, _table_one_rep(dgp, cfg, rep_seed, arms), None
    except Exception as err:  # noqa: BLE001 - replication failures are recorded
        return rep_seed, None, repr(err)


def run_table(cfg: TableConfig, dgp=None, arms=DEFAULT_ARMS, n_jobs=1):
    """Monte-Carlo bias / sd / RMSE / coverage per estimator and point.

    Replications run over a worker pool with per-replication seed streams, so
    results do not depend on scheduling.
    """
    dgp = dgp or Dgp()
    root = np.random.SeedSequence(cfg.seed)
    rep_seeds = [int(s.generate_state(1)[0]) for s in root.spawn(cfg.reps)]
    from .estimators import _basis_matrix
    projection_truths = {}
    for basis in ("linear", "quadratic"):
        beta = dgp.projection_truth(basis=basis)
        projection_truths[basis] = {
            p: float((_basis_matrix(basis, np.array([p])) @ beta)[0]) for p in cfg.points}
    curve = dgp.truth(np.asarray(cfg.points, dtype=float))
    point_truths = dict(zip(cfg.points, curve.psi_m1))

    per_cell = {(name, p): [] for name in cfg.estimators for p in cfg.points}
    failures = []
    outcomes = Parallel(n_jobs=n_jobs)(
        delayed(_table_rep_safe)(dgp, cfg, s, arms) for s in rep_seeds)
    for rep_seed, results, err in outcomes:
        if err is not None:
            failures.append({"seed": rep_seed, "error": err})
            continue
        for name, by_point in results.items():
            for p, rep in by_point.items():
                per_cell[(name, p)].append(rep)
    if len(failures) > cfg.failure_cap * cfg.reps:
        raise ReplicationFailureCap(f"{len(failures)} replication failures")

    rows = []
    for (name, p), reports in per_cell.items():
        if name.endswith("linear") or name.endswith("quadratic"):
            truth = projection_truths["linear" if name.endswith("linear") else "quadratic"][p]
            projection = "Linear" if name.endswith("linear") else "Quadratic"
            strategy = "Efficient" if name.startswith("efficient") else "Plugin"
        else:
            truth = point_truths[p]
            projection = ""
            strategy = "DR-Learner" if name == "dr-learner" else "Plugin"
        ests = np.array([r.estimate for r in reports])
        cover = np.array([r.ci_lower <= truth <= r.ci_upper for r in reports])
        bias = float(ests.mean() - truth)
        sd = float(ests.std(ddof=0))
        rmse = float(np.sqrt(np.mean((ests - truth) ** 2)))
        rows.append({
            "estimator": name, "strategy": strategy, "projection": projection,
            "point": p, "truth": truth, "bias": bias, "sd": sd, "rmse": rmse,
            "coverage": float(100.0 * cover.mean()), "reps": len(reports),
        })
    return McReport(rows=rows, reps=cfg.reps, seed=cfg.seed, failures=failures)


def table1_frame(report: McReport):
    """Projection-estimator rows with the published table's column names."""
    rows = []
    for r in report.rows:
        if not r["projection"]:
            continue
        rows.append({
            "Point": r["point"], "Strategy": r["strategy"], "Projection": r["projection"],
            "Truth": r["truth"], "Bias": r["bias"], "Std": r["sd"],
            "RMSE": r["rmse"], "Coverage": r["coverage"],
        })
    return pd.DataFrame(rows)


def table2_frame(report: McReport):
    rows = []
    for r in report.rows:
        if r["projection"]:
            continue
        rows.append({
            "Point": r["point"], "Strategy": r["strategy"], "Truth": r["truth"],
            "Bias": r["bias"], "Std": r["sd"], "RMSE": r["rmse"],
            "Coverage": r["coverage"] if r["strategy"] == "DR-Learner" else float("nan"),
        })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# convergence-rate experiment


CONVERGENCE_PANELS = {
    "all-fast": {"propensity": 0.5, "outcome": 0.5, "mediator": 0.5},
    "slow-propensity": {"propensity": 0.1, "outcome": 0.5, "mediator": 0.5},
    "slow-outcome": {"propensity": 0.5, "outcome": 0.1, "mediator": 0.5},
    "slow-mediator": {"propensity": 0.5, "outcome": 0.5, "mediator": 0.1},
}


def _convergence_rep(dgp, eta_true, alphas, n, state, grid, truth, weights,
                     arms, cv_max_points):
    rng = np.random.default_rng(state[0])
    data = dgp.sample(int(n), rng)
    rates = RateSpec(alpha=dict(alphas), C=1.0, seed=int(state[1]))
    eta_hat = synthetic_nuisances(eta_true, int(n), rates)
    v = data.x[:, 0]
    phi_hat = _eif.eif_psi_m1(data, eta_hat, arms).values
    phi_true = _eif.eif_psi_m1(data, eta_true, arms).values
    plug = _eif.conditional_psi_m1(eta_hat, data.x, arms)
    hgrid = bandwidth_grid(v)
    mse, scale = loo_cv_mse(v, [plug, phi_hat, phi_true], hgrid,
                            max_points=cv_max_points)
    out = {}
    for j, (name, values) in enumerate(
            (("plugin", plug), ("dr-learner", phi_hat), ("oracle", phi_true))):
        h = float(hgrid[int(np.argmin(mse[:, j]))]) * scale
        sm = LocalLinearSmoother(bandwidth=h).fit(v, values)
        pred = sm.predict(grid)
        out[name] = float(((pred - truth) ** 2) @ weights)
    return out


def run_convergence(n_grid=(500, 1000, 2000, 4000, 8000, 16000), reps=200, seed=0,
                    panels=None, eval_points=101, dgp=None, arms=DEFAULT_ARMS,
                    cv_max_points=1000, n_jobs=1):
    """Scaled integrated RMSE of plugin / DR-Learner / oracle second stages
    under rate-controlled synthetic nuisances.

    Returns a tidy DataFrame with columns (panel, n, estimator, scaled_rmse).
    """
    dgp = dgp or Dgp()
    panels = panels or CONVERGENCE_PANELS
    eta_true = dgp.nuisances()
    grid = np.linspace(X_DOMAIN[0], X_DOMAIN[1], eval_points)
    truth = dgp.truth(grid).psi_m1
    nodes, wq = dgp.x_quadrature(eval_points)
    weights = wq / wq.sum()
    rows = []
    root = np.random.SeedSequence(seed)
    for panel, alphas in panels.items():
        for n in n_grid:
            states = [ss.generate_state(2) for ss in root.spawn(reps)]
            per_rep = Parallel(n_jobs=n_jobs)(
                delayed(_convergence_rep)(dgp, eta_true, alphas, n, st, grid,
                                          truth, weights, arms, cv_max_points)
                for st in states)
            for name in ("plugin", "dr-learner", "oracle"):
                vals = [r[name] for r in per_rep]
                rows.append({
                    "panel": panel, "n": int(n), "estimator": name,
                    "scaled_rmse": float(np.sqrt(np.mean(vals)) * np.sqrt(n)),
                })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# proportion-mediated comparison


def run_proportion_mediated(n=1000, reps=200, seed=0, v=0.0, dgp=None,
                            arms=DEFAULT_ARMS, basis=None, folds=2):
    """Monte-Carlo comparison of the ratio and separate strategies at a point."""
    dgp = dgp or Dgp()
    basis = basis or BasisSpec()
    truth_curve = dgp.truth(np.array([v]))
    truth = float(truth_curve.prop_med[0])
    root = np.random.SeedSequence(seed)
    results = {"ratio": [], "separate": []}
    failures = []
    for rep_ss in root.spawn(reps):
        rep_seed = int(rep_ss.generate_state(1)[0])
        rng = np.random.default_rng(rep_seed)
        data = dgp.sample(n, rng)
        plan = make_folds(n, folds, seed=rep_seed % 2 ** 31)
        try:
            crossfit = CrossFitNuisances(data, plan, lambda: NuisanceLearner(basis=basis))
            vv = data.x[:, 0]
            phi_folds = list(crossfit.fold_values(
                lambda d, eta: _eif.eif_psi_m1(d, eta, arms).values))
            cate_folds = list(crossfit.fold_values(
                lambda d, eta: _eif.eif_cate(
                    d, _eif.CateNuisance.from_nuisances(eta), arms).values))
            # the ratio arm runs with the floor disabled: the point of the
            # comparison is to measure the blow-up the floor would mask
            ratio_folds = list(crossfit.fold_values(
                lambda d, eta: _eif.eif_ratio(
                    d, eta, _eif.CateNuisance.from_nuisances(eta), arms,
                    delta=1e-8).values))
            num_fits = [(0.5, LocalLinearSmoother().fit(vv[mask], vals))
                        for mask, vals in phi_folds]
            den_fits = [(0.5, LocalLinearSmoother().fit(vv[mask], vals))
                        for mask, vals in cate_folds]
            rat_fits = [(0.5, LocalLinearSmoother().fit(vv[mask], vals))
                        for mask, vals in ratio_folds]
            num = _swap_average_reports(num_fits, (v,), n, "psi_m1")[v]
            den = _swap_average_reports(den_fits, (v,), n, "psi_total")[v]
            rat = _swap_average_reports(rat_fits, (v,), n, "prop_mediated_m1")[v]
            est = num.estimate / den.estimate
            se = np.sqrt((num.se / den.estimate) ** 2
                         + (num.estimate * den.se / den.estimate ** 2) ** 2)
            results["separate"].append((est, se))
            results["ratio"].append((rat.estimate, rat.se))
        except Exception as err:  # noqa: BLE001
            failures.append({"seed": rep_seed, "error": repr(err)})
    rows = []
    for mode, vals in results.items():
        ests = np.array([e for e, _ in vals])
        ses = np.array([s for _, s in vals])
        cover = np.mean((ests - 1.959964 * ses <= truth) & (truth <= ests + 1.959964 * ses))
        rows.append({
            "mode": mode, "point": v, "truth": truth,
            "rmse": float(np.sqrt(np.mean((ests - truth) ** 2))),
            "coverage": float(100.0 * cover), "reps": len(vals),
        })
    return pd.DataFrame(rows), failures
