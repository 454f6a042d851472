"""Univariate imputation methods.

Each method is split in two steps: draw model parameters from their
(approximate) posterior given the currently completed data, then draw
synthetic values for the target rows given those parameters. The engine
calls :func:`fit_method` once per column and iteration and reuses the fitted
object both for imputing missing cells and for replicating observed ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

RIDGE_SCALE = 1e-8
DEFAULT_DONORS = 5
IRLS_TOL = 1e-8
IRLS_MAXIT = 50
SEPARATION_BOUND = 25.0
SMC_SAFETY = 1.05
SMC_MAX_PROPOSALS = 10_000


class ImputationError(ValueError):
    pass


class RankDeficientError(ImputationError):
    pass


class TooFewRowsError(ImputationError):
    pass


class SeparationError(ImputationError):
    pass


def design(X: np.ndarray) -> np.ndarray:
    """Prepend an intercept column."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(X.shape[0]), X])


def _ridge(xtx: np.ndarray) -> np.ndarray:
    k = xtx.shape[0]
    kappa = RIDGE_SCALE * np.trace(xtx) / k
    return xtx + kappa * np.eye(k)


# -- Bayesian linear regression ----------------------------------------------

@dataclass(frozen=True)
class LinRegDraw:
    beta: np.ndarray
    sigma2: float
    beta_hat: np.ndarray


def draw_bayes_linreg(
    X: np.ndarray, y: np.ndarray, rng: np.random.Generator, ridge: bool = True
) -> LinRegDraw:
    """One draw of (beta, sigma2) under the noninformative prior.

    ``X`` holds predictors only; an intercept is added. sigma2 is drawn as
    SSR / chi2(nu) with nu = rows - columns, and beta from
    N(beta_hat, sigma2 (X'X + kappa I)^-1) with kappa = 1e-8 trace(X'X) / columns.
    """
    Xd = design(X)
    y = np.asarray(y, dtype=float)
    n, k = Xd.shape
    if n < k + 1:
        raise TooFewRowsError(f"{n} rows cannot support {k} coefficients")
    xtx = Xd.T @ Xd
    if ridge:
        xtx = _ridge(xtx)
    try:
        np.linalg.cholesky(xtx)
    except np.linalg.LinAlgError:
        raise RankDeficientError("design matrix is rank deficient") from None
    if not ridge and np.linalg.cond(xtx) > 1e12:
        raise RankDeficientError("design matrix is rank deficient")
    v = np.linalg.inv(xtx)
    v = 0.5 * (v + v.T)
    beta_hat = v @ (Xd.T @ y)
    resid = y - Xd @ beta_hat
    ssr = float(resid @ resid)
    ssr = max(ssr, np.finfo(float).eps * max(1.0, float(y @ y)))
    nu = n - k
    sigma2 = ssr / rng.chisquare(nu)
    beta = beta_hat + np.sqrt(sigma2) * (np.linalg.cholesky(v) @ rng.standard_normal(k))
    return LinRegDraw(beta=beta, sigma2=float(sigma2), beta_hat=beta_hat)


def impute_norm(draw: LinRegDraw, X_target: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """x . beta + N(0, sigma2) for every target row."""
    Xd = design(X_target)
    if Xd.shape[1] != draw.beta.shape[0]:
        raise ImputationError(f"target design has {Xd.shape[1]} columns, draw has {draw.beta.shape[0]}")
    mean = Xd @ draw.beta
    return mean + np.sqrt(draw.sigma2) * rng.standard_normal(mean.shape[0])


# -- predictive mean matching ------------------------------------------------

def nearest_donors(yhat_obs: np.ndarray, yhat_target: np.ndarray, d: int) -> np.ndarray:
    """Indices of the ``d`` observed rows closest to each target prediction.

    Closeness is |yhat_target - yhat_obs|; equal distances are ordered by the
    smaller observed-row index. Returns an (n_target, d) int array.
    """
    yhat_obs = np.asarray(yhat_obs, dtype=float)
    yhat_target = np.asarray(yhat_target, dtype=float)
    n_obs = yhat_obs.shape[0]
    if d < 1:
        raise ImputationError("donor count must be positive")
    if d > n_obs:
        raise ImputationError(f"{d} donors requested but only {n_obs} observed rows")
    n_t = yhat_target.shape[0]
    if n_t == 0:
        return np.empty((0, d), dtype=int)

    order = np.argsort(yhat_obs, kind="stable")
    sorted_vals = yhat_obs[order]
    pos = np.searchsorted(sorted_vals, yhat_target)
    # The d nearest values sit inside the 2d sorted positions around the
    # insertion point; candidates outside that window only matter on ties.
    offsets = np.arange(-d, d)
    cand = pos[:, None] + offsets[None, :]
    valid = (cand >= 0) & (cand < n_obs)
    cand_c = np.clip(cand, 0, n_obs - 1)
    dist = np.where(valid, np.abs(yhat_target[:, None] - sorted_vals[cand_c]), np.inf)
    rows = np.where(valid, order[cand_c], n_obs)
    # lexsort: last key is primary
    idx = np.lexsort((rows, dist), axis=1)
    dist_sorted = np.take_along_axis(dist, idx, axis=1)
    out = np.take_along_axis(rows, idx, axis=1)[:, :d]
    kth = dist_sorted[:, d - 1]

    left = pos - d - 1
    right = pos + d
    left_d = np.where(left >= 0, np.abs(yhat_target - sorted_vals[np.clip(left, 0, n_obs - 1)]), np.inf)
    right_d = np.where(right < n_obs, np.abs(yhat_target - sorted_vals[np.clip(right, 0, n_obs - 1)]), np.inf)
    tied = (left_d <= kth) | (right_d <= kth)
    for t in np.flatnonzero(tied):
        out[t] = _nearest_exact(yhat_obs, yhat_target[t], d)
    return out


def _nearest_exact(yhat_obs: np.ndarray, target: float, d: int) -> np.ndarray:
    dist = np.abs(target - yhat_obs)
    return np.lexsort((np.arange(yhat_obs.shape[0]), dist))[:d]


def pmm_match(
    draw: LinRegDraw, X_obs: np.ndarray, X_target: np.ndarray, donors: int, rng: np.random.Generator
) -> np.ndarray:
    """Type-1 matching: beta_hat predicts donors, the beta draw predicts targets.

    Returns the index (into the observed rows) of the chosen donor per target.
    """
    yhat_obs = design(X_obs) @ draw.beta_hat
    yhat_target = design(X_target) @ draw.beta
    pool = nearest_donors(yhat_obs, yhat_target, donors)
    pick = rng.integers(0, donors, size=pool.shape[0])
    return pool[np.arange(pool.shape[0]), pick]


def impute_pmm(
    draw: LinRegDraw,
    X_obs: np.ndarray,
    y_obs: np.ndarray,
    X_target: np.ndarray,
    donors: int,
    rng: np.random.Generator,
) -> np.ndarray:
    chosen = pmm_match(draw, X_obs, X_target, donors, rng)
    return np.asarray(y_obs, dtype=float)[chosen]


# -- logistic regression -----------------------------------------------------

@dataclass(frozen=True)
class LogRegDraw:
    beta: np.ndarray
    cov: np.ndarray
    beta_hat: np.ndarray = field(default=None)
    augmented: bool = False


def fit_logistic_irls(
    Xd: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Maximum likelihood by IRLS on a design that already has its intercept.

    Returns (beta_hat, inverse observed information). Raises SeparationError
    when the iterates diverge past |beta| > 25 or fail to converge in 50 steps.
    """
    n, k = Xd.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    beta = np.zeros(k)
    for _ in range(IRLS_MAXIT):
        p = expit(Xd @ beta)
        wt = w * p * (1 - p)
        info = Xd.T @ (Xd * wt[:, None])
        score = Xd.T @ (w * (y - p))
        try:
            step = np.linalg.solve(_ridge(info), score)
        except np.linalg.LinAlgError:
            raise SeparationError("information matrix is singular") from None
        beta = beta + step
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError("coefficients diverged (separation)")
        if np.max(np.abs(step)) < IRLS_TOL:
            break
    else:
        raise SeparationError("IRLS did not converge")
    p = expit(Xd @ beta)
    info = Xd.T @ (Xd * (w * p * (1 - p))[:, None])
    cov = np.linalg.inv(_ridge(info))
    return beta, 0.5 * (cov + cov.T)


def draw_bayes_logreg(X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> LogRegDraw:
    """beta ~ N(MLE, inverse information). On separation two pseudo-rows at the
    predictor means (one per class) are appended and the fit retried."""
    Xd = design(X)
    y = np.asarray(y, dtype=float)
    augmented = False
    try:
        if y.min() == y.max():
            raise SeparationError("only one class observed")
        beta_hat, cov = fit_logistic_irls(Xd, y)
    except SeparationError:
        augmented = True
        centre = Xd.mean(axis=0)
        Xa = np.vstack([Xd, centre, centre])
        ya = np.concatenate([y, [0.0, 1.0]])
        beta_hat, cov = fit_logistic_irls(Xa, ya)
    beta = beta_hat + np.linalg.cholesky(cov) @ rng.standard_normal(beta_hat.shape[0])
    return LogRegDraw(beta=beta, cov=cov, beta_hat=beta_hat, augmented=augmented)


def impute_logreg(draw: LogRegDraw, X_target: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = expit(design(X_target) @ draw.beta)
    return (rng.random(p.shape[0]) < p).astype(float)


# -- quadratic covariates: polynomial combination ----------------------------

@dataclass(frozen=True)
class PolyCombFit:
    """Everything needed to impute (x, x^2) from the response y."""

    b1: float
    b2: float
    comb_draw: LinRegDraw
    y_obs: np.ndarray
    comb_obs: np.ndarray
    side_draw: LogRegDraw
    donors: int


def ols(Xd: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.linalg.solve(_ridge(Xd.T @ Xd), Xd.T @ y)


def fit_polycomb(
    y_fit: np.ndarray, x_fit: np.ndarray, y_obs: np.ndarray, x_obs: np.ndarray,
    donors: int, rng: np.random.Generator,
) -> PolyCombFit:
    """Fit y ~ x + x^2 on (y_fit, x_fit), then the PMM model for the
    combination C = b1 x + b2 x^2 and the root-side model on the observed rows."""
    b = ols(design(np.column_stack([x_fit, x_fit ** 2])), np.asarray(y_fit, dtype=float))
    b1, b2 = float(b[1]), float(b[2])
    comb_obs = b1 * x_obs + b2 * x_obs ** 2
    comb_draw = draw_bayes_linreg(y_obs, comb_obs, rng)
    side_obs = (x_obs > _vertex(b1, b2)).astype(float)
    side_draw = draw_bayes_logreg(y_obs, side_obs, rng)
    return PolyCombFit(b1, b2, comb_draw, np.asarray(y_obs, float), comb_obs, side_draw, donors)


def _vertex(b1: float, b2: float) -> float:
    if _is_linear(b1, b2):
        return -np.inf
    return -b1 / (2 * b2)


def _is_linear(b1: float, b2: float) -> bool:
    return abs(b2) <= 1e-8 * max(1.0, abs(b1))


def draw_polycomb(fit: PolyCombFit, y_target: np.ndarray, rng: np.random.Generator, return_info: bool = False):
    """Impute (x, x^2) for targets with responses ``y_target``.

    Returns an (n, 2) array, plus (combination values, negative-discriminant
    flags) when ``return_info`` is set.
    """
    y_target = np.asarray(y_target, dtype=float)
    chosen = pmm_match(fit.comb_draw, fit.y_obs, y_target, fit.donors, rng)
    comb = fit.comb_obs[chosen]
    side = impute_logreg(fit.side_draw, y_target, rng)
    x, flagged = solve_quadratic_side(fit.b1, fit.b2, comb, side)
    out = np.column_stack([x, x * x])
    if return_info:
        return out, comb, flagged
    return out


def solve_quadratic_side(b1: float, b2: float, comb: np.ndarray, side: np.ndarray):
    """Solve b2 x^2 + b1 x = comb and pick the root right of the vertex where
    ``side`` is 1. Negative discriminants return the vertex and are flagged."""
    comb = np.asarray(comb, dtype=float)
    if _is_linear(b1, b2):
        x = comb / b1 if b1 != 0 else np.zeros_like(comb)
        return x, np.zeros(comb.shape, dtype=bool)
    disc = b1 * b1 + 4 * b2 * comb
    flagged = disc < 0
    half = np.sqrt(np.where(flagged, 0.0, disc)) / (2 * abs(b2))
    vertex = -b1 / (2 * b2)
    x = np.where(np.asarray(side) > 0.5, vertex + half, vertex - half)
    return x, flagged


def impute_polycomb(
    y_response: np.ndarray, x_obs: np.ndarray, rows_missing: np.ndarray, donors: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Standalone PC imputation for a complete response and an incomplete x.

    ``x_obs`` has one entry per row (ignored where ``rows_missing``). The
    substantive fit uses the complete rows only.
    """
    y = np.asarray(y_response, dtype=float)
    miss = np.asarray(rows_missing, dtype=bool)
    xo = np.asarray(x_obs, dtype=float)[~miss]
    fit = fit_polycomb(y[~miss], xo, y[~miss], xo, donors, rng)
    return draw_polycomb(fit, y[miss], rng)


# -- quadratic covariates: substantive-model-compatible rejection sampling ----

@dataclass(frozen=True)
class SmcFcsFit:
    substantive: LinRegDraw  # y ~ 1 + x + x^2
    covariate: LinRegDraw  # x ~ 1


def _parabola_gap(beta: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Smallest |y - mu(x)| over x for mu(x) = b0 + b1 x + b2 x^2."""
    b0, b1, b2 = beta
    if _is_linear(b1, b2):
        return np.zeros_like(y)
    extreme = b0 - b1 * b1 / (4 * b2)
    if b2 > 0:
        return np.maximum(extreme - y, 0.0)
    return np.maximum(y - extreme, 0.0)


def impute_smcfcs_quadratic(
    y_response: np.ndarray,
    substantive_draw: LinRegDraw,
    covariate_draw: LinRegDraw,
    rng: np.random.Generator,
    max_proposals: int = SMC_MAX_PROPOSALS,
    return_info: bool = False,
):
    """Draw x from f(x | y) proportional to f(y | x, x^2) f(x) by rejection.

    Proposals come from the covariate model. A proposal for row i is kept with
    probability f(y_i | x*) / M_i where M_i is 1.05 times the largest value the
    substantive density can take at y_i. Rows still pending after
    ``max_proposals`` proposals get their best proposal and are flagged.
    """
    y = np.asarray(y_response, dtype=float)
    n = y.shape[0]
    beta = substantive_draw.beta
    s2 = substantive_draw.sigma2
    mu_x = float(covariate_draw.beta[0])
    sd_x = float(np.sqrt(covariate_draw.sigma2))
    gap2 = _parabola_gap(beta, y) ** 2

    x = np.full(n, np.nan)
    best_x = np.zeros(n)
    best_r = np.full(n, -np.inf)
    used = np.zeros(n, dtype=int)
    pending = np.arange(n)
    while pending.size:
        # Several proposals per pending row per round; the first accepted one
        # is kept, which is the same as proposing them one at a time.
        batch = int(min(max(1, np.ceil(4 * n / pending.size)), max_proposals - used[pending].min()))
        prop = mu_x + sd_x * rng.standard_normal((pending.size, batch))
        resid = y[pending, None] - (beta[0] + beta[1] * prop + beta[2] * prop * prop)
        log_ratio = -(resid * resid - gap2[pending, None]) / (2 * s2)
        allowed = np.arange(batch)[None, :] < (max_proposals - used[pending])[:, None]
        log_ratio = np.where(allowed, log_ratio, -np.inf)
        accept = (rng.random((pending.size, batch)) < np.exp(log_ratio) / SMC_SAFETY) & allowed
        hit = accept.any(axis=1)
        first = accept.argmax(axis=1)
        k = np.argmax(log_ratio, axis=1)
        top = log_ratio[np.arange(pending.size), k]
        better = top > best_r[pending]
        best_r[pending[better]] = top[better]
        best_x[pending[better]] = prop[better, k[better]]
        x[pending[hit]] = prop[hit, first[hit]]
        used[pending] += np.where(hit, first + 1, allowed.sum(axis=1))
        pending = pending[~hit & (used[pending] < max_proposals)]
    pending = np.flatnonzero(np.isnan(x))
    capped = np.zeros(n, dtype=bool)
    capped[pending] = True
    x[pending] = best_x[pending]
    out = np.column_stack([x, x * x])
    if return_info:
        return out, capped
    return out


# -- method specs and engine adapters ----------------------------------------

class MethodName(str, enum.Enum):
    NORM = "norm"
    PMM = "pmm"
    POLYCOMB = "polycomb"
    SMCFCS_QUAD = "smcfcs-quad"
    LOGREG = "logreg"


@dataclass(frozen=True)
class ImputerSpec:
    """Per-variable imputation model.

    ``predictors`` are the conditioning columns. For ``polycomb`` and
    ``smcfcs-quad`` it must hold exactly one column, the fully observed
    response of the quadratic model. ``quad_term`` names a column that holds
    the square of the target and is imputed jointly with it.
    """

    method: MethodName
    predictors: tuple[str, ...]
    donors: int = DEFAULT_DONORS
    quad_term: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", MethodName(self.method))
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if not self.predictors:
            raise ValueError("an imputation model needs at least one predictor")
        if self.donors < 1:
            raise ValueError("donors must be >= 1")
        if self.method in (MethodName.POLYCOMB, MethodName.SMCFCS_QUAD):
            if len(self.predictors) != 1:
                raise ValueError(f"{self.method.value} takes exactly one predictor (the response)")

    @classmethod
    def from_dict(cls, d: dict) -> "ImputerSpec":
        return cls(
            method=MethodName(d["method"]),
            predictors=tuple(d["predictors"]),
            donors=int(d.get("donors", DEFAULT_DONORS)),
            quad_term=d.get("quad_term"),
        )

    def to_dict(self) -> dict:
        out = {"method": self.method.value, "predictors": list(self.predictors)}
        if self.method in (MethodName.PMM, MethodName.POLYCOMB):
            out["donors"] = self.donors
        if self.quad_term is not None:
            out["quad_term"] = self.quad_term
        return out


class Fitted:
    """Parameters drawn for one column; ``draw`` maps predictor rows to values.

    ``draw`` returns an (n, 2) array for methods that fill a target and its
    square together, else an (n,) array.
    """

    def draw(self, P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass
class _NormFitted(Fitted):
    params: LinRegDraw

    def draw(self, P, rng):
        return impute_norm(self.params, P, rng)


@dataclass
class _PmmFitted(Fitted):
    params: LinRegDraw
    X_obs: np.ndarray
    y_obs: np.ndarray
    donors: int
    companion_obs: np.ndarray | None

    def draw(self, P, rng):
        chosen = pmm_match(self.params, self.X_obs, P, self.donors, rng)
        if self.companion_obs is None:
            return self.y_obs[chosen]
        return np.column_stack([self.y_obs[chosen], self.companion_obs[chosen]])


@dataclass
class _LogRegFitted(Fitted):
    params: LogRegDraw

    def draw(self, P, rng):
        return impute_logreg(self.params, P, rng)


@dataclass
class _PolyCombFitted(Fitted):
    params: PolyCombFit

    def draw(self, P, rng):
        return draw_polycomb(self.params, P[:, 0], rng)


@dataclass
class _SmcFitted(Fitted):
    params: SmcFcsFit

    def draw(self, P, rng):
        return impute_smcfcs_quadratic(P[:, 0], self.params.substantive, self.params.covariate, rng)


def fit_method(
    spec: ImputerSpec,
    target: np.ndarray,
    predictors: np.ndarray,
    fit_rows: np.ndarray,
    rng: np.random.Generator,
    companion: np.ndarray | None = None,
) -> Fitted:
    """Draw the parameters of ``spec`` from the current working data.

    ``target`` and ``predictors`` span all n rows (current working values);
    ``fit_rows`` marks the rows where the target is genuinely observed.
    Regression models are fitted on those rows. The quadratic-covariate
    methods also fit their substantive/covariate models on all rows, as the
    Gibbs formulation of those methods requires.
    """
    ry = np.asarray(fit_rows, dtype=bool)
    need = predictors.shape[1] + 2
    if ry.sum() < need:
        raise TooFewRowsError(f"{int(ry.sum())} observed rows, need at least {need}")
    X_obs, y_obs = predictors[ry], target[ry]
    m = spec.method
    if m is MethodName.NORM:
        return _NormFitted(draw_bayes_linreg(X_obs, y_obs, rng))
    if m is MethodName.PMM:
        comp = None if companion is None else companion[ry]
        return _PmmFitted(draw_bayes_linreg(X_obs, y_obs, rng), X_obs, y_obs, spec.donors, comp)
    if m is MethodName.LOGREG:
        return _LogRegFitted(draw_bayes_logreg(X_obs, y_obs, rng))
    response = predictors[:, 0]
    if m is MethodName.POLYCOMB:
        return _PolyCombFitted(fit_polycomb(response[ry], y_obs, response[ry], y_obs, spec.donors, rng))
    if m is MethodName.SMCFCS_QUAD:
        substantive = draw_bayes_linreg(np.column_stack([target, target ** 2]), response, rng)
        covariate = draw_bayes_linreg(np.empty((target.shape[0], 0)), target, rng)
        return _SmcFitted(SmcFcsFit(substantive, covariate))
    raise ImputationError(f"unknown method {m!r}")
