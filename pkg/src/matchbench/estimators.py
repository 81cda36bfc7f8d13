"""Index-weight estimators for matched samples.

Canonical correlation (whitening + SVD), the constrained least-squares
variant that pins the first y weight to one, rank-correlation
maximization over the product of unit spheres, and marginal rates of
substitution from a kernel regression. All reported weight vectors are
normalized to unit Euclidean norm with a positive leading nonzero entry
so results are comparable across methods; raw solutions stay available
in the diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .distributions import average_ranks, seed_streams
from .errors import DegenerateIndexError, NumericalError
from .market import MarketSpec, MatchedSample
from .oracle import closed_form_counterexample, numeric_counterexample
from .saliency import svd_decompose

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Centered second-moment matrices of a matched sample (divisor n)."""

    Sxx: np.ndarray
    Syy: np.ndarray
    Sxy: np.ndarray

    def __post_init__(self):
        Sxx = np.atleast_2d(np.asarray(self.Sxx, dtype=float))
        Syy = np.atleast_2d(np.asarray(self.Syy, dtype=float))
        Sxy = np.atleast_2d(np.asarray(self.Sxy, dtype=float))
        if Sxx.shape[0] != Sxx.shape[1] or Syy.shape[0] != Syy.shape[1]:
            raise ValueError("Sxx and Syy must be square")
        if Sxy.shape != (Sxx.shape[0], Syy.shape[0]):
            raise ValueError("Sxy must be dx x dy")
        object.__setattr__(self, "Sxx", Sxx)
        object.__setattr__(self, "Syy", Syy)
        object.__setattr__(self, "Sxy", Sxy)

    @property
    def dx(self) -> int:
        return self.Sxx.shape[0]

    @property
    def dy(self) -> int:
        return self.Syy.shape[0]


@dataclass(frozen=True, eq=False)
class EstimatorResult:
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    objective: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha": [float(a) for a in self.alpha_hat],
            "beta": [float(b) for b in self.beta_hat],
            "objective": None if not np.isfinite(self.objective) else float(self.objective),
            "diagnostics": _jsonify(self.diagnostics),
        }


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if np.isfinite(val) else None
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


def normalize_weights(w) -> np.ndarray:
    """Unit Euclidean norm, first nonzero coordinate positive."""
    w = np.asarray(w, dtype=float)
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise ValueError("cannot normalize a zero weight vector")
    w = w / norm
    lead = np.flatnonzero(w)[0]
    return -w if w[lead] < 0 else w


def compute_moments(sample: MatchedSample) -> MomentSet:
    if sample.n < 2:
        raise ValueError("need at least two couples")
    xc = sample.xs - sample.xs.mean(axis=0)
    yc = sample.ys - sample.ys.mean(axis=0)
    n = sample.n
    return MomentSet(Sxx=xc.T @ xc / n, Syy=yc.T @ yc / n, Sxy=xc.T @ yc / n)


def _inverse_sqrt_clipped(S: np.ndarray, floor_ratio: float = 1e-10) -> tuple[np.ndarray, int]:
    """Symmetric inverse square root with small eigenvalues lifted to a floor.

    Eigenvalues below floor_ratio times the largest are clipped to that
    floor so behavior near rank deficiency stays deterministic.
    """
    w, q = np.linalg.eigh(0.5 * (S + S.T))
    top = w.max()
    if top <= 0.0:
        raise NumericalError("covariance matrix has no positive eigenvalue")
    floor = floor_ratio * top
    clipped = int(np.sum(w < floor))
    w = np.maximum(w, floor)
    return (q * (w**-0.5)) @ q.T, clipped


def cca(moments: MomentSet) -> EstimatorResult:
    """Top canonical pair via whitening and an SVD of the whitened cross moments.

    The raw pair satisfies the unit index-variance constraints; the
    reported pair is the canonical-sign unit-norm representative and the
    objective is the leading singular value (the canonical correlation).
    """
    isx, clip_x = _inverse_sqrt_clipped(moments.Sxx)
    isy, clip_y = _inverse_sqrt_clipped(moments.Syy)
    whitened = isx @ moments.Sxy @ isy
    decomp = svd_decompose(whitened)
    alpha_raw = isx @ decomp.U[0]
    beta_raw = isy @ decomp.V[0]
    return EstimatorResult(
        alpha_hat=normalize_weights(alpha_raw),
        beta_hat=normalize_weights(beta_raw),
        objective=float(decomp.lambdas[0]),
        method="cca",
        diagnostics={
            "alpha_raw": alpha_raw,
            "beta_raw": beta_raw,
            "singular_values": decomp.lambdas,
            "clipped_eigenvalues": [clip_x, clip_y],
        },
    )


def cca_ratio_scalar_y(moments: MomentSet) -> float:
    """First-to-second weight ratio for dx=2, dy=1: the cross-covariance ratio.

    This is the closed-form solution of the canonical correlation program
    when the two x attributes are uncorrelated with unit variances (the
    benchmark-market normalization); it then matches cca() exactly.
    """
    if moments.dx != 2 or moments.dy != 1:
        raise ValueError("needs dx=2 and dy=1")
    c1 = float(moments.Sxy[0, 0])
    c2 = float(moments.Sxy[1, 0])
    if c2 == 0.0:
        raise NumericalError("zero denominator covariance")
    return c1 / c2


def ols_index(sample: MatchedSample) -> EstimatorResult:
    """Least squares of the first y attribute on x and the remaining y
    attributes, with the first y weight pinned to one.

    Variables are centered first, so the fitted weights agree with the
    moment-based estimators regardless of nonzero attribute means.
    """
    xc = sample.xs - sample.xs.mean(axis=0)
    yc = sample.ys - sample.ys.mean(axis=0)
    target = yc[:, 0]
    design = xc if sample.dy == 1 else np.hstack([xc, yc[:, 1:]])
    if sample.n <= design.shape[1]:
        raise ValueError("need more couples than regressors")
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        raise NumericalError("collinear regressors")
    alpha = coef[: sample.dx]
    beta = np.concatenate([[1.0], -coef[sample.dx :]])
    resid = target - design @ coef
    moments = compute_moments(sample)
    return EstimatorResult(
        alpha_hat=normalize_weights(alpha),
        beta_hat=normalize_weights(beta),
        objective=float(alpha @ moments.Sxy @ beta),
        method="ols",
        diagnostics={
            "alpha_raw": alpha,
            "beta_raw": beta,
            "constraint_A": float(alpha @ moments.Sxx @ alpha),
            "constraint_B": float(beta @ moments.Syy @ beta),
            "residual_variance": float(np.mean(resid**2)),
        },
    )


def _index_pair(sample: MatchedSample, alpha, beta) -> tuple[np.ndarray, np.ndarray]:
    u = sample.x_index(alpha)
    v = sample.y_index(beta)
    if np.var(u) == 0.0 or np.var(v) == 0.0:
        raise DegenerateIndexError("index series is constant")
    return u, v


def _rank_product_mean(rank_u: np.ndarray, rank_v: np.ndarray) -> float:
    # Raw average ranks are quarter-integers whose products and partial sums
    # stay exactly representable up to n ~ 1e5, so dividing once at the end
    # makes the comonotone maximum land exactly on (2n+1)/(6(n+1)).
    n = rank_u.size
    return float(rank_u @ rank_v) / float(n * (n + 1) * (n + 1))


def spearman_objective(sample: MatchedSample, alpha, beta) -> float:
    """Mean product of the two index rank transforms (r/(n+1) convention)."""
    u, v = _index_pair(sample, alpha, beta)
    return _rank_product_mean(average_ranks(u), average_ranks(v))


def spearman_upper_bound(n: int) -> float:
    """Finite-sample maximum of the rank-product objective, (2n+1)/(6(n+1))."""
    return float(n * (n + 1) * (2 * n + 1) // 6) / float(n * (n + 1) * (n + 1))


def spearman_objective_prob_form(sample: MatchedSample, alpha, beta) -> float:
    """Triple-average form: the share of (i, j, k) with couple k dominating
    i on the x index and j on the y index. Agrees with the rank form
    within 3/n; kept quadratic-free via sorted counting."""
    n = sample.n
    if n > 2000:
        raise ValueError("probability form is limited to n <= 2000")
    u = sample.x_index(alpha)
    v = sample.y_index(beta)
    count_u = np.searchsorted(np.sort(u), u, side="right")
    count_v = np.searchsorted(np.sort(v), v, side="right")
    return float((count_u * count_v).sum() / n**3)


def _unit_from_angles(theta: np.ndarray, d: int) -> np.ndarray:
    if d == 1:
        return np.array([1.0])
    w = np.ones(d)
    for i in range(d - 1):
        c, s = math.cos(theta[i]), math.sin(theta[i])
        w[i] *= c
        w[i + 1 :] *= s
    return w


class _RankEvaluator:
    """Average ranks of a projected index, with 1-D sides precomputed."""

    def __init__(self, columns: np.ndarray):
        self.columns = columns
        self.d = columns.shape[1]
        self.n = columns.shape[0]
        self._single = average_ranks(columns[:, 0]) if self.d == 1 else None

    def ranks(self, w: np.ndarray) -> np.ndarray:
        if self.d == 1:
            # ranks reverse exactly under negation, ties included
            return self._single if w[0] > 0 else (self.n + 1) - self._single
        return average_ranks(self.columns @ w)


def spearman_estimate(
    sample: MatchedSample,
    restarts: int = 32,
    seed: int = 0,
    grid_resolution: float = 1e-3,
) -> EstimatorResult:
    """Maximize the rank-product objective over unit weight vectors.

    Multistart Nelder-Mead on spherical angle coordinates (the objective is
    scale-invariant per side, so spheres lose nothing), plus an angular
    grid sweep with local refinement when the search space is a single
    circle (dx=2, dy=1). The objective need not be concave, so all local
    optima found are kept in the diagnostics; candidates are merged by
    strictly-better objective, which resolves ties by restart order.
    """
    xev = _RankEvaluator(sample.xs)
    yev = _RankEvaluator(sample.ys)

    def value(alpha: np.ndarray, beta: np.ndarray) -> float:
        return _rank_product_mean(xev.ranks(alpha), yev.ranks(beta))

    ax = sample.dx - 1
    ay = sample.dy - 1
    candidates: list[tuple[float, np.ndarray, np.ndarray]] = []
    local_optima: list[dict] = []

    if ax + ay == 0:
        for sign in (1.0, -1.0):
            alpha = np.array([1.0])
            beta = np.array([sign])
            obj = value(alpha, beta)
            candidates.append((obj, alpha, beta))
            local_optima.append({"objective": obj, "alpha": alpha, "beta": beta, "source": "sign"})
    else:
        def unpack(params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            return (
                _unit_from_angles(params[:ax], sample.dx),
                _unit_from_angles(params[ax:], sample.dy),
            )

        def neg(params: np.ndarray) -> float:
            alpha, beta = unpack(params)
            return -value(alpha, beta)

        rng = seed_streams(seed, 1)[0]
        for r in range(restarts):
            start = rng.uniform(0.0, _TWO_PI, size=ax + ay)
            res = minimize(
                neg,
                start,
                method="Nelder-Mead",
                options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 400 * (ax + ay)},
            )
            alpha, beta = unpack(res.x)
            obj = -float(res.fun)
            candidates.append((obj, alpha, beta))
            local_optima.append(
                {"objective": obj, "alpha": alpha, "beta": beta, "source": f"restart {r}"}
            )

    grid_info = None
    if sample.dx == 2 and sample.dy == 1:
        beta_grid = np.array([1.0])
        coarse_step = max(grid_resolution, _TWO_PI / 512.0)
        coarse = np.arange(0.0, _TWO_PI, coarse_step)
        coarse_vals = np.array(
            [value(_unit_from_angles(np.array([t]), 2), beta_grid) for t in coarse]
        )
        order = np.argsort(coarse_vals)[::-1]
        picked: list[float] = []
        for idx in order:
            t = float(coarse[idx])
            if all(min(abs(t - s), _TWO_PI - abs(t - s)) > 2.0 * coarse_step for s in picked):
                picked.append(t)
            if len(picked) == 3:
                break
        fine_evals = 0
        for center in picked:
            fine = np.arange(center - coarse_step, center + coarse_step + 0.5 * grid_resolution, grid_resolution)
            fine_evals += fine.size
            for t in fine:
                alpha = _unit_from_angles(np.array([t]), 2)
                obj = value(alpha, beta_grid)
                candidates.append((obj, alpha, beta_grid))
        grid_info = {
            "coarse_points": int(coarse.size),
            "fine_points": int(fine_evals),
            "resolution": float(grid_resolution),
            "refined_centers": picked,
        }

    best_obj = -math.inf
    best_alpha = best_beta = None
    for obj, alpha, beta in candidates:
        if obj > best_obj:
            best_obj, best_alpha, best_beta = obj, alpha, beta
    if best_alpha is None:
        raise ValueError("no search candidates; need restarts >= 1 for this shape")

    return EstimatorResult(
        alpha_hat=normalize_weights(best_alpha),
        beta_hat=normalize_weights(best_beta),
        objective=best_obj,
        method="spearman",
        diagnostics={
            "restarts": restarts,
            "local_optima": local_optima,
            "grid": grid_info,
            "alpha_argmax": best_alpha,
            "beta_argmax": best_beta,
            "upper_bound": spearman_upper_bound(sample.n),
        },
    )


def kernel_regression(sample: MatchedSample, response_coordinate: int, points, bandwidths) -> np.ndarray:
    """Nadaraya-Watson fit of one y attribute on all x attributes with a
    product Gaussian kernel, evaluated at the given points."""
    X = sample.xs
    y = sample.ys[:, response_coordinate]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    h = np.asarray(bandwidths, dtype=float)
    if np.any(h <= 0):
        raise NumericalError("bandwidth degenerate")
    out = np.empty(pts.shape[0])
    chunk = max(1, int(2e6 // max(1, X.shape[0])))
    for start in range(0, pts.shape[0], chunk):
        block = pts[start : start + chunk]
        z = (block[:, None, :] - X[None, :, :]) / h
        logw = -0.5 * np.sum(z * z, axis=2)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        out[start : start + chunk] = (w @ y) / w.sum(axis=1)
    return out


@dataclass(frozen=True, eq=False)
class MrsResult:
    """Pairwise weight-ratio estimates from conditional-mean derivatives.

    ratio_matrix[i, j] is the median over evaluation points of the i-th
    partial derivative over the j-th. ``stable[j]`` is False when the j-th
    derivative has no consistent signal across spread-out probe points, in
    which case column j ratios should not be trusted.
    """

    ratio_matrix: np.ndarray
    derivatives: np.ndarray
    eval_points: np.ndarray
    bandwidths: np.ndarray
    stable: np.ndarray
    in_hull: np.ndarray
    diagnostics: dict

    def to_result(self) -> EstimatorResult:
        med = np.median(self.derivatives, axis=0)
        norm = np.linalg.norm(med)
        if norm == 0.0:
            raise NumericalError("no derivative signal at any evaluation point")
        k = self.diagnostics["response_coordinate"]
        beta = np.zeros(self.diagnostics["dy"])
        beta[k] = 1.0
        return EstimatorResult(
            alpha_hat=normalize_weights(med),
            beta_hat=beta,
            objective=math.nan,
            method="mrs",
            diagnostics={
                "ratio_matrix": self.ratio_matrix,
                "stable": self.stable,
                "bandwidths": self.bandwidths,
                "median_derivatives": med,
                **self.diagnostics,
            },
        )


def _derivatives_at(sample: MatchedSample, k: int, pts: np.ndarray, h: np.ndarray) -> np.ndarray:
    dx = pts.shape[1]
    stacked = []
    for i in range(dx):
        step = np.zeros(dx)
        step[i] = h[i] / 2.0
        stacked.append(pts + step)
        stacked.append(pts - step)
    values = kernel_regression(sample, k, np.vstack(stacked), h)
    values = values.reshape(dx, 2, pts.shape[0])
    return np.stack([(values[i, 0] - values[i, 1]) / h[i] for i in range(dx)], axis=1)


def mrs_estimate(
    sample: MatchedSample,
    response_coordinate: int = 0,
    eval_points=None,
) -> MrsResult:
    """Estimate pairwise x-weight ratios from kernel-regression derivatives.

    Bandwidths follow the 1.06 * sd * n^(-1/5) rule per coordinate with a
    central-difference step of half a bandwidth. Default evaluation points
    are the 100 sample points nearest the attribute centroid (distances
    scaled by column standard deviations); the stability probe uses
    deterministically spread sample rows instead, since clustered centers
    carry no dispersion information.
    """
    X = sample.xs
    n, dx = X.shape
    sds = X.std(axis=0)
    if np.any(sds == 0.0):
        raise NumericalError("bandwidth degenerate: an x attribute has zero variance")
    h = 1.06 * sds * n ** (-0.2)

    if eval_points is None:
        eval_points = 100
    if isinstance(eval_points, (int, np.integer)):
        count = min(int(eval_points), n)
        dist = np.sum(((X - X.mean(axis=0)) / sds) ** 2, axis=1)
        pts = X[np.argsort(dist, kind="stable")[:count]]
    else:
        pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
        if pts.shape[1] != dx:
            raise ValueError("evaluation points must have dx columns")

    lo, hi = X.min(axis=0), X.max(axis=0)
    in_hull = np.all((pts >= lo) & (pts <= hi), axis=1)

    derivs = _derivatives_at(sample, response_coordinate, pts, h)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.median(derivs[:, :, None] / derivs[:, None, :], axis=0)

    spread_rows = np.unique(np.linspace(0, n - 1, min(100, n)).astype(int))
    spread = _derivatives_at(sample, response_coordinate, X[spread_rows], h)
    med = np.median(spread, axis=0)
    mad = 1.4826 * np.median(np.abs(spread - med), axis=0)
    # signal must be sign-consistent across spread points and move the
    # response by more than a negligible fraction of its spread per bandwidth
    floor = 1e-6 * sample.ys[:, response_coordinate].std() / h
    consistent = np.where(mad > 0, np.abs(med) > 2.0 * mad, np.abs(med) > 0)
    stable = consistent & (np.abs(med) > floor)

    return MrsResult(
        ratio_matrix=ratios,
        derivatives=derivs,
        eval_points=pts,
        bandwidths=h,
        stable=stable,
        in_hull=in_hull,
        diagnostics={
            "bandwidth_rule": "1.06*sd*n^(-1/5)",
            "derivative_step": "h/2",
            "n": n,
            "dy": sample.dy,
            "response_coordinate": int(response_coordinate),
            "eval_point_count": int(pts.shape[0]),
        },
    )


@dataclass(frozen=True)
class ConsistencyCheck:
    """Both sides of the weight-ratio condition and whether they agree.

    ``lhs`` is the generating ratio alpha_1/alpha_2, ``rhs`` the transfer-map
    covariance ratio; agreement is decided in cross-multiplied form so a
    zero weight does not force a division."""

    lhs: float
    rhs: float
    holds: bool
    cov_x1: float
    cov_x2: float


def consistency_condition(spec: MarketSpec, tol: float = 1e-9) -> ConsistencyCheck:
    report = numeric_counterexample(spec, tol)
    a1, a2 = float(spec.alpha[0]), float(spec.alpha[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        lhs = float(np.divide(a1, a2))
        rhs = float(np.divide(report.cov_x1, report.cov_x2))
    holds = bool(abs(a1 * report.cov_x2 - a2 * report.cov_x1) <= 10.0 * tol)
    return ConsistencyCheck(lhs=lhs, rhs=rhs, holds=holds, cov_x1=report.cov_x1, cov_x2=report.cov_x2)


def population_moments_gaussian(spec: MarketSpec) -> MomentSet:
    """Population moment matrices of a Gaussian market under comonotone
    sorting: the matched cross moments come from the linear transfer map,
    so the top canonical pair reproduces the generating weights exactly."""
    def side_cov(components, cov, label):
        if cov is not None:
            return cov
        if any(c.kind != "gaussian" for c in components):
            raise ValueError(f"{label} components must all be gaussian")
        return np.diag([c.var() for c in components])

    cov_x = side_cov(spec.p_components, spec.p_cov, "P")
    cov_y = side_cov(spec.q_components, spec.q_cov, "Q")
    a_norm = float(spec.alpha @ cov_x @ spec.alpha)
    b_norm = float(spec.beta @ cov_y @ spec.beta)
    sxy = np.outer(cov_x @ spec.alpha, cov_y @ spec.beta) / math.sqrt(a_norm * b_norm)
    return MomentSet(Sxx=cov_x, Syy=cov_y, Sxy=sxy)


def counterexample_population_moments() -> MomentSet:
    """Exact moment matrices of the benchmark market (identity x-covariance,
    uniform y-variance, closed-form cross covariances)."""
    report = closed_form_counterexample()
    return MomentSet(
        Sxx=np.eye(2),
        Syy=np.array([[1.0 / 12.0]]),
        Sxy=np.array([[report.cov_x1], [report.cov_x2]]),
    )
