"""Analytic ground truth on synthetic one-dimensional distributions.

A SyntheticDistribution draws a latent U ~ Uniform[0, 1] per group, maps it
affinely to the observed feature X = location + scale * U, and assigns
Y | U, S ~ Bernoulli(eta_s(U)) with eta_s a strictly increasing piecewise-
linear function.  Strict monotonicity plus the continuous latent make the
score distribution atomless, and every conditional integral the optimal-rule
equation needs has a closed form, so the optimal threshold shift theta_star,
the optimal fair classifier and its exact risk are all computable to solver
precision.  These serve as the ground truth for consistency experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .calibration import FairClassifier, GroupStatistics, calibrate, calibrate_scores
from .data import LabeledDataset, UnlabeledDataset
from .errors import ConfigError, NumericError, SchemaError
from .metrics import deo as deo_report

DEFAULT_QUAD_POINTS = 2**17 + 1
DEFAULT_BISECTION_TOL = 1e-8


@dataclass(frozen=True)
class GroupSpec:
    """Latent affine map and piecewise-linear regression curve of one group."""

    location: float
    scale: float
    knots: tuple[tuple[float, float], ...]  # (u, eta) pairs, u from 0 to 1

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        u = np.asarray([k[0] for k in self.knots], dtype=np.float64)
        e = np.asarray([k[1] for k in self.knots], dtype=np.float64)
        if len(self.knots) < 2 or u[0] != 0.0 or u[-1] != 1.0:
            raise ConfigError("knots must run from u=0 to u=1 with at least two points")
        if not (np.diff(u) > 0).all():
            raise ConfigError("knot positions must be strictly increasing")
        if not (np.diff(e) > 0).all():
            raise ConfigError("eta values must be strictly increasing")
        if e[0] <= 0.0 or e[-1] >= 1.0:
            raise ConfigError("eta must stay strictly inside (0, 1)")

    @property
    def knot_u(self) -> np.ndarray:
        return np.asarray([k[0] for k in self.knots], dtype=np.float64)

    @property
    def knot_eta(self) -> np.ndarray:
        return np.asarray([k[1] for k in self.knots], dtype=np.float64)

    def eta(self, u):
        return np.interp(u, self.knot_u, self.knot_eta)

    def eta_inverse(self, t):
        """Smallest u with eta(u) >= t, clipped to [0, 1]."""
        return np.interp(t, self.knot_eta, self.knot_u)

    def integral_eta(self, a: float, b: float) -> float:
        """Closed-form integral of eta over [a, b] (exact for piecewise-linear)."""
        a = min(max(a, 0.0), 1.0)
        b = min(max(b, 0.0), 1.0)
        if b <= a:
            return 0.0
        u, e = self.knot_u, self.knot_eta
        total = 0.0
        for k in range(len(u) - 1):
            lo = max(a, u[k])
            hi = min(b, u[k + 1])
            if hi > lo:
                total += (hi - lo) * 0.5 * (float(self.eta(lo)) + float(self.eta(hi)))
        return total

    def suffix_integral(self, u) -> np.ndarray:
        """Vectorized closed-form integral of eta over [u, 1]."""
        u_arr = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        ku, ke = self.knot_u, self.knot_eta
        seg = 0.5 * (ke[:-1] + ke[1:]) * np.diff(ku)
        tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])  # integral from u_k to 1
        k = np.clip(np.searchsorted(ku, u_arr, side="right") - 1, 0, len(ku) - 2)
        eta_u = np.interp(u_arr, ku, ke)
        return tail[k + 1] + (ku[k + 1] - u_arr) * 0.5 * (eta_u + ke[k + 1])

    def mean_eta(self) -> float:
        return self.integral_eta(0.0, 1.0)

    def to_json(self) -> dict:
        return {"location": self.location, "scale": self.scale, "knots": [list(k) for k in self.knots]}


@dataclass(frozen=True)
class SyntheticDistribution:
    """Joint law of (X, S, Y) with known regression curves, indexed by s."""

    pi_1: float
    groups: tuple[GroupSpec, GroupSpec]

    def __post_init__(self):
        if not 0.0 < self.pi_1 < 1.0:
            raise ConfigError(f"pi_1 must lie in (0, 1), got {self.pi_1}")
        if len(self.groups) != 2:
            raise ConfigError("exactly two group specs required")
        for s, g in enumerate(self.groups):
            # positive mass above 1/2 is required for the optimal rule to exist
            if g.knot_eta[-1] <= 0.5:
                raise ConfigError(f"group {s}: eta must exceed 1/2 on a set of positive measure")

    @property
    def pi(self) -> tuple[float, float]:
        return (1.0 - self.pi_1, self.pi_1)

    def to_json(self) -> dict:
        return {"pi_1": self.pi_1, "groups": [g.to_json() for g in self.groups]}

    @staticmethod
    def from_json(obj: dict) -> "SyntheticDistribution":
        try:
            groups = tuple(
                GroupSpec(float(g["location"]), float(g["scale"]), tuple(tuple(k) for k in g["knots"]))
                for g in obj["groups"]
            )
            return SyntheticDistribution(float(obj["pi_1"]), groups)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed distribution description: {exc}") from exc


def load_distribution(path) -> SyntheticDistribution:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    return SyntheticDistribution.from_json(obj)


def linear_distribution(
    intercept0: float, slope0: float, intercept1: float, slope1: float, pi_1: float = 0.5
) -> SyntheticDistribution:
    """Two-group distribution with eta_s(u) = intercept_s + slope_s * u on [0, 1]."""
    g0 = GroupSpec(0.0, 1.0, ((0.0, intercept0), (1.0, intercept0 + slope0)))
    g1 = GroupSpec(0.0, 1.0, ((0.0, intercept1), (1.0, intercept1 + slope1)))
    return SyntheticDistribution(pi_1, (g0, g1))


def _simpson(fn, a: float, b: float, n_points: int) -> float:
    if n_points < 3 or n_points % 2 == 0:
        raise ConfigError(f"Simpson rule needs an odd point count >= 3, got {n_points}")
    if b <= a:
        return 0.0
    x = np.linspace(a, b, n_points)
    y = fn(x)
    w = np.ones(n_points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    h = (b - a) / (n_points - 1)
    return float(h / 3.0 * (w @ y))


@dataclass(frozen=True)
class Moments:
    """Exact first moments of the synthetic law, indexed by s."""

    mean_eta: tuple[float, float]  # E[eta(X, s) | S = s]
    joint: tuple[float, float]  # P(Y = 1, S = s)
    p_positive: float  # P(Y = 1)


def exact_moments(dist: SyntheticDistribution, n_points: int = DEFAULT_QUAD_POINTS) -> Moments:
    """Group means of eta and joint positives via composite Simpson quadrature."""
    means = tuple(_simpson(g.eta, 0.0, 1.0, n_points) for g in dist.groups)
    joint = tuple(m * p for m, p in zip(means, dist.pi))
    return Moments(mean_eta=means, joint=joint, p_positive=sum(joint))


def _closed_form_joints(dist: SyntheticDistribution):
    means = tuple(g.mean_eta() for g in dist.groups)
    joints = tuple(m * p for m, p in zip(means, dist.pi))
    return means, joints


def _acceptance_threshold(group: GroupSpec, factor: float) -> float:
    """Lower end u* of the region where 1 <= eta(u) * factor (1.0 if empty)."""
    if factor <= 0.0:
        return 1.0
    return float(group.eta_inverse(1.0 / factor))


def _region_starts(dist: SyntheticDistribution, theta: float, means, joints):
    f1 = 2.0 - theta / joints[1]
    f0 = 2.0 + theta / joints[0]
    return (_acceptance_threshold(dist.groups[0], f0), _acceptance_threshold(dist.groups[1], f1))


def tpr_gap(theta, dist: SyntheticDistribution):
    """TPR_1(theta) - TPR_0(theta) of the exact theta-thresholded rule.

    Non-increasing in theta; the optimal shift is its zero crossing.  Accepts
    a scalar or an array of theta values.
    """
    means, joints = _closed_form_joints(dist)
    th = np.asarray(theta, dtype=np.float64)
    tprs = []
    for s, sign in ((1, -1.0), (0, 1.0)):
        g = dist.groups[s]
        factor = 2.0 + sign * th / joints[s]
        accepting = factor > 0.0  # otherwise the acceptance region is empty
        tau = 1.0 / np.where(accepting, factor, 1.0)
        integral = np.where(accepting, g.suffix_integral(g.eta_inverse(tau)), 0.0)
        tprs.append(integral / means[s])
    out = tprs[0] - tprs[1]
    return float(out) if np.ndim(theta) == 0 else out


def risk_of_threshold_rule(dist: SyntheticDistribution, region_starts) -> float:
    """Exact risk of the rule predicting 1 on u >= u_s per group.

    Uses the identity R(g) = E[eta] - E[(2 eta - 1) g].
    """
    total = 0.0
    for s, g in enumerate(dist.groups):
        u = min(max(region_starts[s], 0.0), 1.0)
        gain = 2.0 * g.integral_eta(u, 1.0) - (1.0 - u)
        total += dist.pi[s] * (g.mean_eta() - gain)
    return total


def risk_direct_quadrature(dist: SyntheticDistribution, region_starts, n_points: int = 4097) -> float:
    """Misclassification probability by quadrature on each decision region."""
    total = 0.0
    for s, g in enumerate(dist.groups):
        u = min(max(region_starts[s], 0.0), 1.0)
        miss = _simpson(g.eta, 0.0, u, n_points) + _simpson(lambda x: 1.0 - g.eta(x), u, 1.0, n_points)
        total += dist.pi[s] * miss
    return total


@dataclass(frozen=True)
class OracleSolution:
    """Optimal threshold shift and the exact optimum it induces."""

    theta_star: float
    joint: tuple[float, float]
    tpr_common: float
    risk_star: float
    quadrature_points: int
    bisection_tolerance: float
    bracket_width: float
    region_starts: tuple[float, float]  # per-group lower end of the accept region


def solve_theta_star(
    dist: SyntheticDistribution,
    tolerance: float = DEFAULT_BISECTION_TOL,
    quadrature_points: int = DEFAULT_QUAD_POINTS,
) -> OracleSolution:
    """Bisection for the theta equalizing the exact group TPRs on [-2, 2].

    The gap is monotone, so the bracket shrinks unconditionally; when the
    equalizing set is a plateau any point of it is returned and the final
    bracket width is reported.  Raises NumericError when the gap has the same
    sign at both ends (a law outside the assumptions).
    """
    lo, hi = -2.0, 2.0
    g_lo, g_hi = tpr_gap(lo, dist), tpr_gap(hi, dist)
    if g_lo < 0.0 or g_hi > 0.0:
        raise NumericError(
            f"tpr gap does not bracket zero on [-2, 2]: gap(-2)={g_lo:.3g}, gap(2)={g_hi:.3g}"
        )
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if tpr_gap(mid, dist) > 0.0:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    means, joints = _closed_form_joints(dist)
    regions = _region_starts(dist, theta, means, joints)
    tpr1 = dist.groups[1].integral_eta(regions[1], 1.0) / means[1]
    return OracleSolution(
        theta_star=theta,
        joint=joints,
        tpr_common=tpr1,
        risk_star=risk_of_threshold_rule(dist, regions),
        quadrature_points=quadrature_points,
        bisection_tolerance=tolerance,
        bracket_width=hi - lo,
        region_starts=regions,
    )


def sample(dist: SyntheticDistribution, n: int, seed) -> LabeledDataset:
    """Draw n i.i.d. rows (X as a single feature column), deterministic in seed."""
    if n < 1:
        raise ConfigError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    s = (rng.random(n) < dist.pi_1).astype(np.int64)
    u = rng.random(n)
    x = np.empty(n)
    y = np.empty(n, dtype=np.int64)
    draws = rng.random(n)
    for g in (0, 1):
        mask = s == g
        spec = dist.groups[g]
        x[mask] = spec.location + spec.scale * u[mask]
        y[mask] = draws[mask] < spec.eta(u[mask])
    return LabeledDataset(x[:, None], s, y, ("x1",), require_both_groups=False)


def _latent(spec: GroupSpec, x: np.ndarray) -> np.ndarray:
    return np.clip((x - spec.location) / spec.scale, 0.0, 1.0)


def exact_group_scores(dist: SyntheticDistribution, X, s: int) -> np.ndarray:
    """Exact eta(x, s) per row; features outside the support take boundary values."""
    x = np.asarray(X, dtype=np.float64).reshape(-1)
    spec = dist.groups[s]
    return np.asarray(spec.eta(_latent(spec, x)), dtype=np.float64)


def exact_scores(dist: SyntheticDistribution, X, S) -> np.ndarray:
    """Exact eta(x_i, s_i) for each row of a sample."""
    x = np.asarray(X, dtype=np.float64).reshape(-1)
    S = np.asarray(S)
    out = np.empty(x.shape[0])
    for s in (0, 1):
        mask = S == s
        if mask.any():
            out[mask] = exact_group_scores(dist, x[mask], s)
    return out


def exact_marginal_scores(dist: SyntheticDistribution, X) -> np.ndarray:
    """Exact eta(x) = P(Y=1 | X=x), mixing the groups by their densities."""
    x = np.asarray(X, dtype=np.float64).reshape(-1)
    num = np.zeros(x.shape[0])
    den = np.zeros(x.shape[0])
    fallback = np.zeros(x.shape[0])
    for s, spec in enumerate(dist.groups):
        inside = (x >= spec.location - 1e-12) & (x <= spec.location + spec.scale + 1e-12)
        dens = dist.pi[s] / spec.scale
        eta = spec.eta(_latent(spec, x))
        num += np.where(inside, dens * eta, 0.0)
        den += np.where(inside, dens, 0.0)
        fallback += dist.pi[s] * eta
    return np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), fallback)


def plugin_at_infinite_data(dist: SyntheticDistribution) -> FairClassifier:
    """The plug-in rule fed with exact scores and exact group statistics."""
    sol = solve_theta_star(dist)
    means, joints = _closed_form_joints(dist)
    stats = GroupStatistics(p=dist.pi, mean_score=means, joint=joints)
    return FairClassifier(model=None, theta_hat=sol.theta_star, stats=stats, mode="aware")


@dataclass(frozen=True)
class ConsistencyCell:
    n: int
    N: int
    repeats: int
    deo_mean: float
    deo_std: float
    excess_risk_mean: float
    excess_risk_std: float
    theta_abs_err_mean: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def consistency_run(
    dist: SyntheticDistribution,
    n_grid,
    N_grid,
    repeats: int,
    seed: int,
    estimator="exact",
    test_size: int = 100_000,
) -> list[ConsistencyCell]:
    """Full-pipeline fairness/risk consistency table over (n, N) grid cells.

    estimator "exact" injects the true regression curve as scores; n is then
    carried through to the output but unused (pass 0 by convention).
    Otherwise a LogisticConfig or KnnConfig fits on a fresh labeled sample of
    size n.  Every cell draws its own calibration sample of size N and a
    fresh labeled test sample, runs the calibration pipeline, and records the
    test DEO and the risk excess over the exact optimum, averaged over the
    repeats.
    """
    n_grid = list(n_grid)
    N_grid = list(N_grid)
    if not n_grid or not N_grid or repeats < 1:
        raise ConfigError("n_grid and N_grid must be nonempty and repeats positive")
    sol = solve_theta_star(dist)
    cells = []
    for i_n, n in enumerate(n_grid):
        for i_N, N in enumerate(N_grid):
            deos, excesses, terrs = [], [], []
            for rep in range(repeats):
                base = [seed, i_n, i_N, rep]
                unl = sample(dist, N, base + [1])
                test = sample(dist, test_size, base + [2])
                if estimator == "exact":
                    scores = exact_scores(dist, unl.features, unl.sensitive)
                    clf = calibrate_scores(
                        scores_s0=exact_group_scores(dist, unl.features, 0),
                        scores_s1=exact_group_scores(dist, unl.features, 1),
                        sensitive=unl.sensitive,
                        mode="aware",
                        n_labeled=N,
                    )
                    pred = clf.predict_from_scores(
                        scores_s0=exact_group_scores(dist, test.features, 0),
                        scores_s1=exact_group_scores(dist, test.features, 1),
                        sensitive=test.sensitive,
                    )
                else:
                    train = sample(dist, n, base + [0])
                    clf = calibrate(
                        train,
                        UnlabeledDataset(unl.features, unl.sensitive),
                        estimator=estimator,
                        mode="aware",
                    )
                    pred = clf.predict(test.features, test.sensitive)
                report = deo_report(pred, test.labels, test.sensitive)
                deos.append(report.deo if report.deo is not None else 0.0)
                excesses.append((1.0 - report.accuracy) - sol.risk_star)
                terrs.append(abs(clf.theta_hat - sol.theta_star))
            ddof = 1 if repeats > 1 else 0
            cells.append(
                ConsistencyCell(
                    n=int(n),
                    N=int(N),
                    repeats=repeats,
                    deo_mean=float(np.mean(deos)),
                    deo_std=float(np.std(deos, ddof=ddof)),
                    excess_risk_mean=float(np.mean(excesses)),
                    excess_risk_std=float(np.std(excesses, ddof=ddof)),
                    theta_abs_err_mean=float(np.mean(terrs)),
                )
            )
    return cells


def random_distribution(rng: np.random.Generator) -> SyntheticDistribution:
    """Random valid distribution (used by property tests and demos)."""
    pi_1 = float(rng.uniform(0.25, 0.75))
    groups = []
    for _ in range(2):
        k = int(rng.integers(2, 6))
        du = rng.uniform(0.2, 1.0, size=k - 1)
        u = np.concatenate([[0.0], np.cumsum(du) / du.sum()])
        u[-1] = 1.0
        lo = float(rng.uniform(0.02, 0.40))
        hi = float(rng.uniform(0.55, 0.98))
        de = rng.uniform(0.05, 1.0, size=k - 1)
        e = lo + (hi - lo) * np.concatenate([[0.0], np.cumsum(de) / de.sum()])
        e[-1] = hi
        loc = float(rng.uniform(-1.0, 1.0))
        scale = float(rng.uniform(0.5, 2.0))
        groups.append(GroupSpec(loc, scale, tuple((float(a), float(b)) for a, b in zip(u, e))))
    return SyntheticDistribution(pi_1, tuple(groups))
