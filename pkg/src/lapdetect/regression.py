"""Two-way fixed-effects least squares with cluster-robust inference.

Fixed effects are absorbed by alternating group demeaning rather than dummy
expansion, so panels with thousands of entities and dates stay cheap. Dense
dummy regression is used only as a test oracle.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Sequence

import numpy as np
import pandas as pd
import scipy.linalg

from .errors import (
    ClusterCountError,
    CollinearDesignError,
    ConvergenceFailureError,
    DegenerateFocalTermError,
)
from .panel import PanelDataset

DEMEAN_TOL = 1e-13
DEMEAN_MAX_SWEEPS = 10_000

# fixed-effect and cluster dimensions are named abstractly in specs and
# resolved to panel columns here
FE_COLUMNS = {"entity": "entity_id", "time": "time_id"}

CONST_NAME = "const"


def term_name(term: Sequence[str]) -> str:
    return ":".join(term)


@dataclasses.dataclass(frozen=True)
class RegressionSpec:
    """Declarative model description.

    ``terms`` is an ordered tuple of terms; each term is a tuple of column
    names whose product forms one regressor, so ``("llm", "lap")`` is the
    interaction column llm*lap. ``fe`` is a subset of {"entity", "time"}.
    ``cluster`` names a dimension ("entity"/"time") or a panel column.
    """

    outcome: str
    terms: tuple[tuple[str, ...], ...]
    fe: frozenset[str] = frozenset()
    cluster: str | None = None

    def __post_init__(self):
        terms = tuple(
            (t,) if isinstance(t, str) else tuple(t) for t in self.terms
        )
        if not terms:
            raise ValueError("spec needs at least one regressor term")
        names = [term_name(t) for t in terms]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate regressor terms in {names}")
        fe = frozenset(self.fe)
        if not fe <= set(FE_COLUMNS):
            raise ValueError(f"fe dimensions must be within {set(FE_COLUMNS)}")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "fe", fe)

    @property
    def term_names(self) -> tuple[str, ...]:
        return tuple(term_name(t) for t in self.terms)

    @classmethod
    def from_json(cls, doc) -> "RegressionSpec":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        return cls(
            outcome=doc["outcome"],
            terms=tuple(tuple(t) for t in doc["terms"]),
            fe=frozenset(doc.get("fe", ())),
            cluster=doc.get("cluster"),
        )

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome,
            "terms": [list(t) for t in self.terms],
            "fe": sorted(self.fe),
            "cluster": self.cluster,
        }


@dataclasses.dataclass(frozen=True, eq=False)
class FitResult:
    """Point estimates plus a robust covariance matrix.

    ``vcov`` is cluster-robust when the spec named a cluster dimension and
    heteroskedasticity-robust otherwise. ``residuals`` live on the
    within-transformed scale.
    """

    term_names: tuple[str, ...]
    coefficients: np.ndarray
    vcov: np.ndarray
    t_stats: np.ndarray
    n_obs: int
    n_clusters: int | None
    r2_within: float
    r2_overall: float
    demeaning_iterations: int
    residuals: np.ndarray
    spec: RegressionSpec

    def _index(self, name: str) -> int:
        try:
            return self.term_names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self._index(name)])

    def se(self, name: str) -> float:
        i = self._index(name)
        return float(np.sqrt(self.vcov[i, i]))

    def t(self, name: str) -> float:
        return float(self.t_stats[self._index(name)])

    def to_json(self) -> dict:
        ses = np.sqrt(np.diag(self.vcov))
        return {
            "spec": self.spec.to_json(),
            "terms": list(self.term_names),
            "coefficients": {n: float(c) for n, c in zip(self.term_names, self.coefficients)},
            "std_errors": {n: float(s) for n, s in zip(self.term_names, ses)},
            "t_stats": {n: float(t) for n, t in zip(self.term_names, self.t_stats)},
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "r2_within": self.r2_within,
            "r2_overall": self.r2_overall,
            "demeaning_iterations": self.demeaning_iterations,
        }


@dataclasses.dataclass(frozen=True, eq=False)
class ResidualPair:
    """Outcome and focal-regressor residuals after partialling out controls."""

    y_resid: np.ndarray
    x_resid: np.ndarray
    focal: str
    conditioning: tuple[str, ...]


def _column(frame: pd.DataFrame, name: str) -> np.ndarray:
    if name not in frame.columns:
        raise KeyError(f"panel has no column {name!r}")
    values = frame[name].to_numpy(dtype=float)
    if not np.isfinite(values).all():
        raise ValueError(f"column {name!r} contains NaN or infinite values")
    return values


def _build_design(spec: RegressionSpec, frame: pd.DataFrame):
    """Outcome vector, raw regressor matrix, and column names.

    Adds an explicit constant when no fixed effects absorb one.
    """
    y = _column(frame, spec.outcome)
    columns = []
    names = list(spec.term_names)
    for term in spec.terms:
        x = np.ones(len(frame))
        for name in term:
            x = x * _column(frame, name)
        columns.append(x)
    if not spec.fe:
        columns.append(np.ones(len(frame)))
        names.append(CONST_NAME)
    return y, np.column_stack(columns), tuple(names)


def _fe_codes(spec: RegressionSpec, frame: pd.DataFrame) -> list[np.ndarray]:
    codes = []
    for dim in sorted(spec.fe):
        values = frame[FE_COLUMNS[dim]]
        codes.append(pd.factorize(values, sort=True)[0])
    return codes


def _alternating_demean(values: np.ndarray, code_list: Sequence[np.ndarray]):
    """Subtract group means per dimension until all group means vanish.

    Returns the demeaned copy and the sweep count. One dimension is exact in
    a single pass; two dimensions alternate until the largest remaining
    absolute group mean falls below a scale-aware tolerance.
    """
    out = np.array(values, dtype=float, copy=True)
    if out.ndim == 1:
        out = out[:, None]
    if not code_list or out.size == 0:
        return out, 0
    sizes = [np.bincount(c).astype(float) for c in code_list]

    def subtract(c, size):
        for j in range(out.shape[1]):
            means = np.bincount(c, weights=out[:, j]) / size
            out[:, j] -= means[c]

    def worst_mean():
        worst = 0.0
        for c, size in zip(code_list, sizes):
            for j in range(out.shape[1]):
                means = np.bincount(c, weights=out[:, j]) / size
                worst = max(worst, float(np.max(np.abs(means))))
        return worst

    if len(code_list) == 1:
        subtract(code_list[0], sizes[0])
        return out, 1

    tol = DEMEAN_TOL * max(1.0, float(np.max(np.abs(out))))
    for sweep in range(1, DEMEAN_MAX_SWEEPS + 1):
        for c, size in zip(code_list, sizes):
            subtract(c, size)
        achieved = worst_mean()
        if achieved < tol:
            return out, sweep
    raise ConvergenceFailureError(
        "two-way demeaning did not converge",
        achieved=achieved,
        sweeps=DEMEAN_MAX_SWEEPS,
    )


def within_transform(panel: PanelDataset, columns, fe_dims) -> PanelDataset:
    """Replace the named columns by their within-FE transforms."""
    fe = frozenset(fe_dims)
    if not fe <= set(FE_COLUMNS):
        raise ValueError(f"fe dimensions must be within {set(FE_COLUMNS)}")
    names = sorted(columns)
    frame = panel.frame.copy()
    matrix = np.column_stack([_column(frame, n) for n in names])
    code_list = [
        pd.factorize(frame[FE_COLUMNS[d]], sort=True)[0] for d in sorted(fe)
    ]
    demeaned, _ = _alternating_demean(matrix, code_list)
    for j, n in enumerate(names):
        frame[n] = demeaned[:, j]
    return panel.with_frame(frame)


def _resolve_cluster(frame: pd.DataFrame, cluster: str | None) -> np.ndarray | None:
    if cluster is None:
        return None
    column = FE_COLUMNS.get(cluster, cluster)
    if column not in frame.columns:
        raise KeyError(f"cluster dimension {cluster!r} not in panel")
    return pd.factorize(frame[column], sort=True)[0]


def _check_rank(X: np.ndarray, names: Sequence[str], raw_norms=None):
    """Raise CollinearDesignError naming the dependent columns.

    ``raw_norms`` are pre-demeaning column norms; a column whose demeaned
    norm collapses relative to its raw one was absorbed by the fixed
    effects (constant within groups) and is reported as collinear.
    """
    if X.shape[0] < X.shape[1]:
        raise CollinearDesignError(
            "more regressors than observations", columns=tuple(names)
        )
    if raw_norms is not None:
        norms = np.linalg.norm(X, axis=0)
        absorbed = norms <= 1e-8 * np.maximum(1.0, raw_norms)
        if absorbed.any():
            dependent = tuple(n for n, a in zip(names, absorbed) if a)
            raise CollinearDesignError(
                f"regressors absorbed by fixed effects: {', '.join(dependent)}",
                columns=dependent,
            )
    _, r, pivot = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        raise CollinearDesignError(
            "design matrix is identically zero", columns=tuple(names)
        )
    tol = diag[0] * max(X.shape) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        dependent = tuple(names[i] for i in sorted(pivot[rank:]))
        raise CollinearDesignError(
            f"collinear regressors: {', '.join(dependent)}", columns=dependent
        )


def _sandwich(Xd, resid, cluster_codes, k_dof):
    """Robust covariance meat and small-sample factor.

    CR1 with clusters, HC1 without; with every observation its own cluster
    the two coincide exactly.
    """
    n = Xd.shape[0]
    scores = Xd * resid[:, None]
    if cluster_codes is None:
        meat = scores.T @ scores
        factor = n / (n - k_dof)
        n_clusters = None
    else:
        n_groups = int(cluster_codes.max()) + 1 if len(cluster_codes) else 0
        if n_groups < 2:
            raise ClusterCountError(
                "need at least two clusters for cluster-robust errors",
                n_clusters=n_groups,
            )
        grouped = np.zeros((n_groups, Xd.shape[1]))
        for j in range(Xd.shape[1]):
            grouped[:, j] = np.bincount(
                cluster_codes, weights=scores[:, j], minlength=n_groups
            )
        meat = grouped.T @ grouped
        factor = (n_groups / (n_groups - 1)) * ((n - 1) / (n - k_dof))
        n_clusters = n_groups
    return meat, factor, n_clusters


def fit(spec: RegressionSpec, panel: PanelDataset) -> FitResult:
    """Estimate the spec by within-transformed OLS with robust errors."""
    frame = panel.frame
    if len(frame) == 0:
        raise ValueError("cannot fit on an empty panel")
    y, X, names = _build_design(spec, frame)
    code_list = _fe_codes(spec, frame)
    stacked, iterations = _alternating_demean(
        np.column_stack([y, X]), code_list
    )
    yd, Xd = stacked[:, 0], stacked[:, 1:]
    _check_rank(Xd, names, raw_norms=np.linalg.norm(X, axis=0))
    beta, _, _, _ = np.linalg.lstsq(Xd, yd, rcond=None)
    resid = yd - Xd @ beta

    k_dof = Xd.shape[1]
    n = len(yd)
    if n <= k_dof:
        raise ValueError("not enough observations for the requested design")
    cluster_codes = _resolve_cluster(frame, spec.cluster)
    meat, factor, n_clusters = _sandwich(Xd, resid, cluster_codes, k_dof)
    bread = np.linalg.inv(Xd.T @ Xd)
    vcov = factor * bread @ meat @ bread
    vcov = (vcov + vcov.T) / 2.0

    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = beta / np.sqrt(np.diag(vcov))

    rss = float(resid @ resid)
    tss_within = float(np.sum((yd - yd.mean()) ** 2))
    tss_raw = float(np.sum((y - y.mean()) ** 2))
    r2_within = 1.0 - rss / tss_within if tss_within > 0 else float("nan")
    r2_overall = 1.0 - rss / tss_raw if tss_raw > 0 else float("nan")

    return FitResult(
        term_names=names,
        coefficients=beta,
        vcov=vcov,
        t_stats=t_stats,
        n_obs=n,
        n_clusters=n_clusters,
        r2_within=r2_within,
        r2_overall=r2_overall,
        demeaning_iterations=iterations,
        residuals=resid,
        spec=spec,
    )


def fwl_residualize(
    spec: RegressionSpec, focal_term, panel: PanelDataset
) -> ResidualPair:
    """Residualize the outcome and one regressor on everything else.

    The ratio Cov(y_resid, x_resid)/Var(x_resid) reproduces the focal
    term's coefficient from the joint fit.
    """
    focal = focal_term if isinstance(focal_term, str) else term_name(focal_term)
    if focal not in spec.term_names:
        raise KeyError(f"focal term {focal!r} not in spec")
    frame = panel.frame
    y, X, names = _build_design(spec, frame)
    code_list = _fe_codes(spec, frame)
    stacked, _ = _alternating_demean(np.column_stack([y, X]), code_list)
    yd, Xd = stacked[:, 0], stacked[:, 1:]
    _check_rank(Xd, names, raw_norms=np.linalg.norm(X, axis=0))
    idx = names.index(focal)
    keep = [j for j in range(Xd.shape[1]) if j != idx]
    controls = Xd[:, keep]
    x = Xd[:, idx]
    if controls.shape[1] == 0:
        return ResidualPair(yd.copy(), x.copy(), focal, ())
    coef_y, _, _, _ = np.linalg.lstsq(controls, yd, rcond=None)
    coef_x, _, _, _ = np.linalg.lstsq(controls, x, rcond=None)
    return ResidualPair(
        y_resid=yd - controls @ coef_y,
        x_resid=x - controls @ coef_x,
        focal=focal,
        conditioning=tuple(names[j] for j in keep),
    )


@dataclasses.dataclass(frozen=True)
class PartialCovariance:
    covariance: float
    variance: float
    ratio: float


def partial_covariance(pair: ResidualPair) -> PartialCovariance:
    """Sample covariance of the residual pair, its variance, and the ratio."""
    y, x = pair.y_resid, pair.x_resid
    if len(y) != len(x) or len(y) < 2:
        raise ValueError("residual vectors must have equal length >= 2")
    cov = float(np.cov(y, x, ddof=1)[0, 1])
    var = float(np.var(x, ddof=1))
    if var < 1e-24:
        raise DegenerateFocalTermError(
            "focal residual has numerically zero variance", variance=var
        )
    return PartialCovariance(covariance=cov, variance=var, ratio=cov / var)


class ReplicateEstimator:
    """Re-estimates one spec on row subsets; the bootstrap's inner loop.

    The design is built once from the full panel; each call re-demeans the
    sampled rows (group means change with the sample) and solves the small
    least-squares problem. Returns None on rank-deficient draws so callers
    can redraw.
    """

    def __init__(self, spec: RegressionSpec, panel: PanelDataset):
        frame = panel.frame
        self.spec = spec
        self.y, self.X, self.names = _build_design(spec, frame)
        self.code_list = _fe_codes(spec, frame)

    def coefficients(self, rows: np.ndarray) -> np.ndarray | None:
        y = self.y[rows]
        X = self.X[rows]
        codes = [
            np.unique(c[rows], return_inverse=True)[1] for c in self.code_list
        ]
        stacked, _ = _alternating_demean(np.column_stack([y, X]), codes)
        yd, Xd = stacked[:, 0], stacked[:, 1:]
        raw_norms = np.linalg.norm(X, axis=0)
        norms = np.linalg.norm(Xd, axis=0)
        if np.any(norms <= 1e-8 * np.maximum(1.0, raw_norms)):
            return None
        beta, _, rank, _ = np.linalg.lstsq(Xd, yd, rcond=None)
        if rank < Xd.shape[1]:
            return None
        return beta
