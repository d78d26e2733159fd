"""The lookahead-bias test: interaction fits, magnitudes, pairs bootstrap.

The detectable signature is a positive coefficient on prediction x LAP in
the outcome regression. run_detection estimates it with the economic
magnitudes; run_size_interaction and run_horserace are the companion
designs (size heterogeneity, alternative confidence covariates); the pairs
bootstrap resamples rows to put a finite-sample distribution on any focal
coefficient.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
from scipy.stats import norm

from .errors import BootstrapInstabilityWarning
from .panel import PanelDataset
from .regression import (
    FitResult,
    RegressionSpec,
    ReplicateEstimator,
    _resolve_cluster,
    fit,
)

BASELINE_TERMS = (("llm",),)
DETECTION_TERMS = (("llm",), ("lap",), ("llm", "lap"))
SIZE_TERMS = (
    ("llm",),
    ("small",),
    ("llm", "small"),
    ("lap",),
    ("llm", "lap"),
    ("lap", "small"),
    ("llm", "lap", "small"),
)

# a replicate that keeps resampling into rank-deficient designs is a bug in
# the caller's panel, not bad luck; give up loudly after this many attempts
_MAX_REDRAWS_PER_REPLICATE = 1000


@dataclasses.dataclass(frozen=True)
class DetectionConfig:
    """Shared options for the detection fits.

    level is the one-sided significance level for the verdict; fe and
    cluster are passed through to every regression spec built here.
    """

    level: float = 0.05
    fe: tuple[str, ...] = ()
    cluster: str | None = None

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError("significance level must lie strictly inside (0, 1)")
        object.__setattr__(self, "fe", tuple(self.fe))

    def spec(self, terms) -> RegressionSpec:
        return RegressionSpec("outcome", terms, fe=self.fe, cluster=self.cluster)

    def to_json(self) -> dict:
        return {"level": self.level, "fe": list(self.fe), "cluster": self.cluster}

    @classmethod
    def from_json(cls, doc: dict) -> "DetectionConfig":
        return cls(
            level=doc.get("level", 0.05),
            fe=tuple(doc.get("fe", ())),
            cluster=doc.get("cluster"),
        )


@dataclasses.dataclass(frozen=True, eq=False)
class DetectionReport:
    """Outcome of the bias test with the magnitudes read off the fits.

    effect_at_mean_lap is the outcome change per one-SD move in the
    prediction evaluated at the sample-mean LAP; amplification_1sd is the
    extra change when LAP sits one SD higher; marginal_effect_1sd is their
    sum. amplification_ratio divides the amplification by the standalone
    prediction effect from the baseline (no-interaction) fit. The verdict
    is bias_detected only when the interaction is positive AND its t-stat
    clears the one-sided critical value at the configured level.
    """

    baseline_fit: FitResult
    fit: FitResult
    beta3: float
    beta3_t: float
    effect_at_mean_lap: float
    amplification_1sd: float
    marginal_effect_1sd: float
    amplification_ratio: float
    level: float
    verdict: str

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "level": self.level,
            "beta3": self.beta3,
            "beta3_t": self.beta3_t,
            "effect_at_mean_lap": self.effect_at_mean_lap,
            "amplification_1sd": self.amplification_1sd,
            "marginal_effect_1sd": self.marginal_effect_1sd,
            "amplification_ratio": self.amplification_ratio,
            "baseline_fit": self.baseline_fit.to_json(),
            "fit": self.fit.to_json(),
        }


def run_detection(panel: PanelDataset, config: DetectionConfig = DetectionConfig()) -> DetectionReport:
    """Estimate the interaction design and judge the bias verdict.

    Fits the baseline (prediction only) and the full prediction + LAP +
    interaction specs, then converts the interaction coefficient into
    one-SD magnitudes using the panel's own moments. Regression errors
    (collinear design, too few clusters, ...) propagate unchanged.
    """
    baseline = fit(config.spec(BASELINE_TERMS), panel)
    full = fit(config.spec(DETECTION_TERMS), panel)
    beta3 = full.coef("llm:lap")
    beta3_t = full.t("llm:lap")

    llm = panel.column("llm")
    lap = panel.column("lap")
    sd_llm = float(np.std(llm, ddof=1))
    sd_lap = float(np.std(lap, ddof=1))
    effect_at_mean_lap = (full.coef("llm") + beta3 * float(lap.mean())) * sd_llm
    amplification = beta3 * sd_lap * sd_llm
    standalone = baseline.coef("llm") * sd_llm
    ratio = amplification / standalone if standalone != 0.0 else math.nan

    critical = float(norm.ppf(1.0 - config.level))
    detected = beta3 > 0.0 and beta3_t > critical
    return DetectionReport(
        baseline_fit=baseline,
        fit=full,
        beta3=beta3,
        beta3_t=beta3_t,
        effect_at_mean_lap=effect_at_mean_lap,
        amplification_1sd=amplification,
        marginal_effect_1sd=effect_at_mean_lap + amplification,
        amplification_ratio=ratio,
        level=config.level,
        verdict="bias_detected" if detected else "not_detected",
    )


def _observed_subpanel(panel: PanelDataset, column: str) -> PanelDataset:
    """Rows where ``column`` is observed; errors when none are."""
    frame = panel.frame
    keep = frame[column].notna()
    if not keep.any():
        raise ValueError(f"column {column!r} has no observed values")
    if keep.all():
        return panel
    return panel.with_frame(frame.loc[keep].reset_index(drop=True))


def run_size_interaction(
    panel: PanelDataset, config: DetectionConfig = DetectionConfig()
) -> FitResult:
    """Triple-interaction design probing whether bias concentrates in
    small entities: prediction, small, LAP, and all their products.

    Rows with a missing small flag are excluded. A constant small column
    makes the products collinear and raises through the regression layer.
    """
    return fit(config.spec(SIZE_TERMS), _observed_subpanel(panel, "small"))


def run_horserace(
    panel: PanelDataset,
    covariate: str,
    include_lap: bool = True,
    config: DetectionConfig = DetectionConfig(),
) -> FitResult:
    """Race an alternative confidence covariate against LAP.

    Fits prediction, covariate, and prediction x covariate, plus the LAP
    pair when include_lap is set. The covariate is typically
    first_token_prob or confidence; rows where it is missing are excluded.
    A covariate whose values duplicate LAP raises a collinearity error.
    """
    terms = [("llm",), (covariate,), ("llm", covariate)]
    if include_lap:
        terms += [("lap",), ("llm", "lap")]
    return fit(config.spec(tuple(terms)), _observed_subpanel(panel, covariate))


@dataclasses.dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Replicated focal coefficients plus the add-one p-value machinery.

    draws holds one coefficient per replicate in replicate order;
    full_estimate is the focal coefficient on the original panel.
    n_redraws counts degenerate resamples that were redrawn; unstable is
    set when they exceeded 1% of the replicate count.
    """

    draws: np.ndarray
    seed: int
    focal: str
    full_estimate: float
    n_redraws: int
    unstable: bool

    @property
    def b(self) -> int:
        return int(self.draws.size)

    def percentile(self, q: float) -> float:
        """Order-statistic percentile: sorted_draws[ceil(q*B) - 1]."""
        if not 0.0 < q <= 1.0:
            raise ValueError("percentile level must lie in (0, 1]")
        ordered = np.sort(self.draws)
        return float(ordered[max(0, math.ceil(q * ordered.size) - 1)])

    @property
    def percentile_95(self) -> float:
        return self.percentile(0.95)

    def p_one_sided(self, reference: float) -> float:
        """Add-one upper-tail p: (#{draws >= reference} + 1) / (B + 1)."""
        exceed = int(np.count_nonzero(self.draws >= reference))
        return (exceed + 1) / (self.b + 1)

    def null_p_value(self) -> float:
        """Bootstrap test of focal = 0 evaluated at the panel's estimate.

        Centers the draws at the full-sample estimate, so the p-value is
        P(draw - estimate >= estimate), i.e. p_one_sided(2 * estimate).
        Under a true null this is Uniform(0, 1) up to the add-one shift.
        """
        return self.p_one_sided(2.0 * self.full_estimate)

    def to_json(self) -> dict:
        return {
            "focal": self.focal,
            "b": self.b,
            "seed": self.seed,
            "full_estimate": self.full_estimate,
            "mean": float(self.draws.mean()),
            "sd": float(self.draws.std(ddof=1)) if self.b > 1 else 0.0,
            "percentile_95": self.percentile_95,
            "null_p_value": self.null_p_value(),
            "n_redraws": self.n_redraws,
            "unstable": self.unstable,
        }


def pairs_bootstrap(
    panel: PanelDataset,
    spec: RegressionSpec,
    focal_term: str,
    b: int,
    seed: int,
    threads: int = 1,
    cluster_resample: bool = False,
) -> BootstrapResult:
    """Resample rows with replacement and re-estimate the focal coefficient.

    Each replicate i draws its own RNG stream from (seed, i), so draws are
    bit-identical whatever the thread count, and a degenerate resample
    (rank-deficient after re-demeaning) is redrawn from the same stream.
    With cluster_resample the spec's cluster groups are resampled whole
    instead of rows; the spec must carry a cluster dimension then.
    """
    if b < 1:
        raise ValueError("need at least one bootstrap replicate")
    n = len(panel)
    if n == 0:
        raise ValueError("cannot bootstrap an empty panel")
    full = fit(spec, panel)
    reference = full.coef(focal_term)
    estimator = ReplicateEstimator(spec, panel)
    focal_idx = estimator.names.index(focal_term)

    groups: list[np.ndarray] = []
    if cluster_resample:
        codes = _resolve_cluster(panel.frame, spec.cluster)
        if codes is None:
            raise ValueError("cluster_resample needs a cluster dimension on the spec")
        groups = [np.flatnonzero(codes == g) for g in range(int(codes.max()) + 1)]

    def one(index: int) -> tuple[float, int]:
        rng = np.random.default_rng((seed, index))
        redraws = 0
        while True:
            if cluster_resample:
                chosen = rng.integers(0, len(groups), size=len(groups))
                rows = np.concatenate([groups[g] for g in chosen])
            else:
                rows = rng.integers(0, n, size=n)
            beta = estimator.coefficients(rows)
            if beta is not None:
                return float(beta[focal_idx]), redraws
            redraws += 1
            if redraws >= _MAX_REDRAWS_PER_REPLICATE:
                raise RuntimeError(
                    f"bootstrap replicate {index} drew {redraws} degenerate designs in a row"
                )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, range(b)))
    else:
        outcomes = [one(i) for i in range(b)]

    draws = np.array([value for value, _ in outcomes])
    n_redraws = sum(count for _, count in outcomes)
    unstable = n_redraws > 0.01 * b
    if unstable:
        warnings.warn(
            BootstrapInstabilityWarning(
                f"{n_redraws} degenerate resamples redrawn across {b} replicates (over 1%)"
            )
        )
    return BootstrapResult(
        draws=draws,
        seed=seed,
        focal=focal_term,
        full_estimate=reference,
        n_redraws=n_redraws,
        unstable=unstable,
    )


@dataclasses.dataclass(frozen=True, eq=False)
class HistogramData:
    """Equal-width binned draws plus the overlay markers as plain fields."""

    table: pd.DataFrame
    percentile_95: float
    reference: float


def histogram_export(result: BootstrapResult, bins: int) -> HistogramData:
    """Bin the draws for plotting; markers ride alongside, not inside.

    numpy.histogram semantics: equal-width bins over the draw range, and a
    constant draw vector collapses to a unit-width range with one occupied
    bin.
    """
    if bins < 1:
        raise ValueError("need at least one bin")
    counts, edges = np.histogram(result.draws, bins=bins)
    table = pd.DataFrame(
        {"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts}
    )
    return HistogramData(
        table=table,
        percentile_95=result.percentile_95,
        reference=result.full_estimate,
    )


def write_histogram_csv(hist: HistogramData, path) -> None:
    hist.table.to_csv(path, index=False)
