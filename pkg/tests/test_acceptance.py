"""The guarantees this package ships with, one test per claim.

Every test here pins an externally checkable property: exact oracles for
the scoring and regression kernels on small instances, Monte Carlo
power/size/calibration for the detector on synthetic panels with known
contamination, and the golden report layout. Run

    pytest tests/test_acceptance.py -v

for one pass/fail line per guarantee. The suite is self-contained: the
oracles are written out here, independently of the library internals,
and nothing below needs network access or external data.
"""

import itertools
import math
import time
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from lapdetect.detection import pairs_bootstrap, run_detection
from lapdetect.lap import ScoredPrompt, TokenScore, compute_lap
from lapdetect.panel import PanelDataset
from lapdetect.regression import (
    RegressionSpec,
    fit,
    fwl_residualize,
    partial_covariance,
)
from lapdetect.report import render_table
from lapdetect.simulate import DgpConfig, LProcess, empirical_mse, generate, prop1_oracle

FIXTURES = Path(__file__).parent / "fixtures"

DETECTION_TERMS = (("llm",), ("lap",), ("llm", "lap"))


def make_prompt(pid: str, logprobs) -> ScoredPrompt:
    tokens = tuple(
        TokenScore(position=j + 1, text="", logprob=float(lp))
        for j, lp in enumerate(logprobs)
    )
    return ScoredPrompt(prompt_id=pid, model_id="oracle", tokens=tokens)


# ---------------------------------------------------------------------------
# oracle helpers for the regression kernels: dense, slow, no shortcuts


def random_panel(rng, n_entities, n_periods, keep):
    """Unbalanced two-way panel; every entity and period appears at least once."""
    rows = []
    seen_e, seen_t = set(), set()
    for e in range(n_entities):
        for t in range(n_periods):
            first = e not in seen_e or t not in seen_t
            if first or rng.random() < keep:
                seen_e.add(e)
                seen_t.add(t)
                rows.append((f"E{e:02d}", f"T{t:02d}"))
    frame = pd.DataFrame(rows, columns=["entity_id", "time_id"])
    n = len(frame)
    frame["llm"] = rng.normal(size=n)
    frame["lap"] = rng.uniform(0.05, 1.0, size=n)
    alpha = rng.normal(size=n_entities)
    gamma = rng.normal(size=n_periods)
    e_idx = frame["entity_id"].str.slice(1).astype(int)
    t_idx = frame["time_id"].str.slice(1).astype(int)
    frame["outcome"] = (
        0.5 * frame["llm"]
        - 0.3 * frame["lap"]
        + 0.8 * frame["llm"] * frame["lap"]
        + alpha[e_idx]
        + gamma[t_idx]
        + rng.normal(scale=0.7, size=n)
    )
    frame["cluster_id"] = frame["time_id"]
    return PanelDataset(frame)


def dummy_matrix(frame):
    """All entity dummies plus time dummies with the first level dropped."""
    blocks = [
        (frame["entity_id"] == level).to_numpy(float)
        for level in sorted(frame["entity_id"].unique())
    ]
    blocks += [
        (frame["time_id"] == level).to_numpy(float)
        for level in sorted(frame["time_id"].unique())[1:]
    ]
    return np.column_stack(blocks)


def raw_design(frame):
    return np.column_stack([
        frame["llm"].to_numpy(float),
        frame["lap"].to_numpy(float),
        frame["llm"].to_numpy(float) * frame["lap"].to_numpy(float),
    ])


# ---------------------------------------------------------------------------
# scoring kernel


def test_lap_matches_subset_enumeration_oracle():
    """1,000 random short vectors: selected subset bit-for-bit, value to 1e-12.

    The oracle enumerates every subset of the required size and keeps the
    one with the smallest exact (fsum) total, breaking exact ties toward
    the lexicographically smallest position tuple. Every third vector is
    rounded to one decimal so duplicated log-probabilities exercise the
    tie-break rule.
    """
    rng = np.random.default_rng(2024)
    k_grid = [5.0, 10.0, 20.0, 25.0, 33.3, 50.0, 75.0, 100.0]
    start = time.perf_counter()
    for i in range(1000):
        n = int(rng.integers(1, 13))
        logprobs = -rng.uniform(0.001, 10.0, size=n)
        if i % 3 == 0:
            logprobs = np.round(logprobs, 1)
            logprobs[logprobs == 0.0] = -0.1
        k = k_grid[int(rng.integers(len(k_grid)))]
        score = compute_lap(make_prompt(f"v{i}", logprobs), k)

        m = max(1, math.floor(k * n / 100.0))
        best_sum, best_positions = min(
            (math.fsum(logprobs[list(combo)]), combo)
            for combo in itertools.combinations(range(n), m)
        )
        assert score.n_selected == m
        assert score.selected_positions == tuple(p + 1 for p in best_positions)
        assert abs(score.value - math.exp(best_sum / m)) <= 1e-12
    assert time.perf_counter() - start < 10.0


def test_lap_uniform_and_full_window_reductions():
    """Degenerate windows collapse to closed forms.

    All-equal log-probabilities return the common probability bitwise;
    k = 100 selects every token, giving the inverse perplexity.
    """
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 13))
        lp = -float(rng.uniform(0.001, 12.0))
        k = float(rng.choice([10.0, 20.0, 50.0, 100.0]))
        score = compute_lap(make_prompt("u", [lp] * n), k)
        assert score.value == math.exp(lp)
        assert score.selected_positions == tuple(range(1, score.n_selected + 1))
    for i in range(200):
        n = int(rng.integers(1, 13))
        logprobs = -rng.uniform(0.001, 10.0, size=n)
        score = compute_lap(make_prompt(f"p{i}", logprobs), 100.0)
        assert score.n_selected == n
        assert abs(score.value - math.exp(math.fsum(logprobs) / n)) <= 1e-12


# ---------------------------------------------------------------------------
# regression kernels


def test_fixed_effects_match_dense_dummy_ols():
    """200 random unbalanced panels: within estimates equal explicit dummy OLS.

    The oracle regresses on the raw terms plus a full dummy expansion of
    both dimensions. The focal coefficient must also equal the slope of
    the residualized outcome on the residualized regressor.
    """
    spec = RegressionSpec(
        "outcome", DETECTION_TERMS, fe=frozenset({"entity", "time"})
    )
    rng = np.random.default_rng(31)
    for _ in range(200):
        n_entities = int(rng.integers(3, 21))
        n_periods = int(rng.integers(3, 21))
        panel = random_panel(rng, n_entities, n_periods, float(rng.uniform(0.7, 0.95)))
        frame = panel.frame

        full = np.column_stack([raw_design(frame), dummy_matrix(frame)])
        beta_dense, *_ = np.linalg.lstsq(
            full, frame["outcome"].to_numpy(float), rcond=None
        )

        result = fit(spec, panel)
        np.testing.assert_allclose(
            result.coefficients, beta_dense[:3], rtol=1e-8, atol=1e-12
        )

        pair = fwl_residualize(spec, "llm:lap", panel)
        ratio = partial_covariance(pair).ratio
        joint = result.coefficients[list(result.term_names).index("llm:lap")]
        assert abs(ratio - joint) <= 1e-8 * max(abs(joint), 1e-12)


def test_cluster_robust_vcov_matches_dense_sandwich():
    """100 random instances: per-cluster outer products, small-sample factor.

    The oracle projects out the dummies exactly, loops over clusters for
    the meat, and applies G/(G-1) * (n-1)/(n-k). Agreement to 1e-10 in
    relative sup norm.
    """
    rng = np.random.default_rng(77)
    for i in range(100):
        n_entities = int(rng.integers(4, 16))
        n_periods = int(rng.integers(4, 16))
        panel = random_panel(rng, n_entities, n_periods, float(rng.uniform(0.7, 0.95)))
        cluster = "entity" if i % 2 else "time"
        spec = RegressionSpec(
            "outcome", DETECTION_TERMS,
            fe=frozenset({"entity", "time"}), cluster=cluster,
        )
        result = fit(spec, panel)

        frame = panel.frame
        y = frame["outcome"].to_numpy(float)
        X = raw_design(frame)
        D = dummy_matrix(frame)
        coef_x, *_ = np.linalg.lstsq(D, X, rcond=None)
        coef_y, *_ = np.linalg.lstsq(D, y, rcond=None)
        Xt = X - D @ coef_x
        yt = y - D @ coef_y
        beta, *_ = np.linalg.lstsq(Xt, yt, rcond=None)
        resid = yt - Xt @ beta

        labels = frame["entity_id" if cluster == "entity" else "time_id"]
        groups: dict = {}
        for row, g in enumerate(labels):
            groups.setdefault(g, []).append(row)
        k = Xt.shape[1]
        meat = np.zeros((k, k))
        for idx in groups.values():
            s = Xt[idx].T @ resid[idx]
            meat += np.outer(s, s)
        n = len(yt)
        G = len(groups)
        factor = (G / (G - 1)) * ((n - 1) / (n - k))
        bread = np.linalg.inv(Xt.T @ Xt)
        vcov_oracle = factor * bread @ meat @ bread
        vcov_oracle = (vcov_oracle + vcov_oracle.T) / 2.0

        rel = np.max(np.abs(result.vcov - vcov_oracle)) / np.max(np.abs(vcov_oracle))
        assert rel <= 1e-10


# ---------------------------------------------------------------------------
# detector power and size on the synthetic contamination model


def test_detection_power_under_uniform_contamination():
    """Smoothly varying contamination, categorical predictions, n = 50,000.

    With L ~ Uniform(0,1) and sign-form predictions the interaction is
    positive; the detector must find it with t > 5 in at least 99% of
    200 seeds, inside five minutes.
    """
    start = time.perf_counter()
    hits = 0
    for seed in range(200):
        sp = generate(DgpConfig(
            n_entities=100, n_periods=500, sigma_eps=1.0,
            prediction_form="sign",
            l_process=LProcess(kind="uniform", low=0.0, high=1.0),
            seed=seed,
        ))
        report = run_detection(sp.panel)
        hits += (report.beta3 > 0.0) and (report.beta3_t > 5.0)
    assert hits >= 198
    assert time.perf_counter() - start < 300.0


def test_detection_size_without_contamination():
    """No contamination anywhere: the 5% one-sided test fires in <= 7% of
    1,000 panels of 10,000 observations, inside ten minutes."""
    start = time.perf_counter()
    detected = 0
    for seed in range(1000):
        sp = generate(DgpConfig(
            n_entities=100, n_periods=100, sigma_eps=1.0,
            prediction_form="sign",
            l_process=LProcess(kind="zero"), lap_noise_sd=0.3,
            seed=seed,
        ))
        detected += run_detection(sp.panel).verdict == "bias_detected"
    assert detected <= 70
    assert time.perf_counter() - start < 600.0


# ---------------------------------------------------------------------------
# structural identities of the contamination model


def test_mse_falls_with_contamination_weight():
    """Empirical MSE tracks sigma^2 (1-L)^2 within 2% at n = 100,000.

    Full contamination (L = 1) reproduces the outcome term by term, so
    its MSE is exactly zero, not merely small.
    """
    for i, level in enumerate((0.0, 0.3, 0.5, 0.9, 1.0)):
        sp = generate(DgpConfig(
            n_entities=100, n_periods=1000, sigma_eps=1.0,
            l_process=LProcess(kind="constant", value=level),
            seed=60 + i,
        ))
        table = empirical_mse(sp)
        assert len(table) == 1
        observed = float(table["mse"].iloc[0])
        analytic = float(table["analytic"].iloc[0])
        assert analytic == (1.0 - level) ** 2
        if level == 1.0:
            assert observed == 0.0
        else:
            assert abs(observed - analytic) <= 0.02 * analytic


def test_residual_covariance_identity():
    """Cov of the proof-form residuals equals E[L^2 Var(eps | prediction, L)].

    Checked at n = 200,000 for three constant-L Gaussian configs, to
    three Monte Carlo standard errors (combined in quadrature).
    """
    for i, level in enumerate((0.25, 0.5, 0.8)):
        sp = generate(DgpConfig(
            n_entities=200, n_periods=1000, mu_process="linear",
            l_process=LProcess(kind="constant", value=level),
            seed=40 + i,
        ))
        result = prop1_oracle(sp)
        bound = 3.0 * float(np.hypot(result.se_lhs, result.se_rhs))
        assert abs(result.lhs - result.rhs) <= bound


# ---------------------------------------------------------------------------
# resampling inference


def test_bootstrap_null_pvalues_are_uniform():
    """Centered one-sided bootstrap p-values are Uniform(0,1) under the null.

    500 independent null panels, 499 replicates each; Kolmogorov-Smirnov
    must not reject at the 1% level. The same seed must reproduce the
    draw vector byte for byte.
    """
    spec = RegressionSpec("outcome", DETECTION_TERMS)
    pvalues = []
    for seed in range(500):
        sp = generate(DgpConfig(
            n_entities=10, n_periods=30,
            l_process=LProcess(kind="zero"), lap_noise_sd=0.3,
            seed=seed,
        ))
        result = pairs_bootstrap(sp.panel, spec, "llm:lap", b=499, seed=100_000 + seed)
        pvalues.append(result.null_p_value())
    ks = stats.kstest(pvalues, "uniform")
    assert ks.pvalue > 0.01

    sp = generate(DgpConfig(
        n_entities=10, n_periods=30,
        l_process=LProcess(kind="zero"), lap_noise_sd=0.3, seed=7,
    ))
    first = pairs_bootstrap(sp.panel, spec, "llm:lap", b=499, seed=7)
    second = pairs_bootstrap(sp.panel, spec, "llm:lap", b=499, seed=7)
    assert first.draws.tobytes() == second.draws.tobytes()
    assert first.full_estimate == second.full_estimate


def test_in_sample_interaction_exceeds_oos_bootstrap_band():
    """Contaminated-period estimates clear the clean-period bootstrap band.

    The interaction fitted on a contaminated panel must exceed the 95th
    percentile of its bootstrap distribution on a matching uncontaminated
    panel in at least 95 of 100 trials.
    """
    spec = RegressionSpec("outcome", DETECTION_TERMS)
    wins = 0
    for trial in range(100):
        contaminated = generate(DgpConfig(
            n_entities=100, n_periods=200, prediction_form="sign",
            l_process=LProcess(kind="uniform", low=0.0, high=1.0),
            seed=trial,
        ))
        beta3 = run_detection(contaminated.panel).beta3
        clean = generate(DgpConfig(
            n_entities=50, n_periods=100, prediction_form="sign",
            l_process=LProcess(kind="zero"), lap_noise_sd=0.3,
            seed=50_000 + trial,
        ))
        boot = pairs_bootstrap(clean.panel, spec, "llm:lap", b=199, seed=90_000 + trial)
        wins += beta3 > boot.percentile_95
    assert wins >= 95


# ---------------------------------------------------------------------------
# report rendering


def test_report_table_matches_golden_layout():
    """Two-column table renders with stars, t rows, FE rows, R2 and N."""
    baseline = {
        "spec": {
            "outcome": "return_pct",
            "terms": [["llm"]],
            "fe": ["entity", "time"],
            "cluster": "time",
        },
        "terms": ["llm"],
        "coefficients": {"llm": 0.210},
        "t_stats": {"llm": 12.24},
        "r2_overall": 0.179,
        "n_obs": 91361,
    }
    full = {
        "spec": {
            "outcome": "return_pct",
            "terms": [["llm"], ["lap"], ["llm", "lap"]],
            "fe": ["entity", "time"],
            "cluster": "time",
        },
        "terms": ["llm", "lap", "llm:lap"],
        "coefficients": {"llm": 0.00117, "lap": -1.297, "llm:lap": 2.866},
        "t_stats": {"llm": 0.03, "lap": -2.61, "llm:lap": 4.86},
        "r2_overall": 0.180,
        "n_obs": 91361,
    }
    rendered = render_table(
        [baseline, full],
        term_labels={
            "llm": "LLM score",
            "lap": "LAP",
            "llm:lap": "LLM score x LAP",
        },
        title="Next-day return on LLM verdicts",
    )
    assert rendered == (FIXTURES / "report_table.txt").read_text()
