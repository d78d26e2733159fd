"""Synthetic contaminated panels with ground truth for validating the detector.

The data-generating process follows the contamination model: outcomes are
Y = mu + eps, predictions are mu_hat = mu + L*eps, where L in [0,1] is the
per-observation (or per-entity) contamination weight. The hidden columns are
kept in a truth sidecar so oracle identities can be checked exactly.

The emitted prediction is mu_hat itself by default ("level"), or its sign
("sign") to mimic categorical verdicts like the -1/0/+1 headline scores.
Either way the truth column u records the gap llm - (mu + L*eps), so the
decomposition llm = mu + L*eps + u holds exactly for every config.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import pandas as pd
from scipy.special import expit

from .errors import CollinearDesignError, DegenerateFocalTermError
from .panel import PANEL_COLUMNS, PanelDataset
from .regression import RegressionSpec, fwl_residualize, partial_covariance

L_KINDS = ("zero", "constant", "uniform", "two_group")
MU_PROCESSES = ("linear", "sign", "constant")
PREDICTION_FORMS = ("level", "sign")
CONF_MODES = ("none", "noise", "skill")
SMALL_MODES = ("none", "high_l", "random")

# skill channel: confident rows carry less prediction noise
_SKILL_CONFIDENCE = (0.25, 0.75)
_SKILL_NOISE_SD = (0.8, 0.2)
_RANDOM_SMALL_SHARE = 0.2

TRUTH_COLUMNS = ("prompt_id", "mu", "eps", "l_true", "u")


@dataclasses.dataclass(frozen=True)
class LProcess:
    """Distribution of the contamination weight L.

    kinds: "zero" (identically 0), "constant" (= value), "uniform" on
    [low, high], "two_group" (first round(share_high * n_entities) entities
    at high_level, the rest at low_level).
    """

    kind: str = "zero"
    value: float = 0.5
    low: float = 0.0
    high: float = 1.0
    low_level: float = 0.0
    high_level: float = 0.8
    share_high: float = 0.5

    def __post_init__(self):
        if self.kind not in L_KINDS:
            raise ValueError(f"unknown L process kind {self.kind!r}")
        for name in ("value", "low", "high", "low_level", "high_level"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"L support must stay in [0, 1]; {name}={v}")
        if self.low > self.high:
            raise ValueError("uniform bounds out of order")
        if not 0.0 <= self.share_high <= 1.0:
            raise ValueError("share_high must lie in [0, 1]")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "LProcess":
        return cls(**doc)


@dataclasses.dataclass(frozen=True)
class DgpConfig:
    n_entities: int
    n_periods: int
    sigma_eps: float = 1.0
    mu_process: str = "linear"
    mu_scale: float = 1.0
    prediction_form: str = "level"
    l_process: LProcess = LProcess()
    l_attach: str = "observation"
    lap_noise_sd: float = 0.0
    conf_mode: str = "none"
    small_mode: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.n_entities < 1 or self.n_periods < 1:
            raise ValueError("need at least one entity and one period")
        if self.sigma_eps <= 0:
            raise ValueError("sigma_eps must be positive")
        if self.mu_process not in MU_PROCESSES:
            raise ValueError(f"unknown mu process {self.mu_process!r}")
        if self.prediction_form not in PREDICTION_FORMS:
            raise ValueError(f"unknown prediction form {self.prediction_form!r}")
        if self.l_attach not in ("observation", "entity"):
            raise ValueError("l_attach must be 'observation' or 'entity'")
        if self.lap_noise_sd < 0:
            raise ValueError("lap_noise_sd must be nonnegative")
        if self.conf_mode not in CONF_MODES:
            raise ValueError(f"unknown conf mode {self.conf_mode!r}")
        if self.small_mode not in SMALL_MODES:
            raise ValueError(f"unknown small mode {self.small_mode!r}")

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["l_process"] = self.l_process.to_json()
        return doc

    @classmethod
    def from_json(cls, doc) -> "DgpConfig":
        if isinstance(doc, (str, bytes)):
            doc = json.loads(doc)
        doc = dict(doc)
        doc["l_process"] = LProcess.from_json(doc.get("l_process", {}))
        return cls(**doc)


@dataclasses.dataclass(frozen=True, eq=False)
class SyntheticPanel:
    """Observable panel plus the hidden truth columns and the config."""

    panel: PanelDataset
    truth: pd.DataFrame
    config: DgpConfig


def _mu_draw(config: DgpConfig, rng, n: int) -> np.ndarray:
    signal = rng.normal(size=n)
    if config.mu_process == "linear":
        return config.mu_scale * signal
    if config.mu_process == "sign":
        return config.mu_scale * np.sign(signal)
    return np.full(n, config.mu_scale)


def _l_draw(config: DgpConfig, rng, entity: int, n_high: int, n: int) -> np.ndarray:
    p = config.l_process
    if p.kind == "zero":
        return np.zeros(n)
    if p.kind == "constant":
        return np.full(n, p.value)
    if p.kind == "two_group":
        level = p.high_level if entity < n_high else p.low_level
        return np.full(n, level)
    if config.l_attach == "entity":
        return np.full(n, rng.uniform(p.low, p.high))
    return rng.uniform(p.low, p.high, size=n)


def _noisy_lap(rng, l_values: np.ndarray, sd: float) -> np.ndarray:
    """L plus truncated Gaussian measurement noise, kept inside (0, 1]."""
    lap = l_values + rng.normal(0.0, sd, size=l_values.shape)
    bad = (lap <= 0.0) | (lap > 1.0)
    while bad.any():
        lap[bad] = l_values[bad] + rng.normal(0.0, sd, size=int(bad.sum()))
        bad = (lap <= 0.0) | (lap > 1.0)
    return lap


def generate(config: DgpConfig) -> SyntheticPanel:
    """Draw a panel; deterministic per seed, one RNG substream per entity.

    The substream for entity e is seeded by (seed, e) and consumed in a
    fixed order, so entity rows are identical whatever the total entity
    count or iteration order.
    """
    P = config.n_periods
    n_high = round(config.l_process.share_high * config.n_entities)
    time_labels = np.array([f"T{t:04d}" for t in range(P)])
    chunks = []
    truth_chunks = []
    for e in range(config.n_entities):
        rng = np.random.default_rng((config.seed, e))
        mu = _mu_draw(config, rng, P)
        eps = rng.normal(0.0, config.sigma_eps, size=P)
        l = _l_draw(config, rng, e, n_high, P)
        lap = _noisy_lap(rng, l, config.lap_noise_sd) if config.lap_noise_sd > 0 else l.copy()
        if config.conf_mode == "noise":
            confidence = rng.uniform(size=P)
            u = np.zeros(P)
        elif config.conf_mode == "skill":
            q = (rng.random(size=P) < 0.5).astype(int)
            confidence = np.where(q == 1, _SKILL_CONFIDENCE[1], _SKILL_CONFIDENCE[0])
            sd_u = np.where(q == 1, _SKILL_NOISE_SD[1], _SKILL_NOISE_SD[0])
            u = rng.normal(0.0, 1.0, size=P) * sd_u
        else:
            confidence = np.full(P, np.nan)
            u = np.zeros(P)
        first_token = rng.uniform(size=P)
        if config.small_mode == "high_l":
            small = float(e < n_high)
        elif config.small_mode == "random":
            small = float(rng.random() < _RANDOM_SMALL_SHARE)
        else:
            small = np.nan

        outcome = mu + eps
        llm = mu + l * eps + u
        if config.prediction_form == "sign":
            llm = np.sign(llm)
            u = llm - (mu + l * eps)
        entity_label = f"E{e:05d}"
        prompt_ids = [f"sim-{e:05d}-{t:04d}" for t in range(P)]
        chunks.append(
            pd.DataFrame(
                {
                    "prompt_id": prompt_ids,
                    "entity_id": entity_label,
                    "time_id": time_labels,
                    "outcome": outcome,
                    "llm": llm,
                    "lap": lap,
                    "confidence": confidence,
                    "first_token_prob": first_token,
                    "small": small,
                    "cluster_id": time_labels,
                }
            )
        )
        truth_chunks.append(
            pd.DataFrame(
                {
                    "prompt_id": prompt_ids,
                    "mu": mu,
                    "eps": eps,
                    "l_true": l,
                    "u": u,
                }
            )
        )
    frame = pd.concat(chunks, ignore_index=True)[list(PANEL_COLUMNS)]
    truth = pd.concat(truth_chunks, ignore_index=True)[list(TRUTH_COLUMNS)]
    return SyntheticPanel(panel=PanelDataset(frame), truth=truth, config=config)


def empirical_mse(sp: SyntheticPanel) -> pd.DataFrame:
    """Mean squared prediction error per distinct L level vs the analytic law.

    The analytic column sigma_eps^2 * (1 - L)^2 assumes level predictions
    with no extra noise; it is NaN for the skill channel and the sign
    prediction form. Grouping is by exact L value, which is meaningful for
    the discrete L processes.
    """
    err = sp.panel.frame["llm"].to_numpy(float) - sp.panel.frame["outcome"].to_numpy(float)
    l = sp.truth["l_true"].to_numpy(float)
    law_applies = sp.config.conf_mode != "skill" and sp.config.prediction_form == "level"
    rows = []
    for level in np.unique(l):
        mask = l == level
        analytic = sp.config.sigma_eps**2 * (1.0 - level) ** 2 if law_applies else np.nan
        rows.append(
            {
                "l_level": float(level),
                "n_obs": int(mask.sum()),
                "mse": float(np.mean(err[mask] ** 2)),
                "analytic": float(analytic),
            }
        )
    return pd.DataFrame(rows)


def proof_residuals(sp: SyntheticPanel) -> tuple[np.ndarray, np.ndarray]:
    """Residuals eps - E[eps|mu_hat, L] and L^2*eps - E[L^2*eps|mu_hat, L].

    The conditional expectations are analytic in the truth parameters:
    for the linear-Gaussian mu process, E[eps|mu_hat, L=l] = l*sigma^2 /
    (S + l^2*sigma^2) * mu_hat with S = Var(mu); for the sign process the
    posterior over mu = +/-s is logistic in mu_hat; for constant mu,
    mu_hat reveals eps exactly whenever l > 0.
    """
    cfg = sp.config
    if cfg.conf_mode == "skill":
        raise ValueError(
            "skill-channel prediction noise invalidates the closed-form conditionals"
        )
    if cfg.prediction_form != "level":
        raise ValueError("closed-form conditionals are derived for level predictions")
    mu_hat = sp.panel.frame["llm"].to_numpy(float)
    eps = sp.truth["eps"].to_numpy(float)
    l = sp.truth["l_true"].to_numpy(float)
    sigma2 = cfg.sigma_eps**2
    cond_mean = np.zeros_like(eps)
    pos = l > 0
    if cfg.mu_process == "linear":
        S = cfg.mu_scale**2
        denom = S + l[pos] ** 2 * sigma2
        cond_mean[pos] = l[pos] * sigma2 / denom * mu_hat[pos]
    elif cfg.mu_process == "sign":
        s = cfg.mu_scale
        p_plus = expit(2.0 * s * mu_hat[pos] / (l[pos] ** 2 * sigma2))
        e_mu = s * (2.0 * p_plus - 1.0)
        cond_mean[pos] = (mu_hat[pos] - e_mu) / l[pos]
    else:  # constant mu: eps = (mu_hat - mu_scale) / l exactly
        cond_mean[pos] = (mu_hat[pos] - cfg.mu_scale) / l[pos]
    eps_tilde = eps - cond_mean
    w_tilde = l**2 * eps_tilde
    return eps_tilde, w_tilde


def conditional_variance_terms(sp: SyntheticPanel) -> np.ndarray:
    """Per-observation L^2 * Var(eps | mu_hat, L) from the truth parameters."""
    cfg = sp.config
    if cfg.conf_mode == "skill":
        raise ValueError(
            "skill-channel prediction noise invalidates the closed-form conditionals"
        )
    if cfg.prediction_form != "level":
        raise ValueError("closed-form conditionals are derived for level predictions")
    mu_hat = sp.panel.frame["llm"].to_numpy(float)
    l = sp.truth["l_true"].to_numpy(float)
    sigma2 = cfg.sigma_eps**2
    v = np.zeros_like(l)
    pos = l > 0
    if cfg.mu_process == "linear":
        S = cfg.mu_scale**2
        v[pos] = l[pos] ** 2 * sigma2 * S / (S + l[pos] ** 2 * sigma2)
    elif cfg.mu_process == "sign":
        s = cfg.mu_scale
        p_plus = expit(2.0 * s * mu_hat[pos] / (l[pos] ** 2 * sigma2))
        # L^2 * Var(eps|.) = Var(mu|.) for the sign mixture
        v[pos] = 4.0 * s**2 * p_plus * (1.0 - p_plus)
    # constant mu: eps is revealed when l > 0, so the terms stay 0
    return v


@dataclasses.dataclass(frozen=True)
class Prop1Result:
    """Both sides of the structural covariance identity plus MC errors.

    lhs is the sample covariance of the proof-form residuals; rhs averages
    the analytic conditional-variance terms. fwl_covariance / fwl_ratio
    carry the observable-regression route (partialled interaction), or None
    with an explanatory note when that design is degenerate (constant or
    identically zero L).
    """

    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    n_obs: int
    fwl_covariance: float | None
    fwl_ratio: float | None
    note: str


def prop1_oracle(sp: SyntheticPanel) -> Prop1Result:
    eps_tilde, w_tilde = proof_residuals(sp)
    n = len(eps_tilde)
    products = (eps_tilde - eps_tilde.mean()) * (w_tilde - w_tilde.mean())
    lhs = float(products.sum() / (n - 1))
    se_lhs = float(np.std(products, ddof=1) / np.sqrt(n))
    terms = conditional_variance_terms(sp)
    rhs = float(terms.mean())
    se_rhs = float(np.std(terms, ddof=1) / np.sqrt(n))

    fwl_covariance = None
    fwl_ratio = None
    notes = []
    if sp.config.lap_noise_sd > 0:
        notes.append("lap carries measurement noise; the regression route uses the proxy")
    spec = RegressionSpec("outcome", (("llm",), ("lap",), ("llm", "lap")))
    try:
        pair = fwl_residualize(spec, "llm:lap", sp.panel)
        pc = partial_covariance(pair)
        fwl_covariance = pc.covariance
        fwl_ratio = pc.ratio
    except (CollinearDesignError, DegenerateFocalTermError) as exc:
        notes.append(f"observable interaction design degenerate: {exc}")
    return Prop1Result(
        lhs=lhs,
        rhs=rhs,
        se_lhs=se_lhs,
        se_rhs=se_rhs,
        n_obs=n,
        fwl_covariance=fwl_covariance,
        fwl_ratio=fwl_ratio,
        note="; ".join(notes),
    )


def write_truth_csv(sp: SyntheticPanel, path) -> None:
    sp.truth.to_csv(path, index=False)
