"""Panel assembly: event timing, outcome joins, size flags, and period splits."""

from __future__ import annotations

import dataclasses
import datetime as dt
import re
from collections.abc import Mapping
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    AmbiguousTimestampError,
    DegenerateColumnError,
    DuplicateIdError,
    InvalidSplitError,
    ObservationDroppedError,
)

EVENT_CUTOFF = dt.time(16, 0)
SMALL_PERCENTILE = 20.0

PANEL_COLUMNS = (
    "prompt_id",
    "entity_id",
    "time_id",
    "outcome",
    "llm",
    "lap",
    "confidence",
    "first_token_prob",
    "small",
    "cluster_id",
)

DROP_AMBIGUOUS = "ambiguous_timestamp"
DROP_MISSING_VERDICT = "missing_verdict"
DROP_UNPARSEABLE = "unparseable_response"
DROP_MISSING_LAP = "missing_lap"
DROP_MISSING_OUTCOME = "missing_outcome"

_TIME_HINT = re.compile(r"\d{1,2}:\d{2}")


@dataclasses.dataclass(frozen=True)
class PanelDataset:
    """A regression-ready table plus split and standardization provenance.

    ``frame`` holds one row per observation with the columns in
    ``PANEL_COLUMNS`` (extra columns are allowed and preserved).
    ``period_label`` is one of ``unsplit``, ``in_sample``,
    ``out_of_sample``.
    """

    frame: pd.DataFrame
    period_label: str = "unsplit"
    standardized: bool = False

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(self.frame.columns)

    def column(self, name: str) -> np.ndarray:
        """Numeric view of one column as a float array."""
        return self.frame[name].to_numpy(dtype=float)

    def with_frame(self, frame: pd.DataFrame, **changes) -> "PanelDataset":
        return dataclasses.replace(self, frame=frame, **changes)


def assign_event_day(timestamp, cutoff: dt.time = EVENT_CUTOFF) -> dt.date:
    """Map an exchange-local publication time to the day it counts as news.

    Anything at or after ``cutoff`` (market close) belongs to the next
    calendar day. Date-only inputs are rejected rather than guessed: without
    a time there is no way to place the item on either side of the close.
    """
    if timestamp is None or (isinstance(timestamp, float) and np.isnan(timestamp)):
        raise AmbiguousTimestampError("timestamp is missing", value=timestamp)
    if isinstance(timestamp, str):
        if not _TIME_HINT.search(timestamp):
            raise AmbiguousTimestampError(
                "timestamp has no time component", value=timestamp
            )
        try:
            stamp = pd.Timestamp(timestamp)
        except ValueError as exc:
            raise AmbiguousTimestampError(
                "unparseable timestamp", value=timestamp
            ) from exc
    elif isinstance(timestamp, dt.datetime):
        stamp = pd.Timestamp(timestamp)
    elif isinstance(timestamp, dt.date):
        raise AmbiguousTimestampError(
            "date carries no time component", value=timestamp
        )
    else:
        raise AmbiguousTimestampError(
            "unsupported timestamp type", value=timestamp
        )
    if pd.isna(stamp):
        raise AmbiguousTimestampError("timestamp is missing", value=timestamp)
    day = stamp.date()
    if stamp.time() >= cutoff:
        day = day + dt.timedelta(days=1)
    return day


def attach_outcome(
    events: pd.DataFrame,
    outcomes: pd.DataFrame,
    *,
    task: str = "headline",
    horizon: int = 2,
    strict: bool = False,
) -> pd.DataFrame:
    """Join each event to its forward outcome.

    Daily task: the close-to-close return posted on the first trading date
    strictly after the effective day, so weekend and holiday news roll to
    the next session. Capex task: the realization ``horizon`` quarters after
    the event quarter, matched exactly. Events without an outcome get NaN,
    or raise ``ObservationDroppedError`` when ``strict``.
    """
    ev = events.copy()
    ev["entity_id"] = ev["entity_id"].astype(str)
    if task == "headline":
        ev["_eff"] = pd.to_datetime(ev["effective_day"])
        out = outcomes.copy()
        out["entity_id"] = out["entity_id"].astype(str)
        out["_date"] = pd.to_datetime(out["date"])
        out = out.sort_values("_date", kind="mergesort")
        ev["_orig"] = np.arange(len(ev))
        ev = ev.sort_values("_eff", kind="mergesort")
        merged = pd.merge_asof(
            ev,
            out[["entity_id", "_date", "return_pct"]],
            left_on="_eff",
            right_on="_date",
            by="entity_id",
            direction="forward",
            allow_exact_matches=False,
        )
        merged = merged.sort_values("_orig", kind="mergesort")
        merged["outcome"] = merged["return_pct"].astype(float)
        result = merged.drop(columns=["_eff", "_orig", "_date", "return_pct"])
        result.index = events.index
    elif task == "capex":
        lookup: dict[tuple[str, str], float] = {}
        for row in outcomes.itertuples(index=False):
            quarter = str(pd.Period(str(row.quarter), freq="Q"))
            lookup[(str(row.entity_id), quarter)] = float(row.capex_pct)
        values = []
        for row in ev.itertuples(index=False):
            target = pd.Period(str(row.quarter), freq="Q") + horizon
            values.append(lookup.get((str(row.entity_id), str(target)), np.nan))
        result = ev
        result["outcome"] = values
    else:
        raise ValueError(f"unknown task: {task!r}")
    if strict and result["outcome"].isna().any():
        bad = result.loc[result["outcome"].isna()].iloc[0]
        raise ObservationDroppedError(
            "no outcome available",
            reason=DROP_MISSING_OUTCOME,
            entity_id=bad["entity_id"],
        )
    return result


def mark_small(panel: PanelDataset, marketcap: pd.DataFrame) -> PanelDataset:
    """Flag observations in the bottom size quintile of the prior day.

    The reference cross-section for day t is the most recent market-cap date
    strictly before t. A firm is small when its cap is strictly below the
    20th percentile of that cross-section; firms without a cap on the
    reference date keep ``small`` missing and fall out of size regressions.
    """
    caps = marketcap.copy()
    caps["entity_id"] = caps["entity_id"].astype(str)
    caps["_date"] = pd.to_datetime(caps["date"])
    cap_days = np.sort(caps["_date"].unique())

    frame = panel.frame.copy()
    days = pd.to_datetime(frame["time_id"]).to_numpy()
    entities = frame["entity_id"].astype(str).to_numpy()
    small = np.full(len(frame), np.nan)
    for day in np.unique(days):
        pos = np.searchsorted(cap_days, day)
        if pos == 0:
            continue
        ref = cap_days[pos - 1]
        cross = caps.loc[caps["_date"] == ref]
        boundary = np.percentile(cross["mktcap"].to_numpy(dtype=float), SMALL_PERCENTILE)
        lookup = dict(zip(cross["entity_id"], cross["mktcap"].astype(float)))
        mask = days == day
        for i in np.flatnonzero(mask):
            cap = lookup.get(entities[i])
            if cap is not None:
                small[i] = 1.0 if cap < boundary else 0.0
    frame["small"] = small
    return panel.with_frame(frame)


def standardize(panel: PanelDataset, columns) -> PanelDataset:
    """Rescale the named columns to mean zero and unit sample (n-1) sd."""
    frame = panel.frame.copy()
    for name in sorted(columns):
        if name not in frame.columns:
            raise KeyError(name)
        x = frame[name].to_numpy(dtype=float)
        sd = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
        if not np.isfinite(sd) or sd == 0.0:
            raise DegenerateColumnError(
                f"column {name!r} has no variation", column=name
            )
        frame[name] = (x - x.mean()) / sd
    return panel.with_frame(frame, standardized=True)


def split_periods(panel: PanelDataset, in_end: str, oos_start: str) -> tuple[PanelDataset, PanelDataset]:
    """Cut the panel into in-sample (t <= in_end) and out-of-sample (t >= oos_start).

    Observations between the boundaries belong to neither piece. Both daily
    ISO dates and quarter labels sort lexicographically, so the comparison
    works for either task.
    """
    in_end = str(in_end)
    oos_start = str(oos_start)
    if in_end >= oos_start:
        raise InvalidSplitError(
            "in-sample end must precede out-of-sample start",
            in_end=in_end,
            oos_start=oos_start,
        )
    time_id = panel.frame["time_id"].astype(str)
    in_frame = panel.frame.loc[time_id <= in_end].reset_index(drop=True)
    oos_frame = panel.frame.loc[time_id >= oos_start].reset_index(drop=True)
    return (
        PanelDataset(in_frame, period_label="in_sample", standardized=panel.standardized),
        PanelDataset(oos_frame, period_label="out_of_sample", standardized=panel.standardized),
    )


def build_panel(
    events: pd.DataFrame,
    lap_scores: pd.DataFrame,
    verdicts: pd.DataFrame,
    outcomes: pd.DataFrame,
    marketcap: pd.DataFrame | None = None,
    *,
    task: str = "headline",
    horizon: int = 2,
    cutoff: dt.time = EVENT_CUTOFF,
    first_token_probs: Mapping[str, float] | None = None,
) -> tuple[PanelDataset, pd.DataFrame]:
    """Assemble the regression panel and a drop log that accounts for every event.

    Each input event either becomes exactly one panel row or one drop-log row
    with the first failing reason in this order: ambiguous timestamp, missing
    verdict, unparseable response, missing LAP score, missing outcome.
    """
    if task not in ("headline", "capex"):
        raise ValueError(f"unknown task: {task!r}")
    time_column = "timestamp" if task == "headline" else "quarter"
    required = {"prompt_id", "entity_id", time_column}
    missing = required - set(events.columns)
    if missing:
        raise ValueError(f"events table lacks columns: {sorted(missing)}")
    ids = events["prompt_id"].astype(str)
    dupes = ids[ids.duplicated()]
    if not dupes.empty:
        raise DuplicateIdError(
            f"duplicate prompt id {dupes.iloc[0]!r} in events",
            prompt_id=dupes.iloc[0],
        )

    verdict_by_id: dict[str, dict] = {}
    for row in verdicts.itertuples(index=False):
        entry = row._asdict()
        verdict_by_id[str(entry["prompt_id"])] = entry
    lap_by_id: dict[str, float] = {}
    for row in lap_scores.itertuples(index=False):
        entry = row._asdict()
        value = float(entry["lap_raw"])
        if not (0.0 < value <= 1.0):
            raise ValueError(
                f"lap for prompt {entry['prompt_id']!r} outside (0, 1]: {value}"
            )
        lap_by_id[str(entry["prompt_id"])] = value

    drops: list[tuple[str, str]] = []
    kept: list[dict] = []
    for row in events.itertuples(index=False):
        entry = row._asdict()
        prompt_id = str(entry["prompt_id"])
        if task == "headline":
            try:
                effective = assign_event_day(entry["timestamp"], cutoff=cutoff)
            except AmbiguousTimestampError:
                drops.append((prompt_id, DROP_AMBIGUOUS))
                continue
            time_id = effective.isoformat()
        else:
            time_id = str(pd.Period(str(entry["quarter"]), freq="Q"))
        verdict = verdict_by_id.get(prompt_id)
        if verdict is None:
            drops.append((prompt_id, DROP_MISSING_VERDICT))
            continue
        score = verdict.get("score")
        if score is None or (isinstance(score, float) and np.isnan(score)) or score == "":
            drops.append((prompt_id, DROP_UNPARSEABLE))
            continue
        lap = lap_by_id.get(prompt_id)
        if lap is None:
            drops.append((prompt_id, DROP_MISSING_LAP))
            continue
        confidence = verdict.get("confidence")
        if confidence in (None, ""):
            confidence = np.nan
        first_token = np.nan
        if first_token_probs is not None:
            first_token = first_token_probs.get(prompt_id, np.nan)
        record = {
            "prompt_id": prompt_id,
            "entity_id": str(entry["entity_id"]),
            "time_id": time_id,
            "llm": float(score),
            "lap": lap,
            "confidence": float(confidence),
            "first_token_prob": float(first_token),
        }
        record["effective_day" if task == "headline" else "quarter"] = time_id
        kept.append(record)

    if kept:
        joined = attach_outcome(
            pd.DataFrame(kept), outcomes, task=task, horizon=horizon
        )
    else:
        joined = pd.DataFrame(columns=["prompt_id", "outcome"])
    rows = []
    for entry in joined.to_dict("records"):
        if np.isnan(entry["outcome"]):
            drops.append((entry["prompt_id"], DROP_MISSING_OUTCOME))
            continue
        rows.append(
            {
                "prompt_id": entry["prompt_id"],
                "entity_id": entry["entity_id"],
                "time_id": entry["time_id"],
                "outcome": entry["outcome"],
                "llm": entry["llm"],
                "lap": entry["lap"],
                "confidence": entry["confidence"],
                "first_token_prob": entry["first_token_prob"],
                "small": np.nan,
                "cluster_id": entry["time_id"],
            }
        )
    frame = pd.DataFrame(rows, columns=list(PANEL_COLUMNS))
    drop_log = pd.DataFrame(drops, columns=["prompt_id", "reason"])
    if len(frame) + len(drop_log) != len(events):
        raise RuntimeError("panel accounting failed: rows + drops != events")
    panel = PanelDataset(frame)
    if marketcap is not None and task == "headline" and len(frame):
        panel = mark_small(panel, marketcap)
    return panel, drop_log


def write_panel_csv(panel: PanelDataset, path) -> None:
    frame = panel.frame.reindex(columns=list(PANEL_COLUMNS))
    frame.to_csv(path, index=False)


def write_drop_log_csv(drop_log: pd.DataFrame, path) -> None:
    drop_log.to_csv(path, index=False)


def read_panel_csv(path) -> PanelDataset:
    path = Path(path)
    frame = pd.read_csv(
        path,
        dtype={
            "prompt_id": str,
            "entity_id": str,
            "time_id": str,
            "cluster_id": str,
        },
    )
    return PanelDataset(frame)
