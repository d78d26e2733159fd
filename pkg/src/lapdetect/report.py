"""Plain-text regression tables in the journal style.

One column per fit: coefficient rows carry significance stars, the
parenthesized t-statistic sits underneath, and the footer block reports
fixed-effect usage, R-squared, and the observation count. Output is
deterministic so tables can serve as golden fixtures.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence

# one-sided normal critical values doubled: 10%, 5%, 1% two-sided
STAR_THRESHOLDS = ((2.5758, "***"), (1.9600, "**"), (1.6449, "*"))

_GAP = "  "


def stars(t_stat: float) -> str:
    """Significance stars from a t-statistic: * / ** / *** at 10/5/1%."""
    magnitude = abs(t_stat)
    for threshold, mark in STAR_THRESHOLDS:
        if magnitude >= threshold:
            return mark
    return ""


def _as_doc(fit) -> dict:
    if isinstance(fit, Mapping):
        return dict(fit)
    return fit.to_json()


def _term_order(docs: Sequence[dict]) -> list[str]:
    seen: list[str] = []
    for doc in docs:
        for name in doc["terms"]:
            if name not in seen:
                seen.append(name)
    return seen


def render_table(
    fits: Sequence,
    column_labels: Sequence[str] | None = None,
    term_labels: Mapping[str, str] | None = None,
    title: str | None = None,
) -> str:
    """Align one or more fits into a text table.

    ``fits`` may be FitResult objects or their to_json dicts. Terms keep
    their first-appearance order across columns; a term absent from a fit
    leaves that cell blank. ``term_labels`` remaps row names for display.
    """
    docs = [_as_doc(f) for f in fits]
    if not docs:
        raise ValueError("need at least one fit to render")
    labels = term_labels or {}
    ncols = len(docs)
    headers = list(column_labels) if column_labels else [
        f"({i + 1})" for i in range(ncols)
    ]
    if len(headers) != ncols:
        raise ValueError("one column label per fit")

    terms = _term_order(docs)
    body_rows: list[tuple[str, list[str]]] = []
    for name in terms:
        coef_cells = []
        t_cells = []
        for doc in docs:
            if name in doc["coefficients"]:
                t_val = doc["t_stats"][name]
                coef_cells.append(f"{doc['coefficients'][name]:.4g}{stars(t_val)}")
                t_cells.append(f"({t_val:.2f})")
            else:
                coef_cells.append("")
                t_cells.append("")
        body_rows.append((labels.get(name, name), coef_cells))
        body_rows.append(("", t_cells))

    footer_rows: list[tuple[str, list[str]]] = []
    for dim, label in (("entity", "Entity FE"), ("time", "Time FE")):
        cells = [
            "Yes" if dim in doc.get("spec", {}).get("fe", ()) else "No"
            for doc in docs
        ]
        footer_rows.append((label, cells))
    footer_rows.append(("R2", [f"{doc['r2_overall']:.3f}" for doc in docs]))
    footer_rows.append(("N", [f"{doc['n_obs']:,}" for doc in docs]))

    outcome_row = [doc.get("spec", {}).get("outcome", "") for doc in docs]
    label_width = max(
        [len(r[0]) for r in body_rows + footer_rows] + [len(title or "")]
    )
    col_widths = []
    for j in range(ncols):
        cells = [headers[j], outcome_row[j]]
        cells += [r[1][j] for r in body_rows + footer_rows]
        col_widths.append(max(len(c) for c in cells))

    def line(label: str, cells: Sequence[str]) -> str:
        out = label.ljust(label_width)
        for j, cell in enumerate(cells):
            out += _GAP + cell.rjust(col_widths[j])
        return out.rstrip()

    total = label_width + sum(col_widths) + len(_GAP) * ncols
    rule_heavy = "=" * total
    rule_light = "-" * total

    lines = []
    if title:
        lines.append(title)
    lines.append(rule_heavy)
    lines.append(line("", headers))
    if any(outcome_row):
        lines.append(line("", outcome_row))
    lines.append(rule_light)
    for label, cells in body_rows:
        lines.append(line(label, cells))
    lines.append(rule_light)
    for label, cells in footer_rows:
        lines.append(line(label, cells))
    lines.append(rule_heavy)
    return "\n".join(lines) + "\n"


def render_detection(doc: Mapping) -> str:
    """Table for a detection report JSON: baseline and full fits side by
    side, followed by the verdict and magnitude lines."""
    table = render_table(
        [doc["baseline_fit"], doc["fit"]],
        column_labels=["(1)", "(2)"],
    )
    summary = [
        f"verdict: {doc['verdict']} (one-sided level {doc['level']:g})",
        f"interaction: {doc['beta3']:.4g} (t = {doc['beta3_t']:.2f})",
        f"effect per 1-SD prediction at mean LAP: {doc['effect_at_mean_lap']:.4g}",
        f"amplification per 1-SD LAP: {doc['amplification_1sd']:.4g}"
        f" ({doc['amplification_ratio']:.1%} of the standalone effect)",
    ]
    return table + "\n" + "\n".join(summary) + "\n"
