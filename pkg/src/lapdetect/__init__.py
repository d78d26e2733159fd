"""Toolkit for detecting lookahead bias in LLM-generated forecasts.

Pipeline: score prompts under a causal LM elsewhere, then here compute
low-probability token statistics (``lap``), parse completions into
verdicts (``parsing``), join them with market outcomes into panels
(``panel``), and test whether forecast accuracy rises with the
statistic (``regression``, ``detection``). ``simulate`` provides a
synthetic contamination model with known ground truth, ``report``
renders fits as publication-style text tables, and ``cli`` wires it all
into the ``lapdetect`` command.
"""

__version__ = "0.1.0"

from .detection import (  # noqa: F401
    BootstrapResult,
    DetectionConfig,
    DetectionReport,
    HistogramData,
    histogram_export,
    pairs_bootstrap,
    run_detection,
    run_horserace,
    run_size_interaction,
    write_histogram_csv,
)
from .errors import (  # noqa: F401
    AmbiguousTimestampError,
    BootstrapInstabilityWarning,
    ClusterCountError,
    CollinearDesignError,
    ConvergenceFailureError,
    DegenerateColumnError,
    DegenerateFocalTermError,
    DuplicateIdError,
    EmptyPromptError,
    InputNotFoundError,
    InvalidSplitError,
    LapdetectError,
    MalformedScoreError,
    ObservationDroppedError,
    UnparseableResponseError,
)
from .lap import (  # noqa: F401
    LapScore,
    ScoredPrompt,
    TokenScore,
    batch_lap,
    compute_lap,
    read_scored_prompts,
    rescale_lap,
)
from .manifest import (  # noqa: F401
    RunManifest,
    build_manifest,
    verify_manifest,
    write_manifest,
)
from .panel import (  # noqa: F401
    PanelDataset,
    assign_event_day,
    build_panel,
    read_panel_csv,
    split_periods,
    standardize,
    write_panel_csv,
)
from .parsing import (  # noqa: F401
    CapexVerdict,
    HeadlineVerdict,
    parse_capex_response,
    parse_headline_response,
    write_verdict_csv,
)
from .regression import (  # noqa: F401
    FitResult,
    RegressionSpec,
    fit,
    within_transform,
)
from .report import render_detection, render_table  # noqa: F401
from .simulate import (  # noqa: F401
    DgpConfig,
    LProcess,
    SyntheticPanel,
    empirical_mse,
    generate,
    proof_residuals,
    write_truth_csv,
)
