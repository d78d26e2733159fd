"""Inference-runtime client producing ScoredPrompt JSONL.

Renders the frozen forecasting prompts, submits them to an
OpenAI-compatible completion endpoint with echo enabled, and writes one
JSON line per prompt carrying the prompt-token log-probabilities and the
greedy completion. The JSONL is the only interface to downstream
analysis; its schema ships at schemas/scored_prompt.schema.json in the
repository root.
"""

__version__ = "0.1.0"

from .client import (  # noqa: F401
    CapabilityError,
    DecodingConfig,
    ScoreSummary,
    score_prompts,
)
from .templates import (  # noqa: F401
    DEFAULT_MAX_WORDS,
    PromptJob,
    TemplateError,
    read_jobs_csv,
    render_prompt,
    truncate_words,
)
