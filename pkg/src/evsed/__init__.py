"""Evidential sound-event early detection.

Beta-evidence sequence model, vacuity-gated streaming decisions, backtrack
windows, early-detection metrics, and a deterministic synthetic corpus
generator, wired together by the ``evsed`` command line tool.
"""

from .sl import (
    DEFAULT_BASE_RATE,
    UNCERTAINTY_WEIGHT,
    BetaEvidence,
    BinomialOpinion,
    beta_log_pdf,
    expected_probability,
    opinion_from_evidence,
    vacuity,
)

__all__ = [
    "DEFAULT_BASE_RATE",
    "UNCERTAINTY_WEIGHT",
    "BetaEvidence",
    "BinomialOpinion",
    "beta_log_pdf",
    "expected_probability",
    "opinion_from_evidence",
    "vacuity",
]

__version__ = "0.1.0"
