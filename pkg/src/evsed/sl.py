"""Subjective-logic algebra over Beta evidence.

A per-class prediction is a pair of pseudo-counts (alpha, beta) >= 1 for
positive and negative evidence. The mapping rule turns the pair into a
binomial opinion (belief, disbelief, vacuity, base rate); vacuity is the
uncertainty mass left by missing evidence and is what the streaming decision
rule gates on.

All values are immutable and every function is pure, so everything here is
safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .specfun import log_gamma

# Uncertainty evidence amount for the binary case. Fixed; making it
# configurable would let callers break the b + d + u = 1 identity.
UNCERTAINTY_WEIGHT = 2.0

# Neutral prior over event presence/absence, used wherever a base rate is
# not supplied explicitly.
DEFAULT_BASE_RATE = 0.5


@dataclass(frozen=True)
class BetaEvidence:
    """Positive/negative evidence pseudo-counts of a Beta distribution."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha >= 1.0 and self.beta >= 1.0):
            raise ValueError(
                f"evidence pseudo-counts must be >= 1, got alpha={self.alpha}, beta={self.beta}"
            )

    @property
    def total(self) -> float:
        return self.alpha + self.beta


@dataclass(frozen=True)
class BinomialOpinion:
    """Belief/disbelief/vacuity masses plus the prior base rate.

    The masses must sum to 1; carrying the base rate on the opinion keeps a
    single prior flowing through the pipeline instead of being re-supplied
    (possibly inconsistently) at each call site.
    """

    belief: float
    disbelief: float
    vacuity: float
    base_rate: float

    def __post_init__(self):
        for name in ("belief", "disbelief", "vacuity", "base_rate"):
            v = getattr(self, name)
            if not (-1e-12 <= v <= 1.0 + 1e-12):
                raise ValueError(f"opinion {name}={v} outside [0, 1]")
        if abs(self.belief + self.disbelief + self.vacuity - 1.0) > 1e-12:
            raise ValueError(
                f"opinion masses must sum to 1, got "
                f"{self.belief + self.disbelief + self.vacuity}"
            )
        if self.vacuity <= 0.0:
            raise ValueError("vacuity must be positive for finite evidence")


def opinion_from_evidence(ev: BetaEvidence, base_rate: float = DEFAULT_BASE_RATE) -> BinomialOpinion:
    """Map evidence to an opinion: b=(a-1)/(a+b), d=(b-1)/(a+b), u=W/(a+b)."""
    s = ev.total
    return BinomialOpinion(
        belief=(ev.alpha - 1.0) / s,
        disbelief=(ev.beta - 1.0) / s,
        vacuity=UNCERTAINTY_WEIGHT / s,
        base_rate=base_rate,
    )


def expected_probability(op: BinomialOpinion) -> float:
    """Project the opinion to a point probability: p = b + a * u."""
    return op.belief + op.base_rate * op.vacuity


def vacuity(ev: BetaEvidence) -> float:
    """Uncertainty mass u = W / (alpha + beta); decreases as evidence grows."""
    return UNCERTAINTY_WEIGHT / ev.total


def beta_log_pdf(p: float, ev: BetaEvidence) -> float:
    """Log density of Beta(alpha, beta) at p.

    Endpoints are handled by the limit: a zero exponent contributes nothing,
    a positive exponent sends the density to zero (-inf here).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")
    log_norm = log_gamma(ev.alpha) + log_gamma(ev.beta) - log_gamma(ev.total)
    term = 0.0
    for value, exponent in ((p, ev.alpha - 1.0), (1.0 - p, ev.beta - 1.0)):
        if exponent != 0.0:
            if value == 0.0:
                return -math.inf
            term += exponent * math.log(value)
    return term - log_norm
