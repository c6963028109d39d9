"""
Predictions of the blow-up and Fujita theorems for a single sweep point, and the
agreement between a prediction and a simulated outcome.
"""
import math
from enum import Enum
from typing import Optional

from pydantic import BaseModel

from fujita_lab.evolve import OutcomeKind
from fujita_lab.grid import RadialField
from fujita_lab.params import (
    Exponent,
    Parameters,
    Side,
    blowup_threshold,
    classify_p,
    fujita_exponent,
)


class Agreement(str, Enum):
    consistent = "consistent"
    inconsistent = "inconsistent"
    undecided = "undecided"


class Prediction(BaseModel):
    threshold: Optional[Exponent]
    side: Side
    expected: Optional[OutcomeKind]
    basis: str

    @property
    def threshold_value(self) -> Optional[float]:
        if self.threshold is None:
            return None
        return self.threshold.as_float()


def predict(params: Parameters, u0: RadialField, w: RadialField) -> Prediction:
    forced = bool((w.values != 0).any())
    if forced:
        threshold = blowup_threshold(params.N, params.alpha, params.m)
        if w.integral() <= 0:
            return Prediction(threshold=threshold, side=Side.undecided, expected=None, basis="int w <= 0")
        side = classify_p(params.p, threshold)
        expected = OutcomeKind.blew_up if side == Side.below else None
        return Prediction(threshold=threshold, side=side, expected=expected, basis="forced, int w > 0")

    threshold = Exponent.finite(fujita_exponent(params.N, params.alpha))
    nonnegative = bool((u0.values >= 0).all() and (u0.values > 0).any())
    # p = p_F still blows up for nonnegative nontrivial data
    below = params.p <= threshold.value
    side = classify_p(params.p, threshold) if not below else Side.below
    if below and nonnegative:
        return Prediction(threshold=threshold, side=side, expected=OutcomeKind.blew_up, basis="unforced, p <= p_F")
    return Prediction(threshold=threshold, side=side, expected=None, basis="unforced")


def agreement(prediction: Prediction, outcome: OutcomeKind) -> Agreement:
    value = prediction.threshold_value
    if value is None or not math.isfinite(value):
        return Agreement.undecided
    if prediction.expected is None or outcome == OutcomeKind.inconclusive:
        return Agreement.undecided
    if outcome == prediction.expected:
        return Agreement.consistent
    return Agreement.inconsistent
