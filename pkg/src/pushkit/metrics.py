"""Goal-error metrics, success tiers, and the scalar pushing score.

Final pose errors are measured in the goal's own frame: the position error
vector is rotated into the goal frame before taking absolute components, and
the heading error is the wrapped angular difference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose2D, rotate, wrap_angle

SCORE_EPS = 1e-7
SCORE_WEIGHTS = (1.0, 3.0, 0.5)


@dataclass(frozen=True)
class FinalError:
    """Absolute final pose errors relative to a goal, in the goal frame."""

    ex: float
    ey: float
    etheta: float

    def __post_init__(self):
        if self.ex < 0 or self.ey < 0 or self.etheta < 0:
            raise ValueError("errors must be non-negative")


@dataclass(frozen=True)
class ThresholdTier:
    """One success tier: strict upper bounds on each error component."""

    name: str
    ex: float
    ey: float
    etheta: float


TIGHT = ThresholdTier("tight", 0.025, 0.010, 0.052)
MID = ThresholdTier("mid", 0.035, 0.015, 0.087)
LOOSE = ThresholdTier("loose", 0.050, 0.025, 0.17)
TIERS = (TIGHT, MID, LOOSE)


def final_error(final: Pose2D, goal: Pose2D) -> FinalError:
    d = rotate(final.xy - goal.xy, -goal.theta)
    return FinalError(abs(float(d[0])), abs(float(d[1])),
                      abs(float(wrap_angle(final.theta - goal.theta))))


def success(err: FinalError, tier: ThresholdTier) -> bool:
    """All three error components strictly below the tier bounds."""
    return err.ex < tier.ex and err.ey < tier.ey and err.etheta < tier.etheta


def score(err: FinalError) -> float:
    """Scalar pushing score: reciprocal of the weighted error sum.

    Weighted with (1, 3, 0.5) on (ex, ey, etheta) plus a small constant so a
    perfect episode scores 1e7 rather than diverging.
    """
    wx, wy, wt = SCORE_WEIGHTS
    return 1.0 / (wx * err.ex + wy * err.ey + wt * err.etheta + SCORE_EPS)
