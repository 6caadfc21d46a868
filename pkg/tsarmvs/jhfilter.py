"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Tuple
from warnings import warn

import numpy as np

from .pmstereo import HypothesisMap, PixelState

# fraction of discarded pixels above which the filter is considered misconfigured
ALL_DISCARDED_FRAC = 0.99


class AllDiscardedWarning(UserWarning):
    """Almost every pixel was discarded by the joint filter."""


@dataclass(frozen=True)
class FilterConfig:
    """
    Joint hypothesis filter parameters.

    Args:
        sigma_conf: Cost falloff of the confidence estimator.
        disc_window: Odd side length of the median window.
        disc_rel_threshold: Relative depth jump flagged as a discontinuity.
        score_threshold: Pixels whose aggregate score is below this are
            discarded.
        use_confidence: If False, confidence is 1 everywhere.
        use_discontinuity: If False, no discontinuities are flagged.
    """

    sigma_conf: float = 0.3
    disc_window: int = 5
    disc_rel_threshold: float = 0.05
    score_threshold: float = 0.5
    use_confidence: bool = True
    use_discontinuity: bool = True

    def __post_init__(self):
        if self.sigma_conf <= 0:
            raise ValueError("sigma_conf must be positive.")
        if self.disc_window < 3 or self.disc_window % 2 == 0:
            raise ValueError("disc_window must be odd and at least 3.")
        if not 0 < self.disc_rel_threshold < 1:
            raise ValueError("disc_rel_threshold must lie in (0, 1).")
        if not 0 < self.score_threshold < 1:
            raise ValueError("score_threshold must lie in (0, 1).")


class ScoreMap(NamedTuple):
    confidence: np.ndarray
    discontinuity: np.ndarray
    aggregate: np.ndarray


def confidence_estimate(hmap: HypothesisMap, cfg: FilterConfig) -> np.ndarray:
    """Gaussian confidence of the matching cost, 1 at zero cost."""
    if not cfg.use_confidence:
        return np.ones_like(hmap.cost)

    return np.exp(-(hmap.cost ** 2) / (2 * cfg.sigma_conf ** 2))


def window_median(values: np.ndarray, window: int) -> np.ndarray:
    """
    Median over a ``window x window`` neighbourhood, clipped at the border.
    """
    radius = window // 2
    padded = np.pad(values.astype(np.float64), radius, constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (window, window))

    return np.nanmedian(windows.reshape(values.shape + (-1,)), axis=-1)


def discontinuity_detect(hmap: HypothesisMap, cfg: FilterConfig) -> np.ndarray:
    """
    Flag pixels whose depth deviates from the local median by more than
    ``disc_rel_threshold`` relative to that median.

    Returns:
        A uint8 grid with 1 at discontinuities.
    """
    if not cfg.use_discontinuity:
        return np.zeros(hmap.depth.shape, dtype=np.uint8)
    median = window_median(hmap.depth, cfg.disc_window)
    rel = np.abs(hmap.depth - median) / median

    return (rel > cfg.disc_rel_threshold).astype(np.uint8)


def joint_filter(
    hmap: HypothesisMap, cfg: FilterConfig
) -> Tuple[HypothesisMap, ScoreMap]:
    """
    Discard pixels with a low aggregate of confidence and continuity.

    Discarded pixels keep their hypotheses so later stages can restore them.

    Args:
        hmap: PatchMatch output.
        cfg: Filter configuration.

    Returns:
        tuple containing:
            hmap: A new map with low-score pixels Discarded.
            scores: The confidence, discontinuity and aggregate grids.
    """
    confidence = confidence_estimate(hmap, cfg)
    discontinuity = discontinuity_detect(hmap, cfg)
    aggregate = confidence * (1 - discontinuity)

    out = hmap.copy()
    discard = aggregate < cfg.score_threshold
    out.state[discard] = PixelState.DISCARDED

    frac = discard.mean()
    logging.info(f"joint filter discarded {100 * frac:.1f}% of pixels")
    if frac > ALL_DISCARDED_FRAC:
        msg = f"Joint filter discarded {100 * frac:.1f}% of pixels; check FilterConfig."
        logging.warning(msg)
        warn(msg, AllDiscardedWarning)

    return out, ScoreMap(confidence, discontinuity, aggregate)
