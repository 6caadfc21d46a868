"""
Copyright (c) tsarmvs contributors.

This source code is licensed under the MIT license found in the
LICENSE file in the root directory of this source tree.
"""

import numpy as np
from skimage.transform import downscale_local_mean

from ..geom import CameraView


def crop_to_multiple(image: np.ndarray, factor: int) -> np.ndarray:
    """Crop the bottom rows and right columns to a multiple of factor."""
    height = image.shape[0] - image.shape[0] % factor
    width = image.shape[1] - image.shape[1] % factor

    return image[:height, :width]


def downsample_view(view: CameraView, factor: int) -> CameraView:
    """
    Block-average a view by an integer factor.

    Each output pixel is the mean of a ``factor x factor`` block; the
    intrinsics are rescaled so the output pixel center is the block center.

    Args:
        view: The view to downsample.
        factor: Integer downsampling factor.

    Returns:
        The downsampled view.
    """
    if factor == 1:
        return view
    image = downscale_local_mean(crop_to_multiple(view.image, factor), (factor, factor))
    color = None
    if view.color is not None:
        color = downscale_local_mean(
            crop_to_multiple(view.color, factor), (factor, factor, 1)
        )

    return CameraView(
        view.id, view.intrinsics.scaled(factor), view.pose, image, color
    )
