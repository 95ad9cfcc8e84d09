"""Fine-grained interaction: 3D feature extraction over word-pair scores.

The gated selection (K titles, L conv levels, N words each) meets the
candidate in one similarity cube of per-level scaled dot products
between every selected word and every candidate word. Two rounds of
convolution and pooling shrink the cube into the interaction feature
phi. The convolutions carry no biases on purpose: an all-zero cube, as
left by an empty or fully gated-out history, must map to phi exactly
zero so the click score falls back to the coarse channel alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class InteractorParams:
    kernels: list                     # stage i: (C_out, C_in, k, k, k)

    def named(self, prefix="interactor"):
        return {f"{prefix}.conv{i}.kernel": k
                for i, k in enumerate(self.kernels)}


def init_interactor_params(config, rng):
    kernels = []
    c_in = config.n_levels
    for c_out in config.conv_channels:
        fan_in = c_in * config.cube_kernel ** 3
        bound = 1.0 / np.sqrt(fan_in)
        shape = (c_out, c_in) + (config.cube_kernel,) * 3
        kernels.append(Tensor(rng.uniform(-bound, bound, size=shape),
                              requires_grad=True))
        c_in = c_out
    return InteractorParams(kernels=kernels)


def phi_shape(config, k=None):
    """Channel and spatial extents of the pooled interaction volume."""
    k = config.n_select if k is None else int(k)
    c, d, h, w = config.n_levels, k, config.title_len, config.title_len
    for c_out in config.conv_channels:
        c = c_out
        d = -(-d // config.pool_size)
        h = -(-h // config.pool_size)
        w = -(-w // config.pool_size)
    return c, d, h, w


def phi_size(config, k=None):
    c, d, h, w = phi_shape(config, k)
    return c * d * h * w


def interaction_features(sel_fine, cand_fine, params, config):
    """phi for one candidate: conv/pool the similarity cube and flatten.

    sel_fine: (K, L, N, f) gated history rows. cand_fine: (L, N, f).
    """
    x = ad.pair_scores(sel_fine, cand_fine)                  # (L, K, N, N)
    for kern in params.kernels:
        x = ad.conv3d(x, kern)
        x = ad.maxpool3d(x, config.pool_size)
    return ad.reshape(x, (int(np.prod(x.shape)),))


def coarse_signals(hist_coarse, cand_coarse, validity):
    """psi: dot product of every history coarse vector against the
    candidate's, with invalid slots pinned to exactly 0."""
    raw = ad.matmul(hist_coarse, cand_coarse)                # (M,)
    return ad.where_mask(raw, np.asarray(validity, dtype=bool), 0.0)
