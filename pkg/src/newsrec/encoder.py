"""News title encoder: stacked dilated convolutions with attention fusion.

Each title becomes L per-level representations (one per conv layer, the
receptive field growing with dilation), fused per word by attention over
levels, then pooled into a single coarse vector by attention over words.
Padded positions get exactly zero word-attention weight; a title with no
real tokens encodes to an exactly-zero coarse vector and is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class EncoderParams:
    embedding: Tensor                 # (V, D)
    conv_kernels: list                # layer l: (width, d_in, f) with d_in=D then f
    conv_biases: list                 # (f,)
    level_query: Tensor               # (f,)
    word_query: Tensor                # (f,)

    def named(self, prefix="encoder"):
        out = {f"{prefix}.embedding": self.embedding}
        for i, (k, b) in enumerate(zip(self.conv_kernels, self.conv_biases)):
            out[f"{prefix}.conv{i}.kernel"] = k
            out[f"{prefix}.conv{i}.bias"] = b
        out[f"{prefix}.level_query"] = self.level_query
        out[f"{prefix}.word_query"] = self.word_query
        return out


@dataclass
class EncodedNews:
    fine: Tensor                      # (L, N, f) per-level word representations
    coarse: Tensor                    # (f,) attention-pooled vector
    token_mask: np.ndarray            # (N,) bool
    all_padding: bool = False


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_encoder_params(config, rng, embedding_init=None):
    """Fan-in uniform kernels and queries, U(-0.1, 0.1) embeddings (or a
    pretrained matrix), zero biases."""
    if embedding_init is not None:
        if embedding_init.shape != (config.vocab_size, config.embed_dim):
            raise ad.DimensionError("embedding init has the wrong shape")
        emb = Tensor(embedding_init, requires_grad=True)
    else:
        emb = Tensor(
            rng.uniform(-0.1, 0.1, size=(config.vocab_size, config.embed_dim)),
            requires_grad=True,
        )
    kernels, biases = [], []
    d_in = config.embed_dim
    for _ in range(config.n_levels):
        kernels.append(
            _uniform(rng, (config.kernel_size, d_in, config.n_filters),
                     config.kernel_size * d_in)
        )
        biases.append(Tensor(np.zeros(config.n_filters), requires_grad=True))
        d_in = config.n_filters
    return EncoderParams(
        embedding=emb,
        conv_kernels=kernels,
        conv_biases=biases,
        level_query=_uniform(rng, (config.n_filters,), config.n_filters),
        word_query=_uniform(rng, (config.n_filters,), config.n_filters),
    )


def encode_batch(token_ids, token_masks, params, config, training=False, rng=None):
    """Encode B titles at once.

    token_ids: (B, N) int array, token_masks: (B, N) bool.
    Returns (fine, coarse): Tensors of shape (B, L, N, f) and (B, f).
    Rows whose mask is all False come out with an exactly-zero coarse
    vector (their fine rows still carry conv outputs of pad embeddings,
    callers exclude such slots from selection).
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    masks = np.asarray(token_masks, dtype=bool)
    b, n = ids.shape
    f = config.n_filters

    x = ad.take(params.embedding, ids.reshape(-1))
    x = ad.reshape(x, (b, n, config.embed_dim))
    if training and config.dropout > 0.0:
        x = ad.dropout(x, config.dropout, rng)

    levels = []
    for kernel, bias, dilation in zip(
        params.conv_kernels, params.conv_biases, config.dilations
    ):
        x = ad.conv1d_dilated(x, kernel, bias=bias, dilation=dilation)
        levels.append(x)
    fine = ad.stack(levels, axis=1)                               # (B, L, N, f)

    l = config.n_levels
    level_logits = ad.reshape(
        ad.matmul(ad.reshape(fine, (b * l * n, f)), params.level_query), (b, l, n)
    )
    level_att = ad.softmax(level_logits, axis=1)                  # over levels
    fused = ad.sum_(ad.mul(ad.reshape(level_att, (b, l, n, 1)), fine), axis=1)

    word_logits = ad.reshape(
        ad.matmul(ad.reshape(fused, (b * n, f)), params.word_query), (b, n)
    )
    word_att = ad.softmax(word_logits, mask=masks, axis=1, allow_empty=True)
    coarse = ad.sum_(ad.mul(ad.reshape(word_att, (b, n, 1)), fused), axis=1)
    return fine, coarse


def encode_title(token_ids, token_mask, params, config, training=False, rng=None):
    """Encode a single title into an EncodedNews."""
    mask = np.asarray(token_mask, dtype=bool)
    fine, coarse = encode_batch(
        np.asarray(token_ids)[None, :], mask[None, :], params, config,
        training=training, rng=rng,
    )
    return EncodedNews(
        fine=ad.index0(fine, 0),
        coarse=ad.index0(coarse, 0),
        token_mask=mask,
        all_padding=not mask.any(),
    )


def load_embeddings(path, vocab, dim, init):
    """Overlay pretrained vectors ("token v1 .. vD" lines) onto an init
    matrix for tokens present in the vocabulary; returns (matrix, n_hit)."""
    matrix = np.array(init, dtype=np.float64)
    if matrix.shape[1] != dim:
        raise ad.DimensionError("embedding init width does not match dim")
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                continue
            token = parts[0]
            if token in vocab:
                matrix[vocab.id(token)] = [float(v) for v in parts[1:]]
                hits += 1
    return matrix, hits
