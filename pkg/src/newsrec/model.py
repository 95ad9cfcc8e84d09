"""Click prediction: wiring, training loop, checkpoints, inference cache.

A candidate's score is w_phi . phi + w_psi . psi + b, where phi is the
fine-grained interaction feature between the selected history and the
candidate and psi holds the coarse per-item dot products. Training
minimizes sampled-softmax loss over one clicked candidate and its
in-impression negatives, one tape per sample, gradients accumulated
across a batch and applied with Adam.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import interactor as inter
from . import selector as sel
from .autodiff import Graph, Tensor, backward
from .data import PAD_ID, ConfigError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"NRC1"
CHECKPOINT_VERSION = 1

MODES = ("selective", "recent")


class CheckpointError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 300
    title_len: int = 20
    max_history: int = 50
    n_levels: int = 3
    dilations: tuple = (1, 2, 3)
    kernel_size: int = 3
    n_filters: int = 150
    n_select: int = 5
    threshold: float = 0.2
    sel_dim: int = 150
    mode: str = "selective"
    conv_channels: tuple = (32, 16)
    pool_size: int = 3
    cube_kernel: int = 3
    dropout: float = 0.2
    n_negatives: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    n_epochs: int = 5
    batch_train: int = 100
    batch_predict: int = 400
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dilations",
                           tuple(int(d) for d in self.dilations))
        object.__setattr__(self, "conv_channels",
                           tuple(int(c) for c in self.conv_channels))
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must cover padding and unknown ids")
        if len(self.dilations) != self.n_levels:
            raise ConfigError(
                f"{self.n_levels} levels need {self.n_levels} dilations, "
                f"got {self.dilations}")
        if any(d < 1 for d in self.dilations):
            raise ConfigError("dilations must be >= 1")
        if self.kernel_size % 2 != 1 or self.cube_kernel % 2 != 1:
            raise ConfigError("kernel sizes must be odd")
        for name in ("embed_dim", "title_len", "max_history", "n_filters",
                     "n_select", "sel_dim", "pool_size", "n_negatives",
                     "n_epochs", "batch_train", "batch_predict"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.conv_channels:
            raise ConfigError("conv_channels must name at least one stage")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def phi_size(self):
        return inter.phi_size(self)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def hash(self):
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


@dataclass
class ModelParams:
    encoder: enc.EncoderParams
    selector: sel.SelectorParams
    interactor: inter.InteractorParams
    w_phi: Tensor                     # (F_phi,)
    w_psi: Tensor                     # (max_history,)
    bias: Tensor                      # ()

    def named(self):
        out = {}
        out.update(self.encoder.named())
        out.update(self.selector.named())
        out.update(self.interactor.named())
        out["head.w_phi"] = self.w_phi
        out["head.w_psi"] = self.w_psi
        out["head.bias"] = self.bias
        return out

    def zero_grads(self):
        for t in self.named().values():
            t.grad = None


def init_params(config, rng=None, embedding_init=None):
    rng = np.random.default_rng(config.seed) if rng is None else rng
    f_phi = config.phi_size
    bp = 1.0 / np.sqrt(f_phi)
    bs = 1.0 / np.sqrt(config.max_history)
    return ModelParams(
        encoder=enc.init_encoder_params(config, rng, embedding_init),
        selector=sel.init_selector_params(config, rng),
        interactor=inter.init_interactor_params(config, rng),
        w_phi=Tensor(rng.uniform(-bp, bp, size=f_phi), requires_grad=True),
        w_psi=Tensor(rng.uniform(-bs, bs, size=config.max_history),
                     requires_grad=True),
        bias=Tensor(0.0, requires_grad=True),
    )


# ------------------------------------------------------------- assembly


def stack_titles(news_ids, news_by_id, config):
    """Token id and mask stacks for a list of news ids. Ids missing from
    the catalog (or with no real tokens) become all-padding rows."""
    n = len(news_ids)
    ids = np.full((n, config.title_len), PAD_ID, dtype=np.int64)
    masks = np.zeros((n, config.title_len), dtype=bool)
    for i, nid in enumerate(news_ids):
        rec = news_by_id.get(nid)
        if rec is not None and rec.n_real > 0:
            ids[i] = rec.token_ids
            masks[i] = rec.token_mask
    return ids, masks


def history_arrays(history, news_by_id, config):
    """Fixed (max_history, title_len) stacks plus per-slot validity."""
    hist = list(history[:config.max_history])
    ids = np.full((config.max_history, config.title_len), PAD_ID,
                  dtype=np.int64)
    masks = np.zeros((config.max_history, config.title_len), dtype=bool)
    if hist:
        sub_ids, sub_masks = stack_titles(hist, news_by_id, config)
        ids[:len(hist)] = sub_ids
        masks[:len(hist)] = sub_masks
    return ids, masks, masks.any(axis=1)


@dataclass
class PreparedSample:
    hist_ids: np.ndarray
    hist_masks: np.ndarray
    validity: np.ndarray
    cand_ids: np.ndarray              # row 0 is the clicked candidate
    cand_masks: np.ndarray


def prepare_sample(sample, news_by_id, config):
    hist_ids, hist_masks, validity = history_arrays(
        sample.history, news_by_id, config)
    cand_ids, cand_masks = stack_titles(
        [sample.positive] + list(sample.negatives), news_by_id, config)
    return PreparedSample(hist_ids, hist_masks, validity, cand_ids, cand_masks)


# -------------------------------------------------------------- scoring


def _score_from_stacks(hist_fine, hist_coarse, hist_proj, validity,
                       cand_fine, cand_coarse, cand_proj, params, config):
    """Score one candidate against an encoded history."""
    if config.mode == "recent":
        chosen = sel.recent_select(hist_fine, validity, config.n_select)
    else:
        chosen = sel.select_history(hist_fine, hist_proj, cand_proj, validity,
                                    config.n_select, config.threshold)
    phi = inter.interaction_features(chosen.fine, cand_fine,
                                     params.interactor, config)
    psi = inter.coarse_signals(hist_coarse, cand_coarse, validity)
    z = ad.add(ad.add(ad.matmul(params.w_phi, phi),
                      ad.matmul(params.w_psi, psi)), params.bias)
    return z, chosen


def nll_from_scores(zs):
    """-log softmax probability of zs[0] among all scores.

    The max is subtracted as a constant; that shifts nothing in the
    gradients and keeps exp well inside float64 range."""
    z = ad.stack(zs, axis=0)
    zmax = float(z.data.max())
    shifted = ad.add(z, Tensor(-zmax))
    lse = ad.add(ad.log(ad.sum_(ad.exp(shifted))), Tensor(zmax))
    return ad.add(lse, ad.neg(ad.index0(z, 0)))


def sample_loss(prep, params, config, rng=None, training=True):
    """Sampled-softmax loss of one prepared sample.

    History and candidate titles are encoded in a single batch; the
    per-candidate selection and interaction run off shared stacks."""
    m = prep.hist_ids.shape[0]
    all_ids = np.concatenate([prep.hist_ids, prep.cand_ids], axis=0)
    all_masks = np.concatenate([prep.hist_masks, prep.cand_masks], axis=0)
    fine_all, coarse_all = enc.encode_batch(
        all_ids, all_masks, params.encoder, config, training=training, rng=rng)
    proj_all = sel.project(coarse_all, params.selector)

    hist_idx = np.arange(m)
    hist_fine = ad.take(fine_all, hist_idx)
    hist_coarse = ad.take(coarse_all, hist_idx)
    hist_proj = ad.take(proj_all, hist_idx)

    zs = []
    for j in range(prep.cand_ids.shape[0]):
        z, _ = _score_from_stacks(
            hist_fine, hist_coarse, hist_proj, prep.validity,
            ad.index0(fine_all, m + j), ad.index0(coarse_all, m + j),
            ad.index0(proj_all, m + j), params, config)
        zs.append(z)
    return nll_from_scores(zs)


# ------------------------------------------------------------- training


class Adam:
    """Adam with bias correction, state keyed by parameter name.

    step() consumes whatever gradients have accumulated on the params
    (scaled by `scale`) and clears them."""

    def __init__(self, params, config):
        self.config = config
        self.named = params.named()
        self.m = {k: np.zeros_like(t.data) for k, t in self.named.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.named.items()}
        self.t = 0

    def step(self, scale=1.0):
        cfg = self.config
        self.t += 1
        b1c = 1.0 - cfg.beta1 ** self.t
        b2c = 1.0 - cfg.beta2 ** self.t
        for k, p in self.named.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if scale != 1.0:
                g = g * scale
            m, v = self.m[k], self.v[k]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            p.data -= cfg.lr * (m / b1c) / (np.sqrt(v / b2c) + cfg.adam_eps)
            p.grad = None


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    n_samples: int = 0


def train(news_by_id, samples, config, params=None, rng=None, log_every=0):
    """Train on prepared samples; returns (params, report).

    Everything stochastic (init, shuffling, dropout) draws from one
    generator seeded by config.seed, so a rerun with the same inputs
    reproduces the parameters bit for bit."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if params is None:
        params = init_params(config, rng)
    opt = Adam(params, config)
    prepared = [prepare_sample(s, news_by_id, config) for s in samples]
    report = TrainReport(n_samples=len(prepared))
    if not prepared:
        raise ConfigError("no training samples")
    for epoch in range(config.n_epochs):
        order = rng.permutation(len(prepared))
        total = 0.0
        seen = 0
        for start in range(0, len(order), config.batch_train):
            batch = order[start:start + config.batch_train]
            for i in batch:
                with Graph():
                    loss = sample_loss(prepared[i], params, config, rng=rng)
                    backward(loss)
                total += float(loss.data)
            opt.step(scale=1.0 / len(batch))
            seen += len(batch)
            if log_every and (seen % log_every) < len(batch):
                log.info("epoch %d: %d/%d samples, running mean loss %.4f",
                         epoch + 1, seen, len(order), total / seen)
        report.epoch_losses.append(total / len(order))
        log.info("epoch %d done: mean loss %.4f",
                 epoch + 1, report.epoch_losses[-1])
    return params, report


# ----------------------------------------------------------- checkpoint


def save_checkpoint(path, config, params):
    """Binary snapshot: magic, version, config json with digest, then
    every named array as little-endian float64 in sorted name order."""
    named = params.named()
    cfg_bytes = config.to_json().encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(hashlib.sha256(cfg_bytes).digest())
        f.write(struct.pack("<I", len(named)))
        for name in sorted(named):
            data = named[name].data
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<q", d))
            f.write(data.astype("<f8").tobytes())


def _read(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError(f"checkpoint truncated reading {what}")
    return b


def load_checkpoint(path, expect_config=None):
    """Restore (config, params) from a snapshot.

    Refuses anything that does not match exactly: wrong magic or
    version, corrupted config, unknown or missing arrays, wrong shapes,
    truncation, trailing bytes. When expect_config is given, the stored
    configuration must equal it."""
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError("not a model checkpoint")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", _read(f, 4, "config length"))
        cfg_bytes = _read(f, clen, "config")
        if _read(f, 32, "config digest") != hashlib.sha256(cfg_bytes).digest():
            raise CheckpointError("config digest mismatch, file corrupted")
        config = ModelConfig.from_json(cfg_bytes.decode("utf-8"))
        if expect_config is not None and config != expect_config:
            raise CheckpointError(
                "checkpoint was written under a different configuration")
        params = init_params(config, np.random.default_rng(0))
        named = params.named()
        (count,) = struct.unpack("<I", _read(f, 4, "array count"))
        if count != len(named):
            raise CheckpointError(
                f"checkpoint holds {count} arrays, model has {len(named)}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read(f, 4, "name length"))
            name = _read(f, nlen, "name").decode("utf-8")
            if name not in named:
                raise CheckpointError(f"unknown parameter {name!r}")
            (ndim,) = struct.unpack("<I", _read(f, 4, "ndim"))
            shape = tuple(struct.unpack("<q", _read(f, 8, "dim"))[0]
                          for _ in range(ndim))
            t = named[name]
            if shape != t.data.shape:
                raise CheckpointError(
                    f"parameter {name!r} has shape {shape}, "
                    f"expected {t.data.shape}")
            n_items = int(np.prod(shape, dtype=np.int64))
            raw = _read(f, 8 * n_items, f"data for {name}")
            t.data = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(
                np.float64)
        if f.read(1):
            raise CheckpointError("trailing bytes after last array")
    return config, params


# ------------------------------------------------------------ inference


@dataclass
class NewsCache:
    """Frozen per-news encodings for the gradient-free scoring path."""
    fine: np.ndarray                  # (n, L, N, f)
    coarse: np.ndarray                # (n, f)
    proj: np.ndarray                  # (n, d_sel)
    valid: np.ndarray                 # (n,) bool
    row: dict                         # news_id -> index


def build_news_cache(news_by_id, params, config, batch=256):
    order = sorted(news_by_id)
    n = len(order)
    cache = NewsCache(
        fine=np.zeros((n, config.n_levels, config.title_len,
                       config.n_filters)),
        coarse=np.zeros((n, config.n_filters)),
        proj=np.zeros((n, config.sel_dim)),
        valid=np.zeros(n, dtype=bool),
        row={nid: i for i, nid in enumerate(order)},
    )
    for start in range(0, n, batch):
        chunk = order[start:start + batch]
        ids, masks = stack_titles(chunk, news_by_id, config)
        fine_b, coarse_b = enc.encode_batch(ids, masks, params.encoder, config)
        proj_b = sel.project(coarse_b, params.selector)
        stop = start + len(chunk)
        cache.fine[start:stop] = fine_b.data
        cache.coarse[start:stop] = coarse_b.data
        cache.proj[start:stop] = proj_b.data
        cache.valid[start:stop] = masks.any(axis=1)
    return cache


def assemble_history(cache, history, config):
    """Cache rows for one history, padded to max_history slots."""
    m = config.max_history
    hist_fine = np.zeros((m,) + cache.fine.shape[1:])
    hist_coarse = np.zeros((m, cache.coarse.shape[1]))
    hist_proj = np.zeros((m, cache.proj.shape[1]))
    validity = np.zeros(m, dtype=bool)
    for i, nid in enumerate(history[:m]):
        r = cache.row.get(nid)
        if r is None or not cache.valid[r]:
            continue
        hist_fine[i] = cache.fine[r]
        hist_coarse[i] = cache.coarse[r]
        hist_proj[i] = cache.proj[r]
        validity[i] = True
    return hist_fine, hist_coarse, hist_proj, validity


def score_impression(cache, history, cand_ids, params, config):
    """Scores for each candidate id; higher means more likely clicked."""
    hf, hc, hp, validity = assemble_history(cache, history, config)
    hf_t, hc_t, hp_t = Tensor(hf), Tensor(hc), Tensor(hp)
    out = np.empty(len(cand_ids))
    for j, nid in enumerate(cand_ids):
        r = cache.row.get(nid)
        if r is None:
            # nothing known about this id, only the bias speaks
            out[j] = float(params.bias.data)
            continue
        z, _ = _score_from_stacks(
            hf_t, hc_t, hp_t, validity,
            Tensor(cache.fine[r]), Tensor(cache.coarse[r]),
            Tensor(cache.proj[r]), params, config)
        out[j] = float(z.data)
    return out
