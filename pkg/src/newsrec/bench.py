"""Throughput benchmarking, flop accounting, and selection analysis.

The benchmark measures sustained candidate-scoring throughput off a
frozen model and a prebuilt news cache: a warmup window is discarded,
then iterations (about batch_predict candidate scorings each) are
counted for a fixed measurement window. The analysis helpers profile
the informativeness scores by history position and, on synthetic data
with planted interests, measure how often the selector picks the rows
that were planted.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import metrics as mt
from . import model as nm
from . import selector as slt
from .autodiff import Tensor
from .data import ConfigError


# ------------------------------------------------------------ evaluation


def evaluate_model(cache, impressions, params, config):
    """Rank every labeled impression and aggregate the metrics."""
    def pairs():
        for imp in impressions:
            labels = [lab for _, lab in imp.candidates]
            scores = nm.score_impression(
                cache, imp.history, [nid for nid, _ in imp.candidates],
                params, config)
            yield labels, scores
    return mt.evaluate(pairs())


# ------------------------------------------------------------ throughput


@dataclass
class BenchReport:
    mode: str
    n_select: int
    warmup_s: float
    measure_s: float
    threads: int
    iterations: int
    candidates: int
    elapsed_s: float
    iterations_per_s: float
    candidates_per_s: float

    def as_dict(self):
        return dataclasses.asdict(self)


def run_benchmark(cache, impressions, params, config,
                  warmup=5.0, duration=30.0, threads=1):
    """Sustained scoring throughput for a frozen model.

    History stacks are preassembled so the loop measures selection and
    interaction, the inference path proper. One iteration scores at
    least batch_predict candidates. Iterations inside the first
    `warmup` seconds are discarded, then whole iterations are timed for
    at least `duration` seconds. The default is single-threaded so the
    timing is honest; threads > 1 fans the impressions of each
    iteration over a pool and is reported as its own configuration."""
    if duration < warmup:
        raise ConfigError("measurement window shorter than the warmup")
    prepped = []
    for imp in impressions:
        rows = [cache.row[nid] for nid, _ in imp.candidates
                if nid in cache.row]
        if not rows:
            continue
        hf, hc, hp, va = nm.assemble_history(cache, imp.history, config)
        prepped.append((Tensor(hf), Tensor(hc), Tensor(hp), va, rows))
    if not prepped:
        raise ConfigError("no scorable impressions to benchmark")
    cycle = itertools.cycle(prepped)

    def score_one(item):
        hf, hc, hp, va, rows = item
        for r in rows:
            nm._score_from_stacks(
                hf, hc, hp, va, Tensor(cache.fine[r]),
                Tensor(cache.coarse[r]), Tensor(cache.proj[r]),
                params, config)
        return len(rows)

    def grab():
        batch = []
        scored = 0
        while scored < config.batch_predict:
            item = next(cycle)
            batch.append(item)
            scored += len(item[4])
        return batch, scored

    pool = None
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        pool = ThreadPoolExecutor(max_workers=threads)

    def iteration():
        batch, scored = grab()
        if pool is None:
            for item in batch:
                score_one(item)
        else:
            list(pool.map(score_one, batch))
        return scored

    try:
        start = time.perf_counter()
        while time.perf_counter() - start < warmup:
            iteration()
        iterations = 0
        candidates = 0
        begin = time.perf_counter()
        while time.perf_counter() - begin < duration:
            candidates += iteration()
            iterations += 1
        elapsed = time.perf_counter() - begin
    finally:
        if pool is not None:
            pool.shutdown()
    return BenchReport(mode=config.mode, n_select=config.n_select,
                       warmup_s=warmup, measure_s=duration,
                       threads=threads, iterations=iterations,
                       candidates=candidates, elapsed_s=elapsed,
                       iterations_per_s=iterations / elapsed,
                       candidates_per_s=candidates / elapsed)


def interaction_madds(config, k=None):
    """Multiply-adds to score one candidate's interaction stage: the
    similarity cube, then each convolution and pooling round. Matches
    the instrumented count of the actual ops exactly."""
    k = config.n_select if k is None else int(k)
    l, n, f = config.n_levels, config.title_len, config.n_filters
    total = l * k * n * n * f
    c_in, d, h, w = l, k, n, n
    for c_out in config.conv_channels:
        total += c_out * c_in * config.cube_kernel ** 3 * d * h * w
        c_in = c_out
        d = -(-d // config.pool_size)
        h = -(-h // config.pool_size)
        w = -(-w // config.pool_size)
        total += c_in * d * h * w * config.pool_size ** 3
    return total


def with_selection_size(params, config, k, rng=None):
    """The same frozen model under a different selection budget.

    Encoder, selector, 3D kernels, coarse head, and bias are shared;
    only the phi head is redrawn because phi's length depends on k.
    Returns (params, config) for the new budget."""
    cfg = dataclasses.replace(config, n_select=int(k))
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    f_phi = cfg.phi_size
    bound = 1.0 / np.sqrt(f_phi)
    swapped = nm.ModelParams(
        encoder=params.encoder, selector=params.selector,
        interactor=params.interactor,
        w_phi=Tensor(rng.uniform(-bound, bound, size=f_phi),
                     requires_grad=True),
        w_psi=params.w_psi, bias=params.bias)
    return swapped, cfg


# -------------------------------------------------------------- analysis


@dataclass
class PositionProfile:
    mean: np.ndarray                  # nan where a position was never valid
    std: np.ndarray
    count: np.ndarray


def informativeness_profile(cache, impressions, params, config):
    """Mean and spread of informativeness per history position, scored
    against each clicked candidate."""
    m = config.max_history
    sums = np.zeros(m)
    sqs = np.zeros(m)
    counts = np.zeros(m, dtype=np.int64)
    for imp in impressions:
        clicked = [nid for nid, lab in imp.candidates if lab == 1]
        if not clicked:
            continue
        _, _, hp, va = nm.assemble_history(cache, imp.history, config)
        if not va.any():
            continue
        hp_t = Tensor(hp)
        for nid in clicked:
            r = cache.row.get(nid)
            if r is None:
                continue
            s = slt.informativeness(hp_t, Tensor(cache.proj[r]), va).data
            sums[va] += s[va]
            sqs[va] += s[va] ** 2
            counts[va] += 1
    if not counts.any():
        raise ConfigError("no usable impressions for the profile")
    live = counts > 0
    mean = np.full(m, np.nan)
    std = np.full(m, np.nan)
    mean[live] = sums[live] / counts[live]
    std[live] = np.sqrt(np.maximum(
        sqs[live] / counts[live] - mean[live] ** 2, 0.0))
    return PositionProfile(mean=mean, std=std, count=counts)


def save_profile_csv(profile, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["position", "count", "mean", "std"])
        for i in range(len(profile.mean)):
            w.writerow([i, int(profile.count[i]),
                        f"{profile.mean[i]:.6f}", f"{profile.std[i]:.6f}"])


def plot_profile(profile, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pos = np.arange(len(profile.mean))
    live = profile.count > 0
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.errorbar(pos[live], profile.mean[live], yerr=profile.std[live],
                fmt="o-", capsize=3, markersize=4)
    ax.set_xlabel("history position (0 = most recent)")
    ax.set_ylabel("informativeness vs clicked candidate")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def selector_precision(cache, impressions, planted, params, config):
    """Mean fraction of selected history positions that were planted,
    over clicked candidates of annotated impressions."""
    total = 0.0
    n = 0
    for imp in impressions:
        want = planted.get(imp.impression_id)
        if not want:
            continue
        want = set(want)
        clicked = [nid for nid, lab in imp.candidates if lab == 1]
        if not clicked:
            continue
        hf, _, hp, va = nm.assemble_history(cache, imp.history, config)
        hf_t, hp_t = Tensor(hf), Tensor(hp)
        for nid in clicked:
            r = cache.row.get(nid)
            if r is None:
                continue
            if config.mode == "recent":
                chosen = slt.recent_select(hf_t, va, config.n_select)
            else:
                chosen = slt.select_history(
                    hf_t, hp_t, Tensor(cache.proj[r]), va,
                    config.n_select, config.threshold)
            picked = [int(i) for i in chosen.indices if i >= 0]
            if not picked:
                continue
            total += sum(1 for i in picked if i in want) / len(picked)
            n += 1
    if n == 0:
        raise ConfigError("no impressions with planted annotations")
    return total / n
