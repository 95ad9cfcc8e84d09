"""How the selection budget drives inference cost.

Scoring a candidate means convolving a (levels, K, N, N) similarity
cube, so the interaction work grows linearly in the number of selected
history items K. This demo freezes one model, swaps the selection
budget, and compares measured throughput against the analytic
multiply-add count. Short timing windows keep it quick; expect noisy
but clearly ordered numbers.
"""

import numpy as np

from newsrec import bench as nb
from newsrec import data as nd
from newsrec import model as nm

scfg = nd.SyntheticConfig(history_len=30, distractor_ratio=0.8,
                          title_tokens=10, min_shared=3, n_train=1,
                          n_eval=8, eval_negatives=9)
data = nd.generate_synthetic(scfg, np.random.default_rng(3))
vocab = nd.Vocabulary.build(rec.tokens for rec in data.news.values())
nd.numericize(data.news, vocab, 16)

cfg = nm.ModelConfig(vocab_size=len(vocab), embed_dim=32, title_len=16,
                     max_history=30, n_filters=32, sel_dim=32,
                     n_select=5, dropout=0.0, batch_predict=100, seed=2)
params = nm.init_params(cfg, np.random.default_rng(2))
cache = nm.build_news_cache(data.news, params, cfg)
print(f"news cache: {len(cache.row)} items, frozen model\n")

print(f"{'K':>4} {'madds/cand':>12} {'cand/s':>10} {'iters/s':>9}")
for k in (2, 5, 15, 30):
    pk, ck = nb.with_selection_size(params, cfg, k)
    rep = nb.run_benchmark(cache, data.eval, pk, ck,
                           warmup=0.5, duration=2.0)
    print(f"{k:>4} {nb.interaction_madds(cfg, k):>12,} "
          f"{rep.candidates_per_s:>10.1f} {rep.iterations_per_s:>9.2f}")

ks = np.arange(1, 31, dtype=float)
madds = np.array([nb.interaction_madds(cfg, int(k)) for k in ks])
slope, intercept = np.polyfit(ks, madds.astype(float), 1)
print(f"\ninteraction madds ~= {slope:,.0f} * K + {intercept:,.0f} "
      "(ceil-division pooling makes the small steps)")
