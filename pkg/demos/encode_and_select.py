"""From titles to a gated history selection, step by step.

Builds a six-item reading history where two items share words with the
candidate, encodes everything with an untrained model, and walks
through informativeness scoring, hard top-K selection, and threshold
gating. Untrained coarse vectors all point into the positive orthant,
so every cosine sits high; what matters is the ordering, where word
overlap already wins, and the gate, which zeroes the hanger-on.
"""

import numpy as np

from newsrec import data as nd
from newsrec import model as nm
from newsrec import selector as sel
from newsrec.autodiff import Tensor

TITLES = {
    "H0": "stock markets rally on rate cut hopes",
    "H1": "local team wins the cup final",
    "H2": "new camera phone reviewed in depth",
    "H3": "rate cut sends stock markets higher",
    "H4": "rain expected across the coast",
    "H5": "markets close higher after rate decision",
    "CAND": "stock markets jump as rate cut lands",
}

news = {nid: nd.NewsRecord(news_id=nid, title=t, tokens=nd.tokenize(t))
        for nid, t in TITLES.items()}
vocab = nd.Vocabulary.build(rec.tokens for rec in news.values())

# the gate sits just under the overlap items' scores; training would
# normally spread the scores out and make this far less delicate
cfg = nm.ModelConfig(vocab_size=len(vocab), embed_dim=12, title_len=8,
                     max_history=6, n_levels=2, dilations=(1, 2),
                     n_filters=8, sel_dim=8, n_select=3, threshold=0.92,
                     conv_channels=(4,), dropout=0.0, seed=0)
nd.numericize(news, vocab, cfg.title_len)
params = nm.init_params(cfg, np.random.default_rng(0))

cache = nm.build_news_cache(news, params, cfg)
history = ["H0", "H1", "H2", "H3", "H4", "H5"]
hf, hc, hp, validity = nm.assemble_history(cache, history, cfg)

r = cache.row["CAND"]
scores = sel.informativeness(Tensor(hp), Tensor(cache.proj[r]), validity)
print("informativeness per history item (untrained; the two items "
      "sharing\nwords with the candidate already rank first):")
for nid, s in zip(history, scores.data):
    print(f"  {nid}: {s:+.3f}  {TITLES[nid]!r}")

chosen = sel.select_history(Tensor(hf), Tensor(hp),
                            Tensor(cache.proj[r]), validity,
                            cfg.n_select, cfg.threshold)
picked = [history[i] for i in chosen.indices if i >= 0]
print(f"\nhard top-{cfg.n_select}, recency order kept: {picked}")
print(f"gate weights at threshold {cfg.threshold}:",
      np.round(chosen.weights.data, 3))
gated_out = [nid for nid, w in zip(picked, chosen.weights.data)
             if w == 0.0]
print("selected but gated to zero:", gated_out or "nothing")
