"""TSV dataset IO, vocabulary, negative sampling, and a synthetic
dataset generator with planted informative history items.

File formats follow the MIND layout:

news.tsv       news_id, category, subcategory, title, abstract, url,
               title_entities, abstract_entities (tab separated)
behaviors.tsv  impression_id, user_id, time, space-separated history
               (oldest first), space-separated candidates as
               "news_id-label" (bare news_id in test mode)

Histories are reversed on load so index 0 is the most recent click.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class DataError(ValueError):
    """Malformed dataset content that cannot be skipped."""


class ConfigError(ValueError):
    """Infeasible generator or loader configuration."""


def tokenize(text):
    """Lowercase and split on non-alphanumeric runs; drops empties."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


class Vocabulary:
    """Token ids with 0 reserved for padding and 1 for unknowns.

    Built from a token iterable; ids 2.. are assigned by descending
    frequency with lexicographic tie-breaks, so the mapping is a pure
    function of the corpus.
    """

    def __init__(self, tokens=()):
        self._ids = {}
        self._tokens = []
        for t in tokens:
            self._add(t)

    def _add(self, token):
        if token in self._ids:
            raise DataError(f"duplicate vocabulary token {token!r}")
        self._ids[token] = len(self._tokens) + 2
        self._tokens.append(token)

    @classmethod
    def build(cls, token_lists, min_freq=1):
        counts = Counter()
        for toks in token_lists:
            counts.update(toks)
        kept = sorted(
            (t for t, c in counts.items() if c >= min_freq),
            key=lambda t: (-counts[t], t),
        )
        return cls(kept)

    def id(self, token):
        return self._ids.get(token, UNK_ID)

    def __contains__(self, token):
        return token in self._ids

    def __len__(self):
        return len(self._tokens) + 2

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self._tokens))

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text().splitlines()
        return cls(lines)


@dataclass
class NewsRecord:
    news_id: str
    title: str
    tokens: list = field(default_factory=list)       # token strings
    token_ids: np.ndarray | None = None              # (title_len,) after numericize
    token_mask: np.ndarray | None = None             # (title_len,) bool
    n_real: int = 0

    def __eq__(self, other):
        return (
            isinstance(other, NewsRecord)
            and self.news_id == other.news_id
            and self.title == other.title
            and self.tokens == other.tokens
        )


@dataclass
class Impression:
    impression_id: str
    user_id: str
    history: list                                    # news ids, most recent first
    candidates: list                                 # (news_id, label or None)


@dataclass
class TrainSample:
    impression_id: str
    history: list                                    # news ids, most recent first
    positive: str
    negatives: list


@dataclass
class ParseStats:
    rows: int = 0
    skipped: int = 0
    duplicates: int = 0


def parse_news_tsv(path, stats=None):
    """Parse news rows into {news_id: NewsRecord}.

    Malformed rows are skipped with a counted warning; a duplicated id
    keeps the later row (also counted).
    """
    stats = stats if stats is not None else ParseStats()
    records = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            stats.rows += 1
            cols = line.split("\t")
            if len(cols) != 8 or not cols[0]:
                stats.skipped += 1
                log.warning("%s:%d: malformed news row skipped", path, lineno)
                continue
            news_id, title = cols[0], cols[3]
            if news_id in records:
                stats.duplicates += 1
                log.warning("%s:%d: duplicate news id %s, later row wins", path, lineno, news_id)
            records[news_id] = NewsRecord(news_id=news_id, title=title, tokens=tokenize(title))
    return records


def numericize(records, vocab, title_len):
    """Pad or truncate each record's tokens to title_len ids in place."""
    for rec in records.values():
        ids = [vocab.id(t) for t in rec.tokens[:title_len]]
        rec.n_real = len(ids)
        pad = title_len - len(ids)
        rec.token_ids = np.asarray(ids + [PAD_ID] * pad, dtype=np.int64)
        rec.token_mask = np.asarray([True] * len(ids) + [False] * pad, dtype=bool)
    return records


def parse_behaviors_tsv(path, max_history, stats=None):
    """Parse impressions; history is reversed to most-recent-first and
    truncated to the max_history most recent clicks."""
    stats = stats if stats is not None else ParseStats()
    impressions = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            stats.rows += 1
            cols = line.split("\t")
            if len(cols) != 5 or not cols[0]:
                stats.skipped += 1
                log.warning("%s:%d: malformed behaviors row skipped", path, lineno)
                continue
            imp_id, user_id, _time, hist_col, cand_col = cols
            history = hist_col.split() if hist_col else []
            history.reverse()                        # file stores oldest first
            history = history[:max_history]
            candidates = []
            bad = False
            for tok in cand_col.split():
                nid, dash, label = tok.rpartition("-")
                if dash and label in ("0", "1"):
                    candidates.append((nid, int(label)))
                elif not dash:
                    candidates.append((tok, None))   # test mode, no labels
                else:
                    bad = True
                    break
            if bad or not candidates:
                stats.skipped += 1
                log.warning("%s:%d: malformed candidate column skipped", path, lineno)
                continue
            impressions.append(Impression(imp_id, user_id, history, candidates))
    return impressions


def negative_sample(impression, m, rng):
    """One TrainSample per clicked candidate, with m negatives drawn from
    the same impression's non-clicked candidates (without replacement
    when enough exist, with replacement otherwise). Impressions with no
    negatives yield nothing."""
    positives = [nid for nid, lab in impression.candidates if lab == 1]
    negatives = [nid for nid, lab in impression.candidates if lab == 0]
    if not negatives:
        return []
    samples = []
    for pos in positives:
        chosen = rng.choice(negatives, size=m, replace=len(negatives) < m)
        samples.append(
            TrainSample(
                impression_id=impression.impression_id,
                history=list(impression.history),
                positive=pos,
                negatives=[str(n) for n in chosen],
            )
        )
    return samples


def build_samples(impressions, m, seed):
    """Deterministic negative sampling over a whole split."""
    rng = np.random.default_rng(seed)
    out = []
    skipped = 0
    for imp in impressions:
        got = negative_sample(imp, m, rng)
        if not got and any(lab == 1 for _, lab in imp.candidates):
            skipped += 1
        out.extend(got)
    if skipped:
        log.warning("%d impressions had positives but no negatives", skipped)
    return out


def load_split(news_path, behaviors_path, title_len, max_history, vocab=None):
    """Load one split. When vocab is None it is built from this split's
    titles (train usage); pass the train vocabulary for eval splits."""
    news = parse_news_tsv(news_path)
    if vocab is None:
        vocab = Vocabulary.build(rec.tokens for rec in news.values())
    numericize(news, vocab, title_len)
    impressions = parse_behaviors_tsv(behaviors_path, max_history)
    return news, impressions, vocab


# ------------------------------------------------------------- synthetic


@dataclass
class SyntheticConfig:
    """Planted-interest generator settings.

    Every topic owns a disjoint token pool. A user has `topics_per_user`
    interests; each impression plants `round(history_len * (1 -
    distractor_ratio))` same-topic items in the history and fills the
    rest with news from unrelated topics. The clicked candidate shares
    at least `min_shared` tokens with the planted items; non-clicked
    candidates come from topics unused by the whole history, so they
    share no tokens with any history item.

    Candidates are written fresh for every impression. Histories reuse
    a fixed per-topic news pool, but no candidate title ever repeats
    across impressions, so a model cannot learn to recognize specific
    titles as clicked or skipped; ranking signal has to come from the
    match against the history.
    """

    n_topics: int = 40
    tokens_per_topic: int = 40
    n_users: int = 100
    topics_per_user: int = 3
    history_len: int = 25
    distractor_ratio: float = 0.8
    title_tokens: int = 10
    min_shared: int = 3
    n_train: int = 1000
    n_eval: int = 200
    train_negatives: int = 4
    eval_negatives: int = 9
    distractor_topics: int = 5
    negative_topics: int = 5
    news_per_topic: int = 30
    planted_at_front: bool = False
    min_planted_position: int = 0

    def __post_init__(self):
        if not 0.0 <= self.distractor_ratio < 1.0:
            raise ConfigError("distractor_ratio must be in [0, 1)")
        if self.topics_per_user + self.distractor_topics + self.negative_topics > self.n_topics:
            raise ConfigError("per-impression topic demand exceeds available topics")
        if self.title_tokens > self.tokens_per_topic:
            raise ConfigError("title_tokens exceeds the per-topic token pool")
        if self.min_shared > self.title_tokens:
            raise ConfigError("min_shared exceeds title_tokens")
        if self.planted_at_front and self.min_planted_position:
            raise ConfigError("planted_at_front conflicts with min_planted_position")
        planted = self.history_len - round(self.history_len * self.distractor_ratio)
        if planted < 1:
            raise ConfigError("history too short to plant any informative item")
        if self.min_planted_position and (
            self.history_len - self.min_planted_position < planted
        ):
            raise ConfigError("min_planted_position leaves no room for planted items")

    @property
    def n_planted(self):
        return self.history_len - round(self.history_len * self.distractor_ratio)


@dataclass
class SyntheticData:
    news: dict                                       # news_id -> NewsRecord
    train: list                                      # Impression
    eval: list                                       # Impression
    planted: dict                                    # impression_id -> list of history positions


def _topic_tokens(topic, n):
    return [f"tp{topic:03d}w{j:02d}" for j in range(n)]


def generate_synthetic(cfg, rng):
    """Build a planted-interest dataset; fully determined by cfg and rng."""
    pools = [_topic_tokens(t, cfg.tokens_per_topic) for t in range(cfg.n_topics)]
    news = {}
    counter = [0]

    def add_news(tokens):
        nid = f"S{counter[0]:06d}"
        counter[0] += 1
        rec = NewsRecord(news_id=nid, title=" ".join(tokens), tokens=list(tokens))
        news[nid] = rec
        return nid

    def sample_title(topic):
        picks = rng.choice(cfg.tokens_per_topic, size=cfg.title_tokens, replace=False)
        return [pools[topic][i] for i in picks]

    # a fixed per-topic pool of news for histories and distractors
    topic_news = [
        [add_news(sample_title(t)) for _ in range(cfg.news_per_topic)]
        for t in range(cfg.n_topics)
    ]
    user_topics = [
        rng.choice(cfg.n_topics, size=cfg.topics_per_user, replace=False)
        for _ in range(cfg.n_users)
    ]

    planted_map = {}

    def make_impression(split, number, n_negatives):
        imp_id = f"{split}{number:06d}"
        user = int(rng.integers(cfg.n_users))
        topic = int(rng.choice(user_topics[user]))
        others = [t for t in range(cfg.n_topics) if t not in user_topics[user]]
        others = list(rng.permutation(others))
        distractor_pool = others[:cfg.distractor_topics]
        negative_pool = others[cfg.distractor_topics:cfg.distractor_topics + cfg.negative_topics]

        n_planted = cfg.n_planted
        n_distract = cfg.history_len - n_planted
        planted_news = [
            topic_news[topic][int(i)]
            for i in rng.choice(cfg.news_per_topic, size=n_planted, replace=False)
        ]
        distract_news = [
            topic_news[int(rng.choice(distractor_pool))][int(rng.integers(cfg.news_per_topic))]
            for _ in range(n_distract)
        ]

        if cfg.planted_at_front:
            positions = list(range(n_planted))
        else:
            lo = cfg.min_planted_position
            positions = sorted(
                int(p) + lo
                for p in rng.choice(cfg.history_len - lo, size=n_planted, replace=False)
            )
        history = [None] * cfg.history_len
        for pos, nid in zip(positions, planted_news):
            history[pos] = nid
        it = iter(distract_news)
        history = [nid if nid is not None else next(it) for nid in history]

        # clicked candidate: min_shared tokens drawn from the planted
        # items' actual tokens, the rest from the same topic's pool
        planted_tokens = sorted({tok for nid in planted_news for tok in news[nid].tokens})
        shared = [
            planted_tokens[int(i)]
            for i in rng.choice(len(planted_tokens), size=cfg.min_shared, replace=False)
        ]
        rest_pool = [t for t in pools[topic] if t not in shared]
        picks = rng.choice(len(rest_pool), size=cfg.title_tokens - cfg.min_shared, replace=False)
        clicked_tokens = shared + [rest_pool[int(i)] for i in picks]
        clicked = add_news([clicked_tokens[int(i)] for i in rng.permutation(len(clicked_tokens))])

        # fresh items, not pool draws: a reused negative pool lets a model
        # score title novelty instead of the history match
        negatives = [
            add_news(sample_title(int(rng.choice(negative_pool))))
            for _ in range(n_negatives)
        ]
        cands = [(clicked, 1)] + [(n, 0) for n in negatives]
        cands = [cands[int(i)] for i in rng.permutation(len(cands))]
        planted_map[imp_id] = positions
        return Impression(imp_id, f"U{user:05d}", history, cands)

    train = [make_impression("T", i, cfg.train_negatives) for i in range(cfg.n_train)]
    eva = [make_impression("E", i, cfg.eval_negatives) for i in range(cfg.n_eval)]
    return SyntheticData(news=news, train=train, eval=eva, planted=planted_map)


def emit_news_tsv(news, path):
    with open(path, "w", encoding="utf-8") as f:
        for rec in news.values():
            f.write(
                "\t".join(
                    [rec.news_id, "synthetic", "synthetic", rec.title, "", "", "[]", "[]"]
                )
                + "\n"
            )


def emit_behaviors_tsv(impressions, path):
    with open(path, "w", encoding="utf-8") as f:
        for imp in impressions:
            history = " ".join(reversed(imp.history))    # back to oldest first
            cands = " ".join(f"{nid}-{lab}" for nid, lab in imp.candidates)
            f.write("\t".join([imp.impression_id, imp.user_id, "0", history, cands]) + "\n")


def emit_planted_tsv(planted, impressions, path):
    """Sidecar: impression_id TAB space-separated history positions of the
    planted items, positions counted most-recent-first as loaded."""
    with open(path, "w", encoding="utf-8") as f:
        for imp in impressions:
            pos = planted[imp.impression_id]
            f.write(f"{imp.impression_id}\t{' '.join(str(p) for p in pos)}\n")


def load_planted_tsv(path):
    planted = {}
    for line in Path(path).read_text().splitlines():
        imp_id, _, rest = line.partition("\t")
        planted[imp_id] = [int(x) for x in rest.split()]
    return planted


def emit_dataset(data, out_dir):
    """Write train/ and eval/ splits in the MIND layout plus planted
    sidecars; returns the two split directories."""
    out = Path(out_dir)
    dirs = []
    for split, imps in (("train", data.train), ("eval", data.eval)):
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        emit_news_tsv(data.news, d / "news.tsv")
        emit_behaviors_tsv(imps, d / "behaviors.tsv")
        emit_planted_tsv(data.planted, imps, d / "planted.tsv")
        dirs.append(d)
    return tuple(dirs)
