"""Corpus ingestion: TSV parsing, tokenization, vocabulary, model inputs.

Handles the MIND-style file layout (news TSV + behaviors TSV, optional
body sidecar), pretrained embedding loading, and a synthetic dataset
generator that emits the exact same formats so tests and real runs share
every downstream code path.
"""

import importlib.resources
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusError, DegenerateInputError, ParseError

DEFAULT_TITLE_LENGTH = 30
DEFAULT_BODY_LENGTH = 70
DEFAULT_HISTORY_LIMIT = 50

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass
class NewsArticle:
    news_id: str
    category: str
    subcategory: str
    title: str
    abstract: str = ""
    body: str = ""


@dataclass
class ImpressionLog:
    impression_id: str
    user_id: str
    timestamp: str
    history: list  # news_id strings, oldest first
    candidates: list  # (news_id, label) with label in {0, 1}


class Vocabulary:
    """Token/index bijection with two reserved slots.

    Index 0 is padding, index 1 is the shared out-of-vocabulary token;
    real tokens start at index 2.
    """

    PAD_INDEX = 0
    OOV_INDEX = 1
    PAD_TOKEN = "<pad>"
    OOV_TOKEN = "<oov>"

    def __init__(self, tokens):
        self._tokens = [self.PAD_TOKEN, self.OOV_TOKEN]
        self._index = {self.PAD_TOKEN: 0, self.OOV_TOKEN: 1}
        for tok in tokens:
            if tok in self._index:
                raise CorpusError(f"duplicate vocabulary token: {tok!r}")
            self._index[tok] = len(self._tokens)
            self._tokens.append(tok)

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._index

    def index(self, token):
        """Index for a token; unknown tokens map to the OOV slot."""
        return self._index.get(token, self.OOV_INDEX)

    def token(self, idx):
        return self._tokens[idx]

    @property
    def tokens(self):
        """All tokens in index order, reserved slots included."""
        return list(self._tokens)

    def real_tokens(self):
        """Tokens excluding padding and OOV, in index order."""
        return self._tokens[2:]

    def to_lines(self):
        return "\n".join(self._tokens[2:]) + "\n"

    @classmethod
    def from_lines(cls, text):
        return cls([line for line in text.splitlines() if line])


@dataclass
class TokenSequence:
    """Fixed-length index vector plus a validity mask (true = real token)."""

    indices: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)

    @property
    def length(self):
        return int(self.mask.sum())


@dataclass
class EmbeddingMatrix:
    """|vocabulary| x dim float matrix; row 0 (padding) stays all-zero."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)

    @property
    def dim(self):
        return self.matrix.shape[1]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def parse_news_tsv(path, body_path=None):
    """Parse a MIND-layout news TSV into NewsArticle records.

    Columns: news_id, category, subcategory, title, abstract, url,
    title_entities, abstract_entities. Everything past the abstract is
    ignored; the abstract column itself may be absent or empty. An
    optional sidecar TSV of (news_id, body) rows supplies body text.
    """
    bodies = {}
    if body_path is not None:
        with open(body_path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ParseError("expected 2 columns in body sidecar",
                                     line=lineno, path=body_path)
                bodies[parts[0]] = parts[1]

    articles = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 4:
                raise ParseError(
                    f"expected at least 4 columns, got {len(parts)}",
                    line=lineno, path=path)
            news_id = parts[0]
            if not news_id:
                raise ParseError("empty news_id", line=lineno, path=path)
            if news_id in seen:
                raise CorpusError(f"duplicate news_id {news_id!r} at line {lineno}")
            seen.add(news_id)
            abstract = parts[4] if len(parts) > 4 else ""
            articles.append(NewsArticle(
                news_id=news_id, category=parts[1], subcategory=parts[2],
                title=parts[3], abstract=abstract,
                body=bodies.get(news_id, "")))
    return articles


def parse_behaviors_tsv(path):
    """Parse a MIND-layout behaviors TSV into ImpressionLog records.

    Columns: impression_id, user_id, time, space-separated history,
    space-separated "newsid-label" candidates with label in {0, 1}.
    """
    logs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ParseError(
                    f"expected 5 columns, got {len(parts)}",
                    line=lineno, path=path)
            imp_id, user_id, timestamp, history_field, cand_field = parts
            history = history_field.split() if history_field.strip() else []
            candidates = []
            for entry in cand_field.split():
                news_id, dash, label_text = entry.rpartition("-")
                if not dash or not news_id:
                    raise ParseError(
                        f"malformed candidate {entry!r}", line=lineno, path=path)
                if label_text not in ("0", "1"):
                    raise ParseError(
                        f"candidate label must be 0 or 1, got {entry!r}",
                        line=lineno, path=path)
                candidates.append((news_id, int(label_text)))
            logs.append(ImpressionLog(
                impression_id=imp_id, user_id=user_id, timestamp=timestamp,
                history=history, candidates=candidates))
    return logs


def write_news_tsv(articles, path):
    with open(path, "w", encoding="utf-8") as f:
        for art in articles:
            f.write("\t".join([art.news_id, art.category, art.subcategory,
                               art.title, art.abstract, "", "[]", "[]"]) + "\n")


def write_bodies_tsv(articles, path):
    with open(path, "w", encoding="utf-8") as f:
        for art in articles:
            if art.body:
                f.write(f"{art.news_id}\t{art.body}\n")


def write_behaviors_tsv(logs, path):
    with open(path, "w", encoding="utf-8") as f:
        for log in logs:
            history = " ".join(log.history)
            cands = " ".join(f"{nid}-{label}" for nid, label in log.candidates)
            f.write("\t".join([log.impression_id, log.user_id, log.timestamp,
                               history, cands]) + "\n")


# ---------------------------------------------------------------------------
# tokenization and assembly
# ---------------------------------------------------------------------------

def tokenize(text):
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [tok for tok in _TOKEN_SPLIT.split(text.lower()) if tok]


def article_text_fields(article):
    """(title, body-slot) text for an article.

    The abstract stands in for the body when no body text is available.
    """
    return article.title, article.body if article.body else article.abstract


def document_tokens(article):
    """All tokens of an article in reading order (title then body slot)."""
    title, body = article_text_fields(article)
    return tokenize(title) + tokenize(body)


def build_vocabulary(articles, min_count=1):
    """Vocabulary over all article tokens, ordered by (-count, token)."""
    counts = {}
    for art in articles:
        for tok in document_tokens(art):
            counts[tok] = counts.get(tok, 0) + 1
    kept = sorted((tok for tok, c in counts.items() if c >= min_count),
                  key=lambda tok: (-counts[tok], tok))
    return Vocabulary(kept)


def assemble_document(article, vocab, n_title=DEFAULT_TITLE_LENGTH,
                      n_body=DEFAULT_BODY_LENGTH):
    """Fixed-length token indices: truncated title, then truncated body.

    Output length is always n_title + n_body, padded with index 0; the
    mask marks a prefix of real tokens. Articles with no usable tokens
    cannot be encoded.
    """
    title, body = article_text_fields(article)
    tokens = tokenize(title)[:n_title] + tokenize(body)[:n_body]
    if not tokens:
        raise DegenerateInputError(
            f"article {article.news_id!r} has no encodable tokens")
    n_max = n_title + n_body
    indices = np.zeros(n_max, dtype=np.int64)
    mask = np.zeros(n_max, dtype=bool)
    for i, tok in enumerate(tokens):
        indices[i] = vocab.index(tok)
        mask[i] = True
    return TokenSequence(indices=indices, mask=mask)


def sample_history(history, limit=DEFAULT_HISTORY_LIMIT, rng_seed=0):
    """At most `limit` items, uniformly sampled, original order preserved."""
    if limit < 1:
        raise ValueError(f"history limit must be >= 1, got {limit}")
    if len(history) <= limit:
        return list(history)
    rng = np.random.default_rng(rng_seed)
    keep = np.sort(rng.choice(len(history), size=limit, replace=False))
    return [history[i] for i in keep]


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

def random_embeddings(vocab, dim, seed=0, scale=0.1):
    """N(0, scale^2) embedding matrix with a zeroed padding row."""
    rng = np.random.default_rng(seed)
    matrix = rng.normal(0.0, scale, size=(len(vocab), dim))
    matrix[Vocabulary.PAD_INDEX] = 0.0
    return EmbeddingMatrix(matrix=matrix)


def load_pretrained_embeddings(path, vocab, dim, seed=0):
    """Embedding matrix from a GloVe-format text file.

    Each line is a token followed by `dim` floats. Vocabulary tokens
    absent from the file fall back to seeded N(0, 0.1^2) rows; the
    padding row is zeroed.
    """
    emb = random_embeddings(vocab, dim, seed=seed)
    matrix = emb.matrix
    wanted = {tok: i for i, tok in enumerate(vocab.tokens)}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ParseError(
                    f"expected {dim} values for token {token!r}, got {len(values)}",
                    line=lineno, path=path)
            idx = wanted.get(token)
            if idx is not None and idx >= 2:
                matrix[idx] = np.array(values, dtype=np.float64)
    matrix[Vocabulary.PAD_INDEX] = 0.0
    return EmbeddingMatrix(matrix=matrix)


# ---------------------------------------------------------------------------
# document-frequency filtering for topic readout
# ---------------------------------------------------------------------------

def load_stopwords(path=None):
    """Bundled English stopword list, or a custom one-per-line file."""
    if path is None:
        ref = importlib.resources.files("topicrec").joinpath(
            "assets/stopwords_en.txt")
        text = ref.read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    return {line.strip() for line in text.splitlines() if line.strip()}


def document_frequencies(articles):
    """Map token -> number of articles containing it at least once."""
    df = {}
    for art in articles:
        for tok in set(document_tokens(art)):
            df[tok] = df.get(tok, 0) + 1
    return df


def preprocess_for_topics(corpus, vocab, min_df=10, max_df_frac=0.9,
                          stopwords=None):
    """Vocabulary indices eligible as topic descriptors.

    Drops stopwords, tokens in fewer than min_df documents, and tokens
    in more than max_df_frac of all documents. Returns a sorted index
    array (reserved indices never appear).
    """
    if not corpus:
        raise DegenerateInputError("cannot filter tokens over an empty corpus")
    if not 0 < max_df_frac <= 1:
        raise ValueError(f"max_df_frac must be in (0, 1], got {max_df_frac}")
    if min_df < 1:
        raise ValueError(f"min_df must be >= 1, got {min_df}")
    if stopwords is None:
        stopwords = load_stopwords()
    df = document_frequencies(corpus)
    max_df = max_df_frac * len(corpus)
    allowed = []
    for tok, count in df.items():
        if tok in stopwords or not min_df <= count <= max_df:
            continue
        idx = vocab.index(tok)
        if idx >= 2:
            allowed.append(idx)
    return np.array(sorted(allowed), dtype=np.int64)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    """Sizes and structure for the planted-topic test corpus.

    Articles draw their words from one planted keyword group plus two
    kinds of distractor: filler words common enough to exceed any
    max-document-frequency cut, and rare words below any min-document-
    frequency cut. Users each prefer one group and click accordingly.
    """

    n_topics: int = 2
    n_news: int = 200
    n_users: int = 50
    keywords_per_topic: int = 12
    title_tokens: int = 6
    body_tokens: int = 18
    filler_vocab: int = 5
    filler_per_article: int = 3
    rare_vocab: int = 120
    rare_per_article: int = 2
    history_per_user: int = 12
    train_impressions_per_user: int = 8
    val_impressions_per_user: int = 2
    test_impressions_per_user: int = 2
    negatives_per_impression: int = 4
    preference_strength: float = 0.9
    seed: int = 0


@dataclass
class SyntheticDataset:
    articles: list
    train_logs: list
    val_logs: list
    test_logs: list
    topic_keywords: list = field(default_factory=list)
    article_topics: dict = field(default_factory=dict)
    user_topics: dict = field(default_factory=dict)


def generate_synthetic_dataset(config):
    """Planted-topic corpus plus train/val/test impression logs.

    Deterministic for a given config. Every impression carries exactly
    one positive candidate; positives come from the user's preferred
    group with probability `preference_strength`.
    """
    if config.n_topics < 2:
        raise ValueError("need at least 2 planted topics")
    rng = np.random.default_rng(config.seed)

    topic_keywords = [
        [f"t{t}kw{j}" for j in range(config.keywords_per_topic)]
        for t in range(config.n_topics)]
    fillers = [f"filler{j}" for j in range(config.filler_vocab)]
    rares = [f"rare{j}" for j in range(config.rare_vocab)]

    articles = []
    article_topics = {}
    by_topic = [[] for _ in range(config.n_topics)]
    for i in range(config.n_news):
        topic = i % config.n_topics
        kws = topic_keywords[topic]
        title = rng.choice(kws, size=config.title_tokens, replace=True)
        body_parts = list(rng.choice(kws, size=config.body_tokens, replace=True))
        body_parts += list(rng.choice(fillers, size=config.filler_per_article,
                                      replace=False))
        body_parts += list(rng.choice(rares, size=config.rare_per_article,
                                      replace=False))
        rng.shuffle(body_parts)
        news_id = f"N{i + 1}"
        articles.append(NewsArticle(
            news_id=news_id, category=f"group{topic}", subcategory="synthetic",
            title=" ".join(title), abstract="", body=" ".join(body_parts)))
        article_topics[news_id] = topic
        by_topic[topic].append(news_id)

    user_topics = {}
    histories = {}
    for u in range(config.n_users):
        user_id = f"U{u + 1}"
        topic = u % config.n_topics
        user_topics[user_id] = topic
        pool = by_topic[topic]
        size = min(config.history_per_user, len(pool))
        picks = rng.choice(len(pool), size=size, replace=False)
        histories[user_id] = [pool[i] for i in np.sort(picks)]

    def make_logs(per_user, imp_counter):
        logs = []
        for u in range(config.n_users):
            user_id = f"U{u + 1}"
            preferred = user_topics[user_id]
            others = [t for t in range(config.n_topics) if t != preferred]
            for _ in range(per_user):
                if rng.random() < config.preference_strength:
                    pos_topic = preferred
                else:
                    pos_topic = others[rng.integers(len(others))]
                pos_pool = by_topic[pos_topic]
                positive = pos_pool[rng.integers(len(pos_pool))]
                negatives = []
                while len(negatives) < config.negatives_per_impression:
                    neg_topic = others[rng.integers(len(others))]
                    neg_pool = by_topic[neg_topic]
                    pick = neg_pool[rng.integers(len(neg_pool))]
                    if pick != positive:
                        negatives.append(pick)
                candidates = [(positive, 1)] + [(n, 0) for n in negatives]
                order = rng.permutation(len(candidates))
                candidates = [candidates[i] for i in order]
                imp_counter[0] += 1
                logs.append(ImpressionLog(
                    impression_id=str(imp_counter[0]), user_id=user_id,
                    timestamp="11/15/2019 9:00:00 AM",
                    history=list(histories[user_id]), candidates=candidates))
        return logs

    counter = [0]
    train_logs = make_logs(config.train_impressions_per_user, counter)
    val_logs = make_logs(config.val_impressions_per_user, counter)
    test_logs = make_logs(config.test_impressions_per_user, counter)

    return SyntheticDataset(
        articles=articles, train_logs=train_logs, val_logs=val_logs,
        test_logs=test_logs, topic_keywords=topic_keywords,
        article_topics=article_topics, user_topics=user_topics)


def write_synthetic_dataset(dataset, out_dir):
    """Write a synthetic dataset in the standard TSV layout."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "news": os.path.join(out_dir, "news.tsv"),
        "bodies": os.path.join(out_dir, "bodies.tsv"),
        "train": os.path.join(out_dir, "train_behaviors.tsv"),
        "val": os.path.join(out_dir, "val_behaviors.tsv"),
        "test": os.path.join(out_dir, "test_behaviors.tsv"),
    }
    write_news_tsv(dataset.articles, paths["news"])
    write_bodies_tsv(dataset.articles, paths["bodies"])
    write_behaviors_tsv(dataset.train_logs, paths["train"])
    write_behaviors_tsv(dataset.val_logs, paths["val"])
    write_behaviors_tsv(dataset.test_logs, paths["test"])
    return paths
