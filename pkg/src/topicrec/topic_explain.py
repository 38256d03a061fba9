"""Topic readout and per-recommendation explanations.

The trained topic-attention heads induce a global distribution over the
vocabulary: scoring every allowed word against each head and softmaxing
per head gives a K x V matrix whose rows are interpretable topics. From
it come top-M descriptor lists, NPMI / embedding-similarity coherence
scoring against a reference corpus, and per-impression explanation
reports that name the history articles driving a recommendation and
highlight topic words inside each article.
"""

import html as html_lib
import math
from dataclasses import dataclass, field

import numpy as np

from .data import (article_text_fields, assemble_document, document_tokens,
                   tokenize)
from .errors import ConfigError, DegenerateInputError, VariantUnsupportedError
from .user_encoder import attention_user_forward

DEFAULT_DESCRIPTORS = 10
DEFAULT_TOP_TOPICS = 3
DEFAULT_TOP_ARTICLES = 5
DEFAULT_EPSILON = 1e-12
DEFAULT_TOP_FRACTION = 0.10
# one color per highlighted topic; explanations use at most three topics
TOPIC_COLORS = ((228, 87, 46), (46, 134, 171), (87, 167, 115))
_ANSI_CODES = (31, 34, 32)  # red, blue, green foregrounds


@dataclass
class GlobalTopicDistribution:
    """K x V nonnegative matrix; each row sums to 1 over allowed tokens."""

    weights: np.ndarray
    allowed: np.ndarray  # sorted vocabulary indices the rows live on
    vocab: object


def compute_global_topics(topic_params, embeddings, allowed_tokens,
                          chunk_size=4096):
    """Score every allowed vocabulary token against each topic head.

    Applies the head's feed-forward scoring to the embedded vocabulary
    rows and softmaxes per head across the allowed set.
    """
    allowed = np.asarray(allowed_tokens, dtype=np.int64)
    if allowed.size == 0:
        raise DegenerateInputError("allowed-token set is empty")
    matrix = embeddings.matrix if hasattr(embeddings, "matrix") else embeddings
    w = topic_params.shared_projection.data
    queries = topic_params.head_queries.data
    biases = topic_params.head_biases.data
    k = queries.shape[0]
    logits = np.empty((k, allowed.size))
    for start in range(0, allowed.size, chunk_size):
        rows = allowed[start:start + chunk_size]
        projected = matrix[rows] @ w  # (chunk, D_K)
        for head in range(k):
            logits[head, start:start + len(rows)] = (
                np.tanh(projected + biases[head]) @ queries[head])
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    rows = shifted / shifted.sum(axis=1, keepdims=True)
    vocab_size = matrix.shape[0]
    weights = np.zeros((k, vocab_size))
    weights[:, allowed] = rows
    return GlobalTopicDistribution(weights=weights, allowed=allowed,
                                   vocab=None)


@dataclass
class TopicDescriptorSet:
    """Per topic: top-M (token, weight) pairs, weight descending."""

    per_topic: list  # list over topics of [(token, weight), ...]
    short: bool = False  # fewer allowed tokens than requested descriptors


def extract_descriptors(distribution, vocab, m=DEFAULT_DESCRIPTORS):
    """Top-m tokens per topic row; ties broken by vocabulary index."""
    if m < 1:
        raise ValueError(f"descriptor count must be >= 1, got {m}")
    allowed = distribution.allowed
    per_topic = []
    for row in distribution.weights:
        # sort by (-weight, index): stable and fully deterministic
        order = sorted(allowed, key=lambda idx: (-row[idx], idx))[:m]
        per_topic.append([(vocab.token(idx), float(row[idx]))
                          for idx in order])
    return TopicDescriptorSet(per_topic=per_topic,
                              short=allowed.size < m)


# ---------------------------------------------------------------------------
# co-occurrence counting and coherence
# ---------------------------------------------------------------------------

@dataclass
class CooccurrenceCounts:
    """Document-level binary (co-)occurrence over a reference corpus.

    Pair co-frequencies are evaluated lazily from per-token document
    postings; a pair co-occurs in a document when both tokens appear in
    it at least once.
    """

    postings: dict  # token string -> set of document row ids
    doc_count: int

    def df(self, token):
        return len(self.postings.get(token, ()))

    def probability(self, token):
        return self.df(token) / self.doc_count

    def pair_df(self, token_a, token_b):
        a = self.postings.get(token_a, set())
        b = self.postings.get(token_b, set())
        return len(a & b)

    def pair_probability(self, token_a, token_b):
        return self.pair_df(token_a, token_b) / self.doc_count


def count_cooccurrence(corpus, allowed_tokens=None):
    """Postings over the corpus, optionally restricted to a token set."""
    if not corpus:
        raise DegenerateInputError("reference corpus is empty")
    postings = {}
    for row, article in enumerate(corpus):
        for token in set(document_tokens(article)):
            if allowed_tokens is not None and token not in allowed_tokens:
                continue
            postings.setdefault(token, set()).add(row)
    return CooccurrenceCounts(postings=postings, doc_count=len(corpus))


@dataclass
class CoherenceScores:
    per_topic: list
    mean: float
    skipped_pairs: int = 0


def _npmi_pair(counts, token_a, token_b, epsilon):
    joint = counts.pair_probability(token_a, token_b)
    product = counts.probability(token_a) * counts.probability(token_b)
    if product == 0.0:
        product = epsilon
    return (math.log((joint + epsilon) / product)
            / -math.log(joint + epsilon))


def npmi_coherence(descriptors, counts, epsilon=DEFAULT_EPSILON):
    """Mean normalized PMI over all descriptor pairs, per topic."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    per_topic = []
    for entries in descriptors.per_topic:
        tokens = [token for token, _ in entries]
        values = [_npmi_pair(counts, tokens[i], tokens[j], epsilon)
                  for i in range(len(tokens))
                  for j in range(i + 1, len(tokens))]
        per_topic.append(sum(values) / len(values) if values else 0.0)
    mean = sum(per_topic) / len(per_topic) if per_topic else 0.0
    return CoherenceScores(per_topic=per_topic, mean=mean)


def w2v_coherence(descriptors, embeddings, vocab):
    """Mean pairwise cosine of the model's own descriptor embeddings."""
    matrix = embeddings.matrix if hasattr(embeddings, "matrix") else embeddings
    per_topic = []
    skipped = 0
    for entries in descriptors.per_topic:
        vectors = [matrix[vocab.index(token)] for token, _ in entries]
        norms = [np.linalg.norm(v) for v in vectors]
        values = []
        for i in range(len(vectors)):
            for j in range(i + 1, len(vectors)):
                if norms[i] == 0.0 or norms[j] == 0.0:
                    skipped += 1
                    continue
                values.append(float(vectors[i] @ vectors[j])
                              / (norms[i] * norms[j]))
        per_topic.append(sum(values) / len(values) if values else 0.0)
    mean = sum(per_topic) / len(per_topic) if per_topic else 0.0
    return CoherenceScores(per_topic=per_topic, mean=mean,
                           skipped_pairs=skipped)


@dataclass
class CoherenceSummary:
    overall_mean: float
    top_mean: float
    top_count: int
    scores: list  # full per-topic distribution, descending


def coherence_summary(per_topic_scores, top_fraction=DEFAULT_TOP_FRACTION):
    """Overall mean plus the mean of the best ceil(fraction*K) topics."""
    if not 0 < top_fraction <= 1:
        raise ValueError("top_fraction must be in (0, 1]")
    scores = sorted(per_topic_scores, reverse=True)
    if not scores:
        return CoherenceSummary(0.0, 0.0, 0, [])
    top_count = math.ceil(top_fraction * len(scores))
    top = scores[:top_count]
    return CoherenceSummary(
        overall_mean=sum(scores) / len(scores),
        top_mean=sum(top) / len(top),
        top_count=top_count, scores=scores)


def coherence_tsv(descriptors, npmi_scores, w2v_scores,
                  top_fraction=DEFAULT_TOP_FRACTION):
    """TSV per topic plus a key-value summary block."""
    lines = ["topic_id\tnpmi\tw2v\tdescriptors"]
    for topic_id, entries in enumerate(descriptors.per_topic):
        words = " ".join(token for token, _ in entries)
        lines.append(f"{topic_id}\t{npmi_scores.per_topic[topic_id]:.6f}"
                     f"\t{w2v_scores.per_topic[topic_id]:.6f}\t{words}")
    for name, scores in (("npmi", npmi_scores), ("w2v", w2v_scores)):
        summary = coherence_summary(scores.per_topic, top_fraction)
        lines.append(f"{name}_mean\t{summary.overall_mean:.6f}")
        lines.append(f"{name}_top_mean\t{summary.top_mean:.6f}")
    lines.append(f"w2v_skipped_pairs\t{w2v_scores.skipped_pairs}")
    return "\n".join(lines) + "\n"


def boxplot_data(npmi_scores, w2v_scores):
    """One score per line per metric, for external plotting."""
    lines = [f"npmi\t{value:.6f}" for value in npmi_scores.per_topic]
    lines += [f"w2v\t{value:.6f}" for value in w2v_scores.per_topic]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# explanation reports
# ---------------------------------------------------------------------------

@dataclass
class ArticleExplanation:
    news_id: str
    title: str
    role: str  # "history" or "candidate"
    weight: float  # history: attention weight; candidate: relevance score
    topics: list  # [(topic_id, doc_topic_weight)], weight descending
    tokens: list  # the article's real tokens in reading order
    highlight: np.ndarray  # (K, n_tokens) topic weights over the tokens


@dataclass
class ExplanationReport:
    impression_id: str
    user_id: str
    ranked_candidates: list  # [(news_id, score, label)], score descending
    history: list = field(default_factory=list)  # ArticleExplanation
    candidates: list = field(default_factory=list)  # ArticleExplanation


def _article_view(model, article, distribution, role, weight, top_topics):
    encoding = model.encode_article(article)
    seq = assemble_document(article, model.vocab,
                            n_title=model.config.n_title,
                            n_body=model.config.n_body)
    indices = seq.indices[:seq.length]
    title_text, body_text = article_text_fields(article)
    # mirrors assemble_document so tokens align 1:1 with the index row
    tokens = (tokenize(title_text)[:model.config.n_title]
              + tokenize(body_text)[:model.config.n_body])
    order = np.argsort(-encoding.doc_topic_weights, kind="mergesort")
    topics = [(int(t), float(encoding.doc_topic_weights[t]))
              for t in order[:top_topics]]
    highlight = distribution.weights[:, indices]
    return ArticleExplanation(
        news_id=article.news_id, title=article.title, role=role,
        weight=float(weight), topics=topics, tokens=tokens,
        highlight=highlight)


def generate_explanation(model, impression, articles,
                         top_articles=DEFAULT_TOP_ARTICLES,
                         top_topics=DEFAULT_TOP_TOPICS,
                         allowed_tokens=None):
    """Explain one impression with a trained attentive-variant model.

    The recurrent variant exposes no per-article attention and is
    rejected. Cold users produce a report with an empty history section
    and zero candidate scores.
    """
    if model.config.variant != "ATT":
        raise VariantUnsupportedError(
            "explanations need the attentive user encoder; the recurrent "
            "variant does not expose per-article weights")
    by_id = {art.news_id: art for art in articles}
    if allowed_tokens is None:
        allowed_tokens = np.arange(2, len(model.vocab), dtype=np.int64)
    distribution = compute_global_topics(
        model.topic_params, model.embedding.data, allowed_tokens)

    history_arts = [by_id[nid] for nid in impression.history if nid in by_id]
    history_arts = history_arts[-model.config.history_limit:]
    history_encodings = []
    usable = []
    for art in history_arts:
        try:
            history_encodings.append(model.encode_article(art).doc_vector)
            usable.append(art)
        except DegenerateInputError:
            continue
    if usable:
        rep = attention_user_forward(np.stack(history_encodings),
                                     model.user_params)
        user_vector, gamma = rep.u, rep.gamma
    else:
        user_vector = np.zeros(model.config.embedding_dim)
        gamma = np.zeros(0)

    scores = []
    for news_id, label in impression.candidates:
        art = by_id.get(news_id)
        if art is None:
            raise DegenerateInputError(
                f"candidate {news_id!r} missing from corpus")
        doc = model.encode_article(art).doc_vector
        scores.append((news_id, float(user_vector @ doc), label))
    ranked = sorted(scores, key=lambda item: -item[1])

    report = ExplanationReport(
        impression_id=impression.impression_id, user_id=impression.user_id,
        ranked_candidates=ranked)
    top_history = sorted(range(len(usable)), key=lambda i: -gamma[i])
    for i in top_history[:top_articles]:
        report.history.append(_article_view(
            model, usable[i], distribution, "history", gamma[i], top_topics))
    for news_id, score, _ in ranked:
        report.candidates.append(_article_view(
            model, by_id[news_id], distribution, "candidate", score,
            top_topics))
    return report


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def render_report(report, fmt="ansi", colors=TOPIC_COLORS):
    if fmt == "ansi":
        return _render_ansi(report)
    if fmt == "html":
        return _render_html(report, colors)
    if fmt == "tsv":
        return _render_tsv(report)
    raise ConfigError(f"unknown explanation format {fmt!r}; "
                      "choose ansi, html, or tsv")


def _topic_of_token(view, position):
    """(slot, topic_id, weight) of the best highlighted topic, or None."""
    best = None
    for slot, (topic_id, _) in enumerate(view.topics):
        weight = float(view.highlight[topic_id, position])
        if weight > 0.0 and (best is None or weight > best[2]):
            best = (slot, topic_id, weight)
    return best


def _render_ansi(report):
    lines = [f"impression {report.impression_id} user {report.user_id}",
             "", "ranked candidates:"]
    for rank, (news_id, score, label) in enumerate(report.ranked_candidates,
                                                   start=1):
        mark = " +" if label == 1 else ""
        lines.append(f"  {rank}. {news_id}  score {score:+.4f}{mark}")
    lines.append("")
    lines.append("history contributions:" if report.history
                 else "history contributions: (none; cold user)")
    for view in report.history:
        lines.append(f"  {view.news_id}  weight {view.weight:.4f}  "
                     f"{view.title}")
    for view in report.history + report.candidates:
        lines.append("")
        topics = ", ".join(f"topic {tid} ({weight:.3f})"
                           for tid, weight in view.topics)
        lines.append(f"[{view.role}] {view.news_id}  {topics}")
        rendered = []
        for pos, token in enumerate(view.tokens):
            best = _topic_of_token(view, pos)
            if best is None:
                rendered.append(token)
            else:
                code = _ANSI_CODES[best[0] % len(_ANSI_CODES)]
                rendered.append(f"\x1b[{code}m{token}\x1b[0m")
        lines.append("  " + " ".join(rendered))
    return "\n".join(lines) + "\n"


def _render_html(report, colors):
    max_topics = max([len(v.topics) for v in
                      report.history + report.candidates], default=0)
    if max_topics > len(colors):
        raise ConfigError(
            f"{max_topics} topics to highlight but only {len(colors)} "
            "colors configured")
    esc = html_lib.escape
    parts = [
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\">",
        f"<title>impression {esc(report.impression_id)}</title>",
        "<style>body{font-family:sans-serif;max-width:60em;margin:2em auto}"
        ".tok{padding:0 2px;border-radius:3px}"
        "table{border-collapse:collapse}td,th{padding:2px 8px;"
        "border:1px solid #ccc}</style></head><body>",
        f"<h1>impression {esc(report.impression_id)} "
        f"(user {esc(report.user_id)})</h1>",
        "<h2>ranked candidates</h2><table>",
        "<tr><th>rank</th><th>article</th><th>score</th><th>label</th></tr>",
    ]
    for rank, (news_id, score, label) in enumerate(report.ranked_candidates,
                                                   start=1):
        parts.append(f"<tr><td>{rank}</td><td>{esc(news_id)}</td>"
                     f"<td>{score:+.4f}</td><td>{label}</td></tr>")
    parts.append("</table>")
    parts.append("<h2>history contributions</h2>")
    if report.history:
        parts.append("<table><tr><th>article</th><th>weight</th>"
                     "<th>title</th></tr>")
        for view in report.history:
            parts.append(f"<tr><td>{esc(view.news_id)}</td>"
                         f"<td>{view.weight:.4f}</td>"
                         f"<td>{esc(view.title)}</td></tr>")
        parts.append("</table>")
    else:
        parts.append("<p>(none; cold user)</p>")
    for view in report.history + report.candidates:
        parts.append(f"<h2>[{esc(view.role)}] {esc(view.news_id)}</h2>")
        legend = []
        for slot, (topic_id, weight) in enumerate(view.topics):
            r, g, b = colors[slot]
            legend.append(f"<span class=\"tok\" style=\"background-color:"
                          f"rgba({r},{g},{b},0.6)\">topic {topic_id} "
                          f"({weight:.3f})</span>")
        parts.append("<p>" + " ".join(legend) + "</p>")
        max_weight = float(view.highlight.max()) if view.highlight.size else 0.0
        words = []
        for pos, token in enumerate(view.tokens):
            best = _topic_of_token(view, pos)
            if best is None or max_weight == 0.0:
                words.append(f"<span class=\"tok\">{esc(token)}</span>")
            else:
                slot, _, weight = best
                r, g, b = colors[slot]
                alpha = 0.15 + 0.85 * (weight / max_weight)
                words.append(
                    f"<span class=\"tok\" style=\"background-color:"
                    f"rgba({r},{g},{b},{alpha:.3f})\">{esc(token)}</span>")
        parts.append("<p>" + " ".join(words) + "</p>")
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"


def _render_tsv(report):
    lines = ["article\trole\ttoken_position\ttoken\ttopic_id\tweight"]
    for view in report.history + report.candidates:
        for topic_id, _ in view.topics:
            for pos, token in enumerate(view.tokens):
                weight = float(view.highlight[topic_id, pos])
                lines.append(f"{view.news_id}\t{view.role}\t{pos}\t{token}"
                             f"\t{topic_id}\t{weight:.12g}")
    return "\n".join(lines) + "\n"
