"""News encoder: per-topic attention over words, additive pooling over topics.

Stage one scores every token against K learned topic heads and forms one
topic vector per head as an attention-weighted sum of word embeddings,
so topic vectors live in embedding space. Stage two pools the K topic
vectors into a single document vector with additive attention. All
attention weights are kept so downstream explanation can read them back.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter


def glorot_uniform(rng, shape, fan_in, fan_out):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class TopicAttentionParams:
    """Shared word projection plus one query/bias pair per topic head."""

    shared_projection: Parameter  # (D_E, D_K)
    head_queries: Parameter  # (K, D_K), row k is the head-k query
    head_biases: Parameter  # (K, D_K), row k is the head-k bias

    @property
    def n_topics(self):
        return self.head_queries.shape[0]

    @property
    def embedding_dim(self):
        return self.shared_projection.shape[0]

    @property
    def projection_dim(self):
        return self.shared_projection.shape[1]

    @classmethod
    def init(cls, n_topics, embedding_dim, projection_dim, rng, prefix="news_topic"):
        if n_topics < 1 or projection_dim < 1:
            raise ValueError("n_topics and projection_dim must be >= 1")
        w = glorot_uniform(rng, (embedding_dim, projection_dim),
                           embedding_dim, projection_dim)
        v = glorot_uniform(rng, (n_topics, projection_dim), projection_dim, 1)
        return cls(
            shared_projection=Parameter(w, name=f"{prefix}.shared_projection"),
            head_queries=Parameter(v, name=f"{prefix}.head_queries"),
            head_biases=Parameter(np.zeros((n_topics, projection_dim)),
                                  name=f"{prefix}.head_biases"))

    def parameters(self):
        return [self.shared_projection, self.head_queries, self.head_biases]


@dataclass
class AdditivePoolParams:
    """Additive attention over topic vectors: project, tanh, query."""

    projection: Parameter  # (D_H, D_I)
    bias: Parameter  # (D_I,)
    query: Parameter  # (D_I,)

    @classmethod
    def init(cls, hidden_dim, attention_dim, rng, prefix="news_pool"):
        if attention_dim < 1:
            raise ValueError("attention_dim must be >= 1")
        w = glorot_uniform(rng, (hidden_dim, attention_dim),
                           hidden_dim, attention_dim)
        v = glorot_uniform(rng, (attention_dim,), attention_dim, 1)
        return cls(projection=Parameter(w, name=f"{prefix}.projection"),
                   bias=Parameter(np.zeros(attention_dim), name=f"{prefix}.bias"),
                   query=Parameter(v, name=f"{prefix}.query"))

    def parameters(self):
        return [self.projection, self.bias, self.query]


@dataclass
class NewsEncoding:
    """All encoder outputs for one document, detached to numpy."""

    topic_term_weights: np.ndarray  # (K, N), row k sums to 1 over real tokens
    topic_vectors: np.ndarray  # (K, D_H)
    doc_topic_weights: np.ndarray  # (K,), sums to 1
    doc_vector: np.ndarray  # (D_H,)


# ---------------------------------------------------------------------------
# batched tape forwards (training path)
# ---------------------------------------------------------------------------

def topic_attention_batch(token_indices, token_mask, embedding, params,
                          dropout_rate=0.0, rng=None, training=False):
    """Per-topic attention over a batch of documents.

    token_indices: (B, N) int array; token_mask: (B, N) bool array with
    true marking real tokens; embedding: (V, D_E) tensor or Parameter.
    Returns (A, h, embedded) tensors with shapes (B, K, N), (B, K, D_E)
    and (B, N, D_E); A rows for all-padding documents would be rejected
    by the softmax, so every row needs at least one real token.
    """
    token_indices = np.asarray(token_indices, dtype=np.int64)
    token_mask = np.asarray(token_mask, dtype=bool)
    batch, n_tokens = token_indices.shape
    k = params.n_topics
    d_k = params.projection_dim

    embedded = ad.gather(embedding, token_indices)  # (B, N, D_E)
    embedded = ad.dropout(embedded, dropout_rate, rng, training)
    projected = ad.matmul(embedded, params.shared_projection)  # (B, N, D_K)
    # broadcast per-head biases/queries: (B, N, 1, D_K) + (K, D_K)
    activated = ad.tanh(ad.add(ad.reshape(projected, (batch, n_tokens, 1, d_k)),
                               params.head_biases))
    logits = ad.tsum(ad.hadamard(activated, params.head_queries), axis=-1)
    logits = ad.transpose(logits, (0, 2, 1))  # (B, K, N)
    mask = np.broadcast_to(token_mask[:, None, :], (batch, k, n_tokens))
    weights = ad.masked_softmax(logits, mask)  # (B, K, N)
    topic_vectors = ad.matmul(weights, embedded)  # (B, K, D_E)
    return weights, topic_vectors, embedded


def additive_pool_batch(topic_vectors, params, dropout_rate=0.0, rng=None,
                        training=False):
    """Pool (B, K, D_H) topic vectors into (B, D_H) document vectors.

    Returns (doc_topic_weights, doc_vectors) tensors of shapes (B, K)
    and (B, D_H).
    """
    batch, k, _ = topic_vectors.shape
    topic_vectors = ad.dropout(topic_vectors, dropout_rate, rng, training)
    hidden = ad.tanh(ad.add(ad.matmul(topic_vectors, params.projection),
                            params.bias))  # (B, K, D_I)
    scores = ad.tsum(ad.hadamard(hidden, params.query), axis=-1)  # (B, K)
    weights = ad.masked_softmax(scores, np.ones((batch, k), dtype=bool))
    docs = ad.matmul(ad.reshape(weights, (batch, 1, k)), topic_vectors)
    return weights, ad.reshape(docs, (batch, topic_vectors.shape[2]))


def encode_news_batch(token_indices, token_mask, embedding, topic_params,
                      pool_params, dropout_rate=0.0, rng=None, training=False):
    """Full encoder over a batch: (A, h, B, d) tensors."""
    weights, topic_vectors, _ = topic_attention_batch(
        token_indices, token_mask, embedding, topic_params,
        dropout_rate=dropout_rate, rng=rng, training=training)
    doc_weights, doc_vectors = additive_pool_batch(
        topic_vectors, pool_params, dropout_rate=dropout_rate, rng=rng,
        training=training)
    return weights, topic_vectors, doc_weights, doc_vectors


# ---------------------------------------------------------------------------
# single-document operations
# ---------------------------------------------------------------------------

def topic_attention_forward(tokens, embeddings, params):
    """Topic-term weights and topic vectors for one document.

    Returns (A, h) numpy arrays of shapes (K, N) and (K, D_E).
    """
    matrix = embeddings.matrix if hasattr(embeddings, "matrix") else embeddings
    weights, topic_vectors, _ = topic_attention_batch(
        tokens.indices[None, :], tokens.mask[None, :],
        ad.as_tensor(matrix), params)
    return weights.data[0].copy(), topic_vectors.data[0].copy()


def additive_pool_forward(topic_vectors, params):
    """Document-topic weights and document vector from (K, D_H) input.

    Returns (B, d) numpy arrays of shapes (K,) and (D_H,).
    """
    weights, docs = additive_pool_batch(
        ad.as_tensor(np.asarray(topic_vectors)[None, :, :]), params)
    return weights.data[0].copy(), docs.data[0].copy()


def encode_news(tokens, embeddings, topic_params, pool_params,
                dropout_rate=0.0, rng=None, training=False):
    """Encode one document end to end into a NewsEncoding."""
    matrix = embeddings.matrix if hasattr(embeddings, "matrix") else embeddings
    weights, topic_vectors, doc_weights, doc_vectors = encode_news_batch(
        tokens.indices[None, :], tokens.mask[None, :], ad.as_tensor(matrix),
        topic_params, pool_params, dropout_rate=dropout_rate, rng=rng,
        training=training)
    return NewsEncoding(
        topic_term_weights=weights.data[0].copy(),
        topic_vectors=topic_vectors.data[0].copy(),
        doc_topic_weights=doc_weights.data[0].copy(),
        doc_vector=doc_vectors.data[0].copy())
