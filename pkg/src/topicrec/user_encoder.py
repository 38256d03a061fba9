"""User encoders: additive attention over history, or a GRU over it.

The attentive variant weighs each history document and keeps the weights
for explanation. The recurrent variant runs a GRU over the history in
click order (oldest first) and uses the final hidden state.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .errors import ColdUserError
from .news_encoder import glorot_uniform


@dataclass
class UserAttentionParams:
    projection: Parameter  # (D_H, D_U)
    bias: Parameter  # (D_U,)
    query: Parameter  # (D_U,)

    @classmethod
    def init(cls, hidden_dim, attention_dim, rng, prefix="user_attention"):
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
class GruParams:
    """Gated recurrent cell over document vectors; all maps are D_H x D_H."""

    input_reset: Parameter
    input_update: Parameter
    input_candidate: Parameter
    hidden_reset: Parameter
    hidden_update: Parameter
    hidden_candidate: Parameter
    bias_reset: Parameter
    bias_update: Parameter
    bias_input_candidate: Parameter
    bias_hidden_candidate: Parameter

    @classmethod
    def init(cls, hidden_dim, rng, prefix="user_gru"):
        def mat(name):
            w = glorot_uniform(rng, (hidden_dim, hidden_dim),
                               hidden_dim, hidden_dim)
            return Parameter(w, name=f"{prefix}.{name}")

        def vec(name):
            return Parameter(np.zeros(hidden_dim), name=f"{prefix}.{name}")

        return cls(
            input_reset=mat("input_reset"),
            input_update=mat("input_update"),
            input_candidate=mat("input_candidate"),
            hidden_reset=mat("hidden_reset"),
            hidden_update=mat("hidden_update"),
            hidden_candidate=mat("hidden_candidate"),
            bias_reset=vec("bias_reset"),
            bias_update=vec("bias_update"),
            bias_input_candidate=vec("bias_input_candidate"),
            bias_hidden_candidate=vec("bias_hidden_candidate"))

    def parameters(self):
        return [self.input_reset, self.input_update, self.input_candidate,
                self.hidden_reset, self.hidden_update, self.hidden_candidate,
                self.bias_reset, self.bias_update, self.bias_input_candidate,
                self.bias_hidden_candidate]


@dataclass
class UserRepresentation:
    u: np.ndarray  # (D_H,)
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------------------
# batched tape forwards (training path)
# ---------------------------------------------------------------------------

def attention_user_batch(doc_vectors, history_mask, params):
    """Additive attention over (B, H, D_H) history document vectors.

    history_mask is (B, H) bool; all-false rows (cold users) yield a
    zero user vector and an all-zero weight row.
    Returns (gamma, u) tensors of shapes (B, H) and (B, D_H).
    """
    batch, horizon, dim = doc_vectors.shape
    hidden = ad.tanh(ad.add(ad.matmul(doc_vectors, params.projection),
                            params.bias))  # (B, H, D_U)
    scores = ad.tsum(ad.hadamard(hidden, params.query), axis=-1)  # (B, H)
    gamma = ad.masked_softmax(scores, np.asarray(history_mask, dtype=bool),
                              allow_empty=True)
    users = ad.matmul(ad.reshape(gamma, (batch, 1, horizon)), doc_vectors)
    return gamma, ad.reshape(users, (batch, dim))


def gru_user_batch(doc_vectors, history_mask, params, initial_state=None):
    """GRU over (B, H, D_H) histories, oldest first; padded steps hold state.

    Cold users (all-false mask rows) keep the initial state, which
    defaults to zeros. Returns (gamma, u) where gamma is an empty
    placeholder tensor.
    """
    batch, horizon, dim = doc_vectors.shape
    mask = np.asarray(history_mask, dtype=bool)
    if initial_state is None:
        initial_state = np.zeros((batch, dim))
    state = ad.as_tensor(np.asarray(initial_state, dtype=np.float64))
    for t in range(horizon):
        x = ad.select(doc_vectors, t, axis=1)  # (B, D_H)
        reset = ad.sigmoid(ad.add(
            ad.add(ad.matmul(x, params.input_reset),
                   ad.matmul(state, params.hidden_reset)),
            params.bias_reset))
        update = ad.sigmoid(ad.add(
            ad.add(ad.matmul(x, params.input_update),
                   ad.matmul(state, params.hidden_update)),
            params.bias_update))
        candidate = ad.tanh(ad.add(
            ad.add(ad.matmul(x, params.input_candidate),
                   params.bias_input_candidate),
            ad.hadamard(reset, ad.add(ad.matmul(state, params.hidden_candidate),
                                      params.bias_hidden_candidate))))
        new_state = ad.add(ad.hadamard(ad.sub(1.0, update), candidate),
                           ad.hadamard(update, state))
        step = mask[:, t].astype(np.float64)[:, None]
        state = ad.add(ad.hadamard(ad.as_tensor(step), new_state),
                       ad.hadamard(ad.as_tensor(1.0 - step), state))
    return ad.as_tensor(np.zeros((batch, 0))), state


# ---------------------------------------------------------------------------
# single-user operations
# ---------------------------------------------------------------------------

def _stack_history(history):
    vectors = np.asarray(history, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ColdUserError("user has no browsed history to encode")
    return vectors


def attention_user_forward(history, params):
    """User vector and per-item weights from a nonempty history."""
    vectors = _stack_history(history)
    mask = np.ones((1, vectors.shape[0]), dtype=bool)
    gamma, users = attention_user_batch(
        ad.as_tensor(vectors[None, :, :]), mask, params)
    return UserRepresentation(u=users.data[0].copy(),
                              gamma=gamma.data[0].copy())


def gru_user_forward(history, params, initial_state=None):
    """Final GRU state over a nonempty history fed oldest first."""
    vectors = _stack_history(history)
    if initial_state is not None:
        initial_state = np.asarray(initial_state, dtype=np.float64)[None, :]
    _, users = gru_user_batch(
        ad.as_tensor(vectors[None, :, :]),
        np.ones((1, vectors.shape[0]), dtype=bool), params,
        initial_state=initial_state)
    return UserRepresentation(u=users.data[0].copy())
