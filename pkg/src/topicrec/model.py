"""Model assembly, impression scoring, and checkpoint serialization.

A RecommenderModel bundles the vocabulary, the word embedding table and
all encoder parameters for one variant (attentive or recurrent user
encoding). Checkpoints are zip archives holding a JSON manifest, the
vocabulary, and raw little-endian float64 parameter buffers; they round-
trip bit-exactly and are byte-identical across runs for identical state.
"""

import dataclasses
import hashlib
import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import news_encoder as ne
from . import user_encoder as ue
from .autodiff import Parameter
from .data import EmbeddingMatrix, Vocabulary, assemble_document, \
    build_vocabulary, load_pretrained_embeddings, random_embeddings
from .errors import CompatibilityError, CorpusError
from .metrics import ScoredImpression

VARIANT_ATTENTION = "ATT"
VARIANT_RECURRENT = "GRU"
CHECKPOINT_FORMAT_VERSION = 1
# fixed zip timestamp so identical state always produces identical bytes
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class ModelConfig:
    """Architecture sizes shared by every component."""

    n_topics: int = 10
    embedding_dim: int = 300
    projection_dim: int = 64
    pool_dim: int = 64
    user_dim: int = 64
    variant: str = VARIANT_ATTENTION
    n_title: int = 30
    n_body: int = 70
    history_limit: int = 50

    def __post_init__(self):
        if self.variant not in (VARIANT_ATTENTION, VARIANT_RECURRENT):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def max_tokens(self):
        return self.n_title + self.n_body


def vocabulary_hash(vocab):
    return hashlib.sha256(vocab.to_lines().encode("utf-8")).hexdigest()


def config_hash(model_config, training_config=None):
    payload = {"model": dataclasses.asdict(model_config)}
    if training_config is not None:
        payload["training"] = dataclasses.asdict(training_config)
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class DocumentTable:
    """Pre-assembled token matrices for a corpus, row per document."""

    ids: list
    row_of: dict
    token_indices: np.ndarray  # (n_docs, N_max)
    token_mask: np.ndarray  # (n_docs, N_max)
    skipped_ids: list  # articles with no encodable tokens

    def rows_for(self, news_ids, where):
        rows = []
        for news_id in news_ids:
            row = self.row_of.get(news_id)
            if row is None:
                raise CorpusError(f"{where}: unknown or unencodable "
                                  f"document {news_id!r}")
            rows.append(row)
        return rows


def build_document_table(articles, vocab, n_title, n_body):
    indices, masks, ids, skipped = [], [], [], []
    row_of = {}
    for art in articles:
        try:
            seq = assemble_document(art, vocab, n_title=n_title, n_body=n_body)
        except Exception:
            skipped.append(art.news_id)
            continue
        row_of[art.news_id] = len(ids)
        ids.append(art.news_id)
        indices.append(seq.indices)
        masks.append(seq.mask)
    if not ids:
        raise CorpusError("no encodable documents in corpus")
    return DocumentTable(
        ids=ids, row_of=row_of,
        token_indices=np.stack(indices), token_mask=np.stack(masks),
        skipped_ids=skipped)


class RecommenderModel:
    """All trainable state for one recommender variant."""

    def __init__(self, config, vocab, embedding, topic_params, pool_params,
                 user_params):
        self.config = config
        self.vocab = vocab
        self.embedding = embedding  # Parameter (|vocab|, D_E), row 0 zero
        self.topic_params = topic_params
        self.pool_params = pool_params
        self.user_params = user_params

    @classmethod
    def build(cls, articles, config, seed=0, pretrained_path=None,
              vocab=None):
        """Initialize from a corpus (or an explicit vocabulary)."""
        if vocab is None:
            vocab = build_vocabulary(articles)
        if pretrained_path is not None:
            emb = load_pretrained_embeddings(
                pretrained_path, vocab, config.embedding_dim, seed=seed)
        else:
            emb = random_embeddings(vocab, config.embedding_dim, seed=seed)
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        topic = ne.TopicAttentionParams.init(
            config.n_topics, config.embedding_dim, config.projection_dim, rng)
        pool = ne.AdditivePoolParams.init(
            config.embedding_dim, config.pool_dim, rng)
        if config.variant == VARIANT_ATTENTION:
            user = ue.UserAttentionParams.init(
                config.embedding_dim, config.user_dim, rng)
        else:
            user = ue.GruParams.init(config.embedding_dim, rng)
        embedding = Parameter(emb.matrix, name="embedding")
        return cls(config, vocab, embedding, topic, pool, user)

    def parameters(self):
        return ([self.embedding] + self.topic_params.parameters()
                + self.pool_params.parameters() + self.user_params.parameters())

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state):
        named = self.named_parameters()
        if set(named) != set(state):
            raise CompatibilityError(
                "checkpoint parameter names do not match this model")
        for name, p in named.items():
            if p.data.shape != state[name].shape:
                raise CompatibilityError(
                    f"shape mismatch for {name}: "
                    f"{p.data.shape} vs {state[name].shape}")
            p.data = state[name].copy()

    # -- forward passes ----------------------------------------------------

    def encode_documents(self, token_indices, token_mask, dropout_rate=0.0,
                         rng=None, training=False):
        """Document vectors tensor (B, D_E) for stacked token rows."""
        _, _, _, docs = ne.encode_news_batch(
            token_indices, token_mask, self.embedding, self.topic_params,
            self.pool_params, dropout_rate=dropout_rate, rng=rng,
            training=training)
        return docs

    def encode_users(self, history_vectors, history_mask):
        """User vectors tensor (B, D_E) from (B, H, D_E) history vectors."""
        if self.config.variant == VARIANT_ATTENTION:
            _, users = ue.attention_user_batch(
                history_vectors, history_mask, self.user_params)
        else:
            _, users = ue.gru_user_batch(
                history_vectors, history_mask, self.user_params)
        return users

    def encode_article(self, article):
        """Full NewsEncoding for one article (evaluation mode)."""
        seq = assemble_document(article, self.vocab,
                                n_title=self.config.n_title,
                                n_body=self.config.n_body)
        emb = EmbeddingMatrix(matrix=self.embedding.data)
        return ne.encode_news(seq, emb, self.topic_params, self.pool_params)

    # -- impression scoring -------------------------------------------------

    def score_impressions(self, table, logs, chunk_size=256):
        """ScoredImpression per log, frozen parameters, dropout off.

        History items missing from the table are dropped (cold users
        keep an empty history and score zero everywhere); unknown
        candidates are a corpus error.
        """
        doc_vectors = self._all_document_vectors(table, chunk_size)
        results = []
        limit = self.config.history_limit
        for start in range(0, len(logs), chunk_size):
            batch = logs[start:start + chunk_size]
            hist_rows, cand_rows, labels = [], [], []
            for log in batch:
                kept = [nid for nid in log.history if nid in table.row_of]
                kept = kept[-limit:]  # most recent items win at evaluation
                hist_rows.append([table.row_of[nid] for nid in kept])
                cand_rows.append(table.rows_for(
                    (nid for nid, _ in log.candidates),
                    f"impression {log.impression_id}"))
                labels.append([label for _, label in log.candidates])
            horizon = max(1, max(len(r) for r in hist_rows))
            hist_idx = np.zeros((len(batch), horizon), dtype=np.int64)
            hist_mask = np.zeros((len(batch), horizon), dtype=bool)
            for i, rows in enumerate(hist_rows):
                hist_idx[i, :len(rows)] = rows
                hist_mask[i, :len(rows)] = True
            users = self.encode_users(
                ad.as_tensor(doc_vectors[hist_idx]), hist_mask).data
            for i, log in enumerate(batch):
                cand = doc_vectors[cand_rows[i]]
                results.append(ScoredImpression(
                    scores=cand @ users[i], labels=np.array(labels[i])))
        return results

    def _all_document_vectors(self, table, chunk_size):
        vectors = np.empty((len(table.ids), self.config.embedding_dim))
        frozen = ad.as_tensor(self.embedding.data)
        for start in range(0, len(table.ids), chunk_size):
            stop = start + chunk_size
            _, _, _, docs = ne.encode_news_batch(
                table.token_indices[start:stop], table.token_mask[start:stop],
                frozen, self.topic_params, self.pool_params)
            vectors[start:stop] = docs.data
        return vectors


# ---------------------------------------------------------------------------
# checkpoint archive
# ---------------------------------------------------------------------------

def _write_entry(archive, name, payload):
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(model, path, training_config=None, epoch=None,
                    validation_metrics=None):
    """Write the model (and training provenance) as a zip archive."""
    named = model.named_parameters()
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": dataclasses.asdict(model.config),
        "training_config": (dataclasses.asdict(training_config)
                            if training_config is not None else None),
        "epoch": epoch,
        "validation_metrics": validation_metrics,
        "vocab_hash": vocabulary_hash(model.vocab),
        "config_hash": config_hash(model.config, training_config),
        "parameters": {name: list(p.data.shape) for name, p in named.items()},
    }
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as archive:
        _write_entry(archive, "manifest.json",
                     json.dumps(manifest, sort_keys=True, indent=1))
        _write_entry(archive, "vocab.txt", model.vocab.to_lines())
        for name in sorted(named):
            payload = np.ascontiguousarray(named[name].data, dtype="<f8")
            _write_entry(archive, f"params/{name}.bin", payload.tobytes())
    with open(path, "wb") as f:
        f.write(buffer.getvalue())


def load_checkpoint(path):
    """Rebuild a RecommenderModel from an archive; returns (model, manifest)."""
    try:
        archive = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CompatibilityError(f"cannot open checkpoint {path}: {exc}")
    with archive:
        try:
            manifest = json.loads(archive.read("manifest.json"))
        except KeyError:
            raise CompatibilityError("checkpoint has no manifest")
        if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise CompatibilityError(
                f"unsupported checkpoint format "
                f"{manifest.get('format_version')!r}")
        vocab = Vocabulary.from_lines(
            archive.read("vocab.txt").decode("utf-8"))
        if vocabulary_hash(vocab) != manifest["vocab_hash"]:
            raise CompatibilityError(
                "stored vocabulary does not match its recorded hash")
        config = ModelConfig(**manifest["model_config"])
        model = RecommenderModel.build([], config, vocab=vocab)
        state = {}
        for name, shape in manifest["parameters"].items():
            raw = archive.read(f"params/{name}.bin")
            state[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        model.load_state_dict(state)
    return model, manifest


def check_vocabulary_compatible(model, vocab):
    """Raise when a corpus vocabulary differs from the model's."""
    if vocabulary_hash(model.vocab) != vocabulary_hash(vocab):
        raise CompatibilityError(
            "corpus vocabulary does not match the checkpoint vocabulary")
