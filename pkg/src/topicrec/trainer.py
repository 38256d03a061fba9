"""Negative-sampled training loop with dot-product scoring.

Each positive candidate is paired with M negatives drawn from the same
impression, scored against the user vector, and pushed through a
softmax-style negative log-likelihood. Adam with per-epoch learning-rate
halving, global-norm gradient clipping, and best-validation-AUC model
selection round out the schedule. Single-threaded and bit-deterministic
for a fixed seed.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import sample_history
from .errors import DimensionError, NumericError
from .metrics import evaluate_scored
from .model import build_document_table, config_hash

VARIANTS = ("ATT", "GRU")


@dataclass
class TrainingConfig:
    """Optimization schedule; architecture lives in ModelConfig."""

    learning_rate: float = 1e-3
    batch_size: int = 64
    negatives: int = 4
    dropout: float = 0.2
    epochs: int = 10
    seed: int = 0
    lr_halving: bool = True
    grad_clip: float = 5.0
    max_train_samples: int = 0  # 0 = no cap; else subsample for desk scale

    def __post_init__(self):
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class TrainingSample:
    """One positive with its M sampled negatives and the user's history.

    Documents are referenced by news_id; the loop resolves them against
    the corpus token table.
    """

    history: list
    positive: str
    negatives: list


def score(user_vector, doc_vector):
    """Inner-product relevance score."""
    u = np.asarray(user_vector, dtype=np.float64)
    d = np.asarray(doc_vector, dtype=np.float64)
    if u.shape != d.shape or u.ndim != 1:
        raise DimensionError(
            f"score needs equal-length vectors, got {u.shape} and {d.shape}")
    return float(u @ d)


def build_samples(impression, m, rng_seed=0, history_limit=50):
    """One TrainingSample per positive candidate of an impression.

    Negatives are uniform over the impression's non-clicked candidates,
    without replacement when at least m are available, with replacement
    otherwise. Impressions lacking a positive or a negative yield no
    samples. Deterministic for a given seed.
    """
    rng = np.random.default_rng(rng_seed)
    positives = [nid for nid, label in impression.candidates if label == 1]
    pool = [nid for nid, label in impression.candidates if label == 0]
    if not positives or not pool:
        return []
    history = sample_history(impression.history, limit=history_limit,
                             rng_seed=rng)
    samples = []
    for positive in positives:
        picks = rng.choice(len(pool), size=m, replace=len(pool) < m)
        samples.append(TrainingSample(
            history=list(history), positive=positive,
            negatives=[pool[i] for i in picks]))
    return samples


def nce_loss(positive_score, negative_scores):
    """-log of the positive's share of exp-scores, stabilized."""
    scores = np.concatenate(([positive_score],
                             np.asarray(negative_scores, dtype=np.float64)))
    if scores.size < 2:
        raise ValueError("need at least one negative score")
    if not np.isfinite(scores).all():
        raise NumericError("non-finite score in loss input")
    peak = scores.max()
    return float(peak + np.log(np.exp(scores - peak).sum()) - positive_score)


def nce_loss_batch(scores):
    """Summed loss over a (B, 1+M) score tensor, positive in column 0."""
    lse = ad.logsumexp(scores, axis=-1)
    return ad.tsum(ad.sub(lse, ad.select(scores, 0, axis=1)))


@dataclass
class EpochStats:
    epoch: int
    learning_rate: float
    mean_loss: float
    validation: dict


@dataclass
class TrainResult:
    model: object
    best_epoch: int
    best_validation_auc: float
    epochs: list = field(default_factory=list)
    skipped_impressions: int = 0
    dropped_samples: int = 0
    n_samples: int = 0
    aborted: bool = False
    seed: int = 0
    config_digest: str = ""

    def report(self):
        lines = [
            f"seed\t{self.seed}",
            f"config_hash\t{self.config_digest}",
            f"samples\t{self.n_samples}",
            f"skipped_impressions\t{self.skipped_impressions}",
            f"dropped_samples\t{self.dropped_samples}",
            f"aborted\t{str(self.aborted).lower()}",
            f"best_epoch\t{self.best_epoch}",
            f"best_validation_auc\t{self.best_validation_auc:.6f}",
        ]
        for stats in self.epochs:
            prefix = f"epoch{stats.epoch}"
            lines.append(f"{prefix}.learning_rate\t{stats.learning_rate:.8f}")
            lines.append(f"{prefix}.mean_loss\t{stats.mean_loss:.6f}")
            for name in sorted(stats.validation):
                value = stats.validation[name]
                shown = "nan" if value is None else f"{value:.6f}"
                lines.append(f"{prefix}.val_{name}\t{shown}")
        return "\n".join(lines) + "\n"


def _resolve_samples(samples, table):
    """Map news_ids to table rows, dropping samples with unusable docs."""
    resolved, dropped = [], 0
    for sample in samples:
        pos = table.row_of.get(sample.positive)
        negs = [table.row_of.get(nid) for nid in sample.negatives]
        if pos is None or any(n is None for n in negs):
            dropped += 1
            continue
        hist = [table.row_of[nid] for nid in sample.history
                if nid in table.row_of]
        resolved.append((hist, pos, negs))
    return resolved, dropped


def _batch_arrays(resolved, batch_rows):
    """Local index matrices for one mini-batch.

    Returns (unique_rows, hist_idx, hist_mask, cand_idx) where idx
    matrices address positions in unique_rows.
    """
    chosen = [resolved[i] for i in batch_rows]
    unique_rows = sorted({row for hist, pos, negs in chosen
                          for row in [pos, *negs, *hist]})
    local = {row: i for i, row in enumerate(unique_rows)}
    batch = len(chosen)
    horizon = max(1, max(len(hist) for hist, _, _ in chosen))
    n_cand = 1 + len(chosen[0][2])
    hist_idx = np.zeros((batch, horizon), dtype=np.int64)
    hist_mask = np.zeros((batch, horizon), dtype=bool)
    cand_idx = np.zeros((batch, n_cand), dtype=np.int64)
    for i, (hist, pos, negs) in enumerate(chosen):
        hist_idx[i, :len(hist)] = [local[row] for row in hist]
        hist_mask[i, :len(hist)] = True
        cand_idx[i] = [local[pos]] + [local[row] for row in negs]
    return np.array(unique_rows), hist_idx, hist_mask, cand_idx


def train(model, train_logs, val_logs, articles, config):
    """Train in place and return the best-validation-AUC checkpoint state.

    The model ends up loaded with the best epoch's parameters. A NaN
    loss aborts immediately and restores the last good state.
    """
    if not train_logs:
        raise ValueError("no training impressions")
    table = build_document_table(articles, model.vocab,
                                 model.config.n_title, model.config.n_body)
    root = np.random.SeedSequence(config.seed)
    sample_seed, shuffle_seed, dropout_seed = root.spawn(3)

    sample_rng = np.random.default_rng(sample_seed)
    samples, skipped = [], 0
    for log in train_logs:
        built = build_samples(log, config.negatives, rng_seed=sample_rng,
                              history_limit=model.config.history_limit)
        if built:
            samples.extend(built)
        else:
            skipped += 1
    resolved, dropped = _resolve_samples(samples, table)
    if config.max_train_samples and len(resolved) > config.max_train_samples:
        keep = sample_rng.choice(len(resolved), size=config.max_train_samples,
                                 replace=False)
        resolved = [resolved[i] for i in np.sort(keep)]
    if not resolved:
        raise ValueError("no trainable samples after filtering")

    params = model.parameters()
    optimizer = ad.Adam(params, learning_rate=config.learning_rate)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)

    result = TrainResult(
        model=model, best_epoch=-1, best_validation_auc=-np.inf,
        skipped_impressions=skipped, dropped_samples=dropped,
        n_samples=len(resolved), seed=config.seed,
        config_digest=config_hash(model.config, config))
    best_state = model.state_dict()

    for epoch in range(config.epochs):
        lr = config.learning_rate * (0.5 ** epoch if config.lr_halving else 1.0)
        optimizer.learning_rate = lr
        order = shuffle_rng.permutation(len(resolved))
        loss_total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch_rows = order[start:start + config.batch_size]
            unique_rows, hist_idx, hist_mask, cand_idx = _batch_arrays(
                resolved, batch_rows)
            doc_vectors = model.encode_documents(
                table.token_indices[unique_rows],
                table.token_mask[unique_rows],
                dropout_rate=config.dropout, rng=dropout_rng, training=True)
            users = model.encode_users(
                ad.gather(doc_vectors, hist_idx), hist_mask)
            candidates = ad.gather(doc_vectors, cand_idx)
            batch, n_cand = cand_idx.shape
            dim = doc_vectors.shape[1]
            scores = ad.tsum(
                ad.hadamard(ad.reshape(users, (batch, 1, dim)), candidates),
                axis=-1)
            loss = nce_loss_batch(scores)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                model.load_state_dict(best_state)
                result.aborted = True
                return result
            loss_total += loss_value
            optimizer.zero_grad()
            loss.backward()
            if model.embedding.grad is not None:
                model.embedding.grad[0] = 0.0  # padding row stays frozen
            if config.grad_clip:
                ad.clip_global_norm(params, config.grad_clip)
            optimizer.step()

        validation = _validation_metrics(model, table, val_logs)
        result.epochs.append(EpochStats(
            epoch=epoch, learning_rate=lr,
            mean_loss=loss_total / len(resolved), validation=validation))
        val_auc = validation.get("auc")
        if val_auc is not None and val_auc > result.best_validation_auc:
            result.best_validation_auc = val_auc
            result.best_epoch = epoch
            best_state = model.state_dict()
        elif not validation:
            # no validation set: the latest epoch is the checkpoint
            result.best_epoch = epoch
            best_state = model.state_dict()

    model.load_state_dict(best_state)
    if result.best_epoch < 0:
        # no epoch improved on nothing: keep initialization, mark epoch -1
        result.best_validation_auc = float("nan")
    return result


def _validation_metrics(model, table, val_logs):
    if not val_logs:
        return {}
    report = evaluate_scored(model.score_impressions(table, val_logs))
    return dict(report.means)
