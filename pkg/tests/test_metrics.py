import numpy as np
import pytest

from topicrec import metrics as mt


def imp(scores, labels):
    return mt.ScoredImpression(np.array(scores, float), np.array(labels))


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------

def oracle_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        return None
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


def oracle_rank_order(scores):
    # descending score, ties by original index
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def oracle_mrr(scores, labels):
    if 1 not in labels:
        return None
    order = oracle_rank_order(scores)
    recips = [1.0 / (rank + 1) for rank, i in enumerate(order) if labels[i] == 1]
    return sum(recips) / len(recips)


def oracle_ndcg(scores, labels, k):
    if 1 not in labels:
        return None
    order = oracle_rank_order(scores)
    dcg = sum((2 ** labels[i] - 1) / np.log2(rank + 2)
              for rank, i in enumerate(order[:k]))
    ideal = sorted(labels, reverse=True)
    idcg = sum((2 ** y - 1) / np.log2(rank + 2)
               for rank, y in enumerate(ideal[:k]))
    return dcg / idcg


# ---------------------------------------------------------------------------
# hand-value cases
# ---------------------------------------------------------------------------

def test_auc_perfect_separation():
    assert mt.auc(imp([0.9, 0.1], [1, 0])) == 1.0


def test_auc_tie_counts_half():
    assert mt.auc(imp([0.5, 0.5], [1, 0])) == 0.5


def test_auc_one_win_one_loss():
    assert mt.auc(imp([0.3, 0.2, 0.1], [0, 1, 0])) == 0.5


def test_auc_single_class_is_undefined():
    assert mt.auc(imp([0.3, 0.2], [1, 1])) is None
    assert mt.auc(imp([0.3, 0.2], [0, 0])) is None


def test_mrr_top_rank():
    assert mt.mrr(imp([0.9, 0.1], [1, 0])) == 1.0


def test_mrr_second_rank():
    assert mt.mrr(imp([0.5, 0.4, 0.3], [0, 1, 0])) == 0.5


def test_mrr_two_positives():
    assert mt.mrr(imp([0.9, 0.8, 0.1], [1, 1, 0])) == pytest.approx(0.75)


def test_mrr_tie_broken_by_original_index():
    # equal scores: candidate 0 outranks candidate 1
    assert mt.mrr(imp([0.5, 0.5], [0, 1])) == 0.5
    assert mt.mrr(imp([0.5, 0.5], [1, 0])) == 1.0


def test_ndcg_ideal_order_is_one():
    assert mt.ndcg_at_k(imp([0.9, 0.8, 0.1], [1, 1, 0]), 5) == pytest.approx(1.0)


def test_ndcg_hand_value():
    expected = (1.0 / np.log2(3)) / 1.0
    assert mt.ndcg_at_k(imp([0.1, 0.9], [1, 0]), 2) == pytest.approx(expected)
    assert expected == pytest.approx(0.6309, abs=1e-4)


def test_ndcg_k_beyond_length_truncates():
    scored = imp([0.3, 0.9, 0.5], [1, 0, 1])
    assert mt.ndcg_at_k(scored, 3) == mt.ndcg_at_k(scored, 50)


def test_ndcg_no_positive_is_undefined():
    assert mt.ndcg_at_k(imp([0.3, 0.2], [0, 0]), 5) is None


# ---------------------------------------------------------------------------
# oracle agreement and rank-only dependence
# ---------------------------------------------------------------------------

def random_impression(rng):
    n = int(rng.integers(2, 12))
    scores = np.round(rng.normal(size=n), 2)  # rounding forces ties
    labels = rng.integers(0, 2, size=n)
    return scores, labels


def test_metrics_match_brute_force_oracles():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(1000):
        scores, labels = random_impression(rng)
        scored = imp(scores, labels)
        for fast, slow in [
            (mt.auc(scored), oracle_auc(list(scores), list(labels))),
            (mt.mrr(scored), oracle_mrr(list(scores), list(labels))),
            (mt.ndcg_at_k(scored, 5), oracle_ndcg(scores, list(labels), 5)),
            (mt.ndcg_at_k(scored, 10), oracle_ndcg(scores, list(labels), 10)),
        ]:
            if slow is None:
                assert fast is None
            else:
                assert fast == pytest.approx(slow, abs=1e-12)
                checked += 1
    assert checked > 1000


def test_auc_equals_pair_counting_exactly():
    rng = np.random.default_rng(7)
    for _ in range(300):
        scores, labels = random_impression(rng)
        if len(set(labels)) < 2:
            labels[0], labels[1] = 0, 1
        fast = mt.auc(imp(scores, labels))
        slow = oracle_auc(list(scores), list(labels))
        assert fast == slow  # bit-exact, both are sums of 1.0 and 0.5 terms


def test_metrics_invariant_under_monotone_transform():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(2, 10))
        scores = rng.normal(size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        a = imp(scores, labels)
        b = imp(np.exp(3.0 * scores) + 7.0, labels)  # strictly increasing map
        assert mt.auc(a) == pytest.approx(mt.auc(b), abs=1e-12)
        assert mt.mrr(a) == pytest.approx(mt.mrr(b), abs=1e-12)
        assert mt.ndcg_at_k(a, 5) == pytest.approx(mt.ndcg_at_k(b, 5), abs=1e-12)


def test_random_scores_give_half_auc():
    rng = np.random.default_rng(9)
    impressions = []
    for _ in range(2000):
        n = int(rng.integers(4, 12))
        labels = np.zeros(n, dtype=int)
        labels[rng.integers(0, n)] = 1
        impressions.append(imp(rng.normal(size=n), labels))
    report = mt.evaluate_scored(impressions)
    assert abs(report.means["auc"] - 0.5) < 0.02


def test_report_aggregation_and_exclusions():
    impressions = [
        imp([0.9, 0.1], [1, 0]),  # auc 1.0
        imp([0.1, 0.9], [1, 0]),  # auc 0.0
        imp([0.5, 0.4], [1, 1]),  # auc undefined, mrr/ndcg defined
        imp([0.5, 0.4], [0, 0]),  # everything undefined
    ]
    report = mt.evaluate_scored(impressions)
    assert report.means["auc"] == pytest.approx(0.5)
    assert report.excluded["auc"] == 2
    assert report.excluded["mrr"] == 1
    assert report.n_impressions == 4


def test_report_tsv_percent_formatting():
    report = mt.evaluate_scored([imp([0.9, 0.1], [1, 0])])
    header, row = report.to_tsv().strip().split("\n")
    assert header.split("\t") == ["AUC", "MRR", "NDCG@5", "NDCG@10"]
    assert row.split("\t") == ["100.00", "100.00", "100.00", "100.00"]


def test_report_text_is_key_value():
    report = mt.evaluate_scored([imp([0.9, 0.1], [1, 0])])
    text = report.to_text()
    assert "auc\t1.000000" in text
    assert "impressions\t1" in text
