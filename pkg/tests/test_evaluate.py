import numpy as np
import pytest

from kdalign.errors import DataError
from kdalign.evaluate import (
    Dataset,
    MetricReport,
    auprc,
    load_csv,
    rec_at_k,
    rec_at_k_detail,
    save_csv,
    split_dataset,
)
from kdalign.rules import parse_rule
from kdalign.synthetic import make_synthetic
from oracles import average_precision, recall_at_k


class TestCsv:
    def test_roundtrip(self, tmp_path):
        data, _ = make_synthetic(seed=1, n_normal=40, n_direct=5, n_rule=5)
        path = tmp_path / "data.csv"
        save_csv(data, path)
        again = load_csv(path)
        np.testing.assert_array_equal(again.X, data.X)
        np.testing.assert_array_equal(again.y, data.y)
        assert again.feature_names == data.feature_names

    def test_split_column_roundtrip(self, tmp_path):
        data = Dataset(
            np.arange(12, dtype=float).reshape(6, 2),
            np.array([0, 0, 0, 1, 1, 1]),
            ["a", "b"],
            split=np.array(["train", "train", "val", "train", "val", "test"]),
        )
        path = tmp_path / "data.csv"
        save_csv(data, path)
        again = load_csv(path)
        np.testing.assert_array_equal(again.split, data.split)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("")
        with pytest.raises(DataError, match="header"):
            load_csv(path)

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(DataError, match="label"):
            load_csv(path)

    def test_malformed_cell_coordinates(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,label\n1,2,0\n1,oops,1\n")
        with pytest.raises(DataError, match="row 3, column 'b'"):
            load_csv(path)

    def test_bad_label_value(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,label\n1,2\n")
        with pytest.raises(DataError, match="expected 0 or 1"):
            load_csv(path)

    def test_bad_split_tag(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,label,split\n1,0,dev\n")
        with pytest.raises(DataError, match="unknown tag"):
            load_csv(path)


def toy_dataset(n=1000, anomaly_rate=0.1, seed=0):
    rng = np.random.default_rng(seed)
    n_anom = int(n * anomaly_rate)
    X = np.vstack([rng.normal(0, 1, size=(n - n_anom, 2)), rng.normal(5, 1, size=(n_anom, 2))])
    y = np.r_[np.zeros(n - n_anom, dtype=int), np.ones(n_anom, dtype=int)]
    order = rng.permutation(n)
    return Dataset(X[order], y[order], ["a", "b"])


class TestSplit:
    def test_split_sizes(self):
        data = toy_dataset(1000)
        split = split_dataset(data, [], k_labeled=10, seed=0)
        n_train = split.train_idx.size
        n_val = split.val_idx.size
        n_test = split.test_idx.size
        assert n_train + n_val + n_test == 1000
        assert abs(n_train - 700) <= 2
        assert abs(n_val - 100) <= 2
        assert abs(n_test - 200) <= 2

    def test_disjoint_and_exhaustive(self):
        data = toy_dataset(500, seed=3)
        split = split_dataset(data, [], k_labeled=5, seed=1)
        combined = np.concatenate(
            [split.train_idx, split.val_idx, split.test_idx, split.deleted_idx]
        )
        assert np.sort(combined).tolist() == list(range(500))

    def test_stratification_keeps_val_positives(self):
        data = toy_dataset(400, anomaly_rate=0.05, seed=4)
        split = split_dataset(data, [], k_labeled=3, seed=2)
        assert data.y[split.val_idx].sum() >= 1
        assert data.y[split.test_idx].sum() >= 1

    def test_rule_deletion_and_relabeling(self):
        # rules match a known subset of training anomalies
        rng = np.random.default_rng(7)
        X = np.vstack([rng.normal(0, 1, size=(970, 2)), rng.normal(6, 0.5, size=(30, 2))])
        y = np.r_[np.zeros(970, dtype=int), np.ones(30, dtype=int)]
        data = Dataset(X, y, ["a", "b"])
        rules = [parse_rule("IF a > 6 AND b > 6 THEN anomaly IS true")]
        split = split_dataset(data, rules, k_labeled=10, seed=0)
        # every deleted sample is a rule-matched training anomaly
        assert (data.y[split.deleted_idx] == 1).all()
        from kdalign.rules import any_rule_mask

        matched = any_rule_mask(rules, data.X, data.name_to_index())
        assert matched[split.deleted_idx].all()
        # no rule-matched anomaly remains in train
        train_matched = matched[split.train_idx] & (data.y[split.train_idx] == 1)
        assert not train_matched.any()
        # exactly k labeled anomalies; the rest relabeled into the pool
        assert split.labeled_anomaly_idx.size == 10
        assert split.train_labels.sum() == 10
        remaining = (data.y[split.train_idx] == 1).sum()
        assert remaining >= 10

    def test_shortfall_error(self):
        data = toy_dataset(200, anomaly_rate=0.06, seed=5)
        rules = [parse_rule("IF a > -100 THEN anomaly IS true")]  # matches everything
        with pytest.raises(DataError, match="only 0 unmatched"):
            split_dataset(data, rules, k_labeled=10, seed=0)

    def test_counting_example(self):
        # 20 training anomalies, rules match 8 of them, k=10 labeled, 2 relabeled
        rng = np.random.default_rng(11)
        X_norm = rng.normal(0, 1, size=(180, 1))
        X_anom_matched = rng.uniform(10, 11, size=(8, 1))
        X_anom_free = rng.uniform(5, 6, size=(12, 1))
        X = np.vstack([X_norm, X_anom_matched, X_anom_free])
        y = np.r_[np.zeros(180, dtype=int), np.ones(20, dtype=int)]
        split_tags = np.array(["train"] * 200)
        data = Dataset(X, y, ["a"], split=split_tags)
        rules = [parse_rule("IF a > 9 THEN anomaly IS true")]
        split = split_dataset(data, rules, k_labeled=10, seed=3)
        assert split.deleted_idx.size == 8
        assert split.labeled_anomaly_idx.size == 10
        unlabeled_anoms = (data.y[split.train_idx] == 1).sum() - 10
        assert unlabeled_anoms == 2

    def test_deterministic_per_seed(self):
        data = toy_dataset(300, seed=6)
        a = split_dataset(data, [], k_labeled=5, seed=9)
        b = split_dataset(data, [], k_labeled=5, seed=9)
        np.testing.assert_array_equal(a.train_idx, b.train_idx)
        np.testing.assert_array_equal(a.labeled_anomaly_idx, b.labeled_anomaly_idx)
        c = split_dataset(data, [], k_labeled=5, seed=10)
        assert not np.array_equal(a.train_idx, c.train_idx)

    def test_split_column_bypasses_random_split(self):
        data = toy_dataset(100, seed=8)
        tags = np.array(["train"] * 60 + ["val"] * 20 + ["test"] * 20)
        data = Dataset(data.X, data.y, data.feature_names, split=tags)
        split = split_dataset(data, [], k_labeled=1, seed=0)
        np.testing.assert_array_equal(split.val_idx, np.arange(60, 80))
        np.testing.assert_array_equal(split.test_idx, np.arange(80, 100))


class TestAuprc:
    def test_perfect_ranking(self):
        assert auprc(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0])) == 1.0

    def test_hand_summed_example(self):
        value = auprc(np.array([0.9, 0.8, 0.7, 0.6]), np.array([1, 0, 1, 0]))
        assert value == pytest.approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0), rel=1e-12)

    def test_all_equal_scores_give_prevalence(self):
        labels = np.array([1, 0, 0, 1, 0, 0, 0, 0, 1, 0])
        value = auprc(np.full(10, 0.5), labels)
        assert value == pytest.approx(0.3, rel=1e-12)

    def test_no_positives_raises(self):
        with pytest.raises(ValueError):
            auprc(np.array([0.1, 0.2]), np.array([0, 0]))

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_bruteforce_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 60))
        scores = np.round(rng.random(n), 2)  # rounded to force ties
        labels = rng.integers(0, 2, size=n)
        if labels.sum() == 0:
            labels[int(rng.integers(n))] = 1
        assert auprc(scores, labels) == pytest.approx(
            average_precision(scores, labels), abs=1e-12
        )

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(123)
        scores = rng.random(40)
        labels = rng.integers(0, 2, size=40)
        labels[0] = 1
        base = auprc(scores, labels)
        assert auprc(np.exp(3 * scores), labels) == pytest.approx(base, abs=1e-12)
        assert auprc(scores**3 + 7, labels) == pytest.approx(base, abs=1e-12)


class TestRecAtK:
    def test_perfect_ranking(self):
        assert rec_at_k(np.array([0.9, 0.8, 0.1, 0.05]), np.array([1, 1, 0, 0])) == 1.0

    def test_inverted_ranking(self):
        assert rec_at_k(np.array([0.1, 0.2, 0.8, 0.9]), np.array([1, 1, 0, 0])) == 0.0

    def test_equals_precision_at_k(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            n = int(rng.integers(4, 50))
            scores = np.round(rng.random(n), 2)
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[0] = 1
            k = int(labels.sum())
            value, k_used, _ = rec_at_k_detail(scores, labels)
            assert k_used == k
            order = np.argsort(-scores, kind="stable")
            precision_at_k = labels[order[:k]].sum() / k
            assert value == precision_at_k
            # F1 at this k: precision == recall -> F1 equals both
            if value > 0:
                f1 = 2 * value * precision_at_k / (value + precision_at_k)
                assert f1 == pytest.approx(value)

    def test_matches_oracle(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            n = int(rng.integers(3, 40))
            scores = np.round(rng.random(n), 1)
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[-1] = 1
            assert rec_at_k(scores, labels) == pytest.approx(recall_at_k(scores, labels))

    def test_tie_at_cut_detected(self):
        scores = np.array([0.9, 0.5, 0.5, 0.1])
        labels = np.array([1, 1, 0, 0])
        value, k, tie = rec_at_k_detail(scores, labels)
        assert k == 2 and tie is True
        assert value == 1.0  # stable order keeps index 1 before index 2


class TestMetricReport:
    def test_table_and_delimited(self):
        report = MetricReport()
        report.add(seed=0, auprc=0.5, rec_at_k=0.4)
        report.add(seed=1, auprc=0.7, rec_at_k=0.6)
        assert report.mean("auprc") == pytest.approx(0.6)
        table = report.to_table()
        assert "auprc" in table and "0.500000" in table
        csv_text = report.to_delimited()
        assert csv_text.splitlines()[0] == "seed,auprc,rec_at_k"
