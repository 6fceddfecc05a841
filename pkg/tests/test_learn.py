import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog
from sklearn.base import clone

from binpick.errors import DegenerateDataError, ModelFormatError
from binpick.learn import (
    ConfusionMatrix,
    DecisionTree,
    LinearSVMDiscriminator,
    RandomForestDiscriminator,
    TrainingSet,
    derive_seeds,
    dumps_model,
    evaluate,
    format_report,
    gini,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
    svm_predict,
    train_forest,
    train_svm,
)


def lp_separable(X, y) -> bool:
    # feasibility of y_i (w . x_i + b) >= 1
    A = -y[:, None] * np.column_stack([X, np.ones(len(X))])
    res = linprog(np.zeros(X.shape[1] + 1), A_ub=A, b_ub=-np.ones(len(X)),
                  bounds=[(None, None)] * (X.shape[1] + 1), method="highs")
    return res.status == 0


def separable_cloud(seed, n=100):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(4 * n, 2))
    score = X @ [0.8, -0.6] + 0.1
    keep = np.abs(score) > 0.15
    X, score = X[keep][:n], score[keep][:n]
    return X, np.where(score > 0, 1, -1)


class TestSVM:
    def test_separable_pair(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0]])
        y = np.array([1, -1])
        m = LinearSVMDiscriminator().fit(X, y)
        assert m.predict(X).tolist() == [1, -1]
        assert svm_predict(m, [0.0, 0.0])[0] == 1

    def test_certified_separable_set(self):
        X, y = separable_cloud(0)
        assert lp_separable(X, y)
        m = LinearSVMDiscriminator(C=100.0, epochs=300).fit(X, y)
        assert np.all(m.predict(X) == y)

    def test_small_imbalanced_set_trains(self, rng):
        X = np.vstack([rng.normal(0, 1, (37, 2)), rng.normal(3, 1, (13, 2))])
        y = np.r_[np.ones(37, int), -np.ones(13, int)]
        train_svm(TrainingSet(X, y, "svm2d"))

    def test_margin_matches_formula(self, rng):
        X, y = separable_cloud(1, 60)
        m = LinearSVMDiscriminator().fit(X, y)
        F = rng.normal(size=(20, 2))
        w, b = m.coef_, m.intercept_
        expected = [(f[0] * w[0] + f[1] * w[1] + b) / np.hypot(*w) for f in F]
        np.testing.assert_allclose(m.margin(F), expected, atol=1e-12)

    def test_boundary_counts_as_success(self):
        m = LinearSVMDiscriminator().fit([[0.0, 0.0], [1.0, 1.0]], [1, -1])
        m.coef_, m.intercept_ = np.array([1.0, 1.0]), 0.0
        x = np.array([[0.5, -0.5]])
        assert m.margin(x)[0] == 0.0
        assert m.predict(x)[0] == 1

    @pytest.mark.invariant
    @given(st.integers(0, 2**32 - 1))
    def test_loss_never_increases(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 2))
        y = np.where(rng.uniform(size=40) < 0.5, 1, -1)
        y[:2] = [1, -1]
        m = LinearSVMDiscriminator(epochs=30, random_state=seed).fit(X, y)
        assert np.all(np.diff(m.loss_curve_) <= 0)

    def test_single_class_is_degenerate(self):
        with pytest.raises(DegenerateDataError):
            LinearSVMDiscriminator().fit([[0.0, 1.0], [1.0, 0.0]], [1, 1])

    def test_estimator_api(self):
        m = LinearSVMDiscriminator(C=2.0)
        assert clone(m).get_params()["C"] == 2.0


def exhaustive_split(X, s):
    best = None
    n = len(s)
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (lo + hi)
            left = X[:, j] <= thr
            nl, nr = left.sum(), (~left).sum()
            imp = (nl * gini(s[left].sum(), nl) + nr * gini(s[~left].sum(), nr)) / n
            if best is None or imp < best[2] - 1e-15:
                best = (j, thr, imp)
    return best


class TestForest:
    def test_single_informative_feature(self, rng):
        X = rng.integers(0, 5, size=(60, 4)).astype(float)
        y = np.where(X[:, 0] > 0, 1, -1)
        y[:2] = [1, -1]
        X[:2, 0] = [3, 0]
        m = RandomForestDiscriminator(20, 5, 0.7, random_state=1).fit(X, y)
        assert all(t.depth <= 1 for t in m.estimators_)
        assert np.all(m.predict(X) == y)

    def test_default_hyperparameters_on_small_set(self, rng):
        X = rng.integers(0, 6, size=(98, 25)).astype(float)
        y = np.r_[np.ones(71, int), -np.ones(27, int)]
        m = train_forest(TrainingSet(X, y, "hist"))
        assert len(m.estimators_) == 200

    def test_stump_matches_exhaustive_gini(self):
        X = np.array([[1.0, 5.0], [2.0, 3.0], [3.0, 4.0],
                      [4.0, 1.0], [5.0, 2.0], [6.0, 0.0]])
        y = np.array([1, 1, -1, 1, -1, -1])
        m = RandomForestDiscriminator(1, 1, 1.0, random_state=0).fit(X, y)
        tree = m.estimators_[0]
        j, thr, _ = exhaustive_split(X, y == 1)
        assert (tree.feature[0], tree.threshold[0]) == (j, thr)

    @pytest.mark.invariant
    @given(st.integers(0, 2**32 - 1))
    def test_splits_never_hurt(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.integers(0, 4, size=(50, 3)).astype(float)
        s = rng.uniform(size=50) < 0.4
        tree = DecisionTree(max_depth=4).fit(X, s)
        for node in range(len(tree.feature)):
            if tree.feature[node] < 0:
                continue
            kids = [tree.left[node], tree.right[node]]
            parent = gini(tree.n_success[node], tree.n_total[node])
            child = sum(tree.n_total[c] * gini(tree.n_success[c], tree.n_total[c])
                        for c in kids) / tree.n_total[node]
            assert child < parent
            assert sum(tree.n_total[c] for c in kids) == tree.n_total[node]

    def toy_forest(self, leaf_rates):
        m = RandomForestDiscriminator(len(leaf_rates))
        m.estimators_ = []
        for thr, (left, right) in leaf_rates:
            t = DecisionTree(max_depth=1)
            t.feature = np.array([0, -1, -1])
            t.threshold = np.array([thr, 0.0, 0.0])
            t.left = np.array([1, -1, -1])
            t.right = np.array([2, -1, -1])
            t.n_success = np.array([0, left[0], right[0]])
            t.n_total = np.array([1, left[1], right[1]])
            m.estimators_.append(t)
        m.n_features_in_ = 1
        m.classes_ = np.array([-1, 1])
        return m

    def test_probability_is_mean_of_leaves(self):
        pure = self.toy_forest([(0.5, ((3, 3), (2, 2)))])
        assert pure.success_probability([[0.0], [1.0]]).tolist() == [1.0, 1.0]
        two = self.toy_forest([(0.5, ((1, 1), (1, 1))), (0.5, ((0, 2), (0, 2)))])
        assert two.success_probability([[0.0]])[0] == 0.5
        spec = [(0.5, ((1, 4), (3, 3))), (1.5, ((2, 2), (0, 5))), (-1.0, ((0, 1), (1, 3)))]
        three = self.toy_forest(spec)
        for x in (0.0, 1.0, 2.0):
            rates = []
            for thr, (left, right) in spec:
                k, n = left if x <= thr else right
                rates.append(k / n)
            assert three.success_probability([[x]])[0] == pytest.approx(np.mean(rates), abs=1e-15)

    @pytest.mark.invariant
    def test_probability_bounds_and_tree_order(self, rng):
        X = rng.integers(0, 5, size=(80, 6)).astype(float)
        y = np.where(rng.uniform(size=80) < 0.5, 1, -1)
        m = RandomForestDiscriminator(15, 3, 0.7, random_state=2).fit(X, y)
        p = m.success_probability(X)
        assert np.all((p >= 0) & (p <= 1))
        shuffled = clone(m)
        shuffled.estimators_ = m.estimators_[::-1]
        shuffled.n_features_in_, shuffled.classes_ = m.n_features_in_, m.classes_
        np.testing.assert_allclose(shuffled.success_probability(X), p, atol=1e-15)

    @pytest.mark.invariant
    def test_retraining_and_parallel_are_identical(self, rng):
        X = rng.integers(0, 5, size=(80, 25)).astype(float)
        y = np.where(rng.uniform(size=80) < 0.5, 1, -1)
        a = RandomForestDiscriminator(30, 5, 0.7, random_state=9).fit(X, y)
        b = RandomForestDiscriminator(30, 5, 0.7, random_state=9).fit(X, y)
        c = RandomForestDiscriminator(30, 5, 0.7, random_state=9, n_jobs=2).fit(X, y)
        assert dumps_model(a) == dumps_model(b) == dumps_model(c)

    def test_seed_stream_is_stable(self):
        assert derive_seeds(0, 3) == derive_seeds(0, 5)[:3]
        assert len(set(derive_seeds(1, 100))) == 100


class TestConfusion:
    def test_table_counts(self):
        a = ConfusionMatrix(33, 7, 0, 10)
        assert round(100 * a.filtered_success_rate, 1) == 100.0
        assert round(100 * a.identified_success_fraction, 1) == 66.0
        b = ConfusionMatrix(39, 3, 3, 5)
        assert round(100 * b.filtered_success_rate, 1) == 92.9
        assert round(100 * b.identified_success_fraction, 1) == 78.0
        assert "92.9%" in format_report(b) and "78.0%" in format_report(b)

    def test_perfect_classifier(self):
        y = np.array([1, -1] * 5)
        cm = ConfusionMatrix.from_labels(y, y)
        assert cm.success_identified_failure == cm.failure_identified_success == 0

    def test_evaluate_model(self, rng):
        X, y = separable_cloud(2, 50)
        model = LinearSVMDiscriminator(C=100.0, epochs=300).fit(X, y)
        cm, rates = evaluate(model, TrainingSet(X, y, "svm2d"))
        assert cm.total == 50 and rates["accuracy"] == 1.0


class TestModelFiles:
    def test_round_trip(self, tmp_path, rng):
        X = rng.integers(0, 5, size=(40, 25)).astype(float)
        y = np.where(X[:, 3] > 2, 1, -1)
        forest = RandomForestDiscriminator(5, 3, 0.7).fit(X, y)
        save_model(tmp_path / "f.json", forest)
        back = load_model(tmp_path / "f.json", "hist")
        np.testing.assert_array_equal(back.success_probability(X), forest.success_probability(X))
        assert dumps_model(back) == dumps_model(forest)
        svm = LinearSVMDiscriminator().fit(X[:, :2], y)
        again = model_from_dict(model_to_dict(svm))
        np.testing.assert_array_equal(again.decision_function(X[:, :2]),
                                      svm.decision_function(X[:, :2]))

    def test_kind_mismatch(self, tmp_path):
        svm = LinearSVMDiscriminator().fit([[0.0, 0.0], [1.0, 1.0]], [1, -1])
        save_model(tmp_path / "s.json", svm)
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "s.json", "hist")
        with pytest.raises(ModelFormatError):
            model_from_dict({"format": "other"})


def test_gini_values():
    for k, n in itertools.product(range(5), range(1, 5)):
        if k <= n:
            p = k / n
            assert gini(k, n) == pytest.approx(1 - p * p - (1 - p) ** 2, abs=1e-15)
