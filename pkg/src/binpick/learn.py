"""Pick-outcome discriminators and their evaluation.

Labels follow the +1 (success) / -1 (failure) convention throughout.  Both
estimators are scikit-learn compatible (``get_params``, ``fit``,
``predict``), so they can be cloned, cross-validated or put in a pipeline.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import DegenerateDataError, ModelFormatError
from .features import FEATURE_KINDS

MODEL_FORMAT = "binpick-model/1"
_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    z = (state + _GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seeds(master: int, n: int) -> list[int]:
    """The first ``n`` outputs of a splitmix64 stream seeded with ``master``."""
    base = int(master) & _MASK64
    return [splitmix64((base + k * _GOLDEN_GAMMA) & _MASK64) for k in range(n)]


def _check_labels(y):
    y = np.asarray(y)
    labels = set(np.unique(y).tolist())
    if not labels <= {-1, 1}:
        raise ValueError("labels must be +1 (success) or -1 (failure)")
    if labels != {-1, 1}:
        raise DegenerateDataError("training data needs both success and failure rows")
    return y.astype(int)


@dataclass
class TrainingSet:
    X: np.ndarray
    y: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"kind must be one of {FEATURE_KINDS}")
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be 2-D with one row per label")
        if self.kind == "svm2d" and self.X.shape[1] != 2:
            raise ValueError("svm2d rows must have 2 columns")

    def __len__(self):
        return len(self.y)


class LinearSVMDiscriminator(ClassifierMixin, BaseEstimator):
    """Soft-margin linear SVM trained by seeded subgradient descent.

    Minimises ``0.5 * |w|^2 + C * sum(hinge)`` on standardised inputs.  Each
    epoch is one shuffled pass of per-sample subgradient steps; a pass is kept
    only if it lowers the full objective, otherwise it is discarded and the
    step size halved, so ``loss_curve_`` never increases.
    """

    def __init__(self, C=1.0, epochs=200, learning_rate=0.5, random_state=0):
        self.C = C
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _objective(self, w, b, Xs, y):
        hinge = np.maximum(0.0, 1.0 - y * (Xs @ w + b))
        return 0.5 * (w @ w) / (self.C * len(y)) + hinge.mean()

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        y = _check_labels(y)
        if not self.C > 0:
            raise ValueError("C must be positive")
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        Xs = (X - mean) / scale
        m, p = Xs.shape
        lam = 1.0 / (self.C * m)
        rng = np.random.default_rng(self.random_state)

        w, b = np.zeros(p), 0.0
        loss = self._objective(w, b, Xs, y)
        curve = [loss]
        eta = float(self.learning_rate)
        for _ in range(int(self.epochs)):
            w_new, b_new = w.copy(), b
            for i in rng.permutation(m):
                active = y[i] * (Xs[i] @ w_new + b_new) < 1.0
                w_new *= 1.0 - eta * lam
                if active:
                    w_new += eta * y[i] * Xs[i]
                    b_new += eta * y[i]
            new_loss = self._objective(w_new, b_new, Xs, y)
            if new_loss <= loss:
                w, b, loss = w_new, b_new, new_loss
            else:
                eta *= 0.5
            curve.append(loss)

        self.coef_ = w / scale
        self.intercept_ = float(b - w @ (mean / scale))
        self.loss_curve_ = np.array(curve)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_

    def margin(self, X):
        """Signed distance to the decision boundary."""
        norm = float(np.linalg.norm(self.coef_))
        score = self.decision_function(X)
        return score / norm if norm > 0 else np.zeros_like(score)

    def predict(self, X):
        # boundary points count as success
        return np.where(self.decision_function(X) >= 0.0, 1, -1)


class DecisionTree:
    """Binary tree over dense features; leaves keep success / total counts."""

    def __init__(self, max_depth=5, max_features=None):
        self.max_depth = max_depth
        self.max_features = max_features

    def fit(self, X, success, rng=None):
        self.feature, self.threshold = [], []
        self.left, self.right = [], []
        self.n_success, self.n_total = [], []
        self.n_features_ = X.shape[1]
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._grow(X, np.asarray(success, dtype=bool), 0)
        for name in ("feature", "left", "right", "n_success", "n_total"):
            setattr(self, name, np.array(getattr(self, name), dtype=np.int64))
        self.threshold = np.array(self.threshold, dtype=float)
        del self._rng
        return self

    def _new_node(self):
        for lst in (self.feature, self.left, self.right):
            lst.append(-1)
        self.threshold.append(0.0)
        self.n_success.append(0)
        self.n_total.append(0)
        return len(self.feature) - 1

    def _grow(self, X, s, depth):
        node = self._new_node()
        n = len(s)
        k = int(s.sum())
        self.n_success[node] = k
        self.n_total[node] = n
        if depth >= self.max_depth or n < 2 or k == 0 or k == n:
            return node
        split = best_split(X, s, self._feature_subset())
        if split is None:
            return node
        j, thr, impurity = split
        if not impurity < gini(k, n) - 1e-12:
            return node
        go_left = X[:, j] <= thr
        self.feature[node] = j
        self.threshold[node] = thr
        self.left[node] = self._grow(X[go_left], s[go_left], depth + 1)
        self.right[node] = self._grow(X[~go_left], s[~go_left], depth + 1)
        return node

    def _feature_subset(self):
        p = self.n_features_
        if self.max_features is None:
            return np.arange(p)
        if self.max_features == "sqrt":
            q = max(1, int(math.isqrt(p)))
        else:
            q = int(self.max_features)
        return np.sort(self._rng.choice(p, size=min(q, p), replace=False))

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def apply(self, X):
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        for _ in range(self.max_depth + 1):
            f = self.feature[node]
            split = f >= 0
            if not split.any():
                break
            go_left = X[rows, np.where(split, f, 0)] <= self.threshold[node]
            node = np.where(split, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict_rate(self, X):
        leaf = self.apply(X)
        return self.n_success[leaf] / self.n_total[leaf]

    def to_dict(self):
        return {
            "max_depth": self.max_depth,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "n_success": self.n_success.tolist(),
            "n_total": self.n_total.tolist(),
        }

    @classmethod
    def from_dict(cls, data, n_features):
        tree = cls(max_depth=data["max_depth"])
        for name in ("feature", "left", "right", "n_success", "n_total"):
            setattr(tree, name, np.array(data[name], dtype=np.int64))
        tree.threshold = np.array(data["threshold"], dtype=float)
        tree.n_features_ = n_features
        return tree


def gini(k, n):
    """Gini impurity of a node holding ``k`` successes out of ``n`` rows."""
    if n == 0:
        return 0.0
    p = k / n
    return 2.0 * p * (1.0 - p)


def best_split(X, success, features):
    """Lowest weighted-Gini split over ``features`` at value midpoints.

    Returns ``(feature, threshold, weighted_impurity)`` or None when no
    feature has two distinct values.  Ties go to the lower feature index and
    then the lower threshold.
    """
    n = len(success)
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    ys = success[order].astype(np.int64)
    s_left = np.cumsum(ys, axis=0)[:-1]
    n_left = np.arange(1, n)[:, None]
    n_right = n - n_left
    s_right = ys.sum(axis=0)[None, :] - s_left
    weighted = (
        2.0 * s_left * (n_left - s_left) / n_left
        + 2.0 * s_right * (n_right - s_right) / n_right
    ) / n
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return None
    weighted = np.where(valid, weighted, np.inf)
    # feature-major scan so ties resolve to the lowest feature, then threshold
    flat = int(np.argmin(weighted.T))
    col, row = divmod(flat, n - 1)
    lo, hi = xs[row, col], xs[row + 1, col]
    thr = 0.5 * (lo + hi)
    if not thr < hi:
        thr = lo
    return int(features[col]), float(thr), float(weighted[row, col])


def _fit_tree(X, success, seed, n_rows, max_depth, max_features):
    rng = np.random.default_rng(seed)
    rows = rng.choice(len(success), size=n_rows, replace=False)
    return DecisionTree(max_depth, max_features).fit(X[rows], success[rows], rng)


class RandomForestDiscriminator(ClassifierMixin, BaseEstimator):
    """Forest of Gini trees, each grown on a subsample drawn without replacement.

    The success probability is the mean of the leaf success rates.  Tree
    seeds come from a splitmix64 stream over ``random_state``, so serial and
    parallel (``n_jobs``) training build identical forests.
    """

    def __init__(self, n_estimators=200, max_depth=5, subsample=0.7,
                 max_features=None, random_state=0, n_jobs=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.subsample = subsample
        self.max_features = max_features
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        y = _check_labels(y)
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be at least 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        n_rows = math.ceil(self.subsample * len(y))
        seeds = derive_seeds(self.random_state, self.n_estimators)
        success = y == 1
        jobs = (delayed(_fit_tree)(X, success, s, n_rows, self.max_depth, self.max_features)
                for s in seeds)
        if self.n_jobs in (None, 1):
            self.estimators_ = [job[0](*job[1], **job[2]) for job in jobs]
        else:
            self.estimators_ = Parallel(n_jobs=self.n_jobs)(jobs)
        return self

    def success_probability(self, X):
        check_is_fitted(self, "estimators_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        total = np.zeros(len(X))
        for tree in self.estimators_:
            total += tree.predict_rate(X)
        return total / len(self.estimators_)

    def predict_proba(self, X):
        p = self.success_probability(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return np.where(self.success_probability(X) >= 0.5, 1, -1)


def train_svm(data: TrainingSet, C=1.0, epochs=200, seed=0) -> LinearSVMDiscriminator:
    if data.kind != "svm2d":
        raise ValueError("the linear SVM is trained on svm2d features")
    return LinearSVMDiscriminator(C=C, epochs=epochs, random_state=seed).fit(data.X, data.y)


def svm_predict(model: LinearSVMDiscriminator, f):
    """Label and signed margin distance for one 2-D feature."""
    x = np.asarray(f, dtype=float).reshape(1, -1)
    return int(model.predict(x)[0]), float(model.margin(x)[0])


def train_forest(data: TrainingSet, n_trees=200, ratio=0.7, max_depth=5, seed=0,
                 max_features=None, n_jobs=None) -> RandomForestDiscriminator:
    if data.kind != "hist":
        raise ValueError("the random forest is trained on hist features")
    est = RandomForestDiscriminator(n_trees, max_depth, ratio, max_features, seed, n_jobs)
    return est.fit(data.X, data.y)


def forest_predict(model: RandomForestDiscriminator, f) -> float:
    return float(model.success_probability(np.asarray(f, dtype=float).reshape(1, -1))[0])


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts laid out as (actual success|failure) x (identified success|failure)."""

    success_identified_success: int
    success_identified_failure: int
    failure_identified_success: int
    failure_identified_failure: int

    @classmethod
    def from_labels(cls, actual, identified) -> "ConfusionMatrix":
        a = np.asarray(actual) == 1
        p = np.asarray(identified) == 1
        return cls(int(np.sum(a & p)), int(np.sum(a & ~p)),
                   int(np.sum(~a & p)), int(np.sum(~a & ~p)))

    @property
    def total(self) -> int:
        return (self.success_identified_success + self.success_identified_failure
                + self.failure_identified_success + self.failure_identified_failure)

    @property
    def identified_success(self) -> int:
        return self.success_identified_success + self.failure_identified_success

    @property
    def filtered_success_rate(self) -> float:
        """Success rate over the trials the discriminator let through."""
        if self.identified_success == 0:
            return float("nan")
        return self.success_identified_success / self.identified_success

    @property
    def identified_success_fraction(self) -> float:
        """Fraction of all trials correctly identified as successful picks."""
        return self.success_identified_success / self.total if self.total else float("nan")

    @property
    def predicted_success_fraction(self) -> float:
        return self.identified_success / self.total if self.total else float("nan")

    @property
    def accuracy(self) -> float:
        correct = self.success_identified_success + self.failure_identified_failure
        return correct / self.total if self.total else float("nan")

    def rates(self) -> dict:
        return {
            "filtered_success_rate": self.filtered_success_rate,
            "identified_success_fraction": self.identified_success_fraction,
            "predicted_success_fraction": self.predicted_success_fraction,
            "accuracy": self.accuracy,
        }

    def as_rows(self):
        return [
            ("Picking succeeded", self.success_identified_success, self.success_identified_failure),
            ("Picking failed", self.failure_identified_success, self.failure_identified_failure),
        ]


def evaluate(model, data: TrainingSet):
    """Confusion matrix of ``model`` on ``data`` plus the derived rates."""
    expected = "svm2d" if isinstance(model, LinearSVMDiscriminator) else "hist"
    if data.kind != expected:
        raise ValueError(f"model expects {expected} features, data holds {data.kind}")
    cm = ConfusionMatrix.from_labels(data.y, model.predict(data.X))
    return cm, cm.rates()


def format_report(cm: ConfusionMatrix) -> str:
    w = 20
    lines = [
        f"{'':<{w}}{'Identified as success':>24}{'Identified as failure':>24}",
    ]
    for name, a, b in cm.as_rows():
        lines.append(f"{name:<{w}}{a:>24d}{b:>24d}")
    lines.append("")
    lines.append(f"filtered success rate:       {100 * cm.filtered_success_rate:.1f}%")
    lines.append(f"identified-success fraction: {100 * cm.identified_success_fraction:.1f}%")
    lines.append(f"predicted-success fraction:  {100 * cm.predicted_success_fraction:.1f}%")
    lines.append(f"accuracy:                    {100 * cm.accuracy:.1f}%")
    return "\n".join(lines) + "\n"


def model_to_dict(model) -> dict:
    if isinstance(model, LinearSVMDiscriminator):
        check_is_fitted(model, "coef_")
        return {
            "format": MODEL_FORMAT,
            "algo": "svm",
            "feature_kind": "svm2d",
            "params": model.get_params(),
            "weights": model.coef_.tolist(),
            "bias": model.intercept_,
        }
    if isinstance(model, RandomForestDiscriminator):
        check_is_fitted(model, "estimators_")
        params = model.get_params()
        params.pop("n_jobs")
        return {
            "format": MODEL_FORMAT,
            "algo": "forest",
            "feature_kind": "hist",
            "n_features": model.n_features_in_,
            "params": params,
            "trees": [t.to_dict() for t in model.estimators_],
        }
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_dict(data: dict, expected_kind: str | None = None):
    if data.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"unsupported model format {data.get('format')!r}")
    kind = data.get("feature_kind")
    if expected_kind is not None and kind != expected_kind:
        raise ModelFormatError(f"model holds {kind} features, expected {expected_kind}")
    if data["algo"] == "svm":
        model = LinearSVMDiscriminator(**data["params"])
        model.coef_ = np.array(data["weights"], dtype=float)
        model.intercept_ = float(data["bias"])
        model.classes_ = np.array([-1, 1])
        model.n_features_in_ = len(model.coef_)
        return model
    if data["algo"] == "forest":
        model = RandomForestDiscriminator(**data["params"])
        n = int(data["n_features"])
        model.estimators_ = [DecisionTree.from_dict(t, n) for t in data["trees"]]
        model.classes_ = np.array([-1, 1])
        model.n_features_in_ = n
        return model
    raise ModelFormatError(f"unknown algorithm {data['algo']!r}")


def dumps_model(model) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True) + "\n"


def save_model(path, model) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path, expected_kind: str | None = None):
    return model_from_dict(json.loads(Path(path).read_text()), expected_kind)
