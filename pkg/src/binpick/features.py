"""Feature vectors computed from the points inside a finger swept volume.

Two representations are supported:

* ``svm2d``: the pair (sum of h, sum of d) over all swept points;
* ``hist``: point counts on a ``b_z x b_y`` grid over (h, d), flattened
  row-major with ``j_z`` as the row index.

Both expect ``d`` and ``h`` already clamped at zero; negative values coming
from the margin shell are clamped here as well.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import SweptPoints

FEATURE_KINDS = ("svm2d", "hist")


class SvmFeature(NamedTuple):
    sum_h: float
    sum_d: float


@dataclass(frozen=True)
class BinningConfig:
    b_y: int = 5
    b_z: int = 5
    w_y: float = 0.01
    w_z: float = 0.01

    def __post_init__(self):
        if self.b_y < 1 or self.b_z < 1:
            raise ValueError("bin counts must be at least 1")
        if not (self.w_y > 0 and self.w_z > 0):
            raise ValueError("bin widths must be positive")

    @property
    def size(self) -> int:
        return self.b_y * self.b_z

    def column_names(self) -> list[str]:
        return [f"bin_z{jz}_y{jy}" for jz in range(1, self.b_z + 1)
                for jy in range(1, self.b_y + 1)]


def _dh(swept):
    if isinstance(swept, SweptPoints):
        d, h = swept.d, swept.h
    else:
        pts = list(swept)
        d = np.array([p.d for p in pts], dtype=float)
        h = np.array([p.h for p in pts], dtype=float)
    return np.maximum(d, 0.0), np.maximum(h, 0.0)


def svm_feature(swept) -> SvmFeature:
    d, h = _dh(swept)
    return SvmFeature(float(np.sum(h)), float(np.sum(d)))


def bin_indices(d, h, cfg: BinningConfig = BinningConfig()):
    """1-based bin indices ``(j_y, j_z)``; the last bin absorbs overflow.

    Accepts scalars or arrays.
    """
    jy = np.minimum(np.floor(np.asarray(d, dtype=float) / cfg.w_y).astype(np.int64) + 1, cfg.b_y)
    jz = np.minimum(np.floor(np.asarray(h, dtype=float) / cfg.w_z).astype(np.int64) + 1, cfg.b_z)
    if np.ndim(jy) == 0:
        return int(jy), int(jz)
    return jy, jz


def hist_feature(swept, cfg: BinningConfig = BinningConfig()) -> np.ndarray:
    d, h = _dh(swept)
    counts = np.zeros(cfg.size, dtype=np.int64)
    if len(d):
        jy, jz = bin_indices(d, h, cfg)
        np.add.at(counts, (jz - 1) * cfg.b_y + (jy - 1), 1)
    return counts


def selection_index(swept, alpha: float = 1.0, beta: float = 1.0) -> float:
    """Execution-time ranking score; larger is better and 0 is the maximum."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    d, h = _dh(swept)
    if alpha == 0 and beta == 0:
        return 0.0
    return 0.0 - float(np.sum(alpha * h + beta * d))


class SweptFeatures(TransformerMixin, BaseEstimator):
    """Map a sequence of swept-point sets to a feature matrix.

    Stateless, so ``fit`` only records the output width; it can sit in front
    of either discriminator inside a ``sklearn.pipeline.Pipeline``.
    """

    def __init__(self, kind="hist", b_y=5, b_z=5, w_y=0.01, w_z=0.01):
        self.kind = kind
        self.b_y = b_y
        self.b_z = b_z
        self.w_y = w_y
        self.w_z = w_z

    def _binning(self):
        return BinningConfig(self.b_y, self.b_z, self.w_y, self.w_z)

    def fit(self, X, y=None):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"kind must be one of {FEATURE_KINDS}")
        self.n_features_out_ = 2 if self.kind == "svm2d" else self._binning().size
        return self

    def transform(self, X):
        if self.kind == "svm2d":
            return np.array([svm_feature(s) for s in X], dtype=float).reshape(-1, 2)
        cfg = self._binning()
        return np.array([hist_feature(s, cfg) for s in X], dtype=float).reshape(-1, cfg.size)

    def __sklearn_is_fitted__(self):
        return True


SVM_COLUMNS = ["sum_h", "sum_d"]


def dataset_header(cfg: BinningConfig = BinningConfig()) -> list[str]:
    return ["label"] + SVM_COLUMNS + cfg.column_names()


def write_dataset(path, labels, svm_rows, hist_rows, cfg: BinningConfig = BinningConfig()):
    """CSV: ``label`` (+1/-1), ``sum_h``, ``sum_d``, then the histogram counts."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset_header(cfg))
        for r, s, hrow in zip(labels, svm_rows, hist_rows):
            w.writerow([f"{int(r):+d}", repr(float(s[0])), repr(float(s[1]))]
                       + [str(int(c)) for c in hrow])


def read_dataset(path):
    """Return ``(labels, svm_matrix, hist_matrix)`` from a dataset CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    header = rows[0]
    if header[:3] != ["label"] + SVM_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header[:3]}")
    body = rows[1:]
    y = np.array([int(r[0]) for r in body], dtype=int)
    svm = np.array([[float(r[1]), float(r[2])] for r in body], dtype=float).reshape(-1, 2)
    nh = len(header) - 3
    hist = np.array([[float(v) for v in r[3:]] for r in body], dtype=float).reshape(-1, nh)
    if not set(np.unique(y)) <= {-1, 1}:
        raise ValueError(f"{path}: labels must be +1 or -1")
    return y, svm, hist
