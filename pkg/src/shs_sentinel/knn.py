"""k-nearest-neighbour contingency classifier on log-error features."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError
from .scenarios import ContingencyClass

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class KnnModel:
    """Stored training points. With ``standardize`` the features are z-scored
    using the training mean and standard deviation before distances."""

    points: np.ndarray
    labels: np.ndarray
    k: int = 1
    standardize: bool = False
    mean: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValidationError("KNN model has no training points")
        if not 1 <= self.k <= len(self.points):
            raise ValidationError(f"k must be in [1, {len(self.points)}], got {self.k}")

    @property
    def dim(self):
        return self.points.shape[1]

    def transform(self, x):
        x = np.asarray(x, dtype=float)
        if not self.standardize:
            return x
        return (x - self.mean) / self.scale


def knn_train(data, k=1, standardize=False):
    X = np.asarray(data.X, dtype=float)
    y = np.asarray(data.y, dtype=int)
    if len(y) == 0:
        raise ValidationError("cannot train on an empty dataset")
    mean = scale = None
    points = X
    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        points = (X - mean) / scale
    points = np.ascontiguousarray(points)
    points.setflags(write=False)
    return KnnModel(points, y, int(k), bool(standardize), mean, scale)


def _vote(d2, labels, k):
    # total order (distance, label, coordinates): deterministic and
    # independent of training-row order
    if k == 1:
        best = d2.min()
        tied = np.flatnonzero(d2 == best)
        return ContingencyClass(int(labels[tied].min()))
    order = np.lexsort((labels, d2))[:k]
    votes = np.zeros(len(ContingencyClass), dtype=int)
    dist_sum = np.zeros(len(ContingencyClass))
    for i in order:
        votes[labels[i]] += 1
        dist_sum[labels[i]] += np.sqrt(d2[i])
    top = np.flatnonzero(votes == votes.max())
    best = min(top, key=lambda c: (dist_sum[c], c))
    return ContingencyClass(int(best))


def knn_classify(model, x):
    """Majority class among the k nearest training points (Euclidean on E).

    Ties in the vote go to the class with the smallest summed distance, then
    to the lowest class in enum order.
    """
    if model is None:
        raise ValidationError("no classifier model")
    E = getattr(x, "E", x)
    q = model.transform(E)
    d2 = kernels.sq_distances(model.points, q)
    return _vote(d2, model.labels, model.k)


def evaluate(model, test):
    """(accuracy, confusion) with confusion[true, predicted]."""
    if len(test) == 0:
        raise ValidationError("cannot evaluate on an empty test set")
    conf = np.zeros((4, 4), dtype=int)
    for row in test.rows:
        conf[int(row.label), int(knn_classify(model, row))] += 1
    return float(np.trace(conf) / conf.sum()), conf


# -- persistence --------------------------------------------------------------
#
# Model file (CSV, version 1):
#   #knn-model,version=1,k=<k>,dim=<d>,standardize=<0|1>
#   E_1,...,E_d,class
#   <raw training features>,<class label>
# Standardization statistics are recomputed from the stored raw rows on load.


def save_model(model, fh):
    raw = model.points if not model.standardize else model.points * model.scale + model.mean
    fh.write(f"#knn-model,version={MODEL_FORMAT_VERSION},k={model.k},dim={model.dim},"
             f"standardize={int(model.standardize)}\n")
    fh.write(",".join([f"E_{i + 1}" for i in range(model.dim)] + ["class"]) + "\n")
    for row, lab in zip(raw, model.labels):
        fh.write(",".join(repr(float(v)) for v in row) + f",{ContingencyClass(lab).label}\n")


def model_to_text(model):
    buf = io.StringIO()
    save_model(model, buf)
    return buf.getvalue()


def load_model(fh):
    from .features import FeatureVector, LabeledDataset

    head = fh.readline().strip()
    if not head.startswith("#knn-model"):
        raise ValidationError("not a KNN model file")
    meta = dict(kv.split("=", 1) for kv in head.split(",")[1:])
    if int(meta.get("version", 0)) != MODEL_FORMAT_VERSION:
        raise ValidationError(f"unsupported model version {meta.get('version')}")
    fh.readline()
    rows = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        *vals, lab = line.split(",")
        rows.append(FeatureVector(np.array([float(v) for v in vals]), ContingencyClass.parse(lab)))
    return knn_train(LabeledDataset(rows), int(meta["k"]), bool(int(meta["standardize"])))
