"""Cluster separation, assignment fidelity and the Gaussian baseline classifier."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ReadoutError, SingularCovarianceError

COND_LIMIT = 1e12


def _as_points(cluster) -> np.ndarray:
    pts = np.asarray([(s.i, s.q) for s in cluster] if not isinstance(cluster, np.ndarray)
                     else cluster, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ReadoutError("clusters must be (n, 2) IQ points")
    return pts


def _checked_inverse(cov: np.ndarray, what: str) -> np.ndarray:
    cond = float(np.linalg.cond(cov))
    if not math.isfinite(cond) or cond > COND_LIMIT:
        raise SingularCovarianceError(f"{what} covariance is singular (cond={cond:.3g})", cond)
    return np.linalg.inv(cov)


def mahalanobis_distance(cluster0, cluster1, pooled: bool = True) -> float:
    """Separation of two IQ clusters in units of their covariance.

    With ``pooled`` the count-weighted average of the two sample covariances
    is used; otherwise the arithmetic mean of the per-cluster covariances.
    """
    a, b = _as_points(cluster0), _as_points(cluster1)
    if len(a) < 3 or len(b) < 3:
        raise ReadoutError("need at least 3 shots per cluster")
    ca, cb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    if pooled:
        cov = (len(a) * ca + len(b) * cb) / (len(a) + len(b))
    else:
        cov = (ca + cb) / 2.0
    delta = b.mean(axis=0) - a.mean(axis=0)
    inv = _checked_inverse(cov, "pooled")
    return float(np.sqrt(max(delta @ inv @ delta, 0.0)))


@dataclass(frozen=True)
class FidelityReport:
    p00: float
    p11: float
    avg: float
    n0: int
    n1: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    def csv_row(self, readout_time: float) -> str:
        return f"{readout_time!r},{self.p00!r},{self.p11!r},{self.avg!r}"

    CSV_HEADER = "readout_time,p00,p11,avg"


def fidelity(labels, predictions) -> FidelityReport:
    labels = np.asarray(labels).astype(np.int64)
    predictions = np.asarray(predictions).astype(np.int64)
    if labels.shape != predictions.shape:
        raise ReadoutError("labels and predictions differ in length")
    g, e = labels == 0, labels == 1
    n0, n1 = int(g.sum()), int(e.sum())
    if n0 == 0 or n1 == 0:
        raise ReadoutError("both states must be present to compute fidelity")
    p00 = float(np.sum(predictions[g] == 0)) / n0
    p11 = float(np.sum(predictions[e] == 1)) / n1
    return FidelityReport(p00, p11, (p00 + p11) / 2.0, n0, n1)


@dataclass(frozen=True)
class GaussianClassifier:
    mean0: np.ndarray
    mean1: np.ndarray
    cov0: np.ndarray
    cov1: np.ndarray
    prior0: float = 0.5

    def log_density(self, points: np.ndarray, state: int) -> np.ndarray:
        mean, cov = (self.mean0, self.cov0) if state == 0 else (self.mean1, self.cov1)
        d = np.atleast_2d(points) - mean
        inv = np.linalg.inv(cov)
        _, logdet = np.linalg.slogdet(cov)
        m = np.einsum("ni,ij,nj->n", d, inv, d)
        return -0.5 * (m + logdet + 2 * math.log(2 * math.pi))


def gaussian_fit(points, labels=None, prior0: float | None = None) -> GaussianClassifier:
    """Per-class sample mean and covariance from labelled IQ shots.

    Accepts either a sequence of IQShot or an (n, 2) array plus labels.
    """
    if labels is None:
        labels = np.array([s.label for s in points])
        points = _as_points(points)
    pts = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    params = []
    for state in (0, 1):
        cls = pts[labels == state]
        if len(cls) < 3:
            raise ReadoutError(f"need at least 3 shots of state {state}")
        cov = np.cov(cls, rowvar=False)
        _checked_inverse(cov, f"state-{state}")
        params.append((cls.mean(axis=0), cov))
    if prior0 is None:
        prior0 = 0.5
    return GaussianClassifier(params[0][0], params[1][0], params[0][1], params[1][1], prior0)


def gaussian_predict(clf: GaussianClassifier, points) -> np.ndarray | int:
    """Most probable state; exact ties go to ground."""
    single = not isinstance(points, np.ndarray) and hasattr(points, "i")
    pts = np.array([[points.i, points.q]]) if single else np.atleast_2d(points)
    s0 = clf.log_density(pts, 0) + math.log(clf.prior0)
    s1 = clf.log_density(pts, 1) + math.log(1.0 - clf.prior0)
    pred = (s1 > s0).astype(np.int64)
    return int(pred[0]) if single else pred


def herald_mask(points: np.ndarray, labels: np.ndarray, cut: float = 5.0) -> np.ndarray:
    """Keep shots whose Mahalanobis distance to their own class mean is at
    most ``cut``."""
    keep = np.ones(len(points), dtype=bool)
    for state in (0, 1):
        sel = labels == state
        cls = points[sel]
        if len(cls) < 3:
            continue
        d = cls - cls.mean(axis=0)
        inv = _checked_inverse(np.cov(cls, rowvar=False), f"state-{state}")
        dist = np.sqrt(np.einsum("ni,ij,nj->n", d, inv, d))
        keep[sel] = dist <= cut
    return keep
