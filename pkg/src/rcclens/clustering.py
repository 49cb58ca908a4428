"""Root-cause clustering of failure-inducing inputs by heatmap similarity.

Per layer: average-linkage agglomerative clustering under the Euclidean
heatmap distance, cluster count chosen at the knee of the weighted
intra-cluster distance curve; the layer whose knee configuration has the
lowest weighted intra-cluster distance wins.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import pdist, squareform
from sklearn.base import BaseEstimator, ClusterMixin

from .neural import Heatmap

log = logging.getLogger(__name__)

RADIUS_FLOOR = 1e3 * np.finfo(float).eps


class InsufficientFailuresError(ValueError):
    pass


class DegenerateClusterError(ValueError):
    pass


def heatmap_distance(a, b) -> float:
    """Euclidean norm of the entry-wise difference of two heatmaps."""
    A = a.matrix if isinstance(a, Heatmap) else np.asarray(a, dtype=float)
    B = b.matrix if isinstance(b, Heatmap) else np.asarray(b, dtype=float)
    if isinstance(a, Heatmap) and isinstance(b, Heatmap) and a.layer_index != b.layer_index:
        raise ValueError(f"heatmaps from different layers ({a.layer_index} vs {b.layer_index})")
    if A.shape != B.shape:
        raise ValueError(f"heatmap shapes differ: {A.shape} vs {B.shape}")
    return float(np.linalg.norm(A - B))


def medoid_index(D: np.ndarray) -> int:
    """Member minimizing the average distance to the others (lowest index on ties)."""
    n = len(D)
    if n == 1:
        return 0
    return int(np.argmin(D.sum(axis=1) / (n * (n - 1))))


@dataclass(eq=False)
class RootCauseCluster:
    """Failure-inducing inputs sharing similar heatmaps at one layer.

    ``heatmaps`` holds the flattened member heatmaps as rows.
    """

    ids: list
    heatmaps: np.ndarray
    layer: int
    medoid: int = field(init=False)
    radius: float = field(init=False)
    degenerate: bool = field(init=False)
    label: int | None = None

    def __post_init__(self):
        self.heatmaps = np.atleast_2d(np.asarray(self.heatmaps, dtype=float))
        if len(self.ids) != len(self.heatmaps):
            raise ValueError("ids and heatmaps differ in length")
        D = squareform(pdist(self.heatmaps)) if len(self.heatmaps) > 1 else np.zeros((1, 1))
        self.medoid = medoid_index(D)
        r = float(D[self.medoid].max())
        self.degenerate = r <= 0.0
        self.radius = RADIUS_FLOOR if self.degenerate else r

    @property
    def medoid_heatmap(self) -> np.ndarray:
        return self.heatmaps[self.medoid]

    def __len__(self):
        return len(self.ids)

    def distances(self, H) -> np.ndarray:
        """:func:`rcc_distance` for a batch of flattened heatmaps."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if H.shape[1] != self.heatmaps.shape[1]:
            raise ValueError("heatmap width does not match the cluster's layer")
        return np.linalg.norm(H - self.medoid_heatmap, axis=1) / self.radius


def rcc_distance(C: RootCauseCluster, h) -> float:
    """Heatmap distance to the cluster medoid, in units of the cluster radius."""
    if isinstance(h, Heatmap):
        if h.layer_index != C.layer:
            raise ValueError(f"heatmap layer {h.layer_index} != cluster layer {C.layer}")
        h = h.matrix
    if C.degenerate:
        raise DegenerateClusterError("cluster radius is zero (all members identical)")
    return float(C.distances(np.ravel(h))[0])


def weighted_icd(H: np.ndarray, labels: np.ndarray) -> float:
    """Sum over clusters of ``|c|/N`` times the mean pairwise distance in ``c``."""
    N = len(H)
    total = 0.0
    for c in np.unique(labels):
        members = H[labels == c]
        if len(members) > 1:
            total += len(members) / N * pdist(members).mean()
    return float(total)


def knee_point(icd: Sequence[float]) -> int:
    """1-based k with the largest perpendicular drop below the end-to-end chord.

    Both axes are scaled to [0, 1] first; a flat curve returns 1.
    """
    y = np.asarray(icd, dtype=float)
    if len(y) < 3 or y[0] - y[-1] <= 1e-12 * max(1.0, abs(y[0])):
        return 1
    x = np.linspace(0.0, 1.0, len(y))
    yn = (y - y[-1]) / (y[0] - y[-1])
    # chord runs from (0, 1) to (1, 0): distance below it is (1 - x - yn) / sqrt(2)
    gap = 1.0 - x - yn
    best = int(np.argmax(gap))
    return best + 1 if gap[best] > 0 else 1


@dataclass
class LayerClustering:
    layer: int
    labels: np.ndarray
    k: int
    weighted_icd: float
    icd_curve: list[float]


def cluster_layer(H: np.ndarray, max_k: int | None = None, layer: int = 0) -> LayerClustering:
    H = np.asarray(H, dtype=float)
    N = len(H)
    if N < 3:
        raise InsufficientFailuresError(f"need at least 3 failure-inducing inputs, got {N}")
    max_k = min(10, N - 1) if max_k is None else min(max_k, N)
    Z = linkage(H, method="average", metric="euclidean")
    cuts = cut_tree(Z, n_clusters=list(range(1, max_k + 1)))
    curve = [weighted_icd(H, cuts[:, i]) for i in range(max_k)]
    k = knee_point(curve)
    return LayerClustering(layer, cuts[:, k - 1].astype(int), k, curve[k - 1], curve)


@dataclass
class ClusteringResult:
    clusters: list[RootCauseCluster]
    layer: int
    weighted_icd: float
    per_layer: dict[int, LayerClustering] = field(default_factory=dict)
    ids: list = field(default_factory=list)


def cluster_failures(heatmaps: Mapping[int, np.ndarray], max_k: int | None = None,
                     ids: Sequence | None = None) -> ClusteringResult:
    """Cluster failing inputs at every layer and keep the most cohesive layer.

    ``heatmaps`` maps a layer index to an ``(n_failures, N)`` array whose
    rows are aligned across layers.  Layers on which every heatmap is
    identical carry no structure and are skipped unless nothing else remains.
    """
    if not heatmaps:
        raise ValueError("no layers to cluster")
    n = {len(np.atleast_2d(H)) for H in heatmaps.values()}
    if len(n) != 1:
        raise ValueError("layers disagree on the number of failing inputs")
    n = n.pop()
    if n < 3:
        raise InsufficientFailuresError(f"need at least 3 failure-inducing inputs, got {n}")
    ids = list(range(n)) if ids is None else list(ids)
    per_layer = {L: cluster_layer(np.atleast_2d(H), max_k, L) for L, H in sorted(heatmaps.items())}
    informative = [c for c in per_layer.values() if c.icd_curve[0] > 0.0] or list(per_layer.values())
    best = min(informative, key=lambda c: (c.weighted_icd, c.layer))
    H = np.atleast_2d(heatmaps[best.layer])
    clusters = []
    for c in range(best.k):
        idx = np.flatnonzero(best.labels == c)
        clusters.append(RootCauseCluster([ids[i] for i in idx], H[idx], best.layer, label=c))
    for C in clusters:
        if C.degenerate:
            log.warning("cluster %s at layer %d has zero radius; flagged", C.label, C.layer)
    return ClusteringResult(clusters, best.layer, best.weighted_icd, per_layer, ids)


def assignments_csv(result: ClusteringResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["input_id", "cluster_id", "layer", "distance_to_medoid"])
    rows = []
    for C in result.clusters:
        d = np.linalg.norm(C.heatmaps - C.medoid_heatmap, axis=1)
        rows.extend((i, C.label, C.layer, float(x)) for i, x in zip(C.ids, d))
    for i, c, L, x in sorted(rows, key=lambda r: str(r[0])):
        w.writerow([i, c, L, repr(x)])
    return buf.getvalue()


class HeatmapClusterer(ClusterMixin, BaseEstimator):
    """Estimator front-end to :func:`cluster_failures`.

    ``fit`` takes either one ``(n, N)`` heatmap array or a dict of them keyed
    by layer index; afterwards ``labels_``, ``layer_`` and ``clusters_`` hold
    the selected configuration.
    """

    def __init__(self, max_k=None):
        self.max_k = max_k

    def fit(self, X, y=None):
        layers = X if isinstance(X, Mapping) else {0: np.asarray(X, dtype=float)}
        result = cluster_failures(layers, self.max_k)
        self.result_ = result
        self.clusters_ = result.clusters
        self.layer_ = result.layer
        self.n_clusters_ = len(result.clusters)
        self.labels_ = result.per_layer[result.layer].labels
        self.weighted_icd_ = result.weighted_icd
        return self
