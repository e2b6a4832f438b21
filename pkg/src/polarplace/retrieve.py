"""Signature database, nearest-neighbour place queries and retrieval metrics.

Signatures are stored as float32, the precision of the on-disk format, so a
database reloaded from file answers queries identically.
"""

import hashlib
import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DuplicateId, EmptyDatabase, FormatError, LengthMismatch
from .spectrum import read_signature_file, write_signature_file


@dataclass(frozen=True)
class PlaceRecord:
    place_id: int
    signature: np.ndarray
    pose: tuple = (0.0, 0.0, 0.0)
    tag: str = None


@dataclass(frozen=True)
class RetrievalResult:
    place_ids: np.ndarray
    distances: np.ndarray
    k: int

    def __len__(self):
        return len(self.place_ids)


def _canonical(sig):
    return np.asarray(sig, dtype=np.float32).astype(np.float64).reshape(-1)


def rank_by_distance(distances, ids, k):
    """Indices of the ``k`` smallest distances, ties broken by ascending id."""
    order = np.lexsort((ids, distances))
    return order[:k]


def row_distances(matrix, q):
    d = matrix - q
    return np.sqrt(np.einsum("ij,ij->i", d, d))


class PlaceDatabase:
    """In-memory map database with exact-scan and KD-tree query backends.

    Readers may query concurrently; :meth:`insert` takes an exclusive lock
    and invalidates the tree, which is rebuilt on the next tree query.
    """

    def __init__(self, length=None, leafsize=16):
        self.length = length
        self.leafsize = leafsize
        self._ids = []
        self._sigs = []
        self._poses = []
        self._tags = []
        self._id_set = set()
        self._matrix = None
        self._tree = None
        self._lock = threading.RLock()

    def __len__(self):
        return len(self._ids)

    @property
    def ids(self):
        return np.array(self._ids, dtype=np.int64)

    @property
    def poses(self):
        return np.array(self._poses, dtype=np.float64).reshape(-1, 3)

    @property
    def tags(self):
        return list(self._tags)

    def record(self, place_id):
        i = self._ids.index(place_id)
        return PlaceRecord(self._ids[i], self._sigs[i].copy(), tuple(self._poses[i]), self._tags[i])

    def insert(self, record):
        sig = _canonical(record.signature)
        with self._lock:
            if record.place_id in self._id_set:
                raise DuplicateId(f"place id {record.place_id} already present")
            if self.length is None:
                self.length = sig.shape[0]
            elif sig.shape[0] != self.length:
                raise LengthMismatch(
                    f"signature length {sig.shape[0]} != database length {self.length}")
            self._ids.append(int(record.place_id))
            self._id_set.add(int(record.place_id))
            self._sigs.append(sig)
            self._poses.append(tuple(float(v) for v in record.pose))
            self._tags.append(record.tag)
            self._matrix = None
            self._tree = None
        return self

    def _get_matrix(self):
        with self._lock:
            if self._matrix is None:
                self._matrix = (np.stack(self._sigs) if self._sigs
                                else np.zeros((0, self.length or 0)))
            return self._matrix

    def _get_tree(self):
        with self._lock:
            if self._tree is None:
                self._tree = cKDTree(self._get_matrix(), leafsize=self.leafsize)
            return self._tree

    def query_top_k(self, sig, k=1, backend="exact"):
        """The ``k`` nearest records by Euclidean distance.

        Both backends compute final distances with the same routine, so their
        rankings are bit-identical; the tree only prunes candidates.
        """
        if len(self) == 0:
            raise EmptyDatabase("query against an empty database")
        if k < 1:
            raise ValueError("k must be >= 1")
        q = _canonical(sig)
        if q.shape[0] != self.length:
            raise LengthMismatch(f"query length {q.shape[0]} != database length {self.length}")
        mat = self._get_matrix()
        ids = self.ids
        k = min(k, len(self))
        if backend == "exact":
            d = row_distances(mat, q)
            idx = rank_by_distance(d, ids, k)
        elif backend == "tree":
            tree = self._get_tree()
            approx, cand = tree.query(q, k=k)
            kth = float(np.max(np.atleast_1d(approx)))
            # widen to every record within the k-th radius so exact ties survive
            radius = kth * (1 + 1e-9) + 1e-9
            cand = np.array(sorted(tree.query_ball_point(q, radius)), dtype=np.int64)
            d = row_distances(mat[cand], q)
            idx = cand[rank_by_distance(d, ids[cand], k)]
        else:
            raise ValueError(f"unknown backend {backend!r}")
        dist = row_distances(mat[idx], q)
        return RetrievalResult(ids[idx], dist, k)

    def save(self, path):
        """Write the ``DSIG`` file plus a JSON index sidecar next to it."""
        path = Path(path)
        mat = self._get_matrix()
        write_signature_file(path, self.length or 0, self.ids, self.poses, mat)
        sidecar = {
            "format": "polarplace-index/1",
            "count": len(self),
            "length": self.length or 0,
            "ids_sha256": hashlib.sha256(self.ids.tobytes()).hexdigest(),
            "leafsize": self.leafsize,
            "tags": self._tags,
        }
        Path(str(path) + ".idx").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        length, ids, poses, sigs = read_signature_file(path)
        side_path = Path(str(path) + ".idx")
        tags = [None] * len(ids)
        leafsize = 16
        if side_path.is_file():
            side = json.loads(side_path.read_text())
            if side.get("ids_sha256") != hashlib.sha256(ids.astype(np.int64).tobytes()).hexdigest():
                raise FormatError(f"index sidecar {side_path} does not match records")
            tags = side.get("tags", tags)
            leafsize = side.get("leafsize", leafsize)
        db = cls(length if len(ids) else (length or None), leafsize=leafsize)
        for pid, pose, sig, tag in zip(ids, poses, sigs, tags):
            db.insert(PlaceRecord(int(pid), sig, tuple(pose), tag))
        return db


@dataclass(frozen=True)
class EvalReport:
    recall_at_1: float
    recall_at_1pct: float
    auc: float
    recall_curve: np.ndarray
    nearest_distance: np.ndarray
    k: int


def _success_matrix(db, queries, success_radius_m, k, backend):
    db_xy = db.poses[:, :2]
    ids = db.ids
    id_to_row = {int(pid): i for i, pid in enumerate(ids)}
    hits = np.zeros((len(queries), k), dtype=bool)
    nearest = np.zeros(len(queries))
    for qi, (sig, pose) in enumerate(queries):
        res = db.query_top_k(sig, k, backend)
        nearest[qi] = res.distances[0]
        rows = [id_to_row[int(p)] for p in res.place_ids]
        d = np.hypot(*(db_xy[rows] - np.asarray(pose, dtype=np.float64)[:2]).T)
        hits[qi, :len(rows)] = d <= success_radius_m
    return hits, nearest


def evaluate_retrieval(db, queries, success_radius_m=1.5, k=25, backend="exact"):
    """Recall@1, Recall@1% and area under the recall-vs-rank curve.

    Parameters
    ----------
    db : PlaceDatabase
    queries : list of (signature, pose)
        ``pose`` is the query's true ``(x, y[, yaw])``.
    success_radius_m : float
        A retrieved place counts if its position lies within this radius.
    k : int
        Largest rank threshold of the recall curve.

    Notes
    -----
    Recall@1% uses ``ceil(len(db) / 100)`` candidates. The AUC is the
    trapezoidal area under recall@N for N = 1..k, rescaled to [0, 1].
    """
    n_db = len(db)
    k1pct = max(1, math.ceil(n_db / 100))
    k = max(1, min(max(k, k1pct), n_db))
    hits, nearest = _success_matrix(db, queries, success_radius_m, k, backend)
    found = np.cumsum(hits, axis=1) > 0
    curve = found.mean(axis=0)
    auc = float(curve[0]) if k == 1 else float(np.trapezoid(curve, dx=1.0) / (k - 1))
    return EvalReport(float(curve[0]), float(curve[k1pct - 1]), auc, curve, nearest, k)


def unseen_place_score(result, threshold):
    """``"unseen"`` when the best match is farther than ``threshold``, else ``"known"``."""
    if len(result) == 0:
        raise ValueError("empty retrieval result")
    return "unseen" if result.distances[0] > threshold else "known"


def rejection_curve(nearest_distances, is_known):
    """Precision/recall of accepting a query as known while sweeping the threshold.

    Parameters
    ----------
    nearest_distances : array (n,)
        Rank-1 distance per query.
    is_known : bool array (n,)
        Ground truth: the query revisits a mapped place.

    Returns
    -------
    thresholds, precision, recall, auc
        ``auc`` is the trapezoidal area under precision over recall, with the
        curve anchored at recall 0 by its first precision value.
    """
    d = np.asarray(nearest_distances, dtype=np.float64)
    y = np.asarray(is_known, dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("rejection curve needs at least one known query")
    thresholds = np.unique(d)
    tp = np.array([np.sum(y & (d <= t)) for t in thresholds], dtype=np.float64)
    acc = np.array([np.sum(d <= t) for t in thresholds], dtype=np.float64)
    precision = tp / acc
    recall = tp / n_pos
    r = np.concatenate([[0.0], recall])
    p = np.concatenate([[precision[0]], precision])
    auc = float(np.trapezoid(p, r))
    return thresholds, precision, recall, auc
