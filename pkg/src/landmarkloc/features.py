"""Descriptors, exact nearest-neighbour search, ratio-test matching and the
frame-entropy gate, plus the frame file format."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._jsondoc import dumps_rows, element_lines, line_of
from .errors import (
    DimensionMismatch,
    EmptyHistogram,
    EmptyIndex,
    ParseError,
    TooFewTrainDescriptors,
)

DEFAULT_DESCRIPTOR_DIM = 256
# squared-distance ratio, i.e. the conventional 0.8 distance ratio squared
DEFAULT_RATIO_TOL = 0.64
FRAMES_FORMAT = "frames/1"


@dataclass(frozen=True)
class Keypoint:
    pixel: np.ndarray
    descriptor: np.ndarray


@dataclass(eq=False)
class Frame:
    """A timestamped set of undistorted keypoints with descriptors.

    Keypoints are stored column-wise: ``pixels`` is (N, 2) and ``descriptors``
    is (N, D). ``histogram`` is an optional 256-bin intensity histogram.
    """

    id: int
    timestamp: float
    pixels: np.ndarray
    descriptors: np.ndarray
    histogram: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        self.descriptors = np.asarray(self.descriptors, dtype=float)
        if self.descriptors.ndim == 1:
            self.descriptors = self.descriptors.reshape(len(self.pixels), -1)
        if len(self.descriptors) != len(self.pixels):
            raise DimensionMismatch("one descriptor per keypoint required")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("keypoint pixels must be finite")
        if self.histogram is not None:
            self.histogram = np.asarray(self.histogram, dtype=float)
            if self.histogram.shape != (256,) or np.any(self.histogram < 0) or self.histogram.sum() <= 0:
                raise ValueError("histogram must be 256 nonnegative counts with positive sum")

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]

    @property
    def keypoints(self) -> list[Keypoint]:
        return [Keypoint(p, d) for p, d in zip(self.pixels, self.descriptors)]


@dataclass(frozen=True)
class Match:
    query_index: int
    train_index: int
    distance: float


def descriptor_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"descriptor shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _row_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    # one formula for tree leaves and brute force so the two agree bit for bit
    return np.sqrt(np.sum((points - q) ** 2, axis=1))


def _sorted_pairs(idx: np.ndarray, dist: np.ndarray) -> list[tuple[int, float]]:
    order = np.lexsort((idx, dist))
    return [(int(idx[i]), float(dist[i])) for i in order]


def brute_force_search(points, query, k: int | None = None, radius: float | None = None):
    """Reference scan with the same contract as :meth:`KDTree.query`."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 0:
        raise EmptyIndex("no points to search")
    d = _row_distances(points, np.asarray(query, dtype=float))
    idx = np.arange(len(points))
    if radius is not None:
        keep = d <= radius
        return _sorted_pairs(idx[keep], d[keep])
    pairs = _sorted_pairs(idx, d)
    return pairs[:k]


class KDTree:
    """Exact k-d tree over (N, n) points with full backtracking.

    Leaves hold up to ``leaf_size`` points and are scanned with numpy. When the
    dimension exceeds ``max_tree_dim`` the tree degenerates to a single leaf,
    which is a brute-force scan: space partitioning stops paying off there.
    Ties in distance are broken by ascending point index.
    """

    def __init__(self, points, leaf_size: int = 16, max_tree_dim: int = 16):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size == 0:
            raise EmptyIndex("cannot index an empty point set")
        self.points = pts
        self.n, self.dim = pts.shape
        self._perm = np.arange(self.n)
        # node arrays: split dim (-1 for leaf), split value, children, slice
        self._dim: list[int] = []
        self._val: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._lo: list[int] = []
        self._hi: list[int] = []
        leaf = self.n if self.dim > max_tree_dim else max(1, leaf_size)
        self._build(0, self.n, leaf)

    def __len__(self) -> int:
        return self.n

    def _new_node(self, lo, hi) -> int:
        self._dim.append(-1)
        self._val.append(0.0)
        self._left.append(-1)
        self._right.append(-1)
        self._lo.append(lo)
        self._hi.append(hi)
        return len(self._dim) - 1

    def _build(self, lo: int, hi: int, leaf_size: int) -> int:
        node = self._new_node(lo, hi)
        if hi - lo <= leaf_size:
            return node
        sub = self.points[self._perm[lo:hi]]
        spread = sub.max(0) - sub.min(0)
        d = int(np.argmax(spread))
        if spread[d] == 0.0:
            return node  # all points identical
        mid = (hi - lo) // 2
        order = np.argpartition(sub[:, d], mid)
        self._perm[lo:hi] = self._perm[lo:hi][order]
        split = self.points[self._perm[lo + mid], d]
        self._dim[node] = d
        self._val[node] = float(split)
        self._left[node] = self._build(lo, lo + mid, leaf_size)
        self._right[node] = self._build(lo + mid, hi, leaf_size)
        return node

    def _leaf_scan(self, node, q):
        idx = self._perm[self._lo[node]:self._hi[node]]
        return idx, _row_distances(self.points[idx], q)

    def query(self, q, k: int | None = None, radius: float | None = None) -> list[tuple[int, float]]:
        """Return ``(index, distance)`` pairs sorted by distance.

        Exactly one of ``k`` (k nearest) or ``radius`` (all within, inclusive)
        must be given.
        """
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise DimensionMismatch(f"query has shape {q.shape}, index dimension is {self.dim}")
        if (k is None) == (radius is None):
            raise ValueError("give exactly one of k or radius")
        if radius is not None:
            if not radius > 0:
                raise ValueError("radius must be positive")
            return self._radius(q, float(radius))
        if k < 1:
            raise ValueError("k must be >= 1")
        return self._knn(q, int(k))

    def _radius(self, q, r):
        found_i, found_d = [], []
        stack = [0]
        while stack:
            node = stack.pop()
            d = self._dim[node]
            if d < 0:
                idx, dist = self._leaf_scan(node, q)
                keep = dist <= r
                if keep.any():
                    found_i.append(idx[keep])
                    found_d.append(dist[keep])
                continue
            diff = q[d] - self._val[node]
            if diff <= r:
                stack.append(self._left[node])
            if diff >= -r:
                stack.append(self._right[node])
        if not found_i:
            return []
        return _sorted_pairs(np.concatenate(found_i), np.concatenate(found_d))

    def _knn(self, q, k):
        k = min(k, self.n)
        # max-heap of the current best as (-dist, -idx); worst is heap[0]
        heap: list[tuple[float, int]] = []

        def worse_than_worst(dist, idx):
            if len(heap) < k:
                return False
            wd, wi = -heap[0][0], -heap[0][1]
            return (dist, idx) > (wd, wi)

        def visit(node):
            d = self._dim[node]
            if d < 0:
                idx, dist = self._leaf_scan(node, q)
                for i, di in zip(idx.tolist(), dist.tolist()):
                    if not worse_than_worst(di, i):
                        heapq.heappush(heap, (-di, -i))
                        if len(heap) > k:
                            heapq.heappop(heap)
                return
            diff = q[d] - self._val[node]
            near, far = (self._left[node], self._right[node]) if diff <= 0 else (self._right[node], self._left[node])
            visit(near)
            # ties at the plane are visited so equal distances are never lost
            if len(heap) < k or abs(diff) <= -heap[0][0]:
                visit(far)

        visit(0)
        idx = np.array([-i for _, i in heap], dtype=int)
        dist = np.array([-d for d, _ in heap])
        return _sorted_pairs(idx, dist)


def neighbor_search(index: KDTree | np.ndarray, query, k: int | None = None, radius: float | None = None):
    """Exact k-nearest or fixed-radius search; builds a tree if given raw points."""
    if not isinstance(index, KDTree):
        index = KDTree(index)
    return index.query(query, k=k, radius=radius)


def match_ratio_test(query_descriptors, train_descriptors, tol: float = DEFAULT_RATIO_TOL) -> list[Match]:
    """Nearest-neighbour matching filtered by the squared-distance ratio test.

    A query is matched to its nearest train descriptor when
    ``|d - n1|^2 / |d - n2|^2 <= tol``. Note ``tol`` bounds the *squared* ratio:
    0.64 corresponds to the familiar 0.8 distance ratio.
    """
    query = np.atleast_2d(np.asarray(query_descriptors, dtype=float))
    train = np.atleast_2d(np.asarray(train_descriptors, dtype=float))
    if len(train) < 2:
        raise TooFewTrainDescriptors("ratio test needs at least two train descriptors")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if query.size and query.shape[1] != train.shape[1]:
        raise DimensionMismatch("query and train descriptor dimensions differ")
    tree = KDTree(train)
    matches = []
    for qi, d in enumerate(query):
        (i1, d1), (_, d2) = tree.query(d, k=2)
        if d2 == 0.0:
            continue  # two identical train descriptors: ambiguous
        if d1 * d1 / (d2 * d2) <= tol:
            matches.append(Match(qi, i1, d1))
    return matches


def frame_entropy(histogram) -> float:
    """Shannon entropy in bits of a (256-bin) intensity histogram."""
    h = np.asarray(histogram, dtype=float).ravel()
    total = h.sum()
    if not total > 0:
        raise EmptyHistogram("histogram has no mass")
    q = h[h > 0] / total
    return float(max(0.0, -np.sum(q * np.log2(q))))


# ---------------------------------------------------------------------------
# Frame file
# ---------------------------------------------------------------------------

def save_frames(path, frames: list[Frame], descriptor_dim: int | None = None) -> None:
    """Write frames as ``{"format": "frames/1", "descriptor_dim": D, "frames": [...]}``."""
    if descriptor_dim is None:
        dims = {f.descriptor_dim for f in frames if len(f)}
        descriptor_dim = dims.pop() if dims else DEFAULT_DESCRIPTOR_DIM
    doc = {"format": FRAMES_FORMAT, "descriptor_dim": int(descriptor_dim), "frames": []}
    for f in frames:
        entry = {
            "id": int(f.id),
            "timestamp": float(f.timestamp),
            "keypoints": [
                {"u": float(p[0]), "v": float(p[1]), "descriptor": [float(x) for x in d]}
                for p, d in zip(f.pixels, f.descriptors)
            ],
        }
        if f.histogram is not None:
            entry["histogram"] = [int(c) if float(c).is_integer() else float(c) for c in f.histogram]
        doc["frames"].append(entry)
    Path(path).write_text(dumps_rows(doc, ("frames",)))


def load_frames(path) -> list[Frame]:
    """Read a frame file; errors name the line of the offending frame."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != FRAMES_FORMAT:
        raise ParseError(f"not a {FRAMES_FORMAT} document", path, 1)
    dim = doc.get("descriptor_dim")
    if not isinstance(dim, int) or dim < 1:
        raise ParseError("descriptor_dim must be a positive integer", path, 1)
    lines = element_lines(text, "frames")
    frames = []
    last_t = -math.inf
    for n, entry in enumerate(doc.get("frames", [])):
        line = line_of(lines, n)
        try:
            kps = entry["keypoints"]
            pixels = np.array([[kp["u"], kp["v"]] for kp in kps], dtype=float).reshape(-1, 2)
            desc = np.array([kp["descriptor"] for kp in kps], dtype=float)
            if len(kps) and (desc.ndim != 2 or desc.shape[1] != dim):
                raise ParseError(f"frame {n}: descriptor length differs from {dim}", path, line)
            desc = desc.reshape(len(kps), dim)
            frame = Frame(int(entry["id"]), float(entry["timestamp"]), pixels, desc, entry.get("histogram"))
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError, DimensionMismatch) as e:
            raise ParseError(f"frame {n}: {e}", path, line) from None
        if frame.timestamp < last_t:
            raise ParseError(f"frame {n}: timestamps must be nondecreasing", path, line)
        last_t = frame.timestamp
        frames.append(frame)
    return frames
