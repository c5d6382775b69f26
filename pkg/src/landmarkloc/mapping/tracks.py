"""Turning pairwise feature matches into multi-view tracks, and matching
frames against each other."""

from __future__ import annotations

import logging
from collections import defaultdict

import numpy as np

from ..errors import LandmarkLocError
from ..features import Frame, Match, match_ratio_test
from ..robust import RansacConfig, fundamental_ransac
from .model import Track

log = logging.getLogger(__name__)


def _iter_pairs(matches):
    """Normalise the accepted match containers to ``((fa, ka), (fb, kb))``."""
    if isinstance(matches, dict):
        for (fa, fb), ms in matches.items():
            for m in ms:
                qa, qb = (m.query_index, m.train_index) if isinstance(m, Match) else m
                yield (int(fa), int(qa)), (int(fb), int(qb))
    else:
        for a, b in matches:
            yield (int(a[0]), int(a[1])), (int(b[0]), int(b[1]))


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def build_tracks(matches) -> list[Track]:
    """Connected components of the match graph.

    ``matches`` is either a mapping ``{(frame_a, frame_b): [Match | (ka, kb)]}``
    or an iterable of ``((frame_a, ka), (frame_b, kb))``. Components holding two
    keypoints of one frame are inconsistent and dropped, as are singletons.
    Output is sorted by each track's first observation.
    """
    uf = _UnionFind()
    for a, b in _iter_pairs(matches):
        uf.union(a, b)
    comps = defaultdict(list)
    for node in uf.parent:
        comps[uf.find(node)].append(node)
    tracks = []
    for nodes in comps.values():
        nodes.sort()
        frames = [f for f, _ in nodes]
        if len(nodes) < 2 or len(set(frames)) != len(frames):
            continue
        tracks.append(Track(nodes))
    tracks.sort(key=lambda t: t.observations[0])
    return tracks


def match_frames(frames: list[Frame], tol: float = 0.64, ransac: RansacConfig | None = None,
                 min_matches: int = 16) -> dict[tuple[int, int], list[Match]]:
    """Exhaustive pairwise matching: ratio test, then epipolar RANSAC.

    Pairs with fewer than ``min_matches`` verified matches are dropped.
    """
    ransac = ransac or RansacConfig(sample_size=8, inlier_threshold=1.5, rng_seed=0)
    out = {}
    for i, fa in enumerate(frames):
        for fb in frames[i + 1:]:
            if len(fa) < 2 or len(fb) < 2:
                continue
            ms = match_ratio_test(fa.descriptors, fb.descriptors, tol)
            if len(ms) < max(8, min_matches):
                continue
            x1 = np.array([fa.pixels[m.query_index] for m in ms])
            x2 = np.array([fb.pixels[m.train_index] for m in ms])
            try:
                res = fundamental_ransac(x1, x2, ransac)
            except LandmarkLocError:
                continue
            kept = [m for m, ok in zip(ms, res.inlier_mask) if ok]
            if len(kept) >= min_matches:
                out[(fa.id, fb.id)] = kept
            log.debug("frames %d-%d: %d ratio matches, %d verified", fa.id, fb.id, len(ms), len(kept))
    return out
