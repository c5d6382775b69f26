import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from landmarkloc.errors import DimensionMismatch, EmptyHistogram, EmptyIndex, ParseError, TooFewTrainDescriptors
from landmarkloc.features import (
    Frame,
    KDTree,
    brute_force_search,
    descriptor_distance,
    frame_entropy,
    load_frames,
    match_ratio_test,
    neighbor_search,
    save_frames,
)

FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"


def test_descriptor_distance_examples():
    assert descriptor_distance([0.2, 0.3], [0.2, 0.3]) == 0
    assert descriptor_distance([1, 0], [0, 1]) == pytest.approx(np.sqrt(2), abs=1e-15)
    assert descriptor_distance([3, 4], [0, 0]) == 5.0
    with pytest.raises(DimensionMismatch):
        descriptor_distance([1, 2], [1, 2, 3])


vecs = st.lists(st.floats(-10, 10), min_size=4, max_size=4).map(np.array)


@given(vecs, vecs, vecs)
def test_descriptor_distance_metric(a, b, c):
    assert descriptor_distance(a, b) == pytest.approx(descriptor_distance(b, a), abs=1e-9)
    assert descriptor_distance(a, c) <= descriptor_distance(a, b) + descriptor_distance(b, c) + 1e-9


def test_neighbor_search_examples():
    assert neighbor_search(np.array([[0.0, 0.0]]), [1.0, 0.0], k=1) == [(0, 1.0)]
    pts = np.array([[0.0, 0], [2, 0], [5, 0]])
    assert [i for i, _ in neighbor_search(pts, [1.9, 0], k=2)] == [1, 0]
    res = neighbor_search(pts, [2.5, 0], radius=1.0)
    assert [i for i, _ in res] == [1] and res[0][1] == pytest.approx(0.5)
    assert len(neighbor_search(pts, [0, 0], k=10)) == 3
    with pytest.raises(EmptyIndex):
        KDTree(np.zeros((0, 2)))


@pytest.mark.parametrize("dim", [2, 3, 32])
def test_kdtree_matches_brute_force(dim):
    rng = np.random.default_rng(dim)
    for trial in range(60):
        n = int(rng.integers(1, 300))
        pts = rng.standard_normal((n, dim))
        if trial % 5 == 0:
            pts = np.round(pts, 1)  # duplicates and ties
        tree = KDTree(pts, leaf_size=int(rng.integers(1, 20)))
        for q in rng.standard_normal((5, dim)):
            k = int(rng.integers(1, 12))
            assert tree.query(q, k=k) == brute_force_search(pts, q, k=k)
            r = float(rng.uniform(0.1, 2.0)) * np.sqrt(dim)
            assert tree.query(q, radius=r) == brute_force_search(pts, q, radius=r)


def _pair_set(ms):
    return {(m.query_index, m.train_index) for m in ms}


def test_ratio_test_examples():
    train = np.array([[1.0, 0.0], [0.0, 2.0], [9.0, 9.0]])
    # distances^2 from origin: 1 and 4
    (m,) = match_ratio_test([[0.0, 0.0]], train, tol=0.64)
    assert (m.train_index, m.distance) == (0, 1.0)
    train = np.array([[np.sqrt(3.9), 0.0], [0.0, 2.0]])
    assert match_ratio_test([[0.0, 0.0]], train, tol=0.64) == []
    (m,) = match_ratio_test([[0.3, 0.4]], [[5.0, 5.0], [0.3, 0.4]], tol=0.01)
    assert (m.train_index, m.distance) == (1, 0.0)
    with pytest.raises(TooFewTrainDescriptors):
        match_ratio_test([[0.0, 0.0]], [[1.0, 1.0]])


def test_ratio_test_monotone_in_tol():
    rng = np.random.default_rng(0)
    q, t = rng.standard_normal((80, 8)), rng.standard_normal((60, 8))
    prev = set()
    for tol in (0.1, 0.3, 0.5, 0.64, 0.8, 0.95, 0.999999):
        cur = _pair_set(match_ratio_test(q, t, tol))
        assert prev <= cur
        prev = cur


def test_entropy_examples():
    h = np.zeros(256)
    h[17] = 40
    assert frame_entropy(h) == 0.0
    assert frame_entropy(np.ones(256)) == 8.0
    h = np.zeros(256)
    h[[3, 200]] = 5
    assert frame_entropy(h) == 1.0
    with pytest.raises(EmptyHistogram):
        frame_entropy(np.zeros(256))


def test_entropy_max_and_permutation():
    rng = np.random.default_rng(1)
    for _ in range(50):
        h = rng.integers(0, 50, 256).astype(float)
        h[0] += 1
        e = frame_entropy(h)
        assert e <= 8.0 + 1e-12
        assert frame_entropy(rng.permutation(h)) == pytest.approx(e, abs=1e-12)
        if not np.all(h == h[0]):
            assert e < 8.0


def _frames(rng, n=3, dim=4):
    out = []
    for i in range(n):
        k = 0 if i == 1 else int(rng.integers(1, 6))
        hist = rng.integers(0, 9, 256) if i % 2 == 0 else None
        if hist is not None:
            hist[0] += 1
        out.append(Frame(i, 0.5 * i, rng.uniform(0, 600, (k, 2)), rng.standard_normal((k, dim)), hist))
    return out


def test_frame_file_roundtrip(tmp_path):
    frames = _frames(np.random.default_rng(2))
    p = tmp_path / "frames.json"
    save_frames(p, frames)
    back = load_frames(p)
    assert len(back) == len(frames)
    for a, b in zip(frames, back):
        assert a.id == b.id and a.timestamp == b.timestamp
        assert np.array_equal(a.pixels, b.pixels) and np.array_equal(a.descriptors, b.descriptors)
        assert (a.histogram is None) == (b.histogram is None)
        if a.histogram is not None:
            assert np.array_equal(a.histogram, b.histogram)
    p2 = tmp_path / "again.json"
    save_frames(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_frame_validation():
    with pytest.raises(DimensionMismatch):
        Frame(0, 0.0, np.zeros((2, 2)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        Frame(0, 0.0, np.zeros((1, 2)), np.zeros((1, 4)), histogram=np.zeros(256))


@pytest.mark.parametrize("name, line", [
    ("frames_bad_descriptor.json", 4),
    ("frames_bad_timestamp.json", 4),
    ("frames_bad_json.json", 3),
])
def test_malformed_frame_fixtures(name, line):
    with pytest.raises(ParseError) as e:
        load_frames(FIXTURES / name)
    assert e.value.line == line
    assert str(line) in str(e.value)


def test_frame_header_errors(tmp_path):
    p = tmp_path / "f.json"
    p.write_text(json.dumps({"format": "frames/0", "descriptor_dim": 2, "frames": []}))
    with pytest.raises(ParseError) as e:
        load_frames(p)
    assert e.value.line == 1
