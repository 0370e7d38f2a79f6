"""Smoke tests for the python bindings.

Runs as a plain script (used by ctest with PYTHONPATH set to the build
tree) and under pytest against an installed wheel.
"""

import math
import sys

try:
    import fpenc as fp
except ImportError:
    import _core as fp


LINE = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0]


def test_relation():
    assert fp.relation([0, 0, 0], [0, 0, 0], 1.2) == 1.0
    assert fp.relation([0, 0, 0], [2, 0, 0], 1.2) == 0.0
    assert math.isclose(fp.relation([0, 0, 0], [0.6, 0, 0], 1.2), 0.5)


def test_global_correlation():
    two = [0.0, 0.0, 0.0, 0.6, 0.0, 0.0]
    assert fp.global_correlation(two, 1.2) == [1.5, 1.5]
    assert fp.global_correlation(two, 1.2, include_self=False) == [0.5, 0.5]


def test_knn():
    # querying the cloud against itself finds each point first at distance 0
    assert fp.knn(LINE, 1) == [[0], [1], [2]]
    assert fp.knn(LINE, 2) == [[0, 1], [1, 0], [2, 1]]
    assert fp.knn(LINE, 2, include_self=True) == [[0, 1], [1, 0], [2, 1]]


def test_farthest_point_sample():
    assert fp.farthest_point_sample(LINE, 2) == [0, 2]
    assert fp.farthest_point_sample(LINE, 3, seed_index=2) == [2, 0, 1]


def test_voxel_downsample():
    near = [0.1, 0.1, 0.1, 0.3, 0.1, 0.1]
    merged = fp.voxel_downsample(near, 1.0)
    assert len(merged) == 3
    assert math.isclose(merged[0], 0.2)


def test_softmax():
    rows = fp.softmax([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], cols=3)
    assert all(math.isclose(v, 1.0 / 3.0) for v in rows)
    assert math.isclose(sum(rows[:3]), 1.0, abs_tol=1e-12)


def test_local_correlation():
    out = fp.local_correlation(LINE, k=2, sigma=1.2)
    assert out["shape"] == [3, 2, 8]
    assert all(math.isfinite(v) for v in out["values"])
    # channels 0..2 of the first pair hold the neighbor's position: the
    # nearest non-self neighbor of point 0 is point 1 at (1, 0, 0)
    assert out["values"][8:11] == [1.0, 0.0, 0.0]


def test_sinusoidal_encode():
    enc = fp.sinusoidal_encode([0.0, 0.0, 0.0], 4)
    assert enc == [0.0, 1.0, 0.0, 1.0]


def test_verify_fpconv():
    report = fp.verify_fpconv(trials=5, seed=3)
    assert report["all_passed"]
    assert report["worst_err"] <= report["tol"]


def test_verify_fptransformer():
    report = fp.verify_fptransformer(trials=5, seed=3)
    assert report["all_passed"]


def test_verify_gradients():
    report = fp.verify_gradients(seed=3)
    assert report["all_passed"]
    assert len(report["checks"]) == 8
    assert all(c["max_err"] <= report["tol"] for c in report["checks"])


def test_error_mapping():
    try:
        fp.softmax([1.0, 2.0], cols=3)
    except ValueError:
        pass
    else:
        raise AssertionError("bad cols should raise ValueError")
    try:
        fp.knn([1.0, 2.0], 1)
    except ValueError:
        pass
    else:
        raise AssertionError("non-xyz positions should raise ValueError")


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"{test.__name__}: ok")
    print(f"{len(tests)} smoke tests passed")
    sys.exit(0)
