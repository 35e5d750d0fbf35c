import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from streetmorph import kernels, synth
from streetmorph._backend import ENV_VAR, HAVE_NUMBA

NB = kernels.IMPLEMENTATIONS["numba"]
NP = kernels.IMPLEMENTATIONS["numpy"]

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not importable")

small = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
grid_vals = st.integers(-20, 20).map(lambda k: k * 0.25)  # exact ties and duplicates


def xy_arrays(max_n=120, elements=small):
    return arrays(np.float64, st.tuples(st.integers(0, max_n), st.just(2)), elements=elements)


def unit_rows(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# ---------------------------------------------------------------- oracles

def brute_components(xy, radius):
    n = len(xy)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if float(((xy[i] - xy[j]) ** 2).sum()) <= radius * radius:
                a, b = find(i), find(j)
                parent[max(a, b)] = min(a, b)
    roots = [find(i) for i in range(n)]
    lowest = {}
    for i, r in enumerate(roots):
        lowest.setdefault(r, i)
    return np.array([lowest[r] for r in roots], dtype=np.int64)


def brute_count(points, normals, plane, eps, cos_alpha):
    a, b, g, d = plane
    count = 0
    for p, n in zip(points, normals):
        if abs(p[0] * a + p[1] * b + p[2] * g + d) <= eps and abs(n[0] * a + n[1] * b + n[2] * g) >= cos_alpha:
            count += 1
    return count


# ---------------------------------------------------------------- radius components

@given(xy_arrays(), st.floats(0.05, 2.0))
def test_components_match_union_find(xy, radius):
    expect = brute_components(xy, radius)
    assert np.array_equal(NP["radius_components"](xy, radius), expect)
    if HAVE_NUMBA:
        assert np.array_equal(NB["radius_components"](np.ascontiguousarray(xy), radius), expect)


@given(xy_arrays(elements=grid_vals), st.sampled_from([0.25, 0.5, 0.75]))
def test_components_on_exact_ties(xy, radius):
    # pair distances equal to the radius count as connected in both paths
    expect = brute_components(xy, radius)
    assert np.array_equal(NP["radius_components"](xy, radius), expect)
    if HAVE_NUMBA:
        assert np.array_equal(NB["radius_components"](np.ascontiguousarray(xy), radius), expect)


@needs_numba
def test_components_sparse_extent_path():
    # points spread far apart force the sorted-key path instead of the dense grid
    rng = np.random.default_rng(1)
    centres = rng.uniform(-1e5, 1e5, size=(30, 2))
    xy = np.vstack([c + rng.normal(0, 0.1, size=(20, 2)) for c in centres])
    assert np.array_equal(NB["radius_components"](xy, 0.15), NP["radius_components"](xy, 0.15))


@needs_numba
def test_components_large_cloud_backends_agree():
    rng = np.random.default_rng(2)
    xy = rng.uniform(0, 30, size=(40_000, 2))
    assert np.array_equal(NB["radius_components"](xy, 0.12), NP["radius_components"](xy, 0.12))


# ---------------------------------------------------------------- inlier scoring

@given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.floats(0.01, 0.5), st.floats(0.0, 0.99))
def test_inlier_counts_match_loop(seed, n, eps, cos_alpha):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(n, 3))
    nrm = unit_rows(rng, n)
    nrm_planes = unit_rows(rng, 5)
    planes = np.column_stack([nrm_planes, rng.uniform(-0.5, 0.5, 5)])
    expect = [brute_count(pts, nrm, p, eps, cos_alpha) for p in planes]
    assert NP["count_inliers"](pts, nrm, planes, eps, cos_alpha).tolist() == expect
    for j, p in enumerate(planes):
        assert int(NP["inlier_mask"](pts, nrm, p, eps, cos_alpha).sum()) == expect[j]
    if HAVE_NUMBA:
        assert NB["count_inliers"](pts, nrm, planes, eps, cos_alpha).tolist() == expect
        for p in planes:
            assert np.array_equal(NB["inlier_mask"](pts, nrm, p, eps, cos_alpha),
                                  NP["inlier_mask"](pts, nrm, p, eps, cos_alpha))


# ---------------------------------------------------------------- voxel selection

@given(arrays(np.float64, st.tuples(st.integers(0, 200), st.just(3)), elements=small), st.sampled_from([0.1, 0.5, 2.0]))
def test_voxel_select_backends_agree(pts, s):
    keys = kernels.cell_keys(pts, s)
    a = NP["voxel_select"](keys, pts)
    assert len(a) == len(np.unique(keys))
    if HAVE_NUMBA:
        assert np.array_equal(NB["voxel_select"](keys, pts), a)


def test_cell_keys_fallback_for_huge_extent():
    pts = np.array([[0, 0, 0], [1e15, 0, 0], [0, 1e15, 0], [1e15, 1e15, 1e15], [0.01, 0, 0]], dtype=float)
    keys = kernels.cell_keys(pts, 0.05)
    assert len(np.unique(keys)) == 4 and keys[0] == keys[4]
    with pytest.raises(ValueError, match="too far"):
        kernels.cell_keys(np.array([[1e18, 0, 0]]), 0.05)


# ---------------------------------------------------------------- sign propagation

def brute_signs(order, parent, normals):
    sign = {}
    for i in order:
        p = parent[i]
        sign[i] = 1.0 if p < 0 else (sign[p] if normals[i] @ normals[p] >= 0 else -sign[p])
    return np.array([sign[i] for i in range(len(normals))])


@given(st.integers(0, 2**32 - 1), st.integers(1, 150))
def test_sign_propagation(seed, n):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    parent = np.full(n, -1, dtype=np.int64)
    for t in range(1, n):
        if rng.random() < 0.9:
            parent[order[t]] = order[rng.integers(0, t)]
    normals = unit_rows(rng, n)
    expect = brute_signs(order, parent, normals)
    assert np.array_equal(NP["propagate_signs"](order.astype(np.int64), parent, normals), expect)
    if HAVE_NUMBA:
        assert np.array_equal(NB["propagate_signs"](order.astype(np.int64), parent, normals), expect)


# ---------------------------------------------------------------- hulls

def shoelace(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@given(st.integers(0, 2**32 - 1), st.integers(3, 200), st.booleans())
def test_hull_area_matches_exhaustive_oracle(seed, n, snap):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-3, 3, size=(n, 2))
    if snap:
        xy = np.round(xy * 2) / 2  # duplicates and collinear runs
    if np.linalg.matrix_rank(xy - xy[0]) < 2:
        return
    expect = synth.oracle_hull_area(xy)
    for impl in ([NP, NB] if HAVE_NUMBA else [NP]):
        idx = impl["convex_hull_indices"](xy)
        assert abs(shoelace(xy[idx]) - expect) <= 1e-9


@needs_numba
def test_hull_backends_agree_on_large_input():
    xy = np.random.default_rng(5).normal(size=(20_000, 2))
    assert np.array_equal(NB["convex_hull_indices"](xy), NP["convex_hull_indices"](xy))


# ---------------------------------------------------------------- backend selection

def run_python(code, backend):
    env = dict(os.environ, **{ENV_VAR: backend})
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)


def test_env_var_selects_numpy():
    res = run_python("from streetmorph import kernels; print(kernels.BACKEND)", "numpy")
    assert res.returncode == 0 and res.stdout.strip() == "numpy"


@needs_numba
def test_env_var_default_is_numba():
    res = run_python("from streetmorph import kernels; print(kernels.BACKEND)", "numba")
    assert res.stdout.strip() == "numba"


def test_env_var_rejects_unknown_backend():
    res = run_python("import streetmorph.kernels", "cuda")
    assert res.returncode != 0 and ENV_VAR in res.stderr
