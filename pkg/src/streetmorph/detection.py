"""Stage-1 plane detection: split a cloud into planar fragments and residual noise.

Each round draws minimal 3-point sets from the points that are still
unassigned, turns them into candidate planes, and scores every candidate by
the size of the largest connected piece of its inliers.  The winning piece is
accepted when it reaches the minimum support, removed, and the next round
starts.  Detection stops at the first round whose best candidate falls short.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, InputError
from .pointcloud import PointCloud

logger = logging.getLogger(__name__)

CONNECTIVITY_MULTIPLE = 3.0
FIRST_BLOCK = 32
BLOCK = 2048

# RNG stream labels; every random draw is keyed by (seed, stream label, ...)
SCAN_STREAM = 0
BAND_STREAM = 1
FIT_STREAM = 2
BAND_FIT_STREAM = 3


def fit_tolerance(epsilon: float) -> float:
    """Consensus distance for the regression step: half the detection band."""
    return 0.5 * float(epsilon)


@dataclass(frozen=True)
class DetectionParams:
    tau: int = 750
    epsilon: float = 0.15
    r: float = 0.05
    alpha_deg: float = 12.5
    p_t: float = 0.1
    seed: int = 0
    max_rounds: int = 10_000
    max_candidates: int = 200_000
    epsilon_is_ratio: bool = False

    def problems(self):
        out = []
        if not (isinstance(self.tau, (int, np.integer)) and self.tau >= 3):
            out.append(f"tau must be an integer >= 3 (got {self.tau!r})")
        if not self.epsilon > 0:
            out.append(f"epsilon must be > 0 (got {self.epsilon!r})")
        if not self.r > 0:
            out.append(f"r must be > 0 (got {self.r!r})")
        if not 0 < self.alpha_deg < 90:
            out.append(f"alpha_deg must be in (0, 90) (got {self.alpha_deg!r})")
        if not 0 < self.p_t < 1:
            out.append(f"p_t must be in (0, 1) (got {self.p_t!r})")
        if not 0 <= int(self.seed) < 2**64:
            out.append(f"seed must be a 64-bit unsigned integer (got {self.seed!r})")
        if not self.max_rounds >= 1:
            out.append(f"max_rounds must be >= 1 (got {self.max_rounds!r})")
        if not self.max_candidates >= 1:
            out.append(f"max_candidates must be >= 1 (got {self.max_candidates!r})")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return DetectionParams(**fields)

    def epsilon_for(self, cloud: PointCloud) -> float:
        """Absolute epsilon in meters; the ratio form scales by horizontal bbox width."""
        if not self.epsilon_is_ratio:
            return float(self.epsilon)
        lo, hi = cloud.bbox
        return float(self.epsilon * max(hi[0] - lo[0], hi[1] - lo[1]))


PRESETS = {
    "hillside": DetectionParams(tau=750, epsilon=0.15, r=0.05, alpha_deg=12.5, p_t=0.1),
    "courtyard": DetectionParams(tau=750, epsilon=0.3, r=0.05, alpha_deg=25.0, p_t=0.1),
}


@dataclass(frozen=True, eq=False)
class Fragment:
    """Indices of source-cloud points assigned to one detected plane.

    ``plane`` is the (nx, ny, nz, d) candidate that produced the fragment; every
    member lies within epsilon of it.
    """

    indices: np.ndarray
    plane: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class DetectionResult:
    fragments: list
    residual: np.ndarray
    n_points: int
    rounds: int = 0


def candidate_count(tau: int, remaining: int, p_t: float, cap: int) -> int:
    """Draws needed so a shape of ``tau`` points is missed with probability <= p_t."""
    if remaining <= 0:
        return 0
    share = min(tau / remaining, 1.0)
    hit = share**3
    if hit >= 1.0:
        return 1
    if hit <= 0.0:
        return cap
    t = math.log(p_t) / math.log1p(-hit)
    if not math.isfinite(t) or t > cap:
        return cap
    return max(1, math.ceil(t))


def round_rng(seed: int, round_index: int, stream=0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream, round); ``stream`` may be a tuple."""
    stream = tuple(stream) if isinstance(stream, (tuple, list)) else (stream,)
    key = [int(seed), *(int(s) for s in stream), int(round_index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def derive_seed(seed: int, *path) -> int:
    """Child seed for a labelled sub-task, e.g. derive_seed(seed, FIT, fragment)."""
    return int(np.random.SeedSequence([int(seed), *(int(p) for p in path)]).generate_state(1)[0])


def plane_basis(normal):
    """Two orthonormal in-plane axes for ``normal`` (any fixed convention)."""
    n = np.asarray(normal, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, helper)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def seed_planes(points, normals, triples, cos_alpha):
    """Planes through each 3-point set, plus a mask of seeds that pass the normal test."""
    p0 = points[triples[:, 0]]
    p1 = points[triples[:, 1]]
    p2 = points[triples[:, 2]]
    n = np.cross(p1 - p0, p2 - p0)
    length = np.linalg.norm(n, axis=1)
    span = np.maximum(np.linalg.norm(p1 - p0, axis=1), np.linalg.norm(p2 - p0, axis=1))
    ok = (length > 1e-12 * np.maximum(span * span, 1e-300)) & (length > 0)
    ok &= (triples[:, 0] != triples[:, 1]) & (triples[:, 0] != triples[:, 2]) & (triples[:, 1] != triples[:, 2])
    n = n / np.where(length > 0, length, 1.0)[:, None]
    for j in range(3):
        dots = np.abs(np.einsum("ij,ij->i", n, normals[triples[:, j]]))
        ok &= dots >= cos_alpha
    d = -np.einsum("ij,ij->i", n, p0)
    return np.column_stack([n, d]), ok


def connected_component(points, plane, resolution, multiple=CONNECTIVITY_MULTIPLE):
    """Positions (into ``points``) of the largest piece connected within multiple*resolution.

    Connectivity is evaluated in the plane's 2D projection; ties go to the
    piece containing the lowest position.
    """
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    u, v = plane_basis(np.asarray(plane)[:3])
    xy = np.ascontiguousarray(np.column_stack([points @ u, points @ v]))
    labels = kernels.radius_components(xy, float(resolution * multiple))
    counts = np.bincount(labels, minlength=len(points))
    best = int(np.argmax(counts))
    return np.flatnonzero(labels == best)


def _lsq_plane(points):
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    return np.r_[n, -n @ c]


def _score(pts, nrm, planes, eps, cos_alpha, threads):
    if threads <= 1 or len(planes) < 2 * threads:
        return kernels.count_inliers(pts, nrm, planes, eps, cos_alpha)
    chunks = np.array_split(np.arange(len(planes)), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda ix: kernels.count_inliers(pts, nrm, planes[ix], eps, cos_alpha), chunks))
    return np.concatenate(parts)


def _component(pts, nrm, plane, eps, cos_alpha, r):
    mask = kernels.inlier_mask(pts, nrm, plane, eps, cos_alpha)
    inl = np.flatnonzero(mask)
    if len(inl) == 0:
        return inl
    return inl[connected_component(pts[inl], plane, r)]


def _best_candidate(pts, nrm, params, eps, cos_alpha, round_index, stream, threads):
    """Run one sampling round; return (size, plane, positions) of the winner or None."""
    n = len(pts)
    tau = int(params.tau)
    budget = candidate_count(tau, n, params.p_t, params.max_candidates)
    rng = round_rng(params.seed, round_index, stream)
    best = None  # (size, serial, plane, positions)
    drawn = 0
    block = FIRST_BLOCK
    while drawn < budget:
        # blocks grow geometrically so an early large find can cut the budget quickly
        m = min(block, budget - drawn)
        block = min(2 * block, BLOCK)
        triples = rng.integers(0, n, size=(m, 3))
        planes, ok = seed_planes(pts, nrm, triples, cos_alpha)
        serials = drawn + np.flatnonzero(ok)
        planes = np.ascontiguousarray(planes[ok])
        drawn += m
        if len(planes):
            raw = _score(pts, nrm, planes, eps, cos_alpha, threads)
            for c in np.lexsort((serials, -raw)):
                size_bound = int(raw[c])
                if size_bound < tau:
                    break
                if best is not None and (size_bound < best[0] or (size_bound == best[0] and serials[c] > best[1])):
                    break
                comp = _component(pts, nrm, planes[c], eps, cos_alpha, params.r)
                key = (len(comp), -int(serials[c]))
                if best is None or key > (best[0], -best[1]):
                    best = (len(comp), int(serials[c]), planes[c], comp)
        if best is not None and best[0] >= tau:
            # stop once a shape as large as the current best would have been hit
            budget = min(budget, candidate_count(best[0], n, params.p_t, params.max_candidates))
    if best is None or best[0] < tau:
        return None
    size, _, plane, comp = best
    refined = _lsq_plane(pts[comp])
    comp2 = _component(pts, nrm, refined, eps, cos_alpha, params.r)
    if len(comp2) >= size:
        return len(comp2), refined, comp2
    return size, plane, comp


def detect_planes(cloud: PointCloud, params: DetectionParams, *, threads: int = 1, stream=0) -> DetectionResult:
    """Partition ``cloud`` into disjoint planar fragments plus a residual.

    ``stream`` separates independent RNG streams that share one seed (for
    example, per-band runs).  Results depend only on (cloud, params, stream),
    never on ``threads``.
    """
    if not cloud.has_normals:
        raise InputError("plane detection needs normals; run estimate_normals first")
    params.validate()
    eps = params.epsilon_for(cloud)
    cos_alpha = math.cos(math.radians(params.alpha_deg))
    points = cloud.points
    normals = cloud.normals
    remaining = np.flatnonzero(cloud.normal_valid)
    fragments = []
    rounds = 0
    while rounds < params.max_rounds and len(remaining) >= params.tau:
        pts = np.ascontiguousarray(points[remaining])
        nrm = np.ascontiguousarray(normals[remaining])
        found = _best_candidate(pts, nrm, params, eps, cos_alpha, rounds, stream, threads)
        rounds += 1
        if found is None:
            break
        size, plane, comp = found
        fragments.append(Fragment(indices=remaining[comp].copy(), plane=np.asarray(plane, dtype=float)))
        keep = np.ones(len(remaining), dtype=bool)
        keep[comp] = False
        remaining = remaining[keep]
        logger.debug("round %d: accepted fragment of %d points, %d remain", rounds, size, len(remaining))
    assigned = np.zeros(len(cloud), dtype=bool)
    for f in fragments:
        assigned[f.indices] = True
    residual = np.flatnonzero(~assigned)
    return DetectionResult(fragments=fragments, residual=residual, n_points=len(cloud), rounds=rounds)
