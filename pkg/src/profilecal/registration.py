"""Locate the target in a reconstructed cloud.

Pipeline: optional intensity binarization, statistical outlier removal,
coarse alignment (PCA or RANSAC over congruent point triples) and
point-to-point ICP. Every transform returned here maps model coordinates
(frame C) into scene coordinates (frame B).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import CoarseAlignmentError, FrameMismatchError, InvalidArgumentError, RegistrationError
from .geometry import RigidTransform, apply, compose, rotation_exp, rotation_log
from .targets import closest_points_on_triangles

PCA_CENTROID = "pca_centroid"
RANSAC_POINTS = "ransac_points"
MIN_COARSE_INLIER_FRACTION = 0.2


@dataclass(frozen=True)
class RegistrationParams:
    intensity_threshold: float = 0.5
    binarize: bool = False
    sor_k: int = 8
    sor_stddev_mult: float = 1.0
    coarse: str = PCA_CENTROID
    icp_max_iters: int = 100
    icp_tol: float = 1e-6
    icp_max_corr_dist: float = 10.0
    ransac_iters: int = 2000
    ransac_inlier_dist: float = 1.0
    ransac_scene_samples: int = 300
    ransac_model_samples: int = 1500
    use_model_surface: bool = True
    anderson_depth: int = 5

    def __post_init__(self):
        if self.coarse not in (PCA_CENTROID, RANSAC_POINTS):
            raise InvalidArgumentError(f"unknown coarse alignment mode {self.coarse!r}")
        positive = ("icp_max_iters", "icp_tol", "icp_max_corr_dist", "ransac_iters", "ransac_inlier_dist")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.sor_k < 0 or self.sor_stddev_mult <= 0:
            raise InvalidArgumentError("sor_k must be >= 0 (0 disables) and sor_stddev_mult > 0")

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return RegistrationParams(**d)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class RegistrationResult:
    transform: RigidTransform
    rms_error: float
    inlier_fraction: float
    iterations_used: int
    converged: bool
    rms_history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "transform": self.transform.to_dict(),
            "rms": self.rms_error,
            "inliers": self.inlier_fraction,
            "iterations": self.iterations_used,
            "converged": self.converged,
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def _tree(cloud):
    # clouds are immutable, so the index can live on the instance
    t = cloud.__dict__.get("_kdtree")
    if t is None:
        t = cKDTree(cloud.points)
        object.__setattr__(cloud, "_kdtree", t)
    return t


# --- preprocessing ----------------------------------------------------------------

def binarize_by_intensity(cloud, threshold=0.5):
    if not cloud.has_intensity:
        raise InvalidArgumentError("binarization needs a cloud with intensity")
    return cloud.subset(cloud.intensity >= threshold)


def statistical_outlier_removal(cloud, k=8, stddev_mult=1.0):
    """Drop points whose mean distance to their ``k`` neighbours is unusually large.

    A point survives when that mean is at most ``mu + stddev_mult * sigma``
    of the statistic over the whole cloud.
    """
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    if len(cloud) <= k:
        raise InvalidArgumentError(f"cloud has {len(cloud)} points, need more than k={k}")
    d, _ = _tree(cloud).query(cloud.points, k=k + 1)
    mean_d = d[:, 1:].mean(axis=1)
    limit = mean_d.mean() + stddev_mult * mean_d.std()
    return cloud.subset(mean_d <= limit)


# --- rigid fit --------------------------------------------------------------------

def best_fit_transform(src, dst):
    """Least-squares rigid transform with ``R @ src_i + t ~= dst_i`` (Kabsch)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    Hm = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(Hm)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, cd - R @ cs)


def inlier_fraction(scene, model, T, dist):
    """Share of scene points within ``dist`` of the model placed by ``T`` (C -> B)."""
    if not len(scene):
        return 0.0
    y = apply(T.inverse(), scene.points)
    d, _ = _tree(model).query(y, distance_upper_bound=dist)
    return float(np.mean(np.isfinite(d)))


# --- coarse alignment -----------------------------------------------------------------

def _principal_axes(pts):
    c = pts.mean(axis=0)
    X = pts - c
    w, V = np.linalg.eigh(X.T @ X / len(X))
    V = V[:, ::-1]
    # normalized third moment along each axis; sign fixes the eigenvector direction
    proj = X @ V
    sd = np.sqrt(np.maximum(w[::-1], 1e-300))
    skew = (proj ** 3).mean(axis=0) / np.maximum(sd ** 3, 1e-300)
    V = V * np.where(skew < 0, -1.0, 1.0)
    return c, V, np.abs(skew)


def _model_axes(model):
    axes = model.__dict__.get("_principal")
    if axes is None:
        axes = _principal_axes(model.points)
        object.__setattr__(model, "_principal", axes)
    return axes


def _pca_align(scene, model, params):
    cs, Vs, ks = _principal_axes(scene.points)
    cm, Vm, km = _model_axes(model)
    candidates = []
    for signs in ([1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1],
                  [-1, -1, -1], [-1, 1, 1], [1, -1, 1], [1, 1, -1]):
        R = Vs @ np.diag(signs) @ Vm.T
        if np.linalg.det(R) > 0:
            candidates.append((np.array(signs), R))
    skew_strength = np.minimum(ks, km)
    first_sign, R0 = candidates[0]
    if np.linalg.det(Vs @ Vm.T) > 0 and np.all(skew_strength > 0.1):
        return RigidTransform(R0, cs - R0 @ cm)
    # third moments are not decisive; score each proper sign pattern by fit
    sub = scene if len(scene) <= 2000 else scene.subset(np.linspace(0, len(scene) - 1, 2000).astype(int))
    best = None
    for _, R in candidates:
        T = RigidTransform(R, cs - R @ cm)
        y = apply(T.inverse(), sub.points)
        d, _ = _tree(model).query(y, distance_upper_bound=params.icp_max_corr_dist)
        score = float(np.mean(np.minimum(d, params.icp_max_corr_dist) ** 2))
        if best is None or score < best[0]:
            best = (score, T)
    return best[1]


def _voxel_downsample(pts, voxel):
    """First point (in index order) of every occupied voxel."""
    keys = np.floor(pts / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def _subsample(idx, k, rng):
    if len(idx) <= k:
        return idx
    return np.sort(rng.choice(idx, size=k, replace=False))


def _refine_coarse(T, scene_pts, model_tree, model_pts, radius, iters=15):
    """A few nearest-neighbour rigid refits with a shrinking match radius."""
    for _ in range(iters):
        y = apply(T.inverse(), scene_pts)
        d, idx = model_tree.query(y, distance_upper_bound=radius)
        ok = np.isfinite(d)
        if np.count_nonzero(ok) < 3:
            break
        step = best_fit_transform(model_pts[idx[ok]], y[ok])      # model -> current scene guess
        T = compose(T, step)
        radius = max(0.5 * radius, float(np.sqrt(np.mean(d[ok] ** 2))) * 3.0, 1e-6)
    return T


def _ransac_align(scene, model, params, rng):
    eps = params.ransac_inlier_dist
    extent = float(np.linalg.norm(model.points.max(axis=0) - model.points.min(axis=0)))
    # the model is thinned on a voxel grid and triangles match within the voxel size;
    # the scene is subsampled at random so its share of clutter is unchanged
    tol = max(eps, extent / 40.0)
    S = scene.points[_subsample(np.arange(len(scene)), params.ransac_scene_samples, rng)]
    M = model.points[_subsample(_voxel_downsample(model.points, tol), params.ransac_model_samples, rng)]
    if len(S) < 3 or len(M) < 3:
        raise CoarseAlignmentError("too few points for RANSAC")
    m_tree = cKDTree(M)
    full_tree = _tree(model)

    pairs = m_tree.query_pairs(extent + tol, output_type="ndarray")
    pd = np.linalg.norm(M[pairs[:, 0]] - M[pairs[:, 1]], axis=1)
    order = np.argsort(pd)
    pairs, pd = pairs[order], pd[order]

    min_span = 0.15 * extent
    probe = S if len(S) <= 60 else S[rng.choice(len(S), 60, replace=False)]

    def score(T, pts):
        y = apply(T.inverse(), pts)
        d, _ = m_tree.query(y, distance_upper_bound=tol)
        return float(np.mean(np.isfinite(d)))

    best, runner_up = None, None
    for _ in range(params.ransac_iters):
        tri = rng.choice(len(S), 3, replace=False)
        a, b, c = S[tri]
        d_ab, d_ac, d_bc = np.linalg.norm(a - b), np.linalg.norm(a - c), np.linalg.norm(b - c)
        if min(d_ab, d_ac, d_bc) < min_span:
            continue
        lo, hi = np.searchsorted(pd, [d_ab - tol, d_ab + tol])
        if lo == hi:
            continue
        for pick in rng.choice(np.arange(lo, hi), size=min(16, hi - lo), replace=False):
            i, j = pairs[pick]
            if rng.random() < 0.5:
                i, j = j, i
            near = np.asarray(m_tree.query_ball_point(M[i], d_ac + tol), dtype=int)
            if not len(near):
                continue
            ok = (np.abs(np.linalg.norm(M[near] - M[i], axis=1) - d_ac) < tol) & (
                np.abs(np.linalg.norm(M[near] - M[j], axis=1) - d_bc) < tol
            )
            if not np.any(ok):
                continue
            k = near[ok][rng.integers(np.count_nonzero(ok))]
            T = best_fit_transform(M[[i, j, k]], np.array([a, b, c]))
            if score(T, probe) < 0.5 * (best[0] if best else 0.0):
                continue
            f = score(T, S)
            if best is None or f > best[0]:
                if best is not None and not _same_pose(best[1], T, tol):
                    runner_up = best
                best = (f, T)
            elif not _same_pose(best[1], T, tol) and (runner_up is None or f > runner_up[0]):
                runner_up = (f, T)
        if best is not None and best[0] >= 0.95:
            break
    if best is None:
        raise CoarseAlignmentError("RANSAC found no congruent point triple in the model")
    # local optimization of the winner on the full model
    T = _refine_coarse(best[1], S, full_tree, model.points, 2.0 * tol)
    f = inlier_fraction(scene, model, T, max(eps, tol))
    if f < MIN_COARSE_INLIER_FRACTION:
        raise CoarseAlignmentError(f"RANSAC found no alignment with inlier fraction >= "
                                   f"{MIN_COARSE_INLIER_FRACTION} (best {f:.3f})")
    if runner_up is not None and runner_up[0] >= 0.9 * best[0]:
        warnings.warn(
            f"ambiguous target: a distinct alignment scores {runner_up[0]:.3f} against the best "
            f"{best[0]:.3f}; the target may be symmetric",
            stacklevel=3,
        )
    return T


def _same_pose(T1, T2, eps):
    dR = T1.rotation.T @ T2.rotation
    ang = np.linalg.norm(rotation_log(dR))
    return ang < math.radians(5.0) and np.linalg.norm(T1.translation - T2.translation) < 5 * max(eps, 1.0)


def coarse_align(scene, model, params=None, rng=None):
    """Initial model-to-scene transform, then an overlap sanity check."""
    params = params or RegistrationParams()
    if not len(scene) or not len(model):
        raise InvalidArgumentError("coarse alignment needs nonempty clouds")
    if params.coarse == PCA_CENTROID:
        T = _pca_align(scene, model, params)
        if inlier_fraction(scene, model, T, params.icp_max_corr_dist) < MIN_COARSE_INLIER_FRACTION:
            raise CoarseAlignmentError("PCA alignment leaves scene and model without overlap")
        return T
    rng = rng if rng is not None else np.random.default_rng(0)
    return _ransac_align(scene, model, params, rng)


# --- fine registration ------------------------------------------------------------------

SURFACE_CELL = 2.0      # mm, voxel size of the triangle index
SURFACE_REACH = 2.0     # mm, closest points are exact within this distance of the mesh


class _SurfaceIndex:
    """Uniform voxel grid listing, per cell, every triangle near the cell.

    A cell keeps the triangles within ``reach + cell * sqrt(3) / 2`` of its
    centre, so for any query point closer than ``reach`` to the mesh the
    nearest triangle is among the candidates of its cell and the closest
    point found is exact.
    """

    def __init__(self, mesh, cell=SURFACE_CELL, reach=SURFACE_REACH):
        self.a, self.b, self.c = mesh.corners()
        self.cell = float(cell)
        margin = reach + self.cell * math.sqrt(3.0) / 2.0
        v = mesh.vertices
        self.lo = v.min(axis=0) - margin - self.cell
        self.shape = np.ceil((v.max(axis=0) + margin + self.cell - self.lo) / self.cell).astype(int)
        cells, tris = [], []
        for t in range(len(mesh.triangles)):
            corners = np.array([self.a[t], self.b[t], self.c[t]])
            i0 = np.floor((corners.min(axis=0) - margin - self.lo) / self.cell).astype(int)
            i1 = np.floor((corners.max(axis=0) + margin - self.lo) / self.cell).astype(int)
            i0, i1 = np.maximum(i0, 0), np.minimum(i1, self.shape - 1)
            grid = np.stack(np.meshgrid(*[np.arange(i0[k], i1[k] + 1) for k in range(3)], indexing="ij"), -1)
            ijk = grid.reshape(-1, 3)
            centre = self.lo + (ijk + 0.5) * self.cell
            n = len(ijk)
            foot = closest_points_on_triangles(centre, np.repeat(corners[:1], n, 0),
                                               np.repeat(corners[1:2], n, 0), np.repeat(corners[2:], n, 0))
            near = np.linalg.norm(foot - centre, axis=1) <= margin
            cells.append(np.ravel_multi_index(ijk[near].T, self.shape))
            tris.append(np.full(np.count_nonzero(near), t))
        cells = np.concatenate(cells) if cells else np.zeros(0, int)
        tris = np.concatenate(tris) if tris else np.zeros(0, int)
        order = np.argsort(cells, kind="stable")
        self.tris = tris[order]
        self.start = np.searchsorted(cells[order], np.arange(int(np.prod(self.shape)) + 1))

    def closest(self, Y):
        """Closest mesh point per row of ``Y``; ``nan`` rows where the cell is empty."""
        ijk = np.floor((Y - self.lo) / self.cell).astype(int)
        inside = np.all((ijk >= 0) & (ijk < self.shape), axis=1)
        cid = np.zeros(len(Y), dtype=int)
        cid[inside] = np.ravel_multi_index(ijk[inside].T, self.shape)
        s0 = self.start[cid]
        cnt = np.where(inside, self.start[cid + 1] - s0, 0)
        rows = np.repeat(np.arange(len(Y)), cnt)
        offs = np.arange(len(rows)) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        f = self.tris[s0[rows] + offs]
        foot = closest_points_on_triangles(Y[rows], self.a[f], self.b[f], self.c[f])
        d = np.linalg.norm(foot - Y[rows], axis=1)
        # first entry of each row after sorting by (row, distance) is that row's minimum
        order = np.lexsort((d, rows))
        first = order[np.r_[True, rows[order][1:] != rows[order][:-1]]] if len(rows) else order
        out = np.full(Y.shape, np.nan)
        dist = np.full(len(Y), np.inf)
        out[rows[first]] = foot[first]
        dist[rows[first]] = d[first]
        return out, dist


def _surface_index(model):
    idx = model.__dict__.get("_surface_index")
    if idx is None:
        idx = _SurfaceIndex(model.mesh)
        object.__setattr__(model, "_surface_index", idx)
    return idx


def _correspondences(tree, model, Y, tau, surface):
    """Closest model point for each row of ``Y``; ``inf`` distance beyond ``tau``.

    With ``surface`` the closest point is taken on the model's mesh (see
    :class:`_SurfaceIndex`); points in cells without nearby triangles fall
    back to the nearest sample.
    """
    target = np.zeros_like(Y)
    dist = np.full(len(Y), np.inf)
    todo = np.ones(len(Y), dtype=bool)
    if surface:
        foot, d = _surface_index(model).closest(Y)
        todo = ~np.isfinite(d)
        target[~todo], dist[~todo] = foot[~todo], d[~todo]
    if np.any(todo):
        d, idx = tree.query(Y[todo], distance_upper_bound=tau)
        hit = np.isfinite(d)
        sel = np.flatnonzero(todo)[hit]
        target[sel], dist[sel] = model.points[idx[hit]], d[hit]
    ok = dist <= tau
    return np.where(ok, dist, np.inf), target, ok


def icp(scene, model, init=None, params=None):
    """ICP refining ``init`` (model -> scene) with SVD rigid updates.

    Each scene point is paired with its closest model point; pairs farther
    apart than ``icp_max_corr_dist`` are rejected and the rigid transform
    minimizing the squared distances of the remaining pairs is solved via SVD
    of their cross-covariance. When the model is a
    :class:`~profilecal.targets.SurfaceSampleCloud` and ``use_model_surface``
    is set, the closest point is located on the mesh triangles rather than at
    a sample, which removes the sampling-density bias.

    Successive SVD updates are extrapolated with Anderson acceleration
    (``anderson_depth`` past iterates, 0 disables); an extrapolated pose is
    kept only if it lowers the cost, otherwise the plain update is used.

    ``rms_history`` holds the truncated cost ``sqrt(mean(min(d, tau)**2))``
    with ``tau = icp_max_corr_dist`` at every accepted pose, and
    ``rms_error`` is its final value.
    """
    params = params or RegistrationParams()
    if not len(scene) or not len(model):
        raise InvalidArgumentError("ICP needs nonempty clouds")
    tau = params.icp_max_corr_dist
    tree = _tree(model)
    surface = params.use_model_surface and getattr(model, "mesh", None) is not None
    S = scene.points
    T0 = (init or RigidTransform()).inverse()      # scene -> model
    # pose parameters: rotation about the scene centroid (scaled to mm) and translation
    c = apply(T0, S.mean(axis=0))
    L = max(float(np.sqrt(np.mean(np.sum((S - S.mean(axis=0)) ** 2, axis=1)))), 1e-9)

    def pose(q):
        R = rotation_exp(q[:3] / L)
        return compose(RigidTransform(R, c + q[3:] - R @ c), T0)

    def params_of(T):
        D = compose(T, T0.inverse())
        return np.concatenate([rotation_log(D.rotation) * L, D.translation - c + D.rotation @ c])

    def evaluate(q):
        Y = apply(pose(q), S)
        d, target, ok = _correspondences(tree, model, Y, tau, surface)
        cost = math.sqrt(float(np.mean(np.where(ok, d, tau) ** 2)))
        return Y, target, ok, cost

    q = np.zeros(6)
    Y, target, ok, cost = evaluate(q)
    history = [cost]
    G, F = [], []
    converged = False
    it = 0
    while it < params.icp_max_iters:
        if not np.any(ok):
            raise RegistrationError("every correspondence exceeds icp_max_corr_dist")
        it += 1
        step = best_fit_transform(Y[ok], target[ok])
        g = params_of(compose(step, pose(q)))
        G.append(g)
        F.append(g - q)
        del G[:-(params.anderson_depth + 1)], F[:-(params.anderson_depth + 1)]
        q_new, state = g, None
        if params.anderson_depth > 0 and len(F) >= 2:
            dF = np.diff(np.array(F), axis=0).T
            dG = np.diff(np.array(G), axis=0).T
            gamma = np.linalg.lstsq(dF, F[-1], rcond=None)[0]
            q_aa = g - dG @ gamma
            state = evaluate(q_aa)
            if state[3] < cost and np.all(np.isfinite(q_aa)):
                q_new = q_aa
            else:
                state = None
                G, F = G[-1:], F[-1:]
        if state is None:
            state = evaluate(q_new)
        moved = np.linalg.norm(q_new - q)
        q = q_new
        Y, target, ok, cost = state
        history.append(cost)
        if moved < params.icp_tol:
            converged = True
            break
    if not np.any(ok):
        raise RegistrationError("every correspondence exceeds icp_max_corr_dist")
    return RegistrationResult(
        transform=pose(q).inverse(),
        rms_error=history[-1],
        inlier_fraction=float(np.mean(ok)),
        iterations_used=it,
        converged=converged,
        rms_history=history,
    )


def localize_target(recon, model, params=None, rng=None):
    """Register a reconstructed cloud against the target model.

    ``recon`` may be a :class:`~profilecal.reconstruct.ReconstructedCloud` or
    a plain cloud in frame B. The translation of the returned transform is
    the origin of the target frame as seen in that cloud.
    """
    params = params or RegistrationParams()
    scene = getattr(recon, "cloud", recon)
    if scene.frame != "B":
        raise FrameMismatchError(f"scene must be expressed in frame B, got {scene.frame!r}")
    if params.binarize:
        scene = binarize_by_intensity(scene, params.intensity_threshold)
        if model.has_intensity and np.any(model.intensity < params.intensity_threshold):
            model = binarize_by_intensity(model, params.intensity_threshold)
    if params.sor_k > 0:
        scene = statistical_outlier_removal(scene, params.sor_k, params.sor_stddev_mult)
    init = coarse_align(scene, model, params, rng)
    return icp(scene, model, init, params)
