"""Style embedding pipeline: L2 normalization, PCA at a retained-variance
target, diagonal-covariance GMM fit by EM, posterior assignment, and
centroid-distance exemplar ranking.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, NumericError

VARIANCE_FLOOR = 1e-6
EIG_ZERO_REL = 1e-12
ESTEP_BLOCK = 8192

MODEL_MAGIC = b"SSTY"
MODEL_VERSION = 1


def normalize_embedding(v: np.ndarray) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not np.isfinite(norm):
        raise DataError("normalize_embedding: zero or non-finite vector")
    return arr / norm


def normalize_rows(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise DataError("normalize_rows: zero or non-finite row")
    return X / norms[:, None]


@dataclass(frozen=True)
class PcaBasis:
    mean: np.ndarray                 # (D,)
    components: np.ndarray           # (d, D), orthonormal rows
    explained_variance: np.ndarray   # (d,), non-increasing
    retained_fraction: float         # achieved cumulative fraction
    total_variance: float

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) @ self.components + self.mean

    @property
    def dim(self) -> int:
        return self.components.shape[0]


def _fix_signs(components: np.ndarray) -> np.ndarray:
    # Deterministic orientation: largest-magnitude coordinate positive.
    out = components.copy()
    for i in range(out.shape[0]):
        j = int(np.argmax(np.abs(out[i])))
        if out[i, j] < 0:
            out[i] = -out[i]
    return out


def _select_dim(eigvals: np.ndarray, retain: float) -> int:
    total = float(eigvals.sum())
    if total <= 0:
        raise NumericError("fit_pca: no variance in the data")
    cum = np.cumsum(eigvals)
    target = retain * total
    d = int(np.searchsorted(cum, target - 1e-12 * total) + 1)
    return min(d, len(eigvals))


def fit_pca(X: np.ndarray, retain: float = 0.90, *, method: str = "exact",
            seed: int = 0) -> PcaBasis:
    """Minimal-dimension PCA basis whose cumulative explained variance >= retain.

    method="exact" eigendecomposes the DxD sample covariance; "randomized"
    uses a seeded range-finder for corpus-scale D and verifies the retained
    fraction against the exact trace.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("fit_pca: need at least 2 samples")
    if not (0.0 < retain <= 1.0):
        raise DataError(f"fit_pca: retain must be in (0, 1], got {retain}")
    if not np.all(np.isfinite(X)):
        raise NumericError("fit_pca: non-finite input")
    n, D = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean

    if method == "exact":
        cov = (Xc.T @ Xc) / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        eigvals = eigvals[::-1]
        eigvecs = eigvecs[:, ::-1]
    elif method == "randomized":
        eigvals, eigvecs = _randomized_eig(Xc, n, D, retain, seed)
    else:
        raise DataError(f"fit_pca: unknown method {method!r}")

    eigvals = np.clip(eigvals, 0.0, None)
    total = float(np.trace(Xc.T @ Xc) / (n - 1)) if method == "randomized" else float(eigvals.sum())
    # numerically-zero directions never count toward the basis
    nonzero = eigvals > EIG_ZERO_REL * max(float(eigvals[0]), 1.0)
    eigvals_nz = eigvals[nonzero]
    eigvecs_nz = eigvecs[:, nonzero]
    if method == "randomized":
        # trace-based total keeps the rule honest when only top-k pairs exist
        d = int(np.searchsorted(np.cumsum(eigvals_nz), retain * total - 1e-12 * total) + 1)
        if d > len(eigvals_nz):
            raise NumericError("fit_pca: randomized sketch too small for retain target")
    else:
        total = float(eigvals_nz.sum())
        d = _select_dim(eigvals_nz, retain)

    components = _fix_signs(eigvecs_nz[:, :d].T)
    explained = eigvals_nz[:d]
    return PcaBasis(
        mean=mean,
        components=components,
        explained_variance=explained,
        retained_fraction=float(explained.sum() / total),
        total_variance=total,
    )


def _randomized_eig(Xc: np.ndarray, n: int, D: int, retain: float, seed: int,
                    oversample: int = 10, power_iters: int = 2):
    rng = np.random.default_rng(seed)
    total = float(np.trace(Xc.T @ Xc) / (n - 1))
    k = min(D, max(16, int(0.2 * D)))
    while True:
        m = min(D, k + oversample)
        Omega = rng.standard_normal((D, m))
        Y = Xc.T @ (Xc @ Omega) / (n - 1)
        for _ in range(power_iters):
            Y, _ = np.linalg.qr(Y)
            Y = Xc.T @ (Xc @ Y) / (n - 1)
        Q, _ = np.linalg.qr(Y)
        B = Q.T @ (Xc.T @ (Xc @ Q)) / (n - 1)
        vals, vecs = np.linalg.eigh((B + B.T) / 2)
        vals = np.clip(vals[::-1], 0.0, None)
        vecs = Q @ vecs[:, ::-1]
        if vals.sum() >= retain * total or m == D:
            return vals, vecs
        k = min(D, 2 * k)


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray    # (K,), sums to 1
    means: np.ndarray      # (K, d)
    variances: np.ndarray  # (K, d), >= floor

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def validate(self) -> "GmmModel":
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise NumericError("gmm: weights do not sum to 1")
        if np.any(self.variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise NumericError("gmm: variance below floor")
        return self


def _log_prob_block(X: np.ndarray, model_log_w, means, variances) -> np.ndarray:
    # log w_k + log N(x | mu_k, diag sigma2_k), shape (n, K)
    inv = 1.0 / variances
    quad = (X * X) @ inv.T - 2.0 * (X @ (means * inv).T) + np.sum(means * means * inv, axis=1)
    log_det = np.sum(np.log(variances), axis=1)
    d = X.shape[1]
    return model_log_w - 0.5 * (d * np.log(2 * np.pi) + log_det + quad)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def _kmeanspp_centers(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(0, n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = X[rng.integers(0, n)]
        else:
            centers[i] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
    return centers


def fit_gmm(X: np.ndarray, k: int, seed: int = 0, max_iter: int = 200,
            rel_tol: float = 1e-4, *, threads: int = 1) -> tuple[GmmModel, np.ndarray]:
    """EM fit of a diagonal-covariance mixture from k-means++-style seeding.

    Returns (model, per-iteration mean log-likelihood).  The E-step runs over
    fixed-size blocks reduced in index order, so results are identical for
    any thread count.  Components emptied by an iteration are re-seeded from
    the lowest-likelihood point.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("fit_gmm: expected a 2-D point array")
    n, d = X.shape
    if n < k:
        raise DataError(f"fit_gmm: {n} points < {k} components")
    if not np.all(np.isfinite(X)):
        raise NumericError("fit_gmm: non-finite input")

    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(X, k, rng)
    global_var = np.maximum(X.var(axis=0), VARIANCE_FLOOR)
    variances = np.tile(global_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    blocks = [slice(i, min(i + ESTEP_BLOCK, n)) for i in range(0, n, ESTEP_BLOCK)]
    history = []
    prev_ll = -np.inf

    def estep_block(block: slice):
        log_w = np.log(weights)
        lp = _log_prob_block(X[block], log_w, means, variances)
        norm = _logsumexp(lp, axis=1)
        resp = np.exp(lp - norm[:, None])
        xb = X[block]
        return (
            float(norm.sum()),
            resp.sum(axis=0),
            resp.T @ xb,
            resp.T @ (xb * xb),
            norm,
        )

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for _ in range(max_iter):
            if pool is not None:
                parts = list(pool.map(estep_block, blocks))
            else:
                parts = [estep_block(b) for b in blocks]
            ll_total = 0.0
            nk = np.zeros(k)
            sk = np.zeros((k, d))
            qk = np.zeros((k, d))
            point_ll = np.empty(n)
            for block, (ll, pn, ps, pq, norm) in zip(blocks, parts):
                ll_total += ll
                nk += pn
                sk += ps
                qk += pq
                point_ll[block] = norm
            ll_mean = ll_total / n
            history.append(ll_mean)

            # M-step
            empty = nk < 1e-10
            safe_nk = np.where(empty, 1.0, nk)
            weights = nk / n
            means = sk / safe_nk[:, None]
            variances = np.maximum(qk / safe_nk[:, None] - means ** 2, VARIANCE_FLOOR)

            if np.any(empty):
                order = np.argsort(point_ll, kind="stable")
                for slot, comp in enumerate(np.nonzero(empty)[0]):
                    means[comp] = X[order[slot % n]]
                    variances[comp] = global_var
                    weights[comp] = 1.0 / n
                weights = weights / weights.sum()
            else:
                weights = weights / weights.sum()
                improvement = (ll_mean - prev_ll) / max(abs(prev_ll), 1e-12)
                if prev_ll > -np.inf and improvement < rel_tol:
                    break
            prev_ll = ll_mean
    finally:
        if pool is not None:
            pool.shutdown()

    model = GmmModel(weights=weights, means=means, variances=variances).validate()
    return model, np.asarray(history)


@dataclass(frozen=True)
class ClusterAssignment:
    record_id: str
    cluster_id: int
    distance: float


def posterior_assign(Z: np.ndarray, gmm: GmmModel) -> tuple[np.ndarray, np.ndarray]:
    """Max-posterior component per projected point (ties -> lowest id) and
    Euclidean distance to that component's mean."""
    lp = _log_prob_block(Z, np.log(gmm.weights), gmm.means, gmm.variances)
    ids = np.argmax(lp, axis=1)
    diffs = Z - gmm.means[ids]
    dists = np.sqrt(np.sum(diffs * diffs, axis=1))
    return ids, dists


def assign(record_id: str, embedding: np.ndarray, basis: PcaBasis, gmm: GmmModel) -> ClusterAssignment:
    z = basis.transform(normalize_embedding(embedding)[None, :])
    ids, dists = posterior_assign(z, gmm)
    return ClusterAssignment(record_id=record_id, cluster_id=int(ids[0]), distance=float(dists[0]))


def assign_all(record_ids: Sequence[str], embeddings: np.ndarray, basis: PcaBasis,
               gmm: GmmModel, *, threads: int = 1) -> list[ClusterAssignment]:
    X = normalize_rows(np.asarray(embeddings, dtype=np.float64))
    Z = basis.transform(X)
    blocks = [slice(i, min(i + ESTEP_BLOCK, len(Z))) for i in range(0, len(Z), ESTEP_BLOCK)]

    def run(block: slice):
        return posterior_assign(Z[block], gmm)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    out = []
    for block, (ids, dists) in zip(blocks, parts):
        for offset, (cid, dist) in enumerate(zip(ids, dists)):
            out.append(ClusterAssignment(record_ids[block.start + offset], int(cid), float(dist)))
    return out


def cluster_exemplars(assignments: Iterable[ClusterAssignment], cluster_id: int,
                      top_m: int) -> list[str]:
    """Member record ids closest to the cluster center, ascending distance (ties by id)."""
    members = [a for a in assignments if a.cluster_id == cluster_id]
    members.sort(key=lambda a: (a.distance, a.record_id))
    return [a.record_id for a in members[:top_m]]


# ---------------------------------------------------------------------------
# StyleModel binary file: versioned header + float64 arrays, little-endian.


def save_style_model(basis: PcaBasis, gmm: GmmModel, path) -> None:
    d, D = basis.components.shape
    k = gmm.n_components
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IIII", MODEL_VERSION, D, d, k))
        fh.write(struct.pack("<dd", basis.retained_fraction, basis.total_variance))
        for arr in (basis.mean, basis.components, basis.explained_variance,
                    gmm.weights, gmm.means, gmm.variances):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_style_model(path) -> tuple[PcaBasis, GmmModel]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise DataError(f"style model {path}: bad magic")
        version, D, d, k = struct.unpack("<IIII", fh.read(16))
        if version != MODEL_VERSION:
            raise DataError(f"style model {path}: unsupported version {version}")
        retained, total = struct.unpack("<dd", fh.read(16))

        def read_arr(shape):
            size = int(np.prod(shape)) * 8
            buf = fh.read(size)
            if len(buf) != size:
                raise DataError(f"style model {path}: truncated")
            return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

        mean = read_arr((D,))
        components = read_arr((d, D))
        explained = read_arr((d,))
        weights = read_arr((k,))
        means = read_arr((k, d))
        variances = read_arr((k, d))
    basis = PcaBasis(mean=mean, components=components, explained_variance=explained,
                     retained_fraction=retained, total_variance=total)
    gmm = GmmModel(weights=weights, means=means, variances=variances)
    return basis, gmm


def write_assignments(assignments: Iterable[ClusterAssignment], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# record_id\tcluster_id\tdistance\n")
        for a in assignments:
            fh.write(f"{a.record_id}\t{a.cluster_id}\t{a.distance!r}\n")


def read_assignments(path) -> list[ClusterAssignment]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"assignments line {lineno}: expected 3 fields")
            out.append(ClusterAssignment(parts[0], int(parts[1]), float(parts[2])))
    return out
