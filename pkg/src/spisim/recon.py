"""Image reconstruction from compressive measurements.

Pipeline: the (possibly nonorthogonal) effective measurement matrix M is
decomposed as M = U D V*; the pseudoinverse M+ = V D+ U* gives the fast
direct estimate X ~= M+ Y (batch or streamed one coefficient at a time),
while total-variation minimization runs on the orthogonalized system
V* x = D+ U* Y, so the solver only ever sees a semiorthogonal constraint
and its projection step is a single forward/adjoint pair.

Binary pattern rows enter the linear model in bipolar form 2P - 1 (the
constant row is unchanged by that map), pairing with the differential
measurement Y - Ybar. Complex noiselet rows enter as stacked real and
imaginary parts with the measurement stacked the same way.

The TV solver is a Nesterov-accelerated smoothed-TV scheme with continuation
over a decreasing smoothing parameter: isotropic TV, forward differences,
reflexive boundary, Huber smoothing, and per-stage stopping on the relative
change of the smoothed objective against a trailing window.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .acquire import Measurement, combine_differential
from .imgcore import Image
from .patterns import (DETERMINISTIC_KINDS, PatternSet, bipolar_rows, noiselet2,
                       noiselet2_inverse, wht2)

SPIV_MAGIC = b"SPIV"
SPIV_VERSION = 1
_SPIV_HEADER = struct.Struct("<4sHIId32s")

DEFAULT_RANK_TOL = 1e-10


# --------------------------------------------------------------------------
# effective linear model
# --------------------------------------------------------------------------

def effective_matrix(ps: PatternSet, dtype=np.float64):
    """The real matrix the linear model Y_eff = M_eff x actually uses.

    morlet-real / walsh-hadamard: rows as stored. morlet-binary: 2P - 1
    (the all-ones constant row is a fixed point of that map). noiselet:
    real and imaginary parts stacked, Re rows first (2k x n).
    """
    if ps.kind == "morlet-binary":
        return bipolar_rows(ps, dtype=dtype)
    if ps.kind == "noiselet":
        rows = ps.dense()
        return np.vstack([rows.real, rows.imag]).astype(dtype, copy=False)
    return ps.dense(dtype)


def effective_measurement(ps: PatternSet, m: Measurement):
    """Measurement vector paired with effective_matrix.

    morlet-binary: Y - Ybar when differential; otherwise 2Y - Y0 using the
    constant row's total-flux sample (entry 0 stays Y0). noiselet: [Re; Im].
    """
    if ps.kind == "morlet-binary":
        if m.is_differential:
            return combine_differential(m)
        if not ps.row_meta[0].is_constant:
            raise ValueError("non-differential binary measurement needs the constant row")
        y = 2.0 * m.values - m.values[0]
        y[0] = m.values[0]
        return y
    if ps.kind == "noiselet":
        return np.concatenate([m.values.real, m.values.imag])
    return np.asarray(m.values, dtype=np.float64)


# --------------------------------------------------------------------------
# SVD factors and pseudoinverse
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SvdFactors:
    """M = U diag(d) Vt with orthonormal U columns and orthonormal Vt rows.

    d is sorted descending; effective_rank counts d_i > rank_tol * d_0.
    width/height carry the pixel-grid shape for reshaping reconstructions.
    """

    u: np.ndarray
    d: np.ndarray
    vt: np.ndarray
    rank_tol: float
    effective_rank: int
    width: int
    height: int
    source_hash: bytes = b"\x00" * 32

    @property
    def v(self):
        return self.vt.T

    @property
    def k(self):
        return self.u.shape[0]

    @property
    def n(self):
        return self.vt.shape[1]

    def truncated(self):
        """(u_r, d_r, vt_r) restricted to the effective rank."""
        r = self.effective_rank
        return self.u[:, :r], self.d[:r], self.vt[:r]


def factorize(source, rank_tol=DEFAULT_RANK_TOL, width=None, height=None) -> SvdFactors:
    """SVD of a PatternSet's effective matrix, or of a plain matrix."""
    if isinstance(source, PatternSet):
        mat = effective_matrix(source)
        width, height = source.width, source.height
        digest = source.content_hash()
    else:
        mat = np.asarray(source, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError("matrix must be 2D")
        digest = b"\x00" * 32
        if width is None:
            width, height = mat.shape[1], 1
    if not np.any(mat):
        raise ValueError("degenerate all-zero measurement matrix")
    u, d, vt = np.linalg.svd(mat, full_matrices=False)
    rank = int(np.count_nonzero(d > rank_tol * d[0]))
    return SvdFactors(u=u, d=d, vt=vt, rank_tol=rank_tol, effective_rank=rank,
                      width=width, height=height, source_hash=digest)


@dataclass(frozen=True)
class PinvMatrix:
    """Dense Moore-Penrose pseudoinverse (n x k), truncated at rank_tol."""

    data: np.ndarray
    source_hash: bytes
    rank_tol: float
    width: int = 0
    height: int = 0

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def k(self):
        return self.data.shape[1]


def pinv_matrix(f: SvdFactors) -> PinvMatrix:
    u_r, d_r, vt_r = f.truncated()
    data = (vt_r.T / d_r) @ u_r.T
    return PinvMatrix(data=np.ascontiguousarray(data), source_hash=f.source_hash,
                      rank_tol=f.rank_tol, width=f.width, height=f.height)


def pinv_reconstruct(f, y, width=None, height=None) -> Image:
    """X ~= M+ Y via the truncated SVD (or a precomputed PinvMatrix)."""
    y = np.asarray(y, dtype=np.float64)
    if isinstance(f, PinvMatrix):
        if y.shape[0] != f.k:
            raise ValueError(f"measurement length {y.shape[0]} != k={f.k}")
        x = f.data @ y
    elif isinstance(f, SvdFactors):
        if y.shape[0] != f.k:
            raise ValueError(f"measurement length {y.shape[0]} != k={f.k}")
        u_r, d_r, vt_r = f.truncated()
        x = vt_r.T @ ((u_r.T @ y) / d_r)
    else:
        raise TypeError("expected SvdFactors or PinvMatrix")
    w = width or f.width
    h = height or f.height
    return Image(x.reshape(h, w))


class PinvStream:
    """On-the-fly pseudoinverse recovery: acc += column_j(M+) * y_j.

    Every row index must be applied exactly once (duplicates raise); the
    accumulator uses compensated (Kahan) summation so update order does not
    matter beyond 1 ulp noise. After all k updates the accumulator equals
    the batch product M+ Y.
    """

    def __init__(self, pinv: PinvMatrix, width=None, height=None):
        self._pinv = pinv
        self._acc = np.zeros(pinv.n)
        self._comp = np.zeros(pinv.n)
        self._seen = np.zeros(pinv.k, dtype=bool)
        self._width = width or pinv.width
        self._height = height or pinv.height

    def update(self, j, y_j):
        if not 0 <= j < self._pinv.k:
            raise IndexError(f"row index {j} out of range")
        if self._seen[j]:
            raise ValueError(f"duplicate stream update for row {j}")
        self._seen[j] = True
        term = self._pinv.data[:, j] * y_j - self._comp
        total = self._acc + term
        self._comp = (total - self._acc) - term
        self._acc = total
        return self

    @property
    def complete(self):
        return bool(self._seen.all())

    def image(self) -> Image:
        return Image(self._acc.reshape(self._height, self._width))


# --------------------------------------------------------------------------
# SPIV pseudoinverse cache
# --------------------------------------------------------------------------

def save_pinv(pm: PinvMatrix, path):
    with open(path, "wb") as fh:
        fh.write(_SPIV_HEADER.pack(SPIV_MAGIC, SPIV_VERSION, pm.n, pm.k,
                                   pm.rank_tol, pm.source_hash))
        fh.write(np.asfortranarray(pm.data).tobytes(order="F"))


def load_pinv(path, width=None, height=None) -> PinvMatrix:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, version, n, k, rank_tol, digest = _SPIV_HEADER.unpack_from(buf)
    if magic != SPIV_MAGIC:
        raise ValueError("bad SPIV magic")
    if version != SPIV_VERSION:
        raise ValueError(f"unsupported SPIV version {version}")
    payload = np.frombuffer(buf, dtype="<f8", count=n * k, offset=_SPIV_HEADER.size)
    data = payload.reshape(n, k, order="F").copy()
    return PinvMatrix(data=data, source_hash=digest, rank_tol=rank_tol,
                      width=width or n, height=height or 1)


def cached_pinv(ps: PatternSet, cache_dir, rank_tol=DEFAULT_RANK_TOL) -> PinvMatrix:
    """Load the pseudoinverse for `ps` from cache_dir, computing it on a miss."""
    import os

    digest = ps.content_hash()
    path = os.path.join(cache_dir, digest.hex() + ".spiv")
    if os.path.exists(path):
        pm = load_pinv(path, width=ps.width, height=ps.height)
        if pm.source_hash == digest and pm.rank_tol == rank_tol:
            return pm
    pm = pinv_matrix(factorize(ps, rank_tol=rank_tol))
    os.makedirs(cache_dir, exist_ok=True)
    save_pinv(pm, path)
    return pm


# --------------------------------------------------------------------------
# semiorthogonal operators for the TV solver
# --------------------------------------------------------------------------

class _DenseVtOp:
    """A = Vt (r x n) with orthonormal rows, dense."""

    def __init__(self, vt):
        self.vt = vt
        self.r, self.n = vt.shape

    def forward(self, x):   # (B, n) -> (B, r)
        return x @ self.vt.T

    def adjoint(self, z):   # (B, r) -> (B, n)
        return z @ self.vt


class _GramVtOp:
    """A = D^-1 U^T M without materializing V; M may be float32.

    U, d come from the eigendecomposition of the Gram matrix M M^T, so
    A A^T = I to factorization accuracy while only k x k dense factors and
    the row matrix itself are kept in memory.
    """

    def __init__(self, m_rows, u_r, d_r):
        self.m = m_rows
        self.w = np.ascontiguousarray(u_r / d_r)  # (k, r)
        self.r = self.w.shape[1]
        self.n = m_rows.shape[1]
        self._dt = m_rows.dtype

    def forward(self, x):
        t = self.m @ np.ascontiguousarray(x.T, dtype=self._dt)  # (k, B)
        return t.T.astype(np.float64) @ self.w

    def adjoint(self, z):
        s = (z @ self.w.T).astype(self._dt)  # (B, k)
        return (s @ self.m).astype(np.float64)


class _WhtSubsetOp:
    """Orthonormal Walsh-Hadamard rows selected by index; fast transform."""

    def __init__(self, indices, width, height):
        self.idx = np.asarray(indices)
        self.width, self.height = width, height
        self.r = len(self.idx)
        self.n = width * height

    def forward(self, x):
        t = wht2(x.reshape(-1, self.height, self.width))
        return t.reshape(-1, self.n)[:, self.idx]

    def adjoint(self, z):
        grid = np.zeros((z.shape[0], self.n))
        grid[:, self.idx] = z
        return wht2(grid.reshape(-1, self.height, self.width)).reshape(-1, self.n)


class _NoiseletSubsetOp:
    """Orthonormalized real view of complex noiselet rows.

    The squared noiselet matrix is the index-reversal permutation, so row
    n-1-i is the conjugate of row i. After dropping reversal duplicates the
    stacked rows sqrt(2)*[Re; Im] are exactly orthonormal.
    """

    def __init__(self, indices_dedup, width, height):
        self.idx = np.asarray(indices_dedup)
        self.width, self.height = width, height
        self.kd = len(self.idx)
        self.r = 2 * self.kd
        self.n = width * height

    def forward(self, x):
        t = noiselet2(x.reshape(-1, self.height, self.width).astype(np.complex128))
        sel = t.reshape(-1, self.n)[:, self.idx] * np.sqrt(2.0)
        return np.concatenate([sel.real, sel.imag], axis=1)

    def adjoint(self, z):
        w = z[:, : self.kd] + 1j * z[:, self.kd:]
        grid = np.zeros((z.shape[0], self.n), dtype=np.complex128)
        grid[:, self.idx] = np.conj(w) * np.sqrt(2.0)
        return noiselet2(grid.reshape(-1, self.height, self.width)) \
            .real.reshape(-1, self.n)


def _dedup_noiselet_indices(indices, n):
    """Drop the later member of every reversal pair (i, n-1-i)."""
    keep = []
    seen = set()
    for i in indices:
        if (n - 1 - i) in seen:
            continue
        seen.add(i)
        keep.append(i)
    return keep


def _noiselet_orthonormal_b(ps: PatternSet, values):
    """Dedup indices and the matching right-hand side sqrt(2)*[Re; Im].

    Reversal-pair samples are conjugate duplicates for a real image; they
    are averaged into the representative index.
    """
    n = ps.n
    pos = {idx: a for a, idx in enumerate(ps.row_meta)}
    keep = _dedup_noiselet_indices(ps.row_meta, n)
    y = np.empty(len(keep), dtype=np.complex128)
    for a, idx in enumerate(keep):
        v = values[pos[idx]]
        partner = pos.get(n - 1 - idx)
        if partner is not None:
            v = 0.5 * (v + np.conj(values[partner]))
        y[a] = v
    b = np.concatenate([y.real, y.imag]) * np.sqrt(2.0)
    return keep, b


# --------------------------------------------------------------------------
# smoothed total variation
# --------------------------------------------------------------------------

def tv_norm(x):
    """Isotropic TV (forward differences, reflexive boundary) of (h,w) or (B,h,w)."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
    dy[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    val = np.sqrt(dx * dx + dy * dy).sum(axis=(1, 2))
    return val if batched else float(val[0])


def _tv_grad(x, mu):
    """Huber-smoothed isotropic TV value and gradient, batched over axis 0."""
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
    dy[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    mag = np.sqrt(dx * dx + dy * dy)
    mu3 = mu[:, None, None]
    val = np.where(mag <= mu3, mag * mag / (2.0 * mu3), mag - mu3 / 2.0).sum(axis=(1, 2))
    den = np.maximum(mag, mu3)
    wx = dx / den
    wy = dy / den
    g = np.zeros_like(x)
    g[:, :, :-1] -= wx[:, :, :-1]
    g[:, :, 1:] += wx[:, :, :-1]
    g[:, :-1, :] -= wy[:, :-1, :]
    g[:, 1:, :] += wy[:, :-1, :]
    return val, g


@dataclass(frozen=True)
class TvOptions:
    """Solver knobs. epsilon is the data-fidelity radius (0 = exact constraint);
    mu continuation runs mu_stages stages from mu_start_frac * dynamic range
    down to mu_final."""

    mu_stages: int = 5
    mu_start_frac: float = 0.1
    mu_final: float = 1e-4
    tol: float = 1e-6
    max_inner: int = 3000
    epsilon: float = 0.0
    window: int = 10


@dataclass
class TvResult:
    image: Image
    converged: bool
    monotone: bool
    stage_tv: list = field(default_factory=list)
    iterations: int = 0


def _project(op, v, av, b, eps):
    """Project v (with known forward image av) onto {x: ||b - A x|| <= eps}."""
    r = b - av
    if eps > 0:
        nrm = np.linalg.norm(r, axis=1, keepdims=True)
        c = np.maximum(0.0, 1.0 - eps / np.maximum(nrm, 1e-300))
        r = c * r
    return v + op.adjoint(r), av + r


def _nesta_stage(op, b, x0, mu, eps, opts):
    """One continuation stage; returns the last projected iterate."""
    batch, h, w = x0.shape
    n = h * w
    L = 8.0 / mu
    x = x0.copy()
    x0f = x0.reshape(batch, n)
    a_x0 = op.forward(x0f)
    a_x = a_x0.copy()
    cum = np.zeros((batch, n))
    cum_a = np.zeros_like(a_x0)
    hist = np.full((opts.window, batch), np.inf)
    done = np.zeros(batch, dtype=bool)
    y = x0.copy()
    iters = 0
    for it in range(opts.max_inner):
        iters = it + 1
        fval, g = _tv_grad(x, mu)
        gf = g.reshape(batch, n)
        a_g = op.forward(gf)
        invl = (1.0 / L)[:, None]

        vy = x.reshape(batch, n) - gf * invl
        a_vy = a_x - a_g * invl
        yf, a_y = _project(op, vy, a_vy, b, eps)

        alpha = 0.5 * (it + 1)
        cum += alpha * gf
        cum_a += alpha * a_g
        vz = x0f - cum * invl
        a_vz = a_x0 - cum_a * invl
        zf, a_z = _project(op, vz, a_vz, b, eps)

        tau = 2.0 / (it + 3)
        xf = tau * zf + (1.0 - tau) * yf
        a_x = tau * a_z + (1.0 - tau) * a_y
        x = xf.reshape(batch, h, w)
        y = yf.reshape(batch, h, w)

        ref = hist.mean(axis=0)
        with np.errstate(invalid="ignore"):
            rel = np.abs(fval - ref) / np.maximum(np.abs(ref), 1e-300)
        done |= np.isfinite(ref) & (rel <= opts.tol)
        hist[it % opts.window] = fval
        if done.all():
            break
    return y, bool(done.all()), iters


def _nesta_solve(op, b, height, width, opts: TvOptions, x_init=None):
    """Continuation-wrapped NESTA; b is (B, r), returns (B, h, w) iterates."""
    batch = b.shape[0]
    if x_init is None:
        x = op.adjoint(b).reshape(batch, height, width)
    else:
        x = np.array(x_init, dtype=np.float64).reshape(batch, height, width)
    dyn = x.max(axis=(1, 2)) - x.min(axis=(1, 2))
    dyn = np.where(dyn > 0, dyn, 1.0)
    mu0 = opts.mu_start_frac * dyn
    mu_end = np.minimum(np.full(batch, opts.mu_final), mu0)
    stages = max(1, opts.mu_stages)
    converged = True
    stage_tv = []
    total_iters = 0
    for s in range(stages):
        t = s / (stages - 1) if stages > 1 else 1.0
        mu = mu0 * (mu_end / mu0) ** t
        x, ok, iters = _nesta_stage(op, b, x, mu, opts.epsilon, opts)
        converged &= ok
        total_iters += iters
        stage_tv.append(tv_norm(x))
    return x, converged, stage_tv, total_iters


def _monotone_stages(stage_tv, rel_slack=1e-6):
    seq = np.array(stage_tv)         # (stages, B)
    if seq.shape[0] < 2:
        return True
    prev = seq[:-1]
    nxt = seq[1:]
    return bool(np.all(nxt <= prev * (1.0 + rel_slack) + 1e-12))


def tv_reconstruct(f, y, opts: TvOptions = TvOptions()) -> TvResult:
    """TV minimization on the orthogonalized system V* x = D+ U* Y.

    `f` is an SvdFactors (y then being the effective measurement vector) or
    a PatternSet of a deterministic kind (y being Measurement.values).
    Returns the last feasible iterate with convergence/monotonicity flags.
    """
    if isinstance(f, SvdFactors):
        u_r, d_r, vt_r = f.truncated()
        if f.effective_rank < 1:
            raise ValueError("effective rank is zero; nothing to reconstruct from")
        op = _DenseVtOp(np.ascontiguousarray(vt_r))
        b = ((u_r.T @ np.asarray(y, dtype=np.float64)) / d_r)[None, :]
        h, w = f.height, f.width
    elif isinstance(f, PatternSet) and f.kind in DETERMINISTIC_KINDS:
        h, w = f.height, f.width
        if f.kind == "walsh-hadamard":
            op = _WhtSubsetOp(f.row_meta, f.width, f.height)
            b = np.asarray(y, dtype=np.float64)[None, :]
        else:
            keep, bvec = _noiselet_orthonormal_b(f, np.asarray(y))
            op = _NoiseletSubsetOp(keep, f.width, f.height)
            b = bvec[None, :]
    else:
        raise TypeError("expected SvdFactors or a deterministic-kind PatternSet")
    x, converged, stage_tv, iters = _nesta_solve(op, b, h, w, opts)
    return TvResult(image=Image(x[0]), converged=converged,
                    monotone=_monotone_stages(stage_tv),
                    stage_tv=[float(v[0]) for v in stage_tv], iterations=iters)


# --------------------------------------------------------------------------
# large-problem path shared with the sweep harness
# --------------------------------------------------------------------------

def gram_orthogonalize(m_rows, rank_tol=DEFAULT_RANK_TOL):
    """(u_r, d_r) from the eigendecomposition of M M^T, truncated.

    Yields the same U, D as the SVD without ever forming V; combined with
    _GramVtOp this handles measurement matrices too large for dense SVD.
    Squaring the singular values halves the usable precision, so the
    truncation threshold is floored at sqrt(eps) of the input dtype: Gram
    eigenvalues below eps * lambda_0 are pure rounding noise and inverting
    them injects garbage into the orthogonalized system.
    """
    g = (m_rows @ m_rows.T).astype(np.float64)
    w, u = np.linalg.eigh(g)
    w = w[::-1]
    u = u[:, ::-1]
    d = np.sqrt(np.maximum(w, 0.0))
    floor = max(rank_tol, 3.0 * np.sqrt(float(np.finfo(m_rows.dtype).eps)))
    rank = int(np.count_nonzero(d > floor * d[0])) if d[0] > 0 else 0
    if rank == 0:
        raise ValueError("degenerate all-zero measurement matrix")
    return np.ascontiguousarray(u[:, :rank]), d[:rank]


def gram_pinv_apply(m_rows, u_r, d_r, y):
    """M+ y = M^T U D^-2 U^T y without materializing M+ (y is (k,) or (k, B))."""
    y = np.asarray(y, dtype=np.float64)
    t = (u_r / (d_r * d_r)) @ (u_r.T @ y)
    x = (np.atleast_2d(t.T).astype(m_rows.dtype, copy=False) @ m_rows).T
    x = x.astype(np.float64)
    return x[:, 0] if y.ndim == 1 else x


def tv_reconstruct_batch_gram(m_rows, u_r, d_r, y_batch, height, width,
                              opts: TvOptions = TvOptions(), x_init=None):
    """Batched TV solve against Gram-orthogonalized factors.

    y_batch is (B, k) of effective measurements; returns ((B, h, w) array,
    converged, monotone).
    """
    op = _GramVtOp(m_rows, u_r, d_r)
    b = (y_batch @ (u_r / d_r)).astype(np.float64)
    x, converged, stage_tv, iters = _nesta_solve(op, b, height, width, opts, x_init)
    return x, converged, _monotone_stages(stage_tv)


def tv_reconstruct_batch_basis(ps: PatternSet, values_batch, opts: TvOptions = TvOptions()):
    """Batched TV solve for deterministic kinds via fast-transform operators."""
    if ps.kind == "walsh-hadamard":
        op = _WhtSubsetOp(ps.row_meta, ps.width, ps.height)
        b = np.asarray(values_batch, dtype=np.float64)
    elif ps.kind == "noiselet":
        rows = [
            _noiselet_orthonormal_b(ps, np.asarray(v)) for v in values_batch
        ]
        keep = rows[0][0]
        op = _NoiseletSubsetOp(keep, ps.width, ps.height)
        b = np.stack([bv for _, bv in rows])
    else:
        raise ValueError(f"no basis operator for kind {ps.kind!r}")
    x, converged, stage_tv, iters = _nesta_solve(op, b, ps.height, ps.width, opts)
    return x, converged, _monotone_stages(stage_tv)


def pinv_reconstruct_basis(ps: PatternSet, values) -> Image:
    """Fast pseudoinverse for deterministic kinds: M+ = M* via the inverse transform."""
    values = values.values if isinstance(values, Measurement) else np.asarray(values)
    grid = np.zeros(ps.n, dtype=np.complex128 if ps.is_complex else np.float64)
    grid[np.asarray(ps.row_meta)] = values
    grid = grid.reshape(ps.height, ps.width)
    if ps.kind == "walsh-hadamard":
        return Image(wht2(grid))
    return Image(noiselet2_inverse(grid).real)
