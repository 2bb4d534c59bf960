"""Dense and sparse linear-algebra kernels used by every other module.

Factorizations and decompositions are pure functions of immutable inputs.
Commodity operations (LU, dense symmetric eigensolve, real Schur form) are
delegated to LAPACK/SuperLU through scipy; the iterative pieces that need
specific contracts (full-reorthogonalization Lanczos, Householder QR with
applicable reflectors) are implemented here.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import DEFAULT, Tolerances
from .errors import ConvergenceFailure, DenseCapExceeded, SingularMatrix, SymmetryViolation

__all__ = [
    "LUFactorization",
    "lu_factor",
    "HouseholderQR",
    "householder_qr",
    "sym_eig_dense",
    "dominant_sym_eigs",
    "thin_svd",
    "real_schur",
    "schur_eigenvalues",
    "spectral_norm",
    "as_dense",
    "read_mtx",
    "write_mtx",
]


def as_dense(m) -> np.ndarray:
    """Return ``m`` as an ndarray, densifying sparse input."""
    if sp.issparse(m):
        return m.toarray()
    return np.asarray(m)


def _check_pivots(diag, context: str):
    diag = np.abs(np.asarray(diag))
    if diag.size == 0:
        return
    dmax = diag.max()
    if dmax == 0.0 or diag.min() <= 1e-14 * dmax:
        raise SingularMatrix(f"{context}: singular to working precision "
                             f"(pivot ratio {diag.min():.3e} / {dmax:.3e})")


class LUFactorization:
    """LU factors of a square matrix with forward/transposed solves.

    Wraps either ``scipy.linalg.lu_factor`` (dense) or SuperLU (sparse).
    ``solve`` accepts vectors or matrices; complex right-hand sides on a
    real factorization are split into real and imaginary solves.
    """

    def __init__(self, m, context: str = "lu_factor"):
        self.shape = m.shape
        if m.shape[0] != m.shape[1]:
            raise ValueError("lu_factor requires a square matrix")
        self.sparse = sp.issparse(m)
        if self.sparse:
            try:
                self._splu = spla.splu(sp.csc_matrix(m))
            except RuntimeError as exc:  # SuperLU signals exact singularity
                raise SingularMatrix(f"{context}: {exc}") from exc
            _check_pivots(self._splu.U.diagonal(), context)
        else:
            m = np.asarray(m)
            with warnings.catch_warnings():
                # singular pivots are re-checked below with a clearer error
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self._lu, self._piv = sla.lu_factor(m, check_finite=False)
            _check_pivots(np.diag(self._lu), context)
        self.dtype = (self._splu.U.dtype if self.sparse else self._lu.dtype)

    def solve(self, b, trans: bool = False):
        b = np.asarray(b)
        if np.iscomplexobj(b) and not np.iscomplexobj(np.empty(0, self.dtype)):
            return self.solve(b.real, trans) + 1j * self.solve(b.imag, trans)
        if self.sparse:
            t = "T" if trans else "N"
            if b.ndim == 1:
                return self._splu.solve(b, trans=t)
            return np.column_stack([self._splu.solve(b[:, j], trans=t)
                                    for j in range(b.shape[1])])
        return sla.lu_solve((self._lu, self._piv), b, trans=1 if trans else 0,
                            check_finite=False)


def lu_factor(m, context: str = "lu_factor") -> LUFactorization:
    """Factorize a square matrix; raises :class:`SingularMatrix` if singular."""
    return LUFactorization(m, context=context)


class HouseholderQR:
    """QR factorization with Q kept as a sequence of Householder reflectors.

    For an n-by-q input (q <= n) the orthogonal factor is the product of q
    reflectors, each stored as one column; applying Q or Q^T to a vector
    costs O(n q). ``r_prime`` is the leading q-by-q upper triangle of R.
    """

    def __init__(self, m: np.ndarray):
        r = np.array(as_dense(m), dtype=float, copy=True)
        if r.ndim != 2:
            raise ValueError("householder_qr expects a matrix")
        n, q = r.shape
        if q > n:
            raise ValueError("householder_qr expects q <= n")
        self.n, self.q = n, q
        self._v = np.zeros((n, q))
        for j in range(q):
            x = r[j:, j]
            normx = np.linalg.norm(x)
            if normx == 0.0:
                continue  # zero column: reflector is the identity
            alpha = -np.copysign(normx, x[0]) if x[0] != 0 else -normx
            v = x.copy()
            v[0] -= alpha
            vnorm = np.linalg.norm(v)
            if vnorm == 0.0:
                continue
            v /= vnorm
            r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
            self._v[j:, j] = v
        self.r = r
        self.r_prime = r[:q, :q]

    @property
    def rank_deficient(self) -> bool:
        d = np.abs(np.diag(self.r_prime))
        if d.size == 0:
            return False
        return d.min() <= 1e-14 * max(d.max(), 1e-300)

    @staticmethod
    def _reflect(v, y, j):
        if y.ndim > 1:
            y[j:] -= 2.0 * np.multiply.outer(v, v @ y[j:])
        else:
            y[j:] -= 2.0 * v * (v @ y[j:])

    def apply_qt(self, y):
        """Return Q^T y, applying the reflectors first-to-last."""
        y = np.array(y, dtype=float, copy=True)
        for j in range(self.q):
            self._reflect(self._v[j:, j], y, j)
        return y

    def apply_q(self, y):
        """Return Q y, applying the reflectors last-to-first."""
        y = np.array(y, dtype=float, copy=True)
        for j in range(self.q - 1, -1, -1):
            self._reflect(self._v[j:, j], y, j)
        return y


def householder_qr(m) -> HouseholderQR:
    """Householder QR of an n-by-q matrix (q <= n)."""
    return HouseholderQR(m)


def sym_eig_dense(m, config: Tolerances = DEFAULT):
    """Eigendecomposition of a symmetric dense matrix.

    Returns ``(w, u)`` with eigenvalues sorted descending and orthonormal
    eigenvectors as columns. Raises :class:`SymmetryViolation` when the
    input is not symmetric within ``config.sym_check * ||m||``.
    """
    m = as_dense(m)
    norm_m = np.linalg.norm(m)
    asym = np.linalg.norm(m - m.T)
    if asym > config.sym_check * max(norm_m, 1e-300):
        raise SymmetryViolation(
            f"matrix is not symmetric: ||m - m^T|| = {asym:.3e}, ||m|| = {norm_m:.3e}")
    w, u = np.linalg.eigh(0.5 * (m + m.T))
    return w[::-1].copy(), u[:, ::-1].copy()


def _as_matvec(op):
    if callable(op):
        return op
    return lambda v: op @ v


def dominant_sym_eigs(op, n: int, ell: int, config: Tolerances = DEFAULT,
                      maxiter: int | None = None, seed: int = 0):
    """Top-``ell`` eigenpairs of a symmetric operator given by matvec only.

    Lanczos iteration with full reorthogonalization. Breakdown (an invariant
    subspace was found) is handled by restarting the recurrence with a fresh
    random direction orthogonal to everything seen so far, which leaves the
    projected matrix block tridiagonal and keeps all Ritz information.

    Parameters
    ----------
    op : callable or matrix
        Symmetric operator; symmetry is a contract, not checked.
    n : int
        Dimension of the operator.
    ell : int
        Number of dominant (largest, signed) eigenpairs requested.
    maxiter : int, optional
        Cap on the Krylov dimension; defaults to ``min(n, max(10 ell, 120))``.
    seed : int
        Seed for the start vector, making results reproducible.

    Returns
    -------
    (w, u) : eigenvalues descending, eigenvectors as columns (n-by-ell).

    Raises
    ------
    ConvergenceFailure
        If the requested residual is not reached within ``maxiter`` steps;
        carries the best residual bound seen.
    """
    if ell < 1 or ell > n:
        raise ValueError("need 1 <= ell <= n")
    matvec = _as_matvec(op)
    rng = np.random.default_rng(seed)
    m_max = maxiter if maxiter is not None else min(n, max(10 * ell, 120))
    m_max = min(max(m_max, ell), n)

    big_q = np.zeros((n, m_max))
    alphas: list[float] = []
    betas: list[float] = []
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    best_bound = np.inf

    for m in range(1, m_max + 1):
        big_q[:, m - 1] = q
        u = matvec(q)
        alpha = float(q @ u)
        alphas.append(alpha)
        r = u - alpha * q
        if m > 1 and betas[-1] != 0.0:
            r -= betas[-1] * big_q[:, m - 2]
        # two reorthogonalization passes against all previous vectors
        r -= big_q[:, :m] @ (big_q[:, :m].T @ r)
        r -= big_q[:, :m] @ (big_q[:, :m].T @ r)
        beta = float(np.linalg.norm(r))

        scale = max(max(abs(a) for a in alphas), max(betas, default=0.0), 1e-300)
        exhausted = False
        if beta <= 1e-13 * scale:
            beta = 0.0
            if m < m_max:
                # invariant subspace: continue in its orthogonal complement
                for _ in range(3):
                    v = rng.standard_normal(n)
                    v -= big_q[:, :m] @ (big_q[:, :m].T @ v)
                    v -= big_q[:, :m] @ (big_q[:, :m].T @ v)
                    nv = np.linalg.norm(v)
                    if nv > 1e-8:
                        q = v / nv
                        break
                else:
                    exhausted = True
        else:
            q = r / beta
        betas.append(beta)

        check = m >= ell and (m % 5 == 0 or beta == 0.0 or exhausted
                              or m == m_max or m == n)
        if check:
            w, s = sla.eigh_tridiagonal(np.asarray(alphas), np.asarray(betas[:m - 1]))
            idx = np.argsort(w)[::-1][:ell]
            bounds = np.abs(beta * s[m - 1, idx])
            opnorm_est = max(abs(w[0]), abs(w[-1]))
            tol = config.lanczos_residual * (abs(w[idx[0]]) + opnorm_est)
            best_bound = min(best_bound, float(bounds.max()))
            if bounds.max() <= tol or exhausted or m == n:
                vals = w[idx]
                vecs = big_q[:, :m] @ s[:, idx]
                # normalize columns; full reorthogonalization keeps them
                # orthogonal to working precision already
                vecs /= np.linalg.norm(vecs, axis=0, keepdims=True)
                return vals, vecs
        if exhausted:
            break

    raise ConvergenceFailure(
        f"Lanczos did not converge {ell} pairs within {m_max} steps "
        f"(best residual bound {best_bound:.3e})",
        best_residual=best_bound)


def _fix_signs(u: np.ndarray) -> np.ndarray:
    for j in range(u.shape[1]):
        i = np.argmax(np.abs(u[:, j]))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
    return u


def thin_svd(m, r: int, config: Tolerances = DEFAULT):
    """Leading left singular vectors and singular values of ``m``.

    Uses an eigendecomposition of the smaller Gram matrix when its side
    length is at most ``config.svd_gram_max``; beyond that a Lanczos run on
    the Gram operator of the smaller side is used, so only matvecs with
    ``m`` and ``m^T`` are needed.

    Returns ``(u, sigma)`` with ``u`` n-by-r orthonormal and ``sigma``
    descending.
    """
    n, s = m.shape
    small = min(n, s)
    if not 1 <= r <= small:
        raise ValueError(f"need 1 <= r <= min(n, s) = {small}, got {r}")

    dense = small <= config.svd_gram_max
    if n <= s:
        if dense:
            g = as_dense(m @ m.T)
            w, u = sym_eig_dense(0.5 * (g + g.T), config)
        else:
            w, u = dominant_sym_eigs(lambda v: m @ (m.T @ v), n, r, config)
        sigma = np.sqrt(np.clip(w[:r], 0.0, None))
        return _fix_signs(u[:, :r].copy()), sigma

    if dense:
        g = as_dense(m.T @ m)
        w, v = sym_eig_dense(0.5 * (g + g.T), config)
    else:
        w, v = dominant_sym_eigs(lambda x: m.T @ (m @ x), s, r, config)
    sigma = np.sqrt(np.clip(w[:r], 0.0, None))
    u = np.zeros((n, r))
    for j in range(r):
        if sigma[j] > config.rank_deficient * max(sigma[0], 1e-300):
            col = m @ v[:, j] / sigma[j]
        else:
            col = np.random.default_rng(j).standard_normal(n)
        # two modified Gram-Schmidt passes to polish orthogonality
        col -= u[:, :j] @ (u[:, :j].T @ col)
        col -= u[:, :j] @ (u[:, :j].T @ col)
        u[:, j] = col / np.linalg.norm(col)
    return _fix_signs(u), sigma


def real_schur(m, config: Tolerances = DEFAULT):
    """Real Schur form ``m = Q T Q^T`` with quasi-upper-triangular T.

    Returns ``(q, t)``. Raises :class:`DenseCapExceeded` above the dense
    cap and :class:`ConvergenceFailure` if the QR iteration does not settle.
    """
    m = as_dense(m)
    if m.shape[0] > config.dense_cap:
        raise DenseCapExceeded(
            f"real_schur: n = {m.shape[0]} exceeds dense cap {config.dense_cap}")
    try:
        t, q = sla.schur(m, output="real")
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"real_schur: {exc}") from exc
    return q, t


def schur_eigenvalues(t: np.ndarray) -> np.ndarray:
    """Eigenvalues read off the 1x1 / 2x2 diagonal blocks of a real Schur form."""
    n = t.shape[0]
    vals = []
    i = 0
    while i < n:
        if i + 1 < n and t[i + 1, i] != 0.0:
            a, b = t[i, i], t[i, i + 1]
            c, d = t[i + 1, i], t[i + 1, i + 1]
            half_tr = 0.5 * (a + d)
            disc = half_tr * half_tr - (a * d - b * c)
            if disc < 0.0:
                im = np.sqrt(-disc)
                vals.extend([half_tr + 1j * im, half_tr - 1j * im])
            else:
                root = np.sqrt(disc)
                vals.extend([half_tr + root, half_tr - root])
            i += 2
        else:
            vals.append(t[i, i] + 0.0j)
            i += 1
    return np.asarray(vals, dtype=complex)


def spectral_norm(m, config: Tolerances = DEFAULT) -> float:
    """2-norm of a matrix; sparse input is handled without densifying."""
    if sp.issparse(m):
        coo = m.tocoo()
        if coo.nnz == 0:
            return 0.0
        if np.all(coo.row == coo.col):  # diagonal matrix
            return float(np.abs(coo.data).max())
        if m.shape[0] >= m.shape[1]:
            gram = lambda v: m.T @ (m @ v)  # noqa: E731
        else:
            gram = lambda v: m @ (m.T @ v)  # noqa: E731
        w, _ = dominant_sym_eigs(gram, min(m.shape), 1, config)
        return float(np.sqrt(max(w[0], 0.0)))
    return float(np.linalg.norm(as_dense(m), 2))


def read_mtx(path):
    """Read a Matrix Market file; sparse files come back in CSR format."""
    m = scipy.io.mmread(path)
    if sp.issparse(m):
        return m.tocsr()
    return np.asarray(m)


def write_mtx(path, m):
    """Write a matrix in Matrix Market format (coordinate or array)."""
    if sp.issparse(m):
        scipy.io.mmwrite(path, m.tocoo(), precision=17)
    else:
        scipy.io.mmwrite(path, np.atleast_2d(np.asarray(m)), precision=17)
