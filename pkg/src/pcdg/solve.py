"""Linear and eigenvalue solvers for the assembled DG systems."""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotPositiveDefinite, SolverStagnation

DENSE_EIGEN_LIMIT = 3000
EIGEN_SHIFT = 0.5
EIGEN_RESIDUAL_TOL = 1e-10


@dataclass
class EigenResult:
    """Smallest eigenpairs of ``A x = (lambda + 1) M x``.

    ``eigenvalues`` are the shifted-back values ``lambda`` in ascending
    order; eigenvectors are the columns of ``eigenvectors`` and are
    M-orthonormal.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_norms: np.ndarray
    method: str = ""
    diagnostics: dict = field(default_factory=dict)


def _spd_factor(a):
    """Sparse LU with symmetric ordering; returns the factor and an SPD flag.

    With diagonal pivoting and the same row and column permutation, the
    factorisation is ``P A P^T = L U`` with ``U = D L^T``, so ``A`` is
    positive definite exactly when every pivot is positive. ``None`` means
    SuperLU deviated from symmetric pivoting and the test is inconclusive.
    """
    lu = spla.splu(sp.csc_matrix(a), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return lu, None
    return lu, bool(np.all(lu.U.diagonal() > 0))


def is_positive_definite(a):
    """Positive definiteness of a symmetric sparse or dense matrix."""
    if not sp.issparse(a):
        try:
            sla.cholesky(np.asarray(a), lower=True)
            return True
        except np.linalg.LinAlgError:
            return False
    try:
        _, spd = _spd_factor(a)
    except RuntimeError:
        return False
    if spd is None:
        if a.shape[0] <= DENSE_EIGEN_LIMIT:
            return is_positive_definite(a.toarray())
        lo = spla.eigsh(a, k=1, which="SA", return_eigenvectors=False, tol=1e-8)
        return bool(lo[0] > 0)
    return spd


def solve_source(system, rtol=1e-12):
    """Solve ``A u = b`` by a sparse direct factorisation.

    Raises :class:`NotPositiveDefinite` if ``A`` is not positive definite,
    e.g. for a penalty below the coercivity threshold.
    """
    a = sp.csr_matrix(system.A)
    b = np.asarray(system.b, dtype=float)
    try:
        lu, spd = _spd_factor(a)
    except RuntimeError as exc:
        raise NotPositiveDefinite(f"factorisation failed: {exc}") from exc
    if spd is None:
        spd = is_positive_definite(a)
    if not spd:
        raise NotPositiveDefinite("system matrix is not positive definite; "
                                  "increase the penalty or check the geometry")
    u = lu.solve(b)
    nb = np.linalg.norm(b)
    for _ in range(3):
        r = b - a @ u
        if np.linalg.norm(r) <= rtol * nb:
            break
        u += lu.solve(r)
    return u


def _m_orthonormalize(vals, vecs, m, rel_gap=1e-8):
    """Orthonormalise eigenvectors in the M inner product cluster by cluster."""
    vecs = vecs.copy()
    start = 0
    n = len(vals)
    while start < n:
        stop = start + 1
        while stop < n and abs(vals[stop] - vals[stop - 1]) <= rel_gap * max(1.0, abs(vals[stop])):
            stop += 1
        block = vecs[:, start:stop]
        gram = block.T @ (m @ block)
        chol = np.linalg.cholesky(0.5 * (gram + gram.T))
        vecs[:, start:stop] = sla.solve_triangular(chol, block.T, lower=True).T
        start = stop
    return vecs


def _shift_factor(a, m, sigma):
    """Sparse LU of ``A - sigma M`` with a symmetric fill-reducing ordering."""
    shifted = sp.csc_matrix(a - sigma * m)
    try:
        return spla.splu(shifted, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                         options=dict(SymmetricMode=True))
    except RuntimeError:
        return spla.splu(shifted)


def _refine_ritz(lu, a, m, vecs):
    """One block shifted inverse iteration followed by a Rayleigh-Ritz projection.

    Removes the roundoff left by the dense reduction to standard form, which
    otherwise dominates the zero eigenvalue.
    """
    y = lu.solve(np.asarray(m @ vecs))
    return _ritz(a, m, y)


def _ritz(a, m, basis):
    q, _ = np.linalg.qr(basis)
    aq = q.T @ (a @ q)
    mq = q.T @ (m @ q)
    vals, c = sla.eigh(0.5 * (aq + aq.T), 0.5 * (mq + mq.T))
    return vals, q @ c


def solve_eigen(system, count, dense_limit=DENSE_EIGEN_LIMIT, sigma=EIGEN_SHIFT,
                tol=1e-12, method=None):
    """Smallest ``count`` eigenpairs of ``A x = (lambda + 1) M x``.

    Dense generalised solve below ``dense_limit`` dofs, shift-invert Lanczos
    around ``sigma`` above. ``method`` forces ``"dense"`` or ``"sparse"``.
    """
    a = sp.csr_matrix(system.A)
    m = sp.csr_matrix(system.M)
    n = a.shape[0]
    if not 1 <= count <= n:
        raise ValueError(f"count must be between 1 and {n}")
    method = method or ("dense" if n < dense_limit else "sparse")
    lu = _shift_factor(a, m, sigma)
    if method == "dense":
        vals, vecs = sla.eigh(a.toarray(), m.toarray(), subset_by_index=[0, count - 1])
    elif method == "sparse":
        try:
            op = spla.LinearOperator(a.shape, matvec=lu.solve, dtype=float)
            # a generous Krylov space: the default 2k+1 stalls on degenerate clusters
            ncv = min(n - 1, max(2 * count + 1, count + 50))
            # fixed start vector: ARPACK's default is random
            v0 = np.random.default_rng(0).standard_normal(n)
            vals, vecs = spla.eigsh(a.tocsc(), k=count, M=m.tocsc(), sigma=sigma,
                                    which="LM", OPinv=op, tol=tol, ncv=ncv, v0=v0,
                                    maxiter=max(1000, 20 * n))
        except spla.ArpackNoConvergence as exc:
            raise SolverStagnation("shift-invert Lanczos did not converge",
                                   diagnostics={"converged": len(exc.eigenvalues),
                                                "requested": count}) from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    vals, vecs = _refine_ritz(lu, a, m, vecs)
    vecs = _m_orthonormalize(vals, vecs, m)
    res = np.linalg.norm(a @ vecs - (m @ vecs) * vals[None], axis=0)
    anorm = spla.norm(a, np.inf)
    if np.any(res > EIGEN_RESIDUAL_TOL * anorm):
        raise SolverStagnation("eigen residuals above tolerance",
                               diagnostics={"max_residual": float(res.max()),
                                            "norm_A": float(anorm)})
    return EigenResult(vals - 1.0, vecs, res, method)
