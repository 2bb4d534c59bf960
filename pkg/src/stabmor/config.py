"""Central numerical configuration.

Every tolerance and cap used across the package lives in one frozen record
so that test suites and the CLI can tighten or relax them coherently.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    # orthonormality of any produced factor, ||Q^T Q - I||
    orth: float = 1e-10
    # relative residual accepted from an LU solve
    lu_residual: float = 1e-10
    # symmetry check, relative to ||m||
    sym_check: float = 1e-12
    # dense eigensolver residual, relative to ||m||
    eig_residual: float = 1e-10
    # Lanczos Ritz-pair residual, relative to |mu_1| + operator norm estimate
    lanczos_residual: float = 1e-8
    # real Schur reconstruction residual, relative to ||m||
    schur_residual: float = 1e-10
    # largest n admitted to dense O(n^3) paths
    dense_cap: int = 2000
    # eigenvalue >= -nonneg_margin * |mu_1| counts as non-negative
    nonneg_margin: float = 1e-12
    # sigma_r <= rank_deficient * sigma_1 means rank deficiency
    rank_deficient: float = 1e-14
    # thin SVD uses a dense Gram eigensolve up to this side length
    svd_gram_max: int = 1000
    # accepted relative residual of a dense Lyapunov solve
    lyap_dense_residual: float = 1e-8
    # low-rank ADI defaults
    lradi_steps: int = 10
    lradi_residual: float = 1e-8
    lradi_num_shifts: int = 10
    # refuse LR-ADI when k / n exceeds this fraction
    lradi_rank_fraction: float = 0.05
    # shift added to the largest non-negative eigenvalue
    delta: float = 1.0
    # equilibrium verification, relative to problem scale
    equilibrium_residual: float = 1e-10
    # frequency-grid defaults for the H2 quadrature
    h2_points: int = 2000
    h2_omega_factor: float = 1e3

    def with_(self, **kwargs) -> "Tolerances":
        return replace(self, **kwargs)


DEFAULT = Tolerances()
