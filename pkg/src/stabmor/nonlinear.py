"""Galerkin reduction of nonlinear systems with a stable equilibrium.

For E x'(t) = f(x(t)) with equilibrium f(x*) = 0, asymptotic stability of
x* is decided by the Jacobian A' = E^{-1} df/dx(x*). The reduced model

    W^T E V xbar'(t) = W^T f(V xbar(t))

inherits the equilibrium xbar* = 0 (after shifting x* to the origin), and
choosing W = M~ E V with the transformation built from the linearization
makes the reduced equilibrium asymptotically stable for every orthonormal
V, exactly as in the linear case.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .config import DEFAULT, Tolerances
from .dynsys import LinearSystem, StabilityReport, stability_report
from .errors import EquilibriumResidualTooLarge
from .linalg import as_dense
from .stabilize import StabilizerFactor

__all__ = [
    "NonlinearSystem",
    "NonlinearROM",
    "shift_to_origin",
    "linearize",
    "equilibrium_stability",
    "nonlinear_reduce",
    "finite_difference_jacobian",
]


class NonlinearSystem:
    """Autonomous nonlinear descriptor system E x' = f(x) (+ B u).

    ``f`` and ``jac`` are callbacks; ``jac`` must return the n-by-n
    Jacobian (sparse or dense) of f. The designated equilibrium ``x_star``
    is verified at construction. Constant inputs can be folded into f;
    B and C are optional for forced simulation and output extraction.
    """

    def __init__(self, e, f: Callable, jac: Callable,
                 x_star: np.ndarray | None = None,
                 b=None, c=None, config: Tolerances = DEFAULT):
        n = e.shape[0]
        if e.shape != (n, n):
            raise ValueError("E must be square")
        self.n = n
        self.f = f
        self.jac = jac
        self.x_star = (np.zeros(n) if x_star is None
                       else np.asarray(x_star, dtype=float))
        if self.x_star.shape != (n,):
            raise ValueError(f"equilibrium must be a vector of length {n}")
        self.b = None if b is None else np.atleast_2d(np.asarray(as_dense(b), dtype=float))
        self.c = None if c is None else np.atleast_2d(np.asarray(as_dense(c), dtype=float))
        self.n_in = 0 if self.b is None else self.b.shape[1]
        self.n_out = 0 if self.c is None else self.c.shape[0]
        # reuse the linear machinery for the E factorization and checks
        self._shell = LinearSystem(
            e, sp.csr_matrix((n, n)),
            np.zeros((n, 1)) if self.b is None else self.b,
            np.zeros((1, n)) if self.c is None else self.c)
        residual = float(np.linalg.norm(np.asarray(f(self.x_star), dtype=float)))
        scale = max(1.0, float(np.linalg.norm(
            as_dense(jac(self.x_star) @ np.atleast_2d(self.x_star).T))))
        if residual > config.equilibrium_residual * scale:
            raise EquilibriumResidualTooLarge(
                f"||f(x*)|| = {residual:.3e} exceeds "
                f"{config.equilibrium_residual:.1e} * scale ({scale:.3e})")

    @property
    def e(self):
        return self._shell.e

    def solve_e(self, x):
        return self._shell.solve_e(x)

    def solve_et(self, x):
        return self._shell.solve_et(x)


def shift_to_origin(sys: NonlinearSystem,
                    config: Tolerances = DEFAULT) -> NonlinearSystem:
    """Move the designated equilibrium to the origin: g(x) = f(x + x*)."""
    if not np.any(sys.x_star):
        return sys
    x_star = sys.x_star.copy()
    return NonlinearSystem(
        sys.e,
        lambda x: sys.f(x + x_star),
        lambda x: sys.jac(x + x_star),
        x_star=None, b=sys.b, c=sys.c, config=config)


def linearize(sys: NonlinearSystem) -> LinearSystem:
    """Linear system (E, jac(x*), B, C) describing the equilibrium dynamics."""
    a = sys.jac(sys.x_star)
    b = sys.b if sys.b is not None else np.zeros((sys.n, 1))
    c = sys.c if sys.c is not None else np.zeros((1, sys.n))
    return LinearSystem(sys.e, a, b, c)


def equilibrium_stability(sys: NonlinearSystem, ell: int | None = None,
                          config: Tolerances = DEFAULT) -> StabilityReport:
    """Stability report of the Jacobian pencil at the equilibrium."""
    return stability_report(linearize(sys), ell, config)


@dataclass(frozen=True, eq=False)
class NonlinearROM:
    """Reduced nonlinear model Ebar xbar' = fbar(xbar) (+ Bbar u).

    ``f`` and ``jac`` are the projected callbacks W^T f(V .) and
    W^T jac(V .) V; ``f(0) = 0`` holds because reduction happens in
    shifted coordinates.
    """

    ebar: np.ndarray
    f: Callable
    jac: Callable
    bbar: np.ndarray | None
    cbar: np.ndarray | None
    v: np.ndarray
    w: np.ndarray
    stabilized: bool
    x_star: np.ndarray = field(repr=False, default=None)

    @property
    def r(self) -> int:
        return self.ebar.shape[0]

    def jacobian_system(self) -> LinearSystem:
        """Reduced linearization at the equilibrium, for stability checks."""
        b = self.bbar if self.bbar is not None else np.zeros((self.r, 1))
        c = self.cbar if self.cbar is not None else np.zeros((1, self.r))
        return LinearSystem(self.ebar, self.jac(np.zeros(self.r)), b, c)


def nonlinear_reduce(sys: NonlinearSystem, basis,
                     stab: StabilizerFactor | None = None,
                     config: Tolerances = DEFAULT) -> NonlinearROM:
    """Project a nonlinear system onto ``basis``.

    With ``stab`` (assembled from the linearization at the equilibrium)
    the test basis is W = M~ E V and the reduced mass matrix is the
    symmetric positive definite I_r + (Z^T E V)^T (Z^T E V); without it
    the conventional W = V is used. The system is shifted so the reduced
    equilibrium sits at the origin.
    """
    shifted = shift_to_origin(sys, config)
    v = basis.v if hasattr(basis, "v") else np.asarray(basis, dtype=float)
    if v.shape[0] != sys.n:
        raise ValueError(f"basis has {v.shape[0]} rows, system has n = {sys.n}")
    r = v.shape[1]
    ev = as_dense(shifted.e @ v)
    if stab is None:
        w = v
        ebar = w.T @ ev
    else:
        w = shifted.solve_et(v)
        if stab.q:
            g = stab.z.T @ ev
            w = w + stab.z @ g
            ebar = np.eye(r) + g.T @ g
        else:
            ebar = np.eye(r)
        ebar = 0.5 * (ebar + ebar.T)

    def fbar(xbar, w=w, v=v, shifted=shifted):
        return w.T @ np.asarray(shifted.f(v @ xbar), dtype=float)

    def jbar(xbar, w=w, v=v, shifted=shifted):
        return np.asarray(w.T @ as_dense(shifted.jac(v @ xbar) @ v))

    bbar = None if shifted.b is None else w.T @ shifted.b
    cbar = None if shifted.c is None else shifted.c @ v
    return NonlinearROM(ebar=ebar, f=fbar, jac=jbar, bbar=bbar, cbar=cbar,
                        v=v, w=w, stabilized=stab is not None,
                        x_star=sys.x_star.copy())


def finite_difference_jacobian(f: Callable, x: np.ndarray,
                               h: float | None = None) -> np.ndarray:
    """Central-difference Jacobian, for validating callbacks in tests only.

    Accuracy is O(h^2) with cancellation around 1e-8 relative at best;
    production code must supply an analytic Jacobian callback.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if h is None:
        h = 1e-6 * max(1.0, float(np.linalg.norm(x, np.inf)))
    cols = []
    for i in range(n):
        step = np.zeros(n)
        step[i] = h
        cols.append((np.asarray(f(x + step), dtype=float)
                     - np.asarray(f(x - step), dtype=float)) / (2.0 * h))
    return np.column_stack(cols)
