"""Dense n x n smoother matrices for small problems.

These are deliberately written from the matrix formulas, independently of
the operator implementations in :mod:`smoothers` and :mod:`backfitting`,
and serve as a cross-check.  Everything here is O(n^2) memory or worse.
"""

from __future__ import annotations

import numpy as np

from .backfitting import ModelSpec, parametric_design
from .data_model import Dataset
from .exceptions import InputError, SingularDesignError
from .smoothers import default_bandwidth

MAX_N = 2000


def _guard(n: int) -> None:
    if n > MAX_N:
        raise InputError(f"dense oracle refuses n={n} > {MAX_N}")


def bin_matrix(codes) -> np.ndarray:
    """Block matrix of ``J / n_pj`` blocks (rows/columns in data order)."""
    codes = np.asarray(codes)
    _guard(codes.size)
    same = codes[:, None] == codes[None, :]
    return same / same.sum(axis=1, keepdims=True)


def local_poly_matrix(z, degree: int = 0, bandwidth: float | None = None, kernel: str = "gaussian") -> np.ndarray:
    """Rows ``e_1' (Z'KZ)^{-1} Z'K`` for every evaluation point ``z_j``."""
    z = np.asarray(z, dtype=float)
    n = z.size
    _guard(n)
    h = default_bandwidth(z) if bandwidth is None else bandwidth
    out = np.empty((n, n))
    for j in range(n):
        u = (z - z[j]) / h
        if kernel == "gaussian":
            kw = np.exp(-0.5 * u**2) / np.sqrt(2 * np.pi) / h
        else:
            kw = np.where(np.abs(u) < 1, 0.75 * (1 - u**2), 0.0) / h
        design = np.vander(z - z[j], degree + 1, increasing=True)
        gram = design.T @ (kw[:, None] * design)
        out[j] = np.linalg.solve(gram, design.T * kw)[0]
    return out


def centered(s: np.ndarray) -> np.ndarray:
    """``(I - 11'/n) S``."""
    return s - s.mean(axis=0, keepdims=True)


def component_matrices(dataset: Dataset, model: ModelSpec) -> tuple[list[str], list[np.ndarray]]:
    """Centered smoother matrices per active component.

    All polynomial components share one block: the centered hat matrix of ``X*``.
    """
    names, mats = [], []
    xstar, layout = parametric_design(dataset, model)
    if layout:
        hat = xstar @ np.linalg.pinv(xstar)
        names.append("__parametric__")
        mats.append(centered(hat))
    for c in model.active:
        if c.treatment == "bin":
            mats.append(centered(bin_matrix(dataset.codes(c.variable))))
        elif c.treatment == "localpoly":
            mats.append(centered(local_poly_matrix(dataset.columns[c.variable], c.degree or 0, c.bandwidth, c.kernel)))
        else:
            continue
        names.append(c.variable)
    return names, mats


def normal_equation_matrices(mats: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """``M`` (identity diagonal, ``S*_d`` across row d) and stacked ``C``."""
    d = len(mats)
    n = mats[0].shape[0]
    big = np.zeros((d * n, d * n))
    for i, s in enumerate(mats):
        for j in range(d):
            big[i * n:(i + 1) * n, j * n:(j + 1) * n] = np.eye(n) if i == j else s
    return big, np.vstack(mats)


def direct_solve(dataset: Dataset, model: ModelSpec) -> dict[str, np.ndarray]:
    """Components from ``M^{-1} C Y*`` (parametric block under ``__parametric__``)."""
    _guard(dataset.n)
    names, mats = component_matrices(dataset, model)
    big, stacked = normal_equation_matrices(mats)
    ystar = dataset.y - dataset.y.mean()
    sol = np.linalg.solve(big, stacked @ ystar)
    n = dataset.n
    return {name: sol[i * n:(i + 1) * n] for i, name in enumerate(names)}


def additive_smoother_matrices(mats: list[np.ndarray]) -> list[np.ndarray]:
    """``W_d = E_d M^{-1} C`` for each component."""
    big, stacked = normal_equation_matrices(mats)
    n = mats[0].shape[0]
    w = np.linalg.solve(big, stacked)
    return [w[i * n:(i + 1) * n] for i in range(len(mats))]


def lemma_two_component_w(s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Closed form ``W_1 = I - (I - S*_1 W^{[-1]})^{-1} (I - S*_1)`` with ``W^{[-1]} = S*_2``."""
    n = s1.shape[0]
    eye = np.eye(n)
    return eye - np.linalg.solve(eye - s1 @ s2, eye - s1)


def semiparam_theta_direct(dataset: Dataset, model: ModelSpec) -> np.ndarray:
    """Non-iterative ``(X*'(I - W_Z) X*)^{-1} X*'(I - W_Z) Y*``.

    ``W_Z`` is the additive smoother of the nonparametric components alone.
    Returns ``(alpha*, theta_1, ...)``.
    """
    _guard(dataset.n)
    xstar, layout = parametric_design(dataset, model)
    if not layout:
        raise InputError("model has no polynomial components")
    nonpar = ModelSpec(model.response, tuple(c for c in model.active if c.treatment != "poly"))
    _, mats = component_matrices(dataset, nonpar)
    n = dataset.n
    w_z = sum(additive_smoother_matrices(mats)) if mats else np.zeros((n, n))
    resid_op = np.eye(n) - w_z
    ystar = dataset.y - dataset.y.mean()
    lhs = xstar.T @ resid_op @ xstar
    if np.linalg.cond(lhs) > 1e12:
        raise SingularDesignError("X*'(I - W_Z)X* is singular")
    return np.linalg.solve(lhs, xstar.T @ resid_op @ ystar)
