"""Generalized likelihood ratio tests for discrete/categorical predictors.

The null law of ``lambda_n = n (RSS0 - RSS1) / RSS1`` is the weighted
chi-square mixture whose weights are the nonzero eigenvalues of
``Sigma1 Sigma2 Sigma1``.  Both matrices are built from plug-in sample
quantities.

Block conventions (one block per constrained predictor, in hypothesis order):

* ``zero`` block, k levels: basis = level indicators, size k;
  ``Sigma1`` block ``I - c c'`` with ``c`` the square-root level probabilities.
* ``poly(r)`` block: basis = powers ``x**(r+1) .. x**(k-1)`` residualized on
  ``1, x, .., x**r``, size ``k - r - 1``; ``Sigma1`` block is the identity.

``Sigma2`` is the cross-Gram matrix of the blocks after each block has been
orthonormalized with its own inverse square root Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import chisq_mix
from .backfitting import (
    AdditiveFit,
    Constraint,
    HypothesisSpec,
    ModelSpec,
    rss_under_hypothesis,
    validate_hypothesis,
)
from .data_model import Dataset, LevelStats, joint_level_probs
from .exceptions import NumericalError, PerfectFitError, SingularDesignError

__all__ = [
    "Constraint",
    "HypothesisSpec",
    "SigmaPair",
    "GlrResult",
    "Alternative",
    "glr_statistic",
    "block_layout",
    "build_sigma1",
    "sigma1_from_probs",
    "build_sigma2",
    "sigma2_from_tables",
    "sigma2_model_utility",
    "null_eigenvalues",
    "p_value",
    "indep_df",
    "best_poly_projection",
    "noncentrality",
    "theoretical_power",
    "run_test",
]

EIG_REL_TOL = 1e-10
RSS_SLACK = 1e-9


def glr_statistic(rss0: float, rss1: float, n: int) -> float:
    """``n (RSS0 - RSS1) / RSS1``, clipped at zero within solver slack."""
    if not rss1 > 0:
        raise PerfectFitError("RSS of the unconstrained model is zero; the GLR statistic is undefined")
    diff = rss0 - rss1
    if diff < 0:
        if -diff > RSS_SLACK * max(rss0, rss1):
            raise NumericalError(f"RSS0 < RSS1 beyond solver slack ({rss0!r} < {rss1!r})")
        diff = 0.0
    return n * diff / rss1


@dataclass(frozen=True)
class SigmaPair:
    sigma1: np.ndarray
    sigma2: np.ndarray
    blocks: tuple[tuple[str, str, int], ...]  # (variable, kind, size)

    @property
    def size(self) -> int:
        return self.sigma1.shape[0]


def block_layout(hypothesis: HypothesisSpec, level_stats: Mapping[str, LevelStats]) -> tuple[tuple[str, str, int], ...]:
    out = []
    for c in hypothesis.constraints:
        k = level_stats[c.variable].k
        out.append((c.variable, c.kind, k if c.degree is None else k - c.degree - 1))
    return tuple(out)


def build_sigma1(hypothesis: HypothesisSpec, level_stats: Mapping[str, LevelStats]) -> np.ndarray:
    return sigma1_from_probs(hypothesis, {c.variable: level_stats[c.variable].probs for c in hypothesis.constraints})


def sigma1_from_probs(hypothesis: HypothesisSpec, marginals: Mapping[str, np.ndarray]) -> np.ndarray:
    """Block-diagonal ``Sigma1``: ``I - c c'`` for zero blocks, identity for poly blocks."""
    blocks = []
    for c in hypothesis.constraints:
        probs = np.asarray(marginals[c.variable], dtype=float)
        k = probs.size
        if c.degree is None:
            cp = np.sqrt(probs)
            blocks.append(np.eye(k) - np.outer(cp, cp))
        else:
            blocks.append(np.eye(k - c.degree - 1))
    return _block_diag(blocks)


def _block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    size = sum(b.shape[0] for b in blocks)
    out = np.zeros((size, size))
    i = 0
    for b in blocks:
        m = b.shape[0]
        out[i:i + m, i:i + m] = b
        i += m
    return out


def _inv_sqrt(gram: np.ndarray, what: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (gram + gram.T))
    top = max(float(vals.max()), 0.0)
    if top == 0.0 or vals.min() <= EIG_REL_TOL * top:
        raise SingularDesignError(f"{what}: cross-moment matrix is singular (unobserved level or collinear powers)")
    return (vecs / np.sqrt(vals)) @ vecs.T


def _level_basis(constraint: Constraint, support: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Block basis functions evaluated at each level (k x size)."""
    k = support.size
    if constraint.degree is None:
        return np.eye(k)
    r = constraint.degree
    low = support[:, None] ** np.arange(0, r + 1)
    high = support[:, None] ** np.arange(r + 1, k)
    # probability-weighted least squares over levels == least squares over rows
    w = np.sqrt(probs)[:, None]
    coef, *_ = np.linalg.lstsq(w * low, w * high, rcond=None)
    return high - low @ coef


def build_sigma2(dataset: Dataset, hypothesis: HypothesisSpec) -> np.ndarray:
    """Sample ``Sigma2`` from the observed predictor columns.

    Each block's n-row basis ``R_p`` is orthonormalized as
    ``R_p (R_p'R_p)^{-1/2}`` and ``Sigma2`` is the Gram matrix of the
    concatenated orthonormal bases, so off-diagonal blocks equal
    ``(R_p'R_p)^{-1/2} R_p'R_q (R_q'R_q)^{-1/2}``.
    """
    validate_hypothesis(dataset, hypothesis)
    cols = []
    for c in hypothesis.constraints:
        codes = dataset.codes(c.variable)
        st = dataset.level_stats[c.variable]
        support = np.arange(st.k, dtype=float) + dataset.level_offset
        rows = _level_basis(c, support, st.probs)[codes]
        cols.append(rows @ _inv_sqrt(rows.T @ rows, c.variable))
    basis = np.hstack(cols)
    s2 = basis.T @ basis
    return 0.5 * (s2 + s2.T)


def sigma2_from_tables(
    hypothesis: HypothesisSpec,
    marginals: Mapping[str, np.ndarray],
    joints: Mapping[tuple[str, str], np.ndarray] | None = None,
    supports: Mapping[str, np.ndarray] | None = None,
) -> np.ndarray:
    """``Sigma2`` from level probability tables (population or empirical).

    ``joints[(p, q)]`` is the ``k_p x k_q`` joint table; missing pairs are
    taken as independent.  Level values default to ``0..k-1``.
    """
    joints = joints or {}
    supports = supports or {}
    bases, grams_inv_sqrt = [], []
    for c in hypothesis.constraints:
        probs = np.asarray(marginals[c.variable], dtype=float)
        support = np.asarray(supports.get(c.variable, np.arange(probs.size)), dtype=float)
        f = _level_basis(c, support, probs)
        bases.append(f)
        grams_inv_sqrt.append(_inv_sqrt(f.T @ (probs[:, None] * f), c.variable))
    names = hypothesis.variables
    blocks = []
    for i, p in enumerate(names):
        row = []
        for j, q in enumerate(names):
            if i == j:
                row.append(np.eye(bases[i].shape[1]))
                continue
            if (p, q) in joints:
                table = np.asarray(joints[(p, q)], dtype=float)
            elif (q, p) in joints:
                table = np.asarray(joints[(q, p)], dtype=float).T
            else:
                table = np.outer(marginals[p], marginals[q])
            row.append(grams_inv_sqrt[i] @ bases[i].T @ table @ bases[j] @ grams_inv_sqrt[j])
        blocks.append(row)
    s2 = np.block(blocks)
    return 0.5 * (s2 + s2.T)


def sigma2_model_utility(dataset: Dataset, variables: Sequence[str]) -> np.ndarray:
    """Closed-form ``Sigma2`` for all-zero hypotheses:
    ``P(X_p = i, X_q = j) / sqrt(c_pi c_qj)`` off the diagonal."""
    blocks = []
    for p in variables:
        row = []
        for q in variables:
            sp, sq = dataset.level_stats[p], dataset.level_stats[q]
            if p == q:
                row.append(np.eye(sp.k))
            else:
                joint = joint_level_probs(dataset.codes(p), dataset.codes(q), sp.k, sq.k)
                row.append(joint / np.sqrt(np.outer(sp.probs, sq.probs)))
        blocks.append(row)
    return np.block(blocks)


def build_sigma_pair(dataset: Dataset, hypothesis: HypothesisSpec) -> SigmaPair:
    return SigmaPair(
        build_sigma1(hypothesis, dataset.level_stats),
        build_sigma2(dataset, hypothesis),
        block_layout(hypothesis, dataset.level_stats),
    )


def null_eigenvalues(sigma1: np.ndarray, sigma2: np.ndarray) -> tuple[np.ndarray, int]:
    """Nonzero eigenvalues of ``Sigma1 Sigma2 Sigma1`` (descending) and the rank."""
    prod = sigma1 @ sigma2 @ sigma1
    vals = np.linalg.eigvalsh(0.5 * (prod + prod.T))[::-1]
    if vals.size == 0 or vals[0] <= 0:
        return np.zeros(0), 0
    keep = vals[vals > EIG_REL_TOL * vals[0]]
    return keep, int(keep.size)


def p_value(lambda_n: float, eigenvalues) -> float:
    """``P(sum_i eig_i chi2_1 > lambda_n)``."""
    eig = np.asarray(eigenvalues, dtype=float)
    if eig.size == 0:
        raise ValueError("no eigenvalues: the hypothesis constrains nothing")
    if lambda_n <= 0:
        return 1.0
    return chisq_mix.mixture_sf(eig, lambda_n)


def indep_df(hypothesis: HypothesisSpec, level_stats: Mapping[str, LevelStats]) -> int:
    """Degrees of freedom of the chi-square law under pairwise independence."""
    total = 0
    for c in hypothesis.constraints:
        k = level_stats[c.variable].k
        total += k - 1 if c.degree is None else k - c.degree - 1
    return total


# -- power ---------------------------------------------------------------------


def best_poly_projection(values, probs, degree: int, support=None) -> np.ndarray:
    """Coefficients ``(c_0, .., c_r)`` of the probability-weighted least-squares
    polynomial of degree ``r`` through ``values`` on ``support``, with ``c_0``
    chosen so the polynomial has mean zero under ``probs``."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    support = np.arange(values.size, dtype=float) if support is None else np.asarray(support, dtype=float)
    if values.size <= degree + 1:
        raise ValueError("need more levels than degree + 1")
    design = support[:, None] ** np.arange(degree + 1)
    w = np.sqrt(probs)[:, None]
    if np.linalg.matrix_rank(w * design) < degree + 1:
        raise SingularDesignError("weighted polynomial design is singular")
    coef, *_ = np.linalg.lstsq(w * design, w[:, 0] * values, rcond=None)
    coef[0] -= float(probs @ (design @ coef))
    return coef


@dataclass(frozen=True)
class Alternative:
    """Component values ``m(x_j)`` at each level of a predictor, with level probabilities."""

    variable: str
    values: tuple[float, ...]
    probs: tuple[float, ...]
    support: tuple[float, ...] | None = None

    def centered_values(self) -> np.ndarray:
        v = np.asarray(self.values, dtype=float)
        return v - float(np.asarray(self.probs) @ v)


def _departure(alt: Alternative, degree: int | None) -> np.ndarray:
    """Part of the alternative the test can see, per level."""
    m = alt.centered_values()
    if degree is None:
        return m
    support = np.arange(m.size, dtype=float) if alt.support is None else np.asarray(alt.support, dtype=float)
    coef = best_poly_projection(m, alt.probs, degree, support)
    return m - (support[:, None] ** np.arange(degree + 1)) @ coef


def noncentrality(
    hypothesis: HypothesisSpec,
    alternatives: Sequence[Alternative],
    n: float = 1.0,
    sigma2: float = 1.0,
    joints: Mapping[tuple[str, str], np.ndarray] | None = None,
) -> float:
    """``n * sum_{p,q} E[m'_p m'_q] / sigma^2`` for a fixed alternative at sample size ``n``.

    Unlisted predictors have ``m' = 0``; pairs absent from ``joints`` are
    treated as independent, which zeroes their cross term.
    """
    degrees = {c.variable: c.degree for c in hypothesis.constraints}
    dep = {}
    probs = {}
    for a in alternatives:
        if a.variable not in degrees:
            raise ValueError(f"{a.variable} is not constrained by the hypothesis")
        dep[a.variable] = _departure(a, degrees[a.variable])
        probs[a.variable] = np.asarray(a.probs, dtype=float)
    joints = joints or {}
    total = 0.0
    names = list(dep)
    for p in names:
        total += float(probs[p] @ dep[p] ** 2)
    for i, p in enumerate(names):
        for q in names[i + 1:]:
            if (p, q) in joints:
                table = np.asarray(joints[(p, q)])
            elif (q, p) in joints:
                table = np.asarray(joints[(q, p)]).T
            else:
                continue
            total += 2.0 * float(dep[p] @ table @ dep[q])
    return n * total / sigma2


def theoretical_power(
    hypothesis: HypothesisSpec,
    eigenvalues,
    alternatives: Sequence[Alternative],
    n: float,
    alpha: float = 0.05,
    mode: str = "mixture",
    sigma2: float = 1.0,
    joints: Mapping[tuple[str, str], np.ndarray] | None = None,
    df: int | None = None,
) -> float:
    """Asymptotic power against a fixed alternative at sample size ``n``.

    ``mode="mixture"``: ``P(delta^2 + sum eig_i chi2_1 > q_{1-alpha})`` with
    the critical value from the null mixture.  ``mode="noncentral"``:
    noncentral chi-square with ``df`` (default ``len(eigenvalues)``) and
    noncentrality ``delta^2``.
    """
    delta2 = noncentrality(hypothesis, alternatives, n, sigma2, joints)
    eig = np.asarray(eigenvalues, dtype=float)
    if mode == "mixture":
        crit = chisq_mix.mixture_quantile(eig, 1.0 - alpha)
        if delta2 == 0:
            return alpha
        return chisq_mix.mixture_sf(chisq_mix.ChiSquareMixture(tuple(eig), shift=delta2), crit)
    if mode == "noncentral":
        dof = int(eig.size) if df is None else int(df)
        crit = float(stats.chi2.ppf(1.0 - alpha, dof))
        if delta2 == 0:
            return alpha
        return chisq_mix.noncentral_chi2_sf(dof, delta2, crit)
    raise ValueError(f"unknown mode {mode!r}")


# -- orchestration -------------------------------------------------------------


@dataclass(frozen=True)
class GlrResult:
    lambda_n: float
    rss0: float
    rss1: float
    n: int
    eigenvalues: tuple[float, ...]
    rank: int
    p_value: float
    p_value_indep: float
    df_indep: int
    hypothesis: HypothesisSpec
    fit0: AdditiveFit | None = field(default=None, repr=False, compare=False)
    fit1: AdditiveFit | None = field(default=None, repr=False, compare=False)
    method: str = "imhof"

    def headline(self, mode: str = "exact") -> float:
        return self.p_value if mode == "exact" else self.p_value_indep

    def to_dict(self) -> dict:
        out = {
            "lambda_n": self.lambda_n,
            "rss0": self.rss0,
            "rss1": self.rss1,
            "n": self.n,
            "eigenvalues": list(self.eigenvalues),
            "rank": self.rank,
            "p_value": self.p_value,
            "p_value_indep": self.p_value_indep,
            "df_indep": self.df_indep,
            "hypothesis": self.hypothesis.to_records(),
            "method": self.method,
        }
        for tag, fit in (("fit0", self.fit0), ("fit1", self.fit1)):
            if fit is not None:
                out[tag] = {"iterations": fit.iterations, "converged": fit.converged, "max_delta": fit.max_delta}
        return out


def run_test(
    dataset: Dataset,
    model: ModelSpec | None,
    hypothesis: HypothesisSpec,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> GlrResult:
    """Fit constrained and unconstrained models and compute both p-values."""
    model = ModelSpec.default(dataset) if model is None else model
    fit0, fit1 = rss_under_hypothesis(dataset, model, hypothesis, tol, max_iter)
    n = dataset.n
    if len(hypothesis) == 0:
        lam = glr_statistic(fit0.rss, fit1.rss, n) if fit1.rss > 0 else 0.0
        return GlrResult(lam, fit0.rss, fit1.rss, n, (), 0, 1.0, 1.0, 0, hypothesis, fit0, fit1)
    lam = glr_statistic(fit0.rss, fit1.rss, n)
    pair = build_sigma_pair(dataset, hypothesis)
    eig, rank = null_eigenvalues(pair.sigma1, pair.sigma2)
    df = indep_df(hypothesis, dataset.level_stats)
    return GlrResult(
        lambda_n=lam,
        rss0=fit0.rss,
        rss1=fit1.rss,
        n=n,
        eigenvalues=tuple(float(v) for v in eig),
        rank=rank,
        p_value=p_value(lam, eig),
        p_value_indep=chisq_mix.chi2_sf(df, lam) if lam > 0 else 1.0,
        df_indep=df,
        hypothesis=hypothesis,
        fit0=fit0,
        fit1=fit1,
    )
