"""Gauss-Seidel backfitting for nonparametric, semiparametric and mixed additive models."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .data_model import Dataset
from .exceptions import ConvergenceWarning, InputError, SchemaError, SingularDesignError
from .smoothers import BinSmoother, LocalPolySmoother

TREATMENTS = ("bin", "localpoly", "poly", "excluded")


@dataclass(frozen=True)
class Component:
    """How one regressor enters the model.

    ``degree`` is the polynomial degree ``r`` for ``poly`` and the local
    polynomial degree for ``localpoly``.
    """

    variable: str
    treatment: str
    degree: int | None = None
    bandwidth: float | None = None
    kernel: str = "gaussian"

    def __post_init__(self):
        if self.treatment not in TREATMENTS:
            raise SchemaError(f"{self.variable}: unknown treatment {self.treatment!r}")
        if self.treatment == "poly" and (self.degree is None or self.degree < 1):
            raise SchemaError(f"{self.variable}: polynomial terms need degree >= 1")


@dataclass(frozen=True)
class ModelSpec:
    response: str
    components: tuple[Component, ...]

    def __post_init__(self):
        names = [c.variable for c in self.components]
        if len(set(names)) != len(names):
            raise SchemaError("each variable may appear in at most one component")
        object.__setattr__(self, "components", tuple(self.components))

    def component(self, variable: str) -> Component:
        for c in self.components:
            if c.variable == variable:
                return c
        raise KeyError(variable)

    def with_component(self, comp: Component) -> "ModelSpec":
        comps = tuple(comp if c.variable == comp.variable else c for c in self.components)
        if comp.variable not in [c.variable for c in self.components]:
            comps = comps + (comp,)
        return ModelSpec(self.response, comps)

    @property
    def active(self) -> tuple[Component, ...]:
        return tuple(c for c in self.components if c.treatment != "excluded")

    @classmethod
    def default(cls, dataset: Dataset, kernel: str = "gaussian") -> "ModelSpec":
        """Unconstrained model: predictors binned, covariates per their schema entry.

        Discrete covariates with a ``param_degree`` enter as polynomials; other
        discrete covariates are binned; continuous covariates get a local
        polynomial smoother of their ``smoother_degree`` (or a polynomial when
        ``param_degree`` is set).
        """
        comps = []
        for s in dataset.specs:
            if s.role == "predictor":
                comps.append(Component(s.name, "bin"))
            elif s.role == "covariate":
                if s.param_degree is not None:
                    comps.append(Component(s.name, "poly", degree=int(s.param_degree)))
                elif s.is_discrete:
                    comps.append(Component(s.name, "bin"))
                else:
                    comps.append(Component(s.name, "localpoly", degree=s.smoother_degree, bandwidth=s.bandwidth, kernel=kernel))
        return cls(dataset.response, tuple(comps))


def validate_model(dataset: Dataset, model: ModelSpec) -> None:
    if model.response != dataset.response:
        raise SchemaError(f"model response {model.response!r} does not match dataset response {dataset.response!r}")
    for c in model.components:
        try:
            spec = dataset.spec(c.variable)
        except KeyError:
            raise SchemaError(f"unknown variable {c.variable!r} in model") from None
        if spec.role == "response":
            raise SchemaError(f"{c.variable}: the response cannot be a regressor")
        if c.treatment == "bin" and not spec.is_discrete:
            raise SchemaError(f"{c.variable}: bin smoothing needs a discrete or categorical variable")
        if c.treatment == "localpoly" and spec.is_discrete:
            raise SchemaError(f"{c.variable}: local polynomial smoothing needs a continuous variable")


@dataclass(frozen=True)
class AdditiveFit:
    """A converged (or flagged) backfitting solution.

    ``fitted`` maps each active component to its centered n-vector;
    ``level_tables`` gives per-level values for discrete components;
    ``theta`` holds the raw-power coefficients of polynomial components and
    ``alpha_p`` the constants that center them.
    """

    model: ModelSpec
    alpha_hat: float
    fitted: Mapping[str, np.ndarray]
    level_tables: Mapping[str, np.ndarray]
    theta: Mapping[str, np.ndarray]
    alpha_p: Mapping[str, float]
    residuals: np.ndarray
    rss: float
    iterations: int
    converged: bool
    max_delta: float
    rss_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def alpha_star(self) -> float:
        return float(sum(self.alpha_p.values()))

    @property
    def theta_vector(self) -> np.ndarray:
        """``(alpha*, theta_1, theta_2, ...)`` in model component order."""
        parts = [np.array([self.alpha_star])]
        parts += [self.theta[c.variable] for c in self.model.components if c.variable in self.theta]
        return np.concatenate(parts)

    @property
    def fitted_values(self) -> np.ndarray:
        total = np.full(self.residuals.size, self.alpha_hat)
        for v in self.fitted.values():
            total = total + v
        return total


def _build_smoother(dataset: Dataset, comp: Component):
    if comp.treatment == "bin":
        return BinSmoother(dataset.codes(comp.variable), dataset.level_stats[comp.variable].k)
    return LocalPolySmoother(
        dataset.columns[comp.variable],
        degree=comp.degree or 0,
        bandwidth=comp.bandwidth,
        kernel=comp.kernel,
    )


def _poly_block(dataset: Dataset, comp: Component) -> np.ndarray:
    x = dataset.numeric(comp.variable)
    return x[:, None] ** np.arange(1, comp.degree + 1)[None, :]


def parametric_design(dataset: Dataset, model: ModelSpec) -> tuple[np.ndarray, list[tuple[str, slice]]]:
    """``X* = (1, x_1..x_1^r1, x_2..x_2^r2, ...)`` over the polynomial components."""
    blocks = [np.ones((dataset.n, 1))]
    layout = []
    col = 1
    for c in model.active:
        if c.treatment == "poly":
            b = _poly_block(dataset, c)
            blocks.append(b)
            layout.append((c.variable, slice(col, col + b.shape[1])))
            col += b.shape[1]
    return np.hstack(blocks), layout


def _qr_full_rank(design: np.ndarray):
    q, r = np.linalg.qr(design)
    d = np.abs(np.diag(r))
    if d.size and d.min() <= 1e-10 * max(d.max(), 1.0):
        raise SingularDesignError("polynomial design is rank deficient (too few distinct levels for the degree)")
    return q, r


def backfit(
    dataset: Dataset,
    model: ModelSpec | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    order: Sequence[str] | None = None,
) -> AdditiveFit:
    """Fit an additive model by cyclic Gauss-Seidel updates.

    Polynomial components are updated jointly first (least squares of the
    partial residual on ``X*``), then each smoothed component in turn
    (``order`` overrides the sequence).  Iteration stops once no fitted
    value moves by more than ``tol * sd(Y)`` in a full sweep.
    """
    model = ModelSpec.default(dataset) if model is None else model
    validate_model(dataset, model)
    y = dataset.y
    n = y.size
    alpha = float(y.mean())
    ystar = y - alpha
    scale = float(np.std(y))

    active = model.active
    smooth = [c for c in active if c.treatment in ("bin", "localpoly")]
    if order is not None:
        rank = {name: i for i, name in enumerate(order)}
        smooth.sort(key=lambda c: rank.get(c.variable, len(rank)))
    smoothers = {c.variable: _build_smoother(dataset, c) for c in smooth}
    xstar, layout = parametric_design(dataset, model)
    has_param = bool(layout)
    if has_param:
        q, r = _qr_full_rank(xstar)

    fitted = {c.variable: np.zeros(n) for c in active}
    coef = np.zeros(xstar.shape[1])
    total = np.zeros(n)
    history = []
    converged = scale == 0.0
    iterations = 0
    max_delta = 0.0

    def rss_now():
        res = ystar - total
        return float(res @ res)

    while not converged and iterations < max_iter:
        iterations += 1
        max_delta = 0.0
        if has_param:
            partial = ystar - total
            for name, _ in layout:
                partial += fitted[name]
            coef = np.linalg.solve(r, q.T @ partial)
            for name, sl in layout:
                new = xstar[:, sl] @ coef[sl]
                new -= new.mean()
                max_delta = max(max_delta, float(np.max(np.abs(new - fitted[name]))))
                total += new - fitted[name]
                fitted[name] = new
            history.append(rss_now())
        for c in smooth:
            name = c.variable
            partial = ystar - total + fitted[name]
            new = smoothers[name].centered_apply(partial)
            max_delta = max(max_delta, float(np.max(np.abs(new - fitted[name]))))
            total += new - fitted[name]
            fitted[name] = new
            history.append(rss_now())
        converged = max_delta < tol * scale

    if not converged:
        warnings.warn(
            f"backfitting did not converge in {max_iter} sweeps (max change {max_delta:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )

    # recompute the total from scratch so residuals are exact for the reported components
    total = np.zeros(n)
    for v in fitted.values():
        total += v
    residuals = ystar - total
    theta, alpha_p = {}, {}
    for name, sl in layout:
        theta[name] = coef[sl].copy()
        alpha_p[name] = -float((xstar[:, sl] @ coef[sl]).mean())
    tables = {}
    for c in active:
        if dataset.spec(c.variable).is_discrete:
            codes = dataset.codes(c.variable)
            k = dataset.level_stats[c.variable].k
            tables[c.variable] = np.bincount(codes, weights=fitted[c.variable], minlength=k) / np.bincount(codes, minlength=k)
    return AdditiveFit(
        model=model,
        alpha_hat=alpha,
        fitted=fitted,
        level_tables=tables,
        theta=theta,
        alpha_p=alpha_p,
        residuals=residuals,
        rss=float(residuals @ residuals),
        iterations=iterations,
        converged=converged,
        max_delta=max_delta,
        rss_history=tuple(history),
    )


def partial_effect_table(fit: AdditiveFit, dataset: Dataset, variable: str) -> pd.DataFrame:
    """Per-level estimates for discrete components, partial residuals for continuous ones."""
    if variable not in fit.fitted:
        raise KeyError(f"{variable!r} is not an active component of this fit")
    spec = dataset.spec(variable)
    if spec.is_discrete:
        labels = dataset.labels[variable]
        return pd.DataFrame({"level": list(labels), "code": np.arange(len(labels)), "estimate": fit.level_tables[variable]})
    z = dataset.columns[variable]
    order = np.argsort(z, kind="stable")
    return pd.DataFrame(
        {
            variable: z[order],
            "estimate": fit.fitted[variable][order],
            "partial_residual": (fit.residuals + fit.fitted[variable])[order],
        }
    )


# -- hypotheses ---------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    """Null constraint on one predictor: ``degree=None`` means m_p = 0."""

    variable: str
    degree: int | None = None

    @property
    def kind(self) -> str:
        return "zero" if self.degree is None else "poly"


@dataclass(frozen=True)
class HypothesisSpec:
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        names = [c.variable for c in self.constraints]
        if len(set(names)) != len(names):
            raise InputError("a predictor may be constrained only once")

    def __len__(self):
        return len(self.constraints)

    @property
    def variables(self) -> list[str]:
        return [c.variable for c in self.constraints]

    @classmethod
    def zero(cls, variables: Sequence[str]) -> "HypothesisSpec":
        return cls(tuple(Constraint(v) for v in variables))

    @classmethod
    def from_records(cls, records) -> "HypothesisSpec":
        """Parse ``[{"variable": "x1", "constraint": "zero" | {"poly": r}}, ...]``."""
        if not isinstance(records, list):
            raise InputError("hypothesis must be a list of {variable, constraint} records")
        out = []
        for i, rec in enumerate(records):
            if not isinstance(rec, dict) or "variable" not in rec or "constraint" not in rec:
                raise InputError(f"hypothesis[{i}]: need 'variable' and 'constraint'")
            con = rec["constraint"]
            if con == "zero":
                out.append(Constraint(rec["variable"]))
            elif isinstance(con, dict) and set(con) == {"poly"} and isinstance(con["poly"], int):
                out.append(Constraint(rec["variable"], int(con["poly"])))
            else:
                raise InputError(f"hypothesis[{i}].constraint: expected 'zero' or {{'poly': r}}")
        return cls(tuple(out))

    def to_records(self) -> list[dict]:
        return [
            {"variable": c.variable, "constraint": "zero" if c.degree is None else {"poly": c.degree}}
            for c in self.constraints
        ]


def validate_hypothesis(dataset: Dataset, hypothesis: HypothesisSpec) -> None:
    for c in hypothesis.constraints:
        try:
            spec = dataset.spec(c.variable)
        except KeyError:
            raise InputError(f"hypothesis references unknown variable {c.variable!r}") from None
        if spec.role != "predictor" or not spec.is_discrete:
            raise InputError(f"{c.variable}: predictors must be discrete or categorical")
        if c.degree is not None:
            k = dataset.level_stats[c.variable].k
            if not 0 < c.degree < k - 1:
                raise InputError(f"{c.variable}: polynomial degree must satisfy 0 < r < k-1 = {k - 1}")


def hypothesis_models(dataset: Dataset, model: ModelSpec, hypothesis: HypothesisSpec) -> tuple[ModelSpec, ModelSpec]:
    """Constrained and unconstrained models; covariate treatment is shared."""
    validate_hypothesis(dataset, hypothesis)
    full = model
    null = model
    for c in hypothesis.constraints:
        full = full.with_component(Component(c.variable, "bin"))
        if c.degree is None:
            null = null.with_component(Component(c.variable, "excluded"))
        else:
            null = null.with_component(Component(c.variable, "poly", degree=c.degree))
    return null, full


def rss_under_hypothesis(
    dataset: Dataset,
    model: ModelSpec,
    hypothesis: HypothesisSpec,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> tuple[AdditiveFit, AdditiveFit]:
    null, full = hypothesis_models(dataset, model, hypothesis)
    return backfit(dataset, null, tol, max_iter), backfit(dataset, full, tol, max_iter)
