"""Monte Carlo size and power studies for the GLR tests.

Designs mirror the discrete-predictor setups used to validate the test:
independent and Gaussian-copula-dependent discrete variables, continuous
covariates, normal or centered chi-square(5) errors, the Hardy-Weinberg
shifted-square alternative, and the nested-OLS F-test comparator.

Every replication draws from its own generator, seeded by
``SeedSequence(seed, spawn_key=(beta_index, replication))``, so results do
not depend on how replications are spread across worker processes.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from . import chisq_mix
from .backfitting import Component, HypothesisSpec, ModelSpec
from .data_model import Dataset, VariableSpec
from .exceptions import GLRError, InputError
from .glr import Alternative, null_eigenvalues, run_test, sigma1_from_probs, sigma2_from_tables, theoretical_power
from .reporting import dump_json

log = logging.getLogger(__name__)

MIN_PROB = 0.05
ERROR_LAWS = ("normal", "chisq5")
CONTINUOUS_LAWS = ("normal", "uniform")
FUNCTION_KINDS = ("zero", "linear", "power", "sin", "shifted_square")


# -- generators -----------------------------------------------------------------


def check_probs(probs, name: str = "probs") -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise InputError(f"{name}: need a vector of at least two probabilities")
    if abs(p.sum() - 1.0) > 1e-9:
        raise InputError(f"{name}: probabilities must sum to one (got {p.sum():.12g})")
    if np.any(p < MIN_PROB - 1e-12):
        raise InputError(f"{name}: every probability must be at least {MIN_PROB}")
    return p


def gen_discrete_independent(probs, n: int, rng: np.random.Generator) -> np.ndarray:
    p = check_probs(probs)
    # inverse-CDF on uniforms; same stream usage as the copula path
    return np.searchsorted(np.cumsum(p)[:-1], rng.random(n), side="right").astype(np.int64)


def copula_thresholds(probs) -> np.ndarray:
    """Standard-normal cut points at the cumulative marginal probabilities."""
    p = np.asarray(probs, dtype=float)
    return stats.norm.ppf(np.cumsum(p)[:-1])


def _corr_sqrt(corr: np.ndarray) -> np.ndarray:
    corr = np.asarray(corr, dtype=float)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise InputError("latent correlation must be a square matrix")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise InputError("latent correlation must be symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise InputError("latent correlation must have a unit diagonal")
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() < -1e-10:
        raise InputError("latent correlation is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def gen_latent_normal(corr, n: int, rng: np.random.Generator) -> np.ndarray:
    root = _corr_sqrt(corr)
    return rng.standard_normal((n, root.shape[0])) @ root.T


def gen_discrete_dependent(latent_cov, marginal_probs: Sequence, n: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian-copula discrete columns (n x len(marginal_probs))."""
    g = gen_latent_normal(latent_cov, n, rng)
    if g.shape[1] != len(marginal_probs):
        raise InputError("one marginal probability vector per latent coordinate is required")
    out = np.empty(g.shape, dtype=np.int64)
    for j, probs in enumerate(marginal_probs):
        check_probs(probs)
        out[:, j] = np.searchsorted(copula_thresholds(probs), g[:, j], side="left")
    return out


def hardy_weinberg_probs(p: float) -> tuple[float, float, float]:
    if not 0.0 < p < 1.0:
        raise InputError("Hardy-Weinberg allele probability must lie strictly in (0, 1)")
    q = 1.0 - p
    return (p * p, 2.0 * p * q, q * q)


def beta_ls(m1_values, p: float) -> float:
    """Limit of the OLS slope of ``m_1(X_1)`` on Hardy-Weinberg ``X_1``."""
    m0, m1, m2 = (float(v) for v in m1_values)
    q = 1.0 - p
    return -p * m0 + (1.0 - 2.0 * q) * m1 + q * m2


@dataclass(frozen=True)
class FunctionSpec:
    """``coef * (beta if scaled else 1) * g(x)`` from a fixed catalog of ``g``."""

    kind: str = "zero"
    coef: float = 1.0
    power: float = 2.0
    shift: float = 0.0
    scaled: bool = False

    def __post_init__(self):
        if self.kind not in FUNCTION_KINDS:
            raise InputError(f"unknown function kind {self.kind!r}; choose from {FUNCTION_KINDS}")

    def __call__(self, x, beta: float = 1.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            g = np.zeros_like(x)
        elif self.kind == "linear":
            g = x
        elif self.kind == "power":
            g = x**self.power
        elif self.kind == "sin":
            g = np.sin(np.pi * x)
        else:
            g = (x - self.shift) ** 2
        return self.coef * (beta if self.scaled else 1.0) * g


def draw_errors(law: str, n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    if law == "normal":
        return scale * rng.standard_normal(n)
    if law == "chisq5":
        return scale * (rng.chisquare(5, n) - 5.0)
    raise InputError(f"unknown error law {law!r}; choose from {ERROR_LAWS}")


def error_variance(law: str, scale: float = 1.0) -> float:
    return scale**2 * (1.0 if law == "normal" else 10.0)


def gen_response(columns: Mapping[str, np.ndarray], functions: Mapping[str, FunctionSpec], errors, alpha: float = 0.0, beta: float = 1.0) -> np.ndarray:
    y = np.full(len(errors), float(alpha)) + np.asarray(errors, dtype=float)
    for name, f in functions.items():
        y = y + f(columns[name], beta)
    return y


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class VariableDesign:
    name: str
    role: str  # predictor | covariate
    kind: str  # discrete | continuous
    probs: tuple[float, ...] | None = None
    function: FunctionSpec = field(default_factory=FunctionSpec)
    smoother_degree: int = 0
    bandwidth: float | None = None
    treatment: str | None = None  # model override, e.g. "poly"
    degree: int | None = None
    law: str = "normal"  # continuous margin: normal | uniform


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    replications: int
    seed: int
    variables: tuple[VariableDesign, ...]
    groups: tuple[tuple[tuple[str, ...], tuple[tuple[float, ...], ...]], ...] = ()
    hypothesis: HypothesisSpec = HypothesisSpec()
    error: str = "normal"
    error_scale: float = 1.0
    betas: tuple[float, ...] = (0.0,)
    alpha: float = 0.05
    f_test: bool = False
    kernel: str = "gaussian"
    tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if self.n < 10:
            raise InputError("n must be at least 10")
        if self.replications < 1:
            raise InputError("replications must be positive")
        if self.error not in ERROR_LAWS:
            raise InputError(f"error: unknown law {self.error!r}")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise InputError("variables: duplicate names")
        grouped = [m for members, _ in self.groups for m in members]
        if len(set(grouped)) != len(grouped):
            raise InputError("groups: a variable may belong to one group only")
        for members, corr in self.groups:
            for m in members:
                if m not in names:
                    raise InputError(f"groups: unknown variable {m!r}")
            c = np.asarray(corr, dtype=float)
            if c.shape != (len(members), len(members)):
                raise InputError(f"groups: correlation for {list(members)} has shape {c.shape}")
            _corr_sqrt(c)
        for v in self.variables:
            if v.kind == "discrete":
                if v.probs is None:
                    raise InputError(f"variables.{v.name}.probs: required for discrete variables")
                check_probs(v.probs, f"variables.{v.name}.probs")
            elif v.kind != "continuous":
                raise InputError(f"variables.{v.name}.kind: must be discrete or continuous")
            elif v.law not in CONTINUOUS_LAWS:
                raise InputError(f"variables.{v.name}.law: choose from {CONTINUOUS_LAWS}")
            if v.role == "predictor" and v.kind != "discrete":
                raise InputError(f"variables.{v.name}: predictors must be discrete")
        for c in self.hypothesis.constraints:
            if c.variable not in names:
                raise InputError(f"hypothesis: unknown variable {c.variable!r}")

    def variable(self, name: str) -> VariableDesign:
        return next(v for v in self.variables if v.name == name)

    # JSON round trip -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "replications": self.replications,
            "seed": self.seed,
            "variables": [
                {k: (asdict(v.function) if k == "function" else (list(val) if isinstance(val, tuple) else val))
                 for k, val in asdict(v).items() if val is not None}
                for v in self.variables
            ],
            "groups": [{"members": list(m), "corr": [list(r) for r in c]} for m, c in self.groups],
            "hypothesis": self.hypothesis.to_records(),
            "error": self.error,
            "error_scale": self.error_scale,
            "betas": list(self.betas),
            "alpha": self.alpha,
            "f_test": self.f_test,
            "kernel": self.kernel,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimulationConfig":
        if not isinstance(d, Mapping):
            raise InputError("config: expected a JSON object")
        known = {"n", "replications", "seed", "variables", "groups", "hypothesis", "error", "error_scale",
                 "betas", "alpha", "f_test", "kernel", "tol", "max_iter"}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"config: unknown field(s) {sorted(unknown)}")
        for key in ("n", "replications", "seed", "variables"):
            if key not in d:
                raise InputError(f"config.{key}: required field missing")
        variables = []
        if not isinstance(d["variables"], list):
            raise InputError("config.variables: expected a list")
        for i, v in enumerate(d["variables"]):
            path = f"config.variables[{i}]"
            if not isinstance(v, Mapping):
                raise InputError(f"{path}: expected an object")
            try:
                fn = v.get("function") or {}
                if not isinstance(fn, Mapping):
                    raise InputError(f"{path}.function: expected an object")
                variables.append(
                    VariableDesign(
                        name=str(v["name"]),
                        role=str(v["role"]),
                        kind=str(v["kind"]),
                        probs=tuple(float(p) for p in v["probs"]) if v.get("probs") is not None else None,
                        function=FunctionSpec(**fn),
                        smoother_degree=int(v.get("smoother_degree", 0)),
                        bandwidth=v.get("bandwidth"),
                        treatment=v.get("treatment"),
                        degree=v.get("degree"),
                        law=str(v.get("law", "normal")),
                    )
                )
            except KeyError as exc:
                raise InputError(f"{path}.{exc.args[0]}: required field missing") from None
            except TypeError as exc:
                raise InputError(f"{path}: {exc}") from None
            if variables[-1].role not in ("predictor", "covariate"):
                raise InputError(f"{path}.role: must be predictor or covariate")
        groups = []
        for i, g in enumerate(d.get("groups", [])):
            try:
                groups.append((tuple(g["members"]), tuple(tuple(float(x) for x in row) for row in g["corr"])))
            except (KeyError, TypeError) as exc:
                raise InputError(f"config.groups[{i}]: malformed ({exc})") from None
        try:
            hyp = HypothesisSpec.from_records(d.get("hypothesis", []))
        except InputError as exc:
            raise InputError(f"config.hypothesis: {exc}") from None
        try:
            return cls(
                n=int(d["n"]),
                replications=int(d["replications"]),
                seed=int(d["seed"]),
                variables=tuple(variables),
                groups=tuple(groups),
                hypothesis=hyp,
                error=str(d.get("error", "normal")),
                error_scale=float(d.get("error_scale", 1.0)),
                betas=tuple(float(b) for b in d.get("betas", [0.0])),
                alpha=float(d.get("alpha", 0.05)),
                f_test=bool(d.get("f_test", False)),
                kernel=str(d.get("kernel", "gaussian")),
                tol=float(d.get("tol", 1e-8)),
                max_iter=int(d.get("max_iter", 200)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"config: {exc}") from None


def random_probs(k: int, rng: np.random.Generator) -> tuple[float, ...]:
    """Uniform draws normalized to one; redrawn until every entry is >= 0.05."""
    while True:
        u = rng.uniform(0.0, 1.0, k)
        p = u / u.sum()
        if p.min() >= MIN_PROB:
            return tuple(float(v) for v in p)


def random_correlation(d: int, rng: np.random.Generator) -> tuple[tuple[float, ...], ...]:
    """Random correlation matrix from a random spectrum (scaled to trace d)."""
    eig = rng.uniform(0.2, 1.0, d)
    eig = eig * d / eig.sum()
    corr = stats.random_correlation.rvs(eig, random_state=rng)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return tuple(tuple(float(x) for x in row) for row in corr)


def standard_design(
    kind: str = "null",
    n: int = 500,
    replications: int = 1000,
    seed: int = 20240501,
    design_seed: int = 7,
    error: str = "normal",
    betas: Sequence[float] = (0.0,),
    linear_covariates: bool = False,
) -> SimulationConfig:
    """Five discrete predictors (3, 4, 5, 4, 3 levels) and four covariates.

    ``X1, X2`` independent; ``(X3, X4, X5)``, ``(Z1, Z2)`` (discrete, 5 and 4
    levels) and ``(Z3, Z4)`` (continuous) are three copula groups; the continuous pair has uniform(0, 1) margins.
    Probabilities and correlations are drawn once from
    ``design_seed``.  Covariate effects: ``Z1, Z2**2, Z3**2, sin(pi Z4)``
    (all linear when ``linear_covariates``).

    ``kind``: ``"null"`` (all predictor effects zero, test all five),
    ``"power"`` (``m1 = beta (x - 0.75)**2`` with Hardy-Weinberg X1 at
    p = 0.75), ``"gof"`` (additionally ``m2 = x / 2``; test ``m2`` linear and
    the rest zero).
    """
    if kind not in ("null", "power", "gof"):
        raise InputError(f"unknown design {kind!r}")
    rng = np.random.default_rng(design_seed)
    levels = {"x1": 3, "x2": 4, "x3": 5, "x4": 4, "x5": 3, "z1": 5, "z2": 4}
    probs = {name: random_probs(k, rng) for name, k in levels.items()}
    groups = (
        (("x3", "x4", "x5"), random_correlation(3, rng)),
        (("z1", "z2"), random_correlation(2, rng)),
        (("z3", "z4"), random_correlation(2, rng)),
    )
    if kind in ("power", "gof"):
        probs["x1"] = hardy_weinberg_probs(0.75)
    fz = {
        "z1": FunctionSpec("linear"),
        "z2": FunctionSpec("power", power=2),
        "z3": FunctionSpec("power", power=2),
        "z4": FunctionSpec("sin"),
    }
    if linear_covariates:
        fz = {k: FunctionSpec("linear") for k in fz}
    fx = {name: FunctionSpec() for name in ("x1", "x2", "x3", "x4", "x5")}
    if kind in ("power", "gof"):
        fx["x1"] = FunctionSpec("shifted_square", shift=0.75, scaled=True)
    if kind == "gof":
        fx["x2"] = FunctionSpec("linear", coef=0.5)
    variables = [VariableDesign(name, "predictor", "discrete", probs[name], fx[name]) for name in fx]
    variables += [VariableDesign(name, "covariate", "discrete", probs[name], fz[name]) for name in ("z1", "z2")]
    variables += [VariableDesign(name, "covariate", "continuous", None, fz[name], law="uniform") for name in ("z3", "z4")]
    if kind == "gof":
        hyp = HypothesisSpec.from_records(
            [{"variable": "x2", "constraint": {"poly": 1}}]
            + [{"variable": v, "constraint": "zero"} for v in ("x1", "x3", "x4", "x5")]
        )
    else:
        hyp = HypothesisSpec.zero(["x1", "x2", "x3", "x4", "x5"])
    return SimulationConfig(
        n=n,
        replications=replications,
        seed=seed,
        variables=tuple(variables),
        groups=groups,
        hypothesis=hyp,
        error=error,
        betas=tuple(betas),
        f_test=kind == "power",
    )


# -- one replication -------------------------------------------------------------


def _continuous_margin(g: np.ndarray, law: str) -> np.ndarray:
    return stats.norm.cdf(g) if law == "uniform" else g


def generate_columns(config: SimulationConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Draw all regressors: grouped variables through the copula, in config order."""
    n = config.n
    cols: dict[str, np.ndarray] = {}
    grouped = {m: i for i, (members, _) in enumerate(config.groups) for m in members}
    done_groups = set()
    for v in config.variables:
        if v.name in grouped:
            gi = grouped[v.name]
            if gi in done_groups:
                continue
            done_groups.add(gi)
            members, corr = config.groups[gi]
            latent = gen_latent_normal(corr, n, rng)
            for j, m in enumerate(members):
                mv = config.variable(m)
                if mv.kind == "discrete":
                    cols[m] = np.searchsorted(copula_thresholds(mv.probs), latent[:, j], side="left").astype(np.int64)
                else:
                    cols[m] = _continuous_margin(latent[:, j], mv.law)
        elif v.kind == "discrete":
            cols[v.name] = gen_discrete_independent(v.probs, n, rng)
        else:
            cols[v.name] = _continuous_margin(rng.standard_normal(n), v.law)
    return cols


def _dataset(config: SimulationConfig, cols: Mapping[str, np.ndarray], y: np.ndarray) -> Dataset:
    specs = [VariableSpec("y", "response", "continuous")]
    data = {"y": y}
    for v in config.variables:
        specs.append(
            VariableSpec(
                v.name,
                v.role,
                v.kind,
                levels=tuple(range(len(v.probs))) if v.kind == "discrete" else None,
                smoother_degree=v.smoother_degree,
                bandwidth=v.bandwidth,
            )
        )
        data[v.name] = cols[v.name]
    return Dataset.from_arrays(specs, data)


def _model(config: SimulationConfig, dataset: Dataset) -> ModelSpec:
    model = ModelSpec.default(dataset, kernel=config.kernel)
    for v in config.variables:
        if v.treatment is not None:
            model = model.with_component(Component(v.name, v.treatment, degree=v.degree, bandwidth=v.bandwidth, kernel=config.kernel))
    return model


def f_test_comparator(dataset: Dataset, tested: Sequence[str], regressors: Sequence[str] | None = None) -> float:
    """Nested-OLS F-test p-value with every regressor entered linearly."""
    regressors = [s.name for s in dataset.specs if s.role != "response"] if regressors is None else list(regressors)
    n = dataset.n
    y = dataset.y

    def rss(names):
        design = np.column_stack([np.ones(n)] + [dataset.numeric(v) for v in names])
        coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        if rank < design.shape[1]:
            raise InputError("linear design for the F-test is rank deficient")
        res = y - design @ coef
        return float(res @ res), design.shape[1]

    rss_full, p_full = rss(regressors)
    rss_red, p_red = rss([v for v in regressors if v not in set(tested)])
    q = p_full - p_red
    df2 = n - p_full
    f = ((rss_red - rss_full) / q) / (rss_full / df2)
    return float(stats.f.sf(f, q, df2))


def run_replication(config: SimulationConfig, beta_index: int, rep: int) -> dict:
    """Generate one sample and test it; failures are reported, not raised."""
    beta = config.betas[beta_index]
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(beta_index, rep)))
    row = {"beta": beta, "replication": rep, "lambda_n": math.nan, "p_value": math.nan,
           "p_value_indep": math.nan, "f_p_value": math.nan, "iterations": 0, "failed": 0, "error": ""}
    try:
        cols = generate_columns(config, rng)
        eps = draw_errors(config.error, config.n, rng, config.error_scale)
        fns = {v.name: v.function for v in config.variables}
        y = gen_response(cols, fns, eps, beta=beta)
        ds = _dataset(config, cols, y)
        res = run_test(ds, _model(config, ds), config.hypothesis, config.tol, config.max_iter)
        row.update(lambda_n=res.lambda_n, p_value=res.p_value, p_value_indep=res.p_value_indep,
                   iterations=max(res.fit0.iterations, res.fit1.iterations))
        if not (res.fit0.converged and res.fit1.converged):
            raise GLRError("backfitting did not converge")
        if config.f_test:
            row["f_p_value"] = f_test_comparator(ds, config.hypothesis.variables)
    except (GLRError, np.linalg.LinAlgError) as exc:
        row["failed"] = 1
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.warning("replication %d (beta=%g) failed: %s", rep, beta, exc)
    return row


def _worker(args):
    config_dict, beta_index, rep = args
    with threadpool_limits(1):
        return run_replication(SimulationConfig.from_dict(config_dict), beta_index, rep)


# -- population quantities ------------------------------------------------------


def _bvn_rect(a_lo, a_hi, b_lo, b_hi, rho) -> float:
    cov = [[1.0, rho], [rho, 1.0]]
    big = 40.0

    def cdf(a, b):
        a = min(max(a, -big), big)
        b = min(max(b, -big), big)
        return float(stats.multivariate_normal.cdf([a, b], mean=[0.0, 0.0], cov=cov))

    return cdf(a_hi, b_hi) - cdf(a_lo, b_hi) - cdf(a_hi, b_lo) + cdf(a_lo, b_lo)


def population_tables(config: SimulationConfig, names: Sequence[str]):
    """Marginal and pairwise joint level probabilities implied by the design."""
    marg = {m: np.asarray(config.variable(m).probs, dtype=float) for m in names}
    joints = {}
    for members, corr in config.groups:
        idx = {m: i for i, m in enumerate(members)}
        inside = [m for m in names if m in idx]
        for a_i, a in enumerate(inside):
            for b in inside[a_i + 1:]:
                rho = float(corr[idx[a]][idx[b]])
                ta = np.concatenate([[-np.inf], copula_thresholds(marg[a]), [np.inf]])
                tb = np.concatenate([[-np.inf], copula_thresholds(marg[b]), [np.inf]])
                table = np.array([[_bvn_rect(ta[i], ta[i + 1], tb[j], tb[j + 1], rho)
                                   for j in range(marg[b].size)] for i in range(marg[a].size)])
                table = np.clip(table, 0.0, None)
                joints[(a, b)] = table / table.sum()
    return marg, joints


def population_eigenvalues(config: SimulationConfig) -> np.ndarray:
    names = config.hypothesis.variables
    marg, joints = population_tables(config, names)
    s1 = sigma1_from_probs(config.hypothesis, marg)
    s2 = sigma2_from_tables(config.hypothesis, marg, joints)
    eig, _ = null_eigenvalues(s1, s2)
    return eig


def theory_power(config: SimulationConfig, beta: float) -> float:
    """Noncentral chi-square power (independence approximation) at ``beta``."""
    alts = []
    for c in config.hypothesis.constraints:
        v = config.variable(c.variable)
        levels = np.arange(len(v.probs), dtype=float)
        alts.append(Alternative(v.name, tuple(v.function(levels, beta)), v.probs))
    df = sum(len(config.variable(c.variable).probs) - 1 - (c.degree or 0) for c in config.hypothesis.constraints)
    return theoretical_power(
        config.hypothesis, np.ones(df), alts, config.n, config.alpha, mode="noncentral",
        sigma2=error_variance(config.error, config.error_scale), df=df,
    )


# -- studies ---------------------------------------------------------------------


@dataclass
class StudyResult:
    config: SimulationConfig
    rows: list[dict]
    summary: dict

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r["lambda_n"] for r in self.rows if not r["failed"]])

    def rows_for(self, beta: float) -> list[dict]:
        return [r for r in self.rows if r["beta"] == beta]

    def power(self, beta: float, column: str = "p_value") -> float:
        ok = [r for r in self.rows_for(beta) if not r["failed"]]
        return float(np.mean([r[column] < self.config.alpha for r in ok])) if ok else math.nan


def _kde_summary(values: np.ndarray, points: int = 101) -> dict:
    if values.size < 3 or np.ptp(values) == 0:
        return {"grid": [], "density": []}
    grid = np.linspace(0.0, float(np.quantile(values, 0.999)) * 1.2, points)
    dens = stats.gaussian_kde(values)(grid)
    return {"grid": [float(g) for g in grid], "density": [float(d) for d in dens]}


def run_study(config: SimulationConfig, threads: int = 1, population: bool = True) -> StudyResult:
    """Run every (beta, replication) pair; aggregate in index order."""
    tasks = [(bi, r) for bi in range(len(config.betas)) for r in range(config.replications)]
    if threads <= 1:
        with threadpool_limits(1):
            rows = [run_replication(config, bi, r) for bi, r in tasks]
    else:
        d = config.to_dict()
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_worker, [(d, bi, r) for bi, r in tasks], chunksize=max(1, len(tasks) // (8 * threads))))

    eig = population_eigenvalues(config) if population and len(config.hypothesis) else np.zeros(0)
    crit_pop = chisq_mix.mixture_quantile(eig, 1 - config.alpha) if eig.size else math.nan
    df = sum(len(config.variable(c.variable).probs) - 1 - (c.degree or 0)
             for c in config.hypothesis.constraints)
    per_beta = []
    for bi, beta in enumerate(config.betas):
        rs = [r for r in rows if r["beta"] == beta]
        ok = [r for r in rs if not r["failed"]]
        lam = np.array([r["lambda_n"] for r in ok])
        entry = {
            "beta": beta,
            "replications": len(rs),
            "failed": len(rs) - len(ok),
            "power": float(np.mean([r["p_value"] < config.alpha for r in ok])) if ok else None,
            "power_indep": float(np.mean([r["p_value_indep"] < config.alpha for r in ok])) if ok else None,
            "power_population_critical": float(np.mean(lam > crit_pop)) if ok and eig.size else None,
            "theory_power_noncentral": theory_power(config, beta) if df else None,
            "lambda_mean": float(lam.mean()) if ok else None,
        }
        if config.f_test:
            entry["f_power"] = float(np.mean([r["f_p_value"] < config.alpha for r in ok])) if ok else None
        per_beta.append(entry)
    first = np.array([r["lambda_n"] for r in rows if r["beta"] == config.betas[0] and not r["failed"]])
    summary = {
        "n": config.n,
        "replications": config.replications,
        "alpha": config.alpha,
        "error": config.error,
        "df_indep": df,
        "population_eigenvalues": [float(v) for v in eig],
        "population_critical_value": crit_pop if eig.size else None,
        "indep_critical_value": float(stats.chi2.ppf(1 - config.alpha, df)) if df else None,
        "failed_fraction": float(np.mean([r["failed"] for r in rows])),
        "per_beta": per_beta,
        "lambda_kde": _kde_summary(first),
    }
    return StudyResult(config, rows, summary)


def null_study(config: SimulationConfig, threads: int = 1) -> StudyResult:
    if any(b != 0.0 for b in config.betas):
        config = SimulationConfig(**{**config.__dict__, "betas": (0.0,)})
    return run_study(config, threads)


def power_study(config: SimulationConfig, threads: int = 1) -> StudyResult:
    return run_study(config, threads)


def ks_distance(a, b) -> float:
    return float(stats.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


def write_study(result: StudyResult, outdir, manifest: Mapping[str, Any] | None = None) -> dict[str, str]:
    """Write ``replications.csv``, ``power.csv`` and ``summary.json``."""
    import csv
    from pathlib import Path

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rep_path = out / "replications.csv"
    cols = ["beta", "replication", "lambda_n", "p_value", "p_value_indep", "f_p_value", "iterations", "failed", "error"]
    with rep_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in result.rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in cols])
    pow_path = out / "power.csv"
    pcols = ["beta", "replications", "failed", "power", "power_indep", "power_population_critical",
             "theory_power_noncentral", "f_power", "lambda_mean"]
    with pow_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(pcols)
        for e in result.summary["per_beta"]:
            w.writerow(["" if e.get(c) is None else (repr(float(e[c])) if isinstance(e[c], float) else e[c]) for c in pcols])
    summary = {"report": "study", **result.summary}
    summary["config"] = result.config.to_dict()
    if manifest is not None:
        summary["manifest"] = dict(manifest)
    sum_path = out / "summary.json"
    sum_path.write_text(dump_json(summary))
    return {"replications": str(rep_path), "power": str(pow_path), "summary": str(sum_path)}
