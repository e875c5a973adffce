"""Confirmatory factor analysis and structural equation modelling.

Models are written in a small text language::

    Interest   =~ forks + stars + mentions     # measurement
    Engagement ~  Interest                     # structural regression
    forks      ~~ stars                        # residual covariance

Estimation minimises the maximum-likelihood covariance-structure
discrepancy.  The covariance implied by a parameter vector comes from the
path-matrix formulation ``Sigma = F (I - A)^-1 S (I - A)^-T F^T`` where
``A`` holds directed coefficients, ``S`` the variances and covariances of
exogenous terms, and ``F`` selects observed variables.

Identification is by unit loading: the first indicator of every latent is
fixed to one.  Variance parameters are left unconstrained during
optimisation so improper (negative variance) solutions remain observable;
they are flagged after the fit rather than hidden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .factor import FitStatistics, comparative_fit_index, efa_fit_indices, srmr


class SemParseError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class SemSpecError(ValueError):
    """Structurally invalid model (cycles, duplicate indicators, ...)."""


class StructuralSingularityError(np.linalg.LinAlgError):
    """(I - A) is singular for the given coefficients."""


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class Parameter:
    kind: str  # "loading" | "path" | "variance" | "covariance"
    target: str
    source: str
    free: bool = True
    fixed_value: float | None = None

    @property
    def name(self) -> str:
        if self.kind == "loading":
            return f"{self.source}=~{self.target}"
        if self.kind == "path":
            return f"{self.target}~{self.source}"
        if self.kind == "variance":
            return f"var({self.target})"
        return f"cov({self.target},{self.source})"


@dataclass
class SemModel:
    latents: list[str]
    measurement: dict[str, list[str]]
    structural: list[tuple[str, str]] = field(default_factory=list)  # (dependent, predictor)
    residual_covariances: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for latent in self.latents:
            indicators = self.measurement.get(latent, [])
            if not indicators:
                raise SemSpecError(f"latent {latent!r} has no indicators")
            for ind in indicators:
                if ind in seen:
                    raise SemSpecError(f"indicator {ind!r} appears in two measurement equations")
                seen.add(ind)
        known = set(self.latents)
        for dep, pred in self.structural:
            for name in (dep, pred):
                if name not in known:
                    raise SemSpecError(f"structural path references unknown latent {name!r}")
        self._check_acyclic()
        observed = set(self.observed)
        for a, b in self.residual_covariances:
            if a == b:
                raise SemSpecError(f"cov({a},{a}) is a variance, not a residual covariance")
            for name in (a, b):
                if name not in observed:
                    raise SemSpecError(f"residual covariance references unknown indicator {name!r}")

    def _check_acyclic(self) -> None:
        graph: dict[str, list[str]] = {latent: [] for latent in self.latents}
        for dep, pred in self.structural:
            graph[pred].append(dep)
        state: dict[str, int] = {}

        def visit(node: str, trail: list[str]) -> None:
            state[node] = 1
            for nxt in graph[node]:
                if state.get(nxt) == 1:
                    cycle = " -> ".join(trail + [node, nxt])
                    raise SemSpecError(f"structural graph has a cycle: {cycle}")
                if state.get(nxt, 0) == 0:
                    visit(nxt, trail + [node])
            state[node] = 2

        for latent in self.latents:
            if state.get(latent, 0) == 0:
                visit(latent, [])

    @property
    def observed(self) -> list[str]:
        out: list[str] = []
        for latent in self.latents:
            out.extend(self.measurement[latent])
        return out

    @property
    def endogenous_latents(self) -> set[str]:
        return {dep for dep, _ in self.structural}

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for latent in self.latents:
            for k, indicator in enumerate(self.measurement[latent]):
                if k == 0:
                    params.append(
                        Parameter("loading", indicator, latent, free=False, fixed_value=1.0)
                    )
                else:
                    params.append(Parameter("loading", indicator, latent))
        for dep, pred in self.structural:
            params.append(Parameter("path", dep, pred))
        for indicator in self.observed:
            params.append(Parameter("variance", indicator, indicator))
        for latent in self.latents:
            params.append(Parameter("variance", latent, latent))
        # covariances among latents: all pairs for a pure measurement
        # model, exogenous pairs once structural paths are present
        if self.structural:
            pool = [l for l in self.latents if l not in self.endogenous_latents]
        else:
            pool = list(self.latents)
        for i in range(len(pool)):
            for j in range(i + 1, len(pool)):
                params.append(Parameter("covariance", pool[i], pool[j]))
        for a, b in self.residual_covariances:
            params.append(Parameter("covariance", a, b))
        return params


def free_covariance(model: SemModel, a: str, b: str) -> SemModel:
    """Return a model with the residual covariance (a, b) freed; idempotent."""
    observed = set(model.observed)
    if a == b:
        raise ValueError(f"cov({a},{a}) is a variance, not a covariance")
    for name in (a, b):
        if name not in observed:
            raise ValueError(f"unknown indicator {name!r}")
    pair = tuple(sorted((a, b)))
    pairs = [tuple(sorted(p)) for p in model.residual_covariances]
    if pair in pairs:
        return model
    return replace(model, residual_covariances=model.residual_covariances + [pair])


# ---------------------------------------------------------------------------
# parsing


def parse_model(text: str) -> SemModel:
    """Parse model text into a validated :class:`SemModel`."""
    latents: list[str] = []
    measurement: dict[str, list[str]] = {}
    regressions: list[tuple[str, str]] = []
    covariances: list[tuple[str, str]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for op in ("=~", "~~", "~"):
            if op in line:
                left, _, right = line.partition(op)
                break
        else:
            raise SemParseError(f"no operator in {raw.strip()!r}", lineno)
        lhs = left.strip()
        if not lhs.isidentifier():
            raise SemParseError(f"bad name {lhs!r}", lineno, raw.find(lhs) + 1)
        terms = [t.strip() for t in right.split("+")]
        for term in terms:
            if not term.isidentifier():
                raise SemParseError(f"bad name {term!r}", lineno, max(raw.find(term), 0) + 1)
        if op == "=~":
            if lhs in measurement:
                raise SemParseError(f"latent {lhs!r} defined twice", lineno)
            latents.append(lhs)
            measurement[lhs] = terms
        elif op == "~~":
            if len(terms) != 1:
                raise SemParseError("covariance takes exactly one right-hand term", lineno)
            covariances.append((lhs, terms[0]))
        else:
            for term in terms:
                regressions.append((lhs, term))

    try:
        return SemModel(
            latents=latents,
            measurement=measurement,
            structural=regressions,
            residual_covariances=covariances,
        )
    except SemSpecError:
        raise


# ---------------------------------------------------------------------------
# covariance structure


class _Layout:
    """Index bookkeeping: coordinates of every parameter in A and S."""

    def __init__(self, model: SemModel):
        self.model = model
        self.observed = model.observed
        self.variables = self.observed + model.latents
        self.index = {name: i for i, name in enumerate(self.variables)}
        self.p = len(self.observed)
        self.t = len(self.variables)
        self.params = model.parameters()
        self.free = [prm for prm in self.params if prm.free]
        self.coords: dict[str, tuple[str, int, int]] = {}
        for prm in self.params:
            i = self.index[prm.target]
            j = self.index[prm.source]
            matrix = "A" if prm.kind in ("loading", "path") else "S"
            self.coords[prm.name] = (matrix, i, j)

    def build(self, values: Mapping[str, float]) -> tuple[np.ndarray, np.ndarray]:
        A = np.zeros((self.t, self.t))
        S = np.zeros((self.t, self.t))
        for prm in self.params:
            if prm.free:
                if prm.name not in values:
                    raise KeyError(f"missing value for parameter {prm.name}")
                value = values[prm.name]
            else:
                value = prm.fixed_value
            matrix, i, j = self.coords[prm.name]
            if matrix == "A":
                A[i, j] = value
            else:
                S[i, j] = value
                S[j, i] = value
        return A, S


def _implied_from_matrices(
    A: np.ndarray, S: np.ndarray, p: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = A.shape[0]
    eye_minus = np.eye(t) - A
    try:
        B = np.linalg.inv(eye_minus)
    except np.linalg.LinAlgError as exc:
        raise StructuralSingularityError("(I - A) is singular") from exc
    G = B[:p, :]
    sigma = G @ S @ G.T
    return sigma, B, G


def implied_covariance(model: SemModel, params: Mapping[str, float]) -> np.ndarray:
    """Model-implied covariance of the observed variables."""
    layout = _Layout(model)
    A, S = layout.build(params)
    sigma, _, _ = _implied_from_matrices(A, S, layout.p)
    return (sigma + sigma.T) / 2


# ---------------------------------------------------------------------------
# estimation


@dataclass
class ParamEstimate:
    value: float
    se: float
    z: float
    p_value: float
    free: bool


@dataclass
class SemFit:
    model: SemModel
    estimates: dict[str, ParamEstimate]
    standardized: dict[str, float]
    implied: np.ndarray
    sample: np.ndarray
    fit: FitStatistics
    heywood: list[str]
    converged: bool
    fmin: float
    n: int

    def parameter_values(self) -> dict[str, float]:
        return {name: est.value for name, est in self.estimates.items()}


def _discrepancy_terms(S: np.ndarray) -> tuple[float, int]:
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        raise ValueError("sample covariance matrix is not positive definite")
    return logdet, S.shape[0]


def default_start_values(model: SemModel, S: np.ndarray) -> dict[str, float]:
    """Loadings 0.7, paths 0, variances seeded from sample diagonals."""
    layout = _Layout(model)
    diag = {name: S[i, i] for name, i in layout.index.items() if i < layout.p}
    start: dict[str, float] = {}
    for prm in layout.free:
        if prm.kind == "loading":
            start[prm.name] = 0.7
        elif prm.kind == "path":
            start[prm.name] = 0.0
        elif prm.kind == "variance":
            if prm.target in diag:
                start[prm.name] = 0.5 * diag[prm.target]
            else:  # latent: half the variance of its scale-setting indicator
                scale_ind = model.measurement[prm.target][0]
                start[prm.name] = 0.5 * diag[scale_ind]
        else:
            start[prm.name] = 0.0
    return start


def _objective_factory(layout: _Layout, S_sample: np.ndarray):
    p = layout.p
    logdet_s, _ = _discrepancy_terms(S_sample)
    free = layout.free
    a_params = [(k, layout.coords[prm.name]) for k, prm in enumerate(free) if prm.kind in ("loading", "path")]
    s_var = [(k, layout.coords[prm.name]) for k, prm in enumerate(free) if prm.kind == "variance"]
    s_cov = [(k, layout.coords[prm.name]) for k, prm in enumerate(free) if prm.kind == "covariance"]
    fixed = [(layout.coords[prm.name], prm.fixed_value) for prm in layout.params if not prm.free]
    t = layout.t

    def unpack(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        A = np.zeros((t, t))
        Smat = np.zeros((t, t))
        for (matrix, i, j), value in fixed:
            if matrix == "A":
                A[i, j] = value
            else:
                Smat[i, j] = value
                Smat[j, i] = value
        for k, (_, i, j) in a_params:
            A[i, j] = theta[k]
        for k, (_, i, j) in s_var:
            Smat[i, j] = theta[k]
        for k, (_, i, j) in s_cov:
            Smat[i, j] = theta[k]
            Smat[j, i] = theta[k]
        return A, Smat

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        A, Smat = unpack(theta)
        try:
            sigma, B, G = _implied_from_matrices(A, Smat, p)
        except StructuralSingularityError:
            return 1e12, np.zeros_like(theta)
        sigma = (sigma + sigma.T) / 2
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            # an indefinite implied matrix can drive F below zero without
            # bound, so refuse the region outright
            return 1e12, np.zeros_like(theta)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        sigma_inv = np.linalg.inv(sigma)
        value = logdet + float(np.trace(S_sample @ sigma_inv)) - logdet_s - p
        W = sigma_inv - sigma_inv @ S_sample @ sigma_inv
        M = G.T @ W @ G  # gradient block for S-parameters
        Z = B @ Smat @ M  # gradient block for A-parameters
        grad = np.zeros_like(theta)
        for k, (_, i, j) in a_params:
            grad[k] = 2.0 * Z[j, i]
        for k, (_, i, j) in s_var:
            grad[k] = M[i, i]
        for k, (_, i, j) in s_cov:
            grad[k] = 2.0 * M[i, j]
        return value, grad

    return objective, unpack


def ml_discrepancy(model: SemModel, params: Mapping[str, float], S: np.ndarray) -> float:
    """F_ML of one parameter vector against a sample covariance matrix."""
    layout = _Layout(model)
    objective, _ = _objective_factory(layout, np.asarray(S, dtype=float))
    theta = np.array([params[prm.name] for prm in layout.free])
    return objective(theta)[0]


def ml_gradient(model: SemModel, params: Mapping[str, float], S: np.ndarray) -> np.ndarray:
    """Analytic gradient of F_ML, ordered as the model's free parameters."""
    layout = _Layout(model)
    objective, _ = _objective_factory(layout, np.asarray(S, dtype=float))
    theta = np.array([params[prm.name] for prm in layout.free])
    return objective(theta)[1]


def _numeric_hessian(func, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference Hessian from the analytic gradient."""
    k = theta.size
    H = np.zeros((k, k))
    for i in range(k):
        hi = np.zeros(k)
        hi[i] = step
        _, g_plus = func(theta + hi)
        _, g_minus = func(theta - hi)
        H[i] = (g_plus - g_minus) / (2 * step)
    return (H + H.T) / 2


def fit_indices(
    chi_square: float,
    df: int,
    null_chi_square: float,
    null_df: int,
    n: int,
    S: np.ndarray,
    implied: np.ndarray,
) -> FitStatistics:
    """Full fit-statistics block from precomputed chi-squares."""
    if df > 0:
        tli, rmsea = efa_fit_indices(chi_square, df, null_chi_square, null_df, n)
    else:
        tli = float("nan")
        rmsea = 0.0 if chi_square <= 1e-8 else float("nan")
    return FitStatistics(
        chi_square=chi_square,
        df=df,
        n=n,
        tli=tli,
        rmsea=rmsea,
        cfi=comparative_fit_index(chi_square, df, null_chi_square, null_df),
        srmr=srmr(S, implied),
        bic=chi_square - df * math.log(n),
        chi_square_null=null_chi_square,
        df_null=null_df,
    )


def _fit_statistics_sem(
    S: np.ndarray, implied: np.ndarray, fmin: float, n: int, df: int
) -> FitStatistics:
    p = S.shape[0]
    chi_square = max(n - 1, 1) * max(fmin, 0.0)
    # independence null: implied covariance diag(S)
    logdet_s, _ = _discrepancy_terms(S)
    f_null = float(np.sum(np.log(np.diag(S)))) - logdet_s
    chi_null = max(n - 1, 1) * max(f_null, 0.0)
    df_null = p * (p - 1) // 2
    if df > 0:
        tli, rmsea = efa_fit_indices(chi_square, df, chi_null, df_null, n)
    else:
        tli = float("nan")
        rmsea = 0.0 if chi_square <= 1e-8 else float("nan")
    return FitStatistics(
        chi_square=chi_square,
        df=df,
        n=n,
        tli=tli,
        rmsea=rmsea,
        cfi=comparative_fit_index(chi_square, df, chi_null, df_null),
        srmr=srmr(S, implied),
        bic=chi_square - df * math.log(n),
        chi_square_null=chi_null,
        df_null=df_null,
    )


def fit_ml(
    model: SemModel,
    S: np.ndarray,
    n: int,
    start: Mapping[str, float] | None = None,
    max_iter: int = 2000,
) -> SemFit:
    """Maximum-likelihood fit of a model to a sample covariance matrix.

    Standard errors come from the inverse expected information with the
    Hessian of the discrepancy obtained by central differences of the
    analytic gradient.  Negative variance estimates are reported in
    ``heywood`` rather than prevented.
    """
    S = np.asarray(S, dtype=float)
    layout = _Layout(model)
    p = layout.p
    if S.shape != (p, p):
        raise ValueError(f"sample covariance is {S.shape}, model observes {p} variables")
    _discrepancy_terms(S)  # PD check
    n_free = len(layout.free)
    df = p * (p + 1) // 2 - n_free
    if df < 0:
        raise SemSpecError(f"model is not identified: {n_free} free parameters, df = {df}")

    start_values = default_start_values(model, S)
    if start:
        start_values.update(start)
    theta0 = np.array([start_values[prm.name] for prm in layout.free])

    objective, _ = _objective_factory(layout, S)
    result = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-13, "gtol": 1e-10},
    )
    theta = result.x
    fmin, _ = objective(theta)

    values = {prm.name: float(v) for prm, v in zip(layout.free, theta)}
    implied = implied_covariance(model, values)

    # standard errors via expected information
    H = _numeric_hessian(objective, theta)
    info = max(n - 1, 1) / 2.0 * H
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
    se_diag = np.diag(cov)

    estimates: dict[str, ParamEstimate] = {}
    k = 0
    for prm in layout.params:
        if prm.free:
            value = values[prm.name]
            se = math.sqrt(se_diag[k]) if se_diag[k] > 0 else float("nan")
            z = value / se if se and not math.isnan(se) and se > 0 else float("nan")
            p_value = 2 * float(norm.sf(abs(z))) if not math.isnan(z) else float("nan")
            estimates[prm.name] = ParamEstimate(value, se, z, p_value, True)
            k += 1
        else:
            estimates[prm.name] = ParamEstimate(
                float(prm.fixed_value), 0.0, float("nan"), float("nan"), False
            )

    heywood = [
        prm.name
        for prm in layout.params
        if prm.kind == "variance" and estimates[prm.name].value < 0
    ]

    fit = SemFit(
        model=model,
        estimates=estimates,
        standardized={},
        implied=implied,
        sample=S,
        fit=_fit_statistics_sem(S, implied, fmin, n, df),
        heywood=heywood,
        converged=bool(result.success),
        fmin=float(fmin),
        n=n,
    )
    try:
        fit.standardized = standardize(fit)
    except ValueError:
        # improper solution with a non-positive implied variance; raw
        # estimates and the heywood flags still describe what happened
        fit.standardized = {}
    return fit


def standardize(fit: SemFit) -> dict[str, float]:
    """Rescale estimates to unit-variance latents and indicators.

    A directed coefficient x -> y becomes raw * sd(x) / sd(y) with
    model-implied standard deviations; variances become proportions of
    the variable's implied variance.
    """
    layout = _Layout(fit.model)
    A, Smat = layout.build({name: est.value for name, est in fit.estimates.items() if est.free})
    t = layout.t
    B = np.linalg.inv(np.eye(t) - A)
    V = B @ Smat @ B.T
    variances = np.diag(V)
    if np.any(variances <= 0):
        bad = layout.variables[int(np.argmin(variances))]
        raise ValueError(f"implied variance of {bad!r} is not positive")
    sd = np.sqrt(variances)
    out: dict[str, float] = {}
    for prm in layout.params:
        value = fit.estimates[prm.name].value
        i = layout.index[prm.target]
        j = layout.index[prm.source]
        if prm.kind in ("loading", "path"):
            out[prm.name] = value * sd[j] / sd[i]
        elif prm.kind == "variance":
            out[prm.name] = value / variances[i]
        else:
            out[prm.name] = value / (sd[i] * sd[j])
    return out


def detect_heywood(fit: SemFit) -> list[str]:
    """Variance parameters with strictly negative estimates."""
    return [
        prm.name
        for prm in fit.model.parameters()
        if prm.kind == "variance" and fit.estimates[prm.name].value < 0
    ]


def compare_models(fit_a: SemFit, fit_b: SemFit) -> tuple[float, int, float]:
    """(chi-square, df, BIC) differences, a minus b; no automatic verdict."""
    if fit_a.n != fit_b.n:
        raise ValueError(f"sample sizes differ: {fit_a.n} vs {fit_b.n}")
    return (
        fit_a.fit.chi_square - fit_b.fit.chi_square,
        fit_a.fit.df - fit_b.fit.df,
        fit_a.fit.bic - fit_b.fit.bic,
    )


# ---------------------------------------------------------------------------
# reporting


def format_fit_report(fit: SemFit) -> str:
    """Aligned-column text table: estimate, SE, z, p, standardized."""
    lines = [
        f"{'parameter':<32}{'estimate':>10}{'se':>9}{'z':>8}{'p':>8}{'std':>9}",
    ]
    for name, est in fit.estimates.items():
        se = f"{est.se:.3f}" if est.free else "-"
        z = f"{est.z:.2f}" if est.free and not math.isnan(est.z) else "-"
        p_value = f"{est.p_value:.3f}" if est.free and not math.isnan(est.p_value) else "-"
        std = fit.standardized.get(name, float("nan"))
        lines.append(
            f"{name:<32}{est.value:>10.3f}{se:>9}{z:>8}{p_value:>8}{std:>9.3f}"
        )
    stats = fit.fit
    lines.append("")
    lines.append(
        f"chi2 {stats.chi_square:.3f} on {stats.df} df, n {stats.n}; "
        f"CFI {stats.cfi:.3f}, TLI {stats.tli:.3f}, "
        f"RMSEA {stats.rmsea:.3f}, SRMR {stats.srmr:.3f}, BIC {stats.bic:.3f}"
    )
    if fit.heywood:
        lines.append("improper solution: negative variance for " + ", ".join(fit.heywood))
    return "\n".join(lines)
