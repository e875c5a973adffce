"""Exploratory factor analysis numerics.

Maximum-likelihood extraction profiles the loadings out by
eigendecomposition at each value of the uniquenesses and optimises the
uniquenesses on an unconstrained log scale with a quasi-Newton method.
Uniquenesses are floored at 0.005 to keep the EFA side free of Heywood
collapse; hitting the floor is reported on the solution.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

PSI_FLOOR = 0.005


class IdentificationError(ValueError):
    """The requested factor count leaves no degrees of freedom."""


# ---------------------------------------------------------------------------
# correlations and eigenstructure


def correlation_matrix(X: np.ndarray, names: Sequence[str] | None = None) -> np.ndarray:
    """Pearson correlation matrix of an n-by-p data matrix."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise ValueError("correlation requires at least two rows")
    sd = X.std(axis=0, ddof=1)
    constant = np.flatnonzero(sd == 0)
    if constant.size:
        labels = [names[i] if names else str(i) for i in constant]
        raise ValueError(f"constant column(s): {', '.join(labels)}")
    R = np.corrcoef(X, rowvar=False)
    np.fill_diagonal(R, 1.0)
    return (R + R.T) / 2


def eigenvalues(R: np.ndarray) -> np.ndarray:
    """Real spectrum of a symmetric matrix, descending."""
    R = np.asarray(R, dtype=float)
    if not np.allclose(R, R.T, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    return np.sort(np.linalg.eigvalsh(R))[::-1]


def squared_multiple_correlations(R: np.ndarray) -> np.ndarray:
    """SMC of each variable on all others: 1 - 1/diag(R^-1)."""
    return 1.0 - 1.0 / np.diag(np.linalg.inv(R))


def _reduced_eigenvalues(R: np.ndarray) -> np.ndarray:
    reduced = R.copy()
    np.fill_diagonal(reduced, squared_multiple_correlations(R))
    return np.sort(np.linalg.eigvalsh(reduced))[::-1]


# ---------------------------------------------------------------------------
# parallel analysis


@dataclass
class ParallelAnalysisResult:
    observed_eigenvalues: np.ndarray
    simulated_mean_eigenvalues: np.ndarray
    simulated_quantile_eigenvalues: np.ndarray
    quantile: float
    suggested_factors: int
    basis: str  # "full" | "reduced"
    comparison: str  # "mean" | "quantile"


def _suggest(observed: np.ndarray, threshold: np.ndarray) -> int:
    count = 0
    for obs, thr in zip(observed, threshold):
        if obs > thr:
            count += 1
        else:
            break
    return count


def parallel_analysis(
    X: np.ndarray,
    n_sims: int = 100,
    seed: int = 0,
    basis: str = "reduced",
    comparison: str = "quantile",
    quantile: float = 0.995,
) -> ParallelAnalysisResult:
    """Factor-count suggestion against eigenvalues of random normal data.

    Simulated datasets share the observed shape; per-simulation seeds are
    derived from ``seed`` so results are independent of scheduling.  The
    reduced basis replaces the diagonal with squared multiple
    correlations before eigendecomposition.  The default comparison takes
    a high simulated per-rank quantile as the retention threshold
    (the mean comparison is selectable but retains spurious factors on
    noise about half the time).
    """
    if n_sims < 1:
        raise ValueError("n_sims must be >= 1")
    if basis not in ("full", "reduced"):
        raise ValueError(f"unknown basis {basis!r}")
    if comparison not in ("mean", "quantile"):
        raise ValueError(f"unknown comparison {comparison!r}")
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    eig = _reduced_eigenvalues if basis == "reduced" else eigenvalues
    observed = eig(correlation_matrix(X))
    seeds = np.random.SeedSequence(seed).spawn(n_sims)
    sims = np.empty((n_sims, p))
    for i, child in enumerate(seeds):
        noise = np.random.default_rng(child).standard_normal((n, p))
        sims[i] = eig(correlation_matrix(noise))
    mean = sims.mean(axis=0)
    qtl = np.quantile(sims, quantile, axis=0)
    threshold = mean if comparison == "mean" else qtl
    return ParallelAnalysisResult(
        observed_eigenvalues=observed,
        simulated_mean_eigenvalues=mean,
        simulated_quantile_eigenvalues=qtl,
        quantile=quantile,
        suggested_factors=_suggest(observed, threshold),
        basis=basis,
        comparison=comparison,
    )


# ---------------------------------------------------------------------------
# solutions and fit statistics


@dataclass
class FactorSolution:
    loadings: np.ndarray  # p x m
    uniquenesses: np.ndarray  # p
    rotation: np.ndarray  # m x m orthogonal (identity when unrotated)
    communalities: np.ndarray  # p
    ss_loadings: np.ndarray  # m
    cumulative_variance: np.ndarray  # m
    proportion_explained: np.ndarray  # m
    method: str  # "ml" | "principal_axis"
    converged: bool
    iterations: int
    floored: list[int] = field(default_factory=list)  # indices at the psi floor


@dataclass
class FitStatistics:
    chi_square: float
    df: int
    n: int
    tli: float
    rmsea: float
    cfi: float
    srmr: float
    bic: float
    chi_square_null: float
    df_null: int

    def as_dict(self) -> dict:
        return {k: (float(v) if not isinstance(v, int) else v) for k, v in vars(self).items()}


def variance_table(loadings: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(SS loadings, cumulative variance over p, proportion of explained)."""
    L = np.asarray(loadings, dtype=float)
    p = L.shape[0]
    ss = (L**2).sum(axis=0)
    cumulative = np.cumsum(ss) / p
    total = ss.sum()
    proportion = ss / total if total > 0 else np.zeros_like(ss)
    return ss, cumulative, proportion


def apply_sign_convention(loadings: np.ndarray, rotation: np.ndarray | None = None):
    """Flip each column so its largest-magnitude entry is positive."""
    L = np.asarray(loadings, dtype=float).copy()
    signs = np.sign(L[np.abs(L).argmax(axis=0), np.arange(L.shape[1])])
    signs[signs == 0] = 1.0
    L *= signs
    if rotation is not None:
        return L, rotation * signs
    return L


def _make_solution(
    loadings: np.ndarray,
    uniquenesses: np.ndarray,
    method: str,
    converged: bool,
    iterations: int,
    floored: list[int] | None = None,
) -> FactorSolution:
    L = apply_sign_convention(loadings)
    ss, cumulative, proportion = variance_table(L)
    return FactorSolution(
        loadings=L,
        uniquenesses=np.asarray(uniquenesses, dtype=float),
        rotation=np.eye(L.shape[1]),
        communalities=(L**2).sum(axis=1),
        ss_loadings=ss,
        cumulative_variance=cumulative,
        proportion_explained=proportion,
        method=method,
        converged=converged,
        iterations=iterations,
        floored=floored or [],
    )


def srmr(S: np.ndarray, implied: np.ndarray) -> float:
    """Mean squared standardised residual over the lower triangle plus diagonal."""
    S = np.asarray(S, dtype=float)
    implied = np.asarray(implied, dtype=float)
    ds = np.sqrt(np.diag(S))
    di = np.sqrt(np.diag(implied))
    Sstd = S / np.outer(ds, ds)
    Istd = implied / np.outer(di, di)
    idx = np.tril_indices(S.shape[0])
    return float(np.sqrt(np.mean((Sstd[idx] - Istd[idx]) ** 2)))


def efa_fit_indices(
    chi_square: float, df: int, null_chi_square: float, null_df: int, n: int
) -> tuple[float, float]:
    """(TLI, RMSEA) from model and independence-model chi-squares."""
    if df <= 0 or null_df <= 0 or n <= 1:
        raise ValueError("df, null_df must be positive and n > 1")
    null_ratio = null_chi_square / null_df
    if null_ratio == 1.0:
        raise ZeroDivisionError("TLI undefined: null chi-square per df equals one")
    tli = (null_ratio - chi_square / df) / (null_ratio - 1.0)
    rmsea = math.sqrt(max(chi_square - df, 0.0) / (df * (n - 1)))
    return tli, rmsea


def comparative_fit_index(
    chi_square: float, df: int, null_chi_square: float, null_df: int
) -> float:
    num = max(chi_square - df, 0.0)
    den = max(null_chi_square - null_df, chi_square - df, 0.0)
    return 1.0 - num / den if den > 0 else 1.0


def _fit_statistics(
    R: np.ndarray, implied: np.ndarray, fmin: float, n: int, p: int, m: int
) -> FitStatistics:
    df = ((p - m) ** 2 - p - m) // 2
    bartlett = n - 1 - (2 * p + 5) / 6 - 2 * m / 3
    chi_square = max(bartlett, 0.0) * max(fmin, 0.0)
    sign, logdet = np.linalg.slogdet(R)
    f_null = -logdet if sign > 0 else float("inf")
    chi_null = max(n - 1 - (2 * p + 5) / 6, 0.0) * f_null
    df_null = p * (p - 1) // 2
    if df > 0:
        tli, rmsea = efa_fit_indices(chi_square, df, chi_null, df_null, n)
    else:
        tli = float("nan")
        rmsea = 0.0 if chi_square <= 1e-8 else float("nan")
    cfi = comparative_fit_index(chi_square, df, chi_null, df_null)
    return FitStatistics(
        chi_square=chi_square,
        df=df,
        n=n,
        tli=tli,
        rmsea=rmsea,
        cfi=cfi,
        srmr=srmr(R, implied),
        bic=chi_square - df * math.log(n),
        chi_square_null=chi_null,
        df_null=df_null,
    )


# ---------------------------------------------------------------------------
# maximum-likelihood extraction


def _check_model_size(p: int, m: int) -> None:
    if m < 1:
        raise ValueError("at least one factor required")
    df = ((p - m) ** 2 - p - m) / 2
    if df < 0:
        raise IdentificationError(f"{m} factors on {p} variables: df = {df} < 0")


def _loadings_from_psi(R: np.ndarray, psi: np.ndarray, m: int) -> np.ndarray:
    sc = 1.0 / np.sqrt(psi)
    Rs = R * np.outer(sc, sc)
    vals, vecs = np.linalg.eigh(Rs)
    top = slice(-1, -m - 1, -1)
    lam = np.sqrt(np.maximum(vals[top] - 1.0, 0.0))
    return np.sqrt(psi)[:, None] * vecs[:, top] * lam[None, :]


def _profiled_objective(R: np.ndarray, psi: np.ndarray, m: int) -> float:
    sc = 1.0 / np.sqrt(psi)
    vals = np.linalg.eigvalsh(R * np.outer(sc, sc))
    tail = vals[: len(psi) - m]  # ascending: the p - m smallest
    if np.any(tail <= 0):
        return float("inf")
    return float(np.sum(tail - np.log(tail)) - (len(psi) - m))


def efa_ml(
    R: np.ndarray,
    n: int,
    m: int,
    psi_floor: float = PSI_FLOOR,
    max_iter: int = 1000,
) -> tuple[FactorSolution, FitStatistics]:
    """Maximum-likelihood factor extraction on a correlation matrix.

    Returns the unrotated solution together with chi-square based fit
    statistics (Bartlett-corrected) and BIC = chi^2 - df*log(n).
    """
    R = np.asarray(R, dtype=float)
    p = R.shape[0]
    _check_model_size(p, m)

    start = (1.0 - 0.5 * m / p) / np.diag(np.linalg.inv(R))
    start = np.clip(start, psi_floor, 1.0)

    def objective(log_psi: np.ndarray) -> tuple[float, np.ndarray]:
        psi = np.exp(log_psi)
        value = _profiled_objective(R, psi, m)
        if not np.isfinite(value):
            return 1e10, np.zeros_like(log_psi)
        L = _loadings_from_psi(R, psi, m)
        grad = np.diag(L @ L.T + np.diag(psi) - R) / psi
        return value, grad

    result = minimize(
        objective,
        np.log(start),
        jac=True,
        method="L-BFGS-B",
        bounds=[(math.log(psi_floor), 0.0)] * p,
        options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-9},
    )
    psi = np.exp(result.x)
    loadings = _loadings_from_psi(R, psi, m)
    fmin = _profiled_objective(R, psi, m)
    floored = np.flatnonzero(psi <= psi_floor * (1 + 1e-9)).tolist()
    # a stalled line search at an already-stationary point still counts
    _, final_grad = objective(result.x)
    free = np.ones(p, dtype=bool)
    free[floored] = False
    converged = bool(result.success) or float(np.abs(final_grad[free]).max(initial=0.0)) < 1e-6
    solution = _make_solution(
        loadings,
        psi,
        method="ml",
        converged=converged,
        iterations=int(result.nit),
        floored=floored,
    )
    implied = solution.loadings @ solution.loadings.T + np.diag(psi)
    return solution, _fit_statistics(R, implied, fmin, n, p, m)


def efa_principal_axis(
    R: np.ndarray, m: int, max_iter: int = 200, tol: float = 1e-6
) -> FactorSolution:
    """Iterated principal-axis extraction seeded with SMC communalities."""
    R = np.asarray(R, dtype=float)
    p = R.shape[0]
    _check_model_size(p, m)
    h2 = np.clip(squared_multiple_correlations(R), 0.0, 1.0)
    loadings = np.zeros((p, m))
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        reduced = R.copy()
        np.fill_diagonal(reduced, h2)
        vals, vecs = np.linalg.eigh(reduced)
        top = slice(-1, -m - 1, -1)
        lam = np.sqrt(np.maximum(vals[top], 0.0))
        loadings = vecs[:, top] * lam[None, :]
        h2_new = (loadings**2).sum(axis=1)
        if np.max(np.abs(h2_new - h2)) < tol:
            h2 = h2_new
            converged = True
            break
        h2 = h2_new
    return _make_solution(
        loadings,
        1.0 - h2,
        method="principal_axis",
        converged=converged,
        iterations=iteration,
    )


# ---------------------------------------------------------------------------
# rotation


def varimax_criterion(loadings: np.ndarray) -> float:
    """Sum over factors of the variance of squared loadings (1/p scaling)."""
    L2 = np.asarray(loadings, dtype=float) ** 2
    return float(np.sum((L2**2).mean(axis=0) - L2.mean(axis=0) ** 2))


def varimax(
    loadings: np.ndarray, tol: float = 1e-8, max_iter: int = 1000
) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal varimax rotation by pairwise planar sweeps.

    Returns (rotated loadings, rotation matrix) with
    ``rotated = loadings @ rotation``.  One-column input is returned
    unchanged.  Communalities are invariant.
    """
    L = np.asarray(loadings, dtype=float).copy()
    p, m = L.shape
    rotation = np.eye(m)
    if m < 2:
        return L, rotation
    previous = varimax_criterion(L)
    for _ in range(max_iter):
        for j in range(m - 1):
            for k in range(j + 1, m):
                x, y = L[:, j], L[:, k]
                u = x * x - y * y
                v = 2.0 * x * y
                a = u.sum()
                b = v.sum()
                c = (u * u - v * v).sum()
                d = 2.0 * (u * v).sum()
                num = d - 2.0 * a * b / p
                den = c - (a * a - b * b) / p
                phi = 0.25 * math.atan2(num, den)
                if abs(phi) < 1e-13:
                    continue
                cos, sin = math.cos(phi), math.sin(phi)
                G = np.array([[cos, -sin], [sin, cos]])
                L[:, [j, k]] = L[:, [j, k]] @ G
                rotation[:, [j, k]] = rotation[:, [j, k]] @ G
        current = varimax_criterion(L)
        if current - previous < tol:
            break
        previous = current
    return L, rotation


def rotate_solution(solution: FactorSolution, normalize: bool = True) -> FactorSolution:
    """Varimax-rotate a solution; sign convention re-applied per column.

    With ``normalize`` (the usual package default), the rotation angle is
    chosen on rows scaled to unit communality so every variable weighs
    equally in the criterion; the rotation is then applied to the raw
    loadings, so communalities are unaffected either way.
    """
    L = solution.loadings
    if normalize:
        h = np.sqrt((L**2).sum(axis=1))
        h[h == 0] = 1.0
        _, rotation = varimax(L / h[:, None])
        rotated = L @ rotation
    else:
        rotated, rotation = varimax(L)
    rotated, rotation = apply_sign_convention(rotated, rotation)
    ss, cumulative, proportion = variance_table(rotated)
    return FactorSolution(
        loadings=rotated,
        uniquenesses=solution.uniquenesses.copy(),
        rotation=solution.rotation @ rotation,
        communalities=(rotated**2).sum(axis=1),
        ss_loadings=ss,
        cumulative_variance=cumulative,
        proportion_explained=proportion,
        method=solution.method,
        converged=solution.converged,
        iterations=solution.iterations,
        floored=list(solution.floored),
    )


# ---------------------------------------------------------------------------
# reliability


def cronbach_alpha(items: np.ndarray) -> float:
    """Internal-consistency alpha of an n-by-k item matrix (n-1 variances)."""
    X = np.asarray(items, dtype=float)
    n, k = X.shape
    if k < 2:
        raise ValueError("alpha requires at least two items")
    total_var = X.sum(axis=1).var(ddof=1)
    if total_var == 0:
        raise ZeroDivisionError("zero total variance")
    item_var = X.var(axis=0, ddof=1).sum()
    return float(k / (k - 1) * (1.0 - item_var / total_var))


def mcdonald_omega(loadings: Sequence[float], uniquenesses: Sequence[float]) -> float:
    """General-factor saturation from one-factor loadings and uniquenesses."""
    lam = np.asarray(loadings, dtype=float)
    psi = np.asarray(uniquenesses, dtype=float)
    if np.any(psi < 0):
        raise ValueError("uniquenesses must be non-negative")
    if np.all(lam == 0):
        return 0.0
    common = lam.sum() ** 2
    return float(common / (common + psi.sum()))


# ---------------------------------------------------------------------------
# interpretation helpers


def assign_indicators(
    loadings: np.ndarray, names: Sequence[str], cutoff: float = 0.3
) -> tuple[dict[int, list[str]], list[str]]:
    """Assign each variable to the factor of its maximal |loading|.

    Variables whose maximal |loading| does not exceed the cutoff are
    dropped.  Ties go to the lower factor index.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    L = np.abs(np.asarray(loadings, dtype=float))
    assignment: dict[int, list[str]] = {j: [] for j in range(L.shape[1])}
    dropped: list[str] = []
    for i, name in enumerate(names):
        j = int(L[i].argmax())
        if L[i, j] > cutoff:
            assignment[j].append(name)
        else:
            dropped.append(name)
    return assignment, dropped


def align_columns(reference: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    """Best column permutation and signs of ``loadings`` against a reference.

    Minimises the Frobenius distance; used wherever solutions are only
    identified up to column order and sign.
    """
    ref = np.asarray(reference, dtype=float)
    L = np.asarray(loadings, dtype=float)
    m = L.shape[1]
    best: np.ndarray | None = None
    best_err = math.inf
    for perm in itertools.permutations(range(m)):
        candidate = L[:, perm].copy()
        for j in range(m):
            if np.dot(candidate[:, j], ref[:, j]) < 0:
                candidate[:, j] *= -1
        err = float(((candidate - ref) ** 2).sum())
        if err < best_err:
            best_err = err
            best = candidate
    assert best is not None
    return best
