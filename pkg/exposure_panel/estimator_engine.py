#!/usr/bin/env python3
"""
Estimator Engine
Two-way fixed-effects absorption by alternating projections, OLS through a
rank-revealing QR decomposition, CR1 cluster-robust / HC1 / classical
covariance, joint Wald tests, 2SLS and variance inflation factors.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, sparse, stats
from scipy.sparse.csgraph import connected_components

from .exceptions import (
    ConvergenceError, InsufficientClustersError, RankDeficiencyError,
    SpecificationError, WaldTestError,
)

logger = logging.getLogger(__name__)

FE_DIMS = ('entity', 'time')
RANK_TOLERANCE = 1e-10
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
WEAK_INSTRUMENT_F = 10.0
COV_TYPES = ('cluster', 'hc1', 'unadjusted')


def interaction_name(*parents: str) -> str:
    """Column name of an interaction; parents joined by ':'"""
    return ':'.join(parents)


def group_codes(labels: Sequence) -> Tuple[np.ndarray, int]:
    """Integer codes 0..G-1 for arbitrary labels (sorted label order)"""
    _, codes = np.unique(np.asarray(labels), return_inverse=True)
    codes = codes.reshape(-1)
    return codes, int(codes.max()) + 1 if len(codes) else 0


def _indicator(codes: np.ndarray, n_groups: int) -> sparse.csr_matrix:
    n = len(codes)
    return sparse.csr_matrix((np.ones(n), (np.arange(n), codes)), shape=(n, n_groups))


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """
    Outcome, named regressors, cluster labels and fixed-effect identifiers

    Rows must be complete; fe_dims lists the absorbed dimensions
    ('entity' and/or 'time'). A demeaned design carries the absorbed
    parameter counts used for degrees of freedom.
    """

    y: np.ndarray
    X: np.ndarray
    names: Tuple[str, ...]
    clusters: Optional[np.ndarray] = None
    entity_ids: Optional[np.ndarray] = None
    time_ids: Optional[np.ndarray] = None
    fe_dims: Tuple[str, ...] = ()
    outcome: str = 'y'
    demeaned: bool = False
    absorbed: Mapping[str, int] = field(default_factory=dict)
    iterations: int = 0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'names', tuple(self.names))
        object.__setattr__(self, 'fe_dims', tuple(self.fe_dims))
        errors = []
        n = len(y)
        if X.shape[0] != n:
            errors.append(f"X has {X.shape[0]} rows but y has {n}")
        if X.shape[1] != len(self.names):
            errors.append(f"X has {X.shape[1]} columns but {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            errors.append('column names are not unique')
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            errors.append('design contains absent or non-finite values')
        for dim in self.fe_dims:
            if dim not in FE_DIMS:
                errors.append(f"unknown fixed-effect dimension {dim!r}")
        if 'entity' in self.fe_dims and self.entity_ids is None:
            errors.append('entity fixed effects requested without entity ids')
        if 'time' in self.fe_dims and self.time_ids is None:
            errors.append('time fixed effects requested without time ids')
        for label, ids in (('clusters', self.clusters), ('entity_ids', self.entity_ids),
                           ('time_ids', self.time_ids)):
            if ids is not None and len(ids) != n:
                errors.append(f"{label} has {len(ids)} entries but design has {n} rows")
        if errors:
            raise SpecificationError('Invalid design matrix: ' + '; '.join(errors), {'errors': errors})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, outcome: str, regressors: Sequence[str],
                   entity_col: Optional[str] = 'entity_id', time_col: Optional[str] = 'year',
                   cluster_col: Optional[str] = 'entity_id',
                   fe_dims: Sequence[str] = FE_DIMS) -> 'DesignMatrix':
        return cls(
            y=frame[outcome].to_numpy(dtype=float),
            X=frame[list(regressors)].to_numpy(dtype=float),
            names=tuple(regressors),
            clusters=None if cluster_col is None else frame[cluster_col].to_numpy(),
            entity_ids=None if entity_col is None else frame[entity_col].to_numpy(),
            time_ids=None if time_col is None else frame[time_col].to_numpy(),
            fe_dims=tuple(fe_dims),
            outcome=outcome,
        )

    @property
    def n_obs(self) -> int:
        return len(self.y)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SpecificationError(f"Column not in design: {name}")

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.index(name)]

    def fe_groups(self) -> List[Tuple[str, np.ndarray, int]]:
        groups = []
        for dim in self.fe_dims:
            ids = self.entity_ids if dim == 'entity' else self.time_ids
            codes, n_groups = group_codes(ids)
            groups.append((dim, codes, n_groups))
        return groups


def demean_columns(M: np.ndarray, groups: Sequence[Tuple[np.ndarray, int]],
                   tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> Tuple[np.ndarray, int]:
    """
    Alternating projections: subtract group means dimension by dimension until
    the largest absolute change of any cell in a sweep falls below tol

    Returns:
        (demeaned matrix, sweeps used)
    """
    if tol <= 0:
        raise SpecificationError(f"Tolerance must be positive, got {tol}")
    M = np.array(M, dtype=float, copy=True)
    squeeze = M.ndim == 1
    if squeeze:
        M = M.reshape(-1, 1)
    if not groups:
        return (M.ravel() if squeeze else M), 0
    projectors = []
    for codes, n_groups in groups:
        D = _indicator(codes, n_groups)
        counts = np.asarray(D.sum(axis=0)).ravel()
        projectors.append((D, counts))

    delta = math.inf
    for sweep in range(1, max_iter + 1):
        previous = M.copy()
        for D, counts in projectors:
            means = (D.T @ M) / counts[:, None]
            M -= D @ means
        delta = float(np.max(np.abs(M - previous))) if M.size else 0.0
        if delta < tol:
            return (M.ravel() if squeeze else M), sweep
    raise ConvergenceError(max_iter, delta)


def absorbed_parameter_counts(design: DesignMatrix) -> Dict[str, int]:
    """Fixed-effect parameters absorbed per dimension (connected-set correction for two-way)"""
    groups = design.fe_groups()
    counts = {dim: n_groups for dim, _, n_groups in groups}
    if len(groups) == 2:
        (_, e_codes, n_e), (_, t_codes, n_t) = groups
        graph = sparse.csr_matrix(
            (np.ones(len(e_codes)), (e_codes, n_e + t_codes)), shape=(n_e + n_t, n_e + n_t)
        )
        n_components, _ = connected_components(graph, directed=False)
        counts[groups[1][0]] = n_t - n_components
    return counts


def within_transform(design: DesignMatrix, fe_dims: Optional[Sequence[str]] = None,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> DesignMatrix:
    """
    Demean outcome and regressors over the requested fixed-effect dimensions

    Args:
        design: Design with entity/time identifiers
        fe_dims: Dimensions to absorb (defaults to design.fe_dims)
        tol: Convergence threshold on the maximum absolute cell change per sweep
        max_iter: Maximum number of sweeps

    Raises:
        ConvergenceError: max_iter sweeps without convergence (carries final delta)
    """
    if fe_dims is not None:
        design = replace(design, fe_dims=tuple(fe_dims))
    if not design.fe_dims:
        return replace(design, demeaned=True, absorbed={}, iterations=0)
    groups = [(codes, n_groups) for _, codes, n_groups in design.fe_groups()]
    stacked = np.column_stack([design.y, design.X])
    demeaned, sweeps = demean_columns(stacked, groups, tol, max_iter)
    absorbed = absorbed_parameter_counts(design)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(f"Within transform over {design.fe_dims}: {sweeps} sweeps, absorbed {absorbed}")
    return replace(design, y=demeaned[:, 0], X=demeaned[:, 1:], demeaned=True,
                   absorbed=absorbed, iterations=sweeps)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Immutable regression result with robust covariance and diagnostics"""

    names: Tuple[str, ...]
    params: np.ndarray
    cov: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    n_obs: int
    n_entities: Optional[int]
    n_clusters: Optional[int]
    r_squared: float
    f_statistic: float
    f_pvalue: float
    df_resid: int
    df_inference: float
    cov_type: str
    inference: str
    absorbed: Mapping[str, int]
    residuals: np.ndarray
    fitted: np.ndarray
    outcome: str = 'y'
    first_stage: Optional['FitResult'] = None
    first_stage_f: Optional[float] = None
    instrument: Optional[str] = None
    endogenous: Optional[str] = None

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SpecificationError(f"Coefficient not in fit: {name}")

    def coefficient(self, name: str) -> float:
        return float(self.params[self.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.std_errors[self.index(name)])

    def p_value(self, name: str) -> float:
        return float(self.p_values[self.index(name)])

    def params_dict(self) -> Dict[str, float]:
        return {name: float(value) for name, value in zip(self.names, self.params)}

    @property
    def weak_instrument(self) -> Optional[bool]:
        if self.first_stage_f is None:
            return None
        return bool(self.first_stage_f < WEAK_INSTRUMENT_F)

    def critical_value(self, alpha: float = 0.05) -> float:
        if self.inference == 'normal' or not np.isfinite(self.df_inference):
            return float(stats.norm.ppf(1 - alpha / 2))
        return float(stats.t.ppf(1 - alpha / 2, self.df_inference))

    def conf_int(self, alpha: float = 0.05) -> pd.DataFrame:
        crit = self.critical_value(alpha)
        return pd.DataFrame({
            'lower': self.params - crit * self.std_errors,
            'upper': self.params + crit * self.std_errors,
        }, index=list(self.names))

    def summary_frame(self, alpha: float = 0.05) -> pd.DataFrame:
        ci = self.conf_int(alpha)
        return pd.DataFrame({
            'coef': self.params, 'std_err': self.std_errors, 't': self.t_stats,
            'p_value': self.p_values, 'ci_lower': ci['lower'].to_numpy(), 'ci_upper': ci['upper'].to_numpy(),
        }, index=list(self.names))

    def to_dict(self, include_cov: bool = True) -> Dict:
        ci = self.conf_int()
        out = {
            'outcome': self.outcome,
            'coefficients': {
                name: {
                    'coef': _clean(self.params[i]),
                    'std_err': _clean(self.std_errors[i]),
                    't': _clean(self.t_stats[i]),
                    'p_value': _clean(self.p_values[i]),
                    'ci_lower': _clean(ci['lower'].iloc[i]),
                    'ci_upper': _clean(ci['upper'].iloc[i]),
                }
                for i, name in enumerate(self.names)
            },
            'n_obs': self.n_obs,
            'n_entities': self.n_entities,
            'n_clusters': self.n_clusters,
            'r_squared': _clean(self.r_squared),
            'f_statistic': _clean(self.f_statistic),
            'f_pvalue': _clean(self.f_pvalue),
            'dof': {
                'params': len(self.names),
                'absorbed': dict(sorted(self.absorbed.items())),
                'df_resid': self.df_resid,
                'df_inference': _clean(self.df_inference),
            },
            'cov_type': self.cov_type,
            'inference': self.inference,
        }
        if include_cov:
            out['covariance'] = [[_clean(v) for v in row] for row in self.cov]
        if self.first_stage is not None:
            out['first_stage'] = self.first_stage.to_dict(include_cov=False)
            out['first_stage_f'] = _clean(self.first_stage_f)
            out['weak_instrument'] = self.weak_instrument
            out['instrument'] = self.instrument
            out['endogenous'] = self.endogenous
        return out


def _clean(value) -> Optional[float]:
    """JSON-safe float: NaN becomes None"""
    if value is None:
        return None
    value = float(value)
    if math.isnan(value):
        return None
    return value


def _check_rank(X: np.ndarray, names: Sequence[str]) -> None:
    k = X.shape[1]
    if k == 0:
        raise SpecificationError('Design has no regressors')
    singular_values = linalg.svd(X, compute_uv=False)
    largest = singular_values.max() if singular_values.size else 0.0
    rank = int(np.sum(singular_values > RANK_TOLERANCE * largest)) if largest > 0 else 0
    if rank < k:
        _, _, pivots = linalg.qr(X, mode='economic', pivoting=True)
        dependent = [names[p] for p in pivots[rank:]]
        raise RankDeficiencyError(dependent, rank, k)


def _safe_t(params: np.ndarray, std_errors: np.ndarray) -> np.ndarray:
    t = np.zeros_like(params)
    positive = std_errors > 0
    t[positive] = params[positive] / std_errors[positive]
    degenerate = ~positive & (params != 0)
    t[degenerate] = np.sign(params[degenerate]) * np.inf
    return t


def _two_sided_p(t: np.ndarray, df: float, inference: str) -> np.ndarray:
    if inference == 'normal' or not np.isfinite(df):
        return 2 * stats.norm.sf(np.abs(t))
    return 2 * stats.t.sf(np.abs(t), df)


def _fit_arrays(y: np.ndarray, X: np.ndarray, names: Sequence[str], *,
                clusters: Optional[np.ndarray], cov_type: str, inference: str,
                absorbed: Mapping[str, int], absorbed_in_cov: int,
                n_entities: Optional[int], outcome: str,
                X_structural: Optional[np.ndarray] = None) -> FitResult:
    """
    Least squares on prepared arrays

    X_structural, when given, replaces X for residuals and fitted values while
    X (the projected regressors) forms the bread and meat of the sandwich.
    """
    if cov_type not in COV_TYPES:
        raise SpecificationError(f"Unknown covariance type {cov_type!r}")
    if inference not in ('t', 'normal'):
        raise SpecificationError(f"Unknown inference distribution {inference!r}")
    n, k = X.shape
    extra_df = int(sum(absorbed.values()))
    df_resid = n - k - extra_df
    if df_resid <= 0:
        raise SpecificationError(f"Not enough observations: n={n}, parameters={k + extra_df}")
    _check_rank(X, names)

    Q, R = linalg.qr(X, mode='economic')
    params = linalg.solve_triangular(R, Q.T @ y)
    regressors = X if X_structural is None else X_structural
    fitted = regressors @ params
    residuals = y - fitted
    R_inv = linalg.solve_triangular(R, np.eye(k))
    bread = R_inv @ R_inv.T

    n_clusters = None
    if cov_type == 'cluster':
        if clusters is None:
            raise SpecificationError('Clustered covariance requested without cluster labels')
        codes, n_clusters = group_codes(clusters)
        if n_clusters < 2:
            raise InsufficientClustersError(f"Clustered covariance needs at least 2 clusters, got {n_clusters}")
        scores = _indicator(codes, n_clusters).T @ (X * residuals[:, None])
        meat = scores.T @ scores
        k_eff = k + absorbed_in_cov
        if n - k_eff <= 0:
            raise SpecificationError(f"Not enough observations for CR1: n={n}, K={k_eff}")
        factor = (n_clusters / (n_clusters - 1)) * ((n - 1) / (n - k_eff))
        cov = factor * bread @ meat @ bread
        df_inference = float(n_clusters - 1)
    elif cov_type == 'hc1':
        weighted = X * residuals[:, None]
        cov = (n / df_resid) * bread @ (weighted.T @ weighted) @ bread
        df_inference = float(df_resid)
    else:
        s2 = float(residuals @ residuals) / df_resid
        cov = s2 * bread
        df_inference = float(df_resid)
    cov = (cov + cov.T) / 2
    if inference == 'normal':
        df_inference = math.inf

    std_errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    t_stats = _safe_t(params, std_errors)
    p_values = np.clip(_two_sided_p(t_stats, df_inference, inference), 0.0, 1.0)

    centered = y - y.mean()
    tss = float(centered @ centered)
    r_squared = 1.0 - float(residuals @ residuals) / tss if tss > 0 else math.nan

    slope_idx = [i for i, name in enumerate(names) if name != 'const']
    f_statistic, f_pvalue = math.nan, math.nan
    if slope_idx:
        b = params[slope_idx]
        V = cov[np.ix_(slope_idx, slope_idx)]
        try:
            if np.all(np.diag(V) > 0):
                q = len(slope_idx)
                f_statistic = float(b @ np.linalg.solve(V, b)) / q
                if inference == 'normal':
                    f_pvalue = float(stats.chi2.sf(f_statistic * q, q))
                else:
                    f_pvalue = float(stats.f.sf(f_statistic, q, df_inference))
        except np.linalg.LinAlgError:
            logger.debug('Overall F statistic undefined: singular covariance block')

    return FitResult(
        names=tuple(names), params=params, cov=cov, std_errors=std_errors, t_stats=t_stats,
        p_values=p_values, n_obs=n, n_entities=n_entities, n_clusters=n_clusters,
        r_squared=r_squared, f_statistic=f_statistic, f_pvalue=f_pvalue, df_resid=df_resid,
        df_inference=df_inference, cov_type=cov_type, inference=inference,
        absorbed=dict(absorbed), residuals=residuals, fitted=fitted, outcome=outcome,
    )


def _nested_in_clusters(ids: Optional[np.ndarray], clusters: Optional[np.ndarray]) -> bool:
    if ids is None or clusters is None:
        return False
    frame = pd.DataFrame({'ids': np.asarray(ids).astype(str), 'clusters': np.asarray(clusters).astype(str)})
    return bool((frame.groupby('ids')['clusters'].nunique() <= 1).all())


def _absorbed_in_cov(design: DesignMatrix, cov_type: str) -> int:
    """Absorbed parameters counted in the CR1 small-sample factor (FE nested in clusters excluded)"""
    if cov_type != 'cluster':
        return int(sum(design.absorbed.values()))
    total = 0
    for dim, count in design.absorbed.items():
        ids = design.entity_ids if dim == 'entity' else design.time_ids
        if not _nested_in_clusters(ids, design.clusters):
            total += count
    return total


def _prepare(design: DesignMatrix, tol: float, max_iter: int) -> DesignMatrix:
    if design.fe_dims and not design.demeaned:
        return within_transform(design, tol=tol, max_iter=max_iter)
    return design


def _n_entities(design: DesignMatrix) -> Optional[int]:
    if design.entity_ids is None:
        return None
    return int(len(np.unique(np.asarray(design.entity_ids))))


def fit_ols(design: DesignMatrix, cov_type: str = 'cluster', inference: str = 't',
            tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> FitResult:
    """
    OLS with absorbed fixed effects and robust covariance

    Args:
        design: Design matrix; fixed effects in design.fe_dims are absorbed first
        cov_type: 'cluster' (CR1, factor G/(G-1)*(N-1)/(N-K)), 'hc1' or 'unadjusted'
        inference: 't' (t(G-1) when clustered, t(N-K) otherwise) or 'normal'

    Raises:
        RankDeficiencyError: dependent columns after absorption
        InsufficientClustersError: fewer than two clusters
    """
    prepared = _prepare(design, tol, max_iter)
    return _fit_arrays(
        prepared.y, prepared.X, prepared.names,
        clusters=prepared.clusters, cov_type=cov_type, inference=inference,
        absorbed=prepared.absorbed, absorbed_in_cov=_absorbed_in_cov(prepared, cov_type),
        n_entities=_n_entities(design), outcome=design.outcome,
    )


def _restrict(fit: FitResult, names: Sequence[str]) -> FitResult:
    idx = [fit.index(name) for name in names]
    return replace(
        fit, names=tuple(names), params=fit.params[idx], cov=fit.cov[np.ix_(idx, idx)],
        std_errors=fit.std_errors[idx], t_stats=fit.t_stats[idx], p_values=fit.p_values[idx],
    )


def fit_ols_dummies(design: DesignMatrix, cov_type: str = 'cluster', inference: str = 't') -> FitResult:
    """
    Dummy-variable OLS: fixed effects enter as explicit indicator columns

    Oracle path for the absorption equivalence; returns only the design's own
    coefficients. The small-sample factor counts every dummy column.
    """
    blocks = [design.X]
    names = list(design.names)
    for position, (dim, codes, n_groups) in enumerate(design.fe_groups()):
        dummies = _indicator(codes, n_groups).toarray()
        start = 1 if position > 0 else 0
        blocks.append(dummies[:, start:])
        names.extend(f"__{dim}_{g}" for g in range(start, n_groups))
    X = np.column_stack(blocks)
    fit = _fit_arrays(
        design.y, X, names, clusters=design.clusters, cov_type=cov_type, inference=inference,
        absorbed={}, absorbed_in_cov=0, n_entities=_n_entities(design), outcome=design.outcome,
    )
    return _restrict(fit, design.names)


@dataclass(frozen=True)
class WaldTest:
    names: Tuple[str, ...]
    statistic: float
    p_value: float
    dof: int
    form: str
    chi2_statistic: float
    chi2_p_value: float
    f_statistic: float
    f_p_value: float
    df_denom: float

    def to_dict(self) -> Dict:
        return {
            'names': list(self.names), 'statistic': _clean(self.statistic),
            'p_value': _clean(self.p_value), 'dof': self.dof, 'form': self.form,
            'chi2_statistic': _clean(self.chi2_statistic), 'chi2_p_value': _clean(self.chi2_p_value),
            'f_statistic': _clean(self.f_statistic), 'f_p_value': _clean(self.f_p_value),
            'df_denom': _clean(self.df_denom),
        }


def wald_joint(fit: FitResult, coefficient_names: Sequence[str], form: str = 'F') -> WaldTest:
    """
    Joint test that the named coefficients are all zero

    W = b' V^-1 b on the restricted subvector. Both the chi2(q) and the
    F(q, G-1) forms are computed; `form` selects the headline statistic.
    """
    if form not in ('F', 'chi2'):
        raise WaldTestError(f"Unknown Wald form {form!r}")
    missing = [name for name in coefficient_names if name not in fit.names]
    if missing or not coefficient_names:
        raise WaldTestError(f"Coefficients not in fit: {missing}", {'missing': missing})
    idx = [fit.index(name) for name in coefficient_names]
    b = fit.params[idx]
    V = fit.cov[np.ix_(idx, idx)]
    eigenvalues = np.linalg.eigvalsh(V)
    if eigenvalues.max() <= 0 or eigenvalues.min() <= 1e-14 * eigenvalues.max():
        raise WaldTestError('Singular covariance block for joint test',
                            {'names': list(coefficient_names)})
    q = len(idx)
    W = float(b @ np.linalg.solve(V, b))
    chi2_p = float(stats.chi2.sf(W, q))
    df_denom = fit.df_inference
    f_stat = W / q
    f_p = chi2_p if not np.isfinite(df_denom) else float(stats.f.sf(f_stat, q, df_denom))
    statistic, p_value = (f_stat, f_p) if form == 'F' else (W, chi2_p)
    return WaldTest(tuple(coefficient_names), statistic, p_value, q, form, W, chi2_p, f_stat, f_p, df_denom)


def fit_2sls(design: DesignMatrix, endogenous: str, instrument: str, cov_type: str = 'cluster',
             inference: str = 't', tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER) -> FitResult:
    """
    Just-identified two-stage least squares

    Stage 1 regresses the endogenous column on the instrument and the shared
    exogenous columns; stage 2 uses the fitted values. The second-stage
    covariance uses structural residuals y - [x, W]b. The first-stage F on the
    excluded instrument is attached with a weak-instrument flag (F < 10).
    """
    if endogenous == instrument:
        raise SpecificationError(f"Column {endogenous!r} cannot instrument itself",
                                 {'endogenous': endogenous, 'instrument': instrument})
    prepared = _prepare(design, tol, max_iter)
    for name in (endogenous, instrument):
        prepared.index(name)
    exog = [name for name in prepared.names if name not in (endogenous, instrument)]
    exog_X = prepared.X[:, [prepared.index(name) for name in exog]] if exog else np.empty((prepared.n_obs, 0))
    absorbed_in_cov = _absorbed_in_cov(prepared, cov_type)
    common = dict(clusters=prepared.clusters, cov_type=cov_type, inference=inference,
                  absorbed=prepared.absorbed, absorbed_in_cov=absorbed_in_cov,
                  n_entities=_n_entities(design))

    first = _fit_arrays(
        prepared.column(endogenous), np.column_stack([prepared.column(instrument), exog_X]),
        [instrument] + exog, outcome=endogenous, **common,
    )
    first_f = wald_joint(first, [instrument], form='F').f_statistic \
        if first.std_error(instrument) > 0 else math.inf

    second_names = [name for name in prepared.names if name != instrument]
    projected = np.column_stack([
        first.fitted if name == endogenous else prepared.column(name) for name in second_names
    ])
    structural = np.column_stack([prepared.column(name) for name in second_names])
    second = _fit_arrays(prepared.y, projected, second_names, outcome=design.outcome,
                         X_structural=structural, **common)
    if first_f < WEAK_INSTRUMENT_F:
        logger.warning(f"Weak instrument: first-stage F = {first_f:.2f} < {WEAK_INSTRUMENT_F}")
    return replace(second, first_stage=first, first_stage_f=float(first_f),
                   instrument=instrument, endogenous=endogenous)


def compute_vif(design: DesignMatrix, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER) -> Dict[str, float]:
    """
    Variance inflation factors 1/(1-R^2_j) from auxiliary regressions

    Auxiliary regressions include an intercept unless fixed effects were
    absorbed. Perfect collinearity is reported as math.inf.
    """
    prepared = _prepare(design, tol, max_iter)
    targets = [name for name in prepared.names if name != 'const']
    if len(targets) < 2:
        raise SpecificationError('VIF needs at least two regressors')
    add_intercept = not prepared.absorbed
    vif = {}
    for name in targets:
        x = prepared.column(name)
        others = [prepared.column(other) for other in targets if other != name]
        if add_intercept:
            others.append(np.ones(prepared.n_obs))
        Z = np.column_stack(others)
        coef, *_ = np.linalg.lstsq(Z, x, rcond=None)
        resid = x - Z @ coef
        centered = x - x.mean()
        tss = float(centered @ centered)
        if tss <= 0:
            vif[name] = math.inf
            continue
        unexplained = float(resid @ resid) / tss
        vif[name] = math.inf if unexplained <= 1e-12 else 1.0 / unexplained
    return vif
