#!/usr/bin/env python3
"""
Inference Permutation
Fisher randomization inference for the DID coefficient (cross-entity
permutation of the pre-determined exposure) and the cross-observation placebo
shuffle for the interaction fixed-effects models.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .causal_designs import (
    DidSpec, InteractionSpec, build_did_design, did_sample, fit_did, interaction_design_from_sample,
    interaction_sample,
)
from .estimator_engine import (
    DEFAULT_MAX_ITER, DEFAULT_TOL, DesignMatrix, RANK_TOLERANCE, demean_columns, group_codes,
)
from .exceptions import ConvergenceError, PermutationError, RankDeficiencyError
from .panel_core import PanelDataset

logger = logging.getLogger(__name__)

CROSS_ENTITY = 'cross-entity'
CROSS_OBSERVATION = 'cross-observation'
MAX_EXHAUSTIVE_ENTITIES = 8
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class PermutationReport:
    observed_coefficient: float
    placebo_coefficients: Tuple[float, ...]
    p_two_sided: float
    B: int
    seed: int
    permutation_scheme: str
    coefficient: str
    n_extreme: int
    requested: int
    failures: Tuple[Tuple[int, str], ...] = ()
    add_one: bool = False
    exhaustive: bool = False

    @property
    def flagged(self) -> bool:
        return bool(self.failures)

    def to_dict(self, include_placebos: bool = True) -> Dict:
        out = {
            'coefficient': self.coefficient,
            'observed_coefficient': self.observed_coefficient,
            'p_two_sided': self.p_two_sided,
            'B': self.B,
            'requested': self.requested,
            'n_extreme': self.n_extreme,
            'seed': self.seed,
            'permutation_scheme': self.permutation_scheme,
            'p_convention': '(count+1)/(B+1)' if self.add_one else 'count/B',
            'exhaustive': self.exhaustive,
            'flagged': self.flagged,
            'failures': [{'draw': draw, 'error': message} for draw, message in self.failures],
        }
        if include_placebos:
            out['placebo_coefficients'] = list(self.placebo_coefficients)
        return out

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'draw': np.arange(1, len(self.placebo_coefficients) + 1),
            'placebo_coefficient': np.asarray(self.placebo_coefficients, dtype=float),
        })


def permutation_p_value(observed: float, placebos: Sequence[float], add_one: bool = False) -> Tuple[float, int]:
    """
    Two-sided permutation p-value

    count = #{|placebo| >= |observed|}; ties count as extreme. Returns
    (count/B, count), or ((count+1)/(B+1), count) with add_one.
    """
    placebos = np.asarray(placebos, dtype=float)
    if placebos.size == 0:
        raise PermutationError('Permutation p-value needs at least one placebo draw')
    threshold = abs(observed) * (1.0 - TIE_TOLERANCE)
    count = int(np.sum(np.abs(placebos) >= threshold))
    if add_one:
        return (count + 1) / (placebos.size + 1), count
    return count / placebos.size, count


class PartialledRegression:
    """
    OLS coefficients for a few varying columns once the outcome and the fixed
    columns have been demeaned and the fixed columns partialled out

    Only columns that change between draws are demeaned per draw.
    """

    def __init__(self, design: DesignMatrix, fixed_names: Sequence[str],
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        self.groups = [(codes, n_groups) for _, codes, n_groups in design.fe_groups()]
        self.tol = tol
        self.max_iter = max_iter
        fixed = np.column_stack([design.column(name) for name in fixed_names]) if fixed_names \
            else np.empty((design.n_obs, 0))
        stacked, _ = demean_columns(np.column_stack([design.y, fixed]), self.groups, tol, max_iter)
        y, fixed = stacked[:, 0], stacked[:, 1:]
        if fixed.shape[1]:
            Q, R = linalg.qr(fixed, mode='economic')
            diag = np.abs(np.diag(R))
            if diag.size and diag.min() <= RANK_TOLERANCE * diag.max():
                raise RankDeficiencyError(list(fixed_names), int(np.sum(diag > RANK_TOLERANCE * diag.max())),
                                          len(fixed_names))
            self.Q = Q
        else:
            self.Q = np.empty((design.n_obs, 0))
        self.y = y - self.Q @ (self.Q.T @ y)

    def _residualize(self, M: np.ndarray) -> np.ndarray:
        return M - self.Q @ (self.Q.T @ M)

    def coefficients(self, varying: np.ndarray) -> np.ndarray:
        varying = np.asarray(varying, dtype=float).reshape(len(self.y), -1)
        demeaned, _ = demean_columns(varying, self.groups, self.tol, self.max_iter)
        X = self._residualize(demeaned)
        singular_values = linalg.svd(X, compute_uv=False)
        if singular_values.max() <= 0 or singular_values.min() <= RANK_TOLERANCE * singular_values.max():
            raise RankDeficiencyError([f"varying[{j}]" for j in range(X.shape[1])],
                                      int(np.sum(singular_values > RANK_TOLERANCE * singular_values.max())),
                                      X.shape[1])
        coef, *_ = linalg.lstsq(X, self.y)
        return coef


def _run_draws(draw: Callable[[int], float], indices: Sequence[int], threads: int) -> Tuple[List[float], List[Tuple[int, str]]]:
    """Evaluate draws (in parallel) and reduce in index order"""

    def safe(index: int):
        try:
            return index, draw(index), None
        except (RankDeficiencyError, ConvergenceError, np.linalg.LinAlgError) as e:
            return index, None, str(e)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            outcomes = list(executor.map(safe, indices))
    else:
        outcomes = [safe(index) for index in indices]
    outcomes.sort(key=lambda item: item[0])
    values = [value for _, value, error in outcomes if error is None]
    failures = [(index, error) for index, _, error in outcomes if error is not None]
    for index, error in failures:
        logger.warning(f"Placebo draw {index} failed: {error}")
    return values, failures


def _report(observed: float, values: List[float], failures: List[Tuple[int, str]], requested: int,
            seed: int, scheme: str, coefficient: str, add_one: bool, exhaustive: bool) -> PermutationReport:
    if not values:
        raise PermutationError(f"All {requested} placebo refits failed", {'failures': failures[:10]})
    p, count = permutation_p_value(observed, values, add_one)
    logger.info(f"Permutation test on {coefficient}: observed {observed:.4f}, "
                f"{count} of {len(values)} at least as extreme, p = {p:.4f}")
    return PermutationReport(
        observed_coefficient=float(observed), placebo_coefficients=tuple(float(v) for v in values),
        p_two_sided=float(p), B=len(values), seed=int(seed), permutation_scheme=scheme,
        coefficient=coefficient, n_extreme=count, requested=requested,
        failures=tuple(failures), add_one=add_one, exhaustive=exhaustive,
    )


def randomization_inference(panel: PanelDataset, spec: DidSpec = DidSpec(), B: int = 500,
                            seed: int = 0, threads: int = 1, add_one: bool = False,
                            exhaustive: bool = False) -> PermutationReport:
    """
    Permute the pre-determined treatment across entities and refit the DID

    Each entity keeps its permuted value in all its years. Draw b (1..B) uses
    numpy.random.default_rng(seed + b). With exhaustive=True every permutation
    of the entities is enumerated instead (B = n!, small panels only).
    """
    if not exhaustive and B < 1:
        raise PermutationError(f"Number of permutations must be positive, got {B}")
    fit_did(panel, spec)
    design = build_did_design(panel, spec)
    term = spec.treatment_term
    fixed = [name for name in design.names if name != term]
    regression = PartialledRegression(design, fixed)

    sample = did_sample(panel, spec)
    codes, n_entities = group_codes(design.entity_ids)
    entity_treatment = np.full(n_entities, np.nan)
    entity_treatment[codes] = sample[spec.treatment].to_numpy(dtype=float)
    post = np.isin(design.time_ids, spec.post_years).astype(float)

    def coefficient(order: np.ndarray) -> float:
        return float(regression.coefficients(entity_treatment[order][codes] * post)[0])

    observed = coefficient(np.arange(n_entities))
    if exhaustive:
        if n_entities > MAX_EXHAUSTIVE_ENTITIES:
            raise PermutationError(f"Exhaustive enumeration limited to {MAX_EXHAUSTIVE_ENTITIES} entities, "
                                   f"got {n_entities}")
        orders = [np.array(order) for order in itertools.permutations(range(n_entities))]
        values, failures = _run_draws(lambda i: coefficient(orders[i - 1]), range(1, len(orders) + 1), threads)
        requested = len(orders)
    else:
        def draw(b: int) -> float:
            return coefficient(np.random.default_rng(seed + b).permutation(n_entities))
        values, failures = _run_draws(draw, range(1, B + 1), threads)
        requested = B
    return _report(observed, values, failures, requested, seed, CROSS_ENTITY, term, add_one, exhaustive)


def placebo_interaction_test(panel: PanelDataset, moderator: str = 'education',
                             spec: InteractionSpec = InteractionSpec(), B: int = 500, seed: int = 0,
                             threads: int = 1, add_one: bool = False) -> PermutationReport:
    """
    Shuffle exposure across all entity-year observations, rebuild the
    interaction and refit; the placebo distribution is the interaction term's
    """
    if B < 1:
        raise PermutationError(f"Number of permutations must be positive, got {B}")
    term = spec.interaction_term(moderator)
    if term is None:
        raise PermutationError('Placebo interaction test needs a moderator')
    sample = interaction_sample(panel, spec)
    design = interaction_design_from_sample(sample, spec, moderator)
    fixed = [name for name in design.names if name not in (spec.exposure, term)]
    regression = PartialledRegression(design, fixed)
    g = design.column(spec.exposure)
    m = sample[spec.moderator_column(moderator)].to_numpy(dtype=float)

    def coefficient(values: np.ndarray) -> float:
        return float(regression.coefficients(np.column_stack([values, values * m]))[1])

    observed = coefficient(g)

    def draw(b: int) -> float:
        return coefficient(g[np.random.default_rng(seed + b).permutation(len(g))])

    values, failures = _run_draws(draw, range(1, B + 1), threads)
    return _report(observed, values, failures, B, seed, CROSS_OBSERVATION, term, add_one, False)


def tail_summary(report: PermutationReport) -> Dict[str, float]:
    """Placebo distribution quantiles and where the observed value falls"""
    placebos = np.asarray(report.placebo_coefficients)
    return {
        'mean': float(placebos.mean()),
        'sd': float(placebos.std(ddof=1)) if placebos.size > 1 else math.nan,
        'q025': float(np.quantile(placebos, 0.025)),
        'q975': float(np.quantile(placebos, 0.975)),
        'share_below_observed': float(np.mean(placebos <= report.observed_coefficient)),
    }
