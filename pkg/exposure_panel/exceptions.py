#!/usr/bin/env python3
"""
Exception hierarchy shared by every exposure_panel module
"""

from typing import Dict, List, Optional


class ExposurePanelError(Exception):
    """Base class for all analysis errors"""

    error_type = 'analysis_error'

    def __init__(self, message: str, details: Optional[Dict] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_record(self) -> Dict:
        """Machine-readable error record"""
        return {
            'status': 'error',
            'error_type': self.error_type,
            'message': self.message,
            'details': self.details,
        }


class ValidationError(ExposurePanelError):
    """Configuration or specification failed validation (all violations listed)"""

    error_type = 'validation_error'

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__(
            f"{len(self.errors)} validation error(s): " + '; '.join(self.errors),
            {'errors': self.errors},
        )


class DataPreparationError(ExposurePanelError):
    error_type = 'data_preparation_error'


class UnknownCategoryError(DataPreparationError):
    error_type = 'unknown_category'


class StandardizationError(DataPreparationError):
    error_type = 'standardization_error'


class ExposureError(ExposurePanelError):
    error_type = 'exposure_error'


class SpecificationError(ExposurePanelError):
    error_type = 'specification_error'


class RankDeficiencyError(ExposurePanelError):
    """Design columns are linearly dependent after absorption"""

    error_type = 'rank_deficiency'

    def __init__(self, dependent_columns: List[str], rank: int, n_columns: int):
        self.dependent_columns = list(dependent_columns)
        super().__init__(
            f"Design matrix has rank {rank} < {n_columns}; dependent columns: "
            + ', '.join(self.dependent_columns),
            {'dependent_columns': self.dependent_columns, 'rank': rank, 'n_columns': n_columns},
        )


class ConvergenceError(ExposurePanelError):
    """Alternating projections did not converge"""

    error_type = 'convergence_error'

    def __init__(self, iterations: int, final_delta: float):
        self.iterations = iterations
        self.final_delta = final_delta
        super().__init__(
            f"Within transformation did not converge after {iterations} sweeps "
            f"(final max change {final_delta:.3e})",
            {'iterations': iterations, 'final_delta': final_delta},
        )


class InsufficientClustersError(ExposurePanelError):
    error_type = 'insufficient_clusters'


class WaldTestError(ExposurePanelError):
    error_type = 'wald_test_error'


class PermutationError(ExposurePanelError):
    error_type = 'permutation_error'


class SpatialError(ExposurePanelError):
    error_type = 'spatial_error'


class LayoutError(ExposurePanelError):
    error_type = 'layout_error'
