"""
Observation weights for each experiment arm.

UW uses unit weights, TW inverts a known intensity (exact covariates when the
data carry them), EW fits the intensity model first and inverts the estimate.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from loguru import logger

from infpca.core.baseline import BaselineKind
from infpca.core.intensity import (
    CovariateMap,
    IntensityModel,
    fit_intensity,
    mean_weights,
    product_pair_weights,
)
from infpca.io.dataset import LongitudinalDataset
from infpca.models.config import ExperimentArm


@dataclass(frozen=True)
class ArmWeights:
    arm: ExperimentArm
    mean: List[np.ndarray]
    pairs: List[np.ndarray]
    model: Optional[IntensityModel] = None


def create_weights(
    arm: ExperimentArm,
    data: LongitudinalDataset,
    true_model: Optional[IntensityModel] = None,
    family: BaselineKind = BaselineKind.LINEAR_SHIFT,
    covariate_map: Optional[CovariateMap] = None,
    truncate_quantile: Optional[float] = None,
    tol: float = 1e-3,
) -> ArmWeights:
    """
    Build mean and pair weights for one arm.

    Args:
        arm: UW, TW or EW
        data: panel to weight
        true_model: generating intensity, required by TW
        family: baseline family fitted by EW
        covariate_map: g used by EW
        truncate_quantile: optional weight cap
        tol: intensity optimizer tolerance

    Raises:
        ValueError: TW without a true model, or an unsupported arm
    """
    if arm == ExperimentArm.UW:
        return _create_unit(data)
    elif arm == ExperimentArm.TW:
        return _create_true(data, true_model, truncate_quantile)
    elif arm == ExperimentArm.EW:
        return _create_estimated(data, family, covariate_map, truncate_quantile, tol)
    else:
        raise ValueError(f"Unsupported experiment arm: {arm}")


def _create_unit(data: LongitudinalDataset) -> ArmWeights:
    weights = [np.ones(s.num_observations) for s in data.subjects]
    return ArmWeights(ExperimentArm.UW, weights, product_pair_weights(weights))


def _create_true(
    data: LongitudinalDataset,
    true_model: Optional[IntensityModel],
    truncate_quantile: Optional[float],
) -> ArmWeights:
    if true_model is None:
        raise ValueError("The TW arm needs the true intensity parameters")
    weights = mean_weights(true_model, data, exact_covariates=True, truncate_quantile=truncate_quantile)
    return ArmWeights(ExperimentArm.TW, weights, product_pair_weights(weights), true_model)


def _create_estimated(
    data: LongitudinalDataset,
    family: BaselineKind,
    covariate_map: Optional[CovariateMap],
    truncate_quantile: Optional[float],
    tol: float,
) -> ArmWeights:
    model = fit_intensity(data, family=family, covariate_map=covariate_map, tol=tol)
    weights = mean_weights(model, data, exact_covariates=True, truncate_quantile=truncate_quantile)
    logger.debug(f"EW arm: beta_hat={model.beta}")
    return ArmWeights(ExperimentArm.EW, weights, product_pair_weights(weights), model)


def get_arm_display_name(arm: ExperimentArm) -> str:
    display_names = {
        ExperimentArm.UW: "Unweighted",
        ExperimentArm.TW: "True intensity weights",
        ExperimentArm.EW: "Estimated intensity weights",
    }
    return display_names.get(arm, "Unknown arm")
