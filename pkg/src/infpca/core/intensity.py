"""
Proportional intensity model for informative observation times.

The visit process of subject i has intensity
lambda{t | O_i(t)} = lambda_0(t; theta) exp[g{Z_i(t)}^T beta], with a parametric
baseline. Parameters are estimated by maximizing the full counting-process
likelihood; the compensator integral runs over a composite Gauss grid built on
each subject's covariate record times, with Z taken by last observation
carried forward. The fitted model yields the inverse-intensity weights used
by the mean and covariance smoothers.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr
from scipy.optimize import BFGS, minimize

from infpca.core.baseline import BaselineFamily, BaselineKind, create_baseline
from infpca.core.bspline import composite_gauss_nodes
from infpca.core.errors import ConvergenceError, DataValidationError, DomainError, WeightError
from infpca.io.dataset import LongitudinalDataset, LongitudinalSubject

# exp() overflow guard for trial points far from the optimum
_MAX_LINEAR_PREDICTOR = 700.0


class CovariateMapKind(Enum):
    """Pre-specified transform g applied to Z(t)."""

    IDENTITY = "identity"
    NONE = "none"  # no covariate effect, beta is empty


class CovariateMap(BaseModel):
    """g(z) = scale * z (identity) or the empty vector (none)."""

    kind: CovariateMapKind = CovariateMapKind.IDENTITY
    scale: float = Field(default=1.0, gt=0)

    def output_dim(self, covariate_dim: int) -> int:
        return covariate_dim if self.kind == CovariateMapKind.IDENTITY else 0

    def apply(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if self.kind == CovariateMapKind.NONE:
            return np.zeros((z.shape[0], 0))
        return self.scale * z


class ConvergenceInfo(BaseModel):
    """Optimizer outcome stored alongside the fitted parameters."""

    converged: bool
    method: str
    iterations: int
    objective: float
    gradient_norm: float
    message: str = ""


class IntensityModel(BaseModel):
    """Baseline family, theta, beta and the covariate map g."""

    model_config = ConfigDict(frozen=True)

    family: BaselineKind
    theta: List[float]
    beta: List[float] = Field(default_factory=list)
    covariate_map: CovariateMap = Field(default_factory=CovariateMap)
    fitted: bool = False
    information: Optional[List[List[float]]] = None
    convergence: Optional[ConvergenceInfo] = None

    _baseline: BaselineFamily = PrivateAttr()

    def model_post_init(self, __context) -> None:
        self._baseline = create_baseline(self.family)
        if len(self.theta) != self._baseline.num_params:
            raise ValueError(
                f"{self.family.value} baseline takes {self._baseline.num_params} parameters, "
                f"got {len(self.theta)}"
            )

    @property
    def baseline(self) -> BaselineFamily:
        return self._baseline

    @property
    def theta_array(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=float)

    @property
    def beta_array(self) -> np.ndarray:
        return np.asarray(self.beta, dtype=float)

    @property
    def params_array(self) -> np.ndarray:
        """theta (+) beta."""
        return np.concatenate([self.theta_array, self.beta_array])

    @property
    def parameter_names(self) -> List[str]:
        names = list(self._baseline.metadata.parameter_names)
        return names + [f"beta_{k}" for k in range(len(self.beta))]

    def standard_errors(self) -> Optional[np.ndarray]:
        """Model-based standard errors from the observed information."""
        if self.information is None:
            return None
        info = np.asarray(self.information, dtype=float)
        try:
            covariance = np.linalg.inv(info)
        except np.linalg.LinAlgError:
            return None
        return np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    def linear_predictor(self, covariates: np.ndarray) -> np.ndarray:
        g = self.covariate_map.apply(covariates)
        if g.shape[1] != len(self.beta):
            raise ValueError(
                f"beta has {len(self.beta)} entries but g(Z) has {g.shape[1]} columns"
            )
        return g @ self.beta_array

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def from_json(cls, payload: str) -> "IntensityModel":
        return cls.model_validate_json(payload)


@dataclass(frozen=True)
class LikelihoodDesign:
    """Event rows and compensator quadrature rows, flattened over subjects."""

    event_times: np.ndarray
    event_g: np.ndarray
    node_times: np.ndarray
    node_weights: np.ndarray
    node_g: np.ndarray
    num_subjects: int

    @property
    def num_events(self) -> int:
        return int(self.event_times.size)


def _subject_quadrature(
    subject: LongitudinalSubject, min_nodes: int, nodes_per_interval: int
) -> Tuple[np.ndarray, np.ndarray]:
    if subject.tau <= 0:
        return np.zeros(0), np.zeros(0)
    cov_times = subject.covariate_times_array
    inner = cov_times[(cov_times > 0) & (cov_times < subject.tau)]
    edges = np.unique(np.concatenate([[0.0], inner, [subject.tau]]))
    num_intervals = edges.size - 1
    pieces = int(np.ceil(min_nodes / (num_intervals * nodes_per_interval)))
    if pieces > 1:
        refined = [np.linspace(a, b, pieces + 1)[:-1] for a, b in zip(edges[:-1], edges[1:])]
        edges = np.concatenate(refined + [[subject.tau]])
    return composite_gauss_nodes(edges, nodes_per_interval)


def build_likelihood_design(
    data: LongitudinalDataset,
    covariate_map: CovariateMap,
    min_nodes: int = 64,
    nodes_per_interval: int = 2,
    exact_covariates: bool = True,
) -> LikelihoodDesign:
    """
    Precompute event and quadrature rows for the likelihood.

    The compensator grid breaks at every covariate record time (where the
    carried-forward covariate jumps) and is refined to at least ``min_nodes``
    nodes per subject. With ``exact_covariates`` the event rows use covariates
    measured at the visits when the subject carries them; otherwise, and for
    subjects without them, the carried-forward record.

    Raises:
        DataValidationError: a subject has no covariate record at t = 0
    """
    dim = covariate_map.output_dim(data.covariate_dim)
    if dim:
        missing = [
            s.subject_id for s in data.subjects
            if s.tau > 0 and (not s.covariate_times or s.covariate_times[0] > 0)
        ]
        if missing:
            raise DataValidationError(
                f"{len(missing)} subject(s) have no covariate record at t = 0, which the "
                f"compensator integral needs: {missing[:10]}"
            )

    def lookup(subject: LongitudinalSubject, t: np.ndarray) -> np.ndarray:
        if dim == 0:
            return np.zeros((t.size, 0))
        return covariate_map.apply(subject.covariate_at(t))

    event_times, event_g, node_times, node_weights, node_g = [], [], [], [], []
    for subject in data.subjects:
        if subject.num_observations:
            event_times.append(subject.times_array)
            if exact_covariates and dim and subject.outcome_covariates is not None:
                event_g.append(covariate_map.apply(subject.observation_covariates(exact=True)))
            else:
                event_g.append(lookup(subject, subject.times_array))
        nodes, weights = _subject_quadrature(subject, min_nodes, nodes_per_interval)
        if nodes.size:
            node_times.append(nodes)
            node_weights.append(weights)
            node_g.append(lookup(subject, nodes))

    def stack(parts: list, cols: Optional[int] = None) -> np.ndarray:
        if parts:
            return np.concatenate(parts) if cols is None else np.vstack(parts)
        return np.zeros(0) if cols is None else np.zeros((0, cols))

    return LikelihoodDesign(
        event_times=stack(event_times),
        event_g=stack(event_g, dim),
        node_times=stack(node_times),
        node_weights=stack(node_weights),
        node_g=stack(node_g, dim),
        num_subjects=data.num_subjects,
    )


def _split(params: np.ndarray, baseline: BaselineFamily) -> Tuple[np.ndarray, np.ndarray]:
    params = np.asarray(params, dtype=float)
    return params[: baseline.num_params], params[baseline.num_params :]


def _baseline_values(baseline: BaselineFamily, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
    values = baseline.evaluate(t, theta)
    if values.size and (not np.all(np.isfinite(values)) or np.any(values <= 0)):
        raise DomainError(
            f"Baseline {baseline.kind.value} is not strictly positive on the grid for theta={list(theta)}"
        )
    return values


def _likelihood_terms(
    params: np.ndarray, design: LikelihoodDesign, baseline: BaselineFamily, clip: bool = False
):
    theta, beta = _split(params, baseline)
    if beta.size != design.event_g.shape[1]:
        raise ValueError(
            f"Parameter vector has {beta.size} regression coefficients, "
            f"design has {design.event_g.shape[1]} covariate columns"
        )
    lam_events = _baseline_values(baseline, design.event_times, theta)
    lam_nodes = _baseline_values(baseline, design.node_times, theta)
    eta_events = design.event_g @ beta
    eta_nodes = design.node_g @ beta
    if clip:
        eta_nodes = np.minimum(eta_nodes, _MAX_LINEAR_PREDICTOR)
    compensator = design.node_weights * lam_nodes * np.exp(eta_nodes)
    return theta, lam_events, eta_events, compensator


def _nll_and_grad(
    params: np.ndarray, design: LikelihoodDesign, baseline: BaselineFamily, clip: bool = False
) -> Tuple[float, np.ndarray]:
    theta, lam_events, eta_events, compensator = _likelihood_terms(params, design, baseline, clip)
    value = -(np.sum(np.log(lam_events)) + np.sum(eta_events)) + np.sum(compensator)

    grad_theta = -baseline.log_gradient(design.event_times, theta).sum(axis=0)
    grad_theta += compensator @ baseline.log_gradient(design.node_times, theta)
    grad_beta = -design.event_g.sum(axis=0) + compensator @ design.node_g
    return float(value), np.concatenate([grad_theta, grad_beta])


def neg_log_likelihood(
    params: np.ndarray,
    data: LongitudinalDataset | LikelihoodDesign,
    family: BaselineKind = BaselineKind.LINEAR_SHIFT,
    covariate_map: Optional[CovariateMap] = None,
) -> float:
    """
    -sum_i log L_i(theta, beta) for the proportional intensity model.

    Args:
        params: theta (+) beta in natural parameters
        data: dataset, or a design prebuilt by ``build_likelihood_design``
        family: baseline family of theta
        covariate_map: g; identity when omitted

    Returns:
        Negative log-likelihood (0 for an empty dataset)
    """
    design = _as_design(data, covariate_map)
    return _nll_and_grad(params, design, create_baseline(family))[0]


def neg_log_likelihood_grad(
    params: np.ndarray,
    data: LongitudinalDataset | LikelihoodDesign,
    family: BaselineKind = BaselineKind.LINEAR_SHIFT,
    covariate_map: Optional[CovariateMap] = None,
) -> np.ndarray:
    """Analytic gradient of ``neg_log_likelihood`` in natural parameters."""
    design = _as_design(data, covariate_map)
    return _nll_and_grad(params, design, create_baseline(family))[1]


def observed_information(
    params: np.ndarray,
    data: LongitudinalDataset | LikelihoodDesign,
    family: BaselineKind = BaselineKind.LINEAR_SHIFT,
    covariate_map: Optional[CovariateMap] = None,
) -> np.ndarray:
    """Analytic Hessian of the negative log-likelihood in natural parameters."""
    design = _as_design(data, covariate_map)
    baseline = create_baseline(family)
    theta, _, _, compensator = _likelihood_terms(params, design, baseline)
    k = baseline.num_params

    rows = np.hstack([baseline.log_gradient(design.node_times, theta), design.node_g])
    hessian = rows.T @ (compensator[:, None] * rows)
    curvature = -baseline.log_hessian_diag(design.event_times, theta).sum(axis=0)
    curvature += compensator @ baseline.log_hessian_diag(design.node_times, theta)
    hessian[np.arange(k), np.arange(k)] += curvature
    return 0.5 * (hessian + hessian.T)


def _as_design(
    data: LongitudinalDataset | LikelihoodDesign, covariate_map: Optional[CovariateMap]
) -> LikelihoodDesign:
    if isinstance(data, LikelihoodDesign):
        return data
    return build_likelihood_design(data, covariate_map or CovariateMap())


def _initial_params(
    baseline: BaselineFamily, design: LikelihoodDesign, num_beta: int
) -> np.ndarray:
    """Start at beta = 0 with the baseline matching the observed event count."""
    theta = np.asarray(baseline.metadata.default_init, dtype=float)
    exposure_shape = baseline.evaluate(design.node_times, theta) @ design.node_weights
    scale = design.num_events / exposure_shape
    if baseline.kind == BaselineKind.LOG_LINEAR:
        theta = theta + np.array([np.log(scale), 0.0])
    else:
        theta = theta * np.array([scale, 1.0])
    return np.concatenate([theta, np.zeros(num_beta)])


def _run_optimizer(
    method: str,
    phi0: np.ndarray,
    objective,
    tol: float,
    max_iter: int,
):
    if method == "BFGS":
        return minimize(
            objective, phi0, jac=True, method="BFGS",
            options={"gtol": tol, "maxiter": max_iter},
        )
    return minimize(
        objective, phi0, jac=True, hess=BFGS(), method="trust-constr",
        options={"gtol": tol, "maxiter": max_iter},
    )


def fit_intensity(
    data: LongitudinalDataset,
    family: BaselineKind = BaselineKind.LINEAR_SHIFT,
    covariate_map: Optional[CovariateMap] = None,
    init: Optional[Sequence[float]] = None,
    tol: float = 1e-3,
    max_iter: int = 500,
) -> IntensityModel:
    """
    Maximum likelihood fit of (theta, beta).

    Optimizes in the baseline's unconstrained parameterization by BFGS with a
    Wolfe line search; when that stalls, retries once with a trust-region
    quasi-Newton method from a perturbed start.

    Args:
        data: longitudinal panel (event times = outcome times)
        family: baseline family
        covariate_map: g; identity by default
        init: optional natural-parameter start theta (+) beta
        tol: bound on the gradient norm (unconstrained parameters) at the optimum
        max_iter: iteration cap per optimizer attempt

    Returns:
        Fitted IntensityModel with observed information and convergence info

    Raises:
        DataValidationError: no events in the data, or a subject without a covariate record at t = 0
        DomainError: the starting baseline is not positive on [0, tau]
        ConvergenceError: neither attempt reached the tolerance
    """
    covariate_map = covariate_map or CovariateMap()
    baseline = create_baseline(family)
    design = build_likelihood_design(data, covariate_map)
    if design.num_events == 0:
        raise DataValidationError("Cannot fit an intensity model to data without events")
    num_beta = design.event_g.shape[1]

    start = np.asarray(init, dtype=float) if init is not None else _initial_params(
        baseline, design, num_beta
    )
    if start.size != baseline.num_params + num_beta:
        raise ValueError(
            f"init needs {baseline.num_params + num_beta} entries, got {start.size}"
        )
    k = baseline.num_params
    baseline.validate(start[:k], data.tau)

    def to_phi(params: np.ndarray) -> np.ndarray:
        return np.concatenate([baseline.to_unconstrained(params[:k]), params[k:]])

    def to_params(phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        theta, jacobian = baseline.from_unconstrained(phi[:k])
        return np.concatenate([theta, phi[k:]]), np.concatenate([jacobian, np.ones(num_beta)])

    def objective(phi: np.ndarray) -> Tuple[float, np.ndarray]:
        params, jacobian = to_params(phi)
        value, grad = _nll_and_grad(params, design, baseline, clip=True)
        return value, grad * jacobian

    phi0 = to_phi(start)
    result = _run_optimizer("BFGS", phi0, objective, tol, max_iter)
    method = "BFGS"
    grad_norm = float(np.max(np.abs(objective(result.x)[1])))
    if not np.isfinite(grad_norm) or grad_norm >= tol:
        logger.warning(
            f"BFGS stopped with gradient norm {grad_norm:.3g} ({result.message}); "
            "retrying with trust-region from a perturbed start"
        )
        signs = np.where(np.arange(phi0.size) % 2 == 0, 1.0, -1.0)
        perturbed = phi0 + 0.05 * signs * (1.0 + np.abs(phi0))
        result = _run_optimizer("trust-constr", perturbed, objective, tol, max_iter)
        method = "trust-constr"
        grad_norm = float(np.max(np.abs(objective(result.x)[1])))
        if not np.isfinite(grad_norm) or grad_norm >= tol:
            last, _ = to_params(result.x)
            raise ConvergenceError(
                f"Intensity fit did not converge: gradient norm {grad_norm:.3g} >= {tol} "
                f"({result.message})",
                last_iterate=last,
            )

    params, _ = to_params(result.x)
    information = observed_information(params, design, family)
    min_eig = float(np.linalg.eigvalsh(information).min())
    if min_eig < -1e-8 * max(1.0, float(np.abs(information).max())):
        logger.warning(f"Observed information is not PSD (min eigenvalue {min_eig:.3g})")

    iterations = int(getattr(result, "nit", 0) or getattr(result, "niter", 0))
    model = IntensityModel(
        family=family,
        theta=params[:k].tolist(),
        beta=params[k:].tolist(),
        covariate_map=covariate_map,
        fitted=True,
        information=information.tolist(),
        convergence=ConvergenceInfo(
            converged=True,
            method=method,
            iterations=iterations,
            objective=float(result.fun),
            gradient_norm=grad_norm,
            message=str(result.message),
        ),
    )
    logger.info(
        f"Intensity fit converged ({method}, {iterations} iterations): "
        f"theta={model.theta}, beta={model.beta}"
    )
    return model


def intensity_at(
    model: IntensityModel,
    subject: LongitudinalSubject,
    t: float | np.ndarray,
    covariates: Optional[np.ndarray] = None,
) -> float | np.ndarray:
    """
    lambda_0(t) exp[g{Z(t)}^T beta] for one subject.

    ``covariates`` overrides the carried-forward lookup (rows aligned with t).
    """
    points = np.atleast_1d(np.asarray(t, dtype=float))
    z = subject.covariate_at(points) if covariates is None else np.atleast_2d(covariates)
    values = _baseline_values(model.baseline, points, model.theta_array) * np.exp(
        model.linear_predictor(z)
    )
    return float(values[0]) if np.ndim(t) == 0 else values


def mean_weights(
    model: IntensityModel,
    data: LongitudinalDataset,
    exact_covariates: bool = False,
    truncate_quantile: Optional[float] = None,
) -> List[np.ndarray]:
    """
    Inverse-intensity weights w_ij = 1 / lambda(t_ij), one array per subject.

    Args:
        model: fitted or explicitly parameterized intensity model
        data: panel whose outcome times receive weights
        exact_covariates: use recorded exact Z(t_ij) when available instead of LOCF
        truncate_quantile: optional cap at this quantile of all weights

    Raises:
        WeightError: a weight is nonpositive or non-finite
    """
    weights: List[np.ndarray] = []
    for subject in data.subjects:
        if subject.num_observations == 0:
            weights.append(np.zeros(0))
            continue
        z = subject.observation_covariates(exact=exact_covariates)
        with np.errstate(over="ignore", divide="ignore"):
            w = 1.0 / intensity_at(model, subject, subject.times_array, covariates=z)
        bad = ~np.isfinite(w) | (w <= 0)
        if np.any(bad):
            index = int(np.argmax(bad))
            raise WeightError(
                f"Invalid inverse-intensity weight {w[index]}",
                subject_id=subject.subject_id,
                time=float(subject.times_array[index]),
            )
        weights.append(w)

    if truncate_quantile is not None and weights:
        if not 0 < truncate_quantile <= 1:
            raise ValueError(f"truncate_quantile must lie in (0, 1], got {truncate_quantile}")
        cap = float(np.quantile(np.concatenate(weights), truncate_quantile))
        clipped = sum(int(np.sum(w > cap)) for w in weights)
        logger.info(f"Truncated {clipped} weights at the {truncate_quantile:.3f} quantile ({cap:.4g})")
        weights = [np.minimum(w, cap) for w in weights]
    return weights


def ordered_pairs(num_observations: int) -> Tuple[np.ndarray, np.ndarray]:
    """Index arrays (j, l) of all ordered pairs j != l, row-major."""
    j, l = np.nonzero(~np.eye(num_observations, dtype=bool))
    return j, l


def product_pair_weights(weights: Sequence[np.ndarray]) -> List[np.ndarray]:
    """w_ijl = w_ij * w_il over ``ordered_pairs`` for each subject."""
    pairs = []
    for w in weights:
        j, l = ordered_pairs(w.size)
        pairs.append(w[j] * w[l])
    return pairs


def pair_weights(
    model: IntensityModel,
    data: LongitudinalDataset,
    exact_covariates: bool = False,
    truncate_quantile: Optional[float] = None,
) -> List[np.ndarray]:
    """Covariance weights for every ordered within-subject pair."""
    return product_pair_weights(
        mean_weights(model, data, exact_covariates, truncate_quantile)
    )
