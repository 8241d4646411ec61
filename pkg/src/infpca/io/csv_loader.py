"""
CSV ingestion and export of longitudinal panels.

Outcome file columns: subject_id, time, value[, true_<z>...].
Covariate file columns: subject_id, time, z1[, z2, ...][, censor_time].
A sidecar ``<outcome stem>.meta.json`` carries the time unit and provenance.
Row numbers in error messages are file line numbers (header is line 1).
"""

import json
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from infpca.core.errors import DataValidationError
from infpca.io.dataset import LongitudinalDataset, LongitudinalSubject
from infpca.models.config import CovariateTransform, OutcomeTransform

OUTCOME_COLUMNS = ("subject_id", "time", "value")
CENSOR_COLUMN = "censor_time"
TRUE_PREFIX = "true_"
FLOAT_FORMAT = "%.17g"


def sidecar_path(outcome_path: Path) -> Path:
    outcome_path = Path(outcome_path)
    return outcome_path.with_name(f"{outcome_path.stem}.meta.json")


def _read(path: Path, required: Tuple[str, ...]) -> pd.DataFrame:
    frame = pd.read_csv(
        path, dtype={"subject_id": str}, na_values=["NA"], float_precision="round_trip", encoding="utf-8"
    )
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataValidationError(f"{path}: missing required column(s) {missing}")
    return frame


def _line(row_index: int) -> int:
    return row_index + 2


def _check_rows(frame: pd.DataFrame, columns: List[str], path: Path, violations: List[str]) -> None:
    for column in columns:
        numeric = pd.to_numeric(frame[column], errors="coerce")
        for pos in np.flatnonzero(~np.isfinite(numeric.to_numpy(dtype=float))):
            violations.append(f"{path.name} line {_line(frame.index[pos])}: {column} is missing or not a finite number")
    for pos in np.flatnonzero(frame["subject_id"].isna().to_numpy()):
        violations.append(f"{path.name} line {_line(frame.index[pos])}: subject_id is missing")


def _check_order(frame: pd.DataFrame, path: Path, violations: List[str]) -> None:
    last: Dict[str, Tuple[float, int]] = {}
    times = pd.to_numeric(frame["time"], errors="coerce").to_numpy(dtype=float)
    for row_index, sid, t in zip(frame.index, frame["subject_id"], times):
        if pd.isna(sid) or not np.isfinite(t):
            continue
        if sid in last and t <= last[sid][0]:
            violations.append(
                f"{path.name} line {_line(row_index)}: time {t} for subject {sid} does not increase "
                f"(previous {last[sid][0]} on line {last[sid][1]})"
            )
        last[sid] = (t, _line(row_index))


def load_csv(
    outcome_path: Path | str,
    covariate_path: Path | str,
    time_unit: Optional[str] = None,
) -> LongitudinalDataset:
    """
    Load a validated panel from outcome and covariate CSV files.

    Follow-up end tau_i is the covariate file's censor_time when present,
    otherwise the last outcome or covariate time of the subject.

    Raises:
        DataValidationError: listing every row-level violation found
    """
    outcome_path, covariate_path = Path(outcome_path), Path(covariate_path)
    outcomes = _read(outcome_path, OUTCOME_COLUMNS)
    covariates = _read(covariate_path, ("subject_id", "time"))
    z_columns = [c for c in covariates.columns if c not in ("subject_id", "time", CENSOR_COLUMN)]
    if not z_columns:
        raise DataValidationError(f"{covariate_path}: no covariate columns after subject_id and time")
    true_columns = [f"{TRUE_PREFIX}{c}" for c in z_columns if f"{TRUE_PREFIX}{c}" in outcomes.columns]

    # Subjects without covariate records keep their censor time on a row with no time
    censor_only = covariates["time"].isna() & covariates[z_columns].isna().all(axis=1)
    if CENSOR_COLUMN in covariates.columns:
        censor_only &= covariates[CENSOR_COLUMN].notna()
    else:
        censor_only[:] = False
    censor_rows = covariates[censor_only]
    covariates = covariates[~censor_only]

    violations: List[str] = []
    _check_rows(outcomes, ["time", "value"] + true_columns, outcome_path, violations)
    _check_rows(covariates, ["time"] + z_columns, covariate_path, violations)
    _check_order(outcomes, outcome_path, violations)
    _check_order(covariates, covariate_path, violations)
    for row_index in np.flatnonzero(pd.to_numeric(outcomes["time"], errors="coerce").to_numpy(dtype=float) < 0):
        violations.append(f"{outcome_path.name} line {_line(row_index)}: negative time")
    if violations:
        raise DataValidationError("Invalid longitudinal data", violations)

    out_groups = {sid: g for sid, g in outcomes.groupby("subject_id", sort=False)}
    cov_groups = {sid: g for sid, g in covariates.groupby("subject_id", sort=False)}
    censor_groups = {sid: g for sid, g in censor_rows.groupby("subject_id", sort=False)}
    order = list(
        dict.fromkeys(list(pd.concat([covariates, censor_rows]).sort_index()["subject_id"]) + list(outcomes["subject_id"]))
    )

    subjects = []
    for sid in order:
        out = out_groups.get(sid, outcomes.iloc[0:0])
        cov = cov_groups.get(sid, covariates.iloc[0:0])
        times = out["time"].to_numpy(dtype=float)
        cov_times = cov["time"].to_numpy(dtype=float)

        if times.size and (cov_times.size == 0 or cov_times[0] > times[0]):
            violations.append(
                f"{outcome_path.name} line {_line(int(out.index[0]))}: outcome at t={times[0]} for subject {sid} "
                "has no covariate record at or before it"
            )
            continue
        if cov_times.size and cov_times[0] > 0:
            violations.append(
                f"{covariate_path.name} line {_line(int(cov.index[0]))}: first covariate record for subject {sid} "
                f"is at t={cov_times[0]}; a record at t=0 is needed from the start of follow-up"
            )
            continue

        censor = None
        marked = pd.concat([cov, censor_groups.get(sid, censor_rows.iloc[0:0])])
        if CENSOR_COLUMN in marked.columns and marked[CENSOR_COLUMN].notna().any():
            censor = float(marked[CENSOR_COLUMN].dropna().iloc[0])
        last = max([*times[-1:], *cov_times[-1:]], default=0.0)
        tau = censor if censor is not None else last
        if times.size and times[-1] > tau:
            violations.append(f"Subject {sid}: outcome time {times[-1]} exceeds censor time {tau}")
            continue

        subjects.append(
            LongitudinalSubject(
                subject_id=str(sid),
                tau=tau,
                outcome_times=times.tolist(),
                outcome_values=out["value"].to_numpy(dtype=float).tolist(),
                covariate_times=cov_times.tolist(),
                covariate_values=cov[z_columns].to_numpy(dtype=float).tolist(),
                outcome_covariates=out[true_columns].to_numpy(dtype=float).tolist() if true_columns else None,
            )
        )
    if violations:
        raise DataValidationError("Invalid longitudinal data", violations)

    meta = {}
    meta_path = sidecar_path(outcome_path)
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    dataset = LongitudinalDataset(
        subjects=subjects,
        time_unit=time_unit or meta.get("time_unit", "unspecified"),
        provenance=list(meta.get("provenance", [])),
    )
    logger.info(
        f"Loaded {dataset.num_subjects} subjects, {len(outcomes)} outcome rows and "
        f"{len(covariates) + len(censor_rows)} covariate rows from {outcome_path.name}, {covariate_path.name}"
    )
    return dataset


def save_csv(
    data: LongitudinalDataset,
    outcome_path: Path | str,
    covariate_path: Path | str,
    covariate_names: Optional[List[str]] = None,
) -> Tuple[Path, Path, Path]:
    """
    Write the panel so that ``load_csv`` reproduces it exactly.

    Returns:
        (outcome CSV, covariate CSV, sidecar metadata JSON)
    """
    outcome_path, covariate_path = Path(outcome_path), Path(covariate_path)
    dim = data.covariate_dim
    names = covariate_names or [f"z{k + 1}" for k in range(dim)]
    if len(names) != dim:
        raise ValueError(f"Need {dim} covariate names, got {len(names)}")
    with_truth = bool(data.subjects) and all(
        s.outcome_covariates is not None for s in data.subjects if s.num_observations
    )

    outcome_rows: Dict[str, list] = defaultdict(list)
    covariate_rows: Dict[str, list] = defaultdict(list)
    for subject in data.subjects:
        m = subject.num_observations
        outcome_rows["subject_id"] += [subject.subject_id] * m
        outcome_rows["time"] += subject.outcome_times
        outcome_rows["value"] += subject.outcome_values
        if with_truth:
            exact = np.asarray(subject.outcome_covariates or [], dtype=float).reshape(m, dim)
            for k, name in enumerate(names):
                outcome_rows[f"{TRUE_PREFIX}{name}"] += exact[:, k].tolist()

        c = len(subject.covariate_times)
        covariate_rows["subject_id"] += [subject.subject_id] * max(c, 1)
        covariate_rows["time"] += subject.covariate_times if c else [np.nan]
        values = subject.covariate_values_array
        for k, name in enumerate(names):
            covariate_rows[name] += values[:, k].tolist() if c else [np.nan]
        covariate_rows[CENSOR_COLUMN] += [subject.tau] + [np.nan] * (max(c, 1) - 1)

    outcome_columns = list(OUTCOME_COLUMNS) + ([f"{TRUE_PREFIX}{n}" for n in names] if with_truth else [])
    covariate_columns = ["subject_id", "time", *names, CENSOR_COLUMN]
    outcome_path.parent.mkdir(parents=True, exist_ok=True)
    covariate_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(outcome_rows, columns=outcome_columns).to_csv(
        outcome_path, index=False, float_format=FLOAT_FORMAT, na_rep="NA"
    )
    pd.DataFrame(covariate_rows, columns=covariate_columns).to_csv(
        covariate_path, index=False, float_format=FLOAT_FORMAT, na_rep="NA"
    )
    meta_path = sidecar_path(outcome_path)
    meta_path.write_text(
        json.dumps({"time_unit": data.time_unit, "provenance": data.provenance}, indent=2, sort_keys=True),
        encoding="utf-8",
    )
    return outcome_path, covariate_path, meta_path


def apply_transform(
    data: LongitudinalDataset,
    outcome: OutcomeTransform = OutcomeTransform.IDENTITY,
    covariate: CovariateTransform = CovariateTransform.IDENTITY,
) -> LongitudinalDataset:
    """
    Transformed copy of the panel (sqrt outcomes, log covariates) with provenance recorded.

    Raises:
        DataValidationError: values outside the transform's domain, naming subject and time
    """
    if outcome == OutcomeTransform.IDENTITY and covariate == CovariateTransform.IDENTITY:
        return data

    violations: List[str] = []
    subjects = []
    for s in data.subjects:
        values = s.values_array
        cov_values = s.covariate_values_array
        exact = None if s.outcome_covariates is None else np.asarray(s.outcome_covariates, dtype=float)

        if outcome == OutcomeTransform.SQRT:
            for j in np.flatnonzero(values < 0):
                violations.append(f"Subject {s.subject_id}, t={s.times_array[j]}: sqrt of negative outcome {values[j]}")
            values = np.sqrt(np.clip(values, 0.0, None))
        if covariate == CovariateTransform.LOG:
            for j in np.flatnonzero((cov_values <= 0).any(axis=1)):
                violations.append(
                    f"Subject {s.subject_id}, t={s.covariate_times_array[j]}: log of nonpositive covariate"
                )
            if exact is not None and (exact <= 0).any():
                violations.append(f"Subject {s.subject_id}: log of nonpositive exact covariate")
            cov_values = np.log(np.clip(cov_values, np.finfo(float).tiny, None))
            if exact is not None:
                exact = np.log(np.clip(exact, np.finfo(float).tiny, None))

        payload = s.model_dump()
        payload.update(
            outcome_values=values.tolist(),
            covariate_values=cov_values.tolist(),
            outcome_covariates=None if exact is None else exact.tolist(),
        )
        subjects.append(payload)
    if violations:
        raise DataValidationError("Transform outside its domain", violations)

    return data.with_subjects(
        [LongitudinalSubject(**payload) for payload in subjects],
        note=f"transform: outcome={outcome.value}, covariate={covariate.value}",
    )
