from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
import hashlib
import io
import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import joblib
import numpy as np
import pandas as pd
from fastapi.concurrency import run_in_threadpool

from src import __version__
from src.beam_dynamics import build_R0
from src.bnf_engine import ParamSchedule, TheoremParams, bnf_iterate, predicted_times
from src.errors import BeamBnfError, InsufficientDataError, ParameterError, exit_code_for
from src.experiments import (
    csv_text,
    fit_exponent,
    json_text,
    lifespan_sweep,
    mass_scan,
    optimal_p,
    write_bytes_atomic,
    write_json_atomic,
    write_text_atomic,
)
from src.ham_algebra import PolyHamiltonian, dumps_hamiltonian, loads_hamiltonian
from src.small_divisors import (
    MAX_VANDER_CARDINALITY,
    FrequencyVector,
    LatticeVector,
    bad_set_measure,
    check_diophantine,
    dichotomy_holds,
    enumerate_lattice,
    mass_grid,
    reduce_superactions,
    vander_check,
)
from src.weighted_spaces import Weight

from . import schemas
from .config import settings

logger = logging.getLogger(__name__)

Runner = Callable[[schemas.ExperimentConfig, "RunContext"], None]


@dataclass
class RunContext:
    """Everything a runner produces; survives a failing runner so partial results can be recorded."""

    payload: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    texts: Dict[str, str] = field(default_factory=dict)
    blobs: Dict[str, Any] = field(default_factory=dict)
    error: Optional[schemas.RunError] = None


def resolve_defaults(config: schemas.ExperimentConfig) -> schemas.ExperimentConfig:
    """Fill settings-driven defaults so the stored config fully describes the run."""
    updates: Dict[str, Any] = {}
    if config.buffer is None:
        updates["buffer"] = settings.truncation_buffer
    if config.sample_every is None:
        updates["sample_every"] = settings.sample_every
    if config.abs_C is None:
        updates["abs_C"] = settings.abs_C
    if config.c is None:
        updates["c"] = settings.abs_small_c
    if config.F_R is None:
        updates["F_R"] = config.nonlinearity_spec().F_R
    if config.kind is schemas.ExperimentKind.mass_scan and config.m_values is None:
        updates["m_values"] = [float(m) for m in np.linspace(1.0, 2.0, config.mass_points)]
    return config.model_copy(update=updates) if updates else config


def config_document(config: schemas.ExperimentConfig) -> Dict[str, Any]:
    """Canonical config dict; the output directory does not influence results and is left out."""
    return config.model_dump(mode="json", exclude={"out"})


def git_blob_digest(data: bytes) -> str:
    """sha1 over `blob <len>\\0<data>`, i.e. what `git hash-object` prints."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def payload_digest(payload: Dict[str, Any], tables: Dict[str, pd.DataFrame], texts: Dict[str, str]) -> str:
    digest = hashlib.sha256(json_text(payload).encode("utf-8"))
    for name in sorted(tables):
        digest.update(name.encode("utf-8"))
        digest.update(csv_text(tables[name]).encode("utf-8"))
    for name in sorted(texts):
        digest.update(name.encode("utf-8"))
        digest.update(texts[name].encode("utf-8"))
    return digest.hexdigest()


def _weight(config: schemas.ExperimentConfig) -> Weight:
    return Weight(config.weight_kind, config.p, config.M, s=config.s, q=config.q)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

def _run_divisor_audit(config: schemas.ExperimentConfig, ctx: RunContext) -> None:
    report = check_diophantine(
        config.m,
        config.gamma,
        config.max_l1,
        config.M,
        budget=settings.enum_budget,
        reduced_tau=config.reduced_tau,
    )
    ctx.payload["audit"] = report.to_dict()
    ctx.tables["audit"] = report.rows
    family = list(enumerate_lattice(config.max_l1, config.M, nonresonant_only=True, budget=settings.enum_budget))
    if family:
        estimate = bad_set_measure(family, config.gamma, config.samples, seed=config.seed, n_jobs=settings.n_jobs)
        ctx.payload["bad_set"] = estimate.to_dict()
    _audit_derivatives(family, ctx)


def _audit_derivatives(family: List[LatticeVector], ctx: RunContext) -> None:
    """Derivative lower bound and divisor dichotomy for the audited family on a BEAM_M_GRID-point mass grid."""
    grid = mass_grid(settings.m_grid)
    reduced: Dict[str, LatticeVector] = {}
    for ell in family:
        candidate = reduce_superactions(ell)
        if not candidate.is_zero() and candidate.cardinality <= MAX_VANDER_CARDINALITY:
            reduced.setdefault(candidate.encode(), candidate)
    failed = [code for code, ell in sorted(reduced.items()) if not vander_check(ell, grid).passed]
    if failed:
        logger.warning("[DIV] derivative bound fails for %d vectors", len(failed))
    ctx.payload["derivatives"] = {
        "grid_points": len(grid),
        "checked": len(reduced),
        "failed": failed,
        "passed": not failed,
    }
    ctx.payload["dichotomy"] = {
        "checked": len(family),
        "counterexamples": [ell.encode() for ell in family if not dichotomy_holds(ell, grid)],
    }


def _run_mass_scan(config: schemas.ExperimentConfig, ctx: RunContext) -> None:
    table = mass_scan(
        config.m_values,
        config.gamma,
        config.max_l1,
        config.M,
        budget=settings.enum_budget,
        n_jobs=settings.n_jobs,
    )
    ctx.tables["mass_scan"] = table
    ctx.payload["points"] = len(table)
    ctx.payload["passed"] = int(table["passed"].sum())
    ctx.payload["passed_fraction"] = float(table["passed"].mean())


def initial_hamiltonian(config: schemas.ExperimentConfig) -> PolyHamiltonian:
    """R₀ read from `config.hamiltonian` when set, otherwise built from the configured nonlinearity."""
    if config.hamiltonian is None:
        return build_R0(config.nonlinearity_spec(), config.m, config.M)
    path = Path(config.hamiltonian)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParameterError(f"cannot read hamiltonian file {path}: {exc}") from exc
    return loads_hamiltonian(text, config.M)


def _run_bnf(config: schemas.ExperimentConfig, ctx: RunContext) -> None:
    freq = FrequencyVector(config.m, config.M)
    H0 = initial_hamiltonian(config)
    if config.hamiltonian is not None:
        ctx.payload["hamiltonian"] = {
            "source": "file",
            "terms": len(H0),
            "degrees": H0.degrees(),
            "sha256": hashlib.sha256(dumps_hamiltonian(H0).encode("utf-8")).hexdigest(),
        }
        logger.info("[BNF] loaded R0 with %d terms from %s", len(H0), config.hamiltonian)
    schedule = ParamSchedule(
        r0=config.r0,
        K=config.K,
        M=config.M,
        kind=config.weight_kind,
        s0=config.s,
        p=config.p,
        q=config.q,
        gamma=config.gamma,
        r_bar=config.r_bar,
        abs_C=config.abs_C,
    )
    state, report, generators = bnf_iterate(
        H0,
        freq,
        schedule,
        gate=config.gate,
        override=config.override_gates,
        buffer=config.buffer,
        n_jobs=settings.n_jobs,
    )
    ctx.payload["bnf"] = report.to_dict()
    ctx.tables["bnf_steps"] = pd.DataFrame(
        [{k: v for k, v in step.to_dict().items() if k != "eps"} for step in report.steps]
    )
    ctx.texts["normal_form.txt"] = dumps_hamiltonian(state.normal_form())
    ctx.texts["remainder.txt"] = dumps_hamiltonian(state.remainder())
    ctx.blobs["generators.joblib"] = {"M": config.M, "generators": [dict(S.terms) for S in generators]}
    if report.rejected is not None:
        rejected = report.rejected
        ctx.error = schemas.RunError(type="StepRejectedError", message=rejected["message"], exit_code=1)


def _run_lifespan(config: schemas.ExperimentConfig, ctx: RunContext) -> None:
    table, trajectories = lifespan_sweep(
        config.deltas,
        config.nonlinearity_spec(),
        config.M,
        config.m,
        _weight(config),
        config.horizon,
        config.dt,
        scheme=config.scheme,
        sample_every=config.sample_every,
        active_modes=config.active_modes,
        seed=config.seed,
        n_jobs=settings.n_jobs,
    )
    ctx.tables["lifespan"] = table
    for index, delta in enumerate(config.deltas):
        ctx.tables[f"trajectory_{index}"] = trajectories[float(delta)]
    ctx.payload["lifespan"] = table.to_dict(orient="records")
    try:
        ctx.payload["fit"] = fit_exponent(table).to_dict()
    except InsufficientDataError as exc:
        logger.info("[FIT] skipped: %s", exc)
        ctx.payload["fit"] = None


def _run_fit(config: schemas.ExperimentConfig, ctx: RunContext) -> None:
    censored = config.series_censored or [False] * len(config.series_delta)
    series = pd.DataFrame({"delta": config.series_delta, "T_escape": config.series_T, "censored": censored})
    ctx.payload["fit"] = fit_exponent(series).to_dict()


def _run_predict_times(config: schemas.ExperimentConfig, ctx: RunContext) -> None:
    params = TheoremParams(
        R=config.R,
        F_R=config.F_R,
        gamma=config.gamma,
        c=config.c,
        p=config.p,
        s=config.s,
        q=config.q,
        C1=config.C1,
        C2=config.C2,
        C3=config.C3,
    )
    ctx.payload["predicted"] = predicted_times(config.delta, params).to_dict()
    if config.delta < params.delta_S:
        ctx.payload["optimal_p"] = optimal_p(config.delta, config.gamma, params.delta_S, config.c)


@lru_cache(maxsize=1)
def _runner_table() -> Dict[schemas.ExperimentKind, Runner]:
    return {
        schemas.ExperimentKind.divisor_audit: _run_divisor_audit,
        schemas.ExperimentKind.mass_scan: _run_mass_scan,
        schemas.ExperimentKind.bnf: _run_bnf,
        schemas.ExperimentKind.lifespan: _run_lifespan,
        schemas.ExperimentKind.fit: _run_fit,
        schemas.ExperimentKind.predict_times: _run_predict_times,
    }


def get_runner(kind: schemas.ExperimentKind) -> Runner:
    runner = _runner_table().get(schemas.ExperimentKind(kind))
    if runner is None:
        raise KeyError(f"no runner registered for experiment kind '{kind}'")
    return runner


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def output_dir(config: schemas.ExperimentConfig, config_hash: str) -> Path:
    if config.out:
        return Path(config.out)
    return Path(settings.runs_dir) / f"{config.kind.value}-{config_hash[:12]}"


def _write_artifacts(directory: Path, ctx: RunContext) -> Dict[str, str]:
    artifacts: Dict[str, str] = {}
    for name, table in ctx.tables.items():
        artifacts[name] = str(write_text_atomic(csv_text(table), directory / f"{name}.csv"))
    for name, text in ctx.texts.items():
        artifacts[name] = str(write_text_atomic(text, directory / name))
    for name, obj in ctx.blobs.items():
        buffer = io.BytesIO()
        joblib.dump(obj, buffer)
        artifacts[name] = str(write_bytes_atomic(buffer.getvalue(), directory / name))
    return artifacts


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def run_experiment(config: schemas.ExperimentConfig, write: Optional[bool] = None) -> schemas.RunRecord:
    """
    Execute one experiment and build its record.

    Module errors never escape: they land in ``record.error`` and whatever the
    runner produced before failing stays in the payload.
    """
    config = resolve_defaults(config)
    document = config_document(config)
    raw = json_text(document).encode("utf-8")
    config_hash = hashlib.sha256(raw).hexdigest()
    started = _now()
    ctx = RunContext()
    logger.info("[RUN] %s started (config %s)", config.kind.value, config_hash[:12])
    try:
        get_runner(config.kind)(config, ctx)
    except BeamBnfError as exc:
        logger.warning("[RUN] %s failed: %s", config.kind.value, exc)
        ctx.error = schemas.RunError(type=type(exc).__name__, message=str(exc), exit_code=exc.exit_code)
        if getattr(exc, "last_time", None) is not None:
            ctx.payload["last_time"] = exc.last_time
    except Exception as exc:
        logger.exception("[RUN] %s crashed", config.kind.value)
        ctx.error = schemas.RunError(type=type(exc).__name__, message=str(exc), exit_code=exit_code_for(exc), internal=True)

    # numpy scalars and tuples become plain JSON types
    ctx.payload = json.loads(json_text(ctx.payload))

    if ctx.error is None:
        status = schemas.RunStatus.ok
    elif ctx.payload or ctx.tables:
        status = schemas.RunStatus.partial
    else:
        status = schemas.RunStatus.error

    record = schemas.RunRecord(
        kind=config.kind,
        status=status,
        config=document,
        config_hash=config_hash,
        input_digest=git_blob_digest(raw),
        payload_digest=payload_digest(ctx.payload, ctx.tables, ctx.texts),
        started_at=started,
        finished_at=_now(),
        tool_version=__version__,
        payload=ctx.payload,
        error=ctx.error,
    )

    if settings.write_artifacts if write is None else write:
        directory = output_dir(config, config_hash)
        record.artifacts = _write_artifacts(directory, ctx)
        record_path = directory / "record.json"
        record.artifacts["record"] = str(record_path)
        write_json_atomic(record.model_dump(mode="json", by_alias=True), record_path)
    logger.info("[RUN] %s finished with status %s", config.kind.value, status.value)
    return record


async def run_experiment_async(config: schemas.ExperimentConfig, write: Optional[bool] = None) -> schemas.RunRecord:
    return await run_in_threadpool(run_experiment, config, write)


def hamiltonian_text(config: schemas.ExperimentConfig) -> str:
    """R₀ of the run in the text exchange format."""
    return dumps_hamiltonian(initial_hamiltonian(config))


def predict_times_payload(request: schemas.PredictTimesRequest) -> schemas.PredictTimesResponse:
    params = TheoremParams(**request.model_dump(exclude={"delta"}))
    return schemas.PredictTimesResponse(**predicted_times(request.delta, params).to_dict())
