from __future__ import annotations

import logging
import math
from typing import Any

from fastapi import FastAPI, HTTPException, status
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from src import __version__
from src.errors import BeamBnfError

from . import schemas, services
from .config import settings

logger = logging.getLogger(__name__)


def _json_safe(value: Any) -> Any:
    """Replace non-finite floats (log-space constants may be ±inf) with None."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, list):
        return [_json_safe(item) for item in value]
    return value


def create_app() -> FastAPI:
    application = FastAPI(
        title="Beam BNF API",
        version=__version__,
        description="Runs normal-form, small-divisor and lifespan experiments for the nonlinear beam equation.",
    )
    application.add_middleware(
        CORSMiddleware,
        allow_origins=settings.cors_allow_origins,
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @application.get("/health", tags=["health"])
    async def health_check() -> dict[str, str]:
        return {"status": "ok", "version": __version__}

    @application.post(
        "/api/v1/experiments/run",
        status_code=status.HTTP_200_OK,
        tags=["experiments"],
    )
    async def run_experiment(config: schemas.ExperimentConfig) -> JSONResponse:
        record = await services.run_experiment_async(config)
        body = _json_safe(record.model_dump(mode="json", by_alias=True))
        if record.error is None or record.status is schemas.RunStatus.partial:
            return JSONResponse(body)
        if record.error.internal:
            raise HTTPException(
                status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
                detail=f"Experiment crashed: {record.error.type}: {record.error.message}",
            )
        return JSONResponse(body, status_code=status.HTTP_400_BAD_REQUEST)

    @application.post(
        "/api/v1/predict-times",
        response_model=schemas.PredictTimesResponse,
        tags=["theory"],
    )
    async def predict_times(request: schemas.PredictTimesRequest) -> schemas.PredictTimesResponse:
        try:
            return services.predict_times_payload(request)
        except BeamBnfError as exc:
            raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc)) from exc
        except Exception as exc:  # pragma: no cover
            logger.exception("[WARN] predict-times failed")
            raise HTTPException(
                status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
                detail=f"Failed to evaluate predicted times: {exc}",
            ) from exc

    return application


app = create_app()
