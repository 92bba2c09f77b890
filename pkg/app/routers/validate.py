from fastapi import APIRouter, Depends, Request
from starlette.concurrency import run_in_threadpool

from app.dependencies import build_run_config, get_thresholds, get_workers
from app.schemas import parse_model
from app.services.harness import run_validate_equivalence

router = APIRouter()


@router.post("/api/validate-equivalence")
async def validate_equivalence(request: Request, thresholds=Depends(get_thresholds), workers: int = Depends(get_workers)):
    data = await request.json()
    model = parse_model(data.get("model") or {})
    config = build_run_config("validate-equivalence", data, thresholds, workers)
    report = await run_in_threadpool(run_validate_equivalence, config, model)
    return report.to_dict()
