from fastapi import APIRouter, Depends, Request
from starlette.concurrency import run_in_threadpool

from app.dependencies import build_run_config, get_thresholds, get_workers
from app.schemas import parse_rate
from app.services.harness import run_point_process

router = APIRouter()


@router.post("/api/point-process")
async def point_process(request: Request, thresholds=Depends(get_thresholds), workers: int = Depends(get_workers)):
    data = await request.json()
    rate = parse_rate(data.get("rate") or {})
    config = build_run_config("point-process", data, thresholds, workers)
    return await run_in_threadpool(run_point_process, config, rate)
