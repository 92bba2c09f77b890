from fastapi import APIRouter, Depends, Request
from starlette.concurrency import run_in_threadpool

from app.dependencies import build_run_config, get_thresholds, get_workers
from app.schemas import parse_network
from app.services.harness import run_spiking_demo

router = APIRouter()


@router.post("/api/spiking/demo")
async def spiking_demo(request: Request, thresholds=Depends(get_thresholds), workers: int = Depends(get_workers)):
    data = await request.json()
    network = parse_network(data.get("network") or {})
    config = build_run_config("spiking-demo", data, thresholds, workers)
    return await run_in_threadpool(run_spiking_demo, config, network)
