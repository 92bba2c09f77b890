from fastapi import APIRouter, Depends, Request
from starlette.concurrency import run_in_threadpool

from app.dependencies import build_run_config, get_thresholds, get_workers
from app.schemas import parse_mdp, parse_policy
from app.services.harness import run_rl, run_rl_eval

router = APIRouter()


def _with_horizon(data: dict) -> dict:
    # the RL routes call the trajectory length "horizon"
    if "horizon" in data and "horizon_arrivals" not in data:
        data = {**data, "horizon_arrivals": data["horizon"]}
    return data


@router.post("/api/rl/train")
async def train(request: Request, thresholds=Depends(get_thresholds), workers: int = Depends(get_workers)):
    data = _with_horizon(await request.json())
    mdp = parse_mdp(data.get("mdp") or {})
    config = build_run_config("rl-train", data, thresholds, workers)
    return await run_in_threadpool(run_rl, config, mdp)


@router.post("/api/rl/evaluate")
async def evaluate(request: Request, thresholds=Depends(get_thresholds), workers: int = Depends(get_workers)):
    data = _with_horizon(await request.json())
    mdp = parse_mdp(data.get("mdp") or {})
    policy = parse_policy(data.get("policy") or {})
    config = build_run_config("rl-eval", data, thresholds, workers)
    return await run_in_threadpool(run_rl_eval, config, mdp, policy)
