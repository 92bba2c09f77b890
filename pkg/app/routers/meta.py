from fastapi import APIRouter

from app.services.harness import FAULTS

router = APIRouter()


@router.get("/health")
async def health():
    return {
        "status": "ok",
        "service": "adp-lab",
        "samplers": ["iaa", "aaa", "unif"],
        "commands": ["simulate", "point-process", "validate-equivalence", "rl-train", "rl-eval", "spiking-demo"],
        "faults": list(FAULTS),
    }
