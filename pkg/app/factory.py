import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .errors import AdpError
from .routers import meta, point_process, rl, simulate, spiking, validate
from .utils.logs import configure_logging

logger = logging.getLogger(__name__)


def create_app() -> FastAPI:
    configure_logging()
    app = FastAPI(title="ADP Lab")

    @app.exception_handler(AdpError)
    async def adp_error_handler(request: Request, exc: AdpError) -> JSONResponse:
        logger.info("%s %s rejected: %s", request.method, request.url.path, exc)
        return JSONResponse(status_code=422, content={"detail": str(exc), "error": type(exc).__name__})

    # Include routers
    app.include_router(meta.router)
    app.include_router(simulate.router)
    app.include_router(point_process.router)
    app.include_router(validate.router)
    app.include_router(rl.router)
    app.include_router(spiking.router)

    return app
