from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from app.core.config import RunConfig
from app.core.errors import DepthScaleError
from app.modules.evaluation import router as evaluation_router
from app.modules.geometry import router as geometry_router

app = FastAPI(title="depthscale")


# --- 1. ERRORS ---
@app.exception_handler(DepthScaleError)
async def depth_scale_error_handler(request: Request, exc: DepthScaleError):
    return JSONResponse(status_code=exc.status_code, content=exc.to_payload())


# --- 2. ROUTERS ---
app.include_router(geometry_router.router, prefix="/geometry", tags=["geometry"])
app.include_router(evaluation_router.router, prefix="/evaluation", tags=["evaluation"])


# --- 3. ROUTES ---
@app.get("/")
def home():
    return {"service": "depthscale", "defaults": RunConfig().model_dump()}
