import sys
from pathlib import Path
from typing import Any, Dict, List, Optional
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from durations.distribution import EmpiricalDistribution
from lib.errors import RascError
from lib.settings import Settings, get_settings
from pollplan.adaptive import find_polls
from pollplan.models import PollPlanRequest
from routine.parser import parse_routine

app = FastAPI(title="Poll Plan Service")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

settings: Optional[Settings] = None


@app.on_event("startup")
async def startup():
    global settings
    print("Loading settings...")
    settings = get_settings()
    print("✓ Plan service ready!")


class PlanRequest(BaseModel):
    samples: List[float] = Field(min_length=1, description="Observed durations, seconds")
    Q_w: Optional[float] = Field(default=None, gt=0)
    action_class: Optional[str] = None
    slo: Optional[float] = Field(default=None, gt=0, le=1)
    min_poll_interval: Optional[float] = Field(default=None, gt=0)


class PlanResponse(BaseModel):
    polls: List[float]
    k: int
    U: float
    Q_w: float
    slo: float
    expected_detection: Optional[float]
    coverage: Optional[float]
    flags: List[str]


@app.get("/")
async def health():
    return {"status": "ok"}


@app.post("/plan", response_model=PlanResponse)
async def plan(request: PlanRequest):
    if settings is None:
        raise HTTPException(status_code=503, detail="Service not initialized")

    Q_w = request.Q_w or settings.detection_tolerance(request.action_class)
    slo = request.slo or settings.slo
    try:
        dist = EmpiricalDistribution.fit(request.samples, bin_count=settings.bin_count)
        schedule = find_polls(
            PollPlanRequest(
                dist=dist,
                Q_w=Q_w,
                slo=slo,
                min_poll_interval=request.min_poll_interval or min(settings.min_poll_interval, Q_w),
            )
        )
    except (RascError, ValueError) as e:
        raise HTTPException(status_code=422, detail=f"{type(e).__name__}: {str(e)}")
    except Exception as e:
        raise HTTPException(status_code=500, detail=str(e))
    export = schedule.to_export()
    return PlanResponse(
        polls=export["polls"],
        k=export["k"],
        U=export["U"],
        Q_w=Q_w,
        slo=slo,
        expected_detection=export["expected_detection"],
        coverage=export["coverage"],
        flags=schedule.flags,
    )


@app.post("/routines/parse")
async def parse(document: Dict[str, Any]):
    try:
        dag = parse_routine(document)
    except (RascError, ValueError) as e:
        raise HTTPException(status_code=422, detail=f"{type(e).__name__}: {str(e)}")
    return {
        "id": dag.id,
        "actions": [spec.id for spec in dag.actions],
        "devices": sorted(dag.devices()),
        "roots": dag.roots(),
        "topological_order": dag.topological_order(),
        "fallbacks": sorted(dag.fallbacks()),
        "critical_path": dag.critical_path(),
        "edges": [{"parent": e.parent, "child": e.child, "on": e.on.value} for e in dag.edges],
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
