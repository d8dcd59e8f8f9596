"""FastAPI collision-query service over a saved obstacle model."""

import argparse
import logging
from typing import List

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

import robocell_config as config
from robocell_carve import ObstacleModel, load_model
from robocell_collide import config_in_collision, link_interiors, link_samples, trajectory_collision_free
from robocell_errors import KinematicsError, CollisionError
from robocell_kinematics import JointTrajectory, KinematicChain, load_chain

log = logging.getLogger("robocell.server")


class CheckRequest(BaseModel):
    q: List[float]
    clearance: float = Field(0.0, ge=0.0)
    allowed_penetration: float = Field(0.0, ge=0.0)


class TrajectoryRequest(BaseModel):
    samples: List[List[float]] = Field(default_factory=list, description="rows of [t, q1, ..., qL]")
    clearance: float = Field(0.0, ge=0.0)
    allowed_penetration: float = Field(0.0, ge=0.0)


def create_app(model: ObstacleModel, chain: KinematicChain) -> FastAPI:
    """Build the API around one loaded model and chain."""
    app = FastAPI(title="Robot Cell Collision API", version="1.0.0")
    spacing = model.spacing or config.GRID_SPACING
    samples = link_samples(chain, spacing)
    interiors = link_interiors(chain, spacing)

    @app.get("/api/model")
    def get_model():
        """Model metadata plus the chain it is queried with."""
        meta = model.metadata()
        meta["chain"] = {"name": chain.name, "links": chain.link_names}
        meta["bounding_volume_faces"] = model.bounding_volume.n_faces
        return meta

    @app.post("/api/check")
    def check_config(req: CheckRequest):
        try:
            report = config_in_collision(chain, req.q, model, req.clearance, samples=samples,
                                         allowed_penetration=req.allowed_penetration,
                                         interiors=interiors)
        except (KinematicsError, CollisionError) as e:
            raise HTTPException(status_code=422, detail=str(e))
        return report.to_dict()

    @app.post("/api/check-trajectory")
    def check_trajectory(req: TrajectoryRequest):
        rows = req.samples
        if rows and len({len(r) for r in rows}) != 1:
            raise HTTPException(status_code=422, detail="all samples must have the same length")
        try:
            if rows:
                arr = np.asarray(rows, dtype=np.float64)
                traj = JointTrajectory(arr[:, 0], arr[:, 1:])
            else:
                traj = JointTrajectory(np.zeros(0), np.zeros((0, chain.n_links)))
            report = trajectory_collision_free(chain, traj, model, req.clearance,
                                               allowed_penetration=req.allowed_penetration)
        except (KinematicsError, CollisionError) as e:
            raise HTTPException(status_code=422, detail=str(e))
        return report.to_dict(include_verdicts=True)

    return app


def parse_args():
    """Parse command-line arguments for standalone mode."""
    parser = argparse.ArgumentParser(description="Robot Cell Collision Server")
    parser.add_argument(
        '--port',
        type=int,
        default=8000,
        help='Port to run the server on (default: 8000)'
    )
    parser.add_argument(
        '--host',
        type=str,
        default='127.0.0.1',
        help='Host to bind to (default: 127.0.0.1)'
    )
    parser.add_argument(
        '--model',
        type=str,
        default=config.MODEL_PATH,
        help=f'Obstacle model JSON (default: {config.MODEL_PATH})'
    )
    parser.add_argument(
        '--chain',
        type=str,
        default=config.CHAIN_PATH,
        help=f'Chain JSON (default: {config.CHAIN_PATH})'
    )
    return parser.parse_args()


def serve(model_path: str, chain_path: str, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    app = create_app(load_model(model_path), load_chain(chain_path))
    log.info("Starting collision server at http://%s:%d (model=%s chain=%s)", host, port, model_path, chain_path)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    args = parse_args()
    serve(args.model, args.chain, args.host, args.port)
