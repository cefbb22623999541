from fastapi import APIRouter
from app.api import runs, config

api_router = APIRouter()

api_router.include_router(runs.router)
api_router.include_router(config.router)
