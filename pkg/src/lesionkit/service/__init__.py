"""HTTP service surface; ``uvicorn lesionkit.service:app`` serves it."""

from .app import app, create_app

__all__ = ["app", "create_app"]
