"""FastAPI service exposing synth/train/eval/sweep/gradcheck endpoints."""

from .app import app

__all__ = ["app"]
