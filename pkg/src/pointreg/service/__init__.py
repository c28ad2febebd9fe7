"""HTTP service wrapping the registration toolkit."""

from .app import app, create_app

__all__ = ["app", "create_app"]
