"""JSON schemas shipped with the package."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Any

import jsonschema


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict[str, Any]:
    text = resources.files(__package__).joinpath(f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate(data: Any, name: str) -> None:
    """Raise ``jsonschema.ValidationError`` if ``data`` does not match schema ``name``."""
    jsonschema.validate(data, load_schema(name))
