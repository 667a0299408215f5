"""Plain-text prompt templates with ``{NAME}`` placeholders.

Only upper-case placeholder names are substituted, so braces that appear in schema
text or SQL literals pass through untouched.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

TEMPLATE_VERSION = 1

_PLACEHOLDER = re.compile(r"\{([A-Z][A-Z0-9_]*)\}")


@lru_cache(maxsize=None)
def load(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


def fill(template: str, **values: str) -> str:
    missing = placeholders(template) - values.keys()
    if missing:
        raise KeyError(f"template placeholders without values: {sorted(missing)}")
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template)
