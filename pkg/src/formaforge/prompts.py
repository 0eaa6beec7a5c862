"""Prompt templates and their renderers.

Templates live as plain text files under ``formaforge/templates`` and are
golden artifacts: rendering is literal placeholder substitution, so a
rendered prompt differs from its template only at the substituted slots.
``template_hash`` values are recorded in run manifests so a run can be tied
to the exact prompt wording it used.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib import resources

TEMPLATE_NAMES = (
    "formalize",
    "consistency",
    "extraction",
    "validation",
    "perturbation",
)

# Placeholder tokens each template is allowed to contain.  Substitution is
# plain string replacement, never str.format: the validation template
# contains literal braces ($\boxed{true}$) that format() would choke on.
TEMPLATE_SLOTS = {
    "formalize": ("nl_statement",),
    "consistency": ("nl_statement", "fl_statement"),
    "extraction": (),
    "validation": ("problem", "category"),
    "perturbation": ("nl_statement", "fl_statement"),
}


class UnknownTemplateError(KeyError):
    pass


@lru_cache(maxsize=None)
def template_text(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise UnknownTemplateError(name)
    ref = resources.files("formaforge").joinpath(f"templates/{name}.txt")
    return ref.read_text(encoding="utf-8")


def template_hash(name: str) -> str:
    """sha256 hex digest of the raw template file."""
    return hashlib.sha256(template_text(name).encode("utf-8")).hexdigest()


def render(name: str, **slots: str) -> str:
    expected = TEMPLATE_SLOTS[name] if name in TEMPLATE_SLOTS else ()
    if set(slots) != set(expected):
        raise ValueError(
            f"template {name!r} takes slots {sorted(expected)}, got {sorted(slots)}"
        )
    text = template_text(name)
    for slot, value in slots.items():
        text = text.replace("{" + slot + "}", value)
    return text


def all_template_hashes() -> dict[str, str]:
    return {name: template_hash(name) for name in TEMPLATE_NAMES}
