"""Python access to the stagerl core."""

import json as _json

from ._core import (
    BadArgs,
    Degenerate,
    Error,
    ParseError,
    RaggedMatrix,
    Unsatisfiable,
    avg_at_n,
    cli,
    decontaminate,
    ngrams,
    normalize_text,
    pass_at_k,
    pass_at_k_exact,
    run_minivm,
    teacher_trace,
    verify,
)

__all__ = [
    "BadArgs",
    "Degenerate",
    "Error",
    "ParseError",
    "RaggedMatrix",
    "Unsatisfiable",
    "avg_at_n",
    "cli",
    "decontaminate",
    "default_plan",
    "fit_scaling",
    "generate_tasks",
    "ngrams",
    "normalize_text",
    "pass_at_k",
    "pass_at_k_exact",
    "run_minivm",
    "teacher_trace",
    "verify",
]


def fit_scaling(points):
    """Fit z = a*std(log2 x) + b*std(log2 y) + c to (x, y, z) triples."""
    from ._core import _fit_scaling_json

    return _json.loads(_fit_scaling_json([tuple(map(float, p)) for p in points]))


def generate_tasks(**spec):
    """Tasks as dicts; keyword arguments follow the generator JSON fields."""
    from ._core import _generate_tasks

    return [_json.loads(line) for line in _generate_tasks(_json.dumps(spec))]


def default_plan():
    from ._core import _default_plan_json

    return _json.loads(_default_plan_json())
