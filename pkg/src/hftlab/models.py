"""Built-in model library, written in the model-file language itself."""

from __future__ import annotations

from .dsl import ModelDefinition, ModelError, parse_model

BUILTIN_SOURCES = {
    # two levels crossing at lambda = 0
    "crossing": """
        matrix H { dim = 2; [1,1] = lambda; [2,2] = -lambda; }
    """,
    # same diagonal with a constant coupling: gap 2 sqrt(lambda^2 + 1/4) >= 1
    "avoided": """
        matrix H { dim = 2; [1,1] = lambda; [1,2] = 0.5; [2,2] = -lambda; }
    """,
    # three levels meeting at lambda = 0
    "spin1": """
        matrix H { dim = 3; [1,1] = lambda; [2,2] = 0*lambda; [3,3] = -lambda; }
    """,
    # a doublet that stays degenerate for every lambda
    "persistent": """
        matrix H { dim = 3; [1,1] = lambda; [2,2] = lambda; [3,3] = -lambda; }
    """,
    # lambda times a fixed projector: eigenvalues (lambda, 0), constant tilted eigenvectors
    "rotating": """
        matrix H {
            dim = 2;
            [1,1] = lambda*cos(1)^2;
            [1,2] = lambda*cos(1)*sin(1);
            [2,2] = lambda*sin(1)^2;
        }
    """,
}

BUILTIN_NAMES = tuple(BUILTIN_SOURCES)

_cache: dict[str, ModelDefinition] = {}


def builtin_model(name: str) -> ModelDefinition:
    if name not in BUILTIN_SOURCES:
        raise ModelError(
            f"unknown built-in model {name!r}; choose from {', '.join(BUILTIN_NAMES)}"
        )
    if name not in _cache:
        _cache[name] = parse_model(BUILTIN_SOURCES[name])
    return _cache[name]
