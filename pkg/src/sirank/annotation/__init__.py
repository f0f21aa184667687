"""LLM-based relevance annotation."""

from .cache import ResponseCache, cache_key
from .client import (
    API_KEY_ENV,
    AnnotationError,
    AnnotationFailure,
    AnnotationResult,
    Annotator,
    BatchResult,
    LabelDistribution,
    UnusableResponseError,
    project_first_token,
)
from .prompts import (
    VARIANTS,
    FewShotSet,
    PromptError,
    PromptTemplate,
    build_prompt,
    load_template,
    select_few_shot,
)

__all__ = [
    "API_KEY_ENV",
    "VARIANTS",
    "AnnotationError",
    "AnnotationFailure",
    "AnnotationResult",
    "Annotator",
    "BatchResult",
    "FewShotSet",
    "LabelDistribution",
    "PromptError",
    "PromptTemplate",
    "ResponseCache",
    "UnusableResponseError",
    "build_prompt",
    "cache_key",
    "load_template",
    "project_first_token",
    "select_few_shot",
]
