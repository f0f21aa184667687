"""Prompt templates and few-shot example selection."""

from __future__ import annotations

import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..dataset import LABEL_ORDER, Dataset, RelevanceLabel, SentenceRecord
from ..sampling import concept_rng

__all__ = [
    "PLACEHOLDERS",
    "VARIANTS",
    "PromptError",
    "PromptTemplate",
    "FewShotSet",
    "load_template",
    "select_few_shot",
    "format_examples",
    "build_prompt",
]

PLACEHOLDERS = frozenset({"concept", "provision", "sentence", "examples"})
VARIANTS = ("original", "improved")


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    """Annotation guidelines with ``{concept}``, ``{provision}``,
    ``{sentence}`` and ``{examples}`` placeholders.

    Literal braces in the guideline text are written ``{{`` and ``}}``.
    """

    variant: str
    text: str

    def fields(self) -> set[str]:
        names = set()
        for _, name, spec, conv in string.Formatter().parse(self.text):
            if name is None:
                continue
            if name == "" or spec or conv:
                raise PromptError(f"unsupported placeholder {{{name}}} in template")
            names.add(name)
        return names

    def check(self) -> None:
        unknown = self.fields() - PLACEHOLDERS
        if unknown:
            raise PromptError(f"unresolved placeholder {{{sorted(unknown)[0]}}}")


def load_template(variant: str = "original", path=None) -> PromptTemplate:
    """Read a template from ``path`` or one of the bundled variants."""
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        if variant not in VARIANTS:
            raise PromptError(
                f"no bundled template {variant!r}; choose one of {VARIANTS}"
            )
        text = (
            resources.files(__package__)
            .joinpath("templates", f"{variant}.txt")
            .read_text(encoding="utf-8")
        )
    template = PromptTemplate(variant=variant, text=text)
    template.check()
    return template


@dataclass(frozen=True)
class FewShotSet:
    """One training example per relevance label, ordered no -> high value."""

    examples: tuple[SentenceRecord, ...]
    seed: int

    def __post_init__(self):
        labels = [r.gold_label for r in self.examples]
        if sorted(labels, key=lambda x: -1 if x is None else int(x)) != list(
            LABEL_ORDER
        ):
            raise PromptError(
                "few-shot set needs exactly one example of each label, got "
                + ", ".join(str(label) for label in labels)
            )
        ordered = tuple(sorted(self.examples, key=lambda r: int(r.gold_label)))
        object.__setattr__(self, "examples", ordered)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.examples]


def select_few_shot(train: Dataset, seed: int = 0) -> FewShotSet:
    """Draw one gold-labelled training sentence per label.

    Candidates of each label are sorted by id and one is picked uniformly
    with a generator keyed on ``(seed, label)``.
    """
    examples = []
    for label in LABEL_ORDER:
        pool = sorted(
            (r for r in train.records if r.gold_label == label), key=lambda r: r.id
        )
        if not pool:
            raise PromptError(f"no training example labelled {label.text!r}")
        rng = concept_rng(seed, f"label:{label.text}")
        examples.append(pool[int(rng.integers(len(pool)))])
    return FewShotSet(tuple(examples), seed=seed)


def format_examples(few_shot: FewShotSet | None) -> str:
    if few_shot is None:
        return ""
    blocks = []
    for r in few_shot.examples:
        blocks.append(
            f"Concept: {r.concept}\nSentence: {r.text}\nLabel: {r.gold_label.text}\n"
        )
    return "\n".join(blocks)


def build_prompt(
    record: SentenceRecord,
    template: PromptTemplate,
    few_shot: FewShotSet | None = None,
    provision: str | None = None,
) -> str:
    """Render the annotation prompt for one sentence.

    ``provision`` overrides the record's own provision; a missing provision
    renders as an empty string.
    """
    template.check()
    if provision is None:
        provision = record.provision or ""
    values = {
        "concept": record.concept,
        "provision": provision,
        "sentence": record.text,
        "examples": format_examples(few_shot),
    }
    return template.text.format(**values)


def label_strings() -> list[str]:
    return [label.text for label in RelevanceLabel]
