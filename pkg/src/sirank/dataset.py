"""Sentence datasets, relevance labels and score tables.

Datasets are read from line-delimited JSON where every line carries one
sentence together with the legal concept it relates to::

    {"text": "Thus, a chemical compound ...", "concept": "involvesInventiveStep"}

Annotated lines add a ``"value"`` label (``"high"``, ``"no value"``, ...),
and model predictions reuse the same shape with a numeric ``"value"``.
"""

from __future__ import annotations

import enum
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, TextIO

__all__ = [
    "DatasetError",
    "RelevanceLabel",
    "SentenceRecord",
    "Dataset",
    "ScoreTable",
    "label_value",
    "label_from_value",
    "parse_label",
    "parse_dataset",
    "emit_dataset",
    "parse_scores",
    "emit_scores",
    "read_dataset",
    "read_scores",
    "write_scores",
    "dataset_stats",
]


class DatasetError(ValueError):
    """Raised for malformed dataset or score input."""


class RelevanceLabel(enum.IntEnum):
    """Explanatory value of a sentence for a legal concept.

    The integer value of each member is the graded relevance used by NDCG.
    """

    NO_VALUE = 0
    POTENTIAL_VALUE = 1
    CERTAIN_VALUE = 2
    HIGH_VALUE = 3

    @property
    def text(self) -> str:
        """Canonical lowercase string form, e.g. ``"certain value"``."""
        return self.name.lower().replace("_", " ")

    def __str__(self) -> str:
        return self.text


LABEL_ORDER = tuple(RelevanceLabel)

_LABEL_LOOKUP: dict[str, RelevanceLabel] = {}
for _label in RelevanceLabel:
    _LABEL_LOOKUP[_label.text] = _label
    # Annotated files often carry only the first word ("high"), see the
    # annotation format; the four first words are distinct.
    _LABEL_LOOKUP[_label.text.split()[0]] = _label


def label_value(label: RelevanceLabel) -> int:
    """Integer relevance of ``label`` (0 for no value ... 3 for high value)."""
    return int(RelevanceLabel(label))


def label_from_value(value: int) -> RelevanceLabel:
    """Inverse of :func:`label_value`."""
    try:
        return RelevanceLabel(int(value))
    except ValueError:
        raise DatasetError(f"no relevance label has value {value!r}") from None


def parse_label(text: str) -> RelevanceLabel:
    """Parse a label string, ignoring case and surrounding whitespace.

    Both the full form (``"potential value"``) and the bare first word
    (``"potential"``) are accepted.
    """
    if isinstance(text, RelevanceLabel):
        return text
    if not isinstance(text, str):
        raise DatasetError(f"unknown relevance label {text!r}")
    key = " ".join(text.strip().lower().split())
    try:
        return _LABEL_LOOKUP[key]
    except KeyError:
        raise DatasetError(f"unknown relevance label {text!r}") from None


@dataclass(frozen=True)
class SentenceRecord:
    id: str
    text: str
    concept: str
    provision: str | None = None
    gold_label: RelevanceLabel | None = None

    def __post_init__(self):
        if not self.text:
            raise DatasetError(f"record {self.id!r}: empty text")
        if not self.concept:
            raise DatasetError(f"record {self.id!r}: empty concept")

    @property
    def relevance(self) -> int:
        if self.gold_label is None:
            raise DatasetError(f"record {self.id!r} has no gold label")
        return label_value(self.gold_label)

    def to_json(self) -> dict:
        obj = {"id": self.id, "text": self.text, "concept": self.concept}
        if self.provision is not None:
            obj["provision"] = self.provision
        if self.gold_label is not None:
            obj["value"] = self.gold_label.text
        return obj


@dataclass(frozen=True)
class Dataset:
    """Validated, immutable collection of sentence records.

    Records keep their input order. ``concept_index`` maps every concept to
    the ids of its records (in record order) and partitions the id set.
    """

    records: tuple[SentenceRecord, ...] = ()
    concept_index: Mapping[str, tuple[str, ...]] = field(
        init=False, repr=False, compare=False
    )
    _by_id: Mapping[str, SentenceRecord] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        records = tuple(self.records)
        by_id: dict[str, SentenceRecord] = {}
        index: dict[str, list[str]] = {}
        for record in records:
            if record.id in by_id:
                raise DatasetError(f"duplicate record id {record.id!r}")
            by_id[record.id] = record
            index.setdefault(record.concept, []).append(record.id)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(
            self, "concept_index", {c: tuple(ids) for c, ids in index.items()}
        )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SentenceRecord]:
        return iter(self.records)

    def __getitem__(self, record_id: str) -> SentenceRecord:
        return self._by_id[record_id]

    def __contains__(self, record_id) -> bool:
        return record_id in self._by_id

    @property
    def concepts(self) -> list[str]:
        """Concept keys in order of first appearance."""
        return list(self.concept_index)

    @property
    def n(self) -> dict[str, int]:
        """Number of sentences per concept."""
        return {c: len(ids) for c, ids in self.concept_index.items()}

    def records_for(self, concept: str) -> list[SentenceRecord]:
        return [self._by_id[i] for i in self.concept_index.get(concept, ())]

    def subset(self, concepts: Iterable[str]) -> "Dataset":
        """Records belonging to ``concepts``, in original record order."""
        keep = set(concepts)
        return Dataset(tuple(r for r in self.records if r.concept in keep))

    def select(self, ids: Iterable[str]) -> "Dataset":
        """Records with the given ids, in original record order."""
        keep = set(ids)
        missing = keep.difference(self._by_id)
        if missing:
            raise DatasetError(f"unknown record ids: {sorted(missing)[:5]}")
        return Dataset(tuple(r for r in self.records if r.id in keep))


@dataclass(frozen=True)
class ScoreTable:
    """Real-valued relevance predictions keyed by record id."""

    entries: Mapping[str, float]
    provenance: str = ""

    def __post_init__(self):
        clean = {}
        for key, value in dict(self.entries).items():
            value = float(value)
            if not math.isfinite(value):
                raise DatasetError(f"score for {key!r} is not finite: {value}")
            clean[str(key)] = value
        object.__setattr__(self, "entries", clean)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, record_id: str) -> float:
        return self.entries[record_id]

    def __contains__(self, record_id) -> bool:
        return record_id in self.entries

    def ids(self) -> set[str]:
        return set(self.entries)

    def check_covers(self, ids: Iterable[str]) -> None:
        missing = [i for i in ids if i not in self.entries]
        if missing:
            raise DatasetError(
                f"missing score for record {missing[0]!r}"
                + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else "")
            )


def _lines(stream: str | TextIO) -> Iterator[tuple[int, str]]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    for lineno, line in enumerate(stream, start=1):
        if line.strip():
            yield lineno, line


def _load_object(lineno: int, line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line {lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise DatasetError(f"line {lineno}: expected a JSON object")
    return obj


def _record_id(obj: dict, lineno: int) -> str:
    if obj.get("id") is None:
        return f"line-{lineno}"
    return str(obj["id"])


def parse_dataset(stream: str | TextIO) -> Dataset:
    """Parse line-delimited JSON sentence records.

    Parameters
    ----------
    stream : str or text file
        One JSON object per line with ``"text"`` and ``"concept"`` and
        optionally ``"id"``, ``"provision"`` and ``"value"`` (a label string).
        Lines without an id get ``"line-<N>"`` with N the 1-based line number.
        Blank lines are skipped but still counted.

    Returns
    -------
    Dataset

    Raises
    ------
    DatasetError
        On malformed JSON, missing fields, unknown labels or duplicate ids.
    """
    records = []
    seen: set[str] = set()
    for lineno, line in _lines(stream):
        obj = _load_object(lineno, line)
        for key in ("text", "concept"):
            if not isinstance(obj.get(key), str) or not obj[key]:
                raise DatasetError(f"line {lineno}: missing or empty {key!r}")
        record_id = _record_id(obj, lineno)
        if record_id in seen:
            raise DatasetError(f"line {lineno}: duplicate id {record_id!r}")
        seen.add(record_id)
        label = None
        if obj.get("value") is not None:
            try:
                label = parse_label(obj["value"])
            except DatasetError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from None
        provision = obj.get("provision")
        records.append(
            SentenceRecord(
                id=record_id,
                text=obj["text"],
                concept=obj["concept"],
                provision=None if provision is None else str(provision),
                gold_label=label,
            )
        )
    return Dataset(tuple(records))


def emit_dataset(dataset: Dataset) -> str:
    """Serialize ``dataset`` as line-delimited JSON with canonical field order."""
    return "".join(
        json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in dataset.records
    )


def parse_scores(stream: str | TextIO, provenance: str = "") -> ScoreTable:
    """Parse a score file: one ``{"id": ..., "value": ...}`` object per line.

    ``value`` may be a JSON number or a numeric string. Lines without an id
    use the same ``line-<N>`` fallback as :func:`parse_dataset`, so a score
    file written line-aligned with its dataset joins on ids.
    """
    entries: dict[str, float] = {}
    for lineno, line in _lines(stream):
        obj = _load_object(lineno, line)
        record_id = _record_id(obj, lineno)
        raw = obj.get("value")
        if isinstance(raw, bool) or raw is None:
            raise DatasetError(f"score for {record_id!r}: missing numeric value")
        try:
            value = float(raw)
        except (TypeError, ValueError):
            raise DatasetError(
                f"score for {record_id!r}: non-numeric value {raw!r}"
            ) from None
        if not math.isfinite(value):
            raise DatasetError(f"score for {record_id!r}: non-finite value {raw!r}")
        if record_id in entries:
            raise DatasetError(f"line {lineno}: duplicate id {record_id!r}")
        entries[record_id] = value
    return ScoreTable(entries, provenance=provenance)


def emit_scores(table: ScoreTable) -> str:
    """Serialize scores; values are written as shortest round-trip strings."""
    return "".join(
        json.dumps({"id": key, "value": repr(value)}) + "\n"
        for key, value in table.entries.items()
    )


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh)


def read_scores(path) -> ScoreTable:
    with open(path, encoding="utf-8") as fh:
        return parse_scores(fh, provenance=str(path))


def write_scores(table: ScoreTable, path) -> None:
    Path(path).write_text(emit_scores(table), encoding="utf-8")


def dataset_stats(dataset: Dataset) -> dict:
    """Summary counts: concepts, sentences, per-concept n and label histogram.

    Concepts are listed in sorted order so the summary is deterministic.
    """
    labels = Counter(
        r.gold_label.text for r in dataset.records if r.gold_label is not None
    )
    n = dataset.n
    return {
        "concepts": len(n),
        "sentences": len(dataset),
        "per_concept": {c: n[c] for c in sorted(n)},
        "labels": {label.text: labels.get(label.text, 0) for label in LABEL_ORDER},
        "unlabeled": len(dataset) - sum(labels.values()),
    }
