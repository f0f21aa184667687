"""Label sentences through an OpenAI-compatible chat-completions endpoint.

Every request restricts the answer to the four label strings and asks for
per-token log-probabilities. The probabilities of the first generated
token are projected onto the labels, renormalized, and turned into a
continuous relevance score ``sum_label p(label) * value(label)``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import httpx

from ..dataset import LABEL_ORDER, Dataset, RelevanceLabel, ScoreTable, SentenceRecord
from .cache import ResponseCache, cache_key
from .prompts import FewShotSet, PromptTemplate, build_prompt

logger = logging.getLogger(__name__)

__all__ = [
    "API_KEY_ENV",
    "CONSTRAINT_MODES",
    "AnnotationError",
    "UnusableResponseError",
    "LabelDistribution",
    "AnnotationResult",
    "AnnotationFailure",
    "BatchResult",
    "Annotator",
    "project_first_token",
]

API_KEY_ENV = "SIRANK_API_KEY"
CONSTRAINT_MODES = ("guided", "none", "auto")
LABEL_STRINGS = [label.text for label in LABEL_ORDER]


class AnnotationError(RuntimeError):
    pass


class UnusableResponseError(AnnotationError):
    """The response gave no probability mass to any label."""


@dataclass(frozen=True)
class LabelDistribution:
    """Probabilities over the four labels for one sentence.

    ``raw`` holds the first-token probabilities as reported by the endpoint
    (labels without a compatible token get 0); ``p`` is ``raw`` rescaled to
    sum to one. ``renormalized`` records whether the rescaling changed it.
    """

    p: Mapping[RelevanceLabel, float]
    raw: Mapping[RelevanceLabel, float]
    renormalized: bool

    @classmethod
    def from_raw(cls, raw: Mapping[RelevanceLabel, float]) -> "LabelDistribution":
        raw = {label: float(raw.get(label, 0.0)) for label in LABEL_ORDER}
        if any(v < 0 or not math.isfinite(v) for v in raw.values()):
            raise ValueError(f"invalid probabilities {raw}")
        total = math.fsum(raw.values())
        if total <= 0:
            raise UnusableResponseError("no probability mass on any label")
        p = {label: v / total for label, v in raw.items()}
        return cls(p=p, raw=raw, renormalized=abs(total - 1.0) > 1e-12)

    @property
    def expected_score(self) -> float:
        return math.fsum(p * int(label) for label, p in self.p.items())

    @property
    def argmax(self) -> RelevanceLabel:
        """Most probable label; ties go to the higher label."""
        return max(LABEL_ORDER, key=lambda label: (self.p[label], int(label)))


@dataclass(frozen=True)
class AnnotationResult:
    id: str
    label: RelevanceLabel
    distribution: LabelDistribution
    expected_score: float
    variant: str
    model: str
    cached: bool = False

    def to_json(self) -> dict:
        # ``cached`` is run state, not a property of the annotation; leaving it
        # out keeps reruns byte-identical.
        return {
            "id": self.id,
            "label": self.label.text,
            "expected_score": self.expected_score,
            "probabilities": {k.text: v for k, v in self.distribution.p.items()},
            "raw_probabilities": {
                k.text: v for k, v in self.distribution.raw.items()
            },
            "renormalized": self.distribution.renormalized,
            "variant": self.variant,
            "model": self.model,
        }


@dataclass(frozen=True)
class AnnotationFailure:
    id: str
    error: str

    def to_json(self) -> dict:
        return {"id": self.id, "error": self.error}


@dataclass
class BatchResult:
    results: list = field(default_factory=list)

    @property
    def succeeded(self) -> list[AnnotationResult]:
        return [r for r in self.results if isinstance(r, AnnotationResult)]

    @property
    def failures(self) -> list[AnnotationFailure]:
        return [r for r in self.results if isinstance(r, AnnotationFailure)]

    def scores(self, provenance: str = "") -> ScoreTable:
        """Expected scores of the successful annotations."""
        return ScoreTable(
            {r.id: r.expected_score for r in self.succeeded}, provenance=provenance
        )

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in self.results
        )


def _match_label(token: str) -> RelevanceLabel | None:
    t = token.strip().lower()
    if not t:
        return None
    hits = [label for label in LABEL_ORDER if label.text.startswith(t)]
    return hits[0] if len(hits) == 1 else None


def project_first_token(content: list) -> dict[RelevanceLabel, float]:
    """Label probabilities from the first position of a ``logprobs.content``.

    Each candidate token at that position (the sampled one and its top
    alternatives) is trimmed, lowercased and matched as a prefix of the
    label strings; tokens compatible with exactly one label add their
    probability to it. Distinct tokens for the same label (``"high"`` and
    ``" High"``) are summed.
    """
    if not content:
        raise AnnotationError("response carries no token probabilities")
    first = content[0]
    candidates = {}
    for entry in first.get("top_logprobs") or []:
        candidates.setdefault(entry["token"], entry["logprob"])
    if "token" in first and "logprob" in first:
        candidates.setdefault(first["token"], first["logprob"])
    if not candidates:
        raise AnnotationError("response carries no token probabilities")
    raw = {label: 0.0 for label in LABEL_ORDER}
    for token, logprob in candidates.items():
        label = _match_label(token)
        if label is not None and logprob is not None:
            raw[label] += math.exp(logprob)
    return raw


class Annotator:
    """Annotate sentences with an OpenAI-compatible chat-completions server.

    Parameters
    ----------
    endpoint : str
        Base URL, e.g. ``http://localhost:8000/v1``.
    model : str
        Served model name.
    template : PromptTemplate
        Annotation guidelines.
    few_shot : FewShotSet, optional
        Examples included in every prompt.
    api_key : str, optional
        Bearer token; defaults to ``$SIRANK_API_KEY`` then ``$OPENAI_API_KEY``.
    constraint : {"guided", "none", "auto"}
        ``"guided"`` sends the four labels as ``guided_choice``; ``"none"``
        asks for two unconstrained tokens and projects client side;
        ``"auto"`` tries guided first and falls back if the server rejects it.
    top_logprobs : int
        Alternatives requested per token position.
    max_attempts, backoff : int, float
        Retry policy for transport errors and 5xx responses; retry ``n``
        waits ``backoff * 2**(n - 1)`` seconds.
    cache : ResponseCache, optional
        Consulted before every request.
    transport : httpx.BaseTransport, optional
        Injected transport (tests use :class:`httpx.MockTransport`).
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        template: PromptTemplate,
        few_shot: FewShotSet | None = None,
        *,
        api_key: str | None = None,
        constraint: str = "guided",
        top_logprobs: int = 20,
        max_attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        cache: ResponseCache | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        if constraint not in CONSTRAINT_MODES:
            raise ValueError(f"constraint must be one of {CONSTRAINT_MODES}")
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.template = template
        self.few_shot = few_shot
        self.constraint = constraint
        self.top_logprobs = top_logprobs
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.cache = cache if cache is not None else ResponseCache()
        if api_key is None:
            api_key = os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(
            headers=headers, timeout=timeout, transport=transport
        )
        self._guided = constraint != "none"
        self._mode_lock = threading.Lock()

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- requests ---------------------------------------------------------

    def _constraint_set(self) -> list[str]:
        return [] if self.constraint == "none" else list(LABEL_STRINGS)

    def _body(self, prompt: str, guided: bool) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "n": 1,
            "logprobs": True,
            "top_logprobs": self.top_logprobs,
            "max_tokens": 8 if guided else 2,
        }
        if guided:
            body["guided_choice"] = list(LABEL_STRINGS)
        return body

    def _post(self, body: dict) -> httpx.Response:
        url = f"{self.endpoint}/chat/completions"
        last_error = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = self._client.post(url, json=body)
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc!r}"
                logger.warning("attempt %d: %s", attempt + 1, last_error)
                continue
            if response.status_code >= 500:
                last_error = f"server error {response.status_code}"
                logger.warning("attempt %d: %s", attempt + 1, last_error)
                continue
            return response
        raise AnnotationError(
            f"request failed after {self.max_attempts} attempts ({last_error})"
        )

    def _request(self, prompt: str) -> dict:
        guided = self._guided
        response = self._post(self._body(prompt, guided))
        if (
            response.status_code == 400
            and guided
            and self.constraint == "auto"
        ):
            logger.info("endpoint rejected guided_choice; using unconstrained output")
            with self._mode_lock:
                self._guided = False
            response = self._post(self._body(prompt, False))
        if response.status_code != 200:
            raise AnnotationError(
                f"endpoint returned {response.status_code}: {response.text[:200]}"
            )
        try:
            data = response.json()
            choice = data["choices"][0]
        except (ValueError, KeyError, IndexError, TypeError):
            raise AnnotationError("malformed chat-completions response") from None
        logprobs = choice.get("logprobs") or {}
        raw = project_first_token(logprobs.get("content") or [])
        message = choice.get("message") or {}
        return {
            "raw": {label.text: p for label, p in raw.items()},
            "content": message.get("content"),
        }

    # -- public API -------------------------------------------------------

    def prompt_for(self, record: SentenceRecord) -> str:
        return build_prompt(record, self.template, self.few_shot)

    def annotate(self, record: SentenceRecord) -> AnnotationResult:
        """Annotate one sentence, consulting the cache first."""
        prompt = self.prompt_for(record)
        key = cache_key(self.model, prompt, self._constraint_set())
        cached = self.cache.get(key)
        if cached is None:
            value = self._request(prompt)
            # validate before caching so unusable answers are retried next run
            distribution = _distribution(value)
            self.cache.put(key, value)
        else:
            distribution = _distribution(cached)
        return AnnotationResult(
            id=record.id,
            label=distribution.argmax,
            distribution=distribution,
            expected_score=distribution.expected_score,
            variant=self.template.variant,
            model=self.model,
            cached=cached is not None,
        )

    def annotate_batch(
        self, records: Dataset | Iterable[SentenceRecord], max_in_flight: int = 8
    ) -> BatchResult:
        """Annotate many sentences with at most ``max_in_flight`` open requests.

        Results come back in input order. Records that fail are reported as
        :class:`AnnotationFailure` entries; successful ones are cached, so a
        rerun only requests what is still missing.
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        records = list(records)
        if self.few_shot is not None:
            leaked = set(self.few_shot.ids) & {r.id for r in records}
            if leaked:
                raise AnnotationError(
                    f"few-shot examples {sorted(leaked)} are in the annotated set"
                )

        def run(record):
            try:
                return self.annotate(record)
            except AnnotationError as exc:
                logger.warning("record %s: %s", record.id, exc)
                return AnnotationFailure(record.id, str(exc))

        if max_in_flight == 1:
            return BatchResult([run(r) for r in records])
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            return BatchResult(list(pool.map(run, records)))


def _distribution(value: dict) -> LabelDistribution:
    raw = {label: value["raw"].get(label.text, 0.0) for label in LABEL_ORDER}
    return LabelDistribution.from_raw(raw)
