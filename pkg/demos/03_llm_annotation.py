"""
Labelling sentences with an LLM
===============================

The annotator talks to any OpenAI-compatible chat-completions server. It
restricts the answer to the four label strings, reads the probabilities of
the first answer token and turns them into an expected relevance score.

A deterministic mock server replaces the real model here. Point
``Annotator`` at e.g. ``http://localhost:8000/v1`` to use a real one.
"""

import tempfile
from pathlib import Path

from sirank import RelevanceLabel
from sirank.annotation import Annotator, ResponseCache, load_template, select_few_shot
from sirank.annotation.mock import MockEndpoint, serve
from sirank.dataset import Dataset, SentenceRecord

L = RelevanceLabel

train = Dataset(
    tuple(
        SentenceRecord(
            f"t{int(label)}",
            f"a training sentence judged {label.text}",
            "vehicle",
            gold_label=label,
        )
        for label in L
    )
)
to_label = Dataset(
    (
        SentenceRecord(
            "s1", "A bicycle is a vehicle within the meaning of the ordinance.", "vehicle"
        ),
        SentenceRecord("s2", "The hearing was adjourned until Monday.", "vehicle"),
        SentenceRecord("s3", "The court asked whether a parked car obstructs the path.", "vehicle"),
    )
)

# One example per label, drawn reproducibly from the training pool.
few_shot = select_few_shot(train, seed=0)
template = load_template("improved")


# The mock "model" is a lookup from sentence to label probabilities.
def respond(prompt):
    sentence = prompt.rsplit("Sentence: ", 1)[1].split("\n", 1)[0]
    if "bicycle" in sentence:
        return {L.HIGH_VALUE: 0.7, L.CERTAIN_VALUE: 0.2, L.POTENTIAL_VALUE: 0.1}
    if "parked car" in sentence:
        return {L.CERTAIN_VALUE: 0.5, L.POTENTIAL_VALUE: 0.3, L.NO_VALUE: 0.2}
    return {L.NO_VALUE: 0.9, L.POTENTIAL_VALUE: 0.1}


endpoint = MockEndpoint(respond)
cache_path = Path(tempfile.mkdtemp()) / "cache.jsonl"

with serve(endpoint) as url:
    with Annotator(
        url, "mock-model", template, few_shot, cache=ResponseCache(cache_path)
    ) as annotator:
        print(annotator.prompt_for(to_label["s1"])[-400:])
        batch = annotator.annotate_batch(to_label, max_in_flight=4)

for result in batch.results:
    print(f"{result.id}: {result.label.text:<16} expected score {result.expected_score:.2f}")

# The expected scores form an ordinary score table, ready for NDCG.
print(batch.scores().entries)

# Running again is answered from the cache: no request reaches the server.
before = len(endpoint.requests)
with Annotator(
    "http://unused.invalid/v1", "mock-model", template, few_shot, cache=ResponseCache(cache_path)
) as annotator:
    again = annotator.annotate_batch(to_label)
print("new requests on rerun:", len(endpoint.requests) - before)
print("identical output:", again.to_jsonl() == batch.to_jsonl())
