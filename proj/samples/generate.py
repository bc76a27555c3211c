# Copyright 2026 The CAG Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Regenerates the toy sample files in this directory (seeded, stdlib only)."""

import json
import math
import random
from pathlib import Path

DIM = 8
HERE = Path(__file__).resolve().parent

TOPICS = {
    "astronomy": [
        ("Jupiter is the largest planet in the solar system.",
         ["Which planet is the largest?", "How big is Jupiter?", "What is the biggest planet we know of nearby?"]),
        ("A light-year is the distance light travels in one year.",
         ["What is a light-year?", "How far does light go in a year?", "Is a light-year a unit of time?"]),
        ("The Moon orbits Earth roughly every 27 days.",
         ["How long is the Moon's orbit?", "How often does the Moon circle Earth?", "What is a sidereal month?"]),
        ("Mars has two small moons, Phobos and Deimos.",
         ["How many moons does Mars have?", "What are the moons of Mars called?", "Is Phobos a moon of Mars?"]),
    ],
    "cooking": [
        ("Bread dough rises because yeast produces carbon dioxide.",
         ["Why does dough rise?", "What does yeast do in bread?", "Where do the bubbles in bread come from?"]),
        ("Searing meat at high heat triggers the Maillard reaction.",
         ["What is the Maillard reaction?", "Why sear meat?", "What makes browned meat taste good?"]),
        ("Salt added to pasta water seasons the noodles from within.",
         ["Why salt pasta water?", "Does salting water season pasta?", "How much salt goes in pasta water?"]),
        ("Emulsions like mayonnaise bind oil and water with lecithin.",
         ["How is mayonnaise made?", "What is an emulsion?", "Why does egg yolk bind oil?"]),
    ],
}


def unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def near(rng, center, spread):
    return unit([c + rng.gauss(0.0, spread) for c in center])


def rounded(v):
    return [round(x, 6) for x in v]


def main():
    rng = random.Random(7)
    centroids = {"astronomy": unit([1, 1, 0, 0, 0, 0, 0, 0]), "cooking": unit([0, 0, 1, 1, 0, 0, 0, 0])}
    corpus, bare, vectors = [], [], []
    for topic, docs in TOPICS.items():
        for k, (text, questions) in enumerate(docs):
            cid = f"{topic[:4]}-{k}"
            ctx = near(rng, centroids[topic], 0.12)
            pqs = []
            for j, q in enumerate(questions):
                qv = near(rng, ctx, 0.10)
                pqs.append({"id": f"{cid}/q{j}", "text": q, "embedding": rounded(qv)})
                vectors.append({"id": f"{cid}/q{j}", "embedding": rounded(qv)})
            corpus.append({"id": cid, "topic": topic, "text": text, "embedding": rounded(ctx), "pseudo_queries": pqs})
            vectors.append({"id": cid, "embedding": rounded(ctx)})
            bare.append({"id": cid, "topic": topic, "text": text,
                         "pseudo_queries": [{"id": p["id"], "text": p["text"]} for p in pqs]})

    labeled = []
    for i in range(12):
        topic = "astronomy" if i % 2 == 0 else "cooking"
        labeled.append({"text": f"in-domain {topic} question {i}",
                        "embedding": rounded(near(rng, centroids[topic], 0.12)), "label": True})
    for i in range(12):
        v = [0.0] * 4 + [rng.gauss(0, 1) for _ in range(4)]
        labeled.append({"text": f"out-of-domain question {i}", "embedding": rounded(unit(v)), "label": False})

    def write_jsonl(name, rows):
        (HERE / name).write_text("".join(json.dumps(r) + "\n" for r in rows))

    write_jsonl("toy_corpus.jsonl", corpus)
    write_jsonl("toy_corpus_bare.jsonl", bare)
    write_jsonl("toy_vectors.jsonl", vectors)
    write_jsonl("toy_labeled_queries.jsonl", labeled)
    (HERE / "query_in_domain.json").write_text(json.dumps(rounded(near(rng, centroids["cooking"], 0.12))) + "\n")
    (HERE / "query_out_of_domain.json").write_text(json.dumps(rounded(unit([0, 0, 0, 0, 1, -1, 0.5, 0]))) + "\n")


if __name__ == "__main__":
    main()
