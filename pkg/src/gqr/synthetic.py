"""Deterministic synthetic mini-collection for offline end-to-end runs.

Builds a topical corpus with graded judgments, a topic file and a session
log whose sessions stay on one topic. Run as a module to regenerate the
bundled copy::

    python -m gqr.synthetic src/gqr/data/mini
"""

from __future__ import annotations

import argparse
import json
import random
from itertools import accumulate
from pathlib import Path

ONSETS = ["b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl", "gr"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
CODAS = ["", "", "n", "r", "s", "l", "x"]


def _words(rng: random.Random, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        w = "".join(rng.choice(ONSETS) + rng.choice(VOWELS) for _ in range(rng.randint(2, 3))) + rng.choice(CODAS)
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _zipf_cum(n: int, s: float = 1.0) -> list[float]:
    return list(accumulate(1.0 / (i + 1) ** s for i in range(n)))


def generate(seed: int = 2024, n_topics: int = 25, docs_per_topic: int = 20, n_background: int = 1500,
             words_per_topic: int = 30, sessions_per_topic: int = 6, noise_sessions: int = 40):
    rng = random.Random(seed)
    taken: set[str] = set()
    background = _words(rng, n_background, taken)
    bg_cum = _zipf_cum(n_background)
    topics = [_words(rng, words_per_topic, taken) for _ in range(n_topics)]
    tp_cum = _zipf_cum(words_per_topic, 0.8)

    docs, qrels = [], []
    doc_no = 0
    for t, vocab in enumerate(topics):
        qid = f"q{t + 1:02d}"
        for _ in range(docs_per_topic):
            doc_no += 1
            doc_id = f"d{doc_no:04d}"
            length = rng.randint(60, 150)
            focus = rng.uniform(0.05, 0.5)
            other = topics[rng.randrange(n_topics)]
            words = []
            for _ in range(length):
                u = rng.random()
                if u < focus:
                    words.append(rng.choices(vocab, cum_weights=tp_cum)[0])
                elif u < focus + 0.05:
                    words.append(rng.choices(other, cum_weights=tp_cum)[0])
                else:
                    words.append(rng.choices(background, cum_weights=bg_cum)[0])
            docs.append({"id": doc_id, "text": " ".join(words)})
            grade = 2 if focus > 0.35 else 1 if focus > 0.15 else 0
            qrels.append((qid, doc_id, grade))
    for t in range(n_topics):
        for doc in rng.sample(docs, 10):
            key = (f"q{t + 1:02d}", doc["id"])
            if all((q, d) != key for q, d, _ in qrels):
                qrels.append((*key, 0))
    rng.shuffle(docs)
    qrels.sort()

    queries = []
    for t, vocab in enumerate(topics):
        n_terms = rng.randint(1, 3)
        queries.append((f"q{t + 1:02d}", " ".join(rng.sample(vocab[:12], n_terms))))

    sessions = []
    for t, vocab in enumerate(topics):
        for s in range(sessions_per_topic):
            q = rng.sample(vocab[:15], rng.randint(1, 2))
            session = [" ".join(q)]
            for _ in range(rng.randint(1, 5)):
                if rng.random() < 0.5 or len(q) == 1:
                    q = q + [rng.choice(vocab)]
                else:
                    q = q[:-1] + [rng.choice(vocab)]
                session.append(" ".join(q))
            sessions.append((f"t{t + 1:02d}s{s + 1}", session))
    for s in range(noise_sessions):
        n = rng.randint(1, 3)
        sessions.append((f"n{s + 1:03d}", [" ".join(rng.sample(background[:300], 2)) for _ in range(n)]))
    rng.shuffle(sessions)
    return docs, qrels, queries, sessions


CONFIG = """\
# bundled mini experiment: synthetic collection, offline backends
corpus = corpus.jsonl
queries = queries.tsv
qrels = qrels.txt
session_log = sessions.tsv
backend = mock
mock_mode = copy
embedding_provider = hashing
seed = 7
k = 6
n_examples = 10
workers = 4
alpha = 0.01
"""


def write(out_dir: str | Path, seed: int = 2024) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docs, qrels, queries, sessions = generate(seed)
    with open(out / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps(d) + "\n")
    (out / "qrels.txt").write_text("".join(f"{q} 0 {d} {g}\n" for q, d, g in qrels), "utf-8")
    (out / "queries.tsv").write_text("".join(f"{q}\t{t}\n" for q, t in queries), "utf-8")
    (out / "sessions.tsv").write_text(
        "".join(f"{sid}\t{q}\n" for sid, session in sessions for q in session), "utf-8")
    (out / "mini.cfg").write_text(CONFIG, "utf-8")
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args(argv)
    print(write(args.out_dir, args.seed))


if __name__ == "__main__":
    main()
