"""Regenerate fixtures/eval: a qrels file, three runs and the reference
metric values computed by pytrec_eval (trec_eval bindings).

    pip install pytrec_eval-terrier
    python scripts/freeze_eval_fixtures.py

Scores are distinct within each topic so that trec_eval's score-based
ordering agrees with the rank column.
"""

import random
from pathlib import Path

import pytrec_eval

OUT = Path(__file__).resolve().parent.parent / "fixtures" / "eval"
SEED = 20200410
TOPICS = [str(t) for t in range(1, 9)]
DOCS = [f"doc{i:03d}" for i in range(1, 161)]
MEASURES = {"ndcg_cut_10": 1, "P_5": 1, "recall_100": 1, "P_5_rel": 2}


def make_qrels(rng):
    qrels = {}
    for t in TOPICS:
        judged = rng.sample(DOCS, rng.randint(15, 40))
        grades = {d: rng.choice([0, 0, 0, 1, 1, 2]) for d in judged}
        if not any(grades.values()):
            grades[judged[0]] = 2
        qrels[t] = grades
    # judged topic that no run retrieves for
    qrels["50"] = {"doc001": 1}
    return qrels


def make_run(rng, qrels, depth, bias, short_topic):
    run = {}
    for t in TOPICS:
        rel = [d for d, g in qrels[t].items() if g > 0]
        pool = rng.sample(DOCS, len(DOCS))
        head = [d for d in rel if rng.random() < bias]
        ranking = head + [d for d in pool if d not in head]
        n = 3 if t == short_topic else depth
        ranking = ranking[:n]
        rng.shuffle(ranking[: min(12, len(ranking))])
        base = rng.uniform(10, 20)
        run[t] = {d: round(base - i * rng.uniform(0.01, 0.2) - 0.001 * i, 6) for i, d in enumerate(ranking)}
    # run topic absent from the judgments
    run["99"] = {"doc001": 5.0, "doc002": 4.0}
    return run


def write_run(run, tag, path):
    with open(path, "w") as f:
        for t, docs in run.items():
            ranked = sorted(docs.items(), key=lambda kv: -kv[1])
            for rank, (d, s) in enumerate(ranked, 1):
                f.write(f"{t} Q0 {d} {rank} {s:.6f} {tag}\n")


def read_run(path):
    run = {}
    for line in open(path):
        t, _, d, _, s, _ = line.split()
        run.setdefault(t, {})[d] = float(s)
    return run


def main():
    rng = random.Random(SEED)
    OUT.mkdir(parents=True, exist_ok=True)
    qrels = make_qrels(rng)
    with open(OUT / "qrels.txt", "w") as f:
        for t, docs in qrels.items():
            for d, g in sorted(docs.items()):
                f.write(f"{t} 0 {d} {g}\n")

    specs = [("run_a", 120, 0.8, "3"), ("run_b", 60, 0.4, None), ("run_c", 150, 0.1, "7")]
    rows = []
    for name, depth, bias, short in specs:
        path = OUT / f"{name}.txt"
        write_run(make_run(rng, qrels, depth, bias, short), name, path)
        # evaluate what was written, at the written precision
        run = read_run(path)
        for label, level in MEASURES.items():
            measure = label.removesuffix("_rel")
            ev = pytrec_eval.RelevanceEvaluator(qrels, {measure}, relevance_level=level)
            res = ev.evaluate(run)
            vals = []
            for t in sorted(res, key=int):
                v = res[t][measure]
                vals.append(v)
                rows.append(f"{name}\t{label}\t{t}\t{v:.6f}")
            rows.append(f"{name}\t{label}\tall\t{sum(vals) / len(vals):.6f}")
    with open(OUT / "expected.tsv", "w") as f:
        f.write("run\tmeasure\ttopic\tvalue\n")
        f.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
