"""Smoke test for the queryrec_py extension module.

Build and install first:
    pip install --no-build-isolation ./crates/python
then run:
    python3 python/smoke_test.py
"""
import json
import math
import tempfile
from pathlib import Path

import queryrec_py as qr


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok  {what}")


check(qr.tokenize("wet-n-wild #5") == ["wet", "n", "wild", "5"], "tokenize")
check(
    qr.format_prompt(["Red Lipstick"])
    == "Previously, the customer has bought: Red Lipstick. In the future, the customer wants to buy ",
    "format_prompt",
)
check(abs(qr.generation_score([math.log(0.5)] * 2, 1.0) - math.log(0.5)) < 1e-12, "generation_score")

lines = [
    qr.format_prompt(["Red Lipstick"]) + "Rose Lip Gloss</s>",
    qr.format_prompt(["Night Cream"]) + "Vitamin Face Serum</s>",
    qr.format_prompt(["Lip Liner"]) + "Red Lipstick</s>",
]
model = qr.NGramModel(lines, order=3, alpha=0.01)
dist = dict(model.next_token_distribution("wants to buy"))
check(abs(sum(dist.values()) - 1.0) < 1e-9, "n-gram distribution sums to one")
queries = model.generate_queries(["Red Lipstick"], num_queries=4, max_tokens=6)
check(0 < len(queries) <= 4 and all(a[1] >= b[1] for a, b in zip(queries, queries[1:])), "generate_queries")
check(qr.NGramModel.from_json(model.to_json()).to_json() == model.to_json(), "model JSON round trip")

index = qr.InvertedIndex([("d1", "a b"), ("d2", "a")])
check(abs(index.bm25_score("b", "d1") - 0.88 * math.log(2)) < 1e-12, "bm25 worked value")
check([hit[0] for hit in index.search("a b", top_k=2)] == ["d1", "d2"], "search ranking")

merged = qr.merge_results([["A", "B", "C"], ["B", "D", "E"]], 4)
check([m[0] for m in merged] == ["A", "B", "D", "E"], "merge_results")
check(qr.quotas(10, 4) == [3, 3, 2, 2], "quotas")
check(abs(qr.jaccard({"a", "b"}, {"b", "c"}) - 1 / 3) < 1e-15, "jaccard")
check(abs(qr.diversity([{"a"}, {"a"}, {"b"}], 3) - 2 / 3) < 1e-15, "diversity")
check(abs(qr.coverage([{"b", "c", "d"}], [{"a", "b", "c"}]) - 2 / 3) < 1e-15, "coverage")
check(qr.recall_at_k(["x", "y"], "y", 2) == 1.0, "recall_at_k")

with tempfile.TemporaryDirectory() as tmp:
    interactions, catalog = qr.write_synthetic_dataset(tmp, users=60)
    pipe = qr.Pipeline(interactions, catalog, str(Path(tmp) / "work"))
    manifest = json.loads(pipe.prepare())
    check(manifest["users"]["kept"] == 60, "pipeline prepare")
    pipe.train()
    k1, b = pipe.tune()
    check(0.0 <= k1 <= 3.0 and 0.0 <= b <= 1.0, "pipeline tune")
    rec = json.loads(pipe.recommend("u00001", 5))
    check(len(rec["items"]) == 5, "pipeline recommend")
    report = json.loads(pipe.eval([5])[0])
    check(report["num_queries"] == 5, "pipeline eval")

print("smoke test passed")
