"""Exercises the carca extension end to end on a small synthetic log.

Build and install the module first:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml
"""

import math
import os
import tempfile

import carca


def synthetic_records(users=40, items=30, length=8):
    records = []
    for u in range(users):
        cycle = [1 + (u * 7 + j * 11) % items for j in range(3 + u % 3)]
        for t in range(length):
            records.append((u + 1, cycle[t % len(cycle)], 1_600_000_000 + (u + t) * 86_400))
    attributes = [[float(i % 3), i / items] for i in range(1, items + 1)]
    return records, attributes


def main():
    assert carca.rank_position(0.5, [0.9, 0.5, 0.1]) == 3
    assert carca.hr_at_k(10, 10) == 1.0 and carca.hr_at_k(11, 10) == 0.0
    assert math.isclose(carca.ndcg_at_k(2, 10), 1 / math.log2(3))
    assert carca.auc(0.5, [0.5, 0.1]) == 0.75
    assert carca.gini_index([1, 1, 1], 3) > carca.gini_index([1, 2, 3], 3) == 0.0
    assert carca.ablation_name(2) == "additive residual"
    assert carca.apply_ablation(7)["target_split"] != carca.preset("games")["target_split"]
    cfg = carca.parse_config('preset = "men"\n[train]\nepochs = 3\n')
    assert cfg["train"]["epochs"] == 3 and cfg["model"] == carca.preset("men")

    records, attributes = synthetic_records()
    data = carca.Dataset.from_records(records, attributes)
    assert (data.user_count, data.item_count, data.attr_dim) == (40, 30, 2)
    assert data.split_sizes(6) == (40, 40, 40)

    hyper = {"embed_dim": 8, "feature_dim": 8, "heads": 2, "blocks": 1, "max_len": 6, "dropout": 0.1, "learning_rate": 3e-3}
    config = {"epochs": 3, "batch_size": 16, "eval_every": 1, "validation_negatives": 10}
    result = carca.train(data, hyper, config)
    model = result["model"]
    assert len(result["history"]) == 3
    assert all(math.isfinite(h["loss"]) for h in result["history"])

    protocol = {"k": 10, "negatives": 20}
    report = carca.evaluate(model, data, protocol)
    assert len(report["runs"]) == 5 and 0.0 <= report["mean"]["ndcg"] <= 1.0
    for baseline in ("random", "popularity", 0.5):
        carca.evaluate(baseline, data, protocol)
    auc_report = carca.evaluate(model, data, {"negatives": 20, "metrics": "auc"})
    assert "hr" not in auc_report["mean"] and "auc" in auc_report["mean"]

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        model.save(path)
        loaded = carca.Model.load(path)
        assert loaded.hyper == model.hyper
        assert carca.evaluate(loaded, data, protocol) == report

    scores = model.score(data, 0, [1, 2, 3])
    assert len(scores) == 3 and all(0.0 < s < 1.0 for s in scores)

    try:
        carca.evaluate(model, data.without_attributes(), protocol)
    except carca.CarcaError:
        pass
    else:
        raise AssertionError("attribute-free dataset accepted by an attribute model")
    try:
        carca.train(data, {"embed_dims": 8})
    except ValueError:
        pass
    else:
        raise AssertionError("unknown hyper-parameter accepted")

    print(f"smoke test ok: NDCG@10 {report['mean']['ndcg']:.4f}, {model.parameter_count} parameters")


if __name__ == "__main__":
    main()
