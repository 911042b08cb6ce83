mod common;

use carca_core::data::{build_splits, load_attributes, load_interactions};
use carca_core::evaluation::{evaluate, ModelScorer, Protocol, RankingReport};
use carca_core::model::{load_checkpoint, save_checkpoint, HyperParams};
use carca_core::numerics::Matrix;
use carca_core::training::{train, TrainConfig};

fn write_fixture(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let interactions = dir.join("interactions.tsv");
    let attributes = dir.join("attributes.tsv");
    std::fs::write(&interactions, format!("# user\titem\ttime\n{}", common::cycle_interactions(20, 30, 8))).unwrap();
    let catalog = common::cycle_attributes(30);
    let rows: Vec<String> = (0..30)
        .map(|i| {
            let vals: Vec<String> = catalog.attributes().row(i).iter().map(|v| format!("{v:?}")).collect();
            format!("{}\t{}", i + 1, vals.join(","))
        })
        .collect();
    std::fs::write(&attributes, rows.join("\n")).unwrap();
    (interactions, attributes)
}

#[test]
fn files_to_report_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let (interactions, attributes) = write_fixture(dir.path());
    let catalog = load_attributes(&attributes).unwrap();
    assert_eq!(catalog.attributes(), common::cycle_attributes(30).attributes());
    let log = load_interactions(&interactions, Some(&catalog)).unwrap();
    assert_eq!(log.user_count(), 20);
    assert_eq!(log.interaction_count(), 160);

    let bundle = build_splits(&log, 7).unwrap();
    let (from_memory, _) = common::cycle_dataset(7);
    assert_eq!(bundle.test.len(), from_memory.test.len());

    let hp = HyperParams { embed_dim: 12, feature_dim: 12, heads: 2, blocks: 1, max_len: 7, dropout: 0.1, learning_rate: 3e-3, ..HyperParams::default() };
    let cfg = TrainConfig { epochs: 20, eval_every: 5, validation_negatives: 20, ..TrainConfig::default() };
    let out = train(&bundle, &catalog, &hp, &cfg).unwrap();
    assert_eq!(out.history.iter().filter(|h| h.val_ndcg.is_some()).count(), 4);

    let ckpt = dir.path().join("best.ckpt");
    save_checkpoint(&out.model, &ckpt).unwrap();
    let restored = load_checkpoint(&ckpt).unwrap();

    let protocol = Protocol { negatives: 20, ..Protocol::ranking() };
    let report = |m| evaluate(&ModelScorer { model: m, catalog: &catalog }, &bundle.test, &bundle.users, 30, &protocol).unwrap();
    let a = report(&out.model);
    let b = report(&restored);
    assert_eq!(a, b);
    assert_eq!(a.runs.len(), 5);
    let parsed: RankingReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(parsed, a);
}

#[test]
fn attribute_free_models_ignore_the_catalog_columns() {
    let (bundle, catalog) = common::cycle_dataset(7);
    let bare = catalog.strip_attributes();
    let hp = HyperParams { embed_dim: 6, feature_dim: 6, heads: 1, blocks: 1, max_len: 7, ..HyperParams::default() };
    let cfg = TrainConfig { epochs: 2, eval_every: 0, ..TrainConfig::default() };
    let out = train(&bundle, &bare, &hp, &cfg).unwrap();
    assert_eq!(out.model.dims.attr_dim, 0);
    assert_eq!(out.model.params.get("embed.feature").unwrap().rows(), 6);
    let m: &Matrix = out.model.params.get("embed.item").unwrap();
    assert_eq!(m.shape(), (30, 6));
}
