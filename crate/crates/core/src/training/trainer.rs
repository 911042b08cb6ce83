use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{add_l2_gradient, l2_penalty_of, note_if_all_masked};
use super::{adam_step, OptimizerState, TrainConfig, TrainingError};
use crate::data::{derive_rng, sample_negatives, ItemCatalog, SplitBundle, TrainingExample, CONTEXT_DIM};
use crate::evaluation::{evaluate_run, MetricSet, ModelScorer, Protocol};
use crate::model::{HyperParams, Model, ModelDims, Network, TargetSplit};
use crate::numerics::{Matrix, Objective, Var};

const NEGATIVE_STREAM: u64 = 0x4e00_0000;
const DROPOUT_STREAM: u64 = 0xd900_0000;
const SHUFFLE_STREAM: u64 = 0x5f00_0000;

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_hr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_ndcg: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best model by validation NDCG@10, or the final one without validation.
    pub model: Model,
    pub final_model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn target_mask(ex: &TrainingExample, split: TargetSplit) -> Vec<bool> {
    match split {
        TargetSplit::ListWise => ex.mask.clone(),
        TargetSplit::SingleTarget => {
            let mut mask = vec![false; ex.mask.len()];
            if let Some(last) = ex.mask.iter().rposition(|m| *m) {
                mask[last] = true;
            }
            mask
        }
    }
}

/// Records the loss of one training example on `net`.
fn example_loss(net: &mut Network<'_>, model: &Model, catalog: &ItemCatalog, ex: &TrainingExample) -> Result<Var, TrainingError> {
    let mask = target_mask(ex, model.hp.target_split);
    note_if_all_masked(&mask);
    let profile = model.input(&ex.profile_items, &ex.profile_ctx, catalog)?;
    let positives = model.input(&ex.positives, &ex.target_ctx, catalog)?;
    let negatives = model.input(&ex.negatives, &ex.target_ctx, catalog)?;
    if positives.ctx != negatives.ctx {
        return Err(TrainingError::ContextMismatch { user: ex.user });
    }
    let profile_mask = profile.mask();
    let e_p = net.embed_profile(&profile)?;
    let f_p = net.encode_profile(e_p, &profile_mask)?;
    let e_pos = net.embed(&positives)?;
    let s_pos = net.score(e_pos, &positives.mask(), f_p, &profile_mask)?;
    let e_neg = net.embed(&negatives)?;
    let s_neg = net.score(e_neg, &negatives.mask(), f_p, &profile_mask)?;
    Ok(net.tape_mut().bce(s_pos, s_neg, &mask)?)
}

/// Data loss and gradients over `batch` with `tensors` as parameters,
/// summed in batch order. `dropout` gives the per-example dropout seed.
fn batch_loss_and_gradients(
    model: &Model,
    tensors: &[Matrix],
    catalog: &ItemCatalog,
    batch: &[TrainingExample],
    dropout: Option<(u64, u64)>,
) -> Result<(f64, Vec<Matrix>), TrainingError> {
    let per_example = batch
        .par_iter()
        .map(|ex| {
            let rng = dropout.map(|(seed, stream)| derive_rng(seed, stream, ex.user as u64));
            let mut net = Network::new(&model.hp, model.dims, &model.layout, tensors, rng)?;
            let loss = example_loss(&mut net, model, catalog, ex)?;
            let value = net.value(loss).item()?;
            Ok((value, net.backward(loss)?))
        })
        .collect::<Result<Vec<_>, TrainingError>>()?;
    let mut total = 0.0;
    let mut grads: Vec<Matrix> = tensors.iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
    for (loss, g) in per_example {
        total += loss;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.accumulate(gi)?;
        }
    }
    Ok((total, grads))
}

/// One optimizer update on `batch`; returns data loss plus L2 penalty.
/// Negatives must already be sampled.
pub fn train_step(
    model: &mut Model,
    state: &mut OptimizerState,
    catalog: &ItemCatalog,
    batch: &[TrainingExample],
    dropout_seed: (u64, u64),
) -> Result<f64, TrainingError> {
    let dropout = (model.hp.dropout > 0.0).then_some(dropout_seed);
    let (loss, mut grads) = batch_loss_and_gradients(model, model.params.tensors(), catalog, batch, dropout)?;
    let (tensors, kinds) = (model.params.tensors(), model.params.kinds());
    let penalty = l2_penalty_of(tensors, kinds, model.hp.l2_weight);
    add_l2_gradient(&mut grads, tensors, kinds, model.hp.l2_weight);
    let lr = model.hp.learning_rate;
    adam_step(&mut model.params, &grads, state, lr)?;
    Ok(loss + penalty)
}

/// Total loss (data plus L2) of a fixed set of examples as a function of
/// the parameter tensors, with dropout off. Used for gradient checks.
pub struct LossObjective<'a> {
    pub model: &'a Model,
    pub catalog: &'a ItemCatalog,
    pub examples: &'a [TrainingExample],
}

impl Objective for LossObjective<'_> {
    fn value(&self, params: &[Matrix]) -> Result<f64, crate::numerics::NumericsError> {
        self.gradient_and_value(params).map(|(v, _)| v)
    }

    fn gradient(&self, params: &[Matrix]) -> Result<Vec<Matrix>, crate::numerics::NumericsError> {
        self.gradient_and_value(params).map(|(_, g)| g)
    }
}

impl LossObjective<'_> {
    fn gradient_and_value(&self, params: &[Matrix]) -> Result<(f64, Vec<Matrix>), crate::numerics::NumericsError> {
        let (loss, mut grads) = batch_loss_and_gradients(self.model, params, self.catalog, self.examples, None).map_err(|e| match e {
            TrainingError::Numerics(n) => n,
            other => panic!("loss objective failed: {other}"),
        })?;
        let kinds = self.model.params.kinds();
        add_l2_gradient(&mut grads, params, kinds, self.model.hp.l2_weight);
        Ok((loss + l2_penalty_of(params, kinds, self.model.hp.l2_weight), grads))
    }
}

/// Model dimensions for a bundle whose inputs come from `catalog`.
pub fn dims_for(catalog: &ItemCatalog) -> ModelDims {
    ModelDims { num_items: catalog.item_count(), attr_dim: catalog.attr_dim(), ctx_dim: CONTEXT_DIM }
}

pub fn train(bundle: &SplitBundle, catalog: &ItemCatalog, hp: &HyperParams, cfg: &TrainConfig) -> Result<TrainOutcome, TrainingError> {
    train_with(bundle, catalog, hp, cfg, &mut |_| {})
}

/// Trains from a fresh initialisation seeded by `cfg.seed`, calling
/// `observer` after every epoch.
pub fn train_with(
    bundle: &SplitBundle,
    catalog: &ItemCatalog,
    hp: &HyperParams,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainingError> {
    cfg.validate()?;
    if bundle.train.is_empty() {
        return Err(TrainingError::Config("no training examples".into()));
    }
    if bundle.max_len != hp.max_len {
        return Err(TrainingError::Config(format!("split built with max_len {} but model uses {}", bundle.max_len, hp.max_len)));
    }
    let mut model = Model::init(hp.clone(), dims_for(catalog), cfg.seed)?;
    let mut state = OptimizerState::new(&model.params);
    let item_count = catalog.item_count();
    let protocol = Protocol { k: 10, negatives: cfg.validation_negatives, seeds: vec![cfg.validation_seed], metrics: MetricSet::Ranking };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..bundle.train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let last_good = model.clone();
        let diverged = |reason: String, last_good: Model| TrainingError::Diverged { epoch, reason, last_good: Box::new(last_good) };

        let mut examples = bundle.train.clone();
        for ex in &mut examples {
            let mut rng = derive_rng(cfg.seed, NEGATIVE_STREAM + epoch as u64, ex.user as u64);
            sample_negatives(ex, item_count, &bundle.users[ex.user].interacted, &mut rng)?;
        }
        order.shuffle(&mut derive_rng(cfg.seed, SHUFFLE_STREAM, epoch as u64));

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainingExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let loss = match train_step(&mut model, &mut state, catalog, &batch, (cfg.seed, DROPOUT_STREAM + epoch as u64)) {
                Err(e @ TrainingError::NonFiniteGradient { .. }) => return Err(diverged(e.to_string(), last_good)),
                other => other?,
            };
            epoch_loss += loss;
        }
        if !epoch_loss.is_finite() || !model.params.is_finite() {
            return Err(diverged(format!("loss {epoch_loss}"), last_good));
        }

        let mut record = EpochRecord { epoch, loss: epoch_loss, val_hr: None, val_ndcg: None, seconds: 0.0 };
        if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !bundle.validation.is_empty() {
            let scorer = ModelScorer { model: &model, catalog };
            let run = evaluate_run(&scorer, &bundle.validation, &bundle.users, item_count, &protocol, cfg.validation_seed)?;
            record.val_hr = run.hr;
            record.val_ndcg = Some(run.ndcg);
            if best.as_ref().is_none_or(|(score, _, _)| run.ndcg > *score) {
                best = Some((run.ndcg, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        record.seconds = started.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: loss {epoch_loss:.4}");
        observer(&record);
        history.push(record);
        if cfg.patience > 0 && stale >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, chosen) = match best {
        Some((_, epoch, m)) => (Some(epoch), m),
        None => (None, model.clone()),
    };
    Ok(TrainOutcome { model: chosen, final_model: model, history, best_epoch, stopped_early })
}
