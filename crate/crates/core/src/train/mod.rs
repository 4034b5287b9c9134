//! Batch assembly per ablation variant, Adam, the training loop and model
//! checkpoints.

mod adam;
mod config;
mod data;
mod model;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use config::{derive_seed, ModelConfig, Variant};
pub use data::{prepare, Example, History, Prepared, SPLIT_STREAM};
pub use model::{
    assemble_batch, forward_batch, load_checkpoint, save_checkpoint, score_examples,
    union_behaviors, Assembled, BatchForward, GammaMode, Model, NodeCounts, RowSource,
    CHECKPOINT_FORMAT_VERSION,
};

use crate::ctr::logloss;
use crate::error::{Error, Result};
use crate::eval::auc;

const SHUFFLE_STREAM: u64 = 1000;

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_auc: f64,
    pub test_logloss: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,test_auc,test_logloss";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.epoch, r.train_loss, r.test_auc, r.test_logloss
        )
        .unwrap();
    }
    out
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the best test AUC (the initialization
    /// when no epoch ran).
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub metrics: Vec<EpochMetrics>,
}

/// Test AUC and log loss of `model` on `prepared.test`.
pub fn test_metrics(model: &Model, prepared: &Prepared) -> Result<(f64, f64)> {
    let matrix = model.propagation(&prepared.graph);
    let nodes = model.node_embeddings(&model.store, &matrix);
    let (scores, _) = score_examples(
        model,
        &nodes,
        &prepared.graph,
        &prepared.history,
        &prepared.test,
    )?;
    let labels: Vec<u8> = prepared.test.iter().map(|e| e.label).collect();
    Ok((auc(&scores, &labels)?, logloss(&scores, &labels)?))
}

/// Trains a freshly initialized model.
pub fn train(cfg: &ModelConfig, prepared: &Prepared) -> Result<TrainOutcome> {
    let model = Model::init(cfg, &prepared.graph, prepared.stats)?;
    train_from(model, prepared)
}

/// Seeded shuffled mini-batches, Adam on the batch log loss, test metrics
/// after every epoch, best-by-test-AUC selection.
pub fn train_from(mut model: Model, prepared: &Prepared) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    model.check_graph(&prepared.graph)?;
    if prepared.train.is_empty() {
        return Err(Error::contract("no training examples"));
    }
    let matrix = model.propagation(&prepared.graph);
    let mut adam = AdamState::new(&model.store);
    let mut best = model.clone();
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..prepared.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |detail: String| Error::Divergence {
                epoch,
                step,
                detail,
            };
            let batch: Vec<&Example> = chunk.iter().map(|&i| &prepared.train[i]).collect();
            let fw = forward_batch(
                &model,
                &model.store,
                &prepared.graph,
                &matrix,
                &prepared.history,
                &batch,
                GammaMode::Dynamic,
            )?;
            fw.tape
                .check_finite()
                .map_err(|e| diverged(e.to_string()))?;
            let loss = fw.loss_value();
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss}")));
            }
            let grads = fw
                .tape
                .backward(fw.loss, &model.store)
                .map_err(|e| diverged(e.to_string()))?;
            adam_step(&mut adam, &mut model.store, &grads, cfg.learning_rate)
                .map_err(|e| diverged(e.to_string()))?;
            total += loss * batch.len() as f64;
        }
        let (test_auc, test_logloss) = test_metrics(&model, prepared)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss: total / prepared.train.len() as f64,
            test_auc,
            test_logloss,
        });
        if test_auc > best_auc {
            best_auc = test_auc;
            best = model.clone();
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, GenConfig};

    fn tiny() -> (ModelConfig, Prepared) {
        let gen = GenConfig {
            users: 60,
            papers: 200,
            vocab_target: 100,
            topics: 8,
            window_sessions: 60,
            sessions: 60,
            ..Default::default()
        };
        let cfg = ModelConfig {
            d: 8,
            l_h: 10,
            hidden: vec![8, 4],
            batch_size: 32,
            epochs: 2,
            learning_rate: 0.01,
            ..Default::default()
        };
        let p = prepare(&generate_dataset(&gen).unwrap(), &cfg).unwrap();
        (cfg, p)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (mut cfg, p) = tiny();
        cfg.epochs = 0;
        let out = train(&cfg, &p).unwrap();
        let init = Model::init(&cfg, &p.graph, p.stats).unwrap();
        assert_eq!(out.best.store, init.store);
        assert!(out.metrics.is_empty());
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn runs_are_reproducible() {
        let (cfg, p) = tiny();
        let a = train(&cfg, &p).unwrap();
        let b = train(&cfg, &p).unwrap();
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
        assert_eq!(a.metrics.len(), 2);
        assert!(metrics_csv(&a.metrics).starts_with(METRICS_HEADER));
    }

    #[test]
    fn checkpoint_round_trip() {
        let (cfg, p) = tiny();
        let m = Model::init(&cfg, &p.graph, p.stats).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(back.config, m.config);
        assert_eq!(
            test_metrics(&back, &p).unwrap(),
            test_metrics(&m, &p).unwrap()
        );
    }

    #[test]
    fn base_query_is_sum() {
        let (mut cfg, p) = tiny();
        cfg.d = 2;
        cfg.variant = Variant::Base;
        let mut m = Model::init(&cfg, &p.graph, p.stats).unwrap();
        let e = p.train[0].clone();
        let id = m.embedding_param();
        let (u, k) = (
            p.graph.global_id(crate::graph::NodeRef::user(e.user)),
            p.graph.global_id(crate::graph::NodeRef::keyword(e.keyword)),
        );
        m.store.get_mut(id).row_mut(u).copy_from_slice(&[1.0, 0.0]);
        m.store.get_mut(id).row_mut(k).copy_from_slice(&[0.0, 1.0]);
        let mut tape = crate::numerics::Tape::new();
        let nodes = tape.param(&m.store, id);
        let a = assemble_batch(
            &m,
            &mut tape,
            RowSource::Tape(nodes),
            &p.graph,
            &p.history,
            &[&e],
            GammaMode::Dynamic,
        )
        .unwrap();
        assert_eq!(tape.value(a.input.query).data(), &[1.0, 1.0]);
    }

    #[test]
    fn union_keeps_most_recent_distinct_records() {
        use crate::datagen::BehaviorEntry;
        let e = |paper, ts, record| BehaviorEntry { paper, ts, record };
        let hu = [e(1, 9, 5), e(2, 4, 2)];
        let hk = [e(1, 9, 5), e(3, 7, 4), e(4, 1, 0)];
        assert_eq!(union_behaviors(&hu, &hk, 10), vec![1, 3, 2, 4]);
        assert_eq!(union_behaviors(&hu, &hk, 2), vec![1, 3]);
    }
}
