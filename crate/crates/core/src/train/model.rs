use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ctr::{FeatureStats, HeadInput, PredictionHead, FEATURE_DIM};
use crate::datagen::BehaviorEntry;
use crate::embedding::{multi_hop_on_tape, propagation_matrix, EmbeddingTable};
use crate::error::{Error, Result};
use crate::fusion::{distance_correlation, fuse_behaviors, FusionWeight};
use crate::graph::{HeteroGraph, NodeRef};
use crate::numerics::{ParamId, ParamStore, Segments, SparseMatrix, Tape, Tensor, Var};

use super::config::{derive_seed, ModelConfig};
use super::data::{Example, History};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT_NAME: &str = "fusionrec-model";
const EMBEDDING_STREAM: u64 = 2;
const HEAD_STREAM: u64 = 3;

/// Node counts `(users, keywords, papers)` a model was built for.
pub type NodeCounts = (usize, usize, usize);

/// Base embeddings and head parameters in one store, plus what is needed to
/// rebuild inputs: config, node counts and feature statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub counts: NodeCounts,
    pub stats: FeatureStats,
    pub store: ParamStore,
    embedding: ParamId,
    pub head: PredictionHead,
}

impl Model {
    pub fn init(cfg: &ModelConfig, graph: &HeteroGraph, stats: FeatureStats) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let table = EmbeddingTable::init(
            graph.n_nodes(),
            cfg.d,
            derive_seed(cfg.seed, EMBEDDING_STREAM),
        );
        let embedding = store.register("embedding", table.into_tensor());
        let head = PredictionHead::register(
            &mut store,
            cfg.head,
            cfg.d,
            &cfg.hidden,
            derive_seed(cfg.seed, HEAD_STREAM),
        )?;
        Ok(Model {
            config: cfg.clone(),
            counts: (graph.n_users(), graph.n_keywords(), graph.n_papers()),
            stats,
            store,
            embedding,
            head,
        })
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embedding
    }

    pub fn base_embeddings(&self) -> &Tensor {
        self.store.get(self.embedding)
    }

    pub fn check_graph(&self, graph: &HeteroGraph) -> Result<()> {
        let counts = (graph.n_users(), graph.n_keywords(), graph.n_papers());
        if counts != self.counts {
            return Err(Error::contract(format!(
                "model built for {:?} (users, keywords, papers), graph has {counts:?}",
                self.counts
            )));
        }
        Ok(())
    }

    /// The propagation operator this model's config asks for.
    pub fn propagation(&self, graph: &HeteroGraph) -> Arc<SparseMatrix> {
        Arc::new(propagation_matrix(graph, self.config.neighbor_cap))
    }

    /// Embeddings the variant feeds to the head: enhanced for GNN variants,
    /// base otherwise.
    pub fn node_embeddings(&self, store: &ParamStore, matrix: &SparseMatrix) -> Tensor {
        let e0 = store.get(self.embedding);
        if !self.config.variant.uses_gnn() {
            return e0.clone();
        }
        let mut sum = e0.clone();
        let mut cur = e0.clone();
        for _ in 0..self.config.layers {
            cur = matrix.mul_dense(&cur);
            sum.axpy(1.0, &cur);
        }
        sum
    }

    /// Records the variant's node embeddings on a tape.
    pub fn embed_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        matrix: &Arc<SparseMatrix>,
    ) -> Var {
        let e0 = tape.param(store, self.embedding);
        if self.config.variant.uses_gnn() {
            multi_hop_on_tape(tape, e0, matrix, self.config.layers)
        } else {
            e0
        }
    }
}

/// Where node embedding rows come from when assembling a batch.
#[derive(Clone, Copy)]
pub enum RowSource<'a> {
    /// A node-embedding matrix recorded on the tape (training).
    Tape(Var),
    /// Precomputed node embeddings, entered as constants (scoring).
    Cached(&'a Tensor),
}

impl RowSource<'_> {
    fn rows(&self, tape: &mut Tape, ids: Vec<usize>) -> Var {
        match self {
            RowSource::Tape(v) => tape.gather_rows(*v, Arc::new(ids)),
            RowSource::Cached(t) => {
                let d = t.cols();
                let mut data = Vec::with_capacity(ids.len() * d);
                for &i in &ids {
                    data.extend_from_slice(t.row(i));
                }
                tape.constant(Tensor::matrix(ids.len(), d, data))
            }
        }
    }
}

/// How the fusion weight is obtained for each example.
#[derive(Clone, Copy, Debug)]
pub enum GammaMode<'a> {
    /// From the current user and keyword embeddings.
    Dynamic,
    /// Supplied per example.
    Fixed(&'a [f64]),
}

/// Head inputs for a batch plus what was derived along the way.
pub struct Assembled {
    pub input: HeadInput,
    pub gammas: Vec<f64>,
    /// Behavior papers per example, in slot order.
    pub behaviors: Vec<Vec<usize>>,
}

/// Merges two most-recent-first sequences by `(ts, record)`, drops repeated
/// records and keeps the `l_h` most recent papers.
pub fn union_behaviors(h_u: &[BehaviorEntry], h_k: &[BehaviorEntry], l_h: usize) -> Vec<usize> {
    let mut all: Vec<&BehaviorEntry> = h_u.iter().chain(h_k).collect();
    all.sort_by_key(|e| std::cmp::Reverse((e.ts, e.record)));
    all.dedup_by_key(|e| e.record);
    all.iter().take(l_h).map(|e| e.paper).collect()
}

fn papers(seq: &[BehaviorEntry]) -> Vec<usize> {
    seq.iter().map(|e| e.paper).collect()
}

/// Builds head inputs for `examples` according to the model's variant.
pub fn assemble_batch(
    model: &Model,
    tape: &mut Tape,
    source: RowSource<'_>,
    graph: &HeteroGraph,
    history: &History,
    examples: &[&Example],
    gamma: GammaMode<'_>,
) -> Result<Assembled> {
    let n = examples.len();
    if n == 0 {
        return Err(Error::contract("empty batch"));
    }
    let cfg = &model.config;
    let gid = |node| graph.global_id(node);
    let users = source.rows(
        tape,
        examples
            .iter()
            .map(|e| gid(NodeRef::user(e.user)))
            .collect(),
    );
    let keywords = source.rows(
        tape,
        examples
            .iter()
            .map(|e| gid(NodeRef::keyword(e.keyword)))
            .collect(),
    );
    let paper = source.rows(
        tape,
        examples
            .iter()
            .map(|e| gid(NodeRef::paper(e.paper)))
            .collect(),
    );

    let gammas = match gamma {
        GammaMode::Fixed(g) if g.len() == n => {
            g.iter().map(|&v| FusionWeight::new(v).value()).collect()
        }
        GammaMode::Fixed(g) => {
            return Err(Error::contract(format!(
                "{} fusion weights for {n} examples",
                g.len()
            )))
        }
        GammaMode::Dynamic => {
            let (u, k) = (tape.value(users), tape.value(keywords));
            (0..n)
                .map(|i| distance_correlation(u.row(i), k.row(i)).map(FusionWeight::value))
                .collect::<Result<Vec<f64>>>()?
        }
    };

    let query = if cfg.variant.uses_fusion() {
        let g = tape.constant(Tensor::column(gammas.clone()));
        let og = tape.constant(Tensor::column(gammas.iter().map(|g| 1.0 - g).collect()));
        let a = tape.scale_rows(users, g);
        let b = tape.scale_rows(keywords, og);
        tape.add(a, b)
    } else {
        tape.add(users, keywords)
    };

    let mut behaviors = Vec::with_capacity(n);
    for (e, &g) in examples.iter().zip(&gammas) {
        let (hu, hk) = (history.user(e.user), history.keyword(e.keyword));
        let seq = if cfg.variant.uses_fusion() {
            fuse_behaviors(&papers(hu), &papers(hk), FusionWeight::new(g), cfg.l_h)?
                .papers()
                .collect()
        } else {
            union_behaviors(hu, hk, cfg.l_h)
        };
        behaviors.push(seq);
    }
    let lengths: Vec<usize> = behaviors.iter().map(Vec::len).collect();
    let rows: Vec<usize> = behaviors
        .iter()
        .flatten()
        .map(|&p| gid(NodeRef::paper(p)))
        .collect();
    let behavior_rows = (!rows.is_empty()).then(|| source.rows(tape, rows));
    let features = tape.constant(Tensor::matrix(
        n,
        FEATURE_DIM,
        examples.iter().flat_map(|e| e.features).collect(),
    ));
    Ok(Assembled {
        input: HeadInput {
            query,
            paper,
            behaviors: behavior_rows,
            segments: Arc::new(Segments::from_lengths(&lengths)),
            features,
        },
        gammas,
        behaviors,
    })
}

/// A recorded forward pass over one batch.
pub struct BatchForward {
    pub tape: Tape,
    pub preds: Var,
    pub loss: Var,
    pub gammas: Vec<f64>,
}

impl BatchForward {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }

    pub fn predictions(&self) -> &[f64] {
        self.tape.value(self.preds).data()
    }
}

/// Embedding, propagation, fusion, head and loss for one batch, all on a
/// fresh tape, reading parameters from `store`.
pub fn forward_batch(
    model: &Model,
    store: &ParamStore,
    graph: &HeteroGraph,
    matrix: &Arc<SparseMatrix>,
    history: &History,
    examples: &[&Example],
    gamma: GammaMode<'_>,
) -> Result<BatchForward> {
    let mut tape = Tape::new();
    let nodes = model.embed_on_tape(&mut tape, store, matrix);
    let a = assemble_batch(
        model,
        &mut tape,
        RowSource::Tape(nodes),
        graph,
        history,
        examples,
        gamma,
    )?;
    let preds = model.head.forward(&mut tape, store, &a.input)?;
    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let loss = crate::ctr::logloss_on_tape(&mut tape, preds, &labels)?;
    Ok(BatchForward {
        tape,
        preds,
        loss,
        gammas: a.gammas,
    })
}

/// Scores `examples` in batches of `eval_batch_size` from precomputed node
/// embeddings; returns click probabilities and fusion weights.
pub fn score_examples(
    model: &Model,
    node_embeddings: &Tensor,
    graph: &HeteroGraph,
    history: &History,
    examples: &[Example],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut scores = Vec::with_capacity(examples.len());
    let mut gammas = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(model.config.eval_batch_size) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let mut tape = Tape::new();
        let a = assemble_batch(
            model,
            &mut tape,
            RowSource::Cached(node_embeddings),
            graph,
            history,
            &refs,
            GammaMode::Dynamic,
        )?;
        let out = model.head.forward(&mut tape, &model.store, &a.input)?;
        tape.check_finite()?;
        scores.extend_from_slice(tape.value(out).data());
        gammas.extend(a.gammas);
    }
    Ok((scores, gammas))
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: Model,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT_NAME.into(),
        version: CHECKPOINT_FORMAT_VERSION,
        model: model.clone(),
    };
    fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file: CheckpointFile = serde_json::from_slice(&fs::read(path)?)?;
    if file.format != CHECKPOINT_FORMAT_NAME || file.version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "expected {CHECKPOINT_FORMAT_NAME} v{CHECKPOINT_FORMAT_VERSION}, found {} v{}",
            file.format, file.version
        )));
    }
    file.model.config.validate()?;
    Ok(file.model)
}
