//! Base node embeddings and relation-wise mean propagation.
//!
//! Rows follow the graph's global layout (users, then keywords, then papers).
//! One layer replaces every node by the sum, over its relation types, of the
//! mean of its neighbors in that relation. The enhanced embedding is the sum
//! of layers `0..=L`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeType};
use crate::numerics::{SparseMatrix, Tape, Tensor, Var};

pub const EMBEDDING_FORMAT_VERSION: u32 = 1;
const EMBEDDING_FORMAT_NAME: &str = "fusionrec-embeddings";

/// One trainable `d`-vector per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    values: Tensor,
}

impl EmbeddingTable {
    /// Every coordinate uniform in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn init(n_nodes: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let data = (0..n_nodes * d)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        EmbeddingTable {
            values: Tensor::matrix(n_nodes, d, data),
        }
    }

    pub fn from_tensor(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::contract("embedding table must be a matrix"));
        }
        Ok(EmbeddingTable { values })
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.rows()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }
}

/// The propagation operator as a sparse `n_nodes x n_nodes` matrix.
///
/// With `neighbor_cap = Some(c)` each relation keeps only the first `c`
/// neighbors by index, an approximation meant for stress tests.
pub fn propagation_matrix(g: &HeteroGraph, neighbor_cap: Option<usize>) -> SparseMatrix {
    let n = g.n_nodes();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let node = g.node_at(i);
        let mut row = Vec::new();
        for t in HeteroGraph::relations_of(node.node_type) {
            let other = t.other_side(node.node_type).expect("relation of this type");
            let mut nbrs = g.neighbor_indices(node, t).expect("node in graph");
            if let Some(cap) = neighbor_cap {
                nbrs = &nbrs[..nbrs.len().min(cap)];
            }
            if nbrs.is_empty() {
                continue;
            }
            let w = 1.0 / nbrs.len() as f64;
            let base = offset(g, other);
            row.extend(nbrs.iter().map(|&j| (base + j, w)));
        }
        rows.push(row);
    }
    SparseMatrix::from_rows(n, rows)
}

fn offset(g: &HeteroGraph, t: NodeType) -> usize {
    match t {
        NodeType::User => 0,
        NodeType::Keyword => g.n_users(),
        NodeType::Paper => g.n_users() + g.n_keywords(),
    }
}

fn check_rows(g: &HeteroGraph, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.rows() != g.n_nodes() {
        return Err(Error::contract(format!(
            "embeddings of shape {:?} do not cover the {} graph nodes",
            x.shape(),
            g.n_nodes()
        )));
    }
    Ok(())
}

/// One propagation layer over all nodes.
pub fn propagate_layer(g: &HeteroGraph, prev: &Tensor) -> Result<Tensor> {
    check_rows(g, prev)?;
    Ok(propagation_matrix(g, None).mul_dense(prev))
}

/// Cached layers `e^(0) ..= e^(L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    layers: Vec<Tensor>,
}

impl LayerStack {
    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, l: usize) -> &Tensor {
        &self.layers[l]
    }

    /// Sum over all cached layers.
    pub fn enhanced(&self) -> Tensor {
        let mut out = self.layers[0].clone();
        for l in &self.layers[1..] {
            out.axpy(1.0, l);
        }
        out
    }
}

pub fn layer_stack(g: &HeteroGraph, table: &EmbeddingTable, layers: usize) -> Result<LayerStack> {
    check_rows(g, table.tensor())?;
    let m = propagation_matrix(g, None);
    let mut out = vec![table.tensor().clone()];
    for _ in 0..layers {
        let next = m.mul_dense(out.last().expect("layer 0"));
        out.push(next);
    }
    Ok(LayerStack { layers: out })
}

/// Enhanced embeddings `e* = sum_{l=0..L} e^(l)` for every node.
pub fn multi_hop_embed(g: &HeteroGraph, table: &EmbeddingTable, layers: usize) -> Result<Tensor> {
    Ok(layer_stack(g, table, layers)?.enhanced())
}

/// Records multi-hop propagation of `e0` on a tape.
pub fn multi_hop_on_tape(
    tape: &mut Tape,
    e0: Var,
    matrix: &Arc<SparseMatrix>,
    layers: usize,
) -> Var {
    let mut sum = e0;
    let mut cur = e0;
    for _ in 0..layers {
        cur = tape.aggregate(cur, Arc::clone(matrix));
        sum = tape.add(sum, cur);
    }
    sum
}

#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    format: String,
    version: u32,
    d: usize,
    users: usize,
    keywords: usize,
    papers: usize,
    values: Vec<f64>,
}

/// Writes `table` with its dimension and per-type node counts.
pub fn save_embeddings(g: &HeteroGraph, table: &EmbeddingTable, path: &Path) -> Result<()> {
    check_rows(g, table.tensor())?;
    let file = EmbeddingFile {
        format: EMBEDDING_FORMAT_NAME.into(),
        version: EMBEDDING_FORMAT_VERSION,
        d: table.d(),
        users: g.n_users(),
        keywords: g.n_keywords(),
        papers: g.n_papers(),
        values: table.tensor().data().to_vec(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.flush()?;
    Ok(())
}

/// Reads an embedding file; returns `(users, keywords, papers)` with the table.
pub fn load_embeddings(path: &Path) -> Result<((usize, usize, usize), EmbeddingTable)> {
    let file: EmbeddingFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format != EMBEDDING_FORMAT_NAME || file.version != EMBEDDING_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "expected {EMBEDDING_FORMAT_NAME} v{EMBEDDING_FORMAT_VERSION}, found {} v{}",
            file.format, file.version
        )));
    }
    let n = file.users + file.keywords + file.papers;
    let values = Tensor::new(vec![n, file.d], file.values)
        .map_err(|e| Error::Format(format!("embedding values: {e}")))?;
    Ok((
        (file.users, file.keywords, file.papers),
        EmbeddingTable { values },
    ))
}
