#![allow(dead_code)]

use std::sync::Arc;

use fusionrec::datagen::{generate_dataset, GenConfig};
use fusionrec::graph::{build_graph, default_stopwords, HeteroGraph};
use fusionrec::numerics::{
    finite_difference_gradient, ParamStore, Segments, SparseMatrix, Tape, Tensor, Var,
};
use fusionrec::train::{forward_batch, prepare, Example, GammaMode, Model, ModelConfig, Prepared};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, mag: f64) -> Tensor {
    Tensor::matrix(
        r,
        c,
        (0..r * c).map(|_| rng.random_range(-mag..mag)).collect(),
    )
}

/// Max relative error between tape gradients and central differences of
/// `sum(w * build(params))` for a fixed, non-uniform weighting `w`.
pub fn primitive_error<B>(store: &ParamStore, build: B) -> f64
where
    B: Fn(&mut Tape, &ParamStore) -> Var,
{
    let weighted = |t: &mut Tape, s: &ParamStore| {
        let out = build(t, s);
        let shape = t.value(out).shape().to_vec();
        let n = shape.iter().product::<usize>();
        let w: Vec<f64> = (0..n)
            .map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0)
            .collect();
        let wv = t.constant(Tensor::new(shape, w).unwrap());
        let prod = t.mul(out, wv);
        t.sum_all(prod)
    };
    let mut t = Tape::new();
    let loss = weighted(&mut t, store);
    let analytic = t.backward(loss, store).unwrap();
    let fd = finite_difference_gradient(
        |s: &ParamStore| {
            let mut t = Tape::new();
            let l = weighted(&mut t, s);
            Ok(t.value(l).item())
        },
        store,
        1e-5,
    )
    .unwrap();
    analytic.max_relative_error(&fd)
}

/// Worst relative error over every primitive on random inputs of magnitude
/// up to `mag`.
pub fn all_primitives_error(seed: u64, mag: f64) -> Vec<(&'static str, f64)> {
    let mut rng = rng(seed);
    let mut s = ParamStore::new();
    let a = s.register("a", random_matrix(&mut rng, 3, 4, mag));
    let b = s.register("b", random_matrix(&mut rng, 3, 4, mag));
    let m = s.register("m", random_matrix(&mut rng, 4, 2, mag));
    let col = s.register("col", random_matrix(&mut rng, 3, 1, mag));
    let pos = s.register(
        "pos",
        random_matrix(&mut rng, 3, 4, mag).map(|v| v.abs() + 0.5),
    );
    let seg = Arc::new(Segments::from_lengths(&[2, 0, 1]));
    let sp = Arc::new(SparseMatrix::from_rows(
        3,
        vec![vec![(1, 0.5), (2, 0.5)], vec![], vec![(0, 1.0), (2, -2.0)]],
    ));
    // Saturating primitives get inputs rescaled into their sensitive range.
    let unit = 1.0 / mag.max(1.0);
    let mut out = Vec::new();
    let mut check =
        |name, f: &dyn Fn(&mut Tape, &ParamStore) -> Var| out.push((name, primitive_error(&s, f)));
    check("add", &|t, s| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        t.add(x, y)
    });
    check("scale", &|t, s| {
        let x = t.param(s, a);
        t.scale(x, -1.7)
    });
    check("mul", &|t, s| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        t.mul(x, y)
    });
    check("matmul", &|t, s| {
        let (x, w) = (t.param(s, a), t.param(s, m));
        t.matmul(x, w)
    });
    check("concat_cols", &|t, s| {
        let (x, y) = (t.param(s, a), t.param(s, col));
        t.concat_cols(&[x, y])
    });
    check("segment_sum", &|t, s| {
        let x = t.param(s, a);
        t.segment_sum(x, seg.clone())
    });
    check("mean_all", &|t, s| {
        let x = t.param(s, a);
        t.mean_all(x)
    });
    check("sum_all", &|t, s| {
        let x = t.param(s, a);
        t.sum_all(x)
    });
    check("aggregate", &|t, s| {
        let x = t.param(s, a);
        t.aggregate(x, sp.clone())
    });
    check("sigmoid", &|t, s| {
        let x = t.param(s, a);
        t.sigmoid(x)
    });
    check("tanh", &|t, s| {
        let x = t.param(s, a);
        let x = t.scale(x, unit);
        t.tanh(x)
    });
    check("relu", &|t, s| {
        let x = t.param(s, a);
        t.relu(x)
    });
    check("ln", &|t, s| {
        let x = t.param(s, pos);
        t.ln(x)
    });
    check("clip", &|t, s| {
        let x = t.param(s, a);
        t.clip(x, -0.5 * mag, 0.5 * mag)
    });
    check("segment_softmax", &|t, s| {
        let x = t.param(s, col);
        let x = t.scale(x, unit);
        t.segment_softmax(x, seg.clone())
    });
    out
}

/// A random graph with at most 5 users, 5 papers and 8 keywords.
pub fn random_small_graph(rng: &mut ChaCha8Rng) -> HeteroGraph {
    const WORDS: [&str; 8] = [
        "graph",
        "neural",
        "ranking",
        "search",
        "query",
        "fusion",
        "citation",
        "embedding",
    ];
    let n_users = rng.random_range(1..=5);
    let n_papers = rng.random_range(1..=5);
    let titles: Vec<String> = (0..n_papers)
        .map(|_| {
            let n = rng.random_range(0..=3);
            (0..n)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let up: Vec<(usize, usize)> = (0..rng.random_range(0..=8))
        .map(|_| (rng.random_range(0..n_users), rng.random_range(0..n_papers)))
        .collect();
    let uk: Vec<(usize, String)> = (0..rng.random_range(0..=4))
        .map(|_| {
            (
                rng.random_range(0..n_users),
                WORDS[rng.random_range(0..WORDS.len())].to_string(),
            )
        })
        .collect();
    build_graph(n_users, &up, &uk, &titles, default_stopwords()).unwrap()
}

/// Per-node, per-relation recomputation of the propagation layers.
pub fn naive_multi_hop(g: &HeteroGraph, e0: &Tensor, layers: usize) -> Tensor {
    let n = g.n_nodes();
    let d = e0.cols();
    let mut prev: Vec<Vec<f64>> = (0..n).map(|i| e0.row(i).to_vec()).collect();
    let mut total = prev.clone();
    for _ in 0..layers {
        let mut next = vec![vec![0.0; d]; n];
        for (i, out) in next.iter_mut().enumerate() {
            let node = g.node_at(i);
            for t in HeteroGraph::relations_of(node.node_type) {
                let nbrs = g.neighbors(node, t).unwrap();
                if nbrs.is_empty() {
                    continue;
                }
                for c in 0..d {
                    let s: f64 = nbrs.iter().map(|&nb| prev[g.global_id(nb)][c]).sum();
                    out[c] += s / nbrs.len() as f64;
                }
            }
        }
        for (t, x) in total.iter_mut().zip(&next) {
            for (a, b) in t.iter_mut().zip(x) {
                *a += b;
            }
        }
        prev = next;
    }
    Tensor::matrix(n, d, total.into_iter().flatten().collect())
}

/// Distance correlation from the textbook definition: explicit row, column
/// and grand means, `dCor = sqrt(V2(x,y) / sqrt(V2(x,x) V2(y,y)))`.
pub fn dcor_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let centered = |v: &[f64]| -> Vec<Vec<f64>> {
        let a: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..n).map(|k| (v[j] - v[k]).abs()).collect())
            .collect();
        let row: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|k| a[j][k]).sum::<f64>() / n as f64)
            .collect();
        let col: Vec<f64> = (0..n)
            .map(|k| (0..n).map(|j| a[j][k]).sum::<f64>() / n as f64)
            .collect();
        let all: f64 = a.iter().flatten().sum::<f64>() / (n * n) as f64;
        (0..n)
            .map(|j| (0..n).map(|k| a[j][k] - row[j] - col[k] + all).collect())
            .collect()
    };
    let (a, b) = (centered(x), centered(y));
    let v2 = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| {
        let mut s = 0.0;
        for j in 0..n {
            for k in 0..n {
                s += p[j][k] * q[j][k];
            }
        }
        s / (n * n) as f64
    };
    let (xy, xx, yy) = (v2(&a, &b), v2(&a, &a), v2(&b, &b));
    if xx < 1e-12 || yy < 1e-12 {
        return 0.0;
    }
    (xy.max(0.0) / (xx * yy).sqrt()).sqrt().clamp(0.0, 1.0)
}

/// Pair-counting AUC.
pub fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Direct log loss with clipping.
pub fn logloss_oracle(preds: &[f64], labels: &[u8]) -> f64 {
    let mut s = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        let y = y as f64;
        s += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    -s / preds.len() as f64
}

pub fn tiny_gen() -> GenConfig {
    GenConfig {
        users: 40,
        papers: 120,
        vocab_target: 80,
        topics: 8,
        history_clicks: 6,
        window_sessions: 80,
        sessions: 80,
        ..Default::default()
    }
}

pub fn tiny_prepared(cfg: &ModelConfig) -> Prepared {
    prepare(&generate_dataset(&tiny_gen()).unwrap(), cfg).unwrap()
}

/// End-to-end autodiff vs central differences on the first `batch` training
/// examples, with fusion weights frozen at their values for the start point.
pub fn model_gradient_error(cfg: &ModelConfig, prepared: &Prepared, batch: usize) -> f64 {
    let model = Model::init(cfg, &prepared.graph, prepared.stats).unwrap();
    let matrix = model.propagation(&prepared.graph);
    let examples: Vec<&Example> = prepared.train.iter().take(batch).collect();
    let fw = forward_batch(
        &model,
        &model.store,
        &prepared.graph,
        &matrix,
        &prepared.history,
        &examples,
        GammaMode::Dynamic,
    )
    .unwrap();
    let gammas = fw.gammas.clone();
    let analytic = fw.tape.backward(fw.loss, &model.store).unwrap();
    let fd = finite_difference_gradient(
        |s: &ParamStore| {
            let fw = forward_batch(
                &model,
                s,
                &prepared.graph,
                &matrix,
                &prepared.history,
                &examples,
                GammaMode::Fixed(&gammas),
            )?;
            Ok(fw.loss_value())
        },
        &model.store,
        1e-5,
    )
    .unwrap();
    analytic.max_relative_error(&fd)
}
