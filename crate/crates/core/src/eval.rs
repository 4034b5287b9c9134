//! AUC and log loss reports, the fusion-weight scenario test and the
//! in-process latency benchmark.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctr::{encode_features, logloss};
use crate::datagen::Scenario;
use crate::error::{Error, Result};
use crate::train::{score_examples, Example, Model, Prepared};

/// Probability that a random positive outscores a random negative, ties
/// counting one half, from midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numerical("auc", "NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled midranks keeps everything integral.
    let mut pos_rank2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, midrank * 2 = i + j + 2
        let mid2 = (i + j + 2) as u128;
        for &k in &idx[i..=j] {
            if labels[k] == 1 {
                pos_rank2 += mid2;
            }
        }
        i = j + 1;
    }
    let p = n_pos as u128;
    let u2 = pos_rank2 - p * (p + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub logloss: f64,
    pub n_examples: usize,
}

pub fn metrics_report(scores: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        auc: auc(scores, labels)?,
        logloss: logloss(scores, labels)?,
        n_examples: labels.len(),
    })
}

/// Scores and fusion weights for `examples` under `model`.
pub fn score(
    model: &Model,
    prepared: &Prepared,
    examples: &[Example],
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_graph(&prepared.graph)?;
    let matrix = model.propagation(&prepared.graph);
    let nodes = model.node_embeddings(&model.store, &matrix);
    score_examples(model, &nodes, &prepared.graph, &prepared.history, examples)
}

/// AUC and log loss over the test split.
pub fn evaluate(model: &Model, prepared: &Prepared) -> Result<MetricsReport> {
    let (scores, _) = score(model, prepared, &prepared.test)?;
    let labels: Vec<u8> = prepared.test.iter().map(|e| e.label).collect();
    metrics_report(&scores, &labels)
}

/// Scenario of a fusion weight: `[0.5, 1]` S1, `[0.1, 0.5)` S2, `[0, 0.1)` S3.
pub fn scenario_bin(gamma: f64) -> Scenario {
    if gamma >= 0.5 {
        Scenario::S1
    } else if gamma >= 0.1 {
        Scenario::S2
    } else {
        Scenario::S3
    }
}

pub fn bin_bounds(s: Scenario) -> (f64, f64) {
    match s {
        Scenario::S1 => (0.5, 1.0),
        Scenario::S2 => (0.1, 0.5),
        Scenario::S3 => (0.0, 0.1),
    }
}

/// How fusion weights are turned into bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinMode {
    /// Each example by its own weight.
    PerExample,
    /// Consecutive test batches of this size by their mean weight.
    Batch(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub scenario: Scenario,
    pub n_examples: usize,
    /// Share of all test examples.
    pub share: f64,
    /// `None` when the bin is empty or single-class.
    pub metrics: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub bins: Vec<BinReport>,
    /// Bin of every test example, in test order.
    pub assignment: Vec<Scenario>,
    pub gammas: Vec<f64>,
}

pub const SCENARIO_HEADER: &str = "bin,gamma_lo,gamma_hi,n_examples,share,auc,logloss,defined";

impl ScenarioReport {
    /// Max minus min AUC over defined bins; `None` with fewer than two.
    pub fn auc_spread(&self) -> Option<f64> {
        let aucs: Vec<f64> = self
            .bins
            .iter()
            .filter_map(|b| b.metrics.map(|m| m.auc))
            .collect();
        if aucs.len() < 2 {
            return None;
        }
        let max = aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = aucs.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SCENARIO_HEADER);
        out.push('\n');
        for b in &self.bins {
            let (lo, hi) = bin_bounds(b.scenario);
            let (auc, ll) = match b.metrics {
                Some(m) => (m.auc.to_string(), m.logloss.to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(
                out,
                "{},{lo},{hi},{},{},{auc},{ll},{}",
                b.scenario,
                b.n_examples,
                b.share,
                b.metrics.is_some()
            )
            .unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("bin  gamma        share   n       AUC     LogLoss\n");
        for b in &self.bins {
            let (lo, hi) = bin_bounds(b.scenario);
            let range = format!(
                "[{lo},{hi}{}",
                if b.scenario == Scenario::S1 { "]" } else { ")" }
            );
            let (auc, ll) = match b.metrics {
                Some(m) => (format!("{:.4}", m.auc), format!("{:.4}", m.logloss)),
                None => ("undef".to_string(), "undef".to_string()),
            };
            writeln!(
                out,
                "{:<4} {:<12} {:<7.3} {:<7} {:<7} {}",
                b.scenario.to_string(),
                range,
                b.share,
                b.n_examples,
                auc,
                ll
            )
            .unwrap();
        }
        out
    }
}

/// Bins scored examples by fusion weight and reports metrics per bin.
pub fn scenario_report(
    scores: &[f64],
    labels: &[u8],
    gammas: &[f64],
    mode: BinMode,
) -> Result<ScenarioReport> {
    let n = scores.len();
    if labels.len() != n || gammas.len() != n {
        return Err(Error::contract(
            "scores, labels and weights differ in length",
        ));
    }
    if n == 0 {
        return Err(Error::contract("scenario test on an empty test set"));
    }
    let assignment: Vec<Scenario> = match mode {
        BinMode::PerExample => gammas.iter().map(|&g| scenario_bin(g)).collect(),
        BinMode::Batch(0) => return Err(Error::contract("batch size must be positive")),
        BinMode::Batch(size) => gammas
            .chunks(size)
            .flat_map(|c| {
                let mean = c.iter().sum::<f64>() / c.len() as f64;
                std::iter::repeat_n(scenario_bin(mean), c.len())
            })
            .collect(),
    };
    let bins = Scenario::ALL
        .iter()
        .map(|&s| {
            let idx: Vec<usize> = (0..n).filter(|&i| assignment[i] == s).collect();
            let sc: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let lb: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let metrics = if idx.is_empty() {
                None
            } else {
                metrics_report(&sc, &lb).ok()
            };
            BinReport {
                scenario: s,
                n_examples: idx.len(),
                share: idx.len() as f64 / n as f64,
                metrics,
            }
        })
        .collect();
    Ok(ScenarioReport {
        bins,
        assignment,
        gammas: gammas.to_vec(),
    })
}

/// Per-bin metrics of the test split, weights from the model's own node
/// embeddings (enhanced for GNN variants, base otherwise).
pub fn scenario_test(model: &Model, prepared: &Prepared, mode: BinMode) -> Result<ScenarioReport> {
    let (scores, gammas) = score(model, prepared, &prepared.test)?;
    let labels: Vec<u8> = prepared.test.iter().map(|e| e.label).collect();
    scenario_report(&scores, &labels, &gammas, mode)
}

/// Share of test examples whose bin matches the generator's scenario tag.
pub fn scenario_agreement(report: &ScenarioReport, prepared: &Prepared) -> Option<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (e, s) in prepared.test.iter().zip(&report.assignment) {
        if let Some(truth) = prepared.scenarios.get(&e.record) {
            total += 1;
            hit += usize::from(truth == s);
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub candidates: usize,
    pub concurrency: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn summarize(
    mut samples_ms: Vec<f64>,
    candidates: usize,
    concurrency: usize,
) -> LatencySummary {
    samples_ms.sort_by(f64::total_cmp);
    let n = samples_ms.len();
    LatencySummary {
        samples: n,
        candidates,
        concurrency,
        p50_ms: percentile(&samples_ms, 0.5),
        p95_ms: percentile(&samples_ms, 0.95),
        mean_ms: samples_ms.iter().sum::<f64>() / n as f64,
    }
}

/// Times end-to-end scoring of one (user, keyword) request against
/// `candidates` papers, from cached node embeddings. Requests cycle over the
/// test split's (user, keyword) pairs; candidates are drawn with `seed`.
pub fn latency_benchmark(
    model: &Model,
    prepared: &Prepared,
    n_requests: usize,
    concurrency: usize,
    candidates: usize,
    seed: u64,
) -> Result<LatencySummary> {
    if n_requests < 100 {
        return Err(Error::contract("the benchmark needs at least 100 requests"));
    }
    if concurrency == 0 || candidates == 0 {
        return Err(Error::contract(
            "concurrency and candidate count must be positive",
        ));
    }
    let pool = if prepared.test.is_empty() {
        &prepared.train
    } else {
        &prepared.test
    };
    if pool.is_empty() {
        return Err(Error::contract("no (user, keyword) pairs to benchmark"));
    }
    model.check_graph(&prepared.graph)?;
    let matrix = model.propagation(&prepared.graph);
    let nodes = model.node_embeddings(&model.store, &matrix);
    let papers: Vec<usize> = (0..prepared.graph.n_papers()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let requests: Vec<Vec<Example>> = (0..n_requests)
        .map(|r| {
            let q = &pool[r % pool.len()];
            (0..candidates)
                .map(|_| {
                    let &paper = papers.choose(&mut rng).expect("papers");
                    Example {
                        record: q.record,
                        user: q.user,
                        keyword: q.keyword,
                        paper,
                        label: 0,
                        features: encode_features(&prepared.features[paper], &model.stats),
                    }
                })
                .collect()
        })
        .collect();
    let next = AtomicUsize::new(0);
    let samples = Mutex::new(Vec::with_capacity(n_requests));
    let failure = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..concurrency {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let start = Instant::now();
                let res = score_examples(
                    model,
                    &nodes,
                    &prepared.graph,
                    &prepared.history,
                    &requests[i],
                );
                let ms = start.elapsed().as_secs_f64() * 1e3;
                match res {
                    Ok(_) => samples.lock().unwrap().push(ms),
                    Err(e) => {
                        *failure.lock().unwrap() = Some(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(summarize(
        samples.into_inner().unwrap(),
        candidates,
        concurrency,
    ))
}
