//! CTR heads over `(query, paper, behaviors, paper features)` and the log loss.
//!
//! Every head pools the real behavior slots of an example into one vector,
//! concatenates `[e_q, e_p, pooled, features]` and runs a ReLU MLP with a
//! sigmoid output. The heads differ in pooling:
//!
//! * `mlp`: mean over real slots.
//! * `attn`: a small network scores `[slot, e_p, slot * e_p]`, softmax over
//!   the real slots of the example, weighted sum.
//! * `gru`: a GRU runs over the real slots from the last slot to the first
//!   (oldest to newest within each source); its final state is gated by
//!   `sigmoid(h W e_p)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::PaperFeatures;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Segments, Tape, Tensor, Var};

/// Predictions are clipped to `[CLIP, 1 - CLIP]` inside the loss.
pub const CLIP: f64 = 1e-7;
pub const FEATURE_DIM: usize = 2;
pub const ATTENTION_HIDDEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Mlp,
    Attn,
    Gru,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Mlp, HeadKind::Attn, HeadKind::Gru];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Mlp => "mlp",
            HeadKind::Attn => "attn",
            HeadKind::Gru => "gru",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(HeadKind::Mlp),
            "attn" => Ok(HeadKind::Attn),
            "gru" => Ok(HeadKind::Gru),
            other => Err(Error::Config(format!("unknown head kind {other:?}"))),
        }
    }
}

/// Training-set statistics for paper features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub log_citation_mean: f64,
    pub log_citation_sd: f64,
    pub year_min: i32,
    pub year_max: i32,
}

impl FeatureStats {
    /// Fits on the papers of the training examples (with multiplicity).
    pub fn fit<'a>(papers: impl IntoIterator<Item = &'a PaperFeatures>) -> Result<Self> {
        let mut logs = Vec::new();
        let (mut lo, mut hi) = (i32::MAX, i32::MIN);
        for f in papers {
            logs.push((f.citations as f64).ln_1p());
            lo = lo.min(f.year);
            hi = hi.max(f.year);
        }
        if logs.is_empty() {
            return Err(Error::contract(
                "feature statistics need at least one paper",
            ));
        }
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(FeatureStats {
            log_citation_mean: mean,
            log_citation_sd: var.sqrt(),
            year_min: lo,
            year_max: hi,
        })
    }
}

/// `[z-score of ln(1 + citations), (year - min) / (max - min)]`; zero
/// spreads map the affected component to 0.
pub fn encode_features(f: &PaperFeatures, stats: &FeatureStats) -> [f64; FEATURE_DIM] {
    let c = if stats.log_citation_sd > 0.0 {
        ((f.citations as f64).ln_1p() - stats.log_citation_mean) / stats.log_citation_sd
    } else {
        0.0
    };
    let span = stats.year_max - stats.year_min;
    let y = if span > 0 {
        (f.year - stats.year_min) as f64 / span as f64
    } else {
        0.0
    };
    [c, y]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn register(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out));
        let b = Tensor::row_vector(draw(fan_out));
        Dense {
            w: store.register(format!("{name}.w"), w),
            b: store.register(format!("{name}.b"), b),
        }
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Gru {
    wz: Dense,
    uz: ParamId,
    wr: Dense,
    ur: ParamId,
    wn: Dense,
    un: ParamId,
    attend: ParamId,
}

/// Registered parameters of one head.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionHead {
    kind: HeadKind,
    d: usize,
    hidden: Vec<usize>,
    layers: Vec<Dense>,
    output: Dense,
    attention: Option<(Dense, Dense)>,
    gru: Option<Gru>,
}

/// Per-batch head inputs. Behavior rows are grouped per example by
/// `segments` and kept in slot order; `behaviors` is `None` when no example
/// has a real slot.
pub struct HeadInput {
    pub query: Var,
    pub paper: Var,
    pub behaviors: Option<Var>,
    pub segments: Arc<Segments>,
    pub features: Var,
}

impl PredictionHead {
    pub fn register(
        store: &mut ParamStore,
        kind: HeadKind,
        d: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if d == 0 || hidden.contains(&0) {
            return Err(Error::Config("head sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = 3 * d + FEATURE_DIM;
        let mut layers = Vec::new();
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::register(
                store,
                &format!("head.mlp{i}"),
                fan_in,
                h,
                &mut rng,
            ));
            fan_in = h;
        }
        let output = Dense::register(store, "head.out", fan_in, 1, &mut rng);
        let attention = (kind == HeadKind::Attn).then(|| {
            (
                Dense::register(store, "head.attn0", 3 * d, ATTENTION_HIDDEN, &mut rng),
                Dense::register(store, "head.attn1", ATTENTION_HIDDEN, 1, &mut rng),
            )
        });
        let gru = (kind == HeadKind::Gru).then(|| {
            let bound = 1.0 / (d as f64).sqrt();
            let square = |store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| {
                let data = (0..d * d)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                store.register(name, Tensor::matrix(d, d, data))
            };
            Gru {
                wz: Dense::register(store, "head.gru.z", d, d, &mut rng),
                uz: square(store, "head.gru.z.u", &mut rng),
                wr: Dense::register(store, "head.gru.r", d, d, &mut rng),
                ur: square(store, "head.gru.r.u", &mut rng),
                wn: Dense::register(store, "head.gru.n", d, d, &mut rng),
                un: square(store, "head.gru.n.u", &mut rng),
                attend: square(store, "head.gru.attend", &mut rng),
            }
        });
        Ok(PredictionHead {
            kind,
            d,
            hidden: hidden.to_vec(),
            layers,
            output,
            attention,
            gru,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// Click probabilities, one row per example.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &HeadInput) -> Result<Var> {
        let batch = tape.value(input.query).rows();
        if input.segments.count() != batch {
            return Err(Error::contract(format!(
                "{} behavior segments for a batch of {batch}",
                input.segments.count()
            )));
        }
        let pooled = match input.behaviors {
            None => tape.constant(Tensor::zeros(vec![batch, self.d])),
            Some(b) => match self.kind {
                HeadKind::Mlp => self.mean_pool(tape, b, &input.segments),
                HeadKind::Attn => self.attention_pool(tape, store, b, input),
                HeadKind::Gru => self.gru_pool(tape, store, b, input),
            },
        };
        let mut x = tape.concat_cols(&[input.query, input.paper, pooled, input.features]);
        for layer in &self.layers {
            let h = layer.apply(tape, store, x);
            x = tape.relu(h);
        }
        let logit = self.output.apply(tape, store, x);
        Ok(tape.sigmoid(logit))
    }

    fn mean_pool(&self, tape: &mut Tape, b: Var, seg: &Arc<Segments>) -> Var {
        let inv: Vec<f64> = (0..seg.count())
            .map(|s| match seg.len_of(s) {
                0 => 0.0,
                n => 1.0 / n as f64,
            })
            .collect();
        let sum = tape.segment_sum(b, Arc::clone(seg));
        let inv = tape.constant(Tensor::column(inv));
        tape.scale_rows(sum, inv)
    }

    fn attention_pool(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        b: Var,
        input: &HeadInput,
    ) -> Var {
        let (a0, a1) = self.attention.as_ref().expect("attention head");
        let target = tape.gather_rows(input.paper, Arc::new(input.segments.owners()));
        let inter = tape.mul(b, target);
        let x = tape.concat_cols(&[b, target, inter]);
        let h = a0.apply(tape, store, x);
        let h = tape.relu(h);
        let scores = a1.apply(tape, store, h);
        let w = tape.segment_softmax(scores, Arc::clone(&input.segments));
        let weighted = tape.scale_rows(b, w);
        tape.segment_sum(weighted, Arc::clone(&input.segments))
    }

    fn gru_pool(&self, tape: &mut Tape, store: &ParamStore, b: Var, input: &HeadInput) -> Var {
        let g = self.gru.as_ref().expect("gru head");
        let seg = &input.segments;
        let batch = seg.count();
        let max_len = (0..batch).map(|s| seg.len_of(s)).max().unwrap_or(0);
        let uz = tape.param(store, g.uz);
        let ur = tape.param(store, g.ur);
        let un = tape.param(store, g.un);
        let mut h = tape.constant(Tensor::zeros(vec![batch, self.d]));
        // Step t reads slot `max_len - 1 - t`, so each example walks its own
        // slots from last to first and all of them finish on slot 0.
        for t in 0..max_len {
            let j = max_len - 1 - t;
            let mut rows = Vec::with_capacity(batch);
            let mut mask = Vec::with_capacity(batch);
            for s in 0..batch {
                let r = seg.range(s);
                if j < r.len() {
                    rows.push(r.start + j);
                    mask.push(1.0);
                } else {
                    rows.push(0);
                    mask.push(0.0);
                }
            }
            let x = tape.gather_rows(b, Arc::new(rows));
            let hz = tape.matmul(h, uz);
            let xz = g.wz.apply(tape, store, x);
            let z = tape.add(xz, hz);
            let z = tape.sigmoid(z);
            let hr = tape.matmul(h, ur);
            let xr = g.wr.apply(tape, store, x);
            let r = tape.add(xr, hr);
            let r = tape.sigmoid(r);
            let rh = tape.mul(r, h);
            let hn = tape.matmul(rh, un);
            let xn = g.wn.apply(tape, store, x);
            let n = tape.add(xn, hn);
            let n = tape.tanh(n);
            // h' = n + z * (h - n); inactive rows keep h.
            let diff = tape.sub(h, n);
            let keep = tape.mul(z, diff);
            let next = tape.add(n, keep);
            let step = tape.sub(next, h);
            let m = tape.constant(Tensor::column(mask));
            let step = tape.scale_rows(step, m);
            h = tape.add(h, step);
        }
        let attend = tape.param(store, g.attend);
        let hw = tape.matmul(h, attend);
        let hwp = tape.mul(hw, input.paper);
        let ones = tape.constant(Tensor::filled(self.d, 1, 1.0));
        let score = tape.matmul(hwp, ones);
        let gate = tape.sigmoid(score);
        tape.scale_rows(h, gate)
    }
}

/// Scores one example. `slots` holds one vector per behavior slot; slots with
/// `mask[i] == false` are ignored.
pub fn predict(
    head: &PredictionHead,
    store: &ParamStore,
    e_q: &[f64],
    e_p: &[f64],
    slots: &[Vec<f64>],
    mask: &[bool],
    features: [f64; FEATURE_DIM],
) -> Result<f64> {
    let d = head.d();
    if e_q.len() != d || e_p.len() != d || slots.len() != mask.len() {
        return Err(Error::contract("predict input sizes do not match the head"));
    }
    let mut rows = Vec::new();
    for (v, &m) in slots.iter().zip(mask) {
        if m {
            if v.len() != d {
                return Err(Error::contract("behavior slot of wrong dimension"));
            }
            rows.extend_from_slice(v);
        }
    }
    let n = rows.len() / d;
    let mut tape = Tape::new();
    let input = HeadInput {
        query: tape.constant(Tensor::row_vector(e_q.to_vec())),
        paper: tape.constant(Tensor::row_vector(e_p.to_vec())),
        behaviors: (n > 0).then(|| tape.constant(Tensor::matrix(n, d, rows))),
        segments: Arc::new(Segments::from_lengths(&[n])),
        features: tape.constant(Tensor::row_vector(features.to_vec())),
    };
    let out = head.forward(&mut tape, store, &input)?;
    tape.check_finite()?;
    Ok(tape.value(out).item())
}

fn check_batch(n_preds: usize, n_labels: usize) -> Result<()> {
    if n_preds != n_labels {
        return Err(Error::contract(format!(
            "{n_preds} predictions for {n_labels} labels"
        )));
    }
    if n_preds == 0 {
        return Err(Error::contract("log loss of an empty batch"));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clipped to `[1e-7, 1 - 1e-7]`.
pub fn logloss(preds: &[f64], labels: &[u8]) -> Result<f64> {
    check_batch(preds.len(), labels.len())?;
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(CLIP, 1.0 - CLIP);
            if y == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-total / preds.len() as f64)
}

/// Records the log loss of a `n x 1` prediction column.
pub fn logloss_on_tape(tape: &mut Tape, preds: Var, labels: &[u8]) -> Result<Var> {
    check_batch(tape.value(preds).len(), labels.len())?;
    let p = tape.clip(preds, CLIP, 1.0 - CLIP);
    let log_p = tape.ln(p);
    let q = tape.affine(p, -1.0, 1.0);
    let log_q = tape.ln(q);
    let y = tape.constant(Tensor::column(labels.iter().map(|&l| l as f64).collect()));
    let not_y = tape.constant(Tensor::column(
        labels.iter().map(|&l| 1.0 - l as f64).collect(),
    ));
    let a = tape.mul(y, log_p);
    let b = tape.mul(not_y, log_q);
    let s = tape.add(a, b);
    let m = tape.mean_all(s);
    Ok(tape.scale(m, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn loss_examples() {
        assert!((logloss(&[1.0], &[1]).unwrap() - 1e-7).abs() < 1e-12);
        assert!((logloss(&[0.5, 0.5], &[1, 0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((logloss(&[0.0], &[1]).unwrap() - 16.118_095_650_958_32).abs() < 1e-9);
        assert_eq!(logloss(&[], &[]).unwrap_err().kind(), "contract");
        assert!(logloss(&[0.3], &[1, 0]).is_err());
    }

    #[test]
    fn tape_loss_matches_plain() {
        let preds = [0.2, 0.9, 1.0, 0.0, 0.5];
        let labels = [1, 1, 0, 0, 1];
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::column(preds.to_vec()));
        let l = logloss_on_tape(&mut tape, p, &labels).unwrap();
        assert!((tape.value(l).item() - logloss(&preds, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_mlp_gives_one_half() {
        let mut store = ParamStore::new();
        let head = PredictionHead::register(&mut store, HeadKind::Mlp, 3, &[4, 2], 1).unwrap();
        zero_params(&mut store);
        let p = predict(
            &head,
            &store,
            &[1.0, 2.0, 3.0],
            &[0.5, 0.0, -1.0],
            &[vec![1.0; 3]],
            &[true],
            [0.3, 0.1],
        )
        .unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn outputs_are_probabilities_for_every_head() {
        for kind in HeadKind::ALL {
            let mut store = ParamStore::new();
            let head = PredictionHead::register(&mut store, kind, 4, &[8, 4], 3).unwrap();
            let slots = vec![
                vec![0.5, -0.2, 0.1, 0.9],
                vec![1.0, 1.0, -1.0, 0.0],
                vec![0.0; 4],
            ];
            let p = predict(
                &head,
                &store,
                &[0.1; 4],
                &[0.2, 0.3, -0.4, 0.0],
                &slots,
                &[true, true, false],
                [0.0, 1.0],
            )
            .unwrap();
            assert!(p > 0.0 && p < 1.0, "{kind}: {p}");
            let empty = predict(&head, &store, &[0.1; 4], &[0.2; 4], &[], &[], [0.0, 0.0]).unwrap();
            assert!(empty.is_finite());
        }
    }

    #[test]
    fn single_slot_attention_weight_is_one() {
        let mut store = ParamStore::new();
        let head = PredictionHead::register(&mut store, HeadKind::Attn, 2, &[4], 5).unwrap();
        let mut tape = Tape::new();
        let seg = Arc::new(Segments::from_lengths(&[1]));
        let b = tape.constant(Tensor::row_vector(vec![3.0, -2.0]));
        let input = HeadInput {
            query: tape.constant(Tensor::row_vector(vec![0.0, 1.0])),
            paper: tape.constant(Tensor::row_vector(vec![1.0, 0.0])),
            behaviors: Some(b),
            segments: Arc::clone(&seg),
            features: tape.constant(Tensor::row_vector(vec![0.0, 0.0])),
        };
        let pooled = head.attention_pool(&mut tape, &store, b, &input);
        assert_eq!(tape.value(pooled).data(), &[3.0, -2.0]);
    }

    #[test]
    fn feature_encoding() {
        let papers = [
            PaperFeatures {
                paper: 0,
                citations: 0,
                year: 2000,
            },
            PaperFeatures {
                paper: 1,
                citations: 10,
                year: 2010,
            },
            PaperFeatures {
                paper: 2,
                citations: 100,
                year: 2020,
            },
        ];
        let stats = FeatureStats::fit(&papers).unwrap();
        let enc: Vec<[f64; 2]> = papers.iter().map(|p| encode_features(p, &stats)).collect();
        let mean: f64 = enc.iter().map(|e| e[0]).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert_eq!(enc[0][1], 0.0);
        assert_eq!(enc[2][1], 1.0);
        let z0 = (0.0 - stats.log_citation_mean) / stats.log_citation_sd;
        assert_eq!(enc[0][0], z0);

        let flat = [PaperFeatures {
            paper: 0,
            citations: 5,
            year: 1999,
        }; 2];
        let stats = FeatureStats::fit(&flat).unwrap();
        assert_eq!(encode_features(&flat[0], &stats), [0.0, 0.0]);
    }

    #[test]
    fn head_kind_parse() {
        assert_eq!("gru".parse::<HeadKind>().unwrap(), HeadKind::Gru);
        assert_eq!("dien".parse::<HeadKind>().unwrap_err().kind(), "config");
    }
}
