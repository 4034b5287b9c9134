//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p fusionrec-core --test acceptance`

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use fusionrec::ctr::{logloss, HeadKind};
use fusionrec::datagen::{generate_dataset, read_dataset, write_dataset, Dataset, GenConfig};
use fusionrec::embedding::{multi_hop_embed, propagate_layer, EmbeddingTable};
use fusionrec::eval::{
    auc, evaluate, latency_benchmark, scenario_report, scenario_test, BinMode, ScenarioReport,
};
use fusionrec::fusion::{distance_correlation, fuse_behaviors, fuse_query, FusionWeight};
use fusionrec::graph::save_graph;
use fusionrec::train::{
    adam_step, forward_batch, load_checkpoint, metrics_csv, prepare, save_checkpoint,
    score_examples, train, AdamState, Example, GammaMode, Model, ModelConfig, Prepared, Variant,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn autodiff() -> Verdict {
    let mut worst_primitive: (&str, f64) = ("", 0.0);
    for seed in 0..4 {
        for mag in [1.0, 10.0] {
            for (name, err) in common::all_primitives_error(seed, mag) {
                if err > worst_primitive.1 {
                    worst_primitive = (name, err);
                }
            }
        }
    }
    let base = ModelConfig {
        d: 4,
        l_h: 4,
        hidden: vec![4],
        ..Default::default()
    };
    let prepared = common::tiny_prepared(&base);
    let mut worst_model = 0.0f64;
    for variant in Variant::ALL {
        for head in HeadKind::ALL {
            let cfg = ModelConfig {
                variant,
                head,
                ..base.clone()
            };
            worst_model = worst_model.max(common::model_gradient_error(&cfg, &prepared, 8));
        }
    }
    verdict(
        worst_primitive.1 < 1e-6 && worst_model < 1e-4,
        format!(
            "worst primitive {} {:.2e} (< 1e-6), worst model {:.2e} (< 1e-4)",
            worst_primitive.0, worst_primitive.1, worst_model
        ),
    )
}

fn distance_oracle() -> Verdict {
    let mut rng = common::rng(2);
    let (mut oracle, mut identity) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let d = rng.random_range(2..=64);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = distance_correlation(&x, &y).unwrap().value();
        oracle = oracle.max((g - common::dcor_oracle(&x, &y)).abs());
        let a = rng.random_range(0.5..4.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let b = rng.random_range(-3.0..3.0);
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        identity = identity
            .max((distance_correlation(&x, &x).unwrap().value() - 1.0).abs())
            .max((distance_correlation(&x, &ax).unwrap().value() - 1.0).abs())
            .max((distance_correlation(&ax, &y).unwrap().value() - g).abs());
    }
    verdict(
        oracle < 1e-12 && identity < 1e-9,
        format!("oracle gap {oracle:.2e} (< 1e-12), self/affine gap {identity:.2e} (< 1e-9)"),
    )
}

fn propagation() -> Verdict {
    let mut rng = common::rng(3);
    let (mut naive, mut linear) = (0.0f64, 0.0f64);
    for trial in 0..100 {
        let g = common::random_small_graph(&mut rng);
        let table = EmbeddingTable::init(g.n_nodes(), 3, trial);
        for layers in 0..=3 {
            let fast = multi_hop_embed(&g, &table, layers).unwrap();
            naive =
                naive.max(fast.max_abs_diff(&common::naive_multi_hop(&g, table.tensor(), layers)));
        }
        let x = common::random_matrix(&mut rng, g.n_nodes(), 3, 1.0);
        let y = common::random_matrix(&mut rng, g.n_nodes(), 3, 1.0);
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let mut combo = x.map(|v| a * v);
        combo.axpy(b, &y);
        let mut rhs = propagate_layer(&g, &x).unwrap().map(|v| a * v);
        rhs.axpy(b, &propagate_layer(&g, &y).unwrap());
        linear = linear.max(propagate_layer(&g, &combo).unwrap().max_abs_diff(&rhs));
    }
    verdict(
        naive < 1e-10 && linear < 1e-12,
        format!("naive gap {naive:.2e} (< 1e-10), linearity gap {linear:.2e} (< 1e-12)"),
    )
}

fn fusion_contracts() -> Verdict {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        0usize..150,
        0usize..150,
        prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0],
        1usize..150,
        prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..32),
    );
    let result = runner.run(&strategy, |(nu, nk, g, l_h, pairs)| {
        let (u, k): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let at = |g| fuse_query(&u, &k, FusionWeight::new(g)).unwrap();
        prop_assert_eq!(at(0.0), k.clone());
        prop_assert_eq!(at(1.0), u.clone());
        let hu: Vec<usize> = (0..nu).collect();
        let hk: Vec<usize> = (1000..1000 + nk).collect();
        let f = fuse_behaviors(&hu, &hk, FusionWeight::new(g), l_h).unwrap();
        let quota = (g * l_h as f64).floor() as usize;
        let keyword_first = nk.min(l_h - quota);
        let from_user = nu.min(l_h - keyword_first);
        prop_assert_eq!(f.from_user, from_user);
        prop_assert_eq!(f.from_keyword, nk.min(l_h - from_user));
        prop_assert_eq!(f.from_user + f.from_keyword + f.padded, l_h);
        prop_assert_eq!(f.slots.len(), l_h);
        Ok::<(), TestCaseError>(())
    });
    match result {
        Ok(()) => verdict(true, "10000 cases"),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn metric_oracles() -> Verdict {
    let mut rng = common::rng(5);
    let mut gap = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=50);
        let labels: Vec<u8> = (0..n)
            .map(|i| {
                if i < 2 {
                    i as u8
                } else {
                    rng.random_range(0..2)
                }
            })
            .collect();
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        gap = gap.max((auc(&scores, &labels).unwrap() - common::pair_auc(&scores, &labels)).abs());
    }
    let mut ll_gap = 0.0f64;
    let edges = [0.0, 1.0, 1e-9, 1e-7, 1.0 - 1e-9, 1.0 - 1e-7, 0.5];
    for _ in 0..1000 {
        let n = rng.random_range(1..=64);
        let p: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    edges[rng.random_range(0..edges.len())]
                } else {
                    rng.random()
                }
            })
            .collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        ll_gap = ll_gap.max((logloss(&p, &y).unwrap() - common::logloss_oracle(&p, &y)).abs());
    }
    verdict(
        gap < 1e-12 && ll_gap < 1e-12,
        format!("auc gap {gap:.2e}, logloss gap {ll_gap:.2e} (both < 1e-12)"),
    )
}

fn overfit() -> Verdict {
    const MAX_STEPS: usize = 1000;
    let cfg = ModelConfig {
        d: 8,
        l_h: 8,
        hidden: vec![16],
        learning_rate: 0.01,
        ..Default::default()
    };
    let prepared = common::tiny_prepared(&cfg);
    let batch: Vec<&Example> = prepared.train.iter().take(32).collect();
    let mut model = Model::init(&cfg, &prepared.graph, prepared.stats).unwrap();
    let matrix = model.propagation(&prepared.graph);
    let mut adam = AdamState::new(&model.store);
    let mut loss = f64::INFINITY;
    for step in 0..=MAX_STEPS {
        let fw = forward_batch(
            &model,
            &model.store,
            &prepared.graph,
            &matrix,
            &prepared.history,
            &batch,
            GammaMode::Dynamic,
        )
        .unwrap();
        loss = fw.loss_value();
        if loss < 0.05 {
            return verdict(
                true,
                format!("train LogLoss {loss:.4} after {step} steps (< 0.05)"),
            );
        }
        let grads = fw.tape.backward(fw.loss, &model.store).unwrap();
        adam_step(&mut adam, &mut model.store, &grads, cfg.learning_rate).unwrap();
    }
    verdict(
        false,
        format!("train LogLoss {loss:.4} after {MAX_STEPS} steps"),
    )
}

/// Desk-scale training settings for the ablation runs.
fn ablation_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        seed,
        batch_size: 128,
        epochs: 5,
        ..Default::default()
    }
}

struct Run {
    auc: f64,
    model: Model,
    prepared: Prepared,
    report: ScenarioReport,
}

fn ablation_runs(dataset: &Dataset, variant: Variant) -> Vec<Run> {
    (1..=3)
        .map(|seed| {
            let cfg = ablation_config(variant, seed);
            let prepared = prepare(dataset, &cfg).unwrap();
            let out = train(&cfg, &prepared).unwrap();
            let auc = out.metrics[out.best_epoch - 1].test_auc;
            let report = scenario_test(&out.best, &prepared, BinMode::PerExample).unwrap();
            eprintln!(
                "  {variant} seed {seed}: best epoch {} AUC {auc:.4}, bin shares {:?}",
                out.best_epoch,
                report
                    .bins
                    .iter()
                    .map(|b| format!("{:.3}", b.share))
                    .collect::<Vec<_>>()
            );
            Run {
                auc,
                model: out.best,
                prepared,
                report,
            }
        })
        .collect()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn ablation(gf: &[Run], base: &[Run]) -> Verdict {
    let (a, b) = (
        mean(gf.iter().map(|r| r.auc)),
        mean(base.iter().map(|r| r.auc)),
    );
    verdict(
        a >= 0.80 && a - b >= 0.03,
        format!(
            "g&f AUC {a:.4} (>= 0.80), base AUC {b:.4}, lift {:.4} (>= 0.03)",
            a - b
        ),
    )
}

/// Max minus min AUC over the bins that have one; a single defined bin has
/// no spread.
fn spread(r: &ScenarioReport) -> f64 {
    r.auc_spread().unwrap_or(0.0)
}

fn scenario_stability(gf: &[Run], base: &[Run]) -> Verdict {
    let (a, b) = (
        mean(gf.iter().map(|r| spread(&r.report))),
        mean(base.iter().map(|r| spread(&r.report))),
    );
    let defined = |runs: &[Run]| {
        runs.iter()
            .map(|r| {
                r.report
                    .bins
                    .iter()
                    .filter(|b| b.metrics.is_some())
                    .count()
                    .to_string()
            })
            .collect::<Vec<_>>()
            .join("/")
    };
    // Supplementary: base scored within the bins the g&f model assigns.
    let shared: Vec<f64> = gf
        .iter()
        .zip(base)
        .map(|(g, b)| {
            let nodes = b
                .model
                .node_embeddings(&b.model.store, &b.model.propagation(&b.prepared.graph));
            let (scores, _) = score_examples(
                &b.model,
                &nodes,
                &b.prepared.graph,
                &b.prepared.history,
                &b.prepared.test,
            )
            .unwrap();
            let labels: Vec<u8> = b.prepared.test.iter().map(|e| e.label).collect();
            spread(
                &scenario_report(&scores, &labels, &g.report.gammas, BinMode::PerExample).unwrap(),
            )
        })
        .collect();
    verdict(
        a <= b,
        format!(
            "g&f spread {a:.4} vs base spread {b:.4} (defined bins g&f {}, base {}); \
             base spread in g&f bins {:.4}",
            defined(gf),
            defined(base),
            mean(shared)
        ),
    )
}

fn pipeline_once(dir: &std::path::Path) -> Vec<u8> {
    let gen = GenConfig {
        sessions: 400,
        ..common::tiny_gen()
    };
    write_dataset(&generate_dataset(&gen).unwrap(), &dir.join("data")).unwrap();
    let dataset = read_dataset(&dir.join("data")).unwrap();
    let cfg = ModelConfig {
        d: 8,
        l_h: 8,
        hidden: vec![8],
        batch_size: 32,
        epochs: 3,
        ..Default::default()
    };
    let prepared = prepare(&dataset, &cfg).unwrap();
    save_graph(&prepared.graph, &dir.join("graph.json")).unwrap();
    let out = train(&cfg, &prepared).unwrap();
    save_checkpoint(&out.best, &dir.join("model.json")).unwrap();
    let model = load_checkpoint(&dir.join("model.json")).unwrap();
    let report = evaluate(&model, &prepared).unwrap();
    let mut bytes = metrics_csv(&out.metrics).into_bytes();
    bytes.extend(format!("evaluate,{},{}\n", report.auc, report.logloss).into_bytes());
    bytes.extend(std::fs::read(dir.join("graph.json")).unwrap());
    bytes
}

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (x, y) = (pipeline_once(a.path()), pipeline_once(b.path()));
    verdict(x == y, format!("{} bytes compared", x.len()))
}

fn latency(dataset: &Dataset) -> Verdict {
    let mut p50 = Vec::new();
    let mut parts = Vec::new();
    for head in HeadKind::ALL {
        let cfg = ModelConfig {
            head,
            ..Default::default()
        };
        let prepared = prepare(dataset, &cfg).unwrap();
        let model = Model::init(&cfg, &prepared.graph, prepared.stats).unwrap();
        let s = latency_benchmark(&model, &prepared, 200, 1, 50, 7).unwrap();
        parts.push(format!(
            "{} p50 {:.3} p95 {:.3} ms",
            head.as_str(),
            s.p50_ms,
            s.p95_ms
        ));
        p50.push(s.p50_ms);
    }
    // ALL is mlp, attn, gru.
    verdict(p50[2] > p50[0], parts.join("; "))
}

fn run(
    results: &mut Vec<(usize, &'static str, Verdict)>,
    id: usize,
    name: &'static str,
    f: impl FnOnce() -> Verdict,
) {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let line = format!(
        "{} criterion {id} {name}: {} [{:.1}s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        start.elapsed().as_secs_f64()
    );
    println!("{line}");
    results.push((id, name, v));
}

fn main() {
    let mut results = Vec::new();
    run(&mut results, 1, "autodiff", autodiff);
    run(&mut results, 2, "distance-correlation", distance_oracle);
    run(&mut results, 3, "propagation", propagation);
    run(&mut results, 4, "fusion-contracts", fusion_contracts);
    run(&mut results, 5, "metric-oracles", metric_oracles);
    run(&mut results, 6, "overfit", overfit);

    let dataset = generate_dataset(&GenConfig::default()).unwrap();
    eprintln!("default dataset: {} events", dataset.log.len());
    let gf = catch_unwind(AssertUnwindSafe(|| {
        ablation_runs(&dataset, Variant::GnnFusion)
    }));
    let base = catch_unwind(AssertUnwindSafe(|| ablation_runs(&dataset, Variant::Base)));
    match (&gf, &base) {
        (Ok(gf), Ok(base)) => {
            run(&mut results, 7, "ablation", || ablation(gf, base));
            run(&mut results, 8, "scenario-stability", || {
                scenario_stability(gf, base)
            });
        }
        _ => {
            run(&mut results, 7, "ablation", || {
                verdict(false, "training failed")
            });
            run(&mut results, 8, "scenario-stability", || {
                verdict(false, "training failed")
            });
        }
    }
    run(&mut results, 9, "determinism", determinism);
    run(&mut results, 10, "latency", || latency(&dataset));

    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
