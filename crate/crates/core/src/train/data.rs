use std::collections::BTreeMap;

use crate::ctr::{encode_features, FeatureStats, FEATURE_DIM};
use crate::datagen::{
    build_behaviors, temporal_split, BehaviorEntry, Dataset, InteractionRecord, Scenario,
};
use crate::error::{Error, Result};
use crate::graph::{default_stopwords, graph_from_records, normalize_keyword, HeteroGraph};

use super::config::{derive_seed, ModelConfig};

/// Stream id of the train/test shuffle within the run seed.
pub const SPLIT_STREAM: u64 = 1;

/// One (user, keyword, paper) exposure with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub record: usize,
    pub user: usize,
    /// Keyword node index in the graph.
    pub keyword: usize,
    pub paper: usize,
    pub label: u8,
    pub features: [f64; FEATURE_DIM],
}

/// Behavior sequences from the graph window, most recent first, truncated
/// to `l_h`, indexed by user and by keyword node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub users: Vec<Vec<BehaviorEntry>>,
    pub keywords: Vec<Vec<BehaviorEntry>>,
}

impl History {
    pub fn from_log(window: &[InteractionRecord], graph: &HeteroGraph, l_h: usize) -> Self {
        let b = build_behaviors(window);
        let mut users = vec![Vec::new(); graph.n_users()];
        for (u, seq) in b.users() {
            if u < users.len() {
                users[u] = seq[..seq.len().min(l_h)].to_vec();
            }
        }
        let mut keywords = vec![Vec::new(); graph.n_keywords()];
        for (k, seq) in b.keywords() {
            if let Some(id) = graph.keyword_id(&normalize_keyword(k)) {
                keywords[id] = seq[..seq.len().min(l_h)].to_vec();
            }
        }
        History { users, keywords }
    }

    pub fn user(&self, u: usize) -> &[BehaviorEntry] {
        &self.users[u]
    }

    pub fn keyword(&self, k: usize) -> &[BehaviorEntry] {
        &self.keywords[k]
    }
}

/// Everything a run needs from a dataset under one model config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub graph: HeteroGraph,
    pub history: History,
    pub stats: FeatureStats,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    /// Generator scenario per record, when the dataset has the sidecar.
    pub scenarios: BTreeMap<usize, Scenario>,
    pub features: Vec<crate::datagen::PaperFeatures>,
}

/// Builds the graph and behaviors from the graph window, splits post-window
/// uk-p records and encodes features with training-split statistics.
pub fn prepare(dataset: &Dataset, cfg: &ModelConfig) -> Result<Prepared> {
    cfg.validate()?;
    let window_end = dataset.config.graph_window_end;
    let graph = graph_from_records(
        dataset.config.users,
        &dataset.graph_records(),
        &dataset.titles,
        Some(window_end),
        default_stopwords(),
    )?;
    let split = temporal_split(
        &dataset.log,
        window_end,
        cfg.train_fraction,
        derive_seed(cfg.seed, SPLIT_STREAM),
    )?;
    let history = History::from_log(&split.graph_window, &graph, cfg.l_h);
    let paper_features = |r: &InteractionRecord| {
        dataset
            .features
            .get(r.paper)
            .ok_or_else(|| Error::Ingestion {
                record: format!("record {}", r.record),
                reason: format!("paper {} has no features", r.paper),
            })
    };
    let mut train_papers = Vec::with_capacity(split.train.len());
    for r in &split.train {
        train_papers.push(paper_features(r)?);
    }
    let stats = FeatureStats::fit(train_papers)?;
    let to_example = |r: &InteractionRecord| -> Result<Example> {
        let kw = r.keyword.as_deref().unwrap_or_default();
        let keyword = graph
            .keyword_id(&normalize_keyword(kw))
            .ok_or_else(|| Error::Ingestion {
                record: format!("record {}", r.record),
                reason: format!("keyword {kw:?} is not in the graph vocabulary"),
            })?;
        if r.user >= graph.n_users() || r.paper >= graph.n_papers() {
            return Err(Error::Ingestion {
                record: format!("record {}", r.record),
                reason: "user or paper out of range".into(),
            });
        }
        Ok(Example {
            record: r.record,
            user: r.user,
            keyword,
            paper: r.paper,
            label: r.label,
            features: encode_features(paper_features(r)?, &stats),
        })
    };
    let train = split
        .train
        .iter()
        .map(to_example)
        .collect::<Result<Vec<_>>>()?;
    let test = split
        .test
        .iter()
        .map(to_example)
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        graph,
        history,
        stats,
        train,
        test,
        scenarios: dataset.scenario_of(),
        features: dataset.features.clone(),
    })
}
