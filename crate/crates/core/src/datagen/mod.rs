//! Synthetic keyword-recommendation logs with planted, scenario-dependent
//! click behavior, plus the temporal split and behavior-sequence extraction.
//!
//! Every user, paper and topic word belongs to a latent topic arranged on a
//! ring. A keyword session picks its keyword either from the user's own topic
//! (S1), a nearby topic (S2) or a distant one (S3), and the click probability
//! of each shown paper mixes user affinity and keyword relevance with a
//! scenario-specific weight.

mod behaviors;
mod config;
mod generate;
mod io;
mod split;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use behaviors::{build_behaviors, BehaviorEntry, Behaviors};
pub use config::{GenConfig, DEFAULT_START_TS, MIN_TOPICS};
pub use generate::{generate_dataset, scenario_user_weight};
pub use io::{read_dataset, write_dataset, DatasetFiles};
pub use split::{temporal_split, Split};

use crate::graph::{GraphRecord, GraphRecordKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "u-p")]
    UserPaper,
    #[serde(rename = "k-p")]
    KeywordPaper,
    #[serde(rename = "uk-p")]
    UserKeywordPaper,
}

/// One logged exposure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub record: usize,
    pub user: usize,
    pub keyword: Option<String>,
    pub paper: usize,
    pub ts: i64,
    pub label: u8,
    pub channel: Channel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperFeatures {
    pub paper: usize,
    pub citations: u64,
    pub year: i32,
}

/// Keyword a user added to their profile.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserKeyword {
    pub user: usize,
    pub keyword: String,
    pub ts: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::S1, Scenario::S2, Scenario::S3];
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
        };
        f.write_str(s)
    }
}

/// Ground-truth scenario of a uk-p record, for validation only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioTag {
    pub record: usize,
    pub scenario: Scenario,
}

/// Hidden generator state. Never exposed to the model.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTruth {
    pub user_primary: Vec<usize>,
    pub user_secondary: Vec<usize>,
    pub paper_topic: Vec<usize>,
    pub keyword_topic: BTreeMap<String, usize>,
    /// Standardized log-citation popularity per paper.
    pub popularity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    /// Sorted by timestamp; `log[i].record == i`.
    pub log: Vec<InteractionRecord>,
    pub titles: Vec<String>,
    pub features: Vec<PaperFeatures>,
    pub user_keywords: Vec<UserKeyword>,
    pub scenarios: Vec<ScenarioTag>,
    /// Present only for freshly generated data.
    pub truth: Option<LatentTruth>,
}

impl Dataset {
    /// The graph-module input log: one `up` record per positive u-p / uk-p
    /// click and one `uk` record per user-added keyword.
    pub fn graph_records(&self) -> Vec<GraphRecord> {
        let mut out: Vec<GraphRecord> = self
            .user_keywords
            .iter()
            .map(|k| GraphRecord {
                kind: GraphRecordKind::UserKeyword,
                user: k.user,
                paper: None,
                keyword: Some(k.keyword.clone()),
                ts: k.ts,
            })
            .collect();
        out.extend(
            self.log
                .iter()
                .filter(|r| r.label == 1 && r.channel != Channel::KeywordPaper)
                .map(|r| GraphRecord {
                    kind: GraphRecordKind::UserPaper,
                    user: r.user,
                    paper: Some(r.paper),
                    keyword: None,
                    ts: r.ts,
                }),
        );
        out.sort_by_key(|r| r.ts);
        out
    }

    pub fn scenario_of(&self) -> BTreeMap<usize, Scenario> {
        self.scenarios
            .iter()
            .map(|t| (t.record, t.scenario))
            .collect()
    }
}
