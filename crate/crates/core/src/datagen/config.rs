use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2022-02-01T00:00:00Z
pub const DEFAULT_START_TS: i64 = 1_643_673_600;
const DAY: i64 = 86_400;

/// Knobs of the synthetic interaction-log generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub users: usize,
    pub papers: usize,
    /// Target keyword vocabulary size (topic words plus generic words).
    pub vocab_target: usize,
    pub topics: usize,
    /// Proportions of S1 / S2 / S3 keyword sessions.
    pub scenario_mix: [f64; 3],
    pub start_ts: i64,
    /// Last timestamp of the graph/behavior window.
    pub graph_window_end: i64,
    pub end_ts: i64,
    /// Probability of flipping a uk-p label.
    pub noise_rate: f64,
    /// Mean number of plain user-paper clicks per user inside the graph window.
    pub history_clicks: usize,
    /// Keyword sessions inside the graph window (feed keyword behaviors).
    pub window_sessions: usize,
    /// Keyword sessions after the graph window (become train/test examples).
    pub sessions: usize,
    pub candidates_per_session: usize,
    pub keywords_per_user: usize,
    pub year_min: i32,
    pub year_max: i32,
    /// Sharpness of the planted click logit; 0 removes all signal.
    pub signal_scale: f64,
    /// Weight of paper popularity (standardized log-citations) in the logit.
    pub popularity_weight: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            users: 1000,
            papers: 5000,
            vocab_target: 250,
            topics: 20,
            scenario_mix: [0.4, 0.3, 0.3],
            start_ts: DEFAULT_START_TS,
            graph_window_end: DEFAULT_START_TS + 59 * DAY,
            end_ts: DEFAULT_START_TS + 89 * DAY,
            noise_rate: 0.05,
            history_clicks: 30,
            window_sessions: 5000,
            sessions: 2500,
            candidates_per_session: 4,
            keywords_per_user: 3,
            year_min: 2000,
            year_max: 2022,
            signal_scale: 8.0,
            popularity_weight: 0.5,
            seed: 42,
        }
    }
}

/// Words shared by every topic; they end up as hub keywords.
pub(crate) const GENERIC_WORDS: [&str; 12] = [
    "learning",
    "analysis",
    "model",
    "method",
    "approach",
    "system",
    "framework",
    "study",
    "efficient",
    "novel",
    "data",
    "network",
];

/// Smallest topic ring on which every scenario has a distinct keyword topic.
pub const MIN_TOPICS: usize = 7;

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.users == 0 || self.papers == 0 || self.sessions == 0 {
            return err("users, papers and sessions must be positive".into());
        }
        if self.candidates_per_session == 0 {
            return err("candidates_per_session must be positive".into());
        }
        if self.topics < MIN_TOPICS {
            return err(format!(
                "need at least {MIN_TOPICS} topics, got {}",
                self.topics
            ));
        }
        if self.vocab_target < GENERIC_WORDS.len() + 2 * self.topics {
            return err(format!(
                "vocab_target {} too small for {} topics (need >= {})",
                self.vocab_target,
                self.topics,
                GENERIC_WORDS.len() + 2 * self.topics
            ));
        }
        if self.papers < self.topics {
            return err("need at least one paper per topic".into());
        }
        if self.scenario_mix.iter().any(|p| !(0.0..=1.0).contains(p))
            || (self.scenario_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return err(format!(
                "scenario_mix must be proportions summing to 1, got {:?}",
                self.scenario_mix
            ));
        }
        if !(self.start_ts < self.graph_window_end && self.graph_window_end < self.end_ts) {
            return err("need start_ts < graph_window_end < end_ts".into());
        }
        if !(0.0..=0.5).contains(&self.noise_rate) {
            return err(format!("noise_rate {} outside [0, 0.5]", self.noise_rate));
        }
        if self.year_min > self.year_max {
            return err("year_min > year_max".into());
        }
        if self.signal_scale.is_nan() || self.signal_scale < 0.0 {
            return err("signal_scale must be non-negative".into());
        }
        Ok(())
    }

    pub(crate) fn words_per_topic(&self) -> usize {
        (self.vocab_target - GENERIC_WORDS.len()) / self.topics
    }
}
