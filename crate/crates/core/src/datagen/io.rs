//! Dataset directory layout.
//!
//! | file               | one line per                                       |
//! |--------------------|----------------------------------------------------|
//! | `generator.json`   | (single JSON object) the generator config          |
//! | `events.jsonl`     | interaction record, sorted by `ts`                 |
//! | `graph_log.jsonl`  | graph input record (`up` clicks, `uk` keywords)    |
//! | `titles.jsonl`     | `{"paper", "title"}`                               |
//! | `features.jsonl`   | `{"paper", "citations", "year"}`                   |
//! | `scenarios.jsonl`  | `{"record", "scenario"}`, validation only          |

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, GenConfig, InteractionRecord, PaperFeatures, ScenarioTag, UserKeyword};
use crate::error::{Error, Result};
use crate::graph::{read_jsonl, write_jsonl, GraphRecord, GraphRecordKind, TitleRecord};

pub const GENERATOR_FILE: &str = "generator.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const GRAPH_LOG_FILE: &str = "graph_log.jsonl";
pub const TITLES_FILE: &str = "titles.jsonl";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const SCENARIOS_FILE: &str = "scenarios.jsonl";

/// Paths of the files making up a dataset directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetFiles {
    pub generator: PathBuf,
    pub events: PathBuf,
    pub graph_log: PathBuf,
    pub titles: PathBuf,
    pub features: PathBuf,
    pub scenarios: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetFiles {
            generator: dir.join(GENERATOR_FILE),
            events: dir.join(EVENTS_FILE),
            graph_log: dir.join(GRAPH_LOG_FILE),
            titles: dir.join(TITLES_FILE),
            features: dir.join(FEATURES_FILE),
            scenarios: dir.join(SCENARIOS_FILE),
        }
    }

    pub fn all(&self) -> [&Path; 6] {
        [
            &self.generator,
            &self.events,
            &self.graph_log,
            &self.titles,
            &self.features,
            &self.scenarios,
        ]
    }
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetFiles> {
    fs::create_dir_all(dir)?;
    let files = DatasetFiles::in_dir(dir);
    let mut cfg = serde_json::to_string_pretty(&dataset.config)?;
    cfg.push('\n');
    fs::write(&files.generator, cfg)?;
    write_jsonl(&files.events, &dataset.log)?;
    write_jsonl(&files.graph_log, &dataset.graph_records())?;
    let titles: Vec<TitleRecord> = dataset
        .titles
        .iter()
        .enumerate()
        .map(|(paper, title)| TitleRecord {
            paper,
            title: title.clone(),
        })
        .collect();
    write_jsonl(&files.titles, &titles)?;
    write_jsonl(&files.features, &dataset.features)?;
    write_jsonl(&files.scenarios, &dataset.scenarios)?;
    Ok(files)
}

/// Loads a dataset directory. The latent truth is not stored, so
/// `truth` is `None`.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let files = DatasetFiles::in_dir(dir);
    let config: GenConfig = serde_json::from_str(&fs::read_to_string(&files.generator)?)?;
    let log: Vec<InteractionRecord> = read_jsonl(&files.events)?;
    for (i, r) in log.iter().enumerate() {
        if r.record != i {
            return Err(Error::Ingestion {
                record: format!("{}:{}", files.events.display(), i + 1),
                reason: format!("record id {} out of sequence", r.record),
            });
        }
    }
    let graph_log: Vec<GraphRecord> = read_jsonl(&files.graph_log)?;
    let user_keywords = graph_log
        .into_iter()
        .filter(|r| r.kind == GraphRecordKind::UserKeyword)
        .map(|r| UserKeyword {
            user: r.user,
            keyword: r.keyword.unwrap_or_default(),
            ts: r.ts,
        })
        .collect();
    let title_records: Vec<TitleRecord> = read_jsonl(&files.titles)?;
    let titles = crate::graph::titles_from_records(&title_records)?;
    let mut features: Vec<PaperFeatures> = read_jsonl(&files.features)?;
    features.sort_by_key(|f| f.paper);
    if features.len() != titles.len() || features.iter().enumerate().any(|(i, f)| f.paper != i) {
        return Err(Error::Ingestion {
            record: files.features.display().to_string(),
            reason: "features must cover every paper exactly once".into(),
        });
    }
    let scenarios: Vec<ScenarioTag> = read_jsonl(&files.scenarios)?;
    Ok(Dataset {
        config,
        log,
        titles,
        features,
        user_keywords,
        scenarios,
        truth: None,
    })
}
