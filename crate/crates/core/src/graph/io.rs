//! JSON Lines ingestion and the on-disk graph format.
//!
//! Graph file (JSON, `version` 1):
//!
//! ```text
//! { "format": "fusionrec-graph", "version": 1,
//!   "users": M, "papers": N, "keywords": ["...", ...],
//!   "edges": { "u-p": [[u, p], ...], "u-k": [[u, k], ...], "p-k": [[p, k], ...] } }
//! ```
//!
//! Keyword indices refer to positions in `keywords`, which is sorted.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{build_graph, EdgeType, HeteroGraph};
use crate::error::{Error, Result};

pub const GRAPH_FORMAT_VERSION: u32 = 1;
const GRAPH_FORMAT_NAME: &str = "fusionrec-graph";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphRecordKind {
    #[serde(rename = "up")]
    UserPaper,
    #[serde(rename = "uk")]
    UserKeyword,
}

/// One line of the graph input log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRecord {
    #[serde(rename = "type")]
    pub kind: GraphRecordKind,
    pub user: usize,
    pub paper: Option<usize>,
    pub keyword: Option<String>,
    pub ts: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TitleRecord {
    pub paper: usize,
    pub title: String,
}

/// Reads a JSON Lines file; blank lines are skipped, parse failures name the line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Ingestion {
            record: format!("{}:{}", path.display(), i + 1),
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_graph_records(path: &Path) -> Result<Vec<GraphRecord>> {
    read_jsonl(path)
}

/// Reads title records into a dense `paper -> title` vector. Paper ids must
/// cover `0..N` exactly once.
pub fn read_titles(path: &Path) -> Result<Vec<String>> {
    let records: Vec<TitleRecord> = read_jsonl(path)?;
    titles_from_records(&records)
}

pub fn titles_from_records(records: &[TitleRecord]) -> Result<Vec<String>> {
    let mut by_id = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if by_id.insert(r.paper, r.title.clone()).is_some() {
            return Err(Error::Ingestion {
                record: format!("title[{i}] (paper {})", r.paper),
                reason: "duplicate paper id".into(),
            });
        }
    }
    let n = by_id.len();
    if let Some((&max, _)) = by_id.iter().next_back() {
        if max + 1 != n {
            return Err(Error::Ingestion {
                record: format!("paper {max}"),
                reason: format!("paper ids must be 0..{n} without gaps"),
            });
        }
    }
    Ok(by_id.into_values().collect())
}

/// Builds a graph from graph-log records, keeping those with `ts <= window_end`
/// when a window is given.
pub fn graph_from_records(
    n_users: usize,
    records: &[GraphRecord],
    titles: &[String],
    window_end: Option<i64>,
    stopwords: &HashSet<String>,
) -> Result<HeteroGraph> {
    let mut up = Vec::new();
    let mut uk = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if window_end.is_some_and(|end| r.ts > end) {
            continue;
        }
        match r.kind {
            GraphRecordKind::UserPaper => {
                let p = r.paper.ok_or_else(|| Error::Ingestion {
                    record: format!("graph record {i}"),
                    reason: "\"up\" record without paper".into(),
                })?;
                up.push((r.user, p));
            }
            GraphRecordKind::UserKeyword => {
                let k = r.keyword.clone().ok_or_else(|| Error::Ingestion {
                    record: format!("graph record {i}"),
                    reason: "\"uk\" record without keyword".into(),
                })?;
                uk.push((r.user, k));
            }
        }
    }
    build_graph(n_users, &up, &uk, titles, stopwords)
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    format: String,
    version: u32,
    users: usize,
    papers: usize,
    keywords: Vec<String>,
    edges: BTreeMap<EdgeType, Vec<(usize, usize)>>,
}

pub fn save_graph(graph: &HeteroGraph, path: &Path) -> Result<()> {
    let file = GraphFile {
        format: GRAPH_FORMAT_NAME.into(),
        version: GRAPH_FORMAT_VERSION,
        users: graph.n_users(),
        papers: graph.n_papers(),
        keywords: graph.keywords().to_vec(),
        edges: EdgeType::ALL.iter().map(|&t| (t, graph.edges(t))).collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.flush()?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<HeteroGraph> {
    let file: GraphFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.format != GRAPH_FORMAT_NAME || file.version != GRAPH_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "expected {GRAPH_FORMAT_NAME} v{GRAPH_FORMAT_VERSION}, found {} v{}",
            file.format, file.version
        )));
    }
    if file.keywords.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Format(
            "keyword list must be sorted and unique".into(),
        ));
    }
    let nk = file.keywords.len();
    let mut sets: BTreeMap<EdgeType, BTreeSet<(usize, usize)>> = BTreeMap::new();
    for t in EdgeType::ALL {
        let (a, b) = t.endpoints();
        let count = |nt| match nt {
            super::NodeType::User => file.users,
            super::NodeType::Keyword => nk,
            super::NodeType::Paper => file.papers,
        };
        let (na, nb) = (count(a), count(b));
        let mut set = BTreeSet::new();
        for &(x, y) in file.edges.get(&t).map(Vec::as_slice).unwrap_or(&[]) {
            if x >= na || y >= nb {
                return Err(Error::Format(format!("{t} edge ({x}, {y}) out of range")));
            }
            set.insert((x, y));
        }
        sets.insert(t, set);
    }
    Ok(HeteroGraph::from_edges(
        file.users,
        file.papers,
        file.keywords,
        &sets[&EdgeType::UserPaper],
        &sets[&EdgeType::UserKeyword],
        &sets[&EdgeType::PaperKeyword],
    ))
}
