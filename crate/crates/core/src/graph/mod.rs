//! Heterogeneous user / keyword / paper graph.
//!
//! Three node types and three undirected relations:
//!
//! * `u-p`: a user clicked or searched a paper
//! * `u-k`: a user added a keyword to their profile
//! * `p-k`: the paper title contains the keyword
//!
//! Nodes also have a global id used by the embedding table, laid out as
//! users, then keywords, then papers.

mod io;
mod tokenize;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    graph_from_records, load_graph, read_graph_records, read_jsonl, read_titles, save_graph,
    titles_from_records, write_jsonl, GraphRecord, GraphRecordKind, TitleRecord,
    GRAPH_FORMAT_VERSION,
};
pub use tokenize::{default_stopwords, tokenize_title, MIN_TOKEN_LEN, STOPWORDS_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    User,
    Keyword,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub node_type: NodeType,
    pub index: usize,
}

impl NodeRef {
    pub fn user(index: usize) -> Self {
        NodeRef {
            node_type: NodeType::User,
            index,
        }
    }

    pub fn keyword(index: usize) -> Self {
        NodeRef {
            node_type: NodeType::Keyword,
            index,
        }
    }

    pub fn paper(index: usize) -> Self {
        NodeRef {
            node_type: NodeType::Paper,
            index,
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.node_type {
            NodeType::User => "user",
            NodeType::Keyword => "keyword",
            NodeType::Paper => "paper",
        };
        write!(f, "{t}:{}", self.index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    #[serde(rename = "u-p")]
    UserPaper,
    #[serde(rename = "u-k")]
    UserKeyword,
    #[serde(rename = "p-k")]
    PaperKeyword,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [
        EdgeType::UserPaper,
        EdgeType::UserKeyword,
        EdgeType::PaperKeyword,
    ];

    pub fn endpoints(self) -> (NodeType, NodeType) {
        match self {
            EdgeType::UserPaper => (NodeType::User, NodeType::Paper),
            EdgeType::UserKeyword => (NodeType::User, NodeType::Keyword),
            EdgeType::PaperKeyword => (NodeType::Paper, NodeType::Keyword),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::UserPaper => "u-p",
            EdgeType::UserKeyword => "u-k",
            EdgeType::PaperKeyword => "p-k",
        }
    }

    /// Type reached from `from` along this relation, if the pairing is valid.
    pub fn other_side(self, from: NodeType) -> Option<NodeType> {
        let (a, b) = self.endpoints();
        if from == a {
            Some(b)
        } else if from == b {
            Some(a)
        } else {
            None
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Adjacency of one relation, indexed from both endpoint types.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Relation {
    /// first endpoint index -> sorted second endpoint indices
    forward: Vec<Vec<usize>>,
    /// second endpoint index -> sorted first endpoint indices
    backward: Vec<Vec<usize>>,
}

impl Relation {
    fn from_pairs(n_first: usize, n_second: usize, pairs: &BTreeSet<(usize, usize)>) -> Self {
        let mut forward = vec![Vec::new(); n_first];
        let mut backward = vec![Vec::new(); n_second];
        // BTreeSet iteration is sorted by (first, second), so forward lists
        // come out sorted; backward lists are filled in increasing `first`.
        for &(a, b) in pairs {
            forward[a].push(b);
            backward[b].push(a);
        }
        Relation { forward, backward }
    }

    fn n_edges(&self) -> usize {
        self.forward.iter().map(Vec::len).sum()
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        self.forward
            .iter()
            .enumerate()
            .flat_map(|(a, bs)| bs.iter().map(move |&b| (a, b)))
            .collect()
    }
}

/// Immutable heterogeneous graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeteroGraph {
    n_users: usize,
    n_papers: usize,
    keywords: Vec<String>,
    keyword_ids: HashMap<String, usize>,
    user_paper: Relation,
    user_keyword: Relation,
    paper_keyword: Relation,
}

impl HeteroGraph {
    /// Assembles a graph from deduplicated edge sets. Indices must be in range.
    fn from_edges(
        n_users: usize,
        n_papers: usize,
        keywords: Vec<String>,
        up: &BTreeSet<(usize, usize)>,
        uk: &BTreeSet<(usize, usize)>,
        pk: &BTreeSet<(usize, usize)>,
    ) -> Self {
        let n_keywords = keywords.len();
        let keyword_ids = keywords
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        HeteroGraph {
            n_users,
            n_papers,
            keyword_ids,
            user_paper: Relation::from_pairs(n_users, n_papers, up),
            user_keyword: Relation::from_pairs(n_users, n_keywords, uk),
            paper_keyword: Relation::from_pairs(n_papers, n_keywords, pk),
            keywords,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_keywords(&self) -> usize {
        self.keywords.len()
    }

    pub fn n_papers(&self) -> usize {
        self.n_papers
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_keywords() + self.n_papers
    }

    pub fn count(&self, t: NodeType) -> usize {
        match t {
            NodeType::User => self.n_users,
            NodeType::Keyword => self.n_keywords(),
            NodeType::Paper => self.n_papers,
        }
    }

    /// Sorted keyword vocabulary; a keyword's position is its node index.
    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn keyword_id(&self, keyword: &str) -> Option<usize> {
        self.keyword_ids.get(keyword).copied()
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        node.index < self.count(node.node_type)
    }

    /// Position of `node` in the users / keywords / papers layout.
    pub fn global_id(&self, node: NodeRef) -> usize {
        debug_assert!(self.contains(node));
        match node.node_type {
            NodeType::User => node.index,
            NodeType::Keyword => self.n_users + node.index,
            NodeType::Paper => self.n_users + self.n_keywords() + node.index,
        }
    }

    pub fn node_at(&self, global: usize) -> NodeRef {
        let nk = self.n_keywords();
        if global < self.n_users {
            NodeRef::user(global)
        } else if global < self.n_users + nk {
            NodeRef::keyword(global - self.n_users)
        } else {
            assert!(global < self.n_nodes(), "global id out of range");
            NodeRef::paper(global - self.n_users - nk)
        }
    }

    pub fn num_edges(&self, t: EdgeType) -> usize {
        self.relation(t).n_edges()
    }

    fn relation(&self, t: EdgeType) -> &Relation {
        match t {
            EdgeType::UserPaper => &self.user_paper,
            EdgeType::UserKeyword => &self.user_keyword,
            EdgeType::PaperKeyword => &self.paper_keyword,
        }
    }

    /// Edge list of one relation as `(first, second)` endpoint indices, sorted.
    pub fn edges(&self, t: EdgeType) -> Vec<(usize, usize)> {
        self.relation(t).pairs()
    }

    /// Indices (within the neighbor type) of `node`'s `t`-neighbors, sorted.
    pub fn neighbor_indices(&self, node: NodeRef, t: EdgeType) -> Result<&[usize]> {
        if !self.contains(node) {
            return Err(Error::contract(format!("{node} is not in the graph")));
        }
        let (first, second) = t.endpoints();
        let rel = self.relation(t);
        if node.node_type == first {
            Ok(&rel.forward[node.index])
        } else if node.node_type == second {
            Ok(&rel.backward[node.index])
        } else {
            Err(Error::contract(format!("{node} has no {t} relation")))
        }
    }

    /// The `t`-type neighbor set of `node`, sorted by index.
    pub fn neighbors(&self, node: NodeRef, t: EdgeType) -> Result<Vec<NodeRef>> {
        let other = t
            .other_side(node.node_type)
            .ok_or_else(|| Error::contract(format!("{node} has no {t} relation")))?;
        Ok(self
            .neighbor_indices(node, t)?
            .iter()
            .map(|&index| NodeRef {
                node_type: other,
                index,
            })
            .collect())
    }

    /// Relations defined for a node type.
    pub fn relations_of(t: NodeType) -> [EdgeType; 2] {
        match t {
            NodeType::User => [EdgeType::UserPaper, EdgeType::UserKeyword],
            NodeType::Keyword => [EdgeType::UserKeyword, EdgeType::PaperKeyword],
            NodeType::Paper => [EdgeType::UserPaper, EdgeType::PaperKeyword],
        }
    }
}

/// Normalizes a user-supplied keyword to the title-token form.
pub fn normalize_keyword(keyword: &str) -> String {
    keyword.trim().to_lowercase()
}

/// Builds the graph from click/search pairs, user-added keywords and titles.
///
/// `titles[p]` is the title of paper `p`, so `titles.len()` fixes the paper
/// count. The keyword vocabulary is the sorted union of title tokens and
/// (normalized) user-added keywords. Duplicate inputs collapse to one edge.
pub fn build_graph(
    n_users: usize,
    user_paper: &[(usize, usize)],
    user_keyword: &[(usize, String)],
    titles: &[String],
    stopwords: &HashSet<String>,
) -> Result<HeteroGraph> {
    let n_papers = titles.len();
    let title_tokens: Vec<Vec<String>> = titles
        .iter()
        .map(|t| tokenize_title(t, stopwords))
        .collect();

    let mut vocab: BTreeSet<String> = title_tokens.iter().flatten().cloned().collect();
    for (i, (u, k)) in user_keyword.iter().enumerate() {
        let k = normalize_keyword(k);
        if k.is_empty() {
            return Err(Error::Ingestion {
                record: format!("user_keyword[{i}] (user {u})"),
                reason: "empty keyword".into(),
            });
        }
        vocab.insert(k);
    }
    let keywords: Vec<String> = vocab.into_iter().collect();
    let kid: HashMap<&str, usize> = keywords
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();

    let mut up = BTreeSet::new();
    for (i, &(u, p)) in user_paper.iter().enumerate() {
        if u >= n_users || p >= n_papers {
            return Err(Error::Ingestion {
                record: format!("user_paper[{i}] ({u}, {p})"),
                reason: format!("unknown id (users: {n_users}, papers: {n_papers})"),
            });
        }
        up.insert((u, p));
    }
    let mut uk = BTreeSet::new();
    for (i, (u, k)) in user_keyword.iter().enumerate() {
        if *u >= n_users {
            return Err(Error::Ingestion {
                record: format!("user_keyword[{i}] ({u}, {k})"),
                reason: format!("unknown user (users: {n_users})"),
            });
        }
        uk.insert((*u, kid[normalize_keyword(k).as_str()]));
    }
    let mut pk = BTreeSet::new();
    for (p, toks) in title_tokens.iter().enumerate() {
        for t in toks {
            pk.insert((p, kid[t.as_str()]));
        }
    }
    Ok(HeteroGraph::from_edges(
        n_users, n_papers, keywords, &up, &uk, &pk,
    ))
}
