use std::collections::{BTreeMap, HashMap};

use super::{Channel, InteractionRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BehaviorEntry {
    pub paper: usize,
    pub ts: i64,
    /// Source record in the log.
    pub record: usize,
}

/// Clicked-paper sequences per user and per keyword, most recent first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Behaviors {
    by_user: HashMap<usize, Vec<BehaviorEntry>>,
    by_keyword: BTreeMap<String, Vec<BehaviorEntry>>,
}

const EMPTY: &[BehaviorEntry] = &[];

impl Behaviors {
    pub fn user(&self, user: usize) -> &[BehaviorEntry] {
        self.by_user.get(&user).map_or(EMPTY, Vec::as_slice)
    }

    pub fn keyword(&self, keyword: &str) -> &[BehaviorEntry] {
        self.by_keyword.get(keyword).map_or(EMPTY, Vec::as_slice)
    }

    pub fn users(&self) -> impl Iterator<Item = (usize, &[BehaviorEntry])> {
        self.by_user.iter().map(|(&u, v)| (u, v.as_slice()))
    }

    pub fn keywords(&self) -> impl Iterator<Item = (&str, &[BehaviorEntry])> {
        self.by_keyword
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Extracts `H_u` (positive u-p and uk-p clicks of each user) and `H_k`
/// (positive clicks of all users under keyword `k`) from a graph-window log.
///
/// Sequences are ordered by timestamp descending; ties fall back to the
/// record id, later records first.
pub fn build_behaviors(log: &[InteractionRecord]) -> Behaviors {
    let mut b = Behaviors::default();
    for r in log.iter().filter(|r| r.label == 1) {
        let entry = BehaviorEntry {
            paper: r.paper,
            ts: r.ts,
            record: r.record,
        };
        if matches!(r.channel, Channel::UserPaper | Channel::UserKeywordPaper) {
            b.by_user.entry(r.user).or_default().push(entry);
        }
        if matches!(r.channel, Channel::KeywordPaper | Channel::UserKeywordPaper) {
            if let Some(k) = &r.keyword {
                b.by_keyword.entry(k.clone()).or_default().push(entry);
            }
        }
    }
    let order = |a: &BehaviorEntry, c: &BehaviorEntry| (c.ts, c.record).cmp(&(a.ts, a.record));
    for v in b.by_user.values_mut() {
        v.sort_by(order);
    }
    for v in b.by_keyword.values_mut() {
        v.sort_by(order);
    }
    b
}
