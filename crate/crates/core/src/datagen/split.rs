use super::generate::seeded_shuffle;
use super::{Channel, InteractionRecord};
use crate::error::{Error, Result};

/// Result of [`temporal_split`].
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// Every record with `ts <= graph_window_end`, in log order.
    pub graph_window: Vec<InteractionRecord>,
    pub train: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
}

/// Graph/behavior window up to `graph_window_end`; uk-p records after it are
/// shuffled with `seed` and split `fraction` / `1 - fraction` into train/test.
/// Post-window records of other channels are dropped.
pub fn temporal_split(
    log: &[InteractionRecord],
    graph_window_end: i64,
    fraction: f64,
    seed: u64,
) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!("fraction {fraction} outside (0, 1)")));
    }
    let graph_window: Vec<InteractionRecord> = log
        .iter()
        .filter(|r| r.ts <= graph_window_end)
        .cloned()
        .collect();
    let mut post: Vec<InteractionRecord> = log
        .iter()
        .filter(|r| r.ts > graph_window_end && r.channel == Channel::UserKeywordPaper)
        .cloned()
        .collect();
    if post.is_empty() {
        return Err(Error::Split(format!(
            "no uk-p records after graph window end {graph_window_end}"
        )));
    }
    seeded_shuffle(&mut post, seed);
    let n_train = (fraction * post.len() as f64).round() as usize;
    let test = post.split_off(n_train);
    Ok(Split {
        graph_window,
        train: post,
        test,
    })
}
