use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use super::config::GENERIC_WORDS;
use super::{
    Channel, Dataset, GenConfig, InteractionRecord, LatentTruth, PaperFeatures, Scenario,
    ScenarioTag, UserKeyword,
};
use crate::error::Result;
use crate::graph::default_stopwords;
use crate::numerics::sigmoid;

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const CONNECTORS: [&str; 5] = ["for", "of", "with", "the", "in"];

/// Share of a user's plain clicks that land in their primary topic.
const PRIMARY_SHARE: f64 = 0.7;

/// Weight of user affinity (vs keyword relevance) in the click logit.
pub fn scenario_user_weight(s: Scenario) -> f64 {
    match s {
        Scenario::S1 => 0.8,
        Scenario::S2 => 0.5,
        Scenario::S3 => 0.2,
    }
}

fn ring_distance(a: usize, b: usize, k: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(k - d)
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::with_capacity(6);
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
        w.push(*VOWELS.choose(rng).unwrap() as char);
    }
    w
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct World {
    topic_words: Vec<Vec<String>>,
    truth: LatentTruth,
    papers_by_topic: Vec<Vec<usize>>,
    /// Topic words that occur in at least one title, per topic.
    used_words: Vec<Vec<String>>,
}

impl World {
    fn affinity(&self, user: usize, topic: usize) -> f64 {
        if self.truth.user_primary[user] == topic {
            1.0
        } else if self.truth.user_secondary[user] == topic {
            (1.0 - PRIMARY_SHARE) / PRIMARY_SHARE
        } else {
            0.0
        }
    }
}

fn relevance(keyword_topic: usize, paper_topic: usize, k: usize) -> f64 {
    match ring_distance(keyword_topic, paper_topic, k) {
        0 => 1.0,
        1 => 0.5,
        _ => 0.0,
    }
}

/// Generates a dataset; a pure function of `cfg` (seed included).
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.topics;

    // Vocabulary: disjoint pseudo-words per topic.
    let stop = default_stopwords();
    let mut taken: HashSet<String> = GENERIC_WORDS.iter().map(|s| s.to_string()).collect();
    let wpt = cfg.words_per_topic();
    let mut topic_words = vec![Vec::with_capacity(wpt); k];
    for words in topic_words.iter_mut() {
        while words.len() < wpt {
            let w = pseudo_word(&mut rng);
            if !stop.contains(&w) && taken.insert(w.clone()) {
                words.push(w);
            }
        }
    }

    // Papers. The first `k` papers cover every topic once.
    let mut paper_topic = Vec::with_capacity(cfg.papers);
    for p in 0..cfg.papers {
        paper_topic.push(if p < k { p } else { rng.random_range(0..k) });
    }
    let mut titles = Vec::with_capacity(cfg.papers);
    let mut used: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];
    for &t in &paper_topic {
        let n = rng.random_range(3..=6).min(wpt);
        let picked: Vec<&String> = topic_words[t].choose_multiple(&mut rng, n).collect();
        let mut parts: Vec<String> = Vec::new();
        for (i, w) in picked.iter().enumerate() {
            used[t].insert((*w).clone());
            if i > 0 && rng.random_bool(0.25) {
                parts.push(CONNECTORS.choose(&mut rng).unwrap().to_string());
            }
            parts.push(capitalize(w));
        }
        if rng.random_bool(0.35) {
            let g = GENERIC_WORDS.choose(&mut rng).unwrap();
            let at = rng.random_range(0..=parts.len());
            parts.insert(at, capitalize(g));
        }
        titles.push(parts.join(" "));
    }

    let citation_dist = LogNormal::<f64>::new(2.0, 1.2).expect("valid log-normal");
    let features: Vec<PaperFeatures> = (0..cfg.papers)
        .map(|p| PaperFeatures {
            paper: p,
            citations: Distribution::<f64>::sample(&citation_dist, &mut rng).floor() as u64,
            year: rng.random_range(cfg.year_min..=cfg.year_max),
        })
        .collect();
    let logc: Vec<f64> = features
        .iter()
        .map(|f| (1.0 + f.citations as f64).ln())
        .collect();
    let mean = logc.iter().sum::<f64>() / logc.len() as f64;
    let var = logc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / logc.len() as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let popularity: Vec<f64> = logc.iter().map(|v| (v - mean) / sd).collect();

    let mut papers_by_topic = vec![Vec::new(); k];
    for (p, &t) in paper_topic.iter().enumerate() {
        papers_by_topic[t].push(p);
    }

    // Users.
    let mut user_primary = Vec::with_capacity(cfg.users);
    let mut user_secondary = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        let p = rng.random_range(0..k);
        let s = if rng.random_bool(0.5) {
            (p + 1) % k
        } else {
            (p + k - 1) % k
        };
        user_primary.push(p);
        user_secondary.push(s);
    }

    let used_words: Vec<Vec<String>> = used.into_iter().map(|s| s.into_iter().collect()).collect();
    let keyword_topic: BTreeMap<String, usize> = used_words
        .iter()
        .enumerate()
        .flat_map(|(t, ws)| ws.iter().map(move |w| (w.clone(), t)))
        .collect();

    let world = World {
        topic_words,
        truth: LatentTruth {
            user_primary,
            user_secondary,
            paper_topic,
            keyword_topic,
            popularity,
        },
        papers_by_topic,
        used_words,
    };
    debug_assert!(world.topic_words.iter().all(|w| w.len() == wpt));

    let mut user_keywords = Vec::new();
    for u in 0..cfg.users {
        let pool = &world.used_words[world.truth.user_primary[u]];
        for w in pool.choose_multiple(&mut rng, cfg.keywords_per_user.min(pool.len())) {
            user_keywords.push(UserKeyword {
                user: u,
                keyword: w.clone(),
                ts: rng.random_range(cfg.start_ts..=cfg.graph_window_end),
            });
        }
    }

    // Events, generated in a fixed order and then stably sorted by time.
    let mut events: Vec<(InteractionRecord, Option<Scenario>)> = Vec::new();
    let push = |events: &mut Vec<(InteractionRecord, Option<Scenario>)>,
                user,
                keyword,
                paper,
                ts,
                label,
                channel,
                scenario| {
        events.push((
            InteractionRecord {
                record: 0,
                user,
                keyword,
                paper,
                ts,
                label,
                channel,
            },
            scenario,
        ))
    };

    for u in 0..cfg.users {
        let h = cfg.history_clicks;
        let n = if h == 0 {
            0
        } else {
            rng.random_range(h.div_ceil(2)..=h + h / 2)
        };
        for _ in 0..n {
            let topic = if rng.random_bool(PRIMARY_SHARE) {
                world.truth.user_primary[u]
            } else {
                world.truth.user_secondary[u]
            };
            let paper = *world.papers_by_topic[topic].choose(&mut rng).unwrap();
            let ts = rng.random_range(cfg.start_ts..=cfg.graph_window_end);
            push(&mut events, u, None, paper, ts, 1, Channel::UserPaper, None);
            // an exposure the user skipped
            let skipped = rng.random_range(0..cfg.papers);
            let ts = rng.random_range(cfg.start_ts..=cfg.graph_window_end);
            push(
                &mut events,
                u,
                None,
                skipped,
                ts,
                0,
                Channel::UserPaper,
                None,
            );
        }
    }

    let c = cfg.candidates_per_session as i64;
    let windows = [
        (cfg.window_sessions, cfg.start_ts, cfg.graph_window_end - c),
        (cfg.sessions, cfg.graph_window_end + 1, cfg.end_ts - c),
    ];
    for (count, lo, hi) in windows {
        for _ in 0..count {
            let u = rng.random_range(0..cfg.users);
            let scenario = sample_scenario(&mut rng, cfg.scenario_mix);
            let primary = world.truth.user_primary[u];
            let kw_topic = match scenario {
                Scenario::S1 => primary,
                Scenario::S2 => {
                    let off = *[k - 2, k - 1, 1, 2].choose(&mut rng).unwrap();
                    (primary + off) % k
                }
                Scenario::S3 => {
                    let far: Vec<usize> = (0..k)
                        .filter(|&t| ring_distance(t, primary, k) >= 3)
                        .collect();
                    *far.choose(&mut rng).unwrap()
                }
            };
            let keyword = world.used_words[kw_topic].choose(&mut rng).unwrap().clone();
            let ts0 = rng.random_range(lo..=hi.max(lo));
            let w = scenario_user_weight(scenario);
            for j in 0..cfg.candidates_per_session {
                let r: f64 = rng.random();
                let paper = if r < 0.4 {
                    *world.papers_by_topic[kw_topic].choose(&mut rng).unwrap()
                } else if r < 0.7 {
                    *world.papers_by_topic[primary].choose(&mut rng).unwrap()
                } else {
                    rng.random_range(0..cfg.papers)
                };
                let pt = world.truth.paper_topic[paper];
                let mix = w * world.affinity(u, pt) + (1.0 - w) * relevance(kw_topic, pt, k);
                let logit = cfg.signal_scale * (mix - 0.5)
                    + cfg.popularity_weight * world.truth.popularity[paper];
                let mut label = u8::from(rng.random_bool(sigmoid(logit)));
                if rng.random_bool(cfg.noise_rate) {
                    label = 1 - label;
                }
                push(
                    &mut events,
                    u,
                    Some(keyword.clone()),
                    paper,
                    ts0 + j as i64,
                    label,
                    Channel::UserKeywordPaper,
                    Some(scenario),
                );
            }
        }
    }

    events.sort_by_key(|(r, _)| r.ts);
    let mut log = Vec::with_capacity(events.len());
    let mut scenarios = Vec::new();
    for (i, (mut r, s)) in events.into_iter().enumerate() {
        r.record = i;
        if let Some(scenario) = s {
            scenarios.push(ScenarioTag {
                record: i,
                scenario,
            });
        }
        log.push(r);
    }

    Ok(Dataset {
        config: cfg.clone(),
        log,
        titles,
        features,
        user_keywords,
        scenarios,
        truth: Some(world.truth),
    })
}

fn sample_scenario(rng: &mut ChaCha8Rng, mix: [f64; 3]) -> Scenario {
    let r: f64 = rng.random();
    if r < mix[0] {
        Scenario::S1
    } else if r < mix[0] + mix[1] {
        Scenario::S2
    } else {
        Scenario::S3
    }
}

/// Shuffles in place with a dedicated stream derived from `seed`.
pub(crate) fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
}
