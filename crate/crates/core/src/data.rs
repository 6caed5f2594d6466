//! Dataset ingestion, chronological splitting, evaluation-instance
//! construction, and the synthetic hierarchy generator.
//!
//! Input is two TSV files: interactions (`user_id<TAB>item_id<TAB>timestamp`
//! with an optional fourth rating column) and item tags
//! (`item_id<TAB>tag`). Ingestion interns raw ids in first-appearance order,
//! cleans tags, deduplicates, and sorts by timestamp, producing an immutable
//! [`Dataset`] that every later stage reads. Malformed rows are skipped and
//! counted; more than 10% malformed in either file aborts the run.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::sphere::EntityCounts;

/// Fraction of malformed rows in one file that turns skipping into an error.
const MALFORMED_LIMIT: f64 = 0.10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config is missing {0}")]
    MissingPath(&'static str),
    #[error("no valid interactions after parsing")]
    NoInteractions,
    #[error("{path}: {malformed} of {total} rows malformed, above the {MALFORMED_LIMIT} limit")]
    TooManyMalformed {
        path: String,
        malformed: usize,
        total: usize,
    },
    #[error("no evaluation rows to build instances from")]
    NoEvalRows,
    #[error("synthetic hierarchy needs depth >= 2, got {0}")]
    SynthBadDepth(usize),
    #[error("synthetic hierarchy with depth {depth} needs at least {needed} tags, got {n_tags}")]
    SynthTooFewTags {
        n_tags: usize,
        depth: usize,
        needed: usize,
    },
    #[error("synthetic hierarchy needs at least {0}")]
    SynthTooSmall(&'static str),
}

/// One positive interaction after interning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub ts: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub users: usize,
    pub items: usize,
    pub tags: usize,
    pub interactions: usize,
    pub malformed_interaction_rows: usize,
    pub malformed_tag_rows: usize,
    pub low_rating_rows: usize,
    pub duplicate_rows: usize,
    pub raw_tag_rows: usize,
    pub tag_pairs: usize,
    pub tags_dropped_short: usize,
    pub tags_dropped_rare: usize,
    /// Interactions divided by users x items, for eyeballing against the
    /// source dataset's published density.
    pub density: f64,
}

/// Immutable parsed dataset: interned vocabularies, timestamp-sorted
/// interactions, and deduplicated item-tag pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub tags: Vec<String>,
    pub interactions: Vec<Interaction>,
    /// (item, tag) pairs, deduplicated, in first-appearance order.
    pub item_tag_pairs: Vec<(u32, u32)>,
    pub report: IngestReport,
}

impl Dataset {
    pub fn counts(&self) -> EntityCounts {
        EntityCounts {
            users: self.users.len(),
            items: self.items.len(),
            tags: self.tags.len(),
        }
    }

    pub fn user_index(&self, raw: &str) -> Option<u32> {
        self.users.iter().position(|u| u == raw).map(|i| i as u32)
    }

    pub fn item_index(&self, raw: &str) -> Option<u32> {
        self.items.iter().position(|i| i == raw).map(|i| i as u32)
    }
}

#[derive(Default)]
struct Interner {
    map: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.map.get(raw) {
            return id;
        }
        let id = self.names.len() as u32;
        self.map.insert(raw.to_string(), id);
        self.names.push(raw.to_string());
        id
    }
}

/// Normalizes one raw tag: trim, lowercase, collapse internal whitespace.
/// Returns `None` when the cleaned text is shorter than `min_len` chars.
fn clean_tag(raw: &str, min_len: usize) -> Option<String> {
    let cleaned = raw
        .trim()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    if cleaned.chars().count() < min_len {
        None
    } else {
        Some(cleaned)
    }
}

fn read_file(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and parses the two dataset files named in the config.
pub fn ingest(cfg: &RunConfig) -> Result<Dataset, DataError> {
    let inter_path = cfg
        .interactions
        .as_ref()
        .ok_or(DataError::MissingPath("data.interactions"))?;
    let tags_path = cfg
        .item_tags
        .as_ref()
        .ok_or(DataError::MissingPath("data.item_tags"))?;
    let inter_text = read_file(inter_path)?;
    let tags_text = read_file(tags_path)?;
    ingest_from_strings(
        &inter_text,
        &tags_text,
        cfg,
        &inter_path.display().to_string(),
        &tags_path.display().to_string(),
    )
}

/// Parses in-memory file bodies; `inter_name`/`tags_name` only label errors.
pub fn ingest_from_strings(
    inter_text: &str,
    tags_text: &str,
    cfg: &RunConfig,
    inter_name: &str,
    tags_name: &str,
) -> Result<Dataset, DataError> {
    let mut users = Interner::default();
    let mut items = Interner::default();

    let mut raw_rows: Vec<Interaction> = Vec::new();
    let mut malformed_interaction_rows = 0usize;
    let mut low_rating_rows = 0usize;
    let mut total_rows = 0usize;
    for (li, line) in inter_text.lines().enumerate() {
        if cfg.has_header && li == 0 {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        total_rows += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 || fields.len() > 4 {
            malformed_interaction_rows += 1;
            continue;
        }
        let user = fields[0].trim();
        let item = fields[1].trim();
        let ts = match fields[2].trim().parse::<i64>() {
            Ok(ts) if !user.is_empty() && !item.is_empty() => ts,
            _ => {
                malformed_interaction_rows += 1;
                continue;
            }
        };
        if fields.len() == 4 {
            match fields[3].trim().parse::<f64>() {
                Ok(r) if r < cfg.rating_min => {
                    low_rating_rows += 1;
                    continue;
                }
                Ok(_) => {}
                Err(_) => {
                    malformed_interaction_rows += 1;
                    continue;
                }
            }
        }
        raw_rows.push(Interaction {
            user: users.intern(user),
            item: items.intern(item),
            ts,
        });
    }
    if total_rows > 0
        && (malformed_interaction_rows as f64) / (total_rows as f64) > MALFORMED_LIMIT
    {
        return Err(DataError::TooManyMalformed {
            path: inter_name.to_string(),
            malformed: malformed_interaction_rows,
            total: total_rows,
        });
    }

    let mut seen = BTreeSet::new();
    let before_dedup = raw_rows.len();
    raw_rows.retain(|r| seen.insert((r.user, r.item, r.ts)));
    let duplicate_rows = before_dedup - raw_rows.len();
    raw_rows.sort_by_key(|r| r.ts);
    if raw_rows.is_empty() {
        return Err(DataError::NoInteractions);
    }

    // Tag rows: clean first, then drop tags attached to too few distinct
    // items, then intern survivors in first-appearance order.
    let mut cleaned: Vec<(u32, String)> = Vec::new();
    let mut malformed_tag_rows = 0usize;
    let mut tags_dropped_short = 0usize;
    let mut raw_tag_rows = 0usize;
    for (li, line) in tags_text.lines().enumerate() {
        if cfg.has_header && li == 0 {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        raw_tag_rows += 1;
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(item), Some(tag), None) if !item.trim().is_empty() => {
                match clean_tag(tag, cfg.min_tag_len) {
                    Some(cleaned_tag) => cleaned.push((items.intern(item.trim()), cleaned_tag)),
                    None => tags_dropped_short += 1,
                }
            }
            _ => malformed_tag_rows += 1,
        }
    }
    if raw_tag_rows > 0 && (malformed_tag_rows as f64) / (raw_tag_rows as f64) > MALFORMED_LIMIT {
        return Err(DataError::TooManyMalformed {
            path: tags_name.to_string(),
            malformed: malformed_tag_rows,
            total: raw_tag_rows,
        });
    }

    let mut pair_seen = BTreeSet::new();
    cleaned.retain(|(item, tag)| pair_seen.insert((tag.clone(), *item)));
    let mut items_per_tag: HashMap<&str, usize> = HashMap::new();
    for (_, tag) in &cleaned {
        *items_per_tag.entry(tag.as_str()).or_default() += 1;
    }
    let mut tags = Interner::default();
    let mut item_tag_pairs = Vec::new();
    let mut rare_tags = BTreeSet::new();
    for (item, tag) in &cleaned {
        if items_per_tag[tag.as_str()] < cfg.min_tag_items {
            rare_tags.insert(tag.clone());
            continue;
        }
        item_tag_pairs.push((*item, tags.intern(tag)));
    }

    let report = IngestReport {
        users: users.names.len(),
        items: items.names.len(),
        tags: tags.names.len(),
        interactions: raw_rows.len(),
        malformed_interaction_rows,
        malformed_tag_rows,
        low_rating_rows,
        duplicate_rows,
        raw_tag_rows,
        tag_pairs: item_tag_pairs.len(),
        tags_dropped_short,
        tags_dropped_rare: rare_tags.len(),
        density: raw_rows.len() as f64 / (users.names.len() as f64 * items.names.len() as f64),
    };
    Ok(Dataset {
        users: users.names,
        items: items.names,
        tags: tags.names,
        interactions: raw_rows,
        item_tag_pairs,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train_rows: usize,
    pub val_rows: usize,
    pub test_rows: usize,
    pub dropped_cold_val: usize,
    pub dropped_cold_test: usize,
}

/// Chronological train/val/test partition of one dataset's interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Interaction>,
    pub val: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub report: SplitReport,
}

/// Cuts the timestamp-sorted log at global row boundaries, then drops
/// val/test rows whose user never appears in train.
pub fn chronological_split(dataset: &Dataset, cfg: &RunConfig) -> Splits {
    let rows = &dataset.interactions;
    let n = rows.len();
    let train_end = (cfg.train_frac * n as f64).floor() as usize;
    let val_end = ((cfg.train_frac + cfg.val_frac) * n as f64).floor() as usize;
    let train: Vec<Interaction> = rows[..train_end].to_vec();
    let train_users: BTreeSet<u32> = train.iter().map(|r| r.user).collect();

    let keep = |slice: &[Interaction]| -> (Vec<Interaction>, usize) {
        let kept: Vec<Interaction> = slice
            .iter()
            .filter(|r| train_users.contains(&r.user))
            .copied()
            .collect();
        let dropped = slice.len() - kept.len();
        (kept, dropped)
    };
    let (val, dropped_cold_val) = keep(&rows[train_end..val_end]);
    let (test, dropped_cold_test) = keep(&rows[val_end..]);

    let report = SplitReport {
        train_rows: train.len(),
        val_rows: val.len(),
        test_rows: test.len(),
        dropped_cold_val,
        dropped_cold_test,
    };
    Splits { train, val, test, report }
}

/// Items each user touched across the given row groups, indexed by user.
pub fn user_item_sets(n_users: usize, groups: &[&[Interaction]]) -> Vec<BTreeSet<u32>> {
    let mut sets = vec![BTreeSet::new(); n_users];
    for group in groups {
        for r in *group {
            sets[r.user as usize].insert(r.item);
        }
    }
    sets
}

/// One ranking task: a held-out positive plus sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub user: u32,
    pub positive: u32,
    pub negatives: Vec<u32>,
    /// True when the catalog could not supply the full negative count.
    pub truncated: bool,
}

/// Builds one instance per `source` row. Negatives are drawn uniformly
/// without replacement from the catalog minus every item the user touched
/// in any split, using one seeded stream per user so instance sets are
/// stable under reordering of other users' rows.
pub fn build_eval_instances(
    source: &[Interaction],
    dataset: &Dataset,
    splits: &Splits,
    n_neg: usize,
    seed: u64,
) -> Result<Vec<EvalInstance>, DataError> {
    if source.is_empty() {
        return Err(DataError::NoEvalRows);
    }
    let owned = user_item_sets(
        dataset.users.len(),
        &[&splits.train, &splits.val, &splits.test],
    );
    let n_items = dataset.items.len() as u32;
    let mut streams: HashMap<u32, ChaCha20Rng> = HashMap::new();
    let mut out = Vec::with_capacity(source.len());
    for row in source {
        let rng = streams.entry(row.user).or_insert_with(|| {
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            r.set_stream(row.user as u64 + 1);
            r
        });
        let mut eligible: Vec<u32> =
            (0..n_items).filter(|i| !owned[row.user as usize].contains(i)).collect();
        let truncated = eligible.len() <= n_neg;
        let take = n_neg.min(eligible.len());
        // Partial Fisher-Yates over the index-sorted pool.
        for j in 0..take {
            let pick = rng.gen_range(j..eligible.len());
            eligible.swap(j, pick);
        }
        eligible.truncate(take);
        out.push(EvalInstance {
            user: row.user,
            positive: row.item,
            negatives: eligible,
            truncated,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_users: usize,
    pub n_items: usize,
    pub n_tags: usize,
    pub depth: usize,
    pub noise: f64,
    pub interactions_per_user: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_users: 200,
            n_items: 300,
            n_tags: 30,
            depth: 3,
            noise: 0.1,
            interactions_per_user: 20,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub branching: usize,
    pub levels: usize,
    pub tags_used: usize,
    pub leaves: usize,
    pub interactions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub interactions_tsv: String,
    pub item_tags_tsv: String,
    pub report: SynthReport,
}

/// Generates a dataset around a balanced tag tree. Only the `b^depth` leaf
/// tags are emitted; the internal levels shape co-occurrence instead: each
/// item gets a primary leaf plus, sometimes, one of the two leaves beside
/// it in tree order, with probability graded by how high their common
/// ancestor sits, so sibling neighbors share many items, cousin neighbors
/// fewer, and neighbors across top-level blocks fewest. Co-occurrence
/// therefore forms a chain over the leaves with tree-shaped link strengths,
/// and no item carries more than two tags. Each user draws interactions
/// from the single-tag items of one home leaf, with probability `noise` of
/// a uniformly random item instead, so two-tag crossover items sit outside
/// every user's own history. Rows are emitted round-robin over users with a
/// strictly increasing timestamp, so a chronological split keeps every user
/// in train.
pub fn synth_hierarchy(p: &SynthParams) -> Result<SynthOutput, DataError> {
    if p.depth < 2 {
        return Err(DataError::SynthBadDepth(p.depth));
    }
    if p.n_users == 0 || p.n_items == 0 || p.interactions_per_user == 0 {
        return Err(DataError::SynthTooSmall(
            "one user, one item, and one interaction per user",
        ));
    }
    let tree_size = |b: usize| -> usize {
        let mut total = 0usize;
        let mut level = 1usize;
        for _ in 0..p.depth {
            level = level.saturating_mul(b);
            total = total.saturating_add(level);
        }
        total
    };
    let needed = tree_size(2);
    if p.n_tags < needed {
        return Err(DataError::SynthTooFewTags {
            n_tags: p.n_tags,
            depth: p.depth,
            needed,
        });
    }
    let mut branching = 2;
    while tree_size(branching + 1) <= p.n_tags {
        branching += 1;
    }
    let leaves = branching.pow(p.depth as u32);
    let tags_used = leaves;

    let mut rng = ChaCha20Rng::seed_from_u64(p.seed);
    let tag_name = |pos: usize| format!("t{pos}");
    // Probability of attaching a neighboring leaf, by the height of the
    // lowest tree node covering both: siblings 0.2, halving per extra
    // level the pair has to climb.
    let link_prob = |a: usize, b: usize| {
        let mut height = 0u32;
        while a / branching.pow(height) != b / branching.pow(height) {
            height += 1;
        }
        0.2 * 0.5f64.powi(height as i32 - 1)
    };
    let mut item_tags_tsv = String::new();
    let mut pure = vec![true; p.n_items];
    for item in 0..p.n_items {
        let leaf = item % leaves;
        item_tags_tsv.push_str(&format!("i{item}\t{}\n", tag_name(leaf)));
        let neighbor = if rng.gen::<bool>() { leaf + 1 } else { leaf.wrapping_sub(1) };
        if neighbor < leaves && rng.gen::<f64>() < link_prob(leaf, neighbor) {
            item_tags_tsv.push_str(&format!("i{item}\t{}\n", tag_name(neighbor)));
            pure[item] = false;
        }
    }

    // Single-tag items under each leaf, by generation index; leaves whose
    // items all picked up a secondary tag fall back to their full pool.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); leaves];
    for item in 0..p.n_items {
        if pure[item] {
            pools[item % leaves].push(item);
        }
    }
    for (leaf, pool) in pools.iter_mut().enumerate() {
        if pool.is_empty() {
            pool.extend((0..p.n_items).filter(|i| i % leaves == leaf));
        }
    }

    let mut interactions_tsv = String::new();
    let mut ts: i64 = 1_000_000;
    let mut n_rows = 0usize;
    for _round in 0..p.interactions_per_user {
        for user in 0..p.n_users {
            let home = user % leaves;
            let item = if rng.gen::<f64>() < p.noise || pools[home].is_empty() {
                rng.gen_range(0..p.n_items)
            } else {
                pools[home][rng.gen_range(0..pools[home].len())]
            };
            interactions_tsv.push_str(&format!("u{user}\ti{item}\t{ts}\n"));
            ts += 1;
            n_rows += 1;
        }
    }

    Ok(SynthOutput {
        interactions_tsv,
        item_tags_tsv,
        report: SynthReport {
            branching,
            levels: p.depth,
            tags_used,
            leaves,
            interactions: n_rows,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        RunConfig::default()
    }

    const INTER: &str = "alice\tbook1\t100\nbob\tbook2\t50\nalice\tbook2\t70\n";
    const TAGS: &str = "book1\tFantasy\nbook2\tfantasy\nbook1\tEpic  Saga\nbook2\tepic saga\n";

    #[test]
    fn ingest_interns_sorts_and_cleans() {
        let ds = ingest_from_strings(INTER, TAGS, &cfg(), "i", "t").unwrap();
        // First-appearance interning.
        assert_eq!(ds.users, vec!["alice", "bob"]);
        assert_eq!(ds.items, vec!["book1", "book2"]);
        assert_eq!(ds.tags, vec!["fantasy", "epic saga"]);
        // Stable timestamp sort.
        let ts: Vec<i64> = ds.interactions.iter().map(|r| r.ts).collect();
        assert_eq!(ts, vec![50, 70, 100]);
        // Tag cleaning: lowercase + whitespace collapse merged the variants.
        assert_eq!(ds.item_tag_pairs.len(), 4);
        assert_eq!(ds.report.tags, 2);
    }

    #[test]
    fn ingest_counts_duplicates_and_malformed() {
        // Two malformed rows out of 21 stays under the hard-error limit.
        let mut inter =
            String::from("a\ti1\t10\na\ti1\t10\na\ti1\t20\nbroken row\nb\ti2\tnot_a_ts\nb\ti1\t5\n");
        for i in 0..15 {
            inter.push_str(&format!("c\titem{i}\t{}\n", 30 + i));
        }
        let tags = "i1\ttag one\ni2\ttag one\n";
        let ds = ingest_from_strings(&inter, tags, &cfg(), "i", "t").unwrap();
        assert_eq!(ds.report.duplicate_rows, 1);
        assert_eq!(ds.report.malformed_interaction_rows, 2);
        assert_eq!(ds.report.interactions, 18);
    }

    #[test]
    fn ingest_rejects_mostly_malformed_file() {
        let inter = "a\ti1\t10\nbad\nbad\nbad\n";
        let err = ingest_from_strings(inter, "i1\ttg\n", &cfg(), "inter.tsv", "t").unwrap_err();
        assert!(matches!(err, DataError::TooManyMalformed { .. }));
    }

    #[test]
    fn ingest_rejects_empty_interactions() {
        assert!(matches!(
            ingest_from_strings("", "", &cfg(), "i", "t"),
            Err(DataError::NoInteractions)
        ));
    }

    #[test]
    fn ingest_drops_short_and_rare_tags() {
        let inter = "a\ti1\t1\nb\ti2\t2\n";
        // "x" is too short; "solo" appears on a single item.
        let tags = "i1\tx\ni1\tsolo\ni1\tshared\ni2\tshared\n";
        let ds = ingest_from_strings(inter, tags, &cfg(), "i", "t").unwrap();
        assert_eq!(ds.tags, vec!["shared"]);
        assert_eq!(ds.report.tags_dropped_short, 1);
        assert_eq!(ds.report.tags_dropped_rare, 1);
    }

    #[test]
    fn ingest_rating_column_filters_rows() {
        let mut c = cfg();
        c.rating_min = 3.0;
        let inter = "a\ti1\t10\t5\nb\ti1\t20\t1\n";
        let ds = ingest_from_strings(inter, "i1\ttg\ni2\ttg\n", &c, "i", "t").unwrap();
        assert_eq!(ds.report.interactions, 1);
        assert_eq!(ds.report.low_rating_rows, 1);
    }

    #[test]
    fn ingest_honors_header_flag() {
        let mut c = cfg();
        c.has_header = true;
        let inter = "user\titem\tts\na\ti1\t10\n";
        let tags = "item\ttag\ni1\ttg\ni1\ttg2\ni2\ttg\ni2\ttg2\n";
        let ds = ingest_from_strings(inter, tags, &c, "i", "t").unwrap();
        assert_eq!(ds.report.interactions, 1);
        assert_eq!(ds.report.malformed_interaction_rows, 0);
    }

    #[test]
    fn ingest_interns_tag_only_items_into_catalog() {
        let ds = ingest_from_strings("a\ti1\t1\n", "i1\ttg\ni2\ttg\n", &cfg(), "i", "t").unwrap();
        assert_eq!(ds.items, vec!["i1", "i2"]);
    }

    fn ten_row_dataset() -> Dataset {
        let mut inter = String::new();
        for i in 0..10 {
            // u0 appears early and late; u9 only appears in the final row.
            let user = if i == 9 { "u9" } else { "u0" };
            inter.push_str(&format!("{user}\titem{i}\t{}\n", 100 + i));
        }
        let mut tags = String::new();
        for i in 0..10 {
            tags.push_str(&format!("item{i}\tcommon\n"));
        }
        ingest_from_strings(&inter, &tags, &cfg(), "i", "t").unwrap()
    }

    #[test]
    fn split_is_80_10_10_by_rows() {
        let ds = ten_row_dataset();
        let splits = chronological_split(&ds, &cfg());
        assert_eq!(splits.train.len(), 8);
        assert_eq!(splits.val.len(), 1);
        // u9's only row is in test but u9 never appears in train.
        assert_eq!(splits.test.len(), 0);
        assert_eq!(splits.report.dropped_cold_test, 1);
        assert!(splits.train.windows(2).all(|w| w[0].ts <= w[1].ts));
    }

    #[test]
    fn split_boundary_ties_follow_row_order() {
        let inter = "a\ti0\t5\na\ti1\t5\na\ti2\t5\na\ti3\t5\na\ti4\t5\n";
        let tags = "i0\ttg\ni1\ttg\n";
        let ds = ingest_from_strings(inter, tags, &cfg(), "i", "t").unwrap();
        let splits = chronological_split(&ds, &cfg());
        // floor(0.8*5)=4, floor(0.9*5)=4: val empty, test one row.
        assert_eq!(splits.train.len(), 4);
        assert_eq!(splits.val.len(), 0);
        assert_eq!(splits.test.len(), 1);
        assert_eq!(splits.test[0].item, ds.item_index("i4").unwrap());
    }

    fn instance_fixture(n_items: usize) -> (Dataset, Splits) {
        let mut inter = String::new();
        // One early user providing train mass, then a test row per user.
        for i in 0..8 {
            inter.push_str(&format!("u0\titem{i}\t{}\n", 10 + i));
        }
        inter.push_str("u0\titem0\t100\n");
        inter.push_str("u0\titem1\t101\n");
        let mut tags = String::new();
        for i in 0..n_items {
            tags.push_str(&format!("item{i}\tcommon\n"));
        }
        let ds = ingest_from_strings(&inter, &tags, &cfg(), "i", "t").unwrap();
        let splits = chronological_split(&ds, &cfg());
        (ds, splits)
    }

    #[test]
    fn instances_exclude_owned_items_and_are_reproducible() {
        let (ds, splits) = instance_fixture(200);
        let a = build_eval_instances(&splits.test, &ds, &splits, 100, 7).unwrap();
        let b = build_eval_instances(&splits.test, &ds, &splits, 100, 7).unwrap();
        assert_eq!(a, b);
        let c = build_eval_instances(&splits.test, &ds, &splits, 100, 8).unwrap();
        assert_ne!(a, c);
        let owned = user_item_sets(ds.users.len(), &[&splits.train, &splits.val, &splits.test]);
        for inst in &a {
            assert_eq!(inst.negatives.len(), 100);
            assert!(!inst.truncated);
            for n in &inst.negatives {
                assert!(!owned[inst.user as usize].contains(n));
            }
            let unique: BTreeSet<_> = inst.negatives.iter().collect();
            assert_eq!(unique.len(), inst.negatives.len());
        }
    }

    #[test]
    fn instances_flag_small_catalogs() {
        let (ds, splits) = instance_fixture(20);
        let insts = build_eval_instances(&splits.test, &ds, &splits, 100, 7).unwrap();
        for inst in &insts {
            assert!(inst.truncated);
            assert!(inst.negatives.len() < 100);
        }
    }

    #[test]
    fn instances_require_rows() {
        let (ds, splits) = instance_fixture(20);
        assert!(matches!(
            build_eval_instances(&[], &ds, &splits, 100, 7),
            Err(DataError::NoEvalRows)
        ));
    }

    #[test]
    fn synth_tree_arithmetic_depth_two() {
        let p = SynthParams {
            n_users: 4,
            n_items: 16,
            n_tags: 6,
            depth: 2,
            noise: 0.0,
            interactions_per_user: 5,
            seed: 1,
        };
        let out = synth_hierarchy(&p).unwrap();
        assert_eq!(out.report.branching, 2);
        assert_eq!(out.report.tags_used, 4);
        assert_eq!(out.report.leaves, 4);
        // Secondary attachments only reach the next leaf over, and no item
        // collects more than one of them.
        let mut per_item = vec![0usize; 16];
        for line in out.item_tags_tsv.lines() {
            let (item, tag) = line.split_once('\t').unwrap();
            let item: usize = item[1..].parse().unwrap();
            let tag: usize = tag[1..].parse().unwrap();
            assert!((item % 4).abs_diff(tag) <= 1, "row {line}");
            per_item[item] += 1;
        }
        assert!(per_item.iter().all(|&n| (1..=2).contains(&n)));
    }

    #[test]
    fn synth_zero_noise_stays_in_home_leaf() {
        let p = SynthParams {
            n_users: 6,
            n_items: 24,
            n_tags: 6,
            depth: 2,
            noise: 0.0,
            interactions_per_user: 10,
            seed: 3,
        };
        let out = synth_hierarchy(&p).unwrap();
        let ds = ingest_from_strings(
            &out.interactions_tsv,
            &out.item_tags_tsv,
            &cfg(),
            "i",
            "t",
        )
        .unwrap();
        // Reverse the name mangling to check leaf purity.
        for r in &ds.interactions {
            let user: usize = ds.users[r.user as usize][1..].parse().unwrap();
            let item: usize = ds.items[r.item as usize][1..].parse().unwrap();
            let leaves = out.report.leaves;
            assert_eq!(item % leaves, user % leaves);
        }
    }

    #[test]
    fn synth_round_robin_keeps_every_user_in_train() {
        let p = SynthParams {
            n_users: 10,
            n_items: 40,
            n_tags: 6,
            depth: 2,
            noise: 0.2,
            interactions_per_user: 10,
            seed: 9,
        };
        let out = synth_hierarchy(&p).unwrap();
        let ds =
            ingest_from_strings(&out.interactions_tsv, &out.item_tags_tsv, &cfg(), "i", "t")
                .unwrap();
        let splits = chronological_split(&ds, &cfg());
        let train_users: BTreeSet<u32> = splits.train.iter().map(|r| r.user).collect();
        assert_eq!(train_users.len(), 10);
        assert_eq!(splits.report.dropped_cold_val, 0);
        assert_eq!(splits.report.dropped_cold_test, 0);
    }

    #[test]
    fn synth_is_reproducible_and_validates() {
        let p = SynthParams::default();
        let a = synth_hierarchy(&p).unwrap();
        let b = synth_hierarchy(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.report.branching, 2);
        assert_eq!(a.report.tags_used, 8);

        assert!(matches!(
            synth_hierarchy(&SynthParams { depth: 1, ..p.clone() }),
            Err(DataError::SynthBadDepth(1))
        ));
        assert!(matches!(
            synth_hierarchy(&SynthParams { n_tags: 5, depth: 2, ..p.clone() }),
            Err(DataError::SynthTooFewTags { .. })
        ));
    }
}
