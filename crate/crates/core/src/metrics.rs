//! Ranking, calibration, diversity, and trace metrics, plus the harness
//! that scores a model over evaluation instances and aggregates an
//! [`EvalReport`].
//!
//! Each instance ranks one held-out positive against sampled negatives.
//! Per-instance work runs in parallel; aggregation is a sequential ordered
//! reduction, so reports do not depend on thread count. Reports carry no
//! timestamps and serialize with a fixed field order, which makes equal
//! runs byte-comparable.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{DiversityMode, EceMode, RunConfig};
use crate::data::EvalInstance;
use crate::graph::{GraphError, SemanticGraph};
use crate::reasoning::{BeamConfig, ReasoningPath, Scorer};
use crate::sphere::{EntityKind, KernelConfig, Model};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("positive item {0} is not among the ranked candidates")]
    PositiveMissing(u32),
    #[error("metric input is empty")]
    EmptyInput,
    #[error("confidence and hit lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("intra-list similarity needs at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Position-discounted gain and binary hit for a single relevant item.
/// With one positive the ideal DCG is 1, so NDCG reduces to the discount
/// at the positive's 1-based rank.
pub fn ndcg_recall_at_k(
    ranked: &[u32],
    positive: u32,
    k: usize,
) -> Result<(f64, f64), MetricsError> {
    let rank = ranked
        .iter()
        .position(|&i| i == positive)
        .ok_or(MetricsError::PositiveMissing(positive))?
        + 1;
    if rank <= k {
        Ok((1.0 / ((rank as f64) + 1.0).log2(), 1.0))
    } else {
        Ok((0.0, 0.0))
    }
}

/// Expected calibration error over equal-width confidence bins. Empty bins
/// contribute nothing; a confidence of exactly 1.0 lands in the top bin.
pub fn ece(confidences: &[f64], hits: &[bool], bins: usize) -> Result<f64, MetricsError> {
    if confidences.len() != hits.len() {
        return Err(MetricsError::LengthMismatch(confidences.len(), hits.len()));
    }
    if confidences.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut hit_sum = vec![0.0f64; bins];
    for (&c, &h) in confidences.iter().zip(hits) {
        debug_assert!((0.0..=1.0).contains(&c), "confidence {c} outside [0, 1]");
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += c;
        hit_sum[b] += f64::from(h as u8);
    }
    let n = confidences.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let m = count[b] as f64;
        total += (m / n) * (hit_sum[b] / m - conf_sum[b] / m).abs();
    }
    Ok(total)
}

/// Unique-tag coverage of the top-k list. Normalized mode divides by the
/// tag union of the whole candidate list; absolute mode reports the raw
/// unique-tag count. An untagged top-k scores 0 either way.
pub fn diversity_at_k<'a>(
    ranked: &[u32],
    tags_of: impl Fn(u32) -> &'a [u32],
    k: usize,
    mode: DiversityMode,
) -> f64 {
    let top: BTreeSet<u32> = ranked
        .iter()
        .take(k)
        .flat_map(|&i| tags_of(i).iter().copied())
        .collect();
    if top.is_empty() {
        return 0.0;
    }
    match mode {
        DiversityMode::Absolute => top.len() as f64,
        DiversityMode::Normalized => {
            let all: BTreeSet<u32> = ranked
                .iter()
                .flat_map(|&i| tags_of(i).iter().copied())
                .collect();
            top.len() as f64 / all.len() as f64
        }
    }
}

/// Jaccard similarity of two sorted tag slices. Two empty sets count as
/// identical.
fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let mut inter = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Mean pairwise tag-set similarity within the top-k. Lower is more
/// diverse. Tag slices must be sorted.
pub fn tils_at_k<'a>(
    ranked: &[u32],
    tags_of: impl Fn(u32) -> &'a [u32],
    k: usize,
) -> Result<f64, MetricsError> {
    let top: Vec<&[u32]> = ranked.iter().take(k).map(|&i| tags_of(i)).collect();
    if top.len() < 2 {
        return Err(MetricsError::TooFewItems(top.len()));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..top.len() {
        for j in (i + 1)..top.len() {
            sum += jaccard(top[i], top[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Aggregate view of reasoning traces: how often a path exists, how often
/// its tags touch the target item's tags, and how confident the covered
/// paths are. Percentages are over 0..=100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceStats {
    pub alignment_pct: f64,
    pub coverage_pct: f64,
    pub mean_confidence: f64,
}

/// Computes trace statistics from (best path, target item tags) pairs.
/// Pairs without a path count toward coverage's denominator only.
pub fn trace_stats<'a>(
    pairs: impl IntoIterator<Item = (Option<&'a ReasoningPath>, &'a [u32])>,
) -> TraceStats {
    let mut total = 0usize;
    let mut covered = 0usize;
    let mut aligned = 0usize;
    let mut conf_sum = 0.0f64;
    for (path, item_tags) in pairs {
        total += 1;
        let Some(path) = path else { continue };
        covered += 1;
        conf_sum += path.score();
        let touches = path
            .entities
            .iter()
            .filter(|e| e.kind == EntityKind::Tag)
            .any(|e| item_tags.binary_search(&e.index).is_ok());
        if touches {
            aligned += 1;
        }
    }
    TraceStats {
        alignment_pct: if covered == 0 { 0.0 } else { 100.0 * aligned as f64 / covered as f64 },
        coverage_pct: if total == 0 { 0.0 } else { 100.0 * covered as f64 / total as f64 },
        mean_confidence: if covered == 0 { 0.0 } else { conf_sum / covered as f64 },
    }
}

/// Everything measured for one evaluation instance. Kept out of the
/// serialized report; callers that need per-instance detail (trace checks,
/// debugging) read these directly.
#[derive(Debug, Clone)]
pub struct InstanceOutcome {
    pub user: u32,
    pub positive: u32,
    /// 1-based rank of the positive among the candidates.
    pub rank: usize,
    pub ndcg: f64,
    pub recall: f64,
    pub diversity: f64,
    pub tils: f64,
    /// Score of the top-ranked candidate.
    pub confidence: f64,
    /// Whether the top-ranked candidate is the positive.
    pub top_hit: bool,
    pub positive_score: f64,
    pub positive_path: Option<ReasoningPath>,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PercentileSummary {
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerUserBreakdown {
    pub ndcg: PercentileSummary,
    pub recall: PercentileSummary,
    pub diversity: PercentileSummary,
    pub tils: PercentileSummary,
}

/// Aggregated evaluation results plus the exact metric variants used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub ablation: String,
    pub kernel_variant: String,
    pub k: usize,
    pub n_negatives: usize,
    pub ece_bins: usize,
    pub ece_mode: String,
    pub diversity_mode: String,
    pub instances: usize,
    pub users: usize,
    pub truncated_instances: usize,
    pub ndcg_at_k: f64,
    pub recall_at_k: f64,
    pub ece: f64,
    pub diversity_at_k: f64,
    pub tils_at_k: f64,
    pub alignment_pct: f64,
    pub coverage_pct: f64,
    pub mean_confidence: f64,
    pub per_user: PerUserBreakdown,
}

/// Renders a report as pretty JSON with a trailing newline. Field order is
/// fixed by the struct, so equal reports render to equal bytes.
pub fn render_report(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn summarize(mut values: Vec<f64>) -> PercentileSummary {
    values.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    PercentileSummary {
        p10: percentile(&values, 0.10),
        p25: percentile(&values, 0.25),
        p50: percentile(&values, 0.50),
        p75: percentile(&values, 0.75),
        p90: percentile(&values, 0.90),
    }
}

fn eval_instance(
    model: &Model,
    graph: &SemanticGraph,
    inst: &EvalInstance,
    bc: &BeamConfig,
    kcfg: &KernelConfig,
    k: usize,
    diversity_mode: DiversityMode,
) -> Result<InstanceOutcome, MetricsError> {
    let mut sc = Scorer::new(model, graph, *kcfg);
    let mut candidates = Vec::with_capacity(inst.negatives.len() + 1);
    candidates.push(inst.positive);
    candidates.extend_from_slice(&inst.negatives);
    let ranked = sc.recommend(inst.user, &candidates, candidates.len(), bc)?;

    let ranked_items: Vec<u32> = ranked.iter().map(|r| r.item).collect();
    let (ndcg, recall) = ndcg_recall_at_k(&ranked_items, inst.positive, k)?;
    let rank = ranked_items
        .iter()
        .position(|&i| i == inst.positive)
        .expect("checked by ndcg_recall_at_k")
        + 1;
    let diversity = diversity_at_k(&ranked_items, |i| graph.item_tags(i), k, diversity_mode);
    let tils = tils_at_k(&ranked_items, |i| graph.item_tags(i), k)?;
    let top = &ranked[0];
    let pos_entry = ranked
        .iter()
        .find(|r| r.item == inst.positive)
        .expect("positive is ranked");
    Ok(InstanceOutcome {
        user: inst.user,
        positive: inst.positive,
        rank,
        ndcg,
        recall,
        diversity,
        tils,
        confidence: top.score,
        top_hit: top.item == inst.positive,
        positive_score: pos_entry.score,
        positive_path: pos_entry.path.clone(),
        truncated: inst.truncated,
    })
}

/// Scores every instance and aggregates the full report. Instances are
/// processed in parallel; the reduction preserves instance order.
pub fn evaluate(
    model: &Model,
    graph: &SemanticGraph,
    instances: &[EvalInstance],
    cfg: &RunConfig,
) -> Result<(EvalReport, Vec<InstanceOutcome>), MetricsError> {
    if instances.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let bc = BeamConfig::from_run(cfg);
    let kcfg = KernelConfig::new(cfg.kernel_variant, cfg.ablation);
    let k = cfg.eval_k;

    let outcomes: Vec<InstanceOutcome> = instances
        .par_iter()
        .map(|inst| eval_instance(model, graph, inst, &bc, &kcfg, k, cfg.diversity_mode))
        .collect::<Result<_, _>>()?;

    let n = outcomes.len() as f64;
    let mean = |f: &dyn Fn(&InstanceOutcome) -> f64| outcomes.iter().map(|o| f(o)).sum::<f64>() / n;

    let (confidences, hits): (Vec<f64>, Vec<bool>) = match cfg.ece_mode {
        EceMode::TopOne => outcomes.iter().map(|o| (o.confidence, o.top_hit)).unzip(),
        EceMode::PerCandidate => {
            // Re-rank per instance to recover every candidate's score in
            // ranked order.
            let mut confs = Vec::new();
            let mut hs = Vec::new();
            for (inst, o) in instances.iter().zip(&outcomes) {
                let mut sc = Scorer::new(model, graph, kcfg);
                let mut candidates = Vec::with_capacity(inst.negatives.len() + 1);
                candidates.push(inst.positive);
                candidates.extend_from_slice(&inst.negatives);
                let ranked = sc.recommend(inst.user, &candidates, candidates.len(), &bc)?;
                for r in ranked {
                    confs.push(r.score);
                    hs.push(r.item == o.positive);
                }
            }
            (confs, hs)
        }
    };
    let ece_value = ece(&confidences, &hits, cfg.ece_bins)?;

    let traces = trace_stats(
        outcomes
            .iter()
            .map(|o| (o.positive_path.as_ref(), graph.item_tags(o.positive))),
    );

    let mut by_user: BTreeMap<u32, Vec<&InstanceOutcome>> = BTreeMap::new();
    for o in &outcomes {
        by_user.entry(o.user).or_default().push(o);
    }
    let user_means = |f: &dyn Fn(&InstanceOutcome) -> f64| -> Vec<f64> {
        by_user
            .values()
            .map(|os| os.iter().map(|o| f(o)).sum::<f64>() / os.len() as f64)
            .collect()
    };

    let report = EvalReport {
        config_hash: cfg.hash(),
        ablation: cfg.ablation.to_string(),
        kernel_variant: cfg.kernel_variant.to_string(),
        k,
        n_negatives: cfg.n_negatives,
        ece_bins: cfg.ece_bins,
        ece_mode: cfg.ece_mode.to_string(),
        diversity_mode: cfg.diversity_mode.to_string(),
        instances: outcomes.len(),
        users: by_user.len(),
        truncated_instances: outcomes.iter().filter(|o| o.truncated).count(),
        ndcg_at_k: mean(&|o| o.ndcg),
        recall_at_k: mean(&|o| o.recall),
        ece: ece_value,
        diversity_at_k: mean(&|o| o.diversity),
        tils_at_k: mean(&|o| o.tils),
        alignment_pct: traces.alignment_pct,
        coverage_pct: traces.coverage_pct,
        mean_confidence: traces.mean_confidence,
        per_user: PerUserBreakdown {
            ndcg: summarize(user_means(&|o| o.ndcg)),
            recall: summarize(user_means(&|o| o.recall)),
            diversity: summarize(user_means(&|o| o.diversity)),
            tils: summarize(user_means(&|o| o.tils)),
        },
    };
    Ok((report, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;
    use crate::graph::build_graph;
    use crate::sphere::{EntityCounts, InitOptions};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ndcg_recall_pinned_ranks() {
        let ranked: Vec<u32> = (0..20).collect();
        assert_eq!(ndcg_recall_at_k(&ranked, 0, 10).unwrap(), (1.0, 1.0));
        assert_eq!(ndcg_recall_at_k(&ranked, 2, 10).unwrap(), (0.5, 1.0));
        assert_eq!(ndcg_recall_at_k(&ranked, 10, 10).unwrap(), (0.0, 0.0));
        assert!(matches!(
            ndcg_recall_at_k(&ranked, 99, 10),
            Err(MetricsError::PositiveMissing(99))
        ));
    }

    #[test]
    fn ndcg_never_drops_when_positive_moves_up() {
        let ranked: Vec<u32> = (0..30).collect();
        let mut prev = -1.0;
        for rank in (1..=30).rev() {
            let (ndcg, _) = ndcg_recall_at_k(&ranked, (rank - 1) as u32, 10).unwrap();
            assert!(ndcg >= prev, "rank {rank} decreased ndcg");
            prev = ndcg;
        }
    }

    #[test]
    fn ece_pinned_examples() {
        let ones = [1.0; 4];
        assert_eq!(ece(&ones, &[true; 4], 10).unwrap(), 0.0);
        assert_eq!(ece(&ones, &[false; 4], 10).unwrap(), 1.0);
        // Two occupied bins: (1/2)*|1-0.95| + (1/2)*|1-0.05| = 0.5.
        let got = ece(&[0.95, 0.05], &[true, true], 10).unwrap();
        assert!((got - 0.5).abs() < 1e-15);
        assert!(matches!(ece(&[], &[], 10), Err(MetricsError::EmptyInput)));
        assert!(matches!(
            ece(&[0.5], &[true, false], 10),
            Err(MetricsError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn ece_is_permutation_invariant() {
        let mut rng = StdRng::seed_from_u64(7);
        let confs: Vec<f64> = (0..200).map(|_| rng.gen::<f64>()).collect();
        let hits: Vec<bool> = (0..200).map(|_| rng.gen::<bool>()).collect();
        let base = ece(&confs, &hits, 10).unwrap();
        let mut idx: Vec<usize> = (0..200).collect();
        for i in 0..idx.len() {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        let confs_p: Vec<f64> = idx.iter().map(|&i| confs[i]).collect();
        let hits_p: Vec<bool> = idx.iter().map(|&i| hits[i]).collect();
        assert_eq!(base, ece(&confs_p, &hits_p, 10).unwrap());
    }

    #[test]
    fn ece_near_zero_for_calibrated_stream() {
        let mut rng = StdRng::seed_from_u64(99);
        let n = 100_000;
        let confs: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let hits: Vec<bool> = confs.iter().map(|&c| rng.gen::<f64>() < c).collect();
        assert!(ece(&confs, &hits, 10).unwrap() <= 0.02);
    }

    #[test]
    fn diversity_pinned_examples() {
        // Items: 0..=3 each with a distinct tag; 4..=5 untagged.
        let table: Vec<Vec<u32>> = vec![vec![0], vec![1], vec![2], vec![3], vec![], vec![]];
        let tags_of = |i: u32| -> &[u32] { &table[i as usize] };

        // Top-k covers every candidate tag.
        let ranked = [0u32, 1, 2, 3];
        assert_eq!(diversity_at_k(&ranked, tags_of, 10, DiversityMode::Normalized), 1.0);

        // Top 2 share one tag of the 4 spanned by candidates.
        let shared: Vec<Vec<u32>> = vec![vec![0], vec![0], vec![1], vec![2], vec![3]];
        let shared_of = |i: u32| -> &[u32] { &shared[i as usize] };
        let ranked = [0u32, 1, 2, 3, 4];
        assert_eq!(diversity_at_k(&ranked, shared_of, 2, DiversityMode::Normalized), 0.25);
        assert_eq!(diversity_at_k(&ranked, shared_of, 2, DiversityMode::Absolute), 1.0);

        // Untagged top-k scores zero.
        let ranked = [4u32, 5, 0];
        assert_eq!(diversity_at_k(&ranked, tags_of, 2, DiversityMode::Normalized), 0.0);
    }

    #[test]
    fn tils_pinned_examples() {
        let same: Vec<Vec<u32>> = vec![vec![1, 2], vec![1, 2], vec![1, 2]];
        let same_of = |i: u32| -> &[u32] { &same[i as usize] };
        assert_eq!(tils_at_k(&[0, 1, 2], same_of, 10).unwrap(), 1.0);

        let disjoint: Vec<Vec<u32>> = vec![vec![0], vec![1], vec![2]];
        let disjoint_of = |i: u32| -> &[u32] { &disjoint[i as usize] };
        assert_eq!(tils_at_k(&[0, 1, 2], disjoint_of, 10).unwrap(), 0.0);

        // {a,b} vs {b,c}: intersection 1, union 3.
        let overlap: Vec<Vec<u32>> = vec![vec![0, 1], vec![1, 2]];
        let overlap_of = |i: u32| -> &[u32] { &overlap[i as usize] };
        let got = tils_at_k(&[0, 1], overlap_of, 10).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-15);

        // Two untagged items count as maximally redundant.
        let empty: Vec<Vec<u32>> = vec![vec![], vec![]];
        let empty_of = |i: u32| -> &[u32] { &empty[i as usize] };
        assert_eq!(tils_at_k(&[0, 1], empty_of, 10).unwrap(), 1.0);

        assert!(matches!(
            tils_at_k(&[0], empty_of, 10),
            Err(MetricsError::TooFewItems(1))
        ));
    }

    #[test]
    fn tils_ignores_order_within_top_k() {
        let table: Vec<Vec<u32>> = vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![0, 3]];
        let tags_of = |i: u32| -> &[u32] { &table[i as usize] };
        let a = tils_at_k(&[0, 1, 2, 3], tags_of, 10).unwrap();
        let b = tils_at_k(&[3, 1, 0, 2], tags_of, 10).unwrap();
        assert_eq!(a, b);
    }

    fn tiny_path(tags: &[u32]) -> ReasoningPath {
        use crate::sphere::EntityId;
        let mut entities = vec![EntityId::user(0)];
        entities.extend(tags.iter().map(|&t| EntityId::tag(t)));
        entities.push(EntityId::item(0));
        let edge_logs = vec![-0.5; entities.len() - 1];
        let log_score = edge_logs.iter().sum();
        ReasoningPath { entities, edge_logs, log_score }
    }

    #[test]
    fn trace_stats_counts_coverage_and_alignment() {
        let aligned = tiny_path(&[3]);
        let misaligned = tiny_path(&[9]);
        let item_tags: Vec<u32> = vec![2, 3];
        let stats = trace_stats(vec![
            (Some(&aligned), &item_tags[..]),
            (Some(&misaligned), &item_tags[..]),
            (None, &item_tags[..]),
        ]);
        assert!((stats.coverage_pct - 2.0 / 3.0 * 100.0).abs() < 1e-12);
        assert_eq!(stats.alignment_pct, 50.0);
        assert!((stats.mean_confidence - (-1.0f64).exp()).abs() < 1e-12);

        let none = trace_stats(vec![(None, &item_tags[..])]);
        assert_eq!(none.coverage_pct, 0.0);
        assert_eq!(none.alignment_pct, 0.0);
        assert_eq!(none.mean_confidence, 0.0);
    }

    fn eval_fixture() -> (Model, SemanticGraph, Vec<EvalInstance>) {
        // Positive item 0 shares the user's tag; negatives 1 and 2 are
        // tagged but unreachable from the user.
        let counts = EntityCounts { users: 1, items: 4, tags: 3 };
        let pairs = [(0u32, 0u32), (3, 0), (1, 1), (2, 2)];
        let train = [Interaction { user: 0, item: 3, ts: 1 }];
        let graph = build_graph(&train, &pairs, counts, 1);
        let model = Model::init(counts, 4, 17, &InitOptions::default());
        let instances = vec![EvalInstance {
            user: 0,
            positive: 0,
            negatives: vec![1, 2],
            truncated: true,
        }];
        (model, graph, instances)
    }

    #[test]
    fn evaluate_perfect_separation_scores_one() {
        let (model, graph, instances) = eval_fixture();
        let cfg = RunConfig::default();
        let (report, outcomes) = evaluate(&model, &graph, &instances, &cfg).unwrap();
        assert_eq!(report.ndcg_at_k, 1.0);
        assert_eq!(report.recall_at_k, 1.0);
        assert_eq!(report.coverage_pct, 100.0);
        assert_eq!(report.alignment_pct, 100.0);
        assert_eq!(report.instances, 1);
        assert_eq!(report.users, 1);
        assert_eq!(report.truncated_instances, 1);
        assert_eq!(outcomes[0].rank, 1);
        assert!(outcomes[0].top_hit);
        assert_eq!(outcomes[0].positive_score, outcomes[0].confidence);
        let path = outcomes[0].positive_path.as_ref().unwrap();
        assert_eq!(path.score(), outcomes[0].positive_score);
    }

    #[test]
    fn evaluate_renders_identically_across_runs() {
        let (model, graph, instances) = eval_fixture();
        let cfg = RunConfig::default();
        let (r1, _) = evaluate(&model, &graph, &instances, &cfg).unwrap();
        let (r2, _) = evaluate(&model, &graph, &instances, &cfg).unwrap();
        let j1 = render_report(&r1);
        let j2 = render_report(&r2);
        assert_eq!(j1, j2);
        for key in ["ndcg_at_k", "recall_at_k", "\"ece\"", "diversity_at_k", "tils_at_k"] {
            assert!(j1.contains(key), "report JSON lacks {key}");
        }
    }

    #[test]
    fn evaluate_per_candidate_mode_changes_ece_input() {
        let (model, graph, instances) = eval_fixture();
        let mut cfg = RunConfig::default();
        let (top_one, _) = evaluate(&model, &graph, &instances, &cfg).unwrap();
        cfg.ece_mode = EceMode::PerCandidate;
        let (per_cand, _) = evaluate(&model, &graph, &instances, &cfg).unwrap();
        assert_eq!(per_cand.ece_mode, "per_candidate");
        // Three candidates, one of them the hit, versus one top-1 sample.
        assert_ne!(top_one.ece, per_cand.ece);
    }

    #[test]
    fn evaluate_rejects_empty_instances() {
        let (model, graph, _) = eval_fixture();
        let cfg = RunConfig::default();
        assert!(matches!(
            evaluate(&model, &graph, &[], &cfg),
            Err(MetricsError::EmptyInput)
        ));
    }

    #[test]
    fn percentiles_interpolate_between_user_means() {
        let summary = summarize(vec![0.0, 1.0]);
        assert_eq!(summary.p50, 0.5);
        assert_eq!(summary.p10, 0.1);
        assert_eq!(summary.p90, 0.9);
        let single = summarize(vec![0.7]);
        assert_eq!(single.p10, 0.7);
        assert_eq!(single.p90, 0.7);
    }
}
