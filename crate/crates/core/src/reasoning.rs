//! Beam-search enumeration of semantic paths and max-product transitive
//! scoring, with recommendation and explanation built on top.
//!
//! A path is user → tag → … → tag → item with 1..=k tag hops. Its score is
//! the product of edge kernels, accumulated as a sum of log-kernels; the
//! pair score is the maximum over enumerated paths. Beams keep the `b` best
//! partial paths per depth, and items close partial paths at every depth,
//! so a two-edge path competes against deeper ones. All ties break
//! lexicographically on the entity-index sequence, making every ranking
//! deterministic.
//!
//! [`Scorer::exhaustive_score_pair`] is a depth-first reference
//! implementation that enumerates every simple path. It is exponential and
//! exists to validate the beam on small graphs.

use std::collections::HashMap;

use serde::Serialize;

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::graph::{GraphError, SemanticGraph};
use crate::sphere::{edge_forward, EntityId, KernelConfig, Model};

/// Beam width and maximum tag hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    pub max_hops: usize,
}

impl BeamConfig {
    pub fn new(width: usize, max_hops: usize) -> Self {
        assert!(width >= 1 && max_hops >= 1);
        BeamConfig { width, max_hops }
    }

    /// Reads width and hop count from the run config, applying the hop cap
    /// of the active ablation.
    pub fn from_run(cfg: &RunConfig) -> Self {
        let cap = cfg.ablation.max_hops_cap().unwrap_or(usize::MAX);
        BeamConfig::new(cfg.beam_width, cfg.max_hops.min(cap))
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { width: 5, max_hops: 3 }
    }
}

/// A complete scored path from a user to an item.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningPath {
    /// User, one or more tags, then the item.
    pub entities: Vec<EntityId>,
    /// Log-kernel of each consecutive pair.
    pub edge_logs: Vec<f64>,
    /// Sum of `edge_logs` in traversal order.
    pub log_score: f64,
}

impl ReasoningPath {
    pub fn score(&self) -> f64 {
        self.log_score.exp()
    }

    /// Per-edge kernel values in (0, 1].
    pub fn edge_scores(&self) -> Vec<f64> {
        self.edge_logs.iter().map(|l| l.exp()).collect()
    }

    /// Number of intermediate tags.
    pub fn hops(&self) -> usize {
        self.entities.len().saturating_sub(2)
    }
}

/// One scored candidate in a ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub item: u32,
    pub score: f64,
    pub path: Option<ReasoningPath>,
}

/// A partial path during expansion: the tag sequence after the user, with
/// its accumulated log score.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialPath {
    pub tags: Vec<u32>,
    pub log_score: f64,
}

#[derive(Default)]
struct KernelCache {
    map: HashMap<(usize, usize), f64>,
}

impl KernelCache {
    /// Cached log-kernel lookup. The kernel is bitwise symmetric, so one
    /// entry per unordered pair suffices.
    fn log(&mut self, model: &Model, kcfg: &KernelConfig, a: EntityId, b: EntityId) -> f64 {
        let ga = model.global_index(a);
        let gb = model.global_index(b);
        let key = (ga.min(gb), ga.max(gb));
        if let Some(&v) = self.map.get(&key) {
            return v;
        }
        let v = edge_forward(&model.edge_input(a, b), kcfg).log_kernel;
        self.map.insert(key, v);
        v
    }
}

/// Read-only scoring session over one model snapshot. The kernel cache
/// inside is valid exactly as long as the borrowed parameters cannot
/// change, which the borrow enforces.
pub struct Scorer<'a> {
    model: &'a Model,
    graph: &'a SemanticGraph,
    kcfg: KernelConfig,
    cache: KernelCache,
}

/// Entity sequence of a completed path, used for lexicographic ties.
fn entity_seq(tags: &[u32], item: u32) -> Vec<EntityId> {
    tags.iter()
        .map(|&t| EntityId::tag(t))
        .chain(std::iter::once(EntityId::item(item)))
        .collect()
}

fn replaces(cand_log: f64, cand_tags: &[u32], item: u32, cur: &Option<(f64, Vec<u32>)>) -> bool {
    match cur {
        None => true,
        Some((log, tags)) => {
            cand_log > *log
                || (cand_log == *log && entity_seq(cand_tags, item) < entity_seq(tags, item))
        }
    }
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a Model, graph: &'a SemanticGraph, kcfg: KernelConfig) -> Self {
        Scorer {
            model,
            graph,
            kcfg,
            cache: KernelCache::default(),
        }
    }

    pub fn log_kernel(&mut self, a: EntityId, b: EntityId) -> f64 {
        self.cache.log(self.model, &self.kcfg, a, b)
    }

    fn check(&self, e: EntityId) -> Result<(), GraphError> {
        if self.graph.contains(e) && self.model.contains(e) {
            Ok(())
        } else {
            Err(GraphError::UnknownEntity(e))
        }
    }

    /// Keeps the `width` best partials: log score descending, tag sequence
    /// ascending on exact ties.
    fn retain_top(beam: &mut Vec<PartialPath>, width: usize) {
        beam.sort_by(|p, q| {
            q.log_score
                .partial_cmp(&p.log_score)
                .expect("log scores are finite")
                .then_with(|| p.tags.cmp(&q.tags))
        });
        beam.truncate(width);
    }

    /// Expands beams of simple tag paths from a user. Element `h-1` of the
    /// result is the depth-`h` beam; expansion stops early once a beam
    /// comes up empty.
    pub fn beam_expand(&mut self, user: u32, bc: &BeamConfig) -> Vec<Vec<PartialPath>> {
        let user_e = EntityId::user(user);
        let mut frontier: Vec<PartialPath> = Vec::new();
        for &t in self.graph.user_tags(user) {
            let log_score = self.cache.log(self.model, &self.kcfg, user_e, EntityId::tag(t));
            frontier.push(PartialPath { tags: vec![t], log_score });
        }
        Self::retain_top(&mut frontier, bc.width);

        let mut beams: Vec<Vec<PartialPath>> = Vec::new();
        while !frontier.is_empty() {
            beams.push(frontier);
            if beams.len() == bc.max_hops {
                break;
            }
            let mut next: Vec<PartialPath> = Vec::new();
            for p in beams.last().expect("just pushed") {
                let last = *p.tags.last().expect("partials are never empty");
                for &t2 in self.graph.tag_tags(last) {
                    if p.tags.contains(&t2) {
                        continue;
                    }
                    let log_score = p.log_score
                        + self
                            .cache
                            .log(self.model, &self.kcfg, EntityId::tag(last), EntityId::tag(t2));
                    let mut tags = p.tags.clone();
                    tags.push(t2);
                    next.push(PartialPath { tags, log_score });
                }
            }
            Self::retain_top(&mut next, bc.width);
            frontier = next;
        }
        beams
    }

    /// Best completion of any beamed partial path against one item.
    fn best_completion(
        &mut self,
        beams: &[Vec<PartialPath>],
        item: u32,
    ) -> Option<(f64, Vec<u32>)> {
        let item_e = EntityId::item(item);
        let mut best: Option<(f64, Vec<u32>)> = None;
        for beam in beams {
            for p in beam {
                let last = *p.tags.last().expect("partials are never empty");
                if !self.graph.tag_has_item(last, item) {
                    continue;
                }
                let log = p.log_score
                    + self
                        .cache
                        .log(self.model, &self.kcfg, EntityId::tag(last), item_e);
                if replaces(log, &p.tags, item, &best) {
                    best = Some((log, p.tags.clone()));
                }
            }
        }
        best
    }

    fn materialize(&mut self, user: u32, tags: &[u32], item: u32, log_score: f64) -> ReasoningPath {
        let mut entities = Vec::with_capacity(tags.len() + 2);
        entities.push(EntityId::user(user));
        entities.extend(tags.iter().map(|&t| EntityId::tag(t)));
        entities.push(EntityId::item(item));
        let edge_logs: Vec<f64> = entities
            .windows(2)
            .map(|w| self.cache.log(self.model, &self.kcfg, w[0], w[1]))
            .collect();
        debug_assert!({
            let mut acc = 0.0;
            for l in &edge_logs {
                acc += l;
            }
            acc == log_score
        });
        ReasoningPath { entities, edge_logs, log_score }
    }

    /// Max-product path score between a user and an item, with the argmax
    /// path. Unreachable items score 0 with no path.
    pub fn score_pair(
        &mut self,
        user: u32,
        item: u32,
        bc: &BeamConfig,
    ) -> Result<(f64, Option<ReasoningPath>), GraphError> {
        self.check(EntityId::user(user))?;
        self.check(EntityId::item(item))?;
        let beams = self.beam_expand(user, bc);
        Ok(match self.best_completion(&beams, item) {
            None => (0.0, None),
            Some((log, tags)) => {
                let path = self.materialize(user, &tags, item, log);
                (path.score(), Some(path))
            }
        })
    }

    /// Ranks candidates for one user over a single shared beam expansion.
    /// Order: score descending, then item index ascending.
    pub fn recommend(
        &mut self,
        user: u32,
        candidates: &[u32],
        topn: usize,
        bc: &BeamConfig,
    ) -> Result<Vec<RankedCandidate>, GraphError> {
        self.check(EntityId::user(user))?;
        for &c in candidates {
            self.check(EntityId::item(c))?;
        }
        let beams = self.beam_expand(user, bc);
        let mut ranked: Vec<RankedCandidate> = candidates
            .iter()
            .map(|&item| match self.best_completion(&beams, item) {
                None => RankedCandidate { item, score: 0.0, path: None },
                Some((log, tags)) => {
                    let path = self.materialize(user, &tags, item, log);
                    RankedCandidate { item, score: path.score(), path: Some(path) }
                }
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are finite")
                .then_with(|| a.item.cmp(&b.item))
        });
        ranked.truncate(topn);
        Ok(ranked)
    }

    /// Reference scorer: depth-first enumeration of every simple path up to
    /// the hop limit. Exponential in the hop count; use only to validate
    /// the beam on small graphs.
    pub fn exhaustive_score_pair(
        &mut self,
        user: u32,
        item: u32,
        bc: &BeamConfig,
    ) -> Result<(f64, Option<ReasoningPath>), GraphError> {
        self.check(EntityId::user(user))?;
        self.check(EntityId::item(item))?;
        let mut best: Option<(f64, Vec<u32>)> = None;
        let mut tags: Vec<u32> = Vec::new();
        let user_e = EntityId::user(user);
        let first_tags = self.graph.user_tags(user).to_vec();
        for t in first_tags {
            let log = self.cache.log(self.model, &self.kcfg, user_e, EntityId::tag(t));
            tags.push(t);
            self.dfs_paths(item, bc, &mut tags, log, &mut best);
            tags.pop();
        }
        Ok(match best {
            None => (0.0, None),
            Some((log, tags)) => {
                let path = self.materialize(user, &tags, item, log);
                (path.score(), Some(path))
            }
        })
    }

    fn dfs_paths(
        &mut self,
        item: u32,
        bc: &BeamConfig,
        tags: &mut Vec<u32>,
        acc_log: f64,
        best: &mut Option<(f64, Vec<u32>)>,
    ) {
        let last = *tags.last().expect("dfs starts with one tag");
        if self.graph.tag_has_item(last, item) {
            let log = acc_log
                + self
                    .cache
                    .log(self.model, &self.kcfg, EntityId::tag(last), EntityId::item(item));
            if replaces(log, tags, item, best) {
                *best = Some((log, tags.clone()));
            }
        }
        if tags.len() >= bc.max_hops {
            return;
        }
        let nexts = self.graph.tag_tags(last).to_vec();
        for t2 in nexts {
            if tags.contains(&t2) {
                continue;
            }
            let log = acc_log
                + self
                    .cache
                    .log(self.model, &self.kcfg, EntityId::tag(last), EntityId::tag(t2));
            tags.push(t2);
            self.dfs_paths(item, bc, tags, log, best);
            tags.pop();
        }
    }

    /// All partial paths at one depth, unbeamed, in retained order. Used to
    /// validate beam retention.
    pub fn exhaustive_partials(&mut self, user: u32, depth: usize) -> Vec<PartialPath> {
        let user_e = EntityId::user(user);
        let mut frontier: Vec<PartialPath> = self
            .graph
            .user_tags(user)
            .to_vec()
            .into_iter()
            .map(|t| PartialPath {
                tags: vec![t],
                log_score: self.cache.log(self.model, &self.kcfg, user_e, EntityId::tag(t)),
            })
            .collect();
        for _ in 1..depth {
            let mut next = Vec::new();
            for p in &frontier {
                let last = *p.tags.last().expect("partials are never empty");
                for &t2 in self.graph.tag_tags(last) {
                    if p.tags.contains(&t2) {
                        continue;
                    }
                    let log_score = p.log_score
                        + self
                            .cache
                            .log(self.model, &self.kcfg, EntityId::tag(last), EntityId::tag(t2));
                    let mut tags = p.tags.clone();
                    tags.push(t2);
                    next.push(PartialPath { tags, log_score });
                }
            }
            frontier = next;
        }
        Self::retain_top(&mut frontier, usize::MAX);
        frontier
    }

    /// Renders the best path between a user and an item as an operator
    /// trace, with per-edge geometry and contribution shares.
    pub fn explain(
        &mut self,
        user: u32,
        item: u32,
        bc: &BeamConfig,
        dataset: &Dataset,
        model_hash: &str,
    ) -> Result<ExplanationTrace, GraphError> {
        let (score, path) = self.score_pair(user, item, bc)?;
        let label = |e: EntityId| -> String {
            match e.kind {
                crate::sphere::EntityKind::User => dataset.users[e.index as usize].clone(),
                crate::sphere::EntityKind::Item => dataset.items[e.index as usize].clone(),
                crate::sphere::EntityKind::Tag => dataset.tags[e.index as usize].clone(),
            }
        };
        let mut trace = ExplanationTrace {
            user: dataset.users[user as usize].clone(),
            item: dataset.items[item as usize].clone(),
            score,
            path: Vec::new(),
            edges: Vec::new(),
            config: TraceBeam { b: bc.width, k: bc.max_hops },
            model_hash: model_hash.to_string(),
        };
        let Some(path) = path else {
            return Ok(trace);
        };
        trace.path = path
            .entities
            .iter()
            .map(|&e| TraceNode { kind: e.kind.as_str(), id: label(e) })
            .collect();
        let n_edges = path.edge_logs.len() as f64;
        for (w, &edge_log) in path.entities.windows(2).zip(&path.edge_logs) {
            let fwd = edge_forward(&self.model.edge_input(w[0], w[1]), &self.kcfg);
            let share = if path.log_score == 0.0 {
                1.0 / n_edges
            } else {
                edge_log / path.log_score
            };
            trace.edges.push(TraceEdge {
                from: label(w[0]),
                to: label(w[1]),
                kernel: edge_log.exp(),
                distance: fwd.distance,
                eff_curvature: fwd.eff_curvature,
                r_from: self.model.radius(w[0]),
                r_to: self.model.radius(w[1]),
                share,
            });
        }
        Ok(trace)
    }
}

/// Operator-facing explanation of one recommendation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationTrace {
    pub user: String,
    pub item: String,
    pub score: f64,
    pub path: Vec<TraceNode>,
    pub edges: Vec<TraceEdge>,
    pub config: TraceBeam,
    pub model_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceNode {
    pub kind: &'static str,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEdge {
    pub from: String,
    pub to: String,
    pub kernel: f64,
    pub distance: f64,
    pub eff_curvature: Option<f64>,
    pub r_from: f64,
    pub r_to: f64,
    /// Fraction of the total log score this edge contributes.
    pub share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceBeam {
    pub b: usize,
    pub k: usize,
}
