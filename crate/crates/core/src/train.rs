//! Margin-loss training with analytic gradients and a Riemannian Adam
//! step: centers move along exponential maps inside their curvature's
//! ball, radii and curvatures update in plain Euclidean space.
//!
//! The batch objective is mean hinge loss over (user, positive, negative)
//! triples plus a curvature regularizer. The pair score is a hard max over
//! beam paths, so each triple's gradient flows through its argmax paths
//! only; ties resolve to the lexicographically first path, the same rule
//! beam search uses. Per-triple gradients may be computed in parallel but
//! are summed in triple order, so results do not depend on thread count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::data::{user_item_sets, EvalInstance, Interaction};
use crate::geometry::{self, Curvature, KAPPA_MAX, KAPPA_MIN};
use crate::graph::SemanticGraph;
use crate::metrics::{self, MetricsError};
use crate::reasoning::{BeamConfig, ReasoningPath, Scorer};
use crate::sphere::{
    edge_backward, edge_forward, sigmoid, DistanceKind, EdgeSideGrads, EntityId, KernelConfig,
    Model, ModelError,
};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in batch at epoch {epoch}: {detail}")]
    NonFiniteGradient { epoch: usize, detail: String },
    #[error("loss diverged at epoch {epoch}; last good checkpoint is from epoch {best_epoch}")]
    Diverged {
        epoch: usize,
        best_epoch: usize,
        last_good: Box<Model>,
        history: TrainHistory,
    },
    #[error("model invariant broken after optimizer step: {0}")]
    Invariant(#[from] ModelError),
    #[error("no training triples (empty train split)")]
    NoTriples,
    #[error("no validation instances for early stopping")]
    NoValidation,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One (user, positive item, negative item) comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Pairwise margin loss over scores in [0, 1].
pub fn rank_loss(score_pos: f64, score_neg: f64, margin: f64) -> f64 {
    (margin - score_pos + score_neg).max(0.0)
}

/// Hinge penalty pushing curvatures below -delta.
pub fn curvature_reg(curvatures: &[f64], delta: f64) -> f64 {
    curvatures
        .iter()
        .map(|&k| (k + delta).max(0.0).powi(2))
        .sum()
}

/// Dense gradients for every raw parameter, in model layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub centers: Vec<f64>,
    pub raw_radii: Vec<f64>,
    pub raw_curvatures: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &Model) -> Self {
        let n = model.counts().total();
        Gradients {
            centers: vec![0.0; n * model.dim()],
            raw_radii: vec![0.0; n],
            raw_curvatures: vec![0.0; n],
        }
    }

    fn first_non_finite(&self) -> Option<String> {
        for (name, v) in [
            ("center", &self.centers),
            ("raw_radius", &self.raw_radii),
            ("raw_curvature", &self.raw_curvatures),
        ] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Some(format!("{name} gradient at flat index {i} is {}", v[i]));
            }
        }
        None
    }
}

/// Per-edge contributions of one triple, in path order. Kept sparse so a
/// parallel batch only materializes what its paths touched.
struct TripleGrad {
    hinge: f64,
    contribs: Vec<(EntityId, EdgeSideGrads)>,
}

/// Accumulates `upstream * d log_kernel / d params` for every edge of one
/// path. Radius grads are composed through the softplus reparametrization
/// here; curvature raws are the clamped values themselves, slope 1.
fn path_contributions(
    model: &Model,
    path: &ReasoningPath,
    kcfg: &KernelConfig,
    upstream: f64,
    out: &mut Vec<(EntityId, EdgeSideGrads)>,
) {
    let dim = model.dim();
    for w in path.entities.windows(2) {
        let inp = model.edge_input(w[0], w[1]);
        let fwd = edge_forward(&inp, kcfg);
        let mut ga = EdgeSideGrads::zeros(dim);
        let mut gb = EdgeSideGrads::zeros(dim);
        edge_backward(&inp, &fwd, kcfg, upstream, &mut ga, &mut gb);
        for (e, mut g) in [(w[0], ga), (w[1], gb)] {
            g.radius *= sigmoid(model.raw_radius(e));
            out.push((e, g));
        }
    }
}

fn triple_grad(
    model: &Model,
    graph: &SemanticGraph,
    triple: &Triple,
    bc: &BeamConfig,
    kcfg: &KernelConfig,
    margin: f64,
) -> TripleGrad {
    let mut sc = Scorer::new(model, graph, *kcfg);
    let (s_pos, p_pos) = sc
        .score_pair(triple.user, triple.pos, bc)
        .expect("training triples reference known entities");
    let (s_neg, p_neg) = sc
        .score_pair(triple.user, triple.neg, bc)
        .expect("training triples reference known entities");
    let hinge = rank_loss(s_pos, s_neg, margin);
    let mut contribs = Vec::new();
    if hinge > 0.0 {
        // d hinge / d s_pos = -1 and d s / d log s = s, so the positive
        // path's edges see -s_pos upstream; the negative path sees +s_neg.
        if let Some(p) = &p_pos {
            path_contributions(model, p, kcfg, -s_pos, &mut contribs);
        }
        if let Some(p) = &p_neg {
            path_contributions(model, p, kcfg, s_neg, &mut contribs);
        }
    }
    TripleGrad { hinge, contribs }
}

/// Batch objective and its gradients: mean hinge over triples plus
/// `reg_weight` times the curvature regularizer. Frozen parameters of the
/// active ablation get exactly zero gradient.
pub fn backward(
    model: &Model,
    graph: &SemanticGraph,
    triples: &[Triple],
    cfg: &RunConfig,
) -> Result<(f64, f64, Gradients), String> {
    assert!(!triples.is_empty(), "backward needs at least one triple");
    let bc = BeamConfig::from_run(cfg);
    let kcfg = KernelConfig::new(cfg.kernel_variant, cfg.ablation);

    let per_triple: Vec<TripleGrad> = triples
        .par_iter()
        .map(|t| triple_grad(model, graph, t, &bc, &kcfg, cfg.margin))
        .collect();

    let scale = 1.0 / triples.len() as f64;
    let mut grads = Gradients::zeros(model);
    let mut hinge_sum = 0.0;
    for tg in &per_triple {
        hinge_sum += tg.hinge;
        for (e, g) in &tg.contribs {
            let gi = model.global_index(*e);
            let dim = model.dim();
            for (slot, &gc) in grads.centers[gi * dim..(gi + 1) * dim]
                .iter_mut()
                .zip(&g.center)
            {
                *slot += scale * gc;
            }
            grads.raw_radii[gi] += scale * g.radius;
            grads.raw_curvatures[gi] += scale * g.curvature;
        }
    }

    let reg = if cfg.ablation.is_euclidean() {
        0.0
    } else {
        let r = curvature_reg(model_curvatures(model), cfg.curv_margin);
        for (gi, &k) in model_curvatures(model).iter().enumerate() {
            grads.raw_curvatures[gi] += cfg.reg_weight * 2.0 * (k + cfg.curv_margin).max(0.0);
        }
        r
    };

    if cfg.ablation.freezes_radius() {
        grads.raw_radii.iter_mut().for_each(|g| *g = 0.0);
    }
    if cfg.ablation.freezes_curvature() || cfg.ablation.is_euclidean() {
        grads.raw_curvatures.iter_mut().for_each(|g| *g = 0.0);
    }

    if let Some(detail) = grads.first_non_finite() {
        return Err(detail);
    }
    let loss = hinge_sum * scale + cfg.reg_weight * reg;
    Ok((loss, reg, grads))
}

fn model_curvatures(model: &Model) -> &[f64] {
    &model.curvatures
}

/// Adam moment buffers for every raw parameter. Center moments live in the
/// fixed ambient frame; no parallel transport is applied between steps.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m_centers: Vec<f64>,
    pub v_centers: Vec<f64>,
    pub m_radii: Vec<f64>,
    pub v_radii: Vec<f64>,
    pub m_curv: Vec<f64>,
    pub v_curv: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let n = model.counts().total();
        let nd = n * model.dim();
        AdamState {
            m_centers: vec![0.0; nd],
            v_centers: vec![0.0; nd],
            m_radii: vec![0.0; n],
            v_radii: vec![0.0; n],
            m_curv: vec![0.0; n],
            v_curv: vec![0.0; n],
            step: 0,
        }
    }
}

fn adam_update(m: &mut f64, v: &mut f64, grad: f64, t: u64) -> f64 {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * grad;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * grad * grad;
    let m_hat = *m / (1.0 - ADAM_BETA1.powi(t as i32));
    let v_hat = *v / (1.0 - ADAM_BETA2.powi(t as i32));
    m_hat / (v_hat.sqrt() + ADAM_EPS)
}

/// One optimizer step. Center gradients are rescaled by the conformal
/// factor at the current point, stepped through Adam, and applied with the
/// exponential map under the pre-step curvature; the euclidean ablation
/// uses plain vector updates with no projection. Raw radii and curvatures
/// take standard Adam steps, curvature raws are clamped into range, and
/// centers are re-projected under the updated curvatures.
pub fn riemannian_step(model: &mut Model, grads: &Gradients, adam: &mut AdamState, cfg: &RunConfig) {
    let t = adam.step + 1;
    let dim = model.dim();
    let n = model.counts().total();
    let lr = cfg.lr;
    let euclid = cfg.ablation.is_euclidean();

    for gi in 0..n {
        let factor = if euclid {
            1.0
        } else {
            geometry::conformal_factor(
                &model.centers[gi * dim..(gi + 1) * dim],
                Curvature::clamped(model.curvatures[gi]),
            )
        };
        let mut step_vec = vec![0.0; dim];
        for j in 0..dim {
            let idx = gi * dim + j;
            let tangent_grad = grads.centers[idx] * factor;
            step_vec[j] = -lr
                * adam_update(
                    &mut adam.m_centers[idx],
                    &mut adam.v_centers[idx],
                    tangent_grad,
                    t,
                );
        }
        if euclid {
            for j in 0..dim {
                model.centers[gi * dim + j] += step_vec[j];
            }
        } else {
            let kappa = Curvature::clamped(model.curvatures[gi]);
            let moved = geometry::exp_map(&model.centers[gi * dim..(gi + 1) * dim], &step_vec, kappa);
            model.centers[gi * dim..(gi + 1) * dim].copy_from_slice(&moved);
        }
    }

    for gi in 0..n {
        let step = adam_update(
            &mut adam.m_radii[gi],
            &mut adam.v_radii[gi],
            grads.raw_radii[gi],
            t,
        );
        model.raw_radii[gi] -= lr * step;
        let step = adam_update(
            &mut adam.m_curv[gi],
            &mut adam.v_curv[gi],
            grads.raw_curvatures[gi],
            t,
        );
        model.raw_curvatures[gi] -= lr * step;
        if !euclid {
            model.raw_curvatures[gi] = model.raw_curvatures[gi].clamp(KAPPA_MIN, KAPPA_MAX);
        }
    }

    model.refresh_derived();
    if !euclid {
        for gi in 0..n {
            let kappa = Curvature::clamped(model.curvatures[gi]);
            geometry::project_to_ball_in_place(
                &mut model.centers[gi * dim..(gi + 1) * dim],
                kappa,
            );
        }
    }
    adam.step = t;
}

/// Loss, regularizer, and validation metrics for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub reg: f64,
    pub val_ndcg: f64,
    pub val_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
    pub stopped_early: bool,
}

/// Uniform negatives excluding each user's train items, one per positive,
/// drawn fresh for every epoch from the shared stream.
fn sample_triples(
    positives: &[Interaction],
    owned: &[std::collections::BTreeSet<u32>],
    n_items: u32,
    rng: &mut ChaCha20Rng,
) -> Vec<Triple> {
    let mut triples = Vec::with_capacity(positives.len());
    for row in positives {
        let excluded = &owned[row.user as usize];
        if excluded.len() as u32 >= n_items {
            continue;
        }
        let neg = loop {
            let cand = rng.gen_range(0..n_items);
            if !excluded.contains(&cand) {
                break cand;
            }
        };
        triples.push(Triple { user: row.user, pos: row.item, neg });
    }
    triples
}

/// Epoch loop over shuffled minibatches with per-epoch validation and
/// patience-based early stopping. Returns the model from the epoch with
/// the highest validation NDCG together with the full history.
pub fn train(
    mut model: Model,
    graph: &SemanticGraph,
    train_rows: &[Interaction],
    val_instances: &[EvalInstance],
    cfg: &RunConfig,
) -> Result<(Model, TrainHistory), TrainError> {
    if train_rows.is_empty() {
        return Err(TrainError::NoTriples);
    }
    if val_instances.is_empty() {
        return Err(TrainError::NoValidation);
    }
    let n_items = model.counts().items as u32;
    let owned = user_item_sets(model.counts().users, &[train_rows]);
    let distance = if cfg.ablation.is_euclidean() {
        DistanceKind::Euclidean
    } else {
        DistanceKind::Hyperbolic
    };

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model);
    let mut history = TrainHistory::default();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut triples = sample_triples(train_rows, &owned, n_items, &mut rng);
        if triples.is_empty() {
            return Err(TrainError::NoTriples);
        }
        triples.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut reg_sum = 0.0;
        let mut batches = 0usize;
        for batch in triples.chunks(cfg.batch_size) {
            let (loss, reg, grads) = backward(&model, graph, batch, cfg).map_err(|detail| {
                TrainError::NonFiniteGradient { epoch, detail }
            })?;
            if !loss.is_finite() {
                let (best_epoch, last_good) = match &best {
                    Some((e, _, m)) => (*e, m.clone()),
                    None => (0, model.clone()),
                };
                return Err(TrainError::Diverged {
                    epoch,
                    best_epoch,
                    last_good: Box::new(last_good),
                    history,
                });
            }
            riemannian_step(&mut model, &grads, &mut adam, cfg);
            model.check_invariants(distance)?;
            loss_sum += loss;
            reg_sum += reg;
            batches += 1;
        }

        let (val_report, _) = metrics::evaluate(&model, graph, val_instances, cfg)?;
        let stats = EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            reg: reg_sum / batches as f64,
            val_ndcg: val_report.ndcg_at_k,
            val_recall: val_report.recall_at_k,
        };
        let improved = best
            .as_ref()
            .map(|(_, b, _)| stats.val_ndcg > *b)
            .unwrap_or(true);
        if improved {
            best = Some((epoch, stats.val_ndcg, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.epochs.push(stats);
        if since_best >= cfg.patience {
            history.stopped_early = true;
            break;
        }
    }

    let (best_epoch, best_ndcg, best_model) = best.expect("at least one epoch ran");
    history.best_epoch = best_epoch;
    history.best_val_ndcg = best_ndcg;
    Ok((best_model, history))
}
