//! Probabilistic sphere parameters and the pairwise affinity kernel.
//!
//! Every entity owns a sphere: a center in the Poincaré ball, an
//! uncertainty radius derived from a raw parameter through softplus, and a
//! per-entity curvature kept inside the clamp range. The model is a flat
//! table of those parameters indexed by entity, plus the derived views the
//! scoring code reads.
//!
//! Affinity between two spheres is
//!
//! ```text
//! K(a, b) = exp( -d(mu_a, mu_b)^2 / (r_a^2 + r_b^2 + eps) )
//! ```
//!
//! with the distance measured under the radius-weighted blend of the two
//! curvatures. All scoring runs in log space; `kernel` is defined as
//! `exp(log_kernel)` so the two can never drift apart. [`edge_backward`]
//! produces the analytic derivatives of `log_kernel` with respect to both
//! centers, both radii, and both curvatures, including the path through the
//! blended curvature.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Ablation, KernelVariant};
use crate::geometry::{
    self, Curvature, GeometryError, EPS_ATANH, KAPPA_MAX, KAPPA_MIN,
};

/// Additive floor in the kernel's radius term.
pub const EPS_KERNEL: f64 = 1e-6;
/// Initial uncertainty radius for fresh models.
pub const INIT_RADIUS: f64 = 1.0;
/// Standard deviation of the Gaussian seed vectors behind fresh centers.
pub const INIT_STD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("entity {0:?} out of range for this model")]
    UnknownEntity(EntityId),
    #[error("checkpoint io error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint is inconsistent: {0}")]
    Corrupt(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    User,
    Item,
    Tag,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Item => "item",
            EntityKind::Tag => "tag",
        }
    }
}

/// Identity of an embedded entity: its kind plus an index within that kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: u32,
}

impl EntityId {
    pub fn user(index: u32) -> Self {
        EntityId { kind: EntityKind::User, index }
    }
    pub fn item(index: u32) -> Self {
        EntityId { kind: EntityKind::Item, index }
    }
    pub fn tag(index: u32) -> Self {
        EntityId { kind: EntityKind::Tag, index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub users: usize,
    pub items: usize,
    pub tags: usize,
}

impl EntityCounts {
    pub fn total(&self) -> usize {
        self.users + self.items + self.tags
    }
}

/// Owned snapshot of one entity's derived sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticSphere {
    pub center: Vec<f64>,
    pub radius: f64,
    pub curvature: Curvature,
}

/// Distance ground the kernel runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    Hyperbolic,
    Euclidean,
}

/// Everything the kernel needs to know besides the two spheres.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelConfig {
    pub variant: KernelVariant,
    pub distance: DistanceKind,
}

impl KernelConfig {
    pub fn new(variant: KernelVariant, ablation: Ablation) -> Self {
        KernelConfig {
            variant,
            distance: if ablation.is_euclidean() {
                DistanceKind::Euclidean
            } else {
                DistanceKind::Hyperbolic
            },
        }
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            variant: KernelVariant::AsPrinted,
            distance: DistanceKind::Hyperbolic,
        }
    }
}

/// Numerically stable `ln(1 + e^w)`.
pub fn softplus(w: f64) -> f64 {
    w.max(0.0) + (-w.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`]: the raw value whose softplus is `r` (`r > 0`).
pub fn softplus_inv(r: f64) -> f64 {
    debug_assert!(r > 0.0);
    r + (-(-r).exp()).ln_1p()
}

/// Logistic sigmoid, the derivative of softplus.
pub fn sigmoid(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

/// Borrowed view of the quantities one kernel evaluation reads.
#[derive(Debug, Clone, Copy)]
pub struct EdgeInput<'a> {
    pub center_a: &'a [f64],
    pub center_b: &'a [f64],
    pub radius_a: f64,
    pub radius_b: f64,
    pub curvature_a: f64,
    pub curvature_b: f64,
}

/// Forward pass of one kernel evaluation, with the intermediates the
/// backward pass reuses.
#[derive(Debug, Clone, Copy)]
pub struct EdgeForward {
    pub eff_curvature: Option<f64>,
    pub distance: f64,
    pub log_kernel: f64,
    diff_norm: f64,
    inner: f64,
    denom_signed: f64,
    arg: f64,
    pub(crate) clamped: bool,
    radius_term: f64,
}

pub fn edge_forward(inp: &EdgeInput, cfg: &KernelConfig) -> EdgeForward {
    let diff_norm = inp
        .center_a
        .iter()
        .zip(inp.center_b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let radius_term = inp.radius_a * inp.radius_a + inp.radius_b * inp.radius_b + EPS_KERNEL;

    let (eff_curvature, distance, inner, denom_signed, arg, clamped) = match cfg.distance {
        DistanceKind::Euclidean => (None, diff_norm, 0.0, 1.0, 0.0, false),
        DistanceKind::Hyperbolic => {
            let raw =
                (inp.radius_a + inp.radius_b) / (inp.radius_a / inp.curvature_a + inp.radius_b / inp.curvature_b);
            let lo = inp.curvature_a.min(inp.curvature_b);
            let hi = inp.curvature_a.max(inp.curvature_b);
            let k = raw.clamp(lo, hi);
            let inner = geometry::dot(inp.center_a, inp.center_b);
            let denom_signed = 1.0 - k * inner;
            let raw_arg = diff_norm / denom_signed.abs();
            let arg = raw_arg.clamp(0.0, 1.0 - EPS_ATANH);
            let clamped = raw_arg > 1.0 - EPS_ATANH;
            let d = 2.0 / (-k).sqrt() * arg.atanh();
            (Some(k), d, inner, denom_signed, arg, clamped)
        }
    };

    let log_kernel = match cfg.variant {
        KernelVariant::AsPrinted => -(distance * distance) / radius_term,
        KernelVariant::UncertaintyPenalizing => -(distance * distance) * radius_term,
    };

    EdgeForward {
        eff_curvature,
        distance,
        log_kernel,
        diff_norm,
        inner,
        denom_signed,
        arg,
        clamped,
        radius_term,
    }
}

/// Derivatives of (upstream * log_kernel) with respect to one side's
/// parameters. Radius and curvature derivatives are taken with respect to
/// the derived values; compose with `sigmoid(raw_radius)` to reach the raw
/// radius parameter.
#[derive(Debug, Clone)]
pub struct EdgeSideGrads {
    pub center: Vec<f64>,
    pub radius: f64,
    pub curvature: f64,
}

impl EdgeSideGrads {
    pub fn zeros(dim: usize) -> Self {
        EdgeSideGrads {
            center: vec![0.0; dim],
            radius: 0.0,
            curvature: 0.0,
        }
    }
}

/// Writes the analytic gradients of `upstream * log_kernel` into `out_a`
/// and `out_b` (overwriting them).
pub fn edge_backward(
    inp: &EdgeInput,
    fwd: &EdgeForward,
    cfg: &KernelConfig,
    upstream: f64,
    out_a: &mut EdgeSideGrads,
    out_b: &mut EdgeSideGrads,
) {
    let dim = inp.center_a.len();
    out_a.center[..dim].fill(0.0);
    out_b.center[..dim].fill(0.0);
    out_a.radius = 0.0;
    out_b.radius = 0.0;
    out_a.curvature = 0.0;
    out_b.curvature = 0.0;

    let d = fwd.distance;
    let u = fwd.radius_term;
    let (dlk_dd, dlk_du) = match cfg.variant {
        KernelVariant::AsPrinted => (-2.0 * d / u, d * d / (u * u)),
        KernelVariant::UncertaintyPenalizing => (-2.0 * d * u, -(d * d)),
    };

    out_a.radius += upstream * dlk_du * 2.0 * inp.radius_a;
    out_b.radius += upstream * dlk_du * 2.0 * inp.radius_b;

    match cfg.distance {
        DistanceKind::Euclidean => {
            let n = fwd.diff_norm;
            if n > 1e-12 {
                let scale = upstream * dlk_dd / n;
                for j in 0..dim {
                    let delta = inp.center_a[j] - inp.center_b[j];
                    out_a.center[j] += scale * delta;
                    out_b.center[j] -= scale * delta;
                }
            }
        }
        DistanceKind::Hyperbolic => {
            let k = fwd.eff_curvature.expect("hyperbolic edge has a curvature");
            let n = fwd.diff_norm;
            let m = fwd.denom_signed.abs();
            let sign = if fwd.denom_signed >= 0.0 { 1.0 } else { -1.0 };
            let t = fwd.arg;

            // d = 2 (-k)^(-1/2) atanh(t); the prefactor path is live even
            // when t sits at its clamp.
            let dd_dt = if fwd.clamped {
                0.0
            } else {
                2.0 / (-k).sqrt() / (1.0 - t * t)
            };
            let dt_dk = if fwd.clamped || m < 1e-300 {
                0.0
            } else {
                n * fwd.inner * sign / (m * m)
            };
            let dd_dk = d / (2.0 * (-k)) + dd_dt * dt_dk;

            // Blend k = (ra + rb) / (ra/ka + rb/kb).
            let s = inp.radius_a + inp.radius_b;
            let q = inp.radius_a / inp.curvature_a + inp.radius_b / inp.curvature_b;
            let dk_dra = (q - s / inp.curvature_a) / (q * q);
            let dk_drb = (q - s / inp.curvature_b) / (q * q);
            let dk_dka = s * inp.radius_a / (q * q * inp.curvature_a * inp.curvature_a);
            let dk_dkb = s * inp.radius_b / (q * q * inp.curvature_b * inp.curvature_b);

            let gd = upstream * dlk_dd;
            out_a.radius += gd * dd_dk * dk_dra;
            out_b.radius += gd * dd_dk * dk_drb;
            out_a.curvature += gd * dd_dk * dk_dka;
            out_b.curvature += gd * dd_dk * dk_dkb;

            if !fwd.clamped && n > 1e-12 {
                let inv_nm = 1.0 / (n * m);
                let cross = n * k * sign / (m * m);
                for j in 0..dim {
                    let delta = inp.center_a[j] - inp.center_b[j];
                    out_a.center[j] += gd * dd_dt * (delta * inv_nm + cross * inp.center_b[j]);
                    out_b.center[j] += gd * dd_dt * (-delta * inv_nm + cross * inp.center_a[j]);
                }
            }
        }
    }
}

/// Kernel between two stand-alone spheres.
pub fn sphere_kernel(a: &ProbabilisticSphere, b: &ProbabilisticSphere, cfg: &KernelConfig) -> f64 {
    sphere_log_kernel(a, b, cfg).exp()
}

pub fn sphere_log_kernel(
    a: &ProbabilisticSphere,
    b: &ProbabilisticSphere,
    cfg: &KernelConfig,
) -> f64 {
    let inp = EdgeInput {
        center_a: &a.center,
        center_b: &b.center,
        radius_a: a.radius,
        radius_b: b.radius,
        curvature_a: a.curvature.value(),
        curvature_b: b.curvature.value(),
    };
    edge_forward(&inp, cfg).log_kernel
}

/// Options controlling fresh-model initialization.
#[derive(Debug, Clone)]
pub struct InitOptions {
    pub std_dev: f64,
    pub radius: f64,
    /// When set, every entity starts at (and keeps) this curvature instead
    /// of drawing one uniformly from the clamp range.
    pub fixed_curvature: Option<f64>,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            std_dev: INIT_STD,
            radius: INIT_RADIUS,
            fixed_curvature: None,
        }
    }
}

impl InitOptions {
    pub fn for_ablation(ablation: Ablation) -> Self {
        InitOptions {
            fixed_curvature: if ablation.freezes_curvature() {
                Some(-1.0)
            } else {
                None
            },
            ..InitOptions::default()
        }
    }
}

/// Flat table of sphere parameters for every entity, plus derived views.
///
/// Centers are stored post-projection and every mutation keeps them inside
/// the ball of their entity's current curvature; raw radii and curvatures
/// are the trainable scalars, with softplus/clamp views cached alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    dim: usize,
    counts: EntityCounts,
    pub(crate) centers: Vec<f64>,
    pub(crate) raw_radii: Vec<f64>,
    pub(crate) raw_curvatures: Vec<f64>,
    pub(crate) radii: Vec<f64>,
    pub(crate) curvatures: Vec<f64>,
    seed: u64,
}

impl Model {
    /// Seeds every sphere from one RNG stream: entities in (kind, index)
    /// order, each drawing its Gaussian seed vector and then its curvature.
    /// The center is the exponential map at the origin of the normalized
    /// seed scaled by tanh of its norm.
    pub fn init(counts: EntityCounts, dim: usize, seed: u64, opts: &InitOptions) -> Model {
        let total = counts.total();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, opts.std_dev).expect("valid std dev");
        let raw_radius = softplus_inv(opts.radius);

        let mut centers = Vec::with_capacity(total * dim);
        let mut raw_curvatures = Vec::with_capacity(total);
        let origin = vec![0.0; dim];
        for _ in 0..total {
            let e: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            let kappa = match opts.fixed_curvature {
                Some(k) => k,
                None => rng.gen_range(KAPPA_MIN..KAPPA_MAX),
            };
            let kv = Curvature::clamped(kappa);
            let n = geometry::norm(&e);
            if n < 1e-15 {
                centers.extend_from_slice(&origin);
            } else {
                let scale = n.tanh() / n;
                let tangent: Vec<f64> = e.iter().map(|x| x * scale).collect();
                centers.extend(geometry::exp_map(&origin, &tangent, kv));
            }
            raw_curvatures.push(kv.value());
        }

        let mut model = Model {
            dim,
            counts,
            centers,
            raw_radii: vec![raw_radius; total],
            raw_curvatures,
            radii: vec![0.0; total],
            curvatures: vec![0.0; total],
            seed,
        };
        model.refresh_derived();
        model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> EntityCounts {
        self.counts
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_entities(&self) -> usize {
        self.counts.total()
    }

    /// Flat index of an entity in the parameter table.
    pub fn global_index(&self, e: EntityId) -> usize {
        let (base, span) = match e.kind {
            EntityKind::User => (0, self.counts.users),
            EntityKind::Item => (self.counts.users, self.counts.items),
            EntityKind::Tag => (self.counts.users + self.counts.items, self.counts.tags),
        };
        let idx = e.index as usize;
        assert!(idx < span, "entity {e:?} out of range");
        base + idx
    }

    pub fn entity_at(&self, gi: usize) -> EntityId {
        if gi < self.counts.users {
            EntityId::user(gi as u32)
        } else if gi < self.counts.users + self.counts.items {
            EntityId::item((gi - self.counts.users) as u32)
        } else {
            EntityId::tag((gi - self.counts.users - self.counts.items) as u32)
        }
    }

    pub fn contains(&self, e: EntityId) -> bool {
        let span = match e.kind {
            EntityKind::User => self.counts.users,
            EntityKind::Item => self.counts.items,
            EntityKind::Tag => self.counts.tags,
        };
        (e.index as usize) < span
    }

    pub fn center(&self, e: EntityId) -> &[f64] {
        self.center_at(self.global_index(e))
    }

    pub fn center_at(&self, gi: usize) -> &[f64] {
        &self.centers[gi * self.dim..(gi + 1) * self.dim]
    }

    pub fn radius(&self, e: EntityId) -> f64 {
        self.radii[self.global_index(e)]
    }

    pub fn curvature(&self, e: EntityId) -> f64 {
        self.curvatures[self.global_index(e)]
    }

    pub fn raw_radius(&self, e: EntityId) -> f64 {
        self.raw_radii[self.global_index(e)]
    }

    pub fn raw_curvature(&self, e: EntityId) -> f64 {
        self.raw_curvatures[self.global_index(e)]
    }

    pub fn sphere(&self, e: EntityId) -> ProbabilisticSphere {
        let gi = self.global_index(e);
        ProbabilisticSphere {
            center: self.center_at(gi).to_vec(),
            radius: self.radii[gi],
            curvature: Curvature::clamped(self.curvatures[gi]),
        }
    }

    /// Recomputes the derived radius/curvature views from the raw values.
    pub(crate) fn refresh_derived(&mut self) {
        for i in 0..self.n_entities() {
            self.radii[i] = softplus(self.raw_radii[i]);
            self.curvatures[i] = self.raw_curvatures[i].clamp(KAPPA_MIN, KAPPA_MAX);
        }
    }

    /// Overwrites one entity's center. The point is projected into the
    /// ball of the entity's current curvature.
    pub fn set_center(&mut self, e: EntityId, coords: &[f64]) {
        assert_eq!(coords.len(), self.dim, "center has wrong dimension");
        let gi = self.global_index(e);
        let kappa = Curvature::clamped(self.curvatures[gi]);
        let projected = geometry::project_to_ball(coords, kappa);
        self.centers[gi * self.dim..(gi + 1) * self.dim].copy_from_slice(&projected);
    }

    /// Overwrites one entity's raw radius and refreshes its derived value.
    pub fn set_raw_radius(&mut self, e: EntityId, raw: f64) {
        let gi = self.global_index(e);
        self.raw_radii[gi] = raw;
        self.radii[gi] = softplus(raw);
    }

    /// Overwrites one entity's raw curvature; the derived value is the raw
    /// clamped into the admissible band, and the center is re-projected
    /// under it.
    pub fn set_raw_curvature(&mut self, e: EntityId, raw: f64) {
        let gi = self.global_index(e);
        self.raw_curvatures[gi] = raw;
        self.curvatures[gi] = raw.clamp(KAPPA_MIN, KAPPA_MAX);
        let kappa = Curvature::clamped(self.curvatures[gi]);
        geometry::project_to_ball_in_place(
            &mut self.centers[gi * self.dim..(gi + 1) * self.dim],
            kappa,
        );
    }

    pub fn edge_input(&self, a: EntityId, b: EntityId) -> EdgeInput<'_> {
        let ga = self.global_index(a);
        let gb = self.global_index(b);
        EdgeInput {
            center_a: self.center_at(ga),
            center_b: self.center_at(gb),
            radius_a: self.radii[ga],
            radius_b: self.radii[gb],
            curvature_a: self.curvatures[ga],
            curvature_b: self.curvatures[gb],
        }
    }

    pub fn log_kernel(&self, a: EntityId, b: EntityId, cfg: &KernelConfig) -> f64 {
        edge_forward(&self.edge_input(a, b), cfg).log_kernel
    }

    pub fn kernel(&self, a: EntityId, b: EntityId, cfg: &KernelConfig) -> f64 {
        self.log_kernel(a, b, cfg).exp()
    }

    /// Verifies the parameter-space invariants: finite values, positive
    /// radii, curvatures inside the clamp range, and (outside Euclidean
    /// mode) centers inside their entity's ball.
    pub fn check_invariants(&self, distance: DistanceKind) -> Result<(), ModelError> {
        for gi in 0..self.n_entities() {
            let e = self.entity_at(gi);
            let center = self.center_at(gi);
            if !center.iter().all(|x| x.is_finite()) {
                return Err(ModelError::Invariant(format!("{e:?}: non-finite center")));
            }
            let r = self.radii[gi];
            if !(r.is_finite() && r > 0.0) {
                return Err(ModelError::Invariant(format!("{e:?}: radius {r} not positive")));
            }
            let k = self.curvatures[gi];
            if !(KAPPA_MIN..=KAPPA_MAX).contains(&k) {
                return Err(ModelError::Invariant(format!("{e:?}: curvature {k} out of range")));
            }
            if !self.raw_radii[gi].is_finite() || !self.raw_curvatures[gi].is_finite() {
                return Err(ModelError::Invariant(format!("{e:?}: non-finite raw parameter")));
            }
            if distance == DistanceKind::Hyperbolic
                && !geometry::is_in_ball(center, Curvature::clamped(k))
            {
                return Err(ModelError::Invariant(format!(
                    "{e:?}: center norm {} outside ball for curvature {k}",
                    geometry::norm(center)
                )));
            }
        }
        Ok(())
    }

    /// Content hash over the full parameter table, hex, 16 chars.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.counts.users as u64).to_le_bytes());
        h.update((self.counts.items as u64).to_le_bytes());
        h.update((self.counts.tags as u64).to_le_bytes());
        h.update(self.seed.to_le_bytes());
        for x in &self.centers {
            h.update(x.to_le_bytes());
        }
        for x in &self.raw_radii {
            h.update(x.to_le_bytes());
        }
        for x in &self.raw_curvatures {
            h.update(x.to_le_bytes());
        }
        crate::config::hex_string(&h.finalize()[..8])
    }
}

/// Metadata stored alongside the parameters in a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub kernel_variant: KernelVariant,
    pub ablation: Ablation,
}

const CHECKPOINT_FORMAT: &str = "sphere-checkpoint-v1";

/// Serializes a float with 17 significant digits, enough for bit-exact
/// round trips through JSON.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_f64_slice(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| fmt_f64(*x)).collect();
    format!("[{}]", parts.join(","))
}

/// Renders a checkpoint document. Entities appear in (kind, index) order;
/// floats carry 17 significant digits so save -> load -> save is
/// byte-identical.
pub fn render_checkpoint(model: &Model, meta: &CheckpointMeta) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"format\": \"{CHECKPOINT_FORMAT}\",\n"));
    out.push_str(&format!("  \"dim\": {},\n", model.dim));
    out.push_str(&format!("  \"seed\": {},\n", model.seed));
    out.push_str(&format!("  \"config_hash\": \"{}\",\n", meta.config_hash));
    out.push_str(&format!("  \"kernel_variant\": \"{}\",\n", meta.kernel_variant));
    out.push_str(&format!("  \"ablation\": \"{}\",\n", meta.ablation));
    out.push_str(&format!("  \"model_hash\": \"{}\",\n", model.hash()));
    out.push_str(&format!(
        "  \"counts\": {{\"users\": {}, \"items\": {}, \"tags\": {}}},\n",
        model.counts.users, model.counts.items, model.counts.tags
    ));
    out.push_str("  \"entities\": [\n");
    for gi in 0..model.n_entities() {
        let e = model.entity_at(gi);
        out.push_str(&format!(
            "    {{\"kind\": \"{}\", \"index\": {}, \"raw_center\": {}, \"raw_radius\": {}, \"raw_curvature\": {}}}{}\n",
            e.kind.as_str(),
            e.index,
            fmt_f64_slice(model.center_at(gi)),
            fmt_f64(model.raw_radii[gi]),
            fmt_f64(model.raw_curvatures[gi]),
            if gi + 1 < model.n_entities() { "," } else { "" }
        ));
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn save_checkpoint(
    model: &Model,
    meta: &CheckpointMeta,
    path: &std::path::Path,
) -> Result<(), ModelError> {
    std::fs::write(path, render_checkpoint(model, meta)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Deserialize)]
struct CheckpointDoc {
    format: String,
    dim: usize,
    seed: u64,
    config_hash: String,
    kernel_variant: KernelVariant,
    ablation: Ablation,
    #[serde(default)]
    model_hash: Option<String>,
    counts: EntityCounts,
    entities: Vec<CheckpointEntity>,
}

#[derive(Deserialize)]
struct CheckpointEntity {
    kind: EntityKind,
    index: u32,
    raw_center: Vec<f64>,
    raw_radius: f64,
    raw_curvature: f64,
}

pub fn parse_checkpoint(text: &str) -> Result<(Model, CheckpointMeta), ModelError> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.format != CHECKPOINT_FORMAT {
        return Err(ModelError::Corrupt(format!(
            "unsupported format {:?}",
            doc.format
        )));
    }
    let total = doc.counts.total();
    if doc.entities.len() != total {
        return Err(ModelError::Corrupt(format!(
            "counts say {total} entities, file has {}",
            doc.entities.len()
        )));
    }
    let mut model = Model {
        dim: doc.dim,
        counts: doc.counts,
        centers: vec![0.0; total * doc.dim],
        raw_radii: vec![0.0; total],
        raw_curvatures: vec![0.0; total],
        radii: vec![0.0; total],
        curvatures: vec![0.0; total],
        seed: doc.seed,
    };
    for (slot, ent) in doc.entities.iter().enumerate() {
        let expect = model.entity_at(slot);
        let got = EntityId { kind: ent.kind, index: ent.index };
        if got != expect {
            return Err(ModelError::Corrupt(format!(
                "entity order broken at slot {slot}: expected {expect:?}, got {got:?}"
            )));
        }
        if ent.raw_center.len() != doc.dim {
            return Err(ModelError::Corrupt(format!(
                "{got:?}: center has {} coordinates, dim is {}",
                ent.raw_center.len(),
                doc.dim
            )));
        }
        model.centers[slot * doc.dim..(slot + 1) * doc.dim].copy_from_slice(&ent.raw_center);
        model.raw_radii[slot] = ent.raw_radius;
        model.raw_curvatures[slot] = ent.raw_curvature;
    }
    model.refresh_derived();
    // Raw centers may predate a curvature clamp; settle them into the ball.
    if !doc.ablation.is_euclidean() {
        for gi in 0..total {
            let kv = Curvature::clamped(model.curvatures[gi]);
            let span = gi * doc.dim..(gi + 1) * doc.dim;
            geometry::project_to_ball_in_place(&mut model.centers[span], kv);
        }
    }
    if let Some(expected) = &doc.model_hash {
        let actual = model.hash();
        if *expected != actual {
            return Err(ModelError::Corrupt(format!(
                "model hash mismatch: file says {expected}, parameters hash to {actual}"
            )));
        }
    }
    let meta = CheckpointMeta {
        config_hash: doc.config_hash,
        kernel_variant: doc.kernel_variant,
        ablation: doc.ablation,
    };
    Ok((model, meta))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(Model, CheckpointMeta), ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_checkpoint(&text)
}
