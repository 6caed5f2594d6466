//! Python bindings over the manifoldmind core: dataset loading, synthetic
//! data, training, evaluation, recommendation, and explanation traces.
//!
//! The module mirrors the command-line pipeline. A [`Workspace`] owns one
//! dataset with its chronological split and semantic graph; `train` produces
//! a [`TrainedModel`] that can be saved, reloaded, evaluated, and queried
//! for ranked recommendations or per-edge explanation traces. Configuration
//! uses the same dotted keys as the CLI's `--config` files, passed as a
//! plain dict, e.g. `{"train.dim": 12, "beam.width": 8}`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList, PyModule};

use manifoldmind::config::RunConfig;
use manifoldmind::data::{
    build_eval_instances, chronological_split, ingest, ingest_from_strings, synth_hierarchy,
    user_item_sets, Dataset, Splits, SynthParams,
};
use manifoldmind::graph::{build_graph, SemanticGraph};
use manifoldmind::metrics::evaluate;
use manifoldmind::reasoning::{BeamConfig, Scorer};
use manifoldmind::sphere::{
    load_checkpoint, save_checkpoint, CheckpointMeta, EntityId, InitOptions, KernelConfig, Model,
};
use manifoldmind::train::{train, TrainError, TrainHistory};

fn value_error<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts one Python override value into the JSON value `set_dotted`
/// expects. Bool is checked before int because Python bools are ints.
fn to_json(key: &str, v: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    if let Ok(b) = v.downcast::<pyo3::types::PyBool>() {
        return Ok(serde_json::Value::Bool(b.is_true()));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(serde_json::Value::from(i));
    }
    if let Ok(f) = v.extract::<f64>() {
        return Ok(serde_json::Value::from(f));
    }
    if let Ok(s) = v.extract::<String>() {
        return Ok(serde_json::Value::String(s));
    }
    Err(PyValueError::new_err(format!(
        "config key {key:?}: expected bool, int, float, or str"
    )))
}

fn config_from_overrides(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            let key: String = k.extract()?;
            let value = to_json(&key, &v)?;
            cfg.set_dotted(&key, &value).map_err(value_error)?;
        }
    }
    cfg.validate().map_err(value_error)?;
    Ok(cfg)
}

/// Round-trips any serde-serializable value through the stdlib `json`
/// module, yielding plain dicts, lists, and scalars.
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    let json = PyModule::import_bound(py, "json")?;
    Ok(json.call_method1("loads", (text,))?.into())
}

/// A trained (or loaded) model snapshot together with the metadata that
/// pins its ablation and kernel variant.
#[pyclass]
struct TrainedModel {
    model: Model,
    meta: CheckpointMeta,
    history: Option<TrainHistory>,
}

#[pymethods]
impl TrainedModel {
    #[getter]
    fn dim(&self) -> usize {
        self.model.dim()
    }

    #[getter]
    fn ablation(&self) -> String {
        self.meta.ablation.to_string()
    }

    #[getter]
    fn kernel_variant(&self) -> String {
        self.meta.kernel_variant.to_string()
    }

    #[getter]
    fn hash(&self) -> String {
        self.model.hash()
    }

    #[getter]
    fn counts(&self) -> (usize, usize, usize) {
        let c = self.model.counts();
        (c.users, c.items, c.tags)
    }

    /// Per-epoch training statistics, or None for a loaded checkpoint.
    fn history(&self, py: Python<'_>) -> PyResult<PyObject> {
        match &self.history {
            Some(h) => to_py(py, h),
            None => Ok(py.None()),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.model, &self.meta, &path)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let c = self.model.counts();
        format!(
            "TrainedModel(ablation={}, dim={}, users={}, items={}, tags={})",
            self.meta.ablation,
            self.model.dim(),
            c.users,
            c.items,
            c.tags
        )
    }
}

/// One dataset with its chronological split, semantic graph, and run
/// configuration. All operations that need entity names go through here.
#[pyclass]
struct Workspace {
    dataset: Dataset,
    splits: Splits,
    graph: SemanticGraph,
    cfg: RunConfig,
}

impl Workspace {
    fn build(dataset: Dataset, cfg: RunConfig) -> Self {
        let splits = chronological_split(&dataset, &cfg);
        let graph = build_graph(
            &splits.train,
            &dataset.item_tag_pairs,
            dataset.counts(),
            cfg.cooccur_threshold,
        );
        Workspace { dataset, splits, graph, cfg }
    }

    /// Scoring config for a model: the checkpoint's ablation and kernel
    /// variant always win over whatever the workspace was created with.
    fn scoring_cfg(&self, tm: &TrainedModel) -> PyResult<RunConfig> {
        let dc = self.dataset.counts();
        let mc = tm.model.counts();
        if dc != mc {
            return Err(PyValueError::new_err(format!(
                "model was trained on {}/{}/{} users/items/tags but this workspace has {}/{}/{}",
                mc.users, mc.items, mc.tags, dc.users, dc.items, dc.tags
            )));
        }
        let mut cfg = self.cfg.clone();
        cfg.ablation = tm.meta.ablation;
        cfg.kernel_variant = tm.meta.kernel_variant;
        Ok(cfg)
    }

    fn resolve_user(&self, raw: &str) -> PyResult<u32> {
        self.dataset
            .user_index(raw)
            .ok_or_else(|| PyValueError::new_err(format!("unknown user id {raw:?}")))
    }
}

#[pymethods]
impl Workspace {
    /// Loads interaction and item-tag TSV files.
    #[staticmethod]
    #[pyo3(signature = (interactions, item_tags, overrides=None))]
    fn from_files(
        interactions: PathBuf,
        item_tags: PathBuf,
        overrides: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let mut cfg = config_from_overrides(overrides)?;
        cfg.interactions = Some(interactions);
        cfg.item_tags = Some(item_tags);
        let dataset = ingest(&cfg).map_err(value_error)?;
        Ok(Workspace::build(dataset, cfg))
    }

    /// Parses interaction and item-tag TSV content from strings.
    #[staticmethod]
    #[pyo3(signature = (interactions, item_tags, overrides=None))]
    fn from_strings(
        interactions: &str,
        item_tags: &str,
        overrides: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let cfg = config_from_overrides(overrides)?;
        let dataset =
            ingest_from_strings(interactions, item_tags, &cfg, "interactions", "item_tags")
                .map_err(value_error)?;
        Ok(Workspace::build(dataset, cfg))
    }

    #[getter]
    fn counts(&self) -> (usize, usize, usize) {
        let c = self.dataset.counts();
        (c.users, c.items, c.tags)
    }

    #[getter]
    fn users(&self) -> Vec<String> {
        self.dataset.users.clone()
    }

    #[getter]
    fn items(&self) -> Vec<String> {
        self.dataset.items.clone()
    }

    #[getter]
    fn tags(&self) -> Vec<String> {
        self.dataset.tags.clone()
    }

    /// Train/val/test row counts after the chronological split.
    #[getter]
    fn split_sizes(&self) -> (usize, usize, usize) {
        (
            self.splits.train.len(),
            self.splits.val.len(),
            self.splits.test.len(),
        )
    }

    /// The effective configuration as a dict of dotted keys.
    fn config(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.cfg.canonical_map())
    }

    /// Trains a model from scratch under the workspace configuration and
    /// returns the snapshot from the best validation epoch.
    fn train(&self, py: Python<'_>) -> PyResult<TrainedModel> {
        let cfg = self.cfg.clone();
        let model = Model::init(
            self.dataset.counts(),
            cfg.dim,
            cfg.seed,
            &InitOptions::for_ablation(cfg.ablation),
        );
        let val_instances = build_eval_instances(
            &self.splits.val,
            &self.dataset,
            &self.splits,
            cfg.n_negatives,
            cfg.seed,
        )
        .map_err(value_error)?;
        let meta = CheckpointMeta {
            config_hash: cfg.hash(),
            kernel_variant: cfg.kernel_variant,
            ablation: cfg.ablation,
        };
        let result = py.allow_threads(|| {
            train(model, &self.graph, &self.splits.train, &val_instances, &cfg)
        });
        match result {
            Ok((best, history)) => Ok(TrainedModel { model: best, meta, history: Some(history) }),
            Err(TrainError::Diverged { epoch, best_epoch, .. }) => Err(PyValueError::new_err(
                format!("training diverged at epoch {epoch}; best epoch was {best_epoch}"),
            )),
            Err(e) => Err(value_error(e)),
        }
    }

    /// Scores the chosen split and returns the aggregate report as a dict.
    #[pyo3(signature = (model, split="test"))]
    fn evaluate(&self, py: Python<'_>, model: &TrainedModel, split: &str) -> PyResult<PyObject> {
        let cfg = self.scoring_cfg(model)?;
        let source = match split {
            "val" => &self.splits.val,
            "test" => &self.splits.test,
            other => {
                return Err(PyValueError::new_err(format!(
                    "split must be 'val' or 'test', got {other:?}"
                )))
            }
        };
        let instances = build_eval_instances(
            source,
            &self.dataset,
            &self.splits,
            cfg.n_negatives,
            cfg.seed,
        )
        .map_err(value_error)?;
        let (report, _) = py
            .allow_threads(|| evaluate(&model.model, &self.graph, &instances, &cfg))
            .map_err(value_error)?;
        to_py(py, &report)
    }

    /// Ranks every item the user has not interacted with and returns the
    /// top `n` as dicts with the reasoning path behind each score.
    #[pyo3(signature = (model, user, n=None))]
    fn recommend(
        &self,
        py: Python<'_>,
        model: &TrainedModel,
        user: &str,
        n: Option<usize>,
    ) -> PyResult<PyObject> {
        let cfg = self.scoring_cfg(model)?;
        let uid = self.resolve_user(user)?;
        let counts = self.dataset.counts();
        let owned = user_item_sets(counts.users, &[&self.dataset.interactions]);
        let exclude: &BTreeSet<u32> = &owned[uid as usize];
        let candidates: Vec<u32> = (0..counts.items as u32)
            .filter(|i| !exclude.contains(i))
            .collect();
        if candidates.is_empty() {
            return Err(PyValueError::new_err(format!(
                "user {user:?} has interacted with every catalog item"
            )));
        }
        let n = n.unwrap_or(cfg.eval_k);
        let bc = BeamConfig::from_run(&cfg);
        let kcfg = KernelConfig::new(cfg.kernel_variant, cfg.ablation);
        let mut scorer = Scorer::new(&model.model, &self.graph, kcfg);
        let ranked = scorer
            .recommend(uid, &candidates, n, &bc)
            .map_err(value_error)?;

        let label = |e: EntityId| -> &str {
            match e.kind {
                manifoldmind::sphere::EntityKind::User => &self.dataset.users[e.index as usize],
                manifoldmind::sphere::EntityKind::Item => &self.dataset.items[e.index as usize],
                manifoldmind::sphere::EntityKind::Tag => &self.dataset.tags[e.index as usize],
            }
        };
        let rows = PyList::empty_bound(py);
        for (i, r) in ranked.iter().enumerate() {
            let row = PyDict::new_bound(py);
            row.set_item("rank", i + 1)?;
            row.set_item("item", &self.dataset.items[r.item as usize])?;
            row.set_item("score", r.score)?;
            let path: Vec<&str> = match &r.path {
                Some(p) => p.entities.iter().map(|&e| label(e)).collect(),
                None => Vec::new(),
            };
            row.set_item("path", path)?;
            rows.append(row)?;
        }
        Ok(rows.into())
    }

    /// Explains the best path between a user and an item: per-edge kernel,
    /// distance, effective curvature, radii, and contribution share.
    fn explain(
        &self,
        py: Python<'_>,
        model: &TrainedModel,
        user: &str,
        item: &str,
    ) -> PyResult<PyObject> {
        let cfg = self.scoring_cfg(model)?;
        let uid = self.resolve_user(user)?;
        let iid = self
            .dataset
            .item_index(item)
            .ok_or_else(|| PyValueError::new_err(format!("unknown item id {item:?}")))?;
        let bc = BeamConfig::from_run(&cfg);
        let kcfg = KernelConfig::new(cfg.kernel_variant, cfg.ablation);
        let mut scorer = Scorer::new(&model.model, &self.graph, kcfg);
        let trace = scorer
            .explain(uid, iid, &bc, &self.dataset, &model.model.hash())
            .map_err(value_error)?;
        to_py(py, &trace)
    }

    /// Center, radius, and curvature of one embedded entity. `kind` is
    /// "user", "item", or "tag"; the name is the raw id from the data.
    fn sphere(&self, py: Python<'_>, model: &TrainedModel, kind: &str, name: &str) -> PyResult<PyObject> {
        let e = match kind {
            "user" => EntityId::user(self.resolve_user(name)?),
            "item" => EntityId::item(self.dataset.item_index(name).ok_or_else(|| {
                PyValueError::new_err(format!("unknown item id {name:?}"))
            })?),
            "tag" => {
                let idx = self
                    .dataset
                    .tags
                    .iter()
                    .position(|t| t == name)
                    .ok_or_else(|| PyValueError::new_err(format!("unknown tag {name:?}")))?;
                EntityId::tag(idx as u32)
            }
            other => {
                return Err(PyValueError::new_err(format!(
                    "kind must be 'user', 'item', or 'tag', got {other:?}"
                )))
            }
        };
        self.scoring_cfg(model)?;
        let out = PyDict::new_bound(py);
        out.set_item("center", model.model.center(e).to_vec())?;
        out.set_item("radius", model.model.radius(e))?;
        out.set_item("curvature", model.model.curvature(e))?;
        Ok(out.into())
    }

    fn __repr__(&self) -> String {
        let c = self.dataset.counts();
        format!(
            "Workspace(users={}, items={}, tags={}, train/val/test={}/{}/{})",
            c.users,
            c.items,
            c.tags,
            self.splits.train.len(),
            self.splits.val.len(),
            self.splits.test.len()
        )
    }
}

/// Generates the synthetic hierarchical-tag dataset as TSV strings plus a
/// report dict describing the tag tree actually built.
#[pyfunction]
#[pyo3(signature = (users=200, items=300, tags=30, depth=3, noise=0.1, interactions_per_user=20, seed=42))]
fn synth(
    py: Python<'_>,
    users: usize,
    items: usize,
    tags: usize,
    depth: usize,
    noise: f64,
    interactions_per_user: usize,
    seed: u64,
) -> PyResult<PyObject> {
    let params = SynthParams {
        n_users: users,
        n_items: items,
        n_tags: tags,
        depth,
        noise,
        interactions_per_user,
        seed,
    };
    let out = synth_hierarchy(&params).map_err(value_error)?;
    let d = PyDict::new_bound(py);
    d.set_item("interactions_tsv", out.interactions_tsv)?;
    d.set_item("item_tags_tsv", out.item_tags_tsv)?;
    d.set_item("report", to_py(py, &out.report)?)?;
    Ok(d.into())
}

/// Loads a checkpoint written by `TrainedModel.save` or the CLI.
#[pyfunction]
fn load(path: PathBuf) -> PyResult<TrainedModel> {
    let (model, meta) = load_checkpoint(Path::new(&path)).map_err(value_error)?;
    Ok(TrainedModel { model, meta, history: None })
}

/// The default configuration as a dict of dotted keys.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<PyObject> {
    to_py(py, &RunConfig::default().canonical_map())
}

#[pymodule]
fn manifoldmind_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Workspace>()?;
    m.add_class::<TrainedModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
