//! Client-specific and client-independent one-class models.
//!
//! A model keeps only the training rows whose coefficient is nonzero, so
//! scoring a frame costs `nnz * views` kernel evaluations. Bundles are
//! stored as a single JSON document (`*.ockrmodel.json`) in which
//! coefficient and support blocks are hex-encoded little-endian `f64`
//! bytes, making save/load bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OckrError, Result};
use crate::featurestore::{FeaturePack, Label, RowMeta, ViewId};
use crate::kernels::{build_fused_gram, FusedKernelConfig, KernelParams};
use crate::regression::{solve_dense, solve_lars_path};

/// Model id used for the client-independent model.
pub const GLOBAL_CLIENT: &str = "__global__";
pub const BUNDLE_MAGIC: &str = "OCKRMODEL";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    ClientSpecific,
    ClientIndependent,
}

impl std::str::FromStr for TrainingMode {
    type Err = OckrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "client_specific" | "client-specific" => Ok(TrainingMode::ClientSpecific),
            "client_independent" | "client-independent" => Ok(TrainingMode::ClientIndependent),
            other => Err(OckrError::Invalid(format!(
                "unknown training mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Cardinality budget for the lasso path; `None` solves densely.
    pub target_nnz: Option<usize>,
    /// Requested ridge for the dense solve (escalated only if needed).
    pub jitter: f64,
    /// Views to fuse, in order; `None` uses every view of the pack.
    pub views: Option<Vec<ViewId>>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            target_nnz: Some(5),
            jitter: 0.0,
            views: None,
        }
    }
}

/// Gaussian fit of bona fide frame scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    /// Lower quantile of bona fide calibration scores at a confidence level.
    Quantile,
    /// Equal error rate threshold on a labelled development split.
    DevEer,
}

/// Decision thresholds for raw and probabilistic video scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub raw: f64,
    pub prob: f64,
    pub source: ThresholdSource,
    pub level: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub pack_digest: String,
    /// `client/video/frame` keys of every training row, in Gram order.
    pub training_rows: Vec<String>,
    pub target_nnz: Option<usize>,
    pub nnz: usize,
    pub nnz_shortfall: bool,
    pub delta: Option<f64>,
    pub jitter: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientModel {
    pub client_id: String,
    pub config: FusedKernelConfig,
    /// One `M x dim` block per config view, rows in coefficient order.
    pub support: Vec<Array2<f64>>,
    pub alpha: Vec<f64>,
    /// Indices of the support rows among the training rows.
    pub support_rows: Vec<usize>,
    pub calibration: Option<Calibration>,
    pub thresholds: Option<Thresholds>,
    pub provenance: ModelProvenance,
}

impl ClientModel {
    pub fn n_support(&self) -> usize {
        self.alpha.len()
    }

    pub fn views(&self) -> &[ViewId] {
        &self.config.views
    }

    pub fn support_views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.support.iter().map(|s| s.view()).collect()
    }

    /// Scalar kernel evaluations needed to score one frame.
    pub fn kernel_evals_per_frame(&self) -> u64 {
        (self.n_support() * self.config.n_views()) as u64
    }

    /// Kernel evaluations a dense model over all training rows would need.
    pub fn dense_kernel_evals_per_frame(&self) -> u64 {
        (self.provenance.training_rows.len() * self.config.n_views()) as u64
    }
}

pub fn row_key(m: &RowMeta) -> String {
    format!("{}/{}/{}", m.client, m.video, m.frame)
}

fn check_training_rows(rows: &FeaturePack, model_id: &str) -> Result<()> {
    if let Some(m) = rows.meta().iter().find(|m| m.label != Label::Bonafide) {
        return Err(OckrError::Protocol(format!(
            "attack row {} passed as training data for model {model_id}",
            row_key(m)
        )));
    }
    if rows.len() < 2 {
        return Err(OckrError::TooFewRows {
            needed: 2,
            found: rows.len(),
        });
    }
    Ok(())
}

/// Fits one model on every row of `rows`, all of which must be bona fide.
pub fn train_on_rows(
    rows: &FeaturePack,
    model_id: &str,
    opts: &TrainOptions,
) -> Result<ClientModel> {
    check_training_rows(rows, model_id)?;
    let rows = match &opts.views {
        Some(ids) => rows.restrict_views(ids)?,
        None => rows.clone(),
    };
    let blocks: Vec<ArrayView2<'_, f64>> = rows.views().iter().map(|b| b.as_array()).collect();
    let config = FusedKernelConfig::fit(rows.view_ids(), &blocks, opts.jitter)?;
    fit_with_config(&rows, model_id, config, opts)
}

/// Solves for the coefficients with fixed bandwidths. `rows` must carry
/// exactly the config views, in config order.
fn fit_with_config(
    rows: &FeaturePack,
    model_id: &str,
    config: FusedKernelConfig,
    opts: &TrainOptions,
) -> Result<ClientModel> {
    let n = rows.len();
    let blocks: Vec<ArrayView2<'_, f64>> = rows.views().iter().map(|b| b.as_array()).collect();
    let gram = build_fused_gram(&blocks, &config)?;

    let mut provenance = ModelProvenance {
        pack_digest: rows.digest(),
        training_rows: rows.meta().iter().map(row_key).collect(),
        target_nnz: opts.target_nnz,
        ..Default::default()
    };

    let coefficients: Vec<(usize, f64)> = match opts.target_nnz {
        None => {
            let sol = solve_dense(gram.view(), opts.jitter)?;
            provenance.jitter = Some(sol.jitter);
            sol.alpha
                .into_iter()
                .enumerate()
                .filter(|(_, a)| *a != 0.0)
                .collect()
        }
        Some(requested) => {
            let target = requested.min(n);
            if requested > n {
                provenance.warnings.push(format!(
                    "target_nnz {requested} capped at training size {n}"
                ));
            }
            let sol = solve_lars_path(gram.view(), target)?;
            provenance.delta = Some(sol.delta);
            if sol.shortfall {
                provenance.nnz_shortfall = true;
                provenance.warnings.push(format!(
                    "lasso path ended with {} nonzeros, short of target {target}",
                    sol.nnz
                ));
            }
            sol.coefficients
        }
    };
    provenance.nnz = coefficients.len();

    let support_rows: Vec<usize> = coefficients.iter().map(|(i, _)| *i).collect();
    let alpha: Vec<f64> = coefficients.iter().map(|(_, a)| *a).collect();
    let support = rows
        .views()
        .iter()
        .map(|b| {
            let mut values = Vec::with_capacity(support_rows.len() * b.dim);
            for &i in &support_rows {
                values.extend_from_slice(b.row(i));
            }
            Array2::from_shape_vec((support_rows.len(), b.dim), values).expect("shape")
        })
        .collect();

    Ok(ClientModel {
        client_id: model_id.to_string(),
        config,
        support,
        alpha,
        support_rows,
        calibration: None,
        thresholds: None,
        provenance,
    })
}

/// Trains the model for `client_id` from that client's rows only.
pub fn train_client(
    pack: &FeaturePack,
    client_id: &str,
    opts: &TrainOptions,
) -> Result<ClientModel> {
    let rows = pack.select(|m| m.client == client_id);
    if rows.is_empty() {
        return Err(OckrError::UnknownClient(client_id.to_string()));
    }
    train_on_rows(&rows, client_id, opts)
}

/// Trains one client-independent model on every row of the pack.
pub fn train_global(pack: &FeaturePack, opts: &TrainOptions) -> Result<ClientModel> {
    train_on_rows(pack, GLOBAL_CLIENT, opts)
}

/// Leave-one-out self-scores: each row scored by a model fitted without it.
///
/// Bandwidths are fitted once on all rows and held fixed. This is the
/// calibration fallback when no held-out bona fide split exists.
pub fn leave_one_out_scores(rows: &FeaturePack, opts: &TrainOptions) -> Result<Vec<f64>> {
    check_training_rows(rows, "leave-one-out")?;
    if rows.len() < 3 {
        return Err(OckrError::TooFewRows {
            needed: 3,
            found: rows.len(),
        });
    }
    let rows = match &opts.views {
        Some(ids) => rows.restrict_views(ids)?,
        None => rows.clone(),
    };
    let blocks: Vec<ArrayView2<'_, f64>> = rows.views().iter().map(|b| b.as_array()).collect();
    let config = FusedKernelConfig::fit(rows.view_ids(), &blocks, opts.jitter)?;
    (0..rows.len())
        .map(|i| {
            let keep: Vec<usize> = (0..rows.len()).filter(|&j| j != i).collect();
            let model = fit_with_config(
                &rows.take_rows(&keep),
                "leave-one-out",
                config.clone(),
                opts,
            )?;
            crate::scoring::score_frame(&model, &rows.frame(i, &config.views)?)
        })
        .collect()
}

/// Models keyed by client id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelBundle {
    pub models: BTreeMap<String, ClientModel>,
    /// Free-form provenance (run configuration, versions) echoed on save.
    pub provenance: Option<serde_json::Value>,
}

impl ModelBundle {
    pub fn get(&self, client: &str) -> Option<&ClientModel> {
        self.models.get(client)
    }

    pub fn insert(&mut self, model: ClientModel) -> Result<()> {
        if self.models.contains_key(&model.client_id) {
            return Err(OckrError::Invalid(format!(
                "duplicate model for client {}",
                model.client_id
            )));
        }
        self.models.insert(model.client_id.clone(), model);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn mode(&self) -> TrainingMode {
        if self.models.len() == 1 && self.models.contains_key(GLOBAL_CLIENT) {
            TrainingMode::ClientIndependent
        } else {
            TrainingMode::ClientSpecific
        }
    }
}

/// Trains every model required by `mode`. Clients train in parallel; the
/// bundle is assembled in client order.
pub fn train_bundle(
    pack: &FeaturePack,
    mode: TrainingMode,
    opts: &TrainOptions,
) -> Result<ModelBundle> {
    let models: Vec<ClientModel> = match mode {
        TrainingMode::ClientIndependent => vec![train_global(pack, opts)?],
        TrainingMode::ClientSpecific => pack
            .clients()
            .par_iter()
            .map(|c| {
                train_client(pack, c, opts).map_err(|e| match e {
                    OckrError::TooFewRows { .. } | OckrError::Protocol(_) => {
                        OckrError::Protocol(format!("client {c}: {e}"))
                    }
                    other => {
                        // Keep the variant (callers classify it) but say whose model failed.
                        log::error!("training client {c} failed: {other}");
                        other
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let mut bundle = ModelBundle::default();
    for m in models {
        bundle.insert(m)?;
    }
    Ok(bundle)
}

// ---------------------------------------------------------------------------
// Serialisation

#[derive(Serialize, Deserialize)]
struct StoredView {
    region: String,
    rep: String,
    theta: f64,
    dim: usize,
    /// `M x dim` little-endian f64, row-major, hex-encoded.
    support_hex: String,
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    client: String,
    jitter: f64,
    n_support: usize,
    alpha_hex: String,
    support_rows: Vec<usize>,
    views: Vec<StoredView>,
    calibration: Option<Calibration>,
    thresholds: Option<Thresholds>,
    provenance: ModelProvenance,
}

#[derive(Serialize, Deserialize)]
struct StoredBundle {
    magic: String,
    version: u32,
    provenance: Option<serde_json::Value>,
    models: Vec<StoredModel>,
}

fn f64s_to_hex<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(|v| v.to_le_bytes()).collect();
    hex::encode(bytes)
}

fn hex_to_f64s(text: &str, what: &str) -> Result<Vec<f64>> {
    let bytes = hex::decode(text)
        .map_err(|e| OckrError::Invalid(format!("bad hex block for {what}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(OckrError::Invalid(format!(
            "hex block for {what} is not a whole number of f64 values"
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl From<&ClientModel> for StoredModel {
    fn from(m: &ClientModel) -> Self {
        StoredModel {
            client: m.client_id.clone(),
            jitter: m.config.jitter,
            n_support: m.n_support(),
            alpha_hex: f64s_to_hex(&m.alpha),
            support_rows: m.support_rows.clone(),
            views: m
                .config
                .views
                .iter()
                .zip(&m.config.params)
                .zip(&m.support)
                .map(|((id, p), s)| StoredView {
                    region: id.region.clone(),
                    rep: id.rep.clone(),
                    theta: p.theta,
                    dim: s.ncols(),
                    support_hex: f64s_to_hex(s.iter()),
                })
                .collect(),
            calibration: m.calibration,
            thresholds: m.thresholds,
            provenance: m.provenance.clone(),
        }
    }
}

impl TryFrom<StoredModel> for ClientModel {
    type Error = OckrError;

    fn try_from(s: StoredModel) -> Result<Self> {
        let alpha = hex_to_f64s(&s.alpha_hex, &s.client)?;
        if alpha.len() != s.n_support || s.support_rows.len() != s.n_support {
            return Err(OckrError::Invalid(format!(
                "model {}: n_support {} disagrees with stored blocks",
                s.client, s.n_support
            )));
        }
        let mut views = Vec::new();
        let mut params = Vec::new();
        let mut support = Vec::new();
        for v in s.views {
            let values = hex_to_f64s(&v.support_hex, &s.client)?;
            let block = Array2::from_shape_vec((s.n_support, v.dim), values).map_err(|_| {
                OckrError::Invalid(format!("model {}: support block has wrong size", s.client))
            })?;
            views.push(ViewId::new(v.region, v.rep));
            params.push(KernelParams { theta: v.theta });
            support.push(block);
        }
        if views.is_empty() {
            return Err(OckrError::Invalid(format!(
                "model {} has no views",
                s.client
            )));
        }
        if let Some(c) = s.calibration {
            if !(c.sigma > 0.0) {
                return Err(OckrError::Invalid(format!(
                    "model {}: calibration sigma must be positive",
                    s.client
                )));
            }
        }
        Ok(ClientModel {
            client_id: s.client,
            config: FusedKernelConfig {
                views,
                params,
                jitter: s.jitter,
            },
            support,
            alpha,
            support_rows: s.support_rows,
            calibration: s.calibration,
            thresholds: s.thresholds,
            provenance: s.provenance,
        })
    }
}

pub fn bundle_to_string(bundle: &ModelBundle) -> Result<String> {
    let stored = StoredBundle {
        magic: BUNDLE_MAGIC.into(),
        version: BUNDLE_VERSION,
        provenance: bundle.provenance.clone(),
        models: bundle.models.values().map(StoredModel::from).collect(),
    };
    let mut text =
        serde_json::to_string_pretty(&stored).map_err(|e| OckrError::json("bundle", e))?;
    text.push('\n');
    Ok(text)
}

pub fn bundle_from_str(text: &str) -> Result<ModelBundle> {
    let stored: StoredBundle =
        serde_json::from_str(text).map_err(|e| OckrError::json("model bundle", e))?;
    if stored.magic != BUNDLE_MAGIC {
        return Err(OckrError::BadMagic {
            expected: BUNDLE_MAGIC.into(),
            found: stored.magic,
        });
    }
    if stored.version != BUNDLE_VERSION {
        return Err(OckrError::VersionMismatch {
            expected: BUNDLE_VERSION,
            found: stored.version,
        });
    }
    let mut bundle = ModelBundle {
        models: BTreeMap::new(),
        provenance: stored.provenance,
    };
    for m in stored.models {
        bundle.insert(ClientModel::try_from(m)?)?;
    }
    Ok(bundle)
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let text = bundle_to_string(bundle)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| OckrError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| OckrError::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text = fs::read_to_string(path).map_err(|e| OckrError::io(path, e))?;
    bundle_from_str(&text)
}
