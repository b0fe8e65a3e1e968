//! Multi-view feature packs and their on-disk format.
//!
//! A pack holds one dense block of embedding rows per view (a region and
//! representation pair) together with per-row metadata shared by all views.
//! On disk every view is three sibling files in one directory:
//!
//! * `<region>_<rep>.header.json` with magic, version, dimension, row count
//!   and the `l2_normalized` flag,
//! * `<region>_<rep>.meta.jsonl` with one metadata object per row,
//! * `<region>_<rep>.f32` with `count * dim` little-endian `f32` values,
//!   row-major and without padding.
//!
//! In memory values are `f64`, but every value is exactly representable as
//! an `f32`, which makes write/read round trips bit-exact. Rows are kept in
//! canonical `(client, video, frame)` order and are unit length.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{OckrError, Result};

pub const PACK_MAGIC: &str = "OCKR";
pub const PACK_VERSION: u32 = 1;

/// Tolerance on `| ||v|| - 1 |` for rows declared normalised.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Attack,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Bonafide => f.write_str("bonafide"),
            Label::Attack => f.write_str("attack"),
        }
    }
}

/// A view: one facial region encoded by one representation network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewId {
    pub region: String,
    pub rep: String,
}

impl ViewId {
    pub fn new(region: impl Into<String>, rep: impl Into<String>) -> Self {
        ViewId {
            region: region.into(),
            rep: rep.into(),
        }
    }

    /// File stem used on disk, `<region>_<rep>`.
    pub fn stem(&self) -> String {
        format!("{}_{}", self.region, self.rep)
    }
}

impl fmt::Display for ViewId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.region, self.rep)
    }
}

impl std::str::FromStr for ViewId {
    type Err = OckrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('_') {
            Some((region, rep)) if !region.is_empty() && !rep.is_empty() => {
                Ok(ViewId::new(region, rep))
            }
            _ => Err(OckrError::Invalid(format!(
                "view id {s:?} is not of the form <region>_<rep>"
            ))),
        }
    }
}

/// Metadata of one row, shared by every view of the pack.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowMeta {
    pub client: String,
    pub video: String,
    pub frame: u64,
    pub label: Label,
    pub pais: Option<String>,
}

impl RowMeta {
    pub fn bonafide(client: impl Into<String>, video: impl Into<String>, frame: u64) -> Self {
        RowMeta {
            client: client.into(),
            video: video.into(),
            frame,
            label: Label::Bonafide,
            pais: None,
        }
    }

    pub fn attack(
        client: impl Into<String>,
        video: impl Into<String>,
        frame: u64,
        pais: impl Into<String>,
    ) -> Self {
        RowMeta {
            client: client.into(),
            video: video.into(),
            frame,
            label: Label::Attack,
            pais: Some(pais.into()),
        }
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        (&self.client, &self.video, self.frame).cmp(&(&other.client, &other.video, other.frame))
    }

    fn validate(&self) -> Result<()> {
        match (self.label, &self.pais) {
            (Label::Attack, None) => Err(OckrError::InvalidRow(format!(
                "attack row {}/{}/{} has no PAIS",
                self.client, self.video, self.frame
            ))),
            (Label::Bonafide, Some(p)) => Err(OckrError::InvalidRow(format!(
                "bona fide row {}/{}/{} carries PAIS {p:?}",
                self.client, self.video, self.frame
            ))),
            _ => Ok(()),
        }
    }
}

/// A single embedding row as supplied by a producer, before ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub meta: RowMeta,
    pub vector: Vec<f64>,
}

/// Dense row-major block of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBlock {
    pub id: ViewId,
    pub dim: usize,
    values: Vec<f64>,
}

impl ViewBlock {
    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn as_array(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.dim), &self.values)
            .expect("block length is a multiple of dim")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    region: String,
    rep: String,
    dim: usize,
    count: usize,
    l2_normalized: bool,
}

/// Multi-view table of unit-norm embeddings with aligned metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    meta: Vec<RowMeta>,
    views: Vec<ViewBlock>,
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalises in f64 and rounds the result onto the f32 grid.
fn normalise_to_f32_grid(v: &[f64], view: &ViewId, row: usize) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(OckrError::ZeroVector {
            view: view.to_string(),
            row,
        });
    }
    Ok(v.iter().map(|x| (x / norm) as f32 as f64).collect())
}

impl FeaturePack {
    /// Ingests per-view row collections.
    ///
    /// Every view must carry the same multiset of row metadata; rows are
    /// L2-normalised, snapped to `f32` precision and sorted canonically.
    pub fn from_view_rows(views: Vec<(ViewId, Vec<FeatureRow>)>) -> Result<Self> {
        if views.is_empty() {
            return Err(OckrError::Invalid("a pack needs at least one view".into()));
        }
        let mut reference: Option<Vec<RowMeta>> = None;
        let mut blocks = Vec::with_capacity(views.len());
        let mut seen = std::collections::BTreeSet::new();
        for (id, rows) in views {
            if !seen.insert(id.clone()) {
                return Err(OckrError::Invalid(format!("duplicate view {id}")));
            }
            if rows.is_empty() {
                return Err(OckrError::Invalid(format!("view {id} is empty")));
            }
            let dim = rows[0].vector.len();
            if dim == 0 {
                return Err(OckrError::DimMismatch {
                    expected: 1,
                    found: 0,
                });
            }
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&a, &b| rows[a].meta.canonical_cmp(&rows[b].meta));
            let mut meta = Vec::with_capacity(rows.len());
            let mut values = Vec::with_capacity(rows.len() * dim);
            for (k, &i) in order.iter().enumerate() {
                let row = &rows[i];
                row.meta.validate()?;
                if row.vector.len() != dim {
                    return Err(OckrError::DimMismatch {
                        expected: dim,
                        found: row.vector.len(),
                    });
                }
                if k > 0 && row.meta.canonical_cmp(&meta[k - 1]) == Ordering::Equal {
                    return Err(OckrError::InvalidRow(format!(
                        "duplicate key {}/{}/{} in view {id}",
                        row.meta.client, row.meta.video, row.meta.frame
                    )));
                }
                values.extend(normalise_to_f32_grid(&row.vector, &id, k)?);
                meta.push(row.meta.clone());
            }
            match &reference {
                None => reference = Some(meta),
                Some(r) if *r != meta => {
                    return Err(OckrError::ViewKeyMismatch(format!(
                        "view {id} does not carry the same row keys as the first view"
                    )))
                }
                Some(_) => {}
            }
            blocks.push(ViewBlock { id, dim, values });
        }
        Ok(FeaturePack {
            meta: reference.unwrap_or_default(),
            views: blocks,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn meta(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn views(&self) -> &[ViewBlock] {
        &self.views
    }

    pub fn view_ids(&self) -> Vec<ViewId> {
        self.views.iter().map(|v| v.id.clone()).collect()
    }

    pub fn view(&self, id: &ViewId) -> Option<&ViewBlock> {
        self.views.iter().find(|v| &v.id == id)
    }

    /// Per-view slices of row `i`, in the order of `ids`.
    pub fn frame<'a>(&'a self, i: usize, ids: &[ViewId]) -> Result<Vec<&'a [f64]>> {
        ids.iter()
            .map(|id| {
                self.view(id)
                    .map(|b| b.row(i))
                    .ok_or_else(|| OckrError::MissingView(id.to_string()))
            })
            .collect()
    }

    /// Subset of rows satisfying `keep`, all views kept aligned.
    pub fn select<F>(&self, keep: F) -> FeaturePack
    where
        F: Fn(&RowMeta) -> bool,
    {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.meta[i])).collect();
        self.take_rows(&rows)
    }

    pub(crate) fn take_rows(&self, rows: &[usize]) -> FeaturePack {
        let meta = rows.iter().map(|&i| self.meta[i].clone()).collect();
        let views = self
            .views
            .iter()
            .map(|b| {
                let mut values = Vec::with_capacity(rows.len() * b.dim);
                for &i in rows {
                    values.extend_from_slice(b.row(i));
                }
                ViewBlock {
                    id: b.id.clone(),
                    dim: b.dim,
                    values,
                }
            })
            .collect();
        FeaturePack { meta, views }
    }

    /// Keeps only the listed views, in the listed order.
    pub fn restrict_views(&self, ids: &[ViewId]) -> Result<FeaturePack> {
        let views = ids
            .iter()
            .map(|id| {
                self.view(id)
                    .cloned()
                    .ok_or_else(|| OckrError::MissingView(id.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeaturePack {
            meta: self.meta.clone(),
            views,
        })
    }

    /// Distinct client ids in canonical order.
    pub fn clients(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in &self.meta {
            if out.last() != Some(&m.client) {
                out.push(m.client.clone());
            }
        }
        out.dedup();
        out
    }

    /// Row indices grouped by `(client, video)`, in canonical order.
    pub fn videos(&self) -> Vec<(String, String, Vec<usize>)> {
        let mut out: Vec<(String, String, Vec<usize>)> = Vec::new();
        for (i, m) in self.meta.iter().enumerate() {
            match out.last_mut() {
                Some((c, v, rows)) if *c == m.client && *v == m.video => rows.push(i),
                _ => out.push((m.client.clone(), m.video.clone(), vec![i])),
            }
        }
        out
    }

    /// SHA-256 over metadata and the exact in-memory values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.meta {
            h.update(serde_json::to_vec(m).expect("metadata serialises"));
            h.update(b"\n");
        }
        for b in &self.views {
            h.update(b.id.stem().as_bytes());
            h.update((b.dim as u64).to_le_bytes());
            for v in &b.values {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Writes `pack` into directory `dir`, three files per view.
pub fn write_pack(pack: &FeaturePack, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| OckrError::io(dir, e))?;
    let mut meta_lines = String::new();
    for m in &pack.meta {
        meta_lines
            .push_str(&serde_json::to_string(m).map_err(|e| OckrError::json("row metadata", e))?);
        meta_lines.push('\n');
    }
    for block in &pack.views {
        let stem = block.id.stem();
        let header = Header {
            magic: PACK_MAGIC.into(),
            version: PACK_VERSION,
            region: block.id.region.clone(),
            rep: block.id.rep.clone(),
            dim: block.dim,
            count: block.len(),
            l2_normalized: true,
        };
        let header_path = dir.join(format!("{stem}.header.json"));
        let text = serde_json::to_string(&header).map_err(|e| OckrError::json("header", e))?;
        fs::write(&header_path, text).map_err(|e| OckrError::io(&header_path, e))?;

        let meta_path = dir.join(format!("{stem}.meta.jsonl"));
        fs::write(&meta_path, &meta_lines).map_err(|e| OckrError::io(&meta_path, e))?;

        let block_path = dir.join(format!("{stem}.f32"));
        let file = fs::File::create(&block_path).map_err(|e| OckrError::io(&block_path, e))?;
        let mut w = BufWriter::new(file);
        for &v in &block.values {
            w.write_all(&(v as f32).to_le_bytes())
                .map_err(|e| OckrError::io(&block_path, e))?;
        }
        w.flush().map_err(|e| OckrError::io(&block_path, e))?;
    }
    Ok(())
}

fn read_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path).map_err(|e| OckrError::io(path, e))?;
    let header: Header = serde_json::from_str(&text)
        .map_err(|e| OckrError::CorruptHeader(format!("{}: {e}", path.display())))?;
    if header.magic != PACK_MAGIC {
        return Err(OckrError::BadMagic {
            expected: PACK_MAGIC.into(),
            found: header.magic,
        });
    }
    if header.version != PACK_VERSION {
        return Err(OckrError::VersionMismatch {
            expected: PACK_VERSION,
            found: header.version,
        });
    }
    if header.dim == 0 {
        return Err(OckrError::CorruptHeader(format!(
            "{}: dim must be positive",
            path.display()
        )));
    }
    Ok(header)
}

fn read_meta(path: &Path) -> Result<Vec<RowMeta>> {
    let file = fs::File::open(path).map_err(|e| OckrError::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| OckrError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let m: RowMeta = serde_json::from_str(&line)
            .map_err(|e| OckrError::json(format!("{} line {}", path.display(), k + 1), e))?;
        m.validate()?;
        out.push(m);
    }
    Ok(out)
}

/// Reads every view found in `dir`.
///
/// Views are ordered by file stem. Rows of headers flagged as not yet
/// normalised are normalised on load; rows of headers flagged as normalised
/// are checked against [`NORM_TOLERANCE`].
pub fn read_pack(dir: &Path) -> Result<FeaturePack> {
    let entries = fs::read_dir(dir).map_err(|e| OckrError::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| OckrError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".header.json") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(OckrError::Invalid(format!(
            "no *.header.json found in {}",
            dir.display()
        )));
    }

    let mut meta_ref: Option<Vec<RowMeta>> = None;
    let mut views = Vec::with_capacity(stems.len());
    for stem in &stems {
        let header = read_header(&dir.join(format!("{stem}.header.json")))?;
        let id = ViewId::new(header.region.clone(), header.rep.clone());
        if id.stem() != *stem {
            return Err(OckrError::CorruptHeader(format!(
                "header region/rep {id} does not match file stem {stem}"
            )));
        }
        let meta = read_meta(&dir.join(format!("{stem}.meta.jsonl")))?;
        if meta.len() != header.count {
            return Err(OckrError::CorruptHeader(format!(
                "{stem}: header count {} but {} metadata lines",
                header.count,
                meta.len()
            )));
        }
        let block_path = dir.join(format!("{stem}.f32"));
        let bytes = fs::read(&block_path).map_err(|e| OckrError::io(&block_path, e))?;
        let expected = header.count * header.dim * 4;
        if bytes.len() != expected {
            return Err(OckrError::TruncatedBlock {
                view: stem.clone(),
                expected,
                found: bytes.len(),
            });
        }
        let raw: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mut values = Vec::with_capacity(raw.len());
        for (i, row) in raw.chunks_exact(header.dim).enumerate() {
            if header.l2_normalized {
                let norm = l2_norm(row);
                if norm == 0.0 {
                    return Err(OckrError::ZeroVector {
                        view: stem.clone(),
                        row: i,
                    });
                }
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(OckrError::NotNormalised {
                        view: stem.clone(),
                        row: i,
                        norm,
                    });
                }
                values.extend_from_slice(row);
            } else {
                values.extend(normalise_to_f32_grid(row, &id, i)?);
            }
        }
        match &meta_ref {
            None => meta_ref = Some(meta),
            Some(r) if *r != meta => {
                return Err(OckrError::ViewKeyMismatch(format!(
                    "view {stem} metadata differs from view {}",
                    stems[0]
                )))
            }
            Some(_) => {}
        }
        views.push(ViewBlock {
            id,
            dim: header.dim,
            values,
        });
    }

    let meta = meta_ref.unwrap_or_default();
    let pack = FeaturePack { meta, views };
    // Packs written by other producers may not be in canonical order.
    let mut order: Vec<usize> = (0..pack.len()).collect();
    order.sort_by(|&a, &b| pack.meta[a].canonical_cmp(&pack.meta[b]));
    for w in order.windows(2) {
        if pack.meta[w[0]].canonical_cmp(&pack.meta[w[1]]) == Ordering::Equal {
            let m = &pack.meta[w[0]];
            return Err(OckrError::InvalidRow(format!(
                "duplicate key {}/{}/{}",
                m.client, m.video, m.frame
            )));
        }
    }
    if order.iter().enumerate().all(|(k, &i)| k == i) {
        Ok(pack)
    } else {
        Ok(pack.take_rows(&order))
    }
}
