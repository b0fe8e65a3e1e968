use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use ockr_core::metrics::evaluate as evaluate_scores;
use ockr_core::models::train_bundle;
use ockr_core::pipeline::{
    calibrate_bundle, calibrate_bundle_loo, labeled_scores, score_pack, sparsity_sweep, SweepRow,
};
use ockr_core::synth::generate;
use ockr_core::{
    load_bundle, read_pack, save_bundle, write_pack, EvalReport, FeaturePack, OckrError,
    ScoreLevel, ScoreRecord, ThresholdMode, TrainOptions, ViewId,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::provenance::{file_digest, Provenance};

fn load_pack(path: &Path) -> Result<FeaturePack> {
    read_pack(path).with_context(|| format!("reading pack {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train_options(c: &RunConfig) -> Result<TrainOptions> {
    let views = if c.views.is_empty() {
        None
    } else {
        Some(
            c.views
                .iter()
                .map(|v| v.parse::<ViewId>())
                .collect::<Result<Vec<_>, _>>()?,
        )
    };
    Ok(TrainOptions {
        target_nnz: if c.dense { None } else { Some(c.target_nnz) },
        jitter: c.jitter,
        views,
    })
}

fn provenance_sidecar(scores: &Path) -> PathBuf {
    let mut name = scores.as_os_str().to_owned();
    name.push(".provenance.json");
    PathBuf::from(name)
}

pub fn synth(c: &RunConfig) -> Result<()> {
    let out = c.require(&c.synth_out, "synth_out")?;
    let packs = generate(&c.synth)?;
    let mut prov = Provenance::new("synth", c)?;
    for (name, pack) in [
        ("enroll", &packs.enroll),
        ("dev", &packs.dev),
        ("test", &packs.test),
    ] {
        write_pack(pack, &out.join(name)).with_context(|| format!("writing {name} pack"))?;
        info!(
            "{name}: {} rows, {} clients",
            pack.len(),
            pack.clients().len()
        );
        prov = prov.input(name, pack.digest());
    }
    write_json(&out.join("synth.provenance.json"), &prov)
}

pub fn fit(c: &RunConfig) -> Result<()> {
    let enroll = c.require(&c.enroll, "enroll")?;
    let model_path = c.require(&c.model, "model")?;
    let pack = load_pack(enroll)?;
    let mut bundle = train_bundle(&pack, c.mode, &train_options(c)?)?;
    for m in bundle.models.values() {
        let p = &m.provenance;
        info!(
            "{}: n={} nnz={}{} jitter={}",
            m.client_id,
            p.training_rows.len(),
            p.nnz,
            if p.nnz_shortfall {
                " (short of target)"
            } else {
                ""
            },
            p.jitter.map_or("none".to_string(), |j| format!("{j:e}")),
        );
        for w in &p.warnings {
            warn!("{}: {w}", m.client_id);
        }
    }
    let prov = Provenance::new("fit", c)?.input("enroll", pack.digest());
    bundle.provenance = Some(json!({ "fit": prov.to_value()? }));
    save_bundle(&bundle, model_path)?;
    info!(
        "wrote {} model(s) to {}",
        bundle.len(),
        model_path.display()
    );
    Ok(())
}

pub fn calibrate(c: &RunConfig, out: Option<&Path>) -> Result<()> {
    let model_path = c.require(&c.model, "model")?;
    let mut bundle = load_bundle(model_path)?;
    let mut prov = Provenance::new("calibrate", c)?.input("model", file_digest(model_path)?);
    let warnings = match (&c.dev, c.threshold) {
        (Some(dev), mode) => {
            let pack = load_pack(dev)?;
            prov = prov.input("dev", pack.digest());
            calibrate_bundle(&mut bundle, &pack, mode)?
        }
        (None, ThresholdMode::Quantile { level }) if c.loo_fallback => {
            let enroll = c.require(&c.enroll, "enroll")?;
            let pack = load_pack(enroll)?;
            prov = prov.input("enroll", pack.digest());
            let first = bundle.models.values().next().context("empty model bundle")?;
            let opts = TrainOptions {
                target_nnz: first.provenance.target_nnz,
                jitter: c.jitter,
                views: None,
            };
            calibrate_bundle_loo(&mut bundle, &pack, &opts, level)?
        }
        (None, _) => {
            return Err(OckrError::Protocol(
                "calibration needs a dev pack (leave-one-out fallback only supports quantile thresholds)".into(),
            )
            .into())
        }
    };
    for w in warnings {
        warn!("{w}");
    }
    let mut chain = match bundle.provenance.take() {
        Some(serde_json::Value::Object(map)) => map,
        _ => serde_json::Map::new(),
    };
    chain.insert("calibrate".into(), prov.to_value()?);
    bundle.provenance = Some(serde_json::Value::Object(chain));
    let dest = out.unwrap_or(model_path);
    save_bundle(&bundle, dest)?;
    info!(
        "calibrated {} model(s) into {}",
        bundle.len(),
        dest.display()
    );
    Ok(())
}

pub fn score(c: &RunConfig) -> Result<()> {
    let model_path = c.require(&c.model, "model")?;
    let test = c.require(&c.test, "test")?;
    let out = c.require(&c.scores, "scores")?;
    let bundle = load_bundle(model_path)?;
    let pack = load_pack(test)?;
    let records = score_pack(&bundle, &pack)?;
    let mut buf = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    f.write_all(&buf)?;
    let prov = Provenance::new("score", c)?
        .input("model", file_digest(model_path)?)
        .input("test", pack.digest());
    write_json(&provenance_sidecar(out), &prov)?;
    info!("scored {} videos into {}", records.len(), out.display());
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).with_context(|| {
                format!("malformed scores file {} at line {}", path.display(), k + 1)
            })
        })
        .collect()
}

#[derive(Serialize)]
struct Report {
    provenance: Provenance,
    level: ScoreLevel,
    report: Option<EvalReport>,
    sweep: Option<Vec<SweepRow>>,
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("target_nnz,mean_nnz,kernel_evals_per_frame,kernel_evals,speedup,auc_frame,auc_video,acer\n");
    for r in rows {
        let target = r.target_nnz.map_or("dense".to_string(), |t| t.to_string());
        out.push_str(&format!(
            "{target},{},{},{},{},{},{},{}\n",
            r.mean_nnz,
            r.kernel_evals_per_frame,
            r.kernel_evals,
            r.speedup,
            r.auc_frame,
            r.auc_video,
            r.acer
        ));
    }
    out
}

pub fn evaluate(c: &RunConfig) -> Result<()> {
    if c.scores.is_none() && c.sweep_nnz.is_empty() {
        bail!("nothing to evaluate: pass --scores and/or --sweep-nnz");
    }
    let mut prov = Provenance::new("evaluate", c)?;
    let report = match &c.scores {
        Some(path) => {
            prov = prov.input("scores", file_digest(path)?);
            let test = labeled_scores(&read_scores(path)?, c.level)?;
            let dev = match &c.dev_scores {
                Some(p) => {
                    prov = prov.input("dev_scores", file_digest(p)?);
                    Some(labeled_scores(&read_scores(p)?, c.level)?)
                }
                None => None,
            };
            Some(evaluate_scores(&test, dev.as_deref())?)
        }
        None => None,
    };
    let sweep = if c.sweep_nnz.is_empty() {
        None
    } else {
        let enroll = load_pack(c.require(&c.enroll, "enroll")?)?;
        let test = load_pack(c.require(&c.test, "test")?)?;
        let dev = c.dev.as_deref().map(load_pack).transpose()?;
        prov = prov
            .input("enroll", enroll.digest())
            .input("test", test.digest());
        if let Some(d) = &dev {
            prov = prov.input("dev", d.digest());
        }
        let rows = sparsity_sweep(
            &enroll,
            dev.as_ref(),
            &test,
            c.mode,
            &train_options(c)?,
            &c.sweep_nnz,
        )?;
        for r in &rows {
            info!(
                "nnz {:>5}: evals/frame {:>8.1}  speedup {:>7.1}x  auc {:.4}  acer {:.4}",
                r.target_nnz.map_or("dense".to_string(), |t| t.to_string()),
                r.kernel_evals_per_frame,
                r.speedup,
                r.auc_frame,
                r.acer
            );
        }
        if let Some(csv) = &c.sweep_csv {
            fs::write(csv, sweep_csv(&rows))
                .with_context(|| format!("writing {}", csv.display()))?;
        }
        Some(rows)
    };
    let out = Report {
        provenance: prov,
        level: c.level,
        report,
        sweep,
    };
    match &c.report {
        Some(path) => write_json(path, &out),
        None => {
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
    }
}
