//! The workflow steps behind each subcommand.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cfcn_core::cascade::{
    largest_component, refine_cascade, run_cascade, run_single, segment_volume, stage_domain,
    CascadeCrf, CascadeOutput, LESION, LIVER,
};
use cfcn_core::dataset::{lesion_slices, lesion_slices_from_truth, liver_slices};
use cfcn_core::densecrf::{random_search, CrfCase, SearchResult, SearchSpace};
use cfcn_core::metrics::{evaluate as score_case, summarize, MeanStd, MetricReport, MetricSummary};
use cfcn_core::minifcn::{self, load_checkpoint, save_checkpoint, MiniFcn, SliceSample, TrainingCurve};
use cfcn_core::phantom::{generate_dataset, Split};
use cfcn_core::volgrid::{load_labels, load_volume, save_volume, LabelVolume, RoiTransform, Volume};
use serde::{Deserialize, Serialize};

use crate::config::{read_json, write_json, ExperimentConfig, Role, RoiSource};
use crate::manifest::Dataset;
use crate::overlay::write_overlays;

/// Generates the phantom dataset and its manifest.
pub fn phantom(cfg: &ExperimentConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    let cases = generate_dataset(&d.phantom, d.volumes, cfg.phantom_seed(), d.train_fraction)?;
    let path = cfg.manifest_path();
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let ds = Dataset::write(dir, cfg.phantom_seed(), &d.phantom, &cases)?;
    log::info!(
        "wrote {} volumes ({} train) to {}",
        cases.len(),
        cases.iter().filter(|c| c.split == Split::Train).count(),
        dir.display()
    );
    Ok(ds)
}

pub fn load_net(cfg: &ExperimentConfig, role: Role) -> Result<MiniFcn<f32>> {
    let path = cfg.checkpoint_path(role);
    if !path.exists() {
        bail!(
            "{} checkpoint {} not found; run `cfcn train --role {}` first",
            role.name(),
            path.display(),
            role.name()
        );
    }
    Ok(load_checkpoint(&path, &cfg.net_config(role))?)
}

fn liver_mask(cfg: &ExperimentConfig, net: &MiniFcn<f32>, v: &Volume) -> Result<LabelVolume> {
    let fg = segment_volume(net, v)?.channel(1);
    let t = cfg.cascade.liver_threshold;
    let mask = LabelVolume::new(*v.grid(), fg.iter().map(|&p| u8::from(p > t)).collect())?;
    Ok(if cfg.cascade.largest_component {
        largest_component(&mask)
    } else {
        mask
    })
}

/// Training and held-out slices for `role`.
pub fn training_samples(cfg: &ExperimentConfig, role: Role) -> Result<(Vec<SliceSample>, Vec<SliceSample>)> {
    let ds = Dataset::load(&cfg.manifest_path())?;
    let liver_net = match (role, cfg.lesion_roi) {
        (Role::Lesion, RoiSource::Predicted) => Some(load_net(cfg, Role::Liver)?),
        _ => None,
    };
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in ds.cases(None) {
        let (raw, labels) = ds.load_case(c)?;
        let v = cfg.preprocess.apply(&raw)?;
        let samples = match (role, &liver_net) {
            (Role::Liver, _) => liver_slices(&v, &labels)?,
            (Role::Lesion, None) => lesion_slices_from_truth(&v, &labels, &cfg.cascade)?,
            (Role::Lesion, Some(net)) => lesion_slices(&v, &labels, &liver_mask(cfg, net, &v)?, &cfg.cascade)?,
        };
        match c.split {
            Split::Train => train.extend(samples),
            Split::Test => test.extend(samples),
        }
    }
    Ok((train, test))
}

/// Trains the network for `role`, writing its checkpoint and training curve.
/// The lesion role needs the liver checkpoint.
pub fn train(cfg: &ExperimentConfig, role: Role) -> Result<TrainingCurve> {
    if role == Role::Lesion && !cfg.checkpoint_path(Role::Liver).exists() {
        bail!(
            "lesion training needs the liver checkpoint {}; run `cfcn train --role liver` first",
            cfg.checkpoint_path(Role::Liver).display()
        );
    }
    let (train_set, test_set) = training_samples(cfg, role)?;
    let tc = cfg.train_config(role);
    log::info!(
        "training {} net on {} slices ({} held out), {} iterations",
        role.name(),
        train_set.len(),
        test_set.len(),
        tc.iterations
    );
    let start = Instant::now();
    let (net, curve) = minifcn::train(cfg.net_config(role), &tc, &train_set, &test_set)?;
    log::info!("trained {} net in {:.1?}", role.name(), start.elapsed());
    save_checkpoint(&net, &cfg.checkpoint_path(role))?;
    curve.save_csv(&cfg.curve_path(role))?;
    Ok(curve)
}

/// Which volumes `segment` processes.
#[derive(Debug, Clone, Default)]
pub enum SegmentInput {
    /// The given split of the dataset, with its reference labels.
    #[default]
    TestSplit,
    TrainSplit,
    /// A single raw volume with optional reference labels.
    File { volume: PathBuf, truth: Option<PathBuf> },
}

#[derive(Debug, Clone, Default)]
pub struct SegmentOptions {
    pub input: SegmentInput,
    /// Also write the CRF-refined labeling.
    pub crf: bool,
    /// CRF settings file; the config's `crf` section otherwise.
    pub crf_params: Option<PathBuf>,
    /// Also write the single-network baseline.
    pub baseline: bool,
    pub overlays: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoiRecord {
    pub empty_roi: bool,
    pub transform: Option<RoiTransform>,
}

#[derive(Debug, Clone)]
pub struct SegmentedCase {
    pub id: String,
    pub cascade: CascadeOutput,
    pub refined: Option<LabelVolume>,
    pub single: Option<LabelVolume>,
    pub truth: Option<LabelVolume>,
    pub seconds: f64,
}

fn segment_inputs(cfg: &ExperimentConfig, input: &SegmentInput) -> Result<Vec<(String, Volume, Option<LabelVolume>)>> {
    let split = match input {
        SegmentInput::TestSplit => Split::Test,
        SegmentInput::TrainSplit => Split::Train,
        SegmentInput::File { volume, truth } => {
            let id = volume
                .file_stem()
                .and_then(|s| s.to_str())
                .context("volume path has no file name")?
                .to_string();
            let truth = truth.as_ref().map(load_labels).transpose()?;
            return Ok(vec![(id, load_volume(volume)?, truth)]);
        }
    };
    let ds = Dataset::load(&cfg.manifest_path())?;
    ds.cases(Some(split))
        .map(|c| {
            let (v, l) = ds.load_case(c)?;
            Ok((c.id.clone(), v, Some(l)))
        })
        .collect()
}

pub fn crf_settings(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<CascadeCrf> {
    match path {
        Some(p) => read_json(p),
        None => Ok(cfg.crf.clone()),
    }
}

/// Runs the cascade (and optionally the CRF and the single-network
/// baseline) and writes labels, probabilities, ROI records and overlays
/// under `<out>/segment`.
pub fn segment(cfg: &ExperimentConfig, opts: &SegmentOptions) -> Result<Vec<SegmentedCase>> {
    let liver_net = load_net(cfg, Role::Liver)?;
    let lesion_net = load_net(cfg, Role::Lesion)?;
    let crf = opts
        .crf
        .then(|| crf_settings(cfg, opts.crf_params.as_deref()))
        .transpose()?;
    let dir = cfg.segment_dir();
    let mut results = Vec::new();
    for (id, raw, truth) in segment_inputs(cfg, &opts.input)? {
        let start = Instant::now();
        let v = cfg.preprocess.apply(&raw)?;
        let out = run_cascade(&liver_net, &lesion_net, &v, &cfg.cascade)?;
        if out.empty_roi() {
            log::warn!("{id}: empty liver mask");
        }
        let refined = crf
            .as_ref()
            .map(|c| refine_cascade(&out, &v, c, &cfg.cascade))
            .transpose()?;
        let seconds = start.elapsed().as_secs_f64();
        let single = opts
            .baseline
            .then(|| run_single(&lesion_net, &v, &cfg.cascade))
            .transpose()?;
        log::info!("{id}: segmented in {seconds:.1}s");

        save_volume(&out.labels, dir.join("labels").join(format!("{id}.json")))?;
        save_volume(&out.liver, dir.join("probs").join(format!("{id}_liver.json")))?;
        save_volume(&out.lesion, dir.join("probs").join(format!("{id}_lesion.json")))?;
        write_json(
            &dir.join("roi").join(format!("{id}.json")),
            &RoiRecord {
                empty_roi: out.empty_roi(),
                transform: out.roi.clone(),
            },
        )?;
        let mut outputs = vec![("labels", &out.labels)];
        if let Some(r) = &refined {
            save_volume(r, dir.join("labels_crf").join(format!("{id}.json")))?;
            outputs.push(("labels_crf", r));
        }
        if let Some(s) = &single {
            save_volume(s, dir.join("labels_single").join(format!("{id}.json")))?;
            outputs.push(("labels_single", s));
        }
        if opts.overlays {
            for (name, labels) in outputs {
                write_overlays(
                    &dir.join("overlays").join(&id),
                    name,
                    &v,
                    labels,
                    truth.as_ref(),
                    cfg.overlay.every_k,
                )?;
            }
        }
        results.push(SegmentedCase {
            id,
            cascade: out,
            refined,
            single,
            truth,
            seconds,
        });
    }
    Ok(results)
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub reports: Vec<MetricReport>,
    pub summaries: Vec<MetricSummary>,
    pub metrics_csv: PathBuf,
    pub summary_csv: PathBuf,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn case_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "json") {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                ids.insert(s.to_string());
            }
        }
    }
    Ok(ids)
}

/// Scores every labeling in `pred_dir` against the same-named reference in
/// `truth_dir`. `cases` fixes the expected case list; by default it is the
/// reference directory's content. Writes `<name>_metrics.csv` (per case,
/// then mean and std rows) and `<name>_summary.csv` under `<out>/eval`.
pub fn evaluate(
    cfg: &ExperimentConfig,
    pred_dir: &Path,
    truth_dir: &Path,
    cases: Option<Vec<String>>,
) -> Result<EvalOutput> {
    let cases: Vec<String> = match cases {
        Some(c) => c,
        None => case_ids(truth_dir)?.into_iter().collect(),
    };
    if cases.is_empty() {
        bail!("no cases to evaluate in {}", truth_dir.display());
    }
    let have_pred = case_ids(pred_dir)?;
    let have_truth = case_ids(truth_dir)?;
    let missing: Vec<&str> = cases.iter().filter(|c| !have_pred.contains(*c)).map(|c| c.as_str()).collect();
    if !missing.is_empty() {
        bail!("predictions missing in {} for cases: {}", pred_dir.display(), missing.join(", "));
    }
    let missing: Vec<&str> = cases.iter().filter(|c| !have_truth.contains(*c)).map(|c| c.as_str()).collect();
    if !missing.is_empty() {
        bail!("references missing in {} for cases: {}", truth_dir.display(), missing.join(", "));
    }
    let mut reports = Vec::with_capacity(cases.len());
    for id in &cases {
        let pred = load_labels(pred_dir.join(format!("{id}.json")))?;
        let truth = load_labels(truth_dir.join(format!("{id}.json")))?;
        reports.push(score_case(id, &pred, &truth)?);
    }
    let summaries = vec![summarize(&reports, LIVER), summarize(&reports, LESION)];

    let name = pred_dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("pred")
        .to_string();
    let dir = cfg.eval_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let metrics_csv = dir.join(format!("{name}_metrics.csv"));
    let mut w = csv::Writer::from_path(&metrics_csv)?;
    w.write_record(["case", "label", "dice", "voe_pct", "rvd_pct", "asd_mm", "msd_mm", "flags"])?;
    for r in &reports {
        for row in &r.rows {
            w.write_record([
                r.case.clone(),
                row.label.to_string(),
                row.dice.to_string(),
                row.voe_pct.to_string(),
                cell(row.rvd_pct),
                cell(row.asd_mm),
                cell(row.msd_mm),
                row.flags.join(";"),
            ])?;
        }
    }
    for (agg, pick) in [("mean", 0), ("std", 1)] {
        for s in &summaries {
            let f = |m: &Option<MeanStd>| cell(m.as_ref().map(|m| if pick == 0 { m.mean } else { m.std }));
            w.write_record([
                agg.to_string(),
                s.label.to_string(),
                f(&s.dice),
                f(&s.voe_pct),
                f(&s.rvd_pct),
                f(&s.asd_mm),
                f(&s.msd_mm),
                String::new(),
            ])?;
        }
    }
    w.flush()?;

    let summary_csv = dir.join(format!("{name}_summary.csv"));
    let mut w = csv::Writer::from_path(&summary_csv)?;
    w.write_record(["label", "metric", "mean", "std", "n"])?;
    for s in &summaries {
        for (metric, m) in [
            ("dice", &s.dice),
            ("voe_pct", &s.voe_pct),
            ("rvd_pct", &s.rvd_pct),
            ("asd_mm", &s.asd_mm),
            ("msd_mm", &s.msd_mm),
        ] {
            w.write_record([
                s.label.to_string(),
                metric.to_string(),
                cell(m.as_ref().map(|m| m.mean)),
                cell(m.as_ref().map(|m| m.std)),
                m.as_ref().map_or(0, |m| m.n).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(EvalOutput {
        reports,
        summaries,
        metrics_csv,
        summary_csv,
    })
}

/// Case list of a dataset split, for [`evaluate`].
pub fn split_cases(cfg: &ExperimentConfig, split: Split) -> Result<Vec<String>> {
    let ds = Dataset::load(&cfg.manifest_path())?;
    Ok(ds.cases(Some(split)).map(|c| c.id.clone()).collect())
}

pub fn reference_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    Ok(Dataset::load(&cfg.manifest_path())?.labels_dir())
}

#[derive(Debug, Clone)]
pub struct CrfSearchOutput {
    pub params: CascadeCrf,
    pub liver: Option<SearchResult>,
    pub lesion: Option<SearchResult>,
}

fn stage_case(
    probs: &cfcn_core::volgrid::ProbVolume,
    v: &Volume,
    support: &LabelVolume,
    margin: usize,
    truth: &LabelVolume,
) -> Result<Option<CrfCase>> {
    Ok(stage_domain(probs, v, support, margin)?.map(|(probs, volume, t)| -> Result<CrfCase> {
        Ok(CrfCase {
            probs,
            volume,
            truth: t.crop_labels(truth)?,
        })
    }).transpose()?)
}

fn run_search(
    cases: &[CrfCase],
    space: Option<&SearchSpace>,
    budget: usize,
    seed: u64,
    cfg: &ExperimentConfig,
    role: Role,
) -> Result<Option<SearchResult>> {
    let Some(space) = space else {
        return Ok(None);
    };
    if cases.is_empty() {
        log::warn!("no {} cases for the CRF search; stage left unrefined", role.name());
        return Ok(None);
    }
    let start = Instant::now();
    let r = random_search(cases, space, budget, seed, cfg.crf.method)?;
    log::info!(
        "{} CRF search: best mean Dice {:.4} over {} trials in {:.1?}",
        role.name(),
        r.best_score,
        r.trials.len(),
        start.elapsed()
    );
    let path = cfg.crf_dir().join(format!("trials_{}.csv", role.name()));
    fs::create_dir_all(cfg.crf_dir())?;
    r.write_csv(fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?)?;
    Ok(Some(r))
}

/// Random search of per-stage CRF parameters on the training split; writes
/// `crf_params.json` and one trial CSV per stage under `<out>/crf`.
pub fn crf_search(cfg: &ExperimentConfig) -> Result<CrfSearchOutput> {
    let liver_net = load_net(cfg, Role::Liver)?;
    let lesion_net = load_net(cfg, Role::Lesion)?;
    let ds = Dataset::load(&cfg.manifest_path())?;
    let limit = cfg.crf_search.max_cases.unwrap_or(usize::MAX);
    let (mut liver_cases, mut lesion_cases) = (Vec::new(), Vec::new());
    for c in ds.cases(Some(Split::Train)).take(limit) {
        let (raw, labels) = ds.load_case(c)?;
        let v = cfg.preprocess.apply(&raw)?;
        let out = run_cascade(&liver_net, &lesion_net, &v, &cfg.cascade)?;
        let mask = out.liver_mask();
        let liver_truth = labels.select(&[LIVER, LESION]);
        let lesion_truth = labels.select(&[LESION]);
        liver_cases.extend(stage_case(&out.liver, &v, &mask, cfg.crf.margin_vox, &liver_truth)?);
        lesion_cases.extend(stage_case(&out.lesion, &v, &mask, cfg.cascade.roi_margin_vox, &lesion_truth)?);
    }
    let s = &cfg.crf_search;
    let liver = run_search(&liver_cases, s.liver.as_ref(), s.budget, cfg.crf_seed(Role::Liver), cfg, Role::Liver)?;
    let lesion = run_search(&lesion_cases, s.lesion.as_ref(), s.budget, cfg.crf_seed(Role::Lesion), cfg, Role::Lesion)?;
    let params = CascadeCrf {
        liver: liver.as_ref().map(|r| r.best),
        lesion: lesion.as_ref().map(|r| r.best),
        ..cfg.crf.clone()
    };
    write_json(&cfg.crf_params_path(), &params)?;
    Ok(CrfSearchOutput { params, liver, lesion })
}
