//! Experiment harness: dataset generation, backbone training, adaptation
//! runs, ablation sweeps and report regeneration.

pub mod config;
pub mod error;

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use trajtta::backbone::{build_backbone, train_backbone, Backbone, BackboneWeights, ProbMap};
use trajtta::metrics::{self, aggregate, evaluate_case, CaseMetrics, Summary};
use trajtta::modulator::{init_modulator_with, ModulatorParams};
use trajtta::recon::{
    load_trajectory, reconstruct, save_trajectory, ForwardOperator, ReferenceDenoiser, Trajectory,
};
use trajtta::tta::{adapt, predict_steps, select_steps, supervised_adapt, AdaptOutcome, Granularity, Subset};
use trajtta::uncertainty::{finalize, EnsembleResult};
use trajtta::volume::{generate_synthetic_case, load_case, save_case, SegmentationMask, SyntheticCase};

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Frozen backbone on the final reconstruction only.
    Baseline,
    /// Adaptation and prediction on the final reconstruction only.
    LastOnlyAdapt,
    /// Entropy adaptation over the trajectory and ensemble prediction.
    Irtta,
    /// As `Irtta` with cross entropy against the reference labels.
    IrttaSup,
}

impl FromStr for Mode {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "last_only_adapt" => Ok(Self::LastOnlyAdapt),
            "irtta" => Ok(Self::Irtta),
            "irtta_sup" => Ok(Self::IrttaSup),
            _ => Err(CliError::Config(format!("unknown mode '{s}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::LastOnlyAdapt => "last_only_adapt",
            Self::Irtta => "irtta",
            Self::IrttaSup => "irtta_sup",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    EmbSize,
    Steps,
    S,
    Subset,
    Granularity,
}

impl FromStr for Axis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emb_size" => Ok(Self::EmbSize),
            "steps" => Ok(Self::Steps),
            "S" | "s" => Ok(Self::S),
            "subset" => Ok(Self::Subset),
            "granularity" => Ok(Self::Granularity),
            _ => Err(CliError::Config(format!("unknown ablation axis '{s}'"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::EmbSize => "emb_size",
            Self::Steps => "steps",
            Self::S => "S",
            Self::Subset => "subset",
            Self::Granularity => "granularity",
        })
    }
}

impl Axis {
    /// Returns `cfg` with this axis set to `value`.
    pub fn apply(&self, cfg: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut out = cfg.clone();
        let bad = |e: std::num::ParseIntError| CliError::Config(format!("{self} value '{value}': {e}"));
        match self {
            Self::EmbSize => out.modulator.emb_dim = value.parse().map_err(bad)?,
            Self::Steps => out.adapt.steps = value.parse().map_err(bad)?,
            Self::S => out.recon.steps = value.parse().map_err(bad)?,
            Self::Subset => out.adapt.subset = value.parse()?,
            Self::Granularity => out.adapt.granularity = value.parse()?,
        }
        out.validate()?;
        Ok(out)
    }
}

/// Appends timestamped lines to a run log and mirrors them to `log`.
pub struct RunLog {
    path: PathBuf,
    start: Instant,
}

impl RunLog {
    pub fn open(path: PathBuf) -> Self {
        Self {
            path,
            start: Instant::now(),
        }
    }

    pub fn line(&self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        log::info!("{msg}");
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(&self.path) {
            let _ = writeln!(f, "[{:>8.2}s] {msg}", self.start.elapsed().as_secs_f64());
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn is_nonempty_dir(path: &Path) -> bool {
    fs::read_dir(path)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub config: String,
}

/// Writes `n_train` source cases and `n_test` shifted cases under the dataset root.
pub fn cmd_generate(cfg: &ExperimentConfig, force: bool) -> Result<DatasetManifest> {
    let root = &cfg.dataset.root;
    if is_nonempty_dir(root) {
        if !force {
            return Err(CliError::NotEmpty { path: root.clone() });
        }
        fs::remove_dir_all(root).map_err(|e| CliError::io(root, e))?;
    }
    create_dir(root)?;
    let ds = &cfg.dataset;
    let write_split = |split: &str, seeds: Vec<u64>, phantom: &trajtta::volume::PhantomConfig| {
        let dir = root.join(split);
        seeds
            .par_iter()
            .map(|&seed| {
                let case = generate_synthetic_case(seed, phantom)?;
                save_case(&case, &dir.join(&case.case_id))?;
                Ok(case.case_id)
            })
            .collect::<Result<Vec<String>>>()
    };
    let train = write_split(
        "train",
        (0..ds.n_train).map(|i| ds.train_seed(i)).collect(),
        &ds.source_phantom(),
    )?;
    let test = if ds.n_test > 0 {
        write_split(
            "test",
            (0..ds.n_test).map(|i| ds.test_seed(i)).collect(),
            &ds.target_phantom(),
        )?
    } else {
        Vec::new()
    };
    let manifest = DatasetManifest {
        train,
        test,
        config: toml::to_string(&cfg.dataset).expect("dataset config serializes"),
    };
    write_text(
        &root.join("dataset.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    log::info!(
        "generated {} train and {} test cases in {}",
        manifest.train.len(),
        manifest.test.len(),
        root.display()
    );
    Ok(manifest)
}

/// Loads every case directory of a split, sorted by case id.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<SyntheticCase>> {
    let dir = root.join(split);
    let entries = fs::read_dir(&dir).map_err(|e| {
        CliError::io(&dir, format!("missing dataset split ({e}); run `generate` first"))
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.par_iter()
        .map(|d| load_case(d).map_err(CliError::from))
        .collect()
}

fn trajectory_for(case: &SyntheticCase, cfg: &ExperimentConfig) -> Result<Trajectory> {
    let op = ForwardOperator::from_id(case.measurement.operator_id())?;
    let denoiser = ReferenceDenoiser::new(&case.measurement, &op, cfg.recon.horizon)?;
    Ok(reconstruct(&case.case_id, &case.measurement, &op, &denoiser, &cfg.recon)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub checksum: String,
    /// Held-out source Dice on clean images.
    pub val_dice_clean: Option<f64>,
    /// Held-out source Dice on final reconstructions of unshifted measurements.
    pub val_dice_recon: Option<f64>,
    pub final_loss: Option<f64>,
}

/// Mean foreground Dice of the frozen backbone over `(image, mask)` pairs.
pub fn source_dice<'a>(
    backbone: &Backbone,
    weights: &BackboneWeights,
    pairs: impl IntoIterator<Item = (&'a trajtta::volume::Image, &'a SegmentationMask)>,
) -> Result<Option<f64>> {
    let pairs: Vec<_> = pairs.into_iter().collect();
    let cases = pairs
        .par_iter()
        .map(|(img, mask)| {
            let map = backbone.forward(weights, img, None)?;
            let res = finalize(std::slice::from_ref(&map))?;
            Ok(evaluate_case("val", &[res], &[(*mask).clone()], metrics::DEFAULT_ECE_BINS)?)
        })
        .collect::<Result<Vec<CaseMetrics>>>()?;
    Ok(aggregate(&cases).mean_dice)
}

/// Trains the backbone on the source split and writes the checkpoint.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let cases = load_split(&cfg.dataset.root, "train")?;
    let (backbone, _) = build_backbone(&cfg.backbone.arch)?;
    let init = backbone.init_weights(cfg.backbone.init_seed);
    let data: Vec<_> = cases.iter().map(|c| (c.clean.clone(), c.mask.clone())).collect();
    let start = Instant::now();
    let (weights, report) = train_backbone(&backbone, init, &data, &cfg.backbone.train)?;
    log::info!("trained backbone in {:.1}s", start.elapsed().as_secs_f64());
    let path = cfg.checkpoint_path();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    backbone.save_checkpoint(&weights, &path)?;

    let ds = &cfg.dataset;
    let phantom = ds.source_phantom();
    let val = (0..ds.n_val)
        .into_par_iter()
        .map(|i| generate_synthetic_case(ds.val_seed(i), &phantom).map_err(CliError::from))
        .collect::<Result<Vec<_>>>()?;
    let recon_finals = val
        .par_iter()
        .map(|c| trajectory_for(c, cfg).map(|t| t.last().image.clone()))
        .collect::<Result<Vec<_>>>()?;
    let val_dice_clean = source_dice(&backbone, &weights, val.iter().map(|c| (&c.clean, &c.mask)))?;
    let val_dice_recon = source_dice(
        &backbone,
        &weights,
        recon_finals.iter().zip(val.iter().map(|c| &c.mask)),
    )?;
    let summary = TrainSummary {
        checkpoint: path.clone(),
        checksum: weights.checksum(),
        val_dice_clean,
        val_dice_recon,
        final_loss: report.loss_curve.last().map(|(_, l)| *l),
    };
    let fmt_opt = |v: Option<f64>| v.map(|d| format!("{d:.4}")).unwrap_or_else(|| "absent".into());
    log::info!(
        "source validation Dice: clean {} / reconstructed {} (threshold {})",
        fmt_opt(val_dice_clean),
        fmt_opt(val_dice_recon),
        cfg.backbone.min_val_dice
    );
    if let Some(d) = val_dice_clean {
        if d < cfg.backbone.min_val_dice {
            log::warn!(
                "validation Dice {d:.4} is below the configured threshold {}",
                cfg.backbone.min_val_dice
            );
        }
    }
    write_text(
        &path.with_extension("train.json"),
        &serde_json::to_string_pretty(&(&summary, &report)).expect("summary serializes"),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Persist trajectories in the run directory so reruns reuse them.
    pub cache_trajectories: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            cache_trajectories: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub hash: String,
    pub mode: Mode,
    pub checkpoint: PathBuf,
    pub theta_checksum: String,
    /// Wall clock of adaptation plus inference.
    pub runtime_s: f64,
    pub cases: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: Vec<CaseMetrics>,
    pub summary: Summary,
    pub results: Vec<EnsembleResult>,
    pub adaptation: Option<AdaptOutcome>,
}

/// Hash naming the run directory of `(cfg, mode)`.
pub fn run_hash(cfg: &ExperimentConfig, mode: Mode) -> String {
    config::short_hash(&[&cfg.to_toml(), &mode.to_string()])
}

fn prepare_run_dir(cfg: &ExperimentConfig, mode: Mode) -> Result<(PathBuf, String)> {
    let hash = run_hash(cfg, mode);
    let dir = cfg.eval.output_dir.join(&hash);
    let stored = dir.join("config.toml");
    let text = format!("# mode = {mode}\n{}", cfg.to_toml());
    if stored.exists() {
        let existing = fs::read_to_string(&stored).map_err(|e| CliError::io(&stored, e))?;
        if existing != text {
            return Err(CliError::HashCollision { path: dir });
        }
    } else {
        create_dir(&dir)?;
        write_text(&stored, &text)?;
    }
    Ok((dir, hash))
}

fn load_or_reconstruct(
    case: &SyntheticCase,
    cfg: &ExperimentConfig,
    cache_dir: &Path,
    save: bool,
) -> Result<(Trajectory, bool)> {
    let dir = cache_dir.join(&case.case_id);
    if dir.join("trajectory.json").exists() {
        let traj = load_trajectory(&dir)?;
        if traj.len() == cfg.recon.steps {
            return Ok((traj, true));
        }
    }
    let traj = trajectory_for(case, cfg)?;
    if save {
        save_trajectory(&traj, &dir)?;
    }
    Ok((traj, false))
}

fn ensemble(
    backbone: &Backbone,
    weights: &BackboneWeights,
    params: Option<&ModulatorParams>,
    traj: &Trajectory,
    subset: Subset,
) -> Result<EnsembleResult> {
    let steps = select_steps(traj, subset)?;
    let maps: Vec<ProbMap> = predict_steps(backbone, weights, params, &steps)?;
    Ok(finalize(&maps)?)
}

/// Full pipeline for one mode: reconstruct, adapt, ensemble, evaluate.
pub fn cmd_run(cfg: &ExperimentConfig, mode: Mode, opts: &RunOptions) -> Result<RunArtifact> {
    cfg.validate()?;
    let (run_dir, hash) = prepare_run_dir(cfg, mode)?;
    let log = RunLog::open(run_dir.join("log.txt"));
    log.line(format!("run {hash} mode {mode}"));

    let ckpt = cfg.checkpoint_path();
    if !ckpt.exists() {
        return Err(CliError::io(&ckpt, "trained checkpoint missing; run `train` first"));
    }
    let (backbone, weights) = Backbone::load_checkpoint(&ckpt)?;
    if backbone.arch() != &cfg.backbone.arch {
        return Err(CliError::Config(format!(
            "checkpoint {} was trained with a different architecture",
            ckpt.display()
        )));
    }
    let cases = load_split(&cfg.dataset.root, "test")?;
    if cases.is_empty() {
        return Err(CliError::Config("test split is empty".into()));
    }

    let cache_dir = run_dir.join("trajectories");
    let loaded = cases
        .par_iter()
        .map(|c| load_or_reconstruct(c, cfg, &cache_dir, opts.cache_trajectories))
        .collect::<Result<Vec<_>>>()?;
    let reused = loaded.iter().filter(|(_, r)| *r).count();
    let trajectories: Vec<Trajectory> = loaded.into_iter().map(|(t, _)| t).collect();
    log.line(format!(
        "{} trajectories ready (S = {}, {reused} from cache)",
        trajectories.len(),
        cfg.recon.steps
    ));

    let before = weights.checksum();
    log.line(format!("frozen theta checksum before: {before}"));
    let start = Instant::now();
    let (subset, adaptation) = match mode {
        Mode::Baseline => (Subset::OnlyLast, None),
        _ => {
            let mut acfg = cfg.adapt.clone();
            if mode == Mode::LastOnlyAdapt {
                acfg.subset = Subset::OnlyLast;
            }
            let init = init_modulator_with(backbone.registry(), cfg.modulator_config(), cfg.modulator.seed)?;
            let outcome = if mode == Mode::IrttaSup {
                let labels: Vec<SegmentationMask> = cases.iter().map(|c| c.mask.clone()).collect();
                supervised_adapt(&backbone, &weights, &init, &trajectories, &labels, &acfg)?
            } else {
                adapt(&backbone, &weights, &init, &trajectories, &acfg)?
            };
            (acfg.subset, Some(outcome))
        }
    };
    let results = trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let params = adaptation.as_ref().map(|o| o.params_for(i));
            ensemble(&backbone, &weights, params, traj, subset)
        })
        .collect::<Result<Vec<_>>>()?;
    let runtime_s = start.elapsed().as_secs_f64();
    let after = weights.checksum();
    log.line(format!("frozen theta checksum after:  {after}"));
    if before != after {
        return Err(CliError::BackboneMutated { before, after });
    }
    log.line(format!("adaptation + inference took {runtime_s:.2}s"));

    let metrics = cases
        .par_iter()
        .zip(&results)
        .map(|(c, r)| {
            evaluate_case(&c.case_id, std::slice::from_ref(r), std::slice::from_ref(&c.mask), cfg.eval.n_bins)
                .map_err(CliError::from)
        })
        .collect::<Result<Vec<_>>>()?;

    let case_dir = run_dir.join("cases");
    for (c, r) in cases.iter().zip(&results) {
        r.save(&case_dir.join(&c.case_id))?;
    }
    if let Some(outcome) = &adaptation {
        let dir = run_dir.join("adaptation");
        create_dir(&dir)?;
        let names: Vec<String> = match outcome.granularity {
            Granularity::PerCase => cases.iter().map(|c| c.case_id.clone()).collect(),
            Granularity::PerDataset => vec!["dataset".into()],
        };
        for ((name, params), report) in names.iter().zip(&outcome.params).zip(&outcome.reports) {
            params.save(&dir.join(format!("{name}.modulator.json")))?;
            report.save(&dir.join(format!("{name}.report.json")))?;
        }
        let (first, last): (f64, f64) = outcome
            .reports
            .iter()
            .fold((0.0, 0.0), |(a, b), r| (a + r.initial_loss(), b + r.final_loss));
        let n = outcome.reports.len() as f64;
        log.line(format!(
            "mean adaptation loss {:.6} -> {:.6}",
            first / n,
            last / n
        ));
    }
    write_text(
        &run_dir.join("metrics.json"),
        &serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
    )?;
    let summary = aggregate(&metrics);
    write_summary_csv(&run_dir.join("summary.csv"), &[(mode.to_string(), &summary, None)])?;
    log.line(format!(
        "mean Dice {} ECE {:.5} PRAUC {}",
        fmt_opt(summary.mean_dice),
        summary.ece.mean.unwrap_or(f64::NAN),
        fmt_opt(summary.prauc.mean)
    ));
    let manifest = RunManifest {
        hash,
        mode,
        checkpoint: ckpt,
        theta_checksum: after,
        runtime_s,
        cases: cases.iter().map(|c| c.case_id.clone()).collect(),
    };
    write_text(
        &run_dir.join("run.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(RunArtifact {
        run_dir,
        manifest,
        metrics,
        summary,
        results,
        adaptation,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "absent".into())
}

/// One summary row per label; `runtime_s` adds a runtime column.
pub fn write_summary_csv(path: &Path, rows: &[(String, &Summary, Option<f64>)]) -> Result<()> {
    let n_fg = rows.iter().map(|(_, s, _)| s.dice.len()).max().unwrap_or(0);
    let with_runtime = rows.iter().any(|(_, _, r)| r.is_some());
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut header = vec!["label".to_string(), "n_cases".to_string()];
    for c in 1..=n_fg {
        header.extend([
            format!("dice_c{c}_mean"),
            format!("dice_c{c}_std"),
            format!("dice_c{c}_n"),
        ]);
    }
    header.extend(
        ["dice_mean", "ece_mean", "ece_std", "prauc_mean", "prauc_std", "prauc_n"].map(String::from),
    );
    if with_runtime {
        header.push("runtime_s".into());
    }
    w.write_record(&header).map_err(|e| CliError::io(path, e))?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "absent".into());
    for (label, s, runtime) in rows {
        let mut rec = vec![label.clone(), s.n_cases.to_string()];
        for k in 0..n_fg {
            match s.dice.get(k) {
                Some(st) => rec.extend([cell(st.mean), cell(st.std), st.count.to_string()]),
                None => rec.extend(["absent".into(), "absent".into(), "0".into()]),
            }
        }
        rec.extend([
            cell(s.mean_dice),
            cell(s.ece.mean),
            cell(s.ece.std),
            cell(s.prauc.mean),
            cell(s.prauc.std),
            s.prauc.count.to_string(),
        ]);
        if with_runtime {
            rec.push(runtime.map(|r| format!("{r:.3}")).unwrap_or_default());
        }
        w.write_record(&rec).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub value: String,
    pub run_dir: PathBuf,
    pub summary: Summary,
    pub runtime_s: f64,
}

/// One `irtta` run per value of `axis`, collated into `ablation_<axis>.csv`.
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    axis: Axis,
    values: &[String],
    opts: &RunOptions,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(CliError::Config("ablation needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let run_cfg = axis.apply(cfg, v)?;
        log::info!("ablation {axis} = {v}");
        let art = cmd_run(&run_cfg, Mode::Irtta, opts)?;
        rows.push(AblationRow {
            value: v.clone(),
            run_dir: art.run_dir,
            summary: art.summary,
            runtime_s: art.manifest.runtime_s,
        });
    }
    create_dir(&cfg.eval.output_dir)?;
    let csv_rows: Vec<(String, &Summary, Option<f64>)> = rows
        .iter()
        .map(|r| (format!("{axis}={}", r.value), &r.summary, Some(r.runtime_s)))
        .collect();
    write_summary_csv(
        &cfg.eval.output_dir.join(format!("ablation_{axis}.csv")),
        &csv_rows,
    )?;
    Ok(rows)
}

/// Recomputes `summary.csv` of a run directory from its per-case metrics.
pub fn cmd_report(run_dir: &Path) -> Result<Summary> {
    let path = run_dir.join("metrics.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let metrics: Vec<CaseMetrics> =
        serde_json::from_str(&text).map_err(|e| CliError::io(&path, format!("bad metrics: {e}")))?;
    let manifest_path = run_dir.join("run.json");
    let label = fs::read_to_string(&manifest_path)
        .ok()
        .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
        .map(|m| m.mode.to_string())
        .unwrap_or_else(|| "run".into());
    let summary = aggregate(&metrics);
    write_summary_csv(&run_dir.join("summary.csv"), &[(label, &summary, None)])?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_and_axes_parse() {
        for m in ["baseline", "last_only_adapt", "irtta", "irtta_sup"] {
            assert_eq!(m.parse::<Mode>().unwrap().to_string(), m);
        }
        assert!("tent".parse::<Mode>().is_err());
        assert_eq!("S".parse::<Axis>().unwrap(), Axis::S);
        assert!("depth".parse::<Axis>().is_err());
    }

    #[test]
    fn axis_values_are_applied() {
        let cfg = ExperimentConfig::default();
        assert_eq!(Axis::S.apply(&cfg, "5").unwrap().recon.steps, 5);
        assert_eq!(Axis::EmbSize.apply(&cfg, "128").unwrap().modulator.emb_dim, 128);
        assert_eq!(
            Axis::Granularity.apply(&cfg, "per_dataset").unwrap().adapt.granularity,
            Granularity::PerDataset
        );
        assert!(Axis::Steps.apply(&cfg, "many").is_err());
    }

    #[test]
    fn run_hash_depends_on_mode_and_config() {
        let cfg = ExperimentConfig::default();
        let a = run_hash(&cfg, Mode::Irtta);
        assert_ne!(a, run_hash(&cfg, Mode::Baseline));
        let mut other = cfg.clone();
        other.adapt.steps = 7;
        assert_ne!(a, run_hash(&other, Mode::Irtta));
        assert_eq!(a, run_hash(&cfg.clone(), Mode::Irtta));
    }
}
