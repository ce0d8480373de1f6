//! Configuration-driven pretrain / fine-tune experiments and sweeps.
//!
//! Each seed runs two arms on the same training selection: a model
//! pretrained on artificial labels and then transferred, and a freshly built
//! model. Everything the run writes lands under `out`:
//!
//! ```text
//! summary.csv            one row per arm, p-value on the pretrained row
//! runs.csv               one row per (seed, arm)
//! logs/seed<S>_<stage>.log
//! checkpoints/seed<S>_<stage>.hgw
//! maps/median_<arm>.ppm and .hsl
//! ```
//!
//! where `<stage>` is `pretrain`, `pretrained` or `scratch`.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer};

use crate::error::{Error, Result};
use crate::evalreport::{
    classify_full_image, confusion_matrix, mann_whitney_u, metrics, summarize_runs, write_runs_csv,
    write_summary_csv, Aggregate, MetricSet, RunRecord, SummaryRow,
};
use crate::hsdata::{
    band_statistics, center_bands, export_map_image, load_cube, load_labelmap, save_labelmap,
    standardize_bands, CubeFormat, HyperCube, LabelMap,
};
use crate::labeling::{
    grid_partition, join_classes, load_grouping, select_training_pixels, split_classes_with_min,
    stripe_partition, GridSpec, SampleSelection,
};
use crate::models::{Arch, ModelSpec, ModelState};
use crate::synth::{generate, SynthParams};
use crate::tensor::RngState;
use crate::trainer::{
    finetune, pretrain_labeled, schedule_for, Phase, ScheduleOptions, TrainRun, TrainingSchedule,
};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "HYPERGRID_THREADS";

const STANDARDIZE_EPS: f64 = 1e-8;

// sub-streams of each seed
const PRETRAIN_STREAM: u64 = 1;
const SELECT_STREAM: u64 = 3;
const TRANSFER_STREAM: u64 = 4;
const FINETUNE_STREAM: u64 = 5;
const SCRATCH_STREAM: u64 = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocess {
    /// Subtract each band's mean.
    #[default]
    Center,
    /// Subtract the mean and divide by the standard deviation.
    Standardize,
}

/// How pretraining labels are made.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LabelScheme {
    /// `rows x cols` cells.
    Grid { rows: usize, cols: usize },
    /// Square cells of about `size x size` pixels.
    Blocks { size: usize },
    /// `count` vertical stripes.
    Stripes { count: usize },
    /// Ground-truth classes merged by an `old=group` file.
    GtJoin { file: PathBuf },
    /// Ground-truth classes split along a `rows x cols` grid.
    GtSplit {
        rows: usize,
        cols: usize,
        #[serde(default = "one")]
        min_pixels: usize,
    },
}

fn one() -> usize {
    1
}

impl Default for LabelScheme {
    fn default() -> Self {
        LabelScheme::Blocks { size: 5 }
    }
}

impl LabelScheme {
    /// Short name used for scenario labels.
    pub fn tag(&self) -> String {
        match self {
            LabelScheme::Grid { rows, cols } => format!("grid{rows}x{cols}"),
            LabelScheme::Blocks { size } => format!("blocks{size}"),
            LabelScheme::Stripes { count } => format!("stripes{count}"),
            LabelScheme::GtJoin { .. } => "gt-join".into(),
            LabelScheme::GtSplit { rows, cols, .. } => format!("gt-split{rows}x{cols}"),
        }
    }

    /// Pretraining label map for the scene. Background (0) pixels are only
    /// possible for the ground-truth schemes.
    pub fn build(&self, gt: &LabelMap) -> Result<LabelMap> {
        let (h, w) = (gt.height(), gt.width());
        match self {
            &LabelScheme::Grid { rows, cols } => {
                grid_partition(h, w, GridSpec::Divisions { rows, cols })
            }
            &LabelScheme::Blocks { size } => grid_partition(
                h,
                w,
                GridSpec::Blocks {
                    height: size,
                    width: size,
                },
            ),
            &LabelScheme::Stripes { count } => stripe_partition(h, w, count),
            LabelScheme::GtJoin { file } => join_classes(gt, &load_grouping(file)?),
            &LabelScheme::GtSplit {
                rows,
                cols,
                min_pixels,
            } => {
                let cells = grid_partition(h, w, GridSpec::Divisions { rows, cols })?;
                split_classes_with_min(gt, &cells, min_pixels)
            }
        }
    }
}

/// Generated scene used in place of files on disk: the scene parameters plus
/// a `seed` key.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSource {
    pub seed: u64,
    pub params: SynthParams,
}

impl<'de> Deserialize<'de> for SyntheticSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut table = toml::Table::deserialize(d)?;
        let seed = match table.remove("seed") {
            Some(v) => v.try_into().map_err(D::Error::custom)?,
            None => 0,
        };
        let params = toml::Value::Table(table)
            .try_into()
            .map_err(D::Error::custom)?;
        Ok(Self { seed, params })
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub cube: Option<PathBuf>,
    pub cube_format: CubeFormat,
    pub ground_truth: Option<PathBuf>,
    /// Zero-based band indices to drop.
    pub exclude_bands: Vec<usize>,
    /// Ground-truth classes to keep; empty keeps all.
    pub keep_classes: Vec<u16>,
    pub synthetic: Option<SyntheticSource>,
    pub preprocess: Preprocess,
    pub arch: Arch,
    pub a5_filters: Option<usize>,
    pub labels: LabelScheme,
    pub n_per_class: usize,
    pub repeats: usize,
    /// First seed; seeds are `seed..seed + repeats` unless `seeds` is given.
    pub seed: u64,
    pub seeds: Option<Vec<u64>>,
    pub scale: f64,
    pub a9_base_lr: f64,
    pub out: PathBuf,
    pub workers: usize,
    pub checkpoints: bool,
    pub maps: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "experiment".into(),
            cube: None,
            cube_format: CubeFormat::Native,
            ground_truth: None,
            exclude_bands: Vec::new(),
            keep_classes: Vec::new(),
            synthetic: None,
            preprocess: Preprocess::Center,
            arch: Arch::A9,
            a5_filters: None,
            labels: LabelScheme::default(),
            n_per_class: 5,
            repeats: 15,
            seed: 0,
            seeds: None,
            scale: 1.0,
            a9_base_lr: 0.01,
            out: PathBuf::from("hypergrid-out"),
            workers: 1,
            checkpoints: true,
            maps: true,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            for p in [&mut config.cube, &mut config.ground_truth]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
            if let LabelScheme::GtJoin { file } = &mut config.labels {
                fix(file);
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Loads a TOML file; relative data paths are taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return bad("seeds must not be empty".into());
        }
        if let Some(seeds) = &self.seeds {
            if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
                return bad("seeds must be distinct".into());
            }
        }
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive".into());
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return bad(format!(
                "scale must be a positive number, got {}",
                self.scale
            ));
        }
        if !(self.a9_base_lr > 0.0) || !self.a9_base_lr.is_finite() {
            return bad(format!(
                "a9_base_lr must be positive, got {}",
                self.a9_base_lr
            ));
        }
        if self.a5_filters == Some(0) {
            return bad("a5_filters must be positive".into());
        }
        if self.scenario.is_empty() || self.scenario.contains([',', '\n', '"']) {
            return bad(format!("scenario {:?} is not a plain name", self.scenario));
        }
        match (&self.synthetic, &self.cube, &self.ground_truth) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => {
                return bad("use either synthetic or cube/ground_truth, not both".into())
            }
            _ => return bad("cube and ground_truth are required without a synthetic scene".into()),
        }
        Ok(())
    }

    /// Config error for any referenced file that does not exist.
    pub fn check_files(&self) -> Result<()> {
        let mut files: Vec<&PathBuf> = [&self.cube, &self.ground_truth]
            .into_iter()
            .flatten()
            .collect();
        if let LabelScheme::GtJoin { file } = &self.labels {
            files.push(file);
        }
        match files.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::Config(format!("{} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    /// Seeds in run order.
    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.repeats as u64).map(|i| self.seed + i).collect(),
        }
    }

    pub fn schedule(&self, phase: Phase) -> Result<TrainingSchedule> {
        schedule_for(
            self.arch,
            phase,
            ScheduleOptions {
                a9_base_lr: self.a9_base_lr,
                scale: self.scale,
            },
        )
    }

    /// Model spec for `classes` outputs on a cube with `bands` bands.
    pub fn model_spec(&self, bands: usize, classes: usize) -> ModelSpec {
        let spec = ModelSpec::new(self.arch, bands, classes);
        match self.a5_filters {
            Some(f) => spec.with_a5_filters(f),
            None => spec,
        }
    }

    /// Loads (or generates) and preprocesses the scene.
    pub fn load_data(&self) -> Result<Dataset> {
        let (cube, gt) = match &self.synthetic {
            Some(s) => {
                let scene = generate(&s.params, s.seed)?;
                (scene.cube, scene.ground_truth)
            }
            None => {
                let (cube, gt) = (
                    self.cube.as_ref().unwrap(),
                    self.ground_truth.as_ref().unwrap(),
                );
                (load_cube(cube, self.cube_format)?, load_labelmap(gt)?)
            }
        };
        if (gt.height(), gt.width()) != (cube.height(), cube.width()) {
            return Err(Error::dim(format!(
                "ground truth {}x{} vs cube {}x{}",
                gt.height(),
                gt.width(),
                cube.height(),
                cube.width()
            )));
        }
        let cube = if self.exclude_bands.is_empty() {
            cube
        } else {
            cube.exclude_bands(&self.exclude_bands)?
        };
        let stats = band_statistics(&cube);
        let cube = match self.preprocess {
            Preprocess::Center => center_bands(&cube, &stats)?,
            Preprocess::Standardize => standardize_bands(&cube, &stats, STANDARDIZE_EPS)?,
        };
        let gt = if self.keep_classes.is_empty() {
            gt
        } else {
            gt.retain_classes(&self.keep_classes)
        };
        Ok(Dataset {
            cube,
            ground_truth: gt,
        })
    }
}

/// Preprocessed cube with its (class-filtered) ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub cube: HyperCube,
    pub ground_truth: LabelMap,
}

/// Both arms of one seed.
#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub selection: SampleSelection,
    pub pretrained: MetricSet,
    pub scratch: MetricSet,
    pretrained_map: LabelMap,
    scratch_map: LabelMap,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub seeds: Vec<SeedResult>,
    pub pretrained: Aggregate,
    pub scratch: Aggregate,
    /// One-sided U test of pretrained OA over scratch OA; `None` for one seed.
    pub p_value: Option<f64>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutcome {
    pub fn pretrained_oa(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.pretrained.oa).collect()
    }

    pub fn scratch_oa(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.scratch.oa).collect()
    }
}

/// Worker slots: the configured count, capped by `HYPERGRID_THREADS` and the
/// number of seeds.
pub fn worker_count(configured: usize, jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(usize::MAX);
    configured.max(1).min(cap).min(jobs.max(1))
}

/// Where a run's logs and checkpoints go.
#[derive(Clone, Debug)]
pub struct Layout {
    pub out: PathBuf,
    pub checkpoints: bool,
}

impl Layout {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            out: config.out.clone(),
            checkpoints: config.checkpoints,
        }
    }

    pub fn log(&self, seed: u64, stage: &str) -> PathBuf {
        self.out
            .join("logs")
            .join(format!("seed{seed}_{stage}.log"))
    }

    pub fn checkpoint(&self, seed: u64, stage: &str) -> Option<PathBuf> {
        self.checkpoints.then(|| {
            self.out
                .join("checkpoints")
                .join(format!("seed{seed}_{stage}.hgw"))
        })
    }

    pub fn create_dirs(&self) -> Result<()> {
        fs::create_dir_all(self.out.join("logs"))?;
        if self.checkpoints {
            fs::create_dir_all(self.out.join("checkpoints"))?;
        }
        Ok(())
    }

    /// Writes the stage log and, if enabled, the checkpoint.
    pub fn record(&self, seed: u64, stage: &str, run: &TrainRun) -> Result<()> {
        let ckpt = self.checkpoint(seed, stage);
        if let Some(path) = &ckpt {
            run.model.save(path)?;
        }
        let mut w = BufWriter::new(File::create(self.log(seed, stage))?);
        let name = ckpt.as_ref().map(|p| p.display().to_string());
        run.write_log(&mut w, name.as_deref())?;
        w.flush()?;
        Ok(())
    }
}

/// Pretraining phase of `seed` on the given pretraining labels.
pub fn pretrain_seed(
    config: &ExperimentConfig,
    data: &Dataset,
    artificial: &LabelMap,
    seed: u64,
) -> Result<TrainRun> {
    let spec = config.model_spec(data.cube.bands(), artificial.classes().len());
    let schedule = config.schedule(Phase::Pretrain)?;
    pretrain_labeled(
        &data.cube,
        artificial,
        spec,
        &schedule,
        &RngState::new(seed).fork(PRETRAIN_STREAM),
    )
    .map_err(|e| e.in_stage(format!("seed {seed}: pretrain")))
}

/// Training pixels of `seed`.
pub fn select_seed(
    config: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
) -> Result<SampleSelection> {
    let mut rng = RngState::new(seed).fork(SELECT_STREAM);
    select_training_pixels(&mut rng, &data.ground_truth, config.n_per_class)
        .map_err(|e| e.in_stage(format!("seed {seed}: sample selection")))
}

/// One fine-tuned arm with its test metrics and full-image map.
#[derive(Clone, Debug)]
pub struct ArmResult {
    pub run: TrainRun,
    pub metrics: MetricSet,
    pub map: LabelMap,
}

/// Fine-tunes one arm of `seed`: a transferred copy of `pretrained`, or a
/// fresh model when `None`. Metrics exclude the training pixels; the map
/// uses class numbers `1..=c` in the order of `selection.classes()`.
pub fn finetune_seed(
    config: &ExperimentConfig,
    data: &Dataset,
    selection: &SampleSelection,
    pretrained: Option<&ModelState>,
    seed: u64,
) -> Result<ArmResult> {
    let rng = RngState::new(seed);
    let classes = selection.class_count();
    let arm = if pretrained.is_some() {
        "pretrained"
    } else {
        "scratch"
    };
    let stage = |what: &str| format!("seed {seed}: {what} {arm}");
    let model = match pretrained {
        Some(m) => m
            .transfer_last_layer(classes, &mut rng.fork(TRANSFER_STREAM))
            .map_err(|e| e.in_stage(stage("transfer")))?,
        None => ModelState::build(
            config.model_spec(data.cube.bands(), classes),
            &mut rng.fork(SCRATCH_STREAM),
        )
        .map_err(|e| e.in_stage(stage("build")))?,
    };
    let schedule = config.schedule(Phase::Finetune)?;
    let run = finetune(
        model,
        &data.cube,
        selection,
        &schedule,
        &rng.fork(FINETUNE_STREAM),
    )
    .map_err(|e| e.in_stage(stage("fine-tune")))?;
    let truth = data.ground_truth.relabeled(&selection.classes());
    let eval = || -> Result<(MetricSet, LabelMap)> {
        let map = classify_full_image(&run.model, &data.cube, run.model.spec().patch_side)?;
        let cm = confusion_matrix(&truth, &map, &selection.pixel_set())?;
        Ok((metrics(&cm)?, map))
    };
    let (metrics, map) = eval().map_err(|e| e.in_stage(stage("evaluate")))?;
    Ok(ArmResult { run, metrics, map })
}

fn run_seed(
    config: &ExperimentConfig,
    data: &Dataset,
    artificial: &LabelMap,
    layout: &Layout,
    seed: u64,
) -> Result<SeedResult> {
    let pre = pretrain_seed(config, data, artificial, seed)?;
    layout.record(seed, "pretrain", &pre)?;
    let selection = select_seed(config, data, seed)?;
    let tuned = finetune_seed(config, data, &selection, Some(&pre.model), seed)?;
    layout.record(seed, "pretrained", &tuned.run)?;
    let scratch = finetune_seed(config, data, &selection, None, seed)?;
    layout.record(seed, "scratch", &scratch.run)?;
    log::info!(
        "seed {seed}: pretrained OA {:.4}, scratch OA {:.4}",
        tuned.metrics.oa,
        scratch.metrics.oa
    );
    Ok(SeedResult {
        seed,
        selection,
        pretrained: tuned.metrics,
        scratch: scratch.metrics,
        pretrained_map: tuned.map,
        scratch_map: scratch.map,
    })
}

/// Runs `jobs` in `workers` threads; results come back in input order and
/// the first error (in input order) wins.
fn run_parallel<T: Send, F>(jobs: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync,
{
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..jobs).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs {
                    break;
                }
                let r = f(i);
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(jobs);
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(r) => out.push(r?),
            None => break,
        }
    }
    if out.len() < jobs {
        return Err(Error::Evaluation("experiment aborted".into()));
    }
    Ok(out)
}

/// Index of the median-OA run: the lower middle after a stable sort, so
/// ties go to the earlier seed.
pub fn median_index(oa: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..oa.len()).collect();
    order.sort_by(|&a, &b| oa[a].total_cmp(&oa[b]));
    order[(oa.len() - 1) / 2]
}

/// Runs every seed of `config` and writes the artifacts under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    config.check_files()?;
    let data = config.load_data().map_err(|e| e.in_stage("load data"))?;
    run_experiment_on(config, &data)
}

/// Like [`run_experiment`] with the dataset already loaded.
pub fn run_experiment_on(config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentOutcome> {
    config.validate()?;
    let artificial = config
        .labels
        .build(&data.ground_truth)
        .map_err(|e| e.in_stage("pretraining labels"))?;
    let schedule = config.schedule(Phase::Pretrain)?;
    let layout = Layout::new(config);
    layout.create_dirs()?;

    let seeds = config.seed_list();
    let workers = worker_count(config.workers, seeds.len());
    log::info!(
        "{}: {} seeds, {} workers, {} pretraining classes, {} iterations per phase",
        config.scenario,
        seeds.len(),
        workers,
        artificial.classes().len(),
        schedule.total_iterations
    );
    let results = run_parallel(seeds.len(), workers, |i| {
        run_seed(config, data, &artificial, &layout, seeds[i])
    })?;

    let arch = config.arch.to_string();
    let mut records = Vec::with_capacity(2 * results.len());
    for r in &results {
        for (pretrained, m) in [(true, &r.pretrained), (false, &r.scratch)] {
            records.push(RunRecord {
                scenario: config.scenario.clone(),
                arch: arch.clone(),
                n_per_class: config.n_per_class,
                seed: r.seed,
                pretrained,
                metrics: m.clone(),
            });
        }
    }
    let pre: Vec<MetricSet> = results.iter().map(|r| r.pretrained.clone()).collect();
    let scr: Vec<MetricSet> = results.iter().map(|r| r.scratch.clone()).collect();
    let pretrained = summarize_runs(&pre).map_err(|e| e.in_stage("aggregate"))?;
    let scratch = summarize_runs(&scr).map_err(|e| e.in_stage("aggregate"))?;
    let p_value = if results.len() >= 2 {
        let a: Vec<f64> = pre.iter().map(|m| m.oa).collect();
        let b: Vec<f64> = scr.iter().map(|m| m.oa).collect();
        Some(
            mann_whitney_u(&a, &b)
                .map_err(|e| e.in_stage("significance test"))?
                .p_value,
        )
    } else {
        None
    };
    let summary = vec![
        SummaryRow {
            scenario: config.scenario.clone(),
            arch: arch.clone(),
            n_per_class: config.n_per_class,
            pretrained: true,
            aggregate: pretrained,
            p_value,
        },
        SummaryRow {
            scenario: config.scenario.clone(),
            arch,
            n_per_class: config.n_per_class,
            pretrained: false,
            aggregate: scratch,
            p_value: None,
        },
    ];

    write_file(&config.out.join("summary.csv"), |w| {
        write_summary_csv(w, &summary)
    })?;
    write_file(&config.out.join("runs.csv"), |w| {
        write_runs_csv(w, &records)
    })?;
    if config.maps {
        let maps = config.out.join("maps");
        fs::create_dir_all(&maps)?;
        let oa = |ms: &[MetricSet]| ms.iter().map(|m| m.oa).collect::<Vec<_>>();
        let r = &results[median_index(&oa(&pre))];
        save_map(&maps, "median_pretrained", &r.pretrained_map)?;
        let r = &results[median_index(&oa(&scr))];
        save_map(&maps, "median_scratch", &r.scratch_map)?;
    }
    Ok(ExperimentOutcome {
        seeds: results,
        pretrained,
        scratch,
        p_value,
        summary,
    })
}

fn save_map(dir: &Path, name: &str, map: &LabelMap) -> Result<()> {
    save_labelmap(map, dir.join(format!("{name}.hsl")))?;
    export_map_image(map, dir.join(format!("{name}.ppm")))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// `w x w` grids.
    GridDensity,
    /// `s` vertical stripes.
    Stripes,
    NPerClass,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" | "grid-density" => Ok(SweepAxis::GridDensity),
            "stripes" => Ok(SweepAxis::Stripes),
            "n" | "n-per-class" => Ok(SweepAxis::NPerClass),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::GridDensity => "grid-density",
            SweepAxis::Stripes => "stripes",
            SweepAxis::NPerClass => "n-per-class",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub arch: String,
    pub n_per_class: usize,
    pub pretrained: Aggregate,
    pub scratch: Aggregate,
    pub p_value: Option<f64>,
}

impl SweepRow {
    /// Value label in table form, e.g. `5x5`.
    pub fn label(&self) -> String {
        match self.axis {
            SweepAxis::GridDensity => format!("{0}x{0}", self.value),
            _ => self.value.to_string(),
        }
    }
}

pub const SWEEP_HEADER: &str = "axis,value,arch,n_per_class,mean_oa_pretrained,std_oa_pretrained,mean_oa_scratch,std_oa_scratch,p_value";

pub fn write_sweep_csv<W: Write>(w: &mut W, rows: &[SweepRow]) -> Result<()> {
    let num = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.axis,
            r.label(),
            r.arch,
            r.n_per_class,
            num(Some(r.pretrained.oa.mean)),
            num(r.pretrained.oa.std),
            num(Some(r.scratch.oa.mean)),
            num(r.scratch.oa.std),
            num(r.p_value)
        )?;
    }
    Ok(())
}

/// Config for one sweep value; its artifacts go to `out/<axis>-<value>`.
pub fn sweep_config(config: &ExperimentConfig, axis: SweepAxis, value: usize) -> ExperimentConfig {
    let mut c = config.clone();
    match axis {
        SweepAxis::GridDensity => {
            c.labels = LabelScheme::Grid {
                rows: value,
                cols: value,
            }
        }
        SweepAxis::Stripes => c.labels = LabelScheme::Stripes { count: value },
        SweepAxis::NPerClass => c.n_per_class = value,
    }
    c.scenario = format!("{}-{axis}-{value}", config.scenario);
    c.out = config.out.join(format!("{axis}-{value}"));
    c
}

/// One experiment per value, in the given order; writes `out/sweep.csv`.
pub fn sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[usize],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if values.contains(&0) {
        return Err(Error::Config("sweep values must be positive".into()));
    }
    config.validate()?;
    config.check_files()?;
    let data = config.load_data().map_err(|e| e.in_stage("load data"))?;
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let c = sweep_config(config, axis, v);
        let outcome =
            run_experiment_on(&c, &data).map_err(|e| e.in_stage(format!("{axis} {v}")))?;
        rows.push(SweepRow {
            axis,
            value: v,
            arch: config.arch.to_string(),
            n_per_class: c.n_per_class,
            pretrained: outcome.pretrained,
            scratch: outcome.scratch,
            p_value: outcome.p_value,
        });
    }
    fs::create_dir_all(&config.out)?;
    write_file(&config.out.join("sweep.csv"), |w| write_sweep_csv(w, &rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests;
