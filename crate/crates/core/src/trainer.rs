//! Pretraining on artificial labels and fine-tuning on expert labels.

use std::io::Write;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdata::{gather_patches, HyperCube, LabelMap};
use crate::labeling::SampleSelection;
use crate::models::{argmax, Arch, ModelSpec, ModelState};
use crate::tensor::{
    softmax_cross_entropy, FlushDenormals, OptimizerConfig, OptimizerState, RngState, Tensor,
};

/// Iterations between loss-trace samples.
pub const TRACE_EVERY: u64 = 100;
/// Divergence: loss above this multiple of the initial loss ...
pub const DIVERGENCE_FACTOR: f64 = 1e3;
/// ... for this many consecutive iterations.
pub const DIVERGENCE_PATIENCE: u64 = 100;

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSchedule {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub total_iterations: u64,
    /// `(start_iteration, lr)`, strictly increasing, first at 0.
    pub lr_plan: Vec<(u64, f64)>,
}

impl TrainingSchedule {
    pub fn new(
        optimizer: OptimizerConfig,
        batch_size: usize,
        total_iterations: u64,
        lr_plan: Vec<(u64, f64)>,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::param("batch size must be positive"));
        }
        if lr_plan.first().map(|b| b.0) != Some(0) {
            return Err(Error::param("learning-rate plan must start at iteration 0"));
        }
        if lr_plan.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::param(
                "learning-rate breakpoints must be strictly increasing",
            ));
        }
        if lr_plan.iter().any(|b| !(b.1.is_finite() && b.1 > 0.0)) {
            return Err(Error::param("learning rates must be positive and finite"));
        }
        Ok(Self {
            optimizer,
            batch_size,
            total_iterations,
            lr_plan,
        })
    }

    /// Step function of the breakpoints.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        self.lr_plan
            .iter()
            .take_while(|b| b.0 <= iteration)
            .last()
            .expect("plan starts at 0")
            .1
    }

    /// Multiplies the iteration total and breakpoints by `factor`, rounding
    /// down to at least 1. Breakpoints that collide keep the later rate.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::param(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        let scale = |n: u64| {
            if n == 0 {
                0
            } else {
                ((n as f64 * factor).floor() as u64).max(1)
            }
        };
        let mut plan: Vec<(u64, f64)> = Vec::with_capacity(self.lr_plan.len());
        for &(start, lr) in &self.lr_plan {
            let start = scale(start);
            match plan.last_mut() {
                Some(last) if last.0 == start => last.1 = lr,
                _ => plan.push((start, lr)),
            }
        }
        Self::new(
            self.optimizer,
            self.batch_size,
            scale(self.total_iterations),
            plan,
        )
    }

    pub fn with_iterations(mut self, total: u64) -> Self {
        self.total_iterations = total;
        self
    }
}

/// Knobs the architectures leave open.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleOptions {
    pub a9_base_lr: f64,
    pub scale: f64,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            a9_base_lr: 0.01,
            scale: 1.0,
        }
    }
}

/// Per-architecture schedule. Pretraining and fine-tuning share it.
pub fn schedule_for(
    arch: Arch,
    _phase: Phase,
    options: ScheduleOptions,
) -> Result<TrainingSchedule> {
    let full = match arch {
        Arch::A9 => {
            let lr0 = options.a9_base_lr;
            TrainingSchedule::new(
                OptimizerConfig::sgd_momentum(0.9),
                10,
                100_000,
                vec![(0, lr0), (33_333, lr0 / 10.0), (66_666, lr0 / 100.0)],
            )?
        }
        Arch::A3 => TrainingSchedule::new(
            OptimizerConfig::adam(0.9, 0.999, 1e-8),
            8,
            300_000,
            vec![(0, 1e-5)],
        )?,
        Arch::A5 => TrainingSchedule::new(
            OptimizerConfig::sgd_plain(),
            50,
            100_000,
            vec![(0, 0.01), (50_000, 0.001)],
        )?,
    };
    full.scaled(options.scale)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelSource {
    Artificial { classes: usize },
    GroundTruth { n_per_class: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub seed: u64,
    pub spec: ModelSpec,
    pub schedule: TrainingSchedule,
    pub source: LabelSource,
    /// Every [`TRACE_EVERY`]-th iteration plus the last one.
    pub loss_trace: Vec<TraceEntry>,
    pub iterations: u64,
    /// Fraction of the last training batch classified correctly.
    pub final_batch_accuracy: Option<f64>,
    pub model: ModelState,
}

impl TrainRun {
    /// `iter <i> loss <v> lr <r>` lines, then `checkpoint <path>` if given.
    pub fn write_log<W: Write>(&self, w: &mut W, checkpoint: Option<&str>) -> Result<()> {
        for e in &self.loss_trace {
            writeln!(w, "iter {} loss {} lr {}", e.iteration, e.loss, e.lr)?;
        }
        if let Some(path) = checkpoint {
            writeln!(w, "checkpoint {path}")?;
        }
        Ok(())
    }
}

/// Trains `model` in place on `(pixel, class index)` pairs.
fn train_loop(
    model: &mut ModelState,
    cube: &HyperCube,
    pool: &[((usize, usize), usize)],
    schedule: &TrainingSchedule,
    rng: &mut RngState,
) -> Result<(Vec<TraceEntry>, Option<f64>)> {
    let _ftz = FlushDenormals::enable();
    let side = model.spec().patch_side;
    let mut optimizer = OptimizerState::new(schedule.optimizer);
    let mut trace = Vec::new();
    let mut initial = None;
    let mut over = 0u64;
    let mut accuracy = None;
    let mut centers = Vec::with_capacity(schedule.batch_size);
    let mut targets = Vec::with_capacity(schedule.batch_size);
    model.set_training(true);
    for it in 0..schedule.total_iterations {
        centers.clear();
        targets.clear();
        for _ in 0..schedule.batch_size {
            let (px, class) = pool[rng.random_range(0..pool.len())];
            centers.push(px);
            targets.push(class);
        }
        let batch = gather_patches(cube, &centers, side)?;
        let (logits, fwd) = model.forward_train(&batch, rng)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &targets)?;
        let loss = loss as f64;
        if !loss.is_finite() {
            model.set_training(false);
            return Err(Error::Divergence {
                iteration: it,
                loss,
            });
        }
        let base = *initial.get_or_insert(loss);
        over = if loss > DIVERGENCE_FACTOR * base {
            over + 1
        } else {
            0
        };
        if over >= DIVERGENCE_PATIENCE {
            model.set_training(false);
            return Err(Error::Divergence {
                iteration: it,
                loss,
            });
        }

        let lr = schedule.lr_at(it);
        let last = it + 1 == schedule.total_iterations;
        if it % TRACE_EVERY == 0 || last {
            trace.push(TraceEntry {
                iteration: it,
                loss,
                lr,
            });
            debug!("iter {it} loss {loss} lr {lr}");
        }
        if last {
            let hits = logits
                .data()
                .chunks(model.spec().classes)
                .zip(&targets)
                .filter(|(row, &t)| argmax(row) == t)
                .count();
            accuracy = Some(hits as f64 / targets.len() as f64);
        }
        let grads = model.backward(&fwd, &grad)?;
        let grads: Vec<&Tensor> = grads.iter().collect();
        optimizer.update(&mut model.params_mut(), &grads, lr)?;
    }
    model.set_training(false);
    Ok((trace, accuracy))
}

/// Builds a model for `spec` and trains it on every pixel of the image,
/// labeled by `artificial`. Labels map to class indices in ascending order.
pub fn pretrain(
    cube: &HyperCube,
    artificial: &LabelMap,
    spec: ModelSpec,
    schedule: &TrainingSchedule,
    rng: &RngState,
) -> Result<TrainRun> {
    if let Some(i) = artificial.labels().iter().position(|&l| l == 0) {
        return Err(Error::Coverage {
            row: i / artificial.width(),
            col: i % artificial.width(),
        });
    }
    pretrain_labeled(cube, artificial, spec, schedule, rng)
}

/// Like [`pretrain`], but background pixels (label 0) are skipped instead of
/// rejected. Used when pretraining labels are derived from ground truth.
pub fn pretrain_labeled(
    cube: &HyperCube,
    labels: &LabelMap,
    spec: ModelSpec,
    schedule: &TrainingSchedule,
    rng: &RngState,
) -> Result<TrainRun> {
    if (labels.height(), labels.width()) != (cube.height(), cube.width()) {
        return Err(Error::dim("pretraining labels do not match the cube"));
    }
    let classes = labels.classes();
    if spec.classes != classes.len() {
        return Err(Error::param(format!(
            "spec has {} classes, labels have {}",
            spec.classes,
            classes.len()
        )));
    }
    let index: std::collections::HashMap<u16, usize> =
        classes.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let pool: Vec<_> = labels
        .labeled_pixels()
        .into_iter()
        .map(|(r, c)| ((r, c), index[&labels.get(r, c)]))
        .collect();
    let mut model = ModelState::build(spec, &mut rng.fork(INIT_STREAM))?;
    let (loss_trace, acc) = train_loop(
        &mut model,
        cube,
        &pool,
        schedule,
        &mut rng.fork(BATCH_STREAM),
    )?;
    Ok(TrainRun {
        seed: rng.seed(),
        spec,
        schedule: schedule.clone(),
        source: LabelSource::Artificial {
            classes: classes.len(),
        },
        loss_trace,
        iterations: schedule.total_iterations,
        final_batch_accuracy: acc,
        model,
    })
}

/// Continues training `model` on the selected pixels only, with fresh
/// optimizer state.
pub fn finetune(
    model: ModelState,
    cube: &HyperCube,
    selection: &SampleSelection,
    schedule: &TrainingSchedule,
    rng: &RngState,
) -> Result<TrainRun> {
    let pool = selection.training_pairs();
    if pool.is_empty() {
        return Err(Error::param("empty training selection"));
    }
    if model.spec().classes != selection.class_count() {
        return Err(Error::param(format!(
            "model has {} classes, selection has {}",
            model.spec().classes,
            selection.class_count()
        )));
    }
    let mut model = model;
    let (loss_trace, acc) = train_loop(
        &mut model,
        cube,
        &pool,
        schedule,
        &mut rng.fork(BATCH_STREAM),
    )?;
    Ok(TrainRun {
        seed: rng.seed(),
        spec: *model.spec(),
        schedule: schedule.clone(),
        source: LabelSource::GroundTruth {
            n_per_class: selection.n_per_class,
        },
        loss_trace,
        iterations: schedule.total_iterations,
        final_batch_accuracy: acc,
        model,
    })
}

/// Inference-mode accuracy on `(pixel, class index)` pairs.
pub fn accuracy_on(
    model: &ModelState,
    cube: &HyperCube,
    pairs: &[((usize, usize), usize)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Evaluation("no pixels to score".into()));
    }
    let mut hits = 0;
    for chunk in pairs.chunks(256) {
        let centers: Vec<_> = chunk.iter().map(|p| p.0).collect();
        let batch = gather_patches(cube, &centers, model.spec().patch_side)?;
        let pred = model.predict_batch(&batch)?;
        hits += pred.iter().zip(chunk).filter(|(&p, q)| p == q.1).count();
    }
    Ok(hits as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a5_breakpoint() {
        let s = schedule_for(Arch::A5, Phase::Pretrain, ScheduleOptions::default()).unwrap();
        assert_eq!(s.lr_at(49_999), 0.01);
        assert_eq!(s.lr_at(50_000), 0.001);
        assert_eq!((s.batch_size, s.total_iterations), (50, 100_000));
        assert_eq!(s.optimizer.kind, crate::tensor::OptimizerKind::SgdPlain);
    }

    #[test]
    fn a3_fixed_rate() {
        let s = schedule_for(Arch::A3, Phase::Finetune, ScheduleOptions::default()).unwrap();
        for it in [0, 1, 150_000, 299_999, 10_000_000] {
            assert_eq!(s.lr_at(it), 1e-5);
        }
        assert_eq!((s.batch_size, s.total_iterations), (8, 300_000));
        let o = s.optimizer;
        assert_eq!((o.beta1, o.beta2, o.epsilon), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn a9_plan_and_scaling() {
        let opts = ScheduleOptions {
            a9_base_lr: 0.1,
            scale: 1.0,
        };
        let s = schedule_for(Arch::A9, Phase::Pretrain, opts).unwrap();
        assert_eq!(s.lr_plan, vec![(0, 0.1), (33_333, 0.01), (66_666, 0.001)]);
        assert_eq!((s.batch_size, s.optimizer.momentum), (10, 0.9));
        let small = schedule_for(
            Arch::A9,
            Phase::Pretrain,
            ScheduleOptions {
                scale: 0.01,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(small.total_iterations, 1000);
        assert_eq!(small.lr_plan, vec![(0, 0.1), (333, 0.01), (666, 0.001)]);
    }

    #[test]
    fn tiny_scale_collisions() {
        let s = schedule_for(
            Arch::A9,
            Phase::Pretrain,
            ScheduleOptions {
                a9_base_lr: 1.0,
                scale: 1e-6,
            },
        )
        .unwrap();
        assert_eq!(s.total_iterations, 1);
        assert_eq!(s.lr_plan, vec![(0, 1.0), (1, 0.01)]);
        assert!(s.scaled(0.0).is_err());
        assert!(s.scaled(f64::NAN).is_err());
    }

    #[test]
    fn schedule_validation() {
        let opt = OptimizerConfig::sgd_plain();
        assert!(TrainingSchedule::new(opt, 0, 10, vec![(0, 0.1)]).is_err());
        assert!(TrainingSchedule::new(opt, 1, 10, vec![(1, 0.1)]).is_err());
        assert!(TrainingSchedule::new(opt, 1, 10, vec![(0, 0.1), (0, 0.2)]).is_err());
        assert!(TrainingSchedule::new(opt, 1, 10, vec![(0, -0.1)]).is_err());
    }

    #[test]
    fn log_format() {
        let spec = ModelSpec::new(Arch::A3, 2, 2);
        let run = TrainRun {
            seed: 1,
            spec,
            schedule: schedule_for(Arch::A3, Phase::Pretrain, ScheduleOptions::default()).unwrap(),
            source: LabelSource::Artificial { classes: 2 },
            loss_trace: vec![TraceEntry {
                iteration: 0,
                loss: 0.5,
                lr: 1e-5,
            }],
            iterations: 1,
            final_batch_accuracy: None,
            model: ModelState::build(spec, &mut RngState::new(0)).unwrap(),
        };
        let mut out = Vec::new();
        run.write_log(&mut out, Some("m.hgw")).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "iter 0 loss 0.5 lr 0.00001\ncheckpoint m.hgw\n"
        );
    }
}
