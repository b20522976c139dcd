//! Token-budgeted training loops: the adaptive mixture method and the two
//! static-mixture baselines.

mod config;
mod record;
mod workload;

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use thiserror::Error;

pub use config::{Method, RunConfig};
pub use record::{params_digest, BudgetCounter, BudgetedRunRecord, CurvePoint, RunAudit, RunHeader, FORMAT_VERSION};
pub use workload::{LmWorkload, QuadBatch, QuadSampler, QuadraticSuiteConfig, QuadraticWorkload, Workload};

use crate::mixture::{entropy, meta_gradient, n_eff, update_logits, MetaGradInputs, MixtureError, MixtureState};
use crate::model::ModelError;
use crate::optim::{clip_global_norm, lr_at, optimizer_step, OptimError, OptimState, ScheduleConfig};
use crate::rng::{stream, Stream};
use crate::tasks::{proportional_weights, Split, TaskError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("tasks_per_step {tasks_per_step} exceeds the {tasks} tasks in the suite")]
    TooFewTasks { tasks_per_step: usize, tasks: usize },
    #[error("non-finite {phase} loss {value} on task {task} after {tokens_used} tokens")]
    NonFiniteLoss {
        task: String,
        phase: &'static str,
        value: f64,
        tokens_used: usize,
    },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("io: {0}")]
    Io(String),
    #[error("run record line {line}: {message}")]
    Record { line: usize, message: String },
}

/// Optimizer steps after which the schedule length is re-estimated from the
/// measured tokens per step and then frozen.
const SCHEDULE_CALIBRATION_STEPS: usize = 10;

/// `θ − γ Σ p_i g_i`.
pub fn probe_step(theta: &[f64], p: &[f64], grads: &[Vec<f64>], gamma: f64) -> Result<Vec<f64>, TrainError> {
    if p.len() != grads.len() || grads.iter().any(|g| g.len() != theta.len()) {
        return Err(MixtureError::Dimension(format!(
            "theta {}, p {}, gradients {:?}",
            theta.len(),
            p.len(),
            grads.iter().map(Vec::len).collect::<Vec<_>>()
        ))
        .into());
    }
    let mut out = theta.to_vec();
    for (pi, g) in p.iter().zip(grads) {
        for (o, x) in out.iter_mut().zip(g) {
            *o -= gamma * pi * x;
        }
    }
    Ok(out)
}

/// Runs whichever loop `config.method` names.
pub fn run<W: Workload>(workload: &W, config: &RunConfig) -> Result<BudgetedRunRecord, TrainError> {
    match config.method {
        Method::Adapt => run_adapt(workload, config),
        Method::SftUniform | Method::SftProportional => run_sft(workload, config),
    }
}

/// Parameters plus the accumulate / clip / AdamW / schedule path.
struct Stepper {
    theta: Vec<f64>,
    opt: OptimState,
    acc: Vec<f64>,
    micro: usize,
    accumulation: usize,
    schedule: ScheduleConfig,
    frozen: bool,
    budget: usize,
    last_lr: f64,
}

impl Stepper {
    fn new(theta: Vec<f64>, config: &RunConfig, tokens_per_step_guess: f64) -> Self {
        let n = theta.len();
        let total = ((config.budget_tokens as f64 / tokens_per_step_guess.max(1.0)).ceil() as usize)
            .max(config.warmup_steps + 1);
        Self {
            theta,
            opt: OptimState::new(n, config.adamw.clone()),
            acc: vec![0.0; n],
            micro: 0,
            accumulation: config.accumulation_steps(),
            schedule: ScheduleConfig {
                warmup_steps: config.warmup_steps,
                total_steps: total,
                peak_lr: config.peak_lr,
                floor_fraction: config.floor_fraction,
            },
            frozen: false,
            budget: config.budget_tokens,
            last_lr: 0.0,
        }
    }

    fn accumulate(&mut self, weight: f64, g: &[f64]) {
        for (a, x) in self.acc.iter_mut().zip(g) {
            *a += weight * x;
        }
    }

    /// Closes a micro-iteration; steps when the accumulation window is full.
    fn end_micro(&mut self, tokens_used: usize) -> Result<(), TrainError> {
        self.micro += 1;
        if self.micro == self.accumulation {
            self.step(tokens_used)?;
        }
        Ok(())
    }

    /// Applies any partially accumulated gradient.
    fn step(&mut self, tokens_used: usize) -> Result<(), TrainError> {
        if self.micro == 0 {
            return Ok(());
        }
        let scale = 1.0 / self.micro as f64;
        let mean: Vec<f64> = self.acc.iter().map(|a| a * scale).collect();
        let grad = clip_global_norm(&mean, self.opt.config.max_grad_norm);
        let step = (self.opt.step + 1).min(self.schedule.total_steps);
        let lr = lr_at(step, &self.schedule)?;
        optimizer_step(&mut self.theta, &grad, &mut self.opt, lr)?;
        self.last_lr = lr;
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        self.micro = 0;
        if !self.frozen && self.opt.step == SCHEDULE_CALIBRATION_STEPS {
            let per_step = tokens_used as f64 / SCHEDULE_CALIBRATION_STEPS as f64;
            let total = (self.budget as f64 / per_step.max(1.0)).ceil() as usize;
            self.schedule.total_steps = total.max(self.schedule.warmup_steps + 1).max(self.opt.step);
            self.frozen = true;
        }
        Ok(())
    }
}

struct LogCadence {
    interval: usize,
    next: usize,
}

impl LogCadence {
    fn new(interval: usize) -> Self {
        Self {
            interval,
            next: interval,
        }
    }

    fn due(&mut self, tokens: usize) -> bool {
        if tokens >= self.next {
            self.next = (tokens / self.interval + 1) * self.interval;
            true
        } else {
            false
        }
    }
}

fn evaluate<W: Workload>(
    w: &W,
    theta: &[f64],
    batches: &[W::Batch],
) -> Result<Vec<(f64, Vec<f64>, usize)>, TrainError> {
    batches.par_iter().map(|b| w.loss_and_grad(theta, b)).collect()
}

fn check_finite(
    ids: &[String],
    tasks: &[usize],
    losses: impl Iterator<Item = f64>,
    phase: &'static str,
    tokens_used: usize,
) -> Result<(), TrainError> {
    for (j, value) in losses.enumerate() {
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                task: ids[tasks[j]].clone(),
                phase,
                value,
                tokens_used,
            });
        }
    }
    Ok(())
}

fn curve_point<W: Workload>(
    w: &W,
    ids: &[String],
    theta: &[f64],
    p: &[f64],
    tokens: usize,
    lr: f64,
) -> Result<CurvePoint, TrainError> {
    let val_losses: Vec<f64> = (0..ids.len())
        .into_par_iter()
        .map(|i| w.eval_loss(theta, i))
        .collect::<Result<_, _>>()?;
    let all: Vec<usize> = (0..ids.len()).collect();
    check_finite(ids, &all, val_losses.iter().copied(), "validation", tokens)?;
    Ok(CurvePoint {
        tokens,
        mean_val_loss: val_losses.iter().sum::<f64>() / val_losses.len() as f64,
        val_losses,
        p: p.to_vec(),
        entropy: entropy(p),
        n_eff: n_eff(p),
        lr,
    })
}

/// State shared by both loops between iterations.
struct Progress {
    counter: BudgetCounter,
    audit: RunAudit,
    cadence: LogCadence,
    points: Vec<CurvePoint>,
    iterations: usize,
    data_exhausted: bool,
    started: Instant,
}

impl Progress {
    fn new(config: &RunConfig, t: usize, first: CurvePoint) -> Self {
        Self {
            counter: BudgetCounter::new(config.budget_tokens),
            audit: RunAudit {
                task_tokens: vec![0; t],
                task_batches: vec![0; t],
                ..RunAudit::default()
            },
            cadence: LogCadence::new(config.log_interval()),
            points: vec![first],
            iterations: 0,
            data_exhausted: false,
            started: Instant::now(),
        }
    }

    /// Books one iteration: `train` holds `(task, reported tokens, recount)`.
    fn book(&mut self, train: &[(usize, usize, usize)]) {
        let reported: usize = train.iter().map(|t| t.1).sum();
        for &(task, _, recount) in train {
            self.audit.recount_train_tokens += recount;
            self.audit.task_tokens[task] += recount;
            self.audit.task_batches[task] += 1;
        }
        self.counter.add(reported);
        self.audit.last_iteration_tokens = reported;
        self.audit.max_iteration_tokens = self.audit.max_iteration_tokens.max(reported);
        self.iterations += 1;
    }

    #[allow(clippy::too_many_arguments)]
    fn finish<W: Workload>(
        mut self,
        w: &W,
        config: &RunConfig,
        ids: Vec<String>,
        stepper: &Stepper,
        theta: &[f64],
        p: &[f64],
        lr: f64,
    ) -> Result<BudgetedRunRecord, TrainError> {
        let tokens = self.counter.tokens_used();
        if self.points.last().map(|pt| pt.tokens) != Some(tokens) {
            self.points.push(curve_point(w, &ids, theta, p, tokens, lr)?);
        }
        let header = RunHeader {
            format_version: FORMAT_VERSION,
            run_id: format!("{}-seed{}", config.method, config.seed),
            suite: w.name().to_string(),
            task_ids: ids,
            config: config.clone(),
            budget_fraction: None,
            total_tokens: tokens,
            iterations: self.iterations,
            optimizer_steps: stepper.opt.step,
            schedule_total_steps: stepper.schedule.total_steps,
            data_exhausted: self.data_exhausted,
            params_digest: params_digest(theta),
            audit: self.audit,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        Ok(BudgetedRunRecord {
            header,
            points: self.points,
            final_params: theta.to_vec(),
        })
    }

    fn over_epochs<W: Workload>(&mut self, w: &W, sampler: &W::Sampler, config: &RunConfig) -> bool {
        if let Some(max) = config.max_epochs {
            if w.max_train_epochs(sampler) > max {
                self.data_exhausted = true;
            }
        }
        self.data_exhausted
    }
}

/// The adaptive loop: per meta-iteration, probe step on the mixed train
/// gradient, meta-gradient step on the logits, then the real update.
pub fn run_adapt<W: Workload>(w: &W, config: &RunConfig) -> Result<BudgetedRunRecord, TrainError> {
    if config.method != Method::Adapt {
        return Err(TrainError::InvalidConfig(format!(
            "run_adapt called with method {}",
            config.method
        )));
    }
    let t = w.num_tasks();
    config.validate_for(t)?;
    let ids = w.task_ids();
    let k = config.tasks_per_step;
    let (bs, vbs) = (config.batch_size(), config.val_batch_size());
    let hyper = &config.meta;

    let mut sampler = w.sampler(config.seed, config.sampling);
    let mut subset_rng = stream(config.seed, Stream::SubsetSelection);
    let mut mixture = MixtureState::uniform(t);
    let guess = (config.accumulation_steps() * k * bs) as f64 * w.mean_example_tokens();
    let mut stepper = Stepper::new(w.init_params(), config, guess);
    let first = curve_point(w, &ids, &stepper.theta, mixture.p(), 0, 0.0)?;
    let mut prog = Progress::new(config, t, first);

    while !prog.counter.exhausted() {
        let subset: Vec<usize> = if k == t {
            (0..t).collect()
        } else {
            let mut s = rand::seq::index::sample(&mut subset_rng, t, k).into_vec();
            s.sort_unstable();
            s
        };
        let p_s = mixture.restricted(&subset);
        let used = prog.counter.tokens_used();

        let batches = subset
            .iter()
            .map(|&i| w.sample(&mut sampler, i, Split::Train, bs))
            .collect::<Result<Vec<_>, _>>()?;
        let train = evaluate(w, &stepper.theta, &batches)?;
        check_finite(&ids, &subset, train.iter().map(|r| r.0), "train", used)?;
        let grads: Vec<Vec<f64>> = train.iter().map(|r| r.1.clone()).collect();
        let theta_probe = probe_step(&stepper.theta, &p_s, &grads, hyper.probe_lr)?;

        let val_batches = subset
            .iter()
            .map(|&i| w.sample(&mut sampler, i, Split::Val, vbs))
            .collect::<Result<Vec<_>, _>>()?;
        prog.audit.val_tokens += val_batches.iter().map(|b| w.batch_tokens(b)).sum::<usize>();
        let val = evaluate(w, &theta_probe, &val_batches)?;
        check_finite(&ids, &subset, val.iter().map(|r| r.0), "probe validation", used)?;
        let val_losses: Vec<f64> = val.iter().map(|r| r.0).collect();
        let val_grads: Vec<Vec<f64>> = val.into_iter().map(|r| r.1).collect();

        let meta = meta_gradient(
            &MetaGradInputs {
                p: &p_s,
                train_grads: &grads,
                val_grads: &val_grads,
                val_losses: &val_losses,
            },
            hyper,
        )?;
        mixture = update_logits(&mixture, &meta, Some(&subset), hyper);

        let booked: Vec<(usize, usize, usize)> = subset
            .iter()
            .zip(&train)
            .zip(&batches)
            .map(|((&i, r), b)| (i, r.2, w.batch_tokens(b)))
            .collect();
        prog.book(&booked);

        if config.adopt_probe {
            stepper.theta = theta_probe;
            stepper.last_lr = hyper.probe_lr;
        } else {
            for (pi, g) in p_s.iter().zip(&grads) {
                stepper.accumulate(*pi, g);
            }
            stepper.end_micro(prog.counter.tokens_used())?;
        }

        let stop = prog.counter.exhausted() || prog.over_epochs(w, &sampler, config);
        if stop {
            stepper.step(prog.counter.tokens_used())?;
            break;
        }
        if prog.cadence.due(prog.counter.tokens_used()) {
            let pt = curve_point(
                w,
                &ids,
                &stepper.theta,
                mixture.p(),
                prog.counter.tokens_used(),
                stepper.last_lr,
            )?;
            prog.points.push(pt);
        }
    }
    let theta = stepper.theta.clone();
    let lr = stepper.last_lr;
    prog.finish(w, config, ids, &stepper, &theta, mixture.p(), lr)
}

/// Static-mixture baseline: each micro-iteration draws one task from `q`.
pub fn run_sft<W: Workload>(w: &W, config: &RunConfig) -> Result<BudgetedRunRecord, TrainError> {
    let t = w.num_tasks();
    let q = match config.method {
        Method::SftUniform => vec![1.0 / t as f64; t],
        Method::SftProportional => proportional_weights(&w.train_sizes().iter().map(|&n| n as f64).collect::<Vec<_>>()),
        Method::Adapt => return Err(TrainError::InvalidConfig("run_sft called with method adapt".into())),
    };
    config.validate_for(t)?;
    let ids = w.task_ids();
    let bs = config.batch_size();
    let dist = WeightedIndex::new(&q).map_err(|e| TrainError::InvalidConfig(format!("task weights: {e}")))?;

    let mut sampler = w.sampler(config.seed, config.sampling);
    let mut task_rng = stream(config.seed, Stream::TaskSampling);
    let guess = (config.accumulation_steps() * bs) as f64 * w.mean_example_tokens();
    let mut stepper = Stepper::new(w.init_params(), config, guess);
    let first = curve_point(w, &ids, &stepper.theta, &q, 0, 0.0)?;
    let mut prog = Progress::new(config, t, first);

    while !prog.counter.exhausted() {
        let i = dist.sample(&mut task_rng);
        let batch = w.sample(&mut sampler, i, Split::Train, bs)?;
        let (loss, grad, tokens) = w.loss_and_grad(&stepper.theta, &batch)?;
        check_finite(&ids, &[i], std::iter::once(loss), "train", prog.counter.tokens_used())?;
        prog.book(&[(i, tokens, w.batch_tokens(&batch))]);
        stepper.accumulate(1.0, &grad);
        stepper.end_micro(prog.counter.tokens_used())?;

        let stop = prog.counter.exhausted() || prog.over_epochs(w, &sampler, config);
        if stop {
            stepper.step(prog.counter.tokens_used())?;
            break;
        }
        if prog.cadence.due(prog.counter.tokens_used()) {
            let pt = curve_point(w, &ids, &stepper.theta, &q, prog.counter.tokens_used(), stepper.last_lr)?;
            prog.points.push(pt);
        }
    }
    let theta = stepper.theta.clone();
    let lr = stepper.last_lr;
    prog.finish(w, config, ids, &stepper, &theta, &q, lr)
}
