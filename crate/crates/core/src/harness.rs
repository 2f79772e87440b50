//! Experiment orchestration: teacher training, the full three-stage pipeline,
//! the two reference baselines, seeds, and the a-b ablation grid.
//!
//! Within one (config, seed) run everything is sequential and derived from
//! explicit seed streams, so reruns are bitwise reproducible. Grid cells and
//! seeds are independent: cells may execute in parallel (capped by the
//! `OODKD_THREADS` environment variable) without changing any result.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::anchor::train_module2;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dfkd::{train_module1, Module1Result};
use crate::diffcore::{backward, Adam, AdamParams};
use crate::domains::{generate, split_811, DomainDataset};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, top_k_accuracy};
use crate::mixup::{batch_bounds, train_module3};
use crate::diffcore::Mode;
use crate::models::{student_net, teacher_net, AnchorNet, Encoder, Generator, Mlp, Net, NormSpec, StateEntry};
use crate::report::{Aggregate, Metrics, NetDigests, RunStatus, SeedRow, TimedRow};
use crate::seeding;

use rand::seq::SliceRandom;

/// The method names a report row can carry.
pub const METHOD_AUGKD: &str = "augkd";
pub const METHOD_WO_KD: &str = "wo_kd";
pub const METHOD_DFKD_FT: &str = "dfkd_ft";

/// Environment variable overriding `run.out_dir`.
pub const ENV_OUT_DIR: &str = "OODKD_OUT_DIR";
/// Environment variable capping grid-cell parallelism.
pub const ENV_THREADS: &str = "OODKD_THREADS";

/// Output directory for a run: `OODKD_OUT_DIR` if set, else the config value.
pub fn effective_out_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var(ENV_OUT_DIR) {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(&cfg.out_dir),
    }
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Both domains, split 8/1/1, plus the (identity) input normalization.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub t_train: DomainDataset,
    pub t_val: DomainDataset,
    pub t_test: DomainDataset,
    pub s_train: DomainDataset,
    pub s_val: DomainDataset,
    pub s_test: DomainDataset,
    pub norm: NormSpec,
}

/// Generate and split both domains. Splits depend only on the data specs, so
/// every run seed sees the same train/val/test partition.
pub fn make_data(cfg: &RunConfig) -> Result<DataBundle> {
    let dt = generate(&cfg.data_teacher, "teacher")?;
    let ds = generate(&cfg.data_student, "student")?;
    let (t_train, t_val, t_test) = split_811(&dt, cfg.data_teacher.seed)?;
    let (s_train, s_val, s_test) = split_811(&ds, cfg.data_student.seed)?;
    Ok(DataBundle {
        t_train,
        t_val,
        t_test,
        s_train,
        s_val,
        s_test,
        norm: NormSpec::identity(cfg.sizes.d),
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Top-k accuracies of a classifier on a dataset (evaluation mode). Top-5 is
/// reported only when the task has at least six classes.
pub fn evaluate_net(net: &mut Mlp, ds: &DomainDataset, norm: &NormSpec) -> Result<Metrics> {
    let prior = net.mode();
    net.set_mode(Mode::Eval);
    let x = norm.normalize(&ds.full_tensor())?;
    let logits = net.forward(&x)?;
    net.set_mode(prior);
    let classes = logits.shape()[1];
    let top1 = top_k_accuracy(&logits, &ds.labels, 1)?;
    let top3 = top_k_accuracy(&logits, &ds.labels, 3.min(classes))?;
    let top5 = if classes >= 6 {
        Some(top_k_accuracy(&logits, &ds.labels, 5)?)
    } else {
        None
    };
    Ok(Metrics { top1, top3, top5 })
}

// ---------------------------------------------------------------------------
// Supervised training (teacher and both baselines)
// ---------------------------------------------------------------------------

/// Knobs for plain cross-entropy training with best-validation selection.
struct SupervisedSpec<'a> {
    /// Seed-stream namespace, e.g. `"teacher"` or `"baseline.wo_kd"`.
    tag: &'a str,
    epochs: usize,
    batch_b: usize,
    lr: f64,
    weight_decay: f64,
    /// Stop after this many epochs without validation improvement.
    patience: Option<usize>,
    seed: u64,
}

/// Outcome of a supervised run: which epoch's snapshot was kept and the
/// validation trace.
pub struct SupervisedOut {
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub epochs_ran: usize,
    pub val_history: Vec<f64>,
}

fn train_supervised(
    net: &mut Mlp,
    train: &DomainDataset,
    val: &DomainDataset,
    norm: &NormSpec,
    spec: &SupervisedSpec,
) -> Result<SupervisedOut> {
    if spec.epochs == 0 {
        return Ok(SupervisedOut {
            best_epoch: 0,
            best_val_top1: f64::NAN,
            epochs_ran: 0,
            val_history: Vec::new(),
        });
    }
    if train.n() == 0 || val.n() == 0 {
        return Err(Error::invalid("supervised training needs non-empty splits"));
    }
    net.set_trainable(true);
    let mut opt = Adam::new(
        net.params(),
        spec.lr,
        AdamParams {
            weight_decay: spec.weight_decay,
            ..AdamParams::default()
        },
    );
    let mut rng = seeding::stream(spec.seed, &format!("{}.shuffle", spec.tag));
    let mut best: Option<(usize, f64, Vec<StateEntry>)> = None;
    let mut val_history = Vec::new();
    let mut epochs_ran = 0;
    for epoch in 1..=spec.epochs {
        epochs_ran = epoch;
        let mut idx: Vec<usize> = (0..train.n()).collect();
        idx.shuffle(&mut rng);
        for (lo, hi) in batch_bounds(idx.len(), spec.batch_b) {
            let chunk = &idx[lo..hi];
            let x = norm.normalize(&train.rows_tensor(chunk))?;
            let y = train.labels_for(chunk);
            net.set_mode(Mode::Train);
            let loss = cross_entropy(&net.forward(&x)?, &y)?;
            let v = loss.item();
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "{} training diverged to {v} at epoch {epoch}",
                    spec.tag
                )));
            }
            opt.step(&backward(&loss)?)?;
        }
        let val_top1 = evaluate_net(net, val, norm)?.top1;
        val_history.push(val_top1);
        let improved = best.as_ref().map_or(true, |(_, b, _)| val_top1 > *b);
        if improved {
            best = Some((epoch, val_top1, net.state_entries()));
        } else if let Some(patience) = spec.patience {
            let stale = epoch - best.as_ref().map_or(0, |(e, _, _)| *e);
            if stale >= patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_top1, state) = best.expect("at least one epoch ran");
    net.load_state(&state)?;
    net.set_trainable(false);
    net.set_mode(Mode::Eval);
    Ok(SupervisedOut {
        best_epoch,
        best_val_top1,
        epochs_ran,
        val_history,
    })
}

/// A trained, frozen teacher with its accuracy on both domains.
pub struct TeacherOut {
    pub net: Mlp,
    pub digest: String,
    /// Accuracy on the teacher-domain test split.
    pub in_metrics: Metrics,
    /// Accuracy on the student-domain test split.
    pub out_metrics: Metrics,
    pub best_epoch: usize,
    pub epochs_ran: usize,
}

/// Supervised teacher training on its own domain with early stopping on
/// held-out accuracy. The returned network is in evaluation mode and its
/// digest is the frozen reference for the rest of the pipeline.
pub fn train_teacher(cfg: &RunConfig, data: &DataBundle, seed: u64) -> Result<TeacherOut> {
    cfg.teacher.validate()?;
    let mut net = teacher_net(&cfg.sizes, &mut seeding::stream(seed, "teacher.init"));
    let out = train_supervised(
        &mut net,
        &data.t_train,
        &data.t_val,
        &data.norm,
        &SupervisedSpec {
            tag: "teacher",
            epochs: cfg.teacher.epochs,
            batch_b: cfg.teacher.batch_b,
            lr: cfg.teacher.lr,
            weight_decay: cfg.teacher.weight_decay,
            patience: Some(cfg.teacher.patience),
            seed,
        },
    )?;
    if out.epochs_ran == 0 {
        return Err(Error::invalid("teacher.epochs must be >= 1"));
    }
    let in_metrics = evaluate_net(&mut net, &data.t_test, &data.norm)?;
    let out_metrics = evaluate_net(&mut net, &data.s_test, &data.norm)?;
    let digest = net.full_digest();
    Ok(TeacherOut {
        net,
        digest,
        in_metrics,
        out_metrics,
        best_epoch: out.best_epoch,
        epochs_ran: out.epochs_ran,
    })
}

// ---------------------------------------------------------------------------
// Method runs
// ---------------------------------------------------------------------------

fn seeded_cfg(cfg: &RunConfig, seed: u64) -> RunConfig {
    let mut c = cfg.clone();
    c.teacher.seed = seed;
    c.module1.seed = seed;
    c.module2.seed = seed;
    c.module3.seed = seed;
    c
}

fn base_row(cfg: &RunConfig, method: &str, seed: u64, teacher: Option<&TeacherOut>) -> SeedRow {
    SeedRow {
        config_digest: cfg.digest(),
        method: method.to_string(),
        seed,
        status: RunStatus::Ok,
        teacher_in_top1: teacher.map(|t| t.in_metrics.top1),
        teacher_out_top1: teacher.map(|t| t.out_metrics.top1),
        metrics: None,
        digests: NetDigests {
            teacher: teacher.map(|t| t.digest.clone()),
            ..NetDigests::default()
        },
    }
}

fn fail(mut row: SeedRow, stage: &str, err: &Error) -> SeedRow {
    row.status = RunStatus::Failed {
        stage: stage.to_string(),
        message: err.to_string(),
    };
    row.metrics = None;
    row
}

/// Stage-1 warmup shared by AuG-KD and the fine-tuned distillation baseline.
fn run_module1(cfg: &RunConfig, teacher: &TeacherOut) -> Result<Module1Result> {
    let mut t = teacher.net.deep_clone();
    t.set_mode(Mode::Eval);
    train_module1(&mut t, &cfg.sizes, &NormSpec::identity(cfg.sizes.d), &cfg.loss, &cfg.module1)
}

/// The full pipeline for one seed: warmup, anchor learning, scheduled mixup
/// distillation, then evaluation of the best student on the student-domain
/// test split. A stage abort marks the row failed with that stage's name.
pub fn augkd_row(
    cfg: &RunConfig,
    seed: u64,
    data: &DataBundle,
    teacher: &TeacherOut,
    m1: &Result<Module1Result>,
) -> SeedRow {
    let mut row = base_row(cfg, METHOD_AUGKD, seed, Some(teacher));
    let cfg = seeded_cfg(cfg, seed);
    let m1 = match m1 {
        Ok(m1) => m1,
        Err(e) => return fail(row, "module1", e),
    };
    row.digests.generator = Some(m1.generator.full_digest());
    row.digests.encoder = Some(m1.encoder.full_digest());

    let mut t = teacher.net.deep_clone();
    let mut g = m1.generator.deep_clone();
    let mut e = m1.encoder.deep_clone();
    let mut s = m1.student.deep_clone();
    let mut anchor = AnchorNet::new(&cfg.sizes, &mut seeding::stream(seed, "module2.init.anchor"));

    if let Err(err) = train_module2(
        &mut anchor, &mut g, &mut e, &mut t,
        &data.s_train, &data.s_val, &data.norm, &cfg.loss, &cfg.module2,
    ) {
        return fail(row, "module2", &err);
    }
    row.digests.anchor = Some(anchor.full_digest());

    if let Err(err) = train_module3(
        &mut s, &mut t, &mut g, &mut e, &mut anchor,
        &data.s_train, &data.s_val, &data.norm, &cfg.loss, &cfg.module3,
    ) {
        return fail(row, "module3", &err);
    }
    row.digests.student = Some(s.full_digest());

    match evaluate_net(&mut s, &data.s_test, &data.norm) {
        Ok(metrics) => {
            row.metrics = Some(metrics);
            row
        }
        Err(err) => fail(row, "evaluate", &err),
    }
}

/// Cross-entropy-only baseline. It never sees the teacher: no teacher
/// argument exists, so teacher forward passes are structurally impossible.
pub fn wo_kd_row(cfg: &RunConfig, seed: u64, data: &DataBundle) -> SeedRow {
    let mut row = base_row(cfg, METHOD_WO_KD, seed, None);
    let cfg = seeded_cfg(cfg, seed);
    let mut s = student_net(&cfg.sizes, &mut seeding::stream(seed, "baseline.wo_kd.init"));
    let spec = SupervisedSpec {
        tag: "baseline.wo_kd",
        epochs: cfg.baseline.epochs,
        batch_b: cfg.baseline.batch_b,
        lr: cfg.baseline.lr,
        weight_decay: cfg.baseline.weight_decay,
        patience: None,
        seed,
    };
    if let Err(err) = train_supervised(&mut s, &data.s_train, &data.s_val, &data.norm, &spec) {
        return fail(row, "train", &err);
    }
    row.digests.student = Some(s.full_digest());
    match evaluate_net(&mut s, &data.s_test, &data.norm) {
        Ok(metrics) => {
            row.metrics = Some(metrics);
            row
        }
        Err(err) => fail(row, "evaluate", &err),
    }
}

/// Warmup distillation followed by supervised fine-tuning on the student
/// domain. With zero fine-tune epochs this evaluates the warmup student as
/// is.
pub fn dfkd_ft_row(
    cfg: &RunConfig,
    seed: u64,
    data: &DataBundle,
    teacher: &TeacherOut,
    m1: &Result<Module1Result>,
) -> SeedRow {
    let mut row = base_row(cfg, METHOD_DFKD_FT, seed, Some(teacher));
    let cfg = seeded_cfg(cfg, seed);
    let m1 = match m1 {
        Ok(m1) => m1,
        Err(e) => return fail(row, "module1", e),
    };
    row.digests.generator = Some(m1.generator.full_digest());
    row.digests.encoder = Some(m1.encoder.full_digest());
    let mut s = m1.student.deep_clone();
    let spec = SupervisedSpec {
        tag: "baseline.dfkd_ft",
        epochs: cfg.baseline.epochs,
        batch_b: cfg.baseline.batch_b,
        lr: cfg.baseline.lr,
        weight_decay: cfg.baseline.weight_decay,
        patience: None,
        seed,
    };
    if let Err(err) = train_supervised(&mut s, &data.s_train, &data.s_val, &data.norm, &spec) {
        return fail(row, "fine_tune", &err);
    }
    row.digests.student = Some(s.full_digest());
    match evaluate_net(&mut s, &data.s_test, &data.norm) {
        Ok(metrics) => {
            row.metrics = Some(metrics);
            row
        }
        Err(err) => fail(row, "evaluate", &err),
    }
}

/// Run the requested methods for one seed against a prepared teacher,
/// computing the shared warmup stage once. Method names must be among
/// [`METHOD_AUGKD`], [`METHOD_WO_KD`], [`METHOD_DFKD_FT`].
pub fn run_methods(
    cfg: &RunConfig,
    seed: u64,
    data: &DataBundle,
    teacher: &TeacherOut,
    methods: &[&str],
) -> Result<Vec<TimedRow>> {
    for m in methods {
        if ![METHOD_AUGKD, METHOD_WO_KD, METHOD_DFKD_FT].contains(m) {
            return Err(Error::invalid(format!("unknown baseline name `{m}`")));
        }
    }
    let seeded = seeded_cfg(cfg, seed);
    let needs_m1 = methods
        .iter()
        .any(|m| *m == METHOD_AUGKD || *m == METHOD_DFKD_FT);
    let (m1, m1_secs) = if needs_m1 {
        let start = Instant::now();
        let m1 = run_module1(&seeded, teacher);
        (Some(m1), start.elapsed().as_secs_f64())
    } else {
        (None, 0.0)
    };
    let mut rows = Vec::new();
    for method in methods {
        let start = Instant::now();
        let (row, shared) = match *method {
            METHOD_AUGKD => (
                augkd_row(cfg, seed, data, teacher, m1.as_ref().expect("computed above")),
                m1_secs,
            ),
            METHOD_WO_KD => (wo_kd_row(cfg, seed, data), 0.0),
            METHOD_DFKD_FT => (
                dfkd_ft_row(cfg, seed, data, teacher, m1.as_ref().expect("computed above")),
                m1_secs,
            ),
            _ => unreachable!("validated above"),
        };
        rows.push(TimedRow {
            row,
            wall_clock_s: start.elapsed().as_secs_f64() + shared,
        });
    }
    Ok(rows)
}

/// Convenience wrapper: generate the data, train the teacher, then run the
/// full pipeline for one seed. Teacher-training failures become a failed row.
pub fn run_augkd(cfg: &RunConfig, seed: u64) -> Result<TimedRow> {
    let data = make_data(cfg)?;
    let start = Instant::now();
    let teacher = match train_teacher(cfg, &data, seed) {
        Ok(t) => t,
        Err(err) => {
            let row = fail(
                base_row(cfg, METHOD_AUGKD, seed, None),
                "teacher",
                &err,
            );
            return Ok(TimedRow {
                row,
                wall_clock_s: start.elapsed().as_secs_f64(),
            });
        }
    };
    let rows = run_methods(cfg, seed, &data, &teacher, &[METHOD_AUGKD])?;
    let mut row = rows.into_iter().next().expect("one method requested");
    row.wall_clock_s += start.elapsed().as_secs_f64() - row.wall_clock_s;
    Ok(row)
}

/// Convenience wrapper for one baseline under one seed. `wo_kd` never trains
/// or touches a teacher; `dfkd_ft` prepares one first.
pub fn run_baseline(name: &str, cfg: &RunConfig, seed: u64) -> Result<TimedRow> {
    match name {
        METHOD_WO_KD => {
            let data = make_data(cfg)?;
            let start = Instant::now();
            let row = wo_kd_row(cfg, seed, &data);
            Ok(TimedRow {
                row,
                wall_clock_s: start.elapsed().as_secs_f64(),
            })
        }
        METHOD_DFKD_FT => {
            let data = make_data(cfg)?;
            let teacher = train_teacher(cfg, &data, seed)?;
            let rows = run_methods(cfg, seed, &data, &teacher, &[METHOD_DFKD_FT])?;
            Ok(rows.into_iter().next().expect("one method requested"))
        }
        other => Err(Error::invalid(format!("unknown baseline name `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

/// One (a, b) cell: the per-seed student test top-1 and its aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub a: f64,
    pub b: f64,
    pub per_seed: Vec<(u64, f64)>,
    pub top1: Aggregate,
}

/// The full ablation result, serializable as a fixed-order table.
#[derive(Clone, Debug, PartialEq)]
pub struct GridOut {
    pub config_digest: String,
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
    pub cells: Vec<GridCell>,
}

impl GridOut {
    /// Long-format table: one line per (a, b) cell, a-major, plus per-seed
    /// columns appended in seed order. The b = 1.0 rows are the no-mixup
    /// reference column.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_digest = {}\n", self.config_digest);
        let seeds: Vec<String> = self
            .cells
            .first()
            .map(|c| c.per_seed.iter().map(|(s, _)| format!("seed_{s}")).collect())
            .unwrap_or_default();
        out.push_str("a,b,n,top1_mean,top1_std");
        for s in &seeds {
            out.push(',');
            out.push_str(s);
        }
        out.push('\n');
        for cell in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}",
                cell.a,
                cell.b,
                cell.top1.n,
                cell.top1.mean,
                cell.top1.std.map(|s| format!("{s}")).unwrap_or_default()
            ));
            for (_, v) in &cell.per_seed {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Snapshot of the frozen stage-1/stage-2 networks as plain data, so grid
/// cells can rebuild them inside worker threads.
struct SeedSnapshot {
    seed: u64,
    teacher: Vec<StateEntry>,
    generator: Vec<StateEntry>,
    encoder: Vec<StateEntry>,
    anchor: Vec<StateEntry>,
    student: Vec<StateEntry>,
}

fn sorted_dedup(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).expect("validated finite"));
    v.dedup();
    v
}

/// Run the scheduler ablation: stages 1 and 2 are trained once per seed, then
/// stage 3 runs for every (a, b) cell. `b = 1.0` is appended when absent so
/// the no-mixup reference column is always present. Cell execution order is
/// unobservable: each cell depends only on (config, seed, a, b).
pub fn ablate_grid(cfg: &RunConfig, a_values: &[f64], b_values: &[f64]) -> Result<GridOut> {
    if a_values.is_empty() || b_values.is_empty() {
        return Err(Error::invalid("ablation grid needs at least one a and one b"));
    }
    for &a in a_values {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::invalid(format!("grid a value {a} outside (0, 1]")));
        }
    }
    for &b in b_values {
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::invalid(format!("grid b value {b} outside [0, 1]")));
        }
    }
    let a_values = sorted_dedup(a_values);
    let mut b_values = sorted_dedup(b_values);
    if *b_values.last().expect("non-empty") != 1.0 {
        b_values.push(1.0);
    }

    let data = make_data(cfg)?;
    let mut snapshots = Vec::new();
    for &seed in &cfg.seeds {
        let seeded = seeded_cfg(cfg, seed);
        let teacher = train_teacher(&seeded, &data, seed)?;
        let m1 = run_module1(&seeded, &teacher)?;
        let mut t = teacher.net.deep_clone();
        let mut g = m1.generator.deep_clone();
        let mut e = m1.encoder.deep_clone();
        let mut anchor =
            AnchorNet::new(&seeded.sizes, &mut seeding::stream(seed, "module2.init.anchor"));
        train_module2(
            &mut anchor, &mut g, &mut e, &mut t,
            &data.s_train, &data.s_val, &data.norm, &seeded.loss, &seeded.module2,
        )?;
        snapshots.push(SeedSnapshot {
            seed,
            teacher: teacher.net.state_entries(),
            generator: g.state_entries(),
            encoder: e.state_entries(),
            anchor: anchor.state_entries(),
            student: m1.student.state_entries(),
        });
    }

    let threads = std::env::var(ENV_THREADS)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let mut pairs = Vec::new();
    for &a in &a_values {
        for &b in &b_values {
            pairs.push((a, b));
        }
    }
    let cfg_ref = &cfg;
    let data_ref = &data;
    let snap_ref = &snapshots;
    let cell_results: Vec<Result<GridCell>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(a, b)| grid_cell(cfg_ref, data_ref, snap_ref, a, b))
            .collect()
    });
    let mut cells = Vec::new();
    for cell in cell_results {
        cells.push(cell?);
    }
    Ok(GridOut {
        config_digest: cfg.digest(),
        a_values,
        b_values,
        cells,
    })
}

fn grid_cell(
    cfg: &RunConfig,
    data: &DataBundle,
    snapshots: &[SeedSnapshot],
    a: f64,
    b: f64,
) -> Result<GridCell> {
    let mut per_seed = Vec::new();
    for snap in snapshots {
        let mut seeded = seeded_cfg(cfg, snap.seed);
        seeded.module3.a = a;
        seeded.module3.b = b;
        let mut rng = seeding::stream(0, "grid.rebuild");
        let mut t = teacher_net(&seeded.sizes, &mut rng);
        let mut g = Generator::new(&seeded.sizes, &mut rng);
        let mut e = Encoder::new(&seeded.sizes, &mut rng);
        let mut anchor = AnchorNet::new(&seeded.sizes, &mut rng);
        let mut s = student_net(&seeded.sizes, &mut rng);
        t.load_state(&snap.teacher)?;
        g.load_state(&snap.generator)?;
        e.load_state(&snap.encoder)?;
        anchor.load_state(&snap.anchor)?;
        s.load_state(&snap.student)?;
        for net in [
            &mut t as &mut dyn Net,
            &mut g as &mut dyn Net,
            &mut e as &mut dyn Net,
            &mut anchor as &mut dyn Net,
            &mut s as &mut dyn Net,
        ] {
            net.set_mode(Mode::Eval);
        }
        train_module3(
            &mut s, &mut t, &mut g, &mut e, &mut anchor,
            &data.s_train, &data.s_val, &data.norm, &seeded.loss, &seeded.module3,
        )?;
        let top1 = evaluate_net(&mut s, &data.s_test, &data.norm)?.top1;
        per_seed.push((snap.seed, top1));
    }
    let values: Vec<f64> = per_seed.iter().map(|&(_, v)| v).collect();
    Ok(GridCell {
        a,
        b,
        per_seed,
        top1: crate::report::aggregate(&values)?,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint convenience
// ---------------------------------------------------------------------------

/// Save the given networks into one checkpoint stamped with the config digest.
pub fn save_nets(path: &Path, cfg: &RunConfig, nets: &[&dyn Net]) -> Result<()> {
    let mut ck = Checkpoint::new(&cfg.digest());
    for net in nets {
        ck.push_net(*net);
    }
    ck.save(path)
}

/// Load networks (matched by label) from a checkpoint. Returns a warning
/// string when the checkpoint was produced under a different config digest;
/// the load itself still proceeds. All-or-nothing across the whole slice:
/// every section is validated against its target's layout before any network
/// is written, so a mismatch leaves all of them untouched.
pub fn load_nets(path: &Path, cfg: &RunConfig, nets: &mut [&mut dyn Net]) -> Result<Option<String>> {
    let ck = Checkpoint::load(path)?;
    let warn = ck.digest_mismatch(&cfg.digest()).map(|found| {
        format!(
            "checkpoint {} was produced under a different config (digest {found}, current {})",
            path.display(),
            cfg.digest()
        )
    });
    for net in nets.iter() {
        let section = ck.section(net.label()).ok_or_else(|| {
            Error::invalid(format!("checkpoint has no section {:?}", net.label()))
        })?;
        net.check_state(&section.entries)?;
    }
    for net in nets.iter_mut() {
        ck.load_net(*net)?;
    }
    Ok(warn)
}

/// Test-split top-1 of a classifier, used by staged CLI flows for printing.
pub fn quick_top1(net: &mut Mlp, ds: &DomainDataset, norm: &NormSpec) -> Result<f64> {
    Ok(evaluate_net(net, ds, norm)?.top1)
}
