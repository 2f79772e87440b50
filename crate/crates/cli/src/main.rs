//! `oodkd`: command-line driver for the out-of-domain distillation pipeline.
//!
//! Every subcommand reads the same flat `key = value` config (defaults when
//! `--config` is omitted) with `--set key=value` overrides winning over the
//! file. Artifacts land in the config's output directory (overridable with
//! `OODKD_OUT_DIR`) and all carry the config digest.
//!
//! Exit codes: 0 success, 1 config error, 2 numerical abort, 3 I/O error.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use oodkd_core::anchor::{train_module2, uncertainty_report};
use oodkd_core::config::RunConfig;
use oodkd_core::dfkd::train_module1;
use oodkd_core::diffcore::Mode;
use oodkd_core::domains::{dump_tagged, generate, split_811};
use oodkd_core::error::{Error, Result};
use oodkd_core::harness::{
    ablate_grid, effective_out_dir, evaluate_net, load_nets, make_data, run_baseline,
    run_methods, save_nets, train_teacher, DataBundle, TeacherOut, METHOD_AUGKD,
    METHOD_DFKD_FT, METHOD_WO_KD,
};
use oodkd_core::mixup::train_module3;
use oodkd_core::models::{student_net, teacher_net, AnchorNet, Encoder, Generator, Net};
use oodkd_core::report::{
    aggregate_csv, canonical_report, read_rows, summarize, write_rows, NetDigests, RunStatus,
    SeedRow, TimedRow,
};
use oodkd_core::seeding;

#[derive(Parser)]
#[command(
    name = "oodkd",
    about = "Out-of-domain knowledge distillation at desk scale",
    version
)]
struct Cli {
    /// Config file of `key = value` lines; defaults are used when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key (repeatable); overrides win over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate both synthetic domains and write them with their splits.
    GenData,
    /// Train the teacher on its own domain and checkpoint it.
    TrainTeacher {
        /// Run seed; defaults to the first entry of run.seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stage 1: data-free warmup of the generator/encoder/student triple.
    Dfkd {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stage 2: anchor learning on the student-domain training split.
    Anchor {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Stage 3: scheduled mixup distillation; writes the student and a row.
    Mixup {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one reference baseline: `wo_kd` or `dfkd_ft`.
    Baseline {
        /// Baseline name; defaults to the config's baseline.name.
        name: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full pipeline over every seed in run.seeds; writes rows and the
    /// aggregate table.
    Run {
        /// Also run both baselines per seed for a comparison table.
        #[arg(long)]
        with_baselines: bool,
    },
    /// Scheduler grid study over (a, b); b = 1.0 is always included.
    Ablate {
        /// Comma-separated a values in (0, 1].
        #[arg(long, value_delimiter = ',')]
        a: Vec<f64>,
        /// Comma-separated b values in [0, 1].
        #[arg(long, value_delimiter = ',')]
        b: Vec<f64>,
    },
    /// Recompute the aggregate table from stored report rows.
    Report {
        /// Row file to read; defaults to <out_dir>/rows.jsonl.
        #[arg(long)]
        rows: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut pairs = Vec::new();
    for item in &cli.set {
        let (k, v) = item.split_once('=').ok_or_else(|| {
            Error::invalid(format!("--set expects key=value, got `{item}`"))
        })?;
        pairs.push((k.to_string(), v.to_string()));
    }
    cfg.apply_overrides(&pairs)?;
    Ok(cfg)
}

struct Paths {
    out: PathBuf,
}

impl Paths {
    fn new(cfg: &RunConfig) -> Paths {
        Paths {
            out: effective_out_dir(cfg),
        }
    }
    fn ensure(&self, cfg: &RunConfig) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(self.out.join("config.txt"), cfg.serialize())?;
        Ok(())
    }
    fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }
    fn teacher(&self, seed: u64) -> PathBuf {
        self.out.join(format!("teacher_seed{seed}.ckpt"))
    }
    fn module1(&self, seed: u64) -> PathBuf {
        self.out.join(format!("module1_seed{seed}.ckpt"))
    }
    fn module2(&self, seed: u64) -> PathBuf {
        self.out.join(format!("module2_seed{seed}.ckpt"))
    }
    fn student(&self, seed: u64) -> PathBuf {
        self.out.join(format!("student_seed{seed}.ckpt"))
    }
    fn rows(&self) -> PathBuf {
        self.out.join("rows.jsonl")
    }
    fn stage_rows(&self, method: &str, seed: u64) -> PathBuf {
        self.out.join(format!("rows_{method}_seed{seed}.jsonl"))
    }
    fn canonical(&self) -> PathBuf {
        self.out.join("canonical.jsonl")
    }
    fn aggregate(&self) -> PathBuf {
        self.out.join("aggregate.csv")
    }
    fn ablation(&self) -> PathBuf {
        self.out.join("ablation.csv")
    }
}

fn pick_seed(cfg: &RunConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(cfg.seeds[0])
}

/// Load the teacher checkpoint for this seed if present, else train and save
/// it. Either way the result is identical, bit for bit.
fn ensure_teacher(
    cfg: &RunConfig,
    data: &DataBundle,
    seed: u64,
    paths: &Paths,
) -> Result<TeacherOut> {
    let path = paths.teacher(seed);
    if path.exists() {
        load_teacher(cfg, data, &path)
    } else {
        let teacher = train_teacher(cfg, data, seed)?;
        save_nets(&path, cfg, &[&teacher.net])?;
        Ok(teacher)
    }
}

fn load_teacher(cfg: &RunConfig, data: &DataBundle, path: &Path) -> Result<TeacherOut> {
    let mut net = teacher_net(&cfg.sizes, &mut seeding::stream(0, "cli.load"));
    if let Some(warning) = load_nets(path, cfg, &mut [&mut net])? {
        eprintln!("warning: {warning}");
    }
    net.set_mode(Mode::Eval);
    let in_metrics = evaluate_net(&mut net, &data.t_test, &data.norm)?;
    let out_metrics = evaluate_net(&mut net, &data.s_test, &data.norm)?;
    let digest = net.full_digest();
    Ok(TeacherOut {
        net,
        digest,
        in_metrics,
        out_metrics,
        best_epoch: 0,
        epochs_ran: 0,
    })
}

fn seeded(cfg: &RunConfig, seed: u64) -> RunConfig {
    let mut c = cfg.clone();
    c.teacher.seed = seed;
    c.module1.seed = seed;
    c.module2.seed = seed;
    c.module3.seed = seed;
    c
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let paths = Paths::new(&cfg);
    match cli.cmd {
        Cmd::GenData => gen_data(&cfg, &paths),
        Cmd::TrainTeacher { seed } => cmd_train_teacher(&cfg, &paths, pick_seed(&cfg, seed)),
        Cmd::Dfkd { seed } => cmd_dfkd(&cfg, &paths, pick_seed(&cfg, seed)),
        Cmd::Anchor { seed } => cmd_anchor(&cfg, &paths, pick_seed(&cfg, seed)),
        Cmd::Mixup { seed } => cmd_mixup(&cfg, &paths, pick_seed(&cfg, seed)),
        Cmd::Baseline { name, seed } => {
            let name = name.unwrap_or_else(|| cfg.baseline.name.clone());
            cmd_baseline(&cfg, &paths, &name, pick_seed(&cfg, seed))
        }
        Cmd::Run { with_baselines } => cmd_run(&cfg, &paths, with_baselines),
        Cmd::Ablate { a, b } => cmd_ablate(&cfg, &paths, &a, &b),
        Cmd::Report { rows } => cmd_report(&cfg, &paths, rows),
    }
}

fn gen_data(cfg: &RunConfig, paths: &Paths) -> Result<()> {
    paths.ensure(cfg)?;
    let dir = paths.data_dir();
    std::fs::create_dir_all(&dir)?;
    let digest = cfg.digest();
    for (spec, name) in [(&cfg.data_teacher, "teacher"), (&cfg.data_student, "student")] {
        let full = generate(spec, name)?;
        dump_tagged(&full, spec, &dir.join(format!("{name}.csv")), &digest)?;
        let (train, val, test) = split_811(&full, spec.seed)?;
        for split in [&train, &val, &test] {
            let path = dir.join(format!("{}.csv", split.tag));
            dump_tagged(split, spec, &path, &digest)?;
            println!("wrote {} ({} rows)", path.display(), split.n());
        }
        println!("wrote {} ({} rows)", dir.join(format!("{name}.csv")).display(), full.n());
    }
    Ok(())
}

fn cmd_train_teacher(cfg: &RunConfig, paths: &Paths, seed: u64) -> Result<()> {
    paths.ensure(cfg)?;
    let data = make_data(cfg)?;
    let teacher = train_teacher(cfg, &data, seed)?;
    save_nets(&paths.teacher(seed), cfg, &[&teacher.net])?;
    println!(
        "teacher seed {seed}: best epoch {} of {}, in-domain top1 {:.4}, out-of-domain top1 {:.4}",
        teacher.best_epoch, teacher.epochs_ran, teacher.in_metrics.top1, teacher.out_metrics.top1
    );
    println!("teacher digest {}", teacher.digest);
    println!("wrote {}", paths.teacher(seed).display());
    Ok(())
}

fn cmd_dfkd(cfg: &RunConfig, paths: &Paths, seed: u64) -> Result<()> {
    paths.ensure(cfg)?;
    let data = make_data(cfg)?;
    let teacher = load_teacher(cfg, &data, &paths.teacher(seed))?;
    let run_cfg = seeded(cfg, seed);
    let mut t = teacher.net.deep_clone();
    let result = train_module1(&mut t, &cfg.sizes, &data.norm, &cfg.loss, &run_cfg.module1)?;
    if t.full_digest() != teacher.digest {
        return Err(Error::invalid("teacher changed during warmup"));
    }
    save_nets(
        &paths.module1(seed),
        cfg,
        &[&result.generator, &result.encoder, &result.student],
    )?;
    for (name, best) in [
        ("generator", &result.best_generator),
        ("encoder", &result.best_encoder),
        ("student", &result.best_student),
    ] {
        if let Some(entry) = best {
            println!(
                "warmup {name}: best validation loss {:.6} at epoch {}",
                entry.val, entry.epoch
            );
        }
    }
    println!("wrote {}", paths.module1(seed).display());
    Ok(())
}

fn load_module1(
    cfg: &RunConfig,
    paths: &Paths,
    seed: u64,
) -> Result<(Generator, Encoder, oodkd_core::models::Mlp)> {
    let mut rng = seeding::stream(0, "cli.load");
    let mut g = Generator::new(&cfg.sizes, &mut rng);
    let mut e = Encoder::new(&cfg.sizes, &mut rng);
    let mut s = student_net(&cfg.sizes, &mut rng);
    if let Some(warning) = load_nets(
        &paths.module1(seed),
        cfg,
        &mut [&mut g, &mut e, &mut s],
    )? {
        eprintln!("warning: {warning}");
    }
    for net in [&mut g as &mut dyn Net, &mut e as &mut dyn Net, &mut s as &mut dyn Net] {
        net.set_mode(Mode::Eval);
    }
    Ok((g, e, s))
}

fn cmd_anchor(cfg: &RunConfig, paths: &Paths, seed: u64) -> Result<()> {
    paths.ensure(cfg)?;
    let data = make_data(cfg)?;
    let teacher = load_teacher(cfg, &data, &paths.teacher(seed))?;
    let (mut g, mut e, _s) = load_module1(cfg, paths, seed)?;
    let run_cfg = seeded(cfg, seed);
    let mut t = teacher.net.deep_clone();
    let mut anchor = AnchorNet::new(&cfg.sizes, &mut seeding::stream(seed, "module2.init.anchor"));
    let result = train_module2(
        &mut anchor, &mut g, &mut e, &mut t,
        &data.s_train, &data.s_val, &data.norm, &cfg.loss, &run_cfg.module2,
    )?;
    let (before, after) =
        uncertainty_report(&mut anchor, &mut g, &mut e, &mut t, &data.s_val, &data.norm, &cfg.loss)?;
    save_nets(&paths.module2(seed), cfg, &[&anchor])?;
    println!(
        "anchor seed {seed}: best validation loss {:.6} at epoch {}",
        result.best_val, result.best_epoch
    );
    println!(
        "teacher uncertainty on validation inputs {before:.6} -> on anchors {after:.6}"
    );
    println!("wrote {}", paths.module2(seed).display());
    Ok(())
}

fn cmd_mixup(cfg: &RunConfig, paths: &Paths, seed: u64) -> Result<()> {
    paths.ensure(cfg)?;
    let data = make_data(cfg)?;
    let teacher = load_teacher(cfg, &data, &paths.teacher(seed))?;
    let (mut g, mut e, mut s) = load_module1(cfg, paths, seed)?;
    let mut anchor = AnchorNet::new(&cfg.sizes, &mut seeding::stream(0, "cli.load"));
    if let Some(warning) = load_nets(&paths.module2(seed), cfg, &mut [&mut anchor])? {
        eprintln!("warning: {warning}");
    }
    anchor.set_mode(Mode::Eval);
    let run_cfg = seeded(cfg, seed);
    let mut t = teacher.net.deep_clone();
    let start = std::time::Instant::now();
    let result = train_module3(
        &mut s, &mut t, &mut g, &mut e, &mut anchor,
        &data.s_train, &data.s_val, &data.norm, &cfg.loss, &run_cfg.module3,
    )?;
    let metrics = evaluate_net(&mut s, &data.s_test, &data.norm)?;
    save_nets(&paths.student(seed), cfg, &[&s])?;
    let row = SeedRow {
        config_digest: cfg.digest(),
        method: METHOD_AUGKD.to_string(),
        seed,
        status: RunStatus::Ok,
        teacher_in_top1: Some(teacher.in_metrics.top1),
        teacher_out_top1: Some(teacher.out_metrics.top1),
        metrics: Some(metrics),
        digests: NetDigests {
            teacher: Some(teacher.digest.clone()),
            generator: Some(g.full_digest()),
            encoder: Some(e.full_digest()),
            anchor: Some(anchor.full_digest()),
            student: Some(s.full_digest()),
        },
    };
    let timed = TimedRow {
        row,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    write_rows(&paths.stage_rows(METHOD_AUGKD, seed), &[timed])?;
    println!(
        "student seed {seed}: best validation top1 {:.4} at epoch {}, test top1 {:.4}, top3 {:.4}",
        result.best_val_top1, result.best_epoch, metrics.top1, metrics.top3
    );
    println!("wrote {}", paths.student(seed).display());
    println!("wrote {}", paths.stage_rows(METHOD_AUGKD, seed).display());
    Ok(())
}

fn cmd_baseline(cfg: &RunConfig, paths: &Paths, name: &str, seed: u64) -> Result<()> {
    paths.ensure(cfg)?;
    let timed = match name {
        METHOD_WO_KD => run_baseline(METHOD_WO_KD, cfg, seed)?,
        METHOD_DFKD_FT => {
            let data = make_data(cfg)?;
            let teacher = ensure_teacher(cfg, &data, seed, paths)?;
            run_methods(cfg, seed, &data, &teacher, &[METHOD_DFKD_FT])?
                .into_iter()
                .next()
                .expect("one method requested")
        }
        other => return Err(Error::invalid(format!("unknown baseline name `{other}`"))),
    };
    print_row(&timed);
    write_rows(&paths.stage_rows(name, seed), &[timed])?;
    println!("wrote {}", paths.stage_rows(name, seed).display());
    Ok(())
}

fn print_row(timed: &TimedRow) {
    let row = &timed.row;
    match &row.status {
        RunStatus::Ok => {
            let m = row.metrics.expect("ok rows carry metrics");
            println!(
                "{} seed {}: test top1 {:.4}, top3 {:.4} ({:.1}s)",
                row.method, row.seed, m.top1, m.top3, timed.wall_clock_s
            );
        }
        RunStatus::Failed { stage, message } => {
            println!(
                "{} seed {}: FAILED at {stage}: {message}",
                row.method, row.seed
            );
        }
    }
}

fn cmd_run(cfg: &RunConfig, paths: &Paths, with_baselines: bool) -> Result<()> {
    paths.ensure(cfg)?;
    let data = make_data(cfg)?;
    let methods: &[&str] = if with_baselines {
        &[METHOD_AUGKD, METHOD_WO_KD, METHOD_DFKD_FT]
    } else {
        &[METHOD_AUGKD]
    };
    let mut all = Vec::new();
    for &seed in &cfg.seeds {
        let teacher = ensure_teacher(cfg, &data, seed, paths)?;
        println!(
            "teacher seed {seed}: in-domain top1 {:.4}, out-of-domain top1 {:.4}",
            teacher.in_metrics.top1, teacher.out_metrics.top1
        );
        let rows = run_methods(cfg, seed, &data, &teacher, methods)?;
        for timed in &rows {
            print_row(timed);
        }
        all.extend(rows);
    }
    write_rows(&paths.rows(), &all)?;
    let plain: Vec<SeedRow> = all.iter().map(|t| t.row.clone()).collect();
    std::fs::write(paths.canonical(), canonical_report(&plain))?;
    let summaries = summarize(&plain)?;
    let csv = aggregate_csv(&cfg.digest(), &summaries);
    std::fs::write(paths.aggregate(), &csv)?;
    println!("wrote {}", paths.rows().display());
    println!("wrote {}", paths.canonical().display());
    println!("wrote {}", paths.aggregate().display());
    print!("{csv}");
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, paths: &Paths, a: &[f64], b: &[f64]) -> Result<()> {
    paths.ensure(cfg)?;
    let default_a = [0.2, 0.4, 0.6, 0.8];
    let default_b = [0.0, 0.25, 0.5, 0.75, 1.0];
    let a = if a.is_empty() { &default_a[..] } else { a };
    let b = if b.is_empty() { &default_b[..] } else { b };
    let grid = ablate_grid(cfg, a, b)?;
    let csv = grid.to_csv();
    std::fs::write(paths.ablation(), &csv)?;
    println!("wrote {}", paths.ablation().display());
    print!("{csv}");
    Ok(())
}

fn cmd_report(cfg: &RunConfig, paths: &Paths, rows_path: Option<PathBuf>) -> Result<()> {
    let path = rows_path.unwrap_or_else(|| paths.rows());
    let timed = read_rows(&path)?;
    if timed.is_empty() {
        return Err(Error::invalid(format!(
            "no rows found in {}",
            path.display()
        )));
    }
    let digest = cfg.digest();
    for t in &timed {
        if t.row.config_digest != digest {
            eprintln!(
                "warning: row (method {}, seed {}) was produced under config digest {}, current is {}",
                t.row.method, t.row.seed, t.row.config_digest, digest
            );
        }
    }
    let plain: Vec<SeedRow> = timed.iter().map(|t| t.row.clone()).collect();
    let summaries = summarize(&plain)?;
    let csv = aggregate_csv(&digest, &summaries);
    paths.ensure(cfg)?;
    std::fs::write(paths.aggregate(), &csv)?;
    println!("wrote {}", paths.aggregate().display());
    print!("{csv}");
    Ok(())
}
