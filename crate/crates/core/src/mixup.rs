//! Stage 3: scheduled mixup distillation.
//!
//! The student trains on its own domain while a curriculum gradually hands
//! control from teacher-domain anchors to real student-domain data. A linear
//! stage factor `f` rises from `b` to 1 by epoch `a * total_epochs`; each
//! minibatch is paired with a mixup batch
//!
//! `x_m = (1 - f) * G((1 - f) * z' + f * z) + f * x`
//!
//! built from the frozen generator, encoder, and anchor (`z = E(x, y)`,
//! `z'` the anchored latent). Real and mixup rows are concatenated and the
//! student distills from the teacher at high temperature with a ground-truth
//! cross-entropy term alongside.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{backward, ops, Adam, AdamParams, Mode, Tensor};
use crate::domains::DomainDataset;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, kl_divergence, top_k_accuracy, LossConfig};
use crate::models::{AnchorNet, Encoder, Generator, Mlp, Net, NormSpec};
use crate::seeding;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SchedulerSpec {
    /// Fraction of the run after which the curriculum is fully on real data.
    pub a: f64,
    /// Starting stage factor.
    pub b: f64,
    pub total_epochs: usize,
}

impl SchedulerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::invalid(format!("a must lie in (0, 1], got {}", self.a)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid(format!("b must lie in [0, 1], got {}", self.b)));
        }
        if self.total_epochs == 0 {
            return Err(Error::invalid("total_epochs must be positive"));
        }
        Ok(())
    }
}

/// Linear curriculum `F(x) = (1-b)/(a*E) * min(max(x,0), a*E) + b`, with the
/// saturated region returning exactly 1 and the whole range clamped to
/// `[b, 1]` so the endpoint identities hold in floating point.
pub fn stage_factor(epoch_index: usize, spec: &SchedulerSpec) -> f64 {
    let x = epoch_index as f64;
    let cut = spec.a * spec.total_epochs as f64;
    if x >= cut {
        return 1.0;
    }
    ((1.0 - spec.b) / cut * x + spec.b).clamp(spec.b, 1.0)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Module3Config {
    pub epochs: usize,
    pub batch_b: usize,
    pub lr_s: f64,
    pub weight_decay: f64,
    /// Scheduler knobs; `total_epochs` is tied to `epochs`.
    pub a: f64,
    pub b: f64,
    /// Drop the ground-truth cross-entropy term and distill on logits alone.
    pub kl_only: bool,
    /// Interpolate the latent as `f*z' + (1-f)*z` instead of the default
    /// `(1-f)*z' + f*z`.
    pub swap_interpolation: bool,
    pub seed: u64,
}

impl Default for Module3Config {
    fn default() -> Self {
        Module3Config {
            epochs: 60,
            batch_b: 64,
            lr_s: 1e-3,
            weight_decay: 1e-4,
            // Benchmark-specific curriculum assignment, selected by the
            // pre-registered (a, b) grid study on the default synthetic spec
            // (see the ablate subcommand); the grid is flat enough that most
            // interior assignments tie within one point.
            a: 0.6,
            b: 0.5,
            kl_only: false,
            swap_interpolation: false,
            seed: 0,
        }
    }
}

impl Module3Config {
    pub fn scheduler(&self) -> SchedulerSpec {
        SchedulerSpec {
            a: self.a,
            b: self.b,
            total_epochs: self.epochs.max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheduler().validate()?;
        if self.batch_b < 2 {
            return Err(Error::invalid(format!(
                "batch_b must be at least 2, got {}",
                self.batch_b
            )));
        }
        if !(self.lr_s > 0.0) {
            return Err(Error::invalid(format!("lr_s must be positive, got {}", self.lr_s)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

/// Mixup companion for a real batch at stage factor `f`. Endpoints
/// short-circuit: `f = 1` returns the real rows untouched (bitwise), `f = 0`
/// returns the pure anchor reconstruction `G(z')`.
pub fn make_mixup_batch(
    g: &mut Generator,
    e: &mut Encoder,
    anchor: &mut AnchorNet,
    x: &Tensor,
    y: &[usize],
    f: f64,
    swap_interpolation: bool,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::invalid(format!("stage factor must lie in [0, 1], got {f}")));
    }
    if f == 1.0 {
        return Ok(x.clone());
    }
    let z = e.forward(x, y)?;
    let (z_prime, _) = anchor.forward(&z, y)?;
    let latent = if swap_interpolation {
        ops::add(&ops::scale(&z_prime, f), &ops::scale(&z, 1.0 - f))?
    } else {
        ops::add(&ops::scale(&z_prime, 1.0 - f), &ops::scale(&z, f))?
    };
    let generated = g.forward(&latent)?;
    if f == 0.0 {
        return Ok(generated);
    }
    ops::add(&ops::scale(&generated, 1.0 - f), &ops::scale(x, f))
}

/// Distillation step objective on an (already normalized) concatenated
/// batch: `KL(T || S, tau_kd) [+ CE(S, y)]`.
pub fn module3_step_loss(
    s: &mut Mlp,
    t: &mut Mlp,
    xt_cat: &Tensor,
    y_cat: &[usize],
    loss_cfg: &LossConfig,
    kl_only: bool,
) -> Result<Tensor> {
    let t_logits = t.forward(xt_cat)?;
    let s_logits = s.forward(xt_cat)?;
    let mut total = kl_divergence(&t_logits, &s_logits, loss_cfg.tau_kd)?;
    if !kl_only {
        total = ops::add(&total, &cross_entropy(&s_logits, y_cat)?)?;
    }
    let v = total.item();
    if !v.is_finite() {
        return Err(Error::numeric(format!("distillation loss diverged to {v}")));
    }
    Ok(total)
}

/// The exact RNG the training loop uses for epoch shuffles; exposed so
/// reference reimplementations can replay identical batch orders.
pub fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    seeding::stream(seed, "module3.shuffle")
}

/// Contiguous batch bounds over `n` items; a trailing singleton is folded
/// into the previous batch so every batch has at least 2 rows.
pub fn batch_bounds(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + batch).min(n);
        if n - end == 1 {
            end = n;
        }
        out.push((start, end));
        start = end;
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Module3Record {
    pub epoch: usize,
    pub f: f64,
    pub step_losses: Vec<f64>,
    pub val_top1: f64,
    pub val_top3: f64,
}

#[derive(Debug)]
pub struct Module3Result {
    pub history: Vec<Module3Record>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
}

/// Distill the teacher into the student over the student-domain training
/// split with scheduled mixup. The best validation-top-1 snapshot (ties to
/// the earliest epoch) is loaded back into `s` on return.
#[allow(clippy::too_many_arguments)]
pub fn train_module3(
    s: &mut Mlp,
    t: &mut Mlp,
    g: &mut Generator,
    e: &mut Encoder,
    anchor: &mut AnchorNet,
    train: &DomainDataset,
    val: &DomainDataset,
    norm: &NormSpec,
    loss_cfg: &LossConfig,
    cfg: &Module3Config,
) -> Result<Module3Result> {
    cfg.validate()?;
    if train.n() == 0 {
        return Err(Error::invalid("distillation training split is empty"));
    }
    if cfg.epochs == 0 {
        return Ok(Module3Result {
            history: Vec::new(),
            best_epoch: 0,
            best_val_top1: f64::NAN,
        });
    }
    let frozen = [
        t.full_digest(),
        g.full_digest(),
        e.full_digest(),
        anchor.full_digest(),
    ];
    for net in [
        t as &mut dyn Net,
        g as &mut dyn Net,
        e as &mut dyn Net,
        anchor as &mut dyn Net,
    ] {
        net.set_mode(Mode::Eval);
        net.set_trainable(false);
    }
    let scheduler = cfg.scheduler();
    let mut opt = Adam::new(
        s.params(),
        cfg.lr_s,
        AdamParams {
            weight_decay: cfg.weight_decay,
            ..AdamParams::default()
        },
    );
    let mut rng = shuffle_rng(cfg.seed);
    let val_x = norm.normalize(&val.full_tensor())?;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_top1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_state = Vec::new();

    for epoch in 1..=cfg.epochs {
        let f = stage_factor(epoch - 1, &scheduler);
        let mut idx: Vec<usize> = (0..train.n()).collect();
        idx.shuffle(&mut rng);
        let mut step_losses = Vec::new();
        for (lo, hi) in batch_bounds(idx.len(), cfg.batch_b) {
            let chunk = &idx[lo..hi];
            let x = train.rows_tensor(chunk);
            let y = train.labels_for(chunk);
            let x_m = make_mixup_batch(g, e, anchor, &x, &y, f, cfg.swap_interpolation)?;
            let x_cat = ops::concat_rows(&x, &x_m)?;
            let mut y_cat = y.clone();
            y_cat.extend_from_slice(&y);
            let xt_cat = norm.normalize(&x_cat)?;

            s.set_mode(Mode::Train);
            s.set_trainable(true);
            let loss = module3_step_loss(s, t, &xt_cat, &y_cat, loss_cfg, cfg.kl_only)?;
            step_losses.push(loss.item());
            opt.step(&backward(&loss)?)?;
            s.set_trainable(false);
        }

        s.set_mode(Mode::Eval);
        let val_logits = s.forward(&val_x)?;
        let val_top1 = top_k_accuracy(&val_logits, &val.labels, 1)?;
        let val_top3 = top_k_accuracy(&val_logits, &val.labels, 3.min(val_logits.shape()[1]))?;
        if val_top1 > best_top1 {
            best_top1 = val_top1;
            best_epoch = epoch;
            best_state = s.state_entries();
        }
        history.push(Module3Record {
            epoch,
            f,
            step_losses,
            val_top1,
            val_top3,
        });
    }

    s.load_state(&best_state)?;
    s.set_mode(Mode::Eval);
    if [
        t.full_digest(),
        g.full_digest(),
        e.full_digest(),
        anchor.full_digest(),
    ] != frozen
    {
        return Err(Error::invalid(
            "internal invariant broken: a frozen network changed during distillation",
        ));
    }
    Ok(Module3Result {
        history,
        best_epoch,
        best_val_top1: best_top1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{generate, DomainSpec};
    use crate::models::{student_net, teacher_net, ModelSizes};

    fn sizes() -> ModelSizes {
        ModelSizes {
            d: 6,
            k: 3,
            nz: 4,
            h_teacher: 8,
            l_teacher: 1,
            h_student: 6,
            l_student: 1,
            h_generator: 8,
            l_generator: 1,
            h_encoder: 8,
            d_embed: 3,
            mask_gain: 3.0,
            data_range: 8.0,
        }
    }

    struct Rig {
        s: Mlp,
        t: Mlp,
        g: Generator,
        e: Encoder,
        anchor: AnchorNet,
        norm: NormSpec,
        train: DomainDataset,
        val: DomainDataset,
    }

    fn rig(seed: u64) -> Rig {
        let sz = sizes();
        let mut s = student_net(&sz, &mut seeding::stream(seed, "s"));
        let mut t = teacher_net(&sz, &mut seeding::stream(seed, "t"));
        let mut g = Generator::new(&sz, &mut seeding::stream(seed, "g"));
        let mut e = Encoder::new(&sz, &mut seeding::stream(seed, "e"));
        let mut anchor = AnchorNet::new(&sz, &mut seeding::stream(seed, "a"));
        for net in [
            &mut s as &mut dyn Net,
            &mut t as &mut dyn Net,
            &mut g as &mut dyn Net,
            &mut e as &mut dyn Net,
            &mut anchor as &mut dyn Net,
        ] {
            net.set_mode(Mode::Eval);
        }
        let ds = generate(
            &DomainSpec {
                k: 3,
                d_inv: 3,
                d_spu: 3,
                rho: -0.5,
                sigma: 1.0,
                n_per_class: 10,
                seed,
            },
            "student",
        )
        .unwrap();
        let train_idx: Vec<usize> = (0..ds.n()).filter(|i| i % 3 != 0).collect();
        let val_idx: Vec<usize> = (0..ds.n()).filter(|i| i % 3 == 0).collect();
        let carve = |idx: &[usize], tag: &str| DomainDataset {
            tag: tag.into(),
            dim: ds.dim,
            inputs: idx
                .iter()
                .flat_map(|&i| ds.inputs[i * ds.dim..(i + 1) * ds.dim].iter().copied())
                .collect(),
            labels: idx.iter().map(|&i| ds.labels[i]).collect(),
        };
        Rig {
            s,
            t,
            g,
            e,
            anchor,
            norm: NormSpec::identity(sz.d),
            train: carve(&train_idx, "train"),
            val: carve(&val_idx, "val"),
        }
    }

    #[test]
    fn scheduler_endpoints_and_interior() {
        let spec = SchedulerSpec {
            a: 0.6,
            b: 0.2,
            total_epochs: 100,
        };
        assert_eq!(stage_factor(0, &spec), 0.2);
        assert_eq!(stage_factor(60, &spec), 1.0);
        assert_eq!(stage_factor(99, &spec), 1.0);
        assert!((stage_factor(30, &spec) - 0.6).abs() < 1e-12);
        for a in [0.05, 0.33, 1.0] {
            let s = SchedulerSpec { a, b: 0.7, total_epochs: 17 };
            assert_eq!(stage_factor(0, &s), 0.7, "F(0) must be b at a={a}");
        }
    }

    #[test]
    fn scheduler_is_monotone_and_bounded() {
        let spec = SchedulerSpec {
            a: 0.37,
            b: 0.15,
            total_epochs: 53,
        };
        let mut prev = f64::NEG_INFINITY;
        for epoch in 0..53 {
            let f = stage_factor(epoch, &spec);
            assert!(f >= prev, "decreased at {epoch}");
            assert!((spec.b..=1.0).contains(&f));
            prev = f;
        }
        let flat = SchedulerSpec { a: 0.5, b: 1.0, total_epochs: 10 };
        for epoch in 0..10 {
            assert_eq!(stage_factor(epoch, &flat), 1.0);
        }
    }

    #[test]
    fn scheduler_validation() {
        assert!(SchedulerSpec { a: 0.0, b: 0.5, total_epochs: 10 }.validate().is_err());
        assert!(SchedulerSpec { a: 1.1, b: 0.5, total_epochs: 10 }.validate().is_err());
        assert!(SchedulerSpec { a: 0.5, b: -0.1, total_epochs: 10 }.validate().is_err());
        assert!(SchedulerSpec { a: 0.5, b: 0.5, total_epochs: 0 }.validate().is_err());
        assert!(SchedulerSpec { a: 1.0, b: 0.0, total_epochs: 1 }.validate().is_ok());
    }

    #[test]
    fn mixup_endpoints() {
        let mut r = rig(1);
        let idx: Vec<usize> = (0..6).collect();
        let x = r.train.rows_tensor(&idx);
        let y = r.train.labels_for(&idx);
        // f = 1: bitwise the real rows.
        let at_one = make_mixup_batch(&mut r.g, &mut r.e, &mut r.anchor, &x, &y, 1.0, false).unwrap();
        assert_eq!(at_one.to_vec(), x.to_vec());
        // f = 0: the pure anchor reconstruction.
        let at_zero = make_mixup_batch(&mut r.g, &mut r.e, &mut r.anchor, &x, &y, 0.0, false).unwrap();
        let z = r.e.forward(&x, &y).unwrap();
        let (zp, _) = r.anchor.forward(&z, &y).unwrap();
        let expect = r.g.forward(&zp).unwrap();
        assert_eq!(at_zero.to_vec(), expect.to_vec());
        assert!(make_mixup_batch(&mut r.g, &mut r.e, &mut r.anchor, &x, &y, 1.2, false).is_err());
    }

    #[test]
    fn mixup_interior_matches_formula() {
        let mut r = rig(2);
        let idx: Vec<usize> = (0..5).collect();
        let x = r.train.rows_tensor(&idx);
        let y = r.train.labels_for(&idx);
        let f = 0.35;
        let got = make_mixup_batch(&mut r.g, &mut r.e, &mut r.anchor, &x, &y, f, false).unwrap();
        let z = r.e.forward(&x, &y).unwrap();
        let (zp, _) = r.anchor.forward(&z, &y).unwrap();
        let latent = ops::add(&ops::scale(&zp, 1.0 - f), &ops::scale(&z, f)).unwrap();
        let gen = r.g.forward(&latent).unwrap();
        let expect = ops::add(&ops::scale(&gen, 1.0 - f), &ops::scale(&x, f)).unwrap();
        for (a, b) in got.to_vec().iter().zip(expect.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Swapped orientation flips the latent weights.
        let swapped = make_mixup_batch(&mut r.g, &mut r.e, &mut r.anchor, &x, &y, f, true).unwrap();
        let latent_sw = ops::add(&ops::scale(&zp, f), &ops::scale(&z, 1.0 - f)).unwrap();
        let gen_sw = r.g.forward(&latent_sw).unwrap();
        let expect_sw = ops::add(&ops::scale(&gen_sw, 1.0 - f), &ops::scale(&x, f)).unwrap();
        for (a, b) in swapped.to_vec().iter().zip(expect_sw.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_loss_floors_at_cross_entropy_for_identical_nets() {
        let mut r = rig(3);
        let mut twin = r.t.deep_clone();
        twin.set_mode(Mode::Eval);
        let idx: Vec<usize> = (0..6).collect();
        let x = r.train.rows_tensor(&idx);
        let y = r.train.labels_for(&idx);
        let xt = r.norm.normalize(&x).unwrap();
        let cfg = LossConfig::default();
        let total = module3_step_loss(&mut twin, &mut r.t, &xt, &y, &cfg, false)
            .unwrap()
            .item();
        let ce = cross_entropy(&r.t.forward(&xt).unwrap(), &y).unwrap().item();
        assert!((total - ce).abs() < 1e-12, "KL term should vanish");
        let kl_only = module3_step_loss(&mut twin, &mut r.t, &xt, &y, &cfg, true)
            .unwrap()
            .item();
        assert!(kl_only.abs() < 1e-12);
    }

    #[test]
    fn batch_bounds_fold_trailing_singleton() {
        assert_eq!(batch_bounds(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(batch_bounds(9, 4), vec![(0, 4), (4, 9)]);
        assert_eq!(batch_bounds(4, 8), vec![(0, 4)]);
        assert_eq!(batch_bounds(0, 8), Vec::<(usize, usize)>::new());
    }

    fn small_cfg(seed: u64) -> Module3Config {
        Module3Config {
            epochs: 3,
            batch_b: 8,
            seed,
            ..Module3Config::default()
        }
    }

    #[test]
    fn epochs_zero_returns_student_unchanged() {
        let mut r = rig(4);
        let before = r.s.full_digest();
        let out = train_module3(
            &mut r.s, &mut r.t, &mut r.g, &mut r.e, &mut r.anchor,
            &r.train.clone(), &r.val.clone(), &r.norm,
            &LossConfig::default(),
            &Module3Config { epochs: 0, ..small_cfg(1) },
        )
        .unwrap();
        assert_eq!(r.s.full_digest(), before);
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_freezes_everything_but_the_student() {
        let mut r = rig(5);
        let frozen = [
            r.t.full_digest(),
            r.g.full_digest(),
            r.e.full_digest(),
            r.anchor.full_digest(),
        ];
        let student_before = r.s.param_digest();
        let first = train_module3(
            &mut r.s, &mut r.t, &mut r.g, &mut r.e, &mut r.anchor,
            &r.train.clone(), &r.val.clone(), &r.norm,
            &LossConfig::default(), &small_cfg(9),
        )
        .unwrap();
        assert_ne!(r.s.param_digest(), student_before, "student never moved");
        assert_eq!(
            [
                r.t.full_digest(),
                r.g.full_digest(),
                r.e.full_digest(),
                r.anchor.full_digest()
            ],
            frozen
        );
        let s_digest = r.s.full_digest();

        let mut r2 = rig(5);
        let second = train_module3(
            &mut r2.s, &mut r2.t, &mut r2.g, &mut r2.e, &mut r2.anchor,
            &r2.train.clone(), &r2.val.clone(), &r2.norm,
            &LossConfig::default(), &small_cfg(9),
        )
        .unwrap();
        assert_eq!(r2.s.full_digest(), s_digest);
        assert_eq!(first.history, second.history);
    }

    #[test]
    fn history_bookkeeping() {
        let mut r = rig(6);
        let cfg = Module3Config { epochs: 4, ..small_cfg(11) };
        let out = train_module3(
            &mut r.s, &mut r.t, &mut r.g, &mut r.e, &mut r.anchor,
            &r.train.clone(), &r.val.clone(), &r.norm,
            &LossConfig::default(), &cfg,
        )
        .unwrap();
        assert_eq!(out.history.len(), 4);
        let sched = cfg.scheduler();
        let mut best = f64::NEG_INFINITY;
        let mut best_epoch = 0;
        for (i, rec) in out.history.iter().enumerate() {
            assert_eq!(rec.epoch, i + 1);
            assert_eq!(rec.f, stage_factor(i, &sched));
            assert_eq!(rec.step_losses.len(), batch_bounds(r.train.n(), cfg.batch_b).len());
            if rec.val_top1 > best {
                best = rec.val_top1;
                best_epoch = rec.epoch;
            }
        }
        assert_eq!(out.best_val_top1, best);
        assert_eq!(out.best_epoch, best_epoch, "ties must go to the earliest epoch");
    }

    #[test]
    fn b_one_reproduces_duplicated_real_batches() {
        let mut r = rig(7);
        let ref_student = r.s.deep_clone();
        let cfg = Module3Config {
            epochs: 3,
            batch_b: 8,
            b: 1.0,
            seed: 21,
            ..Module3Config::default()
        };
        let loss_cfg = LossConfig::default();
        let out = train_module3(
            &mut r.s, &mut r.t, &mut r.g, &mut r.e, &mut r.anchor,
            &r.train.clone(), &r.val.clone(), &r.norm, &loss_cfg, &cfg,
        )
        .unwrap();
        let trained: Vec<f64> = out.history.iter().flat_map(|h| h.step_losses.clone()).collect();

        // Reference: the same loop with every batch literally duplicated.
        let mut s = ref_student;
        let mut opt = Adam::new(
            s.params(),
            cfg.lr_s,
            AdamParams {
                weight_decay: cfg.weight_decay,
                ..AdamParams::default()
            },
        );
        let mut rng = shuffle_rng(cfg.seed);
        let mut reference = Vec::new();
        for _epoch in 1..=cfg.epochs {
            let mut idx: Vec<usize> = (0..r.train.n()).collect();
            idx.shuffle(&mut rng);
            for (lo, hi) in batch_bounds(idx.len(), cfg.batch_b) {
                let chunk = &idx[lo..hi];
                let x = r.train.rows_tensor(chunk);
                let y = r.train.labels_for(chunk);
                let x_cat = ops::concat_rows(&x, &x).unwrap();
                let mut y_cat = y.clone();
                y_cat.extend_from_slice(&y);
                let xt = r.norm.normalize(&x_cat).unwrap();
                s.set_mode(Mode::Train);
                s.set_trainable(true);
                let loss = module3_step_loss(&mut s, &mut r.t, &xt, &y_cat, &loss_cfg, false).unwrap();
                reference.push(loss.item());
                opt.step(&backward(&loss).unwrap()).unwrap();
                s.set_trainable(false);
            }
        }
        assert_eq!(trained, reference, "loss trajectories must agree bitwise");
    }

    #[test]
    fn config_validation() {
        assert!(Module3Config { a: 0.0, ..Module3Config::default() }.validate().is_err());
        assert!(Module3Config { b: 1.5, ..Module3Config::default() }.validate().is_err());
        assert!(Module3Config { batch_b: 1, ..Module3Config::default() }.validate().is_err());
        assert!(Module3Config { lr_s: 0.0, ..Module3Config::default() }.validate().is_err());
        assert!(Module3Config::default().validate().is_ok());
    }
}
