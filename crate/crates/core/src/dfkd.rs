//! Stage 1: data-free adversarial warmup.
//!
//! With no access to any training data, a generator learns to synthesize
//! inputs that the frozen teacher classifies confidently (low entropy,
//! self-consistent labels, realistic batch-norm statistics) while the student
//! still disagrees with the teacher on them — the `-KL` term makes the
//! generator adversarial. Interleaved with generator updates, an encoder
//! learns to invert the generator back into latent space and the student
//! warms up by matching teacher logits on the generated stream.
//!
//! Each epoch takes one generator step and then `inner_steps` paired
//! encoder/student steps that reuse the epoch's latent batch (fresh draws per
//! inner step are available behind `fresh_inner_z`). All three networks are
//! validated on a latent batch `z_val` drawn once up front and never
//! resampled; the returned networks are the per-network best snapshots under
//! their own validation losses.

use serde::{Deserialize, Serialize};

use crate::diffcore::{backward, ops, Adam, AdamParams, Mode, Tensor};
use crate::error::{Error, Result};
use crate::losses::{
    activation_map_loss, argmax_rows, cross_entropy, entropy, kl_divergence, latent_prior_kl,
    mse, LossConfig,
};
use crate::models::{student_net, Encoder, Generator, Mlp, ModelSizes, Net, NormSpec, StateEntry};
use crate::seeding;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Module1Config {
    pub epochs: usize,
    pub batch_b: usize,
    pub inner_steps: usize,
    pub lr_g: f64,
    pub lr_e: f64,
    pub lr_s: f64,
    /// Draw a fresh latent batch for every inner step instead of reusing the
    /// epoch's batch.
    pub fresh_inner_z: bool,
    pub seed: u64,
}

impl Default for Module1Config {
    fn default() -> Self {
        Module1Config {
            epochs: 120,
            batch_b: 64,
            inner_steps: 5,
            lr_g: 1e-3,
            lr_e: 1e-4,
            lr_s: 1e-3,
            fresh_inner_z: false,
            seed: 0,
        }
    }
}

impl Module1Config {
    pub fn validate(&self) -> Result<()> {
        if self.batch_b < 2 {
            return Err(Error::invalid(format!(
                "batch_b must be at least 2 for batch statistics, got {}",
                self.batch_b
            )));
        }
        if self.inner_steps == 0 {
            return Err(Error::invalid("inner_steps must be at least 1"));
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_e", self.lr_e), ("lr_s", self.lr_s)] {
            if !(lr > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }
}

/// Validation losses measured on `z_val` after each epoch.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Module1Record {
    pub epoch: usize,
    pub val_generator: f64,
    pub val_encoder: f64,
    pub val_student: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct BestEntry {
    pub epoch: usize,
    pub val: f64,
}

pub struct Module1Result {
    pub generator: Generator,
    pub encoder: Encoder,
    pub student: Mlp,
    pub history: Vec<Module1Record>,
    pub best_generator: Option<BestEntry>,
    pub best_encoder: Option<BestEntry>,
    pub best_student: Option<BestEntry>,
}

fn ensure_finite(name: &str, loss: &Tensor) -> Result<()> {
    let v = loss.item();
    if !v.is_finite() {
        return Err(Error::numeric(format!("{name} diverged to {v}")));
    }
    Ok(())
}

/// Generator objective on a latent batch: synthesize inputs the teacher
/// labels confidently and consistently with its own batch-norm statistics,
/// while the student still disagrees.
///
/// `-KL(S || T) + CE(T, argmax T) + alpha_g * H(T) + AM(T)`
///
/// Callers arrange modes: teacher in [`Mode::Capture`] (the moment-matching
/// term needs its batch statistics), student frozen.
pub fn generator_loss(
    g: &mut Generator,
    s: &mut Mlp,
    t: &mut Mlp,
    z0: &Tensor,
    norm: &NormSpec,
    cfg: &LossConfig,
) -> Result<Tensor> {
    let x = g.forward(z0)?;
    let xt = norm.normalize(&x)?;
    let (t_logits, caps) = t.forward_captured(&xt)?;
    let labels = argmax_rows(&t_logits);
    let s_logits = s.forward(&xt)?;
    let kl = kl_divergence(&s_logits, &t_logits, 1.0)?;
    let ce = cross_entropy(&t_logits, &labels)?;
    let am = activation_map_loss(&caps)?;
    let mut total = ops::add(&ops::sub(&ce, &kl)?, &am)?;
    if cfg.alpha_g != 0.0 {
        total = ops::add(&total, &ops::scale(&entropy(&t_logits)?, cfg.alpha_g))?;
    }
    ensure_finite("generator loss", &total)?;
    Ok(total)
}

/// Encoder objective: invert the (frozen) generator on a latent batch,
/// regularized toward the standard-normal prior. The encoder reads the raw
/// generated inputs and the teacher's predicted labels.
///
/// `MSE(z0, E(x, y)) + alpha_e * prior_kl(E(x, y))`
pub fn encoder_loss(
    g: &mut Generator,
    e: &mut Encoder,
    t: &mut Mlp,
    z0: &Tensor,
    norm: &NormSpec,
    cfg: &LossConfig,
) -> Result<Tensor> {
    let x = g.forward(z0)?;
    let labels = argmax_rows(&t.forward(&norm.normalize(&x)?)?);
    let z = e.forward(&x, &labels)?;
    let mut total = mse(z0, &z)?;
    if cfg.alpha_e != 0.0 {
        total = ops::add(&total, &ops::scale(&latent_prior_kl(&z)?, cfg.alpha_e))?;
    }
    ensure_finite("encoder loss", &total)?;
    Ok(total)
}

/// Student warmup objective on normalized inputs: match teacher logits at
/// temperature 1.
pub fn student_warmup_loss(s: &mut Mlp, t: &mut Mlp, xt: &Tensor) -> Result<Tensor> {
    let s_logits = s.forward(xt)?;
    let t_logits = t.forward(xt)?;
    let total = kl_divergence(&s_logits, &t_logits, 1.0)?;
    ensure_finite("student warmup loss", &total)?;
    Ok(total)
}

struct Best {
    val: f64,
    epoch: usize,
    state: Vec<StateEntry>,
}

impl Best {
    fn new() -> Best {
        Best {
            val: f64::INFINITY,
            epoch: 0,
            state: Vec::new(),
        }
    }

    fn offer(&mut self, epoch: usize, val: f64, net: &dyn Net) {
        if val < self.val {
            self.val = val;
            self.epoch = epoch;
            self.state = net.state_entries();
        }
    }

    fn entry(&self) -> Option<BestEntry> {
        (!self.state.is_empty()).then(|| BestEntry {
            epoch: self.epoch,
            val: self.val,
        })
    }
}

/// Train generator, encoder, and warmup student against a frozen teacher.
/// Deterministic given the config; the teacher's full state is verified
/// unchanged on exit.
pub fn train_module1(
    t: &mut Mlp,
    sizes: &ModelSizes,
    norm: &NormSpec,
    loss_cfg: &LossConfig,
    cfg: &Module1Config,
) -> Result<Module1Result> {
    cfg.validate()?;
    let teacher_digest = t.full_digest();
    t.set_trainable(false);

    let mut g = Generator::new(sizes, &mut seeding::stream(cfg.seed, "module1.init.generator"));
    let mut e = Encoder::new(sizes, &mut seeding::stream(cfg.seed, "module1.init.encoder"));
    let mut s = student_net(sizes, &mut seeding::stream(cfg.seed, "module1.init.student"));

    let mut opt_g = Adam::new(g.params(), cfg.lr_g, AdamParams::default());
    let mut opt_e = Adam::new(e.params(), cfg.lr_e, AdamParams::default());
    let mut opt_s = Adam::new(s.params(), cfg.lr_s, AdamParams::default());

    let z_val = Tensor::randn(
        &[10 * cfg.batch_b, sizes.nz],
        &mut seeding::stream(cfg.seed, "module1.zval"),
    );
    let mut z_rng = seeding::stream(cfg.seed, "module1.z");

    let mut best_g = Best::new();
    let mut best_e = Best::new();
    let mut best_s = Best::new();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let z0 = Tensor::randn(&[cfg.batch_b, sizes.nz], &mut z_rng);

        // Generator step: only the generator trains; the student acts as a
        // frozen function (eval mode keeps its normalization buffers intact),
        // the teacher captures batch statistics without mutating its own.
        g.set_mode(Mode::Train);
        g.set_trainable(true);
        s.set_mode(Mode::Eval);
        s.set_trainable(false);
        e.set_trainable(false);
        t.set_mode(Mode::Capture);
        let loss = generator_loss(&mut g, &mut s, t, &z0, norm, loss_cfg)?;
        opt_g.step(&backward(&loss)?)?;

        // Inner steps: encoder and student updates share one generator
        // forward per step; the generator is a frozen function here.
        g.set_mode(Mode::Eval);
        g.set_trainable(false);
        t.set_mode(Mode::Eval);
        for _ in 0..cfg.inner_steps {
            let z_inner = if cfg.fresh_inner_z {
                Tensor::randn(&[cfg.batch_b, sizes.nz], &mut z_rng)
            } else {
                z0.clone()
            };
            let x = g.forward(&z_inner)?;
            let xt = norm.normalize(&x)?;
            let t_logits = t.forward(&xt)?;
            let labels = argmax_rows(&t_logits);

            e.set_mode(Mode::Train);
            e.set_trainable(true);
            let z = e.forward(&x, &labels)?;
            let mut el = mse(&z_inner, &z)?;
            if loss_cfg.alpha_e != 0.0 {
                el = ops::add(&el, &ops::scale(&latent_prior_kl(&z)?, loss_cfg.alpha_e))?;
            }
            ensure_finite("encoder loss", &el)?;
            opt_e.step(&backward(&el)?)?;
            e.set_trainable(false);

            s.set_mode(Mode::Train);
            s.set_trainable(true);
            let sl = kl_divergence(&s.forward(&xt)?, &t_logits, 1.0)?;
            ensure_finite("student warmup loss", &sl)?;
            opt_s.step(&backward(&sl)?)?;
            s.set_trainable(false);
        }

        // Validation on the fixed latent batch, everything frozen.
        g.set_mode(Mode::Eval);
        e.set_mode(Mode::Eval);
        s.set_mode(Mode::Eval);
        t.set_mode(Mode::Capture);
        let val_generator = generator_loss(&mut g, &mut s, t, &z_val, norm, loss_cfg)?.item();
        t.set_mode(Mode::Eval);
        let val_encoder = encoder_loss(&mut g, &mut e, t, &z_val, norm, loss_cfg)?.item();
        let x_val = norm.normalize(&g.forward(&z_val)?)?;
        let val_student = student_warmup_loss(&mut s, t, &x_val)?.item();

        best_g.offer(epoch, val_generator, &g);
        best_e.offer(epoch, val_encoder, &e);
        best_s.offer(epoch, val_student, &s);
        history.push(Module1Record {
            epoch,
            val_generator,
            val_encoder,
            val_student,
        });
    }

    if !best_g.state.is_empty() {
        g.load_state(&best_g.state)?;
        e.load_state(&best_e.state)?;
        s.load_state(&best_s.state)?;
    }
    g.set_mode(Mode::Eval);
    e.set_mode(Mode::Eval);
    s.set_mode(Mode::Eval);

    if t.full_digest() != teacher_digest {
        return Err(Error::invalid(
            "internal invariant broken: teacher state changed during warmup",
        ));
    }
    Ok(Module1Result {
        generator: g,
        encoder: e,
        student: s,
        history,
        best_generator: best_g.entry(),
        best_encoder: best_e.entry(),
        best_student: best_s.entry(),
    })
}
