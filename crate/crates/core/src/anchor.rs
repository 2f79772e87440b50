//! Stage 2: anchor mapping.
//!
//! Student-domain samples are encoded into the generator's latent space and a
//! small anchor network learns to nudge them toward the teacher's home
//! domain: a label-driven mask picks which latent dimensions may move, and a
//! mapping head rewrites exactly those dimensions. Training minimizes the
//! teacher's energy-based uncertainty on the re-generated anchors while a
//! mask-budget term keeps most dimensions untouched and a label-consistency
//! term keeps the teacher predicting the original class.
//!
//! The anchor's batch-norm layers always normalize with their running
//! statistics (initialization values), never with batch statistics: the mask
//! must be a function of the label alone, not of whatever batch it rides in,
//! and a zero-learning-rate run must leave validation losses bit-identical
//! across epochs. Scale and shift still train as ordinary parameters.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffcore::{backward, ops, Adam, AdamParams, Mode, Tensor};
use crate::domains::DomainDataset;
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, energy_uncertainty, mask_size_loss, LossConfig};
use crate::models::{AnchorNet, Encoder, Generator, Mlp, Net, NormSpec};
use crate::seeding;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Module2Config {
    pub epochs: usize,
    pub batch_b: usize,
    pub lr_a: f64,
    pub seed: u64,
}

impl Default for Module2Config {
    fn default() -> Self {
        Module2Config {
            epochs: 30,
            batch_b: 64,
            lr_a: 1e-3,
            seed: 0,
        }
    }
}

impl Module2Config {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("anchor training needs at least 1 epoch"));
        }
        if self.batch_b < 2 {
            return Err(Error::invalid(format!(
                "batch_b must be at least 2, got {}",
                self.batch_b
            )));
        }
        if self.lr_a < 0.0 {
            return Err(Error::invalid(format!(
                "lr_a must be nonnegative, got {}",
                self.lr_a
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Module2Record {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct Module2Result {
    pub history: Vec<Module2Record>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Anchor objective on a labeled batch:
/// `mean U(T(x')) + mask_budget(m) + beta_a * CE(T(x'), y)`
/// where `x' = G(z')`, `(z', m) = anchor(E(x, y), y)`.
pub fn anchor_loss(
    anchor: &mut AnchorNet,
    g: &mut Generator,
    e: &mut Encoder,
    t: &mut Mlp,
    x: &Tensor,
    y: &[usize],
    norm: &NormSpec,
    cfg: &LossConfig,
) -> Result<Tensor> {
    let z = e.forward(x, y)?;
    let (z_prime, mask) = anchor.forward(&z, y)?;
    let x_prime = g.forward(&z_prime)?;
    let t_logits = t.forward(&norm.normalize(&x_prime)?)?;
    let u = ops::mean_all(&energy_uncertainty(&t_logits, cfg.t_energy)?);
    let budget = mask_size_loss(&mask, cfg)?;
    let mut total = ops::add(&u, &budget)?;
    if cfg.beta_a != 0.0 {
        total = ops::add(&total, &ops::scale(&cross_entropy(&t_logits, y)?, cfg.beta_a))?;
    }
    let v = total.item();
    if !v.is_finite() {
        return Err(Error::numeric(format!("anchor loss diverged to {v}")));
    }
    Ok(total)
}

/// Train the anchor against frozen generator/encoder/teacher on the
/// student-domain training split; the best validation snapshot (ties to the
/// earliest epoch) is loaded back into `anchor` on return.
pub fn train_module2(
    anchor: &mut AnchorNet,
    g: &mut Generator,
    e: &mut Encoder,
    t: &mut Mlp,
    train: &DomainDataset,
    val: &DomainDataset,
    norm: &NormSpec,
    loss_cfg: &LossConfig,
    cfg: &Module2Config,
) -> Result<Module2Result> {
    cfg.validate()?;
    if train.n() == 0 {
        return Err(Error::invalid("anchor training split is empty"));
    }
    let frozen = [g.full_digest(), e.full_digest(), t.full_digest()];
    g.set_mode(Mode::Eval);
    e.set_mode(Mode::Eval);
    t.set_mode(Mode::Eval);
    anchor.set_mode(Mode::Eval);
    g.set_trainable(false);
    e.set_trainable(false);
    t.set_trainable(false);
    anchor.set_trainable(true);

    let mut opt = Adam::new(anchor.params(), cfg.lr_a, AdamParams::default());
    let mut shuffle_rng = seeding::stream(cfg.seed, "module2.shuffle");

    let val_x = val.full_tensor();
    let val_y = val.labels.clone();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_state = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut idx: Vec<usize> = (0..train.n()).collect();
        idx.shuffle(&mut shuffle_rng);
        let mut train_sum = 0.0;
        let mut steps = 0;
        let mut start = 0;
        while start < idx.len() {
            let mut end = (start + cfg.batch_b).min(idx.len());
            // Fold a trailing singleton into the final batch.
            if idx.len() - end == 1 {
                end = idx.len();
            }
            let chunk = &idx[start..end];
            start = end;
            let x = train.rows_tensor(chunk);
            let y = train.labels_for(chunk);
            let loss = anchor_loss(anchor, g, e, t, &x, &y, norm, loss_cfg)?;
            train_sum += loss.item();
            steps += 1;
            opt.step(&backward(&loss)?)?;
        }

        anchor.set_trainable(false);
        let val_loss = anchor_loss(anchor, g, e, t, &val_x, &val_y, norm, loss_cfg)?.item();
        anchor.set_trainable(true);
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_state = anchor.state_entries();
        }
        history.push(Module2Record {
            epoch,
            train_loss: train_sum / steps as f64,
            val_loss,
        });
    }

    anchor.load_state(&best_state)?;
    anchor.set_trainable(false);
    if [g.full_digest(), e.full_digest(), t.full_digest()] != frozen {
        return Err(Error::invalid(
            "internal invariant broken: a frozen network changed during anchor training",
        ));
    }
    Ok(Module2Result {
        history,
        best_epoch,
        best_val,
    })
}

/// Teacher uncertainty on the raw dataset versus on its anchor mappings:
/// `(mean U(T(x~)), mean U(T(x')))`.
pub fn uncertainty_report(
    anchor: &mut AnchorNet,
    g: &mut Generator,
    e: &mut Encoder,
    t: &mut Mlp,
    ds: &DomainDataset,
    norm: &NormSpec,
    cfg: &LossConfig,
) -> Result<(f64, f64)> {
    for net in [
        g as &mut dyn Net,
        e as &mut dyn Net,
        t as &mut dyn Net,
        anchor as &mut dyn Net,
    ] {
        net.set_mode(Mode::Eval);
        net.set_trainable(false);
    }
    let x = ds.full_tensor();
    let before = ops::mean_all(&energy_uncertainty(
        &t.forward(&norm.normalize(&x)?)?,
        cfg.t_energy,
    )?)
    .item();
    let z = e.forward(&x, &ds.labels)?;
    let (z_prime, _) = anchor.forward(&z, &ds.labels)?;
    let x_prime = g.forward(&z_prime)?;
    let after = ops::mean_all(&energy_uncertainty(
        &t.forward(&norm.normalize(&x_prime)?)?,
        cfg.t_energy,
    )?)
    .item();
    Ok((before, after))
}

/// Write one row per sample: label, raw latent, and the latent with the
/// mask's complement applied (`(1 - m) * z`, the part the anchor preserves).
pub fn export_latents(
    anchor: &mut AnchorNet,
    e: &mut Encoder,
    ds: &DomainDataset,
    path: &Path,
    config_digest: &str,
) -> Result<()> {
    anchor.set_mode(Mode::Eval);
    e.set_mode(Mode::Eval);
    let x = ds.full_tensor();
    let z = e.forward(&x, &ds.labels)?;
    let mask = anchor.mask_for(&ds.labels)?;
    let nz = z.shape()[1];
    let masked = ops::mul(&ops::sub(&Tensor::full(mask.shape(), 1.0), &mask)?, &z)?;

    let mut out = String::new();
    out.push_str(&format!("# config_digest = {config_digest}\n"));
    out.push_str("label");
    for i in 0..nz {
        out.push_str(&format!(",z_{i}"));
    }
    for i in 0..nz {
        out.push_str(&format!(",zmask_{i}"));
    }
    out.push('\n');
    let zd = z.data();
    let md = masked.data();
    for (r, &label) in ds.labels.iter().enumerate() {
        out.push_str(&label.to_string());
        for i in 0..nz {
            out.push_str(&format!(",{}", zd[r * nz + i]));
        }
        for i in 0..nz {
            out.push_str(&format!(",{}", md[r * nz + i]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
