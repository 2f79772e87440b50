//! The five networks of the pipeline, plus input normalization and state
//! digests.
//!
//! All networks are small multilayer perceptrons over flat feature vectors;
//! the anchor network additionally runs a 1-d convolution stack over the
//! latent axis. Weights initialize uniform on `(-1/sqrt(fan_in),
//! 1/sqrt(fan_in))` with zero biases, drawn from a caller-provided seeded
//! stream, so construction is reproducible.
//!
//! [`Net::state_entries`] flattens a network into named `(shape, values)`
//! records — parameters first, then batch-norm running buffers — which is the
//! unit of checkpointing, digesting, and deep-cloning.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::{ops, BatchNorm, BnCapture, Mode, Tensor};
use crate::error::{Error, Result};
use crate::seeding;

// ---------------------------------------------------------------------------
// Input normalization
// ---------------------------------------------------------------------------

/// Per-feature input standardization. The synthetic benchmark uses the
/// identity; real datasets would carry their channel statistics here.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NormSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormSpec {
    pub fn identity(dim: usize) -> NormSpec {
        NormSpec {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::invalid(format!(
                "normalization mean/std lengths differ: {} vs {}",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(bad) = self.std.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::invalid(format!(
                "normalization std must be strictly positive, got {bad}"
            )));
        }
        Ok(())
    }

    /// `(x - mean) / std` per feature; differentiable with respect to `x`.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        let mean = Tensor::from_vec(&[self.mean.len()], self.mean.clone())?;
        let std = Tensor::from_vec(&[self.std.len()], self.std.clone())?;
        let centered = ops::sub(x, &ops::broadcast_row(&mean, b)?)?;
        ops::div(&centered, &ops::broadcast_row(&std, b)?)
    }

    /// Inverse of [`normalize`].
    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        let mean = Tensor::from_vec(&[self.mean.len()], self.mean.clone())?;
        let std = Tensor::from_vec(&[self.std.len()], self.std.clone())?;
        ops::add(&ops::mul(x, &ops::broadcast_row(&std, b)?)?, &ops::broadcast_row(&mean, b)?)
    }
}

// ---------------------------------------------------------------------------
// Sizes
// ---------------------------------------------------------------------------

/// Every architectural dimension in one place. Defaults are the desk-scale
/// profile used throughout the test suite.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelSizes {
    /// Input feature dimension.
    pub d: usize,
    /// Number of classes.
    pub k: usize,
    /// Latent dimension of the generator/encoder pair.
    pub nz: usize,
    pub h_teacher: usize,
    pub l_teacher: usize,
    pub h_student: usize,
    pub l_student: usize,
    pub h_generator: usize,
    pub l_generator: usize,
    pub h_encoder: usize,
    /// Width of the label embedding fed to the encoder.
    pub d_embed: usize,
    /// Multiplier on the anchor mask's softsign output; mask entries live in
    /// `[0, mask_gain / 3)`.
    pub mask_gain: f64,
    /// Generator output envelope: outputs are `range * tanh(.)`.
    pub data_range: f64,
}

impl Default for ModelSizes {
    fn default() -> Self {
        ModelSizes {
            d: 20,
            k: 4,
            nz: 16,
            h_teacher: 64,
            l_teacher: 3,
            h_student: 16,
            l_student: 2,
            h_generator: 64,
            l_generator: 2,
            h_encoder: 64,
            d_embed: 8,
            mask_gain: 3.0,
            data_range: 8.0,
        }
    }
}

impl ModelSizes {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("k", self.k),
            ("nz", self.nz),
            ("h_teacher", self.h_teacher),
            ("l_teacher", self.l_teacher),
            ("h_student", self.h_student),
            ("l_student", self.l_student),
            ("h_generator", self.h_generator),
            ("l_generator", self.l_generator),
            ("h_encoder", self.h_encoder),
            ("d_embed", self.d_embed),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("model size {name} must be positive")));
            }
        }
        if !(self.mask_gain > 0.0) {
            return Err(Error::invalid(format!(
                "mask_gain must be positive, got {}",
                self.mask_gain
            )));
        }
        if !(self.data_range > 0.0) {
            return Err(Error::invalid(format!(
                "data_range must be positive, got {}",
                self.data_range
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

const LEAKY_SLOPE: f64 = 0.01;

pub struct Affine {
    pub w: Tensor,
    pub b: Tensor,
}

impl Affine {
    fn new<R: Rng>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Affine {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Tensor::rand_uniform(&[fan_in, fan_out], -bound, bound, rng).requires_grad();
        w.set_name(format!("{name}.w"));
        let b = Tensor::parameter(format!("{name}.b"), &[fan_out], vec![0.0; fan_out]).unwrap();
        Affine { w, b }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::affine(x, &self.w, &self.b)
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            (self.w.name().unwrap(), self.w.clone()),
            (self.b.name().unwrap(), self.b.clone()),
        ]
    }
}

pub struct Conv1d {
    pub w: Tensor,
    pub b: Tensor,
}

impl Conv1d {
    fn new<R: Rng>(name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Conv1d {
        let bound = 1.0 / ((c_in * 3) as f64).sqrt();
        let w = Tensor::rand_uniform(&[c_out, c_in, 3], -bound, bound, rng).requires_grad();
        w.set_name(format!("{name}.w"));
        let b = Tensor::parameter(format!("{name}.b"), &[c_out], vec![0.0; c_out]).unwrap();
        Conv1d { w, b }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv1d(x, &self.w, &self.b)
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            (self.w.name().unwrap(), self.w.clone()),
            (self.b.name().unwrap(), self.b.clone()),
        ]
    }
}

struct Block {
    affine: Affine,
    bn: Option<BatchNorm>,
}

impl Block {
    fn new<R: Rng>(name: &str, fan_in: usize, fan_out: usize, batchnorm: bool, rng: &mut R) -> Block {
        Block {
            affine: Affine::new(&format!("{name}.affine"), fan_in, fan_out, rng),
            bn: batchnorm.then(|| BatchNorm::new(&format!("{name}.bn"), fan_out)),
        }
    }

    fn forward(
        &mut self,
        x: &Tensor,
        mode: Mode,
        captures: Option<&mut Vec<BnCapture>>,
    ) -> Result<Tensor> {
        let mut h = self.affine.forward(x)?;
        if let Some(bn) = &mut self.bn {
            h = bn.forward(&h, mode, captures)?;
        }
        Ok(ops::leaky_relu(&h, LEAKY_SLOPE))
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.affine.params();
        if let Some(bn) = &self.bn {
            p.push((bn.gamma.name().unwrap(), bn.gamma.clone()));
            p.push((bn.beta.name().unwrap(), bn.beta.clone()));
        }
        p
    }
}

// ---------------------------------------------------------------------------
// Shared network plumbing
// ---------------------------------------------------------------------------

/// One named slab of state: a parameter or a running buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub trait Net {
    /// Short identifier used in checkpoints ("teacher", "generator", ...).
    fn label(&self) -> &str;
    fn mode(&self) -> Mode;
    fn set_mode(&mut self, mode: Mode);
    fn params(&self) -> Vec<(String, Tensor)>;
    fn bn_refs(&self) -> Vec<&BatchNorm>;
    fn bn_muts(&mut self) -> Vec<&mut BatchNorm>;

    /// Freeze or unfreeze every parameter (controls gradient recording).
    fn set_trainable(&self, yes: bool) {
        for (_, p) in self.params() {
            p.set_requires_grad(yes);
        }
    }

    /// Parameters first, then running buffers, in construction order.
    fn state_entries(&self) -> Vec<StateEntry> {
        let mut out: Vec<StateEntry> = self
            .params()
            .into_iter()
            .map(|(name, p)| StateEntry {
                name,
                shape: p.shape().to_vec(),
                values: p.to_vec(),
            })
            .collect();
        for bn in self.bn_refs() {
            out.push(StateEntry {
                name: format!("{}.running_mean", bn.name),
                shape: vec![bn.width()],
                values: bn.running_mean.clone(),
            });
            out.push(StateEntry {
                name: format!("{}.running_var", bn.name),
                shape: vec![bn.width()],
                values: bn.running_var.clone(),
            });
        }
        out
    }

    /// Restore state produced by [`state_entries`] on an identically shaped
    /// network. Entry names and shapes must match exactly, in order.
    /// Verify that `entries` matches this network's state layout (entry
    /// count, names, shapes, value lengths) without touching any state.
    fn check_state(&self, entries: &[StateEntry]) -> Result<()> {
        let params = self.params();
        let n_bn = self.bn_refs().len();
        if entries.len() != params.len() + 2 * n_bn {
            return Err(Error::invalid(format!(
                "state for {} has {} entries, expected {}",
                self.label(),
                entries.len(),
                params.len() + 2 * n_bn
            )));
        }
        for ((name, p), e) in params.iter().zip(entries) {
            if *name != e.name || p.shape() != e.shape {
                return Err(Error::invalid(format!(
                    "state entry mismatch: expected {} {:?}, got {} {:?}",
                    name,
                    p.shape(),
                    e.name,
                    e.shape
                )));
            }
            if e.values.len() != e.shape.iter().product::<usize>() {
                return Err(Error::invalid(format!(
                    "state entry {} holds {} values, shape {:?} wants {}",
                    e.name,
                    e.values.len(),
                    e.shape,
                    e.shape.iter().product::<usize>()
                )));
            }
        }
        let rest = &entries[params.len()..];
        for (i, bn) in self.bn_refs().into_iter().enumerate() {
            let m = &rest[2 * i];
            let v = &rest[2 * i + 1];
            let want_m = format!("{}.running_mean", bn.name);
            let want_v = format!("{}.running_var", bn.name);
            if m.name != want_m
                || v.name != want_v
                || m.values.len() != bn.width()
                || v.values.len() != bn.width()
            {
                return Err(Error::invalid(format!(
                    "buffer entry mismatch: expected {want_m}/{want_v}, got {}/{}",
                    m.name, v.name
                )));
            }
        }
        Ok(())
    }

    /// Restore state captured by [`Net::state_entries`]. All-or-nothing: the
    /// layout is validated up front and nothing is written on mismatch.
    fn load_state(&mut self, entries: &[StateEntry]) -> Result<()> {
        self.check_state(entries)?;
        let params = self.params();
        for ((_, p), e) in params.iter().zip(entries) {
            p.set_data(&e.values);
        }
        let rest = &entries[params.len()..];
        for (i, bn) in self.bn_muts().into_iter().enumerate() {
            bn.running_mean.copy_from_slice(&rest[2 * i].values);
            bn.running_var.copy_from_slice(&rest[2 * i + 1].values);
        }
        Ok(())
    }

    /// Digest of trainable parameters only.
    fn param_digest(&self) -> String {
        digest_entries(
            self.params()
                .into_iter()
                .map(|(name, p)| StateEntry {
                    name,
                    shape: p.shape().to_vec(),
                    values: p.to_vec(),
                })
                .collect::<Vec<_>>()
                .iter(),
        )
    }

    /// Digest of parameters and running statistics together.
    fn full_digest(&self) -> String {
        digest_entries(self.state_entries().iter())
    }

    fn has_batchnorm(&self) -> bool {
        !self.bn_refs().is_empty()
    }
}

/// Content digest of an ordered sequence of state entries.
pub fn digest_entries<'a, I: Iterator<Item = &'a StateEntry>>(entries: I) -> String {
    let mut hasher = Sha256::new();
    for e in entries {
        hasher.update(e.name.as_bytes());
        hasher.update([0x1f]);
        for &d in &e.shape {
            hasher.update((d as u64).to_le_bytes());
        }
        hasher.update([0x1e]);
        for &v in &e.values {
            hasher.update(v.to_le_bytes());
        }
    }
    seeding::hex(&hasher.finalize())
}

// ---------------------------------------------------------------------------
// Classifier MLP (teacher and student)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct MlpConfig {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
    pub batchnorm: bool,
}

/// Classifier over normalized inputs: `layers` blocks of
/// affine + batch norm + leaky relu, then an affine head to logits.
pub struct Mlp {
    cfg: MlpConfig,
    blocks: Vec<Block>,
    head: Affine,
    mode: Mode,
}

impl Mlp {
    pub fn new<R: Rng>(cfg: MlpConfig, rng: &mut R) -> Mlp {
        let mut blocks = Vec::with_capacity(cfg.layers);
        let mut fan_in = cfg.input;
        for i in 0..cfg.layers {
            blocks.push(Block::new(
                &format!("{}.block{i}", cfg.name),
                fan_in,
                cfg.hidden,
                cfg.batchnorm,
                rng,
            ));
            fan_in = cfg.hidden;
        }
        let head = Affine::new(&format!("{}.head", cfg.name), fan_in, cfg.output, rng);
        Mlp {
            cfg,
            blocks,
            head,
            mode: Mode::Train,
        }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, self.mode, None)?;
        }
        self.head.forward(&h)
    }

    /// Forward that also returns batch-norm captures; captures are only
    /// produced in [`Mode::Capture`].
    pub fn forward_captured(&mut self, x: &Tensor) -> Result<(Tensor, Vec<BnCapture>)> {
        let mut caps = Vec::new();
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, self.mode, Some(&mut caps))?;
        }
        Ok((self.head.forward(&h)?, caps))
    }

    pub fn deep_clone(&self) -> Mlp {
        let mut rng = seeding::stream(0, "clone");
        let mut copy = Mlp::new(self.cfg.clone(), &mut rng);
        copy.load_state(&self.state_entries()).expect("clone state");
        copy.mode = self.mode;
        copy
    }
}

impl Net for Mlp {
    fn label(&self) -> &str {
        &self.cfg.name
    }
    fn mode(&self) -> Mode {
        self.mode
    }
    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut p: Vec<(String, Tensor)> = self.blocks.iter().flat_map(Block::params).collect();
        p.extend(self.head.params());
        p
    }
    fn bn_refs(&self) -> Vec<&BatchNorm> {
        self.blocks.iter().filter_map(|b| b.bn.as_ref()).collect()
    }
    fn bn_muts(&mut self) -> Vec<&mut BatchNorm> {
        self.blocks.iter_mut().filter_map(|b| b.bn.as_mut()).collect()
    }
}

pub fn teacher_net<R: Rng>(sizes: &ModelSizes, rng: &mut R) -> Mlp {
    Mlp::new(
        MlpConfig {
            name: "teacher".into(),
            input: sizes.d,
            hidden: sizes.h_teacher,
            layers: sizes.l_teacher,
            output: sizes.k,
            batchnorm: true,
        },
        rng,
    )
}

pub fn student_net<R: Rng>(sizes: &ModelSizes, rng: &mut R) -> Mlp {
    Mlp::new(
        MlpConfig {
            name: "student".into(),
            input: sizes.d,
            hidden: sizes.h_student,
            layers: sizes.l_student,
            output: sizes.k,
            batchnorm: true,
        },
        rng,
    )
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// Maps latent vectors to raw-range inputs; outputs are bounded by
/// `range * tanh(.)` so generated samples stay inside the data envelope.
pub struct Generator {
    sizes: ModelSizes,
    blocks: Vec<Block>,
    head: Affine,
    mode: Mode,
}

impl Generator {
    pub fn new<R: Rng>(sizes: &ModelSizes, rng: &mut R) -> Generator {
        let mut blocks = Vec::with_capacity(sizes.l_generator);
        let mut fan_in = sizes.nz;
        for i in 0..sizes.l_generator {
            blocks.push(Block::new(
                &format!("generator.block{i}"),
                fan_in,
                sizes.h_generator,
                true,
                rng,
            ));
            fan_in = sizes.h_generator;
        }
        let head = Affine::new("generator.head", fan_in, sizes.d, rng);
        Generator {
            sizes: *sizes,
            blocks,
            head,
            mode: Mode::Train,
        }
    }

    pub fn range(&self) -> f64 {
        self.sizes.data_range
    }

    pub fn forward(&mut self, z: &Tensor) -> Result<Tensor> {
        let mut h = z.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, self.mode, None)?;
        }
        Ok(ops::scale(&ops::tanh(&self.head.forward(&h)?), self.sizes.data_range))
    }

    pub fn deep_clone(&self) -> Generator {
        let mut rng = seeding::stream(0, "clone");
        let mut copy = Generator::new(&self.sizes, &mut rng);
        copy.load_state(&self.state_entries()).expect("clone state");
        copy.mode = self.mode;
        copy
    }
}

impl Net for Generator {
    fn label(&self) -> &str {
        "generator"
    }
    fn mode(&self) -> Mode {
        self.mode
    }
    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut p: Vec<(String, Tensor)> = self.blocks.iter().flat_map(Block::params).collect();
        p.extend(self.head.params());
        p
    }
    fn bn_refs(&self) -> Vec<&BatchNorm> {
        self.blocks.iter().filter_map(|b| b.bn.as_ref()).collect()
    }
    fn bn_muts(&mut self) -> Vec<&mut BatchNorm> {
        self.blocks.iter_mut().filter_map(|b| b.bn.as_mut()).collect()
    }
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// Maps an input/label pair into the generator's latent space. The label is
/// one-hot embedded, concatenated onto the raw input features, and pushed
/// through one hidden block.
pub struct Encoder {
    sizes: ModelSizes,
    embed: Affine,
    block: Block,
    head: Affine,
    mode: Mode,
}

impl Encoder {
    pub fn new<R: Rng>(sizes: &ModelSizes, rng: &mut R) -> Encoder {
        let embed = Affine::new("encoder.embed", sizes.k, sizes.d_embed, rng);
        let block = Block::new(
            "encoder.block0",
            sizes.d + sizes.d_embed,
            sizes.h_encoder,
            true,
            rng,
        );
        let head = Affine::new("encoder.head", sizes.h_encoder, sizes.nz, rng);
        Encoder {
            sizes: *sizes,
            embed,
            block,
            head,
            mode: Mode::Train,
        }
    }

    pub fn forward(&mut self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        if x.shape().first() != Some(&labels.len()) {
            return Err(Error::Shape {
                op: "encoder",
                detail: format!("{} inputs but {} labels", x.shape()[0], labels.len()),
            });
        }
        let emb = self.embed.forward(&ops::one_hot(labels, self.sizes.k)?)?;
        let h = ops::concat_cols(x, &emb)?;
        let h = self.block.forward(&h, self.mode, None)?;
        self.head.forward(&h)
    }

    pub fn deep_clone(&self) -> Encoder {
        let mut rng = seeding::stream(0, "clone");
        let mut copy = Encoder::new(&self.sizes, &mut rng);
        copy.load_state(&self.state_entries()).expect("clone state");
        copy.mode = self.mode;
        copy
    }
}

impl Net for Encoder {
    fn label(&self) -> &str {
        "encoder"
    }
    fn mode(&self) -> Mode {
        self.mode
    }
    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.embed.params();
        p.extend(self.block.params());
        p.extend(self.head.params());
        p
    }
    fn bn_refs(&self) -> Vec<&BatchNorm> {
        self.block.bn.as_ref().into_iter().collect()
    }
    fn bn_muts(&mut self) -> Vec<&mut BatchNorm> {
        self.block.bn.as_mut().into_iter().collect()
    }
}

// ---------------------------------------------------------------------------
// Anchor network
// ---------------------------------------------------------------------------

/// Learns, per class, which latent dimensions carry domain-specific
/// information and how to retarget them toward the teacher's domain.
///
/// The mask head maps a class embedding through three stacked affines, batch
/// norm, sigmoid, a centering shift, softsign, the `mask_gain` multiplier,
/// and a final rectifier — so mask entries lie in `[0, mask_gain / 3)` and
/// are exactly zero wherever the rectifier clips.
///
/// The mapping head runs the masked latent through a 1->4->8->4 channel
/// convolution stack over the latent axis and projects back to `nz`.
pub struct AnchorNet {
    sizes: ModelSizes,
    embed: Affine,
    mask_fc: Vec<Affine>,
    mask_bn: BatchNorm,
    convs: Vec<(Conv1d, BatchNorm)>,
    head: Affine,
    mode: Mode,
}

const ANCHOR_CHANNELS: [usize; 4] = [1, 4, 8, 4];

impl AnchorNet {
    pub fn new<R: Rng>(sizes: &ModelSizes, rng: &mut R) -> AnchorNet {
        let nz = sizes.nz;
        let embed = Affine::new("anchor.embed", sizes.k, nz, rng);
        let mask_fc = (0..3)
            .map(|i| Affine::new(&format!("anchor.mask_fc{i}"), nz, nz, rng))
            .collect();
        let mask_bn = BatchNorm::new("anchor.mask_bn", nz);
        let convs = (0..3)
            .map(|i| {
                (
                    Conv1d::new(
                        &format!("anchor.conv{i}"),
                        ANCHOR_CHANNELS[i],
                        ANCHOR_CHANNELS[i + 1],
                        rng,
                    ),
                    BatchNorm::new(&format!("anchor.conv{i}.bn"), ANCHOR_CHANNELS[i + 1]),
                )
            })
            .collect();
        let head = Affine::new("anchor.head", ANCHOR_CHANNELS[3] * nz, nz, rng);
        AnchorNet {
            sizes: *sizes,
            embed,
            mask_fc,
            mask_bn,
            convs,
            head,
            mode: Mode::Train,
        }
    }

    pub fn mask_gain(&self) -> f64 {
        self.sizes.mask_gain
    }

    /// Per-class mask over latent dimensions, shape `[b, nz]`, entries in
    /// `[0, mask_gain / 3)`. Depends only on the labels (in eval mode, rows
    /// with equal labels are identical).
    pub fn mask_for(&mut self, labels: &[usize]) -> Result<Tensor> {
        let mut h = self.embed.forward(&ops::one_hot(labels, self.sizes.k)?)?;
        for fc in &self.mask_fc {
            h = fc.forward(&h)?;
        }
        let h = self.mask_bn.forward(&h, self.mode, None)?;
        let centered = ops::add_scalar(&ops::sigmoid(&h), -0.5);
        Ok(ops::relu(&ops::scale(
            &ops::softsign(&centered),
            self.sizes.mask_gain,
        )))
    }

    /// The latent mapping head applied to an already-masked latent.
    pub fn map_latent(&mut self, masked: &Tensor) -> Result<Tensor> {
        let (b, nz) = match masked.shape() {
            [b, nz] if *nz == self.sizes.nz => (*b, *nz),
            s => {
                return Err(Error::Shape {
                    op: "anchor.map_latent",
                    detail: format!("expected [b, {}], got {s:?}", self.sizes.nz),
                })
            }
        };
        let mut h = ops::reshape(masked, &[b, 1, nz])?;
        for (conv, bn) in &mut self.convs {
            h = conv.forward(&h)?;
            h = bn.forward(&h, self.mode, None)?;
            h = ops::leaky_relu(&h, LEAKY_SLOPE);
        }
        let h = ops::reshape(&h, &[b, ANCHOR_CHANNELS[3] * nz])?;
        self.head.forward(&h)
    }

    /// Retarget latents toward the teacher's domain:
    /// `z' = m .* psi(m .* z) + (1 - m) .* z` with `m = mask_for(labels)`.
    pub fn forward(&mut self, z: &Tensor, labels: &[usize]) -> Result<(Tensor, Tensor)> {
        let mask = self.mask_for(labels)?;
        if mask.shape() != z.shape() {
            return Err(Error::Shape {
                op: "anchor",
                detail: format!("latent {:?} vs mask {:?}", z.shape(), mask.shape()),
            });
        }
        let masked = ops::mul(&mask, z)?;
        let psi = self.map_latent(&masked)?;
        let zp = anchor_combine(z, &psi, &mask)?;
        Ok((zp, mask))
    }

    pub fn deep_clone(&self) -> AnchorNet {
        let mut rng = seeding::stream(0, "clone");
        let mut copy = AnchorNet::new(&self.sizes, &mut rng);
        copy.load_state(&self.state_entries()).expect("clone state");
        copy.mode = self.mode;
        copy
    }
}

/// Blend a mapped latent with the original under a per-dimension mask:
/// `m .* psi + (1 - m) .* z`. Dimensions with a zero mask keep their original
/// values bitwise.
pub fn anchor_combine(z: &Tensor, psi: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let inv = ops::add_scalar(&ops::scale(mask, -1.0), 1.0);
    ops::add(&ops::mul(mask, psi)?, &ops::mul(&inv, z)?)
}

impl Net for AnchorNet {
    fn label(&self) -> &str {
        "anchor"
    }
    fn mode(&self) -> Mode {
        self.mode
    }
    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.embed.params();
        for fc in &self.mask_fc {
            p.extend(fc.params());
        }
        p.push((self.mask_bn.gamma.name().unwrap(), self.mask_bn.gamma.clone()));
        p.push((self.mask_bn.beta.name().unwrap(), self.mask_bn.beta.clone()));
        for (conv, bn) in &self.convs {
            p.extend(conv.params());
            p.push((bn.gamma.name().unwrap(), bn.gamma.clone()));
            p.push((bn.beta.name().unwrap(), bn.beta.clone()));
        }
        p.extend(self.head.params());
        p
    }
    fn bn_refs(&self) -> Vec<&BatchNorm> {
        let mut v = vec![&self.mask_bn];
        v.extend(self.convs.iter().map(|(_, bn)| bn));
        v
    }
    fn bn_muts(&mut self) -> Vec<&mut BatchNorm> {
        let mut v = vec![&mut self.mask_bn];
        v.extend(self.convs.iter_mut().map(|(_, bn)| bn));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes() -> ModelSizes {
        ModelSizes::default()
    }

    fn rng(tag: &str) -> rand_chacha::ChaCha8Rng {
        crate::seeding::stream(42, tag)
    }

    #[test]
    fn norm_identity_is_bitwise_noop() {
        let spec = NormSpec::identity(3);
        let x = Tensor::from_vec(&[2, 3], vec![1.5, -2.25, 0.0, 7.0, -0.5, 3.25]).unwrap();
        assert_eq!(spec.normalize(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn norm_roundtrip() {
        let spec = NormSpec {
            mean: vec![1.0, -2.0],
            std: vec![0.5, 4.0],
        };
        let x = Tensor::from_vec(&[2, 2], vec![3.0, 2.0, -1.0, 0.25]).unwrap();
        let back = spec.denormalize(&spec.normalize(&x).unwrap()).unwrap();
        for (a, b) in back.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = spec.normalize(&x).unwrap().to_vec();
        assert!((y[0] - 4.0).abs() < 1e-12); // (3 - 1) / 0.5
    }

    #[test]
    fn norm_rejects_nonpositive_std() {
        let spec = NormSpec {
            mean: vec![0.0],
            std: vec![0.0],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let s = sizes();
        let a = teacher_net(&s, &mut rng("init"));
        let b = teacher_net(&s, &mut rng("init"));
        assert_eq!(a.full_digest(), b.full_digest());
        // First block fans in from d=20: |w| < 1/sqrt(20), biases zero.
        let bound = 1.0 / (s.d as f64).sqrt();
        let (name, w) = &a.params()[0];
        assert!(name.ends_with("block0.affine.w"));
        assert!(w.data().iter().all(|v| v.abs() < bound));
        let (_, bias) = &a.params()[1];
        assert!(bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn digests_separate_params_from_buffers() {
        let s = sizes();
        let mut t = teacher_net(&s, &mut rng("dig"));
        let p0 = t.param_digest();
        let f0 = t.full_digest();
        // A train-mode forward only shifts running stats: the parameter
        // digest holds, the full digest moves.
        let x = Tensor::randn(&[8, s.d], &mut rng("dig.x"));
        t.set_mode(Mode::Train);
        t.forward(&x).unwrap();
        assert_eq!(t.param_digest(), p0);
        assert_ne!(t.full_digest(), f0);
    }

    #[test]
    fn state_roundtrip_is_exact() {
        let s = sizes();
        let mut a = AnchorNet::new(&s, &mut rng("state.a"));
        let mut b = AnchorNet::new(&s, &mut rng("state.b"));
        assert_ne!(a.full_digest(), b.full_digest());
        b.load_state(&a.state_entries()).unwrap();
        assert_eq!(a.full_digest(), b.full_digest());
        // Mismatched architecture is rejected.
        let small = ModelSizes { nz: 8, ..s };
        let mut c = AnchorNet::new(&small, &mut rng("state.c"));
        assert!(c.load_state(&a.state_entries()).is_err());
        let _ = a.forward(&Tensor::zeros(&[2, s.nz]), &[0, 1]).unwrap();
    }

    #[test]
    fn deep_clone_shares_nothing() {
        let s = sizes();
        let g = Generator::new(&s, &mut rng("clone"));
        let g2 = g.deep_clone();
        assert_eq!(g.full_digest(), g2.full_digest());
        g2.params()[0].1.update_data(|d| d[0] += 1.0);
        assert_ne!(g.full_digest(), g2.full_digest());
    }

    #[test]
    fn generator_respects_envelope() {
        let s = sizes();
        let mut g = Generator::new(&s, &mut rng("env"));
        g.set_mode(Mode::Eval);
        let z = Tensor::randn(&[16, s.nz], &mut rng("env.z"));
        let x = g.forward(&z).unwrap();
        assert_eq!(x.shape(), &[16, s.d]);
        assert!(x.data().iter().all(|v| v.abs() <= s.data_range));
    }

    #[test]
    fn encoder_shapes_and_label_check() {
        let s = sizes();
        let mut e = Encoder::new(&s, &mut rng("enc"));
        e.set_mode(Mode::Eval);
        let x = Tensor::randn(&[3, s.d], &mut rng("enc.x"));
        let z = e.forward(&x, &[0, 3, 1]).unwrap();
        assert_eq!(z.shape(), &[3, s.nz]);
        assert!(e.forward(&x, &[0, 1]).is_err());
        assert!(e.forward(&x, &[0, 1, 4]).is_err());
    }

    #[test]
    fn mask_entries_stay_in_range() {
        let s = sizes();
        let mut a = AnchorNet::new(&s, &mut rng("mask"));
        a.set_mode(Mode::Eval);
        let labels: Vec<usize> = (0..32).map(|i| i % s.k).collect();
        let m = a.mask_for(&labels).unwrap();
        let hi = s.mask_gain / 3.0;
        assert!(m.data().iter().all(|&v| (0.0..hi).contains(&v)));
    }

    #[test]
    fn mask_is_label_pure_in_eval() {
        let s = sizes();
        let mut a = AnchorNet::new(&s, &mut rng("pure"));
        a.set_mode(Mode::Eval);
        let m = a.mask_for(&[2, 0, 2, 2, 0]).unwrap();
        let d = m.data();
        let nz = s.nz;
        assert_eq!(d[0..nz], d[2 * nz..3 * nz]);
        assert_eq!(d[0..nz], d[3 * nz..4 * nz]);
        assert_eq!(d[nz..2 * nz], d[4 * nz..5 * nz]);
        assert_ne!(d[0..nz], d[nz..2 * nz]);
    }

    #[test]
    fn zero_mask_passes_latent_through_bitwise() {
        let s = sizes();
        let mut a = AnchorNet::new(&s, &mut rng("zero"));
        a.set_mode(Mode::Eval);
        // Zeroing the mask head's batch-norm scale collapses the mask to
        // relu(softsign(sigmoid(beta) - 0.5)) with beta = 0, i.e. exactly 0.
        a.mask_bn.gamma.update_data(|d| d.fill(0.0));
        let z = Tensor::randn(&[4, s.nz], &mut rng("zero.z"));
        let (zp, mask) = a.forward(&z, &[0, 1, 2, 3]).unwrap();
        assert!(mask.data().iter().all(|&v| v == 0.0));
        assert_eq!(zp.to_vec(), z.to_vec());
    }

    #[test]
    fn full_mask_returns_mapped_latent() {
        // With a mask of exactly one everywhere, the combination is the
        // mapped latent alone.
        let z = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let psi = Tensor::from_vec(&[2, 3], vec![-1.0; 6]).unwrap();
        let ones = Tensor::full(&[2, 3], 1.0);
        let out = anchor_combine(&z, &psi, &ones).unwrap();
        assert_eq!(out.to_vec(), vec![-1.0; 6]);
    }

    #[test]
    fn mask_complement_passthrough_per_dimension() {
        let z = Tensor::from_vec(&[1, 4], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let psi = Tensor::from_vec(&[1, 4], vec![-5.0; 4]).unwrap();
        let mask = Tensor::from_vec(&[1, 4], vec![0.0, 0.5, 0.0, 1.0]).unwrap();
        let out = anchor_combine(&z, &psi, &mask).unwrap().to_vec();
        assert_eq!(out[0], 10.0); // untouched bitwise
        assert_eq!(out[2], 30.0);
        assert!((out[1] - 7.5).abs() < 1e-12); // 0.5 * -5 + 0.5 * 20
        assert_eq!(out[3], -5.0);
    }

    #[test]
    fn sizes_validation() {
        let mut s = sizes();
        assert!(s.validate().is_ok());
        s.nz = 0;
        assert!(s.validate().is_err());
        let bad = ModelSizes {
            mask_gain: 0.0,
            ..sizes()
        };
        assert!(bad.validate().is_err());
    }
}
