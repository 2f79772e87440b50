//! Run-level configuration: one flat `key = value` text file describing the
//! data, the networks, and every training stage.
//!
//! Keys are namespaced (`module1.lr_g`, `module3.scheduler.a`,
//! `data.teacher.rho`, ...). Parsing starts from the defaults and applies each
//! line; unknown and duplicate keys are rejected. Serialization always emits
//! every key in one fixed order, so the serialized form is canonical and its
//! SHA-256 digest identifies the configuration. All artifacts produced by a
//! run embed this digest.
//!
//! Two derived couplings are enforced rather than serialized:
//! `loss.n_z` always equals `sizes.nz`, and the per-module `seed` fields are
//! overwritten with the run seed when a pipeline run executes (the values in
//! the file only matter for single-stage invocations).

use sha2::{Digest, Sha256};

use crate::anchor::Module2Config;
use crate::dfkd::Module1Config;
use crate::domains::DomainSpec;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::mixup::Module3Config;
use crate::models::ModelSizes;
use crate::seeding;

/// Supervised training of the teacher on its own domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTrainConfig {
    /// Upper bound on epochs; early stopping usually ends training sooner.
    pub epochs: usize,
    pub batch_b: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Epochs without validation-accuracy improvement before stopping.
    pub patience: usize,
    /// Initialization/shuffle seed; pipeline runs replace it with the run seed.
    pub seed: u64,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        TeacherTrainConfig {
            epochs: 200,
            batch_b: 64,
            lr: 1e-3,
            weight_decay: 0.0,
            patience: 10,
            seed: 7,
        }
    }
}

impl TeacherTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("teacher.epochs must be >= 1"));
        }
        if self.batch_b < 2 {
            return Err(Error::invalid("teacher.batch_b must be >= 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("teacher.lr must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("teacher.weight_decay must be >= 0"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("teacher.patience must be >= 1"));
        }
        Ok(())
    }
}

/// Settings shared by the two reference baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Which baseline the `baseline` subcommand runs: `wo_kd` or `dfkd_ft`.
    pub name: String,
    pub epochs: usize,
    pub batch_b: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            name: "dfkd_ft".into(),
            // The standard fine-tuning schedule: 200 epochs at lr 1e-3 with
            // weight decay 1e-4, best checkpoint by validation top-1.
            epochs: 200,
            batch_b: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name != "wo_kd" && self.name != "dfkd_ft" {
            return Err(Error::invalid(format!(
                "baseline.name must be wo_kd or dfkd_ft, got `{}`",
                self.name
            )));
        }
        if self.batch_b < 2 {
            return Err(Error::invalid("baseline.batch_b must be >= 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("baseline.lr must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("baseline.weight_decay must be >= 0"));
        }
        Ok(())
    }
}

/// Everything a full experiment needs: data, model sizes, loss weights, the
/// three training stages, the baselines, and the seed list.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_teacher: DomainSpec,
    pub data_student: DomainSpec,
    pub sizes: ModelSizes,
    pub loss: LossConfig,
    pub teacher: TeacherTrainConfig,
    pub module1: Module1Config,
    pub module2: Module2Config,
    pub module3: Module3Config,
    pub baseline: BaselineConfig,
    /// One full pipeline run per seed; reports aggregate across them.
    pub seeds: Vec<u64>,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sizes = ModelSizes::default();
        let loss = LossConfig {
            n_z: sizes.nz,
            ..LossConfig::default()
        };
        RunConfig {
            data_teacher: DomainSpec::default_teacher(),
            data_student: DomainSpec::default_student(),
            sizes,
            loss,
            teacher: TeacherTrainConfig::default(),
            module1: Module1Config::default(),
            module2: Module2Config::default(),
            module3: Module3Config::default(),
            baseline: BaselineConfig::default(),
            seeds: vec![2021, 2022, 2023, 2024, 2025],
            out_dir: "out".into(),
        }
    }
}

/// A larger preset mirroring image-scale hyperparameters (256-dim latents,
/// 32x32x1-sized inputs, 31 classes). It exists as an alternate profile and
/// validates, but the test suite exercises the desk-scale default.
pub fn full_scale() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.sizes = ModelSizes {
        d: 1024,
        k: 31,
        nz: 256,
        h_teacher: 512,
        l_teacher: 3,
        h_student: 128,
        l_student: 2,
        h_generator: 512,
        l_generator: 2,
        h_encoder: 512,
        d_embed: 64,
        ..cfg.sizes
    };
    cfg.loss.n_z = 256;
    for spec in [&mut cfg.data_teacher, &mut cfg.data_student] {
        spec.k = 31;
        spec.d_inv = 512;
        spec.d_spu = 512;
    }
    cfg
}

trait ConfigValue: Sized {
    fn fmt(&self) -> String;
    fn parse(key: &str, raw: &str) -> Result<Self>;
}

macro_rules! int_value {
    ($t:ty) => {
        impl ConfigValue for $t {
            fn fmt(&self) -> String {
                self.to_string()
            }
            fn parse(key: &str, raw: &str) -> Result<Self> {
                raw.parse().map_err(|_| {
                    Error::invalid(format!("{key}: expected an integer, got `{raw}`"))
                })
            }
        }
    };
}
int_value!(usize);
int_value!(u64);

impl ConfigValue for f64 {
    fn fmt(&self) -> String {
        // Rust's float Display emits the shortest decimal that parses back to
        // the identical bits, so the round trip is lossless.
        format!("{self}")
    }
    fn parse(key: &str, raw: &str) -> Result<Self> {
        let v: f64 = raw
            .parse()
            .map_err(|_| Error::invalid(format!("{key}: expected a number, got `{raw}`")))?;
        if !v.is_finite() {
            return Err(Error::invalid(format!("{key}: must be finite, got `{raw}`")));
        }
        Ok(v)
    }
}

impl ConfigValue for bool {
    fn fmt(&self) -> String {
        self.to_string()
    }
    fn parse(key: &str, raw: &str) -> Result<Self> {
        match raw {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(Error::invalid(format!(
                "{key}: expected true or false, got `{raw}`"
            ))),
        }
    }
}

impl ConfigValue for String {
    fn fmt(&self) -> String {
        self.clone()
    }
    fn parse(key: &str, raw: &str) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid(format!("{key}: value must not be empty")));
        }
        Ok(raw.to_string())
    }
}

impl ConfigValue for Vec<u64> {
    fn fmt(&self) -> String {
        self.iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
    fn parse(key: &str, raw: &str) -> Result<Self> {
        raw.split(',')
            .map(|part| {
                part.trim().parse().map_err(|_| {
                    Error::invalid(format!(
                        "{key}: expected comma-separated integers, got `{raw}`"
                    ))
                })
            })
            .collect()
    }
}

struct Key {
    name: &'static str,
    get: fn(&RunConfig) -> String,
    set: fn(&mut RunConfig, &str) -> Result<()>,
}

macro_rules! keys {
    ($( $name:literal => $($path:ident).+ ),* $(,)?) => {
        &[
            $(Key {
                name: $name,
                get: |c| ConfigValue::fmt(&c.$($path).+),
                set: |c, raw| {
                    c.$($path).+ = ConfigValue::parse($name, raw)?;
                    Ok(())
                },
            }),*
        ]
    };
}

/// Every serializable key, in canonical emission order.
fn key_table() -> &'static [Key] {
    keys![
        "data.teacher.k" => data_teacher.k,
        "data.teacher.d_inv" => data_teacher.d_inv,
        "data.teacher.d_spu" => data_teacher.d_spu,
        "data.teacher.rho" => data_teacher.rho,
        "data.teacher.sigma" => data_teacher.sigma,
        "data.teacher.n_per_class" => data_teacher.n_per_class,
        "data.teacher.seed" => data_teacher.seed,
        "data.student.k" => data_student.k,
        "data.student.d_inv" => data_student.d_inv,
        "data.student.d_spu" => data_student.d_spu,
        "data.student.rho" => data_student.rho,
        "data.student.sigma" => data_student.sigma,
        "data.student.n_per_class" => data_student.n_per_class,
        "data.student.seed" => data_student.seed,
        "sizes.d" => sizes.d,
        "sizes.k" => sizes.k,
        "sizes.nz" => sizes.nz,
        "sizes.h_teacher" => sizes.h_teacher,
        "sizes.l_teacher" => sizes.l_teacher,
        "sizes.h_student" => sizes.h_student,
        "sizes.l_student" => sizes.l_student,
        "sizes.h_generator" => sizes.h_generator,
        "sizes.l_generator" => sizes.l_generator,
        "sizes.h_encoder" => sizes.h_encoder,
        "sizes.d_embed" => sizes.d_embed,
        "sizes.mask_gain" => sizes.mask_gain,
        "sizes.data_range" => sizes.data_range,
        "loss.tau_kd" => loss.tau_kd,
        "loss.t_energy" => loss.t_energy,
        "loss.alpha_g" => loss.alpha_g,
        "loss.alpha_e" => loss.alpha_e,
        "loss.alpha_a" => loss.alpha_a,
        "loss.beta_a" => loss.beta_a,
        "teacher.epochs" => teacher.epochs,
        "teacher.batch_b" => teacher.batch_b,
        "teacher.lr" => teacher.lr,
        "teacher.weight_decay" => teacher.weight_decay,
        "teacher.patience" => teacher.patience,
        "teacher.seed" => teacher.seed,
        "module1.epochs" => module1.epochs,
        "module1.batch_b" => module1.batch_b,
        "module1.inner_steps" => module1.inner_steps,
        "module1.lr_g" => module1.lr_g,
        "module1.lr_e" => module1.lr_e,
        "module1.lr_s" => module1.lr_s,
        "module1.fresh_inner_z" => module1.fresh_inner_z,
        "module1.seed" => module1.seed,
        "module2.epochs" => module2.epochs,
        "module2.batch_b" => module2.batch_b,
        "module2.lr_a" => module2.lr_a,
        "module2.seed" => module2.seed,
        "module3.epochs" => module3.epochs,
        "module3.batch_b" => module3.batch_b,
        "module3.lr_s" => module3.lr_s,
        "module3.weight_decay" => module3.weight_decay,
        "module3.scheduler.a" => module3.a,
        "module3.scheduler.b" => module3.b,
        "module3.kl_only" => module3.kl_only,
        "module3.swap_interpolation" => module3.swap_interpolation,
        "module3.seed" => module3.seed,
        "baseline.name" => baseline.name,
        "baseline.epochs" => baseline.epochs,
        "baseline.batch_b" => baseline.batch_b,
        "baseline.lr" => baseline.lr,
        "baseline.weight_decay" => baseline.weight_decay,
        "run.seeds" => seeds,
        "run.out_dir" => out_dir,
    ]
}

impl RunConfig {
    /// Canonical textual form: every key, fixed order, `key = value` lines.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in key_table() {
            out.push_str(key.name);
            out.push_str(" = ");
            out.push_str(&(key.get)(self));
            out.push('\n');
        }
        out
    }

    /// SHA-256 over the canonical serialization, excluding `run.out_dir`;
    /// embedded in every artifact. The output directory is pure logistics —
    /// it cannot affect any computed value — so relocating a run does not
    /// change its identity.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for key in key_table() {
            if key.name == "run.out_dir" {
                continue;
            }
            h.update(key.name.as_bytes());
            h.update(b" = ");
            h.update((key.get)(self).as_bytes());
            h.update(b"\n");
        }
        seeding::hex(&h.finalize())
    }

    /// Parse a config file's text. Starts from the defaults, applies each
    /// `key = value` line, rejects unknown or repeated keys, then validates.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&'static str> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (raw_key, raw_value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (raw_key, raw_value) = (raw_key.trim(), raw_value.trim());
            let key = cfg.apply(raw_key, raw_value).map_err(|e| {
                Error::invalid(format!("line {}: {e}", lineno + 1))
            })?;
            if seen.contains(&key) {
                return Err(Error::invalid(format!(
                    "line {}: duplicate key `{raw_key}`",
                    lineno + 1
                )));
            }
            seen.push(key);
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Apply `key=value` override pairs (e.g. from command-line flags) on top
    /// of this config, then re-validate. Later pairs win over earlier ones.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, pairs: &[(S, S)]) -> Result<()> {
        for (key, value) in pairs {
            self.apply(key.as_ref().trim(), value.as_ref().trim())?;
        }
        self.finish()
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<&'static str> {
        for entry in key_table() {
            if entry.name == key {
                (entry.set)(self, value)?;
                return Ok(entry.name);
            }
        }
        Err(Error::invalid(format!("unknown config key `{key}`")))
    }

    /// Re-derive coupled fields and validate the whole configuration.
    fn finish(&mut self) -> Result<()> {
        self.loss.n_z = self.sizes.nz;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.data_teacher.validate()?;
        self.data_student.validate()?;
        self.sizes.validate()?;
        self.loss.validate()?;
        self.teacher.validate()?;
        self.module1.validate()?;
        self.module2.validate()?;
        self.module3.validate()?;
        self.baseline.validate()?;
        if self.data_teacher.k != self.data_student.k {
            return Err(Error::invalid(
                "teacher and student domains must have the same class count",
            ));
        }
        if self.data_teacher.d_inv != self.data_student.d_inv
            || self.data_teacher.d_spu != self.data_student.d_spu
        {
            return Err(Error::invalid(
                "teacher and student domains must share the same feature layout",
            ));
        }
        if self.sizes.d != self.data_teacher.dim() {
            return Err(Error::invalid(format!(
                "sizes.d = {} does not match the data dimension {}",
                self.sizes.d,
                self.data_teacher.dim()
            )));
        }
        if self.sizes.k != self.data_teacher.k {
            return Err(Error::invalid(format!(
                "sizes.k = {} does not match the data class count {}",
                self.sizes.k, self.data_teacher.k
            )));
        }
        if self.loss.n_z != self.sizes.nz {
            return Err(Error::invalid(
                "loss.n_z is derived from sizes.nz and must match it",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("run.seeds must list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::invalid("run.seeds must not repeat a seed"));
        }
        if self.out_dir.is_empty() {
            return Err(Error::invalid("run.out_dir must not be empty"));
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_digest_is_stable() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.serialize();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.serialize(), text);
        assert_eq!(cfg.digest(), RunConfig::default().digest());
        assert_eq!(cfg.digest().len(), 64);
    }

    #[test]
    fn every_key_round_trips_through_its_own_serialization() {
        // Parse the canonical text with lines reversed: order independence
        // plus per-key set coverage in one shot.
        let cfg = RunConfig::default();
        let reversed: String = cfg
            .serialize()
            .lines()
            .rev()
            .map(|l| format!("{l}\n"))
            .collect();
        let back = RunConfig::parse(&reversed).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_blanks_and_non_defaults_parse() {
        let text = "\n# experiment knobs\n  module3.scheduler.a = 0.45\nmodule3.scheduler.b=0.05\nloss.alpha_g = 12.5\nrun.seeds = 5, 6\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.module3.a, 0.45);
        assert_eq!(cfg.module3.b, 0.05);
        assert_eq!(cfg.loss.alpha_g, 12.5);
        assert_eq!(cfg.seeds, vec![5, 6]);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.module1.inner_steps, RunConfig::default().module1.inner_steps);
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_are_rejected() {
        let unknown = RunConfig::parse("module9.lr = 3\n").unwrap_err();
        assert!(unknown.to_string().contains("unknown config key"), "{unknown}");
        let dup = RunConfig::parse("loss.tau_kd = 5\nloss.tau_kd = 6\n").unwrap_err();
        assert!(dup.to_string().contains("duplicate"), "{dup}");
        let bare = RunConfig::parse("loss.tau_kd\n").unwrap_err();
        assert!(bare.to_string().contains("line 1"), "{bare}");
        let bad_num = RunConfig::parse("loss.tau_kd = warm\n").unwrap_err();
        assert!(bad_num.to_string().contains("expected a number"), "{bad_num}");
    }

    #[test]
    fn digest_tracks_every_value_change() {
        let base = RunConfig::default().digest();
        let mut cfg = RunConfig::default();
        cfg.module3.b = 0.25;
        assert_ne!(cfg.digest(), base);
        let mut cfg = RunConfig::default();
        cfg.seeds = vec![2021];
        assert_ne!(cfg.digest(), base);
        // Relocating the output directory is logistics, not identity.
        let mut cfg = RunConfig::default();
        cfg.out_dir = "elsewhere".into();
        assert_eq!(cfg.digest(), base);
    }

    #[test]
    fn latent_width_is_coupled_to_sizes() {
        let cfg = RunConfig::parse("sizes.nz = 8\n").unwrap();
        assert_eq!(cfg.loss.n_z, 8);
        assert_eq!(cfg.sizes.nz, 8);
    }

    #[test]
    fn overrides_win_and_revalidate() {
        let mut cfg = RunConfig::parse("module3.scheduler.b = 0.1\n").unwrap();
        cfg.apply_overrides(&[("module3.scheduler.b", "0.9")]).unwrap();
        assert_eq!(cfg.module3.b, 0.9);
        let err = cfg.apply_overrides(&[("module3.scheduler.a", "0")]).unwrap_err();
        assert!(err.to_string().contains("a"), "{err}");
    }

    #[test]
    fn cross_field_validation() {
        assert!(RunConfig::parse("sizes.d = 21\n").is_err(), "dimension mismatch");
        assert!(RunConfig::parse("data.student.k = 3\n").is_err(), "class mismatch");
        assert!(RunConfig::parse("run.seeds = 1,1\n").is_err(), "repeated seed");
        assert!(RunConfig::parse("baseline.name = resnet\n").is_err(), "bogus baseline");
        // A consistent reshape passes.
        let text = "sizes.d = 6\nsizes.k = 3\ndata.teacher.k = 3\ndata.student.k = 3\n\
                    data.teacher.d_inv = 3\ndata.teacher.d_spu = 3\n\
                    data.student.d_inv = 3\ndata.student.d_spu = 3\n";
        RunConfig::parse(text).unwrap();
    }

    #[test]
    fn full_scale_profile_validates() {
        let cfg = full_scale();
        cfg.validate().unwrap();
        assert_eq!(cfg.sizes.nz, 256);
        assert_eq!(cfg.loss.n_z, 256);
        let back = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(back, cfg);
    }
}
