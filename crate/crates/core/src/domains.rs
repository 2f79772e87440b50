//! Synthetic spurious-correlation benchmark.
//!
//! Each domain draws class-conditional Gaussians over `d_inv + d_spu`
//! features. The invariant block places class means on a fixed circle of
//! radius 3.0 (three noise units at the default `sigma = 1.0`) — a pure
//! function of `(k, d_inv)`, so every domain of the same family shares it,
//! and shrinking `sigma` genuinely sharpens the classes instead of rescaling
//! the whole problem. The spurious block carries a class-aligned direction of
//! the same norm scaled by the domain's correlation `rho`; a teacher domain
//! with `rho = 0.9` and a student domain with `rho = -0.5` therefore disagree
//! about what the spurious features mean, which is exactly the shift the
//! distillation pipeline must survive.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct DomainSpec {
    pub k: usize,
    pub d_inv: usize,
    pub d_spu: usize,
    /// Spurious correlation in `[-1, 1]`: scales the class-aligned direction
    /// of the spurious block.
    pub rho: f64,
    pub sigma: f64,
    pub n_per_class: usize,
    pub seed: u64,
}

impl DomainSpec {
    pub fn default_teacher() -> DomainSpec {
        DomainSpec {
            k: 4,
            d_inv: 10,
            d_spu: 10,
            rho: 0.9,
            sigma: 1.0,
            n_per_class: 250,
            seed: 101,
        }
    }

    pub fn default_student() -> DomainSpec {
        DomainSpec {
            rho: -0.5,
            seed: 202,
            ..DomainSpec::default_teacher()
        }
    }

    pub fn dim(&self) -> usize {
        self.d_inv + self.d_spu
    }

    pub fn n(&self) -> usize {
        self.k * self.n_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {}", self.k)));
        }
        if self.d_inv == 0 {
            return Err(Error::invalid("d_inv must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be positive"));
        }
        Ok(())
    }
}

/// Distance of every class mean from the origin. `sigma` scales only the
/// noise, so this is a structural constant rather than a multiple of it.
pub const LAYOUT_RADIUS: f64 = 3.0;

/// Class means within a block of `dim` coordinates: a circle of radius
/// [`LAYOUT_RADIUS`] in the first two coordinates, zeros elsewhere. For
/// single-coordinate blocks the classes alternate sign on the one axis.
fn block_means(k: usize, dim: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| {
            let mut v = vec![0.0; dim];
            if dim >= 2 {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                v[0] = radius * angle.cos();
                v[1] = radius * angle.sin();
            } else if dim == 1 {
                v[0] = if c % 2 == 0 { radius } else { -radius };
            }
            v
        })
        .collect()
}

/// Invariant-block class means; identical for every domain sharing
/// `(k, d_inv)`.
pub fn invariant_class_means(spec: &DomainSpec) -> Vec<Vec<f64>> {
    block_means(spec.k, spec.d_inv, LAYOUT_RADIUS)
}

/// Spurious-block class directions (before scaling by `rho`).
pub fn spurious_class_dirs(spec: &DomainSpec) -> Vec<Vec<f64>> {
    block_means(spec.k, spec.d_spu, LAYOUT_RADIUS)
}

#[derive(Clone, Debug)]
pub struct DomainDataset {
    pub tag: String,
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl DomainDataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// All rows as a constant `[n, dim]` tensor.
    pub fn full_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.n(), self.dim], self.inputs.clone()).expect("dataset tensor")
    }

    /// Selected rows as a constant `[len, dim]` tensor.
    pub fn rows_tensor(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(&self.inputs[i * self.dim..(i + 1) * self.dim]);
        }
        Tensor::from_vec(&[idx.len(), self.dim], data).expect("dataset rows")
    }

    pub fn labels_for(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// Content digest over labels and raw feature bytes.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.tag.as_bytes());
        hasher.update([0x1f]);
        hasher.update((self.dim as u64).to_le_bytes());
        for &y in &self.labels {
            hasher.update((y as u64).to_le_bytes());
        }
        for &v in &self.inputs {
            hasher.update(v.to_le_bytes());
        }
        seeding::hex(&hasher.finalize())
    }
}

/// Materialize a domain: `n_per_class` draws per class, class-major order.
pub fn generate(spec: &DomainSpec, tag: &str) -> Result<DomainDataset> {
    spec.validate()?;
    let inv_means = invariant_class_means(spec);
    let spu_dirs = spurious_class_dirs(spec);
    let mut rng = seeding::stream(spec.seed, "domain.data");
    let dim = spec.dim();
    let mut inputs = Vec::with_capacity(spec.n() * dim);
    let mut labels = Vec::with_capacity(spec.n());
    for c in 0..spec.k {
        for _ in 0..spec.n_per_class {
            for j in 0..spec.d_inv {
                let noise: f64 = rng.sample(StandardNormal);
                inputs.push(inv_means[c][j] + spec.sigma * noise);
            }
            for j in 0..spec.d_spu {
                let noise: f64 = rng.sample(StandardNormal);
                inputs.push(spec.rho * spu_dirs[c][j] + spec.sigma * noise);
            }
            labels.push(c);
        }
    }
    Ok(DomainDataset {
        tag: tag.to_string(),
        dim,
        inputs,
        labels,
    })
}

/// Stratified 8:1:1 split. Within each class the remainder after the floor
/// allocation goes to train first, then validation. Every class must be able
/// to reach all three splits, which needs at least 10 samples per class.
pub fn split_811(ds: &DomainDataset, seed: u64) -> Result<(DomainDataset, DomainDataset, DomainDataset)> {
    let k = match ds.labels.iter().max() {
        Some(&m) => m + 1,
        None => return Err(Error::invalid("cannot split an empty dataset")),
    };
    if ds.n() < 10 * k {
        return Err(Error::invalid(format!(
            "split needs at least {} samples for {k} classes, got {}",
            10 * k,
            ds.n()
        )));
    }
    let mut rng = seeding::stream(seed, "split");
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..k {
        let mut idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.labels[i] == c).collect();
        let n_c = idx.len();
        if n_c < 10 {
            return Err(Error::invalid(format!(
                "class {c} has only {n_c} samples; stratified split needs at least 10"
            )));
        }
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        let mut n_train = (n_c * 8) / 10;
        let mut n_val = n_c / 10;
        let n_test = n_c / 10;
        let mut rem = n_c - n_train - n_val - n_test;
        if rem > 0 {
            n_train += 1;
            rem -= 1;
        }
        if rem > 0 {
            n_val += 1;
        }
        train_idx.extend_from_slice(&idx[..n_train]);
        val_idx.extend_from_slice(&idx[n_train..n_train + n_val]);
        test_idx.extend_from_slice(&idx[n_train + n_val..]);
    }
    let subset = |idx: &[usize], part: &str| DomainDataset {
        tag: format!("{}.{part}", ds.tag),
        dim: ds.dim,
        inputs: idx
            .iter()
            .flat_map(|&i| ds.inputs[i * ds.dim..(i + 1) * ds.dim].iter().copied())
            .collect(),
        labels: idx.iter().map(|&i| ds.labels[i]).collect(),
    };
    Ok((
        subset(&train_idx, "train"),
        subset(&val_idx, "val"),
        subset(&test_idx, "test"),
    ))
}

/// Accuracy of the exact Gaussian Bayes classifier fit to `train_spec`'s true
/// parameters, measured by Monte-Carlo on fresh draws from `eval_spec`.
/// Classes are sampled in rotation, so accuracy is balanced by construction.
pub fn bayes_oracle_accuracy(train_spec: &DomainSpec, eval_spec: &DomainSpec, n_mc: usize) -> Result<f64> {
    train_spec.validate()?;
    eval_spec.validate()?;
    if train_spec.k != eval_spec.k
        || train_spec.d_inv != eval_spec.d_inv
        || train_spec.d_spu != eval_spec.d_spu
    {
        return Err(Error::invalid(
            "bayes oracle requires domains of the same family (k, d_inv, d_spu)",
        ));
    }
    if n_mc == 0 {
        return Err(Error::invalid("bayes oracle needs at least one sample"));
    }
    let dim = train_spec.dim();
    // Classifier means from the training domain's true parameters. Equal
    // priors and shared isotropic covariance make it a nearest-mean rule.
    let inv = invariant_class_means(train_spec);
    let spu = spurious_class_dirs(train_spec);
    let means: Vec<Vec<f64>> = (0..train_spec.k)
        .map(|c| {
            let mut m = inv[c].clone();
            m.extend(spu[c].iter().map(|v| train_spec.rho * v));
            m
        })
        .collect();
    let eval_inv = invariant_class_means(eval_spec);
    let eval_spu = spurious_class_dirs(eval_spec);
    let tag = format!("bayes.{}.{}.{n_mc}", train_spec.seed, eval_spec.seed);
    let mut rng = seeding::stream(0, &tag);
    let mut correct = 0usize;
    let mut x = vec![0.0; dim];
    for i in 0..n_mc {
        let c = i % eval_spec.k;
        for j in 0..eval_spec.d_inv {
            let noise: f64 = rng.sample(StandardNormal);
            x[j] = eval_inv[c][j] + eval_spec.sigma * noise;
        }
        for j in 0..eval_spec.d_spu {
            let noise: f64 = rng.sample(StandardNormal);
            x[eval_spec.d_inv + j] = eval_spec.rho * eval_spu[c][j] + eval_spec.sigma * noise;
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (cls, m) in means.iter().enumerate() {
            let d2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best_d {
                best_d = d2;
                best = cls;
            }
        }
        if best == c {
            correct += 1;
        }
    }
    Ok(correct as f64 / n_mc as f64)
}

// ---------------------------------------------------------------------------
// Dataset dump / load
// ---------------------------------------------------------------------------

/// Write the dataset as delimiter-separated text with a header row, plus a
/// `<path>.spec` sidecar recording the generating spec and tag. Floats are
/// printed in shortest round-trip form, so a load/dump cycle is
/// byte-identical.
pub fn dump(ds: &DomainDataset, spec: &DomainSpec, path: &Path) -> Result<()> {
    dump_inner(ds, spec, path, None)
}

/// Like [`dump`], but stamps the file with the run's config digest as a
/// leading `# config_digest = ...` comment so the artifact's provenance is
/// recoverable. [`load`] skips comment lines.
pub fn dump_tagged(
    ds: &DomainDataset,
    spec: &DomainSpec,
    path: &Path,
    config_digest: &str,
) -> Result<()> {
    dump_inner(ds, spec, path, Some(config_digest))
}

fn dump_inner(
    ds: &DomainDataset,
    spec: &DomainSpec,
    path: &Path,
    config_digest: Option<&str>,
) -> Result<()> {
    let mut out = String::new();
    if let Some(digest) = config_digest {
        out.push_str(&format!("# config_digest = {digest}\n"));
    }
    out.push_str("label");
    for j in 0..ds.dim {
        out.push_str(&format!(",x_{j}"));
    }
    out.push('\n');
    for (i, &y) in ds.labels.iter().enumerate() {
        out.push_str(&y.to_string());
        for j in 0..ds.dim {
            out.push(',');
            out.push_str(&format!("{}", ds.inputs[i * ds.dim + j]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    let mut side = std::fs::File::create(sidecar_path(path))?;
    writeln!(side, "tag = {}", ds.tag)?;
    writeln!(side, "k = {}", spec.k)?;
    writeln!(side, "d_inv = {}", spec.d_inv)?;
    writeln!(side, "d_spu = {}", spec.d_spu)?;
    writeln!(side, "rho = {}", spec.rho)?;
    writeln!(side, "sigma = {}", spec.sigma)?;
    writeln!(side, "n_per_class = {}", spec.n_per_class)?;
    writeln!(side, "seed = {}", spec.seed)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".spec");
    os.into()
}

/// Read a dataset written by [`dump`]. Parse failures report the byte offset
/// of the offending line.
pub fn load(path: &Path) -> Result<(DomainDataset, DomainSpec)> {
    let text = std::fs::read_to_string(path)?;
    let mut offset = 0u64;
    let mut lines = text.lines();
    let header = loop {
        let line = lines.next().ok_or(Error::Format {
            offset,
            detail: "empty dataset file".into(),
        })?;
        if line.starts_with('#') {
            offset += line.len() as u64 + 1;
            continue;
        }
        break line;
    };
    let dim = header.split(',').count().saturating_sub(1);
    if dim == 0 || !header.starts_with("label") {
        return Err(Error::Format {
            offset,
            detail: format!("bad header: {header}"),
        });
    }
    offset += header.len() as u64 + 1;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for line in lines {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let y: usize = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|e| Error::Format {
                offset: line_offset,
                detail: format!("bad label: {e}"),
            })?;
        labels.push(y);
        let mut count = 0;
        for f in fields {
            let v: f64 = f.parse().map_err(|e| Error::Format {
                offset: line_offset,
                detail: format!("bad value {f:?}: {e}"),
            })?;
            inputs.push(v);
            count += 1;
        }
        if count != dim {
            return Err(Error::Format {
                offset: line_offset,
                detail: format!("row has {count} features, header promised {dim}"),
            });
        }
    }
    let side = std::fs::read_to_string(sidecar_path(path))?;
    let mut tag = String::new();
    let mut spec = DomainSpec::default_teacher();
    for (lineno, line) in side.lines().enumerate() {
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format {
                offset: lineno as u64,
                detail: format!("bad sidecar line: {line}"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let parse_err = |e: String| Error::Format {
            offset: lineno as u64,
            detail: format!("sidecar {key}: {e}"),
        };
        match key {
            "tag" => tag = value.to_string(),
            "k" => spec.k = value.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
            "d_inv" => spec.d_inv = value.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
            "d_spu" => spec.d_spu = value.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
            "rho" => spec.rho = value.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?,
            "sigma" => spec.sigma = value.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?,
            "n_per_class" => spec.n_per_class = value.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
            "seed" => spec.seed = value.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
            other => {
                return Err(Error::Format {
                    offset: lineno as u64,
                    detail: format!("unknown sidecar key: {other}"),
                })
            }
        }
    }
    Ok((
        DomainDataset {
            tag,
            dim,
            inputs,
            labels,
        },
        spec,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_generate_balanced_data() {
        let spec = DomainSpec::default_teacher();
        let ds = generate(&spec, "teacher").unwrap();
        assert_eq!(ds.n(), 1000);
        assert_eq!(ds.dim, 20);
        for c in 0..4 {
            assert_eq!(ds.labels.iter().filter(|&&y| y == c).count(), 250);
        }
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let spec = DomainSpec::default_student();
        let a = generate(&spec, "student").unwrap();
        let b = generate(&spec, "student").unwrap();
        assert_eq!(a.digest(), b.digest());
        let other = DomainSpec { seed: 9, ..spec };
        assert_ne!(generate(&other, "student").unwrap().digest(), a.digest());
    }

    #[test]
    fn domains_share_invariant_means() {
        let t = DomainSpec::default_teacher();
        let s = DomainSpec::default_student();
        assert_eq!(invariant_class_means(&t), invariant_class_means(&s));
        for m in invariant_class_means(&t) {
            let norm: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_means_near_population_means() {
        let spec = DomainSpec::default_teacher();
        let ds = generate(&spec, "t").unwrap();
        let inv = invariant_class_means(&spec);
        // Class 0 empirical mean of the first coordinate ~ N(3, 1/250).
        let rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.labels[i] == 0).collect();
        let m: f64 = rows.iter().map(|&i| ds.inputs[i * ds.dim]).sum::<f64>() / rows.len() as f64;
        assert!((m - inv[0][0]).abs() < 0.3, "sample mean {m}");
    }

    #[test]
    fn split_counts_and_coverage() {
        let ds = generate(&DomainSpec::default_teacher(), "t").unwrap();
        let (tr, va, te) = split_811(&ds, 2021).unwrap();
        assert_eq!((tr.n(), va.n(), te.n()), (800, 100, 100));
        for part in [&tr, &va, &te] {
            for c in 0..4 {
                assert!(part.labels.contains(&c), "class {c} missing from {}", part.tag);
            }
        }
    }

    #[test]
    fn split_remainder_favors_train_then_val() {
        // 13 per class: expect 11/1/1 after the floor allocation (10/1/1)
        // hands its remainder to train.
        let spec = DomainSpec {
            n_per_class: 13,
            ..DomainSpec::default_teacher()
        };
        let ds = generate(&spec, "t").unwrap();
        let (tr, va, te) = split_811(&ds, 3).unwrap();
        assert_eq!((tr.n(), va.n(), te.n()), (44, 4, 4));
        // 19 per class: floors 15/1/1, remainder 2 -> 16/2/1.
        let spec = DomainSpec {
            n_per_class: 19,
            ..DomainSpec::default_teacher()
        };
        let ds = generate(&spec, "t").unwrap();
        let (tr, va, te) = split_811(&ds, 3).unwrap();
        assert_eq!((tr.n(), va.n(), te.n()), (64, 8, 4));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let ds = generate(&DomainSpec::default_teacher(), "t").unwrap();
        let (a, _, _) = split_811(&ds, 2021).unwrap();
        let (b, _, _) = split_811(&ds, 2021).unwrap();
        assert_eq!(a.digest(), b.digest());
        let (c, _, _) = split_811(&ds, 2022).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn split_partitions_are_disjoint_and_complete() {
        let ds = generate(&DomainSpec::default_teacher(), "t").unwrap();
        let (tr, va, te) = split_811(&ds, 7).unwrap();
        assert_eq!(tr.n() + va.n() + te.n(), ds.n());
        // Feature multisets must partition the original: compare sums.
        let total: f64 = ds.inputs.iter().sum();
        let parts: f64 = tr.inputs.iter().sum::<f64>()
            + va.inputs.iter().sum::<f64>()
            + te.inputs.iter().sum::<f64>();
        assert!((total - parts).abs() < 1e-9);
    }

    #[test]
    fn split_rejects_tiny_datasets() {
        let spec = DomainSpec {
            n_per_class: 2,
            ..DomainSpec::default_teacher()
        };
        let ds = generate(&spec, "t").unwrap();
        assert!(split_811(&ds, 1).is_err());
    }

    #[test]
    fn oracle_prefers_its_own_domain() {
        let t = DomainSpec::default_teacher();
        let s = DomainSpec::default_student();
        let self_acc = bayes_oracle_accuracy(&t, &t, 4000).unwrap();
        let cross_acc = bayes_oracle_accuracy(&t, &s, 4000).unwrap();
        assert!(self_acc > cross_acc, "self {self_acc} vs cross {cross_acc}");
    }

    #[test]
    fn oracle_gap_exceeds_ten_points_at_defaults() {
        let t = DomainSpec::default_teacher();
        let s = DomainSpec::default_student();
        let self_acc = bayes_oracle_accuracy(&t, &t, 20000).unwrap();
        let cross_acc = bayes_oracle_accuracy(&t, &s, 20000).unwrap();
        assert!(
            self_acc - cross_acc > 0.10,
            "gap {:.4} (self {self_acc:.4}, cross {cross_acc:.4})",
            self_acc - cross_acc
        );
    }

    #[test]
    fn oracle_approaches_one_when_noise_vanishes() {
        let spec = DomainSpec {
            rho: 0.0,
            sigma: 0.01,
            ..DomainSpec::default_teacher()
        };
        let acc = bayes_oracle_accuracy(&spec, &spec, 2000).unwrap();
        assert!(acc > 0.999, "{acc}");
    }

    #[test]
    fn oracle_rejects_mismatched_families() {
        let t = DomainSpec::default_teacher();
        let other = DomainSpec { d_inv: 5, ..t };
        assert!(bayes_oracle_accuracy(&t, &other, 10).is_err());
    }

    #[test]
    fn dump_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.csv");
        let spec = DomainSpec {
            n_per_class: 12,
            ..DomainSpec::default_teacher()
        };
        let ds = generate(&spec, "teacher").unwrap();
        dump(&ds, &spec, &path).unwrap();
        let (loaded, loaded_spec) = load(&path).unwrap();
        assert_eq!(loaded.digest(), ds.digest());
        assert_eq!(loaded_spec, spec);
        // Re-dumping the loaded dataset reproduces the original bytes.
        let path2 = dir.path().join("again.csv");
        dump(&loaded, &loaded_spec, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn load_rejects_corrupt_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "label,x_0,x_1\n0,1.0,2.0\n1,oops,3.0\n").unwrap();
        std::fs::write(sidecar_path(&path), "tag = x\n").unwrap();
        let err = load(&path).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 24),
            other => panic!("expected format error, got {other}"),
        }
    }
}
