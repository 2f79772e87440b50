//! Shared fixtures for the pipeline benchmarks: default-sized networks, a
//! seeded input batch, and a small student-domain dataset.

use oodkd_core::diffcore::Tensor;
use oodkd_core::domains::{generate, DomainDataset, DomainSpec};
use oodkd_core::models::{
    student_net, teacher_net, AnchorNet, Encoder, Generator, Mlp, ModelSizes, NormSpec,
};
use oodkd_core::seeding;

/// Every network the pipeline touches, at the default desk-scale sizes.
pub struct Rig {
    pub sizes: ModelSizes,
    pub norm: NormSpec,
    pub teacher: Mlp,
    pub student: Mlp,
    pub generator: Generator,
    pub encoder: Encoder,
    pub anchor: AnchorNet,
}

pub fn rig() -> Rig {
    let sizes = ModelSizes::default();
    Rig {
        norm: NormSpec::identity(sizes.d),
        teacher: teacher_net(&sizes, &mut seeding::stream(1, "bench.teacher")),
        student: student_net(&sizes, &mut seeding::stream(1, "bench.student")),
        generator: Generator::new(&sizes, &mut seeding::stream(1, "bench.generator")),
        encoder: Encoder::new(&sizes, &mut seeding::stream(1, "bench.encoder")),
        anchor: AnchorNet::new(&sizes, &mut seeding::stream(1, "bench.anchor")),
        sizes,
    }
}

/// A reproducible `[n, d]` input batch.
pub fn input_batch(n: usize, d: usize) -> Tensor {
    Tensor::randn(&[n, d], &mut seeding::stream(2, "bench.x"))
}

/// A reproducible `[n, nz]` latent batch.
pub fn latent_batch(n: usize, nz: usize) -> Tensor {
    Tensor::randn(&[n, nz], &mut seeding::stream(2, "bench.z"))
}

/// Cycled labels for `n` rows over `k` classes.
pub fn labels(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i % k).collect()
}

/// A small student-domain dataset at the default feature layout.
pub fn small_dataset(n_per_class: usize) -> DomainDataset {
    let spec = DomainSpec {
        n_per_class,
        ..DomainSpec::default_student()
    };
    generate(&spec, "bench").expect("valid spec")
}
