//! Batch normalization over features (2-d input) or channels (3-d input).
//!
//! Three forward modes:
//! * `Train` — normalize with batch statistics (built from primitives, so the
//!   full batch-norm gradient flows), then fold the batch statistics into the
//!   running buffers.
//! * `Eval` — normalize with the running buffers; a deterministic affine map
//!   that is still differentiable with respect to the input.
//! * `Capture` — like `Eval`, but additionally emits the batch statistics of
//!   the layer input as graph tensors so a downstream loss can match them
//!   against the running buffers. Running buffers are never mutated.
//!
//! Variance is the population (biased) estimator throughout, so running
//! statistics and batch statistics are directly comparable.

use crate::error::{Error, Result};

use super::ops;
use super::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
    Capture,
}

/// Batch statistics captured during a `Capture`-mode forward, paired with the
/// running buffers they are expected to match.
pub struct BnCapture {
    pub batch_mean: Tensor,
    pub batch_var: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub width: usize,
}

pub struct BatchNorm {
    pub name: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    width: usize,
}

impl BatchNorm {
    pub fn new(name: &str, width: usize) -> BatchNorm {
        let gamma = Tensor::parameter(format!("{name}.gamma"), &[width], vec![1.0; width])
            .expect("batchnorm gamma");
        let beta = Tensor::parameter(format!("{name}.beta"), &[width], vec![0.0; width])
            .expect("batchnorm beta");
        BatchNorm {
            name: name.to_string(),
            gamma,
            beta,
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: 0.1,
            eps: 1e-5,
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, Option<usize>)> {
        match x.shape() {
            [b, w] if *w == self.width => Ok((*b, None)),
            [b, c, l] if *c == self.width => Ok((*b, Some(*l))),
            s => Err(Error::Shape {
                op: "batchnorm",
                detail: format!("input {s:?} does not match width {}", self.width),
            }),
        }
    }

    /// Batch mean/variance of `x` as graph tensors, per feature or channel.
    fn batch_stats(&self, x: &Tensor, l: Option<usize>) -> Result<(Tensor, Tensor)> {
        let (mean, centered) = match l {
            None => {
                let m = ops::mean_axis0(x)?;
                let c = ops::sub(x, &ops::broadcast_row(&m, x.shape()[0])?)?;
                (m, c)
            }
            Some(l) => {
                let m = ops::channel_mean(x)?;
                let c = ops::sub(x, &ops::broadcast_channel(&m, x.shape()[0], l)?)?;
                (m, c)
            }
        };
        let sq = ops::mul(&centered, &centered)?;
        let var = match l {
            None => ops::mean_axis0(&sq)?,
            Some(_) => ops::channel_mean(&sq)?,
        };
        Ok((mean, var))
    }

    fn normalize(&self, x: &Tensor, mean: &Tensor, var: &Tensor, l: Option<usize>) -> Result<Tensor> {
        let b = x.shape()[0];
        let std = ops::sqrt(&ops::add_scalar(var, self.eps));
        let (bm, bs, bg, bb) = match l {
            None => (
                ops::broadcast_row(mean, b)?,
                ops::broadcast_row(&std, b)?,
                ops::broadcast_row(&self.gamma, b)?,
                ops::broadcast_row(&self.beta, b)?,
            ),
            Some(l) => (
                ops::broadcast_channel(mean, b, l)?,
                ops::broadcast_channel(&std, b, l)?,
                ops::broadcast_channel(&self.gamma, b, l)?,
                ops::broadcast_channel(&self.beta, b, l)?,
            ),
        };
        let normed = ops::div(&ops::sub(x, &bm)?, &bs)?;
        ops::add(&ops::mul(&normed, &bg)?, &bb)
    }

    pub fn forward(
        &mut self,
        x: &Tensor,
        mode: Mode,
        captures: Option<&mut Vec<BnCapture>>,
    ) -> Result<Tensor> {
        let (b, l) = self.check_input(x)?;
        match mode {
            Mode::Train => {
                let count = b * l.unwrap_or(1);
                if count < 2 {
                    return Err(Error::invalid(format!(
                        "batchnorm in train mode needs at least 2 samples per feature, got {count}"
                    )));
                }
                let (mean, var) = self.batch_stats(x, l)?;
                let out = self.normalize(x, &mean, &var, l)?;
                // Fold batch statistics into the running buffers (values only).
                let m = self.momentum;
                for (r, &bv) in self.running_mean.iter_mut().zip(mean.data().iter()) {
                    *r = (1.0 - m) * *r + m * bv;
                }
                for (r, &bv) in self.running_var.iter_mut().zip(var.data().iter()) {
                    *r = (1.0 - m) * *r + m * bv;
                }
                Ok(out)
            }
            Mode::Eval | Mode::Capture => {
                let rm = Tensor::from_vec(&[self.width], self.running_mean.clone())?;
                let rv = Tensor::from_vec(&[self.width], self.running_var.clone())?;
                let out = self.normalize(x, &rm, &rv, l)?;
                if mode == Mode::Capture {
                    if let Some(captures) = captures {
                        let count = b * l.unwrap_or(1);
                        if count < 2 {
                            return Err(Error::invalid(format!(
                                "batchnorm statistics capture needs at least 2 samples, got {count}"
                            )));
                        }
                        let (mean, var) = self.batch_stats(x, l)?;
                        captures.push(BnCapture {
                            batch_mean: mean,
                            batch_var: var,
                            running_mean: self.running_mean.clone(),
                            running_var: self.running_var.clone(),
                            width: self.width,
                        });
                    }
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> Tensor {
        Tensor::from_vec(&[4, 2], vec![1.0, 10.0, 3.0, 30.0, 5.0, 50.0, 7.0, 70.0]).unwrap()
    }

    #[test]
    fn train_mode_standardizes_batch() {
        let mut bn = BatchNorm::new("t", 2);
        let y = bn.forward(&batch(), Mode::Train, None).unwrap();
        let d = y.to_vec();
        // Column means ~0, population variance ~1 after normalization.
        for j in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| d[i * 2 + j]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3); // eps keeps it slightly below 1
        }
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut bn = BatchNorm::new("t", 2);
        bn.forward(&batch(), Mode::Train, None).unwrap();
        // running_mean = 0.9 * 0 + 0.1 * batch_mean, batch means are 4 and 40
        assert!((bn.running_mean[0] - 0.4).abs() < 1e-12);
        assert!((bn.running_mean[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_is_pure() {
        let mut bn = BatchNorm::new("t", 2);
        bn.forward(&batch(), Mode::Train, None).unwrap();
        let rm = bn.running_mean.clone();
        let rv = bn.running_var.clone();
        let y1 = bn.forward(&batch(), Mode::Eval, None).unwrap();
        let y2 = bn.forward(&batch(), Mode::Eval, None).unwrap();
        assert_eq!(y1.to_vec(), y2.to_vec());
        assert_eq!(bn.running_mean, rm);
        assert_eq!(bn.running_var, rv);
    }

    #[test]
    fn capture_mode_emits_stats_without_mutation() {
        let mut bn = BatchNorm::new("t", 2);
        let rm = bn.running_mean.clone();
        let mut caps = Vec::new();
        bn.forward(&batch(), Mode::Capture, Some(&mut caps)).unwrap();
        assert_eq!(caps.len(), 1);
        assert_eq!(bn.running_mean, rm);
        let means = caps[0].batch_mean.to_vec();
        assert!((means[0] - 4.0).abs() < 1e-12);
        assert!((means[1] - 40.0).abs() < 1e-12);
    }

    #[test]
    fn train_mode_rejects_single_sample() {
        let mut bn = BatchNorm::new("t", 2);
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert!(bn.forward(&x, Mode::Train, None).is_err());
    }

    #[test]
    fn channel_norm_matches_width() {
        let mut bn = BatchNorm::new("c", 3);
        let x = Tensor::zeros(&[2, 3, 5]);
        assert!(bn.forward(&x, Mode::Eval, None).is_ok());
        let bad = Tensor::zeros(&[2, 4, 5]);
        assert!(bn.forward(&bad, Mode::Eval, None).is_err());
    }
}
