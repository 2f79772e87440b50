//! Differentiable primitives.
//!
//! Each function validates shapes, computes the forward value, and records a
//! vector-Jacobian product when any input participates in differentiation.
//! Shape errors name the offending primitive and the shapes involved.
//!
//! Conventions: matrices are `[rows, cols]` row-major; batches put the sample
//! axis first. The 1-D convolution is fixed at kernel 3, stride 1, padding 1,
//! which preserves length.

use crate::error::{Error, Result};

use super::tensor::Tensor;

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn want_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(shape_err(op, format!("expected 2-d tensor, got {s:?}"))),
    }
}

fn want_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("operands differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

/// Build a unary elementwise op from a value map and a local derivative that
/// sees `(x, y)` for each element.
fn unary(
    op: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let shape = x.shape().to_vec();
    Tensor::from_op(
        op,
        shape,
        data,
        vec![x.clone()],
        Box::new(move |dy, inputs, out| {
            let xv = inputs[0].data();
            let g = dy
                .iter()
                .zip(xv.iter().zip(out.iter()))
                .map(|(&d, (&x, &y))| d * df(x, y))
                .collect();
            vec![Some(g)]
        }),
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    unary("relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
}

/// Leaky rectifier with the given negative-side slope.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    unary(
        "leaky_relu",
        x,
        move |v| if v > 0.0 { v } else { slope * v },
        move |x, _| if x > 0.0 { 1.0 } else { slope },
    )
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    unary(
        "sigmoid",
        x,
        |v| 1.0 / (1.0 + (-v).exp()),
        |_, y| y * (1.0 - y),
    )
}

pub fn tanh(x: &Tensor) -> Tensor {
    unary("tanh", x, f64::tanh, |_, y| 1.0 - y * y)
}

/// `x / (1 + |x|)`, a bounded squashing into (-1, 1).
pub fn softsign(x: &Tensor) -> Tensor {
    unary(
        "softsign",
        x,
        |v| v / (1.0 + v.abs()),
        |x, _| {
            let d = 1.0 + x.abs();
            1.0 / (d * d)
        },
    )
}

pub fn exp(x: &Tensor) -> Tensor {
    unary("exp", x, f64::exp, |_, y| y)
}

pub fn ln(x: &Tensor) -> Tensor {
    unary("ln", x, f64::ln, |x, _| 1.0 / x)
}

pub fn sqrt(x: &Tensor) -> Tensor {
    unary("sqrt", x, f64::sqrt, |_, y| 0.5 / y)
}

/// |x|, with subgradient 0 at the origin.
pub fn abs(x: &Tensor) -> Tensor {
    unary("abs", x, f64::abs, |x, _| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// `max(x, c)` elementwise; gradient passes only where `x > c`.
pub fn clamp_min(x: &Tensor, c: f64) -> Tensor {
    unary(
        "clamp_min",
        x,
        move |v| v.max(c),
        move |x, _| if x > c { 1.0 } else { 0.0 },
    )
}

/// `c * x` for a plain constant.
pub fn scale(x: &Tensor, c: f64) -> Tensor {
    unary("scale", x, move |v| c * v, move |_, _| c)
}

/// `x + c` elementwise (subtracting a constant is `add_scalar(x, -c)`).
pub fn add_scalar(x: &Tensor, c: f64) -> Tensor {
    unary("add_scalar", x, move |v| v + c, |_, _| 1.0)
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    dfa: impl Fn(f64, f64) -> f64 + 'static,
    dfb: impl Fn(f64, f64) -> f64 + 'static,
) -> Result<Tensor> {
    want_same_shape(op, a, b)?;
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    let shape = a.shape().to_vec();
    Ok(Tensor::from_op(
        op,
        shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |dy, inputs, _| {
            let av = inputs[0].data();
            let bv = inputs[1].data();
            let ga = dy
                .iter()
                .zip(av.iter().zip(bv.iter()))
                .map(|(&d, (&x, &y))| d * dfa(x, y))
                .collect();
            let gb = dy
                .iter()
                .zip(av.iter().zip(bv.iter()))
                .map(|(&d, (&x, &y))| d * dfb(x, y))
                .collect();
            vec![Some(ga), Some(gb)]
        }),
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(
        "div",
        a,
        b,
        |x, y| x / y,
        |_, y| 1.0 / y,
        |x, y| -x / (y * y),
    )
}

// ---------------------------------------------------------------------------
// Affine and convolution
// ---------------------------------------------------------------------------

/// `x @ w + bias` with `x: [b, n]`, `w: [n, m]`, `bias: [m]`.
pub fn affine(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, n) = want_2d("affine", x)?;
    let (wn, m) = want_2d("affine", w)?;
    if wn != n || bias.shape() != [m] {
        return Err(shape_err(
            "affine",
            format!(
                "x {:?} @ w {:?} + bias {:?}",
                x.shape(),
                w.shape(),
                bias.shape()
            ),
        ));
    }
    let xv = x.data();
    let wv = w.data();
    let bv = bias.data();
    let mut out = vec![0.0; b * m];
    for i in 0..b {
        for k in 0..n {
            let xik = xv[i * n + k];
            if xik == 0.0 {
                continue;
            }
            let wrow = &wv[k * m..(k + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += xik * wrow[j];
            }
        }
        for j in 0..m {
            out[i * m + j] += bv[j];
        }
    }
    drop((xv, wv, bv));
    Ok(Tensor::from_op(
        "affine",
        vec![b, m],
        out,
        vec![x.clone(), w.clone(), bias.clone()],
        Box::new(move |dy, inputs, _| {
            let xv = inputs[0].data();
            let wv = inputs[1].data();
            // dx = dy @ w^T
            let mut dx = vec![0.0; b * n];
            for i in 0..b {
                for k in 0..n {
                    let mut s = 0.0;
                    for j in 0..m {
                        s += dy[i * m + j] * wv[k * m + j];
                    }
                    dx[i * n + k] = s;
                }
            }
            // dw = x^T @ dy
            let mut dw = vec![0.0; n * m];
            for i in 0..b {
                for k in 0..n {
                    let xik = xv[i * n + k];
                    if xik == 0.0 {
                        continue;
                    }
                    for j in 0..m {
                        dw[k * m + j] += xik * dy[i * m + j];
                    }
                }
            }
            // db = column sums of dy
            let mut db = vec![0.0; m];
            for i in 0..b {
                for j in 0..m {
                    db[j] += dy[i * m + j];
                }
            }
            vec![Some(dx), Some(dw), Some(db)]
        }),
    ))
}

/// 1-D convolution, kernel 3, stride 1, padding 1 (length-preserving).
/// `x: [b, c_in, l]`, `w: [c_out, c_in, 3]`, `bias: [c_out]`.
pub fn conv1d(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, ci, l) = match x.shape() {
        [b, c, l] => (*b, *c, *l),
        s => {
            return Err(shape_err(
                "conv1d",
                format!("expected 3-d input [b, c, l], got {s:?}"),
            ))
        }
    };
    let (co, wci, k) = match w.shape() {
        [o, i, k] => (*o, *i, *k),
        s => {
            return Err(shape_err(
                "conv1d",
                format!("expected 3-d weight [c_out, c_in, k], got {s:?}"),
            ))
        }
    };
    if wci != ci || k != 3 || bias.shape() != [co] {
        return Err(shape_err(
            "conv1d",
            format!(
                "x {:?} * w {:?} + bias {:?} (kernel must be 3)",
                x.shape(),
                w.shape(),
                bias.shape()
            ),
        ));
    }
    let xv = x.data();
    let wv = w.data();
    let bv = bias.data();
    let mut out = vec![0.0; b * co * l];
    for bi in 0..b {
        for o in 0..co {
            for t in 0..l {
                let mut s = bv[o];
                for i in 0..ci {
                    for kk in 0..3usize {
                        let src = t as isize + kk as isize - 1;
                        if src < 0 || src >= l as isize {
                            continue;
                        }
                        s += wv[(o * ci + i) * 3 + kk] * xv[(bi * ci + i) * l + src as usize];
                    }
                }
                out[(bi * co + o) * l + t] = s;
            }
        }
    }
    drop((xv, wv, bv));
    Ok(Tensor::from_op(
        "conv1d",
        vec![b, co, l],
        out,
        vec![x.clone(), w.clone(), bias.clone()],
        Box::new(move |dy, inputs, _| {
            let xv = inputs[0].data();
            let wv = inputs[1].data();
            let mut dx = vec![0.0; b * ci * l];
            let mut dw = vec![0.0; co * ci * 3];
            let mut db = vec![0.0; co];
            for bi in 0..b {
                for o in 0..co {
                    for t in 0..l {
                        let d = dy[(bi * co + o) * l + t];
                        db[o] += d;
                        for i in 0..ci {
                            for kk in 0..3usize {
                                let src = t as isize + kk as isize - 1;
                                if src < 0 || src >= l as isize {
                                    continue;
                                }
                                let xi = (bi * ci + i) * l + src as usize;
                                dw[(o * ci + i) * 3 + kk] += d * xv[xi];
                                dx[xi] += d * wv[(o * ci + i) * 3 + kk];
                            }
                        }
                    }
                }
            }
            vec![Some(dx), Some(dw), Some(db)]
        }),
    ))
}

// ---------------------------------------------------------------------------
// Structure: reshape, concatenation
// ---------------------------------------------------------------------------

/// Reinterpret the data under a new shape of equal size. Gradient passes
/// through unchanged.
pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != x.len() {
        return Err(shape_err(
            "reshape",
            format!("{:?} ({} values) -> {:?} ({} values)", x.shape(), x.len(), shape, n),
        ));
    }
    Ok(Tensor::from_op(
        "reshape",
        shape.to_vec(),
        x.to_vec(),
        vec![x.clone()],
        Box::new(|dy, _, _| vec![Some(dy.to_vec())]),
    ))
}

/// Stack two 2-d tensors along the row (sample) axis.
pub fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = want_2d("concat_rows", a)?;
    let (rb, cb) = want_2d("concat_rows", b)?;
    if ca != cb {
        return Err(shape_err(
            "concat_rows",
            format!("column counts differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut data = a.to_vec();
    data.extend_from_slice(&b.data());
    Ok(Tensor::from_op(
        "concat_rows",
        vec![ra + rb, ca],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |dy, _, _| {
            let split = ra * ca;
            vec![Some(dy[..split].to_vec()), Some(dy[split..].to_vec())]
        }),
    ))
}

/// Concatenate two 2-d tensors along the feature (column) axis.
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, ca) = want_2d("concat_cols", a)?;
    let (rb, cb) = want_2d("concat_cols", b)?;
    if ra != rb {
        return Err(shape_err(
            "concat_cols",
            format!("row counts differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let av = a.data();
    let bv = b.data();
    let mut data = Vec::with_capacity(ra * (ca + cb));
    for i in 0..ra {
        data.extend_from_slice(&av[i * ca..(i + 1) * ca]);
        data.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
    }
    drop((av, bv));
    Ok(Tensor::from_op(
        "concat_cols",
        vec![ra, ca + cb],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |dy, _, _| {
            let mut ga = vec![0.0; ra * ca];
            let mut gb = vec![0.0; ra * cb];
            for i in 0..ra {
                let row = &dy[i * (ca + cb)..(i + 1) * (ca + cb)];
                ga[i * ca..(i + 1) * ca].copy_from_slice(&row[..ca]);
                gb[i * cb..(i + 1) * cb].copy_from_slice(&row[ca..]);
            }
            vec![Some(ga), Some(gb)]
        }),
    ))
}

// ---------------------------------------------------------------------------
// Row-wise softmax family
// ---------------------------------------------------------------------------

/// Numerically stable row-wise log-softmax of a `[b, k]` tensor.
pub fn log_softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (b, k) = want_2d("log_softmax_rows", x)?;
    if k == 0 {
        return Err(shape_err("log_softmax_rows", "zero-width rows".into()));
    }
    let xv = x.data();
    let mut out = vec![0.0; b * k];
    for i in 0..b {
        let row = &xv[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + s.ln();
        for j in 0..k {
            out[i * k + j] = row[j] - lse;
        }
    }
    drop(xv);
    Ok(Tensor::from_op(
        "log_softmax_rows",
        vec![b, k],
        out,
        vec![x.clone()],
        Box::new(move |dy, _, out| {
            // dx = dy - softmax(x) * rowsum(dy), with softmax = exp(out)
            let mut dx = vec![0.0; b * k];
            for i in 0..b {
                let s: f64 = dy[i * k..(i + 1) * k].iter().sum();
                for j in 0..k {
                    dx[i * k + j] = dy[i * k + j] - out[i * k + j].exp() * s;
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Numerically stable row-wise log-sum-exp of a `[b, k]` tensor, returning `[b]`.
pub fn logsumexp_rows(x: &Tensor) -> Result<Tensor> {
    let (b, k) = want_2d("logsumexp_rows", x)?;
    if k == 0 {
        return Err(shape_err("logsumexp_rows", "zero-width rows".into()));
    }
    let xv = x.data();
    let mut out = vec![0.0; b];
    for i in 0..b {
        let row = &xv[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        out[i] = m + s.ln();
    }
    drop(xv);
    Ok(Tensor::from_op(
        "logsumexp_rows",
        vec![b],
        out,
        vec![x.clone()],
        Box::new(move |dy, inputs, out| {
            let xv = inputs[0].data();
            let mut dx = vec![0.0; b * k];
            for i in 0..b {
                for j in 0..k {
                    dx[i * k + j] = dy[i] * (xv[i * k + j] - out[i]).exp();
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Select `x[i, labels[i]]` for each row, returning `[b]`. Labels are fixed
/// integers, not differentiated.
pub fn gather_labels(x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = want_2d("gather_labels", x)?;
    if labels.len() != b {
        return Err(shape_err(
            "gather_labels",
            format!("{} rows but {} labels", b, labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let xv = x.data();
    let out: Vec<f64> = labels.iter().enumerate().map(|(i, &y)| xv[i * k + y]).collect();
    drop(xv);
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        "gather_labels",
        vec![b],
        out,
        vec![x.clone()],
        Box::new(move |dy, _, _| {
            let mut dx = vec![0.0; b * k];
            for (i, &y) in labels.iter().enumerate() {
                dx[i * k + y] = dy[i];
            }
            vec![Some(dx)]
        }),
    ))
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts
// ---------------------------------------------------------------------------

/// Sum of all entries, as a scalar tensor.
pub fn sum_all(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().sum();
    let n = x.len();
    Tensor::from_op(
        "sum_all",
        vec![1],
        vec![s],
        vec![x.clone()],
        Box::new(move |dy, _, _| vec![Some(vec![dy[0]; n])]),
    )
}

/// Mean of all entries, as a scalar tensor.
pub fn mean_all(x: &Tensor) -> Tensor {
    let n = x.len();
    let s: f64 = x.data().iter().sum();
    Tensor::from_op(
        "mean_all",
        vec![1],
        vec![s / n as f64],
        vec![x.clone()],
        Box::new(move |dy, _, _| vec![Some(vec![dy[0] / n as f64; n])]),
    )
}

/// Row sums of a `[b, k]` tensor, returning `[b]`.
pub fn sum_rows(x: &Tensor) -> Result<Tensor> {
    let (b, k) = want_2d("sum_rows", x)?;
    let xv = x.data();
    let out: Vec<f64> = (0..b).map(|i| xv[i * k..(i + 1) * k].iter().sum()).collect();
    drop(xv);
    Ok(Tensor::from_op(
        "sum_rows",
        vec![b],
        out,
        vec![x.clone()],
        Box::new(move |dy, _, _| {
            let mut dx = vec![0.0; b * k];
            for i in 0..b {
                for j in 0..k {
                    dx[i * k + j] = dy[i];
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Per-column mean over the batch axis of a `[b, d]` tensor, returning `[d]`.
pub fn mean_axis0(x: &Tensor) -> Result<Tensor> {
    let (b, d) = want_2d("mean_axis0", x)?;
    if b == 0 {
        return Err(shape_err("mean_axis0", "empty batch".into()));
    }
    let xv = x.data();
    let mut out = vec![0.0; d];
    for i in 0..b {
        for j in 0..d {
            out[j] += xv[i * d + j];
        }
    }
    for v in &mut out {
        *v /= b as f64;
    }
    drop(xv);
    Ok(Tensor::from_op(
        "mean_axis0",
        vec![d],
        out,
        vec![x.clone()],
        Box::new(move |dy, _, _| {
            let mut dx = vec![0.0; b * d];
            for i in 0..b {
                for j in 0..d {
                    dx[i * d + j] = dy[j] / b as f64;
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Replicate a `[d]` vector across `b` rows, returning `[b, d]`.
pub fn broadcast_row(v: &Tensor, b: usize) -> Result<Tensor> {
    let d = match v.shape() {
        [d] => *d,
        s => return Err(shape_err("broadcast_row", format!("expected 1-d vector, got {s:?}"))),
    };
    let vv = v.data();
    let mut data = Vec::with_capacity(b * d);
    for _ in 0..b {
        data.extend_from_slice(&vv);
    }
    drop(vv);
    Ok(Tensor::from_op(
        "broadcast_row",
        vec![b, d],
        data,
        vec![v.clone()],
        Box::new(move |dy, _, _| {
            let mut g = vec![0.0; d];
            for i in 0..b {
                for j in 0..d {
                    g[j] += dy[i * d + j];
                }
            }
            vec![Some(g)]
        }),
    ))
}

/// Per-channel mean of a `[b, c, l]` tensor over batch and position, returning `[c]`.
pub fn channel_mean(x: &Tensor) -> Result<Tensor> {
    let (b, c, l) = match x.shape() {
        [b, c, l] => (*b, *c, *l),
        s => return Err(shape_err("channel_mean", format!("expected 3-d tensor, got {s:?}"))),
    };
    let count = b * l;
    if count == 0 {
        return Err(shape_err("channel_mean", "empty batch".into()));
    }
    let xv = x.data();
    let mut out = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            for t in 0..l {
                out[ch] += xv[(bi * c + ch) * l + t];
            }
        }
    }
    for v in &mut out {
        *v /= count as f64;
    }
    drop(xv);
    Ok(Tensor::from_op(
        "channel_mean",
        vec![c],
        out,
        vec![x.clone()],
        Box::new(move |dy, _, _| {
            let mut dx = vec![0.0; b * c * l];
            for bi in 0..b {
                for ch in 0..c {
                    for t in 0..l {
                        dx[(bi * c + ch) * l + t] = dy[ch] / count as f64;
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Replicate a `[c]` vector across batch and position, returning `[b, c, l]`.
pub fn broadcast_channel(v: &Tensor, b: usize, l: usize) -> Result<Tensor> {
    let c = match v.shape() {
        [c] => *c,
        s => {
            return Err(shape_err(
                "broadcast_channel",
                format!("expected 1-d vector, got {s:?}"),
            ))
        }
    };
    let vv = v.data();
    let mut data = vec![0.0; b * c * l];
    for bi in 0..b {
        for ch in 0..c {
            for t in 0..l {
                data[(bi * c + ch) * l + t] = vv[ch];
            }
        }
    }
    drop(vv);
    Ok(Tensor::from_op(
        "broadcast_channel",
        vec![b, c, l],
        data,
        vec![v.clone()],
        Box::new(move |dy, _, _| {
            let mut g = vec![0.0; c];
            for bi in 0..b {
                for ch in 0..c {
                    for t in 0..l {
                        g[ch] += dy[(bi * c + ch) * l + t];
                    }
                }
            }
            vec![Some(g)]
        }),
    ))
}

/// One-hot encode integer labels as a constant `[b, k]` tensor.
pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut data = vec![0.0; labels.len() * k];
    for (i, &y) in labels.iter().enumerate() {
        data[i * k + y] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), k], data)
}
