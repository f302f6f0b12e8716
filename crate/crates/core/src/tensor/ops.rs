//! Forward kernels shared by the tape and by callers that only need values.

use super::{dim_err, Result, Tensor, TensorError};

/// Splits a shape around `axis` into `(outer, len, inner)` extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Views a rank-2 `[L, C]` or rank-4 `[B, L, P, C]` tensor as
/// `(batch, length, crops, channels)`.
pub(crate) fn sequence_dims(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [l, c] => Ok([1, l, 1, c]),
        [b, l, p, c] => Ok([b, l, p, c]),
        _ => Err(dim_err(
            op,
            format!("expected [L, C] or [B, L, P, C], got {shape:?}"),
        )),
    }
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub len: usize,
    pub crops: usize,
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
    pub pad: usize,
}

pub(crate) fn conv_dims(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    let [batch, len, crops, cin] = sequence_dims("conv1d", input.shape())?;
    let &[cout, kcin, ksize] = kernel.shape() else {
        return Err(dim_err(
            "conv1d",
            format!("kernel must be [Cout, Cin, K], got {:?}", kernel.shape()),
        ));
    };
    if kcin != cin {
        return Err(dim_err(
            "conv1d",
            format!("kernel Cin {kcin} != input Cin {cin}"),
        ));
    }
    if ksize % 2 == 0 {
        return Err(dim_err(
            "conv1d",
            format!("kernel size {ksize} must be odd for same padding"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(dim_err(
            "conv1d",
            format!("bias {:?} != [{cout}]", bias.shape()),
        ));
    }
    Ok(ConvDims {
        batch,
        len,
        crops,
        cin,
        cout,
        ksize,
        pad: ksize / 2,
    })
}

/// Stride-1 cross-correlation along the length axis with symmetric zero
/// padding. `padding` must equal `(K - 1) / 2` so the length is preserved.
pub fn conv1d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    padding: usize,
) -> Result<Tensor> {
    let d = conv_dims(input, kernel, bias)?;
    if padding != d.pad {
        return Err(TensorError::Argument {
            op: "conv1d",
            detail: format!(
                "padding {padding} does not preserve length for K={}",
                d.ksize
            ),
        });
    }
    Ok(conv1d_raw(input, kernel, bias, &d))
}

/// Kernel `[Cout, Cin, K]` rearranged to `[K, Cout, Cin]` so the channel
/// loop is contiguous.
pub(crate) fn kernel_by_tap(w: &[f64], cout: usize, cin: usize, ksize: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for kk in 0..ksize {
                t[(kk * cout + o) * cin + i] = w[(o * cin + i) * ksize + kk];
            }
        }
    }
    t
}

pub(crate) fn conv1d_raw(input: &Tensor, kernel: &Tensor, bias: &Tensor, d: &ConvDims) -> Tensor {
    let x = input.data();
    let wt = kernel_by_tap(kernel.data(), d.cout, d.cin, d.ksize);
    let row = d.crops * d.cin;
    let orow = d.crops * d.cout;
    let mut out = vec![0.0; d.batch * d.len * orow];
    for bi in 0..d.batch {
        for l in 0..d.len {
            for p in 0..d.crops {
                let obase = bi * d.len * orow + l * orow + p * d.cout;
                let acc = &mut out[obase..obase + d.cout];
                acc.copy_from_slice(bias.data());
                for kk in 0..d.ksize {
                    let Some(src) = (l + kk).checked_sub(d.pad).filter(|&s| s < d.len) else {
                        continue;
                    };
                    let xbase = bi * d.len * row + src * row + p * d.cin;
                    let xs = &x[xbase..xbase + d.cin];
                    let taps = &wt[kk * d.cout * d.cin..(kk + 1) * d.cout * d.cin];
                    for (a, wrow) in acc.iter_mut().zip(taps.chunks_exact(d.cin)) {
                        *a += wrow.iter().zip(xs).map(|(w, v)| w * v).sum::<f64>();
                    }
                }
            }
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = d.cout;
    Tensor::from_parts(shape, out)
}

/// Sum of `terms` taken in ascending order, so any permutation of the same
/// values gives a bitwise identical result.
pub(crate) fn ordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Numerically stable softmax along `axis`. The normalizer is summed in value
/// order, making the result exactly equivariant to permutations along `axis`.
pub fn softmax_forward(input: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= input.rank() {
        return Err(TensorError::Argument {
            op: "softmax",
            detail: format!("axis {axis} for rank {}", input.rank()),
        });
    }
    let (outer, len, inner) = axis_split(input.shape(), axis);
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    let mut terms = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                terms[j] = e;
            }
            let sum = ordered_sum(&mut terms);
            for j in 0..len {
                out[at(j)] /= sum;
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GeLU, `x * Phi(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Largest f64 below one.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function kept strictly inside `(0, 1)`: saturated values are
/// clamped to the nearest representable interior point.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

/// The `k` largest values in descending order; equal values keep index order.
pub fn topk_slice(values: &[f64], k: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if k > values.len() {
        return Err(TensorError::Argument {
            op: "topk",
            detail: format!("k={k} exceeds length {}", values.len()),
        });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps lower indices first among ties.
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(k);
    Ok((order.iter().map(|&i| values[i]).collect(), order))
}

pub fn topk(input: &Tensor, k: usize) -> Result<(Tensor, Vec<usize>)> {
    if input.rank() != 1 {
        return Err(dim_err(
            "topk",
            format!("expected rank 1, got {:?}", input.shape()),
        ));
    }
    let (values, indices) = topk_slice(input.data(), k)?;
    Ok((Tensor::from_parts(vec![k], values), indices))
}
