//! Forward (and adjoint) compute kernels on plain tensors.
//!
//! Everything here is a pure function of its inputs; the graph layer wires
//! these into recorded nodes and derives gradients from the matching
//! `*_backward_*` adjoints. Shape validation happens at the graph layer —
//! kernels only `debug_assert` their preconditions.

use super::{Scalar, Tensor};

// ── elementwise ──────────────────────────────────────────────────────

pub fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip preserves shape")
}

/// Tanh-approximation GELU: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

/// d/dx of [`gelu`].
pub fn gelu_derivative<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * k * x * x)
}

// ── matrix products ──────────────────────────────────────────────────

/// `a[m,k] · b[k,n] -> [m,n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    debug_assert_eq!(b.shape()[0], k);
    let mut out = vec![T::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul shape")
}

/// `a[m,k] · b[n,k]ᵀ -> [m,n]`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    debug_assert_eq!(b.shape()[1], k);
    let mut out = vec![T::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] = s;
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul_nt shape")
}

/// `a[k,m]ᵀ · b[k,n] -> [m,n]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    debug_assert_eq!(b.shape()[0], k);
    let mut out = vec![T::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for p in 0..k {
        let arow = &ad[p * m..(p + 1) * m];
        let brow = &bd[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul_tn shape")
}

pub fn transpose2d<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out).expect("transpose shape")
}

// ── convolutions ─────────────────────────────────────────────────────

/// Same-padded (zeros) cross-correlation:
/// `input[h,w,cin] * kernel[k,k,cin,cout] + bias[cout] -> [h,w,cout]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
    debug_assert_eq!(kernel.shape()[1], k);
    debug_assert_eq!(kernel.shape()[2], cin);
    debug_assert_eq!(k % 2, 1);
    let half = (k / 2) as isize;
    let ind = input.data();
    let kd = kernel.data();
    let bd = bias.data();
    let mut out = vec![T::zero(); h * w * cout];
    for y in 0..h {
        for x in 0..w {
            let orow = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
            orow.copy_from_slice(bd);
            for ky in 0..k {
                let iy = y as isize + ky as isize - half;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - half;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let ibase = (iy as usize * w + ix as usize) * cin;
                    let kbase = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let v = ind[ibase + ci];
                        let krow = &kd[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (o, &kv) in orow.iter_mut().zip(krow) {
                            *o += v * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, cout], out).expect("conv2d shape")
}

/// Gradient of [`conv2d`] w.r.t. the input.
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    h: usize,
    w: usize,
) -> Tensor<T> {
    let (k, cin, cout) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let half = (k / 2) as isize;
    let gd = grad_out.data();
    let kd = kernel.data();
    let mut gin = vec![T::zero(); h * w * cin];
    for y in 0..h {
        for x in 0..w {
            let grow = &gd[(y * w + x) * cout..(y * w + x + 1) * cout];
            for ky in 0..k {
                let iy = y as isize + ky as isize - half;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - half;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let ibase = (iy as usize * w + ix as usize) * cin;
                    let kbase = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let krow = &kd[kbase + ci * cout..kbase + (ci + 1) * cout];
                        let mut s = T::zero();
                        for (&g, &kv) in grow.iter().zip(krow) {
                            s += g * kv;
                        }
                        gin[ibase + ci] += s;
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, cin], gin).expect("conv2d grad-input shape")
}

/// Gradient of [`conv2d`] w.r.t. the kernel.
pub fn conv2d_backward_kernel<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    k: usize,
) -> Tensor<T> {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let cout = grad_out.shape()[2];
    let half = (k / 2) as isize;
    let gd = grad_out.data();
    let ind = input.data();
    let mut gk = vec![T::zero(); k * k * cin * cout];
    for y in 0..h {
        for x in 0..w {
            let grow = &gd[(y * w + x) * cout..(y * w + x + 1) * cout];
            for ky in 0..k {
                let iy = y as isize + ky as isize - half;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - half;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let ibase = (iy as usize * w + ix as usize) * cin;
                    let kbase = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let v = ind[ibase + ci];
                        let krow = &mut gk[kbase + ci * cout..kbase + (ci + 1) * cout];
                        for (o, &g) in krow.iter_mut().zip(grow) {
                            *o += v * g;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![k, k, cin, cout], gk).expect("conv2d grad-kernel shape")
}

/// Same-padded per-channel convolution:
/// `input[h,w,c] * kernel[k,k,c] + bias[c] -> [h,w,c]` (odd `k`).
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = kernel.shape()[0];
    let half = (k / 2) as isize;
    let ind = input.data();
    let kd = kernel.data();
    let bd = bias.data();
    let mut out = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            let orow = &mut out[(y * w + x) * c..(y * w + x + 1) * c];
            orow.copy_from_slice(bd);
            for ky in 0..k {
                let iy = y as isize + ky as isize - half;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - half;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let irow = &ind[(iy as usize * w + ix as usize) * c..][..c];
                    let krow = &kd[(ky * k + kx) * c..][..c];
                    for ((o, &v), &kv) in orow.iter_mut().zip(irow).zip(krow) {
                        *o += v * kv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, c], out).expect("depthwise shape")
}

pub fn depthwise_conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
) -> Tensor<T> {
    let (h, w, c) = (
        grad_out.shape()[0],
        grad_out.shape()[1],
        grad_out.shape()[2],
    );
    let k = kernel.shape()[0];
    let half = (k / 2) as isize;
    let gd = grad_out.data();
    let kd = kernel.data();
    let mut gin = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            let grow = &gd[(y * w + x) * c..(y * w + x + 1) * c];
            for ky in 0..k {
                let iy = y as isize + ky as isize - half;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - half;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let irow = &mut gin[(iy as usize * w + ix as usize) * c..][..c];
                    let krow = &kd[(ky * k + kx) * c..][..c];
                    for ((o, &g), &kv) in irow.iter_mut().zip(grow).zip(krow) {
                        *o += g * kv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, c], gin).expect("depthwise grad-input shape")
}

pub fn depthwise_conv2d_backward_kernel<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    k: usize,
) -> Tensor<T> {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let half = (k / 2) as isize;
    let gd = grad_out.data();
    let ind = input.data();
    let mut gk = vec![T::zero(); k * k * c];
    for y in 0..h {
        for x in 0..w {
            let grow = &gd[(y * w + x) * c..(y * w + x + 1) * c];
            for ky in 0..k {
                let iy = y as isize + ky as isize - half;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - half;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let irow = &ind[(iy as usize * w + ix as usize) * c..][..c];
                    let krow = &mut gk[(ky * k + kx) * c..][..c];
                    for ((o, &v), &g) in krow.iter_mut().zip(irow).zip(grow) {
                        *o += v * g;
                    }
                }
            }
        }
    }
    Tensor::new(vec![k, k, c], gk).expect("depthwise grad-kernel shape")
}

// ── normalization ────────────────────────────────────────────────────

/// Per-channel mean and (biased) variance over the spatial positions of an
/// `[h,w,c]` tensor.
pub fn channel_moments<T: Scalar>(input: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let m = T::from_f64((h * w) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for row in input.data().chunks_exact(c) {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    for row in input.data().chunks_exact(c) {
        for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - mu;
            *acc += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= m;
    }
    (mean, var)
}

/// Normalizes each channel over all spatial positions of a single image,
/// then applies the `gamma`/`beta` affine. Statistics always come from the
/// tensor itself (no running averages).
pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let c = input.shape()[2];
    let (mean, var) = channel_moments(input);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = Vec::with_capacity(input.numel());
    for row in input.data().chunks_exact(c) {
        for (ci, &v) in row.iter().enumerate() {
            out.push(gd[ci] * (v - mean[ci]) * inv_std[ci] + bd[ci]);
        }
    }
    Tensor::new(input.shape().to_vec(), out).expect("batch_norm shape")
}

/// Per-row normalization of an `[n,d]` tensor over the feature axis, with
/// `gamma`/`beta` affine.
pub fn layer_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let d = input.shape()[1];
    let dt = T::from_f64(d as f64);
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = Vec::with_capacity(input.numel());
    for row in input.data().chunks_exact(d) {
        let mean = row.iter().copied().sum::<T>() / dt;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
        let inv_std = T::one() / (var + eps).sqrt();
        for (ci, &v) in row.iter().enumerate() {
            out.push(gd[ci] * (v - mean) * inv_std + bd[ci]);
        }
    }
    Tensor::new(input.shape().to_vec(), out).expect("layer_norm shape")
}

// ── softmax ──────────────────────────────────────────────────────────

/// Iterates the lanes of `shape` along `axis`, calling `f` with the offset
/// of the lane's first element and the stride between consecutive elements.
pub(crate) fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            f(o * n * inner + i, inner);
        }
    }
}

/// Max-subtracted softmax along `axis`.
pub fn softmax<T: Scalar>(input: &Tensor<T>, axis: usize) -> Tensor<T> {
    let n = input.shape()[axis];
    let mut out = input.data().to_vec();
    for_each_lane(input.shape(), axis, |base, stride| {
        let mut max = T::neg_infinity();
        for j in 0..n {
            max = max.max(out[base + j * stride]);
        }
        let mut sum = T::zero();
        for j in 0..n {
            let e = (out[base + j * stride] - max).exp();
            out[base + j * stride] = e;
            sum += e;
        }
        for j in 0..n {
            out[base + j * stride] /= sum;
        }
    });
    Tensor::new(input.shape().to_vec(), out).expect("softmax shape")
}

/// VJP of [`softmax`] given the forward output.
pub fn softmax_backward<T: Scalar>(
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
    axis: usize,
) -> Tensor<T> {
    let n = output.shape()[axis];
    let yd = output.data();
    let gd = grad_out.data();
    let mut gin = vec![T::zero(); yd.len()];
    for_each_lane(output.shape(), axis, |base, stride| {
        let mut dot = T::zero();
        for j in 0..n {
            dot += yd[base + j * stride] * gd[base + j * stride];
        }
        for j in 0..n {
            let idx = base + j * stride;
            gin[idx] = yd[idx] * (gd[idx] - dot);
        }
    });
    Tensor::new(output.shape().to_vec(), gin).expect("softmax grad shape")
}

// ── resampling ───────────────────────────────────────────────────────

/// Source coordinate and interpolation weight for align-corners-false
/// bilinear sampling with edge clamping.
#[inline]
fn bilinear_axis(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let src = (dst as f64 + 0.5) * scale - 0.5;
    if src <= 0.0 {
        (0, 0, 0.0)
    } else if src >= (len - 1) as f64 {
        (len - 1, len - 1, 0.0)
    } else {
        let lo = src.floor() as usize;
        (lo, lo + 1, src - lo as f64)
    }
}

/// Align-corners-false bilinear resize of an `[h,w,c]` tensor.
///
/// Interpolation uses the lerp form `a + t·(b−a)`, which reproduces
/// constant regions exactly — the boundary loss and the edge-map emitter
/// rely on flat regions mapping to exactly zero discrepancy.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if out_h == h && out_w == w {
        return input.clone();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let ind = input.data();
    let mut out = vec![T::zero(); out_h * out_w * c];
    for oy in 0..out_h {
        let (y0, y1, fy) = bilinear_axis(oy, sy, h);
        let fy = T::from_f64(fy);
        for ox in 0..out_w {
            let (x0, x1, fx) = bilinear_axis(ox, sx, w);
            let fx = T::from_f64(fx);
            let base00 = (y0 * w + x0) * c;
            let base01 = (y0 * w + x1) * c;
            let base10 = (y1 * w + x0) * c;
            let base11 = (y1 * w + x1) * c;
            let obase = (oy * out_w + ox) * c;
            for ci in 0..c {
                let top = {
                    let a = ind[base00 + ci];
                    a + fx * (ind[base01 + ci] - a)
                };
                let bot = {
                    let a = ind[base10 + ci];
                    a + fx * (ind[base11 + ci] - a)
                };
                out[obase + ci] = top + fy * (bot - top);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out).expect("resize shape")
}

/// VJP of [`resize_bilinear`]: scatters the output gradient back through
/// the interpolation weights.
pub fn resize_bilinear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    in_h: usize,
    in_w: usize,
) -> Tensor<T> {
    let (out_h, out_w, c) = (
        grad_out.shape()[0],
        grad_out.shape()[1],
        grad_out.shape()[2],
    );
    if out_h == in_h && out_w == in_w {
        return grad_out.clone();
    }
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    let gd = grad_out.data();
    let mut gin = vec![T::zero(); in_h * in_w * c];
    for oy in 0..out_h {
        let (y0, y1, fy) = bilinear_axis(oy, sy, in_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = bilinear_axis(ox, sx, in_w);
            let w00 = T::from_f64((1.0 - fy) * (1.0 - fx));
            let w01 = T::from_f64((1.0 - fy) * fx);
            let w10 = T::from_f64(fy * (1.0 - fx));
            let w11 = T::from_f64(fy * fx);
            let obase = (oy * out_w + ox) * c;
            for ci in 0..c {
                let g = gd[obase + ci];
                gin[(y0 * in_w + x0) * c + ci] += w00 * g;
                gin[(y0 * in_w + x1) * c + ci] += w01 * g;
                gin[(y1 * in_w + x0) * c + ci] += w10 * g;
                gin[(y1 * in_w + x1) * c + ci] += w11 * g;
            }
        }
    }
    Tensor::new(vec![in_h, in_w, c], gin).expect("resize grad shape")
}

// ── row normalization ────────────────────────────────────────────────

/// Divides each row of an `[n,d]` tensor by its L2 norm (plus guard).
pub fn l2_normalize_rows<T: Scalar>(input: &Tensor<T>, guard: T) -> Tensor<T> {
    let d = input.shape()[1];
    let mut out = Vec::with_capacity(input.numel());
    for row in input.data().chunks_exact(d) {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt() + guard;
        out.extend(row.iter().map(|&v| v / norm));
    }
    Tensor::new(input.shape().to_vec(), out).expect("l2 normalize shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::<f64>::from_fn(&[3, 4], |i| (i as f64 * 0.7).sin());
        let b = Tensor::<f64>::from_fn(&[4, 2], |i| (i as f64 * 0.3).cos());
        let c = matmul(&a, &b);
        let c_nt = matmul_nt(&a, &transpose2d(&b));
        let c_tn = matmul_tn(&transpose2d(&a), &b);
        assert!(c.max_abs_diff(&c_nt) < 1e-14);
        assert!(c.max_abs_diff(&c_tn) < 1e-14);
    }

    #[test]
    fn gelu_matches_definition_at_zero_and_tail() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert_abs_diff_eq!(gelu(10.0f64), 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(gelu(-10.0f64), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn bilinear_constant_exact() {
        let t = Tensor::<f64>::filled(&[7, 5, 2], 0.3721);
        let up = resize_bilinear(&t, 13, 11);
        for &v in up.data() {
            assert_eq!(v, 0.3721);
        }
        let down = resize_bilinear(&up, 3, 2);
        for &v in down.data() {
            assert_eq!(v, 0.3721);
        }
    }

    #[test]
    fn bilinear_two_pixel_column() {
        // src column [0, 1] upsampled 2x: centers map to -0.25, 0.25, 0.75, 1.25.
        let t = Tensor::<f64>::new(vec![2, 1, 1], vec![0.0, 1.0]).unwrap();
        let up = resize_bilinear(&t, 4, 1);
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
    }
}
