//! Single-sample convolution and pooling kernels on `(channels, height, width)`
//! buffers. Convolutions are stride 1 with `kernel / 2` zero padding and run as
//! im2col followed by a matrix product.

use super::tensor::Real;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds `input` (C, H, W) into `(C * k * k, H * W)` patch columns.
pub fn im2col<T: Real>(input: &[T], g: &ConvGeometry, cols: &mut Vec<T>) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = (k / 2) as isize;
    cols.clear();
    cols.resize(g.patch_len() * g.pixels(), T::zero());
    for c in 0..g.in_channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * h * w..(row + 1) * h * w];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = sy as usize * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    dst[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&plane[src_row + sx_lo..src_row + sx_lo + len]);
                }
            }
        }
    }
}

/// Folds patch-column gradients back onto the input image, summing overlaps.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, out: &mut [T]) {
    let (h, w, k) = (g.height, g.width, g.kernel);
    let pad = (k / 2) as isize;
    out.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..g.in_channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * h * w..(row + 1) * h * w];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = sy as usize * w;
                    for x in x_lo..x_hi {
                        let sx = (x as isize + dx) as usize;
                        plane[dst_row + sx] = plane[dst_row + sx] + src[y * w + x];
                    }
                }
            }
        }
    }
}

/// `out = weight * cols + bias`, with `weight` laid out `(O, C * k * k)`.
pub fn conv_forward<T: Real>(
    g: &ConvGeometry,
    weight: &[T],
    bias: &[T],
    cols: &[T],
    out: &mut Vec<T>,
) {
    let n = g.pixels();
    out.clear();
    out.reserve(g.out_channels * n);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, n));
    }
    let kk = g.patch_len();
    T::gemm(
        g.out_channels,
        kk,
        n,
        T::one(),
        weight,
        kk as isize,
        1,
        cols,
        n as isize,
        1,
        T::one(),
        out,
        n as isize,
        1,
    );
}

/// Accumulates weight and bias gradients and writes the patch-column gradient.
pub fn conv_backward<T: Real>(
    g: &ConvGeometry,
    weight: &[T],
    cols: &[T],
    grad_out: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_cols: &mut Vec<T>,
) {
    let n = g.pixels();
    let kk = g.patch_len();
    for (o, gb) in grad_bias.iter_mut().enumerate() {
        *gb = *gb + grad_out[o * n..(o + 1) * n].iter().copied().sum::<T>();
    }
    // dW += dOut (O x N) * cols^T (N x KK)
    T::gemm(
        g.out_channels,
        n,
        kk,
        T::one(),
        grad_out,
        n as isize,
        1,
        cols,
        1,
        n as isize,
        T::one(),
        grad_weight,
        kk as isize,
        1,
    );
    // dCols = W^T (KK x O) * dOut (O x N)
    grad_cols.clear();
    grad_cols.resize(kk * n, T::zero());
    T::gemm(
        kk,
        g.out_channels,
        n,
        T::one(),
        weight,
        1,
        kk as isize,
        grad_out,
        n as isize,
        1,
        T::zero(),
        grad_cols,
        n as isize,
        1,
    );
}

pub fn leaky_relu_inplace<T: Real>(values: &mut [T]) {
    let slope = T::of(LEAKY_SLOPE);
    for v in values {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Scales the upstream gradient by the activation derivative, read off the
/// activation output (positive iff the pre-activation was positive).
pub fn leaky_relu_backward_inplace<T: Real>(output: &[T], grad: &mut [T]) {
    let slope = T::of(LEAKY_SLOPE);
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = *g * slope;
        }
    }
}

/// 2x2 stride-2 max pooling. Records the input index of each maximum; ties
/// resolve to the lowest linear index.
pub fn maxpool_forward<T: Real>(
    input: &[T],
    channels: usize,
    height: usize,
    width: usize,
    out: &mut Vec<T>,
    argmax: &mut Vec<usize>,
) {
    let (oh, ow) = (height / 2, width / 2);
    out.clear();
    argmax.clear();
    out.reserve(channels * oh * ow);
    argmax.reserve(channels * oh * ow);
    for c in 0..channels {
        let base = c * height * width;
        for y in 0..oh {
            for x in 0..ow {
                let i0 = base + 2 * y * width + 2 * x;
                let mut best = i0;
                for i in [i0 + 1, i0 + width, i0 + width + 1] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
}

pub fn maxpool_backward<T: Real>(grad_out: &[T], argmax: &[usize], grad_in: &mut [T]) {
    grad_in.iter_mut().for_each(|v| *v = T::zero());
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i] = grad_in[i] + g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct convolution used as the reference for the im2col path.
    fn naive_conv(input: &[f64], g: &ConvGeometry, weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let (h, w, k) = (g.height as isize, g.width as isize, g.kernel as isize);
        let pad = k / 2;
        let mut out = vec![0.0; g.out_channels * g.pixels()];
        for o in 0..g.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for c in 0..g.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y + ky - pad, x + kx - pad);
                                if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                    continue;
                                }
                                let wi = ((o * g.in_channels + c) * g.kernel + ky as usize)
                                    * g.kernel
                                    + kx as usize;
                                acc += weight[wi]
                                    * input[c * g.pixels() + (sy * w + sx) as usize];
                            }
                        }
                    }
                    out[o * g.pixels() + (y * w + x) as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_convolution() {
        let g = ConvGeometry {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            height: 4,
            width: 5,
        };
        let input: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let weight: Vec<f64> = (0..54).map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5).collect();
        let bias = vec![0.1, -0.2, 0.3];
        let mut cols = Vec::new();
        im2col(&input, &g, &mut cols);
        let mut out = Vec::new();
        conv_forward(&g, &weight, &bias, &cols, &mut out);
        let reference = naive_conv(&input, &g, &weight, &bias);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry {
            in_channels: 2,
            out_channels: 1,
            kernel: 3,
            height: 3,
            width: 4,
        };
        let x: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.pixels())
            .map(|i| (i as f64 * 0.37).cos())
            .collect();
        let mut cols = Vec::new();
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn leaky_negative_side_gradient() {
        let mut v = vec![-2.0f64, 3.0];
        leaky_relu_inplace(&mut v);
        assert_eq!(v, vec![-0.2, 3.0]);
        let mut g = vec![1.5, 1.5];
        leaky_relu_backward_inplace(&v, &mut g);
        assert!((g[0] - 0.15).abs() < 1e-15);
        assert_eq!(g[1], 1.5);
    }

    #[test]
    fn pooling_routes_to_argmax_with_lowest_index_ties() {
        // one channel, 2x4: windows [1,5;5,0] and [2,2;2,2]
        let input = vec![1.0f64, 5.0, 2.0, 2.0, 5.0, 0.0, 2.0, 2.0];
        let (mut out, mut arg) = (Vec::new(), Vec::new());
        maxpool_forward(&input, 1, 2, 4, &mut out, &mut arg);
        assert_eq!(out, vec![5.0, 2.0]);
        assert_eq!(arg, vec![1, 2]);
        let mut gin = vec![9.0; 8];
        maxpool_backward(&[1.0, -1.0], &arg, &mut gin);
        assert_eq!(gin, vec![0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
