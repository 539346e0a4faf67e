//! Layer kernels with explicit backward passes. All buffers are plain
//! channel-major slices; weights are `[out][in][k][k]` for convolutions and
//! `[out][in]` for dense layers.

use super::tensor::Real;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2d {
    pub fn new(name: String, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, in_h: usize, in_w: usize) -> Self {
        let padding = kernel / 2;
        let out_h = (in_h + 2 * padding - kernel) / stride + 1;
        let out_w = (in_w + 2 * padding - kernel) / stride + 1;
        Self { name, in_channels, out_channels, kernel, stride, padding, in_h, in_w, out_h, out_w }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_h * self.out_w
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.patch_len() + self.out_channels
    }

    pub fn macs(&self) -> usize {
        self.out_len() * self.patch_len()
    }

    /// Unfolds the input into `[patch_len][out_h * out_w]`.
    pub fn im2col<T: Real>(&self, input: &[T]) -> Vec<T> {
        let positions = self.out_h * self.out_w;
        let mut cols = vec![T::zero(); self.patch_len() * positions];
        let k = self.kernel;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let src = &input[(c * self.in_h + iy as usize) * self.in_w..][..self.in_w];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && (ix as usize) < self.in_w {
                                dst[oy * self.out_w + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im_add<T: Real>(&self, dcols: &[T], dinput: &mut [T]) {
        let positions = self.out_h * self.out_w;
        let k = self.kernel;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &dcols[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut dinput[(c * self.in_h + iy as usize) * self.in_w..][..self.in_w];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && (ix as usize) < self.in_w {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Returns `(output, cols)`; keep `cols` for the backward pass.
    pub fn forward<T: Real>(&self, input: &[T], weight: &[T], bias: &[T]) -> (Vec<T>, Vec<T>) {
        debug_assert_eq!(input.len(), self.in_channels * self.in_h * self.in_w);
        let cols = self.im2col(input);
        let positions = self.out_h * self.out_w;
        let plen = self.patch_len();
        let mut out = vec![T::zero(); self.out_len()];
        for co in 0..self.out_channels {
            let out_row = &mut out[co * positions..(co + 1) * positions];
            out_row.fill(bias[co]);
            let w_row = &weight[co * plen..(co + 1) * plen];
            for (r, &w) in w_row.iter().enumerate() {
                let col = &cols[r * positions..(r + 1) * positions];
                for (o, &x) in out_row.iter_mut().zip(col) {
                    *o += w * x;
                }
            }
        }
        (out, cols)
    }

    /// Accumulates weight/bias gradients; returns the input gradient when asked.
    pub fn backward<T: Real>(
        &self,
        cols: &[T],
        weight: &[T],
        dout: &[T],
        dweight: &mut [T],
        dbias: &mut [T],
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let positions = self.out_h * self.out_w;
        let plen = self.patch_len();
        for co in 0..self.out_channels {
            let g = &dout[co * positions..(co + 1) * positions];
            dbias[co] += g.iter().copied().sum::<T>();
            let dw_row = &mut dweight[co * plen..(co + 1) * plen];
            for (r, dw) in dw_row.iter_mut().enumerate() {
                let col = &cols[r * positions..(r + 1) * positions];
                let mut acc = T::zero();
                for (&a, &b) in g.iter().zip(col) {
                    acc += a * b;
                }
                *dw += acc;
            }
        }
        if !want_input_grad {
            return None;
        }
        let mut dcols = vec![T::zero(); plen * positions];
        for co in 0..self.out_channels {
            let g = &dout[co * positions..(co + 1) * positions];
            let w_row = &weight[co * plen..(co + 1) * plen];
            for (r, &w) in w_row.iter().enumerate() {
                if w == T::zero() {
                    continue;
                }
                let dst = &mut dcols[r * positions..(r + 1) * positions];
                for (d, &x) in dst.iter_mut().zip(g) {
                    *d += w * x;
                }
            }
        }
        let mut dinput = vec![T::zero(); self.in_channels * self.in_h * self.in_w];
        self.col2im_add(&dcols, &mut dinput);
        Some(dinput)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(name: String, inputs: usize, outputs: usize) -> Self {
        Self { name, inputs, outputs }
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn macs(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn forward<T: Real>(&self, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
        debug_assert_eq!(input.len(), self.inputs);
        (0..self.outputs)
            .map(|o| {
                let w = &weight[o * self.inputs..(o + 1) * self.inputs];
                let mut acc = bias[o];
                for (&a, &b) in w.iter().zip(input) {
                    acc += a * b;
                }
                acc
            })
            .collect()
    }

    pub fn backward<T: Real>(
        &self,
        input: &[T],
        weight: &[T],
        dout: &[T],
        dweight: &mut [T],
        dbias: &mut [T],
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        for (o, &g) in dout.iter().enumerate() {
            dbias[o] += g;
            if g == T::zero() {
                continue;
            }
            let dw = &mut dweight[o * self.inputs..(o + 1) * self.inputs];
            for (d, &x) in dw.iter_mut().zip(input) {
                *d += g * x;
            }
        }
        if !want_input_grad {
            return None;
        }
        let mut din = vec![T::zero(); self.inputs];
        for (o, &g) in dout.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            let w = &weight[o * self.inputs..(o + 1) * self.inputs];
            for (d, &wv) in din.iter_mut().zip(w) {
                *d += g * wv;
            }
        }
        Some(din)
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(activated: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `log(sigmoid(z))`, stable for large |z|.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}
