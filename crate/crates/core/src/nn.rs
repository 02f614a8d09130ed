//! Dense NCHW tensors and the handful of layers the backbone needs, each with
//! an explicit backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn channel(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let start = (n * self.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn channel_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.plane();
        let start = (n * self.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `C = alpha * A B + beta * C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides describe views that stay inside the asserted slice
    // bounds; callers pass contiguous buffers of the matching sizes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Square convolution with stride 1 and "same" zero padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// `[out_ch][in_ch][kernel][kernel]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGrads {
    pub fn zeros_like(conv: &Conv2d) -> Self {
        Self {
            weight: vec![0.0; conv.weight.len()],
            bias: vec![0.0; conv.bias.len()],
        }
    }
}

impl Conv2d {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
        let weight = draw(out_ch * in_ch * kernel * kernel);
        let bias = draw(out_ch);
        Self {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, cols: &mut [f64]) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let plane = h * w;
        for ci in 0..self.in_ch {
            let src = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        let out_row = &mut dst[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            out_row.fill(0.0);
                            continue;
                        }
                        let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                        for (x, o) in out_row.iter_mut().enumerate() {
                            let sx = x as isize + dx;
                            *o = if sx < 0 || sx >= w as isize {
                                0.0
                            } else {
                                src_row[sx as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let plane = h * w;
        out.fill(0.0);
        for ci in 0..self.in_ch {
            let dst = &mut out[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                        let src_row = &src[y * w..(y + 1) * w];
                        for (x, g) in src_row.iter().enumerate() {
                            let sx = x as isize + dx;
                            if sx >= 0 && sx < w as isize {
                                dst_row[sx as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (h, w) = (x.h, x.w);
        let plane = h * w;
        let pl = self.patch_len();
        let mut out = Tensor::zeros(x.n, self.out_ch, h, w);
        let mut cols = if self.kernel == 1 {
            Vec::new()
        } else {
            vec![0.0; pl * plane]
        };
        for n in 0..x.n {
            let dst = out.sample_mut(n);
            for (o, chunk) in dst.chunks_exact_mut(plane).enumerate() {
                chunk.fill(self.bias[o]);
            }
            let b: &[f64] = if self.kernel == 1 {
                x.sample(n)
            } else {
                self.im2col(x.sample(n), h, w, &mut cols);
                &cols
            };
            gemm(
                self.out_ch,
                pl,
                plane,
                &self.weight,
                pl as isize,
                1,
                b,
                plane as isize,
                1,
                dst,
                1.0,
            );
        }
        out
    }

    /// Accumulates parameter gradients into `grads` (when given) and returns
    /// the input gradient when `want_input` is set.
    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        grads: Option<&mut ConvGrads>,
        want_input: bool,
    ) -> Option<Tensor> {
        let (h, w) = (x.h, x.w);
        let plane = h * w;
        let pl = self.patch_len();
        let mut cols = if self.kernel == 1 {
            Vec::new()
        } else {
            vec![0.0; pl * plane]
        };
        let mut gcols = if self.kernel == 1 {
            Vec::new()
        } else {
            vec![0.0; pl * plane]
        };
        let mut grad_in = want_input.then(|| Tensor::zeros(x.n, self.in_ch, h, w));
        let mut grads = grads;
        for n in 0..x.n {
            let go = grad_out.sample(n);
            if let Some(g) = grads.as_deref_mut() {
                let b: &[f64] = if self.kernel == 1 {
                    x.sample(n)
                } else {
                    self.im2col(x.sample(n), h, w, &mut cols);
                    &cols
                };
                // dW += dY (out x plane) * cols^T (plane x pl)
                gemm(
                    self.out_ch,
                    plane,
                    pl,
                    go,
                    plane as isize,
                    1,
                    b,
                    1,
                    plane as isize,
                    &mut g.weight,
                    1.0,
                );
                for (o, chunk) in go.chunks_exact(plane).enumerate() {
                    g.bias[o] += chunk.iter().sum::<f64>();
                }
            }
            if let Some(gi) = grad_in.as_mut() {
                // dcols = W^T (pl x out) * dY (out x plane)
                let target: &mut [f64] = if self.kernel == 1 {
                    gi.sample_mut(n)
                } else {
                    &mut gcols
                };
                gemm(
                    pl,
                    self.out_ch,
                    plane,
                    &self.weight,
                    1,
                    pl as isize,
                    go,
                    plane as isize,
                    1,
                    target,
                    0.0,
                );
                if self.kernel != 1 {
                    self.col2im(&gcols, h, w, gi.sample_mut(n));
                }
            }
        }
        grad_in
    }
}

pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.n, x.c, h, w);
    for n in 0..x.n {
        for c in 0..x.c {
            let src = x.channel(n, c);
            let dst = out.channel_mut(n, c);
            for i in 0..h {
                for j in 0..w {
                    let a = (2 * i) * x.w + 2 * j;
                    let b = a + x.w;
                    dst[i * w + j] = 0.25 * (src[a] + src[a + 1] + src[b] + src[b + 1]);
                }
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h * 2, grad.w * 2);
    let mut out = Tensor::zeros(grad.n, grad.c, h, w);
    for n in 0..grad.n {
        for c in 0..grad.c {
            let src = grad.channel(n, c);
            let dst = out.channel_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    dst[y * w + x] = 0.25 * src[(y / 2) * grad.w + x / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.n, x.c, h, w);
    for n in 0..x.n {
        for c in 0..x.c {
            let src = x.channel(n, c);
            let dst = out.channel_mut(n, c);
            for y in 0..h {
                for xx in 0..w {
                    dst[y * w + xx] = src[(y / 2) * x.w + xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h / 2, grad.w / 2);
    let mut out = Tensor::zeros(grad.n, grad.c, h, w);
    for n in 0..grad.n {
        for c in 0..grad.c {
            let src = grad.channel(n, c);
            let dst = out.channel_mut(n, c);
            for i in 0..h {
                for j in 0..w {
                    let a = (2 * i) * grad.w + 2 * j;
                    let b = a + grad.w;
                    dst[i * w + j] = src[a] + src[a + 1] + src[b] + src[b + 1];
                }
            }
        }
    }
    out
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "param/grad group count");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct nested-loop convolution.
    fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let k = conv.kernel as isize;
        let pad = k / 2;
        let mut out = Tensor::zeros(x.n, conv.out_ch, x.h, x.w);
        for n in 0..x.n {
            for o in 0..conv.out_ch {
                for y in 0..x.h as isize {
                    for xx in 0..x.w as isize {
                        let mut acc = conv.bias[o];
                        for i in 0..conv.in_ch {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y + ky - pad;
                                    let sx = xx + kx - pad;
                                    if sy >= 0 && sx >= 0 && sy < x.h as isize && sx < x.w as isize {
                                        let wi = ((o * conv.in_ch + i) * conv.kernel + ky as usize)
                                            * conv.kernel
                                            + kx as usize;
                                        acc += conv.weight[wi]
                                            * x.channel(n, i)[sy as usize * x.w + sx as usize];
                                    }
                                }
                            }
                        }
                        out.channel_mut(n, o)[y as usize * x.w + xx as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kernel in [1, 3] {
            let mut conv = Conv2d::init(3, 4, kernel, &mut rng);
            conv.bias = vec![0.1, -0.2, 0.3, 0.0];
            let x = random_tensor(&mut rng, 2, 3, 5, 6);
            let fast = conv.forward(&x);
            let slow = naive_conv(&conv, &x);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kernel in [1, 3] {
            let conv = Conv2d::init(2, 3, kernel, &mut rng);
            let x = random_tensor(&mut rng, 2, 2, 4, 5);
            let proj = random_tensor(&mut rng, 2, 3, 4, 5);
            let loss = |c: &Conv2d, x: &Tensor| -> f64 {
                c.forward(x).data.iter().zip(&proj.data).map(|(a, b)| a * b).sum()
            };
            let mut grads = ConvGrads::zeros_like(&conv);
            let gin = conv.backward(&x, &proj, Some(&mut grads), true).unwrap();
            let h = 1e-6;
            for i in 0..conv.weight.len() {
                let mut p = conv.clone();
                p.weight[i] += h;
                let mut m = conv.clone();
                m.weight[i] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!((fd - grads.weight[i]).abs() < 1e-7, "weight {i}");
            }
            for i in 0..conv.bias.len() {
                let mut p = conv.clone();
                p.bias[i] += h;
                let mut m = conv.clone();
                m.bias[i] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                assert!((fd - grads.bias[i]).abs() < 1e-7, "bias {i}");
            }
            for i in 0..x.data.len() {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
                assert!((fd - gin.data[i]).abs() < 1e-7, "input {i}");
            }
        }
    }

    #[test]
    fn pooling_and_upsampling_adjoint_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 1, 2, 4, 6);
        let y = random_tensor(&mut rng, 1, 2, 2, 3);
        let dot = |a: &Tensor, b: &Tensor| a.data.iter().zip(&b.data).map(|(p, q)| p * q).sum::<f64>();
        assert!((dot(&avg_pool2(&x), &y) - dot(&x, &avg_pool2_backward(&y))).abs() < 1e-12);
        assert!((dot(&upsample2(&y), &x) - dot(&y, &upsample2_backward(&x))).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(0.1);
        opt.step(vec![&mut p], vec![&[2.0, -0.5]]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_lr_is_noop() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(0.0);
        opt.step(vec![&mut p], vec![&[2.0, -0.5]]);
        assert_eq!(p, vec![1.0, -1.0]);
    }
}
