//! Dense and convolutional layers with hand-written backward passes.
//!
//! Activations are row-major `(batch, features)` matrices. Images travel as
//! flattened `(channels, height, width)` rows.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

/// Parameter tensor stored as a flat row-major buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn matrix(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape[0], self.data.len() / self.shape[0]), &self.data)
            .expect("tensor buffer matches shape")
    }

    fn vector(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }

    fn from_array2(a: Array2<f64>, shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: a.as_standard_layout().iter().copied().collect(),
        }
    }

    fn from_array1(a: Array1<f64>) -> Self {
        Self {
            shape: vec![a.len()],
            data: a.to_vec(),
        }
    }
}

/// Fully connected layer `y = x W^T + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform init in `+-1/sqrt(fan_in)`.
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[fan_out, fan_in], bound, rng),
            bias: Tensor::uniform(&[fan_out], bound, rng),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.matrix().t()) + self.bias.vector()
    }

    /// Returns `(dx, [dW, db])`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, [Tensor; 2]) {
        let dx = dy.dot(&self.weight.matrix());
        let dw = dy.t().dot(&x);
        let db = dy.sum_axis(Axis(0));
        (
            dx,
            [
                Tensor::from_array2(dw, &self.weight.shape),
                Tensor::from_array1(db),
            ],
        )
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

fn relu(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|v| v.max(0.0));
    a
}

fn relu_backward(pre: &Array2<f64>, mut dy: Array2<f64>) -> Array2<f64> {
    dy.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dy
}

/// Stack of linear layers with ReLU between layers (and after the last one
/// when `relu_last`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_last: bool,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(widths: &[usize], relu_last: bool, rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers, relu_last }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    fn activates(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.relu_last
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(h.view());
            if self.activates(i) {
                h = relu(h);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(h.view());
            cache.inputs.push(h);
            h = if self.activates(i) {
                relu(pre.clone())
            } else {
                pre.clone()
            };
            cache.pre.push(pre);
        }
        (h, cache)
    }

    /// Returns `dx` and the parameter gradients in [`Mlp::params`] order.
    pub fn backward(&self, cache: &MlpCache, dy: Array2<f64>) -> (Array2<f64>, Vec<Tensor>) {
        let mut grads = Vec::with_capacity(2 * self.layers.len());
        let mut dy = dy;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if self.activates(i) {
                dy = relu_backward(&cache.pre[i], dy);
            }
            let (dx, [dw, db]) = layer.backward(cache.inputs[i].view(), dy.view());
            grads.push(db);
            grads.push(dw);
            dy = dx;
        }
        grads.reverse();
        (dy, grads)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out, in, 3, 3)`
    pub weight: Tensor,
    pub bias: Tensor,
}

const K: usize = 3;

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * K * K;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[out_channels, in_channels, K, K], bound, rng),
            bias: Tensor::uniform(&[out_channels], bound, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    /// `(H*W, Cin*9)` patch matrix for one image.
    fn im2col(&self, img: ArrayView1<'_, f64>, h: usize, w: usize) -> Array2<f64> {
        let cin = self.in_channels();
        let mut cols = Array2::zeros((h * w, cin * K * K));
        for y in 0..h {
            for x in 0..w {
                let row = y * w + x;
                for c in 0..cin {
                    for ky in 0..K {
                        let iy = y as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..K {
                            let ix = x as isize + kx as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[[row, (c * K + ky) * K + kx]] =
                                img[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, h: usize, w: usize) -> Array1<f64> {
        let cin = self.in_channels();
        let mut img = Array1::zeros(cin * h * w);
        for y in 0..h {
            for x in 0..w {
                let row = y * w + x;
                for c in 0..cin {
                    for ky in 0..K {
                        let iy = y as isize + ky as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..K {
                            let ix = x as isize + kx as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            img[(c * h + iy as usize) * w + ix as usize] +=
                                cols[[row, (c * K + ky) * K + kx]];
                        }
                    }
                }
            }
        }
        img
    }

    /// Output rows are flattened `(out, H, W)`; also returns the patch matrices.
    pub fn forward(
        &self,
        x: ArrayView2<'_, f64>,
        h: usize,
        w: usize,
    ) -> (Array2<f64>, Vec<Array2<f64>>) {
        let cout = self.out_channels();
        let wmat = self.weight.matrix();
        let mut out = Array2::zeros((x.nrows(), cout * h * w));
        let mut patches = Vec::with_capacity(x.nrows());
        for (n, img) in x.outer_iter().enumerate() {
            let cols = self.im2col(img, h, w);
            // (HW, out)
            let y = cols.dot(&wmat.t()) + self.bias.vector();
            let mut row = out.row_mut(n);
            for (p, yrow) in y.outer_iter().enumerate() {
                for (o, v) in yrow.iter().enumerate() {
                    row[o * h * w + p] = *v;
                }
            }
            patches.push(cols);
        }
        (out, patches)
    }

    pub fn backward(
        &self,
        patches: &[Array2<f64>],
        dy: ArrayView2<'_, f64>,
        h: usize,
        w: usize,
    ) -> (Array2<f64>, [Tensor; 2]) {
        let cout = self.out_channels();
        let wmat = self.weight.matrix();
        let mut dw = Array2::<f64>::zeros(wmat.raw_dim());
        let mut db = Array1::<f64>::zeros(cout);
        let mut dx = Array2::zeros((dy.nrows(), self.in_channels() * h * w));
        for (n, cols) in patches.iter().enumerate() {
            // (HW, out)
            let g = dy
                .row(n)
                .into_shape_with_order((cout, h * w))
                .expect("conv output row shape")
                .t()
                .to_owned();
            dw += &g.t().dot(cols);
            db += &g.sum_axis(Axis(0));
            let dcols = g.dot(&wmat);
            dx.row_mut(n).assign(&self.col2im(&dcols, h, w));
        }
        (
            dx,
            [
                Tensor::from_array2(dw, &self.weight.shape),
                Tensor::from_array1(db),
            ],
        )
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Conv + ReLU layers followed by global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub convs: Vec<Conv2d>,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    patches: Vec<Vec<Array2<f64>>>,
    pre: Vec<Array2<f64>>,
}

impl ConvNet {
    pub fn new(
        in_channels: usize,
        height: usize,
        width: usize,
        channels: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut convs = Vec::with_capacity(channels.len());
        let mut cin = in_channels;
        for &c in channels {
            convs.push(Conv2d::new(cin, c, rng));
            cin = c;
        }
        Self {
            convs,
            height,
            width,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.convs.last().map_or(0, Conv2d::out_channels)
    }

    fn pool(&self, h: &Array2<f64>) -> Array2<f64> {
        let c = self.out_dim();
        let hw = self.height * self.width;
        let mut out = Array2::zeros((h.nrows(), c));
        for (n, row) in h.outer_iter().enumerate() {
            for ch in 0..c {
                out[[n, ch]] = row.slice(s![ch * hw..(ch + 1) * hw]).sum() / hw as f64;
            }
        }
        out
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, ConvCache) {
        let mut cache = ConvCache {
            patches: Vec::new(),
            pre: Vec::new(),
        };
        let mut h = x.to_owned();
        for conv in &self.convs {
            let (pre, patches) = conv.forward(h.view(), self.height, self.width);
            cache.patches.push(patches);
            h = relu(pre.clone());
            cache.pre.push(pre);
        }
        (self.pool(&h), cache)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn backward(&self, cache: &ConvCache, dy: Array2<f64>) -> (Array2<f64>, Vec<Tensor>) {
        let c = self.out_dim();
        let hw = self.height * self.width;
        let mut g = Array2::zeros((dy.nrows(), c * hw));
        for (n, drow) in dy.outer_iter().enumerate() {
            for ch in 0..c {
                g.slice_mut(s![n, ch * hw..(ch + 1) * hw])
                    .fill(drow[ch] / hw as f64);
            }
        }
        let mut grads = Vec::with_capacity(2 * self.convs.len());
        for (i, conv) in self.convs.iter().enumerate().rev() {
            g = relu_backward(&cache.pre[i], g);
            let (dx, [dw, db]) =
                conv.backward(&cache.patches[i], g.view(), self.height, self.width);
            grads.push(db);
            grads.push(dw);
            g = dx;
        }
        grads.reverse();
        (g, grads)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.convs.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.convs.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar probe `sum(y * r)` for a fixed random `r`, so `dy = r`.
    fn probe(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
        (y * r).sum()
    }

    fn random(shape: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Central differences on every parameter of a cloned network.
    fn check_param_grads<N: Clone>(
        net: &N,
        grads: &[Tensor],
        params_mut: impl Fn(&mut N) -> Vec<&mut Tensor>,
        f: impl Fn(&N) -> f64,
    ) {
        let eps = 1e-6;
        for (pi, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let mut up = net.clone();
                params_mut(&mut up)[pi].data[i] += eps;
                let mut down = net.clone();
                params_mut(&mut down)[pi].data[i] -= eps;
                let fd = (f(&up) - f(&down)) / (2.0 * eps);
                assert!(
                    (fd - g.data[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {pi} entry {i}: fd {fd} vs {}",
                    g.data[i]
                );
            }
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[4, 5, 3], true, &mut rng);
        let x = random((3, 4), &mut rng);
        let r = random((3, 3), &mut rng);
        let (y, cache) = mlp.forward_cached(x.view());
        assert_eq!(y, mlp.forward(x.view()));
        let (dx, grads) = mlp.backward(&cache, r.clone());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += 1e-6;
            xm.as_slice_mut().unwrap()[i] -= 1e-6;
            let fd =
                (probe(&mlp.forward(xp.view()), &r) - probe(&mlp.forward(xm.view()), &r)) / 2e-6;
            assert!((fd - dx.as_slice().unwrap()[i]).abs() < 1e-6);
        }
        check_param_grads(&mlp, &grads, Mlp::params_mut, |m| {
            probe(&m.forward(x.view()), &r)
        });
    }

    #[test]
    fn convnet_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = ConvNet::new(2, 4, 3, &[3, 2], &mut rng);
        let x = random((2, 2 * 4 * 3), &mut rng);
        let r = random((2, 2), &mut rng);
        let (y, cache) = net.forward_cached(x.view());
        assert_eq!(y.dim(), (2, 2));
        let (dx, grads) = net.backward(&cache, r.clone());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += 1e-6;
            xm.as_slice_mut().unwrap()[i] -= 1e-6;
            let fd =
                (probe(&net.forward(xp.view()), &r) - probe(&net.forward(xm.view()), &r)) / 2e-6;
            assert!((fd - dx.as_slice().unwrap()[i]).abs() < 1e-6);
        }
        check_param_grads(&net, &grads, ConvNet::params_mut, |n| {
            probe(&n.forward(x.view()), &r)
        });
    }
}
