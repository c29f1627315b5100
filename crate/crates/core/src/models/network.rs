use crate::ndcore::{gemm_into, MatRef, Matrix, Vector};

use super::{softmax_in_place, Layer, LossKind, Model, CE_PROB_FLOOR};

/// Cached forward evaluation of a model on a batch.
///
/// Holds every pre-activation so the reverse pass, the logit tangent and
/// the Hessian-vector product can all reuse one forward sweep.
#[derive(Clone, Debug)]
pub struct ForwardPass<'a> {
    layers: Vec<Layer>,
    theta: Vec<f64>,
    input: &'a Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

fn relu_mask(pre: &Matrix, values: &mut Matrix) {
    for (v, a) in values.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if *a <= 0.0 {
            *v = 0.0;
        }
    }
}

fn add_bias(out: &mut Matrix, bias: &[f64]) {
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn column_sums(m: &Matrix, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
}

impl<'a> ForwardPass<'a> {
    pub(super) fn run(model: &Model, theta: &[f64], input: &'a Matrix) -> Self {
        let layers = model.layers().to_vec();
        let n = input.rows();
        let mut pre: Vec<Matrix> = Vec::with_capacity(layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(layers.len().saturating_sub(1));
        for (l, layer) in layers.iter().enumerate() {
            let h = if l == 0 { input } else { &post[l - 1] };
            let mut a = Matrix::zeros(n, layer.output);
            gemm_into(
                1.0,
                MatRef::new(h),
                weights(theta, layer),
                0.0,
                a.as_mut_slice(),
                n,
                layer.output,
            );
            if layer.bias {
                add_bias(
                    &mut a,
                    &theta[layer.b_offset..layer.b_offset + layer.output],
                );
            }
            if l + 1 < layers.len() {
                let mut h = a.clone();
                relu_mask(&a, &mut h);
                post.push(h);
            }
            pre.push(a);
        }
        ForwardPass {
            layers,
            theta: theta.to_vec(),
            input,
            pre,
            post,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn logits(&self) -> &Matrix {
        &self.pre[self.pre.len() - 1]
    }

    pub fn into_logits(mut self) -> Matrix {
        self.pre.pop().expect("model has at least one layer")
    }

    /// Smallest pre-activation magnitude over all rectifier units.
    pub fn min_hidden_preactivation(&self) -> f64 {
        self.pre[..self.pre.len() - 1]
            .iter()
            .flat_map(|m| m.as_slice().iter())
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
    }

    fn hidden(&self, l: usize) -> &Matrix {
        if l == 0 {
            self.input
        } else {
            &self.post[l - 1]
        }
    }

    /// Row-wise softmax of the logits.
    pub fn probabilities(&self) -> Matrix {
        let mut p = self.logits().clone();
        for i in 0..p.rows() {
            softmax_in_place(p.row_mut(i));
        }
        p
    }

    pub fn loss(&self, kind: LossKind, y: &Matrix) -> f64 {
        let z = self.logits();
        let n = z.rows() as f64;
        match kind {
            LossKind::MeanSquaredError => {
                let sq: f64 = z
                    .as_slice()
                    .iter()
                    .zip(y.as_slice())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                sq / (2.0 * n)
            }
            LossKind::SoftmaxCrossEntropy => {
                let floor = CE_PROB_FLOOR.ln();
                let mut total = 0.0;
                for i in 0..z.rows() {
                    let row = z.row(i);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    for (zc, yc) in row.iter().zip(y.row(i)) {
                        if *yc != 0.0 {
                            total -= yc * (zc - lse).max(floor).min(0.0);
                        }
                    }
                }
                total / n
            }
        }
    }

    /// `∂L/∂z`, an `n x k` matrix.
    pub fn logit_grad(&self, kind: LossKind, y: &Matrix) -> Matrix {
        let n = self.batch_size() as f64;
        let mut g = match kind {
            LossKind::MeanSquaredError => self.logits().clone(),
            LossKind::SoftmaxCrossEntropy => self.probabilities(),
        };
        for (gv, yv) in g.as_mut_slice().iter_mut().zip(y.as_slice()) {
            *gv = (*gv - yv) / n;
        }
        g
    }

    /// Reverse pass: parameter gradient for a given `∂L/∂z`.
    pub fn backward(&self, logit_grad: &Matrix) -> Vector {
        let n = self.batch_size();
        let mut grad = vec![0.0; self.theta.len()];
        let mut delta = logit_grad.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let h = self.hidden(l);
            gemm_into(
                1.0,
                MatRef::new(h).t(),
                MatRef::new(&delta),
                0.0,
                &mut grad[layer.w_offset..layer.w_offset + layer.input * layer.output],
                layer.input,
                layer.output,
            );
            if layer.bias {
                column_sums(
                    &delta,
                    &mut grad[layer.b_offset..layer.b_offset + layer.output],
                );
            }
            if l > 0 {
                let mut dh = Matrix::zeros(n, layer.input);
                gemm_into(
                    1.0,
                    MatRef::new(&delta),
                    weights(&self.theta, &layer).t(),
                    0.0,
                    dh.as_mut_slice(),
                    n,
                    layer.input,
                );
                relu_mask(&self.pre[l - 1], &mut dh);
                delta = dh;
            }
        }
        grad.into()
    }

    /// Tangents of every pre-activation in parameter direction `u`.
    fn tangents(&self, u: &[f64]) -> Vec<Matrix> {
        let n = self.batch_size();
        let mut out: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        let mut hdot: Option<Matrix> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut adot = Matrix::zeros(n, layer.output);
            gemm_into(
                1.0,
                MatRef::new(self.hidden(l)),
                weights(u, layer),
                0.0,
                adot.as_mut_slice(),
                n,
                layer.output,
            );
            if let Some(hd) = &hdot {
                gemm_into(
                    1.0,
                    MatRef::new(hd),
                    weights(&self.theta, layer),
                    1.0,
                    adot.as_mut_slice(),
                    n,
                    layer.output,
                );
            }
            if layer.bias {
                add_bias(&mut adot, &u[layer.b_offset..layer.b_offset + layer.output]);
            }
            if l + 1 < self.layers.len() {
                let mut hd = adot.clone();
                relu_mask(&self.pre[l], &mut hd);
                hdot = Some(hd);
            }
            out.push(adot);
        }
        out
    }

    /// `(∂z/∂θ) u` for every row.
    pub fn jvp(&self, u: &[f64]) -> Matrix {
        self.tangents(u)
            .pop()
            .expect("model has at least one layer")
    }

    /// `∂/∂y [∇_θ L · v] = −(1/n) (∂z/∂θ) v` for both supported losses.
    pub fn label_contraction(&self, v: &[f64]) -> Matrix {
        let n = self.batch_size() as f64;
        let mut c = self.jvp(v);
        c.as_mut_slice().iter_mut().for_each(|x| *x = -*x / n);
        c
    }

    /// Forward-over-reverse Hessian-vector product.
    pub fn hvp(&self, kind: LossKind, y: &Matrix, v: &[f64]) -> Vector {
        let n = self.batch_size();
        let nf = n as f64;
        let adots = self.tangents(v);
        let zdot = &adots[adots.len() - 1];

        let mut delta = self.logit_grad(kind, y);
        let mut ddelta = match kind {
            LossKind::MeanSquaredError => zdot.scaled(1.0 / nf),
            LossKind::SoftmaxCrossEntropy => {
                let p = self.probabilities();
                let mut out = Matrix::zeros(n, zdot.cols());
                for i in 0..n {
                    let pr = p.row(i);
                    let zr = zdot.row(i);
                    let inner: f64 = pr.iter().zip(zr).map(|(a, b)| a * b).sum();
                    for (o, (pc, zc)) in out.row_mut(i).iter_mut().zip(pr.iter().zip(zr)) {
                        *o = pc * (zc - inner) / nf;
                    }
                }
                out
            }
        };

        let mut hv = vec![0.0; self.theta.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let wslice = &mut hv[layer.w_offset..layer.w_offset + layer.input * layer.output];
            gemm_into(
                1.0,
                MatRef::new(self.hidden(l)).t(),
                MatRef::new(&ddelta),
                0.0,
                wslice,
                layer.input,
                layer.output,
            );
            if l > 0 {
                let mut hdot = adots[l - 1].clone();
                relu_mask(&self.pre[l - 1], &mut hdot);
                gemm_into(
                    1.0,
                    MatRef::new(&hdot).t(),
                    MatRef::new(&delta),
                    1.0,
                    wslice,
                    layer.input,
                    layer.output,
                );
            }
            if layer.bias {
                column_sums(
                    &ddelta,
                    &mut hv[layer.b_offset..layer.b_offset + layer.output],
                );
            }
            if l > 0 {
                let w = weights(&self.theta, &layer);
                let vw = weights(v, &layer);
                let mut dh = Matrix::zeros(n, layer.input);
                gemm_into(
                    1.0,
                    MatRef::new(&delta),
                    w.t(),
                    0.0,
                    dh.as_mut_slice(),
                    n,
                    layer.input,
                );
                let mut dh_dot = Matrix::zeros(n, layer.input);
                gemm_into(
                    1.0,
                    MatRef::new(&ddelta),
                    w.t(),
                    0.0,
                    dh_dot.as_mut_slice(),
                    n,
                    layer.input,
                );
                gemm_into(
                    1.0,
                    MatRef::new(&delta),
                    vw.t(),
                    1.0,
                    dh_dot.as_mut_slice(),
                    n,
                    layer.input,
                );
                relu_mask(&self.pre[l - 1], &mut dh);
                relu_mask(&self.pre[l - 1], &mut dh_dot);
                delta = dh;
                ddelta = dh_dot;
            }
        }
        hv.into()
    }
}

fn weights<'t>(theta: &'t [f64], layer: &Layer) -> MatRef<'t> {
    MatRef::from_slice(
        &theta[layer.w_offset..layer.w_offset + layer.input * layer.output],
        layer.input,
        layer.output,
    )
}
