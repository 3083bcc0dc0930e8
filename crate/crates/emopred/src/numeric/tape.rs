//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every forward operation as a node holding the result
//! tensor and a backward closure. Nodes only ever reference earlier nodes,
//! so walking the tape in reverse creation order is a valid topological
//! order for backpropagation. Gradients for a node used several times
//! accumulate by summation.
//!
//! Every operation validates shapes and checks its output for NaN/Inf;
//! nothing non-finite propagates silently.

use crate::error::{Error, Result};
use crate::numeric::rng::Prng;
use crate::numeric::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<F> = Box<dyn Fn(&Tensor<F>) -> Result<Vec<(usize, Tensor<F>)>>>;

struct Node<F: Scalar> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    back: Option<BackFn<F>>,
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    consumed: bool,
}

/// Additive pre-softmax bias for masked-out attention columns. Large enough
/// that exp() underflows to exactly zero next to any realistic score.
pub const MASK_BIAS: f64 = -1e9;

const GELU_COEF: f64 = 0.044715;

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` was
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<F>, back: Option<BackFn<F>>, context: &str) -> Result<Var> {
        value.check_finite(context)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            grad: None,
            back,
        });
        Ok(Var(id))
    }

    /// Insert an input tensor (parameter or data) as a graph leaf.
    pub fn leaf(&mut self, value: Tensor<F>) -> Result<Var> {
        self.push(value, None, "leaf")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let back: BackFn<F> =
            Box::new(move |g| Ok(vec![(a.0, g.clone()), (b.0, g.clone())]));
        self.push(out, Some(back), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let out = av.zip_map(&bv, |x, y| x * y)?;
        let back: BackFn<F> = Box::new(move |g| {
            Ok(vec![
                (a.0, g.zip_map(&bv, |x, y| x * y)?),
                (b.0, g.zip_map(&av, |x, y| x * y)?),
            ])
        });
        self.push(out, Some(back), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let cf = F::from_f64(c);
        let out = self.value(a).scale(cf);
        let back: BackFn<F> = Box::new(move |g| Ok(vec![(a.0, g.scale(cf))]));
        self.push(out, Some(back), "scale")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let out = av.matmul(&bv)?;
        let back: BackFn<F> = Box::new(move |g| {
            Ok(vec![(a.0, g.matmul_bt(&bv)?), (b.0, av.matmul_ta(g)?)])
        });
        self.push(out, Some(back), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let back: BackFn<F> = Box::new(move |g| Ok(vec![(a.0, g.transpose()?)]));
        self.push(out, Some(back), "transpose")
    }

    /// Broadcast-add a length-n bias vector to every row of an m-by-n matrix.
    pub fn add_bias_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if !xv.is_matrix() || xv.cols() != bv.numel() {
            return Err(Error::Shape(format!(
                "add_bias_row of {:?} and {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = xv.clone();
        {
            let data = out.as_mut_slice();
            let b = bv.as_slice();
            for i in 0..m {
                for j in 0..n {
                    data[i * n + j] += b[j];
                }
            }
        }
        let bias_shape = bv.shape().to_vec();
        let back: BackFn<F> = Box::new(move |g| {
            let mut db = vec![F::zero(); n];
            for i in 0..m {
                for (dbj, &gj) in db.iter_mut().zip(g.row(i)) {
                    *dbj += gj;
                }
            }
            Ok(vec![
                (x.0, g.clone()),
                (bias.0, Tensor::from_vec(&bias_shape, db)?),
            ])
        });
        self.push(out, Some(back), "add_bias_row")
    }

    /// Select rows of `x` by index. Duplicate indices are allowed; their
    /// gradients accumulate on the shared source row.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_matrix() {
            return Err(Error::Shape(format!("gather_rows of {:?}", xv.shape())));
        }
        let (m, n) = (xv.rows(), xv.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Shape(format!(
                "gather_rows index {bad} out of range for {m} rows"
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            out.extend_from_slice(xv.row(i));
        }
        let idx = indices.to_vec();
        let back: BackFn<F> = Box::new(move |g| {
            let mut dx = Tensor::zeros(&[m, n]);
            {
                let data = dx.as_mut_slice();
                for (r, &i) in idx.iter().enumerate() {
                    let grow = g.row(r);
                    for (d, &gv) in data[i * n..(i + 1) * n].iter_mut().zip(grow) {
                        *d += gv;
                    }
                }
            }
            Ok(vec![(x.0, dx)])
        });
        let out = Tensor::from_vec(&[indices.len(), n], out)?;
        self.push(out, Some(back), "gather_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_matrix() || start + len > xv.cols() {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let back: BackFn<F> = Box::new(move |g| {
            let mut dx = Tensor::zeros(&[m, n]);
            {
                let data = dx.as_mut_slice();
                for i in 0..m {
                    data[i * n + start..i * n + start + len].copy_from_slice(g.row(i));
                }
            }
            Ok(vec![(x.0, dx)])
        });
        let out = Tensor::from_vec(&[m, len], out)?;
        self.push(out, Some(back), "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols of zero parts".into()));
        }
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            let v = self.value(p);
            if !v.is_matrix() || v.rows() != m {
                return Err(Error::Shape(format!(
                    "concat_cols row mismatch: {:?}",
                    v.shape()
                )));
            }
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let back: BackFn<F> = Box::new(move |g| {
            let mut contribs = Vec::with_capacity(ids.len());
            let mut offset = 0;
            for (&id, &w) in ids.iter().zip(widths.iter()) {
                let mut part = Vec::with_capacity(m * w);
                for i in 0..m {
                    part.extend_from_slice(&g.row(i)[offset..offset + w]);
                }
                contribs.push((id, Tensor::from_vec(&[m, w], part)?));
                offset += w;
            }
            Ok(contribs)
        });
        let out = Tensor::from_vec(&[m, n], out)?;
        self.push(out, Some(back), "concat_cols")
    }

    /// GELU in its tanh-approximation form.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let c = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let a = F::from_f64(GELU_COEF);
        let half = F::from_f64(0.5);
        let one = F::one();
        let three = F::from_f64(3.0);
        let out = xv.map(|v| {
            let u = c * (v + a * v * v * v);
            half * v * (one + u.tanh())
        });
        let back: BackFn<F> = Box::new(move |g| {
            let dx = g.zip_map(&xv, |gv, v| {
                let u = c * (v + a * v * v * v);
                let t = u.tanh();
                let du = c * (one + three * a * v * v);
                gv * (half * (one + t) + half * v * (one - t * t) * du)
            })?;
            Ok(vec![(x.0, dx)])
        });
        self.push(out, Some(back), "gelu")
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_rows_biased(x, None)
    }

    /// Row-wise softmax after adding a constant per-column bias (the
    /// attention padding mask). Columns biased by [`MASK_BIAS`] end up with
    /// exactly zero probability.
    pub fn softmax_rows_masked(&mut self, x: Var, col_bias: &Tensor<F>) -> Result<Var> {
        self.softmax_rows_biased(x, Some(col_bias))
    }

    fn softmax_rows_biased(&mut self, x: Var, col_bias: Option<&Tensor<F>>) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_matrix() {
            return Err(Error::Shape(format!("softmax_rows of {:?}", xv.shape())));
        }
        let (m, n) = (xv.rows(), xv.cols());
        if let Some(b) = col_bias {
            if b.numel() != n {
                return Err(Error::Shape(format!(
                    "softmax mask of {:?} for {n} columns",
                    b.shape()
                )));
            }
        }
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let row = xv.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            let mut max = F::neg_infinity();
            for j in 0..n {
                let v = row[j] + col_bias.map_or(F::zero(), |b| b.as_slice()[j]);
                orow[j] = v;
                if v > max {
                    max = v;
                }
            }
            let mut denom = F::zero();
            for o in orow.iter_mut() {
                *o = (*o - max).exp();
                denom += *o;
            }
            for o in orow.iter_mut() {
                *o = *o / denom;
            }
        }
        let out = Tensor::from_vec(&[m, n], out)?;
        let y = out.clone();
        let back: BackFn<F> = Box::new(move |g| {
            let mut dx = vec![F::zero(); m * n];
            for i in 0..m {
                let yrow = y.row(i);
                let grow = g.row(i);
                let mut dot = F::zero();
                for (yv, gv) in yrow.iter().zip(grow.iter()) {
                    dot += *yv * *gv;
                }
                let drow = &mut dx[i * n..(i + 1) * n];
                for ((d, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                    *d = yv * (gv - dot);
                }
            }
            Ok(vec![(x.0, Tensor::from_vec(&[m, n], dx)?)])
        });
        self.push(out, Some(back), "softmax_rows")
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let gv = self.value(gain).clone();
        let bv = self.value(bias);
        if !xv.is_matrix() || gv.numel() != xv.cols() || bv.numel() != xv.cols() {
            return Err(Error::Shape(format!(
                "layer_norm of {:?} with gain {:?} bias {:?}",
                xv.shape(),
                gv.shape(),
                bv.shape()
            )));
        }
        let (m, n) = (xv.rows(), xv.cols());
        let epsf = F::from_f64(eps);
        let nf = F::from_f64(n as f64);

        let mut normalized = vec![F::zero(); m * n];
        let mut inv_std = vec![F::zero(); m];
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let row = xv.row(i);
            let mut mean = F::zero();
            for &v in row {
                mean += v;
            }
            mean = mean / nf;
            let mut var = F::zero();
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var = var / nf;
            let is = (var + epsf).sqrt().recip();
            inv_std[i] = is;
            for j in 0..n {
                let xhat = (row[j] - mean) * is;
                normalized[i * n + j] = xhat;
                out[i * n + j] = gv.as_slice()[j] * xhat + bv.as_slice()[j];
            }
        }
        let out = Tensor::from_vec(&[m, n], out)?;
        let xhat = Tensor::from_vec(&[m, n], normalized)?;
        let gain_shape = gv.shape().to_vec();
        let bias_shape = bv.shape().to_vec();
        let back: BackFn<F> = Box::new(move |g| {
            let mut dgain = vec![F::zero(); n];
            let mut dbias = vec![F::zero(); n];
            let mut dx = vec![F::zero(); m * n];
            for i in 0..m {
                let grow = g.row(i);
                let xrow = xhat.row(i);
                // h = gain .* g; dx = inv_std * (h - mean(h) - xhat * mean(h .* xhat))
                let mut mean_h = F::zero();
                let mut mean_hx = F::zero();
                for j in 0..n {
                    let h = gv.as_slice()[j] * grow[j];
                    mean_h += h;
                    mean_hx += h * xrow[j];
                    dgain[j] += grow[j] * xrow[j];
                    dbias[j] += grow[j];
                }
                mean_h = mean_h / nf;
                mean_hx = mean_hx / nf;
                for j in 0..n {
                    let h = gv.as_slice()[j] * grow[j];
                    dx[i * n + j] = inv_std[i] * (h - mean_h - xrow[j] * mean_hx);
                }
            }
            Ok(vec![
                (x.0, Tensor::from_vec(&[m, n], dx)?),
                (gain.0, Tensor::from_vec(&gain_shape, dgain)?),
                (bias.0, Tensor::from_vec(&bias_shape, dbias)?),
            ])
        });
        self.push(out, Some(back), "layer_norm")
    }

    /// Mean of −log softmax(logits)[label] over the batch dimension.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if !lv.is_matrix() || lv.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "cross_entropy of {:?} with {} labels",
                lv.shape(),
                labels.len()
            )));
        }
        let (b, c) = (lv.rows(), lv.cols());
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let bf = F::from_f64(b as f64);

        // Softmax probabilities, kept for the backward pass.
        let mut probs = vec![F::zero(); b * c];
        let mut loss = F::zero();
        for i in 0..b {
            let row = lv.row(i);
            let prow = &mut probs[i * c..(i + 1) * c];
            let mut max = F::neg_infinity();
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut denom = F::zero();
            for (p, &v) in prow.iter_mut().zip(row) {
                *p = (v - max).exp();
                denom += *p;
            }
            for p in prow.iter_mut() {
                *p = *p / denom;
            }
            loss -= prow[labels[i]].ln();
        }
        loss = loss / bf;
        let probs = Tensor::from_vec(&[b, c], probs)?;
        let labels = labels.to_vec();
        let back: BackFn<F> = Box::new(move |g| {
            let gscalar = g.item() / bf;
            let mut dl = probs.as_slice().to_vec();
            for (i, &y) in labels.iter().enumerate() {
                dl[i * c + y] -= F::one();
            }
            for d in dl.iter_mut() {
                *d = *d * gscalar;
            }
            Ok(vec![(logits.0, Tensor::from_vec(&[b, c], dl)?)])
        });
        self.push(Tensor::scalar(loss), Some(back), "cross_entropy")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let total = xv.sum();
        let back: BackFn<F> = Box::new(move |g| {
            Ok(vec![(x.0, Tensor::filled(&shape, g.item()))])
        });
        self.push(Tensor::scalar(total), Some(back), "sum")
    }

    /// Arithmetic mean over the rows selected by `mask`, as a 1-by-n matrix.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_matrix() || mask.len() != xv.rows() {
            return Err(Error::Shape(format!(
                "masked_mean_rows of {:?} with {} mask entries",
                xv.shape(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::Data("masked_mean_rows with all rows masked".into()));
        }
        let (m, n) = (xv.rows(), xv.cols());
        let cf = F::from_f64(count as f64);
        let mut out = vec![F::zero(); n];
        for i in 0..m {
            if mask[i] {
                for (o, &v) in out.iter_mut().zip(xv.row(i)) {
                    *o += v;
                }
            }
        }
        for o in out.iter_mut() {
            *o = *o / cf;
        }
        let mask = mask.to_vec();
        let back: BackFn<F> = Box::new(move |g| {
            let mut dx = vec![F::zero(); m * n];
            for i in 0..m {
                if mask[i] {
                    for (d, &gv) in dx[i * n..(i + 1) * n].iter_mut().zip(g.row(0)) {
                        *d = gv / cf;
                    }
                }
            }
            Ok(vec![(x.0, Tensor::from_vec(&[m, n], dx)?)])
        });
        let out = Tensor::from_vec(&[1, n], out)?;
        self.push(out, Some(back), "masked_mean_rows")
    }

    /// Inverted dropout: kept entries are scaled by 1/(1-rate) so the
    /// expectation is unchanged; evaluation simply omits the op.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Prng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = F::from_f64(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mask = Tensor::from_vec(
            xv.shape(),
            (0..xv.numel())
                .map(|_| {
                    if rng.bernoulli(rate) {
                        F::zero()
                    } else {
                        keep_scale
                    }
                })
                .collect(),
        )?;
        let out = xv.zip_map(&mask, |v, m| v * m)?;
        let back: BackFn<F> = Box::new(move |g| {
            Ok(vec![(x.0, g.zip_map(&mask, |gv, m| gv * m)?)])
        });
        self.push(out, Some(back), "dropout")
    }

    /// Backpropagate from a scalar loss node. Gradients land on every
    /// reachable node and are read back with [`Tape::grad`]. A tape can be
    /// consumed only once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Config(
                "backward called twice on the same tape".into(),
            ));
        }
        self.consumed = true;
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.value(loss).shape()
            )));
        }

        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), F::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            g.check_finite("gradient")?;
            if let Some(back) = &self.nodes[id].back {
                for (pid, contrib) in back(&g)? {
                    match &mut grads[pid] {
                        Some(t) => t.add_assign(&contrib)?,
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }
}
