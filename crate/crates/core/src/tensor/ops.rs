//! Forward and backward kernels.

use rand::Rng;

use super::{Mode, Real, Tensor};
use crate::error::{Error, Result};

fn expect_2d<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::Shape(format!("{what} must be 2-D, got {s:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Embedding lookup

/// Gathers rows `ids` of a `V x d` table into an `n x d` tensor.
pub fn embedding_lookup<T: Real>(table: &Tensor<T>, ids: &[u32]) -> Result<Tensor<T>> {
    let (v, d) = expect_2d(table, "embedding table")?;
    let mut data = Vec::with_capacity(ids.len() * d);
    for (pos, &id) in ids.iter().enumerate() {
        if id as usize >= v {
            return Err(Error::InvalidArgument(format!(
                "embedding id {id} at position {pos} out of range for table of {v} rows"
            )));
        }
        data.extend_from_slice(table.row(id as usize));
    }
    Tensor::new(vec![ids.len(), d], data)
}

/// Scatter-adds output-gradient rows into a `V x d` gradient buffer.
pub fn embedding_backward<T: Real>(table_grad: &mut [T], d: usize, ids: &[u32], grad_out: &[T]) {
    for (i, &id) in ids.iter().enumerate() {
        let dst = &mut table_grad[id as usize * d..(id as usize + 1) * d];
        for (a, &b) in dst.iter_mut().zip(&grad_out[i * d..(i + 1) * d]) {
            *a += b;
        }
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output length equals the input length.
    Same,
    /// No padding; output length is `n - w + 1`.
    Valid,
}

impl Padding {
    /// Number of positions the window reaches behind the output position.
    pub fn offset(self, width: usize) -> usize {
        match self {
            Padding::Same => (width - 1) / 2,
            Padding::Valid => 0,
        }
    }

    pub fn out_len(self, n: usize, width: usize) -> Option<usize> {
        match self {
            Padding::Same => Some(n),
            Padding::Valid => n.checked_sub(width).map(|m| m + 1),
        }
    }
}

fn conv_shapes<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    padding: Padding,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c_in) = expect_2d(input, "conv input")?;
    let (w, fc_in, c_out) = match filters.shape() {
        &[w, ci, co] => (w, ci, co),
        s => return Err(Error::Shape(format!("conv filters must be 3-D, got {s:?}"))),
    };
    if fc_in != c_in || w == 0 {
        return Err(Error::Shape(format!(
            "conv input {:?} incompatible with filters {:?}",
            input.shape(),
            filters.shape()
        )));
    }
    let m = padding.out_len(n, w).ok_or_else(|| {
        Error::Shape(format!("valid convolution needs at least {w} rows, got {n}"))
    })?;
    Ok((n, c_in, w, c_out, m))
}

/// `out[t, o] = bias[o] + sum_{j, i} input[t + j - offset, i] * filters[j, i, o]`,
/// with out-of-range input rows treated as zero.
pub fn conv1d<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, c_in, w, c_out, m) = conv_shapes(input, filters, padding)?;
    if bias.numel() != c_out {
        return Err(Error::Shape(format!(
            "conv bias has {} entries for {c_out} filters",
            bias.numel()
        )));
    }
    let off = padding.offset(w);
    let x = input.data();
    let f = filters.data();
    let mut out = vec![T::zero(); m * c_out];
    for t in 0..m {
        let row = &mut out[t * c_out..(t + 1) * c_out];
        row.copy_from_slice(bias.data());
        for j in 0..w {
            let Some(src) = (t + j).checked_sub(off).filter(|&s| s < n) else {
                continue;
            };
            let xin = &x[src * c_in..(src + 1) * c_in];
            let fj = &f[j * c_in * c_out..(j + 1) * c_in * c_out];
            for (i, &a) in xin.iter().enumerate() {
                let fr = &fj[i * c_out..(i + 1) * c_out];
                for (o, &b) in row.iter_mut().zip(fr) {
                    *o += a * b;
                }
            }
        }
    }
    Tensor::new(vec![m, c_out], out)
}

#[derive(Debug, Clone)]
pub struct Conv1dGrads<T> {
    pub input: Tensor<T>,
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv1d`]. Zero entries of `grad_out` are skipped, so the
/// cost scales with the number of nonzero output gradients.
pub fn conv1d_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<Conv1dGrads<T>> {
    let (n, c_in, w, c_out, m) = conv_shapes(input, filters, padding)?;
    if grad_out.shape() != [m, c_out] {
        return Err(Error::Shape(format!(
            "conv output gradient {:?}, expected {:?}",
            grad_out.shape(),
            [m, c_out]
        )));
    }
    let off = padding.offset(w);
    let x = input.data();
    let f = filters.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); n * c_in];
    let mut gf = vec![T::zero(); w * c_in * c_out];
    let mut gb = vec![T::zero(); c_out];
    for t in 0..m {
        for o in 0..c_out {
            let go = g[t * c_out + o];
            if go == T::zero() {
                continue;
            }
            gb[o] += go;
            for j in 0..w {
                let Some(src) = (t + j).checked_sub(off).filter(|&s| s < n) else {
                    continue;
                };
                let base = j * c_in * c_out + o;
                for i in 0..c_in {
                    gx[src * c_in + i] += go * f[base + i * c_out];
                    gf[base + i * c_out] += go * x[src * c_in + i];
                }
            }
        }
    }
    Ok(Conv1dGrads {
        input: Tensor::new(vec![n, c_in], gx)?,
        filters: Tensor::new(vec![w, c_in, c_out], gf)?,
        bias: Tensor::new(vec![c_out], gb)?,
    })
}

// ---------------------------------------------------------------------------
// Max over time

/// Column-wise maximum over the first `valid_len` rows. Returns the pooled
/// vector and, per column, the row that attained it (lowest row on ties).
pub fn max_over_time<T: Real>(input: &Tensor<T>, valid_len: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c) = expect_2d(input, "pooling input")?;
    if valid_len == 0 || valid_len > n {
        return Err(Error::InvalidArgument(format!(
            "valid length {valid_len} outside 1..={n}"
        )));
    }
    let mut best = input.row(0).to_vec();
    let mut arg = vec![0usize; c];
    for t in 1..valid_len {
        for (j, &v) in input.row(t).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = t;
            }
        }
    }
    Ok((Tensor::new(vec![c], best)?, arg))
}

/// Routes each pooled gradient to its argmax row of an `n x c` gradient.
pub fn max_over_time_backward<T: Real>(grad_out: &[T], argmax: &[usize], n: usize) -> Tensor<T> {
    let c = grad_out.len();
    let mut g = Tensor::zeros(&[n, c]);
    let d = g.data_mut();
    for (j, (&go, &t)) in grad_out.iter().zip(argmax).enumerate() {
        d[t * c + j] += go;
    }
    g
}

/// Raw-slice convolution fused with max-over-time pooling over all `m` output
/// rows. Equivalent to [`conv1d`] followed by [`max_over_time`], without
/// materializing the `m x c_out` output. Returns pre-activation maxima and
/// their rows.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_max<T: Real>(
    x: &[T],
    n: usize,
    c_in: usize,
    filters: &[T],
    bias: &[T],
    w: usize,
    padding: Padding,
    best: &mut [T],
    arg: &mut [usize],
) {
    let c_out = bias.len();
    debug_assert_eq!(x.len(), n * c_in);
    debug_assert_eq!(filters.len(), w * c_in * c_out);
    let m = padding.out_len(n, w).expect("caller checks length");
    let off = padding.offset(w);
    let mut row = vec![T::zero(); c_out];
    for t in 0..m {
        row.copy_from_slice(bias);
        for j in 0..w {
            let Some(src) = (t + j).checked_sub(off).filter(|&s| s < n) else {
                continue;
            };
            let xin = &x[src * c_in..(src + 1) * c_in];
            let fj = &filters[j * c_in * c_out..(j + 1) * c_in * c_out];
            for (i, &a) in xin.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let fr = &fj[i * c_out..(i + 1) * c_out];
                for (o, &b) in row.iter_mut().zip(fr) {
                    *o += a * b;
                }
            }
        }
        if t == 0 {
            best.copy_from_slice(&row);
            arg.fill(0);
        } else {
            for o in 0..c_out {
                if row[o] > best[o] {
                    best[o] = row[o];
                    arg[o] = t;
                }
            }
        }
    }
}

/// Backward of [`conv1d_max`] for a pooled gradient `g` (one entry per
/// filter). Accumulates into `gx`, `gf` and `gb`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_max_backward<T: Real>(
    x: &[T],
    n: usize,
    c_in: usize,
    filters: &[T],
    w: usize,
    padding: Padding,
    arg: &[usize],
    g: &[T],
    gx: &mut [T],
    gf: &mut [T],
    gb: &mut [T],
) {
    let c_out = g.len();
    let off = padding.offset(w);
    for o in 0..c_out {
        let go = g[o];
        if go == T::zero() {
            continue;
        }
        gb[o] += go;
        let t = arg[o];
        for j in 0..w {
            let Some(src) = (t + j).checked_sub(off).filter(|&s| s < n) else {
                continue;
            };
            let base = j * c_in * c_out + o;
            let xin = &x[src * c_in..(src + 1) * c_in];
            let gxr = &mut gx[src * c_in..(src + 1) * c_in];
            for i in 0..c_in {
                gxr[i] += go * filters[base + i * c_out];
                gf[base + i * c_out] += go * xin[i];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.clear_grad();
    for v in y.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    y
}

/// Gradient of ReLU given its input; the derivative at zero is taken as zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&a, &g)| if a > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

// ---------------------------------------------------------------------------
// Dense

/// `x W + bias` for `x: b x f_in`, `W: f_in x f_out`.
pub fn dense<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, fi) = expect_2d(x, "dense input")?;
    let (wi, fo) = expect_2d(w, "dense weight")?;
    if wi != fi || bias.numel() != fo {
        return Err(Error::Shape(format!(
            "dense input {:?} incompatible with weight {:?} / bias {:?}",
            x.shape(),
            w.shape(),
            bias.shape()
        )));
    }
    let mut out = vec![T::zero(); b * fo];
    for r in 0..b {
        let row = &mut out[r * fo..(r + 1) * fo];
        row.copy_from_slice(bias.data());
        for (i, &a) in x.row(r).iter().enumerate() {
            for (o, &wv) in row.iter_mut().zip(w.row(i)) {
                *o += a * wv;
            }
        }
    }
    Tensor::new(vec![b, fo], out)
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, grad_out: &Tensor<T>) -> DenseGrads<T> {
    let (b, fi) = (x.rows(), x.cols());
    let fo = w.cols();
    let mut gx = vec![T::zero(); b * fi];
    let mut gw = vec![T::zero(); fi * fo];
    let mut gb = vec![T::zero(); fo];
    for r in 0..b {
        let g = grad_out.row(r);
        for (acc, &v) in gb.iter_mut().zip(g) {
            *acc += v;
        }
        for (i, &a) in x.row(r).iter().enumerate() {
            let wr = w.row(i);
            let mut s = T::zero();
            for (&wv, &gv) in wr.iter().zip(g) {
                s += wv * gv;
            }
            gx[r * fi + i] = s;
            for (acc, &gv) in gw[i * fo..(i + 1) * fo].iter_mut().zip(g) {
                *acc += a * gv;
            }
        }
    }
    DenseGrads {
        input: Tensor::new(vec![b, fi], gx).unwrap(),
        weight: Tensor::new(vec![fi, fo], gw).unwrap(),
        bias: Tensor::new(vec![fo], gb).unwrap(),
    }
}

// ---------------------------------------------------------------------------
// Batch normalization

/// Learnable scale/shift plus running statistics for one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight kept on the old running statistics at each update.
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[features], T::one()),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], T::one()),
            momentum,
            eps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
    rows: usize,
    mode: Mode,
}

/// Train mode normalizes by batch statistics (biased variance); eval mode
/// uses the running estimates. Running statistics are not touched here; see
/// [`BatchNorm::update_running`].
pub fn batch_norm<T: Real>(
    x: &Tensor<T>,
    bn: &BatchNorm<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (b, f) = expect_2d(x, "batch-norm input")?;
    if bn.gamma.numel() != f {
        return Err(Error::Shape(format!(
            "batch norm over {} features applied to {f}",
            bn.gamma.numel()
        )));
    }
    let eps = T::of(bn.eps);
    let (mean, var) = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(Error::InvalidArgument(format!(
                    "train-mode batch norm needs at least 2 rows, got {b}"
                )));
            }
            let bt = T::of(b as f64);
            let mut mean = vec![T::zero(); f];
            for r in 0..b {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= bt);
            let mut var = vec![T::zero(); f];
            for r in 0..b {
                for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= bt);
            (mean, var)
        }
        Mode::Eval => (
            bn.running_mean.data().to_vec(),
            bn.running_var.data().to_vec(),
        ),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); b * f];
    let mut out = vec![T::zero(); b * f];
    for r in 0..b {
        for j in 0..f {
            let h = (x.row(r)[j] - mean[j]) * inv_std[j];
            xhat[r * f + j] = h;
            out[r * f + j] = bn.gamma.data()[j] * h + bn.beta.data()[j];
        }
    }
    Ok((
        Tensor::new(vec![b, f], out)?,
        BatchNormCache {
            xhat,
            inv_std,
            mean,
            var,
            rows: b,
            mode,
        },
    ))
}

impl<T: Real> BatchNorm<T> {
    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates, using the unbiased variance. No-op for eval-mode caches.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let keep = T::of(self.momentum);
        let take = T::one() - keep;
        let bt = T::of(cache.rows as f64);
        let unbias = bt / (bt - T::one());
        for (rm, &m) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *rm = keep * *rm + take * m;
        }
        for (rv, &v) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *rv = keep * *rv + take * v * unbias;
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batch_norm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> BatchNormGrads<T> {
    let b = cache.rows;
    let f = gamma.numel();
    let g = grad_out.data();
    let mut ggamma = vec![T::zero(); f];
    let mut gbeta = vec![T::zero(); f];
    for r in 0..b {
        for j in 0..f {
            gbeta[j] += g[r * f + j];
            ggamma[j] += g[r * f + j] * cache.xhat[r * f + j];
        }
    }
    let mut gx = vec![T::zero(); b * f];
    match cache.mode {
        Mode::Train => {
            let bt = T::of(b as f64);
            for r in 0..b {
                for j in 0..f {
                    let k = r * f + j;
                    gx[k] = gamma.data()[j] * cache.inv_std[j] / bt
                        * (bt * g[k] - gbeta[j] - cache.xhat[k] * ggamma[j]);
                }
            }
        }
        Mode::Eval => {
            for r in 0..b {
                for j in 0..f {
                    let k = r * f + j;
                    gx[k] = g[k] * gamma.data()[j] * cache.inv_std[j];
                }
            }
        }
    }
    BatchNormGrads {
        input: Tensor::new(vec![b, f], gx).unwrap(),
        gamma: Tensor::new(vec![f], ggamma).unwrap(),
        beta: Tensor::new(vec![f], gbeta).unwrap(),
    }
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout. Returns the output and the multiplicative mask
/// (`None` when the layer is the identity).
pub fn dropout<T: Real, R: Rng>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { scale })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Real>(grad_out: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    match mask {
        None => grad_out.clone(),
        Some(m) => {
            let data = grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::new(grad_out.shape().to_vec(), data).unwrap()
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

/// Row-wise softmax and mean negative log-likelihood of `labels`.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (b, k) = expect_2d(logits, "logits")?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} rows", labels.len())));
    }
    let probs = softmax(logits)?;
    let mut loss = T::zero();
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {k} classes")));
        }
        // log p_y = z_y - max - log(sum exp(z - max)), computed without forming p_y.
        let row = logits.row(r);
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&z| (z - mx).exp()).sum::<T>().ln();
        loss += lse - (row[y] - mx);
    }
    Ok((loss / T::of(b as f64), probs))
}

pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, k) = expect_2d(logits, "logits")?;
    let mut p = vec![T::zero(); b * k];
    for r in 0..b {
        let row = logits.row(r);
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let out = &mut p[r * k..(r + 1) * k];
        let mut s = T::zero();
        for (o, &z) in out.iter_mut().zip(row) {
            *o = (z - mx).exp();
            s += *o;
        }
        out.iter_mut().for_each(|o| *o /= s);
    }
    Tensor::new(vec![b, k], p)
}

/// Gradient of the mean cross-entropy w.r.t. logits: `(probs - onehot) / b`.
pub fn softmax_xent_backward<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Tensor<T> {
    let b = probs.rows();
    let k = probs.cols();
    let bt = T::of(b as f64);
    let mut g = probs.clone();
    g.clear_grad();
    let d = g.data_mut();
    for (r, &y) in labels.iter().enumerate() {
        d[r * k + y] -= T::one();
    }
    d.iter_mut().for_each(|v| *v /= bt);
    g
}

// ---------------------------------------------------------------------------
// L2 penalty

/// `lambda * sum w^2` over the given tensors.
pub fn l2_penalty<T: Real>(tensors: &[&Tensor<T>], lambda: f64) -> T {
    let s: T = tensors
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|&w| w * w)
        .sum();
    T::of(lambda) * s
}

/// Adds the penalty derivative `2 * lambda * w` to the tensor's gradient.
pub fn l2_backward<T: Real>(t: &mut Tensor<T>, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let c = T::of(2.0 * lambda);
    let w = t.data().to_vec();
    for (g, v) in t.grad_mut().iter_mut().zip(w) {
        *g += c * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn embedding_gather_and_scatter() {
        let table = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let out = embedding_lookup(&table, &[1, 0, 1]).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(embedding_lookup(&table, &[]).unwrap().shape(), &[0, 2]);
        let err = embedding_lookup(&table, &[0, 2]).unwrap_err().to_string();
        assert!(err.contains("position 1"), "{err}");
        let mut g = vec![0.0; 4];
        embedding_backward(&mut g, 2, &[1, 0, 1], &[1.0; 6]);
        assert_eq!(g, [1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn conv_all_ones_valid() {
        let x = Tensor::full(&[3, 2], 1.0);
        let f = Tensor::full(&[3, 2, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv1d(&x, &f, &b, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.data(), &[6.0]);
        assert!(conv1d(&Tensor::full(&[2, 2], 1.0), &f, &b, Padding::Valid).is_err());
    }

    #[test]
    fn conv_identity_filter_same() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::uniform(&[5, 3], 1.0, &mut rng);
        for w in [1usize, 2, 3, 4] {
            let off = Padding::Same.offset(w);
            let mut f = Tensor::zeros(&[w, 3, 3]);
            for i in 0..3 {
                f.data_mut()[off * 9 + i * 3 + i] = 1.0;
            }
            let y = conv1d(&x, &f, &Tensor::zeros(&[3]), Padding::Same).unwrap();
            assert_eq!(y.data(), x.data(), "width {w}");
        }
    }

    #[test]
    fn fused_conv_max_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, w, pad) in [(5, 3, Padding::Same), (2, 3, Padding::Same), (6, 2, Padding::Valid)] {
            let x = Tensor::<f64>::uniform(&[n, 4], 1.0, &mut rng);
            let f = Tensor::<f64>::uniform(&[w, 4, 3], 1.0, &mut rng);
            let b = Tensor::<f64>::uniform(&[3], 1.0, &mut rng);
            let y = conv1d(&x, &f, &b, pad).unwrap();
            let (p, arg) = max_over_time(&y, y.rows()).unwrap();
            let mut best = vec![0.0; 3];
            let mut arg2 = vec![0; 3];
            conv1d_max(x.data(), n, 4, f.data(), b.data(), w, pad, &mut best, &mut arg2);
            assert_eq!(best, p.data());
            assert_eq!(arg, arg2);

            let g = [0.5, -1.0, 0.0];
            let full = conv1d_backward(&x, &f, pad, &max_over_time_backward(&g, &arg, y.rows())).unwrap();
            let (mut gx, mut gf, mut gb) = (vec![0.0; n * 4], vec![0.0; w * 12], vec![0.0; 3]);
            conv1d_max_backward(x.data(), n, 4, f.data(), w, pad, &arg, &g, &mut gx, &mut gf, &mut gb);
            assert_eq!(gx, full.input.data());
            assert_eq!(gf, full.filters.data());
            assert_eq!(gb, full.bias.data());
        }
    }

    #[test]
    fn max_pool_basics() {
        let x = t2(&[&[1.0, 5.0], &[3.0, 2.0]]);
        let (p, arg) = max_over_time(&x, 2).unwrap();
        assert_eq!(p.data(), &[3.0, 5.0]);
        assert_eq!(arg, [1, 0]);
        let (p, _) = max_over_time(&x, 1).unwrap();
        assert_eq!(p.data(), x.row(0));
        assert!(max_over_time(&x, 0).is_err());
        assert!(max_over_time(&x, 3).is_err());
    }

    #[test]
    fn max_pool_tie_routes_to_first_row() {
        let x = t2(&[&[2.0, 0.0], &[2.0, 0.0]]);
        let (_, arg) = max_over_time(&x, 2).unwrap();
        let g = max_over_time_backward(&[1.0, 1.0], &arg, 2);
        assert_eq!(g.data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn batch_norm_symmetric_and_constant() {
        let bn = BatchNorm::<f64>::new(1, 0.9, 1e-5);
        let (y, _) = batch_norm(&t2(&[&[-1.0], &[1.0]]), &bn, Mode::Train).unwrap();
        let e = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + e).abs() < 1e-15 && (y.data()[1] - e).abs() < 1e-15);
        let (y, _) = batch_norm(&Tensor::full(&[4, 2], 3.0), &bn_2(), Mode::Train).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
        assert!(batch_norm(&t2(&[&[1.0]]), &bn, Mode::Train).is_err());
    }

    fn bn_2() -> BatchNorm<f64> {
        BatchNorm::new(2, 0.9, 1e-5)
    }

    #[test]
    fn batch_norm_running_stats() {
        let mut bn = BatchNorm::<f64>::new(1, 0.9, 1e-5);
        let (_, cache) = batch_norm(&t2(&[&[1.0], &[3.0]]), &bn, Mode::Train).unwrap();
        assert_eq!(bn.running_mean.data(), &[0.0]);
        bn.update_running(&cache);
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-15);
        // unbiased batch variance is 2
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
        let (y, _) = batch_norm(&t2(&[&[0.2]]), &bn, Mode::Eval).unwrap();
        assert!(y.data()[0].abs() < 1e-15);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::full(&[10], 2.0);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout(&x, 0.2, Mode::Eval, &mut rng).unwrap().0, x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_mean_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let x = Tensor::<f64>::full(&[n], 1.0);
        let (y, _) = dropout(&x, 0.2, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        // Each output is 1.25 w.p. 0.8, else 0: sd = 1.25 * sqrt(0.8 * 0.2).
        let se = 1.25 * (0.8f64 * 0.2).sqrt() / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn dense_identity_and_relu() {
        let x = t2(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let eye = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let y = dense(&x, &eye, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(relu(&t2(&[&[-2.0, 3.0]])).data(), &[0.0, 3.0]);
        let err = dense(&x, &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[2])).unwrap_err();
        assert!(err.to_string().contains("[2, 2]") && err.to_string().contains("[3, 2]"));
    }

    #[test]
    fn softmax_cases() {
        let (loss, p) = softmax_xent(&t2(&[&[0.0, 0.0]]), &[0]).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let (loss, p) = softmax_xent(&t2(&[&[1000.0, 0.0]]), &[0]).unwrap();
        assert!(loss.abs() < 1e-12 && p.is_finite());
        assert!(softmax_xent(&t2(&[&[0.0, 0.0]]), &[2]).is_err());
    }

    #[test]
    fn l2_values() {
        let w = Tensor::<f64>::full(&[1], 3.0);
        assert_eq!(l2_penalty(&[&w], 0.0), 0.0);
        assert!((l2_penalty(&[&w], 1e-5) - 9e-5).abs() < 1e-18);
        let mut w = w;
        l2_backward(&mut w, 1e-5);
        assert!((w.grad().unwrap()[0] - 6e-5).abs() < 1e-18);
    }
}
