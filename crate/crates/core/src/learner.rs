//! Small logistic classifiers trained by mini-batch SGD with optional MMD
//! penalties, plus a linear probe for auxiliary-label encoding.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{parse_err, Error, Result};
use crate::rng::{self, streams};

/// Lower bound of the median-heuristic bandwidth.
pub const MIN_BANDWIDTH: f64 = 0.05;

/// Rows used by the median heuristic.
const HEURISTIC_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
        }
    }

    fn slope(self, pre: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => (pre > 0.0) as u8 as f64,
        }
    }
}

/// Dense layer computing `w · input + b`; `w` is row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            out.push(self.b[r] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>());
        }
    }
}

/// Feed-forward network ending in a single logit; every layer but the last
/// is followed by `activation`. The score is the logistic of the logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Intermediate values of one forward pass.
struct Trace {
    /// acts[0] is the input, acts[l + 1] the output of layer l
    acts: Vec<Vec<f64>>,
    /// pre-activations of the hidden layers
    pre: Vec<Vec<f64>>,
}

impl Trace {
    fn logit(&self) -> f64 {
        self.acts.last().expect("nonempty")[0]
    }
}

impl ModelParams {
    /// Randomly initialised model: weights uniform in ±1/√fan_in, zero biases.
    pub fn init(input_dim: usize, hidden: Option<usize>, activation: Activation, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == Some(0) {
            return Err(Error::Argument("layer widths must be at least 1".into()));
        }
        let mut rng = rng::stream(seed, streams::INIT);
        let shapes: Vec<(usize, usize)> = match hidden {
            None => vec![(1, input_dim)],
            Some(h) => vec![(h, input_dim), (1, h)],
        };
        let layers = shapes
            .into_iter()
            .map(|(rows, cols)| {
                let a = 1.0 / (cols as f64).sqrt();
                let mut l = Layer::zeros(rows, cols);
                for w in &mut l.w {
                    *w = rng.random_range(-a..a);
                }
                l
            })
            .collect();
        Ok(ModelParams { layers, activation })
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.layers.first().ok_or_else(|| Error::Argument("model has no layers".into()))?;
        let mut width = first.cols;
        for (i, l) in self.layers.iter().enumerate() {
            if l.cols != width || l.rows == 0 || l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                return Err(Error::Argument(format!("layer {i} has inconsistent shape")));
            }
            width = l.rows;
        }
        if width != 1 {
            return Err(Error::Argument("the last layer must have one output".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn is_linear(&self) -> bool {
        self.layers.len() == 1
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in layer order, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.num_params(), "flat parameter length");
        let mut k = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&v[k..k + nw]);
            l.b.copy_from_slice(&v[k + nw..k + nw + nb]);
            k += nw + nb;
        }
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = vec![x.to_vec()];
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(l.rows);
            l.apply(&acts[i], &mut out);
            if i < last {
                pre.push(out.clone());
                for v in &mut out {
                    *v = self.activation.apply(*v);
                }
            }
            acts.push(out);
        }
        Trace { acts, pre }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.trace(x).logit()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn scores(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_input(data)?;
        Ok((0..data.len()).map(|i| self.score(data.row(i))).collect())
    }

    /// φ(x): the last hidden activations, or the logit of a linear model.
    pub fn represent(&self, x: &[f64]) -> Vec<f64> {
        let t = self.trace(x);
        if self.is_linear() {
            vec![t.logit()]
        } else {
            t.acts[t.acts.len() - 2].clone()
        }
    }

    pub fn representation_dim(&self) -> usize {
        if self.is_linear() {
            1
        } else {
            self.layers[self.layers.len() - 2].rows
        }
    }

    fn check_input(&self, data: &Dataset) -> Result<()> {
        self.validate()?;
        if data.dim() != self.input_dim() {
            return Err(Error::Argument(format!(
                "model expects {} features, dataset has {}",
                self.input_dim(),
                data.dim()
            )));
        }
        Ok(())
    }

    /// Accumulate the parameter gradient of one sample given the loss
    /// gradient at the logit and (optionally) at the representation.
    fn backward(&self, t: &Trace, g_logit: f64, g_rep: Option<&[f64]>, grad: &mut [f64]) {
        let n = self.layers.len();
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |k, l| {
                let o = *k;
                *k += l.w.len() + l.b.len();
                Some(o)
            })
            .collect();
        let mut delta = vec![g_logit];
        if n == 1 {
            if let Some(g) = g_rep {
                delta[0] += g[0];
            }
        }
        for li in (0..n).rev() {
            let l = &self.layers[li];
            let input = &t.acts[li];
            let o = offsets[li];
            for r in 0..l.rows {
                if delta[r] == 0.0 {
                    continue;
                }
                for c in 0..l.cols {
                    grad[o + r * l.cols + c] += delta[r] * input[c];
                }
                grad[o + l.w.len() + r] += delta[r];
            }
            if li == 0 {
                break;
            }
            let mut g_act = vec![0.0; l.cols];
            for r in 0..l.rows {
                for c in 0..l.cols {
                    g_act[c] += l.w[r * l.cols + c] * delta[r];
                }
            }
            if li == n - 1 {
                if let Some(g) = g_rep {
                    for (a, b) in g_act.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
            delta = g_act
                .iter()
                .zip(&t.pre[li - 1])
                .map(|(g, p)| g * self.activation.slope(*p))
                .collect();
        }
    }

    /// Text form: a header, then per layer its shape, `rows` weight lines and
    /// one bias line, values at 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let act = match self.activation {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        };
        let _ = writeln!(s, "model layers={} activation={act}", self.layers.len());
        let line = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        for l in &self.layers {
            let _ = writeln!(s, "layer {} {}", l.rows, l.cols);
            for r in 0..l.rows {
                let _ = writeln!(s, "{}", line(&l.w[r * l.cols..(r + 1) * l.cols]));
            }
            let _ = writeln!(s, "{}", line(&l.b));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (ln, head) = lines.next().ok_or_else(|| parse_err(1, "empty model document"))?;
        let mut n_layers = None;
        let mut activation = None;
        let mut words = head.split_whitespace();
        if words.next() != Some("model") {
            return Err(parse_err(ln, "expected `model` header"));
        }
        for w in words {
            match w.split_once('=') {
                Some(("layers", v)) => n_layers = v.parse::<usize>().ok(),
                Some(("activation", "identity")) => activation = Some(Activation::Identity),
                Some(("activation", "relu")) => activation = Some(Activation::Relu),
                _ => return Err(parse_err(ln, format!("unknown header field `{w}`"))),
            }
        }
        let n_layers = n_layers.ok_or_else(|| parse_err(ln, "missing layers="))?;
        let activation = activation.ok_or_else(|| parse_err(ln, "missing activation="))?;
        let nums = |ln: usize, l: &str, want: usize| -> Result<Vec<f64>> {
            let v = l
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, format!("bad number `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != want {
                return Err(parse_err(ln, format!("expected {want} values, found {}", v.len())));
            }
            Ok(v)
        };
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let (ln, l) = lines.next().ok_or_else(|| parse_err(ln, "missing layer"))?;
            let shape: Vec<&str> = l.split_whitespace().collect();
            let (rows, cols) = match shape.as_slice() {
                ["layer", r, c] => (
                    r.parse::<usize>().map_err(|_| parse_err(ln, "bad row count"))?,
                    c.parse::<usize>().map_err(|_| parse_err(ln, "bad column count"))?,
                ),
                _ => return Err(parse_err(ln, "expected `layer ROWS COLS`")),
            };
            let mut w = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, l) = lines.next().ok_or_else(|| parse_err(ln, "missing weight row"))?;
                w.extend(nums(ln, l, cols)?);
            }
            let (ln, l) = lines.next().ok_or_else(|| parse_err(ln, "missing bias row"))?;
            let b = nums(ln, l, rows)?;
            layers.push(Layer { rows, cols, w, b });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln, "trailing content"));
        }
        let m = ModelParams { layers, activation };
        m.validate()?;
        Ok(m)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Mmd {
    None,
    /// scores split by Z
    Marginal { strength: f64, bandwidth: Option<f64> },
    /// scores split by Z within each Y stratum, summed over strata
    Conditional { strength: f64, bandwidth: Option<f64> },
}

impl Mmd {
    pub fn strength(&self) -> f64 {
        match self {
            Mmd::None => 0.0,
            Mmd::Marginal { strength, .. } | Mmd::Conditional { strength, .. } => *strength,
        }
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match self {
            Mmd::None => None,
            Mmd::Marginal { bandwidth, .. } | Mmd::Conditional { bandwidth, .. } => *bandwidth,
        }
    }

    fn with_bandwidth(self, h: f64) -> Mmd {
        match self {
            Mmd::None => Mmd::None,
            Mmd::Marginal { strength, .. } => Mmd::Marginal {
                strength,
                bandwidth: Some(h),
            },
            Mmd::Conditional { strength, .. } => Mmd::Conditional {
                strength,
                bandwidth: Some(h),
            },
        }
    }
}

/// What the MMD penalty compares across Z groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmdTarget {
    #[default]
    Score,
    Representation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Nesterov momentum coefficient
    pub momentum: f64,
    pub l2: f64,
    pub mmd: Mmd,
    pub mmd_on: MmdTarget,
    /// width of the hidden layer; `None` trains a linear model
    pub hidden: Option<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            l2: 1e-4,
            mmd: Mmd::None,
            mmd_on: MmdTarget::Score,
            hidden: None,
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and nonnegative");
        }
        let s = self.mmd.strength();
        if !(s >= 0.0 && s.is_finite()) {
            return bad("mmd strength must be finite and nonnegative");
        }
        if let Some(h) = self.mmd.bandwidth() {
            if !(h > 0.0 && h.is_finite()) {
                return bad("mmd bandwidth must be positive");
            }
        }
        if self.hidden == Some(0) {
            return bad("hidden width must be at least 1");
        }
        Ok(())
    }
}

fn rbf(u: &[f64], v: &[f64], inv2h2: f64) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 * inv2h2).exp()
}

fn check_mmd_args(a: &[f64], b: &[f64], dim: usize, bandwidth: f64) -> Result<(usize, usize)> {
    if dim == 0 || !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return Err(Error::Argument("sample lengths must be multiples of dim".into()));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Argument("bandwidth must be positive".into()));
    }
    let (m, n) = (a.len() / dim, b.len() / dim);
    if m < 2 || n < 2 {
        return Err(Error::SampleSize(m.min(n)));
    }
    Ok((m, n))
}

/// Unbiased estimate of squared MMD between two samples of `dim`-vectors
/// (flat, row-major) under k(u, v) = exp(-‖u - v‖² / 2h²).
pub fn mmd2(a: &[f64], b: &[f64], dim: usize, bandwidth: f64) -> Result<f64> {
    mmd2_with_grad(a, b, dim, bandwidth).map(|(v, _, _)| v)
}

/// `mmd2` together with its gradient with respect to every entry of `a`
/// and `b`.
pub fn mmd2_with_grad(a: &[f64], b: &[f64], dim: usize, bandwidth: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (m, n) = check_mmd_args(a, b, dim, bandwidth)?;
    let inv2h2 = 0.5 / (bandwidth * bandwidth);
    let inv_h2 = 1.0 / (bandwidth * bandwidth);
    let row = |i: usize| -> std::ops::Range<usize> { i * dim..(i + 1) * dim };
    let (mut ga, mut gb) = (vec![0.0; a.len()], vec![0.0; b.len()]);

    // within-sample terms: c · Σ_{i≠j} k(s_i, s_j)
    let within = |s: &[f64], k: usize, g: &mut [f64]| -> f64 {
        let c = 1.0 / (k * (k - 1)) as f64;
        let mut total = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                let (ri, rj) = (row(i), row(j));
                let kv = rbf(&s[ri.clone()], &s[rj.clone()], inv2h2);
                total += 2.0 * kv;
                // d k / d s_i = -k (s_i - s_j) / h²
                for d in 0..dim {
                    let diff = s[ri.start + d] - s[rj.start + d];
                    let gd = 2.0 * c * -kv * diff * inv_h2;
                    g[ri.start + d] += gd;
                    g[rj.start + d] -= gd;
                }
            }
        }
        c * total
    };
    let kaa = within(a, m, &mut ga);
    let kbb = within(b, n, &mut gb);
    let c = 2.0 / (m * n) as f64;
    let mut kab = 0.0;
    for i in 0..m {
        for j in 0..n {
            let (ri, rj) = (row(i), row(j));
            let kv = rbf(&a[ri.clone()], &b[rj.clone()], inv2h2);
            kab += kv;
            for d in 0..dim {
                let diff = a[ri.start + d] - b[rj.start + d];
                let gd = -c * -kv * diff * inv_h2;
                ga[ri.start + d] += gd;
                gb[rj.start + d] -= gd;
            }
        }
    }
    Ok((kaa + kbb - c * kab, ga, gb))
}

/// Median pairwise distance among the first rows of `s`, floored at
/// `MIN_BANDWIDTH`.
pub fn median_bandwidth(s: &[f64], dim: usize) -> f64 {
    let k = (s.len() / dim.max(1)).min(HEURISTIC_ROWS);
    let mut d = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            let d2: f64 = (0..dim).map(|c| (s[i * dim + c] - s[j * dim + c]).powi(2)).sum();
            d.push(d2.sqrt());
        }
    }
    if d.is_empty() {
        return MIN_BANDWIDTH;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    m.max(MIN_BANDWIDTH)
}

/// Components of the training objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    /// weighted mean cross-entropy
    pub ce: f64,
    /// l2 · ‖weights‖², biases excluded
    pub l2: f64,
    /// Σ MMD² over compared strata, before scaling by strength
    pub mmd: f64,
    /// strata skipped for having fewer than 2 rows in some Z group
    pub skipped: usize,
}

fn mmd_features(params: &ModelParams, t: &Trace, on: MmdTarget) -> Vec<f64> {
    match on {
        MmdTarget::Score => vec![sigmoid(t.logit())],
        MmdTarget::Representation if params.is_linear() => vec![t.logit()],
        MmdTarget::Representation => t.acts[t.acts.len() - 2].clone(),
    }
}

/// Objective and exact gradient on `batch`. A missing MMD bandwidth is set
/// by the median heuristic on this batch's features and held constant.
pub fn loss(params: &ModelParams, batch: &Dataset, spec: &TrainSpec) -> Result<(LossValue, Vec<f64>)> {
    spec.validate()?;
    params.check_input(batch)?;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let mmd = match spec.mmd.bandwidth() {
        None if spec.mmd != Mmd::None => {
            let feats = batch_features(params, batch, &rows, spec.mmd_on);
            spec.mmd.with_bandwidth(median_bandwidth(&feats, feature_dim(params, spec.mmd_on)))
        }
        _ => spec.mmd,
    };
    loss_rows(params, batch, &rows, spec, mmd)
}

fn feature_dim(params: &ModelParams, on: MmdTarget) -> usize {
    match on {
        MmdTarget::Score => 1,
        MmdTarget::Representation => params.representation_dim(),
    }
}

fn batch_features(params: &ModelParams, data: &Dataset, rows: &[usize], on: MmdTarget) -> Vec<f64> {
    rows.iter()
        .flat_map(|&i| mmd_features(params, &params.trace(data.row(i)), on))
        .collect()
}

fn loss_rows(
    params: &ModelParams,
    data: &Dataset,
    rows: &[usize],
    spec: &TrainSpec,
    mmd: Mmd,
) -> Result<(LossValue, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let traces: Vec<Trace> = rows.iter().map(|&i| params.trace(data.row(i))).collect();
    let wsum: f64 = rows.iter().map(|&i| data.weights()[i]).sum();
    if wsum <= 0.0 {
        return Err(Error::Argument("batch has zero total weight".into()));
    }
    let mut out = LossValue::default();
    let mut g_logit = vec![0.0; rows.len()];
    for (k, (&i, t)) in rows.iter().zip(&traces).enumerate() {
        let (z, y, w) = (t.logit(), data.y()[i] as f64, data.weights()[i] / wsum);
        out.ce += w * (softplus(z) - y * z);
        g_logit[k] = w * (sigmoid(z) - y);
    }

    let mut grad = vec![0.0; params.num_params()];
    let mut k0 = 0;
    for l in &params.layers {
        let ss: f64 = l.w.iter().map(|w| w * w).sum();
        out.l2 += spec.l2 * ss;
        for (g, w) in grad[k0..k0 + l.w.len()].iter_mut().zip(&l.w) {
            *g += 2.0 * spec.l2 * w;
        }
        k0 += l.w.len() + l.b.len();
    }

    let fd = feature_dim(params, spec.mmd_on);
    let mut g_feat: Vec<Vec<f64>> = Vec::new();
    let strength = mmd.strength();
    if let (Some(h), true) = (mmd.bandwidth(), strength > 0.0) {
        let feats: Vec<Vec<f64>> = traces.iter().map(|t| mmd_features(params, t, spec.mmd_on)).collect();
        g_feat = vec![vec![0.0; fd]; rows.len()];
        let strata: Vec<Vec<usize>> = match mmd {
            Mmd::Conditional { .. } => (0..2u8)
                .map(|y| (0..rows.len()).filter(|&k| data.y()[rows[k]] == y).collect())
                .collect(),
            _ => vec![(0..rows.len()).collect()],
        };
        for stratum in strata {
            let (g0, g1): (Vec<usize>, Vec<usize>) = stratum.iter().partition(|&&k| data.z()[rows[k]] == 0);
            if g0.len() < 2 || g1.len() < 2 {
                out.skipped += 1;
                continue;
            }
            let gather = |g: &[usize]| g.iter().flat_map(|&k| feats[k].iter().copied()).collect::<Vec<f64>>();
            let (v, ga, gb) = mmd2_with_grad(&gather(&g0), &gather(&g1), fd, h)?;
            out.mmd += v;
            for (grp, gg) in [(&g0, ga), (&g1, gb)] {
                for (j, &k) in grp.iter().enumerate() {
                    for d in 0..fd {
                        g_feat[k][d] += strength * gg[j * fd + d];
                    }
                }
            }
        }
    }

    for (k, t) in traces.iter().enumerate() {
        let mut gl = g_logit[k];
        let mut g_rep = None;
        if !g_feat.is_empty() {
            match spec.mmd_on {
                MmdTarget::Score => {
                    let p = sigmoid(t.logit());
                    gl += g_feat[k][0] * p * (1.0 - p);
                }
                MmdTarget::Representation => g_rep = Some(g_feat[k].as_slice()),
            }
        }
        params.backward(t, gl, g_rep, &mut grad);
    }

    out.total = out.ce + out.l2 + strength * out.mmd;
    for (name, v) in [("cross-entropy", out.ce), ("l2", out.l2), ("mmd", out.mmd)] {
        if !v.is_finite() {
            return Err(Error::Numerics(name.into()));
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerics("gradient".into()));
    }
    Ok((out, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub l2: f64,
    pub mmd: f64,
    pub skipped: usize,
}

/// Per-epoch means of the batch objective; epoch 0 is measured before any
/// update.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// bandwidth the MMD penalty used, if any
    pub bandwidth: Option<f64>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn first(&self) -> Option<&LogRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

fn batches(n: usize, size: usize, order: &[usize]) -> impl Iterator<Item = &[usize]> {
    debug_assert_eq!(order.len(), n);
    order.chunks(size)
}

/// Mini-batch SGD with Nesterov momentum:
/// v ← μv + g, θ ← θ - η(g + μv).
pub fn train(data: &Dataset, spec: &TrainSpec) -> Result<(ModelParams, TrainLog)> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("training data is empty".into()));
    }
    let mut params = ModelParams::init(data.dim(), spec.hidden, spec.activation, spec.seed)?;
    let mut shuffle = rng::stream(spec.seed, streams::SHUFFLE);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();

    let mut mmd = spec.mmd;
    let mut log = TrainLog::default();
    if mmd != Mmd::None && mmd.bandwidth().is_none() {
        let first = &order[..spec.batch_size.min(n)];
        let feats = batch_features(&params, data, first, spec.mmd_on);
        mmd = mmd.with_bandwidth(median_bandwidth(&feats, feature_dim(&params, spec.mmd_on)));
    }
    log.bandwidth = mmd.bandwidth();

    let epoch_row = |epoch: usize, acc: &[LossValue]| -> LogRow {
        let k = acc.len() as f64;
        LogRow {
            epoch,
            loss: acc.iter().map(|v| v.total).sum::<f64>() / k,
            ce: acc.iter().map(|v| v.ce).sum::<f64>() / k,
            l2: acc.iter().map(|v| v.l2).sum::<f64>() / k,
            mmd: acc.iter().map(|v| v.mmd).sum::<f64>() / k,
            skipped: acc.iter().map(|v| v.skipped).sum(),
        }
    };

    let mut acc = Vec::new();
    for b in batches(n, spec.batch_size, &order) {
        acc.push(loss_rows(&params, data, b, spec, mmd)?.0);
    }
    log.rows.push(epoch_row(0, &acc));

    let mut theta = params.flat();
    let mut vel = vec![0.0; theta.len()];
    for epoch in 1..=spec.epochs {
        order.shuffle(&mut shuffle);
        acc.clear();
        for b in batches(n, spec.batch_size, &order) {
            let (v, g) = loss_rows(&params, data, b, spec, mmd)?;
            acc.push(v);
            for ((t, v), g) in theta.iter_mut().zip(&mut vel).zip(&g) {
                *v = spec.momentum * *v + g;
                *t -= spec.learning_rate * (g + spec.momentum * *v);
            }
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::Numerics(format!("parameters diverged in epoch {epoch}")));
            }
            params.set_flat(&theta);
        }
        log.rows.push(epoch_row(epoch, &acc));
    }
    Ok((params, log))
}

/// Label the probe predicts from φ(X).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTarget {
    Z,
    V,
}

/// Ridge on standardized probe coefficients.
const PROBE_RIDGE: f64 = 1e-3;

/// Held-out accuracy of a logistic regression from frozen φ(X) to the
/// target, fitted on a seeded 70/30 split.
pub fn probe_encoding(params: &ModelParams, data: &Dataset, target: ProbeTarget, seed: u64) -> Result<f64> {
    params.check_input(data)?;
    let labels: &[u8] = match target {
        ProbeTarget::Z => data.z(),
        ProbeTarget::V => data.v().ok_or_else(|| Error::Name("V".into()))?,
    };
    let ones = labels.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::DegenerateTarget(format!("{target:?} takes a single value")));
    }
    let n = data.len();
    let n_train = (n as f64 * 0.7).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::SampleSize(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, streams::PROBE));
    let (train_rows, test_rows) = order.split_at(n_train);

    let d = params.representation_dim();
    let phi: Vec<Vec<f64>> = (0..n).map(|i| params.represent(data.row(i))).collect();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in train_rows {
        for c in 0..d {
            mean[c] += phi[i][c] / n_train as f64;
        }
    }
    for &i in train_rows {
        for c in 0..d {
            sd[c] += (phi[i][c] - mean[c]).powi(2) / n_train as f64;
        }
    }
    let design = |i: usize| -> Vec<f64> {
        std::iter::once(1.0)
            .chain((0..d).map(|c| {
                let s = sd[c].sqrt();
                if s > 1e-12 {
                    (phi[i][c] - mean[c]) / s
                } else {
                    0.0
                }
            }))
            .collect()
    };
    let xs: Vec<Vec<f64>> = train_rows.iter().map(|&i| design(i)).collect();
    let ys: Vec<f64> = train_rows.iter().map(|&i| labels[i] as f64).collect();
    let beta = logistic_irls(&xs, &ys, PROBE_RIDGE)?;
    let correct = test_rows
        .iter()
        .filter(|&&i| {
            let eta: f64 = design(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
            (eta > 0.0) == (labels[i] == 1)
        })
        .count();
    Ok(correct as f64 / test_rows.len() as f64)
}

/// Ridge-penalized logistic regression by Newton's method; column 0 is the
/// intercept and carries a negligible penalty.
fn logistic_irls(xs: &[Vec<f64>], ys: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let p = xs[0].len();
    let mut beta = DVector::<f64>::zeros(p);
    for _ in 0..100 {
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut g = DVector::<f64>::zeros(p);
        for (x, &y) in xs.iter().zip(ys) {
            let xv = DVector::from_column_slice(x);
            let mu = sigmoid(xv.dot(&beta));
            g += &xv * (mu - y);
            h += &xv * xv.transpose() * (mu * (1.0 - mu));
        }
        for j in 0..p {
            let lam = if j == 0 { 1e-8 } else { ridge } * xs.len() as f64;
            g[j] += lam * beta[j];
            h[(j, j)] += lam;
        }
        let step = h
            .cholesky()
            .ok_or_else(|| Error::Numerics("probe Hessian".into()))?
            .solve(&g);
        beta -= &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerics("probe coefficients".into()));
    }
    Ok(beta.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Channel, GenSpec};
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn toy(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, 0);
        let x: Vec<f64> = (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let mut z: Vec<u8> = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
        y.rotate_left(seed as usize % n);
        z.rotate_left(1);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.5..2.0)).collect();
        Dataset::new(y, z, None, x, dim, Some(w), vec![Channel::new("core", 0..dim)]).unwrap()
    }

    fn brute_mmd(a: &[f64], b: &[f64], h: f64) -> f64 {
        let k = |u: f64, v: f64| (-(u - v).powi(2) / (2.0 * h * h)).exp();
        let (m, n) = (a.len() as f64, b.len() as f64);
        let mut s = 0.0;
        for (i, u) in a.iter().enumerate() {
            for (j, v) in a.iter().enumerate() {
                if i != j {
                    s += k(*u, *v) / (m * (m - 1.0));
                }
            }
        }
        for (i, u) in b.iter().enumerate() {
            for (j, v) in b.iter().enumerate() {
                if i != j {
                    s += k(*u, *v) / (n * (n - 1.0));
                }
            }
        }
        for u in a {
            for v in b {
                s -= 2.0 * k(*u, *v) / (m * n);
            }
        }
        s
    }

    #[test]
    fn mmd_identical_points() {
        let a = [0.3, 0.3, 0.3];
        assert!(mmd2(&a, &a, 1, 0.7).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mmd_matches_double_loop() {
        let a = [0.1, 0.5, 0.9];
        let b = [0.2, 0.25, 1.4];
        let v = mmd2(&a, &b, 1, 0.4).unwrap();
        assert!((v - brute_mmd(&a, &b, 0.4)).abs() < 1e-14);
    }

    #[test]
    fn mmd_separates_shifted_normals() {
        let mut r = rng::stream(3, 0);
        let a: Vec<f64> = (0..200).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut r)).collect();
        let b: Vec<f64> = (0..200).map(|_| Normal::new(5.0, 1.0).unwrap().sample(&mut r)).collect();
        assert!(mmd2(&a, &b, 1, 1.0).unwrap() > 0.5);
    }

    #[test]
    fn mmd_rejects_singletons() {
        assert_eq!(mmd2(&[1.0], &[1.0, 2.0], 1, 1.0), Err(Error::SampleSize(1)));
    }

    #[test]
    fn single_sample_logistic_gradient() {
        let d = toy(1, 3, 0);
        let mut p = ModelParams::init(3, None, Activation::Relu, 4).unwrap();
        p.layers[0].b[0] = 0.3;
        let spec = TrainSpec {
            l2: 0.0,
            ..TrainSpec::default()
        };
        let (_, g) = loss(&p, &d, &spec).unwrap();
        let s = p.score(d.row(0));
        let y = d.y()[0] as f64;
        for c in 0..3 {
            assert!((g[c] - (s - y) * d.row(0)[c]).abs() < 1e-15);
        }
        assert!((g[3] - (s - y)).abs() < 1e-15);
    }

    fn finite_difference_check(p: &ModelParams, d: &Dataset, spec: &TrainSpec) {
        let (_, g) = loss(p, d, spec).unwrap();
        let theta = p.flat();
        for k in 0..theta.len() {
            let eval = |delta: f64| {
                let mut q = p.clone();
                let mut t = theta.clone();
                t[k] += delta;
                q.set_flat(&t);
                loss(&q, d, spec).unwrap().0.total
            };
            let h = 1e-5;
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (fd - g[k]).abs();
            assert!(
                err <= 1e-4 * fd.abs().max(g[k].abs()) || err <= 1e-8,
                "param {k}: analytic {} vs numeric {fd} ({spec:?})",
                g[k]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let modes = [
            Mmd::None,
            Mmd::Marginal {
                strength: 2.0,
                bandwidth: Some(0.3),
            },
            Mmd::Conditional {
                strength: 3.0,
                bandwidth: Some(0.5),
            },
        ];
        for case in 0..20u64 {
            let d = toy(12, 4, case);
            let hidden = (case % 2 == 0).then_some(3);
            let p = ModelParams::init(4, hidden, Activation::Relu, case).unwrap();
            let spec = TrainSpec {
                l2: 0.01,
                mmd: modes[case as usize % 3],
                mmd_on: if case % 4 == 3 { MmdTarget::Representation } else { MmdTarget::Score },
                hidden,
                ..TrainSpec::default()
            };
            finite_difference_check(&p, &d, &spec);
        }
    }

    #[test]
    fn conditional_mmd_skips_starved_strata() {
        let mut d = toy(8, 2, 0);
        // all Y=1 rows share Z=0
        let y = d.y().to_vec();
        let z: Vec<u8> = (0..8).map(|i| if y[i] == 1 { 0 } else { (i % 4 < 2) as u8 }).collect();
        d = Dataset::new(y, z, None, d.x().to_vec(), 2, None, d.channels().to_vec()).unwrap();
        let p = ModelParams::init(2, None, Activation::Relu, 0).unwrap();
        let spec = TrainSpec {
            mmd: Mmd::Conditional {
                strength: 1.0,
                bandwidth: Some(0.5),
            },
            ..TrainSpec::default()
        };
        assert_eq!(loss(&p, &d, &spec).unwrap().0.skipped, 1);
    }

    #[test]
    fn separable_clusters_are_learned() {
        let mut r = rng::stream(1, 0);
        let n = 400;
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x: Vec<f64> = y
            .iter()
            .flat_map(|&c| {
                let m = if c == 1 { 2.0 } else { -2.0 };
                [m + r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]
            })
            .collect();
        let d = Dataset::new(y, vec![0; n], None, x, 2, None, vec![Channel::new("core", 0..2)]).unwrap();
        let spec = TrainSpec {
            epochs: 50,
            ..TrainSpec::default()
        };
        let (p, log) = train(&d, &spec).unwrap();
        let s = p.scores(&d).unwrap();
        let acc = (0..n).filter(|&i| (s[i] > 0.5) == (d.y()[i] == 1)).count() as f64 / n as f64;
        assert!(acc > 0.99);
        assert!(log.last().unwrap().loss <= log.first().unwrap().loss);
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let d = toy(20, 3, 2);
        let spec = TrainSpec {
            learning_rate: 0.0,
            epochs: 3,
            ..TrainSpec::default()
        };
        let (p, _) = train(&d, &spec).unwrap();
        assert_eq!(p, ModelParams::init(3, None, Activation::Relu, spec.seed).unwrap());
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let d = generate(&GenSpec {
            n: 600,
            ..GenSpec::default()
        })
        .unwrap();
        let spec = TrainSpec {
            epochs: 3,
            hidden: Some(4),
            mmd: Mmd::Conditional {
                strength: 1.0,
                bandwidth: None,
            },
            seed: 11,
            ..TrainSpec::default()
        };
        let a = train(&d, &spec).unwrap();
        let b = train(&d, &spec).unwrap();
        assert_eq!(a, b);
        let bits = |p: &ModelParams| p.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.0), bits(&b.0));
    }

    #[test]
    fn constant_representation_probe_hits_majority() {
        let d = generate(&GenSpec {
            n: 1000,
            ..GenSpec::default()
        })
        .unwrap();
        let p = ModelParams {
            layers: vec![Layer::zeros(1, d.dim())],
            activation: Activation::Relu,
        };
        let acc = probe_encoding(&p, &d, ProbeTarget::Z, 0).unwrap();
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.shuffle(&mut rng::stream(0, streams::PROBE));
        let test = &order[700..];
        let ones = test.iter().filter(|&&i| d.z()[i] == 1).count() as f64 / test.len() as f64;
        let train_ones = order[..700].iter().filter(|&&i| d.z()[i] == 1).count();
        let expected = if train_ones * 2 > 700 { ones } else { 1.0 - ones };
        assert!((acc - expected).abs() < 1e-12);
    }

    #[test]
    fn probe_rejects_single_class() {
        let d = toy(10, 2, 0);
        let d = Dataset::new(d.y().to_vec(), vec![1; 10], None, d.x().to_vec(), 2, None, d.channels().to_vec())
            .unwrap();
        let p = ModelParams::init(2, None, Activation::Relu, 0).unwrap();
        assert!(matches!(probe_encoding(&p, &d, ProbeTarget::Z, 0), Err(Error::DegenerateTarget(_))));
        assert!(matches!(probe_encoding(&p, &d, ProbeTarget::V, 0), Err(Error::Name(_))));
    }

    #[test]
    fn text_round_trip() {
        let p = ModelParams::init(5, Some(3), Activation::Relu, 9).unwrap();
        assert_eq!(ModelParams::from_text(&p.to_text()).unwrap(), p);
        assert!(ModelParams::from_text("model layers=1 activation=relu\nlayer 1 2\n0 0\n").is_err());
    }

    proptest! {
        #[test]
        fn mmd_is_symmetric(a in prop::collection::vec(-3.0f64..3.0, 2..8),
                            b in prop::collection::vec(-3.0f64..3.0, 2..8),
                            h in 0.1f64..3.0) {
            let ab = mmd2(&a, &b, 1, h).unwrap();
            let ba = mmd2(&b, &a, 1, h).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((ab - brute_mmd(&a, &b, h)).abs() < 1e-12);
            prop_assert!(ab.abs() <= 4.0);
        }

        #[test]
        fn relabeling_groups_leaves_mmd_loss(seed in 0u64..50) {
            let d = toy(12, 3, seed);
            let flipped = Dataset::new(
                d.y().to_vec(),
                d.z().iter().map(|z| 1 - z).collect(),
                None,
                d.x().to_vec(),
                3,
                Some(d.weights().to_vec()),
                d.channels().to_vec(),
            ).unwrap();
            let p = ModelParams::init(3, Some(2), Activation::Relu, seed).unwrap();
            let spec = TrainSpec {
                mmd: Mmd::Conditional { strength: 1.0, bandwidth: Some(0.4) },
                hidden: Some(2),
                ..TrainSpec::default()
            };
            let a = loss(&p, &d, &spec).unwrap().0.total;
            let b = loss(&p, &flipped, &spec).unwrap().0.total;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
