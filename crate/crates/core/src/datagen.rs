//! Tabular surrogates of the balancing experiments.
//!
//! Each row carries labels (Y, Z and, for graph C, V) and a real feature
//! vector split into channels: `core` is driven by the label, `aux` by Z
//! (by OR(Y, Z) for graph D, where it is named `entangled`) and `v` by V.
//! A channel keyed by a bit c has mean (c - 1/2) · sep / √d on every
//! coordinate, so the two class means sit `sep` apart, plus isotropic
//! Gaussian noise.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::balancing::{balance_plan, BalanceSpec};
use crate::cbn::templates::GraphId;
use crate::dist::{SampleBatch, Variable};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, streams, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub graph: GraphId,
    pub n: usize,
    /// P(Y=0 | Z=0)
    pub p_y0_given_z0: f64,
    /// P(Y=0 | Z=1)
    pub p_y0_given_z1: f64,
    pub p_z0: f64,
    /// graph C: P(V=0 | Y=0)
    pub p_v0_given_y0: f64,
    /// graph C: P(V=0 | Y=1)
    pub p_v0_given_y1: f64,
    /// graph C: shift of P(V=0 | Y, Z) per unit of 1[Z=0] - P(Z=0 | Y)
    pub vz_coupling: f64,
    /// graph B: weight of the latent U in Z = 1[λU + (1-λ)U₂ > 1/2]
    pub lambda: f64,
    /// graph B: probability that Y is replaced by 1[U > 1/2]
    pub assoc: f64,
    /// graph B: slope of the logistic link from the core projection to Y
    pub link_slope: f64,
    pub dim_core: usize,
    pub dim_aux: usize,
    /// graph C only
    pub dim_v: Option<usize>,
    pub sep_core: f64,
    pub sep_aux: f64,
    pub sep_v: f64,
    pub noise_core: f64,
    pub noise_aux: f64,
    pub noise_v: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            graph: GraphId::A,
            n: 30_000,
            p_y0_given_z0: 0.95,
            p_y0_given_z1: 0.10,
            p_z0: 0.5,
            p_v0_given_y0: 0.2,
            p_v0_given_y1: 0.9,
            vz_coupling: -0.2,
            lambda: 0.8,
            assoc: 0.4,
            link_slope: 3.0,
            dim_core: 8,
            dim_aux: 8,
            dim_v: None,
            sep_core: 1.5,
            sep_aux: 6.0,
            sep_v: 4.0,
            noise_core: 1.0,
            noise_aux: 1.0,
            noise_v: 1.0,
            label_noise: 0.02,
            seed: 0,
        }
    }
}

/// Which test distribution to draw.
#[derive(Debug, Clone, PartialEq)]
enum Shift {
    /// the configured source distribution
    Source,
    /// P(Z=0|Y=y) = t[y], other mechanisms unchanged
    Conditional([f64; 2]),
    /// Z and V independent fair bits given Y; graph D loses the entangled
    /// signal
    Ideal,
}

impl GenSpec {
    pub fn for_graph(graph: GraphId) -> Self {
        GenSpec {
            graph,
            dim_v: (graph == GraphId::C).then_some(8),
            ..GenSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_y0_given_z0", self.p_y0_given_z0),
            ("p_y0_given_z1", self.p_y0_given_z1),
            ("p_z0", self.p_z0),
            ("p_v0_given_y0", self.p_v0_given_y0),
            ("p_v0_given_y1", self.p_v0_given_y1),
            ("lambda", self.lambda),
            ("assoc", self.assoc),
            ("label_noise", self.label_noise),
        ];
        for (name, v) in probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Spec(format!("{name} = {v} is not a probability")));
            }
        }
        let nonneg = [
            ("sep_core", self.sep_core),
            ("sep_aux", self.sep_aux),
            ("sep_v", self.sep_v),
            ("noise_core", self.noise_core),
            ("noise_aux", self.noise_aux),
            ("noise_v", self.noise_v),
            ("link_slope", self.link_slope),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Spec(format!("{name} = {v} must be finite and nonnegative")));
            }
        }
        if self.n == 0 {
            return Err(Error::Spec("n must be at least 1".into()));
        }
        if self.dim_core == 0 || self.dim_aux == 0 || self.dim_v == Some(0) {
            return Err(Error::Spec("channel dimensions must be at least 1".into()));
        }
        match (self.graph, self.dim_v) {
            (GraphId::C, None) => return Err(Error::Spec("graph C needs dim_v".into())),
            (g, Some(_)) if g != GraphId::C => {
                return Err(Error::Spec(format!("dim_v is only meaningful for graph C, not {g}")))
            }
            _ => {}
        }
        if self.graph != GraphId::B {
            let py0 = self.p_y0();
            if !(py0 > 0.0 && py0 < 1.0) {
                return Err(Error::Spec("P(Y) is degenerate".into()));
            }
        }
        if self.graph == GraphId::C {
            let pz = self.pz0_given_y();
            for y in 0..2 {
                for z in 0..2 {
                    let p = self.p_v0(y, z, &pz);
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::Spec(format!(
                            "vz_coupling makes P(V=0 | Y={y}, Z={z}) = {p}, outside [0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// P(Y=0) implied by the confounding parameters (graphs A, C, D).
    pub fn p_y0(&self) -> f64 {
        match self.graph {
            GraphId::B => 0.5,
            _ => self.p_z0 * self.p_y0_given_z0 + (1.0 - self.p_z0) * self.p_y0_given_z1,
        }
    }

    /// P(Z=0 | Y=y) implied by the confounding parameters (graphs A, C, D).
    pub fn pz0_given_y(&self) -> [f64; 2] {
        let py0 = self.p_y0();
        [
            self.p_z0 * self.p_y0_given_z0 / py0,
            self.p_z0 * (1.0 - self.p_y0_given_z0) / (1.0 - py0),
        ]
    }

    fn p_v0(&self, y: usize, z: usize, pz0_ref: &[f64; 2]) -> f64 {
        let t = [self.p_v0_given_y0, self.p_v0_given_y1][y];
        t + self.vz_coupling * ((z == 0) as u8 as f64 - pz0_ref[y])
    }

    /// P*(Z=0); the jointly balanced Q keeps this marginal.
    pub fn pz0_marginal(&self) -> f64 {
        match self.graph {
            GraphId::B => 0.5,
            _ => self.p_z0,
        }
    }

    pub fn total_dim(&self) -> usize {
        self.dim_core + self.dim_aux + self.dim_v.unwrap_or(0)
    }

    pub fn channels(&self) -> Vec<Channel> {
        let mut out = vec![
            Channel::new("core", 0..self.dim_core),
            Channel::new(
                if self.graph == GraphId::D { "entangled" } else { "aux" },
                self.dim_core..self.dim_core + self.dim_aux,
            ),
        ];
        if let Some(dv) = self.dim_v {
            let s = self.dim_core + self.dim_aux;
            out.push(Channel::new("v", s..s + dv));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl Channel {
    pub fn new(name: &str, r: Range<usize>) -> Self {
        Channel {
            name: name.to_string(),
            start: r.start,
            end: r.end,
        }
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Weighted rows of labels and features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<u8>,
    z: Vec<u8>,
    v: Option<Vec<u8>>,
    /// row-major n × dim
    x: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
    channels: Vec<Channel>,
}

impl Dataset {
    pub fn new(
        y: Vec<u8>,
        z: Vec<u8>,
        v: Option<Vec<u8>>,
        x: Vec<f64>,
        dim: usize,
        weights: Option<Vec<f64>>,
        channels: Vec<Channel>,
    ) -> Result<Self> {
        let n = y.len();
        if z.len() != n || v.as_ref().is_some_and(|v| v.len() != n) || x.len() != n * dim {
            return Err(Error::Argument("dataset columns have different lengths".into()));
        }
        if y.iter().chain(&z).chain(v.iter().flatten()).any(|&b| b > 1) {
            return Err(Error::Argument("labels must be 0 or 1".into()));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Argument("weights must be finite, nonnegative, one per row".into()));
        }
        let mut next = 0;
        for c in &channels {
            if c.start != next || c.end <= c.start {
                return Err(Error::Argument("channels must partition the feature columns".into()));
            }
            next = c.end;
        }
        if next != dim {
            return Err(Error::Argument("channels must partition the feature columns".into()));
        }
        Ok(Dataset {
            y,
            z,
            v,
            x,
            dim,
            weights,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn v(&self) -> Option<&[u8]> {
        self.v.as_deref()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Result<Range<usize>> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(Channel::range)
            .ok_or_else(|| Error::Name(name.to_string()))
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            x.extend_from_slice(self.row(r));
        }
        Dataset {
            y: rows.iter().map(|&r| self.y[r]).collect(),
            z: rows.iter().map(|&r| self.z[r]).collect(),
            v: self.v.as_ref().map(|v| rows.iter().map(|&r| v[r]).collect()),
            x,
            dim: self.dim,
            weights: rows.iter().map(|&r| self.weights[r]).collect(),
            channels: self.channels.clone(),
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Argument("weights must be finite, nonnegative, one per row".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    /// The label columns as a weighted batch over Y, Z (and V).
    pub fn label_batch(&self) -> Result<SampleBatch> {
        let mut vars = vec![Variable::binary("Y"), Variable::binary("Z")];
        if self.v.is_some() {
            vars.push(Variable::binary("V"));
        }
        let rows = (0..self.len())
            .map(|i| {
                let mut r = vec![self.y[i] as usize, self.z[i] as usize];
                if let Some(v) = &self.v {
                    r.push(v[i] as usize);
                }
                r
            })
            .collect();
        SampleBatch::new(vars, rows, Some(self.weights.clone()))
    }

    pub fn balance(&self, spec: &BalanceSpec) -> Result<Dataset> {
        let plan = balance_plan(&self.label_batch()?, spec)?;
        self.select(&plan.rows).with_weights(plan.weights)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["y".to_string(), "z".to_string()];
        if self.v.is_some() {
            header.push("v".into());
        }
        header.push("weight".into());
        header.extend((0..self.dim).map(|j| format!("x{j}")));
        out.write_record(&header).map_err(csv_err)?;
        let mut rec = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            rec.clear();
            rec.push(self.y[i].to_string());
            rec.push(self.z[i].to_string());
            if let Some(v) = &self.v {
                rec.push(v[i].to_string());
            }
            rec.push(format!("{:.16e}", self.weights[i]));
            rec.extend(self.row(i).iter().map(|x| format!("{x:.16e}")));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Read rows written by `write_csv`; channel layout comes from the
    /// metadata document.
    pub fn read_csv<R: Read>(r: R, channels: Vec<Channel>) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let has_v = header.get(2) == Some("v");
        let lead = if has_v { 4 } else { 3 };
        let expected: Vec<String> = ["y", "z"]
            .into_iter()
            .chain(has_v.then_some("v"))
            .chain(["weight"])
            .map(String::from)
            .collect();
        if header.iter().take(lead).ne(expected.iter().map(String::as_str)) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected leading columns {expected:?}"),
            });
        }
        let dim = header.len() - lead;
        let (mut y, mut z, mut v, mut wts, mut x) = (vec![], vec![], vec![], vec![], vec![]);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = i + 2;
            let bit = |s: &str| -> Result<u8> {
                s.parse::<u8>().ok().filter(|b| *b <= 1).ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("bad label `{s}`"),
                })
            };
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad number `{s}`"),
                })
            };
            y.push(bit(&rec[0])?);
            z.push(bit(&rec[1])?);
            if has_v {
                v.push(bit(&rec[2])?);
            }
            wts.push(num(&rec[lead - 1])?);
            for j in 0..dim {
                x.push(num(&rec[lead + j])?);
            }
        }
        Dataset::new(y, z, has_v.then_some(v), x, dim, Some(wts), channels)
    }

    /// Write `<path>` (rows) and `<path>.json` (metadata).
    pub fn save(&self, path: &Path, meta: &DatasetMeta) -> Result<()> {
        if meta.channels != self.channels {
            return Err(Error::Argument("metadata channels differ from the dataset".into()));
        }
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        let doc = serde_json::to_string_pretty(meta).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(meta_path(path), doc + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Dataset, DatasetMeta)> {
        let text = std::fs::read_to_string(meta_path(path))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Io(e.to_string()))?;
        let data = Dataset::read_csv(std::io::BufReader::new(std::fs::File::open(path)?), meta.channels.clone())?;
        Ok((data, meta))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Sidecar document of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// e.g. "train", "ideal", "shift-3"
    pub kind: String,
    pub spec: Option<GenSpec>,
    pub channels: Vec<Channel>,
    /// P'(Z=0 | Y=y) of a shifted test set
    pub conditional: Option<[f64; 2]>,
    pub config_hash: Option<String>,
}

struct Row {
    y: u8,
    z: u8,
    v: Option<u8>,
}

fn bern(rng: &mut Rng, p1: f64) -> u8 {
    (rng.random::<f64>() < p1) as u8
}

/// Push mean (c - 1/2)·sep/√d plus noise on `d` coordinates; `c = None`
/// puts the mean at the midpoint.
fn push_channel(x: &mut Vec<f64>, rng: &mut Rng, c: Option<u8>, d: usize, sep: f64, noise: f64) {
    let m = match c {
        Some(c) => (c as f64 - 0.5) * sep / (d as f64).sqrt(),
        None => 0.0,
    };
    for _ in 0..d {
        let e: f64 = StandardNormal.sample(rng);
        x.push(m + noise * e);
    }
}

/// Labels and features for the anti-causal graphs (A, C, D).
fn anti_causal_rows(spec: &GenSpec, shift: &Shift, n: usize, seed: u64) -> (Vec<Row>, Vec<f64>) {
    let mut lr = rng::stream(seed, streams::LABELS);
    let mut fr = rng::stream(seed, streams::FEATURES);
    let pz_star = spec.pz0_given_y();
    let (pz, ideal) = match shift {
        Shift::Source => (pz_star, false),
        Shift::Conditional(t) => (*t, false),
        Shift::Ideal => ([0.5, 0.5], true),
    };
    let p_y1 = 1.0 - spec.p_y0();
    let mut rows = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * spec.total_dim());
    for _ in 0..n {
        let y = bern(&mut lr, p_y1);
        let z = bern(&mut lr, 1.0 - pz[y as usize]);
        let v = (spec.graph == GraphId::C).then(|| {
            let p0 = if ideal {
                0.5
            } else {
                spec.p_v0(y as usize, z as usize, &pz_star)
            };
            bern(&mut lr, 1.0 - p0)
        });
        let digit = y ^ bern(&mut lr, spec.label_noise);
        push_channel(&mut x, &mut fr, Some(digit), spec.dim_core, spec.sep_core, spec.noise_core);
        let aux = match (spec.graph, ideal) {
            (GraphId::D, true) => None,
            (GraphId::D, false) => Some(y | z),
            _ => Some(z),
        };
        push_channel(&mut x, &mut fr, aux, spec.dim_aux, spec.sep_aux, spec.noise_aux);
        if let (Some(v), Some(dv)) = (v, spec.dim_v) {
            push_channel(&mut x, &mut fr, Some(v), dv, spec.sep_v, spec.noise_v);
        }
        rows.push(Row { y, z, v });
    }
    (rows, x)
}

/// Graph B rows: the label follows the core channel through a logistic link
/// and is replaced by 1[U > 1/2] with probability `assoc`; Z thresholds a
/// mix of U and independent noise.
fn causal_rows(spec: &GenSpec, n: usize, seed: u64) -> (Vec<Row>, Vec<f64>) {
    let mut lr = rng::stream(seed, streams::LABELS);
    let mut fr = rng::stream(seed, streams::FEATURES);
    let dc = spec.dim_core;
    let mut rows = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * spec.total_dim());
    for _ in 0..n {
        let t = bern(&mut lr, 0.5);
        let start = x.len();
        push_channel(&mut x, &mut fr, Some(t), dc, spec.sep_core, spec.noise_core);
        let proj: f64 = x[start..].iter().sum::<f64>() / (dc as f64).sqrt();
        let p1 = 1.0 / (1.0 + (-spec.link_slope * proj).exp());
        let mut y = bern(&mut lr, p1) ^ bern(&mut lr, spec.label_noise);
        let u: f64 = lr.random();
        let u2: f64 = lr.random();
        if lr.random::<f64>() < spec.assoc {
            y = (u > 0.5) as u8;
        }
        let z = (spec.lambda * u + (1.0 - spec.lambda) * u2 > 0.5) as u8;
        push_channel(&mut x, &mut fr, Some(z), spec.dim_aux, spec.sep_aux, spec.noise_aux);
        rows.push(Row { y, z, v: None });
    }
    (rows, x)
}

fn assemble(spec: &GenSpec, rows: Vec<Row>, x: Vec<f64>) -> Result<Dataset> {
    let v = (spec.graph == GraphId::C).then(|| rows.iter().map(|r| r.v.unwrap_or(0)).collect());
    Dataset::new(
        rows.iter().map(|r| r.y).collect(),
        rows.iter().map(|r| r.z).collect(),
        v,
        x,
        spec.total_dim(),
        None,
        spec.channels(),
    )
}

/// Cell quotas n·P(y)·P'(z|y), rounded by largest remainder to sum to n.
fn quotas(n: usize, p_y1: f64, pz0: [f64; 2]) -> [usize; 4] {
    let exact = [
        n as f64 * (1.0 - p_y1) * pz0[0],
        n as f64 * (1.0 - p_y1) * (1.0 - pz0[0]),
        n as f64 * p_y1 * pz0[1],
        n as f64 * p_y1 * (1.0 - pz0[1]),
    ];
    let mut q = exact.map(|e| e.floor() as usize);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let short = n - q.iter().sum::<usize>();
    for &c in order.iter().take(short) {
        q[c] += 1;
    }
    q
}

/// Fill per-(Y, Z) quotas from successive pools of graph B rows. Rows of a
/// cell keep their generation order, so each cell is an i.i.d. draw from
/// P*(X | Y, Z).
fn causal_quota_rows(spec: &GenSpec, n: usize, pz0: [f64; 2], seed: u64) -> Result<(Vec<Row>, Vec<f64>)> {
    let want = quotas(n, 0.5, pz0);
    let d = spec.total_dim();
    let mut cells: [Vec<(Row, Vec<f64>)>; 4] = Default::default();
    let chunk = n.max(1000);
    for k in 0..10_000u64 {
        if cells.iter().zip(&want).all(|(c, &w)| c.len() >= w) {
            break;
        }
        let (rows, x) = causal_rows(spec, chunk, derive_seed(seed, k));
        for (i, r) in rows.into_iter().enumerate() {
            let c = (r.y * 2 + r.z) as usize;
            if cells[c].len() < want[c] {
                cells[c].push((r, x[i * d..(i + 1) * d].to_vec()));
            }
        }
    }
    if cells.iter().zip(&want).any(|(c, &w)| c.len() < w) {
        return Err(Error::Spec("a (Y, Z) cell is too rare to fill its quota".into()));
    }
    // interleave cells back into a random order
    let mut all: Vec<(Row, Vec<f64>)> = cells.into_iter().flatten().collect();
    let mut rng = rng::stream(seed, streams::SHUFFLE);
    for i in (1..all.len()).rev() {
        all.swap(i, rng.random_range(0..=i));
    }
    let mut x = Vec::with_capacity(n * d);
    let rows = all
        .into_iter()
        .map(|(r, f)| {
            x.extend(f);
            r
        })
        .collect();
    Ok((rows, x))
}

fn draw(spec: &GenSpec, shift: &Shift, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Spec("sample size must be at least 1".into()));
    }
    let (rows, x) = match (spec.graph, shift) {
        (GraphId::B, Shift::Source) => causal_rows(spec, n, seed),
        (GraphId::B, Shift::Conditional(t)) => causal_quota_rows(spec, n, *t, seed)?,
        (GraphId::B, Shift::Ideal) => causal_quota_rows(spec, n, [0.5, 0.5], seed)?,
        _ => anti_causal_rows(spec, shift, n, seed),
    };
    assemble(spec, rows, x)
}

/// Training data from the configured confounded distribution.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    draw(spec, &Shift::Source, spec.n, spec.seed)
}

/// Test set without the undesired dependence: Z (and V) uniform given Y.
/// For graph D the entangled channel carries no signal.
pub fn ideal_testset(spec: &GenSpec, n: usize, seed: u64) -> Result<Dataset> {
    draw(spec, &Shift::Ideal, n, seed)
}

/// Test set from the jointly balanced Q: Z independent of Y with P*(Z)
/// and P*(Y) kept, every other mechanism unchanged.
pub fn balanced_testset(spec: &GenSpec, n: usize, seed: u64) -> Result<Dataset> {
    let p = spec.pz0_marginal();
    draw(spec, &Shift::Conditional([p, p]), n, seed)
}

/// One test set per grid element P'(Z=0 | Y=y) = grid[k][y], with P(Y) and
/// every mechanism other than Z | Y unchanged. Element k uses seed
/// `derive_seed(seed, k)`.
pub fn shift_testsets(spec: &GenSpec, grid: &[[f64; 2]], n: usize, seed: u64) -> Result<Vec<Dataset>> {
    if grid.is_empty() {
        return Err(Error::Argument("shift grid is empty".into()));
    }
    grid.iter()
        .enumerate()
        .map(|(k, t)| {
            if t.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Argument(format!("grid element {k} is not a probability pair")));
            }
            draw(spec, &Shift::Conditional(*t), n, derive_seed(seed, k as u64))
        })
        .collect()
}

/// P'(Z=0|Y=0) = t, P'(Z=0|Y=1) = 1 - t for each t.
pub fn symmetric_grid(points: &[f64]) -> Vec<[f64; 2]> {
    points.iter().map(|&t| [t, 1.0 - t]).collect()
}
