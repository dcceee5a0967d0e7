//! Soft-margin kernel classifier trained by sequential minimal optimization
//! (maximal-violating pair with second-order working-set selection).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `exp(-gamma |x - y|^2)`.
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub kernel: KernelKind,
    /// RBF scale; `None` uses `1 / (dims * variance)` of the standardized
    /// training data.
    pub gamma: Option<f64>,
    pub c: f64,
    /// Stop once the maximal KKT violation falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { kernel: KernelKind::Rbf, gamma: None, c: 1.0, tol: 1e-3, max_iter: 1_000_000 }
    }
}

/// Per-feature affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in x {
            for k in 0..d {
                var[k] += (row[k] - mean[k]).powi(2) / n;
            }
        }
        let scale = var.iter().map(|v| if *v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect()
    }
}

/// Trained binary classifier: `f(x) = sum_i coef_i K(sv_i, z(x)) + bias` on
/// standardized input `z(x)`; positive means the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub kernel: Kernel,
    pub c: f64,
    pub standardizer: Standardizer,
    pub support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Whether the optimizer met the tolerance before the iteration cap.
    pub converged: bool,
}

impl ClassifierModel {
    pub fn dims(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dims() {
            return Err(Error::Input(format!("expected {} features, got {}", self.dims(), x.len())));
        }
        let z = self.standardizer.apply(x);
        let s: f64 = self.support.iter().zip(&self.coef).map(|(sv, c)| c * self.kernel.eval(sv, &z)).sum();
        Ok(s + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.decision(x)? > 0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map(Vec::len).ok_or_else(|| Error::Training("no training data".into()))?;
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Training("feature rows must share a nonzero length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Training("features must be finite".into()));
    }
    Ok(d)
}

struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    kernel: Kernel,
    rows: Vec<Option<Vec<f64>>>,
    diag: Vec<f64>,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [Vec<f64>], kernel: Kernel) -> Self {
        let diag = x.iter().map(|r| kernel.eval(r, r)).collect();
        Self { x, kernel, rows: vec![None; x.len()], diag }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if self.rows[i].is_none() {
            let xi = &self.x[i];
            self.rows[i] = Some(self.x.iter().map(|xj| self.kernel.eval(xi, xj)).collect());
        }
        self.rows[i].as_deref().unwrap()
    }
}

/// Trains a binary classifier. Deterministic for a given data order.
pub fn train_classifier(x: &[Vec<f64>], labels: &[bool], params: &SvmParams) -> Result<ClassifierModel> {
    let d = check_matrix(x)?;
    if x.len() != labels.len() {
        return Err(Error::Training("one label per feature row is required".into()));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::Training("both classes must be present".into()));
    }
    if !(params.c > 0.0 && params.tol > 0.0) {
        return Err(Error::Config("C and tol must be positive".into()));
    }
    let standardizer = Standardizer::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
    let kernel = match params.kernel {
        KernelKind::Linear => Kernel::Linear,
        KernelKind::Rbf => {
            let gamma = match params.gamma {
                Some(g) if g > 0.0 => g,
                Some(_) => return Err(Error::Config("gamma must be positive".into())),
                None => {
                    let n = (z.len() * d) as f64;
                    let mean = z.iter().flatten().sum::<f64>() / n;
                    let var = z.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    1.0 / (d as f64 * if var > 0.0 { var } else { 1.0 })
                }
            };
            Kernel::Rbf { gamma }
        }
    };

    let n = z.len();
    let c = params.c;
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let mut alpha = vec![0.0; n];
    // Gradient of the dual objective 1/2 a'Qa - e'a.
    let mut grad = vec![-1.0; n];
    let mut k = KernelRows::new(&z, kernel);
    const TAU: f64 = 1e-12;
    let mut converged = false;

    for _ in 0..params.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            if up && v >= gmax {
                gmax = v;
                i = t;
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        let kii = k.diag[i];
        let ki: Vec<f64> = k.row(i).to_vec();
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if !low {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            let b = gmax - v;
            if b > 0.0 {
                let a = (kii + k.diag[t] - 2.0 * ki[t]).max(TAU);
                let obj = -b * b / a;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax - gmin < params.tol || j == usize::MAX {
            converged = true;
            break;
        }

        let kj: Vec<f64> = k.row(j).to_vec();
        let quad = (kii + k.diag[j] - 2.0 * ki[j]).max(TAU);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // Offset from the free vectors, or the middle of the feasible interval.
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum += yg;
            free += 1;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { 0.5 * (ub + lb) };

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support.push(z[t].clone());
            coef.push(alpha[t] * y[t]);
        }
    }
    Ok(ClassifierModel { kernel, c, standardizer, support, coef, bias: -rho, converged })
}

/// One-vs-rest combination of binary classifiers; the largest decision value
/// wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiClassModel {
    pub labels: Vec<String>,
    pub models: Vec<ClassifierModel>,
}

impl MultiClassModel {
    pub fn train(x: &[Vec<f64>], labels: &[String], params: &SvmParams) -> Result<Self> {
        let mut names: Vec<String> = labels.to_vec();
        names.sort();
        names.dedup();
        if names.len() < 2 {
            return Err(Error::Training("need at least two classes".into()));
        }
        let models = names
            .iter()
            .map(|name| {
                let y: Vec<bool> = labels.iter().map(|l| l == name).collect();
                train_classifier(x, &y, params)
            })
            .collect::<Result<_>>()?;
        Ok(Self { labels: names, models })
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| m.decision(x)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<&str> {
        let s = self.scores(x)?;
        let best = s
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Training("empty model".into()))?;
        Ok(&self.labels[best])
    }
}
