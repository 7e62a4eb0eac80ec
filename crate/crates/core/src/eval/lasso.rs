use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::auc;
use super::EncodingMatrix;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Coordinate descent stops once no coefficient moves more than this.
pub const CD_TOL: f64 = 1e-7;
/// Cap on coordinate-descent sweeps per fit, across all Newton steps.
pub const MAX_SWEEPS: usize = 10_000;
/// A path stops refitting once the fit explains this share of the null deviance.
pub const PATH_MAX_DEV_RATIO: f64 = 0.999;
/// A path also stops once a step gains less than this fraction of the explained deviance.
pub const PATH_MIN_DEV_GAIN: f64 = 1e-5;
const PATH_MIN_FITS: usize = 5;
const MIN_WEIGHT: f64 = 1e-5;

/// L1-penalized logistic model on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub sweeps: usize,
    pub converged: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Dot product with independent partial sums, which the compiler can vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl LassoModel {
    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub fn decision(&self, x: &EncodingMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(Error::shape(
                "lasso_predict",
                format!("{} columns, model has {}", x.cols(), self.weights.len()),
            ));
        }
        Ok((0..x.rows())
            .map(|r| self.intercept + x.row(r).iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    pub fn predict_proba(&self, x: &EncodingMatrix) -> Result<Vec<f64>> {
        Ok(self.decision(x)?.into_iter().map(sigmoid).collect())
    }
}

fn check_problem(x: &EncodingMatrix, y: &[bool]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::shape("lasso", format!("{} rows vs {} labels", x.rows(), y.len())));
    }
    if !x.data().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("probe features".into()));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Smallest penalty at which every weight is zero, widened by a relative
/// `1e-10` so rounding in the solver cannot free a weight at that penalty.
pub fn lambda_max(x: &EncodingMatrix, y: &[bool]) -> Result<f64> {
    check_problem(x, y)?;
    let q = Quadratic::new(&Solver::new(x, y));
    Ok(q.c.iter().fold(0.0, |m: f64, g| m.max(g.abs())) * (1.0 + 1e-10))
}

/// `len` log-spaced penalties from [`lambda_max`] down to `lambda_max * ratio`.
pub fn lambda_grid(x: &EncodingMatrix, y: &[bool], len: usize, ratio: f64) -> Result<Vec<f64>> {
    if len == 0 || !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("grid of {len} values with ratio {ratio}")));
    }
    let top = lambda_max(x, y)?;
    if top == 0.0 {
        return Ok(vec![0.0]);
    }
    if len == 1 {
        return Ok(vec![top]);
    }
    Ok((0..len).map(|i| top * ratio.powf(i as f64 / (len - 1) as f64)).collect())
}

/// Coordinate-descent state shared along a path of penalties.
struct Solver {
    n: usize,
    p: usize,
    /// Column-major features.
    xt: Vec<f64>,
    y: Vec<f64>,
    beta: Vec<f64>,
    b0: f64,
}

/// Weighted least-squares approximation at the current fit, in covariance
/// form: coordinate updates touch the gradient and cached Gram columns
/// instead of the n-long residual.
struct Quadratic {
    w: Vec<f64>,
    wsum: f64,
    /// `sum w r` over the working residual.
    s: f64,
    /// Gradient `X' W r / n`.
    c: Vec<f64>,
    /// `X' w / n`.
    m: Vec<f64>,
    xw2: Vec<f64>,
    gram: Vec<Option<Vec<f64>>>,
    /// Coefficient moves since the last [`Quadratic::begin`], by position in the swept list.
    pending: Vec<f64>,
    pending_b0: f64,
}

impl Quadratic {
    fn new(solver: &Solver) -> Self {
        let n = solver.n as f64;
        let eta = solver.eta();
        let mut w = Vec::with_capacity(solver.n);
        let mut wr = Vec::with_capacity(solver.n);
        for (e, y) in eta.iter().zip(&solver.y) {
            let p = sigmoid(*e);
            w.push((p * (1.0 - p)).max(MIN_WEIGHT));
            wr.push(y - p);
        }
        let mut c = Vec::with_capacity(solver.p);
        let mut m = Vec::with_capacity(solver.p);
        let mut xw2 = Vec::with_capacity(solver.p);
        for j in 0..solver.p {
            let col = solver.col(j);
            c.push(dot(col, &wr) / n);
            m.push(dot(col, &w) / n);
            let wx: Vec<f64> = col.iter().zip(&w).map(|(x, w)| x * w).collect();
            xw2.push(dot(col, &wx) / n);
        }
        Self {
            wsum: w.iter().sum(),
            s: wr.iter().sum(),
            w,
            c,
            m,
            xw2,
            gram: vec![None; solver.p],
            pending: Vec::new(),
            pending_b0: 0.0,
        }
    }

    fn ensure_gram(&mut self, solver: &Solver, j: usize) {
        let w = &self.w;
        self.gram[j].get_or_insert_with(|| {
            let wx: Vec<f64> = solver.col(j).iter().zip(w).map(|(x, w)| x * w).collect();
            (0..solver.p).map(|k| dot(solver.col(k), &wx) / solver.n as f64).collect()
        });
    }

    fn begin(&mut self, len: usize) {
        self.pending.clear();
        self.pending.resize(len, 0.0);
        self.pending_b0 = 0.0;
    }

    /// Brings the gradient outside `swept` up to date with the moves made
    /// since [`Quadratic::begin`].
    fn catch_up(&mut self, swept: &[usize]) {
        let mut inside = vec![false; self.c.len()];
        for &j in swept {
            inside[j] = true;
        }
        for k in (0..self.c.len()).filter(|&k| !inside[k]) {
            let mut dk = self.pending_b0 * self.m[k];
            for (&j, &d) in swept.iter().zip(&self.pending) {
                if d != 0.0 {
                    dk += d * self.gram[j].as_ref().expect("moved coordinates have Gram columns")[k];
                }
            }
            self.c[k] -= dk;
        }
    }
}

impl Solver {
    fn new(x: &EncodingMatrix, y: &[bool]) -> Self {
        let (n, p) = (x.rows(), x.cols());
        let mut xt = vec![0.0; n * p];
        for r in 0..n {
            for (j, v) in x.row(r).iter().enumerate() {
                xt[j * n + r] = *v;
            }
        }
        let y: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let base = y.iter().sum::<f64>() / n as f64;
        Self { n, p, xt, y, beta: vec![0.0; p], b0: (base / (1.0 - base)).ln() }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.xt[j * self.n..(j + 1) * self.n]
    }

    fn eta(&self) -> Vec<f64> {
        let mut eta = vec![self.b0; self.n];
        for j in 0..self.p {
            if self.beta[j] != 0.0 {
                for (e, v) in eta.iter_mut().zip(self.col(j)) {
                    *e += self.beta[j] * v;
                }
            }
        }
        eta
    }

    /// One pass over `coords` of the weighted least-squares subproblem.
    /// Gradient entries are kept current for `tracked` only.
    fn sweep(&mut self, q: &mut Quadratic, coords: &[usize], tracked: &[usize], lambda: f64) -> f64 {
        let db = q.s / q.wsum;
        self.b0 += db;
        q.s = 0.0;
        q.pending_b0 += db;
        for &k in tracked {
            q.c[k] -= db * q.m[k];
        }
        let mut max_change = db.abs();
        for (slot, &j) in coords.iter().enumerate() {
            let xw2 = q.xw2[j];
            if xw2 == 0.0 {
                continue;
            }
            let old = self.beta[j];
            let new = soft_threshold(q.c[j] + xw2 * old, lambda) / xw2;
            let d = new - old;
            if d != 0.0 {
                q.ensure_gram(self, j);
                let g = q.gram[j].as_deref().expect("just filled");
                for &k in tracked {
                    q.c[k] -= d * g[k];
                }
                q.s -= d * self.n as f64 * q.m[j];
                q.pending[slot] += d;
                self.beta[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        max_change
    }

    fn fit(&mut self, lambda: f64) -> Result<(usize, bool)> {
        let all: Vec<usize> = (0..self.p).collect();
        let mut sweeps = 0;
        loop {
            let prev_beta = self.beta.clone();
            let prev_b0 = self.b0;
            let mut q = Quadratic::new(self);
            'inner: loop {
                sweeps += 1;
                q.begin(self.p);
                if self.sweep(&mut q, &all, &all, lambda) < CD_TOL || sweeps >= MAX_SWEEPS {
                    break;
                }
                let active: Vec<usize> = (0..self.p).filter(|&j| self.beta[j] != 0.0).collect();
                q.begin(active.len());
                let mut done = false;
                while !done {
                    sweeps += 1;
                    if sweeps >= MAX_SWEEPS {
                        q.catch_up(&active);
                        break 'inner;
                    }
                    done = self.sweep(&mut q, &active, &active, lambda) < CD_TOL;
                }
                q.catch_up(&active);
            }
            if !self.b0.is_finite() || !self.beta.iter().all(|b| b.is_finite()) {
                return Err(Error::NonFinite(format!("lasso coefficients at lambda {lambda}")));
            }
            let change =
                self.beta.iter().zip(&prev_beta).map(|(a, b)| (a - b).abs()).fold((self.b0 - prev_b0).abs(), f64::max);
            if change < CD_TOL {
                return Ok((sweeps, true));
            }
            if sweeps >= MAX_SWEEPS {
                return Ok((sweeps, false));
            }
        }
    }

    /// Mean logistic deviance of the current fit.
    fn deviance(&self) -> f64 {
        let total: f64 = self
            .eta()
            .iter()
            .zip(&self.y)
            .map(|(&e, &y)| {
                // log(1 + exp(e)) - y * e, computed without overflow
                let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                softplus - y * e
            })
            .sum();
        2.0 * total / self.n as f64
    }

    fn model(&self, lambda: f64, sweeps: usize, converged: bool) -> LassoModel {
        LassoModel { weights: self.beta.clone(), intercept: self.b0, lambda, sweeps, converged }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Minimizes mean logistic loss plus `lambda * sum|w|` by cyclic coordinate
/// descent on successive quadratic approximations. The intercept is not
/// penalized.
pub fn lasso_logistic_fit(x: &EncodingMatrix, y: &[bool], lambda: f64) -> Result<LassoModel> {
    Ok(lasso_path(x, y, &[lambda])?.pop().expect("one penalty"))
}

/// Fits every penalty in `lambdas`, warm-starting each from the previous
/// solution. Descending order is fastest.
///
/// Once the path saturates (see [`PATH_MAX_DEV_RATIO`] and
/// [`PATH_MIN_DEV_GAIN`], checked from the fifth fit on) the remaining
/// penalties repeat the last fit with `sweeps == 0`.
pub fn lasso_path(x: &EncodingMatrix, y: &[bool], lambdas: &[f64]) -> Result<Vec<LassoModel>> {
    check_problem(x, y)?;
    for &l in lambdas {
        check_lambda(l)?;
    }
    let mut solver = Solver::new(x, y);
    let null_dev = solver.deviance();
    let mut out: Vec<LassoModel> = Vec::with_capacity(lambdas.len());
    let (mut prev_ratio, mut saturated) = (0.0, false);
    for &l in lambdas {
        if saturated {
            let last = out.last().expect("saturation follows a fit");
            out.push(LassoModel { lambda: l, sweeps: 0, ..last.clone() });
            continue;
        }
        let (sweeps, converged) = solver.fit(l)?;
        out.push(solver.model(l, sweeps, converged));
        let ratio = 1.0 - solver.deviance() / null_dev;
        saturated = ratio >= PATH_MAX_DEV_RATIO
            || (out.len() >= PATH_MIN_FITS && ratio - prev_ratio < PATH_MIN_DEV_GAIN * ratio);
        prev_ratio = ratio;
    }
    Ok(out)
}

/// Largest violation of the optimality conditions of the penalized
/// objective at `model`.
pub fn kkt_violation(x: &EncodingMatrix, y: &[bool], model: &LassoModel) -> Result<f64> {
    let probs = model.predict_proba(x)?;
    let n = x.rows() as f64;
    let mut grad = vec![0.0; x.cols()];
    let mut g0 = 0.0;
    for (r, (&p, &yi)) in probs.iter().zip(y).enumerate() {
        let res = p - if yi { 1.0 } else { 0.0 };
        g0 += res;
        for (g, v) in grad.iter_mut().zip(x.row(r)) {
            *g += res * v;
        }
    }
    let mut worst = (g0 / n).abs();
    for (g, w) in grad.iter().zip(&model.weights) {
        let g = g / n;
        let v = if *w == 0.0 { (g.abs() - model.lambda).max(0.0) } else { (g + model.lambda * w.signum()).abs() };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Fold assignment with positives and negatives dealt round-robin after a
/// seeded shuffle, so every fold gets its share of each class.
pub fn stratified_folds(y: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = stream(seed, &[tag("cv-folds")]);
    let mut pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let mut neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut out = vec![0; y.len()];
    for (k, &i) in pos.iter().chain(&neg).enumerate() {
        out[i] = k % folds;
    }
    Ok(out)
}

/// Outcome of [`cv_select_lambda`].
#[derive(Clone, Debug, PartialEq)]
pub struct CvSelection {
    pub lambda: f64,
    /// Mean validation AUC for each grid value.
    pub mean_auc: Vec<f64>,
}

/// Picks the grid penalty with the best mean validation AUC over
/// stratified folds. Ties go to the larger penalty.
pub fn cv_select_lambda(x: &EncodingMatrix, y: &[bool], grid: &[f64], folds: usize, seed: u64) -> Result<CvSelection> {
    check_problem(x, y)?;
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    if grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::invalid("lambda grid must be strictly descending"));
    }
    let assign = stratified_folds(y, folds, seed)?;
    let mut total = vec![0.0; grid.len()];
    for f in 0..folds {
        let (train, valid): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| assign[i] != f);
        let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let yv: Vec<bool> = valid.iter().map(|&i| y[i]).collect();
        for (part, labels) in [("training", &yt), ("validation", &yv)] {
            if !labels.iter().any(|&v| v) || labels.iter().all(|&v| v) {
                return Err(Error::InsufficientData(format!("fold {f} {part} part lacks a class")));
            }
        }
        let xv = x.select(&valid);
        for (k, m) in lasso_path(&x.select(&train), &yt, grid)?.iter().enumerate() {
            total[k] += auc(&m.decision(&xv)?, &yv)?;
        }
    }
    let mean_auc: Vec<f64> = total.iter().map(|t| t / folds as f64).collect();
    let mut best = 0;
    for (k, &a) in mean_auc.iter().enumerate() {
        if a > mean_auc[best] {
            best = k;
        }
    }
    Ok(CvSelection { lambda: grid[best], mean_auc })
}
