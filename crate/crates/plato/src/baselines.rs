//! Linear reference models: ridge, LASSO and three graph-regularized
//! variants over the collapsed feature graph.
//!
//! Every fit standardizes features and centers the target with the fitting
//! rows' statistics, solves in that space, and reports coefficients in the
//! original units. Objectives use `(1/2n)·‖y − Xw‖²` except ridge, which
//! solves `(XᵀX + λI)w = Xᵀy` directly.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::Neighborhoods;
use crate::nn::Tensor2;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("linear system is singular (λ = {lambda})")]
    Singular { lambda: f64 },
    #[error("no convergence after {iterations} iterations (last change {change:.3e}, objective {objective:.6e})")]
    Convergence {
        iterations: usize,
        change: f64,
        objective: f64,
    },
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    Ridge,
    Lasso,
    GraphNet,
    NcLasso,
    NetworkLasso,
}

impl Penalty {
    pub const ALL: [Penalty; 5] = [
        Penalty::Ridge,
        Penalty::Lasso,
        Penalty::GraphNet,
        Penalty::NcLasso,
        Penalty::NetworkLasso,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Penalty::Ridge => "ridge",
            Penalty::Lasso => "lasso",
            Penalty::GraphNet => "graphnet",
            Penalty::NcLasso => "nc-lasso",
            Penalty::NetworkLasso => "network-lasso",
        }
    }

    pub fn uses_graph(self) -> bool {
        matches!(self, Penalty::GraphNet | Penalty::NcLasso | Penalty::NetworkLasso)
    }
}

impl std::str::FromStr for Penalty {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Penalty::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown linear model `{s}`"))
    }
}

/// Per-column affine map applied before solving.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    /// Population standard deviation; 1 for constant columns.
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
}

impl Standardization {
    pub fn fit(x: &Tensor2<f64>, y: &[f64]) -> Self {
        let (n, d) = (x.rows() as f64, x.cols());
        let mut x_mean = vec![0.0; d];
        for i in 0..x.rows() {
            crate::nn::axpy(1.0 / n, x.row(i), &mut x_mean);
        }
        let mut var = vec![0.0; d];
        for i in 0..x.rows() {
            for (v, (&a, &m)) in var.iter_mut().zip(x.row(i).iter().zip(&x_mean)) {
                *v += (a - m) * (a - m) / n;
            }
        }
        let x_scale = var.iter().map(|&v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Standardization {
            x_mean,
            x_scale,
            y_mean: y.iter().sum::<f64>() / n,
        }
    }

    pub fn transform(&self, x: &Tensor2<f64>) -> Tensor2<f64> {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, &m), &s) in out.row_mut(i).iter_mut().zip(&self.x_mean).zip(&self.x_scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn center(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v - self.y_mean).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub penalty: Penalty,
    /// Coefficients in the original feature units.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Coefficients in the standardized space the solver worked in.
    pub standardized_weights: Vec<f64>,
    pub standardization: Standardization,
    pub lambda_l2: f64,
    pub lambda_l1: f64,
    pub lambda_graph: f64,
}

impl LinearModel {
    fn assemble(penalty: Penalty, ws: Vec<f64>, st: Standardization, l2: f64, l1: f64, lg: f64) -> Self {
        let weights: Vec<f64> = ws.iter().zip(&st.x_scale).map(|(w, s)| w / s).collect();
        let intercept = st.y_mean - crate::nn::dot(&weights, &st.x_mean);
        LinearModel {
            penalty,
            weights,
            intercept,
            standardized_weights: ws,
            standardization: st,
            lambda_l2: l2,
            lambda_l1: l1,
            lambda_graph: lg,
        }
    }

    pub fn predict(&self, x: &Tensor2<f64>) -> Vec<f64> {
        (0..x.rows())
            .map(|i| self.intercept + crate::nn::dot(x.row(i), &self.weights))
            .collect()
    }
}

fn check(x: &Tensor2<f64>, y: &[f64], lambdas: &[f64]) -> Result<()> {
    if x.rows() != y.len() || x.rows() < 2 {
        return Err(BaselineError::Input(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(BaselineError::Input("non-finite data".into()));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(BaselineError::Input("penalty weights must be finite and non-negative".into()));
    }
    Ok(())
}

fn to_matrix(x: &Tensor2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows(), x.cols(), x.data())
}

/// Cholesky solve that treats tiny pivots as singular.
fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let chol = a.cholesky().ok_or(BaselineError::Singular { lambda })?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-12 * scale {
        return Err(BaselineError::Singular { lambda });
    }
    Ok(chol.solve(b))
}

/// Solves `(XᵀX + λI)w = Xᵀy` on standardized `X` and centered `y`, in the
/// dual form `w = Xᵀ(XXᵀ + λI)⁻¹y` when `d > n` and `λ > 0`.
pub fn fit_ridge(x: &Tensor2<f64>, y: &[f64], lambda: f64) -> Result<LinearModel> {
    check(x, y, &[lambda])?;
    let st = Standardization::fit(x, y);
    let xs = to_matrix(&st.transform(x));
    let yc = DVector::from_vec(st.center(y));
    let (n, d) = xs.shape();
    let w = if d > n && lambda > 0.0 {
        let mut g = &xs * xs.transpose();
        for i in 0..n {
            g[(i, i)] += lambda;
        }
        xs.transpose() * spd_solve(g, &yc, lambda)?
    } else {
        let mut g = xs.transpose() * &xs;
        for i in 0..d {
            g[(i, i)] += lambda;
        }
        spd_solve(g, &(xs.transpose() * &yc), lambda)?
    };
    Ok(LinearModel::assemble(Penalty::Ridge, w.as_slice().to_vec(), st, lambda, 0.0, 0.0))
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// The graph part of a penalty, iterating each undirected edge once.
pub fn graph_penalty(penalty: Penalty, w: &[f64], graph: &Neighborhoods, lambda: f64) -> f64 {
    let mut total = 0.0;
    for j in 0..graph.node_count() {
        for &k in graph.of(j).iter().filter(|&&k| k > j) {
            total += match penalty {
                Penalty::GraphNet => (w[j] - w[k]).powi(2),
                Penalty::NcLasso => {
                    let (dj, dk) = (graph.degree(j) as f64, graph.degree(k) as f64);
                    (w[j] / dj.sqrt() - w[k] / dk.sqrt()).powi(2)
                }
                Penalty::NetworkLasso => (w[j] - w[k]).abs(),
                Penalty::Ridge | Penalty::Lasso => 0.0,
            };
        }
    }
    lambda * total
}

/// `(1/2n)‖y − Xw‖² + λ₁‖w‖₁ + graph penalty`, in the solver's space.
pub fn objective(
    penalty: Penalty,
    xs: &Tensor2<f64>,
    yc: &[f64],
    w: &[f64],
    graph: Option<&Neighborhoods>,
    lambda_l1: f64,
    lambda_graph: f64,
) -> f64 {
    let n = xs.rows() as f64;
    let sse: f64 = (0..xs.rows())
        .map(|i| (yc[i] - crate::nn::dot(xs.row(i), w)).powi(2))
        .sum();
    let g = graph.map_or(0.0, |g| graph_penalty(penalty, w, g, lambda_graph));
    sse / (2.0 * n) + lambda_l1 * w.iter().map(|v| v.abs()).sum::<f64>() + g
}

/// Column-major copy for coordinate sweeps.
struct Columns {
    n: usize,
    data: Vec<f64>,
    sq: Vec<f64>,
}

impl Columns {
    fn new(x: &Tensor2<f64>) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            for (j, &v) in x.row(i).iter().enumerate() {
                data[j * n + i] = v;
            }
        }
        let sq = (0..d).map(|j| data[j * n..(j + 1) * n].iter().map(|v| v * v).sum()).collect();
        Columns { n, data, sq }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }
}

pub const MAX_SWEEPS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-8;

/// Cyclic coordinate descent for a quadratic graph term (or none) plus
/// `λ₁‖w‖₁`. Coordinate `j` minimizes
/// `(1/2n)‖r₋ⱼ − xⱼwⱼ‖² + λ_g Σₖ (aⱼwⱼ − aₖwₖ)² + λ₁|wⱼ|` exactly, where
/// `a = 1` for GraphNet and `1/√D` for NC-LASSO.
fn coordinate_descent(
    xs: &Tensor2<f64>,
    yc: &[f64],
    graph: Option<(&Neighborhoods, &[f64])>,
    lambda_l1: f64,
    lambda_graph: f64,
) -> Result<Vec<f64>> {
    let cols = Columns::new(xs);
    let (n, d) = (xs.rows() as f64, xs.cols());
    let mut w = vec![0.0; d];
    let mut r = yc.to_vec();
    let mut change = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        change = 0.0f64;
        for j in 0..d {
            let xj = cols.col(j);
            let mut quad = cols.sq[j] / n;
            let mut lin = crate::nn::dot(xj, &r) / n + quad * w[j];
            if let Some((g, a)) = graph.filter(|_| lambda_graph > 0.0) {
                let nbrs = g.of(j);
                if !nbrs.is_empty() {
                    quad += 2.0 * lambda_graph * nbrs.len() as f64 * a[j] * a[j];
                    lin += 2.0 * lambda_graph * a[j] * nbrs.iter().map(|&k| a[k] * w[k]).sum::<f64>();
                }
            }
            let new = if quad > 0.0 { soft_threshold(lin, lambda_l1) / quad } else { 0.0 };
            let delta = new - w[j];
            if delta != 0.0 {
                crate::nn::axpy(-delta, xj, &mut r);
                w[j] = new;
                change = change.max(delta.abs());
            }
        }
        if change < TOLERANCE {
            return Ok(w);
        }
    }
    Err(BaselineError::Convergence {
        iterations: MAX_SWEEPS,
        change,
        objective: f64::NAN,
    })
}

/// Cyclic coordinate descent with soft-thresholding on
/// `(1/2n)‖y − Xw‖² + λ‖w‖₁`.
pub fn fit_lasso(x: &Tensor2<f64>, y: &[f64], lambda: f64) -> Result<LinearModel> {
    check(x, y, &[lambda])?;
    let st = Standardization::fit(x, y);
    let xs = st.transform(x);
    let w = coordinate_descent(&xs, &st.center(y), None, lambda, 0.0)?;
    Ok(LinearModel::assemble(Penalty::Lasso, w, st, 0.0, lambda, 0.0))
}

/// Scale `aⱼ` of each coordinate inside the quadratic graph term.
fn node_scales(penalty: Penalty, graph: &Neighborhoods) -> Vec<f64> {
    (0..graph.node_count())
        .map(|j| match (penalty, graph.degree(j)) {
            (Penalty::NcLasso, dj) if dj > 0 => 1.0 / (dj as f64).sqrt(),
            _ => 1.0,
        })
        .collect()
}

/// Iterations of the Network-LASSO subgradient method.
pub const SUBGRADIENT_ITERATIONS: usize = 20_000;

/// Proximal subgradient method for the nonsmooth edge term: step
/// `η_t = c/√t` with `c = 1/L` of the data term, soft-thresholding for λ₁,
/// returning the best iterate by objective.
fn network_lasso(xs: &Tensor2<f64>, yc: &[f64], graph: &Neighborhoods, lambda_l1: f64, lambda_graph: f64) -> Vec<f64> {
    let (n, d) = (xs.rows() as f64, xs.cols());
    let x = to_matrix(xs);
    let y = DVector::from_column_slice(yc);
    let lip = ((x.transpose() * &x) / n).symmetric_eigenvalues().max().max(1e-12);
    let c = 1.0 / lip;
    let mut w = DVector::<f64>::zeros(d);
    let obj = |w: &DVector<f64>| objective(Penalty::NetworkLasso, xs, yc, w.as_slice(), Some(graph), lambda_l1, lambda_graph);
    let mut best = (obj(&w), w.clone());
    for t in 1..=SUBGRADIENT_ITERATIONS {
        let eta = c / (t as f64).sqrt();
        let mut g = x.transpose() * (&x * &w - &y) / n;
        for j in 0..d {
            for &k in graph.of(j).iter().filter(|&&k| k > j) {
                let s = lambda_graph * (w[j] - w[k]).signum() * f64::from(u8::from(w[j] != w[k]));
                g[j] += s;
                g[k] -= s;
            }
        }
        w -= eta * g;
        w.apply(|v| *v = soft_threshold(*v, eta * lambda_l1));
        let o = obj(&w);
        if o < best.0 {
            best = (o, w.clone());
        }
    }
    best.1.as_slice().to_vec()
}

/// GraphNet / NC-LASSO / Network LASSO over `graph` (feature order).
/// With `λ₁ = 0` the quadratic variants are solved in closed form from
/// `(XᵀX/n + 2λ_g·L_a)w = Xᵀy/n`, where `L_a` is the scaled Laplacian;
/// otherwise by coordinate descent.
pub fn fit_graph_regularized(
    x: &Tensor2<f64>,
    y: &[f64],
    graph: &Neighborhoods,
    penalty: Penalty,
    lambda_graph: f64,
    lambda_l1: f64,
) -> Result<LinearModel> {
    check(x, y, &[lambda_graph, lambda_l1])?;
    if !penalty.uses_graph() {
        return Err(BaselineError::Input(format!("{} has no graph penalty", penalty.name())));
    }
    if graph.node_count() != x.cols() {
        return Err(BaselineError::Input(format!(
            "graph has {} nodes for {} features",
            graph.node_count(),
            x.cols()
        )));
    }
    let st = Standardization::fit(x, y);
    let xs = st.transform(x);
    let yc = st.center(y);
    let w = match penalty {
        Penalty::NetworkLasso if lambda_graph > 0.0 => network_lasso(&xs, &yc, graph, lambda_l1, lambda_graph),
        _ if lambda_l1 == 0.0 => {
            let a = node_scales(penalty, graph);
            let n = xs.rows() as f64;
            let xm = to_matrix(&xs);
            let mut h = (xm.transpose() * &xm) / n;
            if penalty != Penalty::NetworkLasso {
                for j in 0..graph.node_count() {
                    for &k in graph.of(j) {
                        h[(j, j)] += 2.0 * lambda_graph * a[j] * a[j];
                        h[(j, k)] -= 2.0 * lambda_graph * a[j] * a[k];
                    }
                }
            }
            let b = xm.transpose() * DVector::from_column_slice(&yc) / n;
            spd_solve(h, &b, lambda_graph)?.as_slice().to_vec()
        }
        _ => {
            let a = node_scales(penalty, graph);
            coordinate_descent(&xs, &yc, Some((graph, &a)), lambda_l1, lambda_graph)?
        }
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(BaselineError::Convergence {
            iterations: 0,
            change: f64::NAN,
            objective: f64::NAN,
        });
    }
    Ok(LinearModel::assemble(penalty, w, st, 0.0, lambda_l1, lambda_graph))
}

/// Penalty weights of one linear-baseline trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub penalty: Penalty,
    pub lambda_l2: f64,
    pub lambda_l1: f64,
    pub lambda_graph: f64,
}

impl LinearConfig {
    pub fn hash(&self) -> String {
        crate::checksum::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))[..16].to_owned()
    }
}

fn log_uniform(rng: &mut seed::Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
}

/// Ridge and LASSO draw their weight from LogUniform(1e-4, 10); the graph
/// variants draw λ_graph and λ₁ each as 0 with probability one half, else
/// LogUniform(1e-5, 1e2).
pub fn sample_linear_config(penalty: Penalty, master: u64, index: u64) -> LinearConfig {
    let mut rng = seed::rng(master, "linear-config", index);
    let zero_or = |rng: &mut seed::Rng| {
        if rng.random_bool(0.5) {
            0.0
        } else {
            log_uniform(rng, 1e-5, 1e2)
        }
    };
    let (l2, l1, lg) = match penalty {
        Penalty::Ridge => (log_uniform(&mut rng, 1e-4, 10.0), 0.0, 0.0),
        Penalty::Lasso => (0.0, log_uniform(&mut rng, 1e-4, 10.0), 0.0),
        _ => {
            let lg = zero_or(&mut rng);
            (0.0, zero_or(&mut rng), lg)
        }
    };
    LinearConfig {
        penalty,
        lambda_l2: l2,
        lambda_l1: l1,
        lambda_graph: lg,
    }
}

pub fn fit_linear(cfg: &LinearConfig, x: &Tensor2<f64>, y: &[f64], graph: Option<&Neighborhoods>) -> Result<LinearModel> {
    match cfg.penalty {
        Penalty::Ridge => fit_ridge(x, y, cfg.lambda_l2),
        Penalty::Lasso => fit_lasso(x, y, cfg.lambda_l1),
        p => {
            let g = graph.ok_or_else(|| BaselineError::Input(format!("{} needs a feature graph", p.name())))?;
            fit_graph_regularized(x, y, g, p, cfg.lambda_graph, cfg.lambda_l1)
        }
    }
}
