//! One-dimensional illustration of model bias: a network fitted to samples
//! near a starting point can place its minimum in the wrong basin.

use std::path::Path;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use super::record::fmt_f64;
use crate::error::{Error, Result};
use crate::numerics::rng::substream;
use crate::numerics::{Activation, AdamState, Mlp};

pub const GLOBAL_MIN: f64 = 1.7;
pub const LOCAL_MIN: f64 = 4.4;
/// The local maximum separating the two basins.
pub const BASIN_BOUNDARY: f64 = 3.1;

/// Quartic with `f'(x) = (x − a)(x − m)(x − b)`, `f(0) = 0`, for the two
/// minima `a`, `b` and the separating maximum `m`.
pub fn double_well(x: f64) -> f64 {
    let (a, m, b) = (GLOBAL_MIN, BASIN_BOUNDARY, LOCAL_MIN);
    let e1 = a + m + b;
    let e2 = a * m + a * b + m * b;
    let e3 = a * m * b;
    x.powi(4) / 4.0 - e1 * x.powi(3) / 3.0 + e2 * x * x / 2.0 - e3 * x
}

pub fn double_well_grad(x: f64) -> f64 {
    (x - GLOBAL_MIN) * (x - BASIN_BOUNDARY) * (x - LOCAL_MIN)
}

/// Whether gradient descent on the true `f` from `x` ends at 1.7.
pub fn in_global_basin(x: f64) -> bool {
    x < BASIN_BOUNDARY
}

#[derive(Clone, Debug, PartialEq)]
pub enum BiasSampling {
    /// `n` points drawn from `N(center, std)`.
    Local { center: f64, std: f64, n: usize },
    /// `n` evenly spaced points covering the whole domain.
    Dense { n: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasDemoConfig {
    pub sampling: BiasSampling,
    pub domain: (f64, f64),
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Points of the grid the fitted minimum is searched on.
    pub grid: usize,
    pub seed: u64,
}

impl Default for BiasDemoConfig {
    fn default() -> Self {
        Self {
            sampling: BiasSampling::Local {
                center: 2.5,
                std: 0.7,
                n: 60,
            },
            domain: (0.0, 6.0),
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            iterations: 10_000,
            learning_rate: 3e-3,
            grid: 1001,
            seed: 0,
        }
    }
}

impl BiasDemoConfig {
    pub fn dense(seed: u64) -> Self {
        Self {
            sampling: BiasSampling::Dense { n: 100 },
            seed,
            ..Self::default()
        }
    }

    pub fn local(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasDemoReport {
    pub samples: Vec<(f64, f64)>,
    /// `(x, f(x), f̃(x))` on the search grid.
    pub curve: Vec<(f64, f64, f64)>,
    pub argmin: f64,
    pub in_global_basin: bool,
    /// The fitted minimum is closer to 4.4 than to 1.7.
    pub nearer_local: bool,
    /// Root-mean-square fit error on the samples.
    pub fit_rmse: f64,
}

fn standardize(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-6))
}

/// Fits a network to samples of `f` by full-batch L2 regression and
/// reports where its minimum over the domain grid lands.
pub fn run_bias_demo(cfg: &BiasDemoConfig) -> Result<BiasDemoReport> {
    let (lo, hi) = cfg.domain;
    if !(lo < hi) || cfg.grid < 2 || cfg.iterations == 0 {
        return Err(Error::InvalidConfig("bias demo needs lo < hi, a grid of at least 2 and some iterations".into()));
    }
    let mut rng = substream(cfg.seed, "bias-demo", 0);
    let xs: Vec<f64> = match cfg.sampling {
        BiasSampling::Local { center, std, n } => {
            let dist = Normal::new(center, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        }
        BiasSampling::Dense { n } => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64).collect(),
    };
    if xs.len() < 2 {
        return Err(Error::InvalidConfig("bias demo needs at least 2 samples".into()));
    }
    let ys: Vec<f64> = xs.iter().map(|&x| double_well(x)).collect();
    let (xm, xsd) = standardize(&xs);
    let (ym, ysd) = standardize(&ys);

    let mut sizes = vec![1];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, cfg.activation, Activation::Identity, &mut rng)?;
    let x = Array2::from_shape_fn((xs.len(), 1), |(i, _)| (xs[i] - xm) / xsd);
    let y = Array2::from_shape_fn((ys.len(), 1), |(i, _)| (ys[i] - ym) / ysd);
    let mut adam = AdamState::new(net.num_params(), cfg.learning_rate);
    let scale = 2.0 / xs.len() as f64;
    for _ in 0..cfg.iterations {
        let cache = net.forward_cached(x.view());
        let upstream = (cache.output() - &y) * scale;
        let mut grads = vec![0.0; net.num_params()];
        net.backward_accumulate(&cache, upstream.view(), &mut grads, false);
        adam.step(net.params_mut(), &grads)?;
    }
    let fitted = net.forward(x.view());
    let fit_rmse =
        ((0..xs.len()).map(|i| (fitted[[i, 0]] * ysd + ym - ys[i]).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();

    let grid: Vec<f64> = (0..cfg.grid).map(|i| lo + (hi - lo) * i as f64 / (cfg.grid - 1) as f64).collect();
    let gx = Array2::from_shape_fn((grid.len(), 1), |(i, _)| (grid[i] - xm) / xsd);
    let pred = net.forward(gx.view());
    let curve: Vec<(f64, f64, f64)> =
        grid.iter().enumerate().map(|(i, &g)| (g, double_well(g), pred[[i, 0]] * ysd + ym)).collect();
    let argmin = curve.iter().min_by(|a, b| a.2.total_cmp(&b.2)).map(|c| c.0).expect("non-empty grid");
    Ok(BiasDemoReport {
        samples: xs.into_iter().zip(ys).collect(),
        curve,
        argmin,
        in_global_basin: in_global_basin(argmin),
        nearer_local: (argmin - LOCAL_MIN).abs() < (argmin - GLOBAL_MIN).abs(),
        fit_rmse,
    })
}

/// `x,f,f_hat` rows of the fitted curve.
pub fn write_bias_curve_csv(path: &Path, report: &BiasDemoReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "f", "f_hat"])?;
    for (x, f, fh) in &report.curve {
        w.write_record([fmt_f64(*x), fmt_f64(*f), fmt_f64(*fh)])?;
    }
    w.flush()?;
    Ok(())
}
