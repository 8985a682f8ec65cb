//! Bounded (μ/μ_w, λ)-CMA-ES.
//!
//! The search runs in normalized coordinates where every variable spans
//! `[0, 1]` across its box. Candidates are clamped into the box and the
//! repaired points drive all updates, so every evaluated point is feasible.
//! Sampling is sequential from a seeded ChaCha stream; only the fitness
//! evaluations run in parallel, which keeps results bitwise reproducible.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generations over which the best-f spread is measured for `ftol`.
const FTOL_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub maxiter: usize,
    /// `None` selects [`default_popsize`].
    pub popsize: Option<usize>,
    /// Initial step as a fraction of each variable's box half-width.
    pub sigma0: f64,
    /// Per-variable `[lo, hi]`.
    pub bounds: Vec<[f64; 2]>,
    pub seed: u64,
    pub diagonal_only: bool,
    /// Relative spread of generation-best f over the last generations.
    pub ftol: f64,
    /// Absolute per-coordinate step size, original units.
    pub xtol: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            maxiter: 100,
            popsize: None,
            sigma0: 0.3,
            bounds: Vec::new(),
            seed: 0,
            diagonal_only: false,
            ftol: 1e-8,
            xtol: 1e-10,
        }
    }
}

impl OptConfig {
    pub fn with_bounds(bounds: Vec<[f64; 2]>) -> Self {
        Self {
            bounds,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.maxiter == 0 {
            return bad("maxiter must be at least 1".into());
        }
        if let Some(l) = self.popsize {
            if l < 4 {
                return bad(format!("popsize {l} is below 4"));
            }
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if self.bounds.is_empty() {
            return bad("no bounds given".into());
        }
        for (i, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(format!("bounds for variable {i} are not an interval: [{lo}, {hi}]"));
            }
        }
        if self.ftol < 0.0 || self.xtol < 0.0 {
            return bad("tolerances must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIter,
    Ftol,
    Xtol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub evaluations: usize,
    pub generations: usize,
    pub termination: Termination,
    /// Best f among each generation's candidates.
    pub history: Vec<f64>,
}

/// `4 + ⌊3 ln n⌋`.
pub fn default_popsize(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidConfig("dimension must be at least 1".into()));
    }
    Ok(4 + (3.0 * (n as f64).ln()).floor() as usize)
}

/// Component-wise clamp into `[lo, hi]`.
pub fn repair_to_bounds(x: &[f64], bounds: &[[f64; 2]]) -> Vec<f64> {
    x.iter().zip(bounds).map(|(&v, &[lo, hi])| v.clamp(lo, hi)).collect()
}

struct Params {
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Params {
    fn new(n: usize, lambda: usize, diagonal: bool) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let mut c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let mut c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        if diagonal {
            // separable variant learns only n parameters and can afford faster rates
            let boost = (nf + 2.0) / 3.0;
            c_1 = (c_1 * boost).min(1.0);
            c_mu = (c_mu * boost).min(1.0 - c_1);
        }
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Minimizes `f` within `cfg.bounds` starting from `x0`.
///
/// `f` must be pure: it is called from several threads and its results must
/// not depend on call order. Non-finite values rank last.
pub fn minimize<F>(f: F, x0: &[f64], cfg: &OptConfig) -> Result<OptResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let n = x0.len();
    if n != cfg.bounds.len() {
        return Err(Error::InvalidConfig(format!(
            "x0 has {n} entries but {} bounds were given",
            cfg.bounds.len()
        )));
    }
    let lambda = match cfg.popsize {
        Some(l) => l,
        None => default_popsize(n)?,
    };
    let p = Params::new(n, lambda, cfg.diagonal_only);
    let lo: Vec<f64> = cfg.bounds.iter().map(|b| b[0]).collect();
    let width: Vec<f64> = cfg.bounds.iter().map(|b| b[1] - b[0]).collect();
    let to_orig = |u: &DVector<f64>| -> Vec<f64> { (0..n).map(|i| lo[i] + u[i] * width[i]).collect() };

    let x0r = repair_to_bounds(x0, &cfg.bounds);
    let f0 = f(&x0r);
    if !f0.is_finite() {
        log::error!("objective is {f0} at x0");
        return Err(Error::InvalidStartingPoint);
    }
    let mut x_best = x0r.clone();
    let mut f_best = f0;
    let mut evaluations = 1;

    let mut mean = DVector::from_fn(n, |i, _| (x0r[i] - lo[i]) / width[i]);
    let mut sigma = cfg.sigma0 * 0.5;
    let mut c = DMatrix::<f64>::identity(n, n);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut d = DVector::<f64>::from_element(n, 1.0);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.maxiter);
    let mut termination = Termination::MaxIter;
    let mut generations = 0;

    for gen in 0..cfg.maxiter {
        generations = gen + 1;
        // sample and repair in normalized coordinates
        let mut steps: Vec<DVector<f64>> = Vec::with_capacity(lambda);
        let mut candidates: Vec<DVector<f64>> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let y = &b * z.component_mul(&d);
            let x = (&mean + &y * sigma).map(|v| v.clamp(0.0, 1.0));
            steps.push((&x - &mean) / sigma);
            candidates.push(x);
        }
        let points: Vec<Vec<f64>> = candidates.iter().map(to_orig).collect();
        let values: Vec<f64> = points
            .par_iter()
            .map(|x| {
                let v = f(x);
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            })
            .collect();
        evaluations += lambda;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
        let gen_best = values[order[0]];
        history.push(gen_best);
        if gen_best < f_best {
            f_best = gen_best;
            x_best = points[order[0]].clone();
        }

        // recombination
        let mut y_w = DVector::<f64>::zeros(n);
        for (k, &i) in order.iter().take(p.weights.len()).enumerate() {
            y_w.axpy(p.weights[k], &steps[i], 1.0);
        }
        mean += &y_w * sigma;

        // step-size path uses C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let c_inv_sqrt_y = &b * (b.transpose() * &y_w).component_div(&d);
        p_sigma = &p_sigma * (1.0 - p.c_sigma) + c_inv_sqrt_y * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        let ps_norm = p_sigma.norm();
        let h_sigma_denom = (1.0 - (1.0 - p.c_sigma).powi(2 * (gen as i32 + 1))).sqrt();
        let h_sigma = ps_norm / h_sigma_denom < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let hs = if h_sigma { 1.0 } else { 0.0 };
        p_c = &p_c * (1.0 - p.c_c) + &y_w * (hs * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        // covariance: rank-one plus rank-μ
        let delta_h = (1.0 - hs) * p.c_c * (2.0 - p.c_c);
        let decay = 1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h;
        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (k, &i) in order.iter().take(p.weights.len()).enumerate() {
            rank_mu += &steps[i] * steps[i].transpose() * p.weights[k];
        }
        c = &c * decay + &p_c * p_c.transpose() * p.c_1 + rank_mu * p.c_mu;
        if cfg.diagonal_only {
            c = DMatrix::from_diagonal(&c.diagonal());
        }
        c = (&c + c.transpose()) * 0.5;

        sigma *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();

        if cfg.diagonal_only {
            b = DMatrix::identity(n, n);
            d = c.diagonal().map(|v| v.max(1e-300).sqrt());
        } else {
            let eig = c.clone().symmetric_eigen();
            b = eig.eigenvectors;
            d = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());
        }

        log::trace!("cmaes gen {gen}: best {gen_best:.6e} sigma {sigma:.3e}");

        if history.len() >= FTOL_WINDOW {
            let window = &history[history.len() - FTOL_WINDOW..];
            let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo_f = window.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = values.iter().copied().fold(hi, f64::max) - lo_f;
            let scale = hi.abs().max(lo_f.abs());
            if spread.is_finite() && spread <= cfg.ftol * scale {
                termination = Termination::Ftol;
                break;
            }
        }
        let max_step = (0..n).map(|i| sigma * c[(i, i)].sqrt() * width[i]).fold(0.0, f64::max);
        if max_step < cfg.xtol {
            termination = Termination::Xtol;
            break;
        }
    }

    Ok(OptResult {
        x_best,
        f_best,
        evaluations,
        generations,
        termination,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Mutex;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn popsize_formula() {
        assert_eq!(default_popsize(16).unwrap(), 12);
        assert_eq!(default_popsize(1).unwrap(), 4);
        assert!(default_popsize(0).is_err());
    }

    #[test]
    fn repair_cases() {
        let b = vec![[-1.0, 1.0], [0.0, 2.0]];
        assert_eq!(repair_to_bounds(&[0.5, 1.0], &b), vec![0.5, 1.0]);
        assert_eq!(repair_to_bounds(&[-2.0, 3.0], &b), vec![-1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn repair_matches_min_max(x in prop::collection::vec(-10.0..10.0f64, 6), lo in prop::collection::vec(-5.0..0.0f64, 6)) {
            let bounds: Vec<[f64; 2]> = lo.iter().map(|&l| [l, l + 3.0]).collect();
            let r = repair_to_bounds(&x, &bounds);
            for i in 0..6 {
                prop_assert_eq!(r[i], x[i].max(bounds[i][0]).min(bounds[i][1]));
            }
        }
    }

    #[test]
    fn constant_objective_stops_on_ftol() {
        let cfg = OptConfig::with_bounds(vec![[-1.0, 1.0]; 3]);
        let r = minimize(|_| 4.0, &[0.1, 0.2, 0.3], &cfg).unwrap();
        assert_eq!(r.termination, Termination::Ftol);
        assert_eq!(r.f_best, 4.0);
        assert_eq!(r.x_best, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn rosenbrock_2d() {
        let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let cfg = OptConfig {
            maxiter: 1000,
            seed: 5,
            ftol: 1e-15,
            ..OptConfig::with_bounds(vec![[-2.0, 2.0]; 2])
        };
        let r = minimize(rosen, &[-1.0, 1.5], &cfg).unwrap();
        assert!((r.x_best[0] - 1.0).abs() < 1e-3 && (r.x_best[1] - 1.0).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn invalid_start_is_an_error() {
        let cfg = OptConfig::with_bounds(vec![[-1.0, 1.0]; 2]);
        assert!(matches!(minimize(|_| f64::NAN, &[0.0, 0.0], &cfg), Err(Error::InvalidStartingPoint)));
    }

    #[test]
    fn candidates_stay_in_bounds_and_history_is_deterministic() {
        let bounds = vec![[-5.0, 5.0], [0.0, 1.0], [10.0, 10.5]];
        let cfg = OptConfig {
            seed: 9,
            maxiter: 40,
            ..OptConfig::with_bounds(bounds.clone())
        };
        let seen = Mutex::new(Vec::new());
        // optimum outside the box pushes samples into the walls
        let f = |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            (x[0] - 9.0).powi(2) + (x[1] + 3.0).powi(2) + (x[2] - 20.0).powi(2)
        };
        let a = minimize(f, &[0.0, 0.5, 10.2], &cfg).unwrap();
        for x in seen.lock().unwrap().iter() {
            for (v, [lo, hi]) in x.iter().zip(&bounds) {
                assert!(lo <= v && v <= hi);
            }
        }
        let b = minimize(|x: &[f64]| (x[0] - 9.0).powi(2) + (x[1] + 3.0).powi(2) + (x[2] - 20.0).powi(2), &[0.0, 0.5, 10.2], &cfg).unwrap();
        assert_eq!(a, b);
        let mut running = f64::INFINITY;
        for h in &a.history {
            let next = running.min(*h);
            assert!(next <= running);
            running = next;
        }
        assert_eq!(a.x_best, vec![5.0, 0.0, 10.5]);
    }

    #[test]
    fn random_spd_quadratic() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let a = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
            let q = &a * a.transpose() + DMatrix::identity(8, 8) * 0.1;
            let f = |x: &[f64]| {
                let v = DVector::from_column_slice(x);
                (v.transpose() * &q * &v)[(0, 0)]
            };
            let cfg = OptConfig {
                maxiter: 150,
                seed,
                ftol: 0.0,
                ..OptConfig::with_bounds(vec![[-5.0, 5.0]; 8])
            };
            let r = minimize(f, &[2.0; 8], &cfg).unwrap();
            assert!(r.f_best < 1e-6, "seed {seed}: {}", r.f_best);
        }
    }

    #[test]
    fn separable_mode_solves_sphere() {
        let cfg = OptConfig {
            diagonal_only: true,
            maxiter: 300,
            ..OptConfig::with_bounds(vec![[-5.0, 5.0]; 6])
        };
        let r = minimize(sphere, &[3.0; 6], &cfg).unwrap();
        assert!(r.f_best < 1e-10, "{}", r.f_best);
    }
}
