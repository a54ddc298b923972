//! Per-series Kalman baseline.
//!
//! Scalar state with identity observation:
//!
//! ```text
//! x_1 ~ N(mu0, v0)
//! x_t = a·x_{t-1} + w_t,   w_t ~ N(0, q)
//! y_t = x_t + e_t,         e_t ~ N(0, r)
//! ```
//!
//! Gaps skip the measurement update. Parameters come from EM with the usual
//! closed-form M-step; the smoother is the fixed-interval (RTS) backward pass.
//! Filled and predicted means are clamped at zero and discretized.

use crate::engine::StateGrid;
use crate::error::{Error, Result};
use crate::quantizer::Quantizer;
use crate::series::SeriesGrid;

/// EM iterations used by the baseline runs.
pub const DEFAULT_EM_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpaceModel {
    pub transition: f64,
    pub state_var: f64,
    pub obs_var: f64,
    pub init_mean: f64,
    pub init_var: f64,
}

impl StateSpaceModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.transition,
            self.state_var,
            self.obs_var,
            self.init_mean,
            self.init_var,
        ];
        if let Some(v) = all.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*v));
        }
        if self.state_var < 0.0 || self.obs_var < 0.0 || self.init_var < 0.0 {
            return Err(Error::InvalidParameter("variances must be >= 0".into()));
        }
        if self.state_var == 0.0 && self.obs_var == 0.0 {
            return Err(Error::InvalidParameter(
                "state and observation variance cannot both be zero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// One-step-ahead means `E[x_t | y_1..y_{t-1}]`.
    pub pred_mean: Vec<f64>,
    pub pred_var: Vec<f64>,
    /// `E[x_t | y_1..y_t]`.
    pub filt_mean: Vec<f64>,
    pub filt_var: Vec<f64>,
    /// Over non-gap instants only.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherOutput {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// `lag_one_cov[t] = Cov(x_t, x_{t-1} | all data)`; entry 0 is 0.
    pub lag_one_cov: Vec<f64>,
    pub filter: FilterOutput,
}

fn check_series(series: &[Option<f64>]) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InvalidParameter("empty series".into()));
    }
    if let Some(v) = series.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(*v));
    }
    Ok(())
}

pub fn kfilter(series: &[Option<f64>], model: &StateSpaceModel) -> Result<FilterOutput> {
    check_series(series)?;
    model.validate()?;
    let n = series.len();
    let mut out = FilterOutput {
        pred_mean: Vec::with_capacity(n),
        pred_var: Vec::with_capacity(n),
        filt_mean: Vec::with_capacity(n),
        filt_var: Vec::with_capacity(n),
        log_likelihood: 0.0,
    };
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let (mut m, mut p) = (model.init_mean, model.init_var);
    for (t, y) in series.iter().enumerate() {
        if t > 0 {
            m *= model.transition;
            p = model.transition * model.transition * p + model.state_var;
        }
        out.pred_mean.push(m);
        out.pred_var.push(p);
        if let Some(y) = y {
            let s = p + model.obs_var;
            if s.is_nan() || s <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "degenerate innovation variance at t={}",
                    t + 1
                )));
            }
            let innov = y - m;
            let gain = p / s;
            out.log_likelihood += -0.5 * (ln_2pi + s.ln() + innov * innov / s);
            m += gain * innov;
            p = ((1.0 - gain) * p).max(0.0);
        }
        out.filt_mean.push(m);
        out.filt_var.push(p);
    }
    Ok(out)
}

pub fn ksmooth(series: &[Option<f64>], model: &StateSpaceModel) -> Result<SmootherOutput> {
    let filter = kfilter(series, model)?;
    let n = series.len();
    let mut mean = filter.filt_mean.clone();
    let mut var = filter.filt_var.clone();
    let mut lag = vec![0.0; n];
    for t in (0..n.saturating_sub(1)).rev() {
        let pp = filter.pred_var[t + 1];
        let j = if pp > 0.0 {
            filter.filt_var[t] * model.transition / pp
        } else {
            0.0
        };
        mean[t] = filter.filt_mean[t] + j * (mean[t + 1] - filter.pred_mean[t + 1]);
        var[t] = (filter.filt_var[t] + j * j * (var[t + 1] - pp)).max(0.0);
        lag[t + 1] = j * var[t + 1];
    }
    Ok(SmootherOutput {
        mean,
        var,
        lag_one_cov: lag,
        filter,
    })
}

fn observed(series: &[Option<f64>]) -> Vec<f64> {
    series.iter().flatten().copied().collect()
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// `a = 1`, `mu0` the first observation, `v0 = q = r` the sample variance
/// (1.0 when that is zero).
pub fn default_init(series: &[Option<f64>]) -> Result<StateSpaceModel> {
    let obs = observed(series);
    let first = *obs.first().ok_or(Error::TooFewObservations {
        needed: 1,
        found: 0,
    })?;
    let var = sample_variance(&obs);
    let var = if var > 0.0 && var.is_finite() { var } else { 1.0 };
    Ok(StateSpaceModel {
        transition: 1.0,
        state_var: var,
        obs_var: var,
        init_mean: first,
        init_var: var,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub model: StateSpaceModel,
    /// Log-likelihood of the initial model and after every iteration.
    pub log_likelihoods: Vec<f64>,
}

/// EM estimation of all five parameters.
///
/// Variances are kept above a small floor tied to the data scale; the floored
/// update is still the exact maximizer of the constrained M-step, so the
/// likelihood does not decrease.
pub fn em_fit(
    series: &[Option<f64>],
    iterations: usize,
    init: Option<StateSpaceModel>,
) -> Result<EmFit> {
    check_series(series)?;
    let obs = observed(series);
    if obs.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            found: obs.len(),
        });
    }
    let mut model = match init {
        Some(m) => m,
        None => default_init(series)?,
    };
    model.validate()?;
    let scale = {
        let v = sample_variance(&obs);
        if v > 0.0 { v } else { 1.0 }
    };
    let floor = 1e-10 * scale;
    let n = series.len();
    let mut lls = Vec::with_capacity(iterations + 1);

    for _ in 0..iterations {
        let sm = ksmooth(series, &model)?;
        lls.push(sm.filter.log_likelihood);
        let second = |t: usize| sm.var[t] + sm.mean[t] * sm.mean[t];
        if n >= 2 {
            let s11: f64 = (1..n).map(second).sum();
            let s00: f64 = (0..n - 1).map(second).sum();
            let s10: f64 = (1..n)
                .map(|t| sm.lag_one_cov[t] + sm.mean[t] * sm.mean[t - 1])
                .sum();
            if s00 > 0.0 {
                model.transition = s10 / s00;
            }
            let a = model.transition;
            model.state_var = ((s11 - 2.0 * a * s10 + a * a * s00) / (n - 1) as f64).max(floor);
        }
        let resid: f64 = series
            .iter()
            .enumerate()
            .filter_map(|(t, y)| y.map(|y| (y - sm.mean[t]).powi(2) + sm.var[t]))
            .sum();
        model.obs_var = (resid / obs.len() as f64).max(floor);
        model.init_mean = sm.mean[0];
        model.init_var = sm.var[0].max(0.0);
    }
    lls.push(kfilter(series, &model)?.log_likelihood);
    Ok(EmFit {
        model,
        log_likelihoods: lls,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanRun {
    pub states: StateGrid,
    /// Stations with fewer than two observations, left untouched.
    pub skipped: Vec<bool>,
    pub models: Vec<Option<StateSpaceModel>>,
}

fn per_station<F>(grid: &SeriesGrid, quantizer: &Quantizer, iterations: usize, mut emit: F) -> Result<KalmanRun>
where
    F: FnMut(&[Option<f64>], &StateSpaceModel, &mut Vec<Option<u8>>) -> Result<()>,
{
    let mut run = KalmanRun {
        states: Vec::with_capacity(grid.num_stations()),
        skipped: Vec::with_capacity(grid.num_stations()),
        models: Vec::with_capacity(grid.num_stations()),
    };
    for series in grid.values() {
        let mut row: Vec<Option<u8>> = series
            .iter()
            .map(|v| v.map(|v| quantizer.quantize(v, 1)).transpose())
            .collect::<Result<_>>()?;
        if series.iter().flatten().count() < 2 {
            run.skipped.push(true);
            run.models.push(None);
        } else {
            let fit = em_fit(series, iterations, None)?;
            emit(series, &fit.model, &mut row)?;
            run.skipped.push(false);
            run.models.push(Some(fit.model));
        }
        run.states.push(row);
    }
    Ok(run)
}

/// Smoothed means at gaps, observed values quantized as they are.
pub fn kalman_fill(grid: &SeriesGrid, quantizer: &Quantizer, iterations: usize) -> Result<KalmanRun> {
    per_station(grid, quantizer, iterations, |series, model, row| {
        let sm = ksmooth(series, model)?;
        for (t, y) in series.iter().enumerate() {
            if y.is_none() {
                row[t] = Some(quantizer.quantize(sm.mean[t].max(0.0), 1)?);
            }
        }
        Ok(())
    })
}

/// One-step-ahead predictive means for every instant after the first; the
/// first instant carries no prediction.
pub fn kalman_predict(grid: &SeriesGrid, quantizer: &Quantizer, iterations: usize) -> Result<KalmanRun> {
    let mut run = per_station(grid, quantizer, iterations, |series, model, row| {
        let f = kfilter(series, model)?;
        row[0] = None;
        for t in 1..series.len() {
            row[t] = Some(quantizer.quantize(f.pred_mean[t].max(0.0), 1)?);
        }
        Ok(())
    })?;
    for (row, skipped) in run.states.iter_mut().zip(&run.skipped) {
        if *skipped {
            row.iter_mut().for_each(|s| *s = None);
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Station;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(a: f64, q: f64, r: f64, mu0: f64, v0: f64) -> StateSpaceModel {
        StateSpaceModel {
            transition: a,
            state_var: q,
            obs_var: r,
            init_mean: mu0,
            init_var: v0,
        }
    }

    #[test]
    fn single_update_by_hand() {
        let f = kfilter(&[Some(2.0)], &model(1.0, 0.0, 1.0, 0.0, 1.0)).unwrap();
        assert!((f.filt_mean[0] - 1.0).abs() < 1e-12);
        assert!((f.filt_var[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noiseless_observations_are_tracked() {
        let ys = [Some(3.0), None, Some(7.5), Some(1.25), None, Some(4.0)];
        let f = kfilter(&ys, &model(1.0, 100.0, 1e-12, 0.0, 100.0)).unwrap();
        for (t, y) in ys.iter().enumerate() {
            if let Some(y) = y {
                assert!((f.filt_mean[t] - y).abs() < 1e-6, "t={t}");
            }
        }
    }

    #[test]
    fn all_gap_series_propagates_prior() {
        let m = model(0.9, 0.5, 1.0, 2.0, 3.0);
        let f = kfilter(&[None; 4], &m).unwrap();
        assert_eq!(f.log_likelihood, 0.0);
        let (mut mean, mut var) = (2.0, 3.0);
        for t in 0..4 {
            if t > 0 {
                mean *= 0.9;
                var = 0.81 * var + 0.5;
            }
            assert!((f.filt_mean[t] - mean).abs() < 1e-12);
            assert!((f.filt_var[t] - var).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            kfilter(&[Some(f64::NAN)], &model(1.0, 1.0, 1.0, 0.0, 1.0)),
            Err(Error::NonFinite(_))
        ));
        assert!(model(1.0, 0.0, 0.0, 0.0, 1.0).validate().is_err());
    }

    #[test]
    fn single_instant_smoother_equals_filter() {
        let m = model(1.0, 1.0, 1.0, 0.0, 2.0);
        let s = ksmooth(&[Some(1.5)], &m).unwrap();
        assert_eq!(s.mean, s.filter.filt_mean);
        assert_eq!(s.var, s.filter.filt_var);
    }

    #[test]
    fn static_state_smooths_to_constant() {
        // a = 1, q = 0: one latent value; its posterior is the conjugate
        // normal update with all observations.
        let ys = [Some(1.0), Some(3.0), None, Some(2.0), Some(6.0)];
        let (mu0, v0, r) = (0.5, 4.0, 2.0);
        let s = ksmooth(&ys, &model(1.0, 0.0, r, mu0, v0)).unwrap();
        let obs: Vec<f64> = ys.iter().flatten().copied().collect();
        let prec = 1.0 / v0 + obs.len() as f64 / r;
        let post = (mu0 / v0 + obs.iter().sum::<f64>() / r) / prec;
        for t in 0..ys.len() {
            assert!((s.mean[t] - post).abs() < 1e-10);
            assert!((s.var[t] - 1.0 / prec).abs() < 1e-10);
        }
    }

    /// Exact posterior of the latent vector by conditioning the joint Gaussian.
    struct Joint {
        mean: Vec<f64>,
        cov: DMatrix<f64>,
    }

    fn joint(n: usize, m: &StateSpaceModel) -> Joint {
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        for t in 0..n {
            if t == 0 {
                mean[0] = m.init_mean;
                var[0] = m.init_var;
            } else {
                mean[t] = m.transition * mean[t - 1];
                var[t] = m.transition.powi(2) * var[t - 1] + m.state_var;
            }
        }
        let cov = DMatrix::from_fn(n, n, |s, t| {
            let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
            m.transition.powi((hi - lo) as i32) * var[lo]
        });
        Joint { mean, cov }
    }

    /// Posterior mean, covariance and log-likelihood given observations at
    /// `obs` (indices into the latent vector).
    fn condition(j: &Joint, r: f64, ys: &[Option<f64>], upto: usize) -> (Vec<f64>, DMatrix<f64>, f64) {
        let obs: Vec<usize> = (0..upto).filter(|&t| ys[t].is_some()).collect();
        let n = j.mean.len();
        if obs.is_empty() {
            return (j.mean.clone(), j.cov.clone(), 0.0);
        }
        let k = obs.len();
        let s = DMatrix::from_fn(k, k, |a, b| j.cov[(obs[a], obs[b])] + if a == b { r } else { 0.0 });
        let cxo = DMatrix::from_fn(n, k, |x, b| j.cov[(x, obs[b])]);
        let resid = DVector::from_fn(k, |a, _| ys[obs[a]].unwrap() - j.mean[obs[a]]);
        let s_inv = s.clone().try_inverse().unwrap();
        let gain = &cxo * &s_inv;
        let mean_v = DVector::from_vec(j.mean.clone()) + &gain * &resid;
        let cov = &j.cov - &gain * cxo.transpose();
        let quad = (resid.transpose() * &s_inv * &resid)[(0, 0)];
        let ll = -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + s.determinant().ln() + quad);
        (mean_v.iter().copied().collect(), cov, ll)
    }

    #[test]
    fn two_step_hand_example_matches_oracle() {
        let m = model(0.8, 0.5, 1.0, 1.0, 2.0);
        let ys = [Some(2.0), Some(0.5)];
        let s = ksmooth(&ys, &m).unwrap();
        let (mean, cov, ll) = condition(&joint(2, &m), m.obs_var, &ys, 2);
        for t in 0..2 {
            assert!((s.mean[t] - mean[t]).abs() < 1e-12);
            assert!((s.var[t] - cov[(t, t)]).abs() < 1e-12);
        }
        assert!((s.lag_one_cov[1] - cov[(1, 0)]).abs() < 1e-12);
        assert!((s.filter.log_likelihood - ll).abs() < 1e-12);
    }

    fn arb_series() -> impl Strategy<Value = (Vec<Option<f64>>, StateSpaceModel)> {
        (
            proptest::collection::vec(proptest::option::weighted(0.75, -5.0f64..5.0), 1..=5),
            -1.5f64..1.5,
            0.0f64..2.0,
            0.05f64..2.0,
            -2.0f64..2.0,
            0.0f64..3.0,
        )
            .prop_map(|(ys, a, q, r, mu0, v0)| (ys, model(a, q, r, mu0, v0)))
    }

    proptest! {
        #[test]
        fn filter_and_smoother_match_joint_gaussian((ys, m) in arb_series()) {
            let n = ys.len();
            let j = joint(n, &m);
            let s = ksmooth(&ys, &m).unwrap();
            for t in 0..n {
                let (fm, fc, _) = condition(&j, m.obs_var, &ys, t + 1);
                prop_assert!((s.filter.filt_mean[t] - fm[t]).abs() < 1e-8);
                prop_assert!((s.filter.filt_var[t] - fc[(t, t)]).abs() < 1e-8);
                let (pm, pc, _) = condition(&j, m.obs_var, &ys, t);
                prop_assert!((s.filter.pred_mean[t] - pm[t]).abs() < 1e-8);
                prop_assert!((s.filter.pred_var[t] - pc[(t, t)]).abs() < 1e-8);
            }
            let (sm, sc, ll) = condition(&j, m.obs_var, &ys, n);
            for t in 0..n {
                prop_assert!((s.mean[t] - sm[t]).abs() < 1e-8);
                prop_assert!((s.var[t] - sc[(t, t)]).abs() < 1e-8);
                prop_assert!(s.var[t] <= s.filter.filt_var[t] + 1e-12);
                prop_assert!(s.var[t] >= 0.0);
                if t > 0 {
                    prop_assert!((s.lag_one_cov[t] - sc[(t, t - 1)]).abs() < 1e-8);
                }
            }
            prop_assert!((s.filter.log_likelihood - ll).abs() < 1e-8);
        }
    }

    fn simulate(seed: u64, n: usize, m: &StateSpaceModel, gap: f64) -> Vec<Option<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || {
            // Box-Muller keeps this oracle free of the code under test.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos(), rng.gen_bool(gap))
        };
        let mut x = m.init_mean + m.init_var.sqrt() * normal().0;
        (0..n)
            .map(|t| {
                if t > 0 {
                    x = m.transition * x + m.state_var.sqrt() * normal().0;
                }
                let (e, missing) = normal();
                (!missing).then(|| x + m.obs_var.sqrt() * e)
            })
            .collect()
    }

    #[test]
    fn em_recovers_observation_noise_roughly() {
        let truth = model(0.9, 1.0, 0.5, 0.0, 1.0);
        let ys = simulate(4, 3000, &truth, 0.05);
        let fit = em_fit(&ys, 50, None).unwrap();
        assert!((fit.model.obs_var - 0.5).abs() < 0.25, "{:?}", fit.model);
        assert!((fit.model.transition - 0.9).abs() < 0.1, "{:?}", fit.model);
    }

    #[test]
    fn em_zero_iterations_returns_init() {
        let ys = [Some(1.0), Some(2.0), None, Some(4.0)];
        let init = model(0.7, 0.3, 0.2, 1.0, 1.0);
        let fit = em_fit(&ys, 0, Some(init)).unwrap();
        assert_eq!(fit.model, init);
        assert_eq!(fit.log_likelihoods.len(), 1);
    }

    #[test]
    fn em_needs_two_observations() {
        assert!(matches!(
            em_fit(&[Some(1.0), None, None], 10, None),
            Err(Error::TooFewObservations { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn em_on_constant_series() {
        let ys: Vec<Option<f64>> = (0..50).map(|t| (t != 20).then_some(10.0)).collect();
        let fit = em_fit(&ys, 10, None).unwrap();
        assert!(fit.model.state_var < 1e-2, "{:?}", fit.model);
        let f = kfilter(&ys, &fit.model).unwrap();
        for t in 1..50 {
            assert!((f.pred_mean[t] - 10.0).abs() < 1e-2);
        }
    }

    #[test]
    fn em_likelihood_monotone_on_random_series() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = model(
                rng.gen_range(-0.9..1.0),
                rng.gen_range(0.01..2.0),
                rng.gen_range(0.01..2.0),
                rng.gen_range(-3.0..3.0),
                1.0,
            );
            let ys = simulate(seed + 1000, rng.gen_range(5..120), &truth, 0.1);
            if ys.iter().flatten().count() < 2 {
                continue;
            }
            let fit = em_fit(&ys, 10, None).unwrap();
            for w in fit.log_likelihoods.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {:?}", fit.log_likelihoods);
            }
        }
    }

    fn grid(rows: Vec<Vec<Option<f64>>>) -> SeriesGrid {
        let st = (0..rows.len())
            .map(|i| Station::new(format!("k{i}"), 0.0, i as f64))
            .collect();
        SeriesGrid::new(st, rows).unwrap()
    }

    #[test]
    fn fill_without_gaps_is_quantized_original() {
        let q = Quantizer::new(10, 90.0).unwrap();
        let row: Vec<Option<f64>> = (0..20).map(|t| Some((t * 4) as f64)).collect();
        let g = grid(vec![row.clone()]);
        let run = kalman_fill(&g, &q, 10).unwrap();
        for t in 0..20 {
            assert_eq!(run.states[0][t], Some(q.quantize(row[t].unwrap(), 1).unwrap()));
        }
    }

    #[test]
    fn constant_series_fill_and_predict() {
        let q = Quantizer::new(10, 90.0).unwrap();
        let row: Vec<Option<f64>> = (0..30).map(|t| (t != 12).then_some(15.0)).collect();
        let g = grid(vec![row, vec![Some(3.0), None, None]
            .into_iter()
            .chain(std::iter::repeat_n(None, 27))
            .collect()]);
        let want = q.quantize(15.0, 1).unwrap();
        let run = kalman_fill(&g, &q, 10).unwrap();
        assert_eq!(run.states[0][12], Some(want));
        assert!(run.skipped[1]);
        assert_eq!(run.states[1][0], Some(q.quantize(3.0, 1).unwrap()));
        assert_eq!(run.states[1][1], None);

        let pred = kalman_predict(&g, &q, 10).unwrap();
        assert_eq!(pred.states[0][0], None);
        assert_eq!(pred.states[0][1], Some(want));
        assert!(pred.states[0][1..].iter().all(|s| *s == Some(want)));
        assert!(pred.states[1].iter().all(Option::is_none));
    }

    #[test]
    fn negative_means_clamp_to_zero_state() {
        let q = Quantizer::new(10, 90.0).unwrap();
        let m = model(-1.0, 0.01, 0.01, 5.0, 0.01);
        let f = kfilter(&[Some(5.0), None], &m).unwrap();
        assert!(f.pred_mean[1] < 0.0);
        assert_eq!(q.quantize(f.pred_mean[1].max(0.0), 1).unwrap(), 0);
    }
}
