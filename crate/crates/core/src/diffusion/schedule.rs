use crate::error::{Error, Result};
use crate::frame::FloatPlanes;

use super::Real;

/// Linear-β schedule description, as stored in checkpoints and CLI flags.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleParams {
    /// β range `[1e-4, 0.02]` over 1000 steps.
    pub const REFERENCE: ScheduleParams = ScheduleParams { steps: 1000, beta_start: 1e-4, beta_end: 0.02 };

    /// The reference β range rescaled by `1000 / steps`, so short schedules still end
    /// close to pure noise.
    pub fn scaled(steps: usize) -> Self {
        let k = 1000.0 / steps as f64;
        ScheduleParams { steps, beta_start: 1e-4 * k, beta_end: (0.02 * k).min(0.999) }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Per-step signal retention `α_t` and cumulative products `ᾱ_t`, indexed `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// `α_t` for `t ∈ 1..=T`; `α_0 = 1`.
    pub fn alpha(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas[t - 1]
        }
    }

    /// `ᾱ_t` for `t ∈ 1..=T`; `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Signal and noise coefficients `(√ᾱ_t, √(1-ᾱ_t))`.
    pub fn coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (ab.sqrt(), (1.0 - ab).sqrt())
    }
}

/// β_t linearly spaced from `beta_start` to `beta_end`, `α_t = 1 − β_t`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("step count must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!("need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")));
    }
    let alphas: Vec<f64> = (0..steps)
        .map(|i| {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            1.0 - (beta_start + (beta_end - beta_start) * frac)
        })
        .collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule { params: ScheduleParams { steps, beta_start, beta_end }, alphas, alpha_bars })
}

/// Closed-form noising `√ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
pub fn forward_diffuse<R: Real>(x0: &FloatPlanes<R>, t: usize, eps: &FloatPlanes<R>, schedule: &NoiseSchedule) -> Result<FloatPlanes<R>> {
    if !x0.same_shape(eps) {
        return Err(Error::Shape(format!(
            "x0 is {}x{}x{} but noise is {}x{}x{}",
            x0.channels, x0.height, x0.width, eps.channels, eps.height, eps.width
        )));
    }
    if t == 0 || t > schedule.steps() {
        return Err(Error::InvalidArgument(format!("step {t} outside 1..={}", schedule.steps())));
    }
    let (a, b) = schedule.coefficients(t);
    let (a, b) = (R::from_f64(a), R::from_f64(b));
    let data = x0.data.iter().zip(&eps.data).map(|(&x, &e)| a * x + b * e).collect();
    Ok(FloatPlanes { width: x0.width, height: x0.height, channels: x0.channels, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn product_oracle(steps: usize, b0: f64, b1: f64) -> f64 {
        let mut p = 1.0;
        for t in 1..=steps {
            let beta = if steps == 1 { b0 } else { b0 + (b1 - b0) * (t - 1) as f64 / (steps - 1) as f64 };
            p *= 1.0 - beta;
        }
        p
    }

    #[test]
    fn single_step() {
        let s = make_schedule(1, 0.01, 0.02).unwrap();
        assert_eq!(s.alpha_bar(1), 0.99);
        assert_eq!(s.alpha(1), 0.99);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn thousand_steps_end_near_noise() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        let oracle = product_oracle(1000, 1e-4, 0.02);
        assert!((s.alpha_bar(1000) - oracle).abs() <= 1e-15 * oracle.max(1e-300) * 1000.0);
        assert!(oracle < 1e-4, "{oracle}");
        assert!(s.alpha_bar(1000) < 1e-4);
    }

    #[test]
    fn rejects_bad_ranges() {
        for (t, a, b) in [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)] {
            assert!(matches!(make_schedule(t, a, b), Err(Error::InvalidSchedule(_))));
        }
    }

    #[test]
    fn scaled_schedule_is_valid() {
        let s = ScheduleParams::scaled(50).build().unwrap();
        assert!(s.alpha_bar(50) < 1e-4);
        assert!(s.alphas().iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn forward_branches() {
        let s = make_schedule(10, 1e-3, 0.2).unwrap();
        let x0 = FloatPlanes { width: 2, height: 1, channels: 1, data: vec![0.5, -0.25] };
        let zero = FloatPlanes { width: 2, height: 1, channels: 1, data: vec![0.0, 0.0] };
        let eps = FloatPlanes { width: 2, height: 1, channels: 1, data: vec![1.0, 2.0] };
        let (a, b) = s.coefficients(4);
        assert_eq!(forward_diffuse(&x0, 4, &zero, &s).unwrap().data, vec![a * 0.5, a * -0.25]);
        assert_eq!(forward_diffuse(&zero, 4, &eps, &s).unwrap().data, vec![b, b * 2.0]);
        let bad = FloatPlanes { width: 1, height: 1, channels: 1, data: vec![0.0] };
        assert!(matches!(forward_diffuse(&x0, 4, &bad, &s), Err(Error::Shape(_))));
        assert!(forward_diffuse(&x0, 0, &eps, &s).is_err());
        assert!(forward_diffuse(&x0, 11, &eps, &s).is_err());
    }

    #[test]
    fn forward_moments_monte_carlo() {
        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        let t = 60;
        let x0 = FloatPlanes { width: 1, height: 1, channels: 1, data: vec![0.7f64] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 10_000;
        let xs: Vec<f64> = (0..draws)
            .map(|_| {
                let e = FloatPlanes { width: 1, height: 1, channels: 1, data: vec![StandardNormal.sample(&mut rng)] };
                forward_diffuse(&x0, t, &e, &s).unwrap().data[0]
            })
            .collect();
        let n = draws as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (want_mean, want_var) = (s.alpha_bar(t).sqrt() * 0.7, 1.0 - s.alpha_bar(t));
        assert!((mean - want_mean).abs() < 3.0 * (want_var / n).sqrt());
        assert!((var - want_var).abs() < 3.0 * want_var * (2.0 / (n - 1.0)).sqrt());
    }

    #[test]
    fn coefficients_normalized() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        for t in 1..=1000 {
            let (a, b) = s.coefficients(t);
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
        }
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    proptest! {
        #[test]
        fn product_matches_oracle(steps in 1usize..400, b0 in 1e-5f64..0.05, span in 0.0f64..0.3) {
            let b1 = (b0 + span).min(0.9);
            let s = make_schedule(steps, b0, b1).unwrap();
            let o = product_oracle(steps, b0, b1);
            prop_assert!((s.alpha_bar(steps) - o).abs() <= 1e-12 * o);
            for t in 2..=steps {
                prop_assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
            }
        }

        #[test]
        fn forward_is_linear(x in proptest::collection::vec(-1.0f64..1.0, 8), y in proptest::collection::vec(-1.0f64..1.0, 8),
                             e in proptest::collection::vec(-3.0f64..3.0, 8), f in proptest::collection::vec(-3.0f64..3.0, 8), t in 1usize..50) {
            let s = make_schedule(50, 1e-3, 0.05).unwrap();
            let p = |d: &Vec<f64>| FloatPlanes { width: 4, height: 2, channels: 1, data: d.clone() };
            let sum = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(u, v)| u + v).collect::<Vec<_>>();
            let lhs = forward_diffuse(&p(&sum(&x, &y)), t, &p(&sum(&e, &f)), &s).unwrap();
            let r1 = forward_diffuse(&p(&x), t, &p(&e), &s).unwrap();
            let r2 = forward_diffuse(&p(&y), t, &p(&f), &s).unwrap();
            for i in 0..8 {
                prop_assert!((lhs.data[i] - (r1.data[i] + r2.data[i])).abs() <= 1e-15 * 8.0);
            }
        }
    }
}
