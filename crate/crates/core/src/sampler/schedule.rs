//! Noise schedule, forward noising, the DDIM update and guidance.

use crate::error::{Error, Result};
use crate::numerics::Array;

/// Linear-beta schedule over `T` training steps plus the DDIM subsequence.
///
/// Tables are indexed `0..=T`; index 0 is the clean sample (`alpha_bar = 1`)
/// and `alpha_bars[t] = prod(1 - betas[1..=t])`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    pub train_steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    /// DDIM timesteps in ascending order; sampling walks them in reverse.
    pub timesteps: Vec<usize>,
    pub eta: f64,
}

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;
pub const DEFAULT_DDIM_STEPS: usize = 50;

impl Default for DiffusionSchedule {
    fn default() -> Self {
        make_diffusion_schedule(
            DEFAULT_TRAIN_STEPS,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
            DEFAULT_DDIM_STEPS,
            0.0,
        )
        .expect("default schedule is valid")
    }
}

pub fn make_diffusion_schedule(
    train_steps: usize,
    beta_start: f64,
    beta_end: f64,
    ddim_steps: usize,
    eta: f64,
) -> Result<DiffusionSchedule> {
    if train_steps == 0 {
        return Err(Error::config("train_steps", "must be at least 1"));
    }
    if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::config(
            "beta",
            format!("need 0 < beta_start < beta_end < 1, got {beta_start} and {beta_end}"),
        ));
    }
    if ddim_steps == 0 || ddim_steps > train_steps {
        return Err(Error::config(
            "steps",
            format!("DDIM steps must be in 1..={train_steps}, got {ddim_steps}"),
        ));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::config("eta", format!("must be in [0, 1], got {eta}")));
    }
    let mut betas = Vec::with_capacity(train_steps + 1);
    betas.push(0.0);
    for t in 1..=train_steps {
        let frac = if train_steps == 1 {
            0.0
        } else {
            (t - 1) as f64 / (train_steps - 1) as f64
        };
        betas.push(beta_start + (beta_end - beta_start) * frac);
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(train_steps + 1);
    let mut acc = 1.0f64;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    let stride = train_steps / ddim_steps;
    let timesteps = (0..ddim_steps).map(|i| i * stride + 1).collect();
    Ok(DiffusionSchedule {
        train_steps,
        betas,
        alphas,
        alpha_bars,
        timesteps,
        eta,
    })
}

impl DiffusionSchedule {
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or_else(|| {
            Error::Index(format!("timestep {t} outside 0..={}", self.train_steps))
        })
    }

    /// `(t, t_prev)` pairs in sampling order; the last step lands on the clean index 0.
    pub fn sampling_pairs(&self) -> Vec<(usize, usize)> {
        let desc: Vec<usize> = self.timesteps.iter().rev().copied().collect();
        desc.iter()
            .enumerate()
            .map(|(i, &t)| (t, desc.get(i + 1).copied().unwrap_or(0)))
            .collect()
    }

    pub fn steps(&self) -> usize {
        self.timesteps.len()
    }
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn q_sample(x0: &Array, t: usize, eps: &Array, schedule: &DiffusionSchedule) -> Result<Array> {
    let ab = schedule.alpha_bar(t)?;
    let a = ab.sqrt() as f32;
    let b = (1.0 - ab).sqrt() as f32;
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// One DDIM update from `t` to `t_prev`. With `eta > 0` the stochastic term
/// needs `noise` of the same shape as `x_t`.
pub fn ddim_step(
    x_t: &Array,
    eps_hat: &Array,
    t: usize,
    t_prev: usize,
    schedule: &DiffusionSchedule,
    noise: Option<&Array>,
) -> Result<Array> {
    if t_prev >= t {
        return Err(Error::Order(format!(
            "DDIM step must go backwards, got t={t} -> t_prev={t_prev}"
        )));
    }
    x_t.expect_shape(eps_hat.shape())?;
    let ab_t = schedule.alpha_bar(t)?;
    let ab_prev = schedule.alpha_bar(t_prev)?;
    let sigma = schedule.eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt();
    let sqrt_ab_t = ab_t.sqrt() as f32;
    let sqrt_one_minus_ab_t = (1.0 - ab_t).sqrt() as f32;
    let sqrt_ab_prev = ab_prev.sqrt() as f32;
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt() as f32;

    let mut out = x_t.zip_map(eps_hat, |x, e| {
        let x0 = (x - sqrt_one_minus_ab_t * e) / sqrt_ab_t;
        sqrt_ab_prev * x0 + dir * e
    })?;
    if sigma > 0.0 {
        let z = noise.ok_or_else(|| Error::Input("eta > 0 needs a noise sample".into()))?;
        z.expect_shape(x_t.shape())?;
        let s = sigma as f32;
        for (o, &zv) in out.data_mut().iter_mut().zip(z.data()) {
            *o += s * zv;
        }
    }
    Ok(out)
}

/// Classifier-free guidance: `uncond + scale * (cond - uncond)`.
pub fn cfg_combine(eps_uncond: &Array, eps_cond: &Array, scale: f32) -> Result<Array> {
    eps_uncond.zip_map(eps_cond, |u, c| u + scale * (c - u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rng_normal, Rng};

    #[test]
    fn prefix_product_base_case() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.alpha_bars[0], 1.0);
        assert_eq!(s.alpha_bars[1], 1.0 - s.betas[1]);
        assert_eq!(s.betas[1], DEFAULT_BETA_START);
        assert!((s.betas[1000] - DEFAULT_BETA_END).abs() < 1e-15);
    }

    #[test]
    fn alpha_bar_matches_direct_product() {
        let s = make_diffusion_schedule(1000, 1e-4, 2e-2, 50, 0.0).unwrap();
        for t in 1..=1000 {
            assert!(s.betas[t] > 0.0 && s.betas[t] < 1.0);
            assert!(s.alpha_bars[t] < s.alpha_bars[t - 1]);
            if t > 1 {
                assert!(s.betas[t] > s.betas[t - 1]);
            }
        }
        // independent product over the closed-form betas
        let direct: f64 = (1..=1000)
            .map(|t| 1.0 - (1e-4 + (2e-2 - 1e-4) * (t - 1) as f64 / 999.0))
            .product();
        assert!((s.alpha_bars[1000] - direct).abs() < 1e-15);
        assert!(s.alpha_bars[1000] < 0.01);
    }

    #[test]
    fn ddim_subsequence() {
        let s = make_diffusion_schedule(1000, 1e-4, 2e-2, 50, 0.0).unwrap();
        assert_eq!(s.timesteps.len(), 50);
        assert_eq!(s.timesteps[0], 1);
        assert_eq!(s.timesteps[49], 981);
        let pairs = s.sampling_pairs();
        assert_eq!(pairs[0], (981, 961));
        assert_eq!(pairs[49], (1, 0));

        let all = make_diffusion_schedule(20, 1e-4, 2e-2, 20, 0.0).unwrap();
        assert_eq!(all.timesteps, (1..=20).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_bounds() {
        assert!(make_diffusion_schedule(1000, 0.0, 2e-2, 50, 0.0).is_err());
        assert!(make_diffusion_schedule(1000, 2e-2, 1e-4, 50, 0.0).is_err());
        assert!(make_diffusion_schedule(10, 1e-4, 2e-2, 11, 0.0).is_err());
    }

    #[test]
    fn q_sample_edges() {
        let s = DiffusionSchedule::default();
        let x0 = rng_normal(&mut Rng::new(1, 0), &[4, 5]);
        let eps = rng_normal(&mut Rng::new(2, 0), &[4, 5]);
        assert!(q_sample(&x0, 0, &eps, &s).unwrap().bitwise_eq(&x0));
        let zero = Array::zeros(&[4, 5]);
        let xt = q_sample(&x0, 500, &zero, &s).unwrap();
        let a = s.alpha_bars[500].sqrt() as f32;
        assert!(xt.bitwise_eq(&x0.scale(a)));
        assert!(matches!(q_sample(&x0, 1001, &eps, &s), Err(Error::Index(_))));
    }

    #[test]
    fn ddim_recovers_x0_with_exact_noise() {
        let s = DiffusionSchedule::default();
        let x0 = rng_normal(&mut Rng::new(3, 0), &[3, 7]);
        let eps = rng_normal(&mut Rng::new(4, 0), &[3, 7]);
        let xt = q_sample(&x0, 300, &eps, &s).unwrap();
        let back = ddim_step(&xt, &eps, 300, 0, &s, None).unwrap();
        assert!(back.max_abs_diff(&x0).unwrap() < 1e-5);
    }

    #[test]
    fn ddim_step_is_deterministic_and_ordered() {
        let s = DiffusionSchedule::default();
        let x = rng_normal(&mut Rng::new(5, 0), &[8]);
        let e = rng_normal(&mut Rng::new(6, 0), &[8]);
        let a = ddim_step(&x, &e, 981, 961, &s, None).unwrap();
        let b = ddim_step(&x, &e, 981, 961, &s, None).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(matches!(
            ddim_step(&x, &e, 961, 981, &s, None),
            Err(Error::Order(_))
        ));
        assert!(ddim_step(&x, &e, 961, 961, &s, None).is_err());
    }

    #[test]
    fn ddim_with_eta_needs_noise() {
        let s = make_diffusion_schedule(1000, 1e-4, 2e-2, 50, 1.0).unwrap();
        let x = rng_normal(&mut Rng::new(5, 0), &[8]);
        let e = rng_normal(&mut Rng::new(6, 0), &[8]);
        assert!(ddim_step(&x, &e, 981, 961, &s, None).is_err());
        let z = rng_normal(&mut Rng::new(7, 0), &[8]);
        let with = ddim_step(&x, &e, 981, 961, &s, Some(&z)).unwrap();
        let s0 = DiffusionSchedule::default();
        let without = ddim_step(&x, &e, 981, 961, &s0, None).unwrap();
        assert!(with.max_abs_diff(&without).unwrap() > 0.0);
    }

    #[test]
    fn guidance_combinations() {
        let u = rng_normal(&mut Rng::new(8, 0), &[6]);
        let c = rng_normal(&mut Rng::new(9, 0), &[6]);
        assert!(cfg_combine(&u, &c, 1.0).unwrap().max_abs_diff(&c).unwrap() < 1e-6);
        assert!(cfg_combine(&u, &c, 0.0).unwrap().bitwise_eq(&u));
        let zero = Array::zeros(&[6]);
        let g = cfg_combine(&zero, &c, 15.0).unwrap();
        assert!(g.bitwise_eq(&c.scale(15.0)));
    }
}
