//! DDPM noise schedule, forward noising of embeddings, classifier-free
//! guidance, and the strided x0-prediction ancestral sampler.
//!
//! The network regresses the clean embedding directly, so the sampler is
//! written for x0-prediction: the DDPM posterior mean is computed from the
//! guided x0 estimate at every strided step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, SpaceTag};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// DDPM forward/reverse coefficients over `T` discrete timesteps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_T: usize = 1000;

impl NoiseSchedule {
    /// Linear beta schedule from 1e-4 to 0.02.
    pub fn linear(t: usize) -> Self {
        let (lo, hi) = (1e-4, 0.02);
        let betas: Vec<f64> = (0..t)
            .map(|i| {
                if t == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (t - 1) as f64
                }
            })
            .collect();
        Self::from_betas(ScheduleKind::Linear, betas)
    }

    /// Cosine schedule (squared-cosine alpha_bar with offset 0.008).
    pub fn cosine(t: usize) -> Self {
        let s = 0.008;
        let f = |x: f64| ((x / t as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let mut betas = Vec::with_capacity(t);
        let mut prev = 1.0;
        for i in 0..t {
            let ab = f((i + 1) as f64) / f0;
            let beta = (1.0 - ab / prev).clamp(1e-8, 0.999);
            betas.push(beta);
            prev *= 1.0 - beta;
        }
        Self::from_betas(ScheduleKind::Cosine, betas)
    }

    pub fn new(kind: ScheduleKind, t: usize) -> Self {
        match kind {
            ScheduleKind::Linear => Self::linear(t),
            ScheduleKind::Cosine => Self::cosine(t),
        }
    }

    fn from_betas(kind: ScheduleKind, betas: Vec<f64>) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &b in &betas {
            debug_assert!(b > 0.0 && b < 1.0);
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        NoiseSchedule { kind, betas, alpha_bars }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::TimestepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }

    /// sqrt(alpha_bar[t])*e0 + sqrt(1-alpha_bar[t])*eps. The caller supplies
    /// the noise explicitly and thereby controls randomness.
    pub fn forward_noise(&self, e0: &Embedding, t: usize, eps: &Embedding) -> Result<Embedding> {
        if e0.dim() != eps.dim() {
            return Err(Error::DimMismatch { expected: e0.dim(), got: eps.dim() });
        }
        let values = self.forward_noise_f64(&e0.to_f64(), t, &eps.to_f64())?;
        Embedding::from_f64(&values, e0.space_tag())
    }

    /// Full-precision forward noising, used by the training loop and the
    /// inversion check. Avoids the f32 quantization of [`Embedding`].
    pub fn forward_noise_f64(&self, e0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if e0.len() != eps.len() {
            return Err(Error::DimMismatch { expected: e0.len(), got: eps.len() });
        }
        let ab = self.alpha_bar(t);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(e0.iter().zip(eps).map(|(&x, &n)| sa * x + sn * n).collect())
    }

    /// Evenly spaced descending timesteps including T-1 and ~0.
    pub fn strided_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        if steps < 1 || steps > self.steps() {
            return Err(Error::BadStepCount(steps));
        }
        let t_max = self.steps() - 1;
        if steps == 1 {
            return Ok(vec![t_max]);
        }
        let mut ts: Vec<usize> = (0..steps)
            .map(|i| ((t_max as f64) * i as f64 / (steps - 1) as f64).round() as usize)
            .collect();
        ts.reverse();
        ts.dedup();
        Ok(ts)
    }
}

/// Classifier-free guidance configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Guidance scale s; s=1 disables guidance.
    pub scale: f64,
    /// Training-time probability of dropping all condition slots.
    pub drop_probability: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { scale: 4.0, drop_probability: 0.1 }
    }
}

/// x0_uncond + s*(x0_cond - x0_uncond).
pub fn cfg_combine(x0_uncond: &Embedding, x0_cond: &Embedding, s: f64) -> Result<Embedding> {
    if x0_uncond.dim() != x0_cond.dim() {
        return Err(Error::DimMismatch { expected: x0_uncond.dim(), got: x0_cond.dim() });
    }
    // s = 1 must return the conditional branch exactly, not up to
    // floating-point cancellation in u + (c - u).
    if s == 1.0 {
        return Ok(x0_cond.clone());
    }
    let values: Vec<f64> = x0_uncond
        .to_f64()
        .iter()
        .zip(x0_cond.to_f64())
        .map(|(&u, c)| u + s * (c - u))
        .collect();
    Embedding::from_f64(&values, x0_cond.space_tag())
}

/// Contract for anything that predicts the clean embedding from a noised one.
pub trait Denoiser: Sync {
    fn dim(&self) -> usize;

    /// Predicts x0 given condition slots, timestep, and the noised embedding.
    /// Unassigned slots are implicitly zero.
    fn predict_x0(
        &self,
        conditions: &[(usize, Embedding)],
        t: usize,
        noised: &Embedding,
    ) -> Result<Embedding>;
}

#[derive(Debug, Clone, Copy)]
pub struct SampleConfig {
    pub steps: usize,
    pub guidance: GuidanceConfig,
    pub seed: u64,
    /// When set, the final sample is rescaled to this norm (training-set
    /// mean norm). Default off.
    pub renorm_to: Option<f64>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            steps: 25,
            guidance: GuidanceConfig::default(),
            seed: 0,
            renorm_to: None,
        }
    }
}

/// Ancestral sampling with strided timesteps and classifier-free guidance.
///
/// Starts from standard Gaussian noise; at every strided step queries the
/// model twice (conditions present / all slots zero), combines with
/// [`cfg_combine`], then takes a DDPM posterior step from the guided x0.
/// Deterministic given the seed.
pub fn sample(
    model: &dyn Denoiser,
    schedule: &NoiseSchedule,
    conditions: &[(usize, Embedding)],
    config: &SampleConfig,
) -> Result<Embedding> {
    let ts = schedule.strided_timesteps(config.steps)?;
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    let s = config.guidance.scale;
    for (i, &t) in ts.iter().enumerate() {
        let noised = Embedding::from_f64(&x, SpaceTag::Image)?;
        let x0_cond = model.predict_x0(conditions, t, &noised)?;
        let x0_uncond = model.predict_x0(&[], t, &noised)?;
        let x0 = cfg_combine(&x0_uncond, &x0_cond, s)?;
        let x0v = x0.to_f64();

        match ts.get(i + 1) {
            Some(&t_prev) => {
                let ab_t = schedule.alpha_bar(t);
                let ab_p = schedule.alpha_bar(t_prev);
                let alpha_eff = ab_t / ab_p;
                let beta_eff = 1.0 - alpha_eff;
                let c0 = ab_p.sqrt() * beta_eff / (1.0 - ab_t);
                let ct = alpha_eff.sqrt() * (1.0 - ab_p) / (1.0 - ab_t);
                let var = beta_eff * (1.0 - ab_p) / (1.0 - ab_t);
                let sd = var.max(0.0).sqrt();
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    x[j] = c0 * x0v[j] + ct * x[j] + sd * z;
                }
            }
            None => {
                // Last strided step: the guided x0 is the sample.
                x = x0v;
            }
        }
    }

    if let Some(target_norm) = config.renorm_to {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for v in x.iter_mut() {
                *v *= target_norm / n;
            }
        }
    }
    Embedding::from_f64(&x, SpaceTag::Image)
}
