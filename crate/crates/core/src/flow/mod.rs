//! Flow-matching between video latents and mask latents.
//!
//! Training regresses a velocity field along the straight path from the
//! (optionally augmented) video latent z0 to the mask latent z1, with extra
//! timestep mass at t = 0 where the text decides which object the flow heads
//! for. Inference integrates the field with fixed-step Euler and decodes the
//! terminal latent. Three alternative paradigms (noise start, one-step mask,
//! one-step velocity) share the machinery for ablations.

pub mod ablation;
mod train;

pub use ablation::{default_grid, run_ablation, AblationCell, AblationReport, AblationRow};
pub use train::{encode_dataset, evaluate_model, train_flow, EncodedDataset, EncodedSample, TrainLog, TrainOptions};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{binarize, Codec, DecodeStrategy};
use crate::error::{FlowError, NumericsError};
use crate::movingshapes::{MaskTensor, QuerySpec, VideoTensor};
use crate::net::VelocityNet;
use crate::rng::SeedStream;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paradigm {
    Video2MaskFlow,
    Noise2MaskFlow,
    OnestepMask,
    OnestepVelocity,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [
        Paradigm::Video2MaskFlow,
        Paradigm::Noise2MaskFlow,
        Paradigm::OnestepMask,
        Paradigm::OnestepVelocity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Video2MaskFlow => "video2mask-flow",
            Paradigm::Noise2MaskFlow => "noise2mask-flow",
            Paradigm::OnestepMask => "onestep-mask",
            Paradigm::OnestepVelocity => "onestep-velocity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Multi-step paradigms integrate an ODE; one-step paradigms collapse to
    /// a single network call and ignore p_bbs and the step count.
    pub fn is_multi_step(self) -> bool {
        matches!(self, Paradigm::Video2MaskFlow | Paradigm::Noise2MaskFlow)
    }
}

/// Paradigm selector plus all flow hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub paradigm: Paradigm,
    pub p_bbs: f64,
    pub spa: bool,
    pub dvi: bool,
    pub ode_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            paradigm: Paradigm::Video2MaskFlow,
            p_bbs: 0.5,
            spa: true,
            dvi: true,
            ode_steps: 10,
            batch_size: 8,
            epochs: 10,
            lr: 3e-4,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        if !(0.0..=1.0).contains(&self.p_bbs) {
            return Err(FlowError::Contract(format!("p_bbs {} outside [0,1]", self.p_bbs)));
        }
        if self.ode_steps == 0 || self.batch_size == 0 {
            return Err(FlowError::Contract("ode_steps and batch_size must be >= 1".into()));
        }
        if self.paradigm == Paradigm::Noise2MaskFlow && !self.dvi {
            return Err(FlowError::Contract(
                "noise2mask-flow carries the video only through DVI; enable dvi".into(),
            ));
        }
        Ok(())
    }
}

/// Training timestep: exactly 0 with probability `p_bbs`, otherwise uniform.
pub fn sample_timestep(p_bbs: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(p_bbs.clamp(0.0, 1.0)) {
        0.0
    } else {
        rng.gen_range(0.0..1.0)
    }
}

/// z_t = (1 - t) z0 + t z1 along the straight path.
pub fn interpolate_state<T: Real>(
    z0: &Tensor<T>,
    z1: &Tensor<T>,
    t: f64,
) -> Result<Tensor<T>, NumericsError> {
    let tt = crate::tensor::real::<T>(t);
    let one_minus = T::ONE - tt;
    z0.zip(z1, "interpolate_state", |a, b| one_minus * a + tt * b)
}

/// The constant target velocity u = z1 - z0 of the straight path.
pub fn target_velocity<T: Real>(z0: &Tensor<T>, z1: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    z0.zip(z1, "target_velocity", |a, b| b - a)
}

/// Channel-wise concat of two `[t, h, w, C]` latents (the DVI input).
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (da, db) = (a.dims(), b.dims());
    if da.len() != 4 || db.len() != 4 || da[..3] != db[..3] {
        return Err(NumericsError::ShapeMismatch {
            op: "concat_channels",
            lhs: da.to_vec(),
            rhs: db.to_vec(),
        });
    }
    let (ca, cb) = (da[3], db[3]);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for (ra, rb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        data.extend_from_slice(ra);
        data.extend_from_slice(rb);
    }
    Ok(Tensor::from_vec(&[da[0], da[1], da[2], ca + cb], data))
}

/// Anything that can play v(z, c, t): the trained network, a wired oracle, or
/// an analytic test field.
pub trait VelocityField<T: Real> {
    /// `state` already carries the DVI channels when enabled.
    fn velocity(&self, state: &Tensor<T>, token_ids: &[u32], t: f64) -> Result<Tensor<T>, FlowError>;
}

impl<T: Real> VelocityField<T> for VelocityNet<T> {
    fn velocity(&self, state: &Tensor<T>, token_ids: &[u32], t: f64) -> Result<Tensor<T>, FlowError> {
        VelocityNet::velocity(self, state, token_ids, t).map_err(FlowError::from)
    }
}

/// Analytic fields for tests: any `Fn(&z, t) -> v`.
impl<T: Real, F> VelocityField<T> for F
where
    F: Fn(&Tensor<T>, f64) -> Tensor<T>,
{
    fn velocity(&self, state: &Tensor<T>, _ids: &[u32], t: f64) -> Result<Tensor<T>, FlowError> {
        Ok(self(state, t))
    }
}

/// Fixed-step Euler integration of dz/dt = v from t = 0 to 1.
///
/// `dvi_cond` is concatenated onto the state at every evaluation when
/// present, so the field always sees its full conditioning input.
pub fn euler_integrate<T: Real>(
    z0: &Tensor<T>,
    dvi_cond: Option<&Tensor<T>>,
    token_ids: &[u32],
    field: &dyn VelocityField<T>,
    steps: usize,
) -> Result<Tensor<T>, FlowError> {
    if steps == 0 {
        return Err(FlowError::Contract("euler_integrate needs at least one step".into()));
    }
    let h = crate::tensor::real::<T>(1.0 / steps as f64);
    let mut z = z0.clone();
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let state = match dvi_cond {
            Some(c) => concat_channels(&z, c)?,
            None => z.clone(),
        };
        let v = field.velocity(&state, token_ids, t)?;
        if v.dims() != z.dims() {
            return Err(FlowError::Numerics(NumericsError::ShapeMismatch {
                op: "euler_integrate",
                lhs: z.dims().to_vec(),
                rhs: v.dims().to_vec(),
            }));
        }
        for (zi, &vi) in z.data_mut().iter_mut().zip(v.data()) {
            *zi += h * vi;
        }
        if !z.is_finite() {
            return Err(FlowError::NonFiniteState { step: k });
        }
    }
    Ok(z)
}

/// Standard-normal latent of the given dims, for the noise2mask paradigm.
pub fn noise_latent<T: Real>(dims: &[usize], seed: u64, key: u64) -> Tensor<T> {
    let mut rng = SeedStream::new(seed, "noise2mask-start").rng(key);
    Tensor::from_vec(dims, (0..dims.iter().product()).map(|_| crate::rng::normal(&mut rng)).collect())
}

/// Runs the paradigm's inference path from a clean normalized video latent to
/// the predicted terminal mask latent.
pub fn integrate_from<T: Real>(
    z0_clean: &Tensor<T>,
    token_ids: &[u32],
    field: &dyn VelocityField<T>,
    cfg: &FlowConfig,
    noise_key: u64,
) -> Result<Tensor<T>, FlowError> {
    let dvi_cond = cfg.dvi.then(|| z0_clean.clone());
    match cfg.paradigm {
        Paradigm::Video2MaskFlow => {
            euler_integrate(z0_clean, dvi_cond.as_ref(), token_ids, field, cfg.ode_steps)
        }
        Paradigm::Noise2MaskFlow => {
            let start = noise_latent::<T>(z0_clean.dims(), cfg.seed, noise_key);
            euler_integrate(&start, dvi_cond.as_ref(), token_ids, field, cfg.ode_steps)
        }
        Paradigm::OnestepVelocity => {
            let state = match &dvi_cond {
                Some(c) => concat_channels(z0_clean, c)?,
                None => z0_clean.clone(),
            };
            let v = field.velocity(&state, token_ids, 0.0)?;
            z0_clean.zip(&v, "onestep_velocity", |a, b| a + b).map_err(FlowError::from)
        }
        Paradigm::OnestepMask => {
            let state = match &dvi_cond {
                Some(c) => concat_channels(z0_clean, c)?,
                None => z0_clean.clone(),
            };
            field.velocity(&state, token_ids, 0.0)
        }
    }
}

/// Full inference: encode (posterior mean, no SPA), integrate, denormalize,
/// decode with the given strategy, binarize at `threshold`.
pub fn infer<T: Real>(
    video: &VideoTensor,
    query: &QuerySpec,
    field: &dyn VelocityField<T>,
    codec: &Codec<T>,
    cfg: &FlowConfig,
    strategy: DecodeStrategy,
    threshold: f64,
    noise_key: u64,
) -> Result<MaskTensor, FlowError> {
    let (mean, _) = codec.encode(&video.to_dtype::<T>())?;
    let z0 = codec.normalize(&mean)?;
    let z1_hat = integrate_from(&z0, &query.token_ids(), field, cfg, noise_key)?;
    let raw = codec.denormalize(&z1_hat)?;
    let probs = codec.decode(&raw, strategy)?;
    Ok(binarize(&probs, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestep_endpoints() {
        let stream = SeedStream::new(0, "bbs-test");
        let mut rng = stream.rng(0);
        for _ in 0..100 {
            assert_eq!(sample_timestep(1.0, &mut rng), 0.0);
        }
        let mut nonzero = 0;
        for _ in 0..100 {
            let t = sample_timestep(0.0, &mut rng);
            assert!((0.0..1.0).contains(&t));
            nonzero += (t > 0.0) as usize;
        }
        assert_eq!(nonzero, 100, "p=0 must draw uniform, never the point mass");
    }

    #[test]
    fn timestep_mixture_fraction() {
        let stream = SeedStream::new(1, "bbs-test");
        let mut rng = stream.rng(1);
        let n = 100_000;
        let zeros = (0..n).filter(|_| sample_timestep(0.5, &mut rng) == 0.0).count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "zero fraction {frac}");
    }

    #[test]
    fn interpolation_identities() {
        let z0 = Tensor::from_vec(&[4], vec![0.0f64, 1.0, -2.0, 3.0]);
        let z1 = Tensor::from_vec(&[4], vec![2.0f64, 2.0, 2.0, 2.0]);
        assert_eq!(interpolate_state(&z0, &z1, 0.0).unwrap(), z0);
        assert_eq!(interpolate_state(&z0, &z1, 1.0).unwrap(), z1);
        let mid = interpolate_state(
            &Tensor::from_vec(&[2], vec![0.0f64, 0.0]),
            &Tensor::from_vec(&[2], vec![2.0f64, 2.0]),
            0.5,
        )
        .unwrap();
        assert_eq!(mid.data(), &[1.0, 1.0]);
        let bad = Tensor::<f64>::zeros(&[3]);
        assert!(interpolate_state(&z0, &bad, 0.5).is_err());
    }

    #[test]
    fn target_velocity_algebra() {
        let z0 = Tensor::from_vec(&[3], vec![0.5f32, -1.0, 2.0]);
        let z1 = Tensor::from_vec(&[3], vec![3.5f32, 0.0, -2.0]);
        let u = target_velocity(&z0, &z1).unwrap();
        assert_eq!(u.data(), &[3.0, 1.0, -4.0]);
        assert_eq!(target_velocity(&z0, &z0).unwrap().data(), &[0.0; 3]);
        // integrates back exactly: z0 + u = z1
        let back = z0.zip(&u, "t", |a, b| a + b).unwrap();
        assert_eq!(back, z1);
    }

    #[test]
    fn path_consistency_identity() {
        // interpolate(z0,z1,t) + (1-t) (z1-z0) = z1 for random tensors
        let stream = SeedStream::new(3, "path");
        for trial in 0..10u64 {
            let mut rng = stream.rng(trial);
            let z0 = Tensor::from_vec(&[16], (0..16).map(|_| crate::rng::normal::<f64>(&mut rng)).collect());
            let z1 = Tensor::from_vec(&[16], (0..16).map(|_| crate::rng::normal::<f64>(&mut rng)).collect());
            for &t in &[0.0, 0.25, 0.5, 0.99] {
                let zt = interpolate_state(&z0, &z1, t).unwrap();
                let u = target_velocity(&z0, &z1).unwrap();
                for i in 0..16 {
                    let rebuilt = zt.data()[i] + (1.0 - t) * u.data()[i];
                    assert!((rebuilt - z1.data()[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn euler_constant_field_is_exact() {
        let z0 = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0f64, -1.0, 0.5, 2.0]);
        let u = vec![0.25f64, 0.5, -0.5, 1.0];
        let field = move |_z: &Tensor<f64>, _t: f64| Tensor::from_vec(&[1, 2, 2, 1], u.clone());
        for n in [1, 7, 10, 64] {
            let z1 = euler_integrate(&z0, None, &[], &field, n).unwrap();
            let want = [1.25, -0.5, 0.0, 3.0];
            for (a, b) in z1.data().iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn euler_decay_field_matches_closed_form() {
        // dz/dt = -z from 1: Euler gives (1 - 1/N)^N
        let z0 = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f64]);
        let field = |z: &Tensor<f64>, _t: f64| z.map(|x| -x);
        let z1 = euler_integrate(&z0, None, &[], &field, 100).unwrap();
        let want = (1.0 - 0.01f64).powi(100);
        assert!((z1.item() - want).abs() < 1e-12);
        assert!((z1.item() - 0.36603).abs() < 1e-5);
        // single step lands exactly at zero
        let one = euler_integrate(&z0, None, &[], &field, 1).unwrap();
        assert_eq!(one.item(), 0.0);
    }

    #[test]
    fn euler_order_one_convergence() {
        let z0 = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f64]);
        let field = |z: &Tensor<f64>, _t: f64| z.map(|x| -x);
        let exact = (-1.0f64).exp();
        let mut prev_err = None;
        for n in [10, 20, 40, 80] {
            let z1 = euler_integrate(&z0, None, &[], &field, n).unwrap();
            let err = (z1.item() - exact).abs();
            if let Some(p) = prev_err {
                let ratio: f64 = p / err;
                assert!((ratio - 2.0f64).abs() <= 0.2, "halving ratio {ratio} at n={n}");
            }
            prev_err = Some(err);
        }
    }

    #[test]
    fn euler_rejects_nonfinite_state() {
        let z0 = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f32]);
        let field = |z: &Tensor<f32>, _t: f64| z.map(|x| x * 1e30);
        let got = euler_integrate(&z0, None, &[], &field, 8);
        assert!(matches!(got, Err(FlowError::NonFiniteState { .. })));
    }

    #[test]
    fn noise_latent_statistics() {
        let z = noise_latent::<f64>(&[10, 10, 10, 100], 0, 7);
        let n = z.numel() as f64;
        let mean = z.data().iter().sum::<f64>() / n;
        let var = z.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
        // deterministic per (seed, key)
        assert_eq!(noise_latent::<f64>(&[4], 0, 7), noise_latent::<f64>(&[4], 0, 7));
        assert_ne!(noise_latent::<f64>(&[4], 0, 7), noise_latent::<f64>(&[4], 0, 8));
    }

    #[test]
    fn noise2mask_requires_dvi() {
        let cfg = FlowConfig {
            paradigm: Paradigm::Noise2MaskFlow,
            dvi: false,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn concat_channels_layout() {
        let a = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[1, 1, 2, 1], vec![9.0f32, 8.0]);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), &[1, 1, 2, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }
}
