//! The multiview reconstruction loop: image metrics, a sparse Adam step over
//! the voxel parameters and light radiance, the learning-rate schedule, and
//! the iteration driver that ties them to the replay gradients.
//!
//! Metrics (`mse_loss`, `psnr`, `ssim`) work on the clamped 0..255 display
//! scale so their magnitudes are comparable across tools; the optimizer's
//! own loss comes from [`crate::adjoint::grad_volpath`], which uses the
//! unclamped variant of the same encoding.

use crate::adjoint::{grad_volpath, AdjointError, GradientSet};
use crate::color::{encode_255, Rgb};
use crate::rng::PassKey;
use crate::sensor::Camera;
use crate::transport::{Image, Scene};
use crate::volume::{MediumGrid, G_LIMIT};
use std::io::Write;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("images are {aw}x{ah} and {bw}x{bh}; metrics need equal dimensions")]
    DimensionMismatch { aw: u32, ah: u32, bw: u32, bh: u32 },
    #[error("psnr needs a positive mse, got {0}")]
    NonPositiveMse(f64),
    #[error("ssim needs at least an 11x11 image, got {w}x{h}")]
    TooSmallForSsim { w: u32, h: u32 },
    #[error("gradient contains a non-finite value")]
    NonFiniteGradient,
    #[error("optimizer state covers {state} voxels but the gradient covers {grads}")]
    ShapeMismatch { state: usize, grads: usize },
    #[error("learning-rate schedule is empty")]
    EmptySchedule,
    #[error("learning-rate schedule must start at iteration 0, first entry starts at {0}")]
    ScheduleStart(u32),
    #[error("schedule entry {index} does not increase the start iteration")]
    UnsortedSchedule { index: usize },
    #[error("schedule entry {index} has a non-finite or negative learning rate")]
    BadLearningRate { index: usize },
    #[error("a reconstruction needs at least one reference view")]
    NoViews,
    #[error("iterations must be at least 1")]
    ZeroIterations,
    #[error("spp must be at least 1")]
    ZeroSpp,
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: u32 },
    #[error(transparent)]
    Adjoint(#[from] AdjointError),
}

/// Mean squared error over pixels and channels on the clamped 0..255 scale.
pub fn mse_loss(a: &Image, b: &Image) -> Result<f64, OptimizeError> {
    check_dims(a, b)?;
    let mut acc = 0.0;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = encode_255(pa.channel(c)) - encode_255(pb.channel(c));
            acc += d * d;
        }
    }
    Ok(acc / (3.0 * a.pixels.len() as f64))
}

/// Peak signal-to-noise ratio in dB for an 8-bit-scale mse.
pub fn psnr(mse: f64) -> Result<f64, OptimizeError> {
    if !(mse > 0.0) {
        return Err(OptimizeError::NonPositiveMse(mse));
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Mean structural similarity on the clamped 0..255 scale: 11x11 Gaussian
/// window (sigma 1.5), standard stability constants, channel-averaged,
/// evaluated only where the window fits entirely inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, OptimizeError> {
    check_dims(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(OptimizeError::TooSmallForSsim {
            w: a.width,
            h: a.height,
        });
    }
    let mut kernel = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut ksum = 0.0;
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *k = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        ksum += *k;
    }
    for k in &mut kernel {
        *k /= ksum;
    }
    let mut total = 0.0;
    for c in 0..3 {
        let xa: Vec<f64> = a.pixels.iter().map(|p| encode_255(p.channel(c))).collect();
        let xb: Vec<f64> = b.pixels.iter().map(|p| encode_255(p.channel(c))).collect();
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=(h - SSIM_WINDOW) {
            for x0 in 0..=(w - SSIM_WINDOW) {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let wgt = kernel[dy] * kernel[dx];
                        let va = xa[(y0 + dy) * w + x0 + dx];
                        let vb = xb[(y0 + dy) * w + x0 + dx];
                        mu_a += wgt * va;
                        mu_b += wgt * vb;
                        aa += wgt * va * va;
                        bb += wgt * vb * vb;
                        ab += wgt * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
                acc += s;
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    Ok(total / 3.0)
}

fn check_dims(a: &Image, b: &Image) -> Result<(), OptimizeError> {
    if a.width != b.width || a.height != b.height {
        return Err(OptimizeError::DimensionMismatch {
            aw: a.width,
            ah: a.height,
            bw: b.width,
            bh: b.height,
        });
    }
    Ok(())
}

/// Piecewise-constant learning-rate schedule keyed by start iteration.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    entries: Vec<(u32, f64)>,
}

impl LrSchedule {
    pub fn new(entries: Vec<(u32, f64)>) -> Result<LrSchedule, OptimizeError> {
        if entries.is_empty() {
            return Err(OptimizeError::EmptySchedule);
        }
        if entries[0].0 != 0 {
            return Err(OptimizeError::ScheduleStart(entries[0].0));
        }
        for (i, pair) in entries.iter().enumerate() {
            if i > 0 && pair.0 <= entries[i - 1].0 {
                return Err(OptimizeError::UnsortedSchedule { index: i });
            }
            if !pair.1.is_finite() || pair.1 < 0.0 {
                return Err(OptimizeError::BadLearningRate { index: i });
            }
        }
        Ok(LrSchedule { entries })
    }

    /// Warmup at 1e-3, drop to 2e-4 at iteration 10, refine at 5.5e-5 from
    /// iteration 20.
    pub fn brightfield_default() -> LrSchedule {
        LrSchedule::new(vec![(0, 1e-3), (10, 2e-4), (20, 5.5e-5)]).unwrap()
    }

    pub fn lr_at(&self, iteration: u32) -> f64 {
        let mut lr = self.entries[0].1;
        for &(start, value) in &self.entries {
            if start <= iteration {
                lr = value;
            }
        }
        lr
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Uniform start: sigma_t 0, albedo 0.5, g 0.
    Cold,
    /// Keep the medium the caller provides (e.g. from inverse emittance).
    Emissive,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub iterations: u32,
    pub spp: u32,
    pub schedule: LrSchedule,
    pub optimize_light: bool,
    /// Light radiance freezes once this iteration is reached.
    pub light_stop_iteration: u32,
    pub init_mode: InitMode,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            iterations: 60,
            spp: 128,
            schedule: LrSchedule::brightfield_default(),
            optimize_light: true,
            light_stop_iteration: 8,
            init_mode: InitMode::Cold,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Short refinement presets for runs that start from an emissive-field
    /// conversion: the medium is already roughly in place, so fewer
    /// iterations at gentler rates suffice. The step-down iteration is our
    /// choice; only the rate pairs and the 15-iteration length are given.
    pub fn emissive_refine_slow() -> RunConfig {
        RunConfig {
            iterations: 15,
            schedule: LrSchedule::new(vec![(0, 75e-5), (8, 1e-5)]).unwrap(),
            init_mode: InitMode::Emissive,
            ..RunConfig::default()
        }
    }

    pub fn emissive_refine_fast() -> RunConfig {
        RunConfig {
            iterations: 15,
            schedule: LrSchedule::new(vec![(0, 1e-3), (8, 1e-4)]).unwrap(),
            init_mode: InitMode::Emissive,
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.iterations == 0 {
            return Err(OptimizeError::ZeroIterations);
        }
        if self.spp == 0 {
            return Err(OptimizeError::ZeroSpp);
        }
        Ok(())
    }
}

/// Adam moments for every optimizable parameter. A voxel's seven scalars
/// always update together (a voxel is either in a gradient's support or
/// not), so they share one step counter; the light has its own.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m_sigma_t: Vec<f64>,
    pub v_sigma_t: Vec<f64>,
    pub m_albedo: Vec<f64>,
    pub v_albedo: Vec<f64>,
    pub m_g: Vec<f64>,
    pub v_g: Vec<f64>,
    pub m_light: [f64; 3],
    pub v_light: [f64; 3],
    pub step_counts: Vec<u32>,
    pub light_steps: u32,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(voxel_count: usize) -> OptimizerState {
        OptimizerState {
            m_sigma_t: vec![0.0; 3 * voxel_count],
            v_sigma_t: vec![0.0; 3 * voxel_count],
            m_albedo: vec![0.0; 3 * voxel_count],
            v_albedo: vec![0.0; 3 * voxel_count],
            m_g: vec![0.0; voxel_count],
            v_g: vec![0.0; voxel_count],
            m_light: [0.0; 3],
            v_light: [0.0; 3],
            step_counts: vec![0; voxel_count],
            light_steps: 0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.m_g.len()
    }
}

fn adam_delta(m: &mut f64, v: &mut f64, g: f64, st: &OptimizerState, c1: f64, c2: f64) -> f64 {
    *m = st.beta1 * *m + (1.0 - st.beta1) * g;
    *v = st.beta2 * *v + (1.0 - st.beta2) * g * g;
    let mh = *m / c1;
    let vh = *v / c2;
    st.lr * mh / (vh.sqrt() + st.eps)
}

/// One sparse Adam step: only voxels in `grads.touched` advance (counter,
/// moments, parameter); everything else keeps its exact bits. Parameters are
/// clamped to their physical ranges after the step. Pass `Some(light)` to
/// also step the light radiance, `None` to leave it frozen.
pub fn sparse_adam_step(
    state: &mut OptimizerState,
    grads: &GradientSet,
    medium: &mut MediumGrid,
    light: Option<&mut Rgb>,
) -> Result<(), OptimizeError> {
    let n = medium.voxel_count();
    if grads.voxel_count() != n || state.voxel_count() != n {
        return Err(OptimizeError::ShapeMismatch {
            state: state.voxel_count(),
            grads: grads.voxel_count(),
        });
    }
    if !grads.is_finite() {
        return Err(OptimizeError::NonFiniteGradient);
    }
    for v in 0..n {
        if !grads.touched[v] {
            continue;
        }
        state.step_counts[v] += 1;
        let t = state.step_counts[v] as i32;
        let c1 = 1.0 - state.beta1.powi(t);
        let c2 = 1.0 - state.beta2.powi(t);
        let mut sigma = medium.sigma_t_voxel(v);
        let mut albedo = medium.albedo_voxel(v);
        for c in 0..3 {
            let idx = c * n + v;
            let (mut ms, mut vs) = (state.m_sigma_t[idx], state.v_sigma_t[idx]);
            let ds = adam_delta(&mut ms, &mut vs, grads.d_sigma_t[idx], state, c1, c2);
            state.m_sigma_t[idx] = ms;
            state.v_sigma_t[idx] = vs;
            sigma.set_channel(c, (sigma.channel(c) - ds).max(0.0));
            let (mut ma, mut va) = (state.m_albedo[idx], state.v_albedo[idx]);
            let da = adam_delta(&mut ma, &mut va, grads.d_albedo[idx], state, c1, c2);
            state.m_albedo[idx] = ma;
            state.v_albedo[idx] = va;
            albedo.set_channel(c, (albedo.channel(c) - da).clamp(0.0, 1.0));
        }
        medium.set_sigma_t_voxel(v, sigma);
        medium.set_albedo_voxel(v, albedo);
        let (mut mg, mut vg) = (state.m_g[v], state.v_g[v]);
        let dg = adam_delta(&mut mg, &mut vg, grads.d_g[v], state, c1, c2);
        state.m_g[v] = mg;
        state.v_g[v] = vg;
        medium.set_g_voxel(v, (medium.g_voxel(v) - dg).clamp(-G_LIMIT, G_LIMIT));
    }
    if let Some(light) = light {
        if grads.d_light != Rgb::BLACK {
            state.light_steps += 1;
            let t = state.light_steps as i32;
            let c1 = 1.0 - state.beta1.powi(t);
            let c2 = 1.0 - state.beta2.powi(t);
            for c in 0..3 {
                let (mut ml, mut vl) = (state.m_light[c], state.v_light[c]);
                let dl = adam_delta(&mut ml, &mut vl, grads.d_light.channel(c), state, c1, c2);
                state.m_light[c] = ml;
                state.v_light[c] = vl;
                light.set_channel(c, (light.channel(c) - dl).max(0.0));
            }
        }
    }
    Ok(())
}

/// One row of the reconstruction log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: u32,
    pub lr: f64,
    pub loss: f64,
    pub psnr: f64,
    pub seconds: f64,
}

pub fn write_loss_csv(logs: &[IterationLog], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "iteration,lr,loss,psnr,seconds")?;
    for l in logs {
        writeln!(
            w,
            "{},{},{},{},{}",
            l.iteration, l.lr, l.loss, l.psnr, l.seconds
        )?;
    }
    Ok(())
}

/// Reset a grid to the uniform optimization start: sigma_t 0, albedo 0.5,
/// g 0.
pub fn cold_start(medium: &mut MediumGrid) {
    for v in 0..medium.voxel_count() {
        medium.set_sigma_t_voxel(v, Rgb::BLACK);
        medium.set_albedo_voxel(v, Rgb::splat(0.5));
        medium.set_g_voxel(v, 0.0);
    }
}

/// The full multiview loop. Per iteration: refresh the tracking copy, replay
/// gradients for every view under a per-(iteration, view) RNG key, average,
/// and take one sparse Adam step; the light stops moving at
/// `light_stop_iteration`. Returns the reconstructed medium, the light
/// radiance, and the loss log. `observer`, when given, sees the log row and
/// the scene after each iteration's update.
pub fn run_reconstruction(
    mut scene: Scene,
    references: &[(Camera, Image)],
    cfg: &RunConfig,
    mut observer: Option<&mut dyn FnMut(&IterationLog, &Scene)>,
) -> Result<(MediumGrid, Rgb, Vec<IterationLog>), OptimizeError> {
    cfg.validate()?;
    if references.is_empty() {
        return Err(OptimizeError::NoViews);
    }
    scene.seed = cfg.seed;
    if cfg.init_mode == InitMode::Cold {
        cold_start(&mut scene.medium);
    }
    let n = scene.medium.voxel_count();
    let mut state = OptimizerState::new(n);
    let mut logs = Vec::with_capacity(cfg.iterations as usize);
    for iteration in 0..cfg.iterations {
        let start = Instant::now();
        state.lr = cfg.schedule.lr_at(iteration);
        scene.refresh_tracking();
        let mut grads = GradientSet::new(n);
        let mut loss = 0.0;
        for (view, (camera, reference)) in references.iter().enumerate() {
            let key = PassKey {
                pass: iteration as u64,
                view: view as u32,
            };
            let (view_loss, view_grads) =
                grad_volpath(&scene, camera, reference, cfg.spp, key)?;
            loss += view_loss;
            grads.merge(&view_grads);
        }
        let inv_views = 1.0 / references.len() as f64;
        loss *= inv_views;
        grads.scale(inv_views);
        if !loss.is_finite() {
            return Err(OptimizeError::Diverged { iteration });
        }
        let step_light = cfg.optimize_light && iteration < cfg.light_stop_iteration;
        let mut radiance = scene.light.radiance;
        sparse_adam_step(
            &mut state,
            &grads,
            &mut scene.medium,
            step_light.then_some(&mut radiance),
        )?;
        scene.light.radiance = radiance;
        logs.push(IterationLog {
            iteration,
            lr: state.lr,
            loss,
            psnr: if loss > 0.0 {
                10.0 * (255.0 * 255.0 / loss).log10()
            } else {
                f64::INFINITY
            },
            seconds: start.elapsed().as_secs_f64(),
        });
        if let Some(obs) = observer.as_mut() {
            obs(logs.last().expect("just pushed"), &scene);
        }
    }
    Ok((scene.medium, scene.light.radiance, logs))
}
