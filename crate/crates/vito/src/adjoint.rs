//! Gradients of the image loss with respect to the per-voxel medium
//! parameters and the light radiance.
//!
//! The stochastic estimator is a two-pass replay: pass 1 renders the image
//! under a fixed RNG key and turns it into per-pixel loss residuals; pass 2
//! re-traces the identical paths, recording every differentiable throughput
//! factor, and on each light hit distributes `residual * d(path)/d(param)`
//! onto the trilinear stencils it recorded. Because the tracker's decisions
//! come from the frozen tracking copy, the factors are smooth in the live
//! parameters and the result is the exact derivative of the fixed-seed loss
//! (which is why it can be checked against common-random-number finite
//! differences rather than only in expectation).
//!
//! Loss convention: mean squared error over pixels and channels on the
//! 0..255 sRGB-encoded scale, with the encoding left unclamped above 1 so
//! that an over-bright render still propagates a light gradient.

use crate::color::{srgb_encode, srgb_encode_deriv, Rgb};
use crate::rng::PassKey;
use crate::sensor::Camera;
use crate::transport::{
    absorption_depth, render_volpath, tile_ranges, trace_pixel_samples, Image, PathVisitor,
    Scene, TraceCtx, TransportError,
};
use crate::volume::TriStencil;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AdjointError {
    #[error("reference image is {rw}x{rh} but the camera renders {cw}x{ch}")]
    DimensionMismatch { rw: u32, rh: u32, cw: u32, ch: u32 },
    #[error("replay divergence at pixel ({x}, {y}): pass 2 did not reproduce pass 1")]
    ReplayDivergence { x: u32, y: u32 },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Dense gradient accumulator matching a `MediumGrid`'s layout (channel-major
/// for the RGB fields), plus the light gradient. `touched` marks exactly the
/// voxels holding a nonzero entry in any field.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_sigma_t: Vec<f64>,
    pub d_albedo: Vec<f64>,
    pub d_g: Vec<f64>,
    pub d_light: Rgb,
    pub touched: Vec<bool>,
}

impl GradientSet {
    pub fn new(voxel_count: usize) -> GradientSet {
        GradientSet {
            d_sigma_t: vec![0.0; 3 * voxel_count],
            d_albedo: vec![0.0; 3 * voxel_count],
            d_g: vec![0.0; voxel_count],
            d_light: Rgb::BLACK,
            touched: vec![false; voxel_count],
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.d_g.len()
    }

    pub fn merge(&mut self, other: &GradientSet) {
        assert_eq!(self.voxel_count(), other.voxel_count());
        for (a, b) in self.d_sigma_t.iter_mut().zip(&other.d_sigma_t) {
            *a += b;
        }
        for (a, b) in self.d_albedo.iter_mut().zip(&other.d_albedo) {
            *a += b;
        }
        for (a, b) in self.d_g.iter_mut().zip(&other.d_g) {
            *a += b;
        }
        self.d_light = self.d_light + other.d_light;
        for (a, b) in self.touched.iter_mut().zip(&other.touched) {
            *a = *a || *b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.d_sigma_t {
            *v *= k;
        }
        for v in &mut self.d_albedo {
            *v *= k;
        }
        for v in &mut self.d_g {
            *v *= k;
        }
        self.d_light = self.d_light * k;
    }

    pub fn is_finite(&self) -> bool {
        self.d_sigma_t.iter().all(|v| v.is_finite())
            && self.d_albedo.iter().all(|v| v.is_finite())
            && self.d_g.iter().all(|v| v.is_finite())
            && self.d_light.is_finite()
    }

    /// Rebuild `touched` as exactly the support of the nonzero entries.
    pub fn recompute_touched(&mut self) {
        let n = self.voxel_count();
        for v in 0..n {
            let hit = (0..3).any(|c| {
                self.d_sigma_t[c * n + v] != 0.0 || self.d_albedo[c * n + v] != 0.0
            }) || self.d_g[v] != 0.0;
            self.touched[v] = hit;
        }
    }

    pub fn touched_count(&self) -> usize {
        self.touched.iter().filter(|t| **t).count()
    }
}

/// 255-scale sRGB encoding used by the optimization loss. Unclamped: the
/// power branch extends above 1.0 so over-bright pixels keep a derivative.
fn loss_encode(x: f64) -> f64 {
    255.0 * srgb_encode(x)
}

fn loss_encode_deriv(x: f64) -> f64 {
    255.0 * srgb_encode_deriv(x)
}

/// MSE between a linear rendering and a linear reference on the encoded
/// 0..255 scale — the quantity the optimizer descends and logs.
pub fn image_loss(rendered: &Image, reference: &Image) -> Result<f64, AdjointError> {
    check_dims(rendered, reference)?;
    let mut acc = 0.0;
    for (a, b) in rendered.pixels.iter().zip(&reference.pixels) {
        for c in 0..3 {
            let d = loss_encode(a.channel(c)) - loss_encode(b.channel(c));
            acc += d * d;
        }
    }
    Ok(acc / (3.0 * rendered.pixels.len() as f64))
}

/// The fixed-seed loss as a plain function of the scene — what the finite-
/// difference oracles probe.
pub fn render_loss(
    scene: &Scene,
    camera: &Camera,
    reference: &Image,
    spp: u32,
    key: PassKey,
) -> Result<f64, AdjointError> {
    let rendered = render_volpath(scene, camera, spp, key)?;
    image_loss(&rendered, reference)
}

fn check_dims(rendered: &Image, reference: &Image) -> Result<(), AdjointError> {
    if rendered.width != reference.width || rendered.height != reference.height {
        return Err(AdjointError::DimensionMismatch {
            rw: reference.width,
            rh: reference.height,
            cw: rendered.width,
            ch: rendered.height,
        });
    }
    Ok(())
}

/// d loss / d pixel for every pixel of a pass-1 rendering.
fn loss_residuals(rendered: &Image, reference: &Image) -> Vec<Rgb> {
    let norm = 3.0 * rendered.pixels.len() as f64;
    rendered
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(a, b)| {
            let mut r = Rgb::BLACK;
            for c in 0..3 {
                let d = loss_encode(a.channel(c)) - loss_encode(b.channel(c));
                r.set_channel(c, 2.0 * d * loss_encode_deriv(a.channel(c)) / norm);
            }
            r
        })
        .collect()
}

enum RecEvent {
    Sigma {
        st: TriStencil,
        w: [f64; 3],
        dw: [f64; 3],
    },
    Albedo {
        st: TriStencil,
        w: [f64; 3],
        dw: [f64; 3],
    },
    Phase {
        st: TriStencil,
        w: f64,
        dw: f64,
    },
}

impl RecEvent {
    fn weights(&self) -> [f64; 3] {
        match self {
            RecEvent::Sigma { w, .. } | RecEvent::Albedo { w, .. } => *w,
            RecEvent::Phase { w, .. } => [*w; 3],
        }
    }
}

/// Replay visitor: buffers one path's differentiable factors and flushes
/// them when the path reaches the light. Paths that die dark are discarded —
/// their contribution is identically zero whatever the parameters.
struct Recorder {
    grads: GradientSet,
    events: Vec<RecEvent>,
    fixed: Rgb,
    /// d loss / d pixel, divided by spp (each sample carries 1/spp of the
    /// pixel mean).
    residual: Rgb,
    prefix: Vec<[f64; 3]>,
    suffix: Vec<[f64; 3]>,
}

impl Recorder {
    fn new(voxel_count: usize) -> Recorder {
        Recorder {
            grads: GradientSet::new(voxel_count),
            events: Vec::new(),
            fixed: Rgb::WHITE,
            residual: Rgb::BLACK,
            prefix: Vec::new(),
            suffix: Vec::new(),
        }
    }

    fn reset_path(&mut self) {
        self.events.clear();
        self.fixed = Rgb::WHITE;
    }

    /// Distribute `residual * d(contribution)/d(param)` over the recorded
    /// stencils. The product of the other events' weights is assembled from
    /// prefix/suffix arrays, never by dividing the total — a single zero
    /// factor therefore zeroes exactly the terms it should and no others.
    fn flush(&mut self, rr_scale: f64, radiance: Rgb) {
        let m = self.events.len();
        if m == 0 {
            return;
        }
        // factor_c = residual_c * rr * L_c * fixed_c, shared by every event.
        let mut base = [0.0; 3];
        let mut any = false;
        for c in 0..3 {
            base[c] =
                self.residual.channel(c) * rr_scale * radiance.channel(c) * self.fixed.channel(c);
            any |= base[c] != 0.0;
        }
        if !any {
            return;
        }
        self.prefix.clear();
        self.suffix.clear();
        self.prefix.resize(m, [1.0; 3]);
        self.suffix.resize(m, [1.0; 3]);
        for i in 1..m {
            let w = self.events[i - 1].weights();
            for c in 0..3 {
                self.prefix[i][c] = self.prefix[i - 1][c] * w[c];
            }
        }
        for i in (0..m - 1).rev() {
            let w = self.events[i + 1].weights();
            for c in 0..3 {
                self.suffix[i][c] = self.suffix[i + 1][c] * w[c];
            }
        }
        let n = self.grads.voxel_count();
        for (i, event) in self.events.iter().enumerate() {
            let mut term = [0.0; 3];
            for c in 0..3 {
                term[c] = base[c] * self.prefix[i][c] * self.suffix[i][c];
            }
            match event {
                RecEvent::Sigma { st, dw, .. } => {
                    for &(v, tw) in &st.taps {
                        for c in 0..3 {
                            self.grads.d_sigma_t[c * n + v as usize] += term[c] * dw[c] * tw;
                        }
                    }
                }
                RecEvent::Albedo { st, dw, .. } => {
                    for &(v, tw) in &st.taps {
                        for c in 0..3 {
                            self.grads.d_albedo[c * n + v as usize] += term[c] * dw[c] * tw;
                        }
                    }
                }
                RecEvent::Phase { st, dw, .. } => {
                    let s = (term[0] + term[1] + term[2]) * dw;
                    for &(v, tw) in &st.taps {
                        self.grads.d_g[v as usize] += s * tw;
                    }
                }
            }
        }
    }
}

impl PathVisitor for Recorder {
    const ACTIVE: bool = true;

    fn sigma_event(&mut self, st: &TriStencil, w: [f64; 3], dw_dsigma: [f64; 3]) {
        self.events.push(RecEvent::Sigma {
            st: *st,
            w,
            dw: dw_dsigma,
        });
    }

    fn albedo_event(&mut self, st: &TriStencil, w: [f64; 3], dw_dalbedo: [f64; 3]) {
        self.events.push(RecEvent::Albedo {
            st: *st,
            w,
            dw: dw_dalbedo,
        });
    }

    fn phase_event(&mut self, st: &TriStencil, w: f64, dw_dg: f64) {
        self.events.push(RecEvent::Phase { st: *st, w, dw: dw_dg });
    }

    fn fixed_event(&mut self, w: Rgb) {
        self.fixed = self.fixed * w;
    }

    fn light_hit(&mut self, beta: Rgb, rr_scale: f64, radiance: Rgb) {
        // d contribution_c / d L_c = rr * beta_c (beta already includes the
        // fixed factors).
        self.grads.d_light = self.grads.d_light + self.residual * beta * rr_scale;
        self.flush(rr_scale, radiance);
        self.reset_path();
    }

    fn path_end(&mut self) {
        self.reset_path();
    }
}

/// Two-pass replay gradient of the fixed-seed image loss. Returns the loss
/// together with gradients for sigma_t, albedo, g, and the light radiance.
pub fn grad_volpath(
    scene: &Scene,
    camera: &Camera,
    reference: &Image,
    spp: u32,
    key: PassKey,
) -> Result<(f64, GradientSet), AdjointError> {
    let rendered = render_volpath(scene, camera, spp, key)?;
    check_dims(&rendered, reference)?;
    let loss = image_loss(&rendered, reference)?;
    let residuals = loss_residuals(&rendered, reference);
    let ctx = TraceCtx::new(scene, camera);
    let n = scene.medium.voxel_count();
    let tiles = tile_ranges(camera.width, camera.height);
    let partials: Result<Vec<GradientSet>, AdjointError> = tiles
        .par_iter()
        .map(|&(x0, y0, x1, y1)| {
            let mut rec = Recorder::new(n);
            for y in y0..y1 {
                for x in x0..x1 {
                    let idx = rendered.pixel_index(x, y);
                    rec.residual = residuals[idx] / spp as f64;
                    let mean = trace_pixel_samples(&ctx, camera, key, x, y, spp, &mut rec);
                    if mean != rendered.pixels[idx] {
                        return Err(AdjointError::ReplayDivergence { x, y });
                    }
                }
            }
            Ok(rec.grads)
        })
        .collect();
    let mut total = GradientSet::new(n);
    for part in partials? {
        total.merge(&part);
    }
    total.recompute_touched();
    Ok((loss, total))
}

/// Exact (up to shared quadrature) gradient of the deterministic
/// absorption-only model `I = L * exp(-tau)`. The caller supplies
/// `residual = d loss / d I` per pixel; sigma_t receives
/// `-residual * I * (step length x stencil weight)` along each ray, the
/// light receives `residual * exp(-tau)`. Albedo and g do not enter the
/// model, so their gradients are zero.
pub fn grad_absorption_only(
    scene: &Scene,
    camera: &Camera,
    residual: &Image,
) -> Result<GradientSet, AdjointError> {
    scene.validate().map_err(AdjointError::from)?;
    if camera.width != residual.width || camera.height != residual.height {
        return Err(AdjointError::DimensionMismatch {
            rw: residual.width,
            rh: residual.height,
            cw: camera.width,
            ch: camera.height,
        });
    }
    let ctx = TraceCtx::new(scene, camera);
    let n = scene.medium.voxel_count();
    let partials: Vec<GradientSet> = (0..camera.height)
        .into_par_iter()
        .map(|y| {
            let mut grads = GradientSet::new(n);
            let mut taps: Vec<(TriStencil, f64)> = Vec::new();
            for x in 0..camera.width {
                let r = residual.pixel(x, y);
                let ray = camera
                    .generate_ray(x as f64, y as f64)
                    .expect("pixel centers are inside the window");
                let (t_light, radiance) = match ctx.light.light_hit(&ray) {
                    Some(hit) => hit,
                    None => continue,
                };
                taps.clear();
                let depth = match ctx
                    .scene
                    .boundary
                    .ray_range(ray.origin, ray.dir, 0.0, t_light)
                {
                    Some((t0, t1)) => absorption_depth(&ctx, &ray, t0, t1, Some(&mut taps)),
                    None => Rgb::BLACK,
                };
                let transmittance = depth.map(|d| (-d).exp());
                let intensity = radiance * transmittance;
                grads.d_light = grads.d_light + r * transmittance;
                let scale = r * intensity * -1.0;
                for (st, dt) in &taps {
                    for &(v, tw) in &st.taps {
                        for c in 0..3 {
                            grads.d_sigma_t[c * n + v as usize] +=
                                scale.channel(c) * dt * tw;
                        }
                    }
                }
            }
            grads
        })
        .collect();
    let mut total = GradientSet::new(n);
    for part in &partials {
        total.merge(part);
    }
    total.recompute_touched();
    Ok(total)
}
