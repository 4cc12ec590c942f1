//! Henyey-Greenstein phase function.
//!
//! The density is
//!
//! ```text
//! p(cos_theta) = (1 / 4pi) * (1 - g^2) / (1 + g^2 + 2 g cos_theta)^(3/2)
//! ```
//!
//! with a **plus** sign in front of the `2 g cos_theta` term. Under this
//! convention positive `g` concentrates probability at `cos_theta = -1`. The
//! sign symmetry `eval_hg(g, mu) == eval_hg(-g, -mu)` holds exactly, so either
//! reading of the angle convention is reachable by flipping the sign of `g`.
//!
//! `cos_theta` is the dot product of the incoming and outgoing directions of
//! travel (see [`COS_CONVENTION`]).

use crate::math::{orthonormal_basis, Vec3};

/// Angle convention used by every `cos_theta` parameter in this module.
pub const COS_CONVENTION: &str = "cos_theta = dot(incoming travel dir, outgoing travel dir)";

const INV_4PI: f64 = 1.0 / (4.0 * std::f64::consts::PI);

/// Isotropic fallback threshold; below it the density is constant to within
/// double-precision rounding and the inverse CDF degenerates.
const G_EPS: f64 = 1e-6;

fn assert_g_domain(g: f64) {
    assert!(g.is_finite() && g.abs() < 1.0, "asymmetry g={g} outside (-1, 1)");
}

/// Phase density for scattering cosine `cos_theta` (per steradian).
pub fn eval_hg(g: f64, cos_theta: f64) -> f64 {
    assert_g_domain(g);
    debug_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&cos_theta));
    let denom = 1.0 + g * g + 2.0 * g * cos_theta;
    debug_assert!(denom > 0.0);
    INV_4PI * (1.0 - g * g) / (denom * denom.sqrt())
}

/// d/dg of `ln eval_hg(g, cos_theta)`; the replay adjoint distributes this at
/// every scatter event.
pub fn dlog_hg_dg(g: f64, cos_theta: f64) -> f64 {
    assert_g_domain(g);
    let denom = 1.0 + g * g + 2.0 * g * cos_theta;
    -2.0 * g / (1.0 - g * g) - 3.0 * (g + cos_theta) / denom
}

/// Scattering cosine drawn via the closed-form inverse CDF.
pub fn hg_cos_from_u(g: f64, u: f64) -> f64 {
    assert_g_domain(g);
    debug_assert!((0.0..1.0).contains(&u));
    if g.abs() < G_EPS {
        return 2.0 * u - 1.0;
    }
    let sqr = (1.0 - g * g) / (1.0 + g - 2.0 * g * u);
    ((sqr * sqr - (1.0 + g * g)) / (2.0 * g)).clamp(-1.0, 1.0)
}

/// Samples an outgoing travel direction around unit `incoming`; returns the
/// direction and its solid-angle pdf (`eval_hg` of the realized cosine).
pub fn sample_hg(g: f64, incoming: Vec3, u1: f64, u2: f64) -> (Vec3, f64) {
    assert!(
        (incoming.length_squared() - 1.0).abs() < 1e-9,
        "incoming direction must be unit length"
    );
    let cos_theta = hg_cos_from_u(g, u1);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    let (t1, t2) = orthonormal_basis(incoming);
    let dir = t1 * (sin_theta * phi.cos()) + t2 * (sin_theta * phi.sin()) + incoming * cos_theta;
    (dir, eval_hg(g, cos_theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;
    use crate::rng::Pcg32;

    // Composite Simpson quadrature of eval_hg over cos_theta; independent of
    // the sampling path.
    fn hg_integral(g: f64, lo: f64, hi: f64, panels: usize) -> f64 {
        let h = (hi - lo) / panels as f64;
        let mut sum = eval_hg(g, lo) + eval_hg(g, hi);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * eval_hg(g, lo + i as f64 * h);
        }
        sum * h / 3.0
    }

    #[test]
    fn isotropic_density_is_quarter_inv_pi() {
        let want = 0.079577471545947667;
        for &mu in &[-1.0, -0.3, 0.0, 0.9, 1.0] {
            assert!((eval_hg(0.0, mu) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_and_backward_values_match_closed_form() {
        // (1/4pi) * 0.75 / 2.25^1.5 and (1/4pi) * 0.75 / 0.25^1.5
        assert!((eval_hg(0.5, 1.0) - 0.017683882565766146).abs() < 1e-15);
        assert!((eval_hg(0.5, -1.0) - 0.47746482927568601).abs() < 1e-13);
    }

    #[test]
    fn sign_symmetry_is_exact() {
        let mut rng = Pcg32::new(5, 0);
        for _ in 0..1000 {
            let g = 1.98 * rng.uniform() - 0.99;
            let mu = 2.0 * rng.uniform() - 1.0;
            assert_eq!(eval_hg(g, mu).to_bits(), eval_hg(-g, -mu).to_bits());
        }
    }

    #[test]
    fn density_normalizes_over_the_sphere() {
        for &g in &[-0.9, -0.5, 0.0, 0.5, 0.9] {
            let total = 2.0 * std::f64::consts::PI * hg_integral(g, -1.0, 1.0, 200_000);
            assert!((total - 1.0).abs() < 1e-9, "g={g}: {total}");
        }
    }

    #[test]
    fn sampled_pdf_matches_eval_of_realized_cosine() {
        let mut rng = Pcg32::new(17, 1);
        let axis = vec3(0.3, -0.5, 0.8).normalized();
        for &g in &[-0.8, 0.0, 0.6] {
            for _ in 0..500 {
                let (dir, pdf) = sample_hg(g, axis, rng.uniform(), rng.uniform());
                assert!((dir.length() - 1.0).abs() < 1e-12);
                let mu = dir.dot(axis).clamp(-1.0, 1.0);
                assert!((pdf - eval_hg(g, mu)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_cdf_agrees_with_quadrature_cdf() {
        // For a batch of quantiles, integrate the density up to the sampled
        // cosine and recover the quantile.
        for &g in &[-0.7, 0.35, 0.9] {
            for &u in &[0.05, 0.25, 0.5, 0.75, 0.95] {
                let mu = hg_cos_from_u(g, u);
                let cdf = 2.0 * std::f64::consts::PI * hg_integral(g, -1.0, mu, 20_000);
                assert!((cdf - u).abs() < 1e-8, "g={g} u={u} cdf={cdf}");
            }
        }
    }

    #[test]
    fn isotropic_limit_of_inverse_cdf_is_continuous() {
        for &u in &[0.1, 0.5, 0.9] {
            let near = hg_cos_from_u(2e-6, u);
            let iso = hg_cos_from_u(0.0, u);
            assert!((near - iso).abs() < 1e-5);
        }
    }

    #[test]
    fn dlog_dg_matches_finite_differences() {
        for &g in &[-0.6, -0.1, 0.2, 0.75] {
            for &mu in &[-0.9, 0.0, 0.9] {
                let h = 1e-6;
                let fd = ((eval_hg(g + h, mu)).ln() - (eval_hg(g - h, mu)).ln()) / (2.0 * h);
                let an = dlog_hg_dg(g, mu);
                assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "g={g} mu={mu}");
            }
        }
    }

    #[test]
    #[should_panic(expected = "outside (-1, 1)")]
    fn singular_g_is_rejected() {
        eval_hg(1.0, 0.5);
    }
}
