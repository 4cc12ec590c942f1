//! Deterministic PCG32 streams.
//!
//! Every pixel sample draws from its own stream, keyed purely on
//! (scene seed, pass index, view index, pixel index, sample index) — never on
//! worker identity — so renders are bit-identical regardless of how tiles are
//! scheduled across threads, and a gradient replay pass reconstructs exactly
//! the paths of its primal pass by re-deriving the same streams.

const PCG_MULT: u64 = 6364136223846793005;

#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
}

impl Pcg32 {
    pub fn new(seed: u64, stream: u64) -> Pcg32 {
        let mut rng = Pcg32 {
            state: 0,
            inc: (stream << 1) | 1,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(seed);
        rng.next_u32();
        rng
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(PCG_MULT).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    /// Uniform in `[0, 1)`; never returns 1, so `ln(1 - u)` is always finite.
    pub fn uniform(&mut self) -> f64 {
        self.next_u32() as f64 * (1.0 / 4294967296.0)
    }

    /// Exponential variate with the given rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0);
        -(1.0 - self.uniform()).ln() / rate
    }
}

/// SplitMix64 finalizer; decorrelates the key components.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Identifies one render/gradient pass. Distinct passes (e.g. optimizer
/// iterations) and distinct views draw disjoint sample sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassKey {
    pub pass: u64,
    pub view: u32,
}

/// The RNG stream for one pixel sample.
pub fn sample_rng(seed: u64, key: PassKey, pixel: u64, sample: u64) -> Pcg32 {
    let a = mix64(seed ^ mix64(key.pass));
    let b = mix64(a ^ mix64(key.view as u64));
    let c = mix64(b ^ mix64(pixel));
    let d = mix64(c ^ mix64(sample));
    Pcg32::new(c ^ d, d)
}
