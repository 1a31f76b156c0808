//! Deterministic random number generation.
//!
//! All stochastic behaviour in the crate (weight init, score noise, dropout,
//! shuffling, synthetic data) flows through [`RngState`] so that a run is a
//! pure function of its seeds. The generator is xoshiro256++ with its state
//! expanded from the 64-bit seed by splitmix64; normal variates come from the
//! Box–Muller transform with the spare variate cached. Both algorithms are
//! fixed integer/f64 recipes, so identical seeds produce bit-identical
//! streams on every platform.

/// One step of the splitmix64 sequence; also used to derive secondary seeds.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from `seed`, used to keep e.g. the
/// training-noise stream distinct from the shuffle streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut s = seed ^ stream.wrapping_mul(0xA24BAED4963EE407);
    splitmix64(&mut s)
}

/// Seeded xoshiro256++ generator with a Box–Muller gaussian cache.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    s: [u64; 4],
    gaussian_cache: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        RngState { seed, s, gaussian_cache: None }
    }

    /// The seed this state was constructed from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1): top 53 bits scaled by 2^-53.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; used where a logarithm must not see zero.
    fn next_f64_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal variate via Box–Muller; the sine-branch spare is
    /// cached so consecutive calls consume the underlying stream in pairs.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.gaussian_cache.take() {
            return z;
        }
        let u1 = self.next_f64_open_low();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gaussian_cache = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in [0, n). Uses the modulo reduction, whose bias at
    /// desk-scale n (< 2^32) is far below anything observable here.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below: empty range");
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }
}
