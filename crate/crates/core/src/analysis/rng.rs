//! Counter-based random numbers, reproducible in any language.
//!
//! Draw `i` (zero-based) of a stream with key `s` is
//! `splitmix64(s + (i + 1)·0x9E3779B97F4A7C15)`, i.e. the SplitMix64 sequence
//! started at state `s`. Uniforms take the top 53 bits and are centred in
//! their bucket, so they lie strictly inside (0, 1). Normal variate `i` uses
//! uniform draws `2i` and `2i + 1` with the cosine branch of Box–Muller:
//! `sqrt(−2 ln u₁)·cos(2π u₂)`.
//!
//! Independent streams come from [`CounterRng::stream`], which keys a child
//! stream by `splitmix64(key ^ splitmix64(id))`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng {
            key: seed,
            counter: 0,
        }
    }

    /// Child stream, independent of the parent's counter.
    pub fn stream(&self, id: u64) -> Self {
        CounterRng::new(splitmix64(self.key ^ splitmix64(id)))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn u64_at(&self, index: u64) -> u64 {
        splitmix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)),
        )
    }

    /// Uniform in (0, 1).
    pub fn uniform_at(&self, index: u64) -> f64 {
        ((self.u64_at(index) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal.
    pub fn normal_at(&self, index: u64) -> f64 {
        let u1 = self.uniform_at(2 * index);
        let u2 = self.uniform_at(2 * index + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.u64_at(self.counter);
        self.counter += 1;
        v
    }

    pub fn next_uniform(&mut self) -> f64 {
        let v = self.uniform_at(self.counter);
        self.counter += 1;
        v
    }

    /// Consumes two uniform draws.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
