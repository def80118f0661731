//! Counter-based normal streams.
//!
//! Every path owns a ChaCha stream keyed by `(seed, path)`; increments are
//! drawn in the fixed order (step, player), so a given `(seed, path, step,
//! player)` always maps to the same draw no matter how paths are scheduled
//! across threads. Re-running a path with the same key replays its Brownian
//! increments, which is how common random numbers are obtained.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct PathRng {
    inner: ChaCha8Rng,
}

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(path);
        PathRng { inner }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Fill `out` with independent `N(0, dt)` increments.
    #[inline]
    pub fn increments(&mut self, sqrt_dt: f64, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = sqrt_dt * self.normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_replay_and_differ() {
        let draw = |seed, path| {
            let mut r = PathRng::new(seed, path);
            (0..8).map(|_| r.normal()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7, 3), draw(7, 3));
        assert_ne!(draw(7, 3), draw(7, 4));
        assert_ne!(draw(7, 3), draw(8, 3));
    }

    #[test]
    fn moments() {
        let mut r = PathRng::new(1, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        assert!(m.abs() < 4.0 / (n as f64).sqrt());
        assert!((v - 1.0).abs() < 0.02);
    }
}
