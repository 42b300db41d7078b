use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Source of the values returned by `rand()` and `randInt(n)`.
///
/// A stubbed source returns the same constant for every draw. At 0.5 the
/// Laplace expressions built by the rewriter evaluate to exactly zero noise.
#[derive(Clone, Debug)]
pub enum RandomSource {
    Seeded(ChaCha8Rng),
    Stubbed(f64),
}

impl RandomSource {
    pub fn seeded(seed: u64) -> Self {
        RandomSource::Seeded(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Panics unless `value` lies strictly between 0 and 1.
    pub fn stubbed(value: f64) -> Self {
        assert!(value > 0.0 && value < 1.0, "stubbed draw must lie in (0, 1)");
        RandomSource::Stubbed(value)
    }

    pub fn zero_noise() -> Self {
        RandomSource::Stubbed(0.5)
    }

    /// Uniform draw from the open interval (0, 1).
    pub fn draw(&mut self) -> f64 {
        match self {
            RandomSource::Stubbed(v) => *v,
            RandomSource::Seeded(rng) => loop {
                let v: f64 = rng.random();
                if v > 0.0 {
                    return v;
                }
            },
        }
    }

    /// Uniform integer in `[0, n)`.
    pub fn draw_int(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        match self {
            RandomSource::Stubbed(v) => ((*v * n as f64).floor() as u64).min(n - 1),
            RandomSource::Seeded(rng) => rng.random_range(0..n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_is_constant() {
        let mut r = RandomSource::zero_noise();
        assert_eq!(r.draw() - 0.5, 0.0);
        assert_eq!(r.draw_int(4), 2);
    }

    #[test]
    fn seeded_is_reproducible_and_open() {
        let mut a = RandomSource::seeded(7);
        let mut b = RandomSource::seeded(7);
        for _ in 0..1000 {
            let x = a.draw();
            assert!(x > 0.0 && x < 1.0);
            assert_eq!(x, b.draw());
            assert!(a.draw_int(5) < 5);
            b.draw_int(5);
        }
    }
}
