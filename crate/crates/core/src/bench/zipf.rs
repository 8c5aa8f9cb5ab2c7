//! Zipf key popularity: sampling and the analytic CDF.

use rand::Rng;
use rand_distr::{Distribution, Zipf};

use crate::wire::fmix64;

/// Ranks 1..=n with probability proportional to `1 / rank^theta`.
#[derive(Clone, Debug)]
pub struct ZipfSampler {
    n: u64,
    dist: Option<Zipf<f64>>,
}

impl ZipfSampler {
    pub fn new(n: u64, theta: f64) -> Self {
        assert!(n >= 1, "key space must be non-empty");
        assert!(theta >= 0.0, "theta must be non-negative");
        let dist = (theta > 0.0).then(|| Zipf::new(n as f64, theta).expect("valid zipf parameters"));
        ZipfSampler { n, dist }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.dist {
            Some(z) => (z.sample(rng) as u64).clamp(1, self.n),
            None => rng.random_range(1..=self.n),
        }
    }
}

/// Key bytes for a rank. Scrambled so popular keys spread over the table.
pub fn key_for_rank(rank: u64) -> Vec<u8> {
    fmix64(rank).to_be_bytes().to_vec()
}

/// Generalized harmonic number `sum_{i=1}^{k} i^-theta`.
///
/// The first terms are summed directly; the rest use Euler-Maclaurin with
/// three correction terms, which is exact to ~1e-12 relative here.
pub fn harmonic(k: u64, theta: f64) -> f64 {
    const HEAD: u64 = 10_000;
    let f = |x: f64| x.powf(-theta);
    let head_end = k.min(HEAD);
    // sum small terms last for accuracy
    let mut s: f64 = (1..=head_end).rev().map(|i| f(i as f64)).sum();
    if k > HEAD {
        let (a, b) = (HEAD as f64, k as f64);
        let integral = if (theta - 1.0).abs() < 1e-12 {
            (b / a).ln()
        } else {
            (b.powf(1.0 - theta) - a.powf(1.0 - theta)) / (1.0 - theta)
        };
        let d1 = |x: f64| -theta * x.powf(-theta - 1.0);
        let d3 = |x: f64| -theta * (theta + 1.0) * (theta + 2.0) * x.powf(-theta - 3.0);
        // sum over (a, b] of f
        s += integral + (f(b) - f(a)) / 2.0 + (d1(b) - d1(a)) / 12.0 - (d3(b) - d3(a)) / 720.0;
    }
    s
}

/// Probability that a sample falls in ranks 1..=k.
pub fn cdf(n: u64, theta: f64, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k >= n {
        return 1.0;
    }
    if theta == 0.0 {
        return k as f64 / n as f64;
    }
    harmonic(k, theta) / harmonic(n, theta)
}

/// Share of samples that hit the hottest `fraction` of the key space.
pub fn hot_mass(n: u64, theta: f64, fraction: f64) -> f64 {
    let k = ((n as f64 * fraction).round() as u64).max(1);
    cdf(n, theta, k)
}

/// Total-variation distance between the empirical rank histogram of
/// `samples` and the analytic distribution.
pub fn tv_distance(n: u64, theta: f64, samples: &[u64]) -> f64 {
    let mut counts = vec![0u64; n as usize + 1];
    for &s in samples {
        counts[s as usize] += 1;
    }
    let total = samples.len() as f64;
    let mut prev = 0.0;
    let mut tv = 0.0;
    for (r, &c) in counts.iter().enumerate().skip(1) {
        let c_r = cdf(n, theta, r as u64);
        tv += (c as f64 / total - (c_r - prev)).abs();
        prev = c_r;
    }
    tv / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn harmonic_tail_matches_direct_sum() {
        for theta in [0.5, 0.99, 1.0, 1.2] {
            let direct: f64 = (1..=200_000u64).rev().map(|i| (i as f64).powf(-theta)).sum();
            let h = harmonic(200_000, theta);
            assert!((h - direct).abs() / direct < 1e-10, "theta {theta}: {h} vs {direct}");
        }
    }

    #[test]
    fn uniform_when_theta_is_zero() {
        let z = ZipfSampler::new(100, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0u32; 101];
        for _ in 0..200_000 {
            counts[z.sample(&mut rng) as usize] += 1;
        }
        for c in &counts[1..] {
            assert!((*c as f64 / 2000.0 - 1.0).abs() < 0.1);
        }
        assert_eq!(cdf(100, 0.0, 25), 0.25);
    }

    #[test]
    fn samples_stay_in_range() {
        let z = ZipfSampler::new(10, 1.2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..10_000).map(|_| z.sample(&mut rng)).all(|r| (1..=10).contains(&r)));
    }
}
