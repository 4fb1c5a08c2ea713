//! Seeded synthetic corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

/// Independent uniform coordinates in `[-1, 1)`.
pub fn uniform(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect()
}

/// SIFT-descriptor-like data: nonnegative integer coordinates in `0..=255`,
/// sparse and heavy-tailed. Points scatter around `clusters` random centers
/// along a shared low-rank factor space plus isotropic noise, so clusters
/// overlap the way real descriptor neighborhoods do. Base and query sets
/// drawn with the same `seed` share centers and factors; `stream` picks the
/// sample sequence.
pub fn sift_like(n: usize, dim: usize, clusters: usize, seed: u64, stream: u64) -> Vec<Vec<f32>> {
    const RANK: usize = 12;
    let mut crng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0 / 28.0).unwrap();
    let centers: Vec<Vec<f32>> = (0..clusters.max(1))
        .map(|_| {
            (0..dim)
                .map(|_| {
                    if crng.random_bool(0.35) {
                        0.0
                    } else {
                        exp.sample(&mut crng) as f32
                    }
                })
                .collect()
        })
        .collect();
    let factor = Normal::new(0.0f32, 10.0).unwrap();
    let w: Vec<[f32; RANK]> = (0..dim)
        .map(|_| std::array::from_fn(|_| factor.sample(&mut crng)))
        .collect();
    let unit = Normal::new(0.0f32, 1.0).unwrap();
    let noise = Normal::new(0.0f32, 6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
    );
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            let z: [f32; RANK] = std::array::from_fn(|_| unit.sample(&mut rng));
            c.iter()
                .zip(&w)
                .map(|(&x, row)| {
                    let low: f32 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
                    (x + low + noise.sample(&mut rng)).round().clamp(0.0, 255.0)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sift_like_shape_and_determinism() {
        let a = sift_like(50, 128, 10, 1, 0);
        let b = sift_like(50, 128, 10, 1, 0);
        let q = sift_like(50, 128, 10, 1, 1);
        assert_eq!(a, b);
        assert_ne!(a, q);
        for v in &a {
            assert_eq!(v.len(), 128);
            assert!(v
                .iter()
                .all(|&x| (0.0..=255.0).contains(&x) && x.fract() == 0.0));
        }
    }
}
