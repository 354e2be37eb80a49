//! Deterministic synthetic datasets for tests, examples and smoke runs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::ratings::SparseRatings;
use crate::rng::{CounterRng, Stream};
use crate::sampling::standard_normal_vec;

/// A rating matrix generated from a planted low-rank model, together with
/// the ground truth that produced it.
pub struct PlantedData {
    pub ratings: SparseRatings,
    pub rank: usize,
    pub noise_sigma: f64,
    pub user_factors: Vec<Vec<f64>>,
    pub movie_factors: Vec<Vec<f64>>,
}

impl PlantedData {
    /// Noise-free model value for a (user, movie) pair.
    pub fn clean_value(&self, user: usize, movie: usize) -> f64 {
        self.user_factors[user]
            .iter()
            .zip(&self.movie_factors[movie])
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Generate `r_um = u·v + σ·ε` on a deterministic random subset of cells.
///
/// Every user and movie receives at least one rating (one diagonal pass)
/// before the remaining cells are drawn, so train/test splitting retains
/// full coverage. Factors are scaled so model values have unit-ish scale.
pub fn planted_instance(
    users: usize,
    movies: usize,
    rank: usize,
    density: f64,
    noise_sigma: f64,
    seed: u64,
) -> PlantedData {
    assert!(users > 0 && movies > 0 && rank > 0);
    assert!((0.0..=1.0).contains(&density));
    let scale = 1.0 / (rank as f64).sqrt();
    let factor = |stream: Stream, n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut rng = CounterRng::new(seed, 0, stream, i as u64);
                standard_normal_vec(rank, &mut rng).into_iter().map(|x| x * scale).collect()
            })
            .collect()
    };
    let user_factors = factor(Stream::InitUser, users);
    let movie_factors = factor(Stream::InitMovie, movies);

    let mut rng = CounterRng::new(seed, 1, Stream::Synthetic, 0);
    let target = ((users * movies) as f64 * density).round() as usize;
    let target = target.max(users.max(movies)).min(users * movies);

    // coverage pass: one rating per user and per movie along a wrapped
    // diagonal, then a shuffled fill of the remaining cells
    let mut chosen = vec![false; users * movies];
    let mut cells: Vec<(u32, u32)> = Vec::with_capacity(target);
    for i in 0..users.max(movies) {
        let u = i % users;
        let m = i % movies;
        if !chosen[u * movies + m] {
            chosen[u * movies + m] = true;
            cells.push((u as u32, m as u32));
        }
    }
    let mut rest: Vec<usize> =
        (0..users * movies).filter(|&c| !chosen[c]).collect();
    rest.shuffle(&mut rng);
    for c in rest.into_iter().take(target.saturating_sub(cells.len())) {
        cells.push(((c / movies) as u32, (c % movies) as u32));
    }

    let triples: Vec<(u32, u32, f64)> = cells
        .into_iter()
        .map(|(u, m)| {
            let clean: f64 = user_factors[u as usize]
                .iter()
                .zip(&movie_factors[m as usize])
                .map(|(a, b)| a * b)
                .sum();
            let noise: f64 = {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                noise_sigma * z
            };
            (u, m, clean + noise)
        })
        .collect();
    let ratings = SparseRatings::from_triples(users, movies, triples).expect("planted triples");
    PlantedData { ratings, rank, noise_sigma, user_factors, movie_factors }
}

/// The bundled smoke-test fixture: 100 users × 80 movies, planted rank 2,
/// ratings mapped into the 1..5 star range.
pub fn fixture_100x80() -> SparseRatings {
    let planted = planted_instance(100, 80, 2, 0.18, 0.15, 0xf1f7);
    let triples = planted
        .ratings
        .triples()
        .map(|(u, m, r)| (u, m, (3.0 + 1.6 * r).clamp(1.0, 5.0)))
        .collect();
    SparseRatings::from_triples(100, 80, triples).expect("fixture triples")
}
