//! Property tests for structural invariants.

use proptest::collection::vec;
use proptest::prelude::*;

use bpmf::linalg::{cholesky, tri_solve, SolveSide, SquareMatrix};
use bpmf::partition::partition_items;
use bpmf::ratings::SparseRatings;
use bpmf::schedule::build_task_groups;

fn triple_set(max_users: usize, max_movies: usize) -> impl Strategy<Value = (usize, usize, Vec<(u32, u32, f64)>)> {
    (2..max_users, 2..max_movies).prop_flat_map(|(m, n)| {
        let cells = proptest::collection::hash_set((0..m as u32, 0..n as u32), 1..m * n)
            .prop_map(|set| set.into_iter().collect::<Vec<_>>());
        (Just(m), Just(n), cells).prop_flat_map(|(m, n, cells)| {
            let len = cells.len();
            (Just(m), Just(n), Just(cells), vec(-10.0f64..10.0, len)).prop_map(
                |(m, n, cells, values)| {
                    let triples = cells
                        .into_iter()
                        .zip(values)
                        .map(|((u, mv), r)| (u, mv, r))
                        .collect();
                    (m, n, triples)
                },
            )
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Flattening the by-user and by-movie indexes yields the same triples.
    #[test]
    fn dual_index_consistency((m, n, triples) in triple_set(24, 24)) {
        let r = SparseRatings::from_triples(m, n, triples).unwrap();
        let mut by_user: Vec<(u32, u32, u64)> =
            r.triples().map(|(u, mv, v)| (u, mv, v.to_bits())).collect();
        let mut by_movie: Vec<(u32, u32, u64)> = (0..r.num_movies())
            .flat_map(|mv| {
                r.ratings_of_movie(mv).iter().map(move |&(u, v)| (u, mv as u32, v.to_bits()))
            })
            .collect();
        by_user.sort_unstable();
        by_movie.sort_unstable();
        prop_assert_eq!(by_user, by_movie);
        // per-list indices strictly increasing
        for u in 0..r.num_users() {
            let list = r.ratings_of_user(u);
            prop_assert!(list.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    /// Save to MatrixMarket, load back, recover the exact triple set.
    #[test]
    fn matrix_market_roundtrip((m, n, triples) in triple_set(16, 16)) {
        let r = SparseRatings::from_triples(m, n, triples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.mtx");
        r.save_matrix_market(&path).unwrap();
        let back = bpmf::ratings::load_matrix_market(&path).unwrap();
        prop_assert_eq!(r, back);
    }

    /// chol(L Lᵀ) reproduces the factor, and solves invert it.
    #[test]
    fn cholesky_factor_is_self_consistent(
        entries in vec(-1.0f64..1.0, 36),
        b in vec(-5.0f64..5.0, 6),
    ) {
        let k = 6;
        let mut a = SquareMatrix::identity(k);
        for i in 0..k {
            for j in 0..k {
                let x = entries[i * k + j];
                a.set(i, j, a.get(i, j) + x);
            }
        }
        // a aᵀ + I is SPD
        let spd = {
            let mut m = a.mat_mul(&transpose(&a));
            for i in 0..k {
                m.set(i, i, m.get(i, i) + 1.0);
            }
            m
        };
        let l = cholesky(&spd).unwrap();
        let rec = l.times_transpose();
        let scale = spd.max_abs();
        for i in 0..k {
            for j in 0..k {
                prop_assert!((rec.get(i, j) - spd.get(i, j)).abs() <= 1e-10 * scale);
            }
        }
        // forward then transposed solve applies spd⁻¹
        let y = tri_solve(&l, &b, SolveSide::Lower).unwrap();
        let x = tri_solve(&l, &y, SolveSide::LowerTransposed).unwrap();
        let back = spd.mat_vec(&x);
        for (got, want) in back.iter().zip(&b) {
            prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0));
        }
    }

    /// Task groups partition the items: nothing dropped, nothing duplicated.
    #[test]
    fn task_groups_partition(costs in vec(0.01f64..10.0, 1..120), workers in 1usize..9) {
        let groups = build_task_groups(&costs, workers);
        prop_assert_eq!(groups.len(), workers);
        let mut seen: Vec<usize> = groups.iter().flatten().copied().collect();
        seen.sort_unstable();
        let expect: Vec<usize> = (0..costs.len()).collect();
        prop_assert_eq!(seen, expect);
    }

    /// Contiguous node ranges are disjoint, covering, and in order.
    #[test]
    fn partition_ranges_cover(costs in vec(0.01f64..10.0, 1..60), nodes in 1usize..5) {
        prop_assume!(nodes <= costs.len());
        let ranges = partition_items(&costs, nodes).unwrap();
        prop_assert_eq!(ranges.len(), nodes);
        prop_assert_eq!(ranges[0].start, 0);
        prop_assert_eq!(ranges.last().unwrap().end, costs.len());
        for w in ranges.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(!w[0].is_empty());
        }
    }
}

fn transpose(m: &SquareMatrix) -> SquareMatrix {
    let k = m.order();
    let mut t = SquareMatrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            t.set(j, i, m.get(i, j));
        }
    }
    t
}

/// The bundled fixture file must stay in lockstep with the generator.
#[test]
fn bundled_fixture_matches_generator() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/fixture_100x80.mtx");
    let from_file = bpmf::ratings::load_matrix_market(&path).unwrap();
    let generated = bpmf::fixture::fixture_100x80();
    assert_eq!(from_file, generated, "data/fixture_100x80.mtx drifted from the generator");
}
