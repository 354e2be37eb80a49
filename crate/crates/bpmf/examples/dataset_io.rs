//! Loading and saving ratings: MatrixMarket files, delimited files with
//! external-id remapping, and deterministic train/test splits.
//!
//!     cargo run --example dataset_io

use bpmf::ratings::{
    load_matrix_market, load_ratings_csv, split_train_test, CsvSchema, SparseRatings,
};
use bpmf::{CounterRng, Stream};

fn main() {
    let dir = std::env::temp_dir().join("bpmf-dataset-io");
    std::fs::create_dir_all(&dir).unwrap();

    // a tiny matrix, saved and loaded in MatrixMarket coordinate format
    let triples = vec![
        (0u32, 0u32, 5.0),
        (0, 2, 3.5),
        (1, 1, 4.0),
        (2, 0, 1.0),
        (2, 2, 2.5),
        (3, 1, 4.5),
        (3, 2, 2.0),
        (1, 0, 3.0),
        (0, 1, 2.0),
        (2, 1, 3.0),
    ];
    let ratings = SparseRatings::from_triples(4, 3, triples).unwrap();
    let mm = dir.join("tiny.mtx");
    ratings.save_matrix_market(&mm).unwrap();
    let back = load_matrix_market(&mm).unwrap();
    assert_eq!(back, ratings);
    println!(
        "MatrixMarket round trip: {} users × {} movies, {} ratings, mean {:.3}",
        back.num_users(),
        back.num_movies(),
        back.nnz(),
        back.global_mean()
    );

    // a MovieLens-style CSV with sparse external ids
    let csv = dir.join("ratings.csv");
    std::fs::write(
        &csv,
        "userId,movieId,rating,timestamp\n\
         901,3001,4.0,0\n901,3007,2.5,0\n905,3001,5.0,0\n942,3002,3.0,0\n\
         905,3007,1.5,0\n942,3001,4.5,0\n901,3002,3.5,0\n905,3002,2.0,0\n\
         942,3007,3.5,0\n901,3009,4.0,0\n",
    )
    .unwrap();
    let (csv_ratings, maps) = load_ratings_csv(&csv, &CsvSchema::default()).unwrap();
    maps.save_sidecars(&dir.join("ids")).unwrap();
    println!(
        "CSV load: external users {:?} → internal 0..{}, movies {:?} → 0..{}",
        maps.users,
        csv_ratings.num_users(),
        maps.movies,
        csv_ratings.num_movies()
    );
    println!("id maps persisted next to {}", dir.join("ids.users.csv").display());

    // deterministic split: same seed, same split, every row/column keeps a
    // training rating where possible
    let mut rng = CounterRng::new(11, 0, Stream::SplitShuffle, 0);
    let split = split_train_test(&csv_ratings, 0.3, &mut rng).unwrap();
    println!(
        "split: {} train / {} test; user 0 keeps {} training ratings",
        split.train.nnz(),
        split.test.len(),
        split.train.user_degree(0)
    );

    // tab-separated, headerless input uses the ml-100k schema preset
    let tsv = dir.join("ratings.tsv");
    std::fs::write(&tsv, "196\t242\t3\t0\n186\t302\t3\t0\n22\t377\t1\t0\n").unwrap();
    let (tsv_ratings, _) = load_ratings_csv(&tsv, &CsvSchema::ml_100k()).unwrap();
    println!("tab-separated load: {} ratings", tsv_ratings.nnz());
}
