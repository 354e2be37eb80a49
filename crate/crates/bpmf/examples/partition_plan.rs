//! Locality reordering and node partitioning on a planted block structure.
//!
//! A block-diagonal rating matrix is shuffled, then recovered: after the
//! reorder, aligned contiguous node ranges exchange nothing at all, while
//! identity-order partitioning of the shuffled matrix ships most items.
//!
//!     cargo run --example partition_plan

use bpmf::partition::{
    build_comm_plan, build_plan, locality_score, partition_items, write_plan,
};
use bpmf::ratings::SparseRatings;
use bpmf::schedule::{estimate_cost, CostModel};
use bpmf::{CounterRng, Stream};
use rand::seq::SliceRandom;

fn main() {
    // four disconnected user/movie communities
    let mut triples = Vec::new();
    for block in 0..4u32 {
        for u in 0..12 {
            for m in 0..9 {
                if (u + m) % 3 != 0 {
                    triples.push((block * 12 + u, block * 9 + m, 1.0 + ((u * m) % 5) as f64));
                }
            }
        }
    }
    let blocked = SparseRatings::from_triples(48, 36, triples).unwrap();

    let mut rng = CounterRng::new(5, 0, Stream::Synthetic, 0);
    let mut row_shuffle: Vec<u32> = (0..48).collect();
    row_shuffle.shuffle(&mut rng);
    let mut col_shuffle: Vec<u32> = (0..36).collect();
    col_shuffle.shuffle(&mut rng);
    let shuffled = blocked.permute(&row_shuffle, &col_shuffle);

    println!("locality score (mean gap between neighboring nonzeros):");
    println!("  original block-diagonal: {:.2}", locality_score(&blocked));
    println!("  shuffled:                {:.2}", locality_score(&shuffled));

    let cost = CostModel::default();

    // identity-order baseline: balanced contiguous cuts of the shuffled matrix
    let user_costs: Vec<f64> =
        (0..48).map(|u| estimate_cost(shuffled.user_degree(u), &cost)).collect();
    let movie_costs: Vec<f64> =
        (0..36).map(|m| estimate_cost(shuffled.movie_degree(m), &cost)).collect();
    let ranges_u = partition_items(&user_costs, 4).unwrap();
    let ranges_m = partition_items(&movie_costs, 4).unwrap();
    let baseline = build_comm_plan(&shuffled, &ranges_u, &ranges_m);

    // full plan: reorder for locality, then balance block-aligned ranges
    let (plan, permuted) = build_plan(&shuffled, &cost, 4).unwrap();
    println!("  after reorder:           {:.2}", locality_score(&permuted));

    println!("\nitems shipped per iteration (user + movie sides):");
    println!(
        "  identity-order partition: {}",
        baseline.volume_users + baseline.volume_movies
    );
    println!(
        "  reordered partition:      {}",
        plan.comm.volume_users + plan.comm.volume_movies
    );
    println!("\nper-node modeled cost: {:?}", plan.predicted_node_cost);
    println!("node ranges (users):   {:?}", plan.ranges_users);

    let out = std::env::temp_dir().join("bpmf-plan.txt");
    write_plan(&plan, &out).unwrap();
    println!("\nplan exported to {} (read_plan loads it back)", out.display());
}
