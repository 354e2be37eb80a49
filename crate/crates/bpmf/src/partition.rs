//! Locality reordering and node-level data distribution.
//!
//! Rows and columns of the rating matrix are relabeled so that connected
//! structure becomes contiguous, then each factor matrix is cut into
//! contiguous per-node ranges balancing the modeled workload, and the
//! sparsity pattern induces, for every item, the set of nodes that must
//! receive it after an update.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use crate::ratings::SparseRatings;
use crate::schedule::{estimate_cost, CostModel};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("{nodes} nodes but only {items} items to place")]
    MoreNodesThanItems { nodes: usize, items: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("plan parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Mean index distance between consecutive nonzeros, averaged over all
/// row-wise and column-wise neighbor pairs. Lower is more local.
pub fn locality_score(r: &SparseRatings) -> f64 {
    let mut total = 0u64;
    let mut pairs = 0u64;
    for u in 0..r.num_users() {
        let list = r.ratings_of_user(u);
        for w in list.windows(2) {
            total += (w[1].0 - w[0].0) as u64;
            pairs += 1;
        }
    }
    for m in 0..r.num_movies() {
        let list = r.ratings_of_movie(m);
        for w in list.windows(2) {
            total += (w[1].0 - w[0].0) as u64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total as f64 / pairs as f64
    }
}

/// Row and column permutations improving data locality.
///
/// Candidates are scored by [`locality_score`] after relabeling and the best
/// one wins, so the result never scores worse than the identity ordering.
/// Candidates: identity; degree-descending sort; connected components of the
/// bipartite nonzero structure laid out contiguously with a Cuthill-McKee
/// style breadth-first order inside each component.
pub fn reorder_for_locality(r: &SparseRatings) -> (Vec<u32>, Vec<u32>) {
    let identity: (Vec<u32>, Vec<u32>) = (
        (0..r.num_users() as u32).collect(),
        (0..r.num_movies() as u32).collect(),
    );
    let candidates = [identity.clone(), degree_sort(r), component_bfs(r)];

    let mut best = identity;
    let mut best_score = f64::INFINITY;
    for cand in candidates {
        let score = locality_score(&r.permute(&cand.0, &cand.1));
        if score < best_score {
            best_score = score;
            best = cand;
        }
    }
    best
}

fn perm_from_order(order: &[u32], n: usize) -> Vec<u32> {
    // order[new] = old  →  perm[old] = new
    debug_assert_eq!(order.len(), n);
    let mut perm = vec![0u32; n];
    for (new, &old) in order.iter().enumerate() {
        perm[old as usize] = new as u32;
    }
    perm
}

fn degree_sort(r: &SparseRatings) -> (Vec<u32>, Vec<u32>) {
    let mut users: Vec<u32> = (0..r.num_users() as u32).collect();
    users.sort_by_key(|&u| (usize::MAX - r.user_degree(u as usize), u));
    let mut movies: Vec<u32> = (0..r.num_movies() as u32).collect();
    movies.sort_by_key(|&m| (usize::MAX - r.movie_degree(m as usize), m));
    (
        perm_from_order(&users, r.num_users()),
        perm_from_order(&movies, r.num_movies()),
    )
}

/// Bipartite BFS layout: vertices are users (0..M) then movies (M..M+N).
/// Components are discovered from ascending seed index; inside a component,
/// vertices leave the queue in breadth-first order with neighbor lists
/// visited ascending (they are stored sorted), which clusters tightly
/// connected rows and columns together.
fn component_bfs(r: &SparseRatings) -> (Vec<u32>, Vec<u32>) {
    let m = r.num_users();
    let n = r.num_movies();
    let mut visited = vec![false; m + n];
    let mut user_order = Vec::with_capacity(m);
    let mut movie_order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();

    for seed in 0..m + n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            if v < m {
                user_order.push(v as u32);
                for &(movie, _) in r.ratings_of_user(v) {
                    let idx = m + movie as usize;
                    if !visited[idx] {
                        visited[idx] = true;
                        queue.push_back(idx);
                    }
                }
            } else {
                movie_order.push((v - m) as u32);
                for &(user, _) in r.ratings_of_movie(v - m) {
                    let idx = user as usize;
                    if !visited[idx] {
                        visited[idx] = true;
                        queue.push_back(idx);
                    }
                }
            }
        }
    }
    (perm_from_order(&user_order, m), perm_from_order(&movie_order, n))
}

/// Cut `item_costs` into `num_nodes` non-empty contiguous ranges minimizing
/// the maximum range cost. Exact dynamic program over split points;
/// deterministic tie-breaking (earliest split wins).
pub fn partition_items(
    item_costs: &[f64],
    num_nodes: usize,
) -> Result<Vec<Range<usize>>, PartitionError> {
    let n = item_costs.len();
    if num_nodes == 0 || num_nodes > n {
        return Err(PartitionError::MoreNodesThanItems { nodes: num_nodes, items: n });
    }
    let mut prefix = vec![0.0f64; n + 1];
    for (i, &c) in item_costs.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c;
    }
    let range_cost = |s: usize, e: usize| prefix[e] - prefix[s];

    // best[g][i]: minimal max-cost splitting the first i items into g ranges
    let mut best = vec![vec![f64::INFINITY; n + 1]; num_nodes + 1];
    let mut cut = vec![vec![0usize; n + 1]; num_nodes + 1];
    for i in 1..=n {
        best[1][i] = range_cost(0, i);
    }
    for g in 2..=num_nodes {
        for i in g..=n {
            for s in (g - 1)..i {
                let cost = best[g - 1][s].max(range_cost(s, i));
                if cost < best[g][i] {
                    best[g][i] = cost;
                    cut[g][i] = s;
                }
            }
        }
    }

    let mut bounds = vec![n];
    let mut i = n;
    for g in (2..=num_nodes).rev() {
        i = cut[g][i];
        bounds.push(i);
    }
    bounds.push(0);
    bounds.reverse();
    Ok(bounds.windows(2).map(|w| w[0]..w[1]).collect())
}

/// Per-item destination sets induced by the sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CommPlan {
    /// For each user item: nodes (other than its owner) that need it.
    pub dest_users: Vec<Vec<u16>>,
    /// For each movie item: nodes (other than its owner) that need it.
    pub dest_movies: Vec<Vec<u16>>,
    /// Total user-item sends per user phase.
    pub volume_users: usize,
    /// Total movie-item sends per movie phase.
    pub volume_movies: usize,
}

fn owner_of(ranges: &[Range<usize>], idx: usize) -> u16 {
    for (node, r) in ranges.iter().enumerate() {
        if r.contains(&idx) {
            return node as u16;
        }
    }
    panic!("index {idx} not covered by ranges {ranges:?}");
}

/// A movie is destined to every node owning at least one user that rated
/// it, except its own owner; symmetrically for users.
pub fn build_comm_plan(
    r: &SparseRatings,
    ranges_users: &[Range<usize>],
    ranges_movies: &[Range<usize>],
) -> CommPlan {
    let num_nodes = ranges_users.len();
    assert_eq!(num_nodes, ranges_movies.len());
    let user_owner: Vec<u16> = (0..r.num_users()).map(|u| owner_of(ranges_users, u)).collect();
    let movie_owner: Vec<u16> = (0..r.num_movies()).map(|m| owner_of(ranges_movies, m)).collect();

    let mut dest_movies = Vec::with_capacity(r.num_movies());
    for m in 0..r.num_movies() {
        let mut mask = vec![false; num_nodes];
        for &(u, _) in r.ratings_of_movie(m) {
            mask[user_owner[u as usize] as usize] = true;
        }
        mask[movie_owner[m] as usize] = false;
        dest_movies.push(mask_to_nodes(&mask));
    }
    let mut dest_users = Vec::with_capacity(r.num_users());
    for u in 0..r.num_users() {
        let mut mask = vec![false; num_nodes];
        for &(m, _) in r.ratings_of_user(u) {
            mask[movie_owner[m as usize] as usize] = true;
        }
        mask[user_owner[u] as usize] = false;
        dest_users.push(mask_to_nodes(&mask));
    }
    let volume_users = dest_users.iter().map(Vec::len).sum();
    let volume_movies = dest_movies.iter().map(Vec::len).sum();
    CommPlan { dest_users, dest_movies, volume_users, volume_movies }
}

fn mask_to_nodes(mask: &[bool]) -> Vec<u16> {
    mask.iter()
        .enumerate()
        .filter_map(|(n, &b)| b.then_some(n as u16))
        .collect()
}

/// Merge extra destinations (e.g. induced by held-out test pairs) into a
/// plan's sets, keeping them sorted and owner-free.
pub fn union_destinations(base: &mut Vec<Vec<u16>>, extra: &[Vec<u16>]) {
    assert_eq!(base.len(), extra.len());
    for (b, e) in base.iter_mut().zip(extra) {
        b.extend_from_slice(e);
        b.sort_unstable();
        b.dedup();
    }
}

/// Full distribution plan for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    /// Relabeling applied to the data: `row_perm[old_user] = new_user`.
    pub row_perm: Vec<u32>,
    pub col_perm: Vec<u32>,
    /// Aggregation block sizes (fixed functions of the matrix dimensions).
    pub block_size_users: usize,
    pub block_size_movies: usize,
    /// Contiguous per-node ranges in the relabeled index space.
    pub ranges_users: Vec<Range<usize>>,
    pub ranges_movies: Vec<Range<usize>>,
    /// Destination sets for the exchange (may include test-induced needs).
    pub comm: CommPlan,
    /// Modeled per-node cost (user plus movie side).
    pub predicted_node_cost: Vec<f64>,
}

/// Aggregation block grid: a pure function of the row count so summation
/// order cannot depend on worker or node topology.
pub const MAX_AGG_BLOCKS: usize = 256;

pub fn aggregation_block_size(rows: usize) -> usize {
    rows.div_ceil(MAX_AGG_BLOCKS).max(1)
}

impl PartitionPlan {
    /// Single-node plan over already-ordered data (identity permutations).
    pub fn single_node(r: &SparseRatings) -> PartitionPlan {
        let ranges_users = vec![0..r.num_users()];
        let ranges_movies = vec![0..r.num_movies()];
        let comm = build_comm_plan(r, &ranges_users, &ranges_movies);
        PartitionPlan {
            row_perm: (0..r.num_users() as u32).collect(),
            col_perm: (0..r.num_movies() as u32).collect(),
            block_size_users: aggregation_block_size(r.num_users()),
            block_size_movies: aggregation_block_size(r.num_movies()),
            ranges_users,
            ranges_movies,
            comm,
            predicted_node_cost: vec![0.0],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.ranges_users.len()
    }

    pub fn owner_of_user(&self, u: usize) -> usize {
        owner_of(&self.ranges_users, u) as usize
    }

    pub fn owner_of_movie(&self, m: usize) -> usize {
        owner_of(&self.ranges_movies, m) as usize
    }
}

/// Reorder, balance and plan communication for `num_nodes` nodes.
///
/// Node ranges are aligned to the aggregation block grid so every block has
/// a single owner; the cuts minimize the modeled max per-node cost among
/// block-aligned contiguous splits. Returns the plan together with the
/// relabeled ratings.
pub fn build_plan(
    r: &SparseRatings,
    cost: &CostModel,
    num_nodes: usize,
) -> Result<(PartitionPlan, SparseRatings), PartitionError> {
    let (row_perm, col_perm) = reorder_for_locality(r);
    let permuted = r.permute(&row_perm, &col_perm);

    let block_size_users = aggregation_block_size(permuted.num_users());
    let block_size_movies = aggregation_block_size(permuted.num_movies());

    let ranges_users = block_aligned_partition(
        permuted.num_users(),
        block_size_users,
        num_nodes,
        |u| estimate_cost(permuted.user_degree(u), cost),
    )?;
    let ranges_movies = block_aligned_partition(
        permuted.num_movies(),
        block_size_movies,
        num_nodes,
        |m| estimate_cost(permuted.movie_degree(m), cost),
    )?;

    let comm = build_comm_plan(&permuted, &ranges_users, &ranges_movies);

    let mut predicted_node_cost = vec![0.0f64; num_nodes];
    for (node, range) in ranges_users.iter().enumerate() {
        for u in range.clone() {
            predicted_node_cost[node] += estimate_cost(permuted.user_degree(u), cost);
        }
    }
    for (node, range) in ranges_movies.iter().enumerate() {
        for m in range.clone() {
            predicted_node_cost[node] += estimate_cost(permuted.movie_degree(m), cost);
        }
    }

    let plan = PartitionPlan {
        row_perm,
        col_perm,
        block_size_users,
        block_size_movies,
        ranges_users,
        ranges_movies,
        comm,
        predicted_node_cost,
    };
    Ok((plan, permuted))
}

fn block_aligned_partition(
    rows: usize,
    block_size: usize,
    num_nodes: usize,
    item_cost: impl Fn(usize) -> f64,
) -> Result<Vec<Range<usize>>, PartitionError> {
    let num_blocks = rows.div_ceil(block_size);
    if num_nodes > num_blocks {
        return Err(PartitionError::MoreNodesThanItems { nodes: num_nodes, items: num_blocks });
    }
    let block_costs: Vec<f64> = (0..num_blocks)
        .map(|b| {
            let start = b * block_size;
            let end = (start + block_size).min(rows);
            (start..end).map(&item_cost).sum()
        })
        .collect();
    let block_ranges = partition_items(&block_costs, num_nodes)?;
    Ok(block_ranges
        .into_iter()
        .map(|br| (br.start * block_size)..(br.end * block_size).min(rows))
        .collect())
}

/// Write a plan as structured text (see `read_plan` for the grammar).
pub fn write_plan(plan: &PartitionPlan, path: &Path) -> Result<(), PartitionError> {
    let io = |source| PartitionError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    let mut s = String::new();
    writeln!(s, "bpmf-plan v1").unwrap();
    writeln!(
        s,
        "dims users={} movies={} nodes={}",
        plan.row_perm.len(),
        plan.col_perm.len(),
        plan.num_nodes()
    )
    .unwrap();
    writeln!(s, "blocks users={} movies={}", plan.block_size_users, plan.block_size_movies)
        .unwrap();
    write_indices(&mut s, "row_perm", plan.row_perm.iter().copied());
    write_indices(&mut s, "col_perm", plan.col_perm.iter().copied());
    write_ranges(&mut s, "ranges_users", &plan.ranges_users);
    write_ranges(&mut s, "ranges_movies", &plan.ranges_movies);
    write!(s, "node_cost").unwrap();
    for c in &plan.predicted_node_cost {
        write!(s, " {c}").unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "volume users={} movies={}", plan.comm.volume_users, plan.comm.volume_movies)
        .unwrap();
    for (i, d) in plan.comm.dest_users.iter().enumerate() {
        if !d.is_empty() {
            write_indices(&mut s, &format!("du {i}"), d.iter().map(|&x| x as u32));
        }
    }
    for (i, d) in plan.comm.dest_movies.iter().enumerate() {
        if !d.is_empty() {
            write_indices(&mut s, &format!("dm {i}"), d.iter().map(|&x| x as u32));
        }
    }
    w.write_all(s.as_bytes()).map_err(io)
}

fn write_indices(s: &mut String, tag: &str, it: impl Iterator<Item = u32>) {
    write!(s, "{tag}").unwrap();
    for v in it {
        write!(s, " {v}").unwrap();
    }
    writeln!(s).unwrap();
}

fn write_ranges(s: &mut String, tag: &str, ranges: &[Range<usize>]) {
    write!(s, "{tag}").unwrap();
    for r in ranges {
        write!(s, " {}:{}", r.start, r.end).unwrap();
    }
    writeln!(s).unwrap();
}

/// Read a plan written by [`write_plan`].
pub fn read_plan(path: &Path) -> Result<PartitionPlan, PartitionError> {
    let io = |source| PartitionError::Io { path: path.display().to_string(), source };
    let file = File::open(path).map_err(io)?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io)?;
    let perr = |line: usize, message: &str| PartitionError::Parse {
        line,
        message: message.to_string(),
    };

    if lines.first().map(String::as_str) != Some("bpmf-plan v1") {
        return Err(perr(1, "missing plan magic"));
    }

    let mut row_perm = Vec::new();
    let mut col_perm = Vec::new();
    let mut ranges_users = Vec::new();
    let mut ranges_movies = Vec::new();
    let mut predicted_node_cost = Vec::new();
    let mut block_size_users = 1;
    let mut block_size_movies = 1;
    let mut num_users = 0usize;
    let mut num_movies = 0usize;
    let mut dest_users: Vec<Vec<u16>> = Vec::new();
    let mut dest_movies: Vec<Vec<u16>> = Vec::new();

    for (idx, line) in lines.iter().enumerate().skip(1) {
        let line_no = idx + 1;
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        match tag {
            "dims" => {
                for field in it {
                    let (k, v) = field
                        .split_once('=')
                        .ok_or_else(|| perr(line_no, "bad dims field"))?;
                    let v: usize =
                        v.parse().map_err(|_| perr(line_no, "bad dims value"))?;
                    match k {
                        "users" => num_users = v,
                        "movies" => num_movies = v,
                        "nodes" => {}
                        _ => return Err(perr(line_no, "unknown dims key")),
                    }
                }
                dest_users = vec![Vec::new(); num_users];
                dest_movies = vec![Vec::new(); num_movies];
            }
            "blocks" => {
                for field in it {
                    let (k, v) = field
                        .split_once('=')
                        .ok_or_else(|| perr(line_no, "bad blocks field"))?;
                    let v: usize =
                        v.parse().map_err(|_| perr(line_no, "bad blocks value"))?;
                    match k {
                        "users" => block_size_users = v,
                        "movies" => block_size_movies = v,
                        _ => return Err(perr(line_no, "unknown blocks key")),
                    }
                }
            }
            "row_perm" => {
                row_perm = it
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| perr(line_no, "bad row_perm"))?;
            }
            "col_perm" => {
                col_perm = it
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| perr(line_no, "bad col_perm"))?;
            }
            "ranges_users" | "ranges_movies" => {
                let mut out = Vec::new();
                for field in it {
                    let (s, e) = field
                        .split_once(':')
                        .ok_or_else(|| perr(line_no, "bad range"))?;
                    let s: usize = s.parse().map_err(|_| perr(line_no, "bad range"))?;
                    let e: usize = e.parse().map_err(|_| perr(line_no, "bad range"))?;
                    out.push(s..e);
                }
                if tag == "ranges_users" {
                    ranges_users = out;
                } else {
                    ranges_movies = out;
                }
            }
            "node_cost" => {
                predicted_node_cost = it
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| perr(line_no, "bad node_cost"))?;
            }
            "volume" => {} // recomputed below
            "du" | "dm" => {
                let i: usize = it
                    .next()
                    .ok_or_else(|| perr(line_no, "missing index"))?
                    .parse()
                    .map_err(|_| perr(line_no, "bad index"))?;
                let nodes: Vec<u16> = it
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| perr(line_no, "bad destination"))?;
                if tag == "du" {
                    dest_users[i] = nodes;
                } else {
                    dest_movies[i] = nodes;
                }
            }
            _ => return Err(perr(line_no, "unknown tag")),
        }
    }

    let volume_users = dest_users.iter().map(Vec::len).sum();
    let volume_movies = dest_movies.iter().map(Vec::len).sum();
    Ok(PartitionPlan {
        row_perm,
        col_perm,
        block_size_users,
        block_size_movies,
        ranges_users,
        ranges_movies,
        comm: CommPlan { dest_users, dest_movies, volume_users, volume_movies },
        predicted_node_cost,
    })
}
