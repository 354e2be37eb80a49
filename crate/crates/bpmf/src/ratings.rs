//! Sparse rating storage with dual (by-user and by-movie) indexing.
//!
//! Both update loops of the sampler walk the same data from opposite sides,
//! so the matrix is kept compressed in both directions. Per-list indices are
//! strictly increasing; that ordering fixes every reduction order downstream.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::CounterRng;

#[derive(Debug, Error)]
pub enum RatingsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate entry for user {user}, movie {movie}")]
    DuplicateEntry { user: u32, movie: u32 },
    #[error("entry at line {line} outside header bounds ({users} users, {movies} movies)")]
    IndexOutOfHeaderBounds { line: usize, users: usize, movies: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("matrix too sparse: {0}")]
    TooSparse(String),
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
}

/// The observed rating matrix in dual compressed form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    num_users: usize,
    num_movies: usize,
    global_mean: f64,
    user_ptr: Vec<usize>,
    user_entries: Vec<(u32, f64)>, // (movie, rating), movie ascending per user
    movie_ptr: Vec<usize>,
    movie_entries: Vec<(u32, f64)>, // (user, rating), user ascending per movie
}

impl SparseRatings {
    /// Build both index directions from raw triples, rejecting duplicates,
    /// out-of-range indices and non-finite ratings.
    pub fn from_triples(
        num_users: usize,
        num_movies: usize,
        mut triples: Vec<(u32, u32, f64)>,
    ) -> Result<Self, RatingsError> {
        for &(u, m, r) in &triples {
            if (u as usize) >= num_users || (m as usize) >= num_movies {
                return Err(RatingsError::IndexOutOfHeaderBounds {
                    line: 0,
                    users: num_users,
                    movies: num_movies,
                });
            }
            if !r.is_finite() {
                return Err(RatingsError::Parse {
                    line: 0,
                    message: format!("non-finite rating for ({u}, {m})"),
                });
            }
        }
        triples.sort_unstable_by_key(|&(u, m, _)| (u, m));
        for w in triples.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(RatingsError::DuplicateEntry { user: w[0].0, movie: w[0].1 });
            }
        }

        let nnz = triples.len();
        let mut user_ptr = vec![0usize; num_users + 1];
        for &(u, _, _) in &triples {
            user_ptr[u as usize + 1] += 1;
        }
        for i in 0..num_users {
            user_ptr[i + 1] += user_ptr[i];
        }
        let user_entries: Vec<(u32, f64)> = triples.iter().map(|&(_, m, r)| (m, r)).collect();

        let mut movie_counts = vec![0usize; num_movies];
        for &(_, m, _) in &triples {
            movie_counts[m as usize] += 1;
        }
        let mut movie_ptr = vec![0usize; num_movies + 1];
        for i in 0..num_movies {
            movie_ptr[i + 1] = movie_ptr[i] + movie_counts[i];
        }
        let mut movie_entries = vec![(0u32, 0.0f64); nnz];
        let mut cursor = movie_ptr[..num_movies].to_vec();
        // triples are (user, movie)-sorted, so each movie list fills in
        // ascending user order
        for &(u, m, r) in &triples {
            let p = cursor[m as usize];
            movie_entries[p] = (u, r);
            cursor[m as usize] += 1;
        }

        let global_mean = if nnz == 0 {
            0.0
        } else {
            triples.iter().map(|&(_, _, r)| r).sum::<f64>() / nnz as f64
        };

        Ok(SparseRatings {
            num_users,
            num_movies,
            global_mean,
            user_ptr,
            user_entries,
            movie_ptr,
            movie_entries,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_movies(&self) -> usize {
        self.num_movies
    }

    pub fn nnz(&self) -> usize {
        self.user_entries.len()
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    /// (movie, rating) pairs of one user, movie index ascending.
    pub fn ratings_of_user(&self, user: usize) -> &[(u32, f64)] {
        &self.user_entries[self.user_ptr[user]..self.user_ptr[user + 1]]
    }

    /// (user, rating) pairs of one movie, user index ascending.
    pub fn ratings_of_movie(&self, movie: usize) -> &[(u32, f64)] {
        &self.movie_entries[self.movie_ptr[movie]..self.movie_ptr[movie + 1]]
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_ptr[user + 1] - self.user_ptr[user]
    }

    pub fn movie_degree(&self, movie: usize) -> usize {
        self.movie_ptr[movie + 1] - self.movie_ptr[movie]
    }

    /// All triples in (user, movie) order.
    pub fn triples(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        (0..self.num_users).flat_map(move |u| {
            self.ratings_of_user(u).iter().map(move |&(m, r)| (u as u32, m, r))
        })
    }

    /// Relabel users and movies: entry `(u, m)` moves to `(row_perm[u], col_perm[m])`.
    pub fn permute(&self, row_perm: &[u32], col_perm: &[u32]) -> SparseRatings {
        assert_eq!(row_perm.len(), self.num_users);
        assert_eq!(col_perm.len(), self.num_movies);
        let triples = self
            .triples()
            .map(|(u, m, r)| (row_perm[u as usize], col_perm[m as usize], r))
            .collect();
        SparseRatings::from_triples(self.num_users, self.num_movies, triples)
            .expect("permutation preserves validity")
    }

    /// Write in MatrixMarket coordinate format with 1-based indices. Rating
    /// values round-trip exactly (shortest-representation decimal).
    pub fn save_matrix_market(&self, path: &Path) -> Result<(), RatingsError> {
        let file = File::create(path).map_err(|source| RatingsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        let mut body = String::new();
        writeln!(body, "%%MatrixMarket matrix coordinate real general").unwrap();
        writeln!(body, "{} {} {}", self.num_users, self.num_movies, self.nnz()).unwrap();
        for (u, m, r) in self.triples() {
            writeln!(body, "{} {} {}", u + 1, m + 1, r).unwrap();
        }
        w.write_all(body.as_bytes()).map_err(|source| RatingsError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>, RatingsError> {
    let file = File::open(path).map_err(|source| RatingsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(BufReader::new(file).lines())
}

/// Load a MatrixMarket coordinate file (`%%MatrixMarket matrix coordinate
/// real general`). Indices are 1-based in the file, 0-based in memory.
pub fn load_matrix_market(path: &Path) -> Result<SparseRatings, RatingsError> {
    let mut lines = open_lines(path)?.enumerate();

    let (_, header) = lines.next().ok_or_else(|| RatingsError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let header = header.map_err(|e| io_err(path, e))?;
    let head_fields: Vec<&str> = header.split_whitespace().collect();
    if head_fields.len() < 4
        || !head_fields[0].starts_with("%%MatrixMarket")
        || head_fields[1] != "matrix"
        || head_fields[2] != "coordinate"
        || head_fields[3] != "real"
    {
        return Err(RatingsError::Parse {
            line: 1,
            message: format!("unsupported MatrixMarket header: {header}"),
        });
    }

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        match dims {
            None => {
                let m: usize = parse_field(it.next(), line_no, "rows")?;
                let n: usize = parse_field(it.next(), line_no, "cols")?;
                let nnz: usize = parse_field(it.next(), line_no, "nnz")?;
                dims = Some((m, n, nnz));
                triples.reserve(nnz);
            }
            Some((m, n, _)) => {
                let i: usize = parse_field(it.next(), line_no, "row index")?;
                let j: usize = parse_field(it.next(), line_no, "col index")?;
                let v: f64 = parse_field(it.next(), line_no, "value")?;
                if i < 1 || i > m || j < 1 || j > n {
                    return Err(RatingsError::IndexOutOfHeaderBounds {
                        line: line_no,
                        users: m,
                        movies: n,
                    });
                }
                triples.push(((i - 1) as u32, (j - 1) as u32, v));
            }
        }
    }
    let (m, n, nnz) = dims.ok_or_else(|| RatingsError::Parse {
        line: 0,
        message: "missing size line".into(),
    })?;
    if triples.len() != nnz {
        return Err(RatingsError::Parse {
            line: 0,
            message: format!("header declares {nnz} entries, file has {}", triples.len()),
        });
    }
    SparseRatings::from_triples(m, n, triples)
}

fn io_err(path: &Path, source: std::io::Error) -> RatingsError {
    RatingsError::Io { path: path.display().to_string(), source }
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, RatingsError> {
    field
        .ok_or_else(|| RatingsError::Parse { line, message: format!("missing {what}") })?
        .parse()
        .map_err(|_| RatingsError::Parse { line, message: format!("invalid {what}") })
}

/// Column layout of a delimited ratings file.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub delimiter: u8,
    pub has_header: bool,
    pub user_col: usize,
    pub movie_col: usize,
    pub rating_col: usize,
}

impl Default for CsvSchema {
    /// MovieLens `ratings.csv` layout: `userId,movieId,rating,timestamp`.
    fn default() -> Self {
        CsvSchema { delimiter: b',', has_header: true, user_col: 0, movie_col: 1, rating_col: 2 }
    }
}

impl CsvSchema {
    /// MovieLens 100k `u.data` layout: tab-separated, no header.
    pub fn ml_100k() -> Self {
        CsvSchema { delimiter: b'\t', has_header: false, user_col: 0, movie_col: 1, rating_col: 2 }
    }
}

/// Dense remapping of external ids: `users[i]` is the external id of
/// internal user `i` (ascending), likewise `movies`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMaps {
    pub users: Vec<u64>,
    pub movies: Vec<u64>,
}

impl IdMaps {
    /// Persist both maps as two-column CSVs (`external,internal`) next to
    /// the given stem: `<stem>.users.csv` and `<stem>.movies.csv`.
    pub fn save_sidecars(&self, stem: &Path) -> Result<(), RatingsError> {
        for (suffix, map) in [("users", &self.users), ("movies", &self.movies)] {
            let path = stem.with_extension(format!("{suffix}.csv"));
            let file = File::create(&path).map_err(|e| io_err(&path, e))?;
            let mut w = BufWriter::new(file);
            let mut body = String::from("external,internal\n");
            for (internal, external) in map.iter().enumerate() {
                writeln!(body, "{external},{internal}").unwrap();
            }
            w.write_all(body.as_bytes()).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}

/// Load a delimited ratings file, densely remapping external user and movie
/// ids (ascending external id order) and returning the mapping.
pub fn load_ratings_csv(
    path: &Path,
    schema: &CsvSchema,
) -> Result<(SparseRatings, IdMaps), RatingsError> {
    let needed = schema.user_col.max(schema.movie_col).max(schema.rating_col) + 1;
    let delim = schema.delimiter as char;
    let mut raw: Vec<(u64, u64, f64)> = Vec::new();

    for (idx, line) in open_lines(path)?.enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delim).collect();
        if fields.len() < needed {
            return Err(RatingsError::SchemaMismatch(format!(
                "line {line_no} has {} fields, schema needs {needed}",
                fields.len()
            )));
        }
        if line_no == 1 && schema.has_header {
            if fields[schema.rating_col].trim().parse::<f64>().is_ok() {
                return Err(RatingsError::SchemaMismatch(
                    "first row parses as data but schema declares a header".into(),
                ));
            }
            continue;
        }
        let user: u64 = fields[schema.user_col].trim().parse().map_err(|_| RatingsError::Parse {
            line: line_no,
            message: format!("invalid user id {:?}", fields[schema.user_col]),
        })?;
        let movie: u64 =
            fields[schema.movie_col].trim().parse().map_err(|_| RatingsError::Parse {
                line: line_no,
                message: format!("invalid movie id {:?}", fields[schema.movie_col]),
            })?;
        let rating: f64 =
            fields[schema.rating_col].trim().parse().map_err(|_| RatingsError::Parse {
                line: line_no,
                message: format!("invalid rating {:?}", fields[schema.rating_col]),
            })?;
        raw.push((user, movie, rating));
    }

    let mut users: Vec<u64> = raw.iter().map(|&(u, _, _)| u).collect();
    users.sort_unstable();
    users.dedup();
    let mut movies: Vec<u64> = raw.iter().map(|&(_, m, _)| m).collect();
    movies.sort_unstable();
    movies.dedup();

    let triples = raw
        .into_iter()
        .map(|(u, m, r)| {
            let ui = users.binary_search(&u).unwrap() as u32;
            let mi = movies.binary_search(&m).unwrap() as u32;
            (ui, mi, r)
        })
        .collect();
    let ratings = SparseRatings::from_triples(users.len(), movies.len(), triples)?;
    Ok((ratings, IdMaps { users, movies }))
}

/// Train ratings plus a held-out list of (user, movie, rating) test triples.
#[derive(Debug, Clone)]
pub struct RatingsSplit {
    pub train: SparseRatings,
    pub test: Vec<(u32, u32, f64)>,
}

/// Deterministic train/test split.
///
/// `|test| = round(test_fraction · nnz)` exactly. A shuffled greedy pass
/// keeps at least one training rating per user and per movie where that is
/// achievable; a second pass tops the test set up unconditionally when the
/// retention constraint would leave it short.
pub fn split_train_test(
    r: &SparseRatings,
    test_fraction: f64,
    rng: &mut CounterRng,
) -> Result<RatingsSplit, RatingsError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(RatingsError::InvalidFraction(test_fraction));
    }
    if r.nnz() < 10 {
        return Err(RatingsError::TooSparse(format!(
            "{} ratings, need at least 10 to split",
            r.nnz()
        )));
    }
    let target = (test_fraction * r.nnz() as f64).round() as usize;

    let all: Vec<(u32, u32, f64)> = r.triples().collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(rng);

    let mut user_left: Vec<usize> = (0..r.num_users()).map(|u| r.user_degree(u)).collect();
    let mut movie_left: Vec<usize> = (0..r.num_movies()).map(|m| r.movie_degree(m)).collect();
    let mut in_test = vec![false; all.len()];
    let mut taken = 0usize;

    for &i in &order {
        if taken == target {
            break;
        }
        let (u, m, _) = all[i];
        if user_left[u as usize] > 1 && movie_left[m as usize] > 1 {
            in_test[i] = true;
            user_left[u as usize] -= 1;
            movie_left[m as usize] -= 1;
            taken += 1;
        }
    }
    if taken < target {
        // retention not fully achievable at this fraction
        for &i in &order {
            if taken == target {
                break;
            }
            if !in_test[i] {
                in_test[i] = true;
                taken += 1;
            }
        }
    }

    let mut test = Vec::with_capacity(target);
    let mut train = Vec::with_capacity(all.len() - target);
    for (i, t) in all.into_iter().enumerate() {
        if in_test[i] {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    let train = SparseRatings::from_triples(r.num_users(), r.num_movies(), train)?;
    Ok(RatingsSplit { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn flatten_both_ways(r: &SparseRatings) -> (Vec<(u32, u32, u64)>, Vec<(u32, u32, u64)>) {
        let mut by_user: Vec<(u32, u32, u64)> = r
            .triples()
            .map(|(u, m, v)| (u, m, v.to_bits()))
            .collect();
        let mut by_movie: Vec<(u32, u32, u64)> = (0..r.num_movies())
            .flat_map(|m| {
                r.ratings_of_movie(m).iter().map(move |&(u, v)| (u, m as u32, v.to_bits()))
            })
            .collect();
        by_user.sort_unstable();
        by_movie.sort_unstable();
        (by_user, by_movie)
    }

    #[test]
    fn matrix_market_readback() {
        let f = write_tmp(
            "%%MatrixMarket matrix coordinate real general\n3 3 2\n1 1 5.0\n2 3 1.0\n",
        );
        let r = load_matrix_market(f.path()).unwrap();
        assert_eq!(r.num_users(), 3);
        assert_eq!(r.num_movies(), 3);
        assert_eq!(r.nnz(), 2);
        assert_eq!(r.ratings_of_user(0), &[(0, 5.0)]);
        assert_eq!(r.ratings_of_movie(2), &[(1, 1.0)]);
        assert!((r.global_mean() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn matrix_market_bounds_check() {
        let f = write_tmp("%%MatrixMarket matrix coordinate real general\n3 3 1\n4 1 2.0\n");
        match load_matrix_market(f.path()) {
            Err(RatingsError::IndexOutOfHeaderBounds { line: 3, .. }) => {}
            other => panic!("expected bounds error, got {other:?}"),
        }
    }

    #[test]
    fn matrix_market_duplicate_rejected() {
        let f = write_tmp(
            "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n1 1 2.0\n",
        );
        match load_matrix_market(f.path()) {
            Err(RatingsError::DuplicateEntry { user: 0, movie: 0 }) => {}
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn matrix_market_roundtrip() {
        let triples = vec![(0, 1, 3.5), (1, 0, -2.25), (2, 2, 0.1), (0, 2, 4.0)];
        let r = SparseRatings::from_triples(3, 3, triples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.mtx");
        r.save_matrix_market(&path).unwrap();
        let back = load_matrix_market(&path).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn csv_two_rows() {
        let f = write_tmp("u,m,r\n10,20,4.0\n11,20,2.5\n");
        let (r, maps) = load_ratings_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(r.nnz(), 2);
        assert_eq!(maps.users, vec![10, 11]);
        assert_eq!(maps.movies, vec![20]);
    }

    #[test]
    fn csv_ml100k_style_tab_remaps_ids() {
        let f = write_tmp("196\t242\t3\t881250949\n186\t302\t3\t891717742\n22\t377\t1\t878887116\n");
        let (r, maps) = load_ratings_csv(f.path(), &CsvSchema::ml_100k()).unwrap();
        assert_eq!(r.nnz(), 3);
        assert_eq!(r.num_users(), 3);
        assert_eq!(r.num_movies(), 3);
        // external ids kept in ascending order
        assert_eq!(maps.users, vec![22, 186, 196]);
        assert_eq!(maps.movies, vec![242, 302, 377]);
        // user 196 → internal 2 rated movie 242 → internal 0
        assert_eq!(r.ratings_of_user(2), &[(0, 3.0)]);
    }

    #[test]
    fn csv_bad_rating_cell_reports_line() {
        let f = write_tmp("u,m,r\n1,2,3.0\n1,3,abc\n");
        match load_ratings_csv(f.path(), &CsvSchema::default()) {
            Err(RatingsError::Parse { line: 3, .. }) => {}
            other => panic!("expected parse error at line 3, got {other:?}"),
        }
    }

    #[test]
    fn csv_header_mismatch() {
        let f = write_tmp("1,2,3.0\n4,5,1.0\n");
        match load_ratings_csv(f.path(), &CsvSchema::default()) {
            Err(RatingsError::SchemaMismatch(_)) => {}
            other => panic!("expected schema mismatch, got {other:?}"),
        }
    }

    #[test]
    fn sidecar_written() {
        let f = write_tmp("u,m,r\n10,20,4.0\n11,21,2.5\n");
        let (_, maps) = load_ratings_csv(f.path(), &CsvSchema::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ids");
        maps.save_sidecars(&stem).unwrap();
        let users = std::fs::read_to_string(dir.path().join("ids.users.csv")).unwrap();
        assert_eq!(users, "external,internal\n10,0\n11,1\n");
    }

    fn grid_ratings(users: usize, movies: usize) -> SparseRatings {
        let triples = (0..users)
            .flat_map(|u| (0..movies).map(move |m| (u as u32, m as u32, (u * movies + m) as f64)))
            .collect();
        SparseRatings::from_triples(users, movies, triples).unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let r = grid_ratings(10, 10);
        let mut rng = CounterRng::new(1, 0, Stream::SplitShuffle, 0);
        let split = split_train_test(&r, 0.2, &mut rng).unwrap();
        assert_eq!(split.test.len(), 20);
        assert_eq!(split.train.nnz(), 80);
        // set algebra: train ∪ test = all, train ∩ test = ∅
        let mut train: Vec<_> = split.train.triples().collect();
        train.extend(split.test.iter().copied());
        train.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut all: Vec<_> = r.triples().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(train, all);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let r = grid_ratings(5, 5);
        let mut rng = CounterRng::new(1, 0, Stream::SplitShuffle, 0);
        match split_train_test(&r, 0.0, &mut rng) {
            Err(RatingsError::InvalidFraction(_)) => {}
            other => panic!("expected InvalidFraction, got {other:?}"),
        }
    }

    #[test]
    fn split_rejects_too_sparse() {
        let r = SparseRatings::from_triples(3, 3, vec![(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let mut rng = CounterRng::new(1, 0, Stream::SplitShuffle, 0);
        match split_train_test(&r, 0.5, &mut rng) {
            Err(RatingsError::TooSparse(_)) => {}
            other => panic!("expected TooSparse, got {other:?}"),
        }
    }

    #[test]
    fn split_deterministic() {
        let r = grid_ratings(8, 8);
        let a = split_train_test(&r, 0.25, &mut CounterRng::new(9, 0, Stream::SplitShuffle, 0))
            .unwrap();
        let b = split_train_test(&r, 0.25, &mut CounterRng::new(9, 0, Stream::SplitShuffle, 0))
            .unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.train, b.train);
    }

    #[test]
    fn split_retains_training_coverage() {
        let r = grid_ratings(6, 6);
        let mut rng = CounterRng::new(3, 0, Stream::SplitShuffle, 0);
        let split = split_train_test(&r, 0.3, &mut rng).unwrap();
        for u in 0..6 {
            assert!(split.train.user_degree(u) >= 1, "user {u} lost all ratings");
        }
        for m in 0..6 {
            assert!(split.train.movie_degree(m) >= 1, "movie {m} lost all ratings");
        }
    }

    #[test]
    fn dual_index_consistency() {
        let r = grid_ratings(7, 5);
        let (a, b) = flatten_both_ways(&r);
        assert_eq!(a, b);
        // consistency survives permutation
        let row_perm: Vec<u32> = vec![3, 0, 6, 1, 5, 2, 4];
        let col_perm: Vec<u32> = vec![4, 2, 0, 1, 3];
        let p = r.permute(&row_perm, &col_perm);
        let (a, b) = flatten_both_ways(&p);
        assert_eq!(a, b);
        assert_eq!(p.nnz(), r.nnz());
    }

    #[test]
    fn permute_then_inverse_restores() {
        let r = grid_ratings(5, 4);
        let row_perm: Vec<u32> = vec![2, 0, 4, 1, 3];
        let col_perm: Vec<u32> = vec![1, 3, 0, 2];
        let mut row_inv = vec![0u32; 5];
        let mut col_inv = vec![0u32; 4];
        for (old, &new) in row_perm.iter().enumerate() {
            row_inv[new as usize] = old as u32;
        }
        for (old, &new) in col_perm.iter().enumerate() {
            col_inv[new as usize] = old as u32;
        }
        let back = r.permute(&row_perm, &col_perm).permute(&row_inv, &col_inv);
        assert_eq!(back, r);
    }
}
