//! Lloyd's k-means with k-means++ seeding and warm starts.
//!
//! A warm start takes an assignment from elsewhere (in AV-KMEANS, the other
//! view) and derives the initial centroids as per-cluster means of *these*
//! points under that assignment, then runs at most `M` assign/update steps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, squared_distance, Matrix};
use crate::rng;

/// Iteration cap for runs without an explicit step bound.
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub assignment: Vec<usize>,
    pub centroids: Matrix,
    pub objective: f64,
    /// Assign/update steps performed.
    pub iterations: usize,
    /// Objective after each step, starting with the objective of the initial
    /// centroids under their nearest-centroid assignment.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl ClusterState {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }
}

#[derive(Debug, Clone, Default)]
pub struct KMeansOptions<'a> {
    /// Upper bound on assign/update steps. `None` iterates to convergence or
    /// [`DEFAULT_MAX_ITERATIONS`].
    pub max_steps: Option<usize>,
    /// Warm-start assignment; k-means++ seeding is used when absent.
    pub init: Option<&'a [usize]>,
    pub seed: u64,
}

/// Clusters the rows of `points` into `k` groups.
pub fn kmeans(points: &Matrix, k: usize, options: &KMeansOptions<'_>) -> Result<ClusterState> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::invalid("k-means needs at least one cluster"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    let max_steps = options.max_steps.unwrap_or(DEFAULT_MAX_ITERATIONS);

    let (mut centroids, mut assignment) = match options.init {
        Some(init) => {
            check_assignment(init, n, k)?;
            (centroids_from_assignment(points, init, k)?, init.to_vec())
        }
        None => {
            // No prior assignment: the first step always counts as a change.
            (kmeans_plus_plus(points, k, options.seed), vec![usize::MAX; n])
        }
    };

    let initial = if options.init.is_some() {
        objective(points, &assignment, &centroids)
    } else {
        let seeded = assign(points, &centroids);
        objective(points, &seeded, &centroids)
    };
    let mut trace = vec![initial];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_steps {
        let next = assign(points, &centroids);
        iterations += 1;
        let changed = next != assignment;
        assignment = next;
        update_centroids(points, &assignment, &mut centroids);
        trace.push(objective(points, &assignment, &centroids));
        if !changed {
            converged = true;
            break;
        }
    }

    let objective = *trace.last().expect("trace starts non-empty");
    Ok(ClusterState {
        assignment,
        centroids,
        objective,
        iterations,
        objective_trace: trace,
        converged,
    })
}

fn check_assignment(assignment: &[usize], n: usize, k: usize) -> Result<()> {
    if assignment.len() != n {
        return Err(Error::shape(format!(
            "assignment has {} entries for {n} points",
            assignment.len()
        )));
    }
    if let Some(bad) = assignment.iter().find(|&&z| z >= k) {
        return Err(Error::invalid(format!("cluster id {bad} is not below k={k}")));
    }
    Ok(())
}

/// Per-cluster means of `points` under `assignment`. Empty clusters are
/// re-seeded by [`reseed_empty`].
pub fn centroids_from_assignment(points: &Matrix, assignment: &[usize], k: usize) -> Result<Matrix> {
    check_assignment(assignment, points.rows(), k)?;
    let mut centroids = Matrix::zeros(k, points.cols());
    update_centroids(points, assignment, &mut centroids);
    Ok(centroids)
}

fn update_centroids(points: &Matrix, assignment: &[usize], centroids: &mut Matrix) {
    let k = centroids.rows();
    let mut counts = vec![0usize; k];
    let mut sums = Matrix::zeros(k, points.cols());
    for (p, &z) in points.iter_rows().zip(assignment) {
        counts[z] += 1;
        axpy(1.0, p, sums.row_mut(z));
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        } else {
            centroids.row_mut(c).copy_from_slice(sums.row(c));
        }
    }
    if counts.contains(&0) {
        reseed_empty(points, assignment, &counts, centroids);
    }
}

/// Moves each empty cluster's centroid onto the member of the largest
/// cluster that lies farthest from that cluster's centroid. Points already
/// used as seeds are skipped; when the largest cluster runs out, the next
/// largest is used. Ties go to the lower index.
fn reseed_empty(points: &Matrix, assignment: &[usize], counts: &[usize], centroids: &mut Matrix) {
    let k = counts.len();
    let mut donors: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    donors.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut used = vec![false; points.rows()];
    let mut empties = (0..k).filter(|&c| counts[c] == 0);

    'donor: for donor in donors {
        let mut members: Vec<(f64, usize)> = assignment
            .iter()
            .enumerate()
            .filter(|&(_, &z)| z == donor)
            .map(|(i, _)| (squared_distance(points.row(i), centroids.row(donor)), i))
            .collect();
        members.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, i) in members {
            if used[i] {
                continue;
            }
            let Some(empty) = empties.next() else {
                break 'donor;
            };
            used[i] = true;
            centroids.row_mut(empty).copy_from_slice(points.row(i));
        }
    }
}

/// Nearest centroid under squared Euclidean distance, lowest index on ties.
pub fn assign(points: &Matrix, centroids: &Matrix) -> Vec<usize> {
    (0..points.rows())
        .into_par_iter()
        .map(|i| nearest(points.row(i), centroids).0)
        .collect()
}

fn nearest(p: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(p, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn objective(points: &Matrix, assignment: &[usize], centroids: &Matrix) -> f64 {
    points
        .iter_rows()
        .zip(assignment)
        .map(|(p, &z)| squared_distance(p, centroids.row(z)))
        .sum()
}

/// k-means++ seeding: the first centre uniformly, each later one with
/// probability proportional to its squared distance to the nearest chosen
/// centre. Falls back to a uniform draw among unchosen points when every
/// remaining point coincides with a centre.
pub fn kmeans_plus_plus(points: &Matrix, k: usize, seed: u64) -> Matrix {
    let n = points.rows();
    let mut rng = rng::seeded(seed);
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut dist: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(&mut rng),
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
                free[rng.gen_range(0..free.len())]
            }
        };
        chosen.push(next);
        taken[next] = true;
        for (d, p) in dist.iter_mut().zip(points.iter_rows()) {
            *d = d.min(squared_distance(p, points.row(next)));
        }
    }
    let rows: Vec<&[f64]> = chosen.iter().map(|&i| points.row(i)).collect();
    Matrix::from_rows(&rows).expect("rows share the point dimension")
}

/// Summary written next to an exported assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSummary {
    pub objective: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub iterations: usize,
}

/// Writes `instance_id,cluster` rows (with header).
pub fn write_assignment_csv<S: AsRef<str>>(
    path: impl AsRef<Path>,
    ids: &[S],
    assignment: &[usize],
) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != assignment.len() {
        return Err(Error::shape(format!(
            "{} ids for {} assignments",
            ids.len(),
            assignment.len()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["instance_id", "cluster"])?;
    for (id, z) in ids.iter().zip(assignment) {
        w.write_record([id.as_ref(), &z.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an `instance_id,cluster` CSV back into `(id, cluster)` pairs.
pub fn read_assignment_csv(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let cluster = rec[1].trim().parse::<usize>().map_err(|e| Error::Parse {
            line,
            message: format!("bad cluster id {:?}: {e}", &rec[1]),
        })?;
        rows.push((rec[0].to_string(), cluster));
    }
    Ok(rows)
}

pub fn write_summary_json(path: impl AsRef<Path>, summary: &AssignmentSummary) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, summary)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}
