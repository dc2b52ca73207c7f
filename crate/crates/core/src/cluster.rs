//! K-means over gallery descriptors, the clustering error, elbow curves and
//! top-kappa cluster retrieval.
//!
//! # Model file
//!
//! ```text
//! magic      b"HRKM"
//! version    u32 (= 1)
//! k          u32
//! n          u64
//! seed       u64
//! dim        u32
//! iterations u32
//! centers    k x dim f64
//! assignment n x (id_len u32, id bytes, cluster u32), sorted by id
//! ```
//! All integers and floats little-endian.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::descriptor::{read_str, write_str, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_K: usize = 100;
pub const DEFAULT_KAPPA: usize = 1;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

const MODEL_MAGIC: &[u8; 4] = b"HRKM";
const MODEL_VERSION: u32 = 1;

#[inline]
pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// A fitted clustering of gallery descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel<T> {
    centers: Vec<T>,
    dim: usize,
    k: usize,
    assignment: BTreeMap<String, usize>,
    pub seed: u64,
    pub iterations_run: usize,
    /// Clustering error after every Lloyd update, in order.
    pub error_history: Vec<f64>,
}

impl<T: Scalar> ClusterModel<T> {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, j: usize) -> &[T] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn centers(&self) -> impl Iterator<Item = &[T]> {
        self.centers.chunks(self.dim)
    }

    pub fn assignment(&self) -> &BTreeMap<String, usize> {
        &self.assignment
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    /// Member ids of one cluster, sorted.
    pub fn members(&self, j: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &c)| c == j)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LE>(MODEL_VERSION)?;
        w.write_u32::<LE>(self.k as u32)?;
        w.write_u64::<LE>(self.assignment.len() as u64)?;
        w.write_u64::<LE>(self.seed)?;
        w.write_u32::<LE>(self.dim as u32)?;
        w.write_u32::<LE>(self.iterations_run as u32)?;
        for v in &self.centers {
            w.write_f64::<LE>(v.f64())?;
        }
        for (id, &c) in &self.assignment {
            write_str(&mut w, id)?;
            w.write_u32::<LE>(c as u32)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format("cluster model", "bad magic"));
        }
        let version = r.read_u32::<LE>()?;
        if version != MODEL_VERSION {
            return Err(Error::format(
                "cluster model",
                format!("unsupported version {version}"),
            ));
        }
        let k = r.read_u32::<LE>()? as usize;
        let n = r.read_u64::<LE>()? as usize;
        let seed = r.read_u64::<LE>()?;
        let dim = r.read_u32::<LE>()? as usize;
        let iterations_run = r.read_u32::<LE>()? as usize;
        let centers = (0..k * dim)
            .map(|_| r.read_f64::<LE>().map(T::of))
            .collect::<std::io::Result<Vec<_>>>()?;
        let mut assignment = BTreeMap::new();
        for _ in 0..n {
            let id = read_str(&mut r)?;
            let c = r.read_u32::<LE>()? as usize;
            if c >= k {
                return Err(Error::format(
                    "cluster model",
                    format!("cluster {c} out of range"),
                ));
            }
            assignment.insert(id, c);
        }
        Ok(Self {
            centers,
            dim,
            k,
            assignment,
            seed,
            iterations_run,
            error_history: Vec::new(),
        })
    }
}

/// Index of the nearest center; ties go to the lower index.
fn nearest<T: Scalar>(x: &[T], centers: &[T], dim: usize) -> (usize, T) {
    centers
        .chunks(dim)
        .enumerate()
        .map(|(j, c)| (j, squared_distance(x, c)))
        .fold(
            (0, T::infinity()),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

fn kmeans_pp<T: Scalar>(h: &FeatureMatrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = h.len();
    let dim = h.dim();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = h
        .rows()
        .map(|r| squared_distance(r, h.row(chosen[0])).f64())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave the target past the last bucket.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // Remaining points duplicate chosen centers; take unchosen ones in order.
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(h.row(i), h.row(next)).f64());
        }
    }
    let mut centers = Vec::with_capacity(k * dim);
    for &i in &chosen {
        centers.extend_from_slice(h.row(i));
    }
    centers
}

fn assign<T: Scalar>(h: &FeatureMatrix<T>, centers: &[T], dim: usize, labels: &mut [usize]) {
    for (i, row) in h.rows().enumerate() {
        labels[i] = nearest(row, centers, dim).0;
    }
}

/// Gives every empty cluster the point farthest from its current center, taken
/// from a cluster that can spare it.
fn reseed_empty<T: Scalar>(
    h: &FeatureMatrix<T>,
    centers: &mut [T],
    dim: usize,
    k: usize,
    labels: &mut [usize],
) {
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..h.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .map(|i| {
                (
                    i,
                    squared_distance(h.row(i), &centers[labels[i] * dim..][..dim]),
                )
            })
            .fold(None::<(usize, T)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .expect("k <= n leaves a cluster with at least two members")
            .0;
        labels[donor] = empty;
        centers[empty * dim..(empty + 1) * dim].copy_from_slice(h.row(donor));
    }
}

fn update_centers<T: Scalar>(h: &FeatureMatrix<T>, labels: &[usize], k: usize) -> Vec<T> {
    let dim = h.dim();
    let mut sums = vec![T::zero(); k * dim];
    let mut counts = vec![0usize; k];
    for (row, &l) in h.rows().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        let n = T::of(c as f64);
        sums[j * dim..(j + 1) * dim]
            .iter_mut()
            .for_each(|s| *s /= n);
    }
    sums
}

fn labelled_error<T: Scalar>(h: &FeatureMatrix<T>, centers: &[T], labels: &[usize]) -> f64 {
    let dim = h.dim();
    h.rows()
        .zip(labels)
        .map(|(row, &l)| squared_distance(row, &centers[l * dim..(l + 1) * dim]).f64())
        .sum()
}

/// Lloyd's algorithm from a seeded k-means++ start.
pub fn fit_kmeans<T: Scalar>(
    h: &FeatureMatrix<T>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel<T>> {
    let n = h.len();
    if k < 1 || k > n {
        return Err(Error::BadK { k, n });
    }
    let dim = h.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(h, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        assign(h, &centers, dim, &mut labels);
        reseed_empty(h, &mut centers, dim, k, &mut labels);
        let next = update_centers(h, &labels, k);
        let shift = next
            .chunks(dim)
            .zip(centers.chunks(dim))
            .map(|(a, b)| squared_distance(a, b).f64().sqrt())
            .fold(0.0, f64::max);
        centers = next;
        iterations += 1;
        history.push(labelled_error(h, &centers, &labels));
        if shift < tol || iterations >= max_iter.max(1) {
            break;
        }
    }
    // Final assignment against the final centers.
    let before = labels.clone();
    assign(h, &centers, dim, &mut labels);
    reseed_empty(h, &mut centers, dim, k, &mut labels);
    if labels != before {
        centers = update_centers(h, &labels, k);
        history.push(labelled_error(h, &centers, &labels));
    }

    let assignment = h.ids().iter().cloned().zip(labels).collect();
    Ok(ClusterModel {
        centers,
        dim,
        k,
        assignment,
        seed,
        iterations_run: iterations,
        error_history: history,
    })
}

/// Sum of squared distances from each descriptor to its assigned center.
pub fn clustering_error<T: Scalar>(model: &ClusterModel<T>, h: &FeatureMatrix<T>) -> Result<f64> {
    h.ids()
        .iter()
        .zip(h.rows())
        .map(|(id, row)| {
            let c = model
                .cluster_of(id)
                .ok_or_else(|| Error::UnassignedId(id.clone()))?;
            Ok(squared_distance(row, model.center(c)).f64())
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElbowPoint {
    pub k: usize,
    pub error: f64,
}

/// Clustering error for each requested K, fitted independently with one seed.
pub fn elbow_curve<T: Scalar>(
    h: &FeatureMatrix<T>,
    k_values: &[usize],
    seed: u64,
) -> Result<Vec<ElbowPoint>> {
    if k_values.is_empty() {
        return Err(Error::BadConfig("empty K list".into()));
    }
    k_values
        .iter()
        .map(|&k| {
            let model = fit_kmeans(h, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
            Ok(ElbowPoint {
                k,
                error: clustering_error(&model, h)?,
            })
        })
        .collect()
}

/// Writes `k,error` rows.
pub fn write_elbow_csv<W: Write>(points: &[ElbowPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

/// The `kappa` nearest centers to a query, nearest first; ties go to the lower index.
pub fn top_k_clusters<T: Scalar>(
    model: &ClusterModel<T>,
    query: &[T],
    kappa: usize,
) -> Result<Vec<usize>> {
    if kappa < 1 || kappa > model.k {
        return Err(Error::BadKappa { kappa, k: model.k });
    }
    if query.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: format!("{}-dim query", model.dim),
            got: format!("{}-dim", query.len()),
        });
    }
    let mut ranked: Vec<(usize, T)> = model
        .centers()
        .enumerate()
        .map(|(j, c)| (j, squared_distance(query, c)))
        .collect();
    ranked.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("finite distances")
            .then(a.0.cmp(&b.0))
    });
    Ok(ranked.into_iter().take(kappa).map(|(j, _)| j).collect())
}

/// Union of the members of the named clusters.
pub fn reduced_set<T: Scalar>(
    model: &ClusterModel<T>,
    cluster_ids: &[usize],
) -> Result<BTreeSet<String>> {
    if cluster_ids.is_empty() {
        return Err(Error::BadConfig("no clusters selected".into()));
    }
    if let Some(&bad) = cluster_ids.iter().find(|&&c| c >= model.k) {
        return Err(Error::BadClusterId {
            id: bad,
            k: model.k,
        });
    }
    Ok(model
        .assignment
        .iter()
        .filter(|(_, c)| cluster_ids.contains(c))
        .map(|(id, _)| id.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix<f64> {
        let ids = (0..rows.len()).map(|i| format!("s{i:02}")).collect();
        FeatureMatrix::from_rows(rows, ids).unwrap()
    }

    fn two_groups() -> FeatureMatrix<f64> {
        matrix(vec![
            vec![0.0, 0.1],
            vec![0.1, 0.0],
            vec![0.05, 0.05],
            vec![10.0, 10.1],
            vec![10.1, 9.9],
            vec![9.95, 10.0],
        ])
    }

    /// Brute force over every 2-partition of the points.
    fn best_two_partition(h: &FeatureMatrix<f64>) -> (f64, Vec<usize>) {
        let n = h.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let mut err = 0.0;
            for g in 0..2 {
                let members: Vec<&[f64]> = (0..n)
                    .filter(|&i| labels[i] == g)
                    .map(|i| h.row(i))
                    .collect();
                let mean: Vec<f64> = (0..h.dim())
                    .map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64)
                    .collect();
                err += members
                    .iter()
                    .map(|m| squared_distance(m, &mean))
                    .sum::<f64>();
            }
            if err < best.0 {
                best = (err, labels);
            }
        }
        best
    }

    #[test]
    fn two_tight_groups_split_exactly() {
        let h = two_groups();
        let m = fit_kmeans(&h, 2, 3, 300, 1e-6).unwrap();
        let a = m.cluster_of("s00").unwrap();
        let b = m.cluster_of("s03").unwrap();
        assert_ne!(a, b);
        for i in 0..3 {
            assert_eq!(m.cluster_of(&format!("s{i:02}")), Some(a));
            assert_eq!(m.cluster_of(&format!("s{:02}", i + 3)), Some(b));
        }
        let (oracle, labels) = best_two_partition(&h);
        assert_eq!(labels[..3], [labels[0]; 3]);
        let e = clustering_error(&m, &h).unwrap();
        assert!(
            (e - oracle).abs() <= 1e-12 * oracle.max(1.0),
            "{e} vs {oracle}"
        );
    }

    #[test]
    fn k_equals_n_is_exact() {
        let h = two_groups();
        let m = fit_kmeans(&h, 6, 1, 300, 1e-6).unwrap();
        assert_eq!(clustering_error(&m, &h).unwrap(), 0.0);
        let clusters: BTreeSet<usize> = m.assignment().values().copied().collect();
        assert_eq!(clusters.len(), 6);
    }

    #[test]
    fn k_equals_n_with_duplicates() {
        let h = matrix(vec![vec![1.0], vec![1.0], vec![2.0]]);
        let m = fit_kmeans(&h, 3, 9, 300, 1e-6).unwrap();
        assert_eq!(clustering_error(&m, &h).unwrap(), 0.0);
        assert!((0..3).all(|j| !m.members(j).is_empty()));
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let h = two_groups();
        let m = fit_kmeans(&h, 1, 0, 300, 1e-6).unwrap();
        for d in 0..2 {
            let mean = h.rows().map(|r| r[d]).sum::<f64>() / 6.0;
            assert!((m.center(0)[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_k_rejected() {
        let h = two_groups();
        assert!(matches!(
            fit_kmeans(&h, 0, 0, 10, 1e-6),
            Err(Error::BadK { .. })
        ));
        assert!(matches!(
            fit_kmeans(&h, 7, 0, 10, 1e-6),
            Err(Error::BadK { k: 7, n: 6 })
        ));
    }

    #[test]
    fn error_terms() {
        let h = two_groups();
        let mut m = fit_kmeans(&h, 6, 1, 300, 1e-6).unwrap();
        let j = m.cluster_of("s00").unwrap();
        m.centers[j * 2] += 3.0;
        assert!((clustering_error(&m, &h).unwrap() - 9.0).abs() < 1e-12);
        m.assignment.remove("s01");
        assert!(matches!(clustering_error(&m, &h), Err(Error::UnassignedId(id)) if id == "s01"));
    }

    #[test]
    fn top_k_orders_with_ties() {
        // Distances {4,1,9,1,2} from the origin.
        let centers = vec![2.0, 1.0, 3.0, -1.0, 2f64.sqrt()];
        let m = ClusterModel {
            centers,
            dim: 1,
            k: 5,
            assignment: BTreeMap::new(),
            seed: 0,
            iterations_run: 0,
            error_history: vec![],
        };
        assert_eq!(top_k_clusters(&m, &[0.0], 2).unwrap(), vec![1, 3]);
        assert_eq!(top_k_clusters(&m, &[0.0], 5).unwrap(), vec![1, 3, 4, 0, 2]);
        assert_eq!(top_k_clusters(&m, &[3.0], 1).unwrap(), vec![2]);
        assert!(matches!(
            top_k_clusters(&m, &[0.0], 0),
            Err(Error::BadKappa { .. })
        ));
        assert!(matches!(
            top_k_clusters(&m, &[0.0], 6),
            Err(Error::BadKappa { .. })
        ));
    }

    #[test]
    fn reduced_sets() {
        let h = two_groups();
        let m = fit_kmeans(&h, 2, 3, 300, 1e-6).unwrap();
        let all = reduced_set(&m, &[0, 1]).unwrap();
        assert_eq!(all.len(), 6);
        let one = reduced_set(&m, &[m.cluster_of("s04").unwrap()]).unwrap();
        assert_eq!(
            one,
            ["s03", "s04", "s05"]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
        assert!(matches!(
            reduced_set(&m, &[2]),
            Err(Error::BadClusterId { id: 2, k: 2 })
        ));
    }

    #[test]
    fn model_round_trip() {
        let h = two_groups();
        let m = fit_kmeans(&h, 2, 3, 300, 1e-6).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = ClusterModel::<f64>::read_from(&buf[..]).unwrap();
        assert_eq!(back.centers, m.centers);
        assert_eq!(back.assignment, m.assignment);
        assert_eq!(
            (back.k, back.seed, back.iterations_run),
            (m.k, m.seed, m.iterations_run)
        );
    }

    #[test]
    fn elbow_header() {
        let mut buf = Vec::new();
        write_elbow_csv(&[ElbowPoint { k: 2, error: 0.5 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,error\n2,0.5\n");
    }
}
