//! Materialized noise–data couplings.
//!
//! A trained transport map is turned into a list of [`PairRecord`]s: each
//! record stores the *seed* of a noise vector (never the vector itself, see
//! [`noise_from_seed`]), the class it was drawn for, and the data index its
//! cell assigns. Pair `j` of a run uses seed `pair_seed(master_seed, j)`, so
//! the whole training stream is reproducible from one integer.
//!
//! Because cell masses only approximate the target weights, the raw
//! assignment stream can over-represent some points; [`rebalance`] applies
//! the minimal deterministic correction that makes per-index counts
//! near-uniform. Class-conditional problems are handled by generating and
//! rebalancing independently inside each class.

mod io;

pub use io::{read_pairs, write_pairs};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::sdot::{hard_assign, DualWeights};

/// One stored coupling: noise seed, class, assigned data point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub seed: u64,
    pub class_id: u32,
    pub data_index: u32,
}

/// What [`rebalance`] did to one index list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RebalanceReport {
    pub total: usize,
    pub changed: usize,
    pub counts_before: Vec<usize>,
    pub counts_after: Vec<usize>,
}

/// Deterministic standard-normal vector for a pair seed.
///
/// This is the normative expansion documented in [`crate::rng`]; pair files
/// depend on it bit for bit.
pub fn noise_from_seed(seed: u64, dim: usize) -> Vec<f64> {
    rng::normal_vector(seed, dim)
}

/// Seed of pair `j` under `master_seed`.
pub fn pair_seed(master_seed: u64, j: u64) -> u64 {
    rng::derive(master_seed, j)
}

/// Split `count` pairs across the dataset's classes proportionally to class
/// mass (largest-remainder rounding, ties to the smaller class id).
pub fn proportional_mix<S: Scalar>(dataset: &Dataset<S>, count: usize) -> Vec<(u32, usize)> {
    let classes = dataset.classes();
    let masses: Vec<f64> = classes
        .iter()
        .map(|&c| dataset.class_mass(c).to64())
        .collect();
    let mut alloc: Vec<usize> = masses
        .iter()
        .map(|m| (m * count as f64).floor() as usize)
        .collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = masses[a] * count as f64 - alloc[a] as f64;
        let fb = masses[b] * count as f64 - alloc[b] as f64;
        fb.partial_cmp(&fa)
            .unwrap()
            .then_with(|| classes[a].cmp(&classes[b]))
    });
    for k in 0..count - assigned {
        alloc[order[k % order.len()]] += 1;
    }
    classes.into_iter().zip(alloc).collect()
}

/// Generate `M = sum(class_mix)` pair records by assigning seeded noise
/// through the transport map of each class. Records come out grouped by
/// class in the order given, and pair `j` (global position) always uses
/// `pair_seed(master_seed, j)`.
pub fn generate_pairs<S: Scalar>(
    dataset: &Dataset<S>,
    duals: &DualWeights<S>,
    prior: &crate::dataset::NoisePrior,
    master_seed: u64,
    class_mix: &[(u32, usize)],
) -> Result<Vec<PairRecord>> {
    if duals.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: duals.len(),
        });
    }
    if prior.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: prior.dim(),
        });
    }
    let dim = dataset.dim();
    let total: usize = class_mix.iter().map(|(_, m)| m).sum();
    let mut records = Vec::with_capacity(total);
    let mut j = 0u64;
    let mut noise_s = vec![S::zero(); dim];
    let mut noise = vec![0.0f64; dim];
    for &(class, m_c) in class_mix {
        let (indices, subset) = dataset.class_subset(class)?;
        let g_local: Vec<S> = indices.iter().map(|&i| duals.g_ema[i]).collect();
        for _ in 0..m_c {
            let seed = pair_seed(master_seed, j);
            j += 1;
            rng::normal_fill(seed, &mut noise);
            for (dst, &v) in noise_s.iter_mut().zip(&noise) {
                *dst = S::of(v);
            }
            let local = hard_assign(&noise_s, &subset, &g_local)?;
            records.push(PairRecord {
                seed,
                class_id: class,
                data_index: indices[local] as u32,
            });
        }
    }
    Ok(records)
}

/// Minimal-change correction making per-index counts differ by at most one.
///
/// Targets are `floor(M/N)` everywhere with the remainder going to the
/// indices that currently hold the largest counts (ties to the smaller
/// index); within an over-represented index the *latest* occurrences
/// change, and replacement values are the under-represented indices in
/// ascending order.
pub fn rebalance(indices: &[u32], num_indices: usize) -> Result<(Vec<u32>, RebalanceReport)> {
    if num_indices == 0 {
        return Err(Error::invalid("rebalance needs at least one index slot"));
    }
    let n = num_indices;
    let m = indices.len();
    let mut counts = vec![0usize; n];
    for &ix in indices {
        if ix as usize >= n {
            return Err(Error::IndexOutOfRange {
                index: ix as usize,
                size: n,
            });
        }
        counts[ix as usize] += 1;
    }
    let counts_before = counts.clone();

    let q = m / n;
    let r = m % n;
    // The r ceil slots go to the largest current counts (smaller index on
    // ties): that choice maximizes kept assignments.
    let mut by_count: Vec<usize> = (0..n).collect();
    by_count.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut target = vec![q; n];
    for &i in by_count.iter().take(r) {
        target[i] += 1;
    }

    // Latest occurrences of each over-represented index get replaced.
    let mut surplus: Vec<usize> = counts
        .iter()
        .zip(&target)
        .map(|(&c, &t)| c.saturating_sub(t))
        .collect();
    let mut positions: Vec<usize> = Vec::new();
    for pos in (0..m).rev() {
        let ix = indices[pos] as usize;
        if surplus[ix] > 0 {
            surplus[ix] -= 1;
            positions.push(pos);
        }
    }
    positions.reverse();

    let mut fills: Vec<u32> = Vec::with_capacity(positions.len());
    for i in 0..n {
        for _ in counts[i]..target[i] {
            fills.push(i as u32);
        }
    }
    debug_assert_eq!(fills.len(), positions.len());

    let mut out = indices.to_vec();
    for (&pos, &val) in positions.iter().zip(&fills) {
        out[pos] = val;
    }
    let changed = positions.len();
    let mut counts_after = vec![0usize; n];
    for &ix in &out {
        counts_after[ix as usize] += 1;
    }
    Ok((
        out,
        RebalanceReport {
            total: m,
            changed,
            counts_before,
            counts_after,
        },
    ))
}

/// Rebalance a pair list class by class, in place. Index uniformity is
/// enforced within each class's own index set; records never change class.
/// Returns one report per class, ascending by class id.
pub fn rebalance_pairs<S: Scalar>(
    records: &mut [PairRecord],
    dataset: &Dataset<S>,
) -> Result<Vec<(u32, RebalanceReport)>> {
    let mut classes: Vec<u32> = records.iter().map(|r| r.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut reports = Vec::with_capacity(classes.len());
    for class in classes {
        let members = dataset.class_indices(class);
        if members.is_empty() {
            return Err(Error::MissingClass(class));
        }
        let mut local_of_global = vec![usize::MAX; dataset.len()];
        for (local, &global) in members.iter().enumerate() {
            local_of_global[global] = local;
        }
        let positions: Vec<usize> = (0..records.len())
            .filter(|&p| records[p].class_id == class)
            .collect();
        let mut local_indices = Vec::with_capacity(positions.len());
        for &p in &positions {
            let g = records[p].data_index as usize;
            if g >= dataset.len() || local_of_global[g] == usize::MAX {
                return Err(Error::IndexOutOfRange {
                    index: g,
                    size: dataset.len(),
                });
            }
            local_indices.push(local_of_global[g] as u32);
        }
        let (fixed, report) = rebalance(&local_indices, members.len())?;
        for (&p, &local) in positions.iter().zip(&fixed) {
            records[p].data_index = members[local as usize] as u32;
        }
        reports.push((class, report));
    }
    Ok(reports)
}

/// Extend a dataset with its image under a point involution: transformed
/// points append after the originals, weights halve, class ids carry over.
/// The involution property is checked on up to 100 dataset points.
pub fn augment_involution<S: Scalar>(
    dataset: &Dataset<S>,
    transform: impl Fn(&[S]) -> Vec<S>,
) -> Result<Dataset<S>> {
    let n = dataset.len();
    let dim = dataset.dim();
    let check_count = n.min(100);
    // Deterministic spread of check indices across the dataset.
    for k in 0..check_count {
        let i = if n <= 100 {
            k
        } else {
            (rng::derive(0x494E564F, k as u64) % n as u64) as usize
        };
        let p = dataset.point(i);
        let image = transform(p);
        if image.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: image.len(),
            });
        }
        let back = transform(&image);
        for (a, b) in back.iter().zip(p) {
            let tol = S::of(1e-9) * (S::one() + b.abs());
            if !((*a - *b).abs() <= tol) {
                return Err(Error::NotInvolution {
                    index: i,
                    error: (*a - *b).abs().to64(),
                });
            }
        }
    }
    let mut points = Vec::with_capacity(2 * n * dim);
    points.extend_from_slice(dataset.points_flat());
    for i in 0..n {
        points.extend(transform(dataset.point(i)));
    }
    let half = S::of(0.5);
    let mut weights = Vec::with_capacity(2 * n);
    for &w in dataset.weights() {
        weights.push(w * half);
    }
    for &w in dataset.weights() {
        weights.push(w * half);
    }
    let mut class_ids = Vec::with_capacity(2 * n);
    class_ids.extend_from_slice(dataset.class_ids());
    class_ids.extend_from_slice(dataset.class_ids());
    Dataset::new(dim, points, Some(weights), Some(class_ids))
}
