use crate::chamfer::DistanceMatrix;
use crate::error::{MetricError, Result};

/// Coverage and minimum matching distance from a reference × generated
/// matrix. COV is the fraction of reference clouds that are the nearest
/// reference (lowest index on ties) of at least one generated cloud; MMD is
/// the mean over references of the distance to the closest generated cloud.
pub fn cov_mmd(dist: &DistanceMatrix) -> Result<(f64, f64)> {
    let (nr, ng) = (dist.rows, dist.cols);
    if nr == 0 || ng == 0 {
        return Err(MetricError::Empty("cov/mmd needs a nonempty matrix".into()));
    }
    let mut covered = vec![false; nr];
    for g in 0..ng {
        let mut best = 0;
        for r in 1..nr {
            if dist.get(r, g) < dist.get(best, g) {
                best = r;
            }
        }
        covered[best] = true;
    }
    let cov = covered.iter().filter(|&&c| c).count() as f64 / nr as f64;
    let mut sum = 0.0;
    for r in 0..nr {
        let mut m = f64::INFINITY;
        for g in 0..ng {
            m = m.min(dist.get(r, g));
        }
        sum += m;
    }
    Ok((cov, sum / nr as f64))
}

/// Leave-one-out 1-nearest-neighbor accuracy over a union matrix whose first
/// `n_ref` rows are reference samples. A sample counts as correct when its
/// nearest other sample shares its source; exact ties with a sample of the
/// other source count as incorrect.
pub fn one_nna(union: &DistanceMatrix, n_ref: usize) -> Result<f64> {
    let n = union.rows;
    if union.cols != n {
        return Err(MetricError::Shape("1-NNA needs a square union matrix".into()));
    }
    if n < 2 || n_ref > n {
        return Err(MetricError::Empty(format!("1-NNA needs at least 2 samples, got {n}")));
    }
    let mut correct = 0usize;
    for i in 0..n {
        let mine = i < n_ref;
        let (mut same, mut other) = (f64::INFINITY, f64::INFINITY);
        for j in (0..n).filter(|&j| j != i) {
            let d = union.get(i, j);
            if (j < n_ref) == mine {
                same = same.min(d);
            } else {
                other = other.min(d);
            }
        }
        if same < other {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_cover_fully() {
        let m = DistanceMatrix::new(3, 3, vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
        assert_eq!(cov_mmd(&m).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn collapsed_generator_covers_one() {
        let m = DistanceMatrix::new(4, 3, vec![0.1, 0.1, 0.1, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0]).unwrap();
        assert_eq!(cov_mmd(&m).unwrap().0, 0.25);
    }

    #[test]
    fn duplicate_sets_score_zero_under_pessimistic_ties() {
        // ref = gen, each sample's duplicate is at distance 0.
        let n = 3;
        let mut d = vec![5.0; 4 * n * n];
        for i in 0..2 * n {
            d[i * 2 * n + i] = 0.0;
            let twin = (i + n) % (2 * n);
            d[i * 2 * n + twin] = 0.0;
        }
        let m = DistanceMatrix::new(2 * n, 2 * n, d).unwrap();
        assert_eq!(one_nna(&m, n).unwrap(), 0.0);
    }

    #[test]
    fn separated_clusters_score_one() {
        let n = 4;
        let d: Vec<f64> = (0..64)
            .map(|k| {
                let (i, j) = (k / 8, k % 8);
                if i == j {
                    0.0
                } else if (i < n) == (j < n) {
                    1.0
                } else {
                    100.0
                }
            })
            .collect();
        assert_eq!(one_nna(&DistanceMatrix::new(8, 8, d).unwrap(), n).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(one_nna(&DistanceMatrix::new(1, 1, vec![0.0]).unwrap(), 1).is_err());
        assert!(cov_mmd(&DistanceMatrix::new(0, 0, vec![]).unwrap()).is_err());
    }
}
