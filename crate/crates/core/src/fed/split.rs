use rand::distributions::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gp::Dataset;

/// How rows are assigned to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitScheme {
    /// Contiguous blocks; the first `n mod K` blocks get one extra row.
    Equal,
    /// Whole groups (e.g. trajectories), each to the currently smallest client.
    ByTrajectory,
    /// Client proportions drawn from a symmetric Dirichlet(α).
    Dirichlet { alpha: f64, seed: u64 },
}

/// Row indices owned by each of `k` clients, each list ascending.
///
/// `groups` gives a group label per row and is required by `ByTrajectory`.
pub fn split_indices(n: usize, k: usize, scheme: &SplitScheme, groups: Option<&[usize]>) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n < k {
        return invalid(format!("cannot split {n} rows across {k} clients"));
    }
    match scheme {
        SplitScheme::Equal => {
            let (base, extra) = (n / k, n % k);
            let mut start = 0;
            Ok((0..k)
                .map(|i| {
                    let len = base + usize::from(i < extra);
                    let block = (start..start + len).collect();
                    start += len;
                    block
                })
                .collect())
        }
        SplitScheme::ByTrajectory => {
            let Some(groups) = groups else {
                return invalid("trajectory split needs a group label per row");
            };
            if groups.len() != n {
                return invalid(format!("{} group labels for {n} rows", groups.len()));
            }
            let mut order: Vec<usize> = Vec::new();
            for &g in groups {
                if !order.contains(&g) {
                    order.push(g);
                }
            }
            if order.len() < k {
                return invalid(format!("{} groups cannot cover {k} clients", order.len()));
            }
            let mut owner_of = std::collections::HashMap::new();
            let mut sizes = vec![0usize; k];
            for g in order {
                let count = groups.iter().filter(|&&x| x == g).count();
                let target = (0..k).min_by_key(|&i| (sizes[i], i)).expect("k > 0");
                sizes[target] += count;
                owner_of.insert(g, target);
            }
            let mut out = vec![Vec::new(); k];
            for (row, g) in groups.iter().enumerate() {
                out[owner_of[g]].push(row);
            }
            Ok(out)
        }
        SplitScheme::Dirichlet { alpha, seed } => {
            if !(*alpha > 0.0 && alpha.is_finite()) {
                return invalid("dirichlet concentration must be positive");
            }
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            let gamma = Gamma::new(*alpha, 1.0).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
            let mut props: Vec<f64> = (0..k).map(|_| rng.sample(gamma)).collect();
            if !(props.iter().sum::<f64>() > 0.0) {
                props = vec![1.0; k];
            }
            let pick = WeightedIndex::new(&props).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            let mut out = vec![Vec::new(); k];
            // One guaranteed row per client keeps every local dataset nonempty.
            for (i, &row) in rows.iter().take(k).enumerate() {
                out[i].push(row);
            }
            for &row in &rows[k..] {
                out[rng.sample(&pick)].push(row);
            }
            for part in &mut out {
                part.sort_unstable();
            }
            Ok(out)
        }
    }
}

/// Partitions `data` into `k` client datasets.
pub fn split_dataset(data: &Dataset, k: usize, scheme: &SplitScheme, groups: Option<&[usize]>) -> Result<Vec<Dataset>> {
    split_indices(data.len(), k, scheme, groups)?
        .iter()
        .map(|rows| data.select(rows))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(parts: &[Vec<usize>]) -> Vec<usize> {
        parts.iter().map(Vec::len).collect()
    }

    #[test]
    fn equal_split_remainder_rule() {
        let p = split_indices(10, 3, &SplitScheme::Equal, None).unwrap();
        assert_eq!(sizes(&p), vec![4, 3, 3]);
        assert_eq!(p[1], vec![4, 5, 6]);
        assert_eq!(split_indices(5, 1, &SplitScheme::Equal, None).unwrap(), vec![vec![0, 1, 2, 3, 4]]);
        assert!(split_indices(2, 3, &SplitScheme::Equal, None).is_err());
    }

    #[test]
    fn trajectory_split_keeps_groups_whole() {
        let groups = [0, 0, 0, 1, 1, 2, 2, 2, 2, 3];
        let p = split_indices(10, 2, &SplitScheme::ByTrajectory, Some(&groups)).unwrap();
        for part in &p {
            let gs: std::collections::BTreeSet<_> = part.iter().map(|&r| groups[r]).collect();
            for g in gs {
                assert!(groups.iter().enumerate().filter(|(_, &x)| x == g).all(|(r, _)| part.contains(&r)));
            }
        }
        assert!(split_indices(10, 5, &SplitScheme::ByTrajectory, Some(&groups)).is_err());
    }

    #[test]
    fn dirichlet_split_is_a_seeded_partition() {
        let s = SplitScheme::Dirichlet { alpha: 0.1, seed: 5 };
        let p = split_indices(50, 4, &s, None).unwrap();
        let mut all: Vec<usize> = p.concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert!(p.iter().all(|x| !x.is_empty()));
        assert_eq!(p, split_indices(50, 4, &s, None).unwrap());
    }
}
