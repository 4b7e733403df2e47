use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::ContrastiveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MiningStrategy {
    /// Farthest positive, nearest negative.
    Hard,
    /// Farthest positive, nearest negative inside `(d_ap, d_ap + margin)`;
    /// falls back to the nearest negative when that window is empty.
    HardPositiveSemiHardNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[allow(clippy::needless_range_loop)]
fn squared_distances(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    let n = x.nrows();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// One triple per anchor that has at least one positive and one negative.
/// Distances are squared Euclidean; ties resolve to the lowest row index.
pub fn mine_triplets(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    strategy: MiningStrategy,
    margin: f64,
) -> Result<Vec<Triplet>, ContrastiveError> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(ContrastiveError::DimensionMismatch { expected: n, got: labels.len() });
    }
    let dist = squared_distances(embeddings);
    let mut out = Vec::new();
    for a in 0..n {
        let mut positive: Option<usize> = None;
        let mut hardest_neg: Option<usize> = None;
        for k in (0..n).filter(|&k| k != a) {
            if labels[k] == labels[a] {
                if positive.is_none_or(|p| dist[a][k] > dist[a][p]) {
                    positive = Some(k);
                }
            } else if hardest_neg.is_none_or(|q| dist[a][k] < dist[a][q]) {
                hardest_neg = Some(k);
            }
        }
        let (Some(p), Some(hard)) = (positive, hardest_neg) else {
            continue;
        };
        let negative = match strategy {
            MiningStrategy::Hard => hard,
            MiningStrategy::HardPositiveSemiHardNegative => {
                let d_ap = dist[a][p];
                (0..n)
                    .filter(|&k| labels[k] != labels[a])
                    .filter(|&k| dist[a][k] > d_ap && dist[a][k] < d_ap + margin)
                    .fold(None, |best: Option<usize>, k| match best {
                        Some(b) if dist[a][b] <= dist[a][k] => Some(b),
                        _ => Some(k),
                    })
                    .unwrap_or(hard)
            }
        };
        out.push(Triplet { anchor: a, positive: p, negative });
    }
    if out.is_empty() {
        return Err(ContrastiveError::NoValidTriplets);
    }
    Ok(out)
}
