use serde::{Deserialize, Serialize};

/// k-nearest neighbours under the Minkowski distance. Equal distances are
/// resolved by training-row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub p: f64,
    pub rows: Vec<Vec<f64>>,
    pub valid: Vec<bool>,
}

pub fn minkowski(a: &[f64], b: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        return a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
    }
    if p == 1.0 {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

impl Knn {
    pub fn fit(rows: &[Vec<f64>], valid: &[bool], k: usize, p: f64) -> Knn {
        Knn {
            k,
            p,
            rows: rows.to_vec(),
            valid: valid.to_vec(),
        }
    }

    /// Fraction of the k nearest training rows that are valid.
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (minkowski(r, x, self.p), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = self.k.min(d.len());
        let valid = d[..k].iter().filter(|(_, i)| self.valid[*i]).count();
        valid as f64 / k as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances() {
        assert_eq!(minkowski(&[0.0, 0.0], &[3.0, 4.0], 2.0), 5.0);
        assert_eq!(minkowski(&[0.0, 0.0], &[3.0, 4.0], 1.0), 7.0);
        assert!((minkowski(&[0.0, 0.0], &[3.0, 4.0], 3.0) - 91f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn two_neighbours_split() {
        let m = Knn::fit(
            &[vec![0.0], vec![2.0], vec![10.0]],
            &[true, false, true],
            2,
            2.0,
        );
        assert_eq!(m.score(&[1.0]), 0.5);
    }
}
