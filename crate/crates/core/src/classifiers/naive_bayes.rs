use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussian {
    pub prior: f64,
    pub means: Vec<f64>,
    /// Population variances plus the floor.
    pub vars: Vec<f64>,
}

impl ClassGaussian {
    fn fit(rows: &[&Vec<f64>], prior: f64, var_floor: f64) -> Self {
        let n = rows.len() as f64;
        let d = rows[0].len();
        let means: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let vars = (0..d)
            .map(|j| rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n + var_floor)
            .collect();
        ClassGaussian { prior, means, vars }
    }

    /// ln p(class) + Σ ln N(x_j; mean_j, var_j)
    pub fn log_joint(&self, x: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.prior.ln()
            + x.iter()
                .zip(self.means.iter().zip(&self.vars))
                .map(|(v, (m, s2))| -0.5 * (ln_2pi + s2.ln() + (v - m).powi(2) / s2))
                .sum::<f64>()
    }
}

/// Gaussian naive Bayes over the two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub valid: ClassGaussian,
    pub imposter: ClassGaussian,
}

impl GaussianNb {
    /// Both classes must be present in `labels`.
    pub fn fit(rows: &[Vec<f64>], valid: &[bool], var_floor: f64) -> GaussianNb {
        let (v, i): (Vec<_>, Vec<_>) = rows.iter().zip(valid).partition(|(_, l)| **l);
        let v: Vec<&Vec<f64>> = v.into_iter().map(|(r, _)| r).collect();
        let i: Vec<&Vec<f64>> = i.into_iter().map(|(r, _)| r).collect();
        let n = rows.len() as f64;
        GaussianNb {
            valid: ClassGaussian::fit(&v, v.len() as f64 / n, var_floor),
            imposter: ClassGaussian::fit(&i, i.len() as f64 / n, var_floor),
        }
    }

    /// Posterior probability of the valid class.
    pub fn score(&self, x: &[f64]) -> f64 {
        let lv = self.valid.log_joint(x);
        let li = self.imposter.log_joint(x);
        1.0 / (1.0 + (li - lv).exp())
    }
}
