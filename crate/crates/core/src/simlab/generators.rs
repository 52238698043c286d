//! Simulation designs. Each row draws, in order: latent `U`, covariate `V`,
//! the instrument, the exposure, then the outcome noise. `U` is not returned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{expit, normal_cdf};
use crate::rng::{Domain, StreamRng};

/// Generated data with the true effect parameter.
#[derive(Debug, Clone)]
pub struct SimData {
    pub dataset: Dataset,
    pub psi_true: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Binary exposure, instrument independent of covariates.
    Sim1,
    /// Binary exposure, instrument depending on the covariate.
    Sim2,
    /// Continuous exposure with effect modification by `V`.
    EffectMod,
    Table1 {
        lx: f64,
        ly: f64,
        lz: f64,
    },
    Extreme {
        lx: f64,
        ly: f64,
        lz: f64,
    },
}

impl Generator {
    pub fn psi_true(&self) -> DVector<f64> {
        match self {
            Generator::Sim1 | Generator::Sim2 => DVector::from_element(1, 0.5),
            Generator::EffectMod => DVector::from_vec(vec![0.5, 1.0]),
            Generator::Table1 { .. } | Generator::Extreme { .. } => DVector::from_element(1, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Generator::Table1 { lx, ly, lz } | Generator::Extreme { lx, ly, lz } = self {
            for v in [lx, ly, lz] {
                if ![-1.0, 0.0, 1.0].contains(v) {
                    return Err(Error::InvalidInput(format!(
                        "lambda values must be -1, 0 or 1, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Short identifier such as `table1(1,0,-1)`.
    pub fn label(&self) -> String {
        match self {
            Generator::Sim1 => "sim1".into(),
            Generator::Sim2 => "sim2".into(),
            Generator::EffectMod => "effectmod".into(),
            Generator::Table1 { lx, ly, lz } => format!("table1({lx},{ly},{lz})"),
            Generator::Extreme { lx, ly, lz } => format!("extreme({lx},{ly},{lz})"),
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<SimData> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidInput("sample size must be at least 1".into()));
        }
        let mut rng = StreamRng::new(seed, Domain::Data, 0);
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let (yi, xi, zi, vi) = self.draw_row(&mut rng);
            y.push(yi);
            x.push(xi);
            z.push(zi);
            v.push(vi);
        }
        let dataset = Dataset::new(
            DVector::from_vec(y),
            DVector::from_vec(x),
            DMatrix::from_vec(n, 1, z),
            DMatrix::from_vec(n, 1, v),
        )?;
        Ok(SimData {
            dataset,
            psi_true: self.psi_true(),
        })
    }

    fn draw_row(&self, rng: &mut StreamRng) -> (f64, f64, f64, f64) {
        let u = rng.normal();
        let v = rng.normal();
        match *self {
            Generator::Sim1 => {
                let z = rng.bernoulli(0.27);
                let x = rng.bernoulli(normal_cdf(z + u + v));
                let y = 0.5 * x - u - 2.0 * v + v * v + rng.normal();
                (y, x, z, v)
            }
            Generator::Sim2 => {
                let z = rng.bernoulli(expit(-1.0 + v / 2.0));
                let x = rng.bernoulli(normal_cdf(z + u + v - z * v + v * v / 2.0));
                let y = 0.5 * x - u - 2.0 * v + v * v + rng.normal();
                (y, x, z, v)
            }
            Generator::EffectMod => {
                let z = rng.bernoulli(0.27);
                let x = 2.0 * z + v + u - z * v + 0.5 * v * v + rng.normal();
                let y = 0.5 * x + x * v - u - 2.0 * v + v * v + rng.normal();
                (y, x, z, v)
            }
            Generator::Table1 { lx, ly, lz } => {
                let v2 = v * v;
                let z = rng.bernoulli(expit(-1.0 + v / 2.0 + lz * v2 / 3.0));
                let x = z + u + v - z * v + lx * v2 + rng.normal();
                let y = x - u - v + ly * v2 + rng.normal();
                (y, x, z, v)
            }
            Generator::Extreme { lx, ly, lz } => {
                let v2 = v * v;
                let v3 = v2 * v;
                let p = 1.0 - (-(-1.0 + v / 2.0 - v2 / 2.0 + lz * v2 / 8.0).exp()).exp();
                let z = rng.bernoulli(p);
                let x = z + u + v - z * v + 2.0 * v2 + 2.0 * z * v2 + 2.0 * lx * v3 + rng.normal();
                let y = x - u - v - 2.0 * v2 + 2.0 * ly * v3 + rng.normal();
                (y, x, z, v)
            }
        }
    }
}

pub fn gen_sim1(n: usize, seed: u64) -> Result<SimData> {
    Generator::Sim1.generate(n, seed)
}

pub fn gen_sim2(n: usize, seed: u64) -> Result<SimData> {
    Generator::Sim2.generate(n, seed)
}

pub fn gen_effectmod(n: usize, seed: u64) -> Result<SimData> {
    Generator::EffectMod.generate(n, seed)
}

pub fn gen_table1(lx: f64, ly: f64, lz: f64, n: usize, seed: u64) -> Result<SimData> {
    Generator::Table1 { lx, ly, lz }.generate(n, seed)
}

pub fn gen_extreme(lx: f64, ly: f64, lz: f64, n: usize, seed: u64) -> Result<SimData> {
    Generator::Extreme { lx, ly, lz }.generate(n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let a = gen_table1(1.0, 0.0, -1.0, 50, 9).unwrap();
        let b = gen_table1(1.0, 0.0, -1.0, 50, 9).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = gen_table1(1.0, 0.0, -1.0, 50, 10).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn lambda_grid_enforced() {
        assert!(gen_extreme(2.0, 0.0, 0.0, 10, 1).is_err());
    }
}
