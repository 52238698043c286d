#![allow(dead_code)]

pub mod oracles;

use ivrobust::basis::BasisSpec;
use ivrobust::dataset::{ColumnMapping, Dataset};
use ivrobust::rng::{Domain, StreamRng};
use ivrobust::simlab::Generator;

pub type Mat = Vec<Vec<f64>>;

pub fn names() -> ColumnMapping {
    ColumnMapping::new("y", "x", &["z"], &["v"])
}

pub fn basis(text: &str) -> BasisSpec {
    BasisSpec::parse(text, &names()).unwrap()
}

/// Gaussian elimination with partial pivoting; independent of the library's factorizations.
#[allow(clippy::needless_range_loop)]
pub fn solve(mut a: Mat, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| solve(a.clone(), (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()))
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            (0..b[0].len())
                .map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                .collect()
        })
        .collect()
}

pub fn matvec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// Rows `[c_1(i), c_2(i), ...]` from column slices.
pub fn columns(cols: &[&[f64]]) -> Mat {
    (0..cols[0].len())
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect()
}

pub fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn table1(n: usize, seed: u64) -> Dataset {
    Generator::Table1 {
        lx: 0.0,
        ly: 0.0,
        lz: 0.0,
    }
    .generate(n, seed)
    .unwrap()
    .dataset
}

/// A small dataset with a binary instrument, continuous exposure and one covariate.
pub fn toy(n: usize, seed: u64) -> Dataset {
    let mut rng = StreamRng::new(seed, Domain::Auxiliary, 0);
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut v = Vec::new();
    for i in 0..n {
        let vi = rng.normal();
        // Both instrument classes appear whatever the seed.
        let zi = if i < 2 {
            i as f64
        } else {
            rng.bernoulli(expit(-0.3 + 0.6 * vi))
        };
        let u = rng.normal();
        let xi = 1.5 * zi + 0.7 * vi + u + 0.5 * rng.normal();
        y.push(0.8 * xi + vi - u + rng.normal());
        x.push(xi);
        z.push(zi);
        v.push(vi);
    }
    Dataset::from_columns(&y, &x, &z, &[&v]).unwrap()
}
