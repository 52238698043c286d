//! Basis expansion: ordered term lists evaluated into design matrices.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// One column of a design matrix, evaluated pointwise on each row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    /// Raw covariate column.
    Raw(usize),
    /// Covariate column raised to an integer power.
    Power(usize, u32),
    Product(Box<Term>, Box<Term>),
    InstrumentColumn(usize),
    /// Instrument column times another term.
    InstrumentByTerm(usize, Box<Term>),
}

impl Term {
    pub fn product(a: Term, b: Term) -> Term {
        Term::Product(Box::new(a), Box::new(b))
    }

    pub fn instrument_by(j: usize, t: Term) -> Term {
        Term::InstrumentByTerm(j, Box::new(t))
    }

    fn eval(&self, z: &[f64], c: &[f64]) -> f64 {
        match self {
            Term::Intercept => 1.0,
            Term::Raw(i) => c[*i],
            Term::Power(i, k) => c[*i].powi(*k as i32),
            Term::Product(a, b) => a.eval(z, c) * b.eval(z, c),
            Term::InstrumentColumn(j) => z[*j],
            Term::InstrumentByTerm(j, t) => z[*j] * t.eval(z, c),
        }
    }

    pub fn uses_instruments(&self) -> bool {
        match self {
            Term::Intercept | Term::Raw(_) | Term::Power(..) => false,
            Term::InstrumentColumn(_) | Term::InstrumentByTerm(..) => true,
            Term::Product(a, b) => a.uses_instruments() || b.uses_instruments(),
        }
    }

    fn check(&self, q: usize, r: usize) -> Result<()> {
        match self {
            Term::Intercept => Ok(()),
            Term::Raw(i) | Term::Power(i, _) if *i >= r => Err(Error::Spec(format!(
                "covariate index {i} out of range (dataset has {r})"
            ))),
            Term::Raw(_) | Term::Power(..) => Ok(()),
            Term::InstrumentColumn(j) if *j >= q => Err(Error::Spec(format!(
                "instrument index {j} out of range (dataset has {q})"
            ))),
            Term::InstrumentColumn(_) => Ok(()),
            Term::InstrumentByTerm(j, t) => {
                if *j >= q {
                    return Err(Error::Spec(format!(
                        "instrument index {j} out of range (dataset has {q})"
                    )));
                }
                t.check(q, r)
            }
            Term::Product(a, b) => {
                a.check(q, r)?;
                b.check(q, r)
            }
        }
    }

    /// Splits the term as `monomial(Z) * g(C)`: the returned list holds the
    /// instrument indices of the monomial (with repetition), the term is `g`.
    pub(crate) fn split_instruments(&self) -> (Vec<usize>, Term) {
        match self {
            Term::Intercept | Term::Raw(_) | Term::Power(..) => (Vec::new(), self.clone()),
            Term::InstrumentColumn(j) => (vec![*j], Term::Intercept),
            Term::InstrumentByTerm(j, t) => {
                let (mut zs, g) = t.split_instruments();
                zs.insert(0, *j);
                (zs, g)
            }
            Term::Product(a, b) => {
                let (mut za, ga) = a.split_instruments();
                let (zb, gb) = b.split_instruments();
                za.extend(zb);
                let g = match (ga, gb) {
                    (Term::Intercept, g) | (g, Term::Intercept) => g,
                    (ga, gb) => Term::product(ga, gb),
                };
                (za, g)
            }
        }
    }

    /// Human-readable label using the dataset's column names.
    pub fn label(&self, data_names: &crate::dataset::ColumnMapping) -> String {
        match self {
            Term::Intercept => "1".into(),
            Term::Raw(i) => data_names
                .covariates
                .get(*i)
                .cloned()
                .unwrap_or_else(|| format!("c{i}")),
            Term::Power(i, k) => format!("{}^{k}", Term::Raw(*i).label(data_names)),
            Term::Product(a, b) => format!("{}*{}", a.label(data_names), b.label(data_names)),
            Term::InstrumentColumn(j) => data_names.z.get(*j).cloned().unwrap_or_else(|| format!("z{j}")),
            Term::InstrumentByTerm(j, t) => {
                format!(
                    "{}*{}",
                    Term::InstrumentColumn(*j).label(data_names),
                    t.label(data_names)
                )
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "1"),
            Term::Raw(i) => write!(f, "c[{i}]"),
            Term::Power(i, k) => write!(f, "c[{i}]^{k}"),
            Term::Product(a, b) => write!(f, "{a}*{b}"),
            Term::InstrumentColumn(j) => write!(f, "z[{j}]"),
            Term::InstrumentByTerm(j, t) => write!(f, "z[{j}]*{t}"),
        }
    }
}

/// Ordered list of terms; evaluating it yields an `n x p` design.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BasisSpec {
    pub terms: Vec<Term>,
}

impl BasisSpec {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn intercept() -> Self {
        Self::new(vec![Term::Intercept])
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn uses_instruments(&self) -> bool {
        self.terms.iter().any(Term::uses_instruments)
    }

    pub fn push(&mut self, term: Term) {
        self.terms.push(term);
    }

    /// Fails when any term references an instrument (for bases over C only).
    pub fn require_covariate_only(&self, role: &str) -> Result<()> {
        if self.uses_instruments() {
            return Err(Error::Spec(format!("the {role} basis must not reference instruments")));
        }
        Ok(())
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        self.terms.iter().try_for_each(|t| t.check(data.q(), data.r()))
    }

    /// Parses a comma-separated term list such as `1, v, v^2, z*v` against dataset names.
    pub fn parse(text: &str, names: &crate::dataset::ColumnMapping) -> Result<Self> {
        let terms = text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_term(s, names))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(terms))
    }

    pub fn parse_list(items: &[String], names: &crate::dataset::ColumnMapping) -> Result<Self> {
        let terms = items
            .iter()
            .map(|s| parse_term(s.trim(), names))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(terms))
    }
}

enum Factor {
    One,
    Cov(usize, u32),
    Inst(usize, u32),
}

fn parse_term(text: &str, names: &crate::dataset::ColumnMapping) -> Result<Term> {
    if text.is_empty() {
        return Err(Error::Spec("empty term".into()));
    }
    let mut factors = Vec::new();
    for raw in text.split('*') {
        let raw = raw.trim();
        let (name, power) = match raw.split_once('^') {
            Some((n, p)) => {
                let p: u32 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::Spec(format!("bad exponent in term `{text}`")))?;
                if p == 0 {
                    return Err(Error::Spec(format!("zero exponent in term `{text}`")));
                }
                (n.trim(), p)
            }
            None => (raw, 1),
        };
        if name == "1" {
            factors.push(Factor::One);
        } else if let Some(i) = names.covariates.iter().position(|c| c == name) {
            factors.push(Factor::Cov(i, power));
        } else if let Some(j) = names.z.iter().position(|c| c == name) {
            factors.push(Factor::Inst(j, power));
        } else {
            return Err(Error::Spec(format!("unknown column `{name}` in term `{text}`")));
        }
    }

    let mut covariate_part: Option<Term> = None;
    let mut instruments = Vec::new();
    for f in factors {
        match f {
            Factor::One => {}
            Factor::Cov(i, p) => {
                let t = if p == 1 { Term::Raw(i) } else { Term::Power(i, p) };
                covariate_part = Some(match covariate_part {
                    None => t,
                    Some(prev) => Term::product(prev, t),
                });
            }
            Factor::Inst(j, p) => instruments.extend(std::iter::repeat_n(j, p as usize)),
        }
    }
    let mut term = covariate_part.unwrap_or(Term::Intercept);
    match instruments.pop() {
        None => {}
        Some(last) => {
            term = if term == Term::Intercept {
                Term::InstrumentColumn(last)
            } else {
                Term::instrument_by(last, term)
            };
        }
    }
    while let Some(j) = instruments.pop() {
        term = Term::instrument_by(j, term);
    }
    Ok(term)
}

/// Evaluates `spec` on the dataset: column `j` is term `j` evaluated rowwise.
pub fn build_design(data: &Dataset, spec: &BasisSpec) -> Result<DMatrix<f64>> {
    build_design_with_instruments(data, spec, data.z())
}

/// As [`build_design`], but with the instrument columns replaced by `z`.
pub fn build_design_with_instruments(data: &Dataset, spec: &BasisSpec, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate(data)?;
    if z.nrows() != data.n() || z.ncols() != data.q() {
        return Err(Error::InvalidInput("instrument override has the wrong shape".into()));
    }
    let n = data.n();
    let c = data.covariates();
    let mut out = DMatrix::zeros(n, spec.len());
    let mut zrow = vec![0.0; z.ncols()];
    let mut crow = vec![0.0; c.ncols()];
    for i in 0..n {
        for (j, slot) in zrow.iter_mut().enumerate() {
            *slot = z[(i, j)];
        }
        for (j, slot) in crow.iter_mut().enumerate() {
            *slot = c[(i, j)];
        }
        for (k, term) in spec.terms.iter().enumerate() {
            out[(i, k)] = term.eval(&zrow, &crow);
        }
    }
    Ok(out)
}

/// Evaluates a single term as a column vector.
pub fn evaluate_term(data: &Dataset, term: &Term) -> Result<DVector<f64>> {
    let m = build_design(data, &BasisSpec::new(vec![term.clone()]))?;
    Ok(m.column(0).into_owned())
}
