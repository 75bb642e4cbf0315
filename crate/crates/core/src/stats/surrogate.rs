//! Quadratic response surface over structural features, fitted by least
//! squares in standardized coordinates.
//!
//! Features that are constant across the records carry no information and
//! are dropped from the fit. The full model has an intercept, linear,
//! square and pairwise-interaction terms (28 terms for six inputs); the
//! separable model omits the interactions and serves record counts too small
//! for the full one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FULL_MIN_RECORDS: usize = 30;
pub const SEPARABLE_MIN_RECORDS: usize = 15;
pub const DEFAULT_MIN_R2: f64 = 0.3;

/// Relative threshold on the R diagonal below which the design is rank
/// deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateOrder {
    /// Intercept, linear, square and pairwise-interaction terms.
    Full,
    /// Intercept, linear and square terms.
    Separable,
    /// `Full` with at least [`FULL_MIN_RECORDS`] records, `Separable` with at
    /// least [`SEPARABLE_MIN_RECORDS`].
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub order: SurrogateOrder,
    pub min_r2: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            order: SurrogateOrder::Auto,
            min_r2: DEFAULT_MIN_R2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSurrogate {
    /// `Full` or `Separable` (never `Auto`).
    pub order: SurrogateOrder,
    pub names: Vec<String>,
    /// Indices of the non-constant inputs that enter the fit.
    pub active: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Coefficients on the standardized basis, see [`Self::term_names`].
    pub coef: Vec<f64>,
    pub r2: f64,
    pub records: usize,
}

fn basis(order: SurrogateOrder, z: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(z);
    out.extend(z.iter().map(|v| v * v));
    if order == SurrogateOrder::Full {
        for i in 0..z.len() {
            for j in i + 1..z.len() {
                out.push(z[i] * z[j]);
            }
        }
    }
}

fn term_count(order: SurrogateOrder, d: usize) -> usize {
    match order {
        SurrogateOrder::Full => 1 + 2 * d + d * (d.saturating_sub(1)) / 2,
        _ => 1 + 2 * d,
    }
}

impl QuadraticSurrogate {
    /// Predicts from a full input vector (inactive entries are ignored).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = self
            .active
            .iter()
            .enumerate()
            .map(|(k, &j)| (x[j] - self.mean[k]) / self.std[k])
            .collect();
        let mut b = Vec::with_capacity(self.coef.len());
        basis(self.order, &z, &mut b);
        b.iter().zip(&self.coef).map(|(a, c)| a * c).sum()
    }

    /// Names of the basis terms, aligned with [`Self::coef`].
    pub fn term_names(&self) -> Vec<String> {
        let n: Vec<&str> = self.active.iter().map(|&j| self.names[j].as_str()).collect();
        let mut out = vec!["1".to_owned()];
        out.extend(n.iter().map(|s| (*s).to_owned()));
        out.extend(n.iter().map(|s| format!("{s}^2")));
        if self.order == SurrogateOrder::Full {
            for i in 0..n.len() {
                for j in i + 1..n.len() {
                    out.push(format!("{}*{}", n[i], n[j]));
                }
            }
        }
        out
    }

    /// Coefficients in raw (unstandardized) feature units over all inputs:
    /// `(intercept, linear[D], square[D], interaction[D][D])` with the
    /// interaction matrix upper triangular. Inactive inputs get zeros.
    pub fn raw_coefficients(&self) -> RawQuadratic {
        let d = self.names.len();
        let k = self.active.len();
        let mut raw = RawQuadratic {
            intercept: self.coef[0],
            linear: vec![0.0; d],
            square: vec![0.0; d],
            interaction: vec![vec![0.0; d]; d],
        };
        // z = a·x + o
        let a: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        let o: Vec<f64> = self.mean.iter().zip(&self.std).map(|(m, s)| -m / s).collect();
        for p in 0..k {
            let (j, b, q) = (self.active[p], self.coef[1 + p], self.coef[1 + k + p]);
            raw.linear[j] += b * a[p] + 2.0 * q * a[p] * o[p];
            raw.intercept += b * o[p] + q * o[p] * o[p];
            raw.square[j] += q * a[p] * a[p];
        }
        if self.order == SurrogateOrder::Full {
            let mut t = 1 + 2 * k;
            for p in 0..k {
                for r in p + 1..k {
                    let c = self.coef[t];
                    t += 1;
                    let (i, j) = (self.active[p], self.active[r]);
                    raw.interaction[i][j] += c * a[p] * a[r];
                    raw.linear[i] += c * a[p] * o[r];
                    raw.linear[j] += c * o[p] * a[r];
                    raw.intercept += c * o[p] * o[r];
                }
            }
        }
        raw
    }
}

/// A quadratic polynomial in raw feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQuadratic {
    pub intercept: f64,
    pub linear: Vec<f64>,
    pub square: Vec<f64>,
    /// Upper triangular: `interaction[i][j]` for `i < j`.
    pub interaction: Vec<Vec<f64>>,
}

impl RawQuadratic {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut y = self.intercept;
        for i in 0..x.len() {
            y += self.linear[i] * x[i] + self.square[i] * x[i] * x[i];
            for j in i + 1..x.len() {
                y += self.interaction[i][j] * x[i] * x[j];
            }
        }
        y
    }
}

/// Solves `min ‖X β − y‖` by Householder QR, rejecting rank-deficient `X`.
pub(crate) fn least_squares(x: DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let p = x.ncols();
    if x.nrows() < p {
        return Err(Error::RankDeficient(format!("{} rows for {p} unknowns", x.nrows())));
    }
    let qr = x.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if let Some(i) = (0..p).find(|&i| r[(i, i)].abs() <= RANK_TOL * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient(format!("column {i} is linearly dependent on earlier columns")));
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))
}

/// Fits the surrogate to rows `x` (one input vector per record) and `y`.
pub fn fit_surrogate(x: &[Vec<f64>], y: &[f64], names: &[String], cfg: &SurrogateConfig) -> Result<QuadraticSurrogate> {
    let n = y.len();
    if x.len() != n {
        return Err(Error::domain("one input row per response is required"));
    }
    let d = names.len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::domain(format!("every input row must have {d} entries")));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("surrogate inputs must be finite"));
    }
    let order = match cfg.order {
        SurrogateOrder::Auto if n >= FULL_MIN_RECORDS => SurrogateOrder::Full,
        SurrogateOrder::Auto | SurrogateOrder::Separable if n >= SEPARABLE_MIN_RECORDS => SurrogateOrder::Separable,
        SurrogateOrder::Full if n >= FULL_MIN_RECORDS => SurrogateOrder::Full,
        SurrogateOrder::Full => {
            return Err(Error::InsufficientRecords {
                what: "surrogate",
                have: n,
                need: FULL_MIN_RECORDS,
            })
        }
        _ => {
            return Err(Error::InsufficientRecords {
                what: "surrogate",
                have: n,
                need: SEPARABLE_MIN_RECORDS,
            })
        }
    };

    let mut active = Vec::new();
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for j in 0..d {
        let m = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let v = x.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n as f64;
        if x.iter().all(|r| r[j] == x[0][j]) || v == 0.0 {
            log::warn!("feature {} is constant across records; dropped from the surrogate", names[j]);
            continue;
        }
        active.push(j);
        mean.push(m);
        std.push(v.sqrt());
    }
    let k = active.len();
    let p = term_count(order, k);
    let mut design = DMatrix::zeros(n, p);
    let mut row = Vec::with_capacity(p);
    for (i, r) in x.iter().enumerate() {
        let z: Vec<f64> = active.iter().enumerate().map(|(q, &j)| (r[j] - mean[q]) / std[q]).collect();
        basis(order, &z, &mut row);
        for (c, v) in row.iter().enumerate() {
            design[(i, c)] = *v;
        }
    }
    let yv = DVector::from_column_slice(y);
    let coef = least_squares(design.clone(), &yv)?;
    let fitted = &design * &coef;
    let ym = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - ym) * (v - ym)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    if r2 < cfg.min_r2 {
        return Err(Error::WeakSurrogate { r2, min: cfg.min_r2 });
    }
    Ok(QuadraticSurrogate {
        order,
        names: names.to_vec(),
        active,
        mean,
        std,
        coef: coef.iter().copied().collect(),
        r2,
        records: n,
    })
}
