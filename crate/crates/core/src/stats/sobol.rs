//! Variance-based sensitivity indices from a Saltelli cross-sampling design.
//!
//! With base matrices `A`, `B` (rows from a scrambled Sobol sequence of
//! dimension `2D`), `A_B⁽ʲ⁾` = `A` with column `j` taken from `B` and
//! `B_A⁽ʲ⁾` = `B` with column `j` taken from `A`, and `V = var([f(A); f(B)])`:
//!
//! * `S1ⱼ = mean(f(B)·(f(A_B⁽ʲ⁾) − f(A))) / V` (Saltelli 2010)
//! * `STⱼ = mean((f(A) − f(A_B⁽ʲ⁾))²) / (2V)` (Jansen)
//! * `S2ⱼₖ = mean(f(B_A⁽ʲ⁾)·f(A_B⁽ᵏ⁾) − f(A)·f(B)) / V − S1ⱼ − S1ₖ`
//!
//! Confidence intervals are percentile intervals over bootstrap replicates
//! that resample design rows.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qmc::{SobolSequence, MAX_DIMS};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, label_key, rng_from_seed};

/// Output variance at or below this is treated as a constant function.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SobolConfig {
    /// Base sample count N, a power of two ≥ 64.
    pub base_samples: usize,
    pub bootstrap: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for SobolConfig {
    fn default() -> Self {
        Self {
            base_samples: 1 << 14,
            bootstrap: 200,
            confidence: 0.95,
            seed: 0,
        }
    }
}

impl SobolConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.base_samples;
        if n < 64 || !n.is_power_of_two() {
            return Err(Error::domain(format!("Sobol base sample count must be a power of two ≥ 64, got {n}")));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::domain("confidence level must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Closed interval `[lo, hi]`.
pub type Interval = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolCi {
    pub s1: Vec<Interval>,
    pub st: Vec<Interval>,
    pub s2: Vec<Vec<Option<Interval>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolResult {
    pub names: Vec<String>,
    pub s1: Vec<f64>,
    pub st: Vec<f64>,
    /// Symmetric; the diagonal is unset.
    pub s2: Vec<Vec<Option<f64>>>,
    pub ci: SobolCi,
    #[serde(rename = "N")]
    pub n: usize,
    pub variance: f64,
    pub degenerate: bool,
    pub surrogate_r2: Option<f64>,
    pub caveats: Vec<String>,
}

impl SobolResult {
    pub(crate) fn zeros(names: Vec<String>, n: usize, variance: f64) -> Self {
        let d = names.len();
        let s2 = (0..d).map(|j| (0..d).map(|k| (j != k).then_some(0.0)).collect()).collect();
        let s2ci = (0..d).map(|j| (0..d).map(|k| (j != k).then_some([0.0, 0.0])).collect()).collect();
        Self {
            names,
            s1: vec![0.0; d],
            st: vec![0.0; d],
            s2,
            ci: SobolCi {
                s1: vec![[0.0, 0.0]; d],
                st: vec![[0.0, 0.0]; d],
                s2: s2ci,
            },
            n,
            variance,
            degenerate: true,
            surrogate_r2: None,
            caveats: Vec::new(),
        }
    }

    /// Half-width of the first-order interval of input `j`.
    pub fn s1_half_width(&self, j: usize) -> f64 {
        (self.ci.s1[j][1] - self.ci.s1[j][0]) / 2.0
    }

    pub fn st_half_width(&self, j: usize) -> f64 {
        (self.ci.st[j][1] - self.ci.st[j][0]) / 2.0
    }
}

/// Model evaluations on the Saltelli design.
struct Design {
    d: usize,
    fa: Vec<f64>,
    fb: Vec<f64>,
    /// `fab[j][i]` = f on row `i` of `A_B⁽ʲ⁾`.
    fab: Vec<Vec<f64>>,
    fba: Vec<Vec<f64>>,
}

struct Estimates {
    s1: Vec<f64>,
    st: Vec<f64>,
    s2: Vec<Vec<f64>>,
}

fn population_variance(a: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, s) = a.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    let mean = s / n as f64;
    a.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64
}

impl Design {
    /// Estimators over the row multiset `rows` (all rows when `None`).
    fn estimate(&self, rows: Option<&[usize]>) -> Option<Estimates> {
        let n = self.fa.len();
        let idx: Vec<usize> = rows.map_or_else(|| (0..n).collect(), <[usize]>::to_vec);
        let m = idx.len() as f64;
        let v = population_variance(idx.iter().map(|&i| self.fa[i]).chain(idx.iter().map(|&i| self.fb[i])));
        if v <= DEGENERATE_VARIANCE {
            return None;
        }
        let mut s1 = vec![0.0; self.d];
        let mut st = vec![0.0; self.d];
        for j in 0..self.d {
            let (mut a1, mut at) = (0.0, 0.0);
            for &i in &idx {
                let (fa, fb, fab) = (self.fa[i], self.fb[i], self.fab[j][i]);
                a1 += fb * (fab - fa);
                at += (fa - fab) * (fa - fab);
            }
            s1[j] = a1 / m / v;
            st[j] = at / m / (2.0 * v);
        }
        let mut s2 = vec![vec![0.0; self.d]; self.d];
        for j in 0..self.d {
            for k in j + 1..self.d {
                let mut acc = 0.0;
                for &i in &idx {
                    acc += self.fba[j][i] * self.fab[k][i] - self.fa[i] * self.fb[i];
                }
                let val = acc / m / v - s1[j] - s1[k];
                s2[j][k] = val;
                s2[k][j] = val;
            }
        }
        Some(Estimates { s1, st, s2 })
    }
}

fn percentile_interval(mut xs: Vec<f64>, confidence: f64) -> Interval {
    xs.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (xs.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
    };
    let tail = (1.0 - confidence) / 2.0;
    [q(tail), q(1.0 - tail)]
}

/// Sobol indices of `f` under independent uniform inputs on `domain`.
/// Evaluations run in parallel; results do not depend on scheduling.
pub fn sobol_indices<F>(f: F, domain: &[(f64, f64)], names: &[String], cfg: &SobolConfig) -> Result<SobolResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let d = domain.len();
    if d == 0 || 2 * d > MAX_DIMS {
        return Err(Error::domain(format!("Sobol analysis supports 1..={} inputs, got {d}", MAX_DIMS / 2)));
    }
    if names.len() != d {
        return Err(Error::domain("one name per input is required"));
    }
    for (j, &(lo, hi)) in domain.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::domain(format!("degenerate range [{lo}, {hi}] for input {}", names[j])));
        }
    }
    let n = cfg.base_samples;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[label_key("sobol-scramble")]));
    let base = SobolSequence::scrambled(2 * d, &mut rng)?.points(n);
    let scale = |u: f64, j: usize| domain[j].0 + u * (domain[j].1 - domain[j].0);
    let a: Vec<Vec<f64>> = base.iter().map(|p| (0..d).map(|j| scale(p[j], j)).collect()).collect();
    let b: Vec<Vec<f64>> = base.iter().map(|p| (0..d).map(|j| scale(p[d + j], j)).collect()).collect();

    let eval = |rows: &[Vec<f64>]| -> Vec<f64> { rows.par_iter().map(|x| f(x)).collect() };
    let swap = |target: &[Vec<f64>], source: &[Vec<f64>], j: usize| -> Vec<Vec<f64>> {
        target
            .iter()
            .zip(source)
            .map(|(t, s)| {
                let mut r = t.clone();
                r[j] = s[j];
                r
            })
            .collect()
    };
    let fa = eval(&a);
    let fb = eval(&b);
    let fab: Vec<Vec<f64>> = (0..d).map(|j| eval(&swap(&a, &b, j))).collect();
    let fba: Vec<Vec<f64>> = (0..d).map(|j| eval(&swap(&b, &a, j))).collect();
    if fa.iter().chain(&fb).chain(fab.iter().flatten()).chain(fba.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("model output is not finite on the Sobol design".into()));
    }
    let design = Design { d, fa, fb, fab, fba };
    let variance = population_variance(design.fa.iter().chain(&design.fb).copied());
    let names = names.to_vec();
    let Some(point) = design.estimate(None) else {
        return Ok(SobolResult::zeros(names, n, variance));
    };

    let mut boot_rng = rng_from_seed(derive_seed(cfg.seed, &[label_key("sobol-bootstrap")]));
    let replicates: Vec<Vec<usize>> = (0..cfg.bootstrap)
        .map(|_| (0..n).map(|_| boot_rng.random_range(0..n)).collect())
        .collect();
    let boots: Vec<Estimates> = replicates
        .par_iter()
        .filter_map(|rows| design.estimate(Some(rows)))
        .collect();
    let ci_of = |get: &dyn Fn(&Estimates) -> f64, fallback: f64| -> Interval {
        if boots.is_empty() {
            [fallback, fallback]
        } else {
            percentile_interval(boots.iter().map(get).collect(), cfg.confidence)
        }
    };
    let ci = SobolCi {
        s1: (0..d).map(|j| ci_of(&|e| e.s1[j], point.s1[j])).collect(),
        st: (0..d).map(|j| ci_of(&|e| e.st[j], point.st[j])).collect(),
        s2: (0..d)
            .map(|j| (0..d).map(|k| (j != k).then(|| ci_of(&|e| e.s2[j][k], point.s2[j][k]))).collect())
            .collect(),
    };
    Ok(SobolResult {
        names,
        s1: point.s1,
        st: point.st,
        s2: (0..d)
            .map(|j| (0..d).map(|k| (j != k).then_some(point.s2[j][k])).collect())
            .collect(),
        ci,
        n,
        variance,
        degenerate: false,
        surrogate_r2: None,
        caveats: Vec::new(),
    })
}
