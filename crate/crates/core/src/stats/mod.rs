//! Correlation analysis and Sobol sensitivity analysis of experiment records.

pub mod correlation;
pub mod qmc;
pub mod sobol;
pub mod surrogate;

pub use correlation::{
    average_ranks, correlation_table, pearson, records_by_model, spearman, CorrelationEntry, CorrelationMethod,
    CorrelationTable, ExperimentRecord, MIN_CORRELATION_RECORDS,
};
pub use qmc::SobolSequence;
pub use sobol::{sobol_indices, Interval, SobolCi, SobolConfig, SobolResult};
pub use surrogate::{fit_surrogate, QuadraticSurrogate, RawQuadratic, SurrogateConfig, SurrogateOrder};

use crate::error::{Error, Result};
use crate::features::FEATURE_NAMES;

pub const INDEPENDENCE_CAVEAT: &str = "indices decompose the fitted surrogate under independent uniform inputs over \
the observed feature box; correlations between structural features are ignored";

/// Sobol indices of MRR with respect to the six structural features, via a
/// quadratic surrogate fitted to `records` (one model kind). Feature domains
/// are the observed `[min, max]`; constant features get zero indices.
pub fn sobol_over_records(
    records: &[ExperimentRecord],
    sobol: &SobolConfig,
    surrogate: &SurrogateConfig,
) -> Result<SobolResult> {
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.model != first.model) {
            return Err(Error::domain("records for Sobol analysis must share one model kind"));
        }
    }
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| (*s).to_owned()).collect();
    let x: Vec<Vec<f64>> = records.iter().map(|r| r.features.to_array().to_vec()).collect();
    let y: Vec<f64> = records.iter().map(|r| r.mrr).collect();
    let fit = fit_surrogate(&x, &y, &names, surrogate)?;

    let mut caveats = vec![INDEPENDENCE_CAVEAT.to_owned()];
    if fit.order == SurrogateOrder::Separable {
        caveats.push(format!(
            "only {} records: separable quadratic surrogate without interaction terms, so second-order indices \
             estimate zero",
            fit.records
        ));
    }
    for j in (0..names.len()).filter(|j| !fit.active.contains(j)) {
        caveats.push(format!("{} is constant across records; its indices are reported as 0", names[j]));
    }

    let d = names.len();
    let mut full = if fit.active.is_empty() {
        sobol.validate()?;
        SobolResult::zeros(names.clone(), sobol.base_samples, 0.0)
    } else {
        let domain: Vec<(f64, f64)> = fit
            .active
            .iter()
            .map(|&j| {
                let col = x.iter().map(|r| r[j]);
                (col.clone().fold(f64::INFINITY, f64::min), col.fold(f64::NEG_INFINITY, f64::max))
            })
            .collect();
        let active_names: Vec<String> = fit.active.iter().map(|&j| names[j].clone()).collect();
        let sub = sobol_indices(
            |z| {
                let mut v = vec![0.0; d];
                for (k, &j) in fit.active.iter().enumerate() {
                    v[j] = z[k];
                }
                fit.predict(&v)
            },
            &domain,
            &active_names,
            sobol,
        )?;
        expand(sub, &fit.active, d)
    };
    full.names = names;
    full.surrogate_r2 = Some(fit.r2);
    full.caveats = caveats;
    Ok(full)
}

/// Embeds indices over `active` inputs into a `d`-input result with zeros.
fn expand(sub: SobolResult, active: &[usize], d: usize) -> SobolResult {
    let pos = |j: usize| active.iter().position(|&a| a == j);
    let mut out = SobolResult {
        names: Vec::new(),
        s1: vec![0.0; d],
        st: vec![0.0; d],
        s2: (0..d).map(|j| (0..d).map(|k| (j != k).then_some(0.0)).collect()).collect(),
        ci: SobolCi {
            s1: vec![[0.0, 0.0]; d],
            st: vec![[0.0, 0.0]; d],
            s2: (0..d).map(|j| (0..d).map(|k| (j != k).then_some([0.0, 0.0])).collect()).collect(),
        },
        n: sub.n,
        variance: sub.variance,
        degenerate: sub.degenerate,
        surrogate_r2: sub.surrogate_r2,
        caveats: Vec::new(),
    };
    for j in 0..d {
        let Some(p) = pos(j) else { continue };
        out.s1[j] = sub.s1[p];
        out.st[j] = sub.st[p];
        out.ci.s1[j] = sub.ci.s1[p];
        out.ci.st[j] = sub.ci.st[p];
        for k in 0..d {
            if let (Some(q), true) = (pos(k), j != k) {
                out.s2[j][k] = sub.s2[p][q];
                out.ci.s2[j][k] = sub.ci.s2[p][q];
            }
        }
    }
    out
}
