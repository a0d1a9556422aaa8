//! Finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Real;

/// Options for [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: Real,
    /// Relative-error threshold for a passing entry.
    pub tol: Real,
    /// Restrict the check to these parameters (all when `None`).
    pub params: Option<Vec<String>>,
    /// Cap on randomly chosen entries per parameter (all when `None`).
    pub max_entries_per_param: Option<usize>,
    /// Seed for the entry subsample.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            tol: 1e-4,
            params: None,
            max_entries_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: Real,
    pub numeric: Real,
    pub rel_error: Real,
}

/// Outcome of a gradient check over one scalar loss.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries_checked: usize,
    pub max_rel_error: Real,
    pub tol: Real,
    pub failures: Vec<GradCheckEntry>,
    /// Worst entry overall, failing or not.
    pub worst: Option<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_error(analytic: Real, numeric: Real) -> Real {
    (analytic - numeric).abs() / Real::max(1.0, Real::max(analytic.abs(), numeric.abs()))
}

/// Compare the analytic gradient of `loss` against central finite
/// differences, parameter entry by parameter entry.
///
/// The graph is re-evaluated with perturbed leaf values, so recorded noise
/// constants stay fixed across probes. Parameter values are restored before
/// returning.
pub fn grad_check(graph: &mut Graph, loss: NodeId, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let analytic = graph.backward(loss)?;
    let names: Vec<String> = match &opts.params {
        Some(subset) => subset.clone(),
        None => graph.param_names().map(str::to_string).collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        tol: opts.tol,
        ..Default::default()
    };

    for name in &names {
        let base = graph
            .param_value(name)
            .ok_or_else(|| crate::error::Error::contract(format!("unknown parameter {name:?}")))?
            .clone();
        let n = base.numel();
        let mut indices: Vec<usize> = (0..n).collect();
        if let Some(cap) = opts.max_entries_per_param {
            indices.shuffle(&mut rng);
            indices.truncate(cap);
            indices.sort_unstable();
        }

        for &i in &indices {
            let mut plus = base.clone();
            plus.data_mut()[i] += opts.h;
            graph.set_param(name, plus)?;
            graph.recompute()?;
            let f_plus = graph.value(loss).item();

            let mut minus = base.clone();
            minus.data_mut()[i] -= opts.h;
            graph.set_param(name, minus)?;
            graph.recompute()?;
            let f_minus = graph.value(loss).item();

            let numeric = (f_plus - f_minus) / (2.0 * opts.h);
            let a = analytic[name.as_str()].data()[i];
            let err = rel_error(a, numeric);

            let entry = GradCheckEntry {
                param: name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_error: err,
            };
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(entry.clone());
            }
            if err > opts.tol {
                report.failures.push(entry);
            }
            report.entries_checked += 1;
        }

        graph.set_param(name, base)?;
    }
    graph.recompute()?;
    Ok(report)
}
