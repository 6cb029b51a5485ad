//! Per-module invariant suites behind `fracdet verify`.
//!
//! Each suite re-checks its module's contract from the outside: oracle
//! comparisons, exactness identities, and finite-difference gradient sweeps
//! at the configured tolerances. Suites only read the run configuration and
//! return check entries; report assembly and IO stay in the command layer.

mod detector;
mod dfa;
mod flops;
mod mc;
mod tensor;

pub use detector::detector_suite;
pub use dfa::dfa_suite;
pub use flops::flops_suite;
pub use mc::mc_suite;
pub use tensor::tensor_suite;

use fracdet_core::gradcheck::{grad_check, GradCheckResult};
use fracdet_core::graph::{Graph, NodeId};
use fracdet_core::rng::Rng;
use fracdet_core::tensor::Tensor;
use fracdet_core::Result as CoreResult;

use crate::config::RunConfig;
use crate::report::CheckEntry;

/// Names of the suites `verify` accepts, besides `all`.
pub const SUITE_NAMES: [&str; 5] = ["tensor", "dfa", "mc", "flops", "detector"];

/// Runs one named suite.
pub fn run_suite(name: &str, config: &RunConfig) -> Option<Vec<CheckEntry>> {
    match name {
        "tensor" => Some(tensor_suite(config)),
        "dfa" => Some(dfa_suite(config)),
        "mc" => Some(mc_suite(config)),
        "flops" => Some(flops_suite(config)),
        "detector" => Some(detector_suite(config)),
        _ => None,
    }
}

pub(crate) fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::seeded(seed);
    let numel = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.uniform(-1.5, 1.5)).collect();
    Tensor::new(shape, data).expect("finite draw")
}

/// Random projection so weighted-sum losses exercise the full Jacobian.
pub(crate) fn projection(shape: &[usize], seed: u64) -> Tensor {
    rand_tensor(shape, seed ^ 0x50F7)
}

/// Worst gradient-check result over `seeds` random probes.
pub(crate) fn gradcheck_sweep<F>(
    config: &RunConfig,
    seeds: u64,
    make: F,
) -> (f64, bool)
where
    F: Fn(u64) -> (Tensor, Box<dyn Fn(&mut Graph, NodeId) -> CoreResult<NodeId>>),
{
    let mut worst = 0.0f64;
    let mut all_pass = true;
    for seed in 0..seeds {
        let (probe, f) = make(seed);
        let result: GradCheckResult =
            match grad_check(|g, x| f(g, x), &probe, config.tol_grad_step, config.tol_grad) {
                Ok(r) => r,
                Err(_) => {
                    return (f64::MAX, false);
                }
            };
        worst = worst.max(result.max_rel_err);
        all_pass &= result.passed;
    }
    (worst, all_pass)
}

/// Entry for a gradient sweep: measured worst relative error vs `tol.grad`.
pub(crate) fn gradcheck_entry(
    config: &RunConfig,
    id: &str,
    description: &str,
    sweep: (f64, bool),
) -> CheckEntry {
    let (worst, all_pass) = sweep;
    let mut entry = CheckEntry::within(id, description, worst, config.tol_grad);
    entry.pass &= all_pass;
    entry
}
