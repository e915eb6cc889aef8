//! Sparse solvers that sharpen SRP maps (or raw measurements) into
//! high-resolution source maps: multidimensional M-SBL on SRP tensors,
//! simultaneous OMP on averaged maps, and M-SBL directly on microphone
//! spectra.

mod msbl;
mod somp;

pub use msbl::{
    msbl_direct_solve, msbl_solve, msbl_solve_detailed, msbl_update, IterationRecord,
    MsblConfig, MsblProblem, MsblSolution, MsblState,
};
pub use somp::{somp_solve, somp_solve_detailed, SompResult};

/// Which solver produced a sparse map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverTag {
    /// Multidimensional M-SBL on the SRP tensor.
    SrpSbl,
    /// Simultaneous OMP on the averaged SRP map.
    SrpSomp,
    /// M-SBL directly on microphone measurements.
    DirectSbl,
}

impl std::fmt::Display for SolverTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SolverTag::SrpSbl => "srp_sbl",
            SolverTag::SrpSomp => "srp_somp",
            SolverTag::DirectSbl => "direct_sbl",
        };
        f.write_str(name)
    }
}

/// Nonnegative per-fine-candidate weights aligned with the fine grid.
#[derive(Debug, Clone)]
pub struct SparseMap {
    pub weights: Vec<f64>,
    pub solver_tag: SolverTag,
}

impl SparseMap {
    /// Indices of the `n` largest weights, descending, ties toward lower
    /// indices.
    pub fn top_indices(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.weights.len()).collect();
        idx.sort_by(|&a, &b| {
            self.weights[b]
                .partial_cmp(&self.weights[a])
                .expect("weights are finite")
                .then(a.cmp(&b))
        });
        idx.truncate(n);
        idx
    }
}
