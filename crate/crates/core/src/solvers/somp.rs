//! Simultaneous orthogonal matching pursuit.
//!
//! Greedy support growth sharing one support across all measurement columns:
//! each round selects the column with the largest norm-compensated summed
//! correlation magnitude against the residual, then least-squares refits all
//! coefficients on the selected support.

use faer::prelude::Solve;
use faer::{Mat, Side};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::solvers::{SolverTag, SparseMap};

/// Relative residual level below which selection stops early.
const EARLY_STOP: f64 = 1e-12;

/// Detailed SOMP output.
#[derive(Debug, Clone)]
pub struct SompResult {
    pub map: SparseMap,
    /// Selected columns in selection order.
    pub support: Vec<usize>,
    /// Frobenius residual norm before selection and after each refit.
    pub residual_norms: Vec<f64>,
    /// Final coefficients, `support.len() × n_measurements`.
    pub coefficients: Array2<f64>,
}

/// Greedy sparse fit of `data` (`N × C`) against `dict` (`N × Q`); the
/// returned weights are the row norms of the refit coefficients.
pub fn somp_solve(data: &Array2<f64>, dict: &Array2<f64>, n_atoms: usize) -> Result<SparseMap> {
    Ok(somp_solve_detailed(data, dict, n_atoms)?.map)
}

pub fn somp_solve_detailed(
    data: &Array2<f64>,
    dict: &Array2<f64>,
    n_atoms: usize,
) -> Result<SompResult> {
    if n_atoms == 0 {
        return Err(Error::config("SOMP needs n_atoms ≥ 1"));
    }
    let (n, q) = dict.dim();
    if data.nrows() != n {
        return Err(Error::config(format!(
            "data rows {} do not match dictionary rows {n}",
            data.nrows()
        )));
    }
    let c = data.ncols();

    let column_norms: Vec<f64> = (0..q)
        .map(|j| dict.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(zero) = column_norms.iter().position(|&v| v == 0.0) {
        return Err(Error::config(format!("dictionary column {zero} is zero")));
    }

    let phi = Mat::from_fn(n, q, |i, j| dict[[i, j]]);
    let y = Mat::from_fn(n, c, |i, j| data[[i, j]]);
    let data_norm = y.norm_l2();

    let mut residual = y.clone();
    let mut residual_norms = vec![data_norm];
    let mut support: Vec<usize> = Vec::new();
    let mut selected = vec![false; q];
    let mut coeffs = Mat::<f64>::zeros(0, c);

    for _ in 0..n_atoms {
        // Score every unselected column against the residual.
        let corr = phi.transpose() * &residual; // Q × C
        let mut best = None;
        let mut best_score = 0.0;
        for j in 0..q {
            if selected[j] {
                continue;
            }
            let mut s = 0.0;
            for ci in 0..c {
                s += corr[(j, ci)].abs();
            }
            s /= column_norms[j];
            if s > best_score {
                best_score = s;
                best = Some(j);
            }
        }
        let Some(pick) = best else { break };
        if best_score <= EARLY_STOP * data_norm.max(f64::MIN_POSITIVE) {
            break;
        }
        selected[pick] = true;
        support.push(pick);

        // Least-squares refit on the support via normal equations; a
        // rank-deficient Gram matrix falls back to a ridge-regularized
        // pseudo-inverse solve.
        let s = support.len();
        let phi_s = Mat::from_fn(n, s, |i, j| dict[[i, support[j]]]);
        let mut gram = phi_s.transpose() * &phi_s;
        let rhs = phi_s.transpose() * &y;
        coeffs = match gram.llt(Side::Lower) {
            Ok(llt) => llt.solve(&rhs),
            Err(_) => {
                log::warn!(
                    "SOMP support of size {s} is rank-deficient; using regularized pseudo-inverse refit"
                );
                let trace: f64 = (0..s).map(|i| gram[(i, i)]).sum();
                let ridge = (trace / s as f64).max(f64::MIN_POSITIVE) * 1e-12;
                for i in 0..s {
                    gram[(i, i)] += ridge;
                }
                gram.llt(Side::Lower)
                    .map_err(|_| Error::Numerical {
                        iteration: s,
                        detail: "SOMP refit failed even with regularization".into(),
                    })?
                    .solve(&rhs)
            }
        };
        residual = &y - &phi_s * &coeffs;
        residual_norms.push(residual.norm_l2());
    }

    let mut weights = vec![0.0; q];
    for (row, &j) in support.iter().enumerate() {
        let mut norm = 0.0;
        for ci in 0..c {
            norm += coeffs[(row, ci)] * coeffs[(row, ci)];
        }
        weights[j] = norm.sqrt();
    }

    let coefficients =
        Array2::from_shape_fn((support.len(), c), |(i, j)| coeffs[(i, j)]);
    Ok(SompResult {
        map: SparseMap {
            weights,
            solver_tag: SolverTag::SrpSomp,
        },
        support,
        residual_norms,
        coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn orthogonal_dictionary_recovers_exactly() {
        // 4 orthogonal columns; data is an exact 2-column combination.
        let dict = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 2.0, 0.0, 0.0],
            [0.0, 0.0, 1.5, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let data = array![[3.0, 1.0], [0.0, 0.0], [-1.5, 4.5], [0.0, 0.0]];
        let r = somp_solve_detailed(&data, &dict, 2).unwrap();
        let mut sup = r.support.clone();
        sup.sort_unstable();
        assert_eq!(sup, vec![0, 2]);
        assert!(r.residual_norms.last().unwrap() < &1e-10);
        // coefficients: column 0 explains (3,1), column 2 explains (−1,3)
        let w0 = r.map.weights[0];
        let w2 = r.map.weights[2];
        assert!((w0 - (9.0f64 + 1.0).sqrt()).abs() < 1e-10);
        assert!((w2 - (1.0f64 + 9.0).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn zero_data_stops_early_with_empty_support() {
        let dict = array![[1.0, 0.5], [0.0, 0.5]];
        let data = Array2::<f64>::zeros((2, 3));
        let r = somp_solve_detailed(&data, &dict, 2).unwrap();
        assert!(r.support.is_empty());
        assert_eq!(r.residual_norms, vec![0.0]);
        assert!(r.map.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn residual_is_monotone_nonincreasing() {
        let n = 10;
        let q = 25;
        let mut lcg = 0x9E3779B97F4A7C15u64;
        let mut unit = move || {
            lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((lcg >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let dict = Array2::from_shape_fn((n, q), |_| unit());
        let data = Array2::from_shape_fn((n, 4), |_| unit());
        let r = somp_solve_detailed(&data, &dict, 6).unwrap();
        for w in r.residual_norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} then {}", w[0], w[1]);
        }
        assert_eq!(r.support.len(), 6);
    }

    #[test]
    fn rejects_zero_column_and_zero_atoms() {
        let dict = array![[1.0, 0.0], [0.0, 0.0]];
        let data = array![[1.0], [0.0]];
        assert!(matches!(
            somp_solve(&data, &dict, 1),
            Err(Error::Config(_))
        ));
        let good = array![[1.0, 0.1], [0.0, 0.2]];
        assert!(matches!(
            somp_solve(&data, &good, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_atom_picks_strongest_normalized_column() {
        // column 1 has big norm but poor alignment; column 2 aligns exactly
        let dict = array![[10.0, 1.0], [10.0, -1.0]];
        let data = array![[2.0], [-2.0]];
        let r = somp_solve_detailed(&data, &dict, 1).unwrap();
        assert_eq!(r.support, vec![1]);
        assert!(r.residual_norms.last().unwrap() < &1e-12);
    }
}
