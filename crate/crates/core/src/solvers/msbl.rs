//! Multi-dictionary sparse Bayesian learning.
//!
//! The evidence model per bin is Gaussian with covariance
//! `Σ_k = σ²_k I + D_k Γ D_kᵀ`, `Γ = diag(γ)`. Each sweep rescales every
//! hyperparameter by the ratio of data-weighted to model-weighted column
//! energy:
//!
//! `γ_q ← (γ_q / T) · Σ_k ‖Z_kᵀ Σ_k⁻¹ d_{k,q}‖² / Σ_k d_{k,q}ᵀ Σ_k⁻¹ d_{k,q}`
//!
//! Zeros are absorbing, every update keeps γ nonnegative, and per-bin terms
//! are accumulated in fixed bin order so results are reproducible regardless
//! of the parallel schedule.

use faer::prelude::Solve;
use faer::{c64, Mat, Side};
use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::dictionary::{DictionaryMode, DictionarySet};
use crate::error::{Error, Result};
use crate::geometry::{green, wavenumber, DoaGrid, MicArray, Target, Vec3};
use crate::solvers::{SolverTag, SparseMap};
use crate::srp::SrpTensor;
use crate::stft::{BinRange, Spectrogram};

/// Keeps relative-change well defined when γ is identically zero.
const GAMMA_NORM_FLOOR: f64 = 1e-300;
/// Absolute floor on σ² so all-zero data cannot produce a zero covariance.
const NOISE_FLOOR: f64 = 1e-30;

/// Tuning knobs for the M-SBL iteration.
#[derive(Debug, Clone)]
pub struct MsblConfig {
    /// Iteration stops once `max_q |Δγ_q| / max(‖γ‖_∞, ε)` drops below this.
    pub convergence_threshold: f64,
    pub max_iterations: usize,
    /// σ²_k is initialized to `noise_scale · ‖Z_k‖_F² / (N·T)` and held fixed
    /// unless `refit_noise` is set.
    pub noise_scale: f64,
    pub refit_noise: bool,
    /// γ below `prune_fraction · max(γ)` is clamped to zero after each sweep.
    pub prune_fraction: f64,
    /// Scale each bin slice to unit RMS before solving.
    pub normalize_bins: bool,
}

impl Default for MsblConfig {
    fn default() -> Self {
        Self {
            convergence_threshold: 1e-3,
            max_iterations: 200,
            noise_scale: 0.1,
            refit_noise: false,
            prune_fraction: 1e-8,
            normalize_bins: false,
        }
    }
}

/// Iteration state: hyperparameters, per-bin noise variances, progress.
#[derive(Debug, Clone)]
pub struct MsblState {
    pub gamma: Vec<f64>,
    pub noise_variance: Vec<f64>,
    pub iteration: usize,
    pub last_relative_change: f64,
}

/// One row of the solver trace.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub relative_change: f64,
    /// Candidates still carrying nonzero γ after the sweep.
    pub active: usize,
    /// The five largest (index, γ) pairs after the sweep.
    pub top5: Vec<(usize, f64)>,
}

/// Full solve output: final map, state, and per-iteration trace.
#[derive(Debug, Clone)]
pub struct MsblSolution {
    pub map: SparseMap,
    pub state: MsblState,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
}

/// A dimension-generic M-SBL instance: per-bin real dictionaries and data
/// matrices. The SRP-tensor entry points wrap this.
#[derive(Debug, Clone)]
pub struct MsblProblem {
    /// One `N × Q` dictionary per bin.
    pub dictionaries: Vec<Array2<f64>>,
    /// One `N × T` measurement matrix per bin.
    pub data: Vec<Array2<f64>>,
}

impl MsblProblem {
    fn validate(&self) -> Result<(usize, usize, usize)> {
        if self.dictionaries.is_empty() || self.dictionaries.len() != self.data.len() {
            return Err(Error::config(format!(
                "M-SBL needs matching non-empty dictionary/data lists ({} vs {})",
                self.dictionaries.len(),
                self.data.len()
            )));
        }
        let (n, q) = self.dictionaries[0].dim();
        let t = self.data[0].ncols();
        for (d, z) in self.dictionaries.iter().zip(&self.data) {
            if d.dim() != (n, q) || z.dim() != (n, t) {
                return Err(Error::config("inconsistent per-bin shapes"));
            }
        }
        Ok((n, q, t))
    }

    /// Initial state per the documented defaults: uniform γ at the mean
    /// per-bin data power over Q, σ²_k from the same power.
    pub fn initial_state(&self, cfg: &MsblConfig) -> Result<MsblState> {
        let (n, q, t) = self.validate()?;
        let mut noise = Vec::with_capacity(self.data.len());
        let mut mean_power = 0.0;
        for z in &self.data {
            let power = z.iter().map(|v| v * v).sum::<f64>() / (n * t) as f64;
            mean_power += power;
            noise.push((cfg.noise_scale * power).max(NOISE_FLOOR));
        }
        mean_power /= self.data.len() as f64;
        Ok(MsblState {
            gamma: vec![mean_power / q as f64; q],
            noise_variance: noise,
            iteration: 0,
            last_relative_change: f64::INFINITY,
        })
    }
}

struct Workspace {
    d: Vec<Mat<f64>>,
    z: Vec<Mat<f64>>,

    q: usize,
    t: usize,
}

impl Workspace {
    fn build(problem: &MsblProblem, cfg: &MsblConfig) -> Result<Self> {
        let (n, q, t) = problem.validate()?;
        let d = problem
            .dictionaries
            .iter()
            .map(|a| Mat::from_fn(n, q, |i, j| a[[i, j]]))
            .collect();
        let z = problem
            .data
            .iter()
            .map(|a| {
                let mut m = Mat::from_fn(n, t, |i, j| a[[i, j]]);
                if cfg.normalize_bins {
                    let rms = (m.squared_norm_l2() / (n * t) as f64).sqrt();
                    if rms > 0.0 {
                        let inv = 1.0 / rms;
                        for j in 0..t {
                            for i in 0..n {
                                m[(i, j)] *= inv;
                            }
                        }
                    }
                }
                m
            })
            .collect();
        Ok(Self { d, z, q, t })
    }
}

/// Factors `Σ = σ² I + D_a Γ_a D_aᵀ`, escalating a trace-relative jitter on
/// failure instead of crashing.
fn factor_sigma(
    sigma: &mut Mat<f64>,
    iteration: usize,
) -> Result<faer::linalg::solvers::Llt<f64>> {
    let n = sigma.nrows();
    let trace: f64 = (0..n).map(|i| sigma[(i, i)]).sum();
    let base = (trace / n as f64).abs().max(NOISE_FLOOR);
    let mut added = 0.0;
    for level in [0.0, 1e-10, 1e-8, 1e-6] {
        let jitter = level * base;
        if jitter > added {
            for i in 0..n {
                sigma[(i, i)] += jitter - added;
            }
            added = jitter;
        }
        if let Ok(llt) = sigma.llt(Side::Lower) {
            return Ok(llt);
        }
    }
    Err(Error::Numerical {
        iteration,
        detail: "evidence covariance not positive definite after jitter escalation".into(),
    })
}

/// One sweep of the update on an explicit problem. Returns the new state;
/// `state` itself is untouched.
fn update_step(ws: &Workspace, state: &MsblState, cfg: &MsblConfig) -> Result<MsblState> {
    let q = ws.q;
    let t = ws.t;
    let active: Vec<usize> = (0..q).filter(|&j| state.gamma[j] > 0.0).collect();
    let mut next = MsblState {
        gamma: vec![0.0; q],
        noise_variance: state.noise_variance.clone(),
        iteration: state.iteration + 1,
        last_relative_change: 0.0,
    };
    if active.is_empty() {
        next.last_relative_change = 0.0;
        return Ok(next);
    }
    let all_active = active.len() == q;

    // Per-bin numerator/denominator terms, computed independently and then
    // reduced in fixed bin order.
    let per_bin: Vec<Result<(Vec<f64>, Vec<f64>, f64)>> = ws
        .d
        .par_iter()
        .zip(ws.z.par_iter())
        .zip(state.noise_variance.par_iter())
        .map(|((d_full, z), &sigma2)| {
            bin_terms(
                d_full,
                z,
                sigma2,
                &active,
                all_active,
                &state.gamma,
                state.iteration,
                cfg.refit_noise,
            )
        })
        .collect();

    let mut num = vec![0.0; active.len()];
    let mut den = vec![0.0; active.len()];
    for (ki, terms) in per_bin.into_iter().enumerate() {
        let (bin_num, bin_den, refit_sigma2) = terms?;
        for j in 0..active.len() {
            num[j] += bin_num[j];
            den[j] += bin_den[j];
        }
        if cfg.refit_noise {
            next.noise_variance[ki] = refit_sigma2.max(NOISE_FLOOR);
        }
    }

    for (j, &qi) in active.iter().enumerate() {
        let g = if den[j] > 0.0 {
            state.gamma[qi] / t as f64 * num[j] / den[j]
        } else {
            0.0
        };
        if !g.is_finite() {
            return Err(Error::Numerical {
                iteration: next.iteration,
                detail: format!("non-finite hyperparameter at candidate {qi}"),
            });
        }
        next.gamma[qi] = g.max(0.0);
    }

    // Relative change against the previous iterate.
    let old_norm = state
        .gamma
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(GAMMA_NORM_FLOOR);
    next.last_relative_change = state
        .gamma
        .iter()
        .zip(&next.gamma)
        .map(|(o, n)| (n - o).abs())
        .fold(0.0f64, f64::max)
        / old_norm;

    // Absorbing prune keeps later Σ assemblies small.
    let peak = next.gamma.iter().cloned().fold(0.0f64, f64::max);
    if peak > 0.0 {
        let cut = cfg.prune_fraction * peak;
        for g in &mut next.gamma {
            if *g < cut {
                *g = 0.0;
            }
        }
    }
    Ok(next)
}

#[allow(clippy::too_many_arguments)]
fn bin_terms(
    d_full: &Mat<f64>,
    z: &Mat<f64>,
    sigma2: f64,
    active: &[usize],
    all_active: bool,
    gamma: &[f64],
    iteration: usize,
    refit_noise: bool,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = d_full.nrows();
    let t = z.ncols();
    let a = active.len();

    let d_active: Mat<f64>;
    let d_a: &Mat<f64> = if all_active {
        d_full
    } else {
        d_active = Mat::from_fn(n, a, |i, j| d_full[(i, active[j])]);
        &d_active
    };

    // Σ = σ²I + (D_a Γ_a) D_aᵀ
    let mut scaled = d_a.clone();
    for (j, &qi) in active.iter().enumerate() {
        let g = gamma[qi];
        for i in 0..n {
            scaled[(i, j)] *= g;
        }
    }
    let mut sigma = &scaled * d_a.transpose();
    for i in 0..n {
        sigma[(i, i)] += sigma2;
    }
    let llt = factor_sigma(&mut sigma, iteration)?;

    let x = llt.solve(d_a); // Σ⁻¹ D_a, N × a
    let w = z.transpose() * &x; // Z ᵀ Σ⁻¹ D_a, T × a

    let mut num = vec![0.0; a];
    let mut den = vec![0.0; a];
    for j in 0..a {
        let mut nj = 0.0;
        for ti in 0..t {
            nj += w[(ti, j)] * w[(ti, j)];
        }
        num[j] = nj;
        let mut dj = 0.0;
        for i in 0..n {
            dj += d_a[(i, j)] * x[(i, j)];
        }
        den[j] = dj;
    }

    // Optional ML noise refit: σ² ← (‖Z−DM‖_F²/T + σ²·Σ_j(1 − σ_jj/γ_j)) / N
    // with M the posterior mean and σ_jj its covariance diagonal.
    let refit = if refit_noise {
        let mean = {
            // M = Γ_a D_aᵀ Σ⁻¹ Z = Γ_a · (Xᵀ Z)
            let mut m = x.transpose() * z; // a × T
            for (j, &qi) in active.iter().enumerate() {
                for ti in 0..t {
                    m[(j, ti)] *= gamma[qi];
                }
            }
            m
        };
        let resid = z - d_a * &mean;
        let mut trace_term = 0.0;
        for (j, &qi) in active.iter().enumerate() {
            // posterior variance diag: γ_j − γ_j² d_jᵀ Σ⁻¹ d_j
            let post = gamma[qi] - gamma[qi] * gamma[qi] * den[j];
            trace_term += 1.0 - post / gamma[qi].max(NOISE_FLOOR);
        }
        (resid.squared_norm_l2() / t as f64 + sigma2 * trace_term) / n as f64
    } else {
        sigma2
    };

    Ok((num, den, refit))
}

/// One update sweep on an SRP tensor and its dictionary.
pub fn msbl_update(
    state: &MsblState,
    srp: &SrpTensor,
    dict: &DictionarySet,
) -> Result<MsblState> {
    let problem = tensor_problem(srp, dict)?;
    if state.gamma.len() != dict.n_fine() {
        return Err(Error::config(format!(
            "state has {} hyperparameters for {} fine candidates",
            state.gamma.len(),
            dict.n_fine()
        )));
    }
    let cfg = MsblConfig::default();
    let ws = Workspace::build(&problem, &cfg)?;
    update_step(&ws, state, &cfg)
}

fn tensor_problem(srp: &SrpTensor, dict: &DictionarySet) -> Result<MsblProblem> {
    if srp.band() != dict.band() {
        return Err(Error::config(format!(
            "SRP band {:?} does not match dictionary band {:?}",
            srp.band(),
            dict.band()
        )));
    }
    if srp.n_candidates() != dict.n_coarse() {
        return Err(Error::config(
            "SRP grid size does not match dictionary coarse grid",
        ));
    }
    let dictionaries = dict
        .bins()
        .iter()
        .map(|b| b.dense_d().into_owned())
        .collect();
    let data = (0..srp.n_bins())
        .map(|ki| srp.bin_slice(ki).to_owned())
        .collect();
    Ok(MsblProblem { dictionaries, data })
}

/// Runs the update to convergence on an explicit problem.
pub fn msbl_solve_problem(
    problem: &MsblProblem,
    cfg: &MsblConfig,
    tag: SolverTag,
) -> Result<MsblSolution> {
    if !(cfg.convergence_threshold > 0.0) {
        return Err(Error::config("convergence threshold must be positive"));
    }
    let ws = Workspace::build(problem, cfg)?;
    let mut state = problem.initial_state(cfg)?;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iterations {
        state = update_step(&ws, &state, cfg)?;
        trace.push(IterationRecord {
            iteration: state.iteration,
            relative_change: state.last_relative_change,
            active: state.gamma.iter().filter(|g| **g > 0.0).count(),
            top5: top_k(&state.gamma, 5),
        });
        if state.last_relative_change < cfg.convergence_threshold {
            converged = true;
            break;
        }
    }
    Ok(MsblSolution {
        map: SparseMap {
            weights: state.gamma.clone(),
            solver_tag: tag,
        },
        state,
        trace,
        converged,
    })
}

/// Multidimensional M-SBL on an SRP tensor; weights align with the fine grid.
pub fn msbl_solve(
    srp: &SrpTensor,
    dict: &DictionarySet,
    cfg: &MsblConfig,
) -> Result<SparseMap> {
    Ok(msbl_solve_detailed(srp, dict, cfg)?.map)
}

/// As [`msbl_solve`] but returns state and trace as well.
pub fn msbl_solve_detailed(
    srp: &SrpTensor,
    dict: &DictionarySet,
    cfg: &MsblConfig,
) -> Result<MsblSolution> {
    let problem = tensor_problem(srp, dict)?;
    msbl_solve_problem(&problem, cfg, SolverTag::SrpSbl)
}

fn top_k(gamma: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..gamma.len()).collect();
    idx.sort_by(|&a, &b| {
        gamma[b]
            .partial_cmp(&gamma[a])
            .expect("gamma is finite")
            .then(a.cmp(&b))
    });
    idx.into_iter().take(k).map(|i| (i, gamma[i])).collect()
}

// ---------------------------------------------------------------------------
// Complex-valued M-SBL on raw microphone spectra.
// ---------------------------------------------------------------------------

/// M-SBL directly on microphone measurements: the dictionary is the `M × Q`
/// matrix of Green's functions per bin and the evidence is complex Gaussian
/// with `Σ_k = σ²_k I + G_k Γ G_kᴴ`.
pub fn msbl_direct_solve(
    spec: &Spectrogram,
    array: &MicArray,
    fine_grid: &DoaGrid,
    band: BinRange,
    mode: DictionaryMode,
    cfg: &MsblConfig,
) -> Result<SparseMap> {
    if band.hi >= spec.n_bins() {
        return Err(Error::config(format!(
            "band bin {} outside spectrogram ({} bins)",
            band.hi,
            spec.n_bins()
        )));
    }
    if !(cfg.convergence_threshold > 0.0) {
        return Err(Error::config("convergence threshold must be positive"));
    }
    let m = spec.n_channels();
    let t = spec.n_frames();
    let q = fine_grid.len();
    let centroid = array.centroid();

    // Per-bin dictionaries of Green's functions and data matrices.
    let mut dicts: Vec<Mat<c64>> = Vec::with_capacity(band.len());
    let mut data: Vec<Mat<c64>> = Vec::with_capacity(band.len());
    for k in band.iter() {
        let kappa = wavenumber(spec.bin_frequency_hz(k), array.sound_speed());
        let mut g = Mat::<c64>::zeros(m, q);
        for (qi, p) in fine_grid.points().iter().enumerate() {
            let target = match mode {
                DictionaryMode::FarField => Target::Direction(p.unit),
                DictionaryMode::NearField { radius_m } => {
                    Target::Point(centroid + p.unit * radius_m)
                }
            };
            for mi in 0..m {
                g[(mi, qi)] = to_c64(green(target, array.position(mi), kappa)?);
            }
        }
        dicts.push(g);
        let bins = spec.bins();
        data.push(Mat::from_fn(m, t, |mi, ti| to_c64(bins[[mi, k, ti]])));
    }

    // Initialization mirrors the real-valued path.
    let mut noise = Vec::with_capacity(data.len());
    let mut mean_power = 0.0;
    for z in &data {
        let power = z.squared_norm_l2() / (m * t) as f64;
        mean_power += power;
        noise.push((cfg.noise_scale * power).max(NOISE_FLOOR));
    }
    mean_power /= data.len() as f64;
    let mut gamma = vec![mean_power / q as f64; q];

    for iteration in 1..=cfg.max_iterations {
        let active: Vec<usize> = (0..q).filter(|&j| gamma[j] > 0.0).collect();
        if active.is_empty() {
            break;
        }
        let mut num = vec![0.0; active.len()];
        let mut den = vec![0.0; active.len()];
        for (g_full, (z, &sigma2)) in dicts.iter().zip(data.iter().zip(&noise)) {
            let a = active.len();
            let g_a = Mat::from_fn(m, a, |i, j| g_full[(i, active[j])]);
            let mut scaled = g_a.clone();
            for (j, &qi) in active.iter().enumerate() {
                let gq = c64::new(gamma[qi], 0.0);
                for i in 0..m {
                    scaled[(i, j)] *= gq;
                }
            }
            let mut sigma = &scaled * g_a.adjoint();
            for i in 0..m {
                sigma[(i, i)] += c64::new(sigma2, 0.0);
            }
            let llt = factor_sigma_c(&mut sigma, iteration)?;
            let x = llt.solve(&g_a); // Σ⁻¹ G_a
            let w = z.adjoint().to_owned() * &x; // T × a
            for j in 0..a {
                for ti in 0..t {
                    num[j] += w[(ti, j)].norm_sqr();
                }
                let mut dj = 0.0;
                for i in 0..m {
                    dj += (g_a[(i, j)].conj() * x[(i, j)]).re;
                }
                den[j] += dj;
            }
        }
        let mut next = vec![0.0; q];
        let mut max_delta = 0.0f64;
        for (j, &qi) in active.iter().enumerate() {
            let g = if den[j] > 0.0 {
                gamma[qi] / t as f64 * num[j] / den[j]
            } else {
                0.0
            };
            if !g.is_finite() {
                return Err(Error::Numerical {
                    iteration,
                    detail: format!("non-finite hyperparameter at candidate {qi}"),
                });
            }
            next[qi] = g.max(0.0);
        }
        let old_norm = gamma
            .iter()
            .fold(0.0f64, |acc, &b| acc.max(b))
            .max(GAMMA_NORM_FLOOR);
        for (o, n) in gamma.iter().zip(&next) {
            max_delta = max_delta.max((n - o).abs());
        }
        let peak = next.iter().cloned().fold(0.0f64, f64::max);
        if peak > 0.0 {
            let cut = cfg.prune_fraction * peak;
            for g in &mut next {
                if *g < cut {
                    *g = 0.0;
                }
            }
        }
        gamma = next;
        if max_delta / old_norm < cfg.convergence_threshold {
            break;
        }
    }

    Ok(SparseMap {
        weights: gamma,
        solver_tag: SolverTag::DirectSbl,
    })
}

fn factor_sigma_c(
    sigma: &mut Mat<c64>,
    iteration: usize,
) -> Result<faer::linalg::solvers::Llt<c64>> {
    let n = sigma.nrows();
    let trace: f64 = (0..n).map(|i| sigma[(i, i)].re).sum();
    let base = (trace / n as f64).abs().max(NOISE_FLOOR);
    let mut added = 0.0;
    for level in [0.0, 1e-10, 1e-8, 1e-6] {
        let jitter = level * base;
        if jitter > added {
            for i in 0..n {
                sigma[(i, i)] += c64::new(jitter - added, 0.0);
            }
            added = jitter;
        }
        if let Ok(llt) = sigma.llt(Side::Lower) {
            return Ok(llt);
        }
    }
    Err(Error::Numerical {
        iteration,
        detail: "complex evidence covariance not positive definite".into(),
    })
}

fn to_c64(v: Complex64) -> c64 {
    c64::new(v.re, v.im)
}

// Vec3 only appears in signatures through DictionaryMode targets.
#[allow(unused)]
fn _assert_vec3_used(v: Vec3) -> Vec3 {
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_problem(d: f64, z: f64) -> MsblProblem {
        MsblProblem {
            dictionaries: vec![array![[d]]],
            data: vec![array![[z]]],
        }
    }

    fn state(gamma: Vec<f64>, noise: Vec<f64>) -> MsblState {
        MsblState {
            gamma,
            noise_variance: noise,
            iteration: 0,
            last_relative_change: f64::INFINITY,
        }
    }

    fn step(problem: &MsblProblem, st: &MsblState) -> MsblState {
        let cfg = MsblConfig::default();
        let ws = Workspace::build(problem, &cfg).unwrap();
        update_step(&ws, st, &cfg).unwrap()
    }

    #[test]
    fn scalar_fixed_point() {
        // D=1, σ²=0.1, Z=1: the stationary point is (Z²−σ²)/D² = 0.9.
        let problem = scalar_problem(1.0, 1.0);
        let st = state(vec![0.9], vec![0.1]);
        let next = step(&problem, &st);
        assert!((next.gamma[0] - 0.9).abs() < 1e-12);

        // And iteration from elsewhere converges to it.
        let mut st = state(vec![0.3], vec![0.1]);
        let cfg = MsblConfig::default();
        let ws = Workspace::build(&problem, &cfg).unwrap();
        for _ in 0..100 {
            st = update_step(&ws, &st, &cfg).unwrap();
        }
        assert!((st.gamma[0] - 0.9).abs() < 1e-6, "got {}", st.gamma[0]);
    }

    #[test]
    fn zero_data_zeroes_gamma() {
        let problem = MsblProblem {
            dictionaries: vec![Array2::from_shape_fn((3, 5), |(i, j)| {
                ((i * 5 + j) as f64 * 0.37).sin()
            })],
            data: vec![Array2::zeros((3, 2))],
        };
        let st = state(vec![0.5; 5], vec![0.1]);
        let next = step(&problem, &st);
        assert!(next.gamma.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zeros_are_absorbing() {
        let problem = MsblProblem {
            dictionaries: vec![Array2::from_shape_fn((4, 6), |(i, j)| {
                ((i + 2 * j) as f64 * 0.71).cos()
            })],
            data: vec![Array2::from_shape_fn((4, 3), |(i, j)| {
                ((i * 3 + j) as f64 * 0.13).sin() + 0.2
            })],
        };
        let mut st = state(vec![0.4, 0.0, 0.4, 0.4, 0.0, 0.4], vec![0.05]);
        let cfg = MsblConfig::default();
        let ws = Workspace::build(&problem, &cfg).unwrap();
        for _ in 0..5 {
            st = update_step(&ws, &st, &cfg).unwrap();
            assert_eq!(st.gamma[1], 0.0);
            assert_eq!(st.gamma[4], 0.0);
            assert!(st.gamma.iter().all(|&g| g >= 0.0));
        }
    }

    #[test]
    fn relative_change_definition() {
        let problem = scalar_problem(1.0, 1.0);
        let st = state(vec![0.5], vec![0.1]);
        let next = step(&problem, &st);
        // analytic: γ' = 0.5·(1/0.6²)/(1/0.6) = 0.5/0.6
        let expected = 0.5 / 0.6;
        assert!((next.gamma[0] - expected).abs() < 1e-12);
        assert!(
            (next.last_relative_change - (expected - 0.5).abs() / 0.5).abs() < 1e-12
        );
    }

    #[test]
    fn immediate_termination_with_huge_threshold() {
        let problem = MsblProblem {
            dictionaries: vec![Array2::from_shape_fn((3, 4), |(i, j)| {
                ((i + j) as f64).cos()
            })],
            data: vec![Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64 * 0.1)],
        };
        let cfg = MsblConfig {
            convergence_threshold: 1e9,
            ..MsblConfig::default()
        };
        let sol = msbl_solve_problem(&problem, &cfg, SolverTag::SrpSbl).unwrap();
        assert_eq!(sol.state.iteration, 1);
        assert!(sol.converged);
        assert_eq!(sol.trace.len(), 1);
    }

    #[test]
    fn exact_two_source_recovery() {
        // Z = D S with two active rows well separated; no noise beyond the
        // solver's own floor.
        let n = 12;
        let q = 18;
        let t = 4;
        let mut lcg = 0x2545F4914F6CDD1Du64;
        let mut unit = move || {
            lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((lcg >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let dict = Array2::from_shape_fn((n, q), |_| unit());
        let (q1, q2) = (3usize, 14usize);
        let mut s = Array2::<f64>::zeros((q, t));
        for ti in 0..t {
            s[[q1, ti]] = 1.0 + 0.2 * ti as f64;
            s[[q2, ti]] = -0.8 + 0.1 * ti as f64;
        }
        let z = dict.dot(&s);
        let problem = MsblProblem {
            dictionaries: vec![dict],
            data: vec![z],
        };
        let cfg = MsblConfig {
            convergence_threshold: 1e-6,
            max_iterations: 500,
            noise_scale: 1e-4,
            ..MsblConfig::default()
        };
        let sol = msbl_solve_problem(&problem, &cfg, SolverTag::SrpSbl).unwrap();
        let mut top = sol.map.top_indices(2);
        top.sort_unstable();
        assert_eq!(top, vec![q1, q2], "gamma = {:?}", sol.map.weights);
    }

    #[test]
    fn scaling_data_by_two_scales_gamma_by_four_exactly() {
        let n = 6;
        let q = 9;
        let t = 3;
        let dict = Array2::from_shape_fn((n, q), |(i, j)| ((i * q + j) as f64 * 0.17).sin());
        let z = Array2::from_shape_fn((n, t), |(i, j)| ((i * t + j) as f64 * 0.29).cos());
        let z2 = z.mapv(|v| 2.0 * v);
        let cfg = MsblConfig {
            max_iterations: 20,
            convergence_threshold: 1e-12,
            ..MsblConfig::default()
        };
        let sol1 = msbl_solve_problem(
            &MsblProblem {
                dictionaries: vec![dict.clone()],
                data: vec![z],
            },
            &cfg,
            SolverTag::SrpSbl,
        )
        .unwrap();
        let sol2 = msbl_solve_problem(
            &MsblProblem {
                dictionaries: vec![dict],
                data: vec![z2],
            },
            &cfg,
            SolverTag::SrpSbl,
        )
        .unwrap();
        for (a, b) in sol1.map.weights.iter().zip(&sol2.map.weights) {
            assert_eq!((4.0 * a).to_bits(), b.to_bits());
        }
    }
}
