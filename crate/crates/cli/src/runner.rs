//! Pipeline orchestration: turns a validated config into localization runs.

use ndarray::Array2;
use rayon::prelude::*;
use srploc::dictionary::{
    build_dictionary_cached, DictionaryConfig, DictionarySet, Materialize,
};
use srploc::localize::{localization_error, pick_peaks, PeakSelection};
use srploc::sim::synthesize;
use srploc::solvers::{msbl_direct_solve, msbl_solve_detailed, somp_solve, IterationRecord};
use srploc::srp::{srp_phat_localize, srp_tensor, whiten_band};
use srploc::stft::{stft, BinRange, MultichannelSignal};
use srploc::{DoaGrid, Error, MicArray};

use crate::config::{ConfigError, JobConfig, Method};

/// Anything that can stop a run: configuration problems (exit 2) or
/// numerical/runtime failures (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Compute(#[from] Error),
}

pub type RunResult<T> = Result<T, RunError>;

/// Immutable per-job state shared across trials and durations.
pub struct PipelineContext {
    pub array: MicArray,
    pub coarse: DoaGrid,
    pub fine: DoaGrid,
    pub band: BinRange,
    pub frame_length: usize,
    pub overlap: f64,
    pub sample_rate: f64,
    dictionary: Option<DictionarySet>,
}

impl PipelineContext {
    /// Builds grids, band, and (when `methods` needs one) the dictionary.
    pub fn prepare(
        config: &JobConfig,
        sample_rate: f64,
        methods: &[Method],
        cache_dir: Option<&std::path::Path>,
    ) -> RunResult<Self> {
        let array = config.mic_array()?;
        let coarse = config.coarse_grid()?;
        let fine = config.fine_grid()?;
        let band = config.bin_range(sample_rate)?;
        let needs_dictionary = methods
            .iter()
            .any(|m| matches!(m, Method::SrpSbl | Method::SrpS));
        let dictionary = if needs_dictionary {
            let dict_cfg = DictionaryConfig {
                band,
                sample_rate,
                frame_length: config.stft.frame_length,
                mode: config.dictionary_mode(),
                materialize: Materialize::default(),
            };
            Some(build_dictionary_cached(
                &array, &coarse, &fine, &dict_cfg, cache_dir,
            )?)
        } else {
            None
        };
        Ok(Self {
            array,
            coarse,
            fine,
            band,
            frame_length: config.stft.frame_length,
            overlap: config.stft.overlap,
            sample_rate,
            dictionary,
        })
    }

    fn dictionary(&self) -> RunResult<&DictionarySet> {
        self.dictionary
            .as_ref()
            .ok_or_else(|| ConfigError("method needs a dictionary but none was prepared".into()).into())
    }
}

/// Output of one localization run.
pub struct MethodOutput {
    pub method: Method,
    pub selection: PeakSelection,
    /// The method's output map aligned with `map_grid`.
    pub map: Vec<f64>,
    /// Whether `map` lives on the coarse or fine grid.
    pub map_on_fine_grid: bool,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub trace: Option<Vec<IterationRecord>>,
}

/// Runs one localizer on a signal.
pub fn run_method(
    method: Method,
    signal: &MultichannelSignal,
    ctx: &PipelineContext,
    config: &JobConfig,
) -> RunResult<MethodOutput> {
    if (signal.sample_rate() - ctx.sample_rate).abs() > 1e-9 {
        return Err(ConfigError(format!(
            "input sample rate {} does not match the prepared pipeline ({})",
            signal.sample_rate(),
            ctx.sample_rate
        ))
        .into());
    }
    let spec = stft(signal, ctx.frame_length, ctx.overlap)?;
    if ctx.band.hi >= spec.n_bins() {
        return Err(ConfigError(format!(
            "band bin {} outside spectrogram ({} bins)",
            ctx.band.hi,
            spec.n_bins()
        ))
        .into());
    }
    let n_peaks = config.solver.n_peaks;
    let min_sep = config.solver.min_separation_deg;

    match method {
        Method::SrpPhat => {
            let cross = whiten_band(&spec, &ctx.array, ctx.band);
            let tensor = srp_tensor(&cross, &ctx.coarse, &ctx.array, ctx.band)?;
            let map = tensor.averaged_map();
            let selection = srp_phat_localize(&tensor, n_peaks, min_sep)?;
            Ok(MethodOutput {
                method,
                selection,
                map,
                map_on_fine_grid: false,
                iterations: None,
                converged: None,
                trace: None,
            })
        }
        Method::SrpSbl => {
            let cross = whiten_band(&spec, &ctx.array, ctx.band);
            let tensor = srp_tensor(&cross, &ctx.coarse, &ctx.array, ctx.band)?;
            let solution = msbl_solve_detailed(&tensor, ctx.dictionary()?, &config.solver.msbl())?;
            let selection = pick_peaks(&solution.map.weights, &ctx.fine, n_peaks, min_sep);
            Ok(MethodOutput {
                method,
                selection,
                map: solution.map.weights,
                map_on_fine_grid: true,
                iterations: Some(solution.state.iteration),
                converged: Some(solution.converged),
                trace: Some(solution.trace),
            })
        }
        Method::SrpS => {
            let cross = whiten_band(&spec, &ctx.array, ctx.band);
            let tensor = srp_tensor(&cross, &ctx.coarse, &ctx.array, ctx.band)?;
            let avg = tensor.averaged_map();
            let dict = ctx.dictionary()?;
            let data = Array2::from_shape_vec((avg.len(), 1), avg)
                .expect("averaged map length matches grid");
            let sparse = somp_solve(&data, &dict.averaged_d(), n_peaks)?;
            let selection = pick_peaks(&sparse.weights, &ctx.fine, n_peaks, min_sep);
            Ok(MethodOutput {
                method,
                selection,
                map: sparse.weights,
                map_on_fine_grid: true,
                iterations: None,
                converged: None,
                trace: None,
            })
        }
        Method::MsblDirect => {
            let sparse = msbl_direct_solve(
                &spec,
                &ctx.array,
                &ctx.fine,
                ctx.band,
                config.dictionary_mode(),
                &config.solver.msbl(),
            )?;
            let selection = pick_peaks(&sparse.weights, &ctx.fine, n_peaks, min_sep);
            Ok(MethodOutput {
                method,
                selection,
                map: sparse.weights,
                map_on_fine_grid: true,
                iterations: None,
                converged: None,
                trace: None,
            })
        }
    }
}

/// Loads the configured input: a WAV file or a synthesized scenario.
pub fn load_input(config: &JobConfig) -> RunResult<MultichannelSignal> {
    if let Some(path) = &config.input.wav {
        Ok(srploc::load_wav(path)?)
    } else {
        let scenario = config.scenario(config.seed)?;
        Ok(synthesize(&scenario)?)
    }
}

/// One aggregated row of a method × duration comparison.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CompareRow {
    pub method: String,
    pub duration_s: f64,
    pub trials: usize,
    pub failures: usize,
    pub median_le_deg: f64,
    pub iqr_le_deg: f64,
}

/// Synthesizes `trials` seeded scenarios (seed + trial index), truncates each
/// to every requested duration, runs every method, and aggregates the
/// localization error. Per-cell failures become NaN and the run continues.
pub fn run_compare(
    config: &JobConfig,
    methods: &[Method],
    durations: &[f64],
    trials: usize,
    jobs: usize,
) -> RunResult<Vec<CompareRow>> {
    if trials == 0 {
        return Err(ConfigError("compare needs at least one trial".into()).into());
    }
    if methods.is_empty() || durations.is_empty() {
        return Err(ConfigError("compare needs methods and durations".into()).into());
    }
    if config.input.wav.is_some() {
        return Err(ConfigError(
            "compare requires a [scenario] input (ground truth DOAs are needed)".into(),
        )
        .into());
    }
    let truths = config.truths()?;
    let max_duration = durations.iter().cloned().fold(0.0f64, f64::max);
    let base = config.scenario(config.seed)?;
    if max_duration > base.duration_s {
        return Err(ConfigError(format!(
            "scenario.duration_s {} is shorter than the longest compare duration {max_duration}",
            base.duration_s
        ))
        .into());
    }
    let sample_rate = base.sample_rate;
    let ctx = PipelineContext::prepare(config, sample_rate, methods, None)?;

    // Per-trial LE tables, computed (possibly) in parallel but collected in
    // trial order so the aggregate is schedule-independent.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ConfigError(format!("thread pool: {e}")))?;
    let mut compare_cfg = config.clone();
    compare_cfg.solver.n_peaks = truths.len();

    let per_trial: Vec<Vec<Vec<f64>>> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                let seed = config.seed.wrapping_add(trial as u64);
                let scenario = match config.scenario(seed) {
                    Ok(mut s) => {
                        s.duration_s = max_duration;
                        s
                    }
                    Err(_) => return vec![vec![f64::NAN; durations.len()]; methods.len()],
                };
                let full = match synthesize(&scenario) {
                    Ok(sig) => sig,
                    Err(e) => {
                        log::warn!("trial {trial}: synthesis failed: {e}");
                        return vec![vec![f64::NAN; durations.len()]; methods.len()];
                    }
                };
                let mut les = vec![vec![f64::NAN; durations.len()]; methods.len()];
                for (di, &duration) in durations.iter().enumerate() {
                    let n = ((duration * sample_rate).round() as usize).min(full.n_samples());
                    let signal = match full.truncated(n) {
                        Ok(s) => s,
                        Err(e) => {
                            log::warn!("trial {trial}: truncation failed: {e}");
                            continue;
                        }
                    };
                    for (mi, &method) in methods.iter().enumerate() {
                        match run_method(method, &signal, &ctx, &compare_cfg) {
                            Ok(out) => {
                                match localization_error(&out.selection.estimates, &truths) {
                                    Ok(le) => les[mi][di] = le,
                                    Err(e) => log::warn!("trial {trial}: LE failed: {e}"),
                                }
                            }
                            Err(e) => {
                                log::warn!(
                                    "trial {trial} {} {duration}s failed: {e}",
                                    method.name()
                                );
                            }
                        }
                    }
                }
                les
            })
            .collect()
    });

    let mut rows = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        for (di, &duration) in durations.iter().enumerate() {
            let values: Vec<f64> = per_trial.iter().map(|t| t[mi][di]).collect();
            let finite: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
            let failures = values.len() - finite.len();
            let (median, iqr) = median_iqr(&finite);
            rows.push(CompareRow {
                method: method.name().to_string(),
                duration_s: duration,
                trials,
                failures,
                median_le_deg: median,
                iqr_le_deg: iqr,
            });
        }
    }
    Ok(rows)
}

/// Median and interquartile range with linear interpolation; NaN for empty
/// input.
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
        } else {
            sorted[i]
        }
    };
    (q(0.5), q(0.75) - q(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_iqr_basics() {
        let (m, i) = median_iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        assert_eq!(i, 2.0);
        let (m, _) = median_iqr(&[2.0]);
        assert_eq!(m, 2.0);
        let (m, i) = median_iqr(&[]);
        assert!(m.is_nan() && i.is_nan());
    }
}
