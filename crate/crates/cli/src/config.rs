//! Job configuration: a TOML document with dotted sections, validated
//! strictly (unknown keys are rejected) before any computation starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use srploc::dictionary::DictionaryMode;
use srploc::geometry::GridPoint;
use srploc::sim::{Reverb, Scenario, SignalKind, SourceSpec};
use srploc::solvers::MsblConfig;
use srploc::stft::BinRange;
use srploc::{build_doa_grid, DoaGrid, MicArray};

/// Convenience alias: configuration-phase failures map to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub type ConfigResult<T> = Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> ConfigResult<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    /// Base RNG seed for scenario synthesis and trial derivation.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; overridable with SRPLOC_OUT_DIR.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub band: BandConfig,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_seed() -> u64 {
    0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("srploc_out")
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Path to a multichannel WAV recording; when absent the synthetic
    /// scenario is used.
    #[serde(default)]
    pub wav: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    /// Built-in geometry name (`planar16`) or empty when `file` is set.
    #[serde(default = "default_geometry")]
    pub geometry: String,
    /// Plain-text geometry file: one `x y z` line per microphone, meters.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default = "default_sound_speed")]
    pub sound_speed: f64,
}

fn default_geometry() -> String {
    "planar16".into()
}

fn default_sound_speed() -> f64 {
    srploc::DEFAULT_SOUND_SPEED
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            geometry: default_geometry(),
            file: None,
            sound_speed: default_sound_speed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub coarse_elevation_step_deg: f64,
    pub coarse_azimuth_step_deg: f64,
    pub fine_elevation_step_deg: f64,
    pub fine_azimuth_step_deg: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            coarse_elevation_step_deg: 15.0,
            coarse_azimuth_step_deg: 10.0,
            fine_elevation_step_deg: 2.0,
            fine_azimuth_step_deg: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub frame_length: usize,
    pub overlap: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_length: 1024,
            overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            low_hz: 300.0,
            high_hz: 4000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SrpPhat,
    MsblDirect,
    SrpS,
    SrpSbl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SrpPhat => "srp_phat",
            Method::MsblDirect => "msbl_direct",
            Method::SrpS => "srp_s",
            Method::SrpSbl => "srp_sbl",
        }
    }

    pub fn parse(s: &str) -> ConfigResult<Self> {
        match s {
            "srp_phat" => Ok(Method::SrpPhat),
            "msbl_direct" => Ok(Method::MsblDirect),
            "srp_s" => Ok(Method::SrpS),
            "srp_sbl" => Ok(Method::SrpSbl),
            other => err(format!(
                "method.name: unknown method {other:?} (expected srp_phat, msbl_direct, srp_s or srp_sbl)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: Method,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            name: Method::SrpSbl,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub convergence_threshold: f64,
    pub max_iterations: usize,
    pub n_peaks: usize,
    pub min_separation_deg: f64,
    pub noise_scale: f64,
    pub refit_noise: bool,
    pub normalize_bins: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            convergence_threshold: 1e-3,
            max_iterations: 200,
            n_peaks: 3,
            min_separation_deg: 3.0,
            noise_scale: 0.1,
            refit_noise: false,
            normalize_bins: false,
        }
    }
}

impl SolverConfig {
    pub fn msbl(&self) -> MsblConfig {
        MsblConfig {
            convergence_threshold: self.convergence_threshold,
            max_iterations: self.max_iterations,
            noise_scale: self.noise_scale,
            refit_noise: self.refit_noise,
            normalize_bins: self.normalize_bins,
            ..MsblConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    /// Omit for a noiseless render.
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub reverb: Option<ReverbConfig>,
}

fn default_sample_rate() -> f64 {
    48000.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    /// `white`, `speech`, or `wav:<path>`.
    #[serde(default = "default_signal")]
    pub signal: String,
}

fn default_signal() -> String {
    "speech".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReverbConfig {
    pub t60_s: f64,
    #[serde(default = "default_density")]
    pub density_per_s: f64,
    #[serde(default = "default_energy_ratio")]
    pub energy_ratio: f64,
}

fn default_density() -> f64 {
    500.0
}

fn default_energy_ratio() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Record wall-clock runtime in reports. Off by default because timing
    /// breaks byte-for-byte reproducibility of the outputs.
    #[serde(default)]
    pub timing: bool,
    /// Write the solver iteration trace CSV.
    #[serde(default)]
    pub trace: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            timing: false,
            trace: false,
        }
    }
}

impl JobConfig {
    /// Parses and validates a TOML job file.
    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> ConfigResult<Self> {
        let cfg: JobConfig =
            toml::from_str(text).map_err(|e| ConfigError(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies environment overrides (`SRPLOC_OUT_DIR`).
    pub fn resolve_env(mut self) -> Self {
        if let Ok(dir) = std::env::var("SRPLOC_OUT_DIR") {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
        self
    }

    pub fn validate(&self) -> ConfigResult<()> {
        if self.array.file.is_none() && self.array.geometry != "planar16" {
            return err(format!(
                "array.geometry: unknown built-in geometry {:?} (expected \"planar16\")",
                self.array.geometry
            ));
        }
        if !(self.array.sound_speed > 0.0) {
            return err("array.sound_speed: must be positive");
        }
        if !self.stft.frame_length.is_power_of_two() {
            return err("stft.frame_length: must be a power of two");
        }
        if !(0.0..1.0).contains(&self.stft.overlap) {
            return err("stft.overlap: must lie in [0, 1)");
        }
        if !(self.band.low_hz >= 0.0 && self.band.high_hz > self.band.low_hz) {
            return err("band: high_hz must exceed low_hz ≥ 0");
        }
        if !(self.solver.convergence_threshold > 0.0) {
            return err("solver.convergence_threshold: must be positive");
        }
        if self.solver.max_iterations == 0 {
            return err("solver.max_iterations: must be at least 1");
        }
        if self.solver.n_peaks == 0 {
            return err("solver.n_peaks: must be at least 1");
        }
        if self.solver.min_separation_deg < 0.0 {
            return err("solver.min_separation_deg: must be nonnegative");
        }
        for (label, step) in [
            ("grid.coarse_elevation_step_deg", self.grid.coarse_elevation_step_deg),
            ("grid.coarse_azimuth_step_deg", self.grid.coarse_azimuth_step_deg),
            ("grid.fine_elevation_step_deg", self.grid.fine_elevation_step_deg),
            ("grid.fine_azimuth_step_deg", self.grid.fine_azimuth_step_deg),
        ] {
            if !(step > 0.0) {
                return err(format!("{label}: must be positive"));
            }
        }
        if let Some(s) = &self.scenario {
            if !(s.duration_s > 0.0) {
                return err("scenario.duration_s: must be positive");
            }
            if !(s.sample_rate > 0.0) {
                return err("scenario.sample_rate: must be positive");
            }
            if s.sources.is_empty() {
                return err("scenario.sources: need at least one source");
            }
            for (i, src) in s.sources.iter().enumerate() {
                if !(-90.0..=90.0).contains(&src.elevation_deg) {
                    return err(format!(
                        "scenario.sources[{i}].elevation_deg: outside [-90, 90]"
                    ));
                }
                if !(0.0..=180.0).contains(&src.azimuth_deg) {
                    return err(format!(
                        "scenario.sources[{i}].azimuth_deg: outside [0, 180]"
                    ));
                }
                parse_signal(&src.signal)
                    .map_err(|e| ConfigError(format!("scenario.sources[{i}].signal: {e}")))?;
            }
            if let Some(r) = &s.reverb {
                if !(r.t60_s > 0.0) {
                    return err("scenario.reverb.t60_s: must be positive");
                }
                if !(r.density_per_s > 0.0) {
                    return err("scenario.reverb.density_per_s: must be positive");
                }
                if r.energy_ratio < 0.0 {
                    return err("scenario.reverb.energy_ratio: must be nonnegative");
                }
            }
        }
        if self.input.wav.is_none() && self.scenario.is_none() {
            return err("input: either input.wav or a [scenario] section is required");
        }
        Ok(())
    }

    pub fn mic_array(&self) -> ConfigResult<MicArray> {
        if let Some(path) = &self.array.file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("array.file {}: {e}", path.display())))?;
            return MicArray::from_text(&text, self.array.sound_speed)
                .map_err(|e| ConfigError(format!("array.file: {e}")));
        }
        let mut array = MicArray::planar16();
        if (self.array.sound_speed - srploc::DEFAULT_SOUND_SPEED).abs() > 0.0 {
            array = MicArray::new(array.positions().to_vec(), self.array.sound_speed)
                .map_err(|e| ConfigError(e.to_string()))?;
        }
        Ok(array)
    }

    pub fn coarse_grid(&self) -> ConfigResult<DoaGrid> {
        build_doa_grid(
            self.grid.coarse_elevation_step_deg,
            self.grid.coarse_azimuth_step_deg,
        )
        .map_err(|e| ConfigError(format!("grid (coarse): {e}")))
    }

    pub fn fine_grid(&self) -> ConfigResult<DoaGrid> {
        build_doa_grid(
            self.grid.fine_elevation_step_deg,
            self.grid.fine_azimuth_step_deg,
        )
        .map_err(|e| ConfigError(format!("grid (fine): {e}")))
    }

    pub fn bin_range(&self, sample_rate: f64) -> ConfigResult<BinRange> {
        BinRange::from_hz(
            self.band.low_hz,
            self.band.high_hz,
            sample_rate,
            self.stft.frame_length,
        )
        .map_err(|e| ConfigError(format!("band: {e}")))
    }

    pub fn dictionary_mode(&self) -> DictionaryMode {
        // Far field throughout; DOA grids have no range coordinate.
        DictionaryMode::FarField
    }

    /// Materializes the synthetic scenario with the job's array and seed.
    pub fn scenario(&self, seed: u64) -> ConfigResult<Scenario> {
        let Some(sc) = &self.scenario else {
            return err("no [scenario] section in config");
        };
        let array = self.mic_array()?;
        let sources = sc
            .sources
            .iter()
            .map(|s| {
                Ok(SourceSpec {
                    doa: GridPoint::new(s.elevation_deg, s.azimuth_deg),
                    signal: parse_signal(&s.signal)?,
                })
            })
            .collect::<ConfigResult<Vec<_>>>()?;
        let reverb = match &sc.reverb {
            None => Reverb::None,
            Some(r) => Reverb::Exponential {
                t60: r.t60_s,
                density: r.density_per_s,
                energy_ratio: r.energy_ratio,
            },
        };
        Ok(Scenario {
            array,
            sources,
            duration_s: sc.duration_s,
            sample_rate: sc.sample_rate,
            snr_db: sc.snr_db,
            reverb,
            seed,
        })
    }

    pub fn truths(&self) -> ConfigResult<Vec<GridPoint>> {
        let Some(sc) = &self.scenario else {
            return err("no [scenario] section in config");
        };
        Ok(sc
            .sources
            .iter()
            .map(|s| GridPoint::new(s.elevation_deg, s.azimuth_deg))
            .collect())
    }
}

fn parse_signal(text: &str) -> ConfigResult<SignalKind> {
    match text {
        "white" => Ok(SignalKind::White),
        "speech" => Ok(SignalKind::SpeechShaped),
        other => {
            if let Some(path) = other.strip_prefix("wav:") {
                Ok(SignalKind::WavFile(PathBuf::from(path)))
            } else {
                err(format!(
                    "expected \"white\", \"speech\" or \"wav:<path>\", got {other:?}"
                ))
            }
        }
    }
}
