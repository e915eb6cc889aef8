//! Multi-source acoustic localization from multichannel recordings.
//!
//! The pipeline builds PHAT-whitened steered response power (SRP) maps over
//! a coarse direction grid and sharpens them into high-resolution source
//! maps on a fine grid with multidimensional sparse Bayesian learning.
//! Three reference localizers are included for comparison: conventional
//! SRP-PHAT, simultaneous-OMP sparse fitting of the averaged map, and M-SBL
//! applied directly to microphone spectra.

pub mod dictionary;
pub mod error;
pub mod geometry;
pub mod localize;
pub mod sim;
pub mod solvers;
pub mod srp;
pub mod stft;

pub use dictionary::{
    build_dictionary, build_dictionary_cached, dictionary_column, DictionaryConfig,
    DictionaryMode, DictionarySet, Materialize,
};
pub use error::{Error, Result};
pub use geometry::{
    build_doa_grid, build_full_sphere_grid, green, rtf, rtf_at, tdoa, tdoa_from_rtf, DoaGrid,
    GridPoint, MicArray, Target, Vec3, DEFAULT_SOUND_SPEED,
};
pub use localize::{
    great_circle_angle, great_circle_angle_units, localization_error, pick_peaks, DoaEstimate,
    PeakSelection,
};
pub use sim::{ideal_ff_spectrogram, signal_spec, synthesize, Reverb, Scenario, SignalKind,
    SourceSpec};
pub use solvers::{
    msbl_direct_solve, msbl_solve, msbl_solve_detailed, msbl_update, somp_solve,
    somp_solve_detailed, MsblConfig, MsblState, SolverTag, SompResult, SparseMap,
};
pub use srp::{
    srp_bin, srp_phat_localize, srp_tensor, whiten, whiten_band, write_map_csv, SrpTensor,
    WhitenedCrossSpectra,
};
pub use stft::{load_wav, stft, write_wav, BinRange, MultichannelSignal, Spectrogram};
