//! PHAT-whitened cross-spectra and steered response power maps.
//!
//! The steering phase for a candidate with pair delay `τ` at bin frequency
//! `f` is `e^{j2πfτ}`, which coherently undoes the `e^{−j2πfτ}` phase a
//! far-field source imprints on the whitened cross-spectrum of that pair.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{s, Array2, Array3, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{bin_frequency_hz, tdoa, DoaGrid, MicArray, Target};
use crate::localize::{self, PeakSelection};
use crate::stft::{BinRange, Spectrogram};

/// Magnitudes below this are treated as absent: the whitened entry is set to
/// exactly 0 so degenerate bins contribute nothing instead of amplified noise.
pub const PHAT_FLOOR: f64 = 1e-12;

/// PHAT-whitened cross-spectra for every microphone pair, `L × K_band × T`.
#[derive(Debug, Clone)]
pub struct WhitenedCrossSpectra {
    values: Array3<Complex64>,
    pair_order: Vec<(usize, usize)>,
    band: BinRange,
    sample_rate: f64,
    frame_length: usize,
}

impl WhitenedCrossSpectra {
    pub fn n_pairs(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.values.shape()[2]
    }

    /// Bin range the cross-spectra cover (absolute STFT bin indices).
    pub fn band(&self) -> BinRange {
        self.band
    }

    pub fn pair_order(&self) -> &[(usize, usize)] {
        &self.pair_order
    }

    /// Whitened entry for pair `l` at absolute bin `k`, frame `t`.
    pub fn entry(&self, l: usize, k: usize, t: usize) -> Complex64 {
        self.values[[l, k - self.band.lo, t]]
    }

    pub fn bin_frequency_hz(&self, k: usize) -> f64 {
        bin_frequency_hz(k, self.sample_rate, self.frame_length)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }
}

/// Whitens all pair cross-spectra of `spec` over the full one-sided spectrum.
pub fn whiten(spec: &Spectrogram, array: &MicArray) -> WhitenedCrossSpectra {
    let full = BinRange::new(0, spec.n_bins() - 1).expect("spectrogram has bins");
    whiten_band(spec, array, full)
}

/// Band-limited whitening; entries outside `band` are never computed.
pub fn whiten_band(
    spec: &Spectrogram,
    array: &MicArray,
    band: BinRange,
) -> WhitenedCrossSpectra {
    let pairs = array.pairs().to_vec();
    let bins = spec.bins();
    let (n_k, n_t) = (band.len(), spec.n_frames());
    let mut values = Array3::zeros((pairs.len(), n_k, n_t));
    for (l, &(m, mp)) in pairs.iter().enumerate() {
        for (ki, k) in band.iter().enumerate() {
            for t in 0..n_t {
                let cross = bins[[m, k, t]] * bins[[mp, k, t]].conj();
                let mag = cross.norm();
                values[[l, ki, t]] = if mag < PHAT_FLOOR {
                    Complex64::new(0.0, 0.0)
                } else {
                    cross / mag
                };
            }
        }
    }
    WhitenedCrossSpectra {
        values,
        pair_order: pairs,
        band,
        sample_rate: spec.sample_rate(),
        frame_length: spec.frame_length(),
    }
}

/// Steered response power of one time-frequency cell for a candidate whose
/// pair delays are `candidate_tdoas` (seconds, in pair order).
pub fn srp_bin(
    cross: &WhitenedCrossSpectra,
    k: usize,
    t: usize,
    candidate_tdoas: &[f64],
    bin_frequency_hz: f64,
) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (l, &tau) in candidate_tdoas.iter().enumerate() {
        let steer = Complex64::from_polar(1.0, 2.0 * PI * bin_frequency_hz * tau);
        acc += cross.entry(l, k, t) * steer;
    }
    acc.re
}

/// The multidimensional SRP map `Z`, `N × T × K_band`, over a coarse grid.
#[derive(Debug, Clone)]
pub struct SrpTensor {
    values: Array3<f64>,
    grid: DoaGrid,
    band: BinRange,
    sample_rate: f64,
    frame_length: usize,
}

impl SrpTensor {
    pub fn from_parts(
        values: Array3<f64>,
        grid: DoaGrid,
        band: BinRange,
        sample_rate: f64,
        frame_length: usize,
    ) -> Result<Self> {
        if values.shape()[0] != grid.len() || values.shape()[2] != band.len() {
            return Err(Error::config(format!(
                "SRP tensor shape {:?} inconsistent with grid {} and band {}",
                values.shape(),
                grid.len(),
                band.len()
            )));
        }
        Ok(Self {
            values,
            grid,
            band,
            sample_rate,
            frame_length,
        })
    }

    pub fn n_candidates(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn n_bins(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn coarse_grid(&self) -> &DoaGrid {
        &self.grid
    }

    pub fn band(&self) -> BinRange {
        self.band
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    /// `N × T` slice at band-relative bin index `ki`.
    pub fn bin_slice(&self, ki: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![.., .., ki])
    }

    pub fn bin_frequency_hz(&self, ki: usize) -> f64 {
        bin_frequency_hz(self.band.lo + ki, self.sample_rate, self.frame_length)
    }

    /// Time-frequency-averaged coarse map, one value per grid point.
    pub fn averaged_map(&self) -> Vec<f64> {
        let scale = 1.0 / (self.n_frames() * self.n_bins()) as f64;
        (0..self.n_candidates())
            .map(|n| self.values.slice(s![n, .., ..]).sum() * scale)
            .collect()
    }

    /// Dumps the full tensor as CSV (`candidate,frame,bin,value`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "candidate,frame,bin,value")?;
        for ((n, t, ki), v) in self.values.indexed_iter() {
            writeln!(w, "{n},{t},{},{v}", self.band.lo + ki)?;
        }
        Ok(())
    }
}

/// Builds the SRP tensor over `coarse_grid` for the bins in `freq_band`.
///
/// Candidate pair delays are computed once per (grid point, pair); each bin
/// then steers all frames with the same phasor table.
pub fn srp_tensor(
    cross: &WhitenedCrossSpectra,
    coarse_grid: &DoaGrid,
    array: &MicArray,
    freq_band: BinRange,
) -> Result<SrpTensor> {
    if freq_band.lo < cross.band().lo || freq_band.hi > cross.band().hi {
        return Err(Error::config(format!(
            "requested band {}..={} outside whitened band {}..={}",
            freq_band.lo,
            freq_band.hi,
            cross.band().lo,
            cross.band().hi
        )));
    }
    let n = coarse_grid.len();
    let l_pairs = cross.n_pairs();
    let n_t = cross.n_frames();

    // TDOA table, one entry per (candidate, pair).
    let mut taus = Array2::zeros((n, l_pairs));
    for (ni, point) in coarse_grid.points().iter().enumerate() {
        for (l, &pair) in cross.pair_order().iter().enumerate() {
            taus[[ni, l]] = tdoa(array, pair, Target::Direction(point.unit))?;
        }
    }

    let mut values = Array3::zeros((n, n_t, freq_band.len()));
    let mut acc = vec![Complex64::new(0.0, 0.0); n_t];
    for (ki, k) in freq_band.iter().enumerate() {
        let f_k = cross.bin_frequency_hz(k);
        for ni in 0..n {
            acc.fill(Complex64::new(0.0, 0.0));
            for l in 0..l_pairs {
                let steer = Complex64::from_polar(1.0, 2.0 * PI * f_k * taus[[ni, l]]);
                for (t, slot) in acc.iter_mut().enumerate() {
                    *slot += cross.entry(l, k, t) * steer;
                }
            }
            for (t, slot) in acc.iter().enumerate() {
                values[[ni, t, ki]] = slot.re;
            }
        }
    }
    SrpTensor::from_parts(
        values,
        coarse_grid.clone(),
        freq_band,
        cross.sample_rate(),
        cross.frame_length(),
    )
}

/// Conventional SRP-PHAT localization: averages the tensor over time and
/// frequency, then ranks the strict local maxima of the coarse map subject to
/// a minimum angular separation.
pub fn srp_phat_localize(
    tensor: &SrpTensor,
    n_sources: usize,
    min_separation_deg: f64,
) -> Result<PeakSelection> {
    if n_sources == 0 {
        return Err(Error::config("n_sources must be at least 1"));
    }
    let map = tensor.averaged_map();
    let maxima = localize::grid_local_maxima(&map, tensor.coarse_grid());
    Ok(localize::select_separated(
        &map,
        tensor.coarse_grid(),
        &maxima,
        n_sources,
        min_separation_deg,
    ))
}

/// Writes a per-grid-point map as CSV (`index,elevation_deg,azimuth_deg,value`).
pub fn write_map_csv<W: Write>(mut w: W, grid: &DoaGrid, values: &[f64]) -> Result<()> {
    writeln!(w, "index,elevation_deg,azimuth_deg,value")?;
    for (i, (p, v)) in grid.points().iter().zip(values).enumerate() {
        writeln!(w, "{i},{},{},{v}", p.elevation_deg, p.azimuth_deg)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_doa_grid, GridPoint, Vec3};
    use ndarray::Array3 as A3;

    fn tiny_spec(bins: A3<Complex64>, frame: usize, fs: f64) -> Spectrogram {
        Spectrogram::from_bins(bins, frame, frame / 2, fs).unwrap()
    }

    fn two_mic_array() -> MicArray {
        MicArray::with_default_sound_speed(vec![
            Vec3::new(0.05, 0.0, 0.0),
            Vec3::new(-0.05, 0.0, 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn whiten_removes_magnitude_keeps_phase() {
        let arr = two_mic_array();
        let mut bins = A3::zeros((2, 3, 1));
        bins[[0, 1, 0]] = Complex64::from_polar(2.0, PI / 3.0);
        bins[[1, 1, 0]] = Complex64::from_polar(0.5, PI / 6.0);
        let spec = tiny_spec(bins, 4, 8000.0);
        let cross = whiten(&spec, &arr);
        let e = cross.entry(0, 1, 0);
        assert!((e - Complex64::from_polar(1.0, PI / 6.0)).norm() < 1e-12);
        // zero bins are floored to exactly zero
        assert_eq!(cross.entry(0, 0, 0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn whiten_identical_channels_gives_unit_phase() {
        let arr = two_mic_array();
        let mut bins = A3::zeros((2, 3, 2));
        for k in 0..3 {
            for t in 0..2 {
                let v = Complex64::from_polar(1.0 + k as f64, 0.3 * (k + t) as f64);
                bins[[0, k, t]] = v;
                bins[[1, k, t]] = v;
            }
        }
        let spec = tiny_spec(bins, 4, 8000.0);
        let cross = whiten(&spec, &arr);
        for k in 0..3 {
            for t in 0..2 {
                assert!((cross.entry(0, k, t) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn srp_bin_coherent_sum_reaches_pair_count() {
        // Entries that exactly cancel the steering phase sum to L.
        let l = 120usize;
        let f = 1000.0;
        let taus: Vec<f64> = (0..l).map(|i| (i as f64 - 60.0) * 1e-5).collect();
        let mut values = A3::zeros((l, 1, 1));
        for (i, &tau) in taus.iter().enumerate() {
            values[[i, 0, 0]] = Complex64::from_polar(1.0, -2.0 * PI * f * tau);
        }
        let cross = WhitenedCrossSpectra {
            values,
            pair_order: (0..l).map(|i| (0, i + 1)).collect(),
            band: BinRange::new(0, 0).unwrap(),
            sample_rate: 48000.0,
            frame_length: 1024,
        };
        let z = srp_bin(&cross, 0, 0, &taus, f);
        assert!((z - l as f64).abs() < 1e-9);
    }

    #[test]
    fn srp_bin_all_floored_is_zero() {
        let cross = WhitenedCrossSpectra {
            values: A3::zeros((5, 1, 1)),
            pair_order: (0..5).map(|i| (0, i + 1)).collect(),
            band: BinRange::new(0, 0).unwrap(),
            sample_rate: 48000.0,
            frame_length: 1024,
        };
        assert_eq!(srp_bin(&cross, 0, 0, &[0.0; 5], 500.0), 0.0);
    }

    #[test]
    fn srp_bin_random_phases_concentrate() {
        // With i.i.d. uniform phases the real sum has variance L/2, so
        // |sum| < 3·sqrt(L/2) should hold for ≈99.7% of draws.
        let l = 1000usize;
        let bound = 3.0 * (l as f64 / 2.0).sqrt();
        let mut state = 0xdeadbeefu64;
        let mut uniform = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let trials = 500;
        let mut violations = 0;
        for _ in 0..trials {
            let mut values = A3::zeros((l, 1, 1));
            for i in 0..l {
                values[[i, 0, 0]] = Complex64::from_polar(1.0, 2.0 * PI * uniform());
            }
            let cross = WhitenedCrossSpectra {
                values,
                pair_order: (0..l).map(|i| (0, i + 1)).collect(),
                band: BinRange::new(0, 0).unwrap(),
                sample_rate: 48000.0,
                frame_length: 1024,
            };
            if srp_bin(&cross, 0, 0, &vec![0.0; l], 500.0).abs() >= bound {
                violations += 1;
            }
        }
        // Expected violation rate ≈ 0.3%; allow generous sampling slack.
        assert!(violations <= 8, "{violations}/{trials} outside 3σ");
    }

    #[test]
    fn srp_tensor_shape_and_consistency_with_srp_bin() {
        let arr = two_mic_array();
        let grid = build_doa_grid(45.0, 45.0).unwrap();
        let fs = 8000.0;
        let frame = 16usize;
        let mut bins = A3::zeros((2, frame / 2 + 1, 3));
        for k in 0..frame / 2 + 1 {
            for t in 0..3 {
                bins[[0, k, t]] = Complex64::from_polar(1.0, 0.2 * k as f64 + 0.1 * t as f64);
                bins[[1, k, t]] = Complex64::from_polar(0.7, -0.3 * k as f64);
            }
        }
        let spec = tiny_spec(bins, frame, fs);
        let cross = whiten(&spec, &arr);
        let band = BinRange::new(1, 5).unwrap();
        let tensor = srp_tensor(&cross, &grid, &arr, band).unwrap();
        assert_eq!(
            tensor.values().shape(),
            &[grid.len(), 3, 5]
        );
        // spot-check against the scalar path
        for ni in [0usize, 7, 24] {
            let taus: Vec<f64> = arr
                .pairs()
                .iter()
                .map(|&p| tdoa(&arr, p, Target::Direction(grid.point(ni).unit)).unwrap())
                .collect();
            for (ki, k) in band.iter().enumerate() {
                for t in 0..3 {
                    let direct = srp_bin(&cross, k, t, &taus, cross.bin_frequency_hz(k));
                    assert_eq!(tensor.values()[[ni, t, ki]], direct);
                }
            }
        }
    }

    #[test]
    fn srp_tensor_zero_input_is_zero() {
        let arr = two_mic_array();
        let grid = build_doa_grid(90.0, 90.0).unwrap();
        let spec = tiny_spec(A3::zeros((2, 9, 4)), 16, 8000.0);
        let cross = whiten(&spec, &arr);
        let tensor = srp_tensor(&cross, &grid, &arr, BinRange::new(0, 8).unwrap()).unwrap();
        assert!(tensor.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn srp_tensor_rejects_band_outside_cross() {
        let arr = two_mic_array();
        let grid = build_doa_grid(90.0, 90.0).unwrap();
        let spec = tiny_spec(A3::zeros((2, 9, 4)), 16, 8000.0);
        let cross = whiten_band(&spec, &arr, BinRange::new(2, 6).unwrap());
        assert!(srp_tensor(&cross, &grid, &arr, BinRange::new(0, 8).unwrap()).is_err());
    }

    #[test]
    fn averaged_map_is_mean_over_frames_and_bins() {
        let grid = build_doa_grid(90.0, 90.0).unwrap();
        let mut values = A3::zeros((grid.len(), 2, 3));
        for ((n, t, k), v) in values.indexed_iter_mut() {
            *v = (n * 100 + t * 10 + k) as f64;
        }
        let tensor = SrpTensor::from_parts(
            values.clone(),
            grid,
            BinRange::new(0, 2).unwrap(),
            8000.0,
            16,
        )
        .unwrap();
        let map = tensor.averaged_map();
        for (n, &v) in map.iter().enumerate() {
            let mut exp = 0.0;
            for t in 0..2 {
                for k in 0..3 {
                    exp += values[[n, t, k]];
                }
            }
            exp /= 6.0;
            assert!((v - exp).abs() < 1e-12);
        }
    }

    #[test]
    fn phat_is_invariant_to_channel_scaling() {
        let arr = two_mic_array();
        let grid = build_doa_grid(45.0, 90.0).unwrap();
        let frame = 16usize;
        let fs = 8000.0;
        let mut bins = A3::zeros((2, frame / 2 + 1, 2));
        for k in 1..frame / 2 + 1 {
            for t in 0..2 {
                bins[[0, k, t]] = Complex64::from_polar(0.9, 0.4 * k as f64 * (t + 1) as f64);
                bins[[1, k, t]] = Complex64::from_polar(1.3, -0.2 * k as f64);
            }
        }
        let scaled = {
            let mut b = bins.clone();
            b.slice_mut(s![0usize, .., ..]).mapv_inplace(|v| v * 37.5);
            b
        };
        let band = BinRange::new(1, frame / 2).unwrap();
        let t1 = srp_tensor(
            &whiten(&tiny_spec(bins, frame, fs), &arr),
            &grid,
            &arr,
            band,
        )
        .unwrap();
        let t2 = srp_tensor(
            &whiten(&tiny_spec(scaled, frame, fs), &arr),
            &grid,
            &arr,
            band,
        )
        .unwrap();
        for (a, b) in t1.values().iter().zip(t2.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn srp_bin_bounded_by_active_pairs() {
        let l = 37;
        let mut values = A3::zeros((l, 1, 1));
        let mut state = 17u64;
        for i in 0..l {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let phase = (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 * PI;
            if i % 5 == 0 {
                values[[i, 0, 0]] = Complex64::new(0.0, 0.0); // floored
            } else {
                values[[i, 0, 0]] = Complex64::from_polar(1.0, phase);
            }
        }
        let active = (0..l).filter(|i| i % 5 != 0).count() as f64;
        let cross = WhitenedCrossSpectra {
            values,
            pair_order: (0..l).map(|i| (0, i + 1)).collect(),
            band: BinRange::new(0, 0).unwrap(),
            sample_rate: 48000.0,
            frame_length: 1024,
        };
        let taus: Vec<f64> = (0..l).map(|i| i as f64 * 3e-5).collect();
        let z = srp_bin(&cross, 0, 0, &taus, 700.0);
        assert!(z.abs() <= active + 1e-12);
    }

    #[test]
    fn map_csv_format() {
        let grid = build_doa_grid(90.0, 180.0).unwrap();
        let mut out = Vec::new();
        write_map_csv(&mut out, &grid, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "index,elevation_deg,azimuth_deg,value");
        assert_eq!(lines.next().unwrap(), "0,-90,0,1");
        assert_eq!(lines.next().unwrap(), "1,-90,180,2");
    }

    #[test]
    fn localize_requires_sources() {
        let grid = build_doa_grid(90.0, 90.0).unwrap();
        let tensor = SrpTensor::from_parts(
            A3::zeros((grid.len(), 1, 1)),
            grid,
            BinRange::new(0, 0).unwrap(),
            8000.0,
            16,
        )
        .unwrap();
        assert!(srp_phat_localize(&tensor, 0, 3.0).is_err());
        let sel = srp_phat_localize(&tensor, 1, 3.0).unwrap();
        assert!(sel.shortfall); // constant map has no strict local maxima
        let _ = GridPoint::new(0.0, 0.0);
    }
}
