//! Multichannel WAV ingestion and short-time Fourier analysis.
//!
//! Framing convention: Hann-windowed frames of `frame_length` samples spaced
//! `hop` apart, starting at sample 0; trailing samples that do not fill a
//! final frame are dropped, so `T = (n_samples − frame_length)/hop + 1`.
//! Spectra are one-sided with `K = frame_length/2 + 1` bins.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::bin_frequency_hz;

/// A multichannel time-domain recording, channels × samples.
#[derive(Debug, Clone)]
pub struct MultichannelSignal {
    samples: Array2<f64>,
    sample_rate: f64,
}

impl MultichannelSignal {
    pub fn new(samples: Array2<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::config("sample rate must be positive"));
        }
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::Size("signal has no samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn channel(&self, m: usize) -> ndarray::ArrayView1<'_, f64> {
        self.samples.row(m)
    }

    /// First `n_samples` of every channel; used for duration sweeps.
    pub fn truncated(&self, n_samples: usize) -> Result<Self> {
        if n_samples == 0 || n_samples > self.n_samples() {
            return Err(Error::Size(format!(
                "cannot truncate {} samples to {n_samples}",
                self.n_samples()
            )));
        }
        Ok(Self {
            samples: self
                .samples
                .slice(ndarray::s![.., ..n_samples])
                .to_owned(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Reads a PCM 16/24/32-bit or 32-bit-float RIFF WAV file, normalizing
/// integer samples to [−1, 1] and preserving channel order.
pub fn load_wav(path: impl AsRef<Path>) -> Result<MultichannelSignal> {
    let reader = hound::WavReader::open(path.as_ref()).map_err(wav_error)?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 {
        return Err(Error::Format("WAV declares zero channels".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from).map_err(wav_error))
            .collect::<Result<_>>()?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale).map_err(wav_error))
                .collect::<Result<_>>()?
        }
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "unsupported WAV encoding: {bits}-bit {fmt:?}"
            )))
        }
    };

    if interleaved.is_empty() {
        return Err(Error::Format("WAV data chunk is empty".into()));
    }
    if interleaved.len() % n_channels != 0 {
        return Err(Error::Format(
            "WAV data length is not a whole number of frames".into(),
        ));
    }
    let n_samples = interleaved.len() / n_channels;
    let mut samples = Array2::zeros((n_channels, n_samples));
    for (i, &v) in interleaved.iter().enumerate() {
        samples[[i % n_channels, i / n_channels]] = v;
    }
    MultichannelSignal::new(samples, spec.sample_rate as f64)
}

/// Writes the signal as 32-bit-float WAV.
pub fn write_wav(path: impl AsRef<Path>, signal: &MultichannelSignal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: signal.n_channels() as u16,
        sample_rate: signal.sample_rate() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec).map_err(wav_error)?;
    for t in 0..signal.n_samples() {
        for m in 0..signal.n_channels() {
            writer
                .write_sample(signal.samples[[m, t]] as f32)
                .map_err(wav_error)?;
        }
    }
    writer.finalize().map_err(wav_error)
}

fn wav_error(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

/// An inclusive range of STFT bin indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinRange {
    pub lo: usize,
    pub hi: usize,
}

impl BinRange {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::config(format!("empty bin range {lo}..={hi}")));
        }
        Ok(Self { lo, hi })
    }

    /// Smallest bin range covering `[lo_hz, hi_hz]` at the given analysis
    /// parameters, clamped to the one-sided spectrum.
    pub fn from_hz(
        lo_hz: f64,
        hi_hz: f64,
        sample_rate: f64,
        frame_length: usize,
    ) -> Result<Self> {
        if !(lo_hz >= 0.0 && hi_hz > lo_hz) {
            return Err(Error::config(format!("bad frequency band {lo_hz}–{hi_hz} Hz")));
        }
        let k_max = frame_length / 2;
        let lo = (lo_hz * frame_length as f64 / sample_rate).ceil() as usize;
        let hi = ((hi_hz * frame_length as f64 / sample_rate).floor() as usize).min(k_max);
        if lo > hi {
            return Err(Error::config(format!(
                "band {lo_hz}–{hi_hz} Hz contains no bins at fs={sample_rate}, frame={frame_length}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.lo..=self.hi
    }
}

/// Complex STFT tensor of an M-channel recording, `M × K × T`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    bins: Array3<Complex64>,
    frame_length: usize,
    hop: usize,
    sample_rate: f64,
}

impl Spectrogram {
    /// Assembles a spectrogram from raw bins; mainly useful for synthetic
    /// frequency-domain fixtures.
    pub fn from_bins(
        bins: Array3<Complex64>,
        frame_length: usize,
        hop: usize,
        sample_rate: f64,
    ) -> Result<Self> {
        if bins.shape()[1] != frame_length / 2 + 1 {
            return Err(Error::config(format!(
                "bin count {} does not match frame length {frame_length}",
                bins.shape()[1]
            )));
        }
        Ok(Self {
            bins,
            frame_length,
            hop,
            sample_rate,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.bins.shape()[0]
    }

    pub fn n_bins(&self) -> usize {
        self.bins.shape()[1]
    }

    pub fn n_frames(&self) -> usize {
        self.bins.shape()[2]
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn bins(&self) -> ArrayView3<'_, Complex64> {
        self.bins.view()
    }

    /// Physical center frequency of bin `k`.
    pub fn bin_frequency_hz(&self, k: usize) -> f64 {
        bin_frequency_hz(k, self.sample_rate, self.frame_length)
    }

    /// Dumps all bins as CSV (`channel,bin,frame,re,im`) for debugging.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "channel,bin,frame,re,im")?;
        for ((m, k, t), v) in self.bins.indexed_iter() {
            writeln!(w, "{m},{k},{t},{},{}", v.re, v.im)?;
        }
        Ok(())
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Short-time Fourier transform of all channels.
///
/// `frame_length` must be a power of two and `overlap_fraction` in [0, 1);
/// the hop is `frame_length · (1 − overlap_fraction)` rounded to the nearest
/// sample.
pub fn stft(
    signal: &MultichannelSignal,
    frame_length: usize,
    overlap_fraction: f64,
) -> Result<Spectrogram> {
    if !frame_length.is_power_of_two() {
        return Err(Error::config(format!(
            "frame length {frame_length} is not a power of two"
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::config(format!(
            "overlap fraction {overlap_fraction} outside [0, 1)"
        )));
    }
    if signal.n_samples() < frame_length {
        return Err(Error::Size(format!(
            "signal of {} samples is shorter than one frame ({frame_length})",
            signal.n_samples()
        )));
    }
    let hop = ((frame_length as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let n_frames = (signal.n_samples() - frame_length) / hop + 1;
    let n_bins = frame_length / 2 + 1;
    let window = hann_window(frame_length);

    let fft = FftPlanner::new().plan_fft_forward(frame_length);
    let mut bins = Array3::zeros((signal.n_channels(), n_bins, n_frames));
    let mut buf = vec![Complex64::default(); frame_length];
    for m in 0..signal.n_channels() {
        let channel = signal.channel(m);
        for t in 0..n_frames {
            let start = t * hop;
            fill_frame(&mut buf, &channel, start, &window);
            fft.process(&mut buf);
            for k in 0..n_bins {
                bins[[m, k, t]] = buf[k];
            }
        }
    }
    Spectrogram::from_bins(bins, frame_length, hop, signal.sample_rate())
}

fn fill_frame(
    buf: &mut [Complex64],
    channel: &ndarray::ArrayView1<'_, f64>,
    start: usize,
    window: &[f64],
) {
    for (i, slot) in buf.iter_mut().enumerate() {
        *slot = Complex64::new(channel[start + i] * window[i], 0.0);
    }
}

/// Shared FFT plan helper for other modules.
pub(crate) fn forward_fft(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(n)
}

pub(crate) fn inverse_fft(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_inverse(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn mono(samples: Vec<f64>, fs: f64) -> MultichannelSignal {
        let n = samples.len();
        MultichannelSignal::new(
            Array2::from_shape_vec((1, n), samples).unwrap(),
            fs,
        )
        .unwrap()
    }

    #[test]
    fn framing_arithmetic() {
        let sig = mono(vec![0.0; 48000], 48000.0);
        let spec = stft(&sig, 1024, 0.5).unwrap();
        assert_eq!(spec.n_frames(), 92);
        assert_eq!(spec.n_bins(), 513);
        assert_eq!(spec.hop(), 512);
    }

    #[test]
    fn zero_signal_gives_zero_bins() {
        let sig = mono(vec![0.0; 4096], 16000.0);
        let spec = stft(&sig, 512, 0.5).unwrap();
        assert!(spec.bins().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn sinusoid_at_bin_center_concentrates() {
        let fs = 16000.0;
        let frame = 512usize;
        let k0 = 64usize;
        let f0 = k0 as f64 * fs / frame as f64;
        let n = 4096;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * f0 * i as f64 / fs).sin())
            .collect();
        let spec = stft(&mono(samples, fs), frame, 0.5).unwrap();
        for t in 0..spec.n_frames() {
            let peak = spec.bins()[[0, k0, t]].norm();
            for k in 0..spec.n_bins() {
                if k + 1 >= k0 && k <= k0 + 1 {
                    continue; // Hann mainlobe spans the adjacent bins
                }
                assert!(
                    peak >= 100.0 * spec.bins()[[0, k, t]].norm(),
                    "bin {k} too large at frame {t}"
                );
            }
        }
    }

    #[test]
    fn parseval_per_frame() {
        let fs = 8000.0;
        let frame = 256usize;
        let mut state = 0x12345u64;
        let mut rng = move || {
            // xorshift is plenty for test noise
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) - 0.5
        };
        let samples: Vec<f64> = (0..1024).map(|_| rng()).collect();
        let window = hann_window(frame);
        let sig = mono(samples.clone(), fs);
        let spec = stft(&sig, frame, 0.5).unwrap();
        for t in 0..spec.n_frames() {
            let start = t * spec.hop();
            let time_energy: f64 = (0..frame)
                .map(|i| (samples[start + i] * window[i]).powi(2))
                .sum();
            let mut spec_energy = spec.bins()[[0, 0, t]].norm_sqr()
                + spec.bins()[[0, frame / 2, t]].norm_sqr();
            for k in 1..frame / 2 {
                spec_energy += 2.0 * spec.bins()[[0, k, t]].norm_sqr();
            }
            spec_energy /= frame as f64;
            assert!(
                (time_energy - spec_energy).abs() <= 1e-6 * time_energy.abs().max(1e-12),
                "frame {t}: {time_energy} vs {spec_energy}"
            );
        }
    }

    #[test]
    fn stft_is_linear() {
        let fs = 8000.0;
        let n = 2048;
        let a: Vec<f64> = (0..n).map(|i| ((i * 7919 + 13) % 1000) as f64 / 500.0 - 1.0).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 104729 + 5) % 1000) as f64 / 500.0 - 1.0).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let sa = stft(&mono(a, fs), 256, 0.5).unwrap();
        let sb = stft(&mono(b, fs), 256, 0.5).unwrap();
        let ss = stft(&mono(sum, fs), 256, 0.5).unwrap();
        for ((idx, v), w) in sa.bins().indexed_iter().zip(sb.bins().iter()) {
            assert!((ss.bins()[idx] - (v + w)).norm() < 1e-9);
        }
    }

    #[test]
    fn short_signal_is_a_size_error() {
        let sig = mono(vec![0.0; 100], 8000.0);
        assert!(matches!(stft(&sig, 256, 0.5), Err(Error::Size(_))));
    }

    #[test]
    fn wav_roundtrip_preserves_header_and_channels() {
        let dir = std::env::temp_dir();
        let path = dir.join("srploc_test_roundtrip.wav");
        let mut samples = Array2::zeros((2, 480));
        for t in 0..480 {
            samples[[0, t]] = (t as f64 / 50.0).sin() * 0.5;
            samples[[1, t]] = (t as f64 / 30.0).cos() * 0.25;
        }
        let sig = MultichannelSignal::new(samples, 48000.0).unwrap();
        write_wav(&path, &sig).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.n_channels(), 2);
        assert_eq!(back.n_samples(), 480);
        assert_eq!(back.sample_rate(), 48000.0);
        for (a, b) in sig.samples().iter().zip(back.samples().iter()) {
            assert!((a - b).abs() < 1e-6); // f32 storage
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn wav_16bit_full_scale_normalizes_to_one() {
        let dir = std::env::temp_dir();
        let path = dir.join("srploc_test_fullscale.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 48000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            writer.write_sample(32767i16).unwrap();
        }
        writer.finalize().unwrap();
        let sig = load_wav(&path).unwrap();
        assert!(sig.samples().iter().all(|&v| (v - 1.0).abs() < 1e-4));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn empty_wav_is_a_format_error() {
        let dir = std::env::temp_dir();
        let path = dir.join("srploc_test_empty.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 48000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let writer = hound::WavWriter::create(&path, spec).unwrap();
        writer.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::Format(_))));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn bin_range_from_hz() {
        let band = BinRange::from_hz(300.0, 4000.0, 48000.0, 1024).unwrap();
        assert_eq!(band.lo, 7);
        assert_eq!(band.hi, 85);
        assert_eq!(band.len(), 79);
        assert!(BinRange::from_hz(5000.0, 5001.0, 8000.0, 16).is_err());
    }

    #[test]
    fn truncation() {
        let sig = mono((0..100).map(|i| i as f64).collect(), 8000.0);
        let t = sig.truncated(10).unwrap();
        assert_eq!(t.n_samples(), 10);
        assert_eq!(t.channel(0)[9], 9.0);
        assert!(sig.truncated(0).is_err());
        assert!(sig.truncated(101).is_err());
    }

    #[test]
    fn hann_window_endpoints() {
        let w = hann_window(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        let _ = Array1::from(w);
    }
}
