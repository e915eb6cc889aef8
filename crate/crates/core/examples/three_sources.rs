//! End-to-end demo: three simultaneous speech-shaped sources, two of them
//! closer together than the coarse grid can resolve, localized four ways.
//!
//! Run with `cargo run --release --example three_sources [seed]`.

use std::time::Instant;

use srploc::dictionary::{build_dictionary, DictionaryConfig, DictionaryMode, Materialize};
use srploc::geometry::{build_doa_grid, GridPoint, MicArray};
use srploc::localize::{localization_error, pick_peaks};
use srploc::sim::{synthesize, Reverb, Scenario, SignalKind, SourceSpec};
use srploc::solvers::{msbl_direct_solve, msbl_solve_detailed, somp_solve, MsblConfig};
use srploc::srp::{srp_phat_localize, srp_tensor, whiten_band};
use srploc::stft::{stft, BinRange};

fn main() {
    let arg = |i: usize, default: f64| -> f64 {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(default)
    };
    let seed = arg(1, 42.0) as u64;
    let band_lo_hz = arg(2, 2000.0);
    let band_hi_hz = arg(3, 5000.0);
    let fine_step = arg(4, 6.0);
    let max_iter = arg(5, 60.0) as usize;
    let noise_scale = arg(6, 0.1);
    let reverb_ratio = arg(7, 1.0);
    let refit = arg(8, 0.0) > 0.5;
    let frame: usize = arg(9, 1024.0) as usize;
    let duration = arg(10, 1.0);

    let array = MicArray::planar16();
    let truths = [
        GridPoint::new(30.0, 60.0),
        GridPoint::new(42.0, 60.0),
        GridPoint::new(0.0, 120.0),
    ];
    let scenario = Scenario {
        array: array.clone(),
        sources: truths
            .iter()
            .map(|&doa| SourceSpec {
                doa,
                signal: SignalKind::SpeechShaped,
            })
            .collect(),
        duration_s: duration,
        sample_rate: 48000.0,
        snr_db: Some(20.0),
        reverb: Reverb::Exponential {
            t60: 0.5,
            density: 500.0,
            energy_ratio: reverb_ratio,
        },
        seed,
    };

    let t0 = Instant::now();
    let signal = synthesize(&scenario).unwrap();
    println!("synthesize: {:.2?}", t0.elapsed());


    let t0 = Instant::now();
    let spec = stft(&signal, frame, 0.5).unwrap();
    println!("stft: {:.2?} ({} frames)", t0.elapsed(), spec.n_frames());

    let coarse = build_doa_grid(15.0, 10.0).unwrap();
    let fine = build_doa_grid(fine_step, fine_step).unwrap();
    let band = BinRange::from_hz(band_lo_hz, band_hi_hz, 48000.0, frame).unwrap();
    println!(
        "coarse N={}, fine Q={}, band {} bins ({:.0}–{:.0} Hz)",
        coarse.len(),
        fine.len(),
        band.len(),
        spec.bin_frequency_hz(band.lo),
        spec.bin_frequency_hz(band.hi),
    );

    let t0 = Instant::now();
    let cross = whiten_band(&spec, &array, band);
    println!("whiten: {:.2?}", t0.elapsed());

    let t0 = Instant::now();
    let tensor = srp_tensor(&cross, &coarse, &array, band).unwrap();
    println!("srp tensor: {:.2?}", t0.elapsed());

    // SRP-PHAT on the coarse map.
    let phat = srp_phat_localize(&tensor, 3, 3.0).unwrap();
    report("srp_phat", &phat.estimates, &truths);

    let t0 = Instant::now();
    let dict_cfg = DictionaryConfig {
        band,
        sample_rate: 48000.0,
        frame_length: frame,
        mode: DictionaryMode::FarField,
        materialize: Materialize::Always,
    };
    let dict = build_dictionary(&array, &coarse, &fine, &dict_cfg).unwrap();
    println!("dictionary: {:.2?}", t0.elapsed());

    // SRP-SBL.
    let t0 = Instant::now();
    let cfg = MsblConfig {
        convergence_threshold: 1e-3,
        max_iterations: max_iter,
        noise_scale,
        refit_noise: refit,
        ..MsblConfig::default()
    };
    let sol = msbl_solve_detailed(&tensor, &dict, &cfg).unwrap();
    println!(
        "msbl: {:.2?} ({} iterations, converged={}, last_change={:.2e})",
        t0.elapsed(),
        sol.state.iteration,
        sol.converged,
        sol.state.last_relative_change
    );
    for r in sol.trace.iter().step_by(5) {
        println!(
            "  iter {:3}: change {:.2e}, active {:4}, top: {:?}",
            r.iteration,
            r.relative_change,
            r.active,
            r.top5
                .iter()
                .map(|(i, g)| {
                    let p = fine.point(*i);
                    format!("({:.0},{:.0})={g:.2e}", p.elevation_deg, p.azimuth_deg)
                })
                .collect::<Vec<_>>()
        );
    }
    let sbl = pick_peaks(&sol.map.weights, &fine, 3, 3.0);
    report("srp_sbl", &sbl.estimates, &truths);
    let mut sorted = sol.map.weights.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!(
        "  gamma percentiles (rel to max): p1 {:.1e} p5 {:.1e} p25 {:.1e} p50 {:.1e}",
        sorted[sorted.len() / 100] / sorted[0],
        sorted[sorted.len() / 20] / sorted[0],
        sorted[sorted.len() / 4] / sorted[0],
        sorted[sorted.len() / 2] / sorted[0],
    );

    // SRP-S: SOMP on the averaged map with the band-averaged dictionary.
    let t0 = Instant::now();
    let avg_map = tensor.averaged_map();
    let avg_dict = dict.averaged_d();
    let data = ndarray::Array2::from_shape_vec((avg_map.len(), 1), avg_map).unwrap();
    let somp = somp_solve(&data, &avg_dict, 3).unwrap();
    let srp_s = pick_peaks(&somp.weights, &fine, 3, 3.0);
    println!("somp: {:.2?}", t0.elapsed());
    report("srp_s", &srp_s.estimates, &truths);

    // Direct M-SBL on microphone measurements.
    let t0 = Instant::now();
    let direct = msbl_direct_solve(&spec, &array, &fine, band, DictionaryMode::FarField, &cfg)
        .unwrap();
    let direct_sel = pick_peaks(&direct.weights, &fine, 3, 3.0);
    println!("direct msbl: {:.2?}", t0.elapsed());
    report("msbl_direct", &direct_sel.estimates, &truths);
}

fn report(name: &str, estimates: &[srploc::DoaEstimate], truths: &[GridPoint]) {
    let le = localization_error(estimates, truths).unwrap();
    let list: Vec<String> = estimates
        .iter()
        .map(|e| format!("({:.0},{:.0})@{:.3}", e.elevation_deg, e.azimuth_deg, e.score))
        .collect();
    println!("{name:12} LE = {le:6.2}°  peaks: {}", list.join(" "));
}
