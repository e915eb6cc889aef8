//! Per-bin sparse-representation operators.
//!
//! For each analysis bin `k` the set holds `A_k` (`N × L`, conjugated coarse
//! RTFs), `B_k` (`L × Q`, phase-normalized fine RTFs) and their real product
//! `D_k = Re(A_k B_k)` (`N × Q`). Column `q` of `D_k` is the idealized coarse
//! SRP response of a unit source at fine candidate `q`.

use std::borrow::Cow;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{bin_frequency_hz, rtf, wavenumber, DoaGrid, MicArray, Target, Vec3};
use crate::stft::BinRange;

/// Propagation model for dictionary atoms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DictionaryMode {
    FarField,
    /// Near-field candidates are placed `radius_m` from the array centroid
    /// along each grid direction.
    NearField { radius_m: f64 },
}

/// When to keep the dense `D_k` product in memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Materialize {
    Always,
    Never,
    /// Materialize only while the estimated total size fits the budget.
    Auto { budget_bytes: usize },
}

impl Default for Materialize {
    fn default() -> Self {
        // Leaves headroom for the solver's own per-bin working set.
        Materialize::Auto {
            budget_bytes: 2 << 30,
        }
    }
}

/// Analysis parameters the dictionary depends on.
#[derive(Debug, Clone)]
pub struct DictionaryConfig {
    pub band: BinRange,
    pub sample_rate: f64,
    pub frame_length: usize,
    pub mode: DictionaryMode,
    pub materialize: Materialize,
}

/// One bin's operators.
#[derive(Debug, Clone)]
pub struct BinDictionary {
    /// Absolute STFT bin index.
    pub bin: usize,
    pub frequency_hz: f64,
    pub wavenumber: f64,
    a: Array2<Complex64>,
    b: Array2<Complex64>,
    d: Option<Array2<f64>>,
}

impl BinDictionary {
    /// `N × L` matrix of conjugated coarse-grid RTFs.
    pub fn a(&self) -> &Array2<Complex64> {
        &self.a
    }

    /// `L × Q` matrix of unit-magnitude fine-grid RTFs.
    pub fn b(&self) -> &Array2<Complex64> {
        &self.b
    }

    /// Dense `D = Re(A·B)`, computed on demand when not materialized.
    pub fn dense_d(&self) -> Cow<'_, Array2<f64>> {
        match &self.d {
            Some(d) => Cow::Borrowed(d),
            None => Cow::Owned(real_product(&self.a, &self.b)),
        }
    }

    /// Column `q` of `D` without materializing the rest.
    pub fn column(&self, q: usize) -> Result<Vec<f64>> {
        if q >= self.b.ncols() {
            return Err(Error::config(format!(
                "dictionary column {q} out of range ({} columns)",
                self.b.ncols()
            )));
        }
        if let Some(d) = &self.d {
            return Ok(d.column(q).to_vec());
        }
        let n = self.a.nrows();
        let l = self.a.ncols();
        let mut out = vec![0.0; n];
        for (ni, slot) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for li in 0..l {
                acc += self.a[[ni, li]] * self.b[[li, q]];
            }
            *slot = acc.re;
        }
        Ok(out)
    }

    pub fn is_materialized(&self) -> bool {
        self.d.is_some()
    }
}

/// Dense real product `Re(A·B)` via the faer complex kernel.
fn real_product(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<f64> {
    let (n, l) = a.dim();
    let q = b.ncols();
    let fa = faer::Mat::<faer::c64>::from_fn(n, l, |i, j| a[[i, j]]);
    let fb = faer::Mat::<faer::c64>::from_fn(l, q, |i, j| b[[i, j]]);
    let prod = &fa * &fb;
    Array2::from_shape_fn((n, q), |(i, j)| prod[(i, j)].re)
}

/// The full per-band dictionary.
#[derive(Debug, Clone)]
pub struct DictionarySet {
    bins: Vec<BinDictionary>,
    coarse: DoaGrid,
    fine: DoaGrid,
    pair_order: Vec<(usize, usize)>,
    config: DictionaryConfig,

}

impl DictionarySet {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn n_coarse(&self) -> usize {
        self.coarse.len()
    }

    pub fn n_fine(&self) -> usize {
        self.fine.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_order.len()
    }

    pub fn bin(&self, ki: usize) -> &BinDictionary {
        &self.bins[ki]
    }

    pub fn bins(&self) -> &[BinDictionary] {
        &self.bins
    }

    pub fn coarse_grid(&self) -> &DoaGrid {
        &self.coarse
    }

    pub fn fine_grid(&self) -> &DoaGrid {
        &self.fine
    }

    pub fn pair_order(&self) -> &[(usize, usize)] {
        &self.pair_order
    }

    pub fn band(&self) -> BinRange {
        self.config.band
    }

    pub fn mode(&self) -> DictionaryMode {
        self.config.mode
    }

    /// Band-averaged dense dictionary `mean_k D_k`, the single-dictionary
    /// operator used by sparse fits of time-frequency-averaged maps.
    pub fn averaged_d(&self) -> Array2<f64> {
        let mut acc = Array2::<f64>::zeros((self.n_coarse(), self.n_fine()));
        for bin in &self.bins {
            acc += &*bin.dense_d();
        }
        acc /= self.bins.len() as f64;
        acc
    }
}

fn candidate_target(mode: DictionaryMode, centroid: Vec3, direction: Vec3) -> Target {
    match mode {
        DictionaryMode::FarField => Target::Direction(direction),
        DictionaryMode::NearField { radius_m } => {
            Target::Point(centroid + direction * radius_m)
        }
    }
}

/// Builds the dictionary for every bin in the configured band.
///
/// The underdetermined regime expects at least as many fine as coarse
/// candidates; a smaller fine grid is accepted with a warning since it only
/// weakens resolution, not correctness.
pub fn build_dictionary(
    array: &MicArray,
    coarse_grid: &DoaGrid,
    fine_grid: &DoaGrid,
    config: &DictionaryConfig,
) -> Result<DictionarySet> {
    if fine_grid.len() < coarse_grid.len() {
        log::warn!(
            "fine grid ({}) smaller than coarse grid ({}); sparse fitting loses resolution",
            fine_grid.len(),
            coarse_grid.len()
        );
    }
    let n = coarse_grid.len();
    let q = fine_grid.len();
    let l = array.n_pairs();
    let centroid = array.centroid();
    let n_bins = config.band.len();

    let materialize = match config.materialize {
        Materialize::Always => true,
        Materialize::Never => false,
        Materialize::Auto { budget_bytes } => n * q * 8 * n_bins <= budget_bytes,
    };

    let coarse_targets: Vec<Target> = coarse_grid
        .points()
        .iter()
        .map(|p| candidate_target(config.mode, centroid, p.unit))
        .collect();
    let fine_targets: Vec<Target> = fine_grid
        .points()
        .iter()
        .map(|p| candidate_target(config.mode, centroid, p.unit))
        .collect();

    let mut bins = Vec::with_capacity(n_bins);
    for k in config.band.iter() {
        let f_hz = bin_frequency_hz(k, config.sample_rate, config.frame_length);
        let kappa = wavenumber(f_hz, array.sound_speed());

        let mut a = Array2::zeros((n, l));
        for (ni, target) in coarse_targets.iter().enumerate() {
            for (li, &pair) in array.pairs().iter().enumerate() {
                a[[ni, li]] = rtf(array, pair, *target, kappa)?.conj();
            }
        }
        let mut b = Array2::zeros((l, q));
        for (qi, target) in fine_targets.iter().enumerate() {
            for (li, &pair) in array.pairs().iter().enumerate() {
                let h = rtf(array, pair, *target, kappa)?;
                b[[li, qi]] = h / h.norm();
            }
        }
        let d = materialize.then(|| real_product(&a, &b));
        bins.push(BinDictionary {
            bin: k,
            frequency_hz: f_hz,
            wavenumber: kappa,
            a,
            b,
            d,
        });
    }

    Ok(DictionarySet {
        bins,
        coarse: coarse_grid.clone(),
        fine: fine_grid.clone(),
        pair_order: array.pairs().to_vec(),
        config: config.clone(),

    })
}

/// Column `q` of `D_k` for band-relative bin index `ki`.
pub fn dictionary_column(dict: &DictionarySet, ki: usize, q: usize) -> Result<Vec<f64>> {
    if ki >= dict.n_bins() {
        return Err(Error::config(format!(
            "bin index {ki} out of range ({} bins)",
            dict.n_bins()
        )));
    }
    dict.bin(ki).column(q)
}

// ---------------------------------------------------------------------------
// On-disk cache.
//
// Layout (all little-endian):
//   8  bytes  magic "SRPDCT01"
//   32 bytes  sha-256 of the cache key (geometry, grids, band, mode, rates)
//   u32       number of bins
//   per bin:  u32 absolute bin index, then N·Q f64 of D in row-major order
//
// Only D is stored; A and B are cheap to recompute and are rebuilt on load,
// so cached and uncached dictionaries are bit-identical.
// ---------------------------------------------------------------------------

const CACHE_MAGIC: &[u8; 8] = b"SRPDCT01";

fn cache_key(
    array: &MicArray,
    coarse: &DoaGrid,
    fine: &DoaGrid,
    config: &DictionaryConfig,
) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(CACHE_MAGIC);
    h.update(array.sound_speed().to_le_bytes());
    for p in array.positions() {
        h.update(p.x.to_le_bytes());
        h.update(p.y.to_le_bytes());
        h.update(p.z.to_le_bytes());
    }
    for grid in [coarse, fine] {
        h.update(grid.elevation_step_deg().to_le_bytes());
        h.update(grid.azimuth_step_deg().to_le_bytes());
        h.update((grid.len() as u64).to_le_bytes());
    }
    h.update((config.band.lo as u64).to_le_bytes());
    h.update((config.band.hi as u64).to_le_bytes());
    h.update(config.sample_rate.to_le_bytes());
    h.update((config.frame_length as u64).to_le_bytes());
    match config.mode {
        DictionaryMode::FarField => h.update([0u8]),
        DictionaryMode::NearField { radius_m } => {
            h.update([1u8]);
            h.update(radius_m.to_le_bytes());
        }
    }
    h.finalize().into()
}

fn cache_path(dir: &Path, key: &[u8; 32]) -> PathBuf {
    let hex: String = key.iter().take(12).map(|b| format!("{b:02x}")).collect();
    dir.join(format!("{hex}.srpdict"))
}

/// Builds the dictionary, consulting (and populating) an on-disk cache when
/// `cache_dir` is given. Cached and freshly built results are bit-identical.
pub fn build_dictionary_cached(
    array: &MicArray,
    coarse_grid: &DoaGrid,
    fine_grid: &DoaGrid,
    config: &DictionaryConfig,
    cache_dir: Option<&Path>,
) -> Result<DictionarySet> {
    let Some(dir) = cache_dir else {
        return build_dictionary(array, coarse_grid, fine_grid, config);
    };
    let key = cache_key(array, coarse_grid, fine_grid, config);
    let path = cache_path(dir, &key);
    if path.exists() {
        match load_cache_file(&path, &key, array, coarse_grid, fine_grid, config) {
            Ok(set) => return Ok(set),
            Err(e) => log::warn!("ignoring unreadable dictionary cache {path:?}: {e}"),
        }
    }
    let set = build_dictionary(array, coarse_grid, fine_grid, config)?;
    if set.bins.iter().all(BinDictionary::is_materialized) {
        write_cache_file(&path, &key, &set)?;
    }
    Ok(set)
}

fn write_cache_file(path: &Path, key: &[u8; 32], set: &DictionarySet) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(key);
    out.extend_from_slice(&(set.bins.len() as u32).to_le_bytes());
    for bin in &set.bins {
        let d = bin.d.as_ref().expect("checked materialized");
        out.extend_from_slice(&(bin.bin as u32).to_le_bytes());
        for &v in d.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn load_cache_file(
    path: &Path,
    key: &[u8; 32],
    array: &MicArray,
    coarse_grid: &DoaGrid,
    fine_grid: &DoaGrid,
    config: &DictionaryConfig,
) -> Result<DictionarySet> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Format("bad dictionary cache magic".into()));
    }
    let mut stored_key = [0u8; 32];
    file.read_exact(&mut stored_key)?;
    if &stored_key != key {
        return Err(Error::Format("dictionary cache key mismatch".into()));
    }
    let mut count = [0u8; 4];
    file.read_exact(&mut count)?;
    let n_bins = u32::from_le_bytes(count) as usize;
    if n_bins != config.band.len() {
        return Err(Error::Format("dictionary cache bin count mismatch".into()));
    }

    // Rebuild A and B (cheap), then overwrite D with the stored bytes.
    let rebuild_cfg = DictionaryConfig {
        materialize: Materialize::Never,
        ..config.clone()
    };
    let mut set = build_dictionary(array, coarse_grid, fine_grid, &rebuild_cfg)?;
    set.config = config.clone();
    let n = set.n_coarse();
    let q = set.n_fine();
    let mut buf = vec![0u8; n * q * 8];
    for bin in &mut set.bins {
        let mut k_bytes = [0u8; 4];
        file.read_exact(&mut k_bytes)?;
        if u32::from_le_bytes(k_bytes) as usize != bin.bin {
            return Err(Error::Format("dictionary cache bin order mismatch".into()));
        }
        file.read_exact(&mut buf)?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        bin.d = Some(
            Array2::from_shape_vec((n, q), values)
                .map_err(|e| Error::Format(format!("dictionary cache shape: {e}")))?,
        );
    }
    Ok(set)
}
