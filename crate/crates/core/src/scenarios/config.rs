//! TOML scenario configuration.
//!
//! Every section is optional. Physics defaults follow the reference setup:
//! a 1 mm crystal pumped at 405 nm with a 0.12 mm pump, α = 0.455 and ×5
//! imaging; a 256×256, 55 μm, 7 ns time-tagging camera.

use std::path::{Path, PathBuf};

use crate::camera::CameraParams;
use crate::coincidence::{CoincidenceConfig, GateCenter};
use crate::source::{correlation_widths_from_crystal, BeamCenter, CrystalParams, LaserSourceParams, MirrorGains, SpdcSourceParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Correlations,
    UncertaintySweep,
    Track,
    Background,
    OverlapBound,
    CrbCheck,
    Bench,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Correlations => "correlations",
            ScenarioKind::UncertaintySweep => "uncertainty-sweep",
            ScenarioKind::Track => "track",
            ScenarioKind::Background => "background",
            ScenarioKind::OverlapBound => "overlap-bound",
            ScenarioKind::CrbCheck => "crb-check",
            ScenarioKind::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraPreset {
    #[default]
    Tpx3,
    HighResolution,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdcConfig {
    /// Taken from the crystal when absent.
    pub delta_r: Option<f64>,
    pub delta_k: Option<f64>,
    /// Pure-state values when absent.
    pub sigma_r: Option<f64>,
    pub sigma_k: Option<f64>,
    pub pair_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaserConfig {
    pub sigma_r: f64,
    pub sigma_k: f64,
    pub photon_rate: f64,
}

impl Default for LaserConfig {
    fn default() -> Self {
        LaserConfig { sigma_r: 52.7, sigma_k: 1.41e-2, photon_rate: 1e5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub preset: CameraPreset,
    pub pixels: Option<[u32; 2]>,
    pub pitch: Option<f64>,
    pub k_per_pixel: Option<f64>,
    pub jitter_sigma: Option<f64>,
    pub efficiency_signal: Option<f64>,
    pub efficiency_idler: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoincidenceSection {
    pub window: u64,
    /// Four correlation widths when absent.
    pub rho_r: Option<f64>,
    pub rho_k: Option<f64>,
    pub gate_center: GateCenter,
}

impl Default for CoincidenceSection {
    fn default() -> Self {
        CoincidenceSection { window: 20, rho_r: None, rho_k: None, gate_center: GateCenter::Peak }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationsConfig {
    pub pairs: usize,
    /// Histogram bin widths; the camera's pixel scale when absent.
    pub bin_r: Option<f64>,
    pub bin_k: Option<f64>,
}

impl Default for CorrelationsConfig {
    fn default() -> Self {
        CorrelationsConfig { pairs: 100_000, bin_r: None, bin_k: None }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub n_values: Vec<u64>,
    /// Independent repetitions of the M-trial measurement at each n.
    pub batches: usize,
    pub displacement: [f64; 2],
    pub laser: bool,
    pub spdc: bool,
    /// Idler efficiencies for the fixed-budget scan; empty skips it.
    pub efficiencies: Vec<f64>,
    /// Generated pairs per block in the efficiency scan.
    pub pair_budget: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_values: vec![500, 1000, 5000, 10_000],
            batches: 1,
            displacement: [25.0, 2.5e-3],
            laser: true,
            spdc: true,
            efficiencies: Vec::new(),
            pair_budget: 40_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    /// Stage positions, μm, mapped through the mirror gains.
    pub mirror_positions: Vec<f64>,
    /// Explicit `(dx, du)` steps; replaces `mirror_positions` when given.
    pub displacements: Option<Vec<[f64; 2]>>,
    pub gains: MirrorGains,
    /// Photons (laser) or gated pairs (SPDC) per block.
    pub n: usize,
    pub laser: bool,
    /// Also emit running estimates over consecutive small batches.
    pub streaming: bool,
    pub batch_pairs: usize,
    pub stream_batches: usize,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            mirror_positions: vec![-50.0, -25.0, 0.0, 25.0, 50.0],
            displacements: None,
            gains: MirrorGains::default(),
            n: 5000,
            laser: true,
            streaming: false,
            batch_pairs: 100,
            stream_batches: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    /// Disruptive-beam rate as a multiple of the SPDC singles rate.
    pub brightness: f64,
    /// Spot widths in the position (μm) and momentum (μm⁻¹) regions.
    pub spot_sigma_r: f64,
    pub spot_sigma_k: f64,
    /// Gated pairs per estimate.
    pub n: usize,
    pub mirror_positions: Vec<f64>,
    /// Run the laser digital-aperture study as well.
    pub aperture_study: bool,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            brightness: 10.0,
            spot_sigma_r: 1500.0,
            spot_sigma_k: 0.04,
            n: 1000,
            mirror_positions: vec![-50.0, 0.0, 50.0],
            aperture_study: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApertureConfig {
    /// Flat background, counts/s/pixel.
    pub dark_rate: f64,
    /// Aperture diameters in units of the beam FWHM.
    pub small_fwhm: f64,
    pub large_fwhm: f64,
    /// Exposure is set so the large aperture sees this SBR.
    pub sbr_large: f64,
    pub n: usize,
    pub trials: usize,
}

impl Default for ApertureConfig {
    fn default() -> Self {
        ApertureConfig { dark_rate: 1.7, small_fwhm: 2.5, large_fwhm: 12.5, sbr_large: 100.0, n: 1000, trials: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapSweepConfig {
    pub alphas: Vec<f64>,
    pub sigma_x2: f64,
    pub n: u64,
    /// Extra random feasible configurations checked against the bound.
    pub random_configs: usize,
}

impl Default for OverlapSweepConfig {
    fn default() -> Self {
        OverlapSweepConfig { alphas: vec![0.25, 0.5, 1.0, 2.0, 4.0], sigma_x2: 52.7, n: 1000, random_configs: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrbConfig {
    /// Beam width; the laser's `sigma_r` when absent.
    pub sigma: Option<f64>,
    pub n: usize,
    pub trials: usize,
}

impl Default for CrbConfig {
    fn default() -> Self {
        CrbConfig { sigma: None, n: 5000, trials: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub events: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { events: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: Option<ScenarioKind>,
    pub seed: Option<u64>,
    /// Trials M per measurement.
    pub trials: usize,
    /// Use both axes for spreads instead of x only.
    pub two_d: bool,
    pub output: Option<PathBuf>,
    pub spdc: SpdcConfig,
    pub crystal: CrystalParams,
    pub laser: LaserConfig,
    pub camera: CameraConfig,
    pub coincidence: CoincidenceSection,
    pub correlations: CorrelationsConfig,
    pub sweep: SweepConfig,
    pub track: TrackConfig,
    pub background: BackgroundConfig,
    pub aperture: ApertureConfig,
    pub overlap: OverlapSweepConfig,
    pub crb: CrbConfig,
    pub bench: BenchConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: None,
            seed: None,
            trials: 50,
            two_d: false,
            output: None,
            spdc: SpdcConfig::default(),
            crystal: CrystalParams::default(),
            laser: LaserConfig::default(),
            camera: CameraConfig::default(),
            coincidence: CoincidenceSection::default(),
            correlations: CorrelationsConfig::default(),
            sweep: SweepConfig::default(),
            track: TrackConfig::default(),
            background: BackgroundConfig::default(),
            aperture: ApertureConfig::default(),
            overlap: OverlapSweepConfig::default(),
            crb: CrbConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn spdc_params(&self) -> Result<SpdcSourceParams> {
        let (dr, dk) = match (self.spdc.delta_r, self.spdc.delta_k) {
            (Some(r), Some(k)) => (r, k),
            (r, k) => {
                let (cr, ck) = correlation_widths_from_crystal(&self.crystal)?;
                (r.unwrap_or(cr), k.unwrap_or(ck))
            }
        };
        let rate = self.spdc.pair_rate.unwrap_or(1e5);
        let mut p = SpdcSourceParams::pure_state(dr, dk, rate);
        if let Some(s) = self.spdc.sigma_r {
            p.sigma_r = s;
        }
        if let Some(s) = self.spdc.sigma_k {
            p.sigma_k = s;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn laser_params(&self) -> Result<LaserSourceParams> {
        let p = LaserSourceParams {
            sigma_r: self.laser.sigma_r,
            sigma_k: self.laser.sigma_k,
            photon_rate: self.laser.photon_rate,
            center: BeamCenter::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn camera_params(&self) -> Result<CameraParams> {
        let c = &self.camera;
        let mut p = match c.preset {
            CameraPreset::Tpx3 => CameraParams::tpx3(),
            CameraPreset::HighResolution => CameraParams::high_resolution(),
        };
        if let Some(px) = c.pixels {
            p.pixels = px;
            p.regions = crate::camera::RegionMap::quadrants(px[0], px[1]);
        }
        p.pitch = c.pitch.unwrap_or(p.pitch);
        p.k_per_pixel = c.k_per_pixel.unwrap_or(p.k_per_pixel);
        p.jitter_sigma = c.jitter_sigma.unwrap_or(p.jitter_sigma);
        p.efficiency_signal = c.efficiency_signal.unwrap_or(p.efficiency_signal);
        p.efficiency_idler = c.efficiency_idler.unwrap_or(p.efficiency_idler);
        p.validate()?;
        Ok(p)
    }

    /// Coincidence settings with gates defaulting to four correlation
    /// widths.
    pub fn coincidence_config(&self, spdc: &SpdcSourceParams) -> Result<CoincidenceConfig> {
        let c = &self.coincidence;
        let cfg = CoincidenceConfig { window: c.window, rho_r: c.rho_r, rho_k: c.rho_k, gate_center: c.gate_center }
            .with_default_gates(spdc.delta_r, spdc.delta_k);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn crb_sigma(&self) -> f64 {
        self.crb.sigma.unwrap_or(self.laser.sigma_r)
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Ok(p) = self.spdc_params() {
            if !p.hul_beating() {
                out.push(format!(
                    "SPDC source is not HUL-beating: delta_r·delta_k = {:.4} ≥ 0.5",
                    p.delta_r * p.delta_k
                ));
            }
        }
        if self.trials < 20 {
            out.push(format!("only {} trials per measurement; spreads will be noisy", self.trials));
        }
        out
    }
}

/// 1-based line of the byte offset `pos`.
fn line_of(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line on which `key` is assigned inside `[section]` (top level when
/// `section` is empty).
fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = header.trim().to_string();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        if current == section && k.trim() == key {
            return Some(i + 1);
        }
        // Dotted keys at the top level, e.g. `spdc.delta_r = ...`.
        if current.is_empty() && k.trim() == format!("{section}.{key}") {
            return Some(i + 1);
        }
    }
    None
}

fn section_line(text: &str, section: &str) -> Option<usize> {
    text.lines().position(|l| l.trim() == format!("[{section}]")).map(|i| i + 1)
}

fn config_err(text: &str, section: &str, keys: &[&str], err: Error) -> Error {
    let line = keys
        .iter()
        .find_map(|k| locate_key(text, section, k))
        .or_else(|| section_line(text, section));
    let message = match err {
        Error::InvalidParameter(m) => m,
        other => other.to_string(),
    };
    Error::Config { line, message }
}

fn check_positive(text: &str, section: &str, key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(text, section, &[key], Error::invalid(format!("{section}.{key} must be positive, got {v}"))))
    }
}

fn check_count(text: &str, section: &str, key: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(config_err(text, section, &[key], Error::invalid(format!("{section}.{key} must be at least {min}, got {v}"))))
    }
}

/// Parses and validates a configuration held in memory.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    validate(&cfg, text)?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config_str(&text)
}

fn validate(cfg: &ScenarioConfig, text: &str) -> Result<()> {
    check_count(text, "", "trials", cfg.trials, 2)?;
    cfg.crystal
        .validate()
        .map_err(|e| config_err(text, "crystal", &["length_mm", "pump_wavelength_nm", "pump_sigma_mm", "alpha", "magnification"], e))?;
    let spdc = cfg
        .spdc_params()
        .map_err(|e| config_err(text, "spdc", &["delta_r", "delta_k", "sigma_r", "sigma_k", "pair_rate"], e))?;
    cfg.laser_params()
        .map_err(|e| config_err(text, "laser", &["sigma_r", "sigma_k", "photon_rate"], e))?;
    cfg.camera_params().map_err(|e| {
        config_err(text, "camera", &["pixels", "pitch", "k_per_pixel", "jitter_sigma", "efficiency_signal", "efficiency_idler"], e)
    })?;
    cfg.coincidence_config(&spdc)
        .map_err(|e| config_err(text, "coincidence", &["window", "rho_r", "rho_k"], e))?;

    check_count(text, "correlations", "pairs", cfg.correlations.pairs, 10)?;
    for (key, v) in [("bin_r", cfg.correlations.bin_r), ("bin_k", cfg.correlations.bin_k)] {
        if let Some(v) = v {
            check_positive(text, "correlations", key, v)?;
        }
    }
    if cfg.sweep.n_values.contains(&0) || (cfg.sweep.n_values.is_empty() && cfg.sweep.efficiencies.is_empty()) {
        return Err(config_err(
            text,
            "sweep",
            &["n_values"],
            Error::invalid("sweep.n_values must be positive, and non-empty unless an efficiency scan is configured"),
        ));
    }
    if cfg.sweep.efficiencies.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(config_err(text, "sweep", &["efficiencies"], Error::invalid("sweep.efficiencies must lie in (0, 1]")));
    }
    if !cfg.sweep.efficiencies.is_empty() && cfg.sweep.pair_budget == 0 {
        return Err(config_err(text, "sweep", &["pair_budget"], Error::invalid("sweep.pair_budget must be positive")));
    }
    check_count(text, "sweep", "batches", cfg.sweep.batches, 1)?;
    check_count(text, "track", "n", cfg.track.n, 1)?;
    check_count(text, "track", "batch_pairs", cfg.track.batch_pairs, 1)?;
    check_count(text, "track", "stream_batches", cfg.track.stream_batches, 1)?;
    let steps = cfg.track.displacements.as_ref().map_or(cfg.track.mirror_positions.len(), Vec::len);
    if steps == 0 {
        return Err(config_err(text, "track", &["displacements", "mirror_positions"], Error::invalid("track needs at least one step")));
    }
    if !(cfg.track.gains.gx.is_finite() && cfg.track.gains.gu.is_finite()) {
        return Err(config_err(text, "track.gains", &["gx", "gu"], Error::invalid("mirror gains must be finite")));
    }
    let b = &cfg.background;
    if !(b.brightness.is_finite() && b.brightness >= 0.0) {
        return Err(config_err(text, "background", &["brightness"], Error::invalid("background.brightness must be non-negative")));
    }
    check_positive(text, "background", "spot_sigma_r", b.spot_sigma_r)?;
    check_positive(text, "background", "spot_sigma_k", b.spot_sigma_k)?;
    check_count(text, "background", "n", b.n, 1)?;
    if b.mirror_positions.is_empty() {
        return Err(config_err(text, "background", &["mirror_positions"], Error::invalid("background needs at least one step")));
    }
    let a = &cfg.aperture;
    check_positive(text, "aperture", "dark_rate", a.dark_rate)?;
    check_positive(text, "aperture", "small_fwhm", a.small_fwhm)?;
    check_positive(text, "aperture", "large_fwhm", a.large_fwhm)?;
    check_positive(text, "aperture", "sbr_large", a.sbr_large)?;
    check_count(text, "aperture", "n", a.n, 1)?;
    check_count(text, "aperture", "trials", a.trials, 2)?;
    if cfg.overlap.alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(config_err(text, "overlap", &["alphas"], Error::invalid("overlap.alphas must be positive")));
    }
    check_positive(text, "overlap", "sigma_x2", cfg.overlap.sigma_x2)?;
    if cfg.overlap.n == 0 {
        return Err(config_err(text, "overlap", &["n"], Error::invalid("overlap.n must be at least 1")));
    }
    check_positive(text, "crb", "sigma", cfg.crb_sigma())?;
    check_count(text, "crb", "n", cfg.crb.n, 1)?;
    check_count(text, "crb", "trials", cfg.crb.trials, 2)?;
    check_count(text, "bench", "events", cfg.bench.events, 2)?;
    Ok(())
}
