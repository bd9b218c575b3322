//! Scenario configuration: array sizes, OFDM numerology and link budget.
//!
//! Configurations are plain `key = value` text. Later layers override
//! earlier ones, so a run is built as preset → file → command-line `--set`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// RIS phase-shift codebook family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Codebook {
    /// First `N` rows of a `max(N, K)`-point DFT matrix.
    Dft,
    /// DFT rows at Sidon-set frequencies, so that all pairwise sums differ
    /// and the symmetric part of `P = p pᵀ` is fully observable.
    SidonDft,
}

impl FromStr for Codebook {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dft" => Ok(Codebook::Dft),
            "sidon-dft" | "sidon" => Ok(Codebook::SidonDft),
            other => Err(Error::Config(format!(
                "unknown codebook `{other}` (expected `dft` or `sidon-dft`)"
            ))),
        }
    }
}

impl fmt::Display for Codebook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Codebook::Dft => "dft",
            Codebook::SidonDft => "sidon-dft",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// BS antennas.
    #[serde(rename = "L")]
    pub l: usize,
    /// RIS columns (horizontal).
    #[serde(rename = "N_y")]
    pub n_y: usize,
    /// RIS rows (vertical).
    #[serde(rename = "N_z")]
    pub n_z: usize,
    /// Subcarriers.
    #[serde(rename = "Q")]
    pub q: usize,
    /// OFDM symbols per block.
    #[serde(rename = "M")]
    pub m: usize,
    /// RIS blocks.
    #[serde(rename = "K")]
    pub k: usize,
    /// Subcarrier spacing (Hz).
    pub delta_f: f64,
    /// Symbol duration (s); must equal `1 / delta_f`.
    #[serde(rename = "T_s")]
    pub t_s: f64,
    /// Carrier wavelength (m).
    pub lambda: f64,
    /// BS–RIS distance (m).
    pub d1: f64,
    /// RIS–target distance (m).
    pub d2: f64,
    /// Transmit power (W).
    #[serde(rename = "P_t")]
    pub p_t: f64,
    #[serde(rename = "G1")]
    pub g1: f64,
    #[serde(rename = "G2")]
    pub g2: f64,
    /// Normalized RIS power pattern towards the BS, in (0, 1].
    #[serde(rename = "F1sq")]
    pub f1sq: f64,
    /// Normalized RIS power pattern towards the target, in (0, 1].
    #[serde(rename = "F2sq")]
    pub f2sq: f64,
    pub d_x: f64,
    pub d_y: f64,
    #[serde(rename = "sigma_RCS")]
    pub sigma_rcs: f64,
    pub codebook: Codebook,
}

impl ScenarioConfig {
    /// The 28 GHz mmWave scenario: a 4×4 RIS, 16 subcarriers at 120 kHz,
    /// 64 symbols, BS–RIS 10 m and RIS–target 5 m, 2 m² target.
    /// `L = 4` and `K = N²` complete the otherwise unspecified dimensions.
    pub fn full_scale() -> Self {
        let lambda = 1.07e-2;
        let delta_f = 120e3;
        Self {
            l: 4,
            n_y: 4,
            n_z: 4,
            q: 16,
            m: 64,
            k: 256,
            delta_f,
            t_s: 1.0 / delta_f,
            lambda,
            d1: 10.0,
            d2: 5.0,
            p_t: 1.0,
            g1: 1.0,
            g2: 1.0,
            f1sq: 1.0,
            f2sq: 1.0,
            d_x: lambda / 2.0,
            d_y: lambda / 2.0,
            sigma_rcs: 2.0,
            codebook: Codebook::SidonDft,
        }
    }

    /// Same physics as [`full_scale`](Self::full_scale) on a 2×2 RIS with small
    /// OFDM grids; fast enough for Monte-Carlo sweeps.
    pub fn desk() -> Self {
        Self {
            l: 2,
            n_y: 2,
            n_z: 2,
            q: 8,
            m: 8,
            k: 16,
            ..Self::full_scale()
        }
    }

    pub fn n(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn mq(&self) -> usize {
        self.m * self.q
    }

    /// Round-trip delay over the BS–RIS–target path.
    pub fn round_trip_delay(&self) -> f64 {
        2.0 * (self.d1 + self.d2) / SPEED_OF_LIGHT
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("L", self.l),
            ("N_y", self.n_y),
            ("N_z", self.n_z),
            ("Q", self.q),
            ("M", self.m),
            ("K", self.k),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in self.physical_fields() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("F1sq", self.f1sq), ("F2sq", self.f2sq)] {
            if v > 1.0 {
                return Err(Error::Config(format!(
                    "{name} is a normalized pattern and must be in (0, 1], got {v}"
                )));
            }
        }
        if (self.t_s * self.delta_f - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "T_s * delta_f must equal 1, got {}",
                self.t_s * self.delta_f
            )));
        }
        Ok(())
    }

    fn physical_fields(&self) -> [(&'static str, f64); 13] {
        [
            ("delta_f", self.delta_f),
            ("T_s", self.t_s),
            ("lambda", self.lambda),
            ("d1", self.d1),
            ("d2", self.d2),
            ("P_t", self.p_t),
            ("G1", self.g1),
            ("G2", self.g2),
            ("F1sq", self.f1sq),
            ("F2sq", self.f2sq),
            ("d_x", self.d_x),
            ("d_y", self.d_y),
            ("sigma_RCS", self.sigma_rcs),
        ]
    }

    /// Applies one layer of `key = value` overrides and validates the result.
    ///
    /// Unless set in the same layer, `T_s` follows `delta_f` and the element
    /// spacings follow `lambda / 2`. Unknown keys are rejected before
    /// anything is modified.
    pub fn with_overrides<K, V>(&self, pairs: &[(K, V)]) -> Result<Self>
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let keys: Vec<Key> = pairs
            .iter()
            .map(|(k, _)| Key::parse(k.as_ref()))
            .collect::<Result<_>>()?;

        let mut cfg = self.clone();
        for (key, (_, value)) in keys.iter().zip(pairs) {
            cfg.set(*key, value.as_ref())?;
        }
        if keys.contains(&Key::DeltaF) && !keys.contains(&Key::Ts) {
            cfg.t_s = 1.0 / cfg.delta_f;
        }
        if keys.contains(&Key::Lambda) {
            if !keys.contains(&Key::Dx) {
                cfg.d_x = cfg.lambda / 2.0;
            }
            if !keys.contains(&Key::Dy) {
                cfg.d_y = cfg.lambda / 2.0;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        self.with_overrides(&parse_key_values(&text)?)
    }

    fn set(&mut self, key: Key, raw: &str) -> Result<()> {
        let count = || -> Result<usize> {
            raw.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key} expects a non-negative integer, got `{raw}`")))
        };
        let real = || -> Result<f64> {
            raw.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key} expects a real number, got `{raw}`")))
        };
        match key {
            Key::L => self.l = count()?,
            Key::Ny => self.n_y = count()?,
            Key::Nz => self.n_z = count()?,
            Key::Q => self.q = count()?,
            Key::M => self.m = count()?,
            Key::K => self.k = count()?,
            Key::DeltaF => self.delta_f = real()?,
            Key::Ts => self.t_s = real()?,
            Key::Lambda => self.lambda = real()?,
            Key::D1 => self.d1 = real()?,
            Key::D2 => self.d2 = real()?,
            Key::Pt => self.p_t = real()?,
            Key::G1 => self.g1 = real()?,
            Key::G2 => self.g2 = real()?,
            Key::F1sq => self.f1sq = real()?,
            Key::F2sq => self.f2sq = real()?,
            Key::Dx => self.d_x = real()?,
            Key::Dy => self.d_y = real()?,
            Key::SigmaRcs => self.sigma_rcs = real()?,
            Key::Codebook => self.codebook = raw.parse()?,
        }
        Ok(())
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Key {
    L,
    Ny,
    Nz,
    Q,
    M,
    K,
    DeltaF,
    Ts,
    Lambda,
    D1,
    D2,
    Pt,
    G1,
    G2,
    F1sq,
    F2sq,
    Dx,
    Dy,
    SigmaRcs,
    Codebook,
}

impl Key {
    const ALL: [(Key, &'static str); 20] = [
        (Key::L, "L"),
        (Key::Ny, "N_y"),
        (Key::Nz, "N_z"),
        (Key::Q, "Q"),
        (Key::M, "M"),
        (Key::K, "K"),
        (Key::DeltaF, "delta_f"),
        (Key::Ts, "T_s"),
        (Key::Lambda, "lambda"),
        (Key::D1, "d1"),
        (Key::D2, "d2"),
        (Key::Pt, "P_t"),
        (Key::G1, "G1"),
        (Key::G2, "G2"),
        (Key::F1sq, "F1sq"),
        (Key::F2sq, "F2sq"),
        (Key::Dx, "d_x"),
        (Key::Dy, "d_y"),
        (Key::SigmaRcs, "sigma_RCS"),
        (Key::Codebook, "codebook"),
    ];

    fn parse(s: &str) -> Result<Key> {
        let s = s.trim();
        let alias = match s {
            "Δf" => Some(Key::DeltaF),
            "λ" => Some(Key::Lambda),
            "σ_RCS" => Some(Key::SigmaRcs),
            _ => None,
        };
        alias
            .or_else(|| Self::ALL.iter().find(|(_, name)| *name == s).map(|(k, _)| *k))
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|(_, n)| *n).collect();
                Error::Config(format!("unknown key `{s}`; known keys: {}", known.join(", ")))
            })
    }

    fn name(self) -> &'static str {
        Self::ALL
            .iter()
            .find(|(k, _)| *k == self)
            .map(|(_, n)| *n)
            .unwrap_or("?")
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = parse_assignment(line)
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
        out.push((k, v));
    }
    Ok(out)
}

/// Splits a single `key=value` assignment.
pub fn parse_assignment(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || v.is_empty() {
        return None;
    }
    Some((k.to_string(), v.to_string()))
}

/// Ground-truth target and BS–RIS geometry, as spatial and temporal
/// frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetParameters {
    /// Round-trip delay (s).
    pub tau: f64,
    /// Doppler shift (Hz).
    pub nu: f64,
    pub mu_d: f64,
    pub psi_d: f64,
    pub mu_a: f64,
    pub psi_a: f64,
    /// BS array spatial frequency.
    pub eta: f64,
}

impl TargetParameters {
    pub fn validate(&self, cfg: &ScenarioConfig) -> Result<()> {
        use std::f64::consts::PI;
        for (name, v) in [
            ("mu_D", self.mu_d),
            ("psi_D", self.psi_d),
            ("mu_A", self.mu_a),
            ("psi_A", self.psi_a),
            ("eta", self.eta),
        ] {
            if !(v > -PI && v <= PI) {
                return Err(Error::Domain(format!("{name} = {v} is outside (-pi, pi]")));
            }
        }
        let ft = cfg.delta_f * self.tau;
        if !(0.0..1.0).contains(&ft) {
            return Err(Error::Domain(format!(
                "delta_f * tau = {ft} is outside the unambiguous range [0, 1)"
            )));
        }
        let tn = cfg.t_s * self.nu.abs();
        if tn.is_nan() || tn >= 0.5 {
            return Err(Error::Domain(format!(
                "T_s * |nu| = {tn} is outside the unambiguous range [0, 1/2)"
            )));
        }
        Ok(())
    }
}

/// Spatial frequencies of a planar-array direction: `(π sinθ sinφ, π cosθ)`.
pub fn spatial_frequencies(theta: f64, phi: f64) -> (f64, f64) {
    use std::f64::consts::PI;
    (PI * theta.sin() * phi.sin(), PI * theta.cos())
}
