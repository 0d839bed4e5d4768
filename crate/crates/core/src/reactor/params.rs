//! Physical constants of the drum-controlled microreactor model.
//!
//! Values are stored in the units they are tabulated in (pcm for
//! reactivities, cm² for the xenon cross section); conversion to absolute
//! reactivity and SI happens where they are consumed.
//!
//! The flat key/value file format is one `key = value` pair per line, with
//! `#` starting a comment. Keys follow the tabulated symbol names
//! (`beta_1`, `Lambda`, `K_fm`, `sigma_X`, ...). Missing keys keep their
//! compiled-in default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast_array, Scalar};

/// Number of delayed-neutron precursor groups.
pub const NUM_GROUPS: usize = 6;

/// pcm to absolute Δk/k.
pub const PCM: f64 = 1e-5;

/// How `rho_d_max` is shared among the eight drums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrumWorthMode {
    /// Every drum carries the full `rho_d_max` over its 0..180° sweep.
    PerDrum,
    /// `rho_d_max` is the combined worth of all drums (each holds 1/8).
    Total,
}

impl FromStr for DrumWorthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per_drum" => Ok(DrumWorthMode::PerDrum),
            "total" => Ok(DrumWorthMode::Total),
            other => Err(Error::param(
                "drum_worth_mode",
                format!("expected `per_drum` or `total`, got `{other}`"),
            )),
        }
    }
}

impl DrumWorthMode {
    fn as_str(self) -> &'static str {
        match self {
            DrumWorthMode::PerDrum => "per_drum",
            DrumWorthMode::Total => "total",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactorParams<T> {
    /// Total delayed-neutron fraction (pcm).
    pub beta_total: T,
    /// Group delayed-neutron fractions (pcm).
    pub beta: [T; NUM_GROUPS],
    /// Precursor decay constants (1/s).
    pub lambda: [T; NUM_GROUPS],
    /// Prompt neutron generation time (s).
    pub lambda_gen: T,
    /// Fuel, moderator and coolant temperature coefficients (pcm/K).
    pub alpha_f: T,
    pub alpha_m: T,
    pub alpha_c: T,
    /// Node masses (kg).
    pub m_f: T,
    pub m_m: T,
    pub m_c: T,
    /// Node specific heats (J/kg/K).
    pub c_f: T,
    pub c_m: T,
    pub c_c: T,
    /// Fuel-moderator and moderator-coolant conductances (W/K).
    pub k_fm: T,
    pub k_mc: T,
    /// Coolant mass flow (kg/s).
    pub mdot_c: T,
    /// Coolant inlet temperature (K).
    pub t_in: T,
    /// Rated thermal power (W).
    pub p_r: T,
    /// Fraction of fission energy deposited in the fuel.
    pub q_frac: T,
    /// Macroscopic fission cross section (1/m).
    pub sigma_f: T,
    pub gamma_i: T,
    pub gamma_x: T,
    /// Iodine and xenon decay constants (1/s).
    pub lambda_i: T,
    pub lambda_x: T,
    /// Thermal neutron speed (m/s).
    pub v_th: T,
    /// Xenon microscopic absorption cross section, as tabulated (cm²).
    pub sigma_x: T,
    /// Converts `sigma_x` into the length unit squared used by the xenon
    /// balance (1e-4 maps cm² to m²).
    pub sigma_x_area_scale: T,
    /// Maximum drum worth for a 180° sweep (pcm).
    pub rho_d_max: T,
    pub drum_worth_mode: DrumWorthMode,
    /// Neutron density at rated power (1/m³).
    pub n_0: T,
    /// Tabulated reference temperatures (K). Metadata only: steady-state
    /// temperatures are solved from the heat balances.
    pub t_f0: T,
    pub t_m0: T,
}

impl<T: Scalar> Default for ReactorParams<T> {
    fn default() -> Self {
        Self::holos_quad()
    }
}

impl<T: Scalar> ReactorParams<T> {
    /// The compiled-in Holos-Quad parameter set.
    pub fn holos_quad() -> Self {
        let l = T::lit;
        Self {
            beta_total: l(480.1),
            beta: cast_array([14.2, 92.4, 78.0, 206.6, 67.1, 21.8]),
            lambda: cast_array([0.01272, 0.03174, 0.116, 0.311, 1.4, 3.87]),
            lambda_gen: l(0.00168),
            alpha_f: l(-2.875),
            alpha_m: l(-3.696),
            alpha_c: l(0.0),
            m_f: l(2002.0),
            m_m: l(11573.0),
            m_c: l(500.0),
            c_f: l(977.0),
            c_m: l(1697.0),
            c_c: l(5188.6),
            k_fm: l(1.17e6),
            k_mc: l(2.16e5),
            mdot_c: l(17.5),
            t_in: l(795.0),
            p_r: l(22.0e6),
            q_frac: l(0.96),
            sigma_f: l(0.1117),
            gamma_i: l(0.061),
            gamma_x: l(0.002),
            lambda_i: l(2.87e-5),
            lambda_x: l(2.09e-5),
            v_th: l(2.19e3),
            sigma_x: l(2.65e-22),
            sigma_x_area_scale: l(1e-4),
            rho_d_max: l(511.0),
            drum_worth_mode: DrumWorthMode::PerDrum,
            n_0: l(2.25e13),
            t_f0: l(832.4),
            t_m0: l(830.22),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let half = T::lit(0.5);
        let sum: T = self.beta.iter().copied().sum();
        if (sum - self.beta_total).abs() > half {
            return Err(Error::param(
                "beta",
                format!("group fractions sum to {sum} pcm, expected {}", self.beta_total),
            ));
        }
        let positive = [
            ("Lambda", self.lambda_gen),
            ("m_f", self.m_f),
            ("m_m", self.m_m),
            ("m_c", self.m_c),
            ("c_f", self.c_f),
            ("c_m", self.c_m),
            ("c_c", self.c_c),
            ("K_fm", self.k_fm),
            ("K_mc", self.k_mc),
            ("mdot_c", self.mdot_c),
            ("P_r", self.p_r),
            ("rho_d_max", self.rho_d_max),
            ("n_0", self.n_0),
            ("v", self.v_th),
        ];
        for (key, value) in positive {
            if !(value > T::zero()) || !value.is_finite() {
                return Err(Error::param(key, format!("must be positive and finite, got {value}")));
            }
        }
        for (i, &l) in self.lambda.iter().enumerate() {
            if !(l > T::zero()) {
                return Err(Error::param(&format!("lambda_{}", i + 1), "must be positive"));
            }
        }
        if !(self.q_frac >= T::zero() && self.q_frac <= T::one()) {
            return Err(Error::param("q", "must lie in [0, 1]"));
        }
        for (key, value) in [
            ("lambda_I", self.lambda_i),
            ("lambda_X", self.lambda_x),
            ("Sigma_f", self.sigma_f),
            ("gamma_I", self.gamma_i),
            ("gamma_X", self.gamma_x),
            ("sigma_X", self.sigma_x),
            ("sigma_X_area_scale", self.sigma_x_area_scale),
        ] {
            if !(value >= T::zero()) || !value.is_finite() {
                return Err(Error::param(key, "must be non-negative and finite"));
            }
        }
        if !(self.lambda_x > T::zero()) {
            return Err(Error::param("lambda_X", "must be positive"));
        }
        Ok(())
    }

    /// Delayed fraction as absolute Δk/k.
    pub fn beta_abs(&self) -> T {
        self.beta_total * T::lit(PCM)
    }

    /// Fraction of `rho_d_max` carried by one drum.
    pub fn drum_share(&self) -> T {
        match self.drum_worth_mode {
            DrumWorthMode::PerDrum => T::one(),
            DrumWorthMode::Total => T::one() / T::lit(crate::reactor::NUM_DRUMS as f64),
        }
    }

    /// Thermal neutron flux at rated power (1/m²/s).
    pub fn rated_flux(&self) -> T {
        self.v_th * self.n_0
    }

    /// Xenon cross section in the balance's length unit (m²).
    pub fn sigma_x_internal(&self) -> T {
        self.sigma_x * self.sigma_x_area_scale
    }

    fn entries(&self) -> Vec<(String, T)> {
        let mut out = vec![("beta".to_string(), self.beta_total)];
        for (i, b) in self.beta.iter().enumerate() {
            out.push((format!("beta_{}", i + 1), *b));
        }
        out.push(("Lambda".into(), self.lambda_gen));
        for (i, l) in self.lambda.iter().enumerate() {
            out.push((format!("lambda_{}", i + 1), *l));
        }
        let named = [
            ("alpha_f", self.alpha_f),
            ("alpha_m", self.alpha_m),
            ("alpha_c", self.alpha_c),
            ("m_f", self.m_f),
            ("m_m", self.m_m),
            ("m_c", self.m_c),
            ("c_f", self.c_f),
            ("c_m", self.c_m),
            ("c_c", self.c_c),
            ("K_fm", self.k_fm),
            ("K_mc", self.k_mc),
            ("mdot_c", self.mdot_c),
            ("T_in", self.t_in),
            ("P_r", self.p_r),
            ("q", self.q_frac),
            ("Sigma_f", self.sigma_f),
            ("gamma_I", self.gamma_i),
            ("gamma_X", self.gamma_x),
            ("lambda_I", self.lambda_i),
            ("lambda_X", self.lambda_x),
            ("v", self.v_th),
            ("sigma_X", self.sigma_x),
            ("sigma_X_area_scale", self.sigma_x_area_scale),
            ("rho_d_max", self.rho_d_max),
            ("n_0", self.n_0),
            ("T_f0", self.t_f0),
            ("T_m0", self.t_m0),
        ];
        out.extend(named.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    fn slot(&mut self, key: &str) -> Option<&mut T> {
        if let Some(idx) = key.strip_prefix("beta_") {
            return group_index(idx).map(|i| &mut self.beta[i]);
        }
        if let Some(idx) = key.strip_prefix("lambda_") {
            if let Some(i) = group_index(idx) {
                return Some(&mut self.lambda[i]);
            }
        }
        Some(match key {
            "beta" => &mut self.beta_total,
            "Lambda" => &mut self.lambda_gen,
            "alpha_f" => &mut self.alpha_f,
            "alpha_m" => &mut self.alpha_m,
            "alpha_c" => &mut self.alpha_c,
            "m_f" => &mut self.m_f,
            "m_m" => &mut self.m_m,
            "m_c" => &mut self.m_c,
            "c_f" => &mut self.c_f,
            "c_m" => &mut self.c_m,
            "c_c" => &mut self.c_c,
            "K_fm" => &mut self.k_fm,
            "K_mc" => &mut self.k_mc,
            "mdot_c" => &mut self.mdot_c,
            "T_in" => &mut self.t_in,
            "P_r" => &mut self.p_r,
            "q" => &mut self.q_frac,
            "Sigma_f" => &mut self.sigma_f,
            "gamma_I" => &mut self.gamma_i,
            "gamma_X" => &mut self.gamma_x,
            "lambda_I" => &mut self.lambda_i,
            "lambda_X" => &mut self.lambda_x,
            "v" => &mut self.v_th,
            "sigma_X" => &mut self.sigma_x,
            "sigma_X_area_scale" => &mut self.sigma_x_area_scale,
            "rho_d_max" => &mut self.rho_d_max,
            "n_0" => &mut self.n_0,
            "T_f0" => &mut self.t_f0,
            "T_m0" => &mut self.t_m0,
            _ => return None,
        })
    }

    /// Parses the flat key/value format on top of the compiled-in defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut params = Self::holos_quad();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), lineno).is_some() {
                return Err(Error::param(key, format!("duplicate key on line {}", lineno + 1)));
            }
            if key == "drum_worth_mode" {
                params.drum_worth_mode = value.parse()?;
                continue;
            }
            let parsed: f64 = value
                .parse()
                .map_err(|_| Error::param(key, format!("`{value}` is not a number")))?;
            let slot = params
                .slot(key)
                .ok_or_else(|| Error::param(key, "unknown parameter"))?;
            *slot = T::lit(parsed);
        }
        params.validate()?;
        Ok(params)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {}", v.to_f64_lossy());
        }
        let _ = writeln!(out, "drum_worth_mode = {}", self.drum_worth_mode.as_str());
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_kv_str(&text)
    }
}

fn group_index(s: &str) -> Option<usize> {
    match s.parse::<usize>() {
        Ok(i) if (1..=NUM_GROUPS).contains(&i) => Some(i - 1),
        _ => None,
    }
}
