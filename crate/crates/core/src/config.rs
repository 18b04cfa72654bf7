//! Simulation parameters and the derived bit widths.
//!
//! All logarithms are base 2. Bit widths use ceilings.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Constant profile for the back-on primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Small constants usable at desk scale: c = 4, a = 2, a_cas = 2, epsilon = 0.5.
    #[default]
    Desk,
    /// Constants as required by the asymptotic analysis: c = 2^(4 tau + 1),
    /// a = 4, a_cas = 2 c^3. Probabilities clamp at 2^-1074.
    Theory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Process count P.
    pub processes: u32,
    /// Random-delay window length.
    pub tau: u32,
    /// Bits per shared cell (at most 64).
    pub word_bits: u32,
    /// Payload bits of the simulated register.
    pub value_bits: u32,
    /// Back-on constant.
    pub c: u32,
    /// Register fingerprint-rate constant in (0, 1].
    pub epsilon: f64,
    /// Register writes start with invocation probability P^(-a).
    pub p0_exponent: f64,
    /// CAS operations start with invocation probability P^(-a_cas).
    pub cas_p0_exponent: f64,
    /// Override of the CAS fingerprint modulus (default ceil(log2 P)^2).
    pub fingerprint_modulus: Option<u64>,
    /// Healthy-state potential threshold is P^(-healthy_exponent).
    pub healthy_exponent: f64,
    pub max_timesteps: u64,
    pub seed: u64,
    pub profile: Profile,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            processes: 8,
            tau: 1,
            word_bits: 64,
            value_bits: 32,
            c: 4,
            epsilon: 0.5,
            p0_exponent: 2.0,
            cas_p0_exponent: 2.0,
            fingerprint_modulus: None,
            healthy_exponent: 2.0,
            max_timesteps: 10_000,
            seed: 0,
            profile: Profile::Desk,
        }
    }
}

/// ceil(log2 x) for x >= 1.
pub fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Number of bits needed to represent `x`.
pub fn bits_for(x: u64) -> u32 {
    64 - x.leading_zeros()
}

impl SimConfig {
    /// Parses a TOML table. A `profile` key first installs that profile's
    /// constants; keys given explicitly override them.
    pub fn from_toml_value(value: toml::Value) -> Result<Self> {
        let toml::Value::Table(mut table) = value else {
            return Err(SimError::config("config must be a table"));
        };
        let profile = match table.get("profile") {
            None => Profile::Desk,
            Some(v) => v.clone().try_into().map_err(|e| SimError::config(format!("profile: {e}")))?,
        };
        let processes = match table.get("processes") {
            Some(v) => v.clone().try_into().map_err(|e| SimError::config(format!("processes: {e}")))?,
            None => SimConfig::default().processes,
        };
        let tau = match table.get("tau") {
            Some(v) => v.clone().try_into().map_err(|e| SimError::config(format!("tau: {e}")))?,
            None => SimConfig::default().tau,
        };
        let base = SimConfig { processes, tau, ..SimConfig::default() }.with_profile(profile);
        let toml::Value::Table(mut merged) = toml::Value::try_from(&base).map_err(|e| SimError::config(e.to_string()))? else {
            unreachable!("a struct serializes to a table")
        };
        merged.extend(std::mem::take(&mut table));
        toml::Value::Table(merged).try_into().map_err(|e| SimError::config(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let v: toml::Value = toml::from_str(text).map_err(|e| SimError::config(e.to_string()))?;
        Self::from_toml_value(v)
    }

    pub fn with_processes(mut self, p: u32) -> Self {
        self.processes = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Applies a constant profile, overwriting c and the exponents.
    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        match profile {
            Profile::Desk => {
                self.c = 4;
                self.p0_exponent = 2.0;
                self.cas_p0_exponent = 2.0;
                self.epsilon = 0.5;
            }
            Profile::Theory => {
                let shift = (4 * self.tau + 1).min(31);
                self.c = 1u32 << shift;
                self.p0_exponent = 4.0;
                self.cas_p0_exponent = 2.0 * (self.c as f64).powi(3);
            }
        }
        self
    }

    pub fn log2_p(&self) -> f64 {
        (self.processes as f64).log2()
    }

    /// ceil(log2 P).
    pub fn ceil_log2_p(&self) -> u32 {
        ceil_log2(self.processes as u64)
    }

    /// Register fingerprint width: ceil(epsilon * log2 P), at least one bit.
    pub fn register_fp_bits(&self) -> u32 {
        ((self.epsilon * self.log2_p()).ceil() as u32).max(1)
    }

    /// CAS fingerprint modulus F.
    pub fn cas_modulus(&self) -> u64 {
        match self.fingerprint_modulus {
            Some(f) => f.max(1),
            None => {
                let l = self.ceil_log2_p() as u64;
                (l * l).max(1)
            }
        }
    }

    pub fn cas_fp_bits(&self) -> u32 {
        bits_for(self.cas_modulus() - 1)
    }

    /// Width of the random strings written to W: 2 ceil(log2 P).
    pub fn w_cell_bits(&self) -> u32 {
        2 * self.ceil_log2_p()
    }

    /// Number of Nop steps per waiting-phase iteration: 2 c ceil(log2 P).
    pub fn wait_nops(&self) -> u32 {
        2 * self.c * self.ceil_log2_p()
    }

    /// Threshold of ceil(log2 P)^2 / 2 used by the heavily-delayed detector.
    pub fn heavily_delayed_age(&self) -> f64 {
        let l = self.ceil_log2_p() as f64;
        0.5 * l * l
    }

    pub fn healthy_threshold(&self) -> f64 {
        (self.processes as f64).powf(-self.healthy_exponent)
    }

    pub fn value_mask(&self) -> u64 {
        mask(self.value_bits)
    }

    /// Checks the parameter ranges that hold regardless of primitive.
    pub fn validate(&self) -> Result<()> {
        if self.processes < 1 {
            return Err(SimError::config("processes must be >= 1"));
        }
        if self.tau < 1 {
            return Err(SimError::config("tau must be >= 1"));
        }
        if self.c < 2 {
            return Err(SimError::config("c must be >= 2"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(SimError::config("epsilon must lie in (0, 1]"));
        }
        if self.word_bits == 0 || self.word_bits > 64 {
            return Err(SimError::config("word_bits must lie in 1..=64"));
        }
        if self.value_bits == 0 || self.value_bits > self.word_bits {
            return Err(SimError::config("value_bits must lie in 1..=word_bits"));
        }
        if [self.p0_exponent, self.cas_p0_exponent].iter().any(|x| x.is_nan() || *x < 0.0) {
            return Err(SimError::config("p0 exponents must be nonnegative"));
        }
        if self.healthy_exponent.is_nan() || self.healthy_exponent < 0.0 {
            return Err(SimError::config("healthy_exponent must be nonnegative"));
        }
        Ok(())
    }

    /// Word-size bound for the register primitive: w >= l + ceil(eps log2 P).
    pub fn validate_register(&self) -> Result<()> {
        self.validate()?;
        let need = self.value_bits + self.register_fp_bits();
        if self.word_bits < need {
            return Err(SimError::config(format!(
                "register needs word_bits >= {need} (value {} + fingerprint {})",
                self.value_bits,
                self.register_fp_bits()
            )));
        }
        Ok(())
    }

    /// Word-size bound for the CAS primitives.
    pub fn validate_cas(&self, with_w_cell: bool) -> Result<()> {
        self.validate()?;
        let need = self.value_bits + self.cas_fp_bits();
        if self.word_bits < need {
            return Err(SimError::config(format!(
                "CAS needs word_bits >= {need} (value {} + counter {})",
                self.value_bits,
                self.cas_fp_bits()
            )));
        }
        if with_w_cell && self.word_bits < self.w_cell_bits() {
            return Err(SimError::config(format!(
                "W cell needs word_bits >= {}",
                self.w_cell_bits()
            )));
        }
        Ok(())
    }
}

pub fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_key_installs_constants_and_explicit_keys_win() {
        let c = SimConfig::from_toml_str("profile = \"theory\"\ntau = 1\n").unwrap();
        assert_eq!(c.c, 32);
        assert_eq!(c.p0_exponent, 4.0);
        let c = SimConfig::from_toml_str("profile = \"theory\"\nc = 4\n").unwrap();
        assert_eq!(c.c, 4);
        assert!(SimConfig::from_toml_str("bogus = 1").is_err());
        assert_eq!(SimConfig::from_toml_str("").unwrap(), SimConfig::default());
    }

    #[test]
    fn ceil_log2_matches_definition() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(1024), 10);
        assert_eq!(ceil_log2(1025), 11);
    }

    #[test]
    fn derived_widths() {
        let cfg = SimConfig::default().with_processes(1024);
        assert_eq!(cfg.register_fp_bits(), 5);
        assert_eq!(cfg.cas_modulus(), 100);
        assert_eq!(cfg.cas_fp_bits(), 7);
        assert_eq!(cfg.w_cell_bits(), 20);
        assert_eq!(cfg.wait_nops(), 80);
        // ceil(2 log2 log2 P) agrees with the counter width for P = 1024
        assert_eq!((2.0 * (10f64).log2()).ceil() as u32, cfg.cas_fp_bits());
    }

    #[test]
    fn fingerprint_floor_is_one_bit() {
        let cfg = SimConfig::default().with_processes(1);
        assert_eq!(cfg.register_fp_bits(), 1);
        assert_eq!(cfg.cas_modulus(), 1);
        assert_eq!(cfg.cas_fp_bits(), 0);
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        assert!(SimConfig { c: 1, ..Default::default() }.validate().is_err());
        assert!(SimConfig { tau: 0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { processes: 0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
        let tight = SimConfig { word_bits: 33, value_bits: 32, processes: 256, ..Default::default() };
        assert!(tight.validate_register().is_err());
        assert!(tight.validate_cas(true).is_err());
    }

    #[test]
    fn theory_profile_sets_large_constants() {
        let cfg = SimConfig::default().with_profile(Profile::Theory);
        assert_eq!(cfg.c, 32);
        assert_eq!(cfg.p0_exponent, 4.0);
        assert_eq!(cfg.cas_p0_exponent, 2.0 * 32f64.powi(3));
    }
}
