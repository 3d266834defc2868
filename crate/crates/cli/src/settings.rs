//! Layered settings: built-in defaults, then an optional TOML file, then
//! command-line flags (applied by each subcommand).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use viber::channel::{default_locations, parse_locations, ChannelParams, JammerParams, LocationProfile};
use viber::framing::FramingConfig;
use viber::harness::{demod_for_fsk, Modulation, TextEncoding};
use viber::modem::{AskParams, DemodConfig, FskParams};
use viber::physics::FanModel;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub fan: FanModel,
    pub fsk: FskParams,
    pub ask: AskParams,
    pub channel: ChannelParams,
    /// Receiver settings; derived from `fsk` and `channel` when absent.
    pub demod: Option<DemodConfig>,
    pub framing: FramingConfig,
    /// Present to jam BER runs; also the defaults for `jam`.
    pub jammer: Option<JammerParams>,
    pub modulation: Modulation,
    pub encoding: TextEncoding,
    /// Idle running at the base speed around a transmission, seconds.
    pub idle_s: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    /// CSV of `label,snr_db` rows replacing the built-in location table.
    pub locations: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            fan: FanModel::default(),
            fsk: FskParams::default(),
            ask: AskParams::default(),
            channel: ChannelParams::default(),
            demod: None,
            framing: FramingConfig::default(),
            jammer: None,
            modulation: Modulation::default(),
            encoding: TextEncoding::default(),
            idle_s: None,
            trials: 100,
            seed: 1,
            locations: None,
        }
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut settings: Settings = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // relative paths inside the file are relative to the file
        if let (Some(loc), Some(dir)) = (&settings.locations, path.parent()) {
            if loc.is_relative() {
                settings.locations = Some(dir.join(loc));
            }
        }
        Ok(settings)
    }

    pub fn demod(&self) -> DemodConfig {
        self.demod
            .clone()
            .unwrap_or_else(|| demod_for_fsk(&self.fsk, self.channel.sample_rate))
    }

    pub fn idle_s(&self) -> f64 {
        self.idle_s.unwrap_or(self.fsk.bit_duration)
    }

    pub fn location_table(&self, override_path: Option<&Path>) -> Result<Vec<LocationProfile>> {
        match override_path.or(self.locations.as_deref()) {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Ok(parse_locations(text.as_bytes())?)
            }
            None => Ok(default_locations()),
        }
    }
}
