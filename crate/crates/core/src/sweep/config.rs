//! TOML configuration: a `[sweep]` table, a `[session]` table for live
//! key exchange and one `[preset.<name>]` table per link.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::link::SessionConfig;

use super::{fit_filtering, presets, CalibrationTarget, FitObjective, Preset, SweepError, SweepSpec};

/// One `[preset.<name>]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetSection {
    pub distance_km: f64,
    #[serde(default)]
    pub extra_db: f64,
    /// Overrides the fitted filtering when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtering_pct: Option<f64>,
    #[serde(default)]
    pub targets: Vec<CalibrationTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub sweep: SweepSpec,
    pub session: SessionConfig,
    #[serde(rename = "preset")]
    pub presets: BTreeMap<String, PresetSection>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let sweep = SweepSpec::default();
        let model = SweepSpec::uncalibrated();
        let presets = presets()
            .into_iter()
            .map(|p| {
                let f = fit_filtering(&p, &model, FitObjective::Minimax).ok().map(|r| r.filtering_pct);
                (
                    p.name,
                    PresetSection {
                        distance_km: p.distance_km,
                        extra_db: p.extra_db,
                        filtering_pct: f,
                        targets: p.targets,
                    },
                )
            })
            .collect();
        Self {
            sweep,
            session: SessionConfig::default(),
            presets,
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, SweepError> {
        let mut file: Self = toml::from_str(text).map_err(|e| SweepError::Config(e.to_string()))?;
        file.sync_filtering();
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = fs::read_to_string(path).map_err(|source| SweepError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| SweepError::Config(format!("{}: {e}", path.display())))
    }

    /// The effective configuration as TOML.
    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Built-in presets, replaced or extended by the file's sections.
    pub fn preset(&self, name: &str) -> Option<Preset> {
        if let Some(s) = self.presets.get(name) {
            return Some(Preset {
                name: name.to_string(),
                distance_km: s.distance_km,
                extra_db: s.extra_db,
                targets: s.targets.clone(),
                filtering_pct: s.filtering_pct,
            });
        }
        super::preset(name)
    }

    pub fn preset_names(&self) -> Vec<String> {
        let mut names: Vec<String> = presets().into_iter().map(|p| p.name).collect();
        for k in self.presets.keys() {
            if !names.contains(k) {
                names.push(k.clone());
            }
        }
        names
    }

    /// Copies explicit preset filtering values into the sweep's table.
    fn sync_filtering(&mut self) {
        let loss = self.sweep.budget.loss_per_km;
        for s in self.presets.values() {
            if let Some(f) = s.filtering_pct {
                let d = Preset {
                    name: String::new(),
                    distance_km: s.distance_km,
                    extra_db: s.extra_db,
                    targets: Vec::new(),
                    filtering_pct: None,
                }
                .effective_distance_km(loss);
                self.sweep.filtering.set(d, f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let c = ConfigFile::default();
        let text = c.render();
        assert!(text.contains("[preset.80km]"));
        assert!(text.contains("[sweep]"));
        let back = ConfigFile::parse(&text).unwrap();
        assert_eq!(back.sweep.grids, c.sweep.grids);
        assert_eq!(back.presets, c.presets);
        assert_eq!(back.sweep.filtering, c.sweep.filtering);
        assert_eq!(back.session, c.session);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = ConfigFile::parse(
            "[sweep]\nseed = 9\n[sweep.grids]\ndistance_km = [10.0, 20.0]\n\n[preset.lab]\ndistance_km = 25.0\nfiltering_pct = 0.8\n",
        )
        .unwrap();
        assert_eq!(c.sweep.seed, 9);
        assert_eq!(c.sweep.grids.distance_km, vec![10.0, 20.0]);
        assert_eq!(c.sweep.grids.cr, SweepSpec::default().grids.cr);
        assert_eq!(c.sweep.filtering.lookup(25.0), 0.8);
        assert_eq!(c.preset("lab").unwrap().distance_km, 25.0);
        assert_eq!(c.preset("40km").unwrap().targets.len(), 2);
        assert!(c.preset_names().contains(&"lab".to_string()));
    }

    #[test]
    fn malformed_file_is_a_config_error() {
        assert!(matches!(ConfigFile::parse("[sweep]\nseed = \"x\""), Err(SweepError::Config(_))));
    }
}
