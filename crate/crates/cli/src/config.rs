//! Layered campaign configuration: built-in defaults, then a TOML file, then
//! environment overrides, then `--set key=value` pairs, then explicit flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use squeezelab::autolock::SupervisorConfig;
use squeezelab::campaign::{CampaignConfig, ScheduledDisturbance};
use squeezelab::plant::PlantConfig;

use crate::CliError;

/// Environment variables `SQUEEZELAB__SECTION__KEY=value` override
/// `section.key`.
pub const ENV_PREFIX: &str = "SQUEEZELAB__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub duration_s: f64,
    pub seed: u64,
    pub dt_s: f64,
    pub time_compression: f64,
    pub disturbances: Vec<ScheduledDisturbance>,
}

impl Default for CampaignSection {
    fn default() -> Self {
        let c = CampaignConfig::default();
        Self {
            duration_s: c.duration_s,
            seed: c.seed,
            dt_s: c.dt_s,
            time_compression: c.time_compression,
            disturbances: c.disturbances,
        }
    }
}

/// The file layout: one section per module.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub campaign: CampaignSection,
    pub plant: PlantConfig,
    pub supervisor: SupervisorConfig,
}

impl FileConfig {
    pub fn to_campaign(&self) -> CampaignConfig {
        CampaignConfig {
            plant: self.plant.clone(),
            supervisor: self.supervisor.clone(),
            duration_s: self.campaign.duration_s,
            seed: self.campaign.seed,
            dt_s: self.campaign.dt_s,
            time_compression: self.campaign.time_compression,
            disturbances: self.campaign.disturbances.clone(),
        }
    }
}

pub fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

/// Overrides taken from the environment, sorted by key.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<_> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            Some((rest.to_ascii_lowercase().replace("__", "."), v))
        })
        .collect();
    out.sort();
    out
}

pub fn parse_set(raw: &str) -> Result<(String, String), CliError> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{raw}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .get_mut(*part)
            .ok_or_else(|| CliError::Config(format!("override `{key}`: unknown section `{}`", parts[..=i].join("."))))?;
    }
    Err(CliError::Config(format!("override `{key}`: empty key")))
}

/// Apply `key=value` overrides in order. Each is checked on its own so a
/// failure names the offending key.
pub fn apply_overrides(mut config: FileConfig, overrides: &[(String, String)]) -> Result<FileConfig, CliError> {
    for (key, raw) in overrides {
        let mut tree = toml::Value::try_from(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
        set_path(&mut tree, key, parse_value(raw))?;
        config = tree
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("override `{key}` = `{raw}`: {}", e.message())))?;
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use squeezelab::autolock::OperationMode;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = FileConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: FileConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_campaign(), CampaignConfig::default());
    }

    #[test]
    fn overrides_apply_in_order() {
        let o = vec![
            ("campaign.seed".to_string(), "7".to_string()),
            ("supervisor.mode".to_string(), "drift_compensation".to_string()),
            ("plant.drift.angle_walk_rad_per_sqrt_s".to_string(), "1e-4".to_string()),
            ("campaign.seed".to_string(), "9".to_string()),
        ];
        let c = apply_overrides(FileConfig::default(), &o).unwrap();
        assert_eq!(c.campaign.seed, 9);
        assert_eq!(c.supervisor.mode, OperationMode::DriftCompensation);
        assert_eq!(c.plant.drift.angle_walk_rad_per_sqrt_s, 1e-4);
    }

    #[test]
    fn bad_overrides_name_the_key() {
        let e = apply_overrides(FileConfig::default(), &[("plant.nope".into(), "1".into())]).unwrap_err();
        assert!(e.to_string().contains("plant.nope"), "{e}");
        let e = apply_overrides(FileConfig::default(), &[("campaign.seed".into(), "abc".into())]).unwrap_err();
        assert!(e.to_string().contains("campaign.seed"), "{e}");
        let e = apply_overrides(FileConfig::default(), &[("nosuch.x".into(), "1".into())]).unwrap_err();
        assert!(e.to_string().contains("nosuch"), "{e}");
    }

    #[test]
    fn env_keys_map_to_paths() {
        let vars = vec![
            ("SQUEEZELAB__SUPERVISOR__SQUEEZING_THRESHOLD_DB".to_string(), "10".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ];
        assert_eq!(
            env_overrides(vars),
            vec![("supervisor.squeezing_threshold_db".to_string(), "10".to_string())]
        );
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[campaign]\nseed = 1\n\n[plant]\nbogus_field = 3\n").unwrap();
        let e = load_file(&path).unwrap_err().to_string();
        assert!(e.contains("bogus_field") && e.contains('5'), "{e}");
    }
}
