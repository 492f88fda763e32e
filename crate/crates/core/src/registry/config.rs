//! Mode activation from a JSON or YAML file.
//!
//! The file maps `"Group.method"` to a mode name:
//!
//! ```yaml
//! MirrorCls.read_msg: listen
//! ```

use std::path::Path;

use super::{Mode, Registry, RegistryError, Result};

/// Environment variable naming a mode config file.
pub const ENV_MODES: &str = "WRAPIFY_MODES";

impl Registry {
    /// Applies every entry of the mode file, in file order. Nothing is
    /// applied when any entry names an unknown method or mode.
    pub fn load_mode_config(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RegistryError::Parse(format!("{}: {e}", path.display())))?;
        self.apply_mode_config(&text)
    }

    /// Like [`Registry::load_mode_config`] with the file named by
    /// `WRAPIFY_MODES`; does nothing when the variable is unset.
    pub fn load_mode_config_from_env(&self) -> Result<()> {
        match std::env::var_os(ENV_MODES) {
            Some(p) => self.load_mode_config(p),
            None => Ok(()),
        }
    }

    /// Parses and applies mode config text. JSON is accepted as YAML.
    pub fn apply_mode_config(&self, text: &str) -> Result<()> {
        let doc: serde_yaml::Value =
            serde_yaml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        let entries = match doc {
            serde_yaml::Value::Null => return Ok(()),
            serde_yaml::Value::Mapping(m) => m,
            _ => return Err(RegistryError::Parse("expected a map of \"Group.method\": mode".into())),
        };
        let mut plan = Vec::with_capacity(entries.len());
        for (key, value) in &entries {
            let key = key
                .as_str()
                .ok_or_else(|| RegistryError::Parse(format!("key {key:?} is not a string")))?;
            let mode = value
                .as_str()
                .ok_or_else(|| RegistryError::UnknownMode(format!("{value:?}")))?
                .parse::<Mode>()?;
            let (group, name) = key
                .split_once('.')
                .ok_or_else(|| RegistryError::UnknownMethod(key.to_string()))?;
            self.slot(group, name)?;
            plan.push((group.to_string(), name.to_string(), mode));
        }
        for (group, name, mode) in plan {
            self.activate_communication(&group, &name, mode)?;
        }
        Ok(())
    }
}
