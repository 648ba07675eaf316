use crate::error::{Error, Result};
use crate::train::RunConfig;

/// Apply `section.key=value` assignments. Values are read as TOML literals,
/// falling back to a bare string, so `train.epochs=5`, `optim.kind=adam`
/// and `data.augment.erase_area=[0.1, 0.2]` all work.
pub fn apply_overrides(cfg: &RunConfig, sets: &[String]) -> Result<RunConfig> {
    if sets.is_empty() {
        return Ok(cfg.clone());
    }
    let mut root = toml::Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    for set in sets {
        let (path, raw) = set
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {set:?} is not of the form key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
            return Err(Error::Config(format!(
                "--set key {path:?} must look like section.key"
            )));
        }
        let value = parse_value(raw.trim());
        let (last, parents) = keys.split_last().expect("at least two keys");
        let mut table = &mut root;
        for k in parents {
            let entry = table
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("--set {path}: {k} is not a section")))?;
        }
        table.insert(last.to_string(), value);
    }
    let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
    RunConfig::from_toml(&text)
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
