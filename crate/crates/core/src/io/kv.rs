use std::collections::BTreeMap;

use crate::error::{GlfcError, Result};

pub type KvMap = BTreeMap<String, String>;

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// repeated keys are an error.
pub fn parse_kv(text: &str) -> Result<KvMap> {
    let mut map = KvMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(GlfcError::config(format!("line {}: expected key=value, got `{line}`", no + 1)));
        };
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(GlfcError::config(format!("line {}: key `{k}` given twice", no + 1)));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_duplicates() {
        let m = parse_kv("# run\nlr = 0.01\n\nloss=mcl # note\n").unwrap();
        assert_eq!(m["lr"], "0.01");
        assert_eq!(m["loss"], "mcl");
        assert!(parse_kv("a=1\na=2").is_err());
        assert!(parse_kv("nonsense").is_err());
    }
}
