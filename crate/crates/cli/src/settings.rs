//! `key=value` config files and size literals.
//!
//! Keys are the long flag names (`memory`, `page-size`, ...). Flags given
//! on the command line win over the file.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key=value", n + 1))?;
            let key = k.trim().replace('_', "-");
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("line {}: `{key}` set twice", n + 1);
            }
        }
        Ok(FileConfig { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag value if given, else the file's value parsed.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key).map(|v| v.parse::<T>().map_err(|e| anyhow!("config `{key}={v}`: {e}"))).transpose()
    }

    pub fn pick_size(&self, flag: Option<Size>, key: &str) -> Result<Option<u64>> {
        Ok(self.pick(flag, key)?.map(|s| s.0))
    }

    pub fn pick_bool(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    pub fn unknown_keys(&self, known: &[&str]) -> Vec<String> {
        let mut v: Vec<String> = self.values.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect();
        v.sort();
        v
    }
}

/// A byte count such as `4096`, `64KiB`, `1MiB`, `2G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size(pub u64);

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let split = s.find(|c: char| !c.is_ascii_digit() && c != '.').unwrap_or(s.len());
        let (num, unit) = s.split_at(split);
        let num: f64 = num.parse().map_err(|_| format!("bad size `{s}`"))?;
        let mult: u64 = match unit.trim().to_ascii_lowercase().as_str() {
            "" | "b" => 1,
            "k" | "kb" | "kib" => 1 << 10,
            "m" | "mb" | "mib" => 1 << 20,
            "g" | "gb" | "gib" => 1 << 30,
            "t" | "tb" | "tib" => 1 << 40,
            other => return Err(format!("unknown size unit `{other}`")),
        };
        let bytes = num * mult as f64;
        if !bytes.is_finite() || bytes < 0.0 || bytes.fract() != 0.0 {
            return Err(format!("size `{s}` is not a whole number of bytes"));
        }
        Ok(Size(bytes as u64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!("4096".parse::<Size>().unwrap().0, 4096);
        assert_eq!("64KiB".parse::<Size>().unwrap().0, 64 << 10);
        assert_eq!("1.5 MiB".parse::<Size>().unwrap().0, 3 << 19);
        assert_eq!("2g".parse::<Size>().unwrap().0, 2 << 30);
        assert!("12 parsecs".parse::<Size>().is_err());
        assert!("0.3".parse::<Size>().is_err());
    }

    #[test]
    fn file_values_and_override() {
        let f = FileConfig::parse("# comment\nmemory = 8MiB\npolicy=lru  # trailing\nlinear_approx=true\n").unwrap();
        assert_eq!(f.pick_size(None, "memory").unwrap(), Some(8 << 20));
        assert_eq!(f.pick_size(Some(Size(5)), "memory").unwrap(), Some(5));
        assert_eq!(f.pick::<String>(None, "policy").unwrap().as_deref(), Some("lru"));
        assert!(f.pick_bool(false, "linear-approx").unwrap());
        assert_eq!(f.pick::<u64>(None, "scans").unwrap(), None);
        assert_eq!(f.unknown_keys(&["memory", "policy"]), vec!["linear-approx".to_string()]);
    }

    #[test]
    fn malformed_lines() {
        assert!(FileConfig::parse("memory 8MiB").is_err());
        assert!(FileConfig::parse("a=1\na=2").is_err());
        let f = FileConfig::parse("scans=many").unwrap();
        assert!(f.pick::<u64>(None, "scans").is_err());
    }
}
