//! Optional TOML file supplying defaults for any flag.
//!
//! Keys use the flag spellings (`sa2`, `mL`, `N`, `dense_cap`, ...). List
//! flags accept either a scalar or an array. Relative paths are resolved
//! against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub sa2: Option<f64>,
    pub sb2: Option<f64>,
    pub sg2: Option<f64>,
    pub se2: Option<f64>,
    pub cells: Option<PathBuf>,
    pub g: Option<OneOrMany<usize>>,
    pub h: Option<OneOrMany<usize>>,
    pub m: Option<usize>,
    pub lo: Option<usize>,
    pub hi: Option<usize>,
    #[serde(rename = "mL")]
    pub m_l: Option<OneOrMany<usize>>,
    pub delta: Option<OneOrMany<f64>>,
    pub r: Option<OneOrMany<usize>>,
    #[serde(rename = "N")]
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub method: Option<String>,
    pub methods: Option<OneOrMany<String>>,
    pub dense_cap: Option<usize>,
    pub suite: Option<String>,
    pub instances: Option<usize>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.cells, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// First element of a list key, for flags that take one value.
    pub fn first<T: Clone>(v: &Option<OneOrMany<T>>) -> Option<T> {
        v.as_ref().and_then(|x| x.to_vec().first().cloned())
    }
}

/// Command-line list if given, otherwise the config list, otherwise empty.
pub fn pick_list<T: Clone>(flag: &[T], cfg: &Option<OneOrMany<T>>) -> Vec<T> {
    if !flag.is_empty() {
        flag.to_vec()
    } else {
        cfg.as_ref().map(OneOrMany::to_vec).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalars_and_lists() {
        let cfg: FileConfig = toml::from_str("sa2 = 1.5\nr = [0, 2]\nmL = 10\nN = 3\n").unwrap();
        assert_eq!(cfg.sa2, Some(1.5));
        assert_eq!(cfg.r.unwrap().to_vec(), vec![0, 2]);
        assert_eq!(cfg.m_l.unwrap().to_vec(), vec![10]);
        assert_eq!(cfg.replicates, Some(3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("sigma = 1").is_err());
    }

    #[test]
    fn flags_win_over_config_lists() {
        let cfg = Some(OneOrMany::Many(vec![1, 2]));
        assert_eq!(pick_list(&[7], &cfg), vec![7]);
        assert_eq!(pick_list(&[], &cfg), vec![1, 2]);
        assert!(pick_list::<usize>(&[], &None).is_empty());
    }
}
