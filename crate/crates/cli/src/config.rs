//! Run settings assembled from a flat key=value config file and flag
//! overrides, plus the provenance hash over the effective configuration.

use std::path::{Path, PathBuf};

use hpanel_core::estimator::FitOptions;
use hpanel_core::inference::BootstrapOptions;
use hpanel_core::select::SelectionOptions;

use crate::error::{CliError, CliResult};

/// Optional settings shared by every command; unset fields fall back to the
/// config file and then to built-in defaults.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub l: Option<usize>,
    pub n: Option<usize>,
    pub t: Option<usize>,
    pub d: Option<usize>,
    pub seed: Option<u64>,
    pub r: Option<usize>,
    pub d_max: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub b: Option<usize>,
    pub bandwidth: Option<usize>,
    pub alpha: Option<f64>,
    pub counts: Option<String>,
    pub auto_counts: bool,
    pub axis: Option<String>,
    pub unit: Option<usize>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn parse<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> CliResult<T> {
    value.trim().parse().map_err(|_| CliError::Config {
        path: path.to_path_buf(),
        detail: format!("cannot parse `{value}` for key `{key}`"),
    })
}

impl Settings {
    /// Reads a flat key=value file; `#` starts a comment, blank lines are
    /// skipped, keys use the flag spelling without leading dashes.
    pub fn from_file(path: &Path) -> CliResult<Settings> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s = Settings::default();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                path: path.to_path_buf(),
                detail: format!("expected key=value, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data" => s.data = Some(PathBuf::from(value)),
                "L" => s.l = Some(parse(path, key, value)?),
                "N" => s.n = Some(parse(path, key, value)?),
                "T" => s.t = Some(parse(path, key, value)?),
                "d" => s.d = Some(parse(path, key, value)?),
                "seed" => s.seed = Some(parse(path, key, value)?),
                "R" => s.r = Some(parse(path, key, value)?),
                "d-max" => s.d_max = Some(parse(path, key, value)?),
                "tol" => s.tol = Some(parse(path, key, value)?),
                "max-iter" => s.max_iter = Some(parse(path, key, value)?),
                "B" => s.b = Some(parse(path, key, value)?),
                "bandwidth" => s.bandwidth = Some(parse(path, key, value)?),
                "alpha" => s.alpha = Some(parse(path, key, value)?),
                "counts" => s.counts = Some(value.to_string()),
                "auto-counts" => s.auto_counts = parse(path, key, value)?,
                "axis" => s.axis = Some(value.to_string()),
                "unit" => s.unit = Some(parse(path, key, value)?),
                "out" => s.out = Some(PathBuf::from(value)),
                "workers" => s.workers = Some(parse(path, key, value)?),
                _ => {
                    return Err(CliError::Config {
                        path: path.to_path_buf(),
                        detail: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        Ok(s)
    }

    /// Overlays `self` (flag values) on `base` (file values); flags win.
    pub fn or(self, base: Settings) -> Settings {
        Settings {
            data: self.data.or(base.data),
            l: self.l.or(base.l),
            n: self.n.or(base.n),
            t: self.t.or(base.t),
            d: self.d.or(base.d),
            seed: self.seed.or(base.seed),
            r: self.r.or(base.r),
            d_max: self.d_max.or(base.d_max),
            tol: self.tol.or(base.tol),
            max_iter: self.max_iter.or(base.max_iter),
            b: self.b.or(base.b),
            bandwidth: self.bandwidth.or(base.bandwidth),
            alpha: self.alpha.or(base.alpha),
            counts: self.counts.or(base.counts),
            auto_counts: self.auto_counts || base.auto_counts,
            axis: self.axis.or(base.axis),
            unit: self.unit.or(base.unit),
            out: self.out.or(base.out),
            workers: self.workers.or(base.workers),
        }
    }

    pub fn require(&self, field: Option<usize>, flag: &'static str) -> CliResult<usize> {
        field.ok_or(CliError::Flag {
            flag,
            detail: "required by this command (set it on the command line or in the config file)".into(),
        })
    }

    pub fn require_data(&self) -> CliResult<&Path> {
        self.data.as_deref().ok_or(CliError::Flag {
            flag: "--data",
            detail: "this command reads a panel CSV".into(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn fit_options(&self) -> FitOptions {
        let defaults = FitOptions::default();
        FitOptions {
            tol: self.tol.unwrap_or(defaults.tol),
            max_iter: self.max_iter.unwrap_or(defaults.max_iter),
            seed: self.seed(),
        }
    }

    pub fn selection_options(&self) -> SelectionOptions {
        SelectionOptions {
            d_max: self.d_max.unwrap_or(SelectionOptions::default().d_max),
            omega: None,
        }
    }

    pub fn bootstrap_options(&self, default_b: usize) -> BootstrapOptions {
        let defaults = BootstrapOptions::default();
        BootstrapOptions {
            replications: self.b.unwrap_or(default_b),
            bandwidth: self.bandwidth,
            alpha: self.alpha.unwrap_or(defaults.alpha),
            seed: self.seed(),
        }
    }
}

/// FNV-1a hash of the canonical configuration string.
///
/// The hash covers only inputs the numbers depend on, so output location and
/// worker count never change it and reruns stay byte-identical.
pub fn config_hash(command: &str, pairs: &[(&str, String)]) -> u64 {
    let mut text = format!("command={command}");
    for (k, v) in pairs {
        text.push('\n');
        text.push_str(k);
        text.push('=');
        text.push_str(v);
    }
    fnv1a(text.as_bytes())
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_parse_and_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# pilot design\nL = 6\nN=7\nT = 12 # periods\nseed = 9\ncounts = 2,auto,auto\n").unwrap();
        let file = Settings::from_file(&path).unwrap();
        assert_eq!(file.l, Some(6));
        assert_eq!(file.n, Some(7));
        assert_eq!(file.t, Some(12));
        assert_eq!(file.counts.as_deref(), Some("2,auto,auto"));
        let flags = Settings {
            t: Some(40),
            ..Settings::default()
        };
        let merged = flags.or(file);
        assert_eq!(merged.t, Some(40));
        assert_eq!(merged.l, Some(6));
        assert_eq!(merged.seed(), 9);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "speed = 9\n").unwrap();
        assert!(Settings::from_file(&path).is_err());
        std::fs::write(&path, "L = fast\n").unwrap();
        assert!(Settings::from_file(&path).is_err());
    }

    #[test]
    fn hash_ignores_nothing_it_is_given_and_nothing_else() {
        let a = config_hash("simulate", &[("L", "6".into()), ("seed", "1".into())]);
        let b = config_hash("simulate", &[("L", "6".into()), ("seed", "2".into())]);
        let c = config_hash("simulate", &[("L", "6".into()), ("seed", "1".into())]);
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
