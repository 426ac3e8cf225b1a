//! `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment; later keys override earlier
//! ones. Keys use the long flag names with `_` for `-`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use assertkit_core::metrics::TdcfParams;

use crate::error::{format_err, io_err, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    path: Option<std::path::PathBuf>,
    values: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format_err(path, format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim().replace('-', "_");
            if k.is_empty() {
                return Err(format_err(path, format!("line {}: empty key", n + 1)));
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(Self { path: Some(path.to_path_buf()), values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(path, &text)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parsed value of `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                format_err(self.path.as_deref().unwrap_or(Path::new("<config>")), format!("`{key}`: cannot parse `{v}`"))
            }),
        }
    }

    /// The flag value when given, else the file value, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

const TDCF_KEYS: [&str; 10] = [
    "p_tar",
    "p_non",
    "p_spoof",
    "c_miss_asv",
    "c_fa_asv",
    "c_miss_cm",
    "c_fa_cm",
    "p_miss_asv",
    "p_fa_asv",
    "p_miss_spoof_asv",
];

/// t-DCF parameters from a `key = value` file; missing keys keep their
/// defaults, unknown keys are rejected.
pub fn tdcf_params(kv: &KeyValues) -> Result<TdcfParams> {
    let path = kv.path.as_deref().unwrap_or(Path::new("<tdcf>"));
    if let Some(k) = kv.keys().find(|k| !TDCF_KEYS.contains(k)) {
        return Err(format_err(path, format!("unknown t-DCF key `{k}`")));
    }
    let mut p = TdcfParams::default();
    let slots: [&mut f64; 10] = [
        &mut p.p_tar,
        &mut p.p_non,
        &mut p.p_spoof,
        &mut p.c_miss_asv,
        &mut p.c_fa_asv,
        &mut p.c_miss_cm,
        &mut p.c_fa_cm,
        &mut p.p_miss_asv,
        &mut p.p_fa_asv,
        &mut p.p_miss_spoof_asv,
    ];
    for (key, slot) in TDCF_KEYS.iter().zip(slots) {
        if let Some(v) = kv.get(key)? {
            *slot = v;
        }
    }
    let priors = p.p_tar + p.p_non + p.p_spoof;
    if (priors - 1.0).abs() > 1e-9 || [p.p_tar, p.p_non, p.p_spoof].iter().any(|&x| x < 0.0) {
        return Err(format_err(path, format!("priors must be non-negative and sum to 1, got {priors}")));
    }
    let rates = [p.p_miss_asv, p.p_fa_asv, p.p_miss_spoof_asv];
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(format_err(path, "ASV rates must lie in [0, 1]"));
    }
    p.coefficients()?;
    Ok(p)
}
