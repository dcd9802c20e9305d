//! Numeric series to text.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SerializationConfig {
    pub fractional_digits: usize,
    pub separator: String,
}

impl Default for SerializationConfig {
    fn default() -> Self {
        SerializationConfig { fractional_digits: 3, separator: ", ".into() }
    }
}

impl SerializationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.separator.is_empty() {
            return Err(Error::InvalidArgument("separator must not be empty".into()));
        }
        if self.fractional_digits > 17 {
            return Err(Error::InvalidArgument("at most 17 fractional digits are supported".into()));
        }
        Ok(())
    }
}

/// Fixed-point rendering, rounded half to even, with trailing fractional
/// zeros trimmed down to a single `0`. Negative zero renders unsigned.
pub fn format_value(v: f64, digits: usize) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::InvalidArgument(format!("cannot serialize non-finite value {v}")));
    }
    let mut s = format!("{v:.digits$}");
    if digits > 0 {
        let keep = s.trim_end_matches('0').len().max(s.find('.').map_or(s.len(), |dot| dot + 2));
        s.truncate(keep);
    }
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s.remove(0);
    }
    Ok(s)
}

/// Rendered values, the first bare and every later one prefixed by the
/// separator. Concatenated they form [`serialize_series`].
pub fn serialize_chunks(series: &[f64], cfg: &SerializationConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    if series.is_empty() {
        return Err(Error::InvalidArgument("cannot serialize an empty series".into()));
    }
    series
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let text = format_value(v, cfg.fractional_digits)?;
            Ok(if i == 0 { text } else { format!("{}{text}", cfg.separator) })
        })
        .collect()
}

pub fn serialize_series(series: &[f64], cfg: &SerializationConfig) -> Result<String> {
    Ok(serialize_chunks(series, cfg)?.concat())
}
