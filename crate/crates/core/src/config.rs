//! Line-based `key = value` configuration.
//!
//! Blank lines and anything after `#` are ignored. Keys are dotted paths
//! such as `optimizer.lr`. Later assignments override earlier ones.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::predictor::ModelConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let key = key.trim();
            if key.is_empty() || key.split('.').any(|p| p.is_empty() || !p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')) {
                return Err(Error::Config(format!("line {}: invalid key {key:?}", n + 1)));
            }
            kv.set(key, value.trim());
        }
        Ok(kv)
    }

    /// Parses a `key=value` override.
    pub fn assign(&mut self, pair: &str) -> Result<()> {
        let parsed = Self::parse(pair)?;
        if parsed.entries.is_empty() {
            return Err(Error::Config(format!("empty override {pair:?}")));
        }
        self.entries.extend(parsed.entries);
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn parse_opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))))
            .transpose()
    }

    pub fn parse_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    /// Comma-separated list; an empty value is the empty list.
    pub fn list_or<T>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_list(v).map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    /// Fails on any key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }
}

pub fn parse_list<T>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse::<T>().map_err(|e| e.to_string())).collect()
}

pub fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Model keys a user may set; frame shape and class count come from the corpus.
pub const MODEL_KEYS: &[&str] = &[
    "model.mode",
    "model.segments",
    "model.hidden",
    "model.dropout",
    "model.diff_channels",
    "model.frame_channels",
    "model.out_channels",
    "model.diff2_channels",
    "model.kernel",
];

impl ModelConfig {
    /// Reads `model.*` keys over `base`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        let e = &mut self.encoder;
        self.mode = kv.parse_or("model.mode", self.mode)?;
        self.segments = kv.parse_or("model.segments", self.segments)?;
        self.hidden = kv.parse_or("model.hidden", self.hidden)?;
        self.dropout = kv.parse_or("model.dropout", self.dropout)?;
        *e = EncoderConfig {
            diff_channels: kv.list_or("model.diff_channels", e.diff_channels.clone())?,
            frame_channels: kv.list_or("model.frame_channels", e.frame_channels.clone())?,
            out_channels: kv.list_or("model.out_channels", e.out_channels.clone())?,
            diff2_channels: kv.list_or("model.diff2_channels", e.diff2_channels.clone())?,
            kernel: kv.parse_or("model.kernel", e.kernel)?,
        };
        if let Some(v) = kv.get("model.frame") {
            match parse_list::<usize>(v).map_err(Error::Config)?[..] {
                [c, h, w] => self.frame = (c, h, w),
                _ => return Err(Error::Config(format!("model.frame = {v:?}: expected C,H,W"))),
            }
        }
        self.num_classes = kv.parse_or("model.classes", self.num_classes)?;
        Ok(())
    }

    /// Inverse of [`ModelConfig::canonical`].
    pub fn from_canonical(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let mut known = MODEL_KEYS.to_vec();
        known.extend(["model.frame", "model.classes"]);
        kv.reject_unknown(&known)?;
        let mut cfg = ModelConfig::default();
        cfg.apply(&kv)?;
        Ok(cfg)
    }
}
