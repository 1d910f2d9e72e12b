//! Provenance header shared by every line-delimited file the pipeline writes.
//!
//! The header is a single line:
//!
//! ```text
//! #walkaudit-<kind>\tversion=<v>\tconfig_hash=<hex>\tseed=<u64>[\t<key>=<value>...]
//! ```

use std::fmt;

use crate::TOOL_VERSION;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Extra `key=value` pairs, kept in insertion order.
    pub extra: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad provenance header: {0}")]
pub struct HeaderError(pub String);

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn header_line(&self, kind: &str) -> String {
        let mut line = format!(
            "#walkaudit-{kind}\tversion={}\tconfig_hash={}\tseed={}",
            self.tool_version, self.config_hash, self.seed
        );
        for (k, v) in &self.extra {
            line.push('\t');
            line.push_str(k);
            line.push('=');
            line.push_str(v);
        }
        line
    }

    pub fn parse_header(kind: &str, line: &str) -> Result<Self, HeaderError> {
        let mut fields = line.split('\t');
        let tag = fields.next().unwrap_or_default();
        if tag != format!("#walkaudit-{kind}") {
            return Err(HeaderError(format!(
                "expected `#walkaudit-{kind}`, found `{tag}`"
            )));
        }
        let mut version = None;
        let mut hash = None;
        let mut seed = None;
        let mut extra = Vec::new();
        for field in fields {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| HeaderError(format!("field `{field}` is not key=value")))?;
            match k {
                "version" => version = Some(v.to_string()),
                "config_hash" => hash = Some(v.to_string()),
                "seed" => {
                    seed = Some(
                        v.parse::<u64>()
                            .map_err(|_| HeaderError(format!("seed `{v}` is not an integer")))?,
                    )
                }
                _ => extra.push((k.to_string(), v.to_string())),
            }
        }
        Ok(Self {
            tool_version: version.ok_or_else(|| HeaderError("missing version".into()))?,
            config_hash: hash.ok_or_else(|| HeaderError("missing config_hash".into()))?,
            seed: seed.ok_or_else(|| HeaderError("missing seed".into()))?,
            extra,
        })
    }
}
