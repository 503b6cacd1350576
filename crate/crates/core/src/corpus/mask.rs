//! Entity masking: replacing entity tokens with canonical marks.
//!
//! The default masker normalizes numbered math tokens (`@xmath7`,
//! `@xmath12`, ...) to one feature. No statistical entity recognizer is
//! trained; other maskers plug in through [`EntityMasker`].

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MATH_TOKEN: &str = "@xmath";
pub const DEFAULT_MATH_PATTERN: &str = r"^@xmath\d+$";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    Off,
    MathNormalize,
    Custom,
}

impl std::str::FromStr for MaskingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(MaskingMode::Off),
            "math" | "math_normalize" => Ok(MaskingMode::MathNormalize),
            "custom" => Ok(MaskingMode::Custom),
            other => Err(Error::Config(format!("unknown masking mode `{other}`"))),
        }
    }
}

impl MaskingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskingMode::Off => "off",
            MaskingMode::MathNormalize => "math_normalize",
            MaskingMode::Custom => "custom",
        }
    }
}

pub trait EntityMasker: Send + Sync {
    fn mask(&self, tokens: Vec<String>) -> Vec<String>;
}

pub struct NoMasking;

impl EntityMasker for NoMasking {
    fn mask(&self, tokens: Vec<String>) -> Vec<String> {
        tokens
    }
}

pub struct MathNormalizer {
    pattern: Regex,
}

impl MathNormalizer {
    pub fn new(pattern: &str) -> Result<Self> {
        let pattern = Regex::new(pattern)
            .map_err(|e| Error::Config(format!("bad math marker pattern: {e}")))?;
        Ok(Self { pattern })
    }
}

impl EntityMasker for MathNormalizer {
    fn mask(&self, tokens: Vec<String>) -> Vec<String> {
        tokens
            .into_iter()
            .map(|t| {
                if self.pattern.is_match(&t) {
                    MATH_TOKEN.to_string()
                } else {
                    t
                }
            })
            .collect()
    }
}

/// Exact token-to-token substitution.
pub struct TokenMap {
    map: BTreeMap<String, String>,
}

impl TokenMap {
    pub fn new(map: BTreeMap<String, String>) -> Self {
        Self { map }
    }
}

impl EntityMasker for TokenMap {
    fn mask(&self, tokens: Vec<String>) -> Vec<String> {
        tokens
            .into_iter()
            .map(|t| self.map.get(&t).cloned().unwrap_or(t))
            .collect()
    }
}

pub fn build_masker(
    mode: MaskingMode,
    math_pattern: &str,
    custom: Option<&BTreeMap<String, String>>,
) -> Result<Box<dyn EntityMasker>> {
    Ok(match mode {
        MaskingMode::Off => Box::new(NoMasking),
        MaskingMode::MathNormalize => Box::new(MathNormalizer::new(math_pattern)?),
        MaskingMode::Custom => {
            let map = custom.ok_or_else(|| {
                Error::Config("custom masking mode requires a token map".into())
            })?;
            Box::new(TokenMap::new(map.clone()))
        }
    })
}

pub fn mask_entities(tokens: Vec<String>, masker: &dyn EntityMasker) -> Vec<String> {
    masker.mask(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn math_normalize_collapses_numbered_tokens() {
        let m = build_masker(MaskingMode::MathNormalize, DEFAULT_MATH_PATTERN, None).unwrap();
        assert_eq!(
            mask_entities(toks(&["p", "@xmath12", "q", "@xmath7"]), m.as_ref()),
            toks(&["p", "@xmath", "q", "@xmath"])
        );
        // not a numbered math token
        assert_eq!(
            mask_entities(toks(&["@xmathx"]), m.as_ref()),
            toks(&["@xmathx"])
        );
    }

    #[test]
    fn off_is_identity() {
        let m = build_masker(MaskingMode::Off, DEFAULT_MATH_PATTERN, None).unwrap();
        assert_eq!(mask_entities(toks(&["a", "b"]), m.as_ref()), toks(&["a", "b"]));
    }

    #[test]
    fn custom_map_substitutes() {
        let map: BTreeMap<_, _> = [("Einstein".to_string(), "@ent".to_string())].into();
        let m = build_masker(MaskingMode::Custom, DEFAULT_MATH_PATTERN, Some(&map)).unwrap();
        assert_eq!(
            mask_entities(toks(&["Einstein", "said"]), m.as_ref()),
            toks(&["@ent", "said"])
        );
    }

    #[test]
    fn custom_without_map_is_config_error() {
        let err = build_masker(MaskingMode::Custom, DEFAULT_MATH_PATTERN, None)
            .err()
            .unwrap();
        assert!(matches!(err, Error::Config(_)));
    }
}
