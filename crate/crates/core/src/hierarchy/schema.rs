//! Tag / attribute / condition schema.
//!
//! A schema arranges flat binary labels into independent tags, each with
//! mutually exclusive attributes, plus per-tag condition labels that a
//! translation of that tag must leave untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HisdError, Result};

/// One `label=±1` term of an attribute rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelTerm {
    pub label: String,
    pub positive: bool,
}

impl FromStr for LabelTerm {
    type Err = HisdError;

    fn from_str(s: &str) -> Result<Self> {
        let (label, value) = s
            .split_once('=')
            .ok_or_else(|| HisdError::Config(format!("rule term `{s}` is not of the form label=±1")))?;
        let positive = match value.trim() {
            "1" | "+1" => true,
            "-1" => false,
            other => {
                return Err(HisdError::Config(format!(
                    "rule term `{s}` has value `{other}`, expected 1 or -1"
                )))
            }
        };
        let label = label.trim();
        if label.is_empty() {
            return Err(HisdError::Config(format!("rule term `{s}` has an empty label")));
        }
        Ok(Self { label: label.to_string(), positive })
    }
}

impl fmt::Display for LabelTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.label, if self.positive { "1" } else { "-1" })
    }
}

/// Conjunction of label terms; fires when every term matches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeRule {
    terms: BTreeSet<LabelTerm>,
}

impl AttributeRule {
    pub fn new(terms: impl IntoIterator<Item = LabelTerm>) -> Self {
        Self { terms: terms.into_iter().collect() }
    }

    pub fn terms(&self) -> impl Iterator<Item = &LabelTerm> {
        self.terms.iter()
    }

    /// `lookup` returns the ±1 value of a flat label.
    pub fn fires(&self, lookup: impl Fn(&str) -> Option<bool>) -> bool {
        self.terms.iter().all(|t| lookup(&t.label) == Some(t.positive))
    }

    fn self_contradictory(&self) -> Option<&str> {
        self.terms
            .iter()
            .find(|t| self.terms.contains(&LabelTerm { label: t.label.clone(), positive: !t.positive }))
            .map(|t| t.label.as_str())
    }

    /// Every assignment that fires `self` also fires `other`.
    fn implies(&self, other: &AttributeRule) -> bool {
        other.terms.is_subset(&self.terms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSpec {
    pub name: String,
    pub attributes: Vec<String>,
    pub rules: Vec<AttributeRule>,
    pub conditions: Vec<String>,
}

impl TagSpec {
    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    /// Flat labels referenced by this tag's attribute rules.
    pub fn defining_labels(&self) -> BTreeSet<&str> {
        self.rules.iter().flat_map(|r| r.terms().map(|t| t.label.as_str())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSchema {
    tags: Vec<TagSpec>,
}

// Raw config shapes, as they appear under `[[tags]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagConfig {
    pub name: String,
    pub attributes: Vec<AttributeConfig>,
    #[serde(default)]
    pub conditions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeConfig {
    pub name: String,
    pub when: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct SchemaOnly {
    #[serde(default)]
    labels: Option<Vec<String>>,
    tags: Vec<TagConfig>,
}

impl TagSchema {
    /// Validates and builds a schema. `declared` restricts the flat labels
    /// rules and conditions may reference.
    pub fn from_config(tags: &[TagConfig], declared: Option<&[String]>) -> Result<Self> {
        if tags.is_empty() {
            return Err(HisdError::Config("schema must declare at least one tag".into()));
        }
        let declared: Option<BTreeSet<&str>> = declared.map(|d| d.iter().map(String::as_str).collect());
        let mut seen_tags = BTreeSet::new();
        let mut specs = Vec::with_capacity(tags.len());
        for tag in tags {
            let err = |reason: String| HisdError::Schema { tag: tag.name.clone(), reason };
            if !seen_tags.insert(tag.name.as_str()) {
                return Err(err("duplicate tag name".into()));
            }
            if tag.attributes.len() < 2 {
                return Err(err(format!("needs at least 2 attributes, found {}", tag.attributes.len())));
            }
            let mut names = BTreeSet::new();
            let mut rules = Vec::with_capacity(tag.attributes.len());
            for attr in &tag.attributes {
                if !names.insert(attr.name.as_str()) {
                    return Err(err(format!("duplicate attribute `{}`", attr.name)));
                }
                if attr.when.is_empty() {
                    return Err(err(format!("attribute `{}` has an empty rule", attr.name)));
                }
                let terms = attr.when.iter().map(|t| t.parse()).collect::<Result<Vec<LabelTerm>>>()?;
                let rule = AttributeRule::new(terms);
                if let Some(label) = rule.self_contradictory() {
                    return Err(err(format!("attribute `{}` requires {label} to be both 1 and -1", attr.name)));
                }
                rules.push(rule);
            }
            for a in 0..rules.len() {
                for b in 0..rules.len() {
                    if a != b && rules[a].implies(&rules[b]) {
                        return Err(err(format!(
                            "rules for `{}` and `{}` overlap: `{}` firing always fires `{}`",
                            tag.attributes[a].name, tag.attributes[b].name, tag.attributes[a].name, tag.attributes[b].name
                        )));
                    }
                }
            }
            let spec = TagSpec {
                name: tag.name.clone(),
                attributes: tag.attributes.iter().map(|a| a.name.clone()).collect(),
                rules,
                conditions: tag.conditions.clone(),
            };
            let defining = spec.defining_labels();
            let mut cond_seen = BTreeSet::new();
            for c in &spec.conditions {
                if defining.contains(c.as_str()) {
                    return Err(err(format!("condition label `{c}` also defines an attribute")));
                }
                if !cond_seen.insert(c.as_str()) {
                    return Err(err(format!("duplicate condition label `{c}`")));
                }
            }
            if let Some(declared) = &declared {
                for label in defining.iter().copied().chain(spec.conditions.iter().map(String::as_str)) {
                    if !declared.contains(label) {
                        return Err(err(format!("label `{label}` is not declared")));
                    }
                }
            }
            specs.push(spec);
        }
        Ok(Self { tags: specs })
    }

    pub fn tags(&self) -> &[TagSpec] {
        &self.tags
    }

    pub fn tag(&self, i: usize) -> Result<&TagSpec> {
        self.tags
            .get(i)
            .ok_or_else(|| HisdError::Index(format!("tag {i} out of range (N = {})", self.tags.len())))
    }

    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    pub fn attribute_counts(&self) -> Vec<usize> {
        self.tags.iter().map(TagSpec::attribute_count).collect()
    }

    pub fn tag_index(&self, name: &str) -> Result<usize> {
        self.tags
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| HisdError::Index(format!("unknown tag `{name}`")))
    }

    /// Resolves `(tag name, attribute name)` to indices.
    pub fn resolve(&self, tag: &str, attribute: &str) -> Result<(usize, usize)> {
        let i = self.tag_index(tag)?;
        let j = self.tags[i]
            .attribute_index(attribute)
            .ok_or_else(|| HisdError::Index(format!("tag `{tag}` has no attribute `{attribute}`")))?;
        Ok((i, j))
    }

    pub fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        let m = self.tag(i)?.attribute_count();
        if j >= m {
            return Err(HisdError::Index(format!("attribute {j} out of range for tag {i} (M = {m})")));
        }
        Ok(())
    }

    pub fn to_config(&self) -> Vec<TagConfig> {
        self.tags
            .iter()
            .map(|t| TagConfig {
                name: t.name.clone(),
                attributes: t
                    .attributes
                    .iter()
                    .zip(&t.rules)
                    .map(|(name, rule)| AttributeConfig {
                        name: name.clone(),
                        when: rule.terms().map(ToString::to_string).collect(),
                    })
                    .collect(),
                conditions: t.conditions.clone(),
            })
            .collect()
    }

    /// Stable hex digest of the schema structure.
    pub fn fingerprint(&self) -> String {
        let canonical: Vec<BTreeMap<&str, serde_json::Value>> = self
            .tags
            .iter()
            .map(|t| {
                let mut m = BTreeMap::new();
                m.insert("name", serde_json::json!(t.name));
                m.insert("attributes", serde_json::json!(t.attributes));
                m.insert(
                    "rules",
                    serde_json::json!(t
                        .rules
                        .iter()
                        .map(|r| r.terms().map(ToString::to_string).collect::<Vec<_>>())
                        .collect::<Vec<_>>()),
                );
                m.insert("conditions", serde_json::json!(t.conditions));
                m
            })
            .collect();
        let bytes = serde_json::to_vec(&canonical).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Parses the `[[tags]]` section (and optional top-level `labels`) of a
/// TOML config.
pub fn load_schema(config: &str) -> Result<TagSchema> {
    let raw: SchemaOnly = toml::from_str(config)?;
    TagSchema::from_config(&raw.tags, raw.labels.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CELEBA: &str = r#"
[[tags]]
name = "Bangs"
conditions = ["Male", "Young"]
attributes = [
  { name = "with", when = ["Bangs=1"] },
  { name = "without", when = ["Bangs=-1"] },
]

[[tags]]
name = "Eyeglasses"
conditions = ["Male", "Young"]
attributes = [
  { name = "with", when = ["Eyeglasses=1"] },
  { name = "without", when = ["Eyeglasses=-1"] },
]

[[tags]]
name = "Hair_Color"
conditions = ["Male", "Young"]
attributes = [
  { name = "black", when = ["Black_Hair=1"] },
  { name = "blond", when = ["Blond_Hair=1"] },
  { name = "brown", when = ["Brown_Hair=1"] },
]
"#;

    #[test]
    fn celeba_layout_has_three_tags() {
        let schema = load_schema(CELEBA).unwrap();
        assert_eq!(schema.tag_count(), 3);
        assert_eq!(schema.attribute_counts(), vec![2, 2, 3]);
        assert_eq!(schema.resolve("Hair_Color", "brown").unwrap(), (2, 2));
    }

    #[test]
    fn single_attribute_tag_is_rejected() {
        let cfg = r#"
[[tags]]
name = "Hat"
attributes = [{ name = "with", when = ["Hat=1"] }]
"#;
        let err = load_schema(cfg).unwrap_err();
        assert!(matches!(err, HisdError::Schema { ref tag, .. } if tag == "Hat"), "{err}");
    }

    #[test]
    fn condition_equal_to_defining_label_is_rejected() {
        let cfg = r#"
[[tags]]
name = "Bangs"
conditions = ["Bangs"]
attributes = [
  { name = "with", when = ["Bangs=1"] },
  { name = "without", when = ["Bangs=-1"] },
]
"#;
        assert!(matches!(load_schema(cfg), Err(HisdError::Schema { .. })));
    }

    #[test]
    fn duplicate_and_overlapping_rules_are_rejected() {
        let dup = r#"
[[tags]]
name = "T"
attributes = [
  { name = "a", when = ["X=1"] },
  { name = "a", when = ["X=-1"] },
]
"#;
        assert!(load_schema(dup).unwrap_err().to_string().contains("duplicate attribute"));
        let overlap = r#"
[[tags]]
name = "T"
attributes = [
  { name = "a", when = ["X=1"] },
  { name = "b", when = ["X=1", "Y=1"] },
]
"#;
        let err = load_schema(overlap).unwrap_err().to_string();
        assert!(err.contains("overlap") && err.contains("`T`"), "{err}");
    }

    #[test]
    fn undeclared_label_is_rejected() {
        let cfg = r#"
labels = ["X"]
[[tags]]
name = "T"
conditions = ["Z"]
attributes = [
  { name = "a", when = ["X=1"] },
  { name = "b", when = ["X=-1"] },
]
"#;
        assert!(load_schema(cfg).unwrap_err().to_string().contains("`Z`"));
    }

    #[test]
    fn bad_terms() {
        assert!("X=0".parse::<LabelTerm>().is_err());
        assert!("X".parse::<LabelTerm>().is_err());
        assert_eq!("X=+1".parse::<LabelTerm>().unwrap(), LabelTerm { label: "X".into(), positive: true });
    }

    #[test]
    fn fingerprint_is_stable_and_round_trips() {
        let schema = load_schema(CELEBA).unwrap();
        let again = TagSchema::from_config(&schema.to_config(), None).unwrap();
        assert_eq!(schema, again);
        assert_eq!(schema.fingerprint(), again.fingerprint());
        assert_eq!(schema.fingerprint().len(), 64);
    }
}
