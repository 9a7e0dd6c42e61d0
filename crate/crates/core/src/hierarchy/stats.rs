use std::fmt;

use serde::Serialize;

use crate::hierarchy::ingest::Dataset;
use crate::hierarchy::schema::TagSchema;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRate {
    pub label: String,
    /// P(label = 1 | tag attribute).
    pub positive: f64,
    /// P(label = -1 | tag attribute); e.g. "aged" for `Young`.
    pub negative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeStats {
    pub tag: String,
    pub attribute: String,
    pub count: usize,
    pub conditions: Vec<ConditionRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsTable {
    pub rows: Vec<AttributeStats>,
    pub records: usize,
}

impl StatsTable {
    pub fn get(&self, tag: &str, attribute: &str) -> Option<&AttributeStats> {
        self.rows.iter().find(|r| r.tag == tag && r.attribute == attribute)
    }
}

impl AttributeStats {
    pub fn rate(&self, label: &str) -> Option<&ConditionRate> {
        self.conditions.iter().find(|c| c.label == label)
    }
}

/// Exact per-(tag, attribute) counts and condition proportions over `indices`
/// (all records when `None`).
pub fn dataset_stats(dataset: &Dataset, schema: &TagSchema, indices: Option<&[usize]>) -> StatsTable {
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..dataset.len()).collect();
            &all
        }
    };
    let mut rows = Vec::new();
    for (i, tag) in schema.tags().iter().enumerate() {
        let k = tag.conditions.len();
        let mut counts = vec![0usize; tag.attribute_count()];
        let mut positives = vec![vec![0usize; k]; tag.attribute_count()];
        for &n in indices {
            let rec = &dataset.records[n];
            if let Some(j) = rec.attributes[i] {
                counts[j] += 1;
                for (c, v) in rec.conditions[i].iter().enumerate() {
                    if *v > 0.5 {
                        positives[j][c] += 1;
                    }
                }
            }
        }
        for (j, attribute) in tag.attributes.iter().enumerate() {
            let conditions = tag
                .conditions
                .iter()
                .enumerate()
                .map(|(c, label)| {
                    let positive = if counts[j] == 0 { f64::NAN } else { positives[j][c] as f64 / counts[j] as f64 };
                    ConditionRate { label: label.clone(), positive, negative: 1.0 - positive }
                })
                .collect();
            rows.push(AttributeStats { tag: tag.name.clone(), attribute: attribute.clone(), count: counts[j], conditions });
        }
    }
    StatsTable { rows, records: indices.len() }
}

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:<12} {:>8}  conditions P(=1) / P(=-1)", "tag", "attribute", "count")?;
        for row in &self.rows {
            write!(f, "{:<16} {:<12} {:>8} ", row.tag, row.attribute, row.count)?;
            for c in &row.conditions {
                write!(f, " {}={:.3}/{:.3}", c.label, c.positive, c.negative)?;
            }
            writeln!(f)?;
        }
        writeln!(f, "records: {}", self.records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::ingest::{ingest, AnnotationTable};
    use crate::hierarchy::schema::load_schema;
    use std::path::Path;

    #[test]
    fn proportions_are_exact() {
        let schema = load_schema(
            r#"
[[tags]]
name = "Glasses"
conditions = ["Male", "Young"]
attributes = [{ name = "with", when = ["Eyeglasses=1"] }, { name = "without", when = ["Eyeglasses=-1"] }]
"#,
        )
        .unwrap();
        let table = AnnotationTable::parse(
            "5
Eyeglasses Male Young
a 1 1 -1
b 1 1 1
c 1 -1 -1
d -1 -1 1
e -1 1 1
",
        )
        .unwrap();
        let ds = ingest(&table, &schema, Path::new(".")).unwrap();
        let stats = dataset_stats(&ds, &schema, None);
        let with = stats.get("Glasses", "with").unwrap();
        assert_eq!(with.count, 3);
        assert!((with.rate("Male").unwrap().positive - 2.0 / 3.0).abs() < 1e-12);
        assert!((with.rate("Young").unwrap().negative - 2.0 / 3.0).abs() < 1e-12);
        let without = stats.get("Glasses", "without").unwrap();
        assert_eq!(without.rate("Male").unwrap().positive, 0.5);
        assert!(stats.to_string().contains("Glasses"));
    }
}
