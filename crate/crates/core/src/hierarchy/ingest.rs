//! CelebA-style annotation tables and hierarchical relabeling.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{HisdError, Result};
use crate::hierarchy::schema::TagSchema;
use crate::imageio;

/// Flat ±1 annotations, one row per image.
///
/// Text layout: record count, then whitespace-separated label names, then
/// one `filename v1 … vK` line per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationTable {
    pub labels: Vec<String>,
    pub rows: Vec<AnnotationRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRow {
    pub filename: String,
    pub values: Vec<bool>,
}

impl AnnotationTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let count: usize = lines
            .next()
            .ok_or_else(|| HisdError::Annotation("missing record count".into()))?
            .trim()
            .parse()
            .map_err(|e| HisdError::Annotation(format!("bad record count: {e}")))?;
        let labels: Vec<String> = lines
            .next()
            .ok_or_else(|| HisdError::Annotation("missing label header".into()))?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::with_capacity(count);
        for (n, line) in lines.enumerate() {
            let mut fields = line.split_whitespace();
            let filename = fields.next().expect("non-empty line").to_string();
            let values = fields
                .map(|v| match v {
                    "1" => Ok(true),
                    "-1" => Ok(false),
                    other => Err(HisdError::Annotation(format!("row {}: value `{other}` is not ±1", n + 3))),
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != labels.len() {
                return Err(HisdError::Annotation(format!(
                    "row {} (`{filename}`) has {} values, header has {}",
                    n + 3,
                    values.len(),
                    labels.len()
                )));
            }
            rows.push(AnnotationRow { filename, values });
        }
        if rows.len() != count {
            return Err(HisdError::Annotation(format!("header says {count} records, found {}", rows.len())));
        }
        Ok(Self { labels, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n{}\n", self.rows.len(), self.labels.join(" "));
        for row in &self.rows {
            out.push_str(&row.filename);
            for v in &row.values {
                out.push_str(if *v { "  1" } else { " -1" });
            }
            out.push('\n');
        }
        out
    }
}

/// One image with its hierarchical labels. `attributes[i]` is `None` when
/// the image is ineligible for tag `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub path: PathBuf,
    pub attributes: Vec<Option<usize>>,
    /// Per tag, 0/1 values of that tag's condition labels in native polarity.
    pub conditions: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConflictReport {
    /// `(image_id, tag index)` pairs where more than one rule fired.
    pub conflicts: Vec<(String, usize)>,
    pub per_tag: Vec<usize>,
    /// Per tag, images for which no rule fired.
    pub ineligible_per_tag: Vec<usize>,
}

/// Ingested records plus an optional in-memory pixel cache.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<AnnotatedImage>,
    pub report: ConflictReport,
    pixels: Option<Vec<Vec<f32>>>,
    image_size: Option<u32>,
}

/// Relabels a flat table under `schema`. Image paths are resolved against
/// `image_root`; pixels are not read.
pub fn ingest(table: &AnnotationTable, schema: &TagSchema, image_root: &Path) -> Result<Dataset> {
    let index: HashMap<&str, usize> = table.labels.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect();
    for tag in schema.tags() {
        for label in tag.defining_labels().into_iter().chain(tag.conditions.iter().map(String::as_str)) {
            if !index.contains_key(label) {
                return Err(HisdError::Annotation(format!(
                    "tag `{}` references label `{label}` missing from the table header",
                    tag.name
                )));
            }
        }
    }
    let n_tags = schema.tag_count();
    let mut report = ConflictReport { conflicts: vec![], per_tag: vec![0; n_tags], ineligible_per_tag: vec![0; n_tags] };
    let mut records = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let lookup = |label: &str| index.get(label).map(|&k| row.values[k]);
        let mut attributes = Vec::with_capacity(n_tags);
        let mut conditions = Vec::with_capacity(n_tags);
        for (i, tag) in schema.tags().iter().enumerate() {
            let fired: Vec<usize> = tag.rules.iter().enumerate().filter(|(_, r)| r.fires(lookup)).map(|(j, _)| j).collect();
            attributes.push(match fired.as_slice() {
                [j] => Some(*j),
                [] => {
                    report.ineligible_per_tag[i] += 1;
                    None
                }
                _ => {
                    report.conflicts.push((row.filename.clone(), i));
                    report.per_tag[i] += 1;
                    report.ineligible_per_tag[i] += 1;
                    None
                }
            });
            conditions.push(
                tag.conditions
                    .iter()
                    .map(|c| if lookup(c) == Some(true) { 1.0 } else { 0.0 })
                    .collect(),
            );
        }
        records.push(AnnotatedImage {
            image_id: row.filename.clone(),
            path: image_root.join(&row.filename),
            attributes,
            conditions,
        });
    }
    Ok(Dataset { records, report, pixels: None, image_size: None })
}

/// Train/test partition as record indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Builds a dataset whose pixels are already in memory.
    pub fn from_memory(records: Vec<AnnotatedImage>, pixels: Vec<Vec<f32>>, image_size: u32, report: ConflictReport) -> Self {
        assert_eq!(records.len(), pixels.len());
        Self { records, report, pixels: Some(pixels), image_size: Some(image_size) }
    }

    /// Reads every image into memory, resized to `size`×`size`.
    pub fn preload(&mut self, size: u32) -> Result<()> {
        if self.image_size == Some(size) && self.pixels.is_some() {
            return Ok(());
        }
        let pixels = self
            .records
            .iter()
            .map(|r| imageio::load_chw(&r.path, size))
            .collect::<Result<Vec<_>>>()?;
        self.pixels = Some(pixels);
        self.image_size = Some(size);
        Ok(())
    }

    pub fn image_size(&self) -> Option<u32> {
        self.image_size
    }

    /// CHW pixels in [0,1] for record `idx`.
    pub fn pixels(&self, idx: usize, size: u32) -> Result<std::borrow::Cow<'_, [f32]>> {
        match (&self.pixels, self.image_size) {
            (Some(p), Some(s)) if s == size => Ok(std::borrow::Cow::Borrowed(&p[idx])),
            _ => Ok(std::borrow::Cow::Owned(imageio::load_chw(&self.records[idx].path, size)?)),
        }
    }

    /// Last `test_count` records in file order are the test set.
    pub fn split_tail(&self, test_count: usize) -> Result<Split> {
        if test_count > self.len() {
            return Err(HisdError::Config(format!("test split {test_count} exceeds {} records", self.len())));
        }
        let cut = self.len() - test_count;
        Ok(Split { train: (0..cut).collect(), test: (cut..self.len()).collect() })
    }

    /// Split from a CelebA partition file (`filename k`, where k = 2 is
    /// test and anything else is train). Unlisted images go to train.
    pub fn split_from_file(&self, text: &str) -> Result<Split> {
        let mut test_ids = std::collections::HashSet::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let (Some(name), Some(k)) = (parts.next(), parts.next()) else {
                return Err(HisdError::Annotation(format!("bad split line `{line}`")));
            };
            if k == "2" {
                test_ids.insert(name.to_string());
            }
        }
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&k| test_ids.contains(&self.records[k].image_id));
        Ok(Split { train, test })
    }

    /// A dataset containing only `indices`, sharing nothing with `self`.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&k| self.records[k].clone()).collect(),
            report: self.report.clone(),
            pixels: self.pixels.as_ref().map(|p| indices.iter().map(|&k| p[k].clone()).collect()),
            image_size: self.image_size,
        }
    }
}
