//! Procedural 32×32 benchmark with exact ground truth.
//!
//! Two tags: a hat band across the top (with/without; hue and height are
//! its style) and a coloured frame around the border (red/green/blue;
//! thickness and intensity are its style). Two condition labels shared by
//! both tags: the shape in the lower half (circle/square) and the
//! background (dark/light). The shape position is jittered.
//!
//! Layout, rows × cols:
//! - frame: the outer two-pixel ring
//! - hat band: rows 2..12, cols 2..30
//! - background probe: rows 12..14, cols 2..30 (never drawn on)
//! - shape: disc or box of radius 5 centred at (21, 16) ± 2

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{HisdConfig, ANNOTATIONS_FILE, CONFIG_FILE, IMAGES_DIR};
use crate::error::{HisdError, Result};
use crate::hierarchy::{ingest, AnnotationRow, AnnotationTable, AttributeConfig, Dataset, TagConfig, TagSchema};
use crate::imageio;
use crate::net::ModelConfig;
use crate::training::TrainConfig;

pub const SIZE: usize = 32;
const PLANE: usize = SIZE * SIZE;

pub const HAT_ROWS: std::ops::Range<usize> = 2..12;
pub const INNER_COLS: std::ops::Range<usize> = 2..30;
pub const PROBE_ROWS: std::ops::Range<usize> = 12..14;
pub const SHAPE_ROWS: std::ops::Range<usize> = 14..30;
pub const FRAME_WIDTH: usize = 2;
pub const SHAPE_CENTER: (i32, i32) = (21, 16);
pub const SHAPE_RADIUS: i32 = 5;
pub const MAX_JITTER: i32 = 2;
pub const SHAPE_COLOR: [f32; 3] = [0.95, 0.55, 0.1];
pub const DARK: f32 = 0.15;
pub const LIGHT: f32 = 0.85;

/// A pixel counts as foreground when some channel differs from the
/// background estimate by more than this.
pub const PIXEL_THRESHOLD: f32 = 0.25;
/// Fraction of the hat band that must be foreground for "with".
pub const HAT_FILL: f32 = 0.2;
/// Bounding-box fill ratio separating box (1.0) from disc (81/121).
pub const SQUARE_FILL: f32 = 0.85;
const MIN_SHAPE_PIXELS: usize = 20;

pub const LABELS: [&str; 6] = ["Hat", "Frame_Red", "Frame_Green", "Frame_Blue", "Square", "Light"];
pub const HAT_TAG: usize = 0;
pub const FRAME_TAG: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameColor {
    Red,
    Green,
    Blue,
}

impl FrameColor {
    pub const ALL: [FrameColor; 3] = [FrameColor::Red, FrameColor::Green, FrameColor::Blue];

    pub fn channel(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Circle,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatStyle {
    /// In [0,1).
    pub hue: f32,
    /// Rows, 4..=10.
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStyle {
    /// In [1,2]: the outer ring is always solid, the inner ring has
    /// coverage `thickness − 1`.
    pub thickness: f32,
    /// Dominant channel value, in [0.75,1].
    pub intensity: f32,
}

/// Everything that determines a render except the position jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub hat: Option<HatStyle>,
    pub frame: FrameColor,
    pub frame_style: FrameStyle,
    pub shape: Shape,
    pub light: bool,
}

/// The discrete part of [`Factors`], which is what the oracle recovers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Discrete {
    pub hat: bool,
    pub frame: FrameColor,
    pub shape: Shape,
    pub light: bool,
}

impl Factors {
    pub fn discrete(&self) -> Discrete {
        Discrete { hat: self.hat.is_some(), frame: self.frame, shape: self.shape, light: self.light }
    }

    /// Random continuous styles for the given discrete factors.
    pub fn sample_styles(d: Discrete, rng: &mut impl Rng) -> Self {
        let hat = d.hat.then(|| HatStyle { hue: rng.gen_range(0.0..1.0), height: rng.gen_range(4..=10) });
        let frame_style = FrameStyle { thickness: rng.gen_range(1.0..=2.0), intensity: rng.gen_range(0.75..=1.0) };
        Factors { hat, frame: d.frame, frame_style, shape: d.shape, light: d.light }
    }
}

impl Discrete {
    /// Attribute index under [`schema_config`] for tag `tag`.
    pub fn attribute(&self, tag: usize) -> usize {
        match tag {
            HAT_TAG => usize::from(!self.hat),
            _ => self.frame as usize,
        }
    }

    pub fn labels(&self) -> [bool; 6] {
        [
            self.hat,
            self.frame == FrameColor::Red,
            self.frame == FrameColor::Green,
            self.frame == FrameColor::Blue,
            self.shape == Shape::Square,
            self.light,
        ]
    }

    /// Every combination, 2·3·2·2 = 24 of them.
    pub fn grid() -> Vec<Discrete> {
        let mut out = Vec::with_capacity(24);
        for hat in [true, false] {
            for frame in FrameColor::ALL {
                for shape in [Shape::Circle, Shape::Square] {
                    for light in [false, true] {
                        out.push(Discrete { hat, frame, shape, light });
                    }
                }
            }
        }
        out
    }
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn hue_to_rgb(hue: f32) -> [f32; 3] {
    let h = hue.rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.9 * r, 0.9 * g, 0.9 * b]
}

fn ring(r: usize, c: usize) -> usize {
    r.min(c).min(SIZE - 1 - r).min(SIZE - 1 - c)
}

fn in_shape(shape: Shape, dr: i32, dc: i32) -> bool {
    match shape {
        Shape::Circle => dr * dr + dc * dc <= SHAPE_RADIUS * SHAPE_RADIUS,
        Shape::Square => dr.abs() < SHAPE_RADIUS && dc.abs() < SHAPE_RADIUS,
    }
}

/// Renders CHW pixels in [0,1], already quantized to 8 bits so that PNG
/// round trips are exact. The jitter is the only thing drawn from `rng`.
pub fn render(f: &Factors, rng: &mut impl Rng) -> Vec<f32> {
    let jitter = (rng.gen_range(-MAX_JITTER..=MAX_JITTER), rng.gen_range(-MAX_JITTER..=MAX_JITTER));
    render_at(f, jitter)
}

pub fn render_at(f: &Factors, jitter: (i32, i32)) -> Vec<f32> {
    let bg = if f.light { LIGHT } else { DARK };
    let mut px = vec![bg; 3 * PLANE];
    let mut put = |r: usize, c: usize, rgb: [f32; 3]| {
        for (ch, v) in rgb.into_iter().enumerate() {
            px[ch * PLANE + r * SIZE + c] = v;
        }
    };
    let mut frame_rgb = [0.1f32; 3];
    frame_rgb[f.frame.channel()] = f.frame_style.intensity;
    let cover = (f.frame_style.thickness - 1.0).clamp(0.0, 1.0);
    let (cy, cx) = (SHAPE_CENTER.0 + jitter.0, SHAPE_CENTER.1 + jitter.1);
    for r in 0..SIZE {
        for c in 0..SIZE {
            match ring(r, c) {
                0 => put(r, c, frame_rgb),
                1 => put(r, c, std::array::from_fn(|ch| cover * frame_rgb[ch] + (1.0 - cover) * bg)),
                _ => {
                    if let Some(hat) = f.hat {
                        if HAT_ROWS.contains(&r) && r >= HAT_ROWS.end - hat.height {
                            put(r, c, hue_to_rgb(hat.hue));
                        }
                    }
                    if SHAPE_ROWS.contains(&r) && in_shape(f.shape, r as i32 - cy, c as i32 - cx) {
                        put(r, c, SHAPE_COLOR);
                    }
                }
            }
        }
    }
    px.iter_mut().for_each(|v| *v = quantize(*v));
    px
}

/// Binary mask (row-major `SIZE × SIZE`) of the pixels a tag may change.
pub fn region_mask(tag: usize) -> Vec<bool> {
    let mut m = vec![false; PLANE];
    for r in 0..SIZE {
        for c in 0..SIZE {
            m[r * SIZE + c] = match tag {
                HAT_TAG => HAT_ROWS.contains(&r) && INNER_COLS.contains(&c),
                _ => ring(r, c) < FRAME_WIDTH,
            };
        }
    }
    m
}

/// Per-factor oracle reading; `None` marks a factor that could not be
/// determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reading {
    pub hat: Option<bool>,
    pub frame: Option<FrameColor>,
    pub shape: Option<Shape>,
    pub light: Option<bool>,
}

impl Reading {
    /// `None` is the "undetermined" sentinel.
    pub fn discrete(&self) -> Option<Discrete> {
        Some(Discrete { hat: self.hat?, frame: self.frame?, shape: self.shape?, light: self.light? })
    }

    /// Attribute index for `tag`, when determined.
    pub fn attribute(&self, tag: usize) -> Option<usize> {
        match tag {
            HAT_TAG => self.hat.map(|h| usize::from(!h)),
            _ => self.frame.map(|f| f as usize),
        }
    }
}

fn at(px: &[f32], ch: usize, r: usize, c: usize) -> f32 {
    px[ch * PLANE + r * SIZE + c]
}

/// Recovers the discrete factors from CHW pixels by region statistics.
pub fn oracle_classify(px: &[f32]) -> Reading {
    assert_eq!(px.len(), 3 * PLANE, "oracle expects 3×{SIZE}×{SIZE} pixels");
    let probe_n = (PROBE_ROWS.len() * INNER_COLS.len()) as f32;
    let bg: [f32; 3] = std::array::from_fn(|ch| {
        PROBE_ROWS.flat_map(|r| INNER_COLS.map(move |c| (r, c))).map(|(r, c)| at(px, ch, r, c)).sum::<f32>() / probe_n
    });
    let bg_level = bg.iter().sum::<f32>() / 3.0;
    let bg_spread = bg.iter().fold(0f32, |m, v| m.max((v - bg_level).abs()));
    let light = (bg_spread < PIXEL_THRESHOLD && (bg_level - DARK).abs().min((bg_level - LIGHT).abs()) < PIXEL_THRESHOLD)
        .then_some(bg_level > 0.5);
    let fg = |r: usize, c: usize| (0..3).any(|ch| (at(px, ch, r, c) - bg[ch]).abs() > PIXEL_THRESHOLD);

    let frame = {
        let outer: Vec<(usize, usize)> = (0..SIZE).flat_map(|r| (0..SIZE).map(move |c| (r, c))).filter(|&(r, c)| ring(r, c) == 0).collect();
        let mean: [f32; 3] = std::array::from_fn(|ch| outer.iter().map(|&(r, c)| at(px, ch, r, c)).sum::<f32>() / outer.len() as f32);
        let best = (0..3).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).expect("three channels");
        let runner_up = (0..3).filter(|&ch| ch != best).map(|ch| mean[ch]).fold(f32::MIN, f32::max);
        // A global tint raises the same channel inside the frame too, so the
        // margin is measured against the background's own channel spread.
        let bg_margin = bg[best] - (0..3).filter(|&ch| ch != best).map(|ch| bg[ch]).fold(f32::MIN, f32::max);
        (mean[best] - runner_up - bg_margin.max(0.0) > PIXEL_THRESHOLD).then_some(FrameColor::ALL[best])
    };

    let hat = light.map(|_| {
        let n = HAT_ROWS.flat_map(|r| INNER_COLS.map(move |c| (r, c))).filter(|&(r, c)| fg(r, c)).count();
        n as f32 / (HAT_ROWS.len() * INNER_COLS.len()) as f32 > HAT_FILL
    });

    let shape = light.and_then(|_| {
        let pts: Vec<(usize, usize)> = SHAPE_ROWS.flat_map(|r| INNER_COLS.map(move |c| (r, c))).filter(|&(r, c)| fg(r, c)).collect();
        if pts.len() < MIN_SHAPE_PIXELS {
            return None;
        }
        let (r0, r1) = (pts.iter().map(|p| p.0).min()?, pts.iter().map(|p| p.0).max()?);
        let (c0, c1) = (pts.iter().map(|p| p.1).min()?, pts.iter().map(|p| p.1).max()?);
        let fill = pts.len() as f32 / ((r1 - r0 + 1) * (c1 - c0 + 1)) as f32;
        Some(if fill > SQUARE_FILL { Shape::Square } else { Shape::Circle })
    });

    Reading { hat, frame, shape, light }
}

/// Conditional label probabilities given each tag's attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceConfig {
    pub p_hat: f64,
    /// P(Square | hat with), P(Square | hat without).
    pub square_given_hat: [f64; 2],
    /// P(Light | frame red / green / blue).
    pub light_given_frame: [f64; 3],
}

impl Default for ImbalanceConfig {
    fn default() -> Self {
        Self { p_hat: 0.5, square_given_hat: [0.8, 0.3], light_given_frame: [0.8, 0.3, 0.3] }
    }
}

impl ImbalanceConfig {
    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(self.p_hat).chain(self.square_given_hat).chain(self.light_given_frame);
        for p in all {
            if !(0.0..=1.0).contains(&p) {
                return Err(HisdError::Config(format!("probability {p} outside [0,1]")));
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> Discrete {
        let hat = rng.gen_bool(self.p_hat);
        let frame = FrameColor::ALL[rng.gen_range(0..3)];
        let shape = if rng.gen_bool(self.square_given_hat[usize::from(!hat)]) { Shape::Square } else { Shape::Circle };
        let light = rng.gen_bool(self.light_given_frame[frame as usize]);
        Discrete { hat, frame, shape, light }
    }
}

/// The two-tag schema: Hat {with, without} and Frame {red, green, blue},
/// both conditioned on Square and Light.
pub fn schema_config() -> Vec<TagConfig> {
    let attr = |name: &str, when: &str| AttributeConfig { name: name.into(), when: vec![when.into()] };
    let conditions = vec!["Square".to_string(), "Light".to_string()];
    vec![
        TagConfig { name: "Hat".into(), conditions: conditions.clone(), attributes: vec![attr("with", "Hat=1"), attr("without", "Hat=-1")] },
        TagConfig {
            name: "Frame".into(),
            conditions,
            attributes: vec![attr("red", "Frame_Red=1"), attr("green", "Frame_Green=1"), attr("blue", "Frame_Blue=1")],
        },
    ]
}

/// Widths sized for CPU training at 32×32.
pub fn desk_model_config() -> ModelConfig {
    ModelConfig {
        image_size: SIZE as u32,
        base_width: 16,
        max_width: 64,
        style_dim: 64,
        latent_dim: 16,
        mapper_hidden: 64,
        translator_blocks: 4,
        extractor_blocks: 3,
        ..ModelConfig::default()
    }
}

pub fn desk_train_config() -> TrainConfig {
    TrainConfig { batch: 8, iterations: 20_000, test_count: 1000, checkpoint_every: 2000, log_every: 100, ..TrainConfig::default() }
}

pub fn desk_config() -> HisdConfig {
    HisdConfig {
        labels: Some(LABELS.iter().map(|s| s.to_string()).collect()),
        tags: schema_config(),
        model: desk_model_config(),
        train: desk_train_config(),
    }
}

#[derive(Debug, Clone)]
pub struct SynthRecord {
    pub filename: String,
    pub factors: Factors,
    pub jitter: (i32, i32),
    pub pixels: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct SynthSet {
    pub records: Vec<SynthRecord>,
    pub config: HisdConfig,
}

/// Rng for record `index`: one ChaCha stream per index, so records can be
/// produced in any order.
pub fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Fully determined by `(n, imbalance, seed)`.
pub fn make_dataset(n: usize, imbalance: &ImbalanceConfig, seed: u64) -> Result<SynthSet> {
    imbalance.validate()?;
    let records = (0..n)
        .map(|k| {
            let mut rng = record_rng(seed, k);
            let factors = Factors::sample_styles(imbalance.sample(&mut rng), &mut rng);
            let jitter = (rng.gen_range(-MAX_JITTER..=MAX_JITTER), rng.gen_range(-MAX_JITTER..=MAX_JITTER));
            SynthRecord { filename: format!("{k:06}.png"), factors, jitter, pixels: render_at(&factors, jitter) }
        })
        .collect();
    Ok(SynthSet { records, config: desk_config() })
}

impl SynthSet {
    pub fn schema(&self) -> Result<TagSchema> {
        self.config.schema()
    }

    pub fn annotations(&self) -> AnnotationTable {
        AnnotationTable {
            labels: LABELS.iter().map(|s| s.to_string()).collect(),
            rows: self
                .records
                .iter()
                .map(|r| AnnotationRow { filename: r.filename.clone(), values: r.factors.discrete().labels().to_vec() })
                .collect(),
        }
    }

    /// Ingested through the normal path, with pixels held in memory.
    pub fn dataset(&self, image_root: &Path) -> Result<Dataset> {
        let ingested = ingest(&self.annotations(), &self.schema()?, image_root)?;
        let pixels = self.records.iter().map(|r| r.pixels.clone()).collect();
        Ok(Dataset::from_memory(ingested.records, pixels, SIZE as u32, ingested.report))
    }

    /// Writes `images/`, `annotations.txt` and `config.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join(IMAGES_DIR);
        std::fs::create_dir_all(&images)?;
        for r in &self.records {
            imageio::write_png(&imageio::chw_to_rgb(&r.pixels, SIZE as u32, SIZE as u32), &images.join(&r.filename))?;
        }
        std::fs::write(dir.join(ANNOTATIONS_FILE), self.annotations().to_text())?;
        std::fs::write(dir.join(CONFIG_FILE), self.config.to_toml()?)?;
        Ok(())
    }
}
