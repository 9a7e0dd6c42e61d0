//! Pixel-oracle metrics on the synthetic benchmark.

use serde::Serialize;
use tch::{Kind, Tensor};

use crate::error::{HisdError, Result};
use crate::eval::protocol::{for_each_translated, plan_pairs, sources, targets, Editor, Mode, Setup, StyleBatch};
use crate::synth::{oracle_classify, region_mask, SIZE};

/// Metrics for one `(tag, target)` pair. Fractions are over translated
/// images; pixel values are in [0,1].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OracleRow {
    pub tag: usize,
    /// `None` for a per-tag aggregate.
    pub target: Option<usize>,
    pub translations: usize,
    /// (a) Latent-guided outputs the oracle reads as the target attribute.
    pub accuracy_latent: f64,
    pub accuracy_reference: f64,
    /// (b) Mean absolute change outside the tag's region, latent-guided.
    pub outside_change: f64,
    pub outside_change_reference: f64,
    /// (c) Mean absolute error of the cycle reconstruction
    /// `G(T(E(x_trans), F(x)))` against `x`.
    pub cycle_l1: f64,
    /// (d) Latent-guided outputs whose shape and background readings match
    /// the source.
    pub condition_preservation: f64,
    pub condition_preservation_reference: f64,
    /// (e) `|accuracy_latent − accuracy_reference|`.
    pub gap: f64,
}

#[derive(Default)]
struct Tally {
    n: usize,
    hits: usize,
    kept: usize,
    outside: f64,
    cycle: f64,
}

fn pixels_of(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    let n = t.size()[0] as usize;
    let flat = Vec::<f32>::try_from(t.to_kind(Kind::Float).contiguous().flatten(0, -1))?;
    let per = flat.len() / n.max(1);
    Ok(flat.chunks(per).map(<[f32]>::to_vec).collect())
}

fn evaluate(editor: &dyn Editor, setup: &Setup<'_>, tag: usize, target: usize, mode: Mode, with_cycle: bool) -> Result<Tally> {
    if setup.image_size as usize != SIZE {
        return Err(HisdError::Eval(format!("oracle metrics need {SIZE}×{SIZE} images")));
    }
    let src = sources(setup, tag, target, |_, _| true);
    let refs = targets(setup, tag, target, |_, _| true);
    if src.is_empty() {
        return Err(HisdError::Eval(format!("no source images for tag {tag} → attribute {target}")));
    }
    let pairs = plan_pairs(&src, &refs, setup.k, mode, setup.seed)?;
    let outside: Vec<bool> = region_mask(tag).into_iter().map(|m| !m).collect();
    let outside_count = 3 * outside.iter().filter(|&&o| o).count();
    let mut t = Tally::default();
    for_each_translated(editor, setup, tag, target, mode, &pairs, |_, x, y| {
        let (xs, ys) = (pixels_of(x)?, pixels_of(y)?);
        for (xp, yp) in xs.iter().zip(&ys) {
            let (rx, ry) = (oracle_classify(xp), oracle_classify(yp));
            t.n += 1;
            t.hits += usize::from(ry.attribute(tag) == Some(target));
            t.kept += usize::from(rx.shape.is_some() && ry.shape == rx.shape && ry.light == rx.light);
            let diff: f64 = (0..3)
                .flat_map(|c| outside.iter().enumerate().filter(|(_, &o)| o).map(move |(p, _)| c * SIZE * SIZE + p))
                .map(|k| (xp[k] - yp[k]).abs() as f64)
                .sum();
            t.outside += diff / outside_count as f64;
        }
        if with_cycle {
            let back = editor.translate_batch(y, tag, 0, &StyleBatch::Reference(x.shallow_clone()))?;
            let l1 = (back - x).abs().mean_dim([1i64, 2, 3].as_slice(), false, Kind::Double);
            t.cycle += Vec::<f64>::try_from(l1)?.iter().sum::<f64>();
        }
        Ok(())
    })?;
    Ok(t)
}

/// Metrics (a)–(e) for translating the tag's other attributes to `target`.
pub fn oracle_metrics(editor: &dyn Editor, setup: &Setup<'_>, tag: usize, target: usize) -> Result<OracleRow> {
    let l = evaluate(editor, setup, tag, target, Mode::Latent, true)?;
    let r = evaluate(editor, setup, tag, target, Mode::Reference, false)?;
    let frac = |a: usize, n: usize| a as f64 / n.max(1) as f64;
    let (acc_l, acc_r) = (frac(l.hits, l.n), frac(r.hits, r.n));
    Ok(OracleRow {
        tag,
        target: Some(target),
        translations: l.n,
        accuracy_latent: acc_l,
        accuracy_reference: acc_r,
        outside_change: l.outside / l.n.max(1) as f64,
        outside_change_reference: r.outside / r.n.max(1) as f64,
        cycle_l1: l.cycle / l.n.max(1) as f64,
        condition_preservation: frac(l.kept, l.n),
        condition_preservation_reference: frac(r.kept, r.n),
        gap: (acc_l - acc_r).abs(),
    })
}

/// Translation-weighted average of a tag's rows (all targets), with the gap
/// recomputed from the averaged accuracies.
pub fn aggregate(rows: &[OracleRow]) -> OracleRow {
    let n: usize = rows.iter().map(|r| r.translations).sum();
    let w = |f: fn(&OracleRow) -> f64| rows.iter().map(|r| f(r) * r.translations as f64).sum::<f64>() / n.max(1) as f64;
    let mut out = OracleRow {
        tag: rows.first().map_or(0, |r| r.tag),
        target: None,
        translations: n,
        accuracy_latent: w(|r| r.accuracy_latent),
        accuracy_reference: w(|r| r.accuracy_reference),
        outside_change: w(|r| r.outside_change),
        outside_change_reference: w(|r| r.outside_change_reference),
        cycle_l1: w(|r| r.cycle_l1),
        condition_preservation: w(|r| r.condition_preservation),
        condition_preservation_reference: w(|r| r.condition_preservation_reference),
        gap: 0.0,
    };
    out.gap = (out.accuracy_latent - out.accuracy_reference).abs();
    out
}

/// Per-tag aggregates over every target attribute.
pub fn oracle_table(editor: &dyn Editor, setup: &Setup<'_>, attribute_counts: &[usize]) -> Result<Vec<(OracleRow, Vec<OracleRow>)>> {
    attribute_counts
        .iter()
        .enumerate()
        .map(|(tag, &m)| {
            let rows = (0..m).map(|j| oracle_metrics(editor, setup, tag, j)).collect::<Result<Vec<_>>>()?;
            Ok((aggregate(&rows), rows))
        })
        .collect()
}
