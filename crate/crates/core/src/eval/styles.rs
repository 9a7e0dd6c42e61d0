//! Extracted-style export and a linear separability check.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{HisdError, Result};
use crate::hierarchy::sampler::gather_images;
use crate::hierarchy::Dataset;
use crate::inference::InferenceModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StyleRow {
    pub image_id: String,
    pub attribute: String,
    pub vector: Vec<f32>,
}

/// `F_tag` of every record in `indices` that has an attribute for `tag`.
pub fn style_export(model: &InferenceModel, dataset: &Dataset, indices: &[usize], tag: usize, batch: usize) -> Result<Vec<StyleRow>> {
    let spec = model.schema.tag(tag)?;
    let eligible: Vec<usize> = indices.iter().copied().filter(|&n| dataset.records[n].attributes[tag].is_some()).collect();
    let mut rows = Vec::with_capacity(eligible.len());
    for chunk in eligible.chunks(batch.max(1)) {
        let x = gather_images(dataset, chunk, model.image_size())?;
        let codes = model.extract(&x, tag)?.codes.contiguous();
        let d = codes.size()[1] as usize;
        let flat = Vec::<f32>::try_from(codes.flatten(0, -1))?;
        for (n, v) in chunk.iter().zip(flat.chunks(d)) {
            let r = &dataset.records[*n];
            let j = r.attributes[tag].expect("filtered");
            rows.push(StyleRow { image_id: r.image_id.clone(), attribute: spec.attributes[j].clone(), vector: v.to_vec() });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparatorReport {
    /// Held-out accuracy, averaged over both folds.
    pub accuracy: f64,
    /// Same classifier on randomly permuted labels.
    pub shuffled_accuracy: f64,
    pub chance: f64,
    pub samples: usize,
    pub classes: usize,
}

const RIDGE: f64 = 1.0;

/// One-vs-rest ridge classifier on standardized features.
fn fit_predict(x: &[Vec<f32>], y: &[usize], classes: usize, train: &[usize], test: &[usize]) -> Result<f64> {
    let d = x[0].len();
    let n = train.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|&i| x[i][j] as f64).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| (train.iter().map(|&i| (x[i][j] as f64 - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-8))
        .collect();
    let design = |rows: &[usize]| DMatrix::from_fn(rows.len(), d + 1, |r, c| if c == d { 1.0 } else { (x[rows[r]][c] as f64 - mean[c]) / std[c] });
    let a = design(train);
    let targets = DMatrix::from_fn(train.len(), classes, |r, c| if y[train[r]] == c { 1.0 } else { -1.0 });
    let mut gram = a.transpose() * &a;
    for k in 0..d {
        gram[(k, k)] += RIDGE;
    }
    let w = gram
        .cholesky()
        .ok_or_else(|| HisdError::Eval("ridge system is not positive definite".into()))?
        .solve(&(a.transpose() * targets));
    let scores = design(test) * w;
    let correct = (0..test.len()).filter(|&r| scores.row(r).transpose().argmax().0 == y[test[r]]).count();
    Ok(correct as f64 / test.len() as f64)
}

fn two_fold(x: &[Vec<f32>], y: &[usize], classes: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.shuffle(rng);
    let (a, b) = order.split_at(order.len() / 2);
    Ok((fit_predict(x, y, classes, a, b)? + fit_predict(x, y, classes, b, a)?) / 2.0)
}

/// Held-out accuracy of a linear separator, plus a shuffled-label control.
pub fn linear_separator(x: &[Vec<f32>], y: &[usize], classes: usize, seed: u64) -> Result<SeparatorReport> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(HisdError::Eval(format!("need at least 4 labelled vectors, got {} vectors and {} labels", x.len(), y.len())));
    }
    if y.iter().any(|&c| c >= classes) {
        return Err(HisdError::Eval("label outside the class range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accuracy = two_fold(x, y, classes, &mut rng)?;
    let mut shuffled = y.to_vec();
    shuffled.shuffle(&mut rng);
    let shuffled_accuracy = two_fold(x, &shuffled, classes, &mut rng)?;
    let majority = (0..classes).map(|c| y.iter().filter(|&&v| v == c).count()).max().unwrap_or(0);
    Ok(SeparatorReport { accuracy, shuffled_accuracy, chance: majority as f64 / y.len() as f64, samples: x.len(), classes })
}

/// Separator over exported rows, labelled by attribute name.
pub fn separate_rows(rows: &[StyleRow], attributes: &[String], seed: u64) -> Result<SeparatorReport> {
    let y = rows
        .iter()
        .map(|r| attributes.iter().position(|a| *a == r.attribute).ok_or_else(|| HisdError::Eval(format!("unknown attribute `{}`", r.attribute))))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<Vec<f32>> = rows.iter().map(|r| r.vector.clone()).collect();
    linear_separator(&x, &y, attributes.len(), seed)
}
