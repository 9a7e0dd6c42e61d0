//! Hand-built editors for the synthetic benchmark, used to check that the
//! metrics move in the right direction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tch::{Kind, Tensor};

use crate::error::{HisdError, Result};
use crate::eval::protocol::{Editor, StyleBatch};
use crate::synth::{oracle_classify, region_mask, render_at, Discrete, Factors, FrameColor, Shape, HAT_TAG, INNER_COLS, SHAPE_ROWS, SIZE};

/// Re-renders the tag's region with the target attribute and leaves every
/// other pixel alone. With `flip_condition` it also swaps circle and square,
/// i.e. it breaks the tag-irrelevant condition.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleProbe {
    pub flip_condition: bool,
}

fn to_rows(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    let n = t.size()[0] as usize;
    let flat = Vec::<f32>::try_from(t.to_kind(Kind::Float).contiguous().flatten(0, -1))?;
    Ok(flat.chunks(flat.len() / n.max(1)).map(<[f32]>::to_vec).collect())
}

fn with_attribute(mut d: Discrete, tag: usize, attribute: usize) -> Discrete {
    if tag == HAT_TAG {
        d.hat = attribute == 0;
    } else {
        d.frame = FrameColor::ALL[attribute.min(2)];
    }
    d
}

impl OracleProbe {
    fn edit(&self, x: &[f32], tag: usize, target: usize, seed: u64, reference: Option<&[f32]>) -> Result<Vec<f32>> {
        let src = oracle_classify(x).discrete().ok_or_else(|| HisdError::Eval("probe input is not a clean render".into()))?;
        let region = region_mask(tag);
        let plane = SIZE * SIZE;
        let mut out = x.to_vec();
        // A reference contributes its attribute; copying its pixels would
        // also copy its background.
        let target = match reference {
            Some(r) => oracle_classify(r).attribute(tag).ok_or_else(|| HisdError::Eval("probe reference is not a clean render".into()))?,
            None => target,
        };
        let fill = render_at(&Factors::sample_styles(with_attribute(src, tag, target), &mut ChaCha8Rng::seed_from_u64(seed)), (0, 0));
        for c in 0..3 {
            for (p, &inside) in region.iter().enumerate() {
                if inside {
                    out[c * plane + p] = fill[c * plane + p];
                }
            }
        }
        if self.flip_condition {
            let mut d = src;
            d.shape = if d.shape == Shape::Square { Shape::Circle } else { Shape::Square };
            let flipped = render_at(&Factors::sample_styles(d, &mut ChaCha8Rng::seed_from_u64(seed)), (0, 0));
            for c in 0..3 {
                for r in SHAPE_ROWS {
                    for col in INNER_COLS {
                        out[c * plane + r * SIZE + col] = flipped[c * plane + r * SIZE + col];
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Editor for OracleProbe {
    fn translate_batch(&self, x: &Tensor, tag: usize, target: usize, styles: &StyleBatch) -> Result<Tensor> {
        let xs = to_rows(x)?;
        let outs: Vec<Vec<f32>> = match styles {
            StyleBatch::Latent(seeds) => xs.iter().zip(seeds).map(|(img, &s)| self.edit(img, tag, target, s, None)).collect::<Result<_>>()?,
            StyleBatch::Reference(r) => {
                let refs = to_rows(r)?;
                xs.iter().zip(&refs).map(|(img, rf)| self.edit(img, tag, target, 0, Some(rf))).collect::<Result<_>>()?
            }
        };
        let flat: Vec<f32> = outs.concat();
        Ok(Tensor::from_slice(&flat).view(x.size().as_slice()))
    }
}
