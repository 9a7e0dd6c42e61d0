//! The three training paths: non-translation, self-translation and
//! cycle-translation.

use std::cell::Cell;

use tch::Tensor;

use crate::error::Result;
use crate::hierarchy::IterationSample;
use crate::net::{Networks, StyleCode};

#[derive(Debug)]
pub struct PathOutputs {
    /// x′ = G(E(x))
    pub recon_plain: Tensor,
    /// x″ = G(T_i(E(x), F_i(x)))
    pub recon_self: Tensor,
    /// x_{i,j̃} = G(T_i(E(x), M_{i,j̃}(z)))
    pub translated: Tensor,
    /// x‴ = G(T_i(E(x_{i,j̃}), F_i(x)))
    pub recon_cycle: Tensor,
    /// F_i(x)
    pub style_source: StyleCode,
    /// M_{i,j̃}(z)
    pub style_generated: StyleCode,
    /// F_i(x_{i,j̃})
    pub style_back: StyleCode,
}

/// Counts module invocations; used to check the path structure.
#[derive(Debug, Default)]
pub struct CallCounter {
    pub encode: Cell<usize>,
    pub translate: Cell<usize>,
    pub generate: Cell<usize>,
}

impl CallCounter {
    fn bump(c: &Cell<usize>) {
        c.set(c.get() + 1);
    }
}

pub fn run_paths(nets: &Networks, sample: &IterationSample) -> Result<PathOutputs> {
    run_paths_counted(nets, sample, &CallCounter::default())
}

/// `x_trans` is kept in the graph when re-encoded, so generator-side
/// losses on x‴ backpropagate through the first translation as well.
pub fn run_paths_counted(nets: &Networks, sample: &IterationSample, calls: &CallCounter) -> Result<PathOutputs> {
    let tag = sample.tag;
    let encode = |x: &Tensor| {
        CallCounter::bump(&calls.encode);
        nets.encode(x)
    };
    let translate = |e: &Tensor, s: &StyleCode| {
        CallCounter::bump(&calls.translate);
        nets.translate(e, s, tag).map(|o| o.translated)
    };
    let generate = |e: &Tensor| {
        CallCounter::bump(&calls.generate);
        nets.generate(e)
    };

    let e = encode(&sample.x)?;
    let recon_plain = generate(&e)?;

    let style_source = nets.extract(&sample.x, tag)?;
    let recon_self = generate(&translate(&e, &style_source)?)?;

    let style_generated = nets.map_latent(&sample.z, tag, sample.target)?;
    let translated = generate(&translate(&e, &style_generated)?)?;
    let e_back = encode(&translated)?;
    let recon_cycle = generate(&translate(&e_back, &style_source)?)?;
    let style_back = nets.extract(&translated, tag)?;

    Ok(PathOutputs { recon_plain, recon_self, translated, recon_cycle, style_source, style_generated, style_back })
}
