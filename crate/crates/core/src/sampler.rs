//! Drawing phase-space samples of independent single-mode Gaussian inputs.
//!
//! Per mode, with Gaussian noises `w, w'` of unit variance,
//!
//! ```text
//! α = (dx·w + i·dy·w') / 2,    β = (dx·w − i·dy·w') / 2
//! ```
//!
//! reproduces `⟨βα⟩ = n + σ` and `⟨α²⟩ = m̃`. In the Wigner ordering `dx`
//! and `dy` are real and `β = α*` holds bit for bit. In the positive-P
//! ordering `dy` becomes imaginary once the state is squeezed below vacuum,
//! and `β` is an independent complex variable.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    moments_from_spec, sigma_variances, Block, BlockSource, Ensemble, ModeSpec, Ordering,
    SeededStream, SubEnsembleLayout,
};
use crate::stats::{subensemble_error, Estimate};

/// Input modes and the phase-space ordering to sample them in.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSpec {
    modes: Vec<ModeSpec>,
    ordering: Ordering,
}

impl InputSpec {
    pub fn new(modes: Vec<ModeSpec>, ordering: Ordering) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("at least one input mode is required"));
        }
        Ok(InputSpec { modes, ordering })
    }

    /// `count` identical modes.
    pub fn uniform(spec: ModeSpec, count: usize, ordering: Ordering) -> Result<Self> {
        InputSpec::new(vec![spec; count], ordering)
    }

    pub fn modes(&self) -> &[ModeSpec] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn ordering(&self) -> Ordering {
        self.ordering
    }

    /// Per-mode `(dx/2, i·dy/2)`.
    fn coefficients(&self) -> Vec<(C64, C64)> {
        self.modes
            .iter()
            .map(|m| {
                let v = sigma_variances(&moments_from_spec(m), self.ordering);
                (v.dx * 0.5, C64::i() * v.dy * 0.5)
            })
            .collect()
    }
}

fn draw_with(coefficients: &[(C64, C64)], chunk: usize, stream: SeededStream) -> Block {
    let modes = coefficients.len();
    let mut rng = stream.rng();
    let mut alpha = Array2::zeros((chunk, modes));
    let mut beta = Array2::zeros((chunk, modes));
    let mut noise = vec![0.0f64; 2 * modes];
    for (mut a, mut b) in alpha.rows_mut().into_iter().zip(beta.rows_mut()) {
        // 2M fresh normals per sample: w_j for x, w_{j+M} for y.
        for w in noise.iter_mut() {
            *w = StandardNormal.sample(&mut rng);
        }
        for (j, &(cx, cy)) in coefficients.iter().enumerate() {
            let (w, w2) = (noise[j], noise[j + modes]);
            a[j] = C64::new(cx.re * w + cy.re * w2, cx.im * w + cy.im * w2);
            b[j] = C64::new(cx.re * w - cy.re * w2, cx.im * w - cy.im * w2);
        }
    }
    Block { alpha, beta }
}

/// One sub-ensemble of `chunk` input samples drawn from `stream`.
pub fn draw_block(spec: &InputSpec, chunk: usize, stream: SeededStream) -> Block {
    draw_with(&spec.coefficients(), chunk, stream)
}

/// Stream index conventionally used for input samples; random matrices use
/// stream 0 of the same seed.
pub const INPUT_STREAM: u64 = 1;

/// Draw a full input ensemble. Sub-ensemble `r` uses `stream.substream(r)`,
/// so the result does not depend on the thread count.
pub fn draw_input(spec: &InputSpec, layout: SubEnsembleLayout, stream: SeededStream) -> Result<Ensemble> {
    let blocks = (0..layout.repeats())
        .into_par_iter()
        .map(|r| draw_block(spec, layout.chunk(), stream.substream(r as u64)))
        .collect();
    Ensemble::new(blocks, spec.ordering)
}

/// Sampled photon number and coherence of one mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEstimate {
    pub n: Estimate,
    pub m: Estimate,
}

/// Per-mode `n̂ = Re⟨βα⟩ − σ` and `m̂ = Re⟨α²⟩` with sub-ensemble errors.
pub fn estimate_moments<S: BlockSource>(src: &S) -> Result<Vec<MomentEstimate>> {
    let sigma = src.ordering().sigma();
    let per_block = src.map_blocks(|block| {
        let s = block.samples() as f64;
        (0..block.modes())
            .map(|j| {
                let a = block.alpha.column(j);
                let b = block.beta.column(j);
                let n: f64 = a.iter().zip(b).map(|(a, b)| (b * a).re).sum::<f64>() / s;
                let m: f64 = a.iter().map(|a| (a * a).re).sum::<f64>() / s;
                (n - sigma, m)
            })
            .collect::<Vec<_>>()
    });
    (0..src.modes())
        .map(|j| {
            let ns: Vec<f64> = per_block.iter().map(|b| b[j].0).collect();
            let ms: Vec<f64> = per_block.iter().map(|b| b[j].1).collect();
            Ok(MomentEstimate {
                n: subensemble_error(&ns)?,
                m: subensemble_error(&ms)?,
            })
        })
        .collect()
}
