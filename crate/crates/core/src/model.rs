//! Shared phase-space types: operator orderings, single-mode Gaussian input
//! specifications, their σ-ordered quadrature variances, and sample ensembles.
//!
//! An ensemble is stored as a list of independent sub-ensembles ([`Block`]s).
//! Every estimator in the crate reduces one block at a time and derives its
//! sampling error from the spread of the per-block results, so the same
//! kernels run on a materialized [`Ensemble`] or on a streamed
//! [`Experiment`](crate::pipeline::Experiment) through [`BlockSource`].

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Operator ordering of a phase-space representation.
///
/// `σ = 0` is normal ordering (positive-P), `σ = 1/2` symmetric ordering
/// (Wigner). No other orderings are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ordering {
    PositiveP,
    Wigner,
}

impl Ordering {
    /// Vacuum-noise content σ of the ordering.
    pub fn sigma(self) -> f64 {
        match self {
            Ordering::PositiveP => 0.0,
            Ordering::Wigner => 0.5,
        }
    }

    pub fn from_sigma(sigma: f64) -> Result<Self> {
        if sigma == 0.0 {
            Ok(Ordering::PositiveP)
        } else if sigma == 0.5 {
            Ok(Ordering::Wigner)
        } else {
            Err(Error::invalid(format!(
                "ordering parameter must be 0 or 1/2, got {sigma}"
            )))
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ordering::PositiveP => "positive-p",
            Ordering::Wigner => "wigner",
        }
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ordering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "positive-p" | "positivep" | "+p" | "p" => Ok(Ordering::PositiveP),
            "wigner" | "w" => Ok(Ordering::Wigner),
            other => Err(Error::invalid(format!("unknown representation '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeKind {
    Squeezed,
    Thermal,
    Vacuum,
}

/// One input mode: a (possibly decohered) squeezed vacuum, a thermal state,
/// or the vacuum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    r: f64,
    epsilon: f64,
    kind: ModeKind,
    n_thermal: f64,
}

impl ModeSpec {
    pub fn vacuum() -> Self {
        ModeSpec {
            r: 0.0,
            epsilon: 0.0,
            kind: ModeKind::Vacuum,
            n_thermal: 0.0,
        }
    }

    /// Squeezed vacuum with squeezing `r` and decoherence fraction `epsilon`.
    /// `r = 0` is normalized to the vacuum.
    pub fn squeezed(r: f64, epsilon: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::invalid(format!("squeezing r must be finite and >= 0, got {r}")));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!(
                "decoherence epsilon must lie in [0, 1], got {epsilon}"
            )));
        }
        if r == 0.0 {
            return Ok(Self::vacuum());
        }
        Ok(ModeSpec {
            r,
            epsilon,
            kind: ModeKind::Squeezed,
            n_thermal: 0.0,
        })
    }

    /// Thermal state with mean occupation `n`. `n = 0` is the vacuum.
    pub fn thermal(n: f64) -> Result<Self> {
        if !(n.is_finite() && n >= 0.0) {
            return Err(Error::invalid(format!("thermal occupation must be finite and >= 0, got {n}")));
        }
        if n == 0.0 {
            return Ok(Self::vacuum());
        }
        Ok(ModeSpec {
            r: 0.0,
            epsilon: 0.0,
            kind: ModeKind::Thermal,
            n_thermal: n,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kind(&self) -> ModeKind {
        self.kind
    }

    pub fn n_thermal(&self) -> f64 {
        self.n_thermal
    }
}

/// Second-order moments of a zero-mean single-mode Gaussian state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    /// ⟨â†â⟩
    pub n: f64,
    /// ⟨â²⟩, real.
    pub m_tilde: f64,
    /// Thermal photons added by decoherence.
    pub n_th: f64,
}

impl GaussianMoments {
    /// Checked constructor; rejects unphysical `|m̃| > √(n(n+1))`.
    pub fn new(n: f64, m_tilde: f64, n_th: f64) -> Result<Self> {
        if !(n.is_finite() && n >= 0.0 && m_tilde.is_finite() && n_th.is_finite() && n_th >= 0.0) {
            return Err(Error::invalid(format!(
                "moments must be finite with n, n_th >= 0 (n={n}, m={m_tilde}, n_th={n_th})"
            )));
        }
        let bound = (n * (n + 1.0)).sqrt();
        if m_tilde.abs() > bound * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::invalid(format!(
                "|m| = {} exceeds the physical bound sqrt(n(n+1)) = {bound}",
                m_tilde.abs()
            )));
        }
        Ok(GaussianMoments { n, m_tilde, n_th })
    }
}

/// Photon number, coherence and added thermal photons of an input mode.
pub fn moments_from_spec(spec: &ModeSpec) -> GaussianMoments {
    match spec.kind {
        ModeKind::Squeezed => {
            let (sh, ch) = (spec.r.sinh(), spec.r.cosh());
            GaussianMoments {
                n: sh * sh,
                m_tilde: (1.0 - spec.epsilon) * sh * ch,
                n_th: spec.epsilon * sh * sh,
            }
        }
        ModeKind::Thermal => GaussianMoments {
            n: spec.n_thermal,
            m_tilde: 0.0,
            n_th: 0.0,
        },
        ModeKind::Vacuum => GaussianMoments {
            n: 0.0,
            m_tilde: 0.0,
            n_th: 0.0,
        },
    }
}

/// Complex standard deviations of the two input quadratures in a given
/// ordering. Each is the root with non-negative real part, so a negative
/// σ-ordered variance yields a purely imaginary deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SigmaVariances {
    pub dx: C64,
    pub dy: C64,
}

impl SigmaVariances {
    pub fn dx2(&self) -> f64 {
        (self.dx * self.dx).re
    }

    pub fn dy2(&self) -> f64 {
        (self.dy * self.dy).re
    }
}

fn principal_root(v: f64) -> C64 {
    if v >= 0.0 {
        C64::new(v.sqrt(), 0.0)
    } else {
        C64::new(0.0, (-v).sqrt())
    }
}

/// `dx² = 2(n + σ + m̃)`, `dy² = 2(n + σ − m̃)`.
pub fn sigma_variances(moments: &GaussianMoments, ordering: Ordering) -> SigmaVariances {
    let sigma = ordering.sigma();
    SigmaVariances {
        dx: principal_root(2.0 * (moments.n + sigma + moments.m_tilde)),
        dy: principal_root(2.0 * (moments.n + sigma - moments.m_tilde)),
    }
}

/// How the samples are split into independent sub-ensembles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubEnsembleLayout {
    repeats: usize,
    chunk: usize,
}

impl SubEnsembleLayout {
    pub fn new(repeats: usize, chunk: usize) -> Result<Self> {
        if repeats < 2 {
            return Err(Error::InsufficientRepeats(repeats));
        }
        if chunk < 1 {
            return Err(Error::invalid("sub-ensemble chunk must hold at least one sample"));
        }
        Ok(SubEnsembleLayout { repeats, chunk })
    }

    pub fn repeats(&self) -> usize {
        self.repeats
    }

    pub fn chunk(&self) -> usize {
        self.chunk
    }

    pub fn samples(&self) -> usize {
        self.repeats * self.chunk
    }
}

/// A reproducible random stream: a 64-bit seed plus a stream index.
///
/// Streams are ChaCha8 keyed by `seed` with the ChaCha stream id set to
/// `stream_index`; Gaussian variates come from the ziggurat sampler of
/// `rand_distr::StandardNormal`. Both choices are fixed so results are
/// bit-reproducible within a build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededStream {
    pub seed: u64,
    pub stream_index: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        SeededStream { seed, stream_index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// Child stream `index` of this stream, used for sub-ensemble `index`.
    pub fn substream(&self, index: u64) -> SeededStream {
        SeededStream {
            seed: splitmix64(self.seed ^ splitmix64(self.stream_index)),
            stream_index: index,
        }
    }
}

/// One sub-ensemble: `chunk × M` arrays of the phase-space amplitudes α, β.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub(crate) alpha: Array2<C64>,
    pub(crate) beta: Array2<C64>,
}

impl Block {
    pub fn new(alpha: Array2<C64>, beta: Array2<C64>) -> Result<Self> {
        if alpha.dim() != beta.dim() {
            return Err(Error::Dimension(format!(
                "alpha is {:?} but beta is {:?}",
                alpha.dim(),
                beta.dim()
            )));
        }
        Ok(Block { alpha, beta })
    }

    pub fn alpha(&self) -> ArrayView2<'_, C64> {
        self.alpha.view()
    }

    pub fn beta(&self) -> ArrayView2<'_, C64> {
        self.beta.view()
    }

    pub fn samples(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn modes(&self) -> usize {
        self.alpha.ncols()
    }

    pub(crate) fn is_conjugate_pair(&self) -> bool {
        self.alpha
            .iter()
            .zip(self.beta.iter())
            .all(|(a, b)| (b - a.conj()).norm() <= 1e-12 * a.norm().max(1.0))
    }
}

/// Anything that yields the sub-ensembles of a phase-space simulation.
///
/// `map_blocks` returns one result per sub-ensemble in repeat order,
/// whatever the execution order, so reductions over it are reproducible.
pub trait BlockSource: Sync {
    fn ordering(&self) -> Ordering;
    fn modes(&self) -> usize;
    fn layout(&self) -> SubEnsembleLayout;
    fn map_blocks<R, F>(&self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(&Block) -> R + Sync + Send;
}

/// A materialized phase-space ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    blocks: Vec<Block>,
    ordering: Ordering,
    layout: SubEnsembleLayout,
}

impl Ensemble {
    /// Assemble an ensemble from equally shaped sub-ensembles.
    pub fn new(blocks: Vec<Block>, ordering: Ordering) -> Result<Self> {
        let first = blocks.first().ok_or(Error::InsufficientRepeats(0))?;
        let shape = first.alpha.dim();
        if let Some(bad) = blocks.iter().find(|b| b.alpha.dim() != shape) {
            return Err(Error::Dimension(format!(
                "sub-ensembles must share one shape: {:?} vs {:?}",
                shape,
                bad.alpha.dim()
            )));
        }
        let layout = SubEnsembleLayout::new(blocks.len(), shape.0)?;
        if ordering == Ordering::Wigner && !blocks.iter().all(Block::is_conjugate_pair) {
            return Err(Error::invalid("Wigner ensembles must satisfy beta = conj(alpha)"));
        }
        Ok(Ensemble {
            blocks,
            ordering,
            layout,
        })
    }

    /// Split `S × M` sample arrays into `layout.repeats()` consecutive blocks.
    pub fn from_samples(
        alpha: Array2<C64>,
        beta: Array2<C64>,
        ordering: Ordering,
        layout: SubEnsembleLayout,
    ) -> Result<Self> {
        if alpha.dim() != beta.dim() {
            return Err(Error::Dimension("alpha and beta shapes differ".into()));
        }
        if alpha.nrows() != layout.samples() {
            return Err(Error::Dimension(format!(
                "{} samples do not fill {} x {}",
                alpha.nrows(),
                layout.repeats(),
                layout.chunk()
            )));
        }
        let c = layout.chunk();
        let blocks = (0..layout.repeats())
            .map(|r| Block {
                alpha: alpha.slice(s![r * c..(r + 1) * c, ..]).to_owned(),
                beta: beta.slice(s![r * c..(r + 1) * c, ..]).to_owned(),
            })
            .collect();
        Ensemble::new(blocks, ordering)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn samples(&self) -> usize {
        self.layout.samples()
    }

    /// α of sample `s` in mode `j`.
    pub fn alpha(&self, s: usize, j: usize) -> C64 {
        let c = self.layout.chunk();
        self.blocks[s / c].alpha[[s % c, j]]
    }

    pub fn beta(&self, s: usize, j: usize) -> C64 {
        let c = self.layout.chunk();
        self.blocks[s / c].beta[[s % c, j]]
    }
}

impl BlockSource for Ensemble {
    fn ordering(&self) -> Ordering {
        self.ordering
    }

    fn modes(&self) -> usize {
        self.blocks[0].modes()
    }

    fn layout(&self) -> SubEnsembleLayout {
        self.layout
    }

    fn map_blocks<R, F>(&self, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(&Block) -> R + Sync + Send,
    {
        self.blocks.par_iter().map(f).collect()
    }
}
