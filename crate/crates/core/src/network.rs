//! Transmission matrices of linear networks and their action on ensembles.
//!
//! A network maps amplitudes as `α' = Tα`, `β' = T*β`. Any `T` is accepted
//! for positive-P ensembles (absorption keeps coherent states coherent);
//! Wigner ensembles need a unitary `T`, since loss would add noise terms
//! that are not modelled here.
//!
//! Beam-splitter chains keep their factorization, so applying an M-mode
//! chain costs O(M) per sample instead of a dense O(M²) product.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64 as C64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Block, BlockSource, Ensemble, Ordering, SeededStream};

/// Default tolerance on `max |T†T − I|` for a matrix to count as unitary.
pub const UNITARY_TOLERANCE: f64 = 1e-10;

/// Two-mode mixer acting on modes `(lo, lo + 1)` as
/// `(v, w) → (R·v + T·w, T·v − R·w)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Splitter {
    lo: usize,
    r: f64,
    t: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct ChainFactors {
    /// `e^{iφ_j}` applied to input `j` before the first splitter.
    input_phases: Vec<C64>,
    splitters: Vec<Splitter>,
}

impl ChainFactors {
    fn apply(&self, v: &mut [C64], conjugate: bool) {
        for (x, p) in v.iter_mut().zip(&self.input_phases) {
            *x *= if conjugate { p.conj() } else { *p };
        }
        for s in &self.splitters {
            let (a, b) = (v[s.lo], v[s.lo + 1]);
            v[s.lo] = a * s.r + b * s.t;
            v[s.lo + 1] = a * s.t - b * s.r;
        }
    }
}

/// An M×M transmission matrix with cached unitarity diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMatrix {
    entries: Array2<C64>,
    deviation: f64,
    max_singular: f64,
    chain: Option<ChainFactors>,
}

fn unitarity_deviation(t: &Array2<C64>) -> f64 {
    let th = t.t().mapv(|v| v.conj());
    let prod = th.dot(t);
    prod.indexed_iter()
        .map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).norm())
        .fold(0.0, f64::max)
}

/// Largest singular value by power iteration on `T†T`.
fn max_singular_value(t: &Array2<C64>) -> f64 {
    let m = t.ncols();
    let th = t.t().mapv(|v| v.conj());
    let mut v: Array1<C64> = (0..m).map(|i| C64::new(1.0 + 0.01 * i as f64, 0.0)).collect();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = th.dot(&t.dot(&v));
        let norm = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm / v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        v = w / C64::new(norm, 0.0);
        let converged = (next - lambda).abs() <= 1e-14 * next;
        lambda = next;
        if converged {
            break;
        }
    }
    lambda.sqrt()
}

impl TransmissionMatrix {
    pub fn new(entries: Array2<C64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols || rows == 0 {
            return Err(Error::Dimension(format!(
                "transmission matrix must be square and non-empty, got {rows}x{cols}"
            )));
        }
        if entries.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::invalid("transmission matrix has non-finite entries"));
        }
        Ok(TransmissionMatrix {
            deviation: unitarity_deviation(&entries),
            max_singular: max_singular_value(&entries),
            entries,
            chain: None,
        })
    }

    pub fn identity(modes: usize) -> Self {
        TransmissionMatrix {
            entries: Array2::eye(modes),
            deviation: 0.0,
            max_singular: 1.0,
            chain: Some(ChainFactors {
                input_phases: vec![C64::new(1.0, 0.0); modes],
                splitters: Vec::new(),
            }),
        }
    }

    pub fn entries(&self) -> &Array2<C64> {
        &self.entries
    }

    pub fn modes(&self) -> usize {
        self.entries.nrows()
    }

    /// `max |(T†T − I)_{ij}|`.
    pub fn deviation(&self) -> f64 {
        self.deviation
    }

    pub fn is_unitary(&self) -> bool {
        self.deviation <= UNITARY_TOLERANCE
    }

    pub fn max_singular_value(&self) -> f64 {
        self.max_singular
    }

    /// Whether `σ_max(T) ≤ 1`, i.e. the matrix describes a passive network.
    pub fn is_physical(&self) -> bool {
        self.max_singular <= 1.0 + UNITARY_TOLERANCE
    }

    /// `T · diag(e^{iφ_j})`: phase-shift input `j` by `φ_j` before the network.
    pub fn with_input_phases(&self, phases: &[f64]) -> Result<Self> {
        if phases.len() != self.modes() {
            return Err(Error::Dimension(format!(
                "{} phases for {} modes",
                phases.len(),
                self.modes()
            )));
        }
        let factors: Vec<C64> = phases.iter().map(|&p| C64::from_polar(1.0, p)).collect();
        let mut entries = self.entries.clone();
        for (mut col, f) in entries.axis_iter_mut(Axis(1)).zip(&factors) {
            col.mapv_inplace(|v| v * f);
        }
        let chain = self.chain.as_ref().map(|c| ChainFactors {
            input_phases: c.input_phases.iter().zip(&factors).map(|(a, b)| a * b).collect(),
            splitters: c.splitters.clone(),
        });
        Ok(TransmissionMatrix {
            deviation: unitarity_deviation(&entries),
            max_singular: self.max_singular,
            entries,
            chain,
        })
    }

    /// Parse the text matrix format: `#` comment lines, a header `M N`, then
    /// M rows of 2N interleaved `re im` floats.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line_no, header) = lines.next().ok_or_else(|| Error::parse(0, "missing 'M N' header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(line_no, format!("header must be 'M N', got '{header}'")))?;
        let (m, n) = match dims[..] {
            [m, n] if m > 0 && n > 0 => (m, n),
            _ => return Err(Error::parse(line_no, format!("header must be two positive integers, got '{header}'"))),
        };
        if m != n {
            return Err(Error::parse(line_no, format!("matrix must be square, got {m}x{n}")));
        }
        let mut entries = Array2::zeros((m, n));
        let mut last = line_no;
        for row in 0..m {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(last + 1, format!("expected {m} rows, found {row}")))?;
            last = line_no;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::parse(line_no, format!("cannot parse '{f}' as a number")))
                })
                .collect::<Result<_>>()?;
            if values.len() != 2 * n {
                return Err(Error::parse(
                    line_no,
                    format!("row has {} values, expected {}", values.len(), 2 * n),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(line_no, "non-finite entry"));
            }
            for (col, pair) in values.chunks_exact(2).enumerate() {
                entries[[row, col]] = C64::new(pair[0], pair[1]);
            }
        }
        if let Some((line_no, _)) = lines.next() {
            return Err(Error::parse(line_no, format!("unexpected data after {m} rows")));
        }
        TransmissionMatrix::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TransmissionMatrix::parse(&std::fs::read_to_string(path)?)
    }

    /// Text form with 17 significant digits per value.
    pub fn to_text(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "{} {}", self.modes(), self.modes());
        for row in self.entries.rows() {
            let fields: Vec<String> = row
                .iter()
                .map(|v| format!("{:.16e} {:.16e}", v.re, v.im))
                .collect();
            let _ = writeln!(out, "{}", fields.join(" "));
        }
        out
    }

    pub fn write<W: Write>(&self, mut writer: W, comments: &[String]) -> Result<()> {
        writer.write_all(self.to_text(comments).as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
        std::fs::write(path, self.to_text(comments))?;
        Ok(())
    }

    /// Errors unless the matrix can act on `modes` modes in `ordering`.
    pub fn check_compatible(&self, modes: usize, ordering: Ordering) -> Result<()> {
        if modes != self.modes() {
            return Err(Error::Dimension(format!(
                "matrix has {} modes, ensemble has {modes}",
                self.modes()
            )));
        }
        if ordering == Ordering::Wigner && !self.is_unitary() {
            return Err(Error::NonUnitaryWigner {
                deviation: self.deviation,
                tolerance: UNITARY_TOLERANCE,
            });
        }
        Ok(())
    }

    /// Transform one sub-ensemble. Compatibility must already be checked.
    pub(crate) fn apply_block(&self, block: &Block, ordering: Ordering) -> Block {
        let conjugate_pair = ordering == Ordering::Wigner || block.is_conjugate_pair();
        match &self.chain {
            Some(chain) => {
                let mut alpha = block.alpha.clone();
                for mut row in alpha.rows_mut() {
                    chain.apply(row.as_slice_mut().expect("standard layout"), false);
                }
                let beta = if conjugate_pair {
                    alpha.mapv(|v| v.conj())
                } else {
                    let mut beta = block.beta.clone();
                    for mut row in beta.rows_mut() {
                        chain.apply(row.as_slice_mut().expect("standard layout"), true);
                    }
                    beta
                };
                Block { alpha, beta }
            }
            None => {
                // Rows are samples, so α' = α·Tᵀ.
                let alpha = block.alpha.dot(&self.entries.t());
                let beta = if conjugate_pair {
                    alpha.mapv(|v| v.conj())
                } else {
                    block.beta.dot(&self.entries.t().mapv(|v| v.conj()))
                };
                Block { alpha, beta }
            }
        }
    }
}

/// `α' = Tα`, `β' = T*β` for every sample.
pub fn apply(t: &TransmissionMatrix, ens: &Ensemble) -> Result<Ensemble> {
    t.check_compatible(ens.modes(), ens.ordering())?;
    let blocks = ens
        .blocks()
        .par_iter()
        .map(|b| t.apply_block(b, ens.ordering()))
        .collect();
    Ensemble::new(blocks, ens.ordering())
}

/// Haar-random unitary: Gram-Schmidt (with one reorthogonalization pass)
/// applied to the columns of a complex Ginibre matrix.
pub fn haar_unitary(modes: usize, seed: SeededStream) -> Result<TransmissionMatrix> {
    if modes == 0 {
        return Err(Error::invalid("mode count must be at least 1"));
    }
    let mut rng = seed.rng();
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut q: Array2<C64> = Array2::from_shape_simple_fn((modes, modes), || {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        C64::new(re * scale, im * scale)
    });
    for j in 0..modes {
        for _pass in 0..2 {
            for k in 0..j {
                let proj: C64 = (0..modes).map(|i| q[[i, k]].conj() * q[[i, j]]).sum();
                for i in 0..modes {
                    let qk = q[[i, k]];
                    q[[i, j]] -= proj * qk;
                }
            }
        }
        let norm = q.column(j).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    TransmissionMatrix::new(q)
}

/// Reflectivity amplitudes `R_1..R_{M−1}` of a beam-splitter chain.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamSplitterChainSpec {
    reflectivities: Vec<f64>,
}

impl BeamSplitterChainSpec {
    pub fn new(reflectivities: Vec<f64>) -> Result<Self> {
        if let Some(r) = reflectivities.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::invalid(format!("reflectivity {r} is outside (0, 1)")));
        }
        Ok(BeamSplitterChainSpec { reflectivities })
    }

    /// `R₁² = 1/2` and `R_{M−j}² = 1/(j+1)`: the first splitter balances
    /// the two inputs and the rest spread its second output evenly over
    /// modes 2..M.
    pub fn default_for(modes: usize) -> Result<Self> {
        if modes < 2 {
            return Err(Error::invalid("a beam-splitter chain needs at least 2 modes"));
        }
        let mut r = vec![0.0; modes - 1];
        r[0] = std::f64::consts::FRAC_1_SQRT_2;
        for j in 1..modes - 1 {
            r[modes - 1 - j] = (1.0 / (j + 1) as f64).sqrt();
        }
        BeamSplitterChainSpec::new(r)
    }

    pub fn modes(&self) -> usize {
        self.reflectivities.len() + 1
    }

    pub fn reflectivities(&self) -> &[f64] {
        &self.reflectivities
    }
}

/// Real orthogonal matrix of the chain: splitter 1 mixes modes 1 and 2,
/// splitter k ≥ 2 mixes the second output of splitter k−1 (mode k) with
/// the vacuum in mode k+1.
pub fn bs_chain_matrix(spec: &BeamSplitterChainSpec) -> TransmissionMatrix {
    let modes = spec.modes();
    let chain = ChainFactors {
        input_phases: vec![C64::new(1.0, 0.0); modes],
        splitters: spec
            .reflectivities
            .iter()
            .enumerate()
            .map(|(lo, &r)| Splitter {
                lo,
                r,
                t: (1.0 - r * r).sqrt(),
            })
            .collect(),
    };
    let mut entries = Array2::zeros((modes, modes));
    let mut column = vec![C64::new(0.0, 0.0); modes];
    for j in 0..modes {
        column.fill(C64::new(0.0, 0.0));
        column[j] = C64::new(1.0, 0.0);
        chain.apply(&mut column, false);
        for (i, v) in column.iter().enumerate() {
            entries[[i, j]] = *v;
        }
    }
    TransmissionMatrix {
        deviation: unitarity_deviation(&entries),
        max_singular: 1.0,
        entries,
        chain: Some(chain),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn identity_file_has_zero_deviation() {
        let t = TransmissionMatrix::parse("# identity\n2 2\n1 0 0 0\n0 0 1 0\n").unwrap();
        assert_eq!(t.deviation(), 0.0);
        assert!(t.is_unitary());
    }

    #[test]
    fn short_row_reports_its_line() {
        let err = TransmissionMatrix::parse("2 2\n1 0 0 0\n# c\n0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
        let err = TransmissionMatrix::parse("2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = TransmissionMatrix::parse("1 1\nnan 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = TransmissionMatrix::parse("1 1\n1 0\n1 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = TransmissionMatrix::parse("2 2\n1 0 0 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn non_unitary_is_flagged_not_rejected() {
        let t = TransmissionMatrix::parse("2 2\n1 0 0 0\n0 0 2 0\n").unwrap();
        assert_relative_eq!(t.deviation(), 3.0);
        assert!(!t.is_unitary());
        assert_relative_eq!(t.max_singular_value(), 2.0, epsilon = 1e-12);
        assert!(!t.is_physical());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = haar_unitary(5, SeededStream::new(3, 0)).unwrap();
        let back = TransmissionMatrix::parse(&t.to_text(&["seed=3".into()])).unwrap();
        assert_eq!(back.entries(), t.entries());
    }

    #[test]
    fn haar_properties() {
        let one = haar_unitary(1, SeededStream::new(1, 0)).unwrap();
        assert_relative_eq!(one.entries()[[0, 0]].norm(), 1.0, epsilon = 1e-15);
        let a = haar_unitary(8, SeededStream::new(1, 0)).unwrap();
        let b = haar_unitary(8, SeededStream::new(2, 0)).unwrap();
        assert!(a.deviation() <= 1e-10 && b.deviation() <= 1e-10);
        assert_ne!(a.entries(), b.entries());
        assert_eq!(a, haar_unitary(8, SeededStream::new(1, 0)).unwrap());
        assert!(haar_unitary(0, SeededStream::new(1, 0)).is_err());
    }

    #[test]
    fn balanced_splitter() {
        let t = bs_chain_matrix(&BeamSplitterChainSpec::new(vec![FRAC_1_SQRT_2]).unwrap());
        let h = FRAC_1_SQRT_2;
        let expected = array![[h, h], [h, -h]].mapv(|v| C64::new(v, 0.0));
        for (x, y) in t.entries().iter().zip(expected.iter()) {
            assert!((x - y).norm() < 1e-15);
        }
    }

    #[test]
    fn three_mode_default_chain() {
        let spec = BeamSplitterChainSpec::default_for(3).unwrap();
        let (r1, r2) = (spec.reflectivities()[0], spec.reflectivities()[1]);
        let (t1, t2) = ((1.0 - r1 * r1).sqrt(), (1.0 - r2 * r2).sqrt());
        let t = bs_chain_matrix(&spec);
        let col: Vec<f64> = t.entries().column(0).iter().map(|v| v.re).collect();
        assert_relative_eq!(col[0], r1, epsilon = 1e-15);
        assert_relative_eq!(col[1], t1 * r2, epsilon = 1e-15);
        assert_relative_eq!(col[2], t1 * t2, epsilon = 1e-15);
        assert!(t.deviation() <= 1e-12);
    }

    #[test]
    fn default_chain_spreads_first_input_evenly() {
        for m in [2usize, 5, 40] {
            let t = bs_chain_matrix(&BeamSplitterChainSpec::default_for(m).unwrap());
            assert!(t.deviation() <= 1e-12, "M={m}");
            let expected = FRAC_1_SQRT_2 / ((m - 1) as f64).sqrt();
            for i in 1..m {
                assert_relative_eq!(t.entries()[[i, 0]].re, expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn input_phases_compose() {
        let t = bs_chain_matrix(&BeamSplitterChainSpec::default_for(4).unwrap());
        let phased = t.with_input_phases(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        let factor = C64::from_polar(1.0, 1.0);
        for i in 0..4 {
            assert!((phased.entries()[[i, 1]] - t.entries()[[i, 1]] * factor).norm() < 1e-15);
        }
        assert!(phased.is_unitary());
        assert!(t.with_input_phases(&[0.0]).is_err());
    }

    #[test]
    fn chain_and_dense_paths_agree() {
        use crate::model::SubEnsembleLayout;
        use crate::sampler::{draw_input, InputSpec};
        use crate::model::ModeSpec;
        let spec = InputSpec::new(
            vec![ModeSpec::squeezed(0.7, 0.0).unwrap(), ModeSpec::squeezed(0.3, 0.0).unwrap(), ModeSpec::vacuum(), ModeSpec::thermal(0.5).unwrap()],
            Ordering::PositiveP,
        )
        .unwrap();
        let ens = draw_input(&spec, SubEnsembleLayout::new(2, 8).unwrap(), SeededStream::new(5, 1)).unwrap();
        let chain = bs_chain_matrix(&BeamSplitterChainSpec::default_for(4).unwrap())
            .with_input_phases(&[0.1, 0.2, 0.3, 0.4])
            .unwrap();
        let dense = TransmissionMatrix::new(chain.entries().clone()).unwrap();
        let a = apply(&chain, &ens).unwrap();
        let b = apply(&dense, &ens).unwrap();
        for (x, y) in a.blocks().iter().zip(b.blocks()) {
            for (u, v) in x.alpha.iter().zip(y.alpha.iter()).chain(x.beta.iter().zip(y.beta.iter())) {
                assert!((u - v).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn wigner_rejects_lossy_matrix() {
        use crate::model::SubEnsembleLayout;
        use crate::sampler::{draw_input, InputSpec};
        use crate::model::ModeSpec;
        let spec = InputSpec::uniform(ModeSpec::vacuum(), 2, Ordering::Wigner).unwrap();
        let ens = draw_input(&spec, SubEnsembleLayout::new(2, 4).unwrap(), SeededStream::new(1, 1)).unwrap();
        let t = TransmissionMatrix::parse("2 2\n1 0 0 0\n0 0 2 0\n").unwrap();
        assert!(matches!(apply(&t, &ens), Err(Error::NonUnitaryWigner { .. })));
        let wrong = TransmissionMatrix::identity(3);
        assert!(matches!(apply(&wrong, &ens), Err(Error::Dimension(_))));
        assert_eq!(apply(&TransmissionMatrix::identity(2), &ens).unwrap(), ens);
    }
}
