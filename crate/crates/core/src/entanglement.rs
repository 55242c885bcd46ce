//! Quadrature statistics and entanglement witnesses.
//!
//! Quadratures are `x^θ = α e^{−iθ} + β e^{iθ}`, so `θ = 0` is `x` and
//! `θ = π/2` is `p`, with vacuum variance 1. Covariances of linear
//! combinations are reported in symmetric (measured) form: Wigner sample
//! covariances are used as they are, and positive-P ones, which estimate
//! normally ordered moments, get the commutator term
//! `Σ_j c_aj c_bj cos(θ_aj − θ_bj)` added.
//!
//! Every statistic is a smooth function of pooled first and second
//! moments. Its standard error comes from linearizing that function around
//! the pooled moments and taking the spread of the projected per-block
//! moments.
//!
//! Witnesses count as passed only when `value + 3·SE` is below the
//! threshold.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BlockSource, Ensemble, ModeSpec, Ordering};
use crate::network::{bs_chain_matrix, BeamSplitterChainSpec, TransmissionMatrix};
use crate::sampler::InputSpec;
use crate::stats::{linearized_error, Estimate};

/// Standard errors a statistic must clear its threshold by to pass.
pub const PASS_MARGIN: f64 = 3.0;

/// One quadrature `x^θ` of one mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSpec {
    pub mode: usize,
    pub theta: f64,
}

impl QuadratureSpec {
    pub fn x(mode: usize) -> Self {
        QuadratureSpec { mode, theta: 0.0 }
    }

    pub fn p(mode: usize) -> Self {
        QuadratureSpec {
            mode,
            theta: FRAC_PI_2,
        }
    }
}

/// `e^{iθ}`, exact when θ is a whole number of quarter turns.
fn unit(theta: f64) -> C64 {
    let quarters = theta / FRAC_PI_2;
    if quarters == quarters.round() && quarters.abs() < 1e9 {
        match (quarters as i64).rem_euclid(4) {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        }
    } else {
        C64::from_polar(1.0, theta)
    }
}

/// Real linear combination `Σ c_j x_{m_j}^{θ_j}` of single-mode quadratures.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearQuadrature {
    terms: Vec<(QuadratureSpec, f64)>,
}

impl LinearQuadrature {
    pub fn new(terms: Vec<(QuadratureSpec, f64)>) -> Self {
        LinearQuadrature { terms }
    }

    pub fn single(q: QuadratureSpec) -> Self {
        LinearQuadrature::new(vec![(q, 1.0)])
    }

    pub fn terms(&self) -> &[(QuadratureSpec, f64)] {
        &self.terms
    }

    /// Symmetric minus normally ordered second moment with `other`.
    fn commutator_term(&self, other: &LinearQuadrature) -> f64 {
        let mut total = 0.0;
        for (qa, ca) in &self.terms {
            for (qb, cb) in &other.terms {
                if qa.mode == qb.mode {
                    total += ca * cb * unit(qa.theta - qb.theta).re;
                }
            }
        }
        total
    }

    fn max_mode(&self) -> Option<usize> {
        self.terms.iter().map(|(q, _)| q.mode).max()
    }
}

/// Per-sample quadrature values of a Wigner ensemble.
pub fn quadrature_samples(ens: &Ensemble, spec: QuadratureSpec) -> Result<Vec<f64>> {
    if ens.ordering() != Ordering::Wigner {
        return Err(Error::WrongOrdering {
            operation: "quadrature_samples",
            required: "Wigner (symmetrically ordered)",
        });
    }
    if spec.mode >= ens.modes() {
        return Err(Error::Dimension(format!(
            "mode {} out of range for {} modes",
            spec.mode,
            ens.modes()
        )));
    }
    let phase = unit(-spec.theta);
    let mut out = Vec::with_capacity(ens.samples());
    for block in ens.blocks() {
        for (a, b) in block.alpha.column(spec.mode).iter().zip(block.beta.column(spec.mode)) {
            let x = a * phase + b * phase.conj();
            if x.im.abs() > 1e-12 * x.norm().max(1.0) {
                return Err(Error::Degenerate(format!("quadrature has imaginary part {}", x.im)));
            }
            out.push(x.re);
        }
    }
    Ok(out)
}

/// Pooled and per-block first and second moments of K linear quadratures.
///
/// Row layout: `Re m_a, Im m_a` for each `a`, then `Re ⟨q_a q_b⟩` for
/// `a ≤ b`.
struct Moments {
    k: usize,
    pooled: Vec<f64>,
    rows: Vec<Vec<f64>>,
    /// Ordering correction for each `(a, b)`, row-major K×K.
    correction: Vec<f64>,
    bessel: f64,
}

fn pair_index(k: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    2 * k + a * k - a * (a + 1) / 2 + b
}

struct Covariances<'a> {
    m: &'a Moments,
    row: &'a [f64],
}

impl Covariances<'_> {
    fn cov(&self, a: usize, b: usize) -> f64 {
        let k = self.m.k;
        let ma = C64::new(self.row[2 * a], self.row[2 * a + 1]);
        let mb = C64::new(self.row[2 * b], self.row[2 * b + 1]);
        let raw = self.row[pair_index(k, a, b)] - (ma * mb).re;
        raw * self.m.bessel + self.m.correction[a * k + b]
    }
}

impl Moments {
    fn collect<S: BlockSource>(src: &S, quads: &[LinearQuadrature]) -> Result<Self> {
        let modes = src.modes();
        if let Some(m) = quads.iter().filter_map(LinearQuadrature::max_mode).find(|&m| m >= modes) {
            return Err(Error::Dimension(format!("mode {m} out of range for {modes} modes")));
        }
        let k = quads.len();
        // x = α·(c e^{−iθ}) + β·(c e^{iθ})
        let weights: Vec<Vec<(usize, C64, C64)>> = quads
            .iter()
            .map(|q| {
                q.terms
                    .iter()
                    .map(|(s, c)| (s.mode, unit(-s.theta) * c, unit(s.theta) * c))
                    .collect()
            })
            .collect();
        let width = 2 * k + k * (k + 1) / 2;
        let rows = src.map_blocks(|block| {
            let mut sums = vec![C64::new(0.0, 0.0); k];
            let mut second = vec![C64::new(0.0, 0.0); k * (k + 1) / 2];
            let mut q = vec![C64::new(0.0, 0.0); k];
            for (a, b) in block.alpha.rows().into_iter().zip(block.beta.rows()) {
                for (qv, w) in q.iter_mut().zip(&weights) {
                    *qv = w.iter().map(|&(j, wa, wb)| a[j] * wa + b[j] * wb).sum();
                }
                let mut idx = 0;
                for i in 0..k {
                    sums[i] += q[i];
                    for j in i..k {
                        second[idx] += q[i] * q[j];
                        idx += 1;
                    }
                }
            }
            let n = block.samples() as f64;
            let mut row = Vec::with_capacity(width);
            for s in &sums {
                row.push(s.re / n);
                row.push(s.im / n);
            }
            row.extend(second.iter().map(|s| s.re / n));
            row
        });
        let repeats = rows.len() as f64;
        let pooled = (0..width)
            .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / repeats)
            .collect();
        let scale = 1.0 - 2.0 * src.ordering().sigma();
        let correction = (0..k * k)
            .map(|i| scale * quads[i / k].commutator_term(&quads[i % k]))
            .collect();
        let n = src.layout().samples() as f64;
        Ok(Moments {
            k,
            pooled,
            rows,
            correction,
            bessel: n / (n - 1.0),
        })
    }

    /// Value at the pooled moments and linearized standard error.
    fn estimate(&self, f: impl Fn(&Covariances) -> f64) -> Estimate {
        let eval = |row: &[f64]| f(&Covariances { m: self, row });
        let value = eval(&self.pooled);
        let mut probe = self.pooled.clone();
        let gradient: Vec<f64> = (0..probe.len())
            .map(|i| {
                let x = probe[i];
                let h = 1e-6 * x.abs().max(1e-6);
                probe[i] = x + h;
                let up = eval(&probe);
                probe[i] = x - h;
                let down = eval(&probe);
                probe[i] = x;
                (up - down) / (2.0 * h)
            })
            .collect();
        Estimate::new(value, linearized_error(&self.rows, &gradient))
    }
}

/// Sample variance of `q` in symmetric ordering, with standard error.
pub fn quadrature_variance<S: BlockSource>(src: &S, q: &LinearQuadrature) -> Result<Estimate> {
    let m = Moments::collect(src, std::slice::from_ref(q))?;
    Ok(m.estimate(|c| c.cov(0, 0)))
}

/// Which witness a report describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessKind {
    Epr,
    Steering,
    MPartite,
}

/// Closed-form values of a report's statistics for the modelled state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub du2: f64,
    pub dv2: f64,
    pub product: f64,
    pub sum: f64,
}

impl Prediction {
    fn from_variances(du2: f64, dv2: f64) -> Self {
        Prediction {
            du2,
            dv2,
            product: (du2 * dv2).sqrt(),
            sum: du2 + dv2,
        }
    }
}

/// Variances of the inferred quadratures `u`, `v` and the product and sum
/// criteria built from them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessReport {
    pub kind: WitnessKind,
    pub modes: usize,
    pub ordering: Ordering,
    pub samples: usize,
    pub du2: Estimate,
    pub dv2: Estimate,
    /// `Δu·Δv`
    pub product: Estimate,
    /// `Δ²u + Δ²v`
    pub sum: Estimate,
    pub product_threshold: f64,
    pub sum_threshold: f64,
    /// `(g_x, g_p)` or `(g, h)` weighting the second mode.
    pub gains: (f64, f64),
    /// Steering product `S`, equal to `product` for steering reports.
    pub steering_product: Option<Estimate>,
    pub prediction: Option<Prediction>,
}

/// One line of a serialized report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessRecord {
    pub statistic: String,
    pub value: f64,
    pub std_error: f64,
    pub threshold: Option<f64>,
    pub pass: Option<bool>,
}

fn passes(e: &Estimate, threshold: f64) -> bool {
    e.value + PASS_MARGIN * e.std_error < threshold
}

impl WitnessReport {
    pub fn product_passes(&self) -> bool {
        passes(&self.product, self.product_threshold)
    }

    pub fn sum_passes(&self) -> bool {
        passes(&self.sum, self.sum_threshold)
    }

    pub fn records(&self) -> Vec<WitnessRecord> {
        let plain = |name: &str, e: &Estimate| WitnessRecord {
            statistic: name.into(),
            value: e.value,
            std_error: e.std_error,
            threshold: None,
            pass: None,
        };
        let judged = |name: &str, e: &Estimate, t: f64| WitnessRecord {
            statistic: name.into(),
            value: e.value,
            std_error: e.std_error,
            threshold: Some(t),
            pass: Some(passes(e, t)),
        };
        let product_name = match self.kind {
            WitnessKind::Steering => "steering_product",
            _ => "product",
        };
        vec![
            plain("du2", &self.du2),
            plain("dv2", &self.dv2),
            judged(product_name, &self.product, self.product_threshold),
            judged("sum", &self.sum, self.sum_threshold),
        ]
    }
}

fn two_quadrature_report<S: BlockSource>(
    src: &S,
    kind: WitnessKind,
    u: LinearQuadrature,
    v: LinearQuadrature,
    thresholds: (f64, f64),
    gains: (f64, f64),
) -> Result<WitnessReport> {
    let m = Moments::collect(src, &[u, v])?;
    let product = m.estimate(|c| (c.cov(0, 0) * c.cov(1, 1)).sqrt());
    Ok(WitnessReport {
        kind,
        modes: src.modes(),
        ordering: src.ordering(),
        samples: src.layout().samples(),
        du2: m.estimate(|c| c.cov(0, 0)),
        dv2: m.estimate(|c| c.cov(1, 1)),
        product,
        sum: m.estimate(|c| c.cov(0, 0) + c.cov(1, 1)),
        product_threshold: thresholds.0,
        sum_threshold: thresholds.1,
        gains,
        steering_product: (kind == WitnessKind::Steering).then_some(product),
        prediction: None,
    })
}

/// Product criterion `Δ(x₁ − g x₂)·Δ(p₁ + h p₂) < 1 + gh` on the mode
/// pair, with the sum form `Δ²u + Δ²v < 2(1 + gh)` alongside.
pub fn epr_witness<S: BlockSource>(src: &S, pair: (usize, usize), g: f64, h: f64) -> Result<WitnessReport> {
    let (a, b) = pair;
    if a == b {
        return Err(Error::invalid("EPR witness needs two distinct modes"));
    }
    let u = LinearQuadrature::new(vec![(QuadratureSpec::x(a), 1.0), (QuadratureSpec::x(b), -g)]);
    let v = LinearQuadrature::new(vec![(QuadratureSpec::p(a), 1.0), (QuadratureSpec::p(b), h)]);
    let bound = 1.0 + g * h;
    two_quadrature_report(src, WitnessKind::Epr, u, v, (bound, 2.0 * bound), (g, h))
}

/// Closed-form optimal gains for inputs squeezed by `r1` (in p, input 1)
/// and `r2` (in x, input 2) mixed on a splitter of reflectivity `refl`.
pub fn analytic_gains(r1: f64, r2: f64, refl: f64) -> (f64, f64) {
    let t = (1.0 - refl * refl).sqrt();
    let (a1, s1) = ((2.0 * r1).exp(), (-2.0 * r1).exp());
    let (a2, s2) = ((2.0 * r2).exp(), (-2.0 * r2).exp());
    let gx = refl * t * (a1 - s2) / (t * t * a1 + refl * refl * s2);
    let gp = refl * t * (a2 - s1) / (refl * refl * a2 + t * t * s1);
    (gx, gp)
}

/// Inference variances `Δ²(x₁ − g x₂)`, `Δ²(p₁ + h p₂)` for the two-mode
/// splitter state.
pub fn steering_prediction(r1: f64, r2: f64, refl: f64, gains: (f64, f64)) -> Prediction {
    let t = (1.0 - refl * refl).sqrt();
    let (g, h) = gains;
    let du2 = (refl - g * t).powi(2) * (2.0 * r1).exp() + (t + g * refl).powi(2) * (-2.0 * r2).exp();
    let dv2 = (refl + h * t).powi(2) * (-2.0 * r1).exp() + (t - h * refl).powi(2) * (2.0 * r2).exp();
    Prediction::from_variances(du2, dv2)
}

/// Steering product `S = Δ(x₁ − g_x x₂)·Δ(p₁ + g_p p₂)` on modes 0 and 1.
/// Without explicit gains the closed-form optima are used. `S < 1`
/// signals steering of mode 1 by mode 2.
pub fn steering_witness<S: BlockSource>(
    src: &S,
    r1: f64,
    r2: f64,
    refl: f64,
    gains: Option<(f64, f64)>,
) -> Result<WitnessReport> {
    if src.modes() < 2 {
        return Err(Error::Dimension("steering needs at least two modes".into()));
    }
    if !(refl > 0.0 && refl < 1.0) {
        return Err(Error::invalid(format!("reflectivity {refl} is outside (0, 1)")));
    }
    let (gx, gp) = gains.unwrap_or_else(|| analytic_gains(r1, r2, refl));
    let u = LinearQuadrature::new(vec![(QuadratureSpec::x(0), 1.0), (QuadratureSpec::x(1), -gx)]);
    let v = LinearQuadrature::new(vec![(QuadratureSpec::p(0), 1.0), (QuadratureSpec::p(1), gp)]);
    let mut report = two_quadrature_report(src, WitnessKind::Steering, u, v, (1.0, 2.0), (gx, gp))?;
    report.prediction = Some(steering_prediction(r1, r2, refl, (gx, gp)));
    Ok(report)
}

/// Covariance-ratio gains `g_x = Cov(x₁,x₂)/Var(x₂)`,
/// `g_p = −Cov(p₁,p₂)/Var(p₂)` on modes 0 and 1.
pub fn empirical_gains<S: BlockSource>(src: &S) -> Result<(Estimate, Estimate)> {
    if src.modes() < 2 {
        return Err(Error::Dimension("gains need at least two modes".into()));
    }
    let quads: Vec<LinearQuadrature> = [
        QuadratureSpec::x(0),
        QuadratureSpec::x(1),
        QuadratureSpec::p(0),
        QuadratureSpec::p(1),
    ]
    .into_iter()
    .map(LinearQuadrature::single)
    .collect();
    let m = Moments::collect(src, &quads)?;
    let floor = 1e-12;
    let probe = Covariances { m: &m, row: &m.pooled };
    if probe.cov(1, 1).abs() <= floor || probe.cov(3, 3).abs() <= floor {
        return Err(Error::Degenerate("second-mode quadrature variance is zero".into()));
    }
    let gx = m.estimate(|c| c.cov(0, 1) / c.cov(1, 1));
    let gp = m.estimate(|c| -c.cov(2, 3) / c.cov(3, 3));
    Ok((gx, gp))
}

/// `Δ²u = 2e^{−2r₂}`, `Δ²v = 2e^{−2r₁}` for the default splitter chain.
pub fn mpartite_prediction(r1: f64, r2: f64) -> Prediction {
    Prediction::from_variances(2.0 * (-2.0 * r2).exp(), 2.0 * (-2.0 * r1).exp())
}

/// `(2/(M−1), 4/(M−1))`.
pub fn mpartite_thresholds(modes: usize) -> (f64, f64) {
    let k = (modes - 1) as f64;
    (2.0 / k, 4.0 / k)
}

/// M-partite witness with `u = x₁ − Σ_{j>1} x_j/√(M−1)` and
/// `v = p₁ + Σ_{j>1} p_j/√(M−1)`. `squeezing` attaches the closed-form
/// variances for the default chain fed by `(r₁, r₂)`.
pub fn mpartite_witness<S: BlockSource>(
    src: &S,
    modes: usize,
    squeezing: Option<(f64, f64)>,
) -> Result<WitnessReport> {
    if modes < 2 {
        return Err(Error::invalid("M-partite witness needs M >= 2"));
    }
    if src.modes() != modes {
        return Err(Error::Dimension(format!(
            "witness for {modes} modes applied to a {}-mode ensemble",
            src.modes()
        )));
    }
    let c = 1.0 / ((modes - 1) as f64).sqrt();
    let mut u = vec![(QuadratureSpec::x(0), 1.0)];
    let mut v = vec![(QuadratureSpec::p(0), 1.0)];
    for j in 1..modes {
        u.push((QuadratureSpec::x(j), -c));
        v.push((QuadratureSpec::p(j), c));
    }
    let mut report = two_quadrature_report(
        src,
        WitnessKind::MPartite,
        LinearQuadrature::new(u),
        LinearQuadrature::new(v),
        mpartite_thresholds(modes),
        (c, c),
    )?;
    report.prediction = squeezing.map(|(r1, r2)| mpartite_prediction(r1, r2));
    Ok(report)
}

/// Inputs and network of the splitter-chain experiments: input 1 squeezed
/// in p by `r1`, input 2 squeezed in x by `r2`, vacuum elsewhere, sent
/// through a chain with the given (or default) reflectivities.
pub fn chain_setup(
    modes: usize,
    r1: f64,
    r2: f64,
    reflectivities: Option<Vec<f64>>,
    ordering: Ordering,
) -> Result<(InputSpec, TransmissionMatrix)> {
    let spec = match reflectivities {
        Some(r) => BeamSplitterChainSpec::new(r)?,
        None => BeamSplitterChainSpec::default_for(modes)?,
    };
    if spec.modes() != modes {
        return Err(Error::Dimension(format!(
            "{} reflectivities for {modes} modes",
            spec.reflectivities().len()
        )));
    }
    let mut inputs = vec![ModeSpec::vacuum(); modes];
    inputs[0] = ModeSpec::squeezed(r1, 0.0)?;
    inputs[1] = ModeSpec::squeezed(r2, 0.0)?;
    // A quarter-turn on input 2 swaps its squeezed and anti-squeezed axes.
    let mut phases = vec![0.0; modes];
    phases[1] = FRAC_PI_2;
    let t = bs_chain_matrix(&spec).with_input_phases(&phases)?;
    Ok((InputSpec::new(inputs, ordering)?, t))
}
