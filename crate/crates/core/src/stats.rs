//! Sampling-error estimation, chi-square comparison, and exact reference
//! distributions for desk-scale validation.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counting::{self, GroupedDistribution};
use crate::error::{Error, Result};
use crate::model::{moments_from_spec, ModeSpec};

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn new(value: f64, std_error: f64) -> Self {
        Estimate { value, std_error }
    }

    /// Distance from `target` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.value - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }

    /// `|value − target| ≤ k · std_error`.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// Mean of sub-ensemble means and its standard error `sd / √repeats`.
pub fn subensemble_error(values: &[f64]) -> Result<Estimate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientRepeats(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(Estimate::new(mean, (var / n as f64).sqrt()))
}

/// Standard error of a smooth function of several sub-ensemble means, by
/// linearizing it: `rows[r][k]` is statistic `k` in sub-ensemble `r`, and
/// `gradient[k]` the partial derivative at the pooled means.
pub(crate) fn linearized_error(rows: &[Vec<f64>], gradient: &[f64]) -> f64 {
    let projected: Vec<f64> = rows
        .iter()
        .map(|row| row.iter().zip(gradient).map(|(x, g)| x * g).sum())
        .collect();
    subensemble_error(&projected).map_or(f64::NAN, |e| e.std_error)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub chi2: f64,
    pub k_valid: usize,
    pub chi2_per_k: f64,
    /// Flat (row-major) indices of bins left out of the sum.
    pub excluded_bins: Vec<usize>,
}

/// A distribution to compare simulations against: experimental frequencies
/// or an exactly known distribution (`std_errors` all zero).
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDistribution {
    shape: Vec<usize>,
    probabilities: Vec<f64>,
    std_errors: Vec<f64>,
    event_count: Option<f64>,
}

impl ReferenceDistribution {
    /// `event_count` is the number of events behind the reference; `None`
    /// means "use the simulated sample count" when deciding bin validity.
    pub fn new(
        shape: Vec<usize>,
        probabilities: Vec<f64>,
        std_errors: Vec<f64>,
        event_count: Option<f64>,
    ) -> Result<Self> {
        let bins: usize = shape.iter().product();
        if probabilities.len() != bins || std_errors.len() != bins {
            return Err(Error::Dimension(format!(
                "reference of shape {shape:?} needs {bins} bins, got {} probabilities and {} errors",
                probabilities.len(),
                std_errors.len()
            )));
        }
        if let Some(p) = probabilities.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::invalid(format!("reference probability {p} is not >= 0")));
        }
        if std_errors.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::invalid("reference standard errors must be finite and >= 0"));
        }
        let total: f64 = probabilities.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::invalid(format!("reference probabilities sum to {total} > 1")));
        }
        Ok(ReferenceDistribution {
            shape,
            probabilities,
            std_errors,
            event_count,
        })
    }

    fn exact(probabilities: Vec<f64>) -> Self {
        let n = probabilities.len();
        ReferenceDistribution {
            shape: vec![n],
            std_errors: vec![0.0; n],
            probabilities,
            event_count: None,
        }
    }

    pub fn with_event_count(mut self, events: f64) -> Self {
        self.event_count = Some(events);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn std_errors(&self) -> &[f64] {
        &self.std_errors
    }

    pub fn event_count(&self) -> Option<f64> {
        self.event_count
    }

    pub fn write_csv<W: Write>(&self, writer: W, comments: &[String]) -> Result<()> {
        let mut lines = comments.to_vec();
        if let Some(e) = self.event_count {
            lines.push(format!("event_count={e}"));
        }
        counting::write_table(writer, &self.shape, &self.probabilities, &self.std_errors, &lines)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let table = counting::read_table(reader)?;
        let event_count = match table.meta.get("event_count") {
            Some(v) => Some(v.parse::<f64>().map_err(|e| {
                Error::invalid(format!("bad event_count '{v}': {e}"))
            })?),
            None => None,
        };
        ReferenceDistribution::new(table.shape, table.probabilities, table.std_errors, event_count)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Chi-square distance between a simulated distribution and a reference.
///
/// Only bins whose expected event count `events × P_e` exceeds 10 and whose
/// combined variance is positive enter the sum; the rest are listed in
/// `excluded_bins`.
pub fn chi_square(sim: &GroupedDistribution, reference: &ReferenceDistribution) -> Result<ChiSquareReport> {
    if sim.shape() != reference.shape() {
        return Err(Error::Dimension(format!(
            "simulated shape {:?} vs reference shape {:?}",
            sim.shape(),
            reference.shape()
        )));
    }
    let events = reference.event_count.unwrap_or(sim.meta().samples as f64);
    let mut chi2 = 0.0;
    let mut k_valid = 0;
    let mut excluded_bins = Vec::new();
    for (i, ((&p, &se), (&pe, &se_e))) in sim
        .probabilities()
        .iter()
        .zip(sim.std_errors())
        .zip(reference.probabilities.iter().zip(&reference.std_errors))
        .enumerate()
    {
        let var = se * se + se_e * se_e;
        if events * pe > 10.0 && var > 0.0 {
            chi2 += (p - pe).powi(2) / var;
            k_valid += 1;
        } else {
            excluded_bins.push(i);
        }
    }
    if k_valid == 0 {
        return Err(Error::NoValidBins);
    }
    Ok(ChiSquareReport {
        chi2,
        k_valid,
        chi2_per_k: chi2 / k_valid as f64,
        excluded_bins,
    })
}

fn binomial(modes: usize, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; modes + 1];
    if p <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p >= 1.0 {
        out[modes] = 1.0;
        return out;
    }
    let ratio = p / (1.0 - p);
    out[0] = (1.0 - p).powi(modes as i32);
    for k in 0..modes {
        out[k + 1] = out[k] * ratio * (modes - k) as f64 / (k + 1) as f64;
    }
    out
}

/// Distribution of total clicks over `modes` independent thermal modes with
/// occupation `n`: Binomial(M, n/(1+n)).
pub fn exact_thermal_total(modes: usize, n: f64) -> Result<ReferenceDistribution> {
    if !(n.is_finite() && n >= 0.0) {
        return Err(Error::invalid(format!("thermal occupation must be >= 0, got {n}")));
    }
    Ok(ReferenceDistribution::exact(binomial(modes, n / (1.0 + n))))
}

/// Exact click probability `1 − ⟨:e^{−n̂}:⟩` of one Gaussian input mode.
pub fn click_probability(spec: &ModeSpec) -> f64 {
    let m = moments_from_spec(spec);
    let vacuum = ((1.0 + m.n + m.m_tilde) * (1.0 + m.n - m.m_tilde)).sqrt().recip();
    1.0 - vacuum
}

/// Poisson-binomial distribution of total clicks for independent modes.
pub fn poisson_binomial(click_probabilities: &[f64]) -> Vec<f64> {
    let mut dist = vec![1.0];
    for &p in click_probabilities {
        let mut next = vec![0.0; dist.len() + 1];
        for (k, &d) in dist.iter().enumerate() {
            next[k] += d * (1.0 - p);
            next[k + 1] += d * p;
        }
        dist = next;
    }
    dist
}

/// Total-click distribution of independent inputs sent through the
/// identity network.
pub fn exact_independent_click_total(specs: &[ModeSpec]) -> ReferenceDistribution {
    let probs: Vec<f64> = specs.iter().map(click_probability).collect();
    ReferenceDistribution::exact(poisson_binomial(&probs))
}
