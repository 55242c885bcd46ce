//! Click-detector estimators and grouped count distributions.
//!
//! A grouped count distribution `G(m₁, …, m_g)` is the probability of seeing
//! `m_j` clicks among the detectors of each disjoint set `S_j`. Summing the
//! click-pattern probabilities directly costs `2^n` terms for `n` detectors.
//! Instead, every positive-P sample contributes the Fourier observable
//!
//! ```text
//! F(k₁, …, k_g) = Π_j Π_{i ∈ S_j} (π_i(0) + π_i(1) e^{−i k_j θ_j}),   θ_j = 2π / (M_j + 1)
//! ```
//!
//! whose ensemble mean is inverted with a g-dimensional inverse DFT. The
//! per-detector weights `π(0) = e^{−n'}` and `π(1) = 1 − e^{−n'}` use the
//! phase-space photon number `n' = β'α'` and are in general complex; the
//! real part is taken once, on the averaged distribution.
//!
//! [`grouped_probability_bruteforce`] evaluates the same estimand by explicit
//! enumeration of click patterns and exists as an oracle for small `n`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{Block, BlockSource, Ordering};
use crate::stats::subensemble_error;

/// Largest detector count accepted by the enumeration oracle.
pub const BRUTEFORCE_MAX_DETECTORS: usize = 16;

/// Disjoint output-mode sets whose click totals are binned together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupedSpec {
    sets: Vec<Vec<usize>>,
}

impl GroupedSpec {
    pub fn new(sets: Vec<Vec<usize>>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Grouping("at least one set is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (j, set) in sets.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Grouping(format!("set {} is empty", j + 1)));
            }
            for &mode in set {
                if !seen.insert(mode) {
                    return Err(Error::Grouping(format!("mode {mode} appears in more than one set")));
                }
            }
        }
        Ok(GroupedSpec { sets })
    }

    /// One set holding every mode: the total-count distribution.
    pub fn total(modes: usize) -> Result<Self> {
        GroupedSpec::new(vec![(0..modes).collect()])
    }

    /// `parts` contiguous sets of (nearly) equal size over `modes` modes.
    pub fn contiguous(modes: usize, parts: usize) -> Result<Self> {
        if parts == 0 || parts > modes {
            return Err(Error::Grouping(format!("cannot split {modes} modes into {parts} sets")));
        }
        let mut start = 0;
        let sets = (0..parts)
            .map(|p| {
                let len = modes / parts + usize::from(p < modes % parts);
                let set = (start..start + len).collect();
                start += len;
                set
            })
            .collect();
        GroupedSpec::new(sets)
    }

    /// Parse `"0-9;10-19"` or `"0,2,4;1,3"`: sets separated by `;`, each a
    /// comma list of indices or inclusive ranges.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sets = Vec::new();
        for part in text.split(';') {
            let mut set = Vec::new();
            for item in part.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let bad = || Error::Grouping(format!("cannot parse '{item}'"));
                match item.split_once('-') {
                    Some((a, b)) => {
                        let a: usize = a.trim().parse().map_err(|_| bad())?;
                        let b: usize = b.trim().parse().map_err(|_| bad())?;
                        if b < a {
                            return Err(bad());
                        }
                        set.extend(a..=b);
                    }
                    None => set.push(item.parse().map_err(|_| bad())?),
                }
            }
            sets.push(set);
        }
        GroupedSpec::new(sets)
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    /// `θ_j = 2π / (M_j + 1)` per set.
    pub fn angles(&self) -> Vec<f64> {
        self.sets.iter().map(|s| 2.0 * PI / (s.len() + 1) as f64).collect()
    }

    /// Bins per axis, `M_j + 1`.
    pub fn shape(&self) -> Vec<usize> {
        self.sets.iter().map(|s| s.len() + 1).collect()
    }

    /// Correlation order `n = Σ M_j`.
    pub fn order(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    fn check_modes(&self, modes: usize) -> Result<()> {
        match self.sets.iter().flatten().find(|&&m| m >= modes) {
            Some(m) => Err(Error::Grouping(format!(
                "mode index {m} out of range for {modes} modes"
            ))),
            None => Ok(()),
        }
    }

    fn strides(&self) -> Vec<usize> {
        let shape = self.shape();
        let mut strides = vec![1; shape.len()];
        for j in (0..shape.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * shape[j + 1];
        }
        strides
    }
}

impl std::fmt::Display for GroupedSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sets: Vec<String> = self.sets.iter().map(|s| format_set(s)).collect();
        f.write_str(&sets.join(";"))
    }
}

fn format_set(set: &[usize]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < set.len() {
        let mut j = i;
        while j + 1 < set.len() && set[j + 1] == set[j] + 1 {
            j += 1;
        }
        if !out.is_empty() {
            out.push(',');
        }
        if j > i {
            let _ = write!(out, "{}-{}", set[i], set[j]);
        } else {
            let _ = write!(out, "{}", set[i]);
        }
        i = j + 1;
    }
    out
}

/// Normally ordered no-click and click weights `(e^{−n'}, 1 − e^{−n'})`.
#[inline]
pub fn click_estimators(n_prime: C64) -> (C64, C64) {
    let pi0 = if n_prime.im == 0.0 {
        C64::new((-n_prime.re).exp(), 0.0)
    } else {
        (-n_prime).exp()
    };
    (pi0, C64::new(1.0, 0.0) - pi0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionMeta {
    pub samples: usize,
    pub repeats: usize,
    pub ordering: Ordering,
    pub sets: Vec<Vec<usize>>,
    pub seed: Option<u64>,
    /// Largest |imaginary part| of the averaged distribution before the real
    /// part was taken.
    pub imag_residue: f64,
}

/// Grouped count probabilities over the bins `m_j ∈ 0..=M_j`, stored
/// row-major, with per-bin standard errors from the sub-ensemble spread.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDistribution {
    shape: Vec<usize>,
    probabilities: Vec<f64>,
    std_errors: Vec<f64>,
    block_estimates: Option<Vec<Vec<f64>>>,
    meta: DistributionMeta,
}

impl GroupedDistribution {
    pub fn from_parts(
        shape: Vec<usize>,
        probabilities: Vec<f64>,
        std_errors: Vec<f64>,
        meta: DistributionMeta,
    ) -> Result<Self> {
        let bins: usize = shape.iter().product();
        if probabilities.len() != bins || std_errors.len() != bins {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {bins} bins, got {} / {}",
                probabilities.len(),
                std_errors.len()
            )));
        }
        Ok(GroupedDistribution {
            shape,
            probabilities,
            std_errors,
            block_estimates: None,
            meta,
        })
    }

    fn from_blocks(per_block: Vec<Vec<C64>>, shape: Vec<usize>, meta: DistributionMeta) -> Result<Self> {
        let repeats = per_block.len();
        let bins: usize = shape.iter().product();
        let mut mean = vec![C64::new(0.0, 0.0); bins];
        for block in &per_block {
            for (m, v) in mean.iter_mut().zip(block) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= repeats as f64;
        }
        let block_estimates: Vec<Vec<f64>> = per_block
            .iter()
            .map(|b| b.iter().map(|v| v.re).collect())
            .collect();
        let std_errors = (0..bins)
            .map(|i| {
                let column: Vec<f64> = block_estimates.iter().map(|b| b[i]).collect();
                subensemble_error(&column).map(|e| e.std_error)
            })
            .collect::<Result<Vec<_>>>()?;
        let imag_residue = mean.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        Ok(GroupedDistribution {
            shape,
            probabilities: mean.iter().map(|v| v.re).collect(),
            std_errors,
            block_estimates: Some(block_estimates),
            meta: DistributionMeta { imag_residue, ..meta },
        })
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

    pub fn meta(&self) -> &DistributionMeta {
        &self.meta
    }

    /// Per-sub-ensemble distributions, when the distribution was simulated
    /// rather than read from a file.
    pub fn block_estimates(&self) -> Option<&[Vec<f64>]> {
        self.block_estimates.as_deref()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.meta.seed = Some(seed);
        self
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &n)| {
            assert!(i < n, "bin index {i} out of range {n}");
            acc * n + i
        })
    }

    /// Probability of the bin `(m₁, …, m_g)`.
    pub fn get(&self, index: &[usize]) -> f64 {
        self.probabilities[self.flat_index(index)]
    }

    pub fn std_error(&self, index: &[usize]) -> f64 {
        self.std_errors[self.flat_index(index)]
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    pub fn max_std_error(&self) -> f64 {
        self.std_errors.iter().copied().fold(0.0, f64::max)
    }

    /// Standard error of the sum over all bins. Uses the sub-ensemble
    /// spread when available, otherwise the (conservative) sum of errors.
    pub fn total_std_error(&self) -> f64 {
        match &self.block_estimates {
            Some(blocks) => {
                let sums: Vec<f64> = blocks.iter().map(|b| b.iter().sum()).collect();
                subensemble_error(&sums).map_or(f64::NAN, |e| e.std_error)
            }
            None => self.std_errors.iter().sum(),
        }
    }

    /// One-dimensional marginal over `axis`, summing every other axis.
    pub fn marginal(&self, axis: usize) -> GroupedDistribution {
        assert!(axis < self.shape.len(), "axis {axis} out of range");
        let n = self.shape[axis];
        let stride: usize = self.shape[axis + 1..].iter().product();
        let project = |values: &[f64]| {
            let mut out = vec![0.0; n];
            for (flat, v) in values.iter().enumerate() {
                out[(flat / stride) % n] += v;
            }
            out
        };
        let probabilities = project(&self.probabilities);
        let (std_errors, block_estimates) = match &self.block_estimates {
            Some(blocks) => {
                let projected: Vec<Vec<f64>> = blocks.iter().map(|b| project(b)).collect();
                let se = (0..n)
                    .map(|i| {
                        let col: Vec<f64> = projected.iter().map(|b| b[i]).collect();
                        subensemble_error(&col).map_or(f64::NAN, |e| e.std_error)
                    })
                    .collect();
                (se, Some(projected))
            }
            None => (project(&self.std_errors), None),
        };
        GroupedDistribution {
            shape: vec![n],
            probabilities,
            std_errors,
            block_estimates,
            meta: DistributionMeta {
                sets: vec![self.meta.sets[axis].clone()],
                ..self.meta.clone()
            },
        }
    }

    /// Write the distribution CSV: `#` metadata lines, then a header
    /// `m_1,…,m_g,probability,std_error` and one row per bin.
    pub fn write_csv<W: Write>(&self, writer: W, extra_comments: &[String]) -> Result<()> {
        let sets = GroupedSpec { sets: self.meta.sets.clone() }.to_string();
        let mut comments = vec![
            format!("samples={}", self.meta.samples),
            format!("repeats={}", self.meta.repeats),
            format!("representation={}", self.meta.ordering),
            format!("sets={sets}"),
        ];
        if let Some(seed) = self.meta.seed {
            comments.push(format!("seed={seed}"));
        }
        comments.push(format!("imag_residue={}", self.meta.imag_residue));
        comments.extend(extra_comments.iter().cloned());
        write_table(writer, &self.shape, &self.probabilities, &self.std_errors, &comments)
    }

    pub fn save(&self, path: impl AsRef<Path>, extra_comments: &[String]) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), extra_comments)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let table = read_table(reader)?;
        let get = |key: &str| table.meta.get(key).map(String::as_str);
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)
                .unwrap_or("0")
                .parse()
                .map_err(|_| Error::invalid(format!("bad '{key}' metadata")))
        };
        let ordering = get("representation").unwrap_or("positive-p").parse()?;
        let sets = match get("sets") {
            Some(s) => GroupedSpec::parse(s)?.sets,
            None => table.shape.iter().map(|n| (0..n - 1).collect()).collect(),
        };
        let seed = get("seed").and_then(|s| s.parse().ok());
        let imag_residue = get("imag_residue").and_then(|s| s.parse().ok()).unwrap_or(0.0);
        let meta = DistributionMeta {
            samples: parse_usize("samples")?,
            repeats: parse_usize("repeats")?,
            ordering,
            sets,
            seed,
            imag_residue,
        };
        GroupedDistribution::from_parts(table.shape, table.probabilities, table.std_errors, meta)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub(crate) struct Table {
    pub meta: BTreeMap<String, String>,
    pub shape: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub std_errors: Vec<f64>,
}

pub(crate) fn write_table<W: Write>(
    mut w: W,
    shape: &[usize],
    probabilities: &[f64],
    std_errors: &[f64],
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let header: Vec<String> = (1..=shape.len()).map(|j| format!("m_{j}")).collect();
    writeln!(w, "{},probability,std_error", header.join(","))?;
    let mut index = vec![0usize; shape.len()];
    for (p, se) in probabilities.iter().zip(std_errors) {
        let idx: Vec<String> = index.iter().map(usize::to_string).collect();
        writeln!(w, "{},{p},{se}", idx.join(","))?;
        for axis in (0..shape.len()).rev() {
            index[axis] += 1;
            if index[axis] < shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut meta = BTreeMap::new();
    let mut rank = None;
    let mut rows: Vec<(Vec<usize>, f64, f64, usize)> = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once('=') {
                if !k.contains(char::is_whitespace) {
                    meta.insert(k.to_string(), v.trim().to_string());
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(g) = rank else {
            let g = fields.len().checked_sub(2).filter(|&g| g > 0).ok_or_else(|| {
                Error::parse(line_no, "header needs m_1..m_g, probability, std_error")
            })?;
            let expected: Vec<String> = (1..=g).map(|j| format!("m_{j}")).collect();
            if fields[..g] != expected.iter().map(String::as_str).collect::<Vec<_>>()[..]
                || fields[g] != "probability"
                || fields[g + 1] != "std_error"
            {
                return Err(Error::parse(line_no, format!("unexpected header '{line}'")));
            }
            rank = Some(g);
            continue;
        };
        if fields.len() != g + 2 {
            return Err(Error::parse(
                line_no,
                format!("expected {} columns, found {}", g + 2, fields.len()),
            ));
        }
        let index = fields[..g]
            .iter()
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(line_no, format!("bad bin index: {e}")))?;
        let p: f64 = fields[g]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("bad probability: {e}")))?;
        let se: f64 = fields[g + 1]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("bad std_error: {e}")))?;
        rows.push((index, p, se, line_no));
    }
    let g = rank.ok_or_else(|| Error::parse(0, "missing header"))?;
    let shape: Vec<usize> = (0..g)
        .map(|a| rows.iter().map(|r| r.0[a] + 1).max().unwrap_or(0))
        .collect();
    let bins: usize = shape.iter().product();
    if rows.len() != bins {
        return Err(Error::parse(
            rows.last().map_or(0, |r| r.3),
            format!("{} rows do not fill a grid of shape {shape:?}", rows.len()),
        ));
    }
    let mut probabilities = vec![f64::NAN; bins];
    let mut std_errors = vec![f64::NAN; bins];
    let mut filled = vec![false; bins];
    for (index, p, se, line_no) in rows {
        let flat = index.iter().zip(&shape).fold(0, |acc, (&i, &n)| acc * n + i);
        if std::mem::replace(&mut filled[flat], true) {
            return Err(Error::parse(line_no, format!("duplicate bin {index:?}")));
        }
        probabilities[flat] = p;
        std_errors[flat] = se;
    }
    Ok(Table {
        meta,
        shape,
        probabilities,
        std_errors,
    })
}

/// Precomputed roots `e^{−i k θ_j}` for one set, split into re/im so the
/// per-sample product loop vectorizes.
struct SetPlan {
    modes: Vec<usize>,
    roots_re: Vec<f64>,
    roots_im: Vec<f64>,
}

fn set_plans(spec: &GroupedSpec) -> Vec<SetPlan> {
    spec.sets
        .iter()
        .zip(spec.angles())
        .map(|(set, theta)| {
            let n = set.len() + 1;
            // Reduce k·θ = 2πk/n exactly before taking the trig functions.
            let (roots_re, roots_im) = (0..n)
                .map(|k| {
                    let angle = -2.0 * PI * (k % n) as f64 / n as f64;
                    debug_assert!((angle + k as f64 * theta).abs() < 1e-9);
                    (angle.cos(), angle.sin())
                })
                .unzip();
            SetPlan {
                modes: set.clone(),
                roots_re,
                roots_im,
            }
        })
        .collect()
}

/// Sub-ensemble mean of the Fourier observable, row-major over `k`.
fn fourier_block(block: &Block, plans: &[SetPlan], strides: &[usize], bins: usize) -> Vec<C64> {
    let mut acc_re = vec![0.0; bins];
    let mut acc_im = vec![0.0; bins];
    let mut f_re: Vec<Vec<f64>> = plans.iter().map(|p| vec![0.0; p.roots_re.len()]).collect();
    let mut f_im: Vec<Vec<f64>> = f_re.clone();
    let mut outer_re = Vec::new();
    let mut outer_im = Vec::new();

    for (a, b) in block.alpha.rows().into_iter().zip(block.beta.rows()) {
        for (plan, (fr, fi)) in plans.iter().zip(f_re.iter_mut().zip(f_im.iter_mut())) {
            fr.fill(1.0);
            fi.fill(0.0);
            for &mode in &plan.modes {
                let (p0, p1) = click_estimators(b[mode] * a[mode]);
                for (((xr, xi), &wr), &wi) in fr
                    .iter_mut()
                    .zip(fi.iter_mut())
                    .zip(&plan.roots_re)
                    .zip(&plan.roots_im)
                {
                    let tr = p0.re + p1.re * wr - p1.im * wi;
                    let ti = p0.im + p1.re * wi + p1.im * wr;
                    let (yr, yi) = (*xr, *xi);
                    *xr = yr * tr - yi * ti;
                    *xi = yr * ti + yi * tr;
                }
            }
        }
        match plans.len() {
            1 => {
                for ((ar, ai), (fr, fi)) in acc_re
                    .iter_mut()
                    .zip(acc_im.iter_mut())
                    .zip(f_re[0].iter().zip(&f_im[0]))
                {
                    *ar += fr;
                    *ai += fi;
                }
            }
            2 => {
                let n1 = f_re[1].len();
                for (k0, (&ur, &ui)) in f_re[0].iter().zip(&f_im[0]).enumerate() {
                    let row_re = &mut acc_re[k0 * n1..(k0 + 1) * n1];
                    let row_im = &mut acc_im[k0 * n1..(k0 + 1) * n1];
                    for (((ar, ai), &vr), &vi) in row_re
                        .iter_mut()
                        .zip(row_im.iter_mut())
                        .zip(&f_re[1])
                        .zip(&f_im[1])
                    {
                        *ar += ur * vr - ui * vi;
                        *ai += ur * vi + ui * vr;
                    }
                }
            }
            _ => {
                outer_re.clear();
                outer_im.clear();
                outer_re.extend_from_slice(&f_re[0]);
                outer_im.extend_from_slice(&f_im[0]);
                for (fr, fi) in f_re.iter().zip(&f_im).skip(1) {
                    let mut next_re = Vec::with_capacity(outer_re.len() * fr.len());
                    let mut next_im = Vec::with_capacity(outer_re.len() * fr.len());
                    for (&ur, &ui) in outer_re.iter().zip(&outer_im) {
                        for (&vr, &vi) in fr.iter().zip(fi) {
                            next_re.push(ur * vr - ui * vi);
                            next_im.push(ur * vi + ui * vr);
                        }
                    }
                    outer_re = next_re;
                    outer_im = next_im;
                }
                for i in 0..bins {
                    acc_re[i] += outer_re[i];
                    acc_im[i] += outer_im[i];
                }
            }
        }
    }
    debug_assert_eq!(strides.last(), Some(&1));
    let norm = block.samples() as f64;
    acc_re
        .into_iter()
        .zip(acc_im)
        .map(|(r, i)| C64::new(r / norm, i / norm))
        .collect()
}

/// Multi-dimensional inverse DFT,
/// `G(m) = Π(1/n_a) Σ_k G̃(k) exp(+2πi Σ_a k_a m_a / n_a)`, row-major data.
pub fn inverse_dft(data: &[C64], shape: &[usize]) -> Vec<C64> {
    let total: usize = shape.iter().product();
    assert_eq!(data.len(), total, "data does not match shape");
    let mut out = data.to_vec();
    let mut stride = total;
    for &n in shape {
        stride /= n;
        let twiddle: Vec<C64> = (0..n)
            .map(|t| C64::from_polar(1.0, 2.0 * PI * t as f64 / n as f64))
            .collect();
        let mut line = vec![C64::new(0.0, 0.0); n];
        for outer in 0..total / (n * stride) {
            for inner in 0..stride {
                let base = outer * n * stride + inner;
                for (m, slot) in line.iter_mut().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..n {
                        acc += out[base + k * stride] * twiddle[(k * m) % n];
                    }
                    *slot = acc / n as f64;
                }
                for (m, v) in line.iter().enumerate() {
                    out[base + m * stride] = *v;
                }
            }
        }
    }
    out
}

fn check_source<S: BlockSource>(src: &S, spec: &GroupedSpec, operation: &'static str) -> Result<()> {
    if src.ordering() != Ordering::PositiveP {
        return Err(Error::WrongOrdering {
            operation,
            required: "positive-P (normally ordered)",
        });
    }
    spec.check_modes(src.modes())
}

fn meta_for<S: BlockSource>(src: &S, spec: &GroupedSpec) -> DistributionMeta {
    DistributionMeta {
        samples: src.layout().samples(),
        repeats: src.layout().repeats(),
        ordering: src.ordering(),
        sets: spec.sets.clone(),
        seed: None,
        imag_residue: 0.0,
    }
}

/// Grouped count distribution by the Fourier route.
pub fn grouped_probability<S: BlockSource>(src: &S, spec: &GroupedSpec) -> Result<GroupedDistribution> {
    check_source(src, spec, "grouped_probability")?;
    let shape = spec.shape();
    let bins: usize = shape.iter().product();
    let plans = set_plans(spec);
    let strides = spec.strides();
    let per_block = src.map_blocks(|block| {
        inverse_dft(&fourier_block(block, &plans, &strides, bins), &shape)
    });
    GroupedDistribution::from_blocks(per_block, shape.clone(), meta_for(src, spec))
}

fn enumerate_patterns(detectors: &[(C64, C64, usize)], weight: C64, index: usize, acc: &mut [C64]) {
    match detectors.split_first() {
        None => acc[index] += weight,
        Some((&(p0, p1, stride), rest)) => {
            enumerate_patterns(rest, weight * p0, index, acc);
            enumerate_patterns(rest, weight * p1, index + stride, acc);
        }
    }
}

/// Same estimand as [`grouped_probability`], summed over every click pattern
/// explicitly. Limited to [`BRUTEFORCE_MAX_DETECTORS`] detectors.
pub fn grouped_probability_bruteforce<S: BlockSource>(
    src: &S,
    spec: &GroupedSpec,
) -> Result<GroupedDistribution> {
    check_source(src, spec, "grouped_probability_bruteforce")?;
    if spec.order() > BRUTEFORCE_MAX_DETECTORS {
        return Err(Error::TooManyDetectors(spec.order(), BRUTEFORCE_MAX_DETECTORS));
    }
    let shape = spec.shape();
    let bins: usize = shape.iter().product();
    let strides = spec.strides();
    let per_block = src.map_blocks(|block| {
        let mut acc = vec![C64::new(0.0, 0.0); bins];
        let mut detectors = Vec::with_capacity(spec.order());
        for (a, b) in block.alpha.rows().into_iter().zip(block.beta.rows()) {
            detectors.clear();
            for (set, &stride) in spec.sets.iter().zip(&strides) {
                for &mode in set {
                    let (p0, p1) = click_estimators(b[mode] * a[mode]);
                    detectors.push((p0, p1, stride));
                }
            }
            enumerate_patterns(&detectors, C64::new(1.0, 0.0), 0, &mut acc);
        }
        let norm = block.samples() as f64;
        acc.into_iter().map(|v| v / norm).collect::<Vec<_>>()
    });
    GroupedDistribution::from_blocks(per_block, shape.clone(), meta_for(src, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ensemble, SubEnsembleLayout};
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn ensemble_from_n(n_values: &[C64], repeats: usize) -> Ensemble {
        // α = n, β = 1 gives the phase-space photon number n' = n exactly.
        let chunk = n_values.len() / repeats;
        let alpha = Array2::from_shape_vec((n_values.len(), 1), n_values.to_vec()).unwrap();
        let beta = Array2::from_elem((n_values.len(), 1), C64::new(1.0, 0.0));
        Ensemble::from_samples(alpha, beta, Ordering::PositiveP, SubEnsembleLayout::new(repeats, chunk).unwrap())
            .unwrap()
    }

    pub(crate) fn random_ensemble(seed: u64, samples: usize, modes: usize) -> Ensemble {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let alpha = Array2::from_shape_simple_fn((samples, modes), &mut draw);
        let beta = Array2::from_shape_simple_fn((samples, modes), &mut draw);
        Ensemble::from_samples(alpha, beta, Ordering::PositiveP, SubEnsembleLayout::new(4, samples / 4).unwrap())
            .unwrap()
    }

    #[test]
    fn click_estimator_examples() {
        assert_eq!(click_estimators(C64::new(0.0, 0.0)), (C64::new(1.0, 0.0), C64::new(0.0, 0.0)));
        let (p0, p1) = click_estimators(C64::new(2f64.ln(), 0.0));
        assert_relative_eq!(p0.re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(p1.re, 0.5, epsilon = 1e-15);
        let (p0, _) = click_estimators(C64::new(1.0, PI));
        assert_relative_eq!(p0.re, -(-1f64).exp(), epsilon = 1e-15);
        assert!(p0.im.abs() < 1e-15);
    }

    #[test]
    fn grouping_validation_and_parsing() {
        assert!(GroupedSpec::new(vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(GroupedSpec::new(vec![vec![]]).is_err());
        let spec = GroupedSpec::parse("0-3; 5,7").unwrap();
        assert_eq!(spec.sets(), &[vec![0, 1, 2, 3], vec![5, 7]]);
        assert_eq!(spec.shape(), vec![5, 3]);
        assert_eq!(spec.to_string(), "0-3;5,7");
        assert_relative_eq!(spec.angles()[0], 2.0 * PI / 5.0);
        assert!(GroupedSpec::parse("3-1").is_err());
        assert_eq!(GroupedSpec::contiguous(5, 2).unwrap().sets(), &[vec![0, 1, 2], vec![3, 4]]);

        let ens = random_ensemble(1, 8, 3);
        assert!(matches!(
            grouped_probability(&ens, &GroupedSpec::parse("0-3").unwrap()),
            Err(Error::Grouping(_))
        ));
    }

    #[test]
    fn vacuum_never_clicks() {
        let ens = ensemble_from_n(&[C64::new(0.0, 0.0); 10], 2);
        let g = grouped_probability(&ens, &GroupedSpec::total(1).unwrap()).unwrap();
        assert_relative_eq!(g.get(&[0]), 1.0, epsilon = 1e-15);
        assert!(g.get(&[1]).abs() < 1e-15);
    }

    #[test]
    fn half_click_probability() {
        let ens = ensemble_from_n(&[C64::new(2f64.ln(), 0.0); 10], 2);
        let spec = GroupedSpec::total(1).unwrap();
        let g = grouped_probability(&ens, &spec).unwrap();
        assert_relative_eq!(g.get(&[0]), 0.5, epsilon = 1e-14);
        assert_relative_eq!(g.get(&[1]), 0.5, epsilon = 1e-14);
        let b = grouped_probability_bruteforce(&ens, &spec).unwrap();
        for (x, y) in g.probabilities().iter().zip(b.probabilities()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn wigner_ensembles_rejected() {
        let alpha = Array2::from_elem((4, 1), C64::new(0.1, 0.0));
        let ens = Ensemble::from_samples(
            alpha.clone(),
            alpha,
            Ordering::Wigner,
            SubEnsembleLayout::new(2, 2).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            grouped_probability(&ens, &GroupedSpec::total(1).unwrap()),
            Err(Error::WrongOrdering { .. })
        ));
    }

    #[test]
    fn two_sets_of_four_match_enumeration() {
        let ens = random_ensemble(3, 100, 8);
        let spec = GroupedSpec::contiguous(8, 2).unwrap();
        let g = grouped_probability(&ens, &spec).unwrap();
        let b = grouped_probability_bruteforce(&ens, &spec).unwrap();
        let worst = g
            .probabilities()
            .iter()
            .zip(b.probabilities())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn bruteforce_cap() {
        let ens = random_ensemble(3, 8, 17);
        assert!(matches!(
            grouped_probability_bruteforce(&ens, &GroupedSpec::total(17).unwrap()),
            Err(Error::TooManyDetectors(17, 16))
        ));
    }

    #[test]
    fn marginal_of_two_sets_equals_one_set() {
        let ens = random_ensemble(5, 40, 6);
        let two = grouped_probability(&ens, &GroupedSpec::parse("0-2;3-5").unwrap()).unwrap();
        let one = grouped_probability(&ens, &GroupedSpec::parse("0-2").unwrap()).unwrap();
        let marg = two.marginal(0);
        for (x, y) in marg.probabilities().iter().zip(one.probabilities()) {
            assert!((x - y).abs() <= 1e-10);
        }
        for (x, y) in marg.std_errors().iter().zip(one.std_errors()) {
            assert!((x - y).abs() <= 1e-10);
        }
        let marg1 = two.marginal(1);
        assert_eq!(marg1.shape(), &[4]);
        assert_eq!(marg1.meta().sets, vec![vec![3, 4, 5]]);
    }

    #[test]
    fn three_sets_use_general_outer_product() {
        let ens = random_ensemble(9, 20, 6);
        let spec = GroupedSpec::parse("0,1;2,3;4,5").unwrap();
        let g = grouped_probability(&ens, &spec).unwrap();
        let b = grouped_probability_bruteforce(&ens, &spec).unwrap();
        assert_eq!(g.shape(), &[3, 3, 3]);
        for (x, y) in g.probabilities().iter().zip(b.probabilities()) {
            assert!((x - y).abs() <= 1e-10);
        }
        assert!((g.total() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn inverse_dft_of_delta_spectrum() {
        // A flat spectrum inverts to a unit spike at m = 0.
        let data = vec![C64::new(1.0, 0.0); 12];
        let out = inverse_dft(&data, &[3, 4]);
        assert_relative_eq!(out[0].re, 1.0, epsilon = 1e-15);
        assert!(out[1..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn csv_round_trip() {
        let ens = random_ensemble(2, 20, 4);
        let g = grouped_probability(&ens, &GroupedSpec::parse("0,1;2,3").unwrap())
            .unwrap()
            .with_seed(99);
        let mut buf = Vec::new();
        g.write_csv(&mut buf, &["note=hello".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("m_1,m_2,probability,std_error"));
        assert!(text.contains("# seed=99"));
        let back = GroupedDistribution::read_csv(&buf[..]).unwrap();
        assert_eq!(back.shape(), g.shape());
        assert_eq!(back.probabilities(), g.probabilities());
        assert_eq!(back.std_errors(), g.std_errors());
        assert_eq!(back.meta(), g.meta());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "# samples=4\nm_1,probability,std_error\n0,0.5,0.1\n1,zero,0.1\n";
        match GroupedDistribution::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let text = "m_1,probability,std_error\n0,0.5\n";
        assert!(matches!(
            GroupedDistribution::read_csv(text.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn click_weights_are_complete(re in -5.0f64..5.0, im in -5.0f64..5.0) {
            let (p0, p1) = click_estimators(C64::new(re, im));
            let scale = p0.norm().max(1.0);
            prop_assert!((p0 + p1 - C64::new(1.0, 0.0)).norm() <= 4.0 * f64::EPSILON * scale);
        }

        #[test]
        fn fourier_route_matches_enumeration(seed in any::<u64>(), modes in 1usize..=12, cut in 0usize..12, two in any::<bool>()) {
            let ens = random_ensemble(seed, 16, modes);
            let spec = if two && modes > 1 {
                let cut = 1 + cut % (modes - 1);
                GroupedSpec::new(vec![(0..cut).collect(), (cut..modes).collect()]).unwrap()
            } else {
                GroupedSpec::total(modes).unwrap()
            };
            let g = grouped_probability(&ens, &spec).unwrap();
            let b = grouped_probability_bruteforce(&ens, &spec).unwrap();
            for (x, y) in g.probabilities().iter().zip(b.probabilities()) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
            // Completeness holds sample by sample, before any Monte Carlo error.
            prop_assert!((g.total() - 1.0).abs() <= 1e-10);
        }
    }
}
