//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Exits successfully after reporting, so a statistically marginal
//! criterion does not break `cargo test`. Set `ACCEPTANCE_STRICT=1` to exit
//! with failure when any criterion fails. Pass criterion numbers as
//! arguments to run a subset.

use std::f64::consts::FRAC_1_SQRT_2;
use std::process::ExitCode;
use std::time::Instant;

use phasenet::counting::{grouped_probability, grouped_probability_bruteforce, GroupedSpec};
use phasenet::entanglement::{
    analytic_gains, chain_setup, empirical_gains, mpartite_prediction, mpartite_thresholds,
    mpartite_witness, steering_witness,
};
use phasenet::model::{ModeSpec, Ordering, SeededStream, SubEnsembleLayout};
use phasenet::network::haar_unitary;
use phasenet::pipeline::Experiment;
use phasenet::sampler::{estimate_moments, InputSpec};
use phasenet::stats::{chi_square, exact_independent_click_total, exact_thermal_total};
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn layout(repeats: usize, chunk: usize) -> SubEnsembleLayout {
    SubEnsembleLayout::new(repeats, chunk).unwrap()
}

fn dft_matches_enumeration() -> Outcome {
    let start = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        let modes = rng.random_range(1..=12);
        let inputs = (0..modes)
            .map(|_| match rng.random_range(0..3) {
                0 => ModeSpec::squeezed(rng.random_range(0.1..1.5), rng.random_range(0.0..0.5)).unwrap(),
                1 => ModeSpec::thermal(rng.random_range(0.1..2.0)).unwrap(),
                _ => ModeSpec::vacuum(),
            })
            .collect();
        let input = InputSpec::new(inputs, Ordering::PositiveP).unwrap();
        let t = haar_unitary(modes, SeededStream::new(case, 0)).unwrap();
        let exp = Experiment::new(input, Some(t), layout(4, 25), case).unwrap();
        let spec = if modes > 1 && rng.random_bool(0.5) {
            let cut = rng.random_range(1..modes);
            let mut order: Vec<usize> = (0..modes).collect();
            for i in (1..modes).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            GroupedSpec::new(vec![order[..cut].to_vec(), order[cut..].to_vec()]).unwrap()
        } else {
            GroupedSpec::total(modes).unwrap()
        };
        let dft = grouped_probability(&exp, &spec).unwrap();
        let brute = grouped_probability_bruteforce(&exp, &spec).unwrap();
        for (a, b) in dft.probabilities().iter().zip(brute.probabilities()) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs <= 10.0,
        format!("max |DFT - enumeration| = {worst:.2e} over 50 ensembles in {secs:.1} s"),
    )
}

fn chi2_runs(label: &str, time_limit: Option<f64>, run: impl Fn(u64) -> (f64, usize, f64)) -> Outcome {
    let mut inside = 0;
    let mut lines = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in 1..=10u64 {
        let (chi2k, k, secs) = run(seed);
        slowest = slowest.max(secs);
        if (0.4..=1.6).contains(&chi2k) {
            inside += 1;
        }
        lines.push(format!("{chi2k:.2}(k={k})"));
    }
    let fast_enough = time_limit.is_none_or(|limit| slowest <= limit);
    outcome(
        inside >= 8 && fast_enough,
        format!(
            "{label}: {inside}/10 runs with chi2/k in [0.4, 1.6]; slowest run {slowest:.1} s; [{}]",
            lines.join(" ")
        ),
    )
}

fn thermal_validation() -> Outcome {
    let modes = 40;
    let reference = exact_thermal_total(modes, 1.0).unwrap();
    chi2_runs("M=40 thermal n=1, Haar, 120x10^4", Some(50.0), |seed| {
        let start = Instant::now();
        let input = InputSpec::uniform(ModeSpec::thermal(1.0).unwrap(), modes, Ordering::PositiveP).unwrap();
        let t = haar_unitary(modes, SeededStream::new(seed, 0)).unwrap();
        let exp = Experiment::new(input, Some(t), layout(120, 10_000), seed).unwrap();
        let dist = grouped_probability(&exp, &GroupedSpec::total(modes).unwrap()).unwrap();
        let report = chi_square(&dist, &reference).unwrap();
        (report.chi2_per_k, report.k_valid, start.elapsed().as_secs_f64())
    })
}

fn squeezed_validation() -> Outcome {
    let modes = 20;
    let inputs: Vec<ModeSpec> = (0..modes)
        .map(|j| ModeSpec::squeezed(0.3 + 0.7 * j as f64 / (modes - 1) as f64, 0.0).unwrap())
        .collect();
    let reference = exact_independent_click_total(&inputs);
    chi2_runs("M=20 squeezed r in [0.3, 1.0], identity, 120x10^4", None, |seed| {
        let start = Instant::now();
        let input = InputSpec::new(inputs.clone(), Ordering::PositiveP).unwrap();
        let exp = Experiment::new(input, None, layout(120, 10_000), seed).unwrap();
        let dist = grouped_probability(&exp, &GroupedSpec::total(modes).unwrap()).unwrap();
        let report = chi_square(&dist, &reference).unwrap();
        (report.chi2_per_k, report.k_valid, start.elapsed().as_secs_f64())
    })
}

fn two_dimensional_binning() -> Outcome {
    let modes = 20;
    let input = InputSpec::uniform(ModeSpec::thermal(1.0).unwrap(), modes, Ordering::PositiveP).unwrap();
    let t = haar_unitary(modes, SeededStream::new(4, 0)).unwrap();
    let run = |spec: &str, seed: u64| {
        let exp = Experiment::new(input.clone(), Some(t.clone()), layout(120, 10_000), seed).unwrap();
        grouped_probability(&exp, &GroupedSpec::parse(spec).unwrap()).unwrap()
    };
    let joint = run("0-9;10-19", 41);
    let total_dev = (joint.total() - 1.0).abs();
    let scale = joint.max_std_error();
    let sums_ok = total_dev <= 10.0 * scale;
    let mut worst_z: f64 = 0.0;
    for (axis, (set, seed)) in [("0-9", 42), ("10-19", 43)].into_iter().enumerate() {
        let marginal = joint.marginal(axis);
        let single = run(set, seed);
        for i in 0..marginal.probabilities().len() {
            let se = marginal.std_errors()[i].hypot(single.std_errors()[i]);
            let d = (marginal.probabilities()[i] - single.probabilities()[i]).abs();
            if d > 0.0 {
                worst_z = worst_z.max(d / se);
            }
        }
    }
    outcome(
        sums_ok && worst_z <= 5.0,
        format!(
            "10/10 grouping: |sum - 1| = {total_dev:.1e} (10 x max bin SE = {:.1e}); worst marginal z = {worst_z:.2}",
            10.0 * scale
        ),
    )
}

fn moment_fidelity() -> Outcome {
    let mut worst_z: f64 = 0.0;
    let mut cases = 0;
    for ordering in [Ordering::PositiveP, Ordering::Wigner] {
        for r in [0.1, 0.5, 1.0, 3.0] {
            for eps in [0.0, 0.1] {
                let spec = ModeSpec::squeezed(r, eps).unwrap();
                let input = InputSpec::new(vec![spec], ordering).unwrap();
                let exp = Experiment::new(input, None, layout(100, 10_000), 5 + cases).unwrap();
                let est = estimate_moments(&exp).unwrap()[0];
                let exact = phasenet::model::moments_from_spec(&spec);
                worst_z = worst_z.max(est.n.z_score(exact.n)).max(est.m.z_score(exact.m_tilde));
                cases += 1;
            }
        }
    }
    outcome(
        worst_z <= 5.0,
        format!("{cases} cases at 10^6 samples: worst |estimate - exact| = {worst_z:.2} SE"),
    )
}

fn wigner_experiment(modes: usize, r: (f64, f64), ordering: Ordering, shape: (usize, usize), seed: u64) -> Experiment {
    let (input, t) = chain_setup(modes, r.0, r.1, None, ordering).unwrap();
    Experiment::new(input, Some(t), layout(shape.0, shape.1), seed).unwrap()
}

fn multipartite_witnesses() -> Outcome {
    let target = mpartite_prediction(3.0, 3.0).product;
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, modes) in [2usize, 10, 100, 500].into_iter().enumerate() {
        let exp = wigner_experiment(modes, (3.0, 3.0), Ordering::Wigner, (120, 1000), 60 + i as u64);
        let report = mpartite_witness(&exp, modes, Some((3.0, 3.0))).unwrap();
        let p = report.product;
        let expected_pass = modes <= 403;
        let good = p.agrees_with(target, 5.0)
            && (1e-6..=1e-4).contains(&p.std_error)
            && report.product_passes() == expected_pass;
        ok &= good;
        parts.push(format!(
            "M={modes}: {:.5e} +/- {:.1e} vs {:.4e} ({})",
            p.value,
            p.std_error,
            report.product_threshold,
            if report.product_passes() { "witness holds" } else { "witness not confirmed" }
        ));
    }
    // Crossover of the exact product against 2/(M-1).
    let below = |m: usize| target < mpartite_thresholds(m).0;
    let crossover_ok = below(404) && !below(405) && (2..=404).all(below);
    ok &= crossover_ok;
    parts.push(format!("exact crossover between M=404 and M=405: {crossover_ok}"));
    outcome(ok, format!("r1=r2=3 Wigner 120x1000; {}", parts.join("; ")))
}

fn se_ratio() -> Outcome {
    let modes = 10;
    let w = mpartite_witness(
        &wigner_experiment(modes, (3.0, 3.0), Ordering::Wigner, (120, 1000), 70),
        modes,
        None,
    )
    .unwrap();
    let p = mpartite_witness(
        &wigner_experiment(modes, (3.0, 3.0), Ordering::PositiveP, (1200, 2000), 71),
        modes,
        None,
    )
    .unwrap();
    let ratio = p.sum.std_error / w.sum.std_error;
    let pp_se = p.sum.std_error;
    let combined = w.sum.std_error.hypot(p.sum.std_error);
    let consistent = (p.sum.value - w.sum.value).abs() <= 5.0 * combined;
    outcome(
        (30.0..=300.0).contains(&ratio) && (1e-3..=4e-3).contains(&pp_se) && consistent,
        format!(
            "M=10 sum statistic: positive-P {:.3e} +/- {pp_se:.2e} (1200x2000), Wigner {:.4e} +/- {:.2e} (120x1000); SE ratio {ratio:.1}; product SEs {:.2e} / {:.2e}",
            p.sum.value, w.sum.value, w.sum.std_error, p.product.std_error, w.product.std_error
        ),
    )
}

fn steering_closed_form() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (r1, r2)) in [(1.0, 1.0), (0.0, 1.0), (2.0, 0.5)].into_iter().enumerate() {
        let exp = wigner_experiment(2, (r1, r2), Ordering::Wigner, (120, 1000), 80 + i as u64);
        let report = steering_witness(&exp, r1, r2, FRAC_1_SQRT_2, None).unwrap();
        let s = report.product;
        let exact = 1.0 / (r1 + r2).cosh();
        let (gx, gp) = empirical_gains(&exp).unwrap();
        let (ax, ap) = analytic_gains(r1, r2, FRAC_1_SQRT_2);
        let good = s.agrees_with(exact, 5.0) && gx.agrees_with(ax, 5.0) && gp.agrees_with(ap, 5.0);
        ok &= good;
        parts.push(format!(
            "({r1},{r2}): S={:.5} vs {exact:.5} ({:.1} SE), gains z=({:.1},{:.1})",
            s.value,
            s.z_score(exact),
            gx.z_score(ax),
            gp.z_score(ap)
        ));
    }
    outcome(ok, parts.join("; "))
}

/// `1 − P(0)` for a squeezed vacuum, summing its even Fock populations.
fn fock_click_probability(r: f64, cutoff: usize) -> f64 {
    let t2 = r.tanh().powi(2);
    let mut term = 1.0 / r.cosh();
    let mut nonvacuum = 0.0;
    for k in 1..=cutoff {
        // P(2k)/P(2k−2) = tanh²r · (2k−1) / (2k)
        term *= t2 * (2 * k - 1) as f64 / (2 * k) as f64;
        nonvacuum += term;
    }
    nonvacuum
}

fn click_oracle() -> Outcome {
    let oracle = fock_click_probability(0.5, 60);
    let input = InputSpec::new(vec![ModeSpec::squeezed(0.5, 0.0).unwrap()], Ordering::PositiveP).unwrap();
    let exp = Experiment::new(input, None, layout(100, 10_000), 90).unwrap();
    let dist = grouped_probability(&exp, &GroupedSpec::total(1).unwrap()).unwrap();
    let p = phasenet::stats::Estimate::new(dist.get(&[1]), dist.std_error(&[1]));
    outcome(
        p.agrees_with(oracle, 5.0),
        format!(
            "P(click | r=0.5) = {:.5} +/- {:.1e}, Fock sum {oracle:.10} ({:.2} SE)",
            p.value,
            p.std_error,
            p.z_score(oracle)
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("DFT/enumeration identity", dft_matches_enumeration),
        ("thermal chi-square validation", thermal_validation),
        ("squeezed chi-square validation", squeezed_validation),
        ("two-dimensional binning", two_dimensional_binning),
        ("input-moment fidelity", moment_fidelity),
        ("multipartite witnesses", multipartite_witnesses),
        ("positive-P vs Wigner SE ratio", se_ratio),
        ("steering closed form", steering_closed_form),
        ("click-probability oracle", click_oracle),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{status}] criterion {id} {name} ({:.1} s): {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("{failed} criterion(s) failed");
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed > 0 && strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
