//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::time::Instant;

use cwlm::cli::load_setup;
use cwlm::diffusion::{evolve_field, marginal, stable_step, CommutingSolution, EvolveOptions, OutputField};
use cwlm::fcs::{cumulants, default_chi_grid, output_distribution_fcs, Dynamics};
use cwlm::model::{
    minimum_decoherence_margin, validate_setup, LindbladTerm, MeasurementSetup, NoiseData, CHECK_BIG_C,
    CHECK_DETECTOR_OPERATOR, CHECK_MIN_DECOHERENCE,
};
use cwlm::numerics::distribution::gaussian;
use cwlm::numerics::{pauli, ComplexMatrix, Distribution, GridSpec, RealMatrix};
use cwlm::separation::separate;
use cwlm::stochastic::{
    make_oscillator_aux, make_qubit_aux, run_ensemble, verify_relations, AuxKind, AuxiliarySystem, ConditionalMap,
    EnsembleConfig, Histogram,
};
use cwlm::test_support::{random_density_matrix, random_valid_setup};
use cwlm::Result;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn one(x: f64) -> RealMatrix {
    RealMatrix::from_rows(&[&[x]])
}

fn plus_state() -> ComplexMatrix {
    ComplexMatrix::from_real_rows(&[&[0.5, 0.5], &[0.5, 0.5]])
}

/// `∫_a^b` of the unit normal density, composite Simpson.
fn normal_mass(a: f64, b: f64) -> f64 {
    let n = 64;
    let h = (b - a) / n as f64;
    let mut acc = gaussian(a) + gaussian(b);
    for k in 1..n {
        acc += gaussian(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Pearson χ² of a 1-D histogram against bin masses; bins expecting fewer than
/// five counts are pooled with everything outside the grid.
fn chi_square(hist: &Histogram, bin_mass: impl Fn(f64, f64) -> f64) -> (f64, usize) {
    let axis = &hist.grid.axes[0];
    let n = hist.total() as f64;
    let (mut chi2, mut kept, mut expected_kept, mut observed_rest) = (0.0, 0usize, 0.0, hist.overflow as f64);
    for (k, &count) in hist.counts.iter().enumerate() {
        let x = axis.node(k);
        let expected = n * bin_mass(x - 0.5 * axis.step, x + 0.5 * axis.step);
        if expected >= 5.0 {
            chi2 += (count as f64 - expected).powi(2) / expected;
            kept += 1;
            expected_kept += expected;
        } else {
            observed_rest += count as f64;
        }
    }
    let expected_rest = n - expected_kept;
    if expected_rest >= 5.0 {
        chi2 += (observed_rest - expected_rest).powi(2) / expected_rest;
        kept += 1;
    }
    (chi2, kept - 1)
}

/// L1 between a histogram and a reference density at the bin centres, and the
/// multinomial spread `Σ_k √(q_k(1 − q_k)/n)` of that distance.
fn histogram_l1(hist: &Histogram, reference: &Distribution) -> (f64, f64) {
    let n = hist.total() as f64;
    let h = hist.grid.cell_volume();
    let mut l1 = hist.overflow as f64 / n;
    let mut sigma = 0.0;
    for (k, &count) in hist.counts.iter().enumerate() {
        let q = (reference.density[k] * h).max(0.0);
        l1 += (count as f64 / n - q).abs();
        sigma += (q * (1.0 - q) / n).sqrt();
    }
    (l1, sigma)
}

fn criterion_relations() -> Result<Verdict> {
    let start = Instant::now();
    let osc = verify_relations(&make_oscillator_aux(4)?);
    let qubit = verify_relations(&make_qubit_aux());
    let secs = start.elapsed().as_secs_f64();
    let worst = osc.max_deviation.max(qubit.max_deviation);
    Ok(Verdict::new(
        worst <= 1e-12 && osc.entries.len() == 9 && qubit.entries.len() == 9 && secs < 1.0,
        format!("max deviation {worst:.1e} (oscillator n_max=4, qubit), {secs:.3} s"),
    ))
}

fn criterion_free_detector() -> Result<Verdict> {
    let setup = MeasurementSetup::new(ComplexMatrix::zeros(1, 1), vec![], NoiseData::free(one(1.0))?, "free")?;
    let rho0 = ComplexMatrix::identity(1);
    let t = 1.0;
    let s_spec = GridSpec::new(8.0, 801);
    let exact = Distribution::from_fn(s_spec.grid(1)?, |s| gaussian(s[0]));

    let fcs = output_distribution_fcs(&setup, &rho0, t, default_chi_grid(&setup, t)?, s_spec)?.distribution;
    let l1_fcs = fcs.l1_distance(&exact)?;

    let dt = stable_step(&setup, s_spec, t)?;
    let options = EvolveOptions { initial_width: 1.0 };
    let dd = marginal(&evolve_field(&setup, &rho0, t, dt, s_spec, options)?.field);
    let l1_dd = dd.l1_distance(&exact)?;

    let sep = separate(&setup)?;
    let mut cfg = EnsembleConfig::new(t, 0.05, 100_000, AuxKind::Oscillator, 2);
    cfg.histogram = Some(GridSpec::new(4.0, 41));
    let res = run_ensemble(&sep, &rho0, &cfg)?;
    let (chi2, dof) = chi_square(res.histogram.as_ref().expect("histogram"), normal_mass);
    let bound = dof as f64 + 3.0 * (2.0 * dof as f64).sqrt();
    Ok(Verdict::new(
        l1_fcs <= 1e-3 && l1_dd <= 1e-3 && chi2 <= bound,
        format!("L1 fcs {l1_fcs:.2e}, L1 diffusion {l1_dd:.2e}, trajectories χ² {chi2:.1} ≤ {bound:.1} (dof {dof})"),
    ))
}

fn criterion_three_way() -> Result<Verdict> {
    let loaded = load_setup("qubit_sz")?;
    let setup = &loaded.setup;
    let rho0 = plus_state();
    let t = 2.0;
    let chi = default_chi_grid(setup, t)?;

    let fine = GridSpec::new(12.0, 481);
    let fcs_fine = output_distribution_fcs(setup, &rho0, t, chi, fine)?.distribution;
    let dt = stable_step(setup, fine, t)?;
    let dd = marginal(&evolve_field(setup, &rho0, t, dt, fine, EvolveOptions { initial_width: 1.0 })?.field);
    let l1_dd = fcs_fine.l1_distance(&dd)?;

    let coarse = GridSpec::new(12.0, 241);
    let fcs_coarse = output_distribution_fcs(setup, &rho0, t, chi, coarse)?.distribution;
    let sep = separate(setup)?;
    let mut cfg = EnsembleConfig::new(t, 0.02, 100_000, AuxKind::Oscillator, 3);
    cfg.histogram = Some(coarse);
    let res = run_ensemble(&sep, &rho0, &cfg)?;
    let (l1_traj, sigma) = histogram_l1(res.histogram.as_ref().expect("histogram"), &fcs_coarse);
    Ok(Verdict::new(
        l1_dd <= 2e-2 && l1_traj <= 3.0 * sigma,
        format!("L1(fcs, diffusion) {l1_dd:.2e}, L1(fcs, trajectories) {l1_traj:.3e} ≤ 3σ = {:.3e}", 3.0 * sigma),
    ))
}

fn diagonal_l1(a: &OutputField, b: &OutputField) -> f64 {
    (0..a.dim)
        .map(|k| {
            let diff: Vec<f64> = a.component(k, k).iter().zip(b.component(k, k)).map(|(x, y)| (x - y).norm()).collect();
            a.grid.integrate(&diff)
        })
        .sum()
}

fn criterion_commuting_oracle() -> Result<Verdict> {
    let loaded = load_setup("qubit_sz")?;
    let setup = &loaded.setup;
    let rho0 = plus_state();
    let s_spec = GridSpec::new(8.0, 801);
    let options = EvolveOptions { initial_width: 1.0 };
    let solution = CommutingSolution::new(setup, &rho0)?;
    let run = |t: f64| -> Result<OutputField> {
        let dt = stable_step(setup, s_spec, t)?;
        Ok(evolve_field(setup, &rho0, t, dt, s_spec, options)?.field)
    };
    let at_one = run(1.0)?;
    let exact = solution.field(1.0, &s_spec.grid(1)?)?;
    let l1 = diagonal_l1(&at_one, &exact);

    let at_half = run(0.5)?;
    let coherence = |f: &OutputField| f.integrated()[(0, 1)].norm();
    let rate = (coherence(&at_half) / coherence(&at_one)).ln() / 0.5;
    // ½ S_αβ (O_α − O′_α)(O_β − O′_β) with S_op = 1 and eigenvalues ±1
    let s_op = setup.noise.s_op[(0, 0)];
    let gamma_d = 0.5 * s_op * (1.0 - (-1.0f64)).powi(2);
    let rel = (rate - gamma_d).abs() / gamma_d;
    Ok(Verdict::new(
        l1 <= 1e-3 && rel <= 0.05,
        format!("diagonal L1 {l1:.2e}, coherence decay {rate:.5} vs Γ_d {gamma_d} ({:.3}%)", 100.0 * rel),
    ))
}

fn criterion_bimodal() -> Result<Verdict> {
    let loaded = load_setup("qubit_sz")?;
    let setup = &loaded.setup;
    let p = 0.7;
    let rho0 = ComplexMatrix::real_diagonal(&[p, 1.0 - p]);
    let t = 10.0;
    let a = setup.noise.a_cross[(0, 0)];
    let s_spec = GridSpec::new(25.0, 501);
    let h = s_spec.axis()?.step;
    let fcs = output_distribution_fcs(setup, &rho0, t, default_chi_grid(setup, t)?, s_spec)?.distribution;
    let upper = fcs.mass_where(|s| s[0] > 0.0);
    let lower = fcs.mass_where(|s| s[0] < 0.0);
    let c_up = fcs.centroid_where(|s| s[0] > 0.0)[0];
    let c_down = fcs.centroid_where(|s| s[0] < 0.0)[0];
    let fcs_ok = (upper - p).abs() <= 0.01
        && (lower - (1.0 - p)).abs() <= 0.01
        && (c_up - a * t).abs() <= h
        && (c_down + a * t).abs() <= h;

    let sep = separate(setup)?;
    let mut cfg = EnsembleConfig::new(t, 0.02, 20_000, AuxKind::Qubit, 5);
    cfg.keep_outputs = true;
    let res = run_ensemble(&sep, &rho0, &cfg)?;
    let n = res.outputs.len() as f64;
    let weight = |s: f64| if s > 0.0 { 1.0 } else if s == 0.0 { 0.5 } else { 0.0 };
    let frac = res.outputs.iter().map(|s| weight(s[0])).sum::<f64>() / n;
    let sigma = (p * (1.0 - p) / n).sqrt();
    let traj_ok = (frac - p).abs() <= 3.0 * sigma;
    Ok(Verdict::new(
        fcs_ok && traj_ok,
        format!(
            "fcs lobes {upper:.4}/{lower:.4} at {c_up:.3}/{c_down:.3} (cell {h}), trajectory upper mass {frac:.4} (3σ = {:.4})",
            3.0 * sigma
        ),
    ))
}

fn step_generator(map: &ConditionalMap, r: &ComplexMatrix, h: f64) -> ComplexMatrix {
    (&map.average(r) - r).scale_real(1.0 / h)
}

fn criterion_generator() -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    for kind in [AuxKind::Qubit, AuxKind::Oscillator] {
        let aux: AuxiliarySystem = match kind {
            AuxKind::Qubit => make_qubit_aux(),
            AuxKind::Oscillator => make_oscillator_aux(10)?,
        };
        for k in 0..20u64 {
            let sep = separate(&random_valid_setup(100 + k, 1, 2, 3))?;
            let b = &sep.b_ops[0];
            let s = sep.noise_scale;
            let r = random_density_matrix(200 + k, 3);
            let target = LindbladTerm::new(1.0, b.clone()).dissipate(&r).scale_real(s);
            let norm_b = cwlm::numerics::operator_norm(b);
            let h0 = (0.05 / (s.sqrt() * norm_b)).powi(2);
            let g = |h: f64| -> Result<ComplexMatrix> { Ok(step_generator(&ConditionalMap::new(b, h, s, &aux)?, &r, h)) };
            let (g1, g2, g4) = (g(h0)?, g(h0 / 2.0)?, g(h0 / 4.0)?);
            let r1 = &g2.scale_real(2.0) - &g1;
            let r2 = &g4.scale_real(2.0) - &g2;
            let extrapolated = (&r2.scale_real(4.0) - &r1).scale_real(1.0 / 3.0);
            worst = worst.max(extrapolated.max_abs_diff(&target));
        }
    }
    Ok(Verdict::new(
        worst <= 1e-4,
        format!("max entrywise deviation {worst:.2e} over 20 states × 2 auxiliaries"),
    ))
}

fn criterion_martingale() -> Result<Verdict> {
    let loaded = load_setup("qubit_two_detectors")?;
    let setup = &loaded.setup;
    let rho0 = loaded.initial_state.clone();
    let t = 1.0;
    let sep = separate(setup)?;
    let cfg = EnsembleConfig::new(t, 1e-3, 10_000, AuxKind::Qubit, 7);
    let res = run_ensemble(&sep, &rho0, &cfg)?;
    let dynamics = Dynamics::new(setup)?;
    let exact = dynamics.evolve(&rho0, &[0.0, 0.0], t, 1e-3)?;
    let snap = &res.final_state;
    let mut worst_ratio: f64 = 0.0;
    let mut ok = true;
    for a in 0..2 {
        for b in 0..2 {
            for (dev, se) in [
                ((snap.mean[(a, b)].re - exact[(a, b)].re).abs(), snap.stderr_re[(a, b)]),
                ((snap.mean[(a, b)].im - exact[(a, b)].im).abs(), snap.stderr_im[(a, b)]),
            ] {
                if se > 0.0 {
                    worst_ratio = worst_ratio.max(dev / se);
                    ok &= dev <= 3.0 * se;
                } else {
                    ok &= dev <= 1e-12;
                }
            }
        }
    }
    Ok(Verdict::new(
        ok && res.failed == 0,
        format!("largest |mean − Lindblad|/σ = {worst_ratio:.2} over {} trajectories", res.n_traj),
    ))
}

fn criterion_purity() -> Result<Verdict> {
    let loaded = load_setup("qubit_cross_noise")?;
    let sep = separate(&loaded.setup)?;
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for kind in [AuxKind::Qubit, AuxKind::Oscillator] {
        let cfg = EnsembleConfig::new(1.0, 1e-3, 200, kind, 8);
        let res = run_ensemble(&sep, &loaded.initial_state, &cfg)?;
        worst = worst.max(res.max_purity_deviation);
        steps = res.steps;
    }
    Ok(Verdict::new(
        worst <= 1e-10 && steps == 1000,
        format!("max purity deviation {worst:.2e} over {steps} steps, both auxiliaries"),
    ))
}

fn flagged(setup: &MeasurementSetup, name: &str) -> bool {
    let report = validate_setup(setup);
    !report.overall && report.failures().iter().any(|c| c.name == name)
}

fn criterion_validation() -> Result<Verdict> {
    let [_, _, sz] = pauli();
    let [sx, _, _] = pauli();
    let zero2 = ComplexMatrix::zeros(2, 2);
    // (a) S_ii S_αα < S_iα² + a_iα²
    let noise_a = NoiseData::new(one(1.0), one(0.0), one(1.0), one(2.0), one(0.0))?;
    let a = MeasurementSetup::new(zero2.clone(), vec![sz.clone()], noise_a, "a")?;
    // (b) every 2×2 minor fine, the full matrix indefinite
    let noise_b = NoiseData::new(
        one(1.0),
        RealMatrix::from_rows(&[&[0.8], &[0.8]]),
        RealMatrix::from_rows(&[&[1.0, -0.5], &[-0.5, 1.0]]),
        RealMatrix::zeros(1, 2),
        RealMatrix::zeros(2, 2),
    )?;
    let b = MeasurementSetup::new(zero2.clone(), vec![sz.clone(), sx], noise_b, "b")?;
    // (c) operator noise below the measurement minimum a²/4S
    let noise_c = NoiseData::new(one(1.0), one(0.0), one(0.2), one(1.0), one(0.0))?;
    let c = MeasurementSetup::new(zero2, vec![sz], noise_c, "c")?;
    let (fa, fb, fc) = (
        flagged(&a, CHECK_DETECTOR_OPERATOR),
        flagged(&b, CHECK_BIG_C),
        flagged(&c, CHECK_MIN_DECOHERENCE),
    );
    let saturated = load_setup("saturated_minimum")?;
    let margin = minimum_decoherence_margin(&saturated.setup)?;
    let report_margin = saturated
        .report
        .check(CHECK_MIN_DECOHERENCE)
        .map(|c| c.margin)
        .unwrap_or(f64::NAN);
    Ok(Verdict::new(
        fa && fb && fc && margin.abs() <= 1e-10 && report_margin.abs() <= 1e-10,
        format!("flags (a) {fa}, (b) {fb}, (c) {fc}; saturated_minimum margin {margin:.1e}"),
    ))
}

fn criterion_separation() -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let setup = random_valid_setup(300 + seed, 2, 2, 2);
        let rho0 = random_density_matrix(400 + seed, 2);
        let t = 1.7;
        let sep = separate(&setup)?;
        let before = cumulants(&setup, &rho0, t)?;
        let after = cumulants(&sep.base, &rho0, t)?;
        let tm = &sep.transform;
        let mean = tm.matvec(&before.mean);
        let cov = RealMatrix::from_fn(2, 2, |i, j| before.covariance[i][j]);
        let cov = tm.matmul(&cov).matmul(&tm.transpose());
        for i in 0..2 {
            worst = worst.max((after.mean[i] - mean[i]).abs());
            for j in 0..2 {
                worst = worst.max((after.covariance[i][j] - cov[(i, j)]).abs());
            }
        }
    }
    Ok(Verdict::new(worst <= 1e-9, format!("max deviation {worst:.2e} over 5 random setups")))
}

fn main() {
    // Name, check, wall-clock budget in seconds.
    let criteria: [(&str, fn() -> Result<Verdict>, Option<f64>); 10] = [
        ("auxiliary relations", criterion_relations, Some(1.0)),
        ("free-detector consistency", criterion_free_detector, Some(60.0)),
        ("three-way equivalence", criterion_three_way, Some(300.0)),
        ("commuting analytic oracle", criterion_commuting_oracle, Some(60.0)),
        ("bimodal readout", criterion_bimodal, None),
        ("generator consistency", criterion_generator, None),
        ("martingale", criterion_martingale, None),
        ("no-susceptibility purity", criterion_purity, None),
        ("validation gates", criterion_validation, None),
        ("separation invariance", criterion_separation, None),
    ];
    let mut failed = 0;
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut verdict = run().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        if let Some(limit) = budget {
            if secs >= *limit {
                verdict.passed = false;
                verdict.detail.push_str(&format!("; over the {limit} s budget"));
            }
        }
        if !verdict.passed {
            failed += 1;
        }
        println!(
            "{} [{:>2}] {name}: {} ({secs:.1} s)",
            if verdict.passed { "PASS" } else { "FAIL" },
            k + 1,
            verdict.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
