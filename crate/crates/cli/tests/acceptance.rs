//! Acceptance checks A1–A10, one line each. Runs without the libtest
//! harness so the lines are always printed.
//!
//! Oracle criteria (A1–A4, A10) set the exit status. The Monte Carlo
//! criteria (A5–A9) are reported; set `RBSLAM_ACCEPTANCE_STRICT=1` to make
//! them count as well. `RBSLAM_ACCEPTANCE_ONLY=A4,A9` runs a subset.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use rbslam_cli::experiments::{radio_line_rep, radio_square_rep, Method, Outcome};
use rbslam_cli::manifest::ExperimentManifest;
use rbslam_cli::run::{resolve_workers, run_experiment, RunOptions, RunSummary};
use rbslam_cli::verify::{chain_rule_identity, kernel_reconstruction, rb_batch_equivalence};
use rbslam_core::evaluation::{count_distinct, heading_roughness, heading_roughness_straight, pose_rmse};
use rbslam_core::inference::{ancestor_weights_ref, sample_index};
use rbslam_core::linalg::{sample_gaussian, spd_cholesky, LN_2PI};
use rbslam_core::rng::{substream, Stream};
use rbslam_core::simulation::ScenarioConfig;
use rbslam_core::{
    BasisDomain, GaussianMapBelief, KernelHyper, MeasurementModel, OdometryFrame, PlanarMotion,
    PlanarOdometry, PlanarStep, PosePlanar, ProcessNoisePlanar, RadioModel,
};

const SEED: u64 = 20240601;

struct Line {
    id: &'static str,
    pass: bool,
    oracle: bool,
}

fn report(id: &'static str, oracle: bool, pass: bool, seconds: f64, limit: f64, detail: String) -> Line {
    let pass = pass && seconds < limit;
    println!(
        "{id} {} {detail} [{seconds:.1} s, limit {limit:.0} s]",
        if pass { "PASS" } else { "FAIL" }
    );
    Line { id, pass, oracle }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn a1() -> Line {
    let t0 = Instant::now();
    let (mean, cov) = rb_batch_equivalence(SEED);
    let pass = mean < 1e-8 && cov < 1e-8;
    report(
        "A1",
        true,
        pass,
        t0.elapsed().as_secs_f64(),
        10.0,
        format!("rb-batch equivalence: mean err {mean:.2e}, cov rel err {cov:.2e} (tol 1e-8)"),
    )
}

fn a2() -> Line {
    let t0 = Instant::now();
    let err = chain_rule_identity(SEED);
    report(
        "A2",
        true,
        err < 1e-6,
        t0.elapsed().as_secs_f64(),
        30.0,
        format!("chain-rule identity: max |dense − sequential| {err:.2e} over 100 cases (tol 1e-6)"),
    )
}

fn a3() -> Line {
    let t0 = Instant::now();
    let err = kernel_reconstruction(SEED, 1.0);
    report(
        "A3",
        true,
        err < 0.05,
        t0.elapsed().as_secs_f64(),
        10.0,
        format!("kernel reconstruction m=128: max err {:.2}% of σ_f² (tol 5%)", 100.0 * err),
    )
}

/// Dense `log N(y; 0, C P0 Cᵀ + σ² I)` of a set of scalar radio readings.
fn dense_marginal(model: &RadioModel, prior: &GaussianMapBelief, xs: &[PosePlanar], ys: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = prior.dim();
    let mut c = DMatrix::zeros(xs.len(), n);
    for (r, x) in xs.iter().enumerate() {
        c.row_mut(r).copy_from(&model.c_matrix(x).row(0));
    }
    let s = &c * &prior.cov * c.transpose() + DMatrix::identity(xs.len(), xs.len()) * model.hyper.sigma_noise2;
    let chol = spd_cholesky(s).expect("SPD");
    let y = DVector::from_column_slice(ys);
    let r = y - &c * &prior.mean;
    let z = chol.l().solve_lower_triangular(&r).unwrap();
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (xs.len() as f64 * LN_2PI + logdet + z.norm_squared())
}

fn a4() -> Line {
    let t0 = Instant::now();
    let model = RadioModel::new(
        BasisDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0], 16).unwrap(),
        KernelHyper {
            sigma_f2: 2.0,
            ell: 0.5,
            sigma_lin2: 0.0,
            sigma_noise2: 0.1,
        },
    );
    let dynamics = PlanarMotion {
        frame: OdometryFrame::Body,
    };
    let (qp, qq) = (0.3f64 * 0.3, 0.05);
    let input = PlanarStep {
        odometry: PlanarOdometry {
            dp: Vector2::new(0.3, 0.0),
            dheading: 0.0,
        },
        noise: ProcessNoisePlanar {
            qp: Matrix2::identity() * qp,
            qq,
            dt: 1.0,
        },
    };
    let prior = model.prior();
    let mut rng = substream(SEED, Stream::Simulation, 4, 0, 0);
    let theta = sample_gaussian(&prior.mean, &prior.cov, &mut rng);
    // particle histories and the reference on a small grid, T = 3
    let grid = [-0.25, 0.0, 0.25];
    let hist = |i: usize, s: usize| PosePlanar::new(grid[i] + 0.3 * s as f64, 0.3 * grid[(i + s) % 3], 0.0);
    let reference: Vec<PosePlanar> = (0..3).map(|s| PosePlanar::new(0.1 + 0.3 * s as f64, 0.05, 0.0)).collect();
    let weights = [0.5f64, 0.3, 0.2];
    let ys: Vec<f64> = reference
        .iter()
        .map(|x| model.simulate(x, &theta, &mut rng)[0])
        .collect();

    let mut worst_freq = 0.0f64;
    let mut worst_formula = 0.0f64;
    let mut shown = Vec::new();
    for t in 1..3usize {
        let prev: Vec<PosePlanar> = (0..3).map(|i| hist(i, t - 1)).collect();
        let beliefs: Vec<GaussianMapBelief> = (0..3)
            .map(|i| {
                let mut b = prior.clone();
                for s in 0..t {
                    let y = DVector::from_element(1, ys[s]);
                    let obs = model.observe(&hist(i, s), &b.mean, &y).unwrap();
                    b.update(&obs.c, &obs.sigma, &obs.y).unwrap();
                }
                b
            })
            .collect();
        // independent oracle: Gaussian transition times the ratio of dense marginals
        let mut logp = Vec::new();
        for i in 0..3 {
            let mean = prev[i].position + input.odometry.dp;
            let d = reference[t].position - mean;
            let dh = reference[t].heading - prev[i].heading - input.odometry.dheading;
            let trans = -0.5 * d.norm_squared() / qp - 0.5 * dh * dh / qq;
            let mut path: Vec<PosePlanar> = (0..t).map(|s| hist(i, s)).collect();
            let past = dense_marginal(&model, &prior, &path, &ys[..t]);
            path.extend_from_slice(&reference[t..]);
            let all = dense_marginal(&model, &prior, &path, &ys);
            logp.push(weights[i].ln() + trans + all - past);
        }
        let mx = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logp.iter().map(|l| (l - mx).exp()).sum();
        let exact: Vec<f64> = logp.iter().map(|l| (l - mx).exp() / z).collect();

        let future_y: Vec<DVector<f64>> = ys[t..].iter().map(|&y| DVector::from_element(1, y)).collect();
        let lib = ancestor_weights_ref(&dynamics, &model, &prev, &weights, &beliefs, &input, &reference[t..], &future_y)
            .expect("ancestor weights");
        let mut draws = substream(SEED, Stream::Ancestor, 4, t as u64, 0);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_index(&lib, &mut draws).unwrap()] += 1;
        }
        for i in 0..3 {
            worst_freq = worst_freq.max((counts[i] as f64 / n as f64 - exact[i]).abs());
            worst_formula = worst_formula.max((lib[i] - exact[i]).abs());
        }
        shown.push(format!("t={t} p=[{:.3},{:.3},{:.3}]", exact[0], exact[1], exact[2]));
    }
    report(
        "A4",
        true,
        worst_freq < 0.02 && worst_formula < 1e-9,
        t0.elapsed().as_secs_f64(),
        120.0,
        format!(
            "ancestor sampling: max |freq − exact| {worst_freq:.4} over 1e5 draws (tol 0.02), max |formula − dense| {worst_formula:.1e}; {}",
            shown.join(" ")
        ),
    )
}

fn radio_outcomes(fig: u32) -> (Vec<Outcome<PosePlanar>>, f64) {
    let t0 = Instant::now();
    let m = ExperimentManifest::figure(fig, SEED).unwrap();
    let settings = m.settings();
    let outcomes = (0..m.runs as u64)
        .map(|rep| match &m.scenario {
            ScenarioConfig::RadioSquare(c) => radio_square_rep(c, &settings, m.seed, rep).unwrap(),
            ScenarioConfig::RadioLine(c) => radio_line_rep(c, &settings, m.seed, rep).unwrap(),
            _ => unreachable!(),
        })
        .collect();
    (outcomes, t0.elapsed().as_secs_f64())
}

fn a5() -> Line {
    let (outcomes, secs) = radio_outcomes(4);
    let mut degenerate = 0;
    let mut diverse = 0;
    let mut uniques = Vec::new();
    let mut distinct = Vec::new();
    for o in &outcomes {
        let t_len = o.truth.len();
        let profile = o.ancestor_profile.as_ref().unwrap();
        // the profile is non-decreasing in t, so t = T/2 bounds all earlier steps
        let u = profile[t_len / 2];
        uniques.push(u);
        if u == 1 {
            degenerate += 1;
        }
        // the third turn, where the simulated field is weakest
        let turn = o.turn_steps[2];
        let samples: Vec<Vec<PosePlanar>> = o.samples(Method::Ps).into_iter().cloned().collect();
        let d = count_distinct(&samples, turn - 1..(turn + 10).min(t_len), 0.01);
        distinct.push(d);
        if d >= 2 {
            diverse += 1;
        }
    }
    let n = outcomes.len();
    report(
        "A5",
        false,
        degenerate * 20 >= 18 * n && diverse * 20 >= 18 * n,
        secs,
        600.0,
        format!(
            "degeneracy contrast: filter unique ancestors at T/2 == 1 in {degenerate}/{n} runs (counts {uniques:?}); smoother ≥2 distinct through the turn in {diverse}/{n} runs (counts {distinct:?})"
        ),
    )
}

fn a6() -> Line {
    let (outcomes, secs) = radio_outcomes(5);
    let pf: Vec<f64> = outcomes.iter().map(|o| o.score(Method::Pf).unwrap()).collect();
    let ps: Vec<f64> = outcomes.iter().map(|o| o.score(Method::Ps).unwrap()).collect();
    let mut per_sample = Vec::new();
    let (mut rough_ps, mut rough_pf, mut lit_ps, mut lit_pf) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for o in &outcomes {
        let samples = o.samples(Method::Ps);
        for s in &samples {
            per_sample.push(pose_rmse(s, &o.truth).unwrap());
        }
        let k = samples.len() as f64;
        rough_ps.push(samples.iter().map(|s| heading_roughness_straight(s, &o.turn_steps)).sum::<f64>() / k);
        lit_ps.push(samples.iter().map(|s| heading_roughness(s)).sum::<f64>() / k);
        let f = o.point(Method::Pf).unwrap();
        rough_pf.push(heading_roughness_straight(f, &o.turn_steps));
        lit_pf.push(heading_roughness(f));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mps, mpf) = (median(&ps), median(&pf));
    let (rps, rpf) = (mean(&rough_ps), mean(&rough_pf));
    report(
        "A6",
        false,
        mps < mpf && rps < rpf,
        secs,
        900.0,
        format!(
            "line scenario: median RMSE PS {mps:.4} vs PF {mpf:.4} (per-sample median {:.4}); heading roughness off the commanded turn PS {rps:.2e} vs PF {rpf:.2e} (including the turn: PS {:.2e}, PF {:.2e})",
            median(&per_sample),
            mean(&lit_ps),
            mean(&lit_pf)
        ),
    )
}

fn run_manifest(m: &ExperimentManifest, name: &str) -> RunSummary {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join(name);
    run_experiment(
        m,
        &RunOptions {
            out,
            workers: resolve_workers(None, m),
            paper_scale: false,
        },
    )
    .unwrap()
}

fn a7() -> Line {
    let m = ExperimentManifest::figure(7, SEED).unwrap();
    let s = run_manifest(&m, "fig7");
    let med = |l: f64, me: Method| s.median(l, me).unwrap();
    let (ps0, ps5) = (med(0.0, Method::Ps), med(5.0, Method::Ps));
    let (pf0, pf5) = (med(0.0, Method::Pf), med(5.0, Method::Pf));
    let (ekf0, ekf5) = (med(0.0, Method::Ekf), med(5.0, Method::Ekf));
    let eks5 = med(5.0, Method::Eks);
    let c1 = ps5 <= 2.0 * ps0;
    let c2 = ekf5 > ekf0 && ekf5 > ps5;
    let c3 = ps0 <= pf0 && ps5 <= pf5;
    report(
        "A7",
        false,
        c1 && c2 && c3,
        s.seconds,
        1800.0,
        format!(
            "magnetic bias: medians o=0 PF {pf0:.3} PS {ps0:.3} EKF {ekf0:.3}; o=5 PF {pf5:.3} PS {ps5:.3} EKF {ekf5:.3} EKS {eks5:.3}; PS robust {c1}, EKF degrades and exceeds PS {c2}, PS ≤ PF {c3}"
        ),
    )
}

fn a8() -> Line {
    let mut m = ExperimentManifest::figure(8, SEED).unwrap();
    let (lo, hi) = (m.levels[0], *m.levels.last().unwrap());
    m.levels = vec![lo, hi];
    let s = run_manifest(&m, "fig8");
    let med = |l: f64, me: Method| s.median(l, me).unwrap();
    let (eks_lo, ps_lo) = (med(lo, Method::Eks), med(lo, Method::Ps));
    let (ps_hi, eks_hi, pf_hi, ekf_hi) = (med(hi, Method::Ps), med(hi, Method::Eks), med(hi, Method::Pf), med(hi, Method::Ekf));
    let c1 = eks_lo <= 1.5 * ps_lo;
    let c2 = ps_hi < eks_hi && pf_hi < ekf_hi;
    report(
        "A8",
        false,
        c1 && c2,
        s.seconds,
        1800.0,
        format!(
            "visual init noise: σ²={lo} EKS {eks_lo:.3} vs 1.5×PS {:.3} ({c1}); σ²={hi} PS {ps_hi:.3} < EKS {eks_hi:.3} and PF {pf_hi:.3} < EKF {ekf_hi:.3} ({c2}); EKF at σ²={lo} {:.3}, PF {:.3}",
            1.5 * ps_lo,
            med(lo, Method::Ekf),
            med(lo, Method::Pf)
        ),
    )
}

fn a9() -> Line {
    let m = ExperimentManifest::localization(SEED);
    let ell = match &m.scenario {
        ScenarioConfig::RadioSquare(c) => c.hyper.ell,
        _ => unreachable!(),
    };
    let s = run_manifest(&m, "localize");
    let errs = s.rmse(0.0, Method::Localize);
    let ok = errs.iter().filter(|&&e| e < ell).count();
    report(
        "A9",
        false,
        ok * 20 >= 18 * errs.len(),
        s.seconds,
        300.0,
        format!(
            "known-map localization N={}: final error < ℓ={ell} in {ok}/{} runs (median {:.3})",
            m.particles,
            errs.len(),
            median(&errs)
        ),
    )
}

fn a10() -> Line {
    let t0 = Instant::now();
    let mut m = ExperimentManifest::figure(7, SEED).unwrap();
    m.runs = 2;
    m.particles = 20;
    m.iterations = 2;
    if let ScenarioConfig::Magnetic3d(c) = &mut m.scenario {
        c.steps = 60;
    }
    let mut radio = ExperimentManifest::figure(4, SEED).unwrap();
    radio.runs = 3;
    radio.particles = 20;
    radio.iterations = 2;
    let mut same = true;
    let mut files = 0;
    for (name, man) in [("magnetic", &m), ("radio", &radio)] {
        let dir = tempfile::tempdir().unwrap();
        let mut bodies = Vec::new();
        for workers in [1, 3] {
            let out = dir.path().join(format!("{name}{workers}"));
            run_experiment(
                man,
                &RunOptions {
                    out: out.clone(),
                    workers,
                    paper_scale: false,
                },
            )
            .unwrap();
            let mut set = Vec::new();
            for f in ["results.csv", "box_stats.csv"] {
                set.push(std::fs::read(out.join(f)).unwrap());
            }
            for e in std::fs::read_dir(&out).unwrap() {
                let p = e.unwrap().path();
                if p.file_name().unwrap().to_string_lossy().starts_with("traj_") {
                    set.push(std::fs::read(&p).unwrap());
                }
            }
            bodies.push(set);
        }
        same &= bodies[0] == bodies[1];
        files += bodies[0].len();
    }
    report(
        "A10",
        true,
        same,
        t0.elapsed().as_secs_f64(),
        300.0,
        format!("determinism: serial vs 3 workers, {files} result and trajectory CSVs byte-identical: {same}"),
    )
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("RBSLAM_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_uppercase()).collect());
    let strict = std::env::var("RBSLAM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let all: [(&str, fn() -> Line); 10] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
        ("A10", a10),
    ];
    let mut lines = Vec::new();
    for (id, f) in all {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == id)) {
            continue;
        }
        lines.push(f());
    }
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    let fatal: Vec<&str> = lines.iter().filter(|l| !l.pass && (l.oracle || strict)).map(|l| l.id).collect();
    println!(
        "acceptance: {}/{} passed{}",
        lines.len() - failed.len(),
        lines.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if !fatal.is_empty() {
        std::process::exit(1);
    }
}
