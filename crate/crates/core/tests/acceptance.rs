//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use dphypo_core::accountant::{
    audit_bound, hypo_pure_dp, hypo_rdp, FiniteMechanism, MechanismCandidate, SaturatingAudit, UniformAudit,
};
use dphypo_core::distributions::SAMPLE_TAIL_MASS;
use dphypo_core::framework::{run_fixed_t, run_hypo, run_uniform_baseline};
use dphypo_core::projection::{project_kl_penalized, project_l2};
use dphypo_core::{
    landscape, AdaptivityBounds, Direction, DiscreteDensity, Generator, GpConfig, GpStrategy, GridSpec,
    LandscapeOracle, NegBinParams, Prior, RunOptions, RunStream, UniformStrategy,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pure_dp_recovery() -> Outcome {
    let nb = NegBinParams::new(1.0, 0.5).unwrap();
    let b = AdaptivityBounds::non_adaptive();
    let mut worst: f64 = 0.0;
    for eps in [0.1, 1.0, 5.0] {
        worst = worst.max((hypo_pure_dp(eps, &nb, &b) - 3.0 * eps).abs());
    }
    check(worst <= 1e-12, format!("max |bound - 3 eps| = {worst:e}"))
}

fn negbin_mean_closed_form(theta: f64, gamma: f64) -> f64 {
    if theta == 0.0 {
        (1.0 - gamma) / (gamma * (1.0 / gamma).ln())
    } else {
        theta * (1.0 - gamma) / (gamma * (1.0 - gamma.powf(theta)))
    }
}

fn rdp_reduction() -> Outcome {
    let b = AdaptivityBounds::non_adaptive();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for alpha in [1.5, 2.0, 8.0, 32.0] {
        for alpha_hat in [1.0, 2.0, 10.0, f64::INFINITY] {
            for theta in [0.0, 0.5, 1.0, 3.0] {
                for gamma in [0.001, 0.05, 0.5, 0.9] {
                    let nb = NegBinParams::new(theta, gamma).unwrap();
                    let (eps, eps_hat) = (0.7, 0.4);
                    let got = hypo_rdp(alpha, eps, alpha_hat, eps_hat, &nb, &b).unwrap();
                    let inv_hat = if alpha_hat.is_infinite() { 0.0 } else { 1.0 / alpha_hat };
                    let want = eps
                        + (1.0 + theta) * (1.0 - inv_hat) * eps_hat
                        + (1.0 + theta) * (1.0 / gamma).ln() * inv_hat
                        + negbin_mean_closed_form(theta, gamma).ln() / (alpha - 1.0);
                    worst = worst.max((got - want).abs());
                    cases += 1;
                }
            }
        }
    }
    check(worst <= 1e-12, format!("{cases} cases, max abs diff {worst:e}"))
}

fn negbin_correctness() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (i, (theta, gamma)) in [(1.0, 0.5), (0.0, 0.5), (2.0, 0.1)].into_iter().enumerate() {
        let nb = NegBinParams::new(theta, gamma).unwrap();
        let cap = nb.tail_cutoff(SAMPLE_TAIL_MASS).unwrap();
        let mass: f64 = (1..=cap).map(|k| nb.pmf(k).unwrap()).sum();
        let closed = negbin_mean_closed_form(theta, gamma);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let n = 1_000_000;
        let mc = (0..n).map(|_| nb.sample(&mut rng).value as f64).sum::<f64>() / n as f64;
        let deriv = nb.pgf_derivative(1.0).unwrap();
        let rel = (mc - closed).abs() / closed;
        ok &= (mass - 1.0).abs() <= 1e-9 && rel <= 0.01 && (deriv - nb.mean()).abs() <= 1e-9;
        details.push(format!(
            "({theta},{gamma}): mass-1={:.1e} mc_rel={rel:.4} f'(1)-mean={:.1e}",
            mass - 1.0,
            deriv - nb.mean()
        ));
    }
    check(ok, details.join("; "))
}

/// Weighted-L2 projection onto the box intersected with the normalisation
/// hyperplane by exhaustive search over active sets: every coordinate sits at
/// its lower bound, its upper bound, or at `pi_i + shift` with one shift shared
/// by the free coordinates.
fn brute_force_projection(pi: &[f64], w: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = pi.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut f = vec![0.0; n];
        let (mut fixed_mass, mut free_mass, mut free_w) = (0.0, 0.0, 0.0);
        let mut c = code;
        for i in 0..n {
            match c % 3 {
                0 => {
                    f[i] = lo[i];
                    fixed_mass += lo[i] * w[i];
                }
                1 => {
                    f[i] = hi[i];
                    fixed_mass += hi[i] * w[i];
                }
                _ => {
                    free_mass += pi[i] * w[i];
                    free_w += w[i];
                }
            }
            c /= 3;
        }
        let shift = if free_w > 0.0 {
            (1.0 - fixed_mass - free_mass) / free_w
        } else {
            0.0
        };
        let mut c = code;
        let mut feasible = free_w > 0.0 || (fixed_mass - 1.0).abs() <= 1e-12;
        for i in 0..n {
            if c % 3 == 2 {
                f[i] = pi[i] + shift;
                feasible &= f[i] >= lo[i] - 1e-15 && f[i] <= hi[i] + 1e-15;
            }
            c /= 3;
        }
        if !feasible {
            continue;
        }
        let obj: f64 = (0..n).map(|i| w[i] * (f[i] - pi[i]).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, f));
        }
    }
    best.expect("the constraint set is non-empty").1
}

fn projection_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut gap, mut viol, mut kl_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let n = 10;
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        let prior_vals: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let prior = Prior::new(DiscreteDensity::normalized(prior_vals, w.clone()).unwrap()).unwrap();
        let upper = rng.random_range(1.0..4.0);
        let lower = rng.random_range(0.05..1.0);
        let bounds = AdaptivityBounds::new(upper, lower).unwrap();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let pi = DiscreteDensity::normalized(values, w.clone()).unwrap();
        let f = project_l2(&pi, &bounds, &prior).unwrap();
        let p0 = prior.density().values();
        let lo: Vec<f64> = p0.iter().map(|v| lower * v).collect();
        let hi: Vec<f64> = p0.iter().map(|v| upper * v).collect();
        let oracle = brute_force_projection(pi.values(), &w, &lo, &hi);
        for i in 0..n {
            gap = gap.max((f.values()[i] - oracle[i]).abs());
            viol = viol.max(lo[i] - f.values()[i]).max(f.values()[i] - hi[i]);
        }
        viol = viol.max((f.total_mass() - 1.0).abs());
        let g = project_kl_penalized(&pi, &bounds, &prior, 0.0).unwrap();
        for i in 0..n {
            kl_gap = kl_gap.max((g.values()[i] - f.values()[i]).abs());
        }
    }
    check(
        gap <= 1e-6 && viol <= 1e-9 && kl_gap <= 1e-10,
        format!("linf vs oracle {gap:.1e}, bound/normalisation violation {viol:.1e}, kl(nu=0) vs l2 {kl_gap:.1e}"),
    )
}

fn audit_fixture() -> FiniteMechanism {
    let e = 0.3f64;
    let k = 0.7 / (1.0 + (-e).exp());
    let a = vec![k, 0.3, (-e).exp() * k];
    let b = vec![(-e).exp() * k, 0.3, k];
    FiniteMechanism::new(
        3,
        vec![
            MechanismCandidate {
                p: a.clone(),
                p_neighbor: b.clone(),
            },
            MechanismCandidate { p: b, p_neighbor: a },
        ],
    )
    .unwrap()
}

fn privacy_audit() -> Outcome {
    let mech = audit_fixture();
    let nb = NegBinParams::new(1.0, 0.5).unwrap();
    let alphas = [2.0, 4.0, 8.0];
    let uniform = audit_bound(&mech, &UniformAudit, &nb, &AdaptivityBounds::non_adaptive(), &alphas).unwrap();
    let adaptive = AdaptivityBounds::new(4.0 / 3.0, 2.0 / 3.0).unwrap();
    let saturating = audit_bound(&mech, &SaturatingAudit, &nb, &adaptive, &alphas).unwrap();
    let mut ok = true;
    let mut details = Vec::new();
    for report in [&uniform, &saturating] {
        for row in &report.rows {
            ok &= row.realized <= row.bound && row.slack > 0.0;
            details.push(format!(
                "{} a={}: {:.3e} <= {:.4}",
                report.strategy, row.alpha, row.realized, row.bound
            ));
        }
        ok &= report.tail_mass <= 1e-10;
    }
    check(ok, details.join("; "))
}

fn uniform_reduction() -> Outcome {
    let grid = GridSpec::lr_clip_320();
    let gen = Generator::Needle {
        background: 0.9,
        value: 0.95,
        fraction: 1.0 / 320.0,
        noise: 0.1,
    };
    let l = landscape::synth_landscape(&grid, &gen, 11).unwrap();
    let oracle = LandscapeOracle {
        landscape: &l,
        direction: Direction::Max,
    };
    let prior = Prior::uniform(vec![1.0; grid.len()]).unwrap();
    let strategy = UniformStrategy::new(prior.clone());
    let nb = NegBinParams::new(1.0, 0.05).unwrap();
    let bounds = AdaptivityBounds::non_adaptive();
    let opts = RunOptions::default();
    let mut mismatches = 0;
    for r in 0..1000 {
        let a = run_hypo(
            &oracle,
            &strategy,
            &nb,
            &bounds,
            &prior,
            &mut RunStream::new(2024, r),
            &opts,
        )
        .unwrap();
        let b = run_uniform_baseline(&oracle, &nb, &mut RunStream::new(2024, r), &opts).unwrap();
        if a.to_json().unwrap() != b.to_json().unwrap() {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} of 1000 transcripts differ"))
}

fn adaptivity_benefit() -> Outcome {
    const RUNS: u64 = 6000;
    let grid = GridSpec::lr_clip_320();
    let gen = Generator::Needle {
        background: 0.9,
        value: 0.95,
        fraction: 1.0 / 320.0,
        noise: 0.1,
    };
    let prior = Prior::uniform(vec![1.0; grid.len()]).unwrap();
    let mut cfg = GpConfig::new(vec![0.02, 0.02], 0.01, 0.01);
    cfg.tau = 0.25;
    cfg.beta = 1000.0;
    let gp = GpStrategy::new(prior.clone(), grid.all_features(), cfg).unwrap();
    let uniform = UniformStrategy::new(prior.clone());
    let adaptive = AdaptivityBounds::new(320.0, 0.25).unwrap();
    let plain = AdaptivityBounds::non_adaptive();
    let opts = RunOptions {
        record_densities: Some(false),
        config_digest: None,
    };
    let mut ok_all = true;
    let mut significant = false;
    let mut details = Vec::new();
    for t in [16u64, 32, 64] {
        let pairs: Vec<(f64, f64)> = (0..RUNS)
            .into_par_iter()
            .map(|r| {
                let l = landscape::synth_landscape(&grid, &gen, 1000 + r).unwrap();
                let oracle = LandscapeOracle {
                    landscape: &l,
                    direction: Direction::Max,
                };
                let g = run_fixed_t(&oracle, &gp, t, &adaptive, &prior, &mut RunStream::new(7, r), &opts).unwrap();
                let u = run_fixed_t(&oracle, &uniform, t, &plain, &prior, &mut RunStream::new(7, r), &opts).unwrap();
                (
                    l.mean()[g.best.unwrap().lambda_index],
                    l.mean()[u.best.unwrap().lambda_index],
                )
            })
            .collect();
        let n = RUNS as f64;
        let mean_gp = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_uni = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let diff = mean_gp - mean_uni;
        let var = pairs.iter().map(|p| (p.0 - p.1 - diff).powi(2)).sum::<f64>() / (n - 1.0);
        let z = diff / (var / n).sqrt();
        ok_all &= mean_gp >= mean_uni;
        significant |= z > 1.645;
        details.push(format!("T={t}: gp {mean_gp:.5} uniform {mean_uni:.5} z {z:.2}"));
    }
    details.push(format!("{RUNS} paired runs each"));
    check(ok_all && significant, details.join("; "))
}

const DETERMINISM_CONFIG: &str = "\
seed = 99
repetitions = 24

[landscape]
generator = needle
grid = lr-clip-320
background = 0.9
value = 0.95
fraction = 0.003125
noise = 0.1

[search]
strategies = uniform, gp
upper = 2
lower = 0.75

[stopping]
theta = 1
gamma = 0.05, 0.2

[privacy]
mode = white-box
base_pure_epsilon = 1
total_epsilon = 9
";

fn cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dphypo"))
        .args(args)
        .current_dir(dir)
        .env_remove("DPHYPO_JOBS")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for jobs in ["1", "4"] {
        cli(
            &[
                "run",
                "--config",
                "run.cfg",
                "--strategy",
                "gp",
                "--gamma",
                "0.05",
                "--jobs",
                jobs,
                "--out",
                &format!("run{jobs}.json"),
            ],
            d,
        )?;
        cli(
            &[
                "bench",
                "--config",
                "run.cfg",
                "--jobs",
                jobs,
                "--out",
                &format!("bench{jobs}.csv"),
                "--plot",
                &format!("plot{jobs}.csv"),
            ],
            d,
        )?;
    }
    cli(
        &[
            "run",
            "--config",
            "run.cfg",
            "--strategy",
            "gp",
            "--gamma",
            "0.05",
            "--jobs",
            "4",
            "--out",
            "run4b.json",
        ],
        d,
    )?;
    let mut differing = Vec::new();
    for (a, b) in [
        ("run1.json", "run4.json"),
        ("run4.json", "run4b.json"),
        ("bench1.csv", "bench4.csv"),
        ("plot1.csv", "plot4.csv"),
    ] {
        let x = std::fs::read(d.join(a)).map_err(|e| e.to_string())?;
        let y = std::fs::read(d.join(b)).map_err(|e| e.to_string())?;
        compared += 1;
        if x != y || x.is_empty() {
            differing.push(format!("{a} vs {b}"));
        }
    }
    check(
        differing.is_empty(),
        format!("{compared} file pairs compared, differing: {differing:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 pure-DP bound recovers 3 eps", pure_dp_recovery),
        ("2 RDP bound reduces without adaptivity terms", rdp_reduction),
        ("3 NegBin mass, mean and pgf derivative", negbin_correctness),
        ("4 projection matches brute-force oracle", projection_optimality),
        ("5 exact audit within RDP bound", privacy_audit),
        ("6 uniform search equals plain random search", uniform_reduction),
        ("7 GP beats uniform on needle landscape", adaptivity_benefit),
        ("8 run and bench deterministic across jobs", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("acceptance {name}: PASS ({secs:.1}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("acceptance {name}: FAIL ({secs:.1}s) {d}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
