//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use vpmerge::convergence::{self, Grid, ViewSpec};
use vpmerge::data::{self, ClassSpec, LabeledDataset, SyntheticSpec};
use vpmerge::fluctuation::{self, Centering, ConditionalMoments, FluctuationTensor};
use vpmerge::forward::{self, SeedPolicy};
use vpmerge::merger::{self, MergerMetric};
use vpmerge::schedule::{AttenuationMode, NoiseSchedule};

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixture(leads: &[f64], means: &[f64], d: usize, n: usize, seed: u64) -> LabeledDataset {
    let classes = leads
        .iter()
        .enumerate()
        .map(|(k, &lead)| {
            let mut spectrum = vec![1.0; d];
            spectrum[0] = lead;
            ClassSpec {
                mean: vec![means.get(k).copied().unwrap_or(0.0); d],
                spectrum,
                rotation_seed: seed * 100 + k as u64,
                samples: n,
            }
        })
        .collect();
    data::synth_gaussian_mixture(&SyntheticSpec { classes }, seed).unwrap()
}

fn j_at(s: &NoiseSchedule, t: usize) -> f64 {
    s.attenuation(t, AttenuationMode::ContinuousIntegral).unwrap().j_value
}

fn all_steps(s: &NoiseSchedule) -> Vec<usize> {
    (0..=s.horizon()).collect()
}

fn c1_mixing() -> Outcome {
    let start = Instant::now();
    let s = NoiseSchedule::ddpm();
    let mut ok = true;
    let mut parts = Vec::new();
    for (d, want) in [(3072, 0.602), (784, 0.543), (4096, 0.614)] {
        let f = s.predict_mixing_step(d).map_err(|e| e.to_string())?.t_mix_fraction;
        ok &= (f - want).abs() <= 0.005;
        parts.push(format!("d={d}: {f:.4} vs {want}"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    Ok((ok, format!("{}; {secs:.3}s", parts.join(", "))))
}

fn c2_merger_oracle() -> Outcome {
    let start = Instant::now();
    let s = NoiseSchedule::ddpm();
    // J^2 * 6 = 0.06  <=>  beta0 t + (dbeta / 2T) t^2 = ln 100
    let a = (s.beta_final() - s.beta0()) / (2.0 * s.horizon() as f64);
    let b = s.beta0();
    let target = (-b + (b * b + 4.0 * a * 100f64.ln()).sqrt()) / (2.0 * a);
    let mut ok = true;
    let mut found = Vec::new();
    for seed in 0..5u64 {
        let ds = fixture(&[10.0, 4.0], &[], 16, 20_000, seed);
        let sw = forward::sweep(&ds, &s, &all_steps(&s), SeedPolicy::new(seed)).map_err(|e| e.to_string())?;
        let p = sw.partition();
        let series = merger::detect_series(&sw, p.event(0), p.event(1), 2, 0.06, MergerMetric::TopEigenAbs)
            .map_err(|e| e.to_string())?;
        ok &= (series.istar as f64 - target).abs() <= 2.0;
        found.push(series.istar);
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    Ok((ok, format!("closed form {target:.2}, i* per seed {found:?}; {secs:.1}s")))
}

fn c3_contraction() -> Outcome {
    let s = NoiseSchedule::ddpm();
    let ds = fixture(&[10.0], &[], 16, 50_000, 3);
    let steps = forward::even_steps(s.horizon(), 11).map_err(|e| e.to_string())?;
    let sw = forward::sweep(&ds, &s, &steps, SeedPolicy::new(3)).map_err(|e| e.to_string())?;
    let rows: Vec<usize> = (0..ds.count()).collect();
    let mut worst = (0.0f64, 0usize);
    for &t in &steps {
        let m = fluctuation::conditional_fluctuation(&sw, &rows, t, 2, Centering::ConditionalMean).map_err(|e| e.to_string())?;
        let j2 = j_at(&s, t).powi(2);
        let want = 10.0 * j2 + (1.0 - j2);
        let rel = (m.top_eigenvalue - want).abs() / want;
        if rel > worst.0 {
            worst = (rel, t);
        }
    }
    Ok((worst.0 <= 0.03, format!("worst relative error {:.4} at t={}", worst.0, worst.1)))
}

fn cov_of(m: &ConditionalMoments) -> Array2<f64> {
    match &m.tensor {
        FluctuationTensor::Matrix(c) => c.clone(),
        FluctuationTensor::Vector(_) => panic!("expected an order-2 tensor"),
    }
}

fn c4_one_sweep() -> Outcome {
    let s = NoiseSchedule::ddpm();
    let d = 4;
    let trunc = 1.0 - 2.0 / std::f64::consts::PI;
    let ds = fixture(&[1.0], &[], d, 100_000, 4);
    let event: Vec<usize> = (0..ds.count()).filter(|&i| ds.features()[[i, 0]] > 0.0).collect();
    let sw = forward::sweep(&ds, &s, &[0, 300], SeedPolicy::new(4)).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for t in [0, 300] {
        let j2 = j_at(&s, t).powi(2);
        let mut want = Array2::<f64>::eye(d);
        want[[0, 0]] = j2 * trunc + (1.0 - j2);
        let got = cov_of(&fluctuation::conditional_fluctuation(&sw, &event, t, 2, Centering::ConditionalMean).map_err(|e| e.to_string())?);
        let err = (&got - &want).mapv(|v| v * v).sum().sqrt() / want.mapv(|v| v * v).sum().sqrt();
        worst = worst.max(err);
    }
    // Half-spaces {x0 > 0} and {x1 > 0}: covariances diag(a,1,1,1) and diag(1,a,1,1).
    let true_m = (2.0 * trunc + 2.0) / (trunc * trunc + 3.0);
    let mut mean_err = Vec::new();
    for n in [1_000usize, 10_000] {
        let mut total = 0.0;
        for seed in 0..20u64 {
            let ds = fixture(&[1.0], &[], d, n, 1000 + seed);
            let a: Vec<usize> = (0..n).filter(|&i| ds.features()[[i, 0]] > 0.0).collect();
            let b: Vec<usize> = (0..n).filter(|&i| ds.features()[[i, 1]] > 0.0).collect();
            let sw = forward::sweep(&ds, &s, &[0], SeedPolicy::new(seed)).map_err(|e| e.to_string())?;
            let ma = fluctuation::conditional_fluctuation(&sw, &a, 0, 2, Centering::ConditionalMean).map_err(|e| e.to_string())?;
            let mb = fluctuation::conditional_fluctuation(&sw, &b, 0, 2, Centering::ConditionalMean).map_err(|e| e.to_string())?;
            total += (fluctuation::normalized_m(&ma, &mb).map_err(|e| e.to_string())? - true_m).abs();
        }
        mean_err.push(total / 20.0);
    }
    let ok = worst <= 0.02 && mean_err[1] < mean_err[0];
    Ok((
        ok,
        format!("covariance rel error {worst:.4}; mean |M err| N=1000 {:.2e}, N=10000 {:.2e}", mean_err[0], mean_err[1]),
    ))
}

fn c5_fourth_moment() -> Outcome {
    let s = NoiseSchedule::ddpm();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let e1: f64 = rng.sample(Exp1);
            let e2: f64 = rng.sample(Exp1);
            (e1 - e2) / std::f64::consts::SQRT_2
        })
        .collect();
    let ds = LabeledDataset::new(Array2::from_shape_vec((n, 1), x).unwrap(), vec![0; n]).map_err(|e| e.to_string())?;
    let table = s.attenuation_table(AttenuationMode::ContinuousIntegral);
    let mut ok = true;
    let mut parts = Vec::new();
    for target in [0.75, 0.5, 0.25] {
        let t = (0..=s.horizon())
            .min_by(|&a, &b| (table[a].powi(4) - target).abs().total_cmp(&(table[b].powi(4) - target).abs()))
            .unwrap();
        let j4 = table[t].powi(4);
        let sw = forward::sweep(&ds, &s, &[t], SeedPolicy::new(5)).map_err(|e| e.to_string())?;
        let col = sw.snapshot(t).map_err(|e| e.to_string())?.column(0).to_vec();
        let got = fluctuation::empirical_central_moment(&col, 4);
        let want = j4 * 6.0 + (1.0 - j4) * 3.0;
        let rel = (got - want).abs() / want;
        ok &= rel <= 0.05 && (j4 - target).abs() < 0.01;
        parts.push(format!("J^4={j4:.3} t={t}: {got:.3} vs {want:.3}"));
    }
    Ok((ok, parts.join(", ")))
}

fn c6_convergence() -> Outcome {
    let s = NoiseSchedule::ddpm();
    let (n, d) = (5_000, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 3f64.sqrt();
    let cube = Array2::from_shape_fn((n, d), |_| rng.random_range(-h..h));
    let ds = LabeledDataset::new(cube, vec![0; n]).map_err(|e| e.to_string())?;
    let steps = forward::even_steps(s.horizon(), 101).map_err(|e| e.to_string())?;
    let sw = forward::sweep(&ds, &s, &steps, SeedPolicy::new(6)).map_err(|e| e.to_string())?;
    let report = convergence::convergence_step(&sw, 0.05, ViewSpec::Coordinates).map_err(|e| e.to_string())?;
    let predicted = s.predict_mixing_step(d).map_err(|e| e.to_string())?.t_mix_steps;
    let cube_ok = report.detected && (report.detected_step as f64 - predicted).abs() <= 0.1 * s.horizon() as f64;

    let (n, d) = (2_000, 512);
    let gauss = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    let ds = LabeledDataset::new(gauss, vec![0; n]).map_err(|e| e.to_string())?;
    let steps = forward::even_steps(s.horizon(), 11).map_err(|e| e.to_string())?;
    let sw = forward::sweep(&ds, &s, &steps, SeedPolicy::new(7)).map_err(|e| e.to_string())?;
    let g = convergence::convergence_step(&sw, 0.05, ViewSpec::Coordinates).map_err(|e| e.to_string())?;
    let gauss_ok = g.detected && g.detected_step == 0;
    Ok((
        cube_ok && gauss_ok,
        format!("cube detected {} vs predicted {predicted:.1}; gaussian detected {}", report.detected_step, g.detected_step),
    ))
}

fn psd(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
    a.dot(&a.t())
}

fn moments(m: Array2<f64>) -> ConditionalMoments {
    ConditionalMoments::from_tensor(FluctuationTensor::Matrix(m)).unwrap()
}

fn cka(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    fluctuation::normalized_m(&moments(a.clone()), &moments(b.clone())).unwrap()
}

fn c7_cka() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut bounds_ok = true;
    for case in 0..200u64 {
        let d = 2 + (case % 7) as usize;
        let a = psd(d, &mut rng);
        let b = psd(d, &mut rng);
        let m = cka(&a, &b);
        bounds_ok &= (0.0..=1.0).contains(&m);
        let q = data::random_orthogonal(d, 500 + case);
        let qa = q.dot(&a).dot(&q.t());
        let qb = q.dot(&b).dot(&q.t());
        let c: f64 = rng.random_range(0.01..100.0);
        for v in [cka(&b, &a), cka(&qa, &qb), cka(&(&a * c), &b)] {
            worst = worst.max((v - m).abs());
        }
        worst = worst.max((cka(&a, &a) - 1.0).abs());
    }
    let e0 = cka(&ndarray::arr2(&[[1.0, 0.0], [0.0, 0.0]]), &ndarray::arr2(&[[0.0, 0.0], [0.0, 1.0]]));
    let e1 = cka(&Array2::eye(2), &ndarray::arr2(&[[2.0, 0.0], [0.0, 0.0]]));
    let e2 = cka(&ndarray::arr2(&[[3.0, 1.0], [1.0, 2.0]]), &ndarray::arr2(&[[3.0, 1.0], [1.0, 2.0]]));
    let exact = (e0 - 0.0).abs().max((e1 - std::f64::consts::FRAC_1_SQRT_2).abs()).max((e2 - 1.0).abs());
    let ok = bounds_ok && worst <= 1e-8 && exact <= 1e-9;
    Ok((ok, format!("max invariance deviation {worst:.1e}; exact cases {e0}, {e1:.6}, {e2}")))
}

fn c8_lattice_phase() -> Outcome {
    let s = NoiseSchedule::ddpm();
    let ds = fixture(&[12.0, 6.0, 2.0], &[], 8, 4_000, 8);
    let sw = forward::sweep(&ds, &s, &all_steps(&s), SeedPolicy::new(8)).map_err(|e| e.to_string())?;
    let p = sw.partition();
    let eps = merger::default_epsilon_for(&sw, &p).map_err(|e| e.to_string())?;
    let mut recovered = 0;
    let mut total = 0;
    let mut extra = 0;
    for a in 0..3 {
        for b in a + 1..3 {
            let series = merger::detect_series(&sw, p.event(a), p.event(b), 2, eps, MergerMetric::TopEigenAbs)
                .map_err(|e| e.to_string())?;
            if !series.merged {
                continue;
            }
            total += 1;
            let jumps = merger::series_transitions(&series, 1, 1, 1e-6).map_err(|e| e.to_string())?;
            if jumps.contains(&series.istar) {
                recovered += 1;
            }
            extra += jumps.iter().filter(|&&t| t != series.istar).count();
        }
    }
    let grid: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|f| f * eps).collect();
    let phase = merger::phase_spectrum(&sw, &p, 2, MergerMetric::TopEigenAbs, &grid).map_err(|e| e.to_string())?;
    let counts: Vec<usize> = phase.iter().map(|q| q.positive_mergers).collect();
    let monotone = counts.windows(2).all(|w| w[1] <= w[0]);
    let ok = total == 3 && recovered == total && monotone;
    Ok((ok, format!("merger step recovered in {recovered}/{total} series ({extra} other transitions); phase counts {counts:?}")))
}

fn mixture_density(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = rng.random_range(1..=3);
    let comps: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| (rng.random_range(0.2..1.0), rng.random_range(-3.0..3.0), rng.random_range(0.5..2.0)))
        .collect();
    let wsum: f64 = comps.iter().map(|c| c.0).sum();
    grid.tabulate(|x| {
        comps
            .iter()
            .map(|&(w, mu, sd)| w / wsum * (-(x - mu).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
            .sum()
    })
}

fn c9_moment_tv() -> Outcome {
    let grid = Grid::new(-25.0, 25.0, 50_001).map_err(|e| e.to_string())?;
    let mut held = 0;
    let mut checks = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let p = mixture_density(&grid, &mut rng);
        let q = mixture_density(&grid, &mut rng);
        for n in [2, 3] {
            checks += 1;
            if convergence::moment_tv_check(&p, &q, &grid, n, 1.0).map_err(|e| e.to_string())?.holds {
                held += 1;
            }
        }
    }
    let phi = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for delta in [0.1, 0.5, 1.0, 2.0, 4.0] {
        let p = grid.tabulate(|x| (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt());
        let q = grid.tabulate(|x| (-(x - delta).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt());
        let tv = convergence::tv_distance_1d(&p, &q, &grid).map_err(|e| e.to_string())?;
        worst = worst.max((tv - (2.0 * phi.cdf(delta / 2.0) - 1.0)).abs());
    }
    Ok((held == checks && worst <= 1e-4, format!("bound held {held}/{checks}; max TV deviation {worst:.1e}")))
}

fn c10_adaptation() -> Outcome {
    let s = NoiseSchedule::ddpm();
    let src = fixture(&[12.0, 6.0, 2.0], &[], 8, 4_000, 10);
    let pert = src.with_features(src.features().mapv(|v| v + 0.05 * v.sin())).map_err(|e| e.to_string())?;
    let delta = convergence::empirical_cf_distance(&src, &pert, 256, None, 10).map_err(|e| e.to_string())?.delta;
    let steps = all_steps(&s);
    // Both sweeps share seeds, so each row sees the same noise path.
    let sa = forward::sweep(&src, &s, &steps, SeedPolicy::new(10)).map_err(|e| e.to_string())?;
    let sb = forward::sweep(&pert, &s, &steps, SeedPolicy::new(10)).map_err(|e| e.to_string())?;
    let p = sa.partition();
    let eps = merger::default_epsilon_for(&sa, &p).map_err(|e| e.to_string())?;
    let ma = merger::pairwise_merge_times(&sa, &p, 2, eps, MergerMetric::TopEigenAbs).map_err(|e| e.to_string())?;
    let mb = merger::pairwise_merge_times(&sb, &sb.partition(), 2, eps, MergerMetric::TopEigenAbs).map_err(|e| e.to_string())?;
    let worst = ma.times.iter().zip(&mb.times).map(|(&x, &y)| x.abs_diff(y)).max().unwrap_or(0);
    Ok((
        delta < 0.05 && worst <= 5,
        format!("cf distance {delta:.4}; merge steps {:?} vs {:?}", ma.rows(), mb.rows()),
    ))
}

fn c11_speciation() -> Outcome {
    let s = NoiseSchedule::ddpm();
    let steps = forward::even_steps(s.horizon(), 201).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let ds = fixture(&[10.0, 4.0, 2.0], &[0.0, 20.0, -20.0], 16, 3_000, 1100 + seed);
        let sw = forward::sweep(&ds, &s, &steps, SeedPolicy::new(seed)).map_err(|e| e.to_string())?;
        let p = sw.partition();
        let eps = merger::default_epsilon_for(&sw, &p).map_err(|e| e.to_string())?;
        let m = merger::pairwise_merge_times(&sw, &p, 2, eps, MergerMetric::TopEigenAbs).map_err(|e| e.to_string())?;
        let latest = (0..3).flat_map(|a| (a + 1..3).map(move |b| (a, b))).map(|(a, b)| m.get(a, b)).max().unwrap();
        let report = convergence::convergence_step(&sw, 0.05, ViewSpec::Coordinates).map_err(|e| e.to_string())?;
        ok &= report.detected && latest < report.detected_step;
        parts.push(format!("{latest}<{}", report.detected_step));
    }
    Ok((ok, format!("latest merge < normality step per seed: {}", parts.join(", "))))
}

fn run_cli<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_vpmerge")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn c12_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (data_a, data_b) = (p("a.csv"), p("b.fvec1"));
    let logits = p("logits.csv");
    let mut rows = String::from("step,class,logit\n");
    for t in (0..=1000).step_by(50) {
        for c in 0..3 {
            rows.push_str(&format!("{t},{c},{}\n", ((t + 7 * c) as f64 * 0.013).sin()));
        }
    }
    std::fs::write(&logits, rows).map_err(|e| e.to_string())?;
    let sim = |out: &str, seed: &str| {
        vec![
            "simulate".to_string(),
            "--classes".into(),
            "3".into(),
            "--dim".into(),
            "4".into(),
            "--spectra".into(),
            "8,4,2".into(),
            "--means".into(),
            "0,3,-3".into(),
            "--n-per-class".into(),
            "300".into(),
            "--seed".into(),
            seed.into(),
            "--out".into(),
            out.into(),
        ]
    };
    let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let sweep = ["--steps", "51", "--seed", "9"];
    let with = |head: &[&str], tail: &[&str]| own(&[head, &sweep[..], tail].concat());
    let cases: Vec<(&str, Vec<String>, &str)> = vec![
        ("mixing", own(&["mixing", "--dim", "3072", "--out", "{OUT}"]), "json"),
        ("simulate", sim("{OUT}", "4"), "csv"),
        ("analyze", with(&["analyze", "--input", &data_a], &["--out", "{OUT}"]), "json"),
        ("analyze-series", with(&["analyze", "--input", &data_a], &["--series", "{OUT}"]), "csv"),
        ("windows", with(&["windows", "--input", &data_a], &["--out", "{OUT}"]), "json"),
        ("converge", with(&["converge", "--input", &data_a], &["--out", "{OUT}"]), "json"),
        ("probe", with(&["probe", "--input", &data_a], &["--out", "{OUT}"]), "csv"),
        ("cf", own(&["cf", "--a", &data_a, "--b", &data_b, "--seed", "3", "--out", "{OUT}"]), "json"),
        ("tvcheck", own(&["tvcheck", "--p", "normal:0,1", "--q", "normal:0.5,1.2", "--grid", "-12,12,20001", "--out", "{OUT}"]), "json"),
        ("aggregate", own(&["aggregate", "--logits", &logits, "--t-start", "0", "--t-stop", "1000", "--out", "{OUT}"]), "json"),
    ];
    for setup in [sim(&data_a, "1"), sim(&data_b, "2")] {
        let (code, _) = run_cli(&setup);
        if code != 0 {
            return Err(format!("fixture generation exited with {code}"));
        }
    }
    let mut failures = Vec::new();
    for (name, args, ext) in &cases {
        let mut payloads = Vec::new();
        for run in 0..2 {
            let out = p(&format!("{name}-{run}.{ext}"));
            let argv: Vec<String> = args.iter().map(|a| a.replace("{OUT}", &out)).collect();
            let (code, stdout) = run_cli(&argv);
            if code != 0 {
                failures.push(format!("{name} exited {code}"));
            }
            let file = if Path::new(&out).exists() { std::fs::read(&out).unwrap() } else { Vec::new() };
            payloads.push((stdout, file));
        }
        if payloads[0] != payloads[1] || payloads[0].1.is_empty() {
            failures.push(format!("{name} differs or is empty"));
        }
    }
    let ok = failures.is_empty();
    Ok((ok, if ok { format!("{} invocations byte-identical", cases.len()) } else { failures.join("; ") }))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("mixing-time reproduction", c1_mixing),
        ("merger-time oracle", c2_merger_oracle),
        ("eigenvalue contraction", c3_contraction),
        ("one-sweep estimator", c4_one_sweep),
        ("fourth-moment identity", c5_fourth_moment),
        ("convergence detection", c6_convergence),
        ("CKA properties", c7_cka),
        ("lattice and phase properties", c8_lattice_phase),
        ("moment-TV bound", c9_moment_tv),
        ("fluctuation adaptation", c10_adaptation),
        ("speciation ordering", c11_speciation),
        ("CLI reproducibility", c12_reproducibility),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<30} {} [{:.1}s] {detail}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
