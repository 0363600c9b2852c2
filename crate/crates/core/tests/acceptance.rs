//! Acceptance suite. Prints one `[PASS]` / `[FAIL]` line per criterion.
//!
//! Runs as a plain binary so the lines always reach the terminal. Exits
//! nonzero when a criterion fails that is not listed in `KNOWN_FAILURES`.

use std::time::Instant;

use wsync::bounds::{check_r_upper, check_tk_events, stationary_lower_bound_check, BETA, C_LOWER, C_UPPER};
use wsync::harness::{
    compare_clocked, expected_failure_rate, figure1_sweep, oblivious_sweep, run_cell, write_gnuplot, write_sweep_csv,
    Cell, ExperimentConfig, SweepResult,
};
use wsync::oracle::small_n_expectation;
use wsync::stats::binomial_stderr;
use wsync::{Densities, StrategySpec};

const SEED: u64 = 0;

/// Criteria that fail on honest data; see the decisions ledger.
const KNOWN_FAILURES: &[u32] = &[9];

fn d(p1: f64, p2: f64, q: f64) -> Densities {
    Densities::new(p1, p2, q).expect("valid densities")
}

fn paper_grid() -> Vec<Densities> {
    let mut g = Vec::new();
    for p1 in [0.25, 0.5, 0.8] {
        for p2 in [0.25, 0.5, 0.8] {
            for q in [0.1, 0.25, 0.5] {
                g.push(d(p1, p2, q));
            }
        }
    }
    g
}

fn alpha_grid_with_default() -> Vec<f64> {
    let mut g: Vec<f64> = (1..=10).map(|i| i as f64 * 0.05).collect();
    g.push(1.0 / 6.0);
    g
}

fn geo(alpha: f64) -> StrategySpec {
    StrategySpec::GeometricAware { alpha }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        densities_grid: paper_grid(),
        alpha_grid: vec![1.0 / 6.0],
        master_seed: SEED,
        ..Default::default()
    };
    let rows = figure1_sweep(&cfg).expect("sweep");
    let worst = rows.iter().map(|r| r.normalized_mean).fold(f64::NEG_INFINITY, f64::max);
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: rows.len() == 27 && worst <= 500.0,
        detail: format!("max normalized mean over 27 cells = {worst:.3} (limit 500), {secs:.1}s"),
    }
}

fn criterion_2() -> Outcome {
    let dens = d(0.5, 0.5, 0.5);
    let spec = geo(1.0 / 6.0);
    let start = Instant::now();
    let oracle = small_n_expectation(&dens, 6, &spec, &spec).expect("oracle");
    let oracle_secs = start.elapsed().as_secs_f64();
    let mut cell = Cell::new(dens, spec, spec, 6);
    cell.replicates = 100_000;
    cell.master_seed = SEED;
    cell.allow_sparse = true;
    let sampled = run_cell(&cell).expect("cell");
    let z = (sampled.normalized_mean - oracle.normalized_mean) / sampled.stderr;
    Outcome {
        pass: z.abs() <= 3.0,
        detail: format!(
            "oracle {:.5} vs sampled {:.5} +- {:.5} (z = {z:.2}), oracle {oracle_secs:.2}s",
            oracle.normalized_mean, sampled.normalized_mean, sampled.stderr
        ),
    }
}

fn criterion_3() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for p in [0.25, 0.5] {
        for q in [0.1, 0.25] {
            let cfg = ExperimentConfig {
                densities_grid: vec![d(p, p, q)],
                alpha_grid: alpha_grid_with_default(),
                master_seed: SEED,
                ..Default::default()
            };
            let rows = figure1_sweep(&cfg).expect("sweep");
            let best = rows
                .iter()
                .min_by(|a, b| a.normalized_mean.total_cmp(&b.normalized_mean))
                .expect("nonempty");
            pass &= best.normalized_mean <= 27.0;
            details.push(format!("p={p},q={q}: {:.2}@a={:.3}", best.normalized_mean, best.alpha().unwrap()));
        }
    }
    Outcome { pass, detail: format!("best per cell (limit 27): {}", details.join("; ")) }
}

fn criterion_4() -> Outcome {
    let cfg = ExperimentConfig {
        densities_grid: paper_grid(),
        epsilon: 1.0,
        master_seed: SEED,
        ..Default::default()
    };
    let rows = oblivious_sweep(&cfg).expect("sweep");
    let vals: Vec<f64> = rows.iter().map(|r| r.log_normalized).collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let finite = vals.iter().all(|v| v.is_finite() && *v > 0.0);
    Outcome {
        pass: finite && max / min <= 10.0,
        detail: format!("log-normalized mean in [{min:.4}, {max:.4}], ratio {:.3} (limit 10)", max / min),
    }
}

fn criterion_5() -> Outcome {
    let dens = d(0.5, 0.5, 0.25);
    let n = 10_000;
    let mut pass = true;
    let mut details = Vec::new();
    for spec in [geo(1.0 / 6.0), StrategySpec::HeavyTailOblivious { epsilon: 1.0 }, StrategySpec::UniformNaive] {
        let report = check_r_upper(&dens, &spec, &spec, n, 1000, SEED).expect("r check");
        let mut cell = Cell::new(dens, spec, spec, n);
        cell.master_seed = SEED;
        let sweep = run_cell(&cell).expect("cell");
        let lower = stationary_lower_bound_check(&report, &sweep).expect("lower");
        pass &= report.passes() && lower.passed && report.constant_used == C_UPPER && lower.c == C_LOWER;
        details.push(format!(
            "{spec}: frac {:.3}, norm mean {:.3}",
            report.fraction_below, lower.normalized_mean
        ));
    }
    Outcome { pass, detail: details.join("; ") }
}

fn criterion_6() -> Outcome {
    let report = check_tk_events(&d(0.5, 0.5, 0.25), &geo(1.0 / 6.0), 1 << 14, 10_000, SEED, BETA).expect("tk");
    let freqs: Vec<String> = report
        .events()
        .iter()
        .map(|(name, f)| format!("{name}={:.4}", f.frequency()))
        .collect();
    Outcome {
        pass: report.passes() && report.level_size_violations == 0 && report.chain_violations == 0,
        detail: format!(
            "|S_k| violations {}, chain violations {}, events {}",
            report.level_size_violations,
            report.chain_violations,
            freqs.join(" ")
        ),
    }
}

fn criterion_7() -> Outcome {
    let cfg = ExperimentConfig {
        densities_grid: paper_grid(),
        master_seed: SEED,
        ..Default::default()
    };
    let rows = compare_clocked(&cfg).expect("clocked");
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.violates_lower() || r.violates_upper())
        .map(|r| format!("{} mean {:.2} not in [{:.2}, {:.2}]", r.densities, r.mean_rounds, r.lower_bound, r.upper_bound))
        .collect();
    let mut scaling_ok = true;
    let mut worst_ratio = 0.0f64;
    for r in rows.iter().filter(|r| r.densities.q() == 0.1) {
        let spec = geo(1.0 / 6.0);
        let mut cell = Cell::new(r.densities, spec, spec, cfg.n);
        cell.master_seed = SEED;
        let stationary = run_cell(&cell).expect("cell").mean_rounds();
        scaling_ok &= r.mean_rounds < stationary;
        worst_ratio = worst_ratio.max(r.mean_rounds / stationary);
    }
    Outcome {
        pass: bad.is_empty() && scaling_ok,
        detail: if bad.is_empty() {
            format!("27 cells within bounds; q=0.1 clocked/stationary mean ratio <= {worst_ratio:.3}")
        } else {
            bad.join("; ")
        },
    }
}

fn criterion_8() -> Outcome {
    let dens = d(0.5, 0.5, 0.5);
    let mut pass = true;
    let mut details = Vec::new();
    for n in [32, 64] {
        let spec = geo(1.0 / 6.0);
        let mut cell = Cell::new(dens, spec, spec, n);
        cell.replicates = 10_000;
        cell.master_seed = SEED;
        cell.allow_sparse = true;
        let res = run_cell(&cell).expect("cell");
        let expected = expected_failure_rate(&dens, n);
        let se = binomial_stderr(expected, res.n_total);
        let ok = (res.failure_rate() - expected).abs() <= 3.0 * se;
        pass &= ok;
        details.push(format!("n={n}: {}/{} vs {expected:.5} +- {se:.5}", res.n_failed, res.n_total));
    }
    Outcome { pass, detail: details.join("; ") }
}

fn mean_at(rows: &[SweepResult], alpha: f64) -> f64 {
    rows.iter()
        .find(|r| (r.alpha().unwrap() - alpha).abs() < 1e-12)
        .map(|r| r.normalized_mean)
        .expect("alpha in grid")
}

fn criterion_9() -> Outcome {
    let cfg = ExperimentConfig {
        densities_grid: vec![d(0.5, 0.5, 0.5)],
        alpha_grid: alpha_grid_with_default(),
        master_seed: SEED,
        ..Default::default()
    };
    let rows = figure1_sweep(&cfg).expect("sweep");
    let finite = rows
        .iter()
        .filter(|r| r.alpha().unwrap() < 0.5 - 1e-12)
        .all(|r| r.normalized_mean.is_finite());
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &rows).expect("csv");
    let mut plot = Vec::new();
    write_gnuplot(&mut plot, &rows).expect("gnuplot");
    let outputs_ok = String::from_utf8(csv).unwrap().lines().count() == rows.len() + 1 && !plot.is_empty();
    let (m05, m16, m45) = (mean_at(&rows, 0.05), mean_at(&rows, 1.0 / 6.0), mean_at(&rows, 0.45));
    let shape = m16 < m05 && m16 < m45;
    Outcome {
        pass: finite && outputs_ok && shape,
        detail: format!(
            "finite {finite}, outputs {outputs_ok}, mean@0.05 {m05:.3}, mean@1/6 {m16:.3}, mean@0.45 {m45:.3}"
        ),
    }
}

fn criterion_10() -> Outcome {
    let dens = d(1.0, 1.0, 0.1);
    let n = 10_000;
    let mut cell = Cell::new(dens, StrategySpec::UniformNaive, StrategySpec::UniformNaive, n);
    cell.replicates = 100;
    cell.master_seed = SEED;
    let res = run_cell(&cell).expect("cell");
    let target = n as f64 / dens.q();
    let ratio = res.mean_rounds() / target;
    Outcome {
        pass: res.n_failed == 0 && (1.0 / 1.5..=1.5).contains(&ratio),
        detail: format!("mean {:.1} vs n/q = {target:.0} (ratio {ratio:.4})", res.mean_rounds()),
    }
}

fn main() {
    // the default libtest flags are accepted and ignored
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut unexpected = Vec::new();
    for (id, run) in criteria {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id}: {}", o.detail);
        if !o.pass && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
        if o.pass && KNOWN_FAILURES.contains(&id) {
            println!("        criterion {id} is listed as a known failure but passed");
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance failures: {unexpected:?}");
        std::process::exit(1);
    }
}
