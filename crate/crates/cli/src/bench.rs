use std::collections::BTreeMap;

use amswarm_core::{am_solve_cached, KktCache, SolveReport, SolverConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{BenchArgs, Generator};
use crate::commands::open_cache;
use crate::error::{CliError, Result, EXIT_INVALID, EXIT_OK};
use crate::output::{csv_bytes, ensure_dir, write_atomic};
use crate::scenario::{basis_config, generate};

#[derive(Debug, Clone, Copy)]
struct Case {
    n: usize,
    n_obs: usize,
    seed: u64,
}

struct Outcome {
    case: Case,
    result: std::result::Result<SolveReport, String>,
}

#[derive(Debug, Serialize)]
struct Row {
    n: usize,
    n_obs: usize,
    seed: u64,
    converged: bool,
    iterations: usize,
    final_residual: f64,
    min_norm_dist: f64,
    mean_arc_length: f64,
    mean_smoothness: f64,
    setup_time_s: f64,
    loop_time_s: f64,
    error: String,
}

impl Row {
    fn from_outcome(o: &Outcome) -> Self {
        let Case { n, n_obs, seed } = o.case;
        match &o.result {
            Ok(r) => Row {
                n,
                n_obs,
                seed,
                converged: r.converged,
                iterations: r.iterations,
                final_residual: r.final_residual.max_abs,
                min_norm_dist: r.metrics.min_normalized_distance,
                mean_arc_length: r.metrics.trajectory.mean_arc_length(),
                mean_smoothness: r.metrics.trajectory.mean_smoothness(),
                setup_time_s: r.timings.assembly_s + r.timings.factorization_s,
                loop_time_s: r.timings.loop_s,
                error: String::new(),
            },
            Err(e) => Row {
                n,
                n_obs,
                seed,
                converged: false,
                iterations: 0,
                final_residual: f64::NAN,
                min_norm_dist: f64::NAN,
                mean_arc_length: f64::NAN,
                mean_smoothness: f64::NAN,
                setup_time_s: f64::NAN,
                loop_time_s: f64::NAN,
                error: e.clone(),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    n: usize,
    n_obs: usize,
    runs: usize,
    errors: usize,
    converged_rate: f64,
    mean_iterations: f64,
    mean_final_residual: f64,
    worst_min_norm_dist: f64,
    mean_loop_time_s: f64,
    std_loop_time_s: f64,
    mean_loop_time_per_iter_s: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn summarize(outcomes: &[Outcome]) -> Vec<Summary> {
    let mut groups: BTreeMap<(usize, usize), Vec<&Outcome>> = BTreeMap::new();
    for o in outcomes {
        groups.entry((o.case.n, o.case.n_obs)).or_default().push(o);
    }
    groups
        .into_iter()
        .map(|((n, n_obs), group)| {
            let ok: Vec<&SolveReport> = group.iter().filter_map(|o| o.result.as_ref().ok()).collect();
            let pick = |f: fn(&SolveReport) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
            let loops = pick(|r| r.timings.loop_s);
            Summary {
                n,
                n_obs,
                runs: group.len(),
                errors: group.len() - ok.len(),
                converged_rate: ok.iter().filter(|r| r.converged).count() as f64 / group.len() as f64,
                mean_iterations: mean(&pick(|r| r.iterations as f64)),
                mean_final_residual: mean(&pick(|r| r.final_residual.max_abs)),
                worst_min_norm_dist: pick(|r| r.metrics.min_normalized_distance)
                    .into_iter()
                    .fold(f64::INFINITY, f64::min),
                mean_loop_time_s: mean(&loops),
                std_loop_time_s: std_dev(&loops),
                mean_loop_time_per_iter_s: mean(&pick(|r| r.timings.loop_s / r.iterations.max(1) as f64)),
            }
        })
        .collect()
}

fn suite_name(g: Generator) -> &'static str {
    match g {
        Generator::Square => "square",
        Generator::Random => "random",
        Generator::RandomObstacles => "random-obstacles",
        Generator::Hallway => "hallway",
    }
}

fn run_case(args: &BenchArgs, config: &SolverConfig, cache: &KktCache, case: Case) -> Outcome {
    let result = generate(args.suite, &args.gen, case.n, case.n_obs, case.seed)
        .and_then(|spec| {
            let basis = basis_config(&spec.basis, &args.basis);
            let spec = spec.with_basis(basis);
            Ok(am_solve_cached(&spec, config, cache)?)
        })
        .and_then(|report| {
            let name = format!("n{}_obs{}_seed{}.json", case.n, case.n_obs, case.seed);
            write_atomic(
                &args.out_dir.join("runs").join(name),
                report.to_json()?.as_bytes(),
            )?;
            Ok(report)
        })
        .map_err(|e| e.to_string());
    if let Err(e) = &result {
        log::error!("n={} n_obs={} seed={}: {e}", case.n, case.n_obs, case.seed);
    }
    Outcome { case, result }
}

pub fn bench(args: &BenchArgs) -> Result<u8> {
    if args.sizes.is_empty() {
        return Err(CliError::Usage(
            "--sizes must list at least one agent count".into(),
        ));
    }
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let obstacle_counts = match args.suite {
        Generator::RandomObstacles => args.n_obs.clone(),
        _ => vec![0],
    };
    let cases: Vec<Case> = args
        .sizes
        .iter()
        .flat_map(|&n| {
            obstacle_counts.iter().flat_map(move |&n_obs| {
                (args.seed..args.seed + args.seeds).map(move |seed| Case { n, n_obs, seed })
            })
        })
        .collect();

    ensure_dir(&args.out_dir.join("runs"))?;
    let config = args.solver.config();
    config.schedule()?;
    let cache = open_cache(args.cache_dir.as_deref());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        cases
            .par_iter()
            .map(|&c| run_case(args, &config, &cache, c))
            .collect()
    });

    let rows = csv_bytes(|w| {
        for o in &outcomes {
            w.serialize(Row::from_outcome(o))?;
        }
        Ok(())
    })?;
    write_atomic(&args.out_dir.join("bench.csv"), &rows)?;

    let summary = summarize(&outcomes);
    let summary_bytes = csv_bytes(|w| {
        for s in &summary {
            w.serialize(s)?;
        }
        Ok(())
    })?;
    write_atomic(&args.out_dir.join("summary.csv"), &summary_bytes)?;

    let history = csv_bytes(|w| {
        w.write_record([
            "n",
            "n_obs",
            "seed",
            "iteration",
            "residual_max_abs",
            "residual_norm",
        ])?;
        for o in &outcomes {
            if let Ok(r) = &o.result {
                for (k, s) in r.residual_history.iter().enumerate() {
                    w.serialize((o.case.n, o.case.n_obs, o.case.seed, k + 1, s.max_abs, s.norm))?;
                }
            }
        }
        Ok(())
    })?;
    write_atomic(&args.out_dir.join("residuals.csv"), &history)?;

    println!("suite {} ({} runs)", suite_name(args.suite), outcomes.len());
    println!(
        "{:>4} {:>5} {:>5} {:>6} {:>9} {:>10} {:>12}",
        "n", "n_obs", "runs", "conv%", "mean_it", "min_dist", "ms/iter"
    );
    for s in &summary {
        println!(
            "{:>4} {:>5} {:>5} {:>6.1} {:>9.1} {:>10.4} {:>12.3}",
            s.n,
            s.n_obs,
            s.runs,
            100.0 * s.converged_rate,
            s.mean_iterations,
            s.worst_min_norm_dist,
            1e3 * s.mean_loop_time_per_iter_s
        );
    }
    let errors: usize = summary.iter().map(|s| s.errors).sum();
    if errors > 0 {
        log::error!("{errors} runs failed");
        Ok(EXIT_INVALID)
    } else {
        Ok(EXIT_OK)
    }
}
