use std::fs;
use std::path::Path;
use std::time::Instant;

use amswarm_core::kkt::CacheOutcome;
use amswarm_core::{am_solve_cached, BasisConfig, KktCache};

use crate::args::{CacheArgs, GenerateArgs, SolveArgs};
use crate::error::{CliError, Result, EXIT_NOT_CONVERGED, EXIT_OK};
use crate::output::{ensure_dir, write_agent_csvs, write_atomic};
use crate::scenario::{basis_config, generate, load};

pub fn open_cache(dir: Option<&Path>) -> KktCache {
    match dir {
        Some(d) => KktCache::with_disk(d),
        None => KktCache::new(),
    }
}

pub fn solve(args: &SolveArgs) -> Result<u8> {
    let spec = match (&args.scenario, args.generator) {
        (Some(path), _) => load(path)?,
        (None, Some(g)) => generate(g, &args.gen, args.gen.n, args.gen.obstacles, args.seed)?,
        (None, None) => return Err(CliError::Usage("need --scenario or --generator".into())),
    };
    let basis = basis_config(&spec.basis, &args.basis);
    let spec = spec.with_basis(basis);

    let cache = open_cache(args.cache_dir.as_deref());
    let report = am_solve_cached(&spec, &args.solver.config(), &cache)?;
    log::info!(
        "factorizations: {} cache hits, {} misses",
        report.census.cache_hits,
        report.census.cache_misses
    );

    ensure_dir(&args.out_dir)?;
    let report_path = args.out_dir.join("report.json");
    write_atomic(&report_path, report.to_json()?.as_bytes())?;
    if args.csv {
        write_agent_csvs(&args.out_dir, &report)?;
    }
    println!(
        "n={} converged={} iterations={} residual={:.3e} min_norm_dist={:.4} loop={:.3}s -> {}",
        report.n,
        report.converged,
        report.iterations,
        report.final_residual.max_abs,
        report.metrics.min_normalized_distance,
        report.timings.loop_s,
        report_path.display()
    );
    if report.succeeded() {
        Ok(EXIT_OK)
    } else {
        if report.converged {
            log::warn!("converged but the collision check failed");
        } else {
            log::warn!("no convergence within {} iterations", report.iterations);
        }
        Ok(EXIT_NOT_CONVERGED)
    }
}

pub fn cache(args: &CacheArgs) -> Result<u8> {
    let basis = basis_config(&BasisConfig::default(), &args.basis).build()?;
    let schedule = args.solver.config().schedule()?;
    let cache = KktCache::with_disk(&args.cache_dir);
    let started = Instant::now();
    let assembly = cache.assembly(args.n, args.n_obs, &basis)?;
    let factors = cache.factors_for(&assembly, &schedule)?;
    let elapsed = started.elapsed().as_secs_f64();

    let fp = &assembly.fingerprint;
    let dir = args.cache_dir.join(fp.key());
    let manifest = cache
        .read_manifest(fp)?
        .ok_or_else(|| CliError::Usage(format!("no manifest written under {}", dir.display())))?;
    println!("fingerprint {} (kkt dimension {})", fp.key(), assembly.dim());
    let mut total = 0;
    for (factor, outcome) in &factors {
        let file = &manifest.factors[&factor.rho.to_string()];
        let bytes = fs::metadata(dir.join(file))?.len();
        total += bytes;
        let source = match outcome {
            CacheOutcome::Factored => "built",
            CacheOutcome::Disk => "on disk",
            CacheOutcome::Memory => "in memory",
        };
        println!("  rho={:<8} {file} {bytes} bytes ({source})", factor.rho);
    }
    println!("{} factorizations, {total} bytes, {elapsed:.3}s", factors.len());
    Ok(EXIT_OK)
}

pub fn generate_scenario(args: &GenerateArgs) -> Result<u8> {
    let spec = generate(
        args.generator,
        &args.gen,
        args.gen.n,
        args.gen.obstacles,
        args.seed,
    )?;
    let basis = basis_config(&spec.basis, &args.basis);
    let spec = spec.with_basis(basis);
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_atomic(&args.out, spec.to_json()?.as_bytes())?;
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}
