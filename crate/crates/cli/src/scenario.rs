use std::fs;
use std::path::Path;

use amswarm_core::problem::{
    generate_hallway, generate_random, generate_random_with_obstacles, generate_square, perturb_positions,
};
use amswarm_core::{BasisConfig, ProblemSpec};

use crate::args::{BasisArgs, Generator, GeneratorArgs};
use crate::error::{CliError, Result};

fn bounds(g: &GeneratorArgs) -> Result<[f64; 3]> {
    <[f64; 3]>::try_from(g.bounds.as_slice())
        .map_err(|_| CliError::Usage(format!("--bounds needs three values, got {}", g.bounds.len())))
}

/// Instantiate `generator` with `n` agents and `n_obs` obstacles.
pub fn generate(
    generator: Generator,
    g: &GeneratorArgs,
    n: usize,
    n_obs: usize,
    seed: u64,
) -> Result<ProblemSpec> {
    let spec = match generator {
        Generator::Square => {
            let base = generate_square(n, g.side, g.radius, g.altitude)?;
            if g.perturb > 0.0 {
                perturb_positions(&base, g.perturb, seed)
            } else {
                base
            }
        }
        Generator::Random => generate_random(n, bounds(g)?, g.radius, seed)?,
        Generator::RandomObstacles => {
            generate_random_with_obstacles(n, bounds(g)?, g.radius, n_obs, g.obstacle_radius, seed)?
        }
        Generator::Hallway => generate_hallway(n, g.length, g.width, g.radius)?,
    };
    Ok(spec)
}

pub fn load(path: &Path) -> Result<ProblemSpec> {
    let text = fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })?;
    ProblemSpec::from_json(&text).map_err(|source| CliError::Scenario {
        path: path.to_path_buf(),
        source,
    })
}

/// Apply command-line basis overrides on top of `base`.
pub fn basis_config(base: &BasisConfig, args: &BasisArgs) -> BasisConfig {
    BasisConfig {
        m: args.m.unwrap_or(base.m),
        degree: args.degree.unwrap_or(base.degree),
        duration: args.duration.unwrap_or(base.duration),
        kind: args.basis.unwrap_or(base.kind),
    }
}
