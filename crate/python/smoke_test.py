"""Smoke test for the amswarm Python extension.

Build and install first, e.g.::

    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import json
import math

import amswarm


def main():
    spec = amswarm.ProblemSpec.square(8, side=8.0, radius=0.4)
    assert spec.n == 8 and not spec.validate(), spec.validate()
    again = amswarm.ProblemSpec.from_json(spec.to_json())
    assert again.start == spec.start and again.goal == spec.goal

    cache = amswarm.KktCache()
    config = amswarm.SolverConfig(max_iters=150)
    report = amswarm.solve(spec.perturbed(0.1, seed=1), config, cache)
    print(report)
    assert report.converged and report.succeeded()
    assert report.final_residual <= config.tolerance
    assert len(report.trajectories) == 8 and len(report.times) == spec.m
    assert report.census["kkt_solves"] == 3 * report.iterations
    assert report.census["loop_factorizations"] == 0

    second = amswarm.solve(amswarm.ProblemSpec.random(8, seed=4), config, cache)
    assert second.census["cache_hits"] == 10, second.census
    assert cache.stats()["factorizations"] == 10

    l_xy, l_z = spec.geometry
    min_dist, violations = amswarm.check_collisions(report.trajectories, l_xy, l_z)
    assert abs(min_dist - report.min_normalized_distance) < 1e-12
    # samples between 0.95 and 1 count as violations but pass the acceptance margin
    assert min_dist >= 0.95 and violations >= 0
    assert abs(amswarm.arc_length(report.trajectories[0]) - report.arc_length[0]) < 1e-12

    alpha, beta = amswarm.project_alpha_beta(1.0, 1.0, 0.0, 1.0, 1.0)
    assert abs(alpha - math.pi / 4) < 1e-15 and abs(beta - math.pi / 2) < 1e-15
    assert amswarm.solve_d(0.5, 0.0, 0.0, 0.0, math.pi / 2, 1.0, 1.0) == 1.0

    parsed = json.loads(report.to_json())
    assert parsed["converged"] is True
    assert amswarm.SolveReport.from_json(report.to_json()).iterations == report.iterations

    try:
        bad = amswarm.ProblemSpec.square(4, side=0.5, radius=0.4)
        amswarm.solve(bad)
    except ValueError as e:
        print("rejected overlapping start:", str(e)[:60], "...")
    else:
        raise AssertionError("overlapping problem was accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
