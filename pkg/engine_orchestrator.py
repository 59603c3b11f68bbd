# engine_orchestrator.py - sequential pipeline runner and command-line entry point

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import pydantic
import scipy
import trimesh
from pydantic import BaseModel, Field, ValidationError

from corrugation import __version__
from corrugation.errors import ConfigError, EngineError, NumericalError
from corrugation.export import dump_json, export_mesh, export_report, save_field, sha256_of, write_table
from corrugation.extend import ExtensionParams, adapted_extension, isometric_extension, short_extension
from corrugation.fields import MapField, ScalarField, identity_metric, make_grid
from corrugation.iterate import (
    SkeletonDescriptor,
    build_schedule,
    fit_schedule,
    flat_start_triple,
    global_embed_demo,
    iterate_to_isometry,
)
from corrugation.problems import circle_problem, flat_line_problem, load_problem, product_problem
from corrugation.stage import StageParams, flat_benchmark, perform_stage
from corrugation.verify import (
    connection_gap,
    holder_exponent_estimate,
    ladder_fit,
    refinement_slope,
    stage_certificate,
)
from engine_config import LAMBDA0_DEFAULT, LOG_LEVEL, SCHEMA_VERSION, RunConfig, chart_grid, config_hash, with_seed

log = logging.getLogger(__name__)


def configure_logging(level: str = LOG_LEVEL) -> None:
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO), format="%(message)s")


def safe_task(callback: Callable[[Any], Any], task_name: str):
    """Execute a pipeline step and log success/failure in terminal.

    Engine errors pass through unchanged; anything else becomes a NumericalError.
    """
    try:
        output = callback(None)
        log.info("✅ %s succeeded.", task_name)
        return output
    except EngineError as e:
        log.error("❌ %s failed: %s", task_name, e)
        raise
    except Exception as e:
        log.error("❌ %s failed: %s", task_name, e)
        raise NumericalError(f"{task_name} failed: {e}")


# -------------------------
# Manifest
# -------------------------
class RunManifest(BaseModel):
    schema_version: str = SCHEMA_VERSION
    command: str
    config_hash: str = Field(description="SHA-256 of the canonical config JSON")
    seed: int
    versions: Dict[str, str] = Field(description="engine and library versions")
    status: str = Field(description="'ok' or 'aborted'")
    measured: Dict[str, float] = Field(default_factory=dict)
    checks: Dict[str, str] = Field(default_factory=dict, description="held, held-with-slack or violated")
    artifacts: Dict[str, str] = Field(default_factory=dict, description="file name -> SHA-256")
    error: Optional[Dict[str, Any]] = None


def library_versions() -> Dict[str, str]:
    return {
        "corrugation": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
        "trimesh": trimesh.__version__,
    }


@dataclass
class Outcome:
    measured: Dict[str, float] = field(default_factory=dict)
    checks: Dict[str, str] = field(default_factory=dict)
    artifacts: List[Path] = field(default_factory=list)

    def add_measured(self, prefix: str, values: Dict[str, Any]) -> None:
        for key, value in values.items():
            if isinstance(value, (int, float, bool, np.floating, np.integer)):
                self.measured[f"{prefix}.{key}"] = float(value)

    def add_checks(self, prefix: str, values: Dict[str, str]) -> None:
        for key, value in values.items():
            self.checks[f"{prefix}.{key}"] = value


def _grid(config: RunConfig):
    spec = chart_grid(config)
    return make_grid(spec.extent, spec.resolution, spec.periodic)


def _write_map(config: RunConfig, u: MapField, out: Path, outcome: Outcome) -> None:
    if config.output.mesh:
        outcome.artifacts.append(export_mesh(u, out / "map.obj", config.output.projection))
    if config.output.fields:
        outcome.artifacts.extend(save_field(u, out / "map").values())


# -------------------------
# Pipelines
# -------------------------
def _stage_params(spec, lam: float, delta: float) -> StageParams:
    extra = {key: getattr(spec, key) for key in ("sigma0", "gamma") if hasattr(spec, key)}
    return StageParams(delta=delta, lam=lam, tau=spec.tau, C0=spec.C0, **extra)


def run_stage_pipeline(config: RunConfig, out: Path) -> Outcome:
    s = config.stage
    grid = _grid(config)
    u, rho, H, G = flat_benchmark(grid, s.delta, s.lam, compact=s.compact)
    params = _stage_params(s, s.lam, s.delta)
    result = safe_task(lambda _: perform_stage(u, rho, H, G, params, rng_seed=config.seed), "Corrugation Stage")
    outcome = Outcome()
    cert = result.certificate
    outcome.add_measured("stage", cert.measured)
    outcome.add_measured("stage", {
        "e1_sup": cert.e1_sup, "e2_sup": cert.e2_sup, "error_split_gap": cert.error_split_gap,
        "decomposition_identity": cert.decomposition_identity, "support_excess": cert.support_excess,
    })
    outcome.add_checks("stage", cert.checks)
    outcome.artifacts.extend(export_report(cert, out, "stage_certificate").values())
    outcome.artifacts.append(dump_json(stage_certificate(result), out / "certificate_ledger.json"))
    _write_map(config, result.v, out, outcome)
    return outcome


def run_ladder_pipeline(config: RunConfig, out: Path) -> Outcome:
    s = config.ladder
    grid = _grid(config)
    results = []
    outcome = Outcome()
    for lam in s.lams:
        u, rho, H, G = flat_benchmark(grid, s.delta, lam)
        params = _stage_params(s, lam, s.delta)
        result = safe_task(lambda _: perform_stage(u, rho, H, G, params, rng_seed=config.seed), f"Ladder Stage lambda={lam:g}")
        outcome.add_checks(f"lambda_{lam:g}", result.certificate.checks)
        results.append(result)
    fit = safe_task(lambda _: ladder_fit(results, s.lams, s.tau), "Ladder Fit")
    outcome.add_measured("slope", fit.slopes)
    outcome.measured["c1_spread"] = fit.c1_spread
    outcome.artifacts.extend(export_report(fit, out, "ladder").values())
    return outcome


def _chart_metric(grid, metric: str, amplitude: float, period: Optional[float] = None):
    """Id, or (1 + amplitude sin(x1)) Id; `period` rescales x1 so the sine closes up on a torus."""
    if metric == "flat":
        return identity_metric(grid)
    X1, _ = grid.mesh()
    phase = X1 if period is None else 2 * np.pi * X1 / period
    return identity_metric(grid, 1.0 + amplitude * np.sin(phase))


def run_iterate_pipeline(config: RunConfig, out: Path) -> Outcome:
    s = config.iterate
    grid = _grid(config)
    G = _chart_metric(grid, s.metric, s.amplitude)
    if s.schedule == "fitted":
        fit = safe_task(lambda _: fit_schedule(grid, s.theta, s.b, s.delta1, s.Q_max, s.decay), "Schedule")
        schedule, stage_factor, lambda0 = fit.schedule, fit.stage_factor, fit.lambda0
    else:
        schedule = safe_task(
            lambda _: build_schedule(s.A, s.b, s.theta, s.delta1, s.Q_max, ordering=s.ordering), "Schedule",
        )
        stage_factor, lambda0 = s.stage_factor, LAMBDA0_DEFAULT
    m = s.target_dim or max(8, 2 + 6 * s.Q_max)
    triple0 = flat_start_triple(grid, G, s.start_scale, s.theta, schedule.A, m)
    skeleton = SkeletonDescriptor(s.skeleton, s.skeleton_spacing)
    triple, report = safe_task(
        lambda _: iterate_to_isometry(
            triple0, schedule, skeleton, s.Q_max, stage_factor, s.C0, s.sigma0, lambda0, rng_seed=config.seed,
        ),
        "Inductive Iteration",
    )
    outcome = Outcome()
    outcome.add_measured("iterate", {
        "levels_completed": report.levels_completed,
        "final_defect_sup": report.final_defect_sup,
        "schedule_tail": report.schedule_tail,
        "theta_applied": report.theta_applied,
        "locality_ok": report.locality_ok,
    })
    for row in report.rows:
        outcome.add_checks(f"q{row.q}", row.rho_properties)
    outcome.artifacts.extend(export_report(schedule, out, "schedule").values())
    outcome.artifacts.extend(export_report(report, out, "convergence").values())
    _write_map(config, triple.u, out, outcome)
    return outcome


def _extension_problem(spec):
    if spec.problem == "circle":
        return circle_problem(spec.radius, spec.epsilon, spec.resolution, spec.target_dim)
    if spec.problem == "flat_line":
        return flat_line_problem(epsilon=spec.epsilon, resolution=spec.resolution, target_dim=spec.target_dim)
    return load_problem(spec.problem)


def run_extend_pipeline(config: RunConfig, out: Path) -> Outcome:
    s = config.extend
    sd, collar = safe_task(lambda _: _extension_problem(s), "Problem Setup")
    params = ExtensionParams(alpha=s.alpha, K=s.K, layers=s.layers, theta0=s.theta0, C0=s.C0)
    outcome = Outcome()
    if s.iterate:
        u, conv, ext_report, gap = safe_task(
            lambda _: isometric_extension(
                sd, collar, params, s.b, config.iterate.Q_max, s.decay, s.defect_target, rng_seed=config.seed,
            ),
            "Isometric Extension",
        )
        outcome.artifacts.extend(export_report(conv, out, "convergence").values())
        outcome.measured["iterate.levels_completed"] = float(conv.levels_completed)
        outcome.measured["iterate.final_defect_sup"] = conv.final_defect_sup
    else:
        triple, ext_report = safe_task(lambda _: adapted_extension(sd, collar, params, config.seed), "Adapted Extension")
        u = triple.u
        gap = safe_task(lambda _: connection_gap(u, sd), "Connection Gap")
    outcome.add_measured("extend", {
        "margin_min": ext_report.margin_min, "margin_max": ext_report.margin_max,
        "h_sup_covered": ext_report.h_sup_covered, "strip_depth": ext_report.strip_depth,
        "rho_slope": ext_report.rho_slope,
    })
    outcome.add_measured("gap", {"gap_min": gap.gap_min, "gap_max": gap.gap_max})
    outcome.checks["extend.boundary_pinned"] = "held" if ext_report.boundary_pinned else "violated"
    outcome.checks["extend.margin_preserved"] = "held" if ext_report.margin_preserved else "violated"
    outcome.artifacts.extend(export_report(ext_report, out, "extension").values())
    outcome.artifacts.append(dump_json(gap, out / "gap.json"))
    _write_map(config, u, out, outcome)
    return outcome


def run_embed_pipeline(config: RunConfig, out: Path) -> Outcome:
    s = config.embed
    spec = chart_grid(config)
    grid = make_grid(spec.extent, spec.resolution, (True, True))
    G = _chart_metric(grid, s.metric, s.amplitude, period=grid.extent[0])
    u, report = safe_task(
        lambda _: global_embed_demo(
            G, s.theta, s.b, s.eps_target, s.Q_max, s.sigma0, decay=s.decay, defect_target=s.defect_target,
            rng_seed=config.seed,
        ),
        "Torus Embedding",
    )
    outcome = Outcome()
    outcome.add_measured("embed", {
        "levels_completed": report.levels_completed,
        "final_defect_sup": report.final_defect_sup,
        "theta_applied": report.theta_applied,
    })
    outcome.add_measured("start", report.start)
    outcome.artifacts.extend(export_report(report, out, "convergence").values())
    _write_map(config, u, out, outcome)
    return outcome


def rigidity_study(kappa: float, resolutions, epsilon: float = 0.1):
    spacings, gaps = [], []
    for n in resolutions:
        sd, collar, u = product_problem(kappa, (n, 16), epsilon)
        report = connection_gap(u, sd)
        spacings.append(collar.grid.spacing[0])
        gaps.append(max(abs(report.gap_min), abs(report.gap_max)))
    return refinement_slope("connection_gap", spacings, gaps)


def holder_study(grid, exponent: float = 1.4):
    """|x1 - c|^exponent has a gradient of Hölder exponent exponent - 1."""
    X1, _ = grid.mesh()
    c = grid.axis(0)[grid.shape[0] // 2]
    f = ScalarField(grid, np.abs(X1 - c) ** exponent)
    h = grid.h
    return holder_exponent_estimate(f, [8 * h, 16 * h, 32 * h, 64 * h])


def run_verify_pipeline(config: RunConfig, out: Path) -> Outcome:
    s = config.verify
    outcome = Outcome()
    if s.target == "rigidity":
        report = safe_task(lambda _: rigidity_study(s.curvature, s.resolutions), "Rigidity Surrogate")
        outcome.add_measured("rigidity", {"slope": report.slope, "gap_finest": report.values[-1]})
        outcome.artifacts.append(dump_json(report, out / "rigidity.json"))
        outcome.artifacts.append(write_table(
            [{"h": h, "gap": g} for h, g in zip(report.spacings, report.values)], out / "rigidity.csv",
        ))
    elif s.target == "flexibility":
        sd, collar = circle_problem(resolution=(s.resolutions[-1], 32))
        u = short_extension(sd, collar)
        gap = safe_task(lambda _: connection_gap(u, sd), "Flexibility Gap")
        outcome.add_measured("flexibility", {"gap_min": gap.gap_min, "gap_max": gap.gap_max})
        outcome.artifacts.append(dump_json(gap, out / "gap.json"))
    else:
        spec = chart_grid(config)
        grid = make_grid(spec.extent, spec.resolution, spec.periodic)
        fit = safe_task(lambda _: holder_study(grid), "Hölder Fit")
        outcome.add_measured("holder", {"exponent": fit.exponent, "residual": fit.residual})
        outcome.artifacts.append(dump_json(fit, out / "holder.json"))
    return outcome


PIPELINES: Dict[str, Callable[[RunConfig, Path], Outcome]] = {
    "stage": run_stage_pipeline,
    "ladder": run_ladder_pipeline,
    "iterate": run_iterate_pipeline,
    "extend": run_extend_pipeline,
    "embed-torus": run_embed_pipeline,
    "verify": run_verify_pipeline,
}


def run(config: RunConfig, out_dir) -> RunManifest:
    """Run one pipeline and write manifest.json next to its artifacts.

    An EngineError still writes a manifest (status 'aborted') before it is re-raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = dict(
        command=config.command,
        config_hash=config_hash(config),
        seed=config.seed,
        versions=library_versions(),
    )
    log.info("🚀 [CLI] %s run, config %s", config.command, base["config_hash"][:12])
    try:
        try:
            outcome = PIPELINES[config.command](config, out)
        except ValidationError as exc:
            raise ConfigError(f"invalid derived parameters: {exc}")
    except EngineError as exc:
        manifest = RunManifest(status="aborted", error=exc.to_dict(), **base)
        dump_json(manifest, out / "manifest.json")
        raise
    manifest = RunManifest(
        status="ok",
        measured=dict(sorted(outcome.measured.items())),
        checks=dict(sorted(outcome.checks.items())),
        artifacts=sha256_of(outcome.artifacts),
        **base,
    )
    dump_json(manifest, out / "manifest.json")
    return manifest


def load_config(path, command: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Parse and validate a JSON config; every failure is a ConfigError."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if command is not None:
        if raw.get("command", command) != command:
            raise ConfigError(f"config command {raw.get('command')!r} does not match subcommand {command!r}")
        raw["command"] = command
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}")
    return with_seed(config, seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="corrugation", description="Convex-integration corrugation engine")
    parser.add_argument("command", choices=sorted(PIPELINES), help="pipeline to run")
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)
    configure_logging()
    try:
        config = load_config(args.config, args.command, args.seed)
        run(config, args.out)
    except EngineError as exc:
        log.error("❌ [CLI] %s: %s", type(exc).__name__, exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
