"""Command-line surface: one subcommand per experiment."""
import argparse
import logging
import sys
import traceback
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from app.core import config as settings
from app.core.errors import CriterionFailure, SnlsError
from app.db.storage import ManifestStore, file_sha256, task_key
from app.models.models import GridSpec, ManifestEntry, NormKind, NormSpec, RunManifest, SimConfig
from app.services import harness
from app.services.noise_field import is_resolved
from app.services.results import emit_results

# Configure logging
logger = logging.getLogger(__name__)

COMMANDS = ("sample-noise", "simulate", "converge", "energy-audit", "stochastic-bounds", "renorm-demo")
OVERRIDES = (
    ("--eps", "eps", float), ("--seed", "seed", int), ("--grid-n", "grid_n", int), ("--box-L", "box_L", float),
    ("--dt", "dt", float), ("--T", "T", float), ("--p", "p", float), ("--lambda", "lam", float),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snls", description="Stochastic NLS numerical laboratory")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="logging level (default: SNLS_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="flat key = value run config")
        for flag, dest, kind in OVERRIDES:
            cmd.add_argument(flag, dest=dest, type=kind, default=None)
        cmd.add_argument("--out-dir", "--out", dest="out_dir", default=settings.OUT_DIR)
        cmd.add_argument("--workers", type=int, default=None)
    return parser


def _split(values: Dict[str, object]):
    sim = {k: v for k, v in values.items() if k in settings.SIM_KEYS}
    campaign = {k: v for k, v in values.items() if k in settings.CAMPAIGN_KEYS}
    return sim, campaign


def default_ladder(grid: GridSpec) -> List[float]:
    """Every dyadic eps in (0, 1/2) resolved by the grid."""
    ladder = []
    eps = 0.25
    while is_resolved(grid, eps):
        ladder.append(eps)
        eps /= 2
    return ladder


def _record(store: ManifestStore, command: str, config: SimConfig, paths) -> None:
    payload = config.model_dump(mode="json")
    store.append(ManifestEntry(
        task_id=task_key(command, payload), kind=command, config=payload,
        files={store.relative(p): file_sha256(p) for p in paths},
        extras={"version": harness.VERSION},
    ))


def _write_run(store: ManifestStore, command: str, config: SimConfig, first_entry: int) -> None:
    store.write_run(RunManifest(
        version=harness.VERSION, command=command, config=config.model_dump(mode="json"),
        seeds={"seed": config.seed, "stream": config.stream}, entries=store.entries()[first_entry:],
    ))


def _dispatch(command: str, config: SimConfig, campaign: Dict[str, object], store: ManifestStore,
              workers: int) -> int:
    grid = config.grid
    out_dir = str(store.root)
    ladder = settings.parse_ladder(campaign["ladder"]) if "ladder" in campaign else default_ladder(grid)
    gap_norm = NormSpec(kind=NormKind.SOBOLEV_HS, alpha=float(campaign.get("norm_s", 1.5)),
                        mu=float(campaign.get("norm_mu", 0.1)))

    if command == "sample-noise":
        paths, manifest = harness.sample_noise(config, out_dir)
        logger.info(f"c_eps = {manifest['c_eps']:.6f}; wrote {len(paths)} fields")
        return 0
    if command == "simulate":
        harness.simulate(config, out_dir)
        return 0
    if command == "converge":
        report = harness.run_convergence(config, ladder, gap_norm, store=store, workers=workers)
    elif command == "renorm-demo":
        report = harness.run_renormalization_demo(config, ladder, gap_norm, store=store, workers=workers)
    elif command == "energy-audit":
        report, traj = harness.run_energy_audit(config)
        _record(store, command, config, emit_results([traj.ledger], out_dir, prefix="audit"))
    else:
        bounds = {key: float(campaign[key]) for key in ("r", "delta", "alpha", "a") if key in campaign}
        report = harness.run_stochastic_campaign(grid, ladder, int(campaign.get("realizations", 100)),
                                                 seed=config.seed, out_dir=out_dir, workers=workers, **bounds)
    if command != "stochastic-bounds":
        _record(store, command, config, emit_results([report], out_dir, prefix=command))
    if not report.passed:
        raise CriterionFailure(f"{command}: pass criterion not met")
    return 0


def run_command(args: argparse.Namespace) -> int:
    values = settings.load_config_file(args.config) if args.config else {}
    values = settings.merge_overrides(values, {dest: getattr(args, dest) for _, dest, _ in OVERRIDES})
    sim_values, campaign = _split(values)
    if args.command == "energy-audit":
        sim_values.setdefault("snapshot_every", 2)
    config = SimConfig(**sim_values)
    workers = args.workers or int(campaign.get("workers", settings.WORKERS))
    store = ManifestStore(args.out_dir)
    first_entry = len(store.entries())
    try:
        return _dispatch(args.command, config, campaign, store, workers)
    finally:
        _write_run(store, args.command, config, first_entry)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    try:
        return run_command(args)
    except ValidationError as exc:
        logger.error(f"Invalid configuration: {exc}")
        return 2
    except SnlsError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        if exc.exit_code == 3:
            logger.error(traceback.format_exc())
        return exc.exit_code
    except Exception as exc:
        logger.error(f"Unexpected error: {exc}")
        logger.error(traceback.format_exc())
        return 3


if __name__ == "__main__":
    sys.exit(main())
