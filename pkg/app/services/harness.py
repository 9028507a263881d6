"""
Experiment orchestration: epsilon ladders, renormalization demonstration, stochastic campaigns,
energy audits and the persistence behind the command-line subcommands.
"""
import logging
import math
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import IntegratorAbort, UnderResolvedError
from app.db.storage import ManifestStore, file_sha256, read_snapshot, task_key, write_csv, write_snapshot
from app.models.models import (
    AuditReport,
    ConvergenceReport,
    GridSpec,
    ManifestEntry,
    NormKind,
    NormSpec,
    RenormalizationReport,
    SimConfig,
    StochasticReport,
)
from app.services import energetics
from app.services.dynamics import Trajectory, evolve, relative_drift
from app.services.gauge import GaugeContext, build_context
from app.services.lp_besov import norm
from app.services.noise_field import (
    build_bundle,
    compute_c_eps,
    field_hash,
    fit_rate,
    is_resolved,
    sample_white_noise,
    verify_stochastic_bounds,
)
from app.services.results import emit_results
from app.services.spectral_grid import Field, constant, gaussian

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_GAP_NORM = NormSpec(kind=NormKind.SOBOLEV_HS, alpha=1.5, mu=0.1)
DEFAULT_L2_DECAY = 0.25
# Splitting error grows like dt^2 / eps^4: each rung steps at dt <= STEP_FACTOR * eps^2
STEP_FACTOR = 0.025
MIN_RUNGS = 3
VERSION = "1.0.0"


def default_datum(grid: GridSpec, width: float = 1.0) -> Field:
    """v0(x) = exp(-|x|^2 / width^2)."""
    return gaussian(grid, width)


def resolvable_ladder(grid: GridSpec, ladder: Sequence[float]) -> List[float]:
    return [e for e in ladder if 0 < e < 0.5 and is_resolved(grid, e)]


def check_ladder(grid: GridSpec, ladder: Sequence[float]) -> List[float]:
    """Sort a ladder coarse to fine, refusing it when any member is not resolved."""
    ladder = sorted((float(e) for e in ladder), reverse=True)
    usable = resolvable_ladder(grid, ladder)
    if not ladder or len(usable) != len(ladder):
        raise UnderResolvedError(
            f"ladder {ladder} violates eps >= 4h on {grid.label()}; resolvable sub-ladder: {usable}",
            resolvable=usable,
        )
    return ladder


def _config_payload(config: SimConfig) -> Dict[str, object]:
    return config.model_dump(mode="json")


def save_trajectory(store: ManifestStore, task_id: str, kind: str, traj: Trajectory,
                    extras: Optional[Dict[str, object]] = None) -> ManifestEntry:
    """Persist snapshots (and the ledger, if any) of a trajectory and record them."""
    folder = store.resolve(task_id)
    files: Dict[str, str] = {}
    for i, v in enumerate(traj.snapshots):
        path = folder / f"snapshot_{i:05d}.bin"
        files[store.relative(path)] = write_snapshot(path, v)
    if traj.ledger is not None:
        path = folder / "ledger.csv"
        files[store.relative(path)] = write_csv(path, energetics.LEDGER_COLUMNS,
                                                (row.values() for row in traj.ledger.rows))
    entry = ManifestEntry(
        task_id=task_id, kind=kind, config=_config_payload(traj.config), files=files,
        extras={"times": list(traj.times), "bundle": traj.bundle_manifest, **(extras or {})},
        steps=traj.steps, wall_seconds=traj.wall_seconds,
    )
    return store.append(entry)


def load_trajectory(store: ManifestStore, entry: ManifestEntry, config: SimConfig) -> Trajectory:
    snapshots = [read_snapshot(store.resolve(rel)) for rel in sorted(entry.files) if rel.endswith(".bin")]
    return Trajectory(config=config, times=list(entry.extras["times"]), snapshots=snapshots,
                      bundle_manifest=dict(entry.extras.get("bundle", {})), steps=entry.steps)


def rung_config(config: SimConfig, eps: float, step_factor: float = STEP_FACTOR) -> SimConfig:
    """
    Configuration of one ladder rung: config.dt halved until dt <= step_factor * eps^2.

    snapshot_every doubles with every halving, so all rungs sample the same times.
    """
    halvings = 0
    while config.dt / 2 ** halvings > step_factor * eps * eps:
        halvings += 1
    return config.model_copy(update={"eps": eps, "dt": config.dt / 2 ** halvings,
                                     "snapshot_every": config.snapshot_every * 2 ** halvings})


def halved_step(config: SimConfig) -> SimConfig:
    return config.model_copy(update={"dt": config.dt / 2, "snapshot_every": 2 * config.snapshot_every})


def _run_member(config: SimConfig, v0: Field, xi: Field, store: Optional[ManifestStore],
                kind: str = "ladder_member") -> Trajectory:
    xi_sha = field_hash(xi)
    task_id = task_key(kind, {"config": _config_payload(config), "xi": xi_sha, "datum": field_hash(v0)})
    if store is not None:
        entry = store.completed(task_id)
        if entry is not None:
            logger.info(f"Skipping eps={config.eps:g}: task {task_id} already completed")
            return load_trajectory(store, entry, config)
    traj = evolve(config, v0, xi=xi, record_ledger=False)
    if store is not None:
        save_trajectory(store, task_id, kind, traj, {"xi_sha256": xi_sha})
    return traj


def _ladder_inputs(config: SimConfig, datum: Optional[Field], zero_noise: bool) -> Tuple[Field, Field]:
    grid = config.grid
    v0 = datum if datum is not None else default_datum(grid, config.datum_width)
    xi = constant(grid, 0.0) if zero_noise else sample_white_noise(grid, config.seed, config.stream)
    return v0, xi


def run_ladder(config: SimConfig, ladder: Sequence[float], datum: Optional[Field] = None, zero_noise: bool = False,
               store: Optional[ManifestStore] = None, workers: Optional[int] = None,
               step_factor: float = STEP_FACTOR) -> Tuple[List[Trajectory], str]:
    """
    Evolve one trajectory per epsilon, all driven by the same white-noise realization.

    Each rung steps with rung_config, so finer rungs take proportionally smaller steps.

    Returns:
        Trajectories ordered coarse to fine, and the sha256 of the shared noise
    """
    grid = config.grid
    ladder = check_ladder(grid, ladder)
    v0, xi = _ladder_inputs(config, datum, zero_noise)
    configs = [rung_config(config, e, step_factor) for e in ladder]
    logger.info(f"Running ladder {ladder} on {grid.label()} to T={config.T:g}, "
                f"dt {['%.3g' % c.dt for c in configs]}")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        trajectories = list(pool.map(lambda cfg: _run_member(cfg, v0, xi, store), configs))
    return trajectories, field_hash(xi)


def step_error(config: SimConfig, finest: Trajectory, norm_spec: NormSpec, datum: Optional[Field] = None,
               zero_noise: bool = False, store: Optional[ManifestStore] = None) -> float:
    """Sup-in-time gap between the finest rung and a rerun of it at half the step."""
    v0, xi = _ladder_inputs(config, datum, zero_noise)
    rerun = _run_member(halved_step(finest.config), v0, xi, store, kind="step_check")
    return _sup_gap(finest, rerun, norm_spec)


def _short_ladder(ladder: Sequence[float]) -> bool:
    if len(ladder) < MIN_RUNGS:
        logger.warning(f"Ladder {list(ladder)} has fewer than {MIN_RUNGS} rungs; no trend can be tested")
        return True
    return False


def _sup_gap(a: Trajectory, b: Trajectory, spec: NormSpec, stride: int = 1,
             phases: Optional[Tuple[float, float]] = None) -> float:
    gaps = []
    for i in range(0, len(a.snapshots), stride):
        t = a.times[i]
        va, vb = a.snapshots[i].values, b.snapshots[i].values
        if phases is not None:
            va = va * np.exp(1j * phases[0] * t)
            vb = vb * np.exp(1j * phases[1] * t)
        gaps.append(norm(a.snapshots[i].with_values(va - vb), spec))
    return float(max(gaps))


def _strictly_decreasing(values: Sequence[float]) -> bool:
    """A trend needs at least two values."""
    return len(values) >= 2 and all(b < a for a, b in zip(values, values[1:]))


def run_convergence(config: SimConfig, ladder: Sequence[float], norm_spec: NormSpec = DEFAULT_GAP_NORM,
                    delta: float = DEFAULT_L2_DECAY, datum: Optional[Field] = None, zero_noise: bool = False,
                    store: Optional[ManifestStore] = None, workers: Optional[int] = None,
                    step_factor: float = STEP_FACTOR) -> ConvergenceReport:
    """
    Sup-in-time gaps between consecutive ladder members.

    Args:
        config: Shared configuration; eps varies along the ladder and dt shrinks with it
        ladder: Dyadic epsilon values, every one resolved (eps >= 4h)
        norm_spec: Norm of the main gaps
        delta: Decay of the companion L^2_{-delta} gaps
        datum: Initial datum (Gaussian of config.datum_width by default)
        zero_noise: Drive every member with xi = 0
        store: Manifest store enabling persistence and resumption
        workers: Thread count
        step_factor: Rung steps satisfy dt <= step_factor * eps^2

    Returns:
        ConvergenceReport; passed when at least three rungs give strictly decreasing gaps in both
        norms and the finest rung's step error stays below the finest gap
    """
    short = _short_ladder(ladder)
    trajectories, xi_sha = run_ladder(config, ladder, datum, zero_noise, store, workers, step_factor)
    ladder = sorted(ladder, reverse=True)
    l2_spec = NormSpec(kind=NormKind.LEBESGUE, p=2.0, mu=-delta)
    pairs = list(zip(trajectories, trajectories[1:]))
    gaps = [_sup_gap(a, b, norm_spec) for a, b in pairs]
    l2_gaps = [_sup_gap(a, b, l2_spec) for a, b in pairs]
    coarse = [_sup_gap(a, b, norm_spec, stride=2) for a, b in pairs]
    sensitivity = max((abs(g - c) / g for g, c in zip(gaps, coarse) if g > 0), default=0.0)
    err = step_error(config, trajectories[-1], norm_spec, datum, zero_noise, store)
    passed = (not short and _strictly_decreasing(gaps) and _strictly_decreasing(l2_gaps)
              and err < gaps[-1])
    report = ConvergenceReport(
        ladder=list(ladder), norm_label=norm_spec.label(), times=list(trajectories[0].times),
        gaps=gaps, l2_gaps=l2_gaps, rate=fit_rate(ladder[1:], gaps), cadence_sensitivity=float(sensitivity),
        step_dts=[t.config.dt for t in trajectories], step_error=err, xi_hash=xi_sha, passed=passed,
    )
    if gaps and err >= gaps[-1]:
        logger.warning(f"Step error {err:.4g} of the finest rung exceeds its gap {gaps[-1]:.4g}")
    logger.info(f"Convergence gaps {['%.4g' % g for g in gaps]} passed={report.passed}")
    return report


def run_renormalization_demo(config: SimConfig, ladder: Sequence[float], norm_spec: NormSpec = DEFAULT_GAP_NORM,
                             datum: Optional[Field] = None, zero_noise: bool = False,
                             store: Optional[ManifestStore] = None,
                             workers: Optional[int] = None) -> RenormalizationReport:
    """
    Compare e^{Y_eps} u_eps across the ladder with and without the phase e^{i c_eps t}.

    u_eps solves the unrenormalized smoothed equation, so the ladder runs with renormalize off.
    """
    short = _short_ladder(ladder)
    off = config.model_copy(update={"renormalize": False})
    trajectories, _ = run_ladder(off, ladder, datum, zero_noise, store, workers)
    ladder = sorted(ladder, reverse=True)
    c_values = [compute_c_eps(config.grid, e) for e in ladder]
    corrected, uncorrected = [], []
    for k, (a, b) in enumerate(zip(trajectories, trajectories[1:])):
        corrected.append(_sup_gap(a, b, norm_spec, phases=(c_values[k], c_values[k + 1])))
        uncorrected.append(_sup_gap(a, b, norm_spec))
    mismatch = 0.0
    for traj, c in zip(trajectories, c_values):
        v0 = traj.snapshots[0]
        phased = v0.values * np.exp(1j * c * traj.times[0])
        mismatch = max(mismatch, float(np.max(np.abs(phased - v0.values))))
    passed = not short and _strictly_decreasing(corrected) and uncorrected[-1] >= 10.0 * corrected[-1]
    logger.info(f"Renormalization demo: corrected {corrected}, uncorrected {uncorrected}")
    return RenormalizationReport(
        ladder=list(ladder), c_eps=c_values, norm_label=norm_spec.label(),
        corrected_gaps=corrected, uncorrected_gaps=uncorrected, initial_mismatch=mismatch, passed=passed,
    )


def run_stochastic_campaign(grid: GridSpec, eps_list: Sequence[float], realizations: int, seed: int = 0,
                            out_dir: Optional[str] = None, workers: Optional[int] = None,
                            **bounds) -> StochasticReport:
    """Run the Monte Carlo bounds and optionally persist the report with a manifest entry."""
    report = verify_stochastic_bounds(grid, eps_list, realizations, seed=seed, workers=workers, **bounds)
    if out_dir is not None:
        store = ManifestStore(out_dir)
        paths = emit_results([report], out_dir, prefix=f"seed{seed}")
        files = {store.relative(p): file_sha256(p) for p in paths}
        store.append(ManifestEntry(
            task_id=task_key("stochastic", {"grid": grid.model_dump(), "eps": list(eps_list),
                                            "M": realizations, "seed": seed}),
            kind="stochastic", config={"grid": grid.model_dump(), "eps_list": list(eps_list),
                                       "realizations": realizations, "seed": seed, **bounds},
            files=files,
        ))
    return report


def run_energy_audit(config: SimConfig, datum: Optional[Field] = None, context: Optional[GaugeContext] = None,
                     xi: Optional[Field] = None) -> Tuple[AuditReport, Trajectory]:
    """
    Audit the modified-energy identity at config.dt and at 2*dt, reporting the observed order.

    The coarse run samples the same times as the fine one when the cadence allows it.
    """
    grid = config.grid
    v0 = datum if datum is not None else default_datum(grid, config.datum_width)
    if context is None:
        context = build_context(build_bundle(grid, config.seed, config.eps, config.stream, xi=xi), config.p)
    fine_traj = evolve(config, v0, context=context)
    fine = energetics.energy_audit(fine_traj, context, config.lam, config.p)
    coarse_cfg = config.model_copy(update={"dt": 2 * config.dt,
                                           "snapshot_every": max(1, config.snapshot_every // 2)})
    coarse = energetics.energy_audit(evolve(coarse_cfg, v0, context=context), context, config.lam, config.p)
    order = None
    if fine.max_residual > 0 and coarse.max_residual > 0:
        order = math.log2(coarse.max_residual / fine.max_residual)
    report = fine.model_copy(update={"coarse_max_residual": coarse.max_residual, "order": order,
                                     "passed": fine.passed and order is not None and order >= math.log2(3.0)})
    logger.info(f"Energy audit: max residual {fine.max_residual:.3g} (2dt: {coarse.max_residual:.3g}), order {order}")
    return report, fine_traj


def sample_noise(config: SimConfig, out_dir: str) -> Tuple[List[Path], Dict[str, object]]:
    """Build one bundle and write its fields plus a manifest entry."""
    store = ManifestStore(out_dir)
    bundle = build_bundle(config.grid, config.seed, config.eps, config.stream)
    folder = store.resolve(f"noise_seed{config.seed}_stream{config.stream}_eps{config.eps:g}")
    fields = {
        "xi": bundle.xi, "xi_eps": bundle.xi_eps, "Y": bundle.Y, "Y_eps": bundle.Y_eps,
        "grad_Y_eps_1": bundle.grad_Y_eps[0], "grad_Y_eps_2": bundle.grad_Y_eps[1],
        "wick": bundle.wick, "phi_xi_eps": bundle.phi_xi_eps, "v_tilde": bundle.v_tilde,
        "green_hat": bundle.green_hat,
    }
    files = {}
    paths = []
    for name, f in fields.items():
        path = folder / f"{name}.bin"
        files[store.relative(path)] = write_snapshot(path, f)
        paths.append(path)
    manifest = bundle.manifest()
    store.append(ManifestEntry(
        task_id=task_key("noise", _config_payload(config)), kind="noise",
        config=_config_payload(config), files=files, extras={"bundle": manifest},
    ))
    return paths, manifest


def simulate(config: SimConfig, out_dir: str, datum: Optional[Field] = None) -> Trajectory:
    """
    Run one trajectory, persisting snapshots and ledger; completed tasks are reloaded.

    On a numerical abort the last good state is written before the error propagates.
    """
    store = ManifestStore(out_dir)
    v0 = datum if datum is not None else default_datum(config.grid, config.datum_width)
    task_id = task_key("simulate", {"config": _config_payload(config), "datum": field_hash(v0)})
    entry = store.completed(task_id)
    if entry is not None:
        logger.info(f"Task {task_id} already completed; loading stored snapshots")
        return load_trajectory(store, entry, config)
    started = time.perf_counter()
    try:
        traj = evolve(config, v0)
    except IntegratorAbort as exc:
        logger.error(traceback.format_exc())
        if exc.last_good is not None:
            path = store.resolve(task_id) / "last_good.bin"
            digest = write_snapshot(path, exc.last_good)
            store.append(ManifestEntry(task_id=f"{task_id}-aborted", kind="aborted",
                                       config=_config_payload(config), files={store.relative(path): digest},
                                       extras={"time": exc.time}))
        raise
    traj.wall_seconds = time.perf_counter() - started
    save_trajectory(store, task_id, "simulate", traj)
    if traj.ledger is not None:
        emit_results([traj.ledger], str(store.resolve(task_id)), prefix="trajectory")
        logger.info(f"Mass drift over the run: {relative_drift(traj.ledger.column('mass')):.3g}")
    return traj
