"""``bhlab <subcommand> --config FILE [--seed S] [--out DIR]``.

Each subcommand validates the whole configuration, checks capacity, then
computes and writes its tables plus ``manifest_<subcommand>.json``.
Exit codes: 0 ok, 2 configuration, 3 capacity, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .classical import (
    PhasePoint,
    classical_imbalance,
    count_clusters,
    fraction_regular,
    integrate,
    sample_energy_shell,
)
from .config import RunConfig, dump_config, load_config, parse_config
from .critical import search_critical_points, write_critical_points
from .errors import BhlabError, CapacityError, ConfigError
from .fock import solve_model, write_eigenvalues
from .quantum import (
    build_coherent_state,
    build_quadruplet_blocks,
    decompose_in_eigenbasis,
    ldos,
    max_occupation_site,
    nonzero_fraction,
    occupation_series,
    write_histogram,
    write_quadruplets,
    write_series,
)
from .spectra import WindowSpec, sector_subsequences, windowed_regularity_scan, write_scan
from .tables import write_table
from .twa import (
    CloudSpec,
    ensemble_energy_histogram,
    propagate_ensemble,
    sample_cloud,
    standard_observables,
    write_ensemble,
)

QUANTUM_COMMANDS = {"spectrum", "quadruplets", "quench", "ldos", "chaos-scan"}


class Run:
    """Output directory, table format and the manifest being assembled."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.outputs: list[str] = []
        self.summary: dict = {}

    def path(self, stem: str) -> Path:
        ext = "csv" if self.cfg.format == "csv" else "jsonl"
        p = self.out / f"{stem}.{ext}"
        self.outputs.append(p.name)
        return p


def _point(q, p, project: bool) -> PhasePoint:
    q, p = np.asarray(q, float), np.asarray(p, float)
    try:
        return PhasePoint.projected(q, p) if project else PhasePoint(q, p)
    except ValueError as exc:
        raise ConfigError(f"initial point: {exc}") from exc


def _times(t_max: float, n: int, spacing: str) -> np.ndarray:
    if spacing == "linear":
        return np.linspace(0.0, t_max, n)
    return np.concatenate([[0.0], np.logspace(-1, np.log10(t_max), n - 1)])


# --- subcommands ---------------------------------------------------------------


def cmd_spectrum(run: Run):
    sol = solve_model(run.cfg.model.params(), run.cfg.model.max_dim, reflection=run.cfg.spectrum.reflection)
    for sys_ in sol.systems:
        write_eigenvalues(run.path(f"eigenvalues_k{sys_.k_index}"), [sys_], sol.params.n_particles,
                          run.cfg.format)
    run.summary = {"dim": sol.basis.dim, "sector_dims": [s.dim for s in sol.sectors],
                   "ground_eps": float(sol.energies[0] / sol.params.n_particles)}


def cmd_critical_points(run: Run):
    c = run.cfg.critical
    res = search_critical_points(run.cfg.model.params(), c.n_starts, run.cfg.seed, c.gauge_site,
                                 c.energy_tol, c.residual_tol)
    path = run.out / "critical_points.jsonl"
    run.outputs.append(path.name)
    write_critical_points(path, res.points)
    run.summary = {"n_starts": res.n_starts, "n_converged": res.n_converged, "n_failed": res.n_failed,
                   "energies": sorted({round(e, 10) for e in res.energies.tolist()})}


def cmd_shell_imbalance(run: Run):
    s = run.cfg.shell
    params = run.cfg.model.params()
    eps = 0.5 * (s.eps_lo + s.eps_hi)
    shell = sample_energy_shell(eps, params, s.n_samples, tol=0.5 * (s.eps_hi - s.eps_lo),
                                rng_seed=run.cfg.seed, refine=s.refine)
    I = classical_imbalance(shell.points)
    L = params.n_sites
    cols = ["eps", "ReI", "ImI"] + [f"q{i + 1}" for i in range(L)] + [f"p{i + 1}" for i in range(L)]
    write_table(run.path("shell_imbalance"), cols,
                np.column_stack([shell.energies, I.real, I.imag, shell.points]), run.cfg.format)
    n_clusters = count_clusters(np.column_stack([I.real, I.imag]), s.cluster_gap)
    run.summary = {"n_points": len(I), "acceptance_rate": shell.acceptance_rate,
                   "n_clusters": n_clusters}


def cmd_quadruplets(run: Run):
    sol = solve_model(run.cfg.model.params(), run.cfg.model.max_dim)
    qs = build_quadruplet_blocks(sol, n_levels=run.cfg.quadruplets.n_levels)
    write_quadruplets(run.path("quadruplets"), qs.blocks, run.cfg.format)
    diag = max((float(np.max(np.abs(np.diag(b.block)))) for b in qs.blocks), default=0.0)
    run.summary = {"n_blocks": len(qs.blocks), "leftovers": {str(k): v for k, v in qs.leftovers.items()},
                   "max_abs_diagonal": diag,
                   "nonzero_fraction": nonzero_fraction(qs.blocks, run.cfg.quadruplets.threshold)}


def cmd_chaos_scan(run: Run):
    c = run.cfg.chaos
    params = run.cfg.model.params()
    rows = []
    for i, eps in enumerate(c.energies):
        refine = eps < c.refine_below or eps > c.refine_above
        r = fraction_regular(eps, params, c.n_samples, c.threshold, c.t_max, c.renorm_interval,
                             c.shell_tol, refine, c.rtol, c.atol, run.cfg.seed + i, run.cfg.workers)
        rows.append((eps, r.f_reg, len(r.lambdas), float(np.mean(r.converged)), r.acceptance_rate))
    write_table(run.path("chaos_classical"),
                ["eps", "f_reg", "n_samples", "converged_fraction", "acceptance_rate"], rows,
                run.cfg.format)
    if c.quantum:
        sol = solve_model(params, run.cfg.model.max_dim, reflection=True)
        scan = windowed_regularity_scan(sector_subsequences(sol), WindowSpec(**c.window.model_dump()))
        write_scan(run.path("chaos_quantum"), scan, run.cfg.format)
        run.summary["skipped_windows"] = [[float(e), why] for e, why in scan.skipped]
    run.summary["f_reg"] = {str(r[0]): r[1] for r in rows}


def _twa(run: Run, point: PhasePoint, twa_cfg, seed: int):
    spec = CloudSpec(point, run.cfg.model.n_particles, twa_cfg.n_samples, seed,
                     twa_cfg.width_mode, twa_cfg.projection)
    return sample_cloud(spec)


def cmd_quench(run: Run):
    qc = run.cfg.quench
    params = run.cfg.model.params()
    point = _point(qc.q, qc.p, qc.project)
    site = max_occupation_site(point)
    times = _times(qc.t_max, qc.n_times, qc.spacing)
    run.summary = {"n_max_site": site + 1}
    if qc.quantum:
        sol = solve_model(params, run.cfg.model.max_dim)
        cs = build_coherent_state(point, params, sol.basis)
        series = occupation_series(decompose_in_eigenbasis(cs, sol), times, site)
        write_series(run.path("quench_quantum"), series, run.cfg.format)
    if qc.classical:
        traj = integrate(point.vector, params, times=times, rtol=qc.rtol, atol=qc.atol)
        occ = traj.occupations
        I = traj.imbalance
        cols = ["t"] + [f"n{k + 1}" for k in range(params.n_sites)] + ["n_max", "ReI", "ImI"]
        write_table(run.path("quench_classical"), cols,
                    np.column_stack([times, occ, occ[:, site], I.real, I.imag]), run.cfg.format)
        run.summary["classical_energy_drift"] = traj.energy_drift
    if qc.twa is not None:
        cloud = _twa(run, point, qc.twa, run.cfg.seed)
        ens = propagate_ensemble(cloud, times, standard_observables(params.n_sites, site), params,
                                 qc.twa.rtol, qc.twa.atol, run.cfg.workers)
        names = [f"n{k + 1}" for k in range(params.n_sites)] + ["n_max"]
        write_ensemble(run.path("quench_twa"), ens, names, run.cfg.format)
        run.summary.update(twa_n_effective=ens.n_effective, twa_n_failed=ens.n_failed,
                           twa_error_k=qc.twa.error_k)


def cmd_ldos(run: Run):
    lc = run.cfg.ldos
    params = run.cfg.model.params()
    point = _point(lc.q, lc.p, lc.project)
    sol = solve_model(params, run.cfg.model.max_dim)
    amp = decompose_in_eigenbasis(build_coherent_state(point, params, sol.basis), sol)
    hq = ldos(amp, lc.bins)
    write_histogram(run.path("ldos_quantum"), hq, run.cfg.format)
    run.summary = {"quantum_mean_eps": hq.mean_eps, "quantum_var_eps": hq.var_eps}
    if lc.twa is not None:
        hc = ensemble_energy_histogram(_twa(run, point, lc.twa, run.cfg.seed), params, hq.bin_edges)
        write_histogram(run.path("ldos_twa"), hc, run.cfg.format)
        run.summary.update(twa_mean_eps=hc.mean_eps, twa_var_eps=hc.var_eps)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "critical-points": cmd_critical_points,
    "shell-imbalance": cmd_shell_imbalance,
    "quadruplets": cmd_quadruplets,
    "chaos-scan": cmd_chaos_scan,
    "quench": cmd_quench,
    "ldos": cmd_ldos,
}


# --- driver ----------------------------------------------------------------------


def _versions() -> dict:
    out = {"python": platform.python_version(), "bhlab": __version__}
    for pkg in ("numpy", "scipy", "numba", "pydantic", "pyyaml"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def prepare(command: str, cfg: RunConfig) -> Run:
    """Checks that need no heavy compute: capacity and initial points."""
    needs_quantum = command in QUANTUM_COMMANDS and not (
        (command == "quench" and not cfg.quench.quantum)
        or (command == "chaos-scan" and not cfg.chaos.quantum))
    if needs_quantum:
        dim = cfg.model.params().dim
        if dim > cfg.model.max_dim:
            raise CapacityError(f"Fock dimension {dim} exceeds max_dim {cfg.model.max_dim}")
    if command == "quench":
        _point(cfg.quench.q, cfg.quench.p, cfg.quench.project)
    if command == "ldos":
        _point(cfg.ldos.q, cfg.ldos.p, cfg.ldos.project)
    return Run(command, cfg)


def execute(command: str, cfg: RunConfig) -> Run:
    run = prepare(command, cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    COMMANDS[command](run)
    manifest = {
        "command": command,
        "config": dump_config(cfg),
        "seed": cfg.seed,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "outputs": run.outputs,
        "summary": run.summary,
    }
    with open(run.out / f"manifest_{command}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    return run


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bhlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bhlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON or YAML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--workers", type=int, default=None, help="override the worker count")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("output_dir", args.out),
                                       ("workers", args.workers)) if v is not None}
        if overrides:
            cfg = parse_config({**dump_config(cfg), **overrides})
        run = execute(args.command, cfg)
    except BhlabError as exc:
        print(f"bhlab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps({"outputs": run.outputs, "summary": run.summary}, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
