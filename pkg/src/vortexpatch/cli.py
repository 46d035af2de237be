"""Command-line front end: subcommand dispatch, JSON configuration with flag
overrides, deterministic CSV/JSON artifacts, and a run manifest.

Exit codes: 0 success, 1 invalid configuration, 2 numerical invariant
violation (the message names the violated invariant).  All numeric CSV output
uses 17-significant-digit scientific notation; JSON is emitted with sorted
keys, so identical configuration and seed reproduce byte-identical artifacts
(the manifest additionally records the wall time and is excluded from
byte-level comparisons).
"""

from __future__ import annotations

import concurrent.futures
import json
import os
import platform
import sys
import time
from importlib import metadata

import click
import numpy as np

from .cantor import (
    DiophantineSpec,
    excluded_measure,
    excluded_summary_json,
    excluded_to_csv,
    measure_curve,
)
from .dynamics import (
    EvolutionConfig,
    quasi_periodic_seed,
    simulate as run_simulation,
    trajectory_summary,
    trajectory_to_csv,
)
from .geometry import BoundaryContactError, DegeneratePatchError, PatchState
from .kam import (
    NonReducibleError,
    ReductionState,
    TransportProblem,
    golden_frequency,
    remainder_history_csv,
    run_remainder_kam,
    spectrum_table_json,
    straighten_transport,
    synthetic_reversible_remainder,
    transport_history_csv,
)
from .linearized import linearize, matrix_to_csv, spectrum_to_csv
from .spectral import PeriodicField, theta_grid
from .spectrum import (
    FrequencySystem,
    omega,
    perturbed_transversality,
    scan_report_csv,
    scan_report_json,
    transversality_scan,
)

#: environment variable holding the default output directory
OUTPUT_DIR_ENV = "VPATCH_OUTPUT_DIR"


class InvariantViolation(RuntimeError):
    """A numerical invariant failed during a run (exit code 2)."""


def _fmt(x: float) -> str:
    return format(float(x), ".16e")


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"cannot read config file: {exc}")
    if not isinstance(cfg, dict):
        raise click.ClickException("config file must hold a JSON object")
    return cfg


def _resolve(cfg: dict, key: str, flag, default):
    """Flag value if given, else config-file value, else default."""
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _outdir(cfg: dict, flag):
    out = _resolve(cfg, "output_dir", flag, None)
    if out is None:
        out = os.environ.get(OUTPUT_DIR_ENV, ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write(outdir: str, name: str, text: str):
    path = os.path.join(outdir, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _write_json(outdir: str, name: str, obj):
    return _write(outdir, name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _versions():
    vers = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("sympy", "click", "artifact"):
        try:
            vers[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    return vers


def _manifest(outdir: str, subcommand: str, params: dict, t0: float):
    _write_json(outdir, f"{subcommand}_manifest.json", {
        "subcommand": subcommand,
        "config": params,
        "versions": _versions(),
        "wall_time_s": time.time() - t0,
    })


def _parse_amplitudes(text: str) -> dict:
    """\"2:1e-3,5:2e-4\" -> {2: 1e-3, 5: 2e-4}; empty string -> {}."""
    out = {}
    if not text:
        return out
    for part in text.split(","):
        try:
            j, a = part.split(":")
            out[int(j)] = float(a)
        except ValueError:
            raise click.ClickException(
                f"bad amplitude entry {part!r}; expected mode:value")
    return out


def _parse_sites(text: str) -> tuple:
    try:
        sites = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise click.ClickException(f"bad site list {text!r}; expected e.g. 1,2")
    return sites


@click.group()
def cli():
    """Vortex-patch boundary dynamics, linearized spectra, Diophantine
    measure estimates, and finite-truncation reduction engines."""


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file; flags override its values.")
@click.option("--b", type=float, default=None, help="patch radius parameter")
@click.option("--amplitudes", default=None,
              help="initial deformation, e.g. '2:1e-3,5:2e-4' (empty = flat)")
@click.option("--grid", "m_grid", type=int, default=None, help="theta grid size")
@click.option("--dt", type=float, default=None)
@click.option("--t", "t_final", type=float, default=None, help="final time")
@click.option("--stride", type=int, default=None, help="record stride")
@click.option("--track", default=None, help="comma list of modes to track")
@click.option("--output-dir", default=None)
def simulate(config_path, b, amplitudes, m_grid, dt, t_final, stride, track,
             output_dir):
    """Nonlinear contour-dynamics run; writes trajectory CSV and summary."""
    t0 = time.time()
    cfg = _load_config(config_path)
    b = float(_resolve(cfg, "b", b, 0.5))
    amps_text = _resolve(cfg, "amplitudes", amplitudes, "")
    amps = amps_text if isinstance(amps_text, dict) else _parse_amplitudes(amps_text)
    amps = {int(j): float(a) for j, a in amps.items()}
    M = int(_resolve(cfg, "grid", m_grid, 64))
    dt = float(_resolve(cfg, "dt", dt, 1e-3))
    T = float(_resolve(cfg, "T", t_final, 1.0))
    stride = int(_resolve(cfg, "stride", stride, 100))
    track_text = _resolve(cfg, "track", track, "")
    modes = tuple(int(s) for s in track_text.split(",")) if track_text else ()
    outdir = _outdir(cfg, output_dir)

    try:
        state = quasi_periodic_seed(b, amps, M=M)
    except DegeneratePatchError as exc:
        raise click.ClickException(str(exc))
    traj = run_simulation(state, EvolutionConfig(dt=dt, T=T, record_stride=stride,
                                                 track_modes=modes))
    _write(outdir, "simulate_trajectory.csv", trajectory_to_csv(traj))
    _write_json(outdir, "simulate_summary.json", trajectory_summary(traj))
    params = {"b": b, "amplitudes": {str(j): a for j, a in sorted(amps.items())},
              "grid": M, "dt": dt, "T": T, "stride": stride,
              "track": sorted(modes)}
    _manifest(outdir, "simulate", params, t0)
    if traj.aborted:
        raise InvariantViolation(f"simulation aborted: {traj.abort_reason}")
    click.echo(f"simulate: {len(traj.snapshots)} snapshots written to {outdir}")


# ---------------------------------------------------------------------------
# linearize
# ---------------------------------------------------------------------------

@cli.command("linearize")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--b", type=float, default=None)
@click.option("--amplitudes", default=None,
              help="deformation at which to linearize (empty = equilibrium)")
@click.option("--grid", "m_grid", type=int, default=None)
@click.option("--n", "n_modes", type=int, default=None, help="matrix truncation")
@click.option("--output-dir", default=None)
def linearize_cmd(config_path, b, amplitudes, m_grid, n_modes, output_dir):
    """Assemble the linearized generator; writes matrix and eigenvalue CSVs."""
    t0 = time.time()
    cfg = _load_config(config_path)
    b = float(_resolve(cfg, "b", b, 0.5))
    amps_text = _resolve(cfg, "amplitudes", amplitudes, "")
    amps = amps_text if isinstance(amps_text, dict) else _parse_amplitudes(amps_text)
    amps = {int(j): float(a) for j, a in amps.items()}
    M = int(_resolve(cfg, "grid", m_grid, 256))
    N = int(_resolve(cfg, "N", n_modes, 16))
    outdir = _outdir(cfg, output_dir)

    try:
        state = quasi_periodic_seed(b, amps, M=M)
    except DegeneratePatchError as exc:
        raise click.ClickException(str(exc))
    pieces = linearize(state, N)
    _write(outdir, "linearize_matrix.csv", matrix_to_csv(pieces.assembled))
    _write(outdir, "linearize_spectrum.csv", spectrum_to_csv(pieces.assembled))
    params = {"b": b, "amplitudes": {str(j): a for j, a in sorted(amps.items())},
              "grid": M, "N": N}
    _manifest(outdir, "linearize", params, t0)
    click.echo(f"linearize: matrix and spectrum written to {outdir}")


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--b", type=float, default=None)
@click.option("--jmax", type=int, default=None)
@click.option("--scan/--no-scan", "do_scan", default=None,
              help="also run the transversality scan over [b0, b1]")
@click.option("--sites", default=None, help="tangential set, e.g. 1,2")
@click.option("--b0", type=float, default=None)
@click.option("--b1", type=float, default=None)
@click.option("--lmax", type=int, default=None)
@click.option("--grid", "scan_grid", type=int, default=None)
@click.option("--eps-hat", type=float, default=None,
              help="also run the perturbed scan at this offset size")
@click.option("--seed", type=int, default=None,
              help="seed for the perturbed scan samples")
@click.option("--output-dir", default=None)
def spectrum(config_path, b, jmax, do_scan, sites, b0, b1, lmax, scan_grid,
             eps_hat, seed, output_dir):
    """Equilibrium frequency table; optional transversality scan."""
    t0 = time.time()
    cfg = _load_config(config_path)
    b = float(_resolve(cfg, "b", b, 0.5))
    jmax = int(_resolve(cfg, "jmax", jmax, 10))
    if not 0.0 < b < 1.0:
        raise click.ClickException("b must lie in (0, 1)")
    if jmax < 1:
        raise click.ClickException("jmax must be >= 1")
    outdir = _outdir(cfg, output_dir)

    lines = ["j,omega"]
    for j in range(1, jmax + 1):
        val = float(omega(b, j))
        lines.append(f"{j},{_fmt(val)}")
        click.echo(f"Omega_{j}({b}) = {val:.17g}")
    _write(outdir, "spectrum_omega.csv", "\n".join(lines) + "\n")

    do_scan = bool(_resolve(cfg, "scan", do_scan, False))
    params = {"b": b, "jmax": jmax, "scan": do_scan}
    if do_scan:
        sites_t = _parse_sites(_resolve(cfg, "sites", sites, "1,2"))
        b0 = float(_resolve(cfg, "b0", b0, 0.1))
        b1 = float(_resolve(cfg, "b1", b1, 0.9))
        lmax_v = int(_resolve(cfg, "lmax", lmax, 5))
        grid = int(_resolve(cfg, "grid", scan_grid, 2000))
        sysf = FrequencySystem(sites_t, b0, b1)
        rep = transversality_scan(sysf, Lmax=lmax_v, grid_size=grid)
        _write_json(outdir, "spectrum_scan.json", scan_report_json(rep))
        _write(outdir, "spectrum_scan.csv", scan_report_csv(rep))
        click.echo(f"transversality: rho0_hat = {rep.rho0_hat:.6g} "
                   f"(case {rep.case})")
        eps = _resolve(cfg, "eps_hat", eps_hat, None)
        if eps is not None:
            seed_v = _resolve(cfg, "seed", seed, None)
            if seed_v is None:
                raise click.ClickException(
                    "--seed is required for the perturbed scan")
            out = perturbed_transversality(sysf, eps_hat=float(eps),
                                           Lmax=lmax_v, grid_size=grid,
                                           seed=int(seed_v), baseline=rep)
            _write_json(outdir, "spectrum_scan_perturbed.json", out)
            click.echo(f"perturbed: rho0_hat = {out['rho0_hat_perturbed']:.6g}, "
                       f"retains_half = {out['retains_half']}")
            params.update({"eps_hat": float(eps), "seed": int(seed_v)})
        params.update({"sites": list(sites_t), "b0": b0, "b1": b1,
                       "lmax": lmax_v, "grid": grid})
    _manifest(outdir, "spectrum", params, t0)


# ---------------------------------------------------------------------------
# cantor
# ---------------------------------------------------------------------------

def _curve_point(args):
    """Excluded measure for one gamma (picklable --jobs work item)."""
    sites, b0, b1, gamma, kwargs = args
    sysf = FrequencySystem(sites, b0, b1)
    rep = excluded_measure(sysf, DiophantineSpec(gamma=gamma, **kwargs))
    return rep.total


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--tau1", type=float, default=None)
@click.option("--tau2", type=float, default=None)
@click.option("--upsilon", type=float, default=None)
@click.option("--lmax", type=int, default=None)
@click.option("--sites", default=None, help="tangential set, e.g. 1,2")
@click.option("--kind", default=None,
              type=click.Choice(["transport", "first-order-Melnikov",
                                 "second-order-Melnikov"]))
@click.option("--b0", type=float, default=None)
@click.option("--b1", type=float, default=None)
@click.option("--curve", default=None,
              help="comma list of gammas for a measure curve")
@click.option("--jobs", type=int, default=None,
              help="parallel workers for the measure curve")
@click.option("--output-dir", default=None)
def cantor(config_path, gamma, tau1, tau2, upsilon, lmax, sites, kind, b0, b1,
           curve, jobs, output_dir):
    """Diophantine exclusion intervals, measure totals, Russmann checks."""
    t0 = time.time()
    cfg = _load_config(config_path)
    gamma = float(_resolve(cfg, "gamma", gamma, 1e-3))
    tau1 = float(_resolve(cfg, "tau1", tau1, 3.0))
    tau2 = float(_resolve(cfg, "tau2", tau2, 13.0))
    upsilon = float(_resolve(cfg, "upsilon", upsilon, 0.5))
    lmax = int(_resolve(cfg, "lmax", lmax, 5))
    sites_t = _parse_sites(_resolve(cfg, "sites", sites, "1,2"))
    kind = _resolve(cfg, "kind", kind, "first-order-Melnikov")
    b0 = float(_resolve(cfg, "b0", b0, 0.1))
    b1 = float(_resolve(cfg, "b1", b1, 0.9))
    outdir = _outdir(cfg, output_dir)

    sysf = FrequencySystem(sites_t, b0, b1)
    spec = DiophantineSpec(gamma=gamma, tau1=tau1, tau2=tau2, upsilon=upsilon,
                           Lmax=lmax, kind=kind)
    rep = excluded_measure(sysf, spec)
    _write(outdir, "cantor_intervals.csv", excluded_to_csv(rep))
    _write_json(outdir, "cantor_summary.json", excluded_summary_json(rep))
    if rep.russmann_violations:
        raise InvariantViolation(
            f"Russmann interval bound violated on "
            f"{rep.russmann_violations} excluded intervals")
    click.echo(f"cantor: excluded measure {rep.total:.17g} "
               f"({len(rep.rows)} intervals, 0 Russmann violations)")

    params = {"gamma": gamma, "tau1": tau1, "tau2": tau2, "upsilon": upsilon,
              "lmax": lmax, "sites": list(sites_t), "kind": kind,
              "b0": b0, "b1": b1}
    curve_text = _resolve(cfg, "curve", curve, "")
    if curve_text:
        gammas = [float(g) for g in str(curve_text).split(",")]
        jobs_v = int(_resolve(cfg, "jobs", jobs, 1))
        kwargs = dict(tau1=tau1, tau2=tau2, upsilon=upsilon, Lmax=lmax,
                      kind=kind)
        items = [(sites_t, b0, b1, g, kwargs) for g in gammas]
        if jobs_v > 1:
            with concurrent.futures.ProcessPoolExecutor(jobs_v) as pool:
                totals = list(pool.map(_curve_point, items))
        else:
            totals = [_curve_point(it) for it in items]
        # canonical ordering: by input index, independent of worker order
        lines = ["gamma,excluded_measure"]
        for g, m in zip(gammas, totals):
            lines.append(f"{_fmt(g)},{_fmt(m)}")
        _write(outdir, "cantor_curve.csv", "\n".join(lines) + "\n")
        params.update({"curve": gammas, "jobs": jobs_v})
    _manifest(outdir, "cantor", params, t0)


# ---------------------------------------------------------------------------
# kam-transport
# ---------------------------------------------------------------------------

@cli.command("kam-transport")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--amp", type=float, default=None,
              help="f0 = amp cos(theta) perturbation of V0 = 1/2")
@click.option("--v0", type=float, default=None)
@click.option("--k", "k_grid", type=int, default=None, help="phi grid size")
@click.option("--grid", "m_grid", type=int, default=None, help="theta grid size")
@click.option("--steps", type=int, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--upsilon", type=float, default=None)
@click.option("--tau1", type=float, default=None)
@click.option("--output-dir", default=None)
def kam_transport(config_path, amp, v0, k_grid, m_grid, steps, gamma, upsilon,
                  tau1, output_dir):
    """Straighten omega . d_phi + (V0 + amp cos theta) d_theta."""
    t0 = time.time()
    cfg = _load_config(config_path)
    amp = float(_resolve(cfg, "amp", amp, 0.1))
    v0 = float(_resolve(cfg, "V0", v0, 0.5))
    K = int(_resolve(cfg, "K", k_grid, 16))
    M = int(_resolve(cfg, "grid", m_grid, 64))
    steps = int(_resolve(cfg, "steps", steps, 8))
    gamma = float(_resolve(cfg, "gamma", gamma, 1e-3))
    upsilon = float(_resolve(cfg, "upsilon", upsilon, 0.5))
    tau1 = float(_resolve(cfg, "tau1", tau1, 3.0))
    outdir = _outdir(cfg, output_dir)

    th = theta_grid(M)
    f0 = PeriodicField(np.broadcast_to(amp * np.cos(th), (K, M)).copy())
    prob = TransportProblem(golden_frequency(1), f0, V0=v0, gamma=gamma,
                            upsilon=upsilon, tau1=tau1)
    res = straighten_transport(prob, steps=steps)
    _write(outdir, "kam_transport_history.csv", transport_history_csv(res))
    _write_json(outdir, "kam_transport_result.json", {
        "V_infty": res.V_infty,
        "reducible": res.reducible,
        "steps": len(res.history),
    })
    params = {"amp": amp, "V0": v0, "K": K, "grid": M, "steps": steps,
              "gamma": gamma, "upsilon": upsilon, "tau1": tau1}
    _manifest(outdir, "kam-transport", params, t0)
    click.echo(f"kam-transport: V_infty = {res.V_infty:.12f}, "
               f"reducible = {res.reducible}")


# ---------------------------------------------------------------------------
# kam-remainder
# ---------------------------------------------------------------------------

@cli.command("kam-remainder")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--n", "n_modes", type=int, default=None, help="mode truncation")
@click.option("--l", "l_bands", type=int, default=None, help="band truncation")
@click.option("--delta0", type=float, default=None)
@click.option("--seed", type=int, default=None,
              help="seed for the synthetic remainder (required)")
@click.option("--steps", type=int, default=None)
@click.option("--b", type=float, default=None,
              help="equilibrium parameter for the diagonal frequencies")
@click.option("--gamma", type=float, default=None)
@click.option("--tau2", type=float, default=None)
@click.option("--output-dir", default=None)
def kam_remainder(config_path, n_modes, l_bands, delta0, seed, steps, b,
                  gamma, tau2, output_dir):
    """Reduce a synthetic reversible remainder around diag(i Omega_j(b))."""
    t0 = time.time()
    cfg = _load_config(config_path)
    N = int(_resolve(cfg, "N", n_modes, 8))
    L = int(_resolve(cfg, "L", l_bands, 8))
    delta0 = float(_resolve(cfg, "delta0", delta0, 1e-3))
    seed = _resolve(cfg, "seed", seed, None)
    if seed is None:
        raise click.ClickException(
            "--seed is mandatory for randomized synthetic input")
    steps = int(_resolve(cfg, "steps", steps, 3))
    b = float(_resolve(cfg, "b", b, 0.5))
    gamma = float(_resolve(cfg, "gamma", gamma, 1e-2))
    tau2 = float(_resolve(cfg, "tau2", tau2, 2.5))
    outdir = _outdir(cfg, output_dir)

    R = synthetic_reversible_remainder(N, L, delta0, seed=int(seed))
    jm = np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])
    mu = np.array([float(omega(b, int(j))) for j in jm])
    state = ReductionState(omega=golden_frequency(1), mu=mu, R=R)
    try:
        res = run_remainder_kam(state, steps=steps, gamma=gamma, tau2=tau2)
    except AssertionError as exc:
        raise InvariantViolation(str(exc))
    _write(outdir, "kam_remainder_history.csv", remainder_history_csv(res))
    _write_json(outdir, "kam_remainder_spectrum.json",
                spectrum_table_json(res, b=b, V_infty=0.5))
    params = {"N": N, "L": L, "delta0": delta0, "seed": int(seed),
              "steps": steps, "b": b, "gamma": gamma, "tau2": tau2}
    _manifest(outdir, "kam-remainder", params, t0)
    final = res.history[-1][1]
    click.echo(f"kam-remainder: delta after {steps} steps = {final:.6e}")


def main(argv=None):
    """Console entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, prog_name="vpatch", standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        click.echo(f"invalid config: {exc.format_message()}", err=True)
        sys.exit(1)
    except (InvariantViolation, NonReducibleError, DegeneratePatchError,
            BoundaryContactError) as exc:
        click.echo(f"invariant violation: {exc}", err=True)
        sys.exit(2)
    except ValueError as exc:
        click.echo(f"invalid config: {exc}", err=True)
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
