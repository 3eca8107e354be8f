"""Command-line driver.

Usage::

    maghomog <cell|macro|dns|verify> --config <path> [--out <dir>] [--threads <k>]

Exit codes: 0 success, 1 other toolkit error, 2 config error, 3 solver
non-convergence, 4 I/O error. On failure ``error.json`` is written to the
output directory (when possible) and the same JSON is printed on stderr.

Artifacts (all carry the config hash):

* ``config.echo.json``: the fully explicit config plus ``config_hash``.
* ``effective_tensors.csv``: first line ``# config_hash: <hex>``, then the
  header ``tensor,i,j,m,n,value``. Tensors ``mu_eff`` (m = n = 0), ``N``
  (entry N^{ij}_{mn}), ``B`` (B^{ij}_{mn}) and ``B_sym`` in that order,
  indices 1-based and increasing with n fastest, values printed with 17
  significant digits.
* ``report.json``: geometry, resolutions, tolerances, tensors and the
  invariant checks of the cell problems.
* ``macro_fields.vtk`` (macro, verify): point data phi0, u0, pi0; cell data
  maxwell_stress. ``reconstructed_fields.vtk`` when ``output.sample_n`` > 0.
* ``dns_report.json`` and ``dns_eps_<k>.vtk`` (dns; k counts the eps list from 1).
* ``corrector_report.json`` / ``corrector_report.csv`` (verify). The cell
  problems feeding the macro solve and the reconstruction are solved at the
  DNS per-cell resolution ``dns.n_cell``, so that the two-scale fields and the
  DNS share one discrete cell space; ``effective_tensors.csv`` still reports
  the tensors at resolution ``n``.
* ``timings.log``: wall-clock timings; the only file with timestamps.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cell import solve_cell_problems
from .config import RunConfig, config_hash, echo, parse_config
from .dns import DnsState, corrector_study, rigid_defect, run_dns
from .errors import ConfigError, HomogError, NoConvergence
from .fem import ReferenceElement
from .grid import assign_material, build_box_mesh, build_unit_cell_mesh
from .io import ensure_dir, write_json, write_rows_csv, write_tensor_csv, write_vtk
from .macro import ReconstructedFields, solve_macro

log = logging.getLogger("maghomog")

CORRECTOR_COLUMNS = ["eps", "potential_corrector", "potential_ablation", "maxwell_gap_l1", "maxwell_gap_l2",
                     "velocity_corrector", "velocity_ablation", "u_H1", "p_L2", "a_priori", "energy_identity",
                     "rigid_defect", "solid_pressure_max"]
RATIO_THRESHOLD = 1.3
ABLATION_STALL = 0.5


class Timer:
    """Collects wall-clock timings for the separate log file."""

    def __init__(self):
        self.entries = []

    def section(self, name):
        timer = self

        class _S:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.entries.append((name, time.perf_counter() - self.t0))

        return _S()


def _ratios(col):
    return [col[k] / col[k + 1] if col[k + 1] > 0 else float("inf") for k in range(len(col) - 1)]


def study_summary(rows: list) -> dict:
    """Pass/fail view of a corrector table (thresholds are engineering choices)."""
    out = {"ratio_threshold": RATIO_THRESHOLD, "ablation_stall_fraction": ABLATION_STALL}
    for key in ("potential_corrector", "velocity_corrector"):
        if rows and key in rows[0]:
            col = [r[key] for r in rows]
            rat = _ratios(col)
            out[key] = {"ratios": rat, "strictly_decreasing": all(a > b for a, b in zip(col, col[1:])),
                        "ratio_ok": all(r >= RATIO_THRESHOLD for r in rat)}
    if rows:
        abl = [r["potential_ablation"] for r in rows]
        out["potential_ablation_stalls"] = abl[-1] > ABLATION_STALL * abl[0]
        gap = [r["maxwell_gap_l1"] for r in rows]
        out["maxwell_gap_decreasing"] = all(a > b for a, b in zip(gap, gap[1:]))
        if "a_priori" in rows[0]:
            ap = [r["a_priori"] for r in rows]
            out["a_priori_variation"] = max(ap) / min(ap) if min(ap) > 0 else float("inf")
            out["energy_identity_max"] = max(r["energy_identity"] for r in rows)
    return out


# ------------------------------------------------------------- stages ---


def _cell_stage(cfg: RunConfig, out: Path, threads: int, h: str, timer: Timer):
    with timer.section("cell problems"):
        mesh = build_unit_cell_mesh(cfg.d, cfg.n)
        mat = assign_material(mesh, cfg.geometry)
        cells = solve_cell_problems(mesh, mat, cfg.tol, cfg.rigid_mode, cfg.solver, threads, cfg.strict)
    t = cells.tensors
    write_tensor_csv(out / "effective_tensors.csv", t, h)
    report = {
        "config_hash": h,
        "version": __version__,
        "geometry": echo(cfg)["geometry"],
        "mu": echo(cfg)["mu"],
        "d": cfg.d,
        "n": cfg.n,
        "tolerances": {"cell": cfg.tol},
        "tensors": {"mu_eff": t.mu_eff, "N": t.N, "B": t.B, "B_sym": t.B_sym},
        "checks": t.metadata,
        "warnings": list(cfg.warnings),
    }
    write_json(out / "report.json", report)
    return cells


def _macro_stage(cfg: RunConfig, cells, out: Path, h: str, timer: Timer):
    with timer.section("macro problem"):
        macro = solve_macro(cells, cfg.macro, method=cfg.solver)
    if cfg.vtk:
        m = macro.mesh
        write_vtk(out / "macro_fields.vtk", m, f"maghomog macro fields config_hash={h}",
                  point_scalars={"phi0": macro.phi0.nodal(), "pi0": macro.pi0.nodal()},
                  point_vectors={"u0": macro.u0.nodal()},
                  cell_tensors={"maxwell_stress": macro.element_maxwell_stress()})
    if cfg.sample_n > 0:
        _write_reconstruction(cfg, cells, macro, out, h)
    return macro


def _write_reconstruction(cfg: RunConfig, cells, macro, out: Path, h: str) -> None:
    eps = min(cfg.eps)
    rec = ReconstructedFields(macro, cells, eps)
    sm = build_box_mesh(cfg.d, cfg.macro.lengths, cfg.sample_n)
    X = sm.coords
    Xc = sm.centroids
    write_vtk(out / "reconstructed_fields.vtk", sm, f"maghomog reconstructed fields eps={eps:g} config_hash={h}",
              point_scalars={"phi1": rec.phi1(X), "p0": rec.p0(X)},
              point_vectors={"grad_y_phi1": rec.grad_y_phi1(X), "u1": rec.u1(X)},
              cell_tensors={"T0": rec.T0(Xc)})


def _dns_stage(cfg: RunConfig, out: Path, h: str, timer: Timer) -> dict:
    mc = cfg.dns_macro()
    runs = []
    for k, eps in enumerate(cfg.eps):
        with timer.section(f"dns eps={eps:g}"):
            st = run_dns(eps, cfg.geometry, mc, cfg.dns_n_cell, True, cfg.solver)
        runs.append(_dns_summary(st))
        if cfg.vtk:
            ref = ReferenceElement(st.mesh.h)
            T = st.maxwell_stress(ref, mc.S)
            write_vtk(out / f"dns_eps_{k + 1}.vtk", st.mesh, f"maghomog dns eps={eps:g} config_hash={h}",
                      point_scalars={"phi": st.phi.nodal(), "p": st.p.nodal()},
                      point_vectors={"u": st.u.nodal()},
                      cell_tensors={"maxwell_stress": np.einsum("q,eqkl->ekl", ref.weights, T)},
                      cell_scalars={"mu": st.material.mu, "solid": st.material.solid.astype(float)})
    report = {"config_hash": h, "runs": runs}
    write_json(out / "dns_report.json", report)
    return report


def _dns_summary(st: DnsState) -> dict:
    return {
        "eps": st.eps,
        "elements": st.mesh.n_elements,
        "potential": st.info["potential"],
        "flow": st.info["flow"],
        "particles": [{"center": c, "U": U, "R": R} for c, (U, R) in zip(st.centers, st.rigid)],
        "rigid_defect": rigid_defect(st) if st.rigid else 0.0,
    }


def _verify_stage(cfg: RunConfig, cells, macro, out: Path, threads: int, h: str, timer: Timer) -> dict:
    with timer.section("corrector study"):
        rep = corrector_study(cfg.eps, cfg.geometry, cells, macro, cfg.dns_macro(), cfg.dns_n_cell,
                              cfg.solver, threads)
    for t in rep.timings:
        timer.entries.append((f"dns eps={t['eps']:g}", t["seconds"]))
    if cfg.macro.Re != 2.0:
        rep.notes.append(f"Re = {cfg.macro.Re:g}: the magnetic cell problem carries no 2/Re factor, so the u1 "
                         "reconstruction is consistent with the fine-scale flow only for Re = 2")
    data = {"config_hash": h, **rep.to_dict(), "summary": study_summary(rep.rows),
            "macro": {"iterations": macro.info["iterations"], "residual": macro.info["residual"],
                      "energy_identity": macro.info["energy_identity"],
                      "sign_convention": macro.info["sign_convention"]}}
    write_json(out / "corrector_report.json", data)
    write_rows_csv(out / "corrector_report.csv", rep.rows, [c for c in CORRECTOR_COLUMNS if c in rep.rows[0]], h)
    return data


def run(cfg: RunConfig, out, threads: int = 1) -> dict:
    """Execute one command; returns a small summary. Raises toolkit errors."""
    out = ensure_dir(out)
    h = config_hash(cfg)
    timer = Timer()
    write_json(out / "config.echo.json", echo(cfg))
    for w in cfg.warnings:
        log.warning(w)
    summary = {"command": cfg.command, "config_hash": h, "out": str(out)}
    try:
        if cfg.command == "dns":
            summary["dns"] = _dns_stage(cfg, out, h, timer)
            return summary
        cells = _cell_stage(cfg, out, threads, h, timer)
        summary["mu_eff"] = cells.tensors.mu_eff
        if cfg.command == "verify" and cfg.n != cfg.dns_n_cell:
            # the two-scale reconstruction must live in the same discrete cell space as the DNS
            with timer.section("cell problems at dns resolution"):
                mesh = build_unit_cell_mesh(cfg.d, cfg.dns_n_cell)
                cells = solve_cell_problems(mesh, assign_material(mesh, cfg.geometry), cfg.tol, cfg.rigid_mode,
                                            cfg.solver, threads, cfg.strict)
        if cfg.command in ("macro", "verify"):
            macro = _macro_stage(cfg, cells, out, h, timer)
            if cfg.command == "verify":
                summary["verify"] = _verify_stage(cfg, cells, macro, out, threads, h, timer)
        return summary
    finally:
        _write_timings(out, h, timer)


def _write_timings(out: Path, h: str, timer: Timer) -> None:
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime())
    lines = [f"# config_hash: {h}", f"# finished: {stamp}"]
    lines += [f"{name}\t{secs:.3f}s" for name, secs in timer.entries]
    (out / "timings.log").write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------- main ---


def _error_payload(exc: BaseException, code: int) -> dict:
    if isinstance(exc, HomogError):
        payload = exc.to_dict()
    else:
        payload = {"error": type(exc).__name__, "message": str(exc)}
    payload["exit_code"] = code
    return payload


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, NoConvergence):
        return 3
    if isinstance(exc, OSError):
        return 4
    if isinstance(exc, HomogError):
        return exc.exit_code
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maghomog", description="Periodic homogenization of magnetic suspensions.")
    p.add_argument("command", choices=["cell", "macro", "dns", "verify"])
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", default=None, help="output directory (default: config 'out' or ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for independent solves")
    p.add_argument("--log-level", default="WARNING")
    p.add_argument("--version", action="version", version=__version__)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = parse_config(args.config)
        if cfg.command != args.command:
            cfg = dataclasses.replace(cfg, command=args.command)
        out = out or Path(cfg.out or "out")
        run(cfg, out, args.threads)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error JSON
        code = _exit_code(exc)
        payload = _error_payload(exc, code)
        text = json.dumps(payload, sort_keys=True, default=str)
        print(text, file=sys.stderr)
        if out is not None:
            try:
                ensure_dir(out)
                (Path(out) / "error.json").write_text(text + "\n")
            except OSError:
                pass
        if code == 1 and not isinstance(exc, HomogError):
            log.exception("unexpected failure")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
