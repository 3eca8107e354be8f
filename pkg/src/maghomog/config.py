"""Run configuration: parsing, validation, defaults and lossless echo-back.

Config files are JSON. Unknown keys are rejected. Indices (``axis``) are
0-based. Every default is written explicitly in the echo-back produced by
:meth:`RunConfig.to_dict`, and :func:`config_hash` is the SHA-256 of its
canonical JSON text.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, HomogError, ParseError, ValidationError
from .grid import GeometrySpec, assign_material, build_unit_cell_mesh
from .macro import MacroConfig, make_k_field

log = logging.getLogger(__name__)

COMMANDS = ("cell", "macro", "dns", "verify")
SHAPES = ("none", "disk", "layered", "checkerboard")
RIGID_MODES = ("eliminate", "penalty")
SOLVERS = ("minres", "direct")
DEFAULT_EPS = (0.5, 0.25, 0.125)
MEYERS_CONTRAST = 10.0

_TOP = {"command", "d", "n", "tol", "mu", "geometry", "rigid_mode", "solver", "strict", "macro", "dns",
        "output", "out", "config_hash"}
_GEOM = {"shape", "mu", "radius", "center", "axis", "split", "contrast"}
_MACRO = {"Re", "Fr", "S", "g", "k", "lengths", "n", "tol"}
_DNS = {"eps", "n_cell", "tol"}
_OUTPUT = {"vtk", "sample_n"}


@dataclass(frozen=True)
class RunConfig:
    command: str
    geometry: GeometrySpec
    macro: MacroConfig
    d: int = 2
    n: int = 64
    tol: float = 1e-10
    rigid_mode: str = "eliminate"
    solver: str = "minres"
    strict: bool = False
    eps: tuple = DEFAULT_EPS
    dns_n_cell: int = 16
    dns_tol: float = 1e-8
    vtk: bool = True
    sample_n: int = 0
    out: str | None = None
    warnings: tuple = field(default=(), compare=False)

    def to_dict(self) -> dict:
        g = self.geometry
        m = self.macro
        geom = {"shape": g.shape, "radius": g.radius, "center": list(g.center) if g.center is not None else None,
                "axis": g.axis, "split": g.split, "contrast": g.contrast}
        mu = g.mu[0] if len(g.mu) == 1 else list(g.mu)
        return {
            "command": self.command,
            "d": self.d,
            "n": self.n,
            "tol": self.tol,
            "mu": mu,
            "geometry": geom,
            "rigid_mode": self.rigid_mode,
            "solver": self.solver,
            "strict": self.strict,
            "macro": {"Re": m.Re, "Fr": m.Fr, "S": m.S, "g": list(m.g), "k": _plain(m.k),
                      "lengths": list(m.lengths), "n": m.n, "tol": m.tol},
            "dns": {"eps": list(self.eps), "n_cell": self.dns_n_cell, "tol": self.dns_tol},
            "output": {"vtk": self.vtk, "sample_n": self.sample_n},
            "out": self.out,
        }

    @property
    def hash(self) -> str:
        return config_hash(self)

    def dns_macro(self) -> MacroConfig:
        """Macro parameters with the DNS tolerance (same physics, own solver tolerance)."""
        m = self.macro
        return MacroConfig(m.Re, m.Fr, m.S, m.g, m.k, m.lengths, m.n, self.dns_tol)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def canonical(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()


# ------------------------------------------------------------ helpers ---


def _unknown(section: str, data: dict, allowed: set) -> None:
    extra = sorted(set(data) - allowed)
    if extra:
        raise ValidationError(f"unknown key {extra[0]!r} in {section}")


def _num(x, name: str, kind=float):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ValidationError(f"{name} must be a number")
    if kind is int:
        if float(x) != int(x):
            raise ValidationError(f"{name} must be an integer")
        return int(x)
    return float(x)


def _vec(x, name: str, d: int) -> tuple:
    if not isinstance(x, (list, tuple)) or len(x) != d:
        raise ValidationError(f"{name} must be a list of {d} numbers")
    return tuple(_num(v, f"{name}[{k}]") for k, v in enumerate(x))


def _bool(x, name: str) -> bool:
    if not isinstance(x, bool):
        raise ValidationError(f"{name} must be true or false")
    return x


def _choice(x, name: str, options) -> str:
    if x not in options:
        raise ValidationError(f"{name} must be one of {', '.join(options)}")
    return x


# ------------------------------------------------------------- parsing ---


def parse_config_text(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(data)


def parse_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config_text(text)


def from_dict(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object")
    _unknown("config", data, _TOP)
    if "command" not in data:
        raise ValidationError("command is required")
    command = _choice(data["command"], "command", COMMANDS)
    d = _num(data.get("d", 2), "d", int)
    if d not in (2, 3):
        raise ValidationError("d must be 2 or 3")
    n = _num(data.get("n", 64), "n", int)
    if n < 4:
        raise ValidationError("n must be at least 4")
    tol = _num(data.get("tol", 1e-10), "tol")
    if not 0 < tol <= 1e-4:
        raise ValidationError("tol must lie in (0, 1e-4]")

    geom = data.get("geometry", {"shape": "none"})
    if not isinstance(geom, dict):
        raise ValidationError("geometry must be an object")
    _unknown("geometry", geom, _GEOM)
    shape = _choice(geom.get("shape", "none"), "geometry.shape", SHAPES)
    if "mu" in data and "mu" in geom:
        raise ValidationError("mu given both at top level and in geometry")
    mu_raw = data.get("mu", geom.get("mu", 1.0))
    if isinstance(mu_raw, (list, tuple)):
        mu = tuple(_num(v, "mu") for v in mu_raw)
    else:
        mu = (_num(mu_raw, "mu"),)
    if not mu or len(mu) > 2:
        raise ValidationError("mu must be a number or a pair")
    if any(not v > 0 for v in mu):
        raise ValidationError("mu must be positive")
    center = geom.get("center")
    center = None if center is None else _vec(center, "geometry.center", d)
    contrast = geom.get("contrast")
    contrast = None if contrast is None else _num(contrast, "geometry.contrast")
    axis = _num(geom.get("axis", 0), "geometry.axis", int)
    if not 0 <= axis < d:
        raise ValidationError(f"geometry.axis must lie in 0..{d - 1}")
    try:
        spec = GeometrySpec(shape=shape, mu=mu, radius=_num(geom.get("radius", 0.25), "geometry.radius"),
                            center=center, axis=axis, split=_num(geom.get("split", 0.5), "geometry.split"),
                            contrast=contrast)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    if shape == "none" and len(mu) != 1:
        raise ValidationError("shape none takes a single mu")
    for res, label in ((n, "n"),) + (((_num(data.get("dns", {}).get("n_cell", 16), "dns.n_cell", int), "dns.n_cell"),)
                                     if command in ("dns", "verify") else ()):
        if res < 4:
            continue
        try:
            assign_material(build_unit_cell_mesh(d, res), spec)
        except HomogError as exc:
            raise ValidationError(f"geometry at {label}={res}: {exc}") from None

    macro = data.get("macro", {})
    if not isinstance(macro, dict):
        raise ValidationError("macro must be an object")
    _unknown("macro", macro, _MACRO)
    lengths = _vec(macro.get("lengths", [1.0] * d), "macro.lengths", d)
    if any(not L > 0 for L in lengths):
        raise ValidationError("macro.lengths must be positive")
    g = _vec(macro.get("g", [0.0] * d), "macro.g", d)
    k = macro.get("k", {"type": "constant", "vector": [1.0] + [0.0] * (d - 1)})
    if not isinstance(k, dict):
        raise ValidationError("macro.k must be an object")
    k = _plain(k)
    if k.get("type", "constant") == "trig" and d != 2:
        raise ValidationError("trig k field is two-dimensional")
    try:
        make_k_field(k, lengths)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"macro.k: {exc}") from None
    mn = _num(macro.get("n", 64), "macro.n", int)
    if mn < 2:
        raise ValidationError("macro.n must be at least 2")
    mtol = _num(macro.get("tol", 1e-8), "macro.tol")
    if not 0 < mtol <= 1e-4:
        raise ValidationError("macro.tol must lie in (0, 1e-4]")
    mc = MacroConfig(Re=_num(macro.get("Re", 1.0), "macro.Re"), Fr=_num(macro.get("Fr", 1.0), "macro.Fr"),
                     S=_num(macro.get("S", 1.0), "macro.S"), g=g, k=k, lengths=lengths, n=mn, tol=mtol)

    dns = data.get("dns", {})
    if not isinstance(dns, dict):
        raise ValidationError("dns must be an object")
    _unknown("dns", dns, _DNS)
    eps_raw = dns.get("eps", list(DEFAULT_EPS))
    if not isinstance(eps_raw, (list, tuple)) or not eps_raw:
        raise ValidationError("dns.eps must be a non-empty list")
    eps = tuple(_num(e, "dns.eps") for e in eps_raw)
    for e in eps:
        if not 0 < e <= min(lengths):
            raise ValidationError("dns.eps entries must lie in (0, min length]")
        for L in lengths:
            m = L / e
            if abs(m - round(m)) > 1e-9:
                raise ValidationError(f"domain length {L} is not a whole number of cells of size {e}")
    n_cell = _num(dns.get("n_cell", 16), "dns.n_cell", int)
    if n_cell < 8:
        raise ValidationError("dns.n_cell must be at least 8")
    dtol = _num(dns.get("tol", 1e-8), "dns.tol")
    if not 0 < dtol <= 1e-4:
        raise ValidationError("dns.tol must lie in (0, 1e-4]")

    outp = data.get("output", {})
    if not isinstance(outp, dict):
        raise ValidationError("output must be an object")
    _unknown("output", outp, _OUTPUT)
    sample_n = _num(outp.get("sample_n", 0), "output.sample_n", int)
    if sample_n < 0:
        raise ValidationError("output.sample_n must be non-negative")
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ValidationError("out must be a string")

    warnings = []
    if len(mu) == 2 and max(mu) / min(mu) > MEYERS_CONTRAST:
        warnings.append(f"contrast {max(mu) / min(mu):g} is large; the small-oscillation condition may fail")
    return RunConfig(
        command=command, geometry=spec, macro=mc, d=d, n=n, tol=tol,
        rigid_mode=_choice(data.get("rigid_mode", "eliminate"), "rigid_mode", RIGID_MODES),
        solver=_choice(data.get("solver", "minres"), "solver", SOLVERS),
        strict=_bool(data.get("strict", False), "strict"),
        eps=eps, dns_n_cell=n_cell, dns_tol=dtol,
        vtk=_bool(outp.get("vtk", True), "output.vtk"),
        sample_n=sample_n, out=out, warnings=tuple(warnings),
    )


def echo(cfg: RunConfig) -> dict:
    """Fully explicit config, including its hash; parses back to an equal RunConfig."""
    out = cfg.to_dict()
    out["config_hash"] = config_hash(cfg)
    return out


__all__ = ["RunConfig", "parse_config", "parse_config_text", "from_dict", "echo", "config_hash", "canonical",
           "ConfigError"]
