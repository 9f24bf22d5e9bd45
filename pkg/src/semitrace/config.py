"""Run configuration: JSON schema, defaults, and problem construction.

A configuration is a JSON document; every omitted setting is filled from
:data:`DEFAULTS`, and the fully resolved document is what gets snapshotted
next to the results.  Validation errors name the offending field path.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema

from .model import MagneticField, ProblemSpec, ScalarField, TestFunction, TorusDomain
from .verify import LadderSettings

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "SCHEMA",
    "RunConfig",
    "parse_config",
    "resolve_config",
    "snapshot_bytes",
]


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""


_NUMBER = {"type": "number"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}
_NUM_LIST = {"type": "array", "items": _NUMBER}

_MODE = {
    "type": "object",
    "properties": {"k": {"type": "array", "items": _INT, "minItems": 1}, "cos": _NUMBER, "sin": _NUMBER},
    "required": ["k"],
    "additionalProperties": False,
}
_FIELD = {
    "type": "object",
    "properties": {"constant": _NUMBER, "modes": {"type": "array", "items": _MODE}},
    "additionalProperties": False,
}
_B_COMPONENT = {
    "type": "object",
    "properties": {"j": _INT, "k": _INT, "constant": _NUMBER, "modes": {"type": "array", "items": _MODE}},
    "required": ["j", "k"],
    "additionalProperties": False,
}
_PHI = {
    "type": "object",
    "properties": {
        "support": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
        "kind": {"enum": ["bump", "poly_bump"]},
        "poly": _NUM_LIST,
        "amplitude": _NUMBER,
    },
    "required": ["support"],
    "additionalProperties": False,
}


def _section(props: dict, required: list[str] | None = None) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": required or []}


#: JSON schema of a (possibly partial) configuration.
SCHEMA = _section(
    {
        "problem": _section(
            {
                "domain": _section(
                    {
                        "d": {"enum": [2, 3]},
                        "periods": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                        "grid_n": _INT,
                    },
                    ["d", "periods"],
                ),
                "B": _section({"components": {"type": "array", "items": _B_COMPONENT}}),
                "V": _FIELD,
                "phi": _PHI,
            },
            ["domain", "phi"],
        ),
        "ladder": _section(
            {
                "p": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "grid_c": _NUMBER,
                "grid_multiple": {"type": "integer", "minimum": 2, "multipleOf": 2},
                "grid_min": {"type": "integer", "minimum": 8},
                "margin": _NUMBER,
                "certify": _BOOL,
                "cert_tol": _NUMBER,
                "refine": _BOOL,
                "max_refine": _INT,
                "dual_route": _BOOL,
                "exact_free": _BOOL,
            }
        ),
        "eig": _section({"dense_cap": _INT, "lanczos_tol": _NUMBER, "lanczos_max_iter": _INT, "lanczos_block": _INT}),
        "hsfc": _section({"N": _INT, "delta": {"type": ["number", "null"]}, "quad_n": _INT}),
        "fit": _section({"orders": {"type": "array", "items": _INT}, "min_points": _INT}),
        "kernel": _section({"points": {"type": "array", "items": _NUM_LIST}, "p_max": {"type": ["number", "null"]}}),
        "coeffs": _section({"grid_n": _INT}),
        "gauge_check": _section(
            {"points": _INT, "base_points": _INT, "amplitude": _NUMBER, "grid_n": _INT, "p": _NUMBER, "eigenvalues": _INT}
        ),
        "expand_check": _section(
            {"x0": {"type": ["array", "null"], "items": _NUMBER}, "h": _NUM_LIST, "truncations": {"type": "array", "items": _INT}}
        ),
        "hs_check": _section(
            {
                "phi": _PHI,
                "n": _INT,
                "matrices": _INT,
                "N": _INT,
                "delta": _NUMBER,
                "quad_n": _INT,
                "sweep": _section({"N": {"type": "array", "items": _INT}, "delta": _NUM_LIST, "quad_n": {"type": "array", "items": _INT}}),
            }
        ),
        "weyl": _section({"p": _NUMBER}),
        "tolerances": _section({k: _NUMBER for k in (
            "weyl_rel", "c0_rel", "c1_rel", "c2_rel", "dual_rel", "kernel_order", "trace_kernel",
            "subset_stderr", "transversality", "taylor_fit", "phase_identity", "spectrum_shift",
            "order_m0", "order_m1", "order_m2", "hs_apply", "hs_derivative",
        )}),
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
    },
    ["problem"],
)

#: Defaults applied to every omitted setting.
DEFAULTS: dict[str, Any] = {
    "problem": {
        "domain": {"grid_n": 32},
        "B": {"components": []},
        "V": {"constant": 0.0, "modes": []},
        "phi": {"kind": "bump", "amplitude": 1.0},
    },
    "ladder": {
        "p": [8, 10, 12, 16, 20, 24, 32, 40],
        "grid_c": 1.5,
        "grid_multiple": 4,
        "grid_min": 8,
        "margin": 1.0,
        "certify": True,
        "cert_tol": 1e-8,
        "refine": False,
        "max_refine": 3,
        "dual_route": True,
        "exact_free": True,
    },
    "eig": {"dense_cap": 4096, "lanczos_tol": 1e-8, "lanczos_max_iter": 400, "lanczos_block": 8},
    "hsfc": {"N": 4, "delta": None, "quad_n": 60},
    "fit": {"orders": [0, 1, 2, 3], "min_points": 6},
    "kernel": {"points": [], "p_max": None},
    "coeffs": {"grid_n": 64},
    "gauge_check": {"points": 100, "base_points": 3, "amplitude": 0.1, "grid_n": 32, "p": 8.0, "eigenvalues": 100},
    "expand_check": {"x0": None, "h": [0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125], "truncations": [0, 1, 2]},
    "hs_check": {
        "phi": {"support": [-5.0, 5.0], "kind": "bump", "amplitude": 1.0},
        "n": 50,
        "matrices": 2,
        "N": 4,
        "delta": 1.0,
        "quad_n": 60,
        "sweep": {"N": [2, 3, 4], "delta": [1.0], "quad_n": [20, 40, 60]},
    },
    "weyl": {"p": 16.0},
    "tolerances": {
        "weyl_rel": 1e-3,
        "c0_rel": 1e-3,
        "c1_rel": 0.02,
        "c2_rel": 0.15,
        "dual_rel": 1e-6,
        "kernel_order": 2.5,
        "trace_kernel": 1e-9,
        "subset_stderr": 3.0,
        "transversality": 1e-12,
        "taylor_fit": 1e-6,
        "phase_identity": 1e-6,
        "spectrum_shift": 1e-10,
        "order_m0": 0.9,
        "order_m1": 1.8,
        "order_m2": 2.7,
        "hs_apply": 1e-7,
        "hs_derivative": 1e-5,
    },
    "output": "semitrace-run",
    "seed": 0,
    "threads": 1,
}


def _merge(defaults: Any, given: Any) -> Any:
    if isinstance(defaults, dict) and isinstance(given, dict):
        out = {k: copy.deepcopy(v) for k, v in defaults.items()}
        for k, v in given.items():
            out[k] = _merge(defaults.get(k), v) if k in defaults else copy.deepcopy(v)
        return out
    return copy.deepcopy(given)


def _path(error: jsonschema.ValidationError) -> str:
    parts = []
    for p in error.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else (f".{p}" if parts else str(p)))
    return "".join(parts) or "<root>"


def resolve_config(data: dict) -> dict:
    """Validate a raw document and return it with all defaults filled in.

    Raises
    ------
    ConfigError
        On schema violations, field flux, or modes the grids cannot represent.
    """
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_path(e)}: {e.message}")
    resolved = _merge(DEFAULTS, data)
    _check_semantics(resolved)
    return resolved


def _check_semantics(cfg: dict) -> None:
    prob = cfg["problem"]
    dom = prob["domain"]
    d = dom["d"]
    if len(dom["periods"]) != d:
        raise ConfigError(f"problem.domain.periods: expected {d} periods, got {len(dom['periods'])}")
    a, b = prob["phi"]["support"]
    if not a < b:
        raise ConfigError("problem.phi.support: lower end must be below upper end")
    if cfg["hs_check"]["N"] < 3:
        raise ConfigError("hs_check.N: the second-derivative check needs extension order N >= 3")
    grids = {"problem.domain.grid_n": dom["grid_n"], "gauge_check.grid_n": cfg["gauge_check"]["grid_n"]}

    def check_modes(path: str, modes: list) -> None:
        for i, m in enumerate(modes):
            if len(m["k"]) != d:
                raise ConfigError(f"{path}[{i}].k: expected {d} wave numbers")
            kmax = max(abs(int(k)) for k in m["k"])
            for gpath, n in grids.items():
                if n < 4 * kmax:
                    raise ConfigError(
                        f"{path}[{i}].k: wave number {kmax} is not representable on {gpath}={n} (needs >= {4 * kmax})"
                    )

    check_modes("problem.V.modes", prob["V"].get("modes", []))
    for c, comp in enumerate(prob["B"]["components"]):
        if not (0 <= comp["j"] < comp["k"] < d):
            raise ConfigError(f"problem.B.components[{c}]: need 0 <= j < k < d")
        check_modes(f"problem.B.components[{c}].modes", comp.get("modes", []))
    try:
        problem = build_problem(cfg)
    except ValueError as exc:  # pragma: no cover - defensive
        raise ConfigError(f"problem: {exc}") from exc
    flux = problem.B.flux()
    if not problem.B.is_flux_free():
        raise ConfigError(f"problem.B: nonzero flux {flux}; only flux-free fields admit a periodic potential")
    if d == 3 and problem.B.closedness_defect() > 1e-12:
        raise ConfigError("problem.B: field is not closed (dB != 0)")
    if len(cfg["ladder"]["p"]) and sorted(cfg["ladder"]["p"]) != list(cfg["ladder"]["p"]):
        raise ConfigError("ladder.p: values must be increasing")


def build_problem(cfg: dict) -> ProblemSpec:
    """Problem data from a resolved configuration."""
    prob = cfg["problem"]
    dom = prob["domain"]
    domain = TorusDomain(int(dom["d"]), tuple(float(x) for x in dom["periods"]), int(dom["grid_n"]))
    B = MagneticField.from_dict(prob["B"], domain.d, domain.periods)
    V = ScalarField.from_dict(prob["V"], domain.periods)
    phi = TestFunction.from_dict(prob["phi"])
    return ProblemSpec(domain, B, V, phi)


def snapshot_bytes(cfg: dict) -> bytes:
    """Canonical JSON serialization of a resolved configuration."""
    return (json.dumps(cfg, indent=2, sort_keys=True) + "\n").encode()


@dataclass(frozen=True)
class RunConfig:
    """A validated, fully resolved configuration.

    Attributes
    ----------
    data : dict
        Resolved document (defaults applied).
    source : str or None
        Path the configuration was read from.
    """

    data: dict
    source: str | None = None

    @property
    def problem(self) -> ProblemSpec:
        return build_problem(self.data)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def threads(self) -> int:
        return int(self.data["threads"])

    @property
    def output(self) -> Path:
        return Path(self.data["output"])

    @property
    def tolerances(self) -> dict:
        return self.data["tolerances"]

    @property
    def snapshot(self) -> bytes:
        return snapshot_bytes(self.data)

    @property
    def digest(self) -> str:
        """SHA-256 of the snapshot."""
        return hashlib.sha256(self.snapshot).hexdigest()

    def ladder_settings(self) -> LadderSettings:
        lad, eig, hs = self.data["ladder"], self.data["eig"], self.data["hsfc"]
        return LadderSettings(
            grid_c=float(lad["grid_c"]),
            grid_multiple=int(lad["grid_multiple"]),
            grid_min=int(lad["grid_min"]),
            margin=float(lad["margin"]),
            certify=bool(lad["certify"]),
            cert_tol=float(lad["cert_tol"]),
            refine=bool(lad["refine"]),
            max_refine=int(lad["max_refine"]),
            dense_cap=int(eig["dense_cap"]),
            lanczos={
                "tol": float(eig["lanczos_tol"]),
                "max_iter": int(eig["lanczos_max_iter"]),
                "block": int(eig["lanczos_block"]),
                "seed": self.seed,
            },
            dual_route=bool(lad["dual_route"]),
            hs_order=int(hs["N"]),
            hs_delta=None if hs["delta"] is None else float(hs["delta"]),
            hs_quad_n=int(hs["quad_n"]),
            kernel_points=tuple(tuple(float(x) for x in pt) for pt in self.data["kernel"]["points"]),
            workers=self.threads,
            exact_free=bool(lad["exact_free"]),
        )

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with top-level keys (``output``, ``seed``, ``threads``) replaced."""
        data = copy.deepcopy(self.data)
        for k, v in overrides.items():
            if v is not None:
                data[k] = v
        return RunConfig(resolve_config(data), self.source)

    def to_json(self) -> str:
        return self.snapshot.decode()


def parse_config(path: str | Path | dict) -> RunConfig:
    """Read, validate and resolve a configuration file (or a raw dict).

    Raises
    ------
    ConfigError
        If the file is missing, not JSON, or violates the schema.
    """
    if isinstance(path, dict):
        return RunConfig(resolve_config(path), None)
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"<file>: configuration file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: invalid JSON ({exc})") from exc
    return RunConfig(resolve_config(data), str(path))
