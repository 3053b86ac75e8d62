"""JSON documents exchanged by the command-line tools.

Every document is an object with ``schema_version`` and ``kind`` fields.
Floats go through :mod:`json`, which writes the shortest round-tripping
representation, so saving and loading is lossless at double precision.

Kinds
-----
``scenario``
    ``system`` (SystemConfig fields), ``grid`` (``F_theta``, ``F_tau``,
    ``F_nu``), ``power_model``, ``leakage_floor`` and ``users``: one object
    per UT with equal-length arrays ``gain_re``, ``gain_im``, ``theta``,
    ``tau``, ``nu``, ``power``. TB tensors and power distributions are
    rebuilt from the paths on load.
``assignment``
    ``scheme`` and ``users``: ``{"ut", "phi", "varphi"}`` per UT, plus an
    optional free-form ``report``.
``estimate``
    Header (``shape``, ``order``, ``support_size``, ``iterations``,
    ``converged``, ``final_residual``, ``estimator``) and ``users``: per UT the
    flat indices (in ``order``) of non-zero TB cells with their real and
    imaginary parts.
``spec``
    A :class:`~tfpsp.harness.ScenarioSpec` as produced by ``to_dict``.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .channel import CANONICAL_ORDER, PathSet, SystemConfig, TBGrid, UserChannel, build_tb_channel
from .harness import SCHEMA_VERSION, ScenarioSpec, SpecError
from .pilots import PilotAssignment


def _check_header(doc, kind: str) -> dict:
    if not isinstance(doc, dict):
        raise SpecError(f"{kind} document must be a JSON object")
    ver = doc.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise SpecError(f"unsupported schema_version {ver!r}, expected {SCHEMA_VERSION}")
    if doc.get("kind", kind) != kind:
        raise SpecError(f"expected a {kind} document, got {doc.get('kind')!r}")
    return doc


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SpecError(f"{path}: invalid JSON ({e})") from e


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


# scenario

def scenario_to_dict(channels: list[UserChannel], grid: TBGrid, power_model: str = "snapped",
                     leakage_floor: float = 1e-2) -> dict:
    users = []
    for c in channels:
        p = c.paths
        users.append({
            "gain_re": p.gains.real.tolist(), "gain_im": p.gains.imag.tolist(),
            "theta": p.theta.tolist(), "tau": p.tau.tolist(), "nu": p.nu.tolist(),
            "power": p.powers.tolist(),
        })
    return {
        "schema_version": SCHEMA_VERSION, "kind": "scenario",
        "system": asdict(grid.cfg),
        "grid": {"F_theta": grid.F_theta, "F_tau": grid.F_tau, "F_nu": grid.F_nu},
        "power_model": power_model, "leakage_floor": leakage_floor,
        "users": users,
    }


def scenario_from_dict(doc: dict) -> tuple[list[UserChannel], TBGrid]:
    _check_header(doc, "scenario")
    try:
        cfg = SystemConfig(**doc["system"])
        grid = TBGrid(cfg, **doc["grid"])
        pm = doc.get("power_model", "snapped")
        floor = float(doc.get("leakage_floor", 1e-2))
        channels = []
        for u in doc["users"]:
            gains = np.asarray(u["gain_re"], float) + 1j * np.asarray(u["gain_im"], float)
            paths = PathSet(gains, u["theta"], u["tau"], u["nu"], u["power"])
            channels.append(build_tb_channel(paths, grid, pm, floor))
    except (KeyError, TypeError, ValueError) as e:
        raise SpecError(f"bad scenario document: {e!r}") from e
    if len(channels) != cfg.U:
        raise SpecError(f"scenario lists {len(channels)} users but U = {cfg.U}")
    return channels, grid


# assignment

def assignment_to_dict(asg: PilotAssignment, scheme: str = "tfpsp", report: dict | None = None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION, "kind": "assignment", "scheme": scheme,
        "users": [{"ut": u, "phi": int(asg.phi[u]), "varphi": int(asg.varphi[u])}
                  for u in range(len(asg))],
    }
    if report is not None:
        doc["report"] = report
    return doc


def assignment_from_dict(doc: dict) -> tuple[PilotAssignment, str]:
    _check_header(doc, "assignment")
    try:
        users = sorted(doc["users"], key=lambda e: int(e["ut"]))
        if [int(e["ut"]) for e in users] != list(range(len(users))):
            raise ValueError("UT ids must be 0..U-1 without gaps")
        asg = PilotAssignment([int(e["phi"]) for e in users], [int(e["varphi"]) for e in users])
    except (KeyError, TypeError, ValueError) as e:
        raise SpecError(f"bad assignment document: {e!r}") from e
    scheme = doc.get("scheme", "tfpsp")
    if scheme not in ("tfpsp", "fpsp"):
        raise SpecError(f"unknown pilot scheme {scheme!r}")
    return asg, scheme


# estimate

def estimate_to_dict(per_ut: list[np.ndarray], *, estimator: str, iterations: int, converged: bool,
                     final_residual: float, support_size: int, extra: dict | None = None) -> dict:
    shape = list(per_ut[0].shape) if per_ut else []
    users = []
    for H in per_ut:
        flat = H.ravel(order=CANONICAL_ORDER)
        idx = np.flatnonzero(flat)
        users.append({"index": idx.tolist(), "re": flat[idx].real.tolist(),
                      "im": flat[idx].imag.tolist()})
    doc = {
        "schema_version": SCHEMA_VERSION, "kind": "estimate",
        "shape": shape, "order": CANONICAL_ORDER, "support_size": support_size,
        "estimator": estimator, "iterations": iterations, "converged": converged,
        "final_residual": final_residual, "users": users,
    }
    if extra:
        doc.update(extra)
    return doc


def estimate_from_dict(doc: dict) -> list[np.ndarray]:
    _check_header(doc, "estimate")
    shape = tuple(doc["shape"])
    order = doc.get("order", CANONICAL_ORDER)
    out = []
    for u in doc["users"]:
        flat = np.zeros(int(np.prod(shape)), dtype=complex)
        flat[np.asarray(u["index"], dtype=int)] = np.asarray(u["re"]) + 1j * np.asarray(u["im"])
        out.append(flat.reshape(shape, order=order))
    return out


# spec

def load_spec(path) -> ScenarioSpec:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise SpecError("spec document must be a JSON object")
    if doc.get("kind", "spec") != "spec":
        raise SpecError(f"expected a spec document, got {doc.get('kind')!r}")
    doc = {k: v for k, v in doc.items() if k != "kind"}
    return ScenarioSpec.from_dict(doc)


def spec_to_dict(spec: ScenarioSpec) -> dict:
    d = spec.to_dict()
    return {"schema_version": d.pop("schema_version"), "kind": "spec", **d}
