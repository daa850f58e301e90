"""Scenario files: schema, validation and construction of the solution they describe.

A scenario is a JSON object::

    {
      "name": "hhp2-doubling",
      "module": "doubling",
      "seed": 0,
      "solution": {"type": "polynomial", "dim": 2,
                   "terms": [[[2, 0], 1.0], [[0, 2], -1.0]]},
      "params": {"points": [[0, 0]], "r_max": 0.5, "m": 9}
    }

``solution`` is either ``{"type": "polynomial", "dim", "terms"}`` (a sum of
harmonic monomial groups, one group per degree) or ``{"type": "pde",
"field": {...}, "grid": {...}, "boundary": {"terms": [...]}}``.  The
``green-audit`` module needs no solution.  Unknown keys are rejected.
"""
from __future__ import annotations

import json
import threading
from collections import defaultdict
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .errors import ScenarioError
from .field import make_hoelder_field, polynomial_solution
from .hhp import from_monomial_list
from .io import canonical_json
from .pde import Grid, solve_dirichlet

__all__ = ["MODULES", "SCHEMA", "Scenario", "load_scenario", "validate", "build_solution", "clear_cache"]

MODULES = ("gen", "doubling", "approx-audit", "green-audit", "strata", "cover", "neck", "minkowski")

_num = {"type": "number"}
_int = {"type": "integer"}
_point = {"type": "array", "items": _num, "minItems": 2, "maxItems": 3}
_terms = {"type": "array", "minItems": 1,
          "items": {"type": "array", "minItems": 2, "maxItems": 2,
                    "prefixItems": [{"type": "array", "items": {"type": "integer", "minimum": 0}}, _num]}}
_ladder = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2}
_region = {"type": "object", "additionalProperties": False, "required": ["radius"],
           "properties": {"center": _point, "radius": {"type": "number", "exclusiveMinimum": 0}}}

PARAMS = {
    "gen": {"write_csv": {"type": "boolean"}},
    "doubling": {"points": {"type": "array", "items": _point, "minItems": 1}, "r_max": _num, "m": _int,
                 "mode": {"enum": ["centered", "uncentered"]}, "eps": _num, "expect_degree": _num,
                 "tol": _num},
    "approx-audit": {"x": _point, "r_list": _ladder, "eps": _num, "n_cells": _int, "min_slope": _num},
    "green-audit": {"y": _point, "degree": _int, "samples": _int},
    "strata": {"k": _int, "eta": _num, "r_ladder": _ladder, "region": _region, "r_max": _num, "d_max": _int,
               "min_slope": _num},
    "cover": {"r_floors": _ladder, "Lambda": _num, "eps": _num, "region": _region, "r0": _num,
              "mode": {"enum": ["critical", "singular"]}, "max_change": _num},
    "neck": {"x": _point, "r": _num, "d": _num, "k": _int, "eps": _num, "eta": _num, "tau": _num,
             "window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}, "per_axis": _int,
             "r_floor": _num},
    "minkowski": {"region": _region, "r_ladder": _ladder, "levels": _int,
                  "mode": {"enum": ["critical", "singular"]}, "min_slope": _num},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "module": {"enum": list(MODULES)},
        "seed": {"type": "integer", "minimum": 0},
        "params": {"type": "object"},
        "solution": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["type", "dim", "terms"],
                 "properties": {"type": {"const": "polynomial"}, "dim": {"enum": [2, 3]}, "terms": _terms,
                                "shift": _point}},
                {"type": "object", "additionalProperties": False, "required": ["type", "field", "grid", "boundary"],
                 "properties": {
                     "type": {"const": "pde"},
                     "field": {"type": "object", "additionalProperties": False,
                               "required": ["mode", "lam", "alpha", "dim"],
                               "properties": {"mode": {"enum": ["identity", "radial_bump", "random_smoothed"]},
                                              "lam": {"type": "number", "minimum": 0},
                                              "alpha": {"type": "number", "exclusiveMinimum": 0,
                                                        "exclusiveMaximum": 1},
                                              "dim": {"enum": [2, 3]}, "params": {"type": "object"}}},
                     "grid": {"type": "object", "additionalProperties": False, "required": ["half_width", "n_cells"],
                              "properties": {"center": _point,
                                             "half_width": {"type": "number", "exclusiveMinimum": 0},
                                             "n_cells": {"type": "integer", "minimum": 4}}},
                     "boundary": {"type": "object", "additionalProperties": False, "required": ["terms"],
                                  "properties": {"terms": _terms}}}},
            ]
        },
    },
}


@dataclass
class Scenario:
    name: str
    module: str
    seed: int
    solution: dict | None
    params: dict = dc_field(default_factory=dict)
    source: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"name": self.name, "module": self.module, "seed": self.seed, "params": self.params}
        if self.solution is not None:
            out["solution"] = self.solution
        return out


def _path_key(err) -> str:
    p = ".".join(str(v) for v in err.absolute_path)
    return p or "<root>"


def validate(obj: dict, module: str | None = None) -> Scenario:
    """Validate a scenario object; raise ``ScenarioError`` listing every offending key."""
    if not isinstance(obj, dict):
        raise ScenarioError("scenario must be a JSON object", ["<root>"])
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(obj), key=lambda e: list(e.absolute_path))
    keys = []
    for e in errors:
        if e.validator == "additionalProperties" and isinstance(e.instance, dict):
            # name the unexpected keys themselves
            allowed = set(e.schema.get("properties", {}))
            base = _path_key(e)
            keys.extend(k if base == "<root>" else f"{base}.{k}" for k in sorted(set(e.instance) - allowed))
        else:
            keys.append(_path_key(e))
    msgs = [f"{_path_key(e)}: {e.message}" for e in errors]
    mod = obj.get("module", module)
    if module is not None and obj.get("module") not in (None, module):
        keys.append("module")
        msgs.append(f"module: scenario is for {obj.get('module')!r}, not {module!r}")
    if mod is None:
        keys.append("module")
        msgs.append("module: missing (give it in the file or as the subcommand)")
    elif mod in PARAMS and isinstance(obj.get("params", {}), dict):
        pschema = {"type": "object", "additionalProperties": False, "properties": PARAMS[mod]}
        for e in Draft202012Validator(pschema).iter_errors(obj.get("params", {})):
            k = "params." + _path_key(e) if e.absolute_path else "params"
            if e.validator == "additionalProperties":
                extra = sorted(set(obj["params"]) - set(PARAMS[mod]))
                keys.extend(f"params.{x}" for x in extra)
            else:
                keys.append(k)
            msgs.append(f"{k}: {e.message}")
    if mod not in (None, "green-audit") and "solution" not in obj:
        keys.append("solution")
        msgs.append("solution: required for this module")
    if keys:
        raise ScenarioError("invalid scenario: " + "; ".join(msgs), sorted(set(keys)))
    return Scenario(obj["name"], mod, int(obj.get("seed", 0)), obj.get("solution"), dict(obj.get("params", {})),
                    obj)


def load_scenario(path, module: str | None = None) -> Scenario:
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}", ["<file>"]) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}", ["<root>"]) from None
    return validate(obj, module)


def _poly_parts(dim: int, terms) -> list:
    groups = defaultdict(list)
    for exps, c in terms:
        if len(exps) != dim:
            raise ScenarioError(f"monomial {exps} does not have {dim} exponents", ["solution.terms"])
        groups[sum(exps)].append((exps, c))
    return [from_monomial_list(dim, groups[d]) for d in sorted(groups)]


_CACHE: dict = {}
_LOCKS: dict = defaultdict(threading.Lock)
_GUARD = threading.Lock()


def clear_cache() -> None:
    with _GUARD:
        _CACHE.clear()


def build_solution(sol: dict, seed: int = 0):
    """``(u, field)`` for a solution description; PDE solves are memoized per description and seed."""
    if sol["type"] == "polynomial":
        try:
            u = polynomial_solution(_poly_parts(sol["dim"], sol["terms"]), shift=sol.get("shift"))
        except ValueError as exc:
            raise ScenarioError(str(exc), ["solution.terms"]) from None
        return u, None
    key = canonical_json([sol, seed])
    with _GUARD:
        lock = _LOCKS[key]
    with lock:
        if key in _CACHE:
            return _CACHE[key]
        f = sol["field"]
        dim = f["dim"]
        params = dict(f.get("params", {}))
        try:
            fld = make_hoelder_field(seed, f["lam"], f["alpha"], dim, f["mode"], **params)
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"field: {exc}", ["solution.field"]) from None
        g = sol["grid"]
        center = tuple(g.get("center", [0.0] * dim))
        if len(center) != dim:
            raise ScenarioError("grid center dimension mismatch", ["solution.grid.center"])
        grid = Grid(dim, center, float(g["half_width"]), int(g["n_cells"]))
        parts = _poly_parts(dim, sol["boundary"]["terms"])
        bd = polynomial_solution(parts, harmonic_check=False)
        u = solve_dirichlet(fld, grid, lambda p: bd(p))
        _CACHE[key] = (u, fld)
        return u, fld


def poly_terms(P) -> list:
    """``[[exponents, coefficient], ...]`` for a homogeneous polynomial (nonzero terms only)."""
    from .hhp import as_poly, monomials
    p = as_poly(P)
    return [[list(map(int, e)), float(c)] for e, c in zip(monomials(p.dim, p.degree), p.coeffs) if c != 0.0]


def point(v, dim: int) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if len(a) != dim:
        raise ScenarioError(f"point {v} does not have dimension {dim}", ["params"])
    return a
