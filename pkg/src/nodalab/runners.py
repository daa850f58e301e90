"""One runner per CLI module: scenario in, tables and a summary out.

Runners never write files; the CLI owns the output directory.  Each runner
returns a :class:`RunResult` whose ``failures`` make the run exit nonzero
and whose ``warnings`` do so only under ``--strict``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import approx, cover, doubling, green, strata
from .pde import GridSolution
from .scenario import Scenario, build_solution, point

__all__ = ["RunResult", "RUNNERS", "run_scenario"]


@dataclass
class RunResult:
    tables: dict = dc_field(default_factory=dict)   # name -> (header, rows)
    summary: dict = dc_field(default_factory=dict)
    failures: list = dc_field(default_factory=list)
    warnings: list = dc_field(default_factory=list)
    blobs: dict = dc_field(default_factory=dict)    # name -> bytes


def _region(p: dict, dim: int, default_radius: float = 1.0):
    reg = p.get("region", {})
    return point(reg.get("center", [0.0] * dim), dim), float(reg.get("radius", default_radius))


def run_gen(scn: Scenario, u, fld) -> RunResult:
    res = RunResult()
    if fld is not None:
        res.blobs["field.json"] = (fld.to_json() + "\n").encode()
    if isinstance(u, GridSolution):
        import io as _io
        import json
        header = {"format": "nodalab-grid", "order": u.order, **u.grid.to_dict()}
        buf = _io.BytesIO()
        buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        buf.write(u.values.astype("<f8").tobytes(order="C"))
        res.blobs["solution.bin"] = buf.getvalue()
        res.summary.update(u.info)
        if scn.params.get("write_csv", False):
            pts = u.grid.nodes().reshape(-1, u.dim)
            res.tables["solution"] = ([f"x{k}" for k in range(u.dim)] + ["u"],
                                      [list(p) + [v] for p, v in zip(pts, u.values.reshape(-1))])
    else:
        res.summary["analytic"] = True
    return res


def run_doubling(scn: Scenario, u, fld) -> RunResult:
    p = scn.params
    dim = u.dim
    pts = [point(x, dim) for x in p.get("points", [[0.0] * dim])]
    r_max, m = float(p.get("r_max", 0.5)), int(p.get("m", 9))
    mode, eps = p.get("mode", "centered"), float(p.get("eps", 0.1))
    res = RunResult()
    rows, mono = [], []
    for x in pts:
        prof = doubling.profile(u, fld, x, r_max, m, mode)
        rows.extend(prof.rows())
        rep = doubling.almost_monotonicity_audit(prof, eps)
        mono.append(list(x) + [len(rep.violations), rep.min_small_scale_D, rep.pairs_checked])
        for s, r, ex in rep.violations:
            res.warnings.append(f"monotonicity violation at x={tuple(x)}: D({s:g}) exceeds D({r:g}) + eps by {ex:.3g}")
        if "expect_degree" in p:
            tol = float(p.get("tol", 1e-6))
            dev = np.abs(prof.D[prof.valid] - float(p["expect_degree"]))
            if not len(dev) or float(np.max(dev)) > tol:
                res.failures.append(f"doubling index at x={tuple(x)} deviates from {p['expect_degree']} "
                                    f"by {float(np.max(dev)) if len(dev) else float('nan'):.3g}")
    res.tables["doubling"] = (["x", "mode", "r", "D", "N", "H", "flags"], rows)
    res.tables["monotonicity"] = ([f"x{k}" for k in range(dim)] + ["violations", "min_small_scale_D", "pairs"], mono)
    res.summary["points"] = len(pts)
    return res


def run_approx(scn: Scenario, u, fld) -> RunResult:
    p = scn.params
    dim = u.dim
    x = point(p.get("x", [0.0] * dim), dim)
    rs = sorted(map(float, p.get("r_list", [2.0 ** -j for j in range(3, 8)])), reverse=True)
    eps = float(p.get("eps", 0.1))
    n_cells = p.get("n_cells")
    res = RunResult()
    rows, close = [], []
    for r in rs:
        h, rep = approx.harmonic_approximation(u, fld, x, r, n_cells=n_cells)
        rows.append([r, rep.sup_distance, rep.h_at_zero, rep.h_sphere_mean_sq])
        for row in approx.closeness_audit(u, fld, x, r, eps, h=h):
            close.append([r, row["s"], row["D_h"], row["D_u"], row["diff"], row["flag"]])
            if row["flag"]:
                res.warnings.append(f"closeness at r={r:g}, s={row['s']:g}: {row['diff']:.3g} > {eps}")
    sup = [row[1] for row in rows]
    slope = approx.fit_slope(rs, sup)
    monotone = all(a >= b for a, b in zip(sup, sup[1:]))
    res.tables["approx"] = (["r", "sup_distance", "h0", "h_sphere_mean_sq"], rows)
    res.tables["closeness"] = (["r", "s", "D_h", "D_u", "diff", "flag"], close)
    res.summary.update(slope=slope, monotone=monotone)
    if "min_slope" in p and not slope >= float(p["min_slope"]):
        res.failures.append(f"sup-distance slope {slope:.3g} below {p['min_slope']}")
    if not monotone:
        res.warnings.append("sup distance is not monotone in r")
    return res


def run_green(scn: Scenario, u, fld) -> RunResult:
    p = scn.params
    y = np.asarray(p.get("y", [0.0, 0.0, 1.0]), dtype=float)
    if len(y) != 3:
        from .errors import ScenarioError
        raise ScenarioError("green-audit needs a 3D point y", ["params.y"])
    dmax = int(p.get("degree", 8))
    rng = np.random.default_rng(scn.seed)
    v = rng.standard_normal((int(p.get("samples", 200)), 3))
    ry = float(np.linalg.norm(y))
    X = v / np.linalg.norm(v, axis=1, keepdims=True) * (0.5 * ry * rng.random(len(v)) ** (1 / 3))[:, None]
    res = RunResult()
    rem = []
    for d in range(dmax + 1):
        a = green.remainder_audit(green.expand_kernel(y, d), X)
        rem.append([d, a.max_ratio, a.bound, a.max_grad_ratio, a.grad_bound, a.ok])
        if not a.ok:
            res.warnings.append(f"remainder bound exceeded at degree {d}")
    xq = 0.25 * ry * v[:64] / np.linalg.norm(v[:64], axis=1, keepdims=True)
    errs = green.partial_sum_errors(y, xq, dmax)
    ratios = [float(errs[d + 1] / errs[d]) for d in range(dmax)]
    scal = []
    for k in range(dmax + 1):
        e = green.scaling_exponent(y, k)
        scal.append([k, e, -1.0 - k, abs(e + 1.0 + k)])
    res.tables["green_remainder"] = (["degree", "max_ratio", "bound", "max_grad_ratio", "grad_bound", "ok"], rem)
    res.tables["green_partial"] = (["degree", "sup_error", "ratio_to_previous"],
                                   [[d, errs[d], ratios[d - 1] if d else float("nan")] for d in range(dmax + 1)])
    res.tables["green_scaling"] = (["k", "exponent", "expected", "abs_error"], scal)
    res.summary.update(max_ratio_per_degree=max(ratios), max_exponent_error=max(r[3] for r in scal))
    return res


def run_strata(scn: Scenario, u, fld) -> RunResult:
    p = scn.params
    dim = u.dim
    k = int(p.get("k", dim - 2))
    rs = list(map(float, p.get("r_ladder", [2.0 ** -j for j in range(3, 8)])))
    rep = cover.strata_volume_audit(u, fld, k, float(p.get("eta", 0.1)), rs, _region(p, dim),
                                    float(p.get("r_max", 0.25)), int(p.get("d_max", 4)))
    res = RunResult()
    res.tables["strata"] = (["r", "spacing", "members", "content"],
                            [[r, h, int(c), v] for r, h, c, v in zip(rep.r, rep.spacing, rep.counts, rep.content)])
    res.summary.update(slope=rep.slope, empty=rep.empty, k=k)
    if rep.empty:
        res.warnings.append("empty strata: no exponent fit")
    elif "min_slope" in p and not rep.slope >= float(p["min_slope"]):
        res.failures.append(f"strata slope {rep.slope:.3g} below {p['min_slope']}")
    return res


def run_cover(scn: Scenario, u, fld) -> RunResult:
    p = scn.params
    dim = u.dim
    floors = sorted(map(float, p.get("r_floors", [2.0 ** -4, 2.0 ** -5])), reverse=True)
    region = _region(p, dim)
    res = RunResult()
    balls, summ = [], []
    contents = []
    for rf in floors:
        cv = cover.critical_cover(u, fld, rf, mode=p.get("mode", "critical"), Lambda=float(p.get("Lambda", 2.0)),
                                  region=region, eps=float(p.get("eps", 0.1)), r0=float(p.get("r0", 0.25)))
        for b in cv.balls:
            balls.append([rf, *b.center, b.radius, b.tag, "" if b.level is None else b.level])
        cov, disj = cv.coverage(), cv.disjointness_ok()
        summ.append([rf, cv.count, cv.terminal_count, cv.content, cov, disj, cv.pruned, cv.info["detected"]])
        contents.append(cv.content)
        if cov < 1.0:
            res.failures.append(f"r_floor={rf:g}: coverage {cov:.4f} < 1")
        if not disj:
            res.failures.append(f"r_floor={rf:g}: fifth-radius cores overlap")
    changes = [abs(b - a) / a for a, b in zip(contents, contents[1:]) if a > 0]
    lim = float(p.get("max_change", 0.2))
    for ch in changes:
        if ch > lim:
            res.warnings.append(f"content changed by {ch:.3g} under halving r_floor")
    res.tables["cover_balls"] = (["r_floor"] + [f"c{k}" for k in range(dim)] + ["radius", "tag", "level"], balls)
    res.tables["cover_summary"] = (["r_floor", "count", "terminal", "content", "coverage", "disjoint", "pruned",
                                    "detected"], summ)
    res.summary.update(max_change=max(changes) if changes else 0.0)
    return res


def run_neck(scn: Scenario, u, fld) -> RunResult:
    p = scn.params
    dim = u.dim
    x = point(p.get("x", [0.0] * dim), dim)
    args = dict(d=float(p.get("d", 2)), k=int(p.get("k", dim - 2)), eps=float(p.get("eps", 0.1)),
                eta=float(p.get("eta", 0.1)), tau=float(p.get("tau", 0.3)))
    window = tuple(p["window"]) if "window" in p else None
    per_axis = int(p.get("per_axis", 9))
    r = float(p.get("r", 0.5))
    nr = cover.build_neck(u, fld, (x, r), args["d"], args["k"], args["eps"], args["eta"], args["tau"],
                          window=window, per_axis=per_axis)
    res = RunResult()
    if isinstance(nr, cover.NeckFailure):
        res.summary.update(built=False, stage=nr.stage, reason=nr.reason)
        res.warnings.append(f"neck not built: {nr.reason}")
        res.tables["neck_summary"] = (["key", "value"], [["built", False], ["stage", nr.stage],
                                                        ["reason", nr.reason]])
        return res
    audit = cover.neck_structure_audit(nr)
    res.tables["neck_centers"] = ([f"c{k}" for k in range(dim)] + ["r_x"],
                                  [list(c) + [rc] for c, rc in zip(nr.centers, nr.radii)])
    rows = [["built", True]] + [[f"invariant_{k}", v["ok"]] for k, v in sorted(nr.invariants.items())]
    rows += [[k, v] for k, v in sorted(audit.items())]
    if "r_floor" in p:
        dec = cover.neck_decomposition(u, fld, (x, r), args["k"], args["eps"], args["eta"], args["tau"],
                                       float(p["r_floor"]), d=int(round(args["d"])), window=window,
                                       per_axis=per_axis)
        rows += [[f"decomposition_{k}", v] for k, v in sorted(dec.summary().items())]
    res.tables["neck_summary"] = (["key", "value"], rows)
    res.summary.update(built=True, **audit)
    if not audit["lipschitz_ok"]:
        res.failures.append(f"neck Lipschitz constant {audit['lip_constant']:.3g} above bound")
    return res


def run_minkowski(scn: Scenario, u, fld) -> RunResult:
    p = scn.params
    dim = u.dim
    rs = sorted(map(float, p.get("r_ladder", [2.0 ** -j for j in range(3, 8)])), reverse=True)
    center, R = _region(p, dim)
    levels = p.get("levels")
    if levels is None:
        levels = max(0, int(math.ceil(math.log2(2 * R / 8 / (min(rs) / 4)) - 1e-9)))
    cells = strata.detect_critical_set(u, fld, (center, R), levels=int(levels), mode=p.get("mode", "critical"))
    vols = [cover.minkowski_content(cells, r, (center, R)) for r in rs]
    slope = approx.fit_slope(rs, vols) if len(cells) else float("nan")
    res = RunResult()
    res.tables["minkowski"] = (["r", "volume"], [[r, v] for r, v in zip(rs, vols)] + [["slope", slope]])
    res.summary.update(slope=slope, cells=len(cells), resolution=cells.cell_size)
    if "min_slope" in p and not slope >= float(p["min_slope"]):
        res.failures.append(f"Minkowski slope {slope:.3g} below {p['min_slope']}")
    return res


RUNNERS = {
    "gen": run_gen,
    "doubling": run_doubling,
    "approx-audit": run_approx,
    "green-audit": run_green,
    "strata": run_strata,
    "cover": run_cover,
    "neck": run_neck,
    "minkowski": run_minkowski,
}


def run_scenario(scn: Scenario) -> RunResult:
    u, fld = build_solution(scn.solution, scn.seed) if scn.solution is not None else (None, None)
    return RUNNERS[scn.module](scn, u, fld)
