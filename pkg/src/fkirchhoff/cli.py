"""Batch front end: configuration, the construct/verify/kernel/sectors/reconcile pipeline, reports.

Exit codes: 0 all enabled assertions pass, 1 usage or configuration error,
2 assertion failure, 3 inconclusive spectral gap (2 takes precedence).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import io
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bubble import (BubbleProfile, CalibrationCache, bubble_kappa, calibrated, closed_form_C,
                     closed_form_kappa)
from .grids import BoxGrid, DEFAULT_BUDGET, make_radial_grid
from .linearization import (KernelPencil, assemble_L_plus, box_kernel_residuals, kernel_candidates,
                            near_kernel, rank_one_confinement, verify_kernel_identities)
from .scaling import (ProblemParams, consistency_gap, construct_ground_state, ground_state_grid,
                      kirchhoff_residual, sign_changes, solve_E0)
from .sectors import assemble_sector, reconcile_sectors, sector_spectrum
from .spectral import load_matrix, seminorm_sq_box

log = logging.getLogger("fkirchhoff")

EXIT_OK, EXIT_USAGE, EXIT_ASSERT, EXIT_INCONCLUSIVE = 0, 1, 2, 3
STAGES = ("construct", "verify", "kernel", "sectors", "reconcile")
DEPENDS = {"construct": (), "verify": ("construct",), "kernel": ("construct",),
           "sectors": ("construct",), "reconcile": ("kernel", "sectors")}

# Grid defaults in bubble units (mu = 1); every length is stretched by E0^{1/(2s)} for U.
BOX_DEFAULTS = {1: (4194304.0, 2**24), 2: (1024.0, 4096), 3: (64.0, 256)}
KERNEL_DEFAULTS = {1: (4000.0, 32768), 2: (48.0, 256), 3: (12.0, 64)}

TOL_DEFAULTS = {"root_tol": 1e-12, "residual_tol": 1e-2, "tol_gap": 1e-3, "correlation_min": 0.99,
                "consistency_tol": 1e-4, "pohozaev_tol": 1e-3, "perron_tol": 1e-2,
                "self_adjoint_tol": 1e-9, "confinement_tol": 1e-9}

KNOWN_KEYS = {"params.N", "params.s", "params.a", "params.b", "box.L", "box.m", "box.budget",
              "kernel.L", "kernel.m", "radial.M", "radial.R_max", "radial.stretch", "radial.ell",
              "kappa.M", "kappa.R_max", "sectors.lmax", "sectors.k", "pipeline", "output_dir",
              "seed", "debug.potential_exponent", "debug.drop_rank_one", "calibration.cache",
              "dump.matrices"} | {f"tol.{k}" for k in TOL_DEFAULTS}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    params: ProblemParams
    box: tuple
    kernel: tuple
    radial: dict
    kappa_grid: tuple
    lmax: int
    k: int
    tolerances: dict
    pipeline: list
    output_dir: str
    seed: int = 0
    budget: int = DEFAULT_BUDGET
    potential_exponent: Optional[float] = None
    drop_rank_one: bool = False
    calibration_cache: Optional[str] = None
    dump_matrices: bool = False

    def refined(self, level: int) -> "RunConfig":
        """Level k: box L and m times 2^k; radial M times 2^k and R_max times 100^k."""
        from dataclasses import replace
        f = 2**level
        rad = dict(self.radial, M=self.radial["M"] * f, R_max=self.radial["R_max"] * 100.0**level)
        return replace(self, box=(self.box[0] * f, self.box[1] * f), radial=rad)


def _get(raw: dict, key: str, conv, default=None, required=False):
    if key not in raw:
        if required:
            raise ConfigError(f"missing required field '{key}'")
        return default
    val = raw[key]
    try:
        return conv(val)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{key}': cannot parse {val!r}") from None


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(v)


def parse_config_text(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                   interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None
    raw = {k: v.strip() for k, v in cp["run"].items()}
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    N = _get(raw, "params.N", int, required=True)
    s = _get(raw, "params.s", float, required=True)
    a = _get(raw, "params.a", float, required=True)
    b = _get(raw, "params.b", float, required=True)
    try:
        params = ProblemParams(N, s, a, b)
    except ValueError as exc:
        raise ConfigError(f"params: {exc}") from None
    bL, bm = BOX_DEFAULTS[N]
    kL, km = KERNEL_DEFAULTS[N]
    box = (_get(raw, "box.L", float, bL), _get(raw, "box.m", int, bm))
    kernel = (_get(raw, "kernel.L", float, kL), _get(raw, "kernel.m", int, km))
    radial = {"M": _get(raw, "radial.M", int, 1024), "R_max": _get(raw, "radial.R_max", float, 1e8),
              "stretch": raw.get("radial.stretch", "algebraic"), "ell": _get(raw, "radial.ell", float, 1.0)}
    kgrid = (_get(raw, "kappa.M", int, 2048), _get(raw, "kappa.R_max", float, 1e10))
    tols = {k: _get(raw, f"tol.{k}", float, v) for k, v in TOL_DEFAULTS.items()}
    bad = [k for k, v in tols.items() if not v > 0]
    if bad:
        raise ConfigError(f"tolerances must be positive: {', '.join('tol.' + k for k in bad)}")
    pipe = [p.strip() for p in raw.get("pipeline", ",".join(STAGES)).split(",") if p.strip()]
    if not pipe:
        raise ConfigError("field 'pipeline' is empty")
    badst = [p for p in pipe if p not in STAGES]
    if badst:
        raise ConfigError(f"field 'pipeline': unknown stage(s) {', '.join(badst)}")
    lmax = _get(raw, "sectors.lmax", int, 1 if N == 1 else 3)
    if N == 1 and lmax > 1:
        raise ConfigError("field 'sectors.lmax': N=1 has only sectors 0 and 1")
    if lmax < 0:
        raise ConfigError("field 'sectors.lmax' must be nonnegative")
    pe = raw.get("debug.potential_exponent", "")
    cfg = RunConfig(params, box, kernel, radial, kgrid, lmax, _get(raw, "sectors.k", int, 4), tols,
                    pipe, raw.get("output_dir", "out"), _get(raw, "seed", int, 0),
                    _get(raw, "box.budget", int, DEFAULT_BUDGET),
                    _get(raw, "debug.potential_exponent", float) if pe else None,
                    _get(raw, "debug.drop_rank_one", _bool, False),
                    raw.get("calibration.cache") or None,
                    _get(raw, "dump.matrices", _bool, False))
    _grids(cfg)
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def _grids(cfg: RunConfig):
    N = cfg.params.N
    try:
        box = BoxGrid(N, cfg.box[0], cfg.box[1], cfg.budget)
        kern = BoxGrid(N, cfg.kernel[0], cfg.kernel[1], cfg.budget)
        rad = make_radial_grid(N, cfg.radial["M"], cfg.radial["R_max"], cfg.radial["stretch"], cfg.radial["ell"])
        kap = make_radial_grid(N, cfg.kappa_grid[0], cfg.kappa_grid[1], "algebraic", 1.0)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None
    return box, kern, rad, kap


def expand_pipeline(stages) -> list:
    need = set()

    def add(st):
        for d in DEPENDS[st]:
            add(d)
        need.add(st)

    for st in stages:
        add(st)
    return [st for st in STAGES if st in need]


# ------------------------------------------------------------ report writing

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    if isinstance(x, (tuple, list, np.ndarray)):
        return " ".join(fmt(v) for v in x)
    return str(x)


def _stamp() -> str:
    return "# generated: " + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_keyvalue(path: str, items) -> None:
    with open(path, "w") as fh:
        fh.write(_stamp() + "\n")
        for k, v in items:
            fh.write(f"{k}: {fmt(v)}\n")


def write_lines(path: str, lines) -> None:
    with open(path, "w") as fh:
        fh.write(_stamp() + "\n")
        for ln in lines:
            fh.write(ln + "\n")


def write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    with open(path, "w") as fh:
        fh.write(_stamp() + "\n")
        fh.write(buf.getvalue())


# ------------------------------------------------------------ pipeline

@dataclass
class RunResult:
    exit_code: int
    failures: list
    inconclusive: list
    values: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


class _Run:
    def __init__(self, cfg: RunConfig, write: bool = True, strict: bool = True):
        self.cfg, self.write, self.strict = cfg, write, strict
        self.failures, self.inconclusive = [], []
        self.values: dict = {}
        self.files: list = []
        self.cert_items: list = []
        self.residual_rows: list = []

    def check(self, name: str, ok: bool, measured, bound=None):
        if not ok:
            msg = f"{name}: measured {fmt(measured)}" + (f" (bound {fmt(bound)})" if bound is not None else "")
            self.failures.append(msg)
            (log.error if self.strict else log.info)("assertion failed: %s", msg)

    def out(self, name: str) -> str:
        path = os.path.join(self.cfg.output_dir, name)
        self.files.append(path)
        return path

    # -- stages
    def construct(self):
        cfg, p = self.cfg, self.cfg.params
        tol = cfg.tolerances
        gbox, _, grad, gkap = _grids(cfg)
        cache = CalibrationCache(cfg.calibration_cache) if cfg.calibration_cache else None
        cal = calibrated(p.N, p.s, gbox, cache)
        Q = BubbleProfile(cal.C, p.N, p.s)
        kappa = bubble_kappa(Q, gkap)
        cert = solve_E0(p, kappa, root_tol=tol["root_tol"])
        lam = cert.length_scale(p.s)
        semi_U = bubble_kappa(Q, gkap, scale=lam)
        c = p.a + p.b * semi_U
        g_u = ground_state_grid(gbox, cert, p.s)
        U = construct_ground_state(p, Q, cert, g_u)
        res = kirchhoff_residual(p, g_u, U, semi_U)
        cons = consistency_gap(p, semi_U, cert.E0)
        nsc = sign_changes(p, kappa, cert.E0) if p.b > 0 else 1
        semi_box = seminorm_sq_box(g_u, p.s, U.values)
        self.state = dict(Q=Q, cert=cert, lam=lam, c=c, g_u=g_u, U=U, semi_U=semi_U, cal=cal)
        self.values.update(E0=cert.E0, residual=res, consistency_gap=cons, C=cal.C, kappa=kappa, c=c)
        self.cert_items += [
            ("N", p.N), ("s", p.s), ("a", p.a), ("b", p.b),
            ("two_star", p.exponents.two_star), ("theta", cert.theta),
            ("C", cal.C), ("C_closed_form", closed_form_C(p.N, p.s)),
            ("calibration_residual", cal.residual), ("calibration_grid", cal.resolution),
            ("kappa", kappa), ("kappa_closed_form", closed_form_kappa(p.N, p.s)),
            ("E0", cert.E0), ("length_scale", lam), ("f_residual", cert.f_residual),
            ("df_at_root", cert.df_at_root), ("f_at_a", cert.f_at_a), ("bracket", cert.bracket),
            ("convex_samples", cert.convex_samples), ("convex_ok", cert.convex_ok),
            ("sign_changes", nsc), ("newton_iterations", cert.iterations),
            ("seminorm_U", semi_U), ("seminorm_U_box", semi_box), ("c", c),
            ("consistency_gap", cons), ("kirchhoff_residual", res),
            ("box_grid", g_u.describe()), ("radial_grid", grad.scaled(lam).describe()),
        ]
        self.residual_rows += [("construct", "calibration_residual", cal.residual),
                               ("construct", "kirchhoff_residual", res),
                               ("construct", "consistency_gap", cons),
                               ("construct", "seminorm_U", semi_U),
                               ("construct", "seminorm_U_box", semi_box)]
        self.check("root_residual", cert.f_residual < tol["root_tol"] * max(1.0, cert.E0), cert.f_residual)
        self.check("root_above_a", cert.E0 >= p.a, cert.E0, p.a)
        if p.b > 0:
            self.check("root_increasing_branch", cert.df_at_root > 0, cert.df_at_root)
            self.check("f_at_a_negative", cert.f_at_a < 0, cert.f_at_a)
            self.check("convexity", cert.convex_ok, cert.convex_ok)
            self.check("single_sign_change", nsc == 1, nsc, 1)
        self.check("kirchhoff_residual", res < tol["residual_tol"], res, tol["residual_tol"])
        self.check("consistency_gap", cons < tol["consistency_tol"], cons, tol["consistency_tol"])

    def verify(self):
        cfg, p, st = self.cfg, self.cfg.params, self.state
        tol = cfg.tolerances
        _, gk, grad, _ = _grids(cfg)
        gk_u = gk.scaled(st["lam"])
        gr_u = grad.scaled(st["lam"])
        rep = verify_kernel_identities(p, st["Q"], st["cert"], gk_u, gr_u, c=st["c"], seed=cfg.seed)
        Uk = construct_ground_state(p, st["Q"], st["cert"], gk_u).values
        conf = {}
        for l in range(1, (1 if p.N == 1 else max(cfg.lmax, 3)) + 1):
            conf[l] = rank_one_confinement(gk_u, p.s, Uk, l, seed=cfg.seed + l)
        Lp = assemble_L_plus(p, st["U"], st["g_u"], c=st["c"])
        cands = kernel_candidates(st["Q"], st["g_u"].coords(), st["lam"])
        kres = box_kernel_residuals(Lp, cands)
        self.values.update(pohozaev_gap=rep.pohozaev_gap_radial, self_adjoint_gap=rep.self_adjoint_gap,
                           confinement=max(conf.values()), multiplier=rep.multiplier)
        for k, v in rep.__dict__.items():
            self.cert_items.append((k, v))
            self.residual_rows.append(("verify", k, v))
        for l, v in conf.items():
            self.cert_items.append((f"confinement_l{l}", v))
            self.residual_rows.append(("verify", f"confinement_l{l}", v))
        names = [f"d{i + 1}U" for i in range(p.N)] + ["e0"]
        for nm, v in zip(names, kres):
            self.residual_rows.append(("verify", f"box_kernel_residual_{nm}", v))
        self.check("self_adjointness", rep.self_adjoint_gap < tol["self_adjoint_tol"], rep.self_adjoint_gap,
                   tol["self_adjoint_tol"])
        self.check("pohozaev_gap", rep.pohozaev_gap_radial < tol["pohozaev_tol"], rep.pohozaev_gap_radial,
                   tol["pohozaev_tol"])
        self.check("e0_orthogonality", rep.e0_orthogonality < tol["pohozaev_tol"], rep.e0_orthogonality,
                   tol["pohozaev_tol"])
        self.check("multiplier_margin", 0 < rep.multiplier < 1, rep.multiplier)
        worst = max(conf.values())
        self.check("rank_one_confinement", worst < tol["confinement_tol"], worst, tol["confinement_tol"])

    def kernel(self):
        cfg, p, st = self.cfg, self.cfg.params, self.state
        tol = cfg.tolerances
        _, gk, _, _ = _grids(cfg)
        pencil = KernelPencil(p, st["Q"], st["cert"], gk, c=st["c"],
                              potential_exponent=cfg.potential_exponent, rank_one=not cfg.drop_rank_one)
        rep = near_kernel(pencil, tol["tol_gap"], seed=cfg.seed, perron_tol=tol["perron_tol"])
        self.full = rep
        self.values.update(kernel_dim=rep.kernel_dim, kernel_correlation=rep.correlation,
                           kernel_eigenvalues=list(rep.eigenvalues), gap_ok=rep.gap_ok,
                           kernel_threshold=rep.tol, kernel_next_abs=rep.next_abs,
                           perron_gap=rep.extra["perron_gap"])
        if self.write:
            write_lines(self.out("spectrum_full.txt"), rep.to_lines())
        for nm, v in zip([f"d{i + 1}U" for i in range(p.N)] + ["e0"], rep.extra["candidate_residuals"]):
            self.residual_rows.append(("kernel", f"pencil_residual_{nm}", v))
        self.check("U_direction", rep.extra["perron_ok"], rep.extra["perron_gap"], tol["perron_tol"])
        if not rep.gap_ok:
            # without a clear gap the kernel count is undetermined, so it is neither passed nor failed
            msg = (f"spectral_gap: next |lambda| {fmt(rep.next_abs)} < 10 x threshold {fmt(rep.tol)}"
                   f" (kernel dimension {rep.kernel_dim} not certified)")
            self.inconclusive.append(msg)
            log.warning("inconclusive: %s", msg)
            return
        self.check("kernel_dimension", rep.kernel_dim == p.N + 1, rep.kernel_dim, p.N + 1)
        self.check("kernel_correlation", rep.correlation > tol["correlation_min"], rep.correlation,
                   tol["correlation_min"])

    def sectors(self):
        cfg, p, st = self.cfg, self.cfg.params, self.state
        _, _, grad, _ = _grids(cfg)
        gr_u = grad.scaled(st["lam"])

        def one(l):
            op = assemble_sector(p, st["Q"], st["lam"], l, gr_u, st["c"],
                                 potential_exponent=cfg.potential_exponent, rank_one=not cfg.drop_rank_one)
            if cfg.dump_matrices and self.write:
                op.matrix.dump(self.out(f"L_plus_sector_l{l}.bin"))
            return sector_spectrum(op, cfg.k)

        ls = list(range(0, cfg.lmax + 1))
        threads = max(1, int(os.environ.get("FKIRCHHOFF_THREADS", "1") or 1))
        with ThreadPoolExecutor(max_workers=threads) as ex:
            self.sector_list = list(ex.map(one, ls))
        if self.write:
            hdr = ["l"] + [f"lambda_{i + 1}" for i in range(cfg.k)] + ["sign_definite", "correlation"]
            rows = [[sp.l] + list(sp.eigenvalues) + [sp.sign_definite, sp.correlation] for sp in self.sector_list]
            write_csv(self.out("sectors.csv"), hdr, rows)
        by_l = {sp.l: sp for sp in self.sector_list}
        self.values["sector_lowest"] = {sp.l: sp.lowest for sp in self.sector_list}
        self.values["sector_sign_definite"] = {sp.l: sp.sign_definite for sp in self.sector_list}
        if 1 in by_l:
            self.values["l1_correlation"] = by_l[1].correlation
        rec = reconcile_sectors(None, self.sector_list, p.N, cfg.tolerances["tol_gap"],
                                cfg.tolerances["perron_tol"], cfg.tolerances["correlation_min"])
        self.sector_checks = rec
        for k, v in rec.checks.items():
            if k != "sector_total_is_N_plus_1":
                self.check(f"sector_{k}", v, v)

    def reconcile(self):
        cfg, p = self.cfg, self.cfg.params
        rec = reconcile_sectors(self.full, self.sector_list, p.N, cfg.tolerances["tol_gap"],
                                cfg.tolerances["perron_tol"], cfg.tolerances["correlation_min"])
        lines = rec.to_lines()
        lines.append("note: sector operators use the potential (2*-1) U^(2*-2) with no mass term")
        if self.write:
            write_lines(self.out("reconcile.txt"), lines)
        self.values["reconcile_ok"] = rec.ok
        full_ok = self.full is not None and self.full.gap_ok
        measured = {"sector_total_matches_full": (rec.total, rec.full_dim),
                    "sector_total_is_N_plus_1": (rec.total, p.N + 1),
                    "full_kernel_dim": (rec.full_dim, p.N + 1)}
        for k, (got, want) in measured.items():
            if k in rec.checks and (full_ok or k == "sector_total_is_N_plus_1"):
                self.check(f"reconcile_{k}", rec.checks[k], got, want)

    def execute(self) -> RunResult:
        cfg = self.cfg
        if self.write:
            os.makedirs(cfg.output_dir, exist_ok=True)
        for st in expand_pipeline(cfg.pipeline):
            t0 = time.perf_counter()
            getattr(self, st)()
            log.info("stage %s done in %.2fs", st, time.perf_counter() - t0)
        if self.write:
            write_keyvalue(self.out("certificate.txt"), self.cert_items)
            write_csv(self.out("residuals.csv"), ["stage", "quantity", "value"], self.residual_rows)
        code = EXIT_ASSERT if self.failures else (EXIT_INCONCLUSIVE if self.inconclusive else EXIT_OK)
        return RunResult(code, self.failures, self.inconclusive, self.values, self.files)


def run(cfg: RunConfig, write: bool = True) -> RunResult:
    return _Run(cfg, write).execute()


def convergence_study(cfg: RunConfig, levels: int, write: bool = True, timings: Optional[list] = None):
    """Repeat construct (+ sectors and the radial Pohozaev check) at doubling resolution.

    Returns (rows, exit code).  The Kirchhoff residual must decrease strictly
    from level to level.  Wall-clock seconds per level are appended to
    `timings` when given (they are kept out of the CSV so it stays reproducible).
    """
    if levels < 2:
        raise ConfigError("levels must be >= 2")
    from .linearization import pohozaev_sides_radial
    rows = []
    for lev in range(levels):
        t0 = time.perf_counter()
        c = cfg.refined(lev)
        _grids(c)
        # per-level thresholds are informational here; only monotonicity is asserted
        r = _Run(c, write=False, strict=False)
        r.construct()
        st = r.state
        _, _, grad, _ = _grids(c)
        gr_u = grad.scaled(st["lam"])
        lhs, rhs, _ = pohozaev_sides_radial(c.params, st["Q"], st["cert"], gr_u)
        op = assemble_sector(c.params, st["Q"], st["lam"], 1, gr_u, st["c"])
        l1 = sector_spectrum(op, 2).lowest
        rows.append([lev, c.box[0], c.box[1], 2 * c.box[0] / c.box[1], c.radial["M"], c.radial["R_max"],
                     r.values["residual"], r.values["consistency_gap"], r.values["E0"],
                     abs(lhs - rhs) / abs(rhs), l1])
        if timings is not None:
            timings.append(time.perf_counter() - t0)
    res = [row[6] for row in rows]
    mono = all(b < a for a, b in zip(res, res[1:]))
    if write:
        os.makedirs(cfg.output_dir, exist_ok=True)
        write_csv(os.path.join(cfg.output_dir, "convergence.csv"),
                  ["level", "L", "m", "h", "radial_M", "radial_R_max", "kirchhoff_residual",
                   "consistency_gap", "E0", "pohozaev_gap", "l1_lowest"], rows)
    return rows, (EXIT_OK if mono else EXIT_ASSERT)


# ------------------------------------------------------------ inspect

def inspect_report(path: str, stream=None) -> int:
    stream = stream or sys.stdout
    if not os.path.exists(path):
        print(f"error: no such report {path}", file=sys.stderr)
        return EXIT_USAGE
    if path.endswith(".bin"):
        try:
            A, kind, l = load_matrix(path)
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"kind: {kind}  l: {l}  dimension: {A.shape[0]}", file=stream)
        sym = np.linalg.norm(A - A.T) / max(np.linalg.norm(A), 1e-300)
        print(f"symmetry_gap: {sym:.3e}", file=stream)
        if A.shape[0] <= 4096:
            ev = np.linalg.eigvalsh(0.5 * (A + A.T))
            print(f"eigenvalue_range: {ev[0]:.6g} .. {ev[-1]:.6g}", file=stream)
        return EXIT_OK
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    body = [ln for ln in lines if not ln.startswith("#")]
    if path.endswith(".csv"):
        rows = list(csv.reader(body))
        if not rows:
            return EXIT_OK
        widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(len(rows[0]))]
        for r in rows:
            print("  ".join(v.rjust(w) for v, w in zip(r, widths)), file=stream)
        return EXIT_OK
    items = [ln.split(":", 1) for ln in body if ":" in ln]
    if not items:
        print(f"error: {path} is not a key: value report", file=sys.stderr)
        return EXIT_USAGE
    w = max(len(k) for k, _ in items)
    for k, v in items:
        print(f"{k.strip().ljust(w)}  {v.strip()}", file=stream)
    flagged = [k for k, v in items if v.strip() in ("FAIL", "MISMATCH", "false")]
    if flagged:
        print(f"flagged: {', '.join(k.strip() for k in flagged)}", file=stream)
    return EXIT_OK


# ------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fkirchhoff", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log stage timings")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="execute the configured pipeline")
    r.add_argument("config")
    c = sub.add_parser("converge", help="refinement study at doubling resolutions")
    c.add_argument("config")
    c.add_argument("--levels", type=int, default=3)
    k = sub.add_parser("calibrate", help="normalization constant of the bubble")
    k.add_argument("N", type=int)
    k.add_argument("s", type=float)
    k.add_argument("--L", type=float, default=None, help="box half-width (bubble units)")
    k.add_argument("--m", type=int, default=None, help="points per axis")
    k.add_argument("--cache", default=None, help="calibration cache file to read and update")
    i = sub.add_parser("inspect", help="summarize a report or matrix file")
    i.add_argument("report")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "run":
            res = run(load_config(args.config))
            for f in res.failures:
                print(f"FAIL {f}", file=sys.stderr)
            for f in res.inconclusive:
                print(f"INCONCLUSIVE {f}", file=sys.stderr)
            print(f"exit {res.exit_code}: " + {0: "all assertions pass", 2: "assertion failure",
                                               3: "inconclusive spectral gap"}[res.exit_code])
            return res.exit_code
        if args.cmd == "converge":
            cfg = load_config(args.config)
            rows, code = convergence_study(cfg, args.levels)
            print("level  L  m  residual  pohozaev_gap  l1_lowest")
            for r in rows:
                print(f"{r[0]}  {r[1]:g}  {r[2]}  {r[6]:.4e}  {r[9]:.3e}  {r[10]:.3e}")
            if code:
                print("FAIL residual not strictly decreasing", file=sys.stderr)
            return code
        if args.cmd == "calibrate":
            from .bubble import default_calibration_grid
            g = default_calibration_grid(args.N) if args.L is None and args.m is None else \
                BoxGrid(args.N, args.L or BOX_DEFAULTS[args.N][0], args.m or BOX_DEFAULTS[args.N][1],
                        max(DEFAULT_BUDGET, (args.m or 0) ** args.N))
            cache = CalibrationCache(args.cache) if args.cache else None
            cal = calibrated(args.N, args.s, g, cache)
            print(f"N: {cal.N}\ns: {fmt(cal.s)}\nC: {fmt(cal.C)}\nresidual: {cal.residual:.4e}\n"
                  f"grid: {cal.resolution}\nC_closed_form: {fmt(closed_form_C(args.N, args.s))}")
            return EXIT_OK
        if args.cmd == "inspect":
            return inspect_report(args.report)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
