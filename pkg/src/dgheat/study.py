"""Convergence, smoothing and log-factor studies with CSV/JSON reporting.

Every study takes a :class:`StudyConfig`, returns a :class:`RateReport` (or a
plain table for the error splitting) and is deterministic for a fixed thread
count.  The CSV contract is the header ``level,h,k,r,s,norm,value,lkh``.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .dg import DgSolution, build_partition, solve_heat, validate_partition, PartitionError
from .fem import FeFunction, FeSpace, generalized_eigendecomposition, ritz_project
from .measure import DENSITY_PRESETS, MeasureData, support_in
from .mesh import Rect, Subdomain, UNIT_SQUARE, build_uniform_rect_mesh
from .spectral import DEFAULT_TOL, SeriesSolution, exact_l2_norm, exact_solution, semidiscrete_solution

log = logging.getLogger(__name__)

CSV_HEADER = ["level", "h", "k", "r", "s", "norm", "value", "lkh"]


class ConfigError(ValueError):
    pass


# -- configuration ------------------------------------------------------------

@dataclass
class StudyConfig:
    """Parameters shared by all studies; unused fields are ignored by a given study.

    ``initial_data`` accepts ``{"atoms": [[x, y, w], ...], "density": {...}}``
    with density presets ``eigenmode`` (keys ``m, n, amplitude``) and ``bump``
    (keys ``box, amplitude``), or ``{"random_fe": {"seed": int}}`` for rough
    finite element data on the coarsest configured mesh.
    """

    domain: Rect = UNIT_SQUARE
    observation_box: Rect = (0.25, 0.75, 0.25, 0.75)
    support_box: Rect | None = None
    initial_data: dict = field(default_factory=lambda: {"atoms": [[0.5, 0.5, 1.0]]})
    r: int = 1
    s: int = 1
    T: float = 0.1
    h_levels: list = field(default_factory=lambda: [8, 16, 32, 64])
    M: int = 256
    M_levels: list = field(default_factory=lambda: [8, 16, 32, 64, 128])
    T_levels: list = field(default_factory=lambda: [0.01, 0.0177827941, 0.0316227766, 0.0562341325, 0.1])
    grading: str = "uniform"
    grading_exponent: float = 1.0
    time_reference: str = "semidiscrete"
    ref_refinements: int = 2
    grid_n: int = 200
    oracle_tol: float = DEFAULT_TOL
    fit_levels: int = 3
    windows: dict = field(default_factory=dict)
    output_csv: str | None = None
    output_json: str | None = None

    def __post_init__(self):
        self.domain = tuple(float(v) for v in self.domain)
        self.observation_box = tuple(float(v) for v in self.observation_box)
        if self.support_box is not None:
            self.support_box = tuple(float(v) for v in self.support_box)
        if self.s not in (1, 2):
            raise ConfigError("s must be 1 or 2")
        if self.r < 0:
            raise ConfigError("r must be nonnegative")
        if self.time_reference not in ("semidiscrete", "fully_discrete"):
            raise ConfigError("time_reference must be 'semidiscrete' or 'fully_discrete'")
        if self.fit_levels < 3:
            raise ConfigError("rate fits need at least 3 levels")
        for key, w in self.windows.items():
            if len(w) != 2:
                raise ConfigError(f"window {key!r} must be [lo, hi] (null for an open end)")

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "StudyConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "StudyConfig":
        return dataclasses.replace(self, **changes)

    # -- derived objects --------------------------------------------------
    @property
    def observation(self) -> Subdomain:
        return Subdomain(self.observation_box, self.domain)

    @property
    def support(self) -> Subdomain:
        return Subdomain(self.support_box or self.observation_box, self.domain)

    def measure(self) -> MeasureData:
        spec = dict(self.initial_data)
        if "random_fe" in spec:
            raise ConfigError("random finite element data has no measure representation")
        unknown = set(spec) - {"atoms", "density"}
        if unknown:
            raise ConfigError(f"unknown initial_data keys: {sorted(unknown)}")
        atoms = tuple(tuple(a) for a in spec.get("atoms", ()))
        dens = None
        if spec.get("density"):
            d = dict(spec["density"])
            preset = d.pop("preset")
            if preset not in DENSITY_PRESETS:
                raise ConfigError(f"unknown density preset {preset!r}")
            if preset == "eigenmode":
                d.setdefault("domain", self.domain)
            if "box" in d:
                d["box"] = tuple(d["box"])
            dens = DENSITY_PRESETS[preset](**d)
        return MeasureData(atoms, dens, self.domain)

    def initial_fe(self, space: FeSpace) -> FeFunction:
        spec = self.initial_data.get("random_fe")
        if spec is None:
            raise ConfigError("initial_data has no random_fe entry")
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return FeFunction(space, rng.standard_normal(space.n_interior))

    def space(self, n: int, degree: int | None = None) -> FeSpace:
        return FeSpace(build_uniform_rect_mesh(n, n, self.domain), self.s if degree is None else degree)

    def partition(self, M: int, T: float | None = None):
        p = build_partition(self.T if T is None else T, M, self.grading, self.grading_exponent)
        rep = validate_partition(p, self.r)
        if not rep.passed:
            raise PartitionError(f"configured partition (M={M}) fails validation:\n{rep}")
        return p

    def window(self, key: str, default):
        w = self.windows.get(key, default)
        return None if w is None else (w[0], w[1])


# -- rate fitting and reports -----------------------------------------------------

def fit_rate(pairs: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(scale)``."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("a rate fit needs at least 3 pairs")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("rate fits need positive finite scales and errors")
    lx, ly = np.log(x), np.log(y)
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def _fit_with_r2(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res ** 2)) / ss if ss > 0 else 1.0
    return float(coef[0]), r2


def log_factor(T: float, k: float, h: float) -> float:
    """``ln(T/k) + |ln h|``; the spatial part is dropped when ``h == 0`` (exact in space)."""
    return math.log(T / k) + (abs(math.log(h)) if h > 0 else 0.0)


@dataclass
class RateRecord:
    level: int
    h: float
    k: float
    r: int
    s: int
    norm: str
    value: float
    lkh: float

    def row(self) -> list:
        return [self.level, repr(float(self.h)), repr(float(self.k)), self.r, self.s, self.norm,
                repr(float(self.value)), repr(float(self.lkh))]


def _in_window(value: float, window) -> bool:
    if window is None:
        return True
    lo, hi = window
    return (lo is None or value >= lo) and (hi is None or value <= hi)


@dataclass
class RateReport:
    """Records of one study plus the fitted slope and any extra checks.

    ``scale`` names the refinement parameter the slope refers to (``"h"``,
    ``"k"`` or ``"T"``); only records whose norm equals ``norm`` enter the fit.
    """

    study: str
    records: list[RateRecord]
    scale: str
    norm: str
    window: tuple | None = None
    fit_levels: int = 3
    checks: dict[str, dict] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    scale_values: list[float] | None = None

    def _fit_data(self):
        recs = [r for r in self.records if r.norm == self.norm]
        if self.scale_values is not None:
            xs = list(self.scale_values)
        else:
            xs = [getattr(r, self.scale) for r in recs]
        n = self.fit_levels
        return xs[-n:], recs[-n:]

    @property
    def slope(self) -> float:
        xs, recs = self._fit_data()
        return fit_rate(zip(xs, [r.value for r in recs]))

    @property
    def slope_lkh(self) -> float:
        """Slope after dividing each error by its log factor."""
        xs, recs = self._fit_data()
        return fit_rate(zip(xs, [r.value / r.lkh for r in recs]))

    @property
    def passed(self) -> bool:
        ok = _in_window(self.slope, self.window) if self.window is not None else True
        return ok and all(c["pass"] for c in self.checks.values())

    def summary(self) -> dict:
        out = {
            "study": self.study,
            "slope": self.slope,
            "slope_lkh": self.slope_lkh,
            "window": None if self.window is None else list(self.window),
            "pass": self.passed,
            "checks": self.checks,
            "warnings": list(self.warnings),
        }
        out.update(self.extra)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for rec in self.records:
                w.writerow(rec.row())

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")

    def write(self, cfg: StudyConfig) -> None:
        if cfg.output_csv:
            self.write_csv(cfg.output_csv)
        if cfg.output_json:
            self.write_json(cfg.output_json)


def _check(value: float, window) -> dict:
    return {"value": value, "window": None if window is None else list(window), "pass": _in_window(value, window)}


# -- errors ---------------------------------------------------------------------

def _values(u, points: np.ndarray) -> np.ndarray:
    """Point values of an FE function, a spectral series, a DG solution (at T) or a callable."""
    if isinstance(u, DgSolution):
        u = u.final
    if isinstance(u, SeriesSolution):
        return np.asarray(u.value(points))
    if isinstance(u, FeFunction):
        return u(points)
    return np.asarray(u(points), dtype=float)


def interior_linf_error(sol, oracle, sub: Subdomain, n: int = 200) -> float:
    """Max over the ``n x n`` grid of ``sub`` of ``|sol(T) - oracle|``.

    ``oracle`` may be a :class:`SeriesSolution`, an FE function, a DG solution
    or any callable on (n, 2) point arrays.
    """
    pts = sub.grid(n)
    return float(np.max(np.abs(_values(sol, pts) - _values(oracle, pts))))


def _domain_sample_points(space: FeSpace, n: int) -> np.ndarray:
    x0, x1, y0, y1 = space.mesh.rect
    X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n), indexing="ij")
    return np.vstack([np.column_stack([X.ravel(), Y.ravel()]), space.dof_coords])


def _require_support(cfg: StudyConfig, v0: MeasureData) -> None:
    if not support_in(v0, cfg.support):
        raise ConfigError("initial data support is not inside the configured support subdomain")


# -- studies ----------------------------------------------------------------------

def run_space_study(cfg: StudyConfig) -> RateReport:
    """Interior L-infinity error at ``T`` over the mesh sequence against the exact solution."""
    v0 = cfg.measure()
    _require_support(cfg, v0)
    sub = cfg.observation
    part = cfg.partition(cfg.M)
    pts = sub.grid(cfg.grid_n)
    exact = exact_solution(v0, cfg.T, cfg.oracle_tol)
    ex_vals = exact.value(pts)
    semi_vals = semidiscrete_solution(v0, part, cfg.r, cfg.oracle_tol).value(pts)
    time_gap = float(np.max(np.abs(ex_vals - semi_vals)))
    records = []
    for level, n in enumerate(cfg.h_levels):
        space = cfg.space(n)
        sol = solve_heat(space, part, cfg.r, v0)
        err = float(np.max(np.abs(sol.final(pts) - ex_vals)))
        h = space.h
        records.append(RateRecord(level, h, part.k_max, cfg.r, cfg.s, "Linf_interior", err,
                                  log_factor(cfg.T, part.k_max, h)))
        log.info("space study level %d: n=%d error=%.3e", level, n, err)
    window = cfg.window("slope", (1.7, 2.3) if cfg.s == 1 else (2.6, 3.4))
    rep = RateReport("convergence-space", records, "h", "Linf_interior", window, cfg.fit_levels,
                     extra={"time_gap": time_gap})
    smallest = min(r.value for r in records)
    if time_gap >= 0.05 * smallest:
        rep.warnings.append(f"time discretization gap {time_gap:.3e} is not below 5% of the "
                            f"smallest spatial error {smallest:.3e}")
    return rep


def _fe_time_exact(space: FeSpace, v0, T: float, pts: np.ndarray) -> np.ndarray:
    """Point values of the spatially discrete solution that is exact in time."""
    from .measure import pair_with_fe

    lam, X = generalized_eigendecomposition(space)
    b = space.mass @ v0.coefficients if isinstance(v0, FeFunction) else pair_with_fe(v0, space)
    u = X @ (np.exp(-lam * T) * (X.T @ b))
    return space.evaluation_matrix(pts) @ u


def run_time_study(cfg: StudyConfig) -> RateReport:
    """Error at ``T`` over the step sequence ``M_levels``.

    With ``time_reference == "semidiscrete"`` both the exact solution and the
    exact-in-space dG(r) solution come from the spectral series, so no spatial
    error enters (``h`` is recorded as 0).  With ``"fully_discrete"`` the
    solver on the mesh ``h_levels[0]`` is compared with the time-exact FE
    propagator on the same mesh.
    """
    v0 = cfg.measure()
    _require_support(cfg, v0)
    pts = cfg.observation.grid(cfg.grid_n)
    records = []
    if cfg.time_reference == "semidiscrete":
        ref = exact_solution(v0, cfg.T, cfg.oracle_tol).value(pts)
        h = 0.0
        space = None
    else:
        space = cfg.space(cfg.h_levels[0])
        ref = _fe_time_exact(space, v0, cfg.T, pts)
        h = space.h
    for level, M in enumerate(cfg.M_levels):
        part = cfg.partition(M)
        if space is None:
            vals = semidiscrete_solution(v0, part, cfg.r, cfg.oracle_tol).value(pts)
        else:
            vals = solve_heat(space, part, cfg.r, v0).final(pts)
        err = float(np.max(np.abs(vals - ref)))
        records.append(RateRecord(level, h, part.k_max, cfg.r, cfg.s, "Linf_interior", err,
                                  log_factor(cfg.T, part.k_max, h)))
        log.info("time study level %d: M=%d error=%.3e", level, M, err)
    window = cfg.window("slope", (0.8, 1.2) if cfg.r == 0 else (2 * cfg.r + 1 - 0.3, 2 * cfg.r + 1 + 0.3))
    return RateReport("convergence-time", records, "k", "Linf_interior", window, cfg.fit_levels,
                      extra={"time_reference": cfg.time_reference})


def run_smoothing_study(cfg: StudyConfig) -> RateReport:
    """Decay of ``||v_kh(T)||`` and ``||Delta_h v_kh(T)||`` over the end times ``T_levels``.

    The mesh is ``h_levels[-1]`` and each end time gets ``M`` uniform steps,
    so ``k`` shrinks with ``T``.  Also reported: the discrete
    Gagliardo-Nirenberg ratio ``||v||_inf / (||Delta_h v||^(1/2) ||v||^(1/2))``
    and the exponent of the exact L2 norm as a cross-check.
    """
    v0 = cfg.measure()
    space = cfg.space(cfg.h_levels[-1])
    pts = _domain_sample_points(space, cfg.grid_n)
    E = space.evaluation_matrix(pts)
    Ts = np.array(sorted(cfg.T_levels), dtype=float)
    if len(Ts) < 3:
        raise ConfigError("the smoothing study needs at least 3 end times")
    rows = {"L2": [], "LapL2": [], "Linf": [], "GN": [], "exact_L2": []}
    records = []
    for level, T in enumerate(Ts):
        part = cfg.partition(cfg.M, T)
        sol = solve_heat(space, part, cfg.r, v0)
        u = sol.final.coefficients
        l2 = float(np.sqrt(u @ (space.mass @ u)))
        w = space.mass_solver.solve(space.stiffness @ u)
        lap = float(np.sqrt(w @ (space.mass @ w)))
        linf = float(np.max(np.abs(E @ u)))
        vals = {"L2": l2, "LapL2": lap, "Linf": linf, "GN": linf / math.sqrt(lap * l2),
                "exact_L2": exact_l2_norm(v0, float(T), cfg.oracle_tol)}
        lkh = log_factor(float(T), part.k_max, space.h)
        for name, v in vals.items():
            rows[name].append(v)
            records.append(RateRecord(level, space.h, part.k_max, cfg.r, cfg.s, name, v, lkh))
    exps = {}
    for name in ("L2", "LapL2", "Linf", "exact_L2"):
        exps[name] = _fit_with_r2(Ts, np.array(rows[name]))
    r2_min = cfg.windows.get("power_law_r2", [0.999, None])[0]
    checks = {
        "laplacian_exponent": _check(exps["LapL2"][0], cfg.window("laplacian", (-1.75, -1.25))),
        "exact_crosscheck": _check(abs(exps["L2"][0] - exps["exact_L2"][0]), cfg.window("crosscheck", (None, 0.05))),
    }
    gn = np.array(rows["GN"])
    extra = {
        "T_levels": [float(t) for t in Ts],
        "exponents": {k: v[0] for k, v in exps.items()},
        "r_squared": {k: v[1] for k, v in exps.items()},
        "power_law": bool(min(v[1] for v in exps.values()) >= r2_min),
        "gn_ratio_min": float(gn.min()),
        "gn_ratio_max": float(gn.max()),
    }
    rep = RateReport("smoothing", records, "T", "L2", cfg.window("l2", (-0.65, -0.35)), len(Ts),
                     checks=checks, extra=extra, scale_values=list(Ts))
    if not extra["power_law"]:
        rep.warnings.append("decay is not a power law over the sweep (R^2 below threshold)")
    return rep


def maximal_regularity_log_check(sol: DgSolution, v0_l2_norm: float) -> float:
    """``sum_m (||[v]_{m-1}|| + k_m ||Delta_h v_{m-1}^+||) / (ln(T/k) ||v0||)``.

    ``v_{m-1}^+`` is the left trace on interval ``m``, and ``k`` is the
    largest step.  Needs L2 data so that the jump at ``t_0`` is defined.
    """
    if sol.initial_projection is None:
        raise ValueError("the jump at t_0 is undefined for measure data")
    if v0_l2_norm < 0:
        raise ValueError("norm must be nonnegative")
    space = sol.space
    Mass, A = space.operators
    part = sol.partition
    left = sol.u_plus[0] - sol.initial_projection
    jumps = np.vstack([left[None, :], sol.jumps])            # [v]_0 .. [v]_{M-1}
    jn = np.sqrt(np.maximum(np.einsum("mi,mi->m", jumps, (Mass @ jumps.T).T), 0.0))
    W = space.mass_solver.solve(A @ sol.u_plus.T).T          # -Delta_h v_{m-1}^+
    wn = np.sqrt(np.maximum(np.einsum("mi,mi->m", W, (Mass @ W.T).T), 0.0))
    total = math.fsum(jn) + math.fsum(part.steps * wn)
    if total == 0.0:
        return 0.0
    denom = math.log(part.T / part.k_max) * v0_l2_norm
    if denom <= 0:
        raise ValueError("ln(T/k) * ||v0|| must be positive for a nonzero solution")
    return total / denom


def run_log_factor_study(cfg: StudyConfig) -> RateReport:
    """Maximal regularity ratio over ``M_levels`` on the mesh ``h_levels[0]``.

    The reported slope is the least-squares slope of the ratio against
    ``ln(T/k)`` over all levels (linear, not log-log); the window bounds it
    from above.
    """
    space = cfg.space(cfg.h_levels[0])
    if "random_fe" in cfg.initial_data:
        v0 = cfg.initial_fe(space)
        c = v0.coefficients
        norm0 = float(np.sqrt(c @ (space.mass @ c)))
    else:
        v0 = cfg.measure()
        if v0.has_atoms:
            raise ConfigError("the log-factor check needs L2 initial data")
        d = v0.density
        norm0 = d.integrate(lambda p: d(p), n=128)
        norm0 = math.sqrt(norm0)
    records, xs, ratios = [], [], []
    for level, M in enumerate(cfg.M_levels):
        part = cfg.partition(M)
        sol = solve_heat(space, part, cfg.r, v0)
        ratio = maximal_regularity_log_check(sol, norm0)
        lt = math.log(part.T / part.k_max)
        xs.append(lt)
        ratios.append(ratio)
        records.append(RateRecord(level, space.h, part.k_max, cfg.r, cfg.s, "maxreg_ratio", ratio,
                                  log_factor(cfg.T, part.k_max, space.h)))
    x = np.array(xs)
    y = np.array(ratios)
    trend = float(np.polyfit(x, y, 1)[0])
    checks = {"trend_slope": _check(trend, cfg.window("trend", (None, 0.1)))}
    return RateReport("log-factor", records, "k", "maxreg_ratio", None, len(records), checks=checks,
                      extra={"ratios": ratios, "ln_T_over_k": xs, "v0_l2_norm": norm0})


@dataclass
class SplitReport:
    """Three error terms on the observation grid and their recombination."""

    terms: dict[str, float]
    total: float
    telescoping: float
    l2_terms: dict[str, float]

    def summary(self) -> dict:
        return {"study": "split-error", "linf_terms": self.terms, "total": self.total,
                "telescoping": self.telescoping, "l2_terms": self.l2_terms,
                "pass": bool(self.telescoping <= 1e-12 * max(1.0, self.total))}

    def write_csv(self, path, cfg: StudyConfig, h: float, k: float) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            lkh = log_factor(cfg.T, k, h)
            items = list(self.terms.items()) + [("total", self.total), ("telescoping", self.telescoping)]
            for i, (name, v) in enumerate(items):
                w.writerow(RateRecord(i, h, k, cfg.r, cfg.s, name, v, lkh).row())


def error_splitting_report(cfg: StudyConfig) -> tuple[SplitReport, float, float]:
    """Split ``v - v_kh`` at ``T`` into time, Ritz and discrete parts on the observation grid.

    Uses the mesh ``h_levels[-1]`` and ``M`` steps.  Returns the report and
    the ``(h, k)`` used.
    """
    v0 = cfg.measure()
    space = cfg.space(cfg.h_levels[-1])
    part = cfg.partition(cfg.M)
    pts = cfg.observation.grid(cfg.grid_n)
    exact = exact_solution(v0, cfg.T, cfg.oracle_tol)
    semi = semidiscrete_solution(v0, part, cfg.r, cfg.oracle_tol)
    sol = solve_heat(space, part, cfg.r, v0)
    ritz = ritz_project(space, semi.gradient)
    E = space.evaluation_matrix(pts)
    v = exact.value(pts)
    vk = semi.value(pts)
    rvk = E @ ritz.coefficients
    d = E @ (ritz.coefficients - sol.final.coefficients)
    e1, e2, e3 = v - vk, vk - rvk, d
    total = v - E @ sol.final.coefficients
    tele = float(np.max(np.abs(e1 + e2 + e3 - total)))
    terms = {"v-v_k": float(np.max(np.abs(e1))), "v_k-R_h v_k": float(np.max(np.abs(e2))),
             "R_h v_k-v_kh": float(np.max(np.abs(e3)))}
    # L2 norms of the spatial parts via cell quadrature on the whole domain
    qx, qw = space.quadrature_points(8)
    qp = qx.reshape(-1, 2)
    w = qw.ravel()
    Eq = space.evaluation_matrix(qp)
    s_q = semi.value(qp)
    l2 = {"v-v_k": float(np.sqrt(w @ (exact.value(qp) - s_q) ** 2)),
          "v_k-R_h v_k": float(np.sqrt(w @ (s_q - Eq @ ritz.coefficients) ** 2)),
          "R_h v_k-v_kh": float(np.sqrt(w @ (Eq @ (ritz.coefficients - sol.final.coefficients)) ** 2))}
    return SplitReport(terms, float(np.max(np.abs(total))), tele, l2), space.h, part.k_max


# -- negative norm of the Ritz error ------------------------------------------------

def _sine_target(domain: Rect):
    x0, x1, y0, y1 = domain
    ax, ay = math.pi / (x1 - x0), math.pi / (y1 - y0)

    def u(p):
        return np.sin(ax * (p[:, 0] - x0)) * np.sin(ay * (p[:, 1] - y0))

    def grad(p):
        sx, sy = np.sin(ax * (p[:, 0] - x0)), np.sin(ay * (p[:, 1] - y0))
        cx, cy = np.cos(ax * (p[:, 0] - x0)), np.cos(ay * (p[:, 1] - y0))
        return np.column_stack([ax * cx * sy, ay * sx * cy])

    return u, grad


def negative_norm(ref: FeSpace, residual: Callable[[np.ndarray], np.ndarray], degree: int = 8) -> float:
    """Discrete H^-1 norm of ``residual``: lift with the Dirichlet Laplacian on ``ref``, take the energy norm."""
    b = ref.load_vector(residual, degree)
    z = ref.stiffness_solver.solve(b)
    return float(np.sqrt(max(z @ b, 0.0)))


def ritz_negative_norm_study(target: Callable | None = None, gradient: Callable | None = None,
                             degree: int = 2, levels: Sequence[int] = (4, 8, 16, 32),
                             domain: Rect = UNIT_SQUARE, ref_refinements: int = 2,
                             window=(2.7, 3.3), fit_levels: int = 3) -> RateReport:
    """``||u - R_h u||_{H^-1}`` over a mesh sequence.

    For a study mesh with ``n`` cells per side the norm is computed on a P2
    reference space with ``n * 2**ref_refinements`` cells per side.  The
    default target is the first Dirichlet eigenfunction of ``domain``.
    """
    if ref_refinements < 2:
        raise ValueError("the reference space must be at least two refinements finer than the study space")
    if (target is None) != (gradient is None):
        raise ValueError("give both target and gradient, or neither")
    if target is None:
        target, gradient = _sine_target(domain)
    records = []
    for level, n in enumerate(levels):
        space = FeSpace(build_uniform_rect_mesh(n, n, domain), degree)
        R = ritz_project(space, gradient)
        ref = FeSpace(build_uniform_rect_mesh(n * 2 ** ref_refinements, n * 2 ** ref_refinements, domain), 2)

        def residual(p, R=R):
            return target(p) - R(p)

        val = negative_norm(ref, residual)
        records.append(RateRecord(level, space.h, 0.0, 0, degree, "H-1", val, abs(math.log(space.h))))
    return RateReport("ritz-negnorm", records, "h", "H-1", window, fit_levels)


def run_ritz_study(cfg: StudyConfig) -> RateReport:
    default = (2.7, 3.3) if cfg.s == 2 else None
    return ritz_negative_norm_study(degree=cfg.s, levels=cfg.h_levels, domain=cfg.domain,
                                    ref_refinements=cfg.ref_refinements, window=cfg.window("slope", default),
                                    fit_levels=cfg.fit_levels)
