"""Scenario configuration: strict JSON parsing, boundary-data presets, defaults."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .coefficients import PRESETS as COEFFICIENT_PRESETS
from .coefficients import CoefficientField, preset
from .grid import Grid2D, ScalarField
from .solver import EpsSchedule, SolveConfig

SUITES = ("max_principle", "gradient_bound", "barrier", "holder", "flatness", "intrinsic")
BOUNDARY_PRESETS = ("constant", "affine", "aronsson", "flat")
MIN_RESOLUTION = 17


class ConfigError(ValueError):
    """Invalid scenario configuration; ``where`` names the offending field or line."""

    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")
        self.where = where


@dataclass(frozen=True)
class BoundarySpec:
    preset: str
    value: float = 0.0
    b: tuple[float, float] = (0.0, 0.0)
    lam: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class BarrierConfig:
    y0: tuple[float, float] | None = None  # default: midpoint of the bottom edge
    amplitude: float = 2.0
    gamma: float = 0.5


@dataclass(frozen=True)
class Scenario:
    domain: tuple[float, float, float, float]
    n: int
    boundary: BoundarySpec
    coefficients: str = "identity"
    coefficient_params: tuple = ()
    eps0: float = 0.1
    ratio: float = 0.5
    count: int = 5
    eps_values: tuple[float, ...] | None = None
    grad_tol: float = 1e-8
    max_newton_iters: int = 200
    suites: tuple[str, ...] | None = None  # None: every suite that applies
    barrier: BarrierConfig = field(default_factory=BarrierConfig)
    probe_points: int = 5
    output: str | None = None
    seed: int = 0

    def active_suites(self) -> tuple[str, ...]:
        if self.suites is not None:
            return self.suites
        return tuple(s for s in SUITES if s != "flatness" or self.boundary.preset == "flat")

    @property
    def schedule(self) -> EpsSchedule:
        if self.eps_values is not None:
            return EpsSchedule(values=self.eps_values)
        return EpsSchedule(self.eps0, self.ratio, self.count)

    def solve_config(self) -> SolveConfig:
        return SolveConfig(eps=next(iter(self.schedule)), grad_tol=self.grad_tol,
                           max_newton_iters=self.max_newton_iters, eps_schedule=self.schedule)

    def grid(self) -> Grid2D:
        x0, x1, y0, y1 = self.domain
        return Grid2D.from_box(x0, x1, y0, y1, self.n)

    def coefficient_field(self, grid: Grid2D | None = None) -> CoefficientField:
        return preset(self.coefficients, grid or self.grid(), self.coefficient_params)

    def boundary_data(self, grid: Grid2D | None = None) -> ScalarField:
        return boundary_field(self.boundary, grid or self.grid())

    def canonical(self) -> dict:
        """Everything that determines the results (the output directory does not)."""
        d = asdict(self)
        d.pop("output")
        return d

    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


# -- boundary presets -----------------------------------------------------------------


def aronsson_function(X, Y):
    """x^{4/3} - y^{4/3} (real cube roots), infinity harmonic away from the axes."""
    return np.abs(X) ** (4 / 3) - np.abs(Y) ** (4 / 3)


def flat_perturbation(grid: Grid2D, seed: int) -> np.ndarray:
    """A few low-frequency sine modes with seeded phases, scaled to sup 1 on the grid."""
    rng = np.random.default_rng(seed)
    X, Y = grid.mesh()
    p = np.zeros(grid.shape)
    for k in range(1, 4):
        kx, ky = rng.uniform(-1, 1, 2) * k / 2
        p += rng.uniform(0.5, 1.0) / k * np.sin(kx * X + ky * Y + rng.uniform(0, 2 * np.pi))
    return p / np.abs(p).max()


def boundary_field(spec: BoundarySpec, grid: Grid2D) -> ScalarField:
    X, Y = grid.mesh()
    if spec.preset == "constant":
        v = np.full(grid.shape, float(spec.value))
    elif spec.preset == "affine":
        v = spec.b[0] * X + spec.b[1] * Y + spec.value
    elif spec.preset == "aronsson":
        v = aronsson_function(X, Y)
    elif spec.preset == "flat":
        # x_n plus a perturbation of size lam/2, so that the deviation hypothesis
        # |u - x_n| <= lam has room for the coefficient-induced drift
        v = Y + 0.5 * spec.lam * flat_perturbation(grid, spec.seed)
    else:
        raise ConfigError("boundary.preset", f"unknown preset {spec.preset!r}")
    return ScalarField(grid, v)


# -- parsing ----------------------------------------------------------------------------------

_TOP = {"domain", "n", "coefficients", "boundary", "eps_schedule", "solver", "suites", "barrier",
        "probe_points", "output", "seed"}


def _num(where, v, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(where, f"expected a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(where, f"expected an integer, got {v!r}")
        return int(v)
    v = float(v)
    if not np.isfinite(v):
        raise ConfigError(where, f"expected a finite number, got {v!r}")
    return v


def _obj(where, v, allowed):
    if not isinstance(v, dict):
        raise ConfigError(where, f"expected an object, got {type(v).__name__}")
    unknown = sorted(set(v) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}" if where else unknown[0], "unknown key")
    return v


def _vec(where, v, size):
    if not isinstance(v, list) or len(v) != size:
        raise ConfigError(where, f"expected a list of {size} numbers")
    return tuple(_num(f"{where}[{k}]", x) for k, x in enumerate(v))


def parse_config(text: str) -> Scenario:
    """Strict parse of a JSON scenario; unknown keys and bad values raise ConfigError."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    raw = _obj("", raw, _TOP)
    for key in ("domain", "n", "boundary"):
        if key not in raw:
            raise ConfigError(key, "missing required key")
    kw = {}
    dom = _vec("domain", raw["domain"], 4)
    if not (dom[1] > dom[0] and dom[3] > dom[2]):
        raise ConfigError("domain", "expected [x0, x1, y0, y1] with x1 > x0 and y1 > y0")
    kw["domain"] = dom
    n = _num("n", raw["n"], int)
    if n < MIN_RESOLUTION:
        raise ConfigError("n", f"resolution must be at least {MIN_RESOLUTION}")
    kw["n"] = n

    if "coefficients" in raw:
        c = _obj("coefficients", raw["coefficients"], {"preset", "params"})
        name = c.get("preset", "identity")
        if name not in COEFFICIENT_PRESETS:
            raise ConfigError("coefficients.preset", f"unknown preset {name!r}; known: {sorted(COEFFICIENT_PRESETS)}")
        params = c.get("params", [])
        if not isinstance(params, list):
            raise ConfigError("coefficients.params", "expected a list")
        kw["coefficients"] = name
        kw["coefficient_params"] = tuple(_num(f"coefficients.params[{k}]", p) for k, p in enumerate(params))

    b = _obj("boundary", raw["boundary"], {"preset", "value", "b", "lambda", "seed"})
    if "preset" not in b:
        raise ConfigError("boundary.preset", "missing required key")
    if b["preset"] not in BOUNDARY_PRESETS:
        raise ConfigError("boundary.preset", f"unknown preset {b['preset']!r}; known: {list(BOUNDARY_PRESETS)}")
    bkw = {"preset": b["preset"]}
    if "value" in b:
        bkw["value"] = _num("boundary.value", b["value"])
    if "b" in b:
        bkw["b"] = _vec("boundary.b", b["b"], 2)
    if "lambda" in b:
        bkw["lam"] = _num("boundary.lambda", b["lambda"])
        if not bkw["lam"] > 0:
            raise ConfigError("boundary.lambda", "must be positive")
    if "seed" in b:
        bkw["seed"] = _num("boundary.seed", b["seed"], int)
    kw["boundary"] = BoundarySpec(**bkw)

    if "eps_schedule" in raw:
        e = _obj("eps_schedule", raw["eps_schedule"], {"eps0", "ratio", "count", "values"})
        if "values" in e:
            if set(e) - {"values"}:
                raise ConfigError("eps_schedule", "give either values or eps0/ratio/count")
            if not isinstance(e["values"], list) or not e["values"]:
                raise ConfigError("eps_schedule.values", "expected a nonempty list")
            kw["eps_values"] = tuple(_num(f"eps_schedule.values[{k}]", v) for k, v in enumerate(e["values"]))
        if "eps0" in e:
            kw["eps0"] = _num("eps_schedule.eps0", e["eps0"])
        if "ratio" in e:
            kw["ratio"] = _num("eps_schedule.ratio", e["ratio"])
        if "count" in e:
            kw["count"] = _num("eps_schedule.count", e["count"], int)
    if "solver" in raw:
        s = _obj("solver", raw["solver"], {"grad_tol", "max_newton_iters"})
        if "grad_tol" in s:
            kw["grad_tol"] = _num("solver.grad_tol", s["grad_tol"])
        if "max_newton_iters" in s:
            kw["max_newton_iters"] = _num("solver.max_newton_iters", s["max_newton_iters"], int)
    if "suites" in raw:
        su = raw["suites"]
        if not isinstance(su, list):
            raise ConfigError("suites", "expected a list of suite names")
        for k, name in enumerate(su):
            if name not in SUITES:
                raise ConfigError(f"suites[{k}]", f"unknown suite {name!r}; known: {list(SUITES)}")
        kw["suites"] = tuple(su)
    if "barrier" in raw:
        br = _obj("barrier", raw["barrier"], {"y0", "amplitude", "gamma"})
        bk = {}
        if "y0" in br:
            bk["y0"] = _vec("barrier.y0", br["y0"], 2)
        if "amplitude" in br:
            bk["amplitude"] = _num("barrier.amplitude", br["amplitude"])
        if "gamma" in br:
            bk["gamma"] = _num("barrier.gamma", br["gamma"])
        kw["barrier"] = BarrierConfig(**bk)
    if "probe_points" in raw:
        kw["probe_points"] = _num("probe_points", raw["probe_points"], int)
    if "output" in raw:
        if not isinstance(raw["output"], str):
            raise ConfigError("output", "expected a path string")
        kw["output"] = raw["output"]
    if "seed" in raw:
        kw["seed"] = _num("seed", raw["seed"], int)

    sc = Scenario(**kw)
    try:
        sc.schedule
        sc.solve_config()
    except ValueError as exc:
        raise ConfigError("eps_schedule" if "schedule" in str(exc) or "ratio" in str(exc) else "solver", str(exc)) from None
    try:
        sc.coefficient_field()
    except (TypeError, ValueError) as exc:
        raise ConfigError("coefficients", str(exc)) from None
    return sc
