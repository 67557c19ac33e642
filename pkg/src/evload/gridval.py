"""AC power flow on small distribution feeders and voltage-deviation reports.

Buses are either the single slack (1.0 pu, 0 rad) or constant-PQ loads.
Loads are stored as per-unit arrays of shape ``(timesteps, n_buses)`` in
bus order. :func:`solve_power_flow` is a polar Newton-Raphson solver;
:func:`gauss_seidel` is a separate fixed-point solver kept as a check.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import IO, Mapping

import numpy as np

from .errors import (
    InvalidCaseError,
    InvalidSizeError,
    NonConvergenceError,
    ProfileMismatchError,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50
DEFAULT_PF = 0.95


@dataclass(frozen=True)
class Bus:
    id: int
    type: str = "PQ"  # "slack" or "PQ"
    base_kv: float = 12.47


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(eq=False)
class GridCase:
    buses: list[Bus]
    lines: list[Line]
    base_mva: float = 1.0
    p_load: np.ndarray = field(default=None)  # (T, n_buses) pu
    q_load: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.buses)
        if self.p_load is None:
            self.p_load = np.zeros((1, n))
        if self.q_load is None:
            self.q_load = np.zeros_like(self.p_load)
        self.p_load = np.atleast_2d(np.asarray(self.p_load, dtype=float))
        self.q_load = np.atleast_2d(np.asarray(self.q_load, dtype=float))
        self.validate()

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_timesteps(self) -> int:
        return self.p_load.shape[0]

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def slack(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.type == "slack")

    def index(self, bus_id: int) -> int:
        return self.bus_ids.index(bus_id)

    def with_loads(self, p_load, q_load) -> "GridCase":
        return GridCase(self.buses, self.lines, self.base_mva, p_load, q_load)

    def validate(self) -> None:
        ids = self.bus_ids
        if len(set(ids)) != len(ids):
            raise InvalidCaseError("duplicate bus ids")
        if sum(b.type == "slack" for b in self.buses) != 1:
            raise InvalidCaseError("a case needs exactly one slack bus")
        if any(b.type not in ("slack", "PQ") for b in self.buses):
            raise InvalidCaseError("bus type must be 'slack' or 'PQ'")
        for ln in self.lines:
            if ln.from_bus not in ids or ln.to_bus not in ids or ln.from_bus == ln.to_bus:
                raise InvalidCaseError(f"line {ln} references unknown or identical buses")
            if ln.r < 0 or ln.x < 0 or ln.r + ln.x <= 0:
                raise InvalidCaseError(f"line {ln} needs r, x >= 0 and r + x > 0")
        # connectivity from the slack
        adj = {i: set() for i in ids}
        for ln in self.lines:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        seen, stack = set(), [self.buses[self.slack].id]
        while stack:
            b = stack.pop()
            if b not in seen:
                seen.add(b)
                stack.extend(adj[b] - seen)
        if len(seen) != len(ids):
            raise InvalidCaseError("network is not connected")
        if self.p_load.shape != self.q_load.shape or self.p_load.shape[1] != len(ids):
            raise InvalidCaseError(f"load arrays {self.p_load.shape}/{self.q_load.shape} do not match {len(ids)} buses")

    def ybus(self) -> np.ndarray:
        n = self.n_buses
        y = np.zeros((n, n), dtype=complex)
        for ln in self.lines:
            i, j = self.index(ln.from_bus), self.index(ln.to_bus)
            ys = 1.0 / complex(ln.r, ln.x)
            y[i, i] += ys
            y[j, j] += ys
            y[i, j] -= ys
            y[j, i] -= ys
        return y

    def to_json(self) -> str:
        doc = {
            "base_mva": self.base_mva,
            "buses": [{"id": b.id, "type": b.type, "base_kv": b.base_kv} for b in self.buses],
            "lines": [{"from": l.from_bus, "to": l.to_bus, "r": l.r, "x": l.x} for l in self.lines],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GridCase":
        doc = json.loads(text)
        try:
            buses = [Bus(int(b["id"]), b.get("type", "PQ"), float(b.get("base_kv", 12.47))) for b in doc["buses"]]
            lines = [Line(int(l["from"]), int(l["to"]), float(l["r"]), float(l["x"])) for l in doc["lines"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidCaseError(f"malformed case document: {exc}") from None
        return cls(buses, lines, float(doc.get("base_mva", 1.0)))


def reactive_from_pf(p, pf: float = DEFAULT_PF):
    """Q for a lagging power factor."""
    return np.asarray(p, dtype=float) * math.tan(math.acos(pf))


def loads_from_daily_average(da_kwh, interval_hours: float = 0.25, base_mva: float = 1.0):
    """Convert per-interval average energy (kWh) to per-unit active power."""
    return np.asarray(da_kwh, dtype=float) / interval_hours / 1000.0 / base_mva


def build_fixture_case(n_buses: int, profile=None, pf: float = DEFAULT_PF, r: float = 0.01,
                       x: float = 0.03, base_mva: float = 1.0) -> GridCase:
    """Radial feeder 0-1-...-(n-1) with the slack at bus 0.

    ``profile`` is the per-unit active load: ``None`` (no load), a ``(T,)``
    array applied at every PQ bus, a ``(T, n_buses - 1)`` array with one
    column per PQ bus, or a mapping ``bus_id -> (T,)``. Reactive load follows
    from ``pf``.
    """
    if n_buses < 2:
        raise InvalidSizeError("a feeder needs at least 2 buses")
    buses = [Bus(0, "slack")] + [Bus(k, "PQ") for k in range(1, n_buses)]
    lines = [Line(k, k + 1, r, x) for k in range(n_buses - 1)]
    if profile is None:
        p = np.zeros((1, n_buses))
    elif isinstance(profile, Mapping):
        lengths = {len(np.asarray(v)) for v in profile.values()}
        if len(lengths) != 1:
            raise ProfileMismatchError("profiles have different lengths")
        p = np.zeros((lengths.pop(), n_buses))
        for bus_id, series in profile.items():
            if not 0 <= bus_id < n_buses:
                raise InvalidCaseError(f"no bus {bus_id}")
            p[:, bus_id] = series
    else:
        arr = np.asarray(profile, dtype=float)
        p = np.zeros((arr.shape[0], n_buses))
        if arr.ndim == 1:
            p[:, 1:] = arr[:, None]
        elif arr.shape[1] == n_buses - 1:
            p[:, 1:] = arr
        else:
            raise ProfileMismatchError(f"profile shape {arr.shape} does not fit {n_buses} buses")
    return GridCase(buses, lines, base_mva, p, reactive_from_pf(p, pf))


def forecast_scenarios(actual_kwh, predicted_kwh, n_buses: int = 5, pf: float = DEFAULT_PF,
                       interval_hours: float = 0.25, base_mva: float = 1.0):
    """Fixture feeder plus ``(p, q)`` load pairs for a measured and a forecast series.

    Both inputs are daily-average interval energies in kWh; every PQ bus
    carries the same station load. Returns ``(case, actual, predicted)``.
    """
    a = np.asarray(actual_kwh, dtype=float).ravel()
    f = np.asarray(predicted_kwh, dtype=float).ravel()
    if a.shape != f.shape:
        raise ProfileMismatchError(f"actual has {a.size} points, forecast {f.size}")
    pa = loads_from_daily_average(a, interval_hours, base_mva)
    pf_ = loads_from_daily_average(f, interval_hours, base_mva)
    case = build_fixture_case(n_buses, pa, pf, base_mva=base_mva)
    pred = build_fixture_case(n_buses, pf_, pf, base_mva=base_mva)
    return case, (case.p_load, case.q_load), (pred.p_load, pred.q_load)


@dataclass(frozen=True)
class VoltageSolution:
    vm: np.ndarray  # per-unit magnitude per bus
    va: np.ndarray  # radians per bus
    iterations: int
    converged: bool
    mismatch: float

    @property
    def v(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)


def _injections(case: GridCase, t: int) -> np.ndarray:
    return -(case.p_load[t] + 1j * case.q_load[t])


def solve_power_flow(case: GridCase, timestep: int = 0, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> VoltageSolution:
    """Newton-Raphson in polar coordinates from a flat start."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = case.ybus()
    s_spec = _injections(case, timestep)
    slack = case.slack
    pq = np.array([k for k in range(case.n_buses) if k != slack])
    npq = len(pq)
    vm = np.ones(case.n_buses)
    va = np.zeros(case.n_buses)
    if not np.any(s_spec[pq]):
        # Y-bus rows sum to zero, so the flat start solves a load-free case exactly;
        # iterating would only chase rounding noise in y @ v
        return VoltageSolution(vm, va, 0, True, 0.0)

    def mismatch():
        v = vm * np.exp(1j * va)
        f = v * np.conj(y @ v) - s_spec
        return v, np.concatenate((f.real[pq], f.imag[pq]))

    v, f = mismatch()
    norm = float(np.max(np.abs(f))) if npq else 0.0
    it = 0
    refined = False
    while norm > tol or not refined:
        if norm <= tol:
            # one extra step once within tolerance, kept only if it helps
            refined = True
            if norm == 0.0 or it >= max_iter:
                break
            saved = vm.copy(), va.copy(), v, f, norm
        if it >= max_iter:
            raise NonConvergenceError(
                f"no convergence after {it} iterations (mismatch {norm:.3g} pu)",
                mismatch=norm, iterations=it, timestep=timestep)
        i_bus = y @ v
        vnorm = v / np.abs(v)
        ds_dvm = np.diag(v) @ np.conj(y @ np.diag(vnorm)) + np.diag(np.conj(i_bus) * vnorm)
        ds_dva = 1j * np.diag(v) @ np.conj(np.diag(i_bus) - y @ np.diag(v))
        jac = np.block([
            [ds_dva.real[np.ix_(pq, pq)], ds_dvm.real[np.ix_(pq, pq)]],
            [ds_dva.imag[np.ix_(pq, pq)], ds_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise NonConvergenceError("singular Jacobian", mismatch=norm, iterations=it,
                                      timestep=timestep) from None
        va[pq] += dx[:npq]
        vm[pq] += dx[npq:]
        it += 1
        v, f = mismatch()
        norm = float(np.max(np.abs(f)))
        if refined:
            if not norm < saved[4]:
                vm, va, v, f, norm = saved
                it -= 1
            break
        if not np.isfinite(norm) or np.any(vm <= 0):
            raise NonConvergenceError(f"diverged at iteration {it}", mismatch=norm,
                                      iterations=it, timestep=timestep)
    return VoltageSolution(vm.copy(), va.copy(), it, True, norm)


def gauss_seidel(case: GridCase, timestep: int = 0, tol: float = 1e-13,
                 max_iter: int = 200_000) -> VoltageSolution:
    """Plain Gauss-Seidel voltage iteration; stops when no bus voltage moves more than ``tol``."""
    y = case.ybus()
    s = _injections(case, timestep)
    slack = case.slack
    v = np.ones(case.n_buses, dtype=complex)
    for it in range(1, max_iter + 1):
        delta = 0.0
        for i in range(case.n_buses):
            if i == slack:
                continue
            acc = 0j
            for j in range(case.n_buses):
                if j != i:
                    acc += y[i, j] * v[j]
            new = (np.conj(s[i]) / np.conj(v[i]) - acc) / y[i, i]
            delta = max(delta, abs(new - v[i]))
            v[i] = new
        if not np.isfinite(delta):
            break
        if delta < tol:
            f = v * np.conj(y @ v) - s
            f[slack] = 0
            return VoltageSolution(np.abs(v), np.angle(v), it, True, float(np.max(np.abs(f))))
    raise NonConvergenceError("Gauss-Seidel did not converge", iterations=max_iter, timestep=timestep)


def slack_power(case: GridCase, sol: VoltageSolution, timestep: int = 0) -> complex:
    """Complex power supplied by the slack bus, including any load attached to it."""
    v = sol.v
    k = case.slack
    s_net = v[k] * np.conj(case.ybus()[k] @ v)
    return complex(s_net + case.p_load[timestep, k] + 1j * case.q_load[timestep, k])


def line_losses(case: GridCase, sol: VoltageSolution) -> float:
    v = sol.v
    total = 0.0
    for ln in case.lines:
        i, j = case.index(ln.from_bus), case.index(ln.to_bus)
        current = (v[i] - v[j]) / complex(ln.r, ln.x)
        total += ln.r * abs(current) ** 2
    return total


def solve_series(case: GridCase, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 scenario: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Voltage magnitudes and angles for every timestep, shape ``(T, n_buses)``."""
    vm = np.empty((case.n_timesteps, case.n_buses))
    va = np.empty_like(vm)
    for t in range(case.n_timesteps):
        try:
            sol = solve_power_flow(case, t, tol, max_iter)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"{scenario or 'case'} timestep {t}: {exc}", mismatch=exc.mismatch,
                                      iterations=exc.iterations, scenario=scenario, timestep=t) from None
        vm[t], va[t] = sol.vm, sol.va
    return vm, va


@dataclass(frozen=True)
class DeviationReport:
    bus_ids: tuple[int, ...]
    dv: np.ndarray  # (T, n_buses): |V_pred| - |V_actual|
    max_abs: float
    argmax_timestep: int
    argmax_bus: int

    def to_csv(self, out: IO[str]) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("timestep", "bus_id", "dv_pu"))
        for t in range(self.dv.shape[0]):
            for k, bus in enumerate(self.bus_ids):
                writer.writerow((t, bus, repr(float(self.dv[t, k]))))

    def summary(self) -> dict:
        return {
            "max_abs_dv_pu": self.max_abs,
            "argmax_timestep": self.argmax_timestep,
            "argmax_bus": self.argmax_bus,
            "n_timesteps": int(self.dv.shape[0]),
            "n_buses": len(self.bus_ids),
        }


def compare_profiles(case: GridCase, actual, predicted, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> DeviationReport:
    """Solve both load scenarios and report per-bus voltage magnitude differences.

    ``actual`` and ``predicted`` are ``(p_load, q_load)`` pairs of
    ``(T, n_buses)`` arrays.
    """
    pa, qa = (np.atleast_2d(np.asarray(a, dtype=float)) for a in actual)
    pp, qp = (np.atleast_2d(np.asarray(a, dtype=float)) for a in predicted)
    if not (pa.shape == qa.shape == pp.shape == qp.shape):
        raise ProfileMismatchError(f"profile shapes differ: {pa.shape}, {qa.shape}, {pp.shape}, {qp.shape}")
    if pa.shape[1] != case.n_buses:
        raise ProfileMismatchError(f"profiles cover {pa.shape[1]} buses, case has {case.n_buses}")
    vm_a, _ = solve_series(case.with_loads(pa, qa), tol, max_iter, scenario="actual")
    vm_p, _ = solve_series(case.with_loads(pp, qp), tol, max_iter, scenario="predicted")
    dv = vm_p - vm_a
    flat = int(np.argmax(np.abs(dv)))
    t, k = divmod(flat, case.n_buses)
    return DeviationReport(tuple(case.bus_ids), dv, float(np.abs(dv).max()), t, case.bus_ids[k])


def read_loads_csv(source: IO[str], case: GridCase) -> tuple[np.ndarray, np.ndarray]:
    """Read ``timestep,bus_id,p_pu,q_pu`` rows into ``(T, n_buses)`` arrays; absent entries are zero."""
    rows = []
    reader = csv.DictReader(source)
    need = {"timestep", "bus_id", "p_pu", "q_pu"}
    if not reader.fieldnames or not need <= set(reader.fieldnames):
        raise ProfileMismatchError(f"load CSV needs columns {sorted(need)}")
    for row in reader:
        rows.append((int(row["timestep"]), int(row["bus_id"]), float(row["p_pu"]), float(row["q_pu"])))
    if not rows:
        raise ProfileMismatchError("load CSV has no rows")
    n_t = max(r[0] for r in rows) + 1
    p = np.zeros((n_t, case.n_buses))
    q = np.zeros_like(p)
    for t, bus, pv, qv in rows:
        try:
            k = case.index(bus)
        except ValueError:
            raise ProfileMismatchError(f"load for unknown bus {bus}") from None
        p[t, k] = pv
        q[t, k] = qv
    return p, q


def write_loads_csv(p, q, bus_ids, out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("timestep", "bus_id", "p_pu", "q_pu"))
    p, q = np.atleast_2d(p), np.atleast_2d(q)
    for t in range(p.shape[0]):
        for k, bus in enumerate(bus_ids):
            writer.writerow((t, bus, repr(float(p[t, k])), repr(float(q[t, k]))))
