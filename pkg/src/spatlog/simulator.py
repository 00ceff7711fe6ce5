"""Exact event-driven simulation of the birth-death process on a torus.

Waiting times are exponential in the total event rate; deaths pick a
particle proportionally to its death rate (mortality plus pairwise
competition), births pick a uniform parent and displace the offspring by
the dispersal kernel.  Death-rate bookkeeping is incremental with a
cell-list neighbor structure sized to the competition cutoff; the total
birth rate is exactly N times the truncated dispersal mass, so offspring
placement never rejects.

Replica r of a run draws from a counter-based stream keyed by (seed, r),
so runs are reproducible and replicas are independent under concurrency.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .configspace import Configuration
from .kernels import ModelParams

__all__ = [
    "SimConfig",
    "SimState",
    "Snapshot",
    "EventRecord",
    "ReplicaResult",
    "make_stream",
    "run",
    "write_snapshots_csv",
    "write_summary_json",
    "read_snapshots_csv",
]

_MASK64 = (1 << 64) - 1


def make_stream(seed: int, replica: int = 0) -> np.random.Generator:
    """Counter-based random stream for one replica, keyed by (seed, replica)."""
    key = np.array([seed & _MASK64, replica & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    t_max: float
    kappa: float | None = None
    points: np.ndarray | None = None
    snapshot_times: tuple[float, ...] = ()
    seed: int = 0
    replicas: int = 1

    def __post_init__(self):
        if (self.kappa is None) == (self.points is None):
            raise ValueError("exactly one of kappa / points must be given")
        if self.kappa is not None and self.kappa < 0.0:
            raise ValueError("kappa must be nonnegative")
        if self.t_max < 0.0:
            raise ValueError("t_max must be nonnegative")
        times = tuple(float(s) for s in self.snapshot_times)
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot times must be sorted")
        if times and (times[0] < 0.0 or times[-1] > self.t_max):
            raise ValueError("snapshot times must lie in [0, t_max]")
        object.__setattr__(self, "snapshot_times", times)
        if self.points is not None:
            pts = np.atleast_2d(np.asarray(self.points, dtype=float))
            if pts.size == 0:
                pts = pts.reshape(0, self.params.d)
            if pts.shape[1] != self.params.d:
                raise ValueError(f"points must have shape (n, {self.params.d})")
            if np.any(pts < 0.0) or np.any(pts >= self.params.L):
                raise ValueError("explicit points must lie inside the box")
            object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class Snapshot:
    t: float
    replica: int
    points: np.ndarray
    L: float
    d: int

    @property
    def n(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class EventRecord:
    kind: str  # "birth" | "death" | "none"
    t: float
    index: int = -1
    position: np.ndarray | None = None


@dataclass
class ReplicaResult:
    replica: int
    snapshots: list[Snapshot]
    events: int
    final_t: float


class SimState:
    """Mutable simulation state with incremental rate bookkeeping."""

    def __init__(self, params: ModelParams, rng: np.random.Generator):
        self.p = params
        self.rng = rng
        self.t = 0.0
        self.mass_plus = params.a_plus.total_mass()
        self._has_competition = not params.a_minus.is_zero
        self._r_cut = params.a_minus.support_radius
        n_c = 1
        if self._has_competition and self._r_cut > 0.0:
            n_c = max(1, int(math.floor(params.L / self._r_cut)))
        self.cells_per_side = n_c
        self.cell_len = params.L / n_c
        self.n_cells = n_c**params.d
        self._neighbors = self._build_neighbor_table()
        cap = 64
        self.pos = np.zeros((cap, params.d))
        self.rate = np.zeros(cap)
        self.cell_of = np.zeros(cap, dtype=np.int64)
        self.n = 0
        self.cells: list[list[int]] = [[] for _ in range(self.n_cells)]
        self.cell_rate = np.zeros(self.n_cells)
        self.D = 0.0

    # -- construction -------------------------------------------------------

    @classmethod
    def from_points(cls, params: ModelParams, points, rng: np.random.Generator) -> "SimState":
        state = cls(params, rng)
        for x in np.atleast_2d(np.asarray(points, dtype=float)):
            state.insert(x)
        return state

    @classmethod
    def from_poisson(cls, params: ModelParams, kappa: float, rng: np.random.Generator) -> "SimState":
        state = cls(params, rng)
        n = rng.poisson(kappa * params.L**params.d)
        pts = rng.random((n, params.d)) * params.L
        for x in pts:
            state.insert(x)
        return state

    @classmethod
    def from_config(cls, cfg: SimConfig, replica: int = 0) -> "SimState":
        rng = make_stream(cfg.seed, replica)
        if cfg.points is not None:
            return cls.from_points(cfg.params, cfg.points, rng)
        return cls.from_poisson(cfg.params, cfg.kappa, rng)

    # -- cell bookkeeping -----------------------------------------------------

    def _build_neighbor_table(self) -> list[list[int]]:
        n_c, d = self.cells_per_side, self.p.d
        table = []
        for cell in range(self.n_cells):
            coords = []
            c = cell
            for _ in range(d):
                coords.append(c % n_c)
                c //= n_c
            neigh = set()
            for offs in itertools.product((-1, 0, 1), repeat=d):
                idx = 0
                for axis in reversed(range(d)):
                    idx = idx * n_c + (coords[axis] + offs[axis]) % n_c
                neigh.add(idx)
            table.append(sorted(neigh))
        return table

    def _cell_index(self, x: np.ndarray) -> int:
        idx = 0
        for axis in reversed(range(self.p.d)):
            c = min(int(x[axis] / self.cell_len), self.cells_per_side - 1)
            idx = idx * self.cells_per_side + c
        return idx

    def _neighbor_ids(self, cell: int) -> list[int]:
        out = []
        for c in self._neighbors[cell]:
            out.extend(self.cells[c])
        return out

    def _grow(self):
        cap = len(self.rate) * 2
        self.pos = np.resize(self.pos, (cap, self.p.d))
        self.rate = np.resize(self.rate, cap)
        self.cell_of = np.resize(self.cell_of, cap)

    # -- state mutation --------------------------------------------------------

    def _competition_with(self, x: np.ndarray, cell: int):
        """Neighbor ids and their pairwise competition values against point x."""
        ids = self._neighbor_ids(cell)
        if not ids:
            return ids, None
        idx = np.asarray(ids, dtype=np.int64)
        diff = self.pos[idx] - x
        diff -= self.p.L * np.round(diff / self.p.L)
        a = np.asarray(self.p.a_minus.eval_radius(np.sqrt((diff * diff).sum(axis=1))))
        return idx, a

    def insert(self, x) -> int:
        """Add a particle at x; update its and its neighbors' death rates."""
        x = np.asarray(x, dtype=float) % self.p.L
        if self.n == len(self.rate):
            self._grow()
        i = self.n
        self.n += 1
        self.pos[i] = x
        cell = self._cell_index(x)
        self.cell_of[i] = cell
        dr = self.p.m
        if self._has_competition:
            idx, a = self._competition_with(x, cell)
            if a is not None and a.any():
                dr += float(a.sum())
                self.rate[idx] += a
                np.add.at(self.cell_rate, self.cell_of[idx], a)
                self.D += float(a.sum())
        self.rate[i] = dr
        self.cells[cell].append(i)
        self.cell_rate[cell] += dr
        self.D += dr
        return i

    def remove(self, i: int) -> None:
        """Remove particle i; decrement neighbor rates; swap-fill the arrays."""
        x = self.pos[i].copy()
        cell = int(self.cell_of[i])
        dr = float(self.rate[i])
        self.cells[cell].remove(i)
        self.cell_rate[cell] -= dr
        self.D -= dr
        if self._has_competition:
            idx, a = self._competition_with(x, cell)
            if a is not None and a.any():
                self.rate[idx] -= a
                np.subtract.at(self.cell_rate, self.cell_of[idx], a)
                self.D -= float(a.sum())
        last = self.n - 1
        if i != last:
            lc = int(self.cell_of[last])
            self.pos[i] = self.pos[last]
            self.rate[i] = self.rate[last]
            self.cell_of[i] = lc
            cl = self.cells[lc]
            cl[cl.index(last)] = i
        self.n = last
        if self.n == 0:
            # absorb tiny float residue so the extinct state is exactly silent
            self.D = 0.0
            self.cell_rate.fill(0.0)

    # -- rates -------------------------------------------------------------------

    @property
    def birth_total(self) -> float:
        return self.n * self.mass_plus

    @property
    def total_rate(self) -> float:
        return self.D + self.birth_total

    def recompute_death_rates(self) -> tuple[np.ndarray, float]:
        """From-scratch death rates and their sum (oracle for the incremental ones)."""
        n = self.n
        rates = np.full(n, self.p.m)
        if self._has_competition and n > 1:
            pts = self.pos[:n]
            diff = pts[:, None, :] - pts[None, :, :]
            diff -= self.p.L * np.round(diff / self.p.L)
            r = np.linalg.norm(diff, axis=-1)
            a = np.asarray(self.p.a_minus.eval_radius(r))
            np.fill_diagonal(a, 0.0)
            rates += a.sum(axis=1)
        return rates, float(rates.sum())

    # -- events ---------------------------------------------------------------------

    def _pick_death(self) -> int:
        """Two-level selection: cell by partial sums, then particle within the cell."""
        u = self.rng.random() * self.D
        cum = np.cumsum(self.cell_rate)
        cell = int(np.searchsorted(cum, u, side="left"))
        cell = min(cell, self.n_cells - 1)
        if not self.cells[cell]:  # float residue landed on an empty cell
            occupied = [c for c in range(self.n_cells) if self.cells[c]]
            cell = occupied[-1]
        members = self.cells[cell]
        rates = self.rate[np.asarray(members, dtype=np.int64)]
        w = self.rng.random() * rates.sum()
        j = int(np.searchsorted(np.cumsum(rates), w, side="left"))
        return members[min(j, len(members) - 1)]

    def _apply_event(self, R: float) -> EventRecord:
        """Choose and apply one event once the waiting time has elapsed."""
        if self.rng.random() * R < self.D:
            i = self._pick_death()
            x = self.pos[i].copy()
            self.remove(i)
            return EventRecord("death", self.t, i, x)
        parent = int(self.rng.integers(self.n))
        x = (self.pos[parent] + self.p.a_plus.sample_displacement(self.rng)) % self.p.L
        i = self.insert(x)
        return EventRecord("birth", self.t, i, x.copy())

    def step(self) -> EventRecord:
        """Advance by one event; no-op marker once the state is absorbing."""
        R = self.total_rate
        if self.n == 0 or R <= 0.0:
            return EventRecord("none", self.t)
        self.t += self.rng.exponential(1.0 / R)
        return self._apply_event(R)

    @property
    def config(self) -> Configuration:
        return Configuration(self.pos[: self.n].copy(), self.p.L, self.p.d)

    def snapshot(self, replica: int, at_time: float | None = None) -> Snapshot:
        return Snapshot(
            self.t if at_time is None else at_time,
            replica,
            self.pos[: self.n].copy(),
            self.p.L,
            self.p.d,
        )


def run_replica(cfg: SimConfig, replica: int) -> ReplicaResult:
    """One replica: deterministic given (seed, replica); snapshots are copies."""
    state = SimState.from_config(cfg, replica)
    snaps: list[Snapshot] = []
    times = cfg.snapshot_times
    si = 0
    events = 0
    while True:
        R = state.total_rate
        if state.n == 0 or R <= 0.0:
            break
        tau = state.rng.exponential(1.0 / R)
        t_next = state.t + tau
        while si < len(times) and times[si] <= min(t_next, cfg.t_max):
            snaps.append(state.snapshot(replica, at_time=times[si]))
            si += 1
        if t_next > cfg.t_max:
            state.t = cfg.t_max
            break
        state.t = t_next
        state._apply_event(R)
        events += 1
    while si < len(times):
        snaps.append(state.snapshot(replica, at_time=times[si]))
        si += 1
    return ReplicaResult(replica, snaps, events, state.t)


def run(cfg: SimConfig) -> list[ReplicaResult]:
    """All replicas, sequentially; replicas use independent streams."""
    return [run_replica(cfg, r) for r in range(cfg.replicas)]


# -- artifacts -----------------------------------------------------------------------


def write_snapshots_csv(result: ReplicaResult, path) -> None:
    """Per-replica snapshot CSV: t,replica,particle_index,x0[,x1] (17 significant digits)."""
    with open(path, "w") as fh:
        d = result.snapshots[0].d if result.snapshots else 1
        cols = ",".join(f"x{i}" for i in range(d))
        fh.write(f"t,replica,particle_index,{cols}\n")
        for snap in result.snapshots:
            for idx, xs in enumerate(snap.points):
                coords = ",".join(f"{x:.17g}" for x in xs)
                fh.write(f"{snap.t:.17g},{snap.replica},{idx},{coords}\n")


def read_snapshots_csv(path, L: float, d: int) -> list[Snapshot]:
    """Inverse of :func:`write_snapshots_csv` (grouping rows by snapshot time)."""
    rows: dict[tuple[float, int], list[list[float]]] = {}
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("t,replica"):
            raise ValueError(f"{path}: not a snapshot CSV")
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            t, rep = float(parts[0]), int(parts[1])
            rows.setdefault((t, rep), []).append([float(x) for x in parts[3 : 3 + d]])
    out = []
    for (t, rep), pts in sorted(rows.items()):
        out.append(Snapshot(t, rep, np.asarray(pts, dtype=float).reshape(-1, d), L, d))
    return out


def write_summary_json(results: list[ReplicaResult], cfg: SimConfig, path) -> dict:
    """Per-snapshot-time population statistics across replicas."""
    by_time: dict[float, list[int]] = {}
    for res in results:
        for snap in res.snapshots:
            by_time.setdefault(snap.t, []).append(snap.n)
    summary = {
        "replicas": cfg.replicas,
        "t_max": cfg.t_max,
        "snapshots": [
            {
                "t": t,
                "n_mean": float(np.mean(ns)),
                "n_var": float(np.var(ns, ddof=1)) if len(ns) > 1 else 0.0,
                "n_min": int(np.min(ns)),
                "n_max": int(np.max(ns)),
            }
            for t, ns in sorted(by_time.items())
        ],
        "events_total": int(sum(r.events for r in results)),
    }
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary
