"""Data-parallel evaluation of the performance field over all cells.

Layout and reduction rules:

* Cell coordinates are held as separate contiguous arrays (structure of
  arrays) together with the precomputed view direction of every cell.
* Work is split into chunks of ``chunk`` cells, a multiple of ``BLOCK``.
  Workers own disjoint, contiguous runs of chunks and write disjoint output
  ranges, with one private scratch set each.
* In deterministic mode every reduction first produces one partial per
  ``BLOCK`` cells, and partials are combined strictly in block order, so the
  result does not depend on the worker count. Without it each worker sums
  its own range and the worker totals are added, which is slightly faster
  and matches the serial result to rounding.
"""

from __future__ import annotations

import math
import os
import platform
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .field import CellArrays
from .geometry import (
    ACOS_CLAMP,
    DEGENERATE_DIST,
    GUARD_BAND,
    GUARD_SIN,
    CameraParams,
    DroneState,
)

BLOCK = 1024
DEFAULT_CHUNK = 32 * BLOCK

# columns of the per-drone accumulator returned by Engine.accumulate
ACC_H, ACC_GX, ACC_GY, ACC_GH, ACC_GV, ACC_H2 = range(6)
N_ACC = 6


def block_sum(a: np.ndarray) -> float:
    """Sum ``a`` as BLOCK-sized partials added left to right."""
    a = np.ascontiguousarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    nfull, rem = divmod(a.size, BLOCK)
    parts = np.empty(nfull + (1 if rem else 0))
    if nfull:
        parts[:nfull] = a[: nfull * BLOCK].reshape(nfull, BLOCK).sum(axis=1)
    if rem:
        parts[-1] = a[nfull * BLOCK :].sum()
    return float(np.add.accumulate(parts)[-1])


def state_matrix(states) -> tuple[np.ndarray, float]:
    """Stack drone states into an ``(n, 4)`` array and return the shared altitude."""
    if isinstance(states, DroneState):
        states = [states]
    states = list(states)
    if not states:
        raise ValueError("need at least one drone")
    z = {s.z_c for s in states}
    if len(z) != 1:
        raise ValueError("all drones must fly at the same altitude")
    return np.array([s.as_array() for s in states]), z.pop()


def _drone_frames(p: np.ndarray) -> np.ndarray:
    """Per-drone optical axis and its two angular derivatives, shape ``(n, 8)``.

    Columns: ex, ey, ez, dh_x, dh_y, dv_x, dv_y, dv_z.
    """
    ch, sh = np.cos(p[:, 2]), np.sin(p[:, 2])
    cv, sv = np.cos(p[:, 3]), np.sin(p[:, 3])
    return np.column_stack([ch * cv, sh * cv, -sv, -sh * cv, ch * cv, -ch * sv, -sh * sv, -cv])


class _Scratch:
    """Private work arrays for one worker."""

    _FLOATS = ("dx", "dy", "dz", "r", "ir", "c1", "c2", "a1", "a2", "t0", "t1", "t2",
               "p", "gx", "gy", "gh", "gv", "px", "py", "ex", "ey", "ez",
               "dhx", "dhy", "dvx", "dvy", "dvz")

    def __init__(self, size: int):
        for name in self._FLOATS:
            setattr(self, name, np.empty(size))
        self.bad = np.empty(size, dtype=bool)
        self.mask = np.empty(size, dtype=bool)
        self.key = np.empty(size, dtype=np.intp)
        self.local_block = np.arange(size, dtype=np.intp) // BLOCK


@dataclass
class BatchBuffers:
    """Cell coordinates, view directions and per-cell outputs, all length ``m``."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    vz: np.ndarray
    hmax: np.ndarray
    owner: np.ndarray

    @classmethod
    def from_cells(cls, cells: CellArrays) -> "BatchBuffers":
        cv = np.cos(cells.theta_v)
        m = len(cells)
        return cls(
            x=np.ascontiguousarray(cells.x, dtype=float),
            y=np.ascontiguousarray(cells.y, dtype=float),
            z=np.ascontiguousarray(cells.z, dtype=float),
            vx=np.cos(cells.theta_h) * cv,
            vy=np.sin(cells.theta_h) * cv,
            vz=np.sin(cells.theta_v),
            hmax=np.zeros(m),
            owner=np.zeros(m, dtype=np.intp),
        )

    @property
    def m(self) -> int:
        return len(self.x)


class Engine:
    """Batch evaluator bound to one cell set and one camera model.

    Parameters
    ----------
    cells:
        Cell representative points.
    camera:
        Camera model used for every drone.
    workers:
        Number of worker threads. ``1`` runs inline.
    deterministic:
        Reduce through fixed per-block partials so results are bit-identical
        for any worker count.
    chunk:
        Cells per work item; rounded up to a multiple of ``BLOCK``.
    """

    def __init__(self, cells: CellArrays, camera: CameraParams, workers: int = 1,
                 deterministic: bool = True, chunk: int = DEFAULT_CHUNK):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.camera = camera
        self.buffers = BatchBuffers.from_cells(cells)
        self.workers = int(workers)
        self.deterministic = deterministic
        m = self.buffers.m
        chunk = max(BLOCK, -(-int(chunk) // BLOCK) * BLOCK)
        self.chunk = min(chunk, -(-m // BLOCK) * BLOCK)
        self.chunks = [slice(a, min(a + self.chunk, m)) for a in range(0, m, self.chunk)]
        self.n_blocks = -(-m // BLOCK)
        # contiguous runs of chunks, one per worker
        per = -(-len(self.chunks) // self.workers)
        self._runs = [self.chunks[k * per:(k + 1) * per] for k in range(self.workers)]
        self._runs = [r for r in self._runs if r]
        self._scratch = [_Scratch(self.chunk) for _ in self._runs]
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self._partials: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.buffers.m

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _map(self, fn) -> list:
        jobs = list(zip(self._runs, self._scratch))
        if self._pool is None:
            return [fn(run, s) for run, s in jobs]
        return list(self._pool.map(lambda job: fn(*job), jobs))

    # -- kernels ---------------------------------------------------------------

    def _offsets(self, sl: slice, s: _Scratch, px, py, zc: float) -> int:
        """Fill unit offsets (dx, dy, dz), inverse range and degenerate mask."""
        b = self.buffers
        L = sl.stop - sl.start
        dx, dy, dz, r, ir, t0 = s.dx[:L], s.dy[:L], s.dz[:L], s.r[:L], s.ir[:L], s.t0[:L]
        np.subtract(b.x[sl], px, out=dx)
        np.subtract(b.y[sl], py, out=dy)
        np.subtract(b.z[sl], zc, out=dz)
        np.multiply(dx, dx, out=r)
        np.multiply(dy, dy, out=t0)
        r += t0
        np.multiply(dz, dz, out=t0)
        r += t0
        np.sqrt(r, out=r)
        np.less(r, DEGENERATE_DIST, out=s.bad[:L])
        np.maximum(r, DEGENERATE_DIST, out=r)
        np.divide(1.0, r, out=ir)
        dx *= ir
        dy *= ir
        dz *= ir
        return L

    def _cosines(self, sl: slice, s: _Scratch, L: int, ex, ey, ez) -> None:
        """c1 = axis . unit offset; c2 = view direction . (cell -> drone)."""
        b = self.buffers
        c1, c2, t0 = s.c1[:L], s.c2[:L], s.t0[:L]
        dx, dy, dz = s.dx[:L], s.dy[:L], s.dz[:L]
        np.multiply(dx, ex, out=c1)
        np.multiply(dy, ey, out=t0)
        c1 += t0
        np.multiply(dz, ez, out=t0)
        c1 += t0
        np.multiply(dx, b.vx[sl], out=c2)
        np.multiply(dy, b.vy[sl], out=t0)
        c2 += t0
        np.multiply(dz, b.vz[sl], out=t0)
        c2 += t0
        np.negative(c2, out=c2)

    def _perf_from_cosines(self, s: _Scratch, L: int, out: np.ndarray) -> None:
        """perf from c1/c2; leaves arccos values in a1/a2 untouched for callers."""
        cam = self.camera
        a1, a2, t0, t1 = s.a1[:L], s.a2[:L], s.t0[:L], s.t1[:L]
        np.clip(s.c1[:L], -ACOS_CLAMP, ACOS_CLAMP, out=t0)
        np.arccos(t0, out=a1)
        np.clip(s.c2[:L], -ACOS_CLAMP, ACOS_CLAMP, out=t0)
        np.arccos(t0, out=a2)
        if cam.h1_mode == "clamped":
            np.subtract(a1, cam.fov, out=t0)
            np.maximum(t0, 0.0, out=t0)
        else:
            np.subtract(cam.fov, a1, out=t0)
        np.multiply(t0, t0, out=t0)
        t0 *= -1.0 / (2.0 * cam.sigma1**2)
        np.multiply(a2, a2, out=t1)
        t1 *= -1.0 / (2.0 * cam.sigma2**2)
        t0 += t1
        np.exp(t0, out=out)
        bad = s.bad[:L]
        if bad.any():
            out[bad] = 0.0

    def _perf_chunk(self, sl: slice, s: _Scratch, p: np.ndarray, frame: np.ndarray,
                    zc: float, out: np.ndarray) -> None:
        L = self._offsets(sl, s, p[0], p[1], zc)
        self._cosines(sl, s, L, frame[0], frame[1], frame[2])
        self._perf_from_cosines(s, L, out)

    def _gradient_chunk(self, sl: slice, s: _Scratch, L: int, zc: float) -> None:
        """perf and its state gradient for per-cell drone parameters.

        Expects s.px, s.py and the frame arrays (ex .. dvz) to be filled for
        the cells of ``sl``; writes s.p, s.gx, s.gy, s.gh, s.gv.
        """
        b = self.buffers
        cam = self.camera
        k1 = 1.0 / (2.0 * cam.sigma1**2)
        k2 = 1.0 / (2.0 * cam.sigma2**2)
        self._offsets(sl, s, s.px[:L], s.py[:L], zc)
        dx, dy, dz, ir, t0 = s.dx[:L], s.dy[:L], s.dz[:L], s.ir[:L], s.t0[:L]
        ex, ey, ez = s.ex[:L], s.ey[:L], s.ez[:L]
        self._cosines(sl, s, L, ex, ey, ez)
        p = s.p[:L]
        self._perf_from_cosines(s, L, p)

        c1, c2, a1, a2, t1, t2 = s.c1[:L], s.c2[:L], s.a1[:L], s.a2[:L], s.t1[:L], s.t2[:L]
        gx, gy, gh, gv = s.gx[:L], s.gy[:L], s.gh[:L], s.gv[:L]

        # FOV term: dh1 = A1 * dc1
        np.clip(c1, -GUARD_BAND, GUARD_BAND, out=t1)
        np.multiply(t1, t1, out=t1)
        np.subtract(1.0, t1, out=t1)
        np.sqrt(t1, out=t1)
        if cam.h1_mode == "clamped":
            np.subtract(a1, cam.fov, out=t0)
            np.maximum(t0, 0.0, out=t0)
            t0 *= -2.0
        else:
            np.subtract(cam.fov, a1, out=t0)
            t0 *= 2.0
        np.divide(t0, t1, out=t0)
        # P1 = -perf * k1 * A1
        np.multiply(t0, p, out=t0)
        t0 *= -k1

        # angle term: dh2 = -2 * a2/sin(a2) * dc2, sin floored on the far side
        np.sin(a2, out=t1)
        np.less(c2, 0.0, out=s.mask[:L])
        np.maximum(t1, GUARD_SIN, out=t2)
        np.copyto(t1, t2, where=s.mask[:L])
        np.divide(a2, t1, out=t1)
        # P2 = -perf * k2 * (-2 ratio)
        np.multiply(t1, p, out=t1)
        t1 *= 2.0 * k2

        # dc1/dx = (c1*ux - ex)/r ; dc2/dx = (vx + c2*ux)/r
        np.multiply(c1, dx, out=gx)
        gx -= ex
        gx *= ir
        gx *= t0
        np.multiply(c2, dx, out=t2)
        t2 += b.vx[sl]
        t2 *= ir
        t2 *= t1
        gx += t2

        np.multiply(c1, dy, out=gy)
        gy -= ey
        gy *= ir
        gy *= t0
        np.multiply(c2, dy, out=t2)
        t2 += b.vy[sl]
        t2 *= ir
        t2 *= t1
        gy += t2

        np.multiply(s.dhx[:L], dx, out=gh)
        np.multiply(s.dhy[:L], dy, out=t2)
        gh += t2
        gh *= t0

        np.multiply(s.dvx[:L], dx, out=gv)
        np.multiply(s.dvy[:L], dy, out=t2)
        gv += t2
        np.multiply(s.dvz[:L], dz, out=t2)
        gv += t2
        gv *= t0

        bad = s.bad[:L]
        if bad.any():
            for a in (gx, gy, gh, gv):
                a[bad] = 0.0

    def _gather_params(self, s: _Scratch, L: int, p: np.ndarray, frames: np.ndarray,
                       owner: np.ndarray) -> None:
        np.take(p[:, 0], owner, out=s.px[:L])
        np.take(p[:, 1], owner, out=s.py[:L])
        for k, name in enumerate(("ex", "ey", "ez", "dhx", "dhy", "dvx", "dvy", "dvz")):
            np.take(frames[:, k], owner, out=getattr(s, name)[:L])

    # -- public batch operations -------------------------------------------------

    def perf(self, state: DroneState, out: np.ndarray | None = None) -> np.ndarray:
        """perf of one drone against every cell."""
        p, zc = state_matrix([state])
        frame = _drone_frames(p)[0]
        out = np.empty(self.m) if out is None else out

        def work(run, s):
            for sl in run:
                self._perf_chunk(sl, s, p[0], frame, zc, out[sl])

        self._map(work)
        return out

    def perf_matrix(self, states: Sequence[DroneState]) -> np.ndarray:
        """Materialized ``(n, m)`` perf matrix."""
        out = np.empty((len(states), self.m))
        for i, st in enumerate(states):
            self.perf(st, out=out[i])
        return out

    def max_argmax(self, states: Sequence[DroneState]) -> tuple[np.ndarray, np.ndarray]:
        """Fused per-cell max perf and the lowest-index drone attaining it.

        Results land in ``buffers.hmax`` and ``buffers.owner`` and are returned
        as views of those arrays.
        """
        p, zc = state_matrix(states)
        frames = _drone_frames(p)
        b = self.buffers

        def work(run, s):
            for sl in run:
                L = sl.stop - sl.start
                best, own, cur, mask = b.hmax[sl], b.owner[sl], s.gx[:L], s.mask[:L]
                self._perf_chunk(sl, s, p[0], frames[0], zc, best)
                own.fill(0)
                for i in range(1, len(p)):
                    self._perf_chunk(sl, s, p[i], frames[i], zc, cur)
                    np.greater(cur, best, out=mask)
                    np.copyto(best, cur, where=mask)
                    np.copyto(own, i, where=mask)

        self._map(work)
        return b.hmax, b.owner

    def gradient(self, state: DroneState) -> np.ndarray:
        """``(m, 4)`` gradient of perf for a single drone over all cells."""
        p, zc = state_matrix([state])
        frames = _drone_frames(p)
        out = np.empty((self.m, 4))
        zeros = np.zeros(self.chunk, dtype=np.intp)

        def work(run, s):
            for sl in run:
                L = sl.stop - sl.start
                self._gather_params(s, L, p, frames, zeros[:L])
                self._gradient_chunk(sl, s, L, zc)
                out[sl, 0] = s.gx[:L]
                out[sl, 1] = s.gy[:L]
                out[sl, 2] = s.gh[:L]
                out[sl, 3] = s.gv[:L]

        self._map(work)
        return out

    def accumulate(self, states: Sequence[DroneState], psi: np.ndarray,
                   owner: np.ndarray | None = None, weight_by_perf: bool = False) -> np.ndarray:
        """Per-drone sums over owned cells, shape ``(n, 6)``.

        Columns are ``sum(h psi)``, ``sum(dh/dp psi)`` (four entries) and
        ``sum(h^2 psi)``, with ``h`` and ``dh/dp`` evaluated for the owning
        drone. With ``weight_by_perf`` the gradient columns carry an extra
        factor ``h``. ``owner`` defaults to the partition from the last
        :meth:`max_argmax` call.
        """
        p, zc = state_matrix(states)
        n = len(p)
        frames = _drone_frames(p)
        owner = self.buffers.owner if owner is None else np.asarray(owner, dtype=np.intp)
        psi = np.ascontiguousarray(psi, dtype=float)
        if psi.shape != (self.m,) or owner.shape != (self.m,):
            raise ValueError("psi and owner must have one entry per cell")
        if self.deterministic:
            shape = (self.n_blocks, n, N_ACC)
            if self._partials is None or self._partials.shape != shape:
                self._partials = np.zeros(shape)
            partials = self._partials
        totals = [np.zeros((n, N_ACC)) for _ in self._runs]

        def work(run, s, k):
            for sl in run:
                L = sl.stop - sl.start
                own = owner[sl]
                self._gather_params(s, L, p, frames, own)
                self._gradient_chunk(sl, s, L, zc)
                ps = psi[sl]
                hp = s.t0[:L]
                np.multiply(s.p[:L], ps, out=hp)
                cols = [hp]
                gw = s.t1[:L]
                if weight_by_perf:
                    np.multiply(hp, s.p[:L], out=gw)
                else:
                    np.copyto(gw, ps)
                for name in ("gx", "gy", "gh", "gv"):
                    g = getattr(s, name)[:L]
                    g *= gw
                    cols.append(g)
                h2p = s.t2[:L]
                np.multiply(hp, s.p[:L], out=h2p)
                cols.append(h2p)
                if self.deterministic:
                    nb = -(-L // BLOCK)
                    key = s.key[:L]
                    np.multiply(s.local_block[:L], n, out=key)
                    key += own
                    b0 = sl.start // BLOCK
                    for c, col in enumerate(cols):
                        partials[b0:b0 + nb, :, c] = np.bincount(
                            key, weights=col, minlength=nb * n).reshape(nb, n)
                else:
                    for c, col in enumerate(cols):
                        totals[k][:, c] += np.bincount(own, weights=col, minlength=n)

        jobs = [(run, s, k) for k, (run, s) in enumerate(zip(self._runs, self._scratch))]
        if self._pool is None:
            for job in jobs:
                work(*job)
        else:
            list(self._pool.map(lambda job: work(*job), jobs))

        if self.deterministic:
            return np.add.accumulate(partials, axis=0)[-1].copy()
        out = totals[0]
        for t in totals[1:]:
            out = out + t
        return out

    def visible(self, states: Sequence[DroneState], fov: float, threshold: float,
                out: np.ndarray | None = None, tol: float = 1e-12) -> np.ndarray:
        """Cells inside some drone's FOV cone and within ``threshold`` of their view angle.

        Both angle tests are inclusive, with ``tol`` radians of slack so that
        constructed boundary cases are not decided by rounding.
        """
        p, zc = state_matrix(states)
        frames = _drone_frames(p)
        out = np.zeros(self.m, dtype=bool) if out is None else out
        cos_fov = math.cos(fov + tol)
        cos_thr = math.cos(threshold + tol)

        def work(run, s):
            for sl in run:
                L = sl.stop - sl.start
                hit, mask = out[sl], s.mask[:L]
                for i in range(len(p)):
                    self._offsets(sl, s, p[i, 0], p[i, 1], zc)
                    self._cosines(sl, s, L, frames[i, 0], frames[i, 1], frames[i, 2])
                    np.greater_equal(s.c1[:L], cos_fov, out=mask)
                    np.logical_and(mask, s.c2[:L] >= cos_thr, out=mask)
                    np.logical_and(mask, ~s.bad[:L], out=mask)
                    np.logical_or(hit, mask, out=hit)

        self._map(work)
        return out


# -- benchmark harness ------------------------------------------------------------

@dataclass
class BenchRow:
    m: int
    workers: int
    mean_ms: float
    p95_ms: float
    cells_per_sec: float


def random_cells(m: int, seed: int = 0) -> CellArrays:
    """Uniform random cells over the desk field, for timing runs."""
    rng = np.random.default_rng(seed)
    return CellArrays(
        x=rng.uniform(-1.0, 1.0, m),
        y=rng.uniform(-1.0, 1.0, m),
        z=rng.uniform(0.0, 0.5, m),
        theta_h=rng.uniform(-math.pi, math.pi, m),
        theta_v=rng.uniform(math.pi / 6, math.pi / 2, m),
    )


def bench_states() -> list[DroneState]:
    return [
        DroneState(1.0, 0.2, 0.0, math.pi / 2),
        DroneState(-1.0, -0.2, 0.0, math.pi / 2),
        DroneState(0.0, 0.5, 0.0, math.pi / 2),
    ]


def time_step(engine: Engine, states: Sequence[DroneState], psi: np.ndarray,
              repeats: int = 5, warmup: int = 2) -> list[float]:
    """Wall-clock seconds of partition plus accumulation, warm-up runs excluded."""
    times = []
    for k in range(warmup + repeats):
        t0 = time.perf_counter()
        engine.max_argmax(states)
        engine.accumulate(states, psi)
        if k >= warmup:
            times.append(time.perf_counter() - t0)
    return times


def _p95(xs: list[float]) -> float:
    xs = sorted(xs)
    return xs[min(len(xs) - 1, int(math.ceil(0.95 * len(xs))) - 1)]


def bench(sizes: Iterable[int] = (10**4, 10**5, 10**6), workers: Iterable[int] | None = None,
          repeats: int = 5, warmup: int = 2, camera: CameraParams | None = None,
          seed: int = 0) -> list[BenchRow]:
    camera = camera or CameraParams()
    if workers is None:
        workers = sorted({1, 2, 4, os.cpu_count() or 1})
    states = bench_states()
    rows = []
    for m in sizes:
        cells = random_cells(m, seed)
        psi = np.ones(m)
        for w in workers:
            with Engine(cells, camera, workers=w) as eng:
                ts = time_step(eng, states, psi, repeats=repeats, warmup=warmup)
            mean = statistics.fmean(ts)
            rows.append(BenchRow(m, w, 1e3 * mean, 1e3 * _p95(ts), m / mean))
    return rows


def machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
