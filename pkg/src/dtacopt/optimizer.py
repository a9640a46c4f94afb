"""Distributed push-sum gradient-tracking engines, with and without delays.

Three engines share one protocol semantics:

* DtacEngine: the per-node delayed protocol.  Each round every node mixes
  whatever packets arrive (a packet carrying a round-m state over a delay-t
  link is used in the round-(m+t) update), subtracts its gradient-tracker
  step from the value channel, re-derives the ratio estimate z = x / y, and
  broadcasts its new (x, y, g) on every out-link.  Messages not yet arrived
  contribute nothing, so buffers start empty.
* AugmentedEngine: the matrix-form oracle.  The (live; in-flight) stacked
  state is advanced by the augmented mixing matrix; the gradient step and
  the tracker increment act on the live block, which is exactly what the
  per-node protocol does.  Run in lockstep from the same initialization the
  two produce identical live states up to rounding.
* AddOptEngine: the delay-free baseline; with all delays zero the delayed
  engines reduce to it exactly (the mixing goes through identical array
  operations, so the reduction is bit-for-bit).

All engines pack the per-node state into one (n, 2p+1) block whose columns
are [x | y | g]; column stochasticity then keeps two block sums conserved
to machine precision at every round, live plus in-flight:

    sum(y-hat) == n                    (weight mass)
    sum(g-hat) == sum_i grad_i(z_i)    (tracker mass = current gradient mass)

Both are recorded per iteration; the tracker residual is normalized by the
current gradient scale so it stays meaningful on diverging runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import GlobalProblem
from .delays import (
    AugmentedMatrix,
    DelayMap,
    DelaySlices,
    assign_delays,
    build_augmented_matrix,
    build_delay_slices,
)
from .graphs import (
    DirectedGraph,
    SwitchingSchedule,
    WeightMatrix,
    build_column_stochastic_weights,
)


class EngineFault(RuntimeError):
    """Protocol violation (e.g. a nonpositive push-sum weight)."""


@dataclass
class AgentState:
    """Per-node quadruple plus the cached previous gradient."""

    x: np.ndarray
    y: float
    z: np.ndarray
    g: np.ndarray
    grad_prev: np.ndarray


def init_states(problem: GlobalProblem, n: int, seed: int) -> list[AgentState]:
    """Random x, unit weight, z = x / y, tracker seeded with the local gradient."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, problem.dim))
    states = []
    for i in range(n):
        z = X[i] / 1.0
        g = problem.locals[i].grad(z)
        states.append(AgentState(x=X[i].copy(), y=1.0, z=z, g=g, grad_prev=g.copy()))
    return states


def _pack(states: list[AgentState], p: int) -> np.ndarray:
    """Stack agent states into the (n, 2p+1) block [x | y | g]."""
    n = len(states)
    W = np.empty((n, 2 * p + 1))
    for i, st in enumerate(states):
        W[i, :p] = st.x
        W[i, p] = st.y
        W[i, p + 1 :] = st.g
    return W


class InTransitBuffer:
    """Round-indexed accumulators for packed (x | y | g) packets in flight.

    A deposit made for use at round u lands in slot u mod (tau_max + 1);
    delays never exceed tau_max, so pending rounds occupy distinct slots.
    take(k) drains and zeroes the slot for round k.
    """

    def __init__(self, tau_max: int, n: int, width: int) -> None:
        self.depth = tau_max + 1
        self.q = np.zeros((self.depth, n, width))

    def put(self, use_round: int, packet: np.ndarray) -> None:
        self.q[use_round % self.depth] += packet

    def take(self, use_round: int) -> np.ndarray:
        s = use_round % self.depth
        out = self.q[s].copy()
        self.q[s] = 0.0
        return out

    def column_sum(self, col: slice | int) -> np.ndarray | float:
        return self.q[:, :, col].sum(axis=(0, 1))


def _nonzero_slices(slices: DelaySlices) -> list[tuple[int, np.ndarray]]:
    return [
        (r, slices.slices[r])
        for r in range(slices.tau_max + 1)
        if np.any(slices.slices[r])
    ]


class _EngineBase:
    """Shared update arithmetic on the packed (n, 2p+1) live block."""

    problem: GlobalProblem
    alpha: float
    n: int
    p: int

    def _update_live(self, mixed: np.ndarray) -> np.ndarray:
        """Apply the gradient step and tracker increment to a mixed block."""
        p = self.p
        G_prev = self.W[:, p + 1 :]
        x_new = mixed[:, :p] - self.alpha * G_prev
        y_new = mixed[:, p]
        if np.any(y_new <= 0.0):
            raise EngineFault("nonpositive push-sum weight: protocol violated")
        z_new = x_new / y_new[:, None]
        grads = self.problem.grads(z_new)
        g_new = (mixed[:, p + 1 :] + grads) - self.grad_prev
        W_new = np.empty_like(mixed)
        W_new[:, :p] = x_new
        W_new[:, p] = y_new
        W_new[:, p + 1 :] = g_new
        self.Z = z_new
        self.grad_prev = grads
        return W_new

    @property
    def live_x(self) -> np.ndarray:
        return self.W[:, : self.p]

    @property
    def live_y(self) -> np.ndarray:
        return self.W[:, self.p]

    @property
    def live_g(self) -> np.ndarray:
        return self.W[:, self.p + 1 :]

    @property
    def live_z(self) -> np.ndarray:
        return self.Z


class DtacEngine(_EngineBase):
    """Per-node delayed gradient tracking (the deployable protocol)."""

    def __init__(
        self,
        problem: GlobalProblem,
        states: list[AgentState],
        C: WeightMatrix,
        delays: DelayMap,
        alpha: float,
    ) -> None:
        self.problem = problem
        self.alpha = alpha
        self.n = len(states)
        self.p = problem.dim
        self.tau_max = delays.tau_max
        self.W = _pack(states, self.p)
        self.Z = self.W[:, : self.p] / self.W[:, self.p, None]
        self.grad_prev = np.stack([st.grad_prev for st in states])
        self.buffers = InTransitBuffer(self.tau_max, self.n, 2 * self.p + 1)
        self.k = 0
        self.set_topology(C, delays)
        self._measure()

    def set_topology(self, C: WeightMatrix, delays: DelayMap) -> None:
        """Install mixing weights and delays for subsequent sends; packets
        already in flight keep their original delivery schedule."""
        if delays.tau_max != self.tau_max:
            raise ValueError("cannot change tau_max mid-run")
        self._slices = _nonzero_slices(build_delay_slices(C, delays))

    def _broadcast(self) -> None:
        for r, Cr in self._slices:
            self.buffers.put(self.k + r, Cr @ self.W)

    def step(self) -> None:
        # the round-k state is shared under the round-k topology, so sends
        # happen at the start of the round (mirrors the mixing-matrix form)
        self._broadcast()
        arrivals = self.buffers.take(self.k)
        self.W = self._update_live(arrivals)
        self.k += 1
        self._measure()

    def _measure(self) -> None:
        p = self.p
        self.mass = float(self.W[:, p].sum()) + float(self.buffers.column_sum(p))
        self.tracker_mass = self.W[:, p + 1 :].sum(axis=0) + self.buffers.column_sum(
            slice(p + 1, None)
        )


class AugmentedEngine(_EngineBase):
    """Matrix-form oracle on the stacked (live; in-flight) state."""

    def __init__(
        self,
        problem: GlobalProblem,
        states: list[AgentState],
        aug: AugmentedMatrix,
        alpha: float,
    ) -> None:
        self.problem = problem
        self.alpha = alpha
        self.n = aug.n
        self.p = problem.dim
        self.tau_max = aug.tau_max
        self.aug = aug
        self.W_hat = np.zeros((aug.dim, 2 * self.p + 1))
        self.W_hat[: self.n] = _pack(states, self.p)
        self.Z = self.W_hat[: self.n, : self.p] / self.W_hat[: self.n, self.p, None]
        self.grad_prev = np.stack([st.grad_prev for st in states])
        self.k = 0
        self._measure()

    def set_topology(self, aug: AugmentedMatrix) -> None:
        if aug.tau_max != self.tau_max or aug.n != self.n:
            raise ValueError("augmented matrix shape cannot change mid-run")
        self.aug = aug

    @property
    def W(self) -> np.ndarray:  # live view used by the shared update
        return self.W_hat[: self.n]

    def step(self) -> None:
        mixed = self.aug.entries @ self.W_hat
        live = self._update_live(mixed[: self.n])
        mixed[: self.n] = live
        self.W_hat = mixed
        self.k += 1
        self._measure()

    def _measure(self) -> None:
        p = self.p
        self.mass = float(self.W_hat[:, p].sum())
        self.tracker_mass = self.W_hat[:, p + 1 :].sum(axis=0)

    @property
    def x_hat(self) -> np.ndarray:
        return self.W_hat[:, : self.p]

    @property
    def y_hat(self) -> np.ndarray:
        return self.W_hat[:, self.p]

    @property
    def g_hat(self) -> np.ndarray:
        return self.W_hat[:, self.p + 1 :]


class AddOptEngine(_EngineBase):
    """Delay-free push-sum gradient tracking (the baseline)."""

    def __init__(
        self,
        problem: GlobalProblem,
        states: list[AgentState],
        C: WeightMatrix,
        alpha: float,
    ) -> None:
        self.problem = problem
        self.alpha = alpha
        self.n = len(states)
        self.p = problem.dim
        self.tau_max = 0
        self.W = _pack(states, self.p)
        self.Z = self.W[:, : self.p] / self.W[:, self.p, None]
        self.grad_prev = np.stack([st.grad_prev for st in states])
        self.k = 0
        self.set_topology(C)
        self._measure()

    def set_topology(self, C: WeightMatrix) -> None:
        self.C = C.entries

    def step(self) -> None:
        mixed = self.C @ self.W
        self.W = self._update_live(mixed)
        self.k += 1
        self._measure()

    def _measure(self) -> None:
        p = self.p
        self.mass = float(self.W[:, p].sum())
        self.tracker_mass = self.W[:, p + 1 :].sum(axis=0)


@dataclass(frozen=True)
class TraceRecord:
    """One metric row; all finite unless the run diverged."""

    iter: int
    optimality_gap: float
    mse: float
    consensus_error: float
    grad_tracker_sum_error: float
    mass_error: float

    def as_csv_row(self) -> str:
        return ",".join(
            repr(v)
            for v in (
                self.iter,
                self.optimality_gap,
                self.mse,
                self.consensus_error,
                self.grad_tracker_sum_error,
                self.mass_error,
            )
        )


TRACE_HEADER = "iter,optimality_gap,mse,consensus_error,grad_tracker_sum_error,mass_error"


@dataclass
class RunConfig:
    """Knobs of a single run."""

    alpha: float
    max_iters: int = 20000
    tol: float = 1e-10
    record_every: int = 1
    engine: str = "per-node"
    init_seed: int = 3
    divergence_mse: float = 1e12

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")


@dataclass(frozen=True)
class StaticSetting:
    """Fixed topology and delay map for a whole run."""

    graph: DirectedGraph
    weights: WeightMatrix
    delays: DelayMap


@dataclass(frozen=True)
class SwitchingPlan:
    """Fresh topology (and fresh delays at the same bound) every period."""

    schedule: SwitchingSchedule
    tau_max: int
    delay_mode: str
    delay_seed: int

    def realize(self, epoch: int) -> StaticSetting:
        g = self.schedule.graph_at(epoch)
        C = build_column_stochastic_weights(
            g, require_strong=self.schedule.require_connected
        )
        d = assign_delays(
            g,
            self.tau_max,
            self.delay_mode,
            np.random.SeedSequence([self.delay_seed, epoch]),
        )
        return StaticSetting(graph=g, weights=C, delays=d)

    @property
    def period(self) -> int:
        return self.schedule.period


@dataclass
class RunResult:
    status: str  # CONVERGED | DIVERGED | MAXITER
    iters: int
    final_gap: float
    final_mse: float
    records: list[TraceRecord]

    def status_line(self) -> str:
        return f"STATUS {self.status} iters={self.iters} final_gap={self.final_gap!r}"


ENGINES = ("per-node", "augmented-oracle", "addopt-nodelay")


def _make_engine(
    name: str,
    problem: GlobalProblem,
    states: list[AgentState],
    setting: StaticSetting,
    alpha: float,
):
    if name == "per-node":
        return DtacEngine(problem, states, setting.weights, setting.delays, alpha)
    if name == "augmented-oracle":
        slices = build_delay_slices(setting.weights, setting.delays)
        aug = build_augmented_matrix(slices, setting.weights.n)
        return AugmentedEngine(problem, states, aug, alpha)
    if name == "addopt-nodelay":
        return AddOptEngine(problem, states, setting.weights, alpha)
    raise ValueError(f"unknown engine {name!r}")


def _metrics(engine, problem: GlobalProblem) -> TraceRecord:
    Z = engine.live_z
    z_bar = Z.mean(axis=0)
    gap = problem.gap(z_bar)
    diffs = Z - problem.z_star
    mse = float(np.mean(np.sum(diffs * diffs, axis=1)))
    consensus = float(np.max(np.linalg.norm(Z - z_bar, axis=1)))
    grad_now = engine.grad_prev.sum(axis=0)
    tracker_err = float(
        np.linalg.norm(engine.tracker_mass - grad_now)
        / (1.0 + np.linalg.norm(grad_now))
    )
    mass_err = abs(engine.mass - engine.n)
    return TraceRecord(
        iter=engine.k,
        optimality_gap=gap,
        mse=mse,
        consensus_error=consensus,
        grad_tracker_sum_error=tracker_err,
        mass_error=mass_err,
    )


def run(
    config: RunConfig,
    setting: StaticSetting | SwitchingPlan,
    problem: GlobalProblem,
) -> RunResult:
    """Drive the selected engine to convergence, divergence, or max_iters.

    On a SwitchingPlan the topology (and a fresh delay map at the same
    bound) is installed every `period` iterations; packets already in
    flight are still delivered on their original schedule.
    """
    switching = isinstance(setting, SwitchingPlan)
    current = setting.realize(0) if switching else setting
    n = current.weights.n
    states = init_states(problem, n, config.init_seed)
    engine = _make_engine(config.engine, problem, states, current, config.alpha)

    records = [_metrics(engine, problem)]
    status = "MAXITER"
    last = records[-1]
    for k in range(config.max_iters):
        if switching and k > 0 and k % setting.period == 0:
            current = setting.realize(k // setting.period)
            if config.engine == "augmented-oracle":
                slices = build_delay_slices(current.weights, current.delays)
                engine.set_topology(build_augmented_matrix(slices, n))
            elif config.engine == "per-node":
                engine.set_topology(current.weights, current.delays)
            else:
                engine.set_topology(current.weights)
        engine.step()
        last = _metrics(engine, problem)
        if engine.k % config.record_every == 0:
            records.append(last)
        if not np.isfinite(last.mse) or last.mse > config.divergence_mse:
            status = "DIVERGED"
            break
        if last.optimality_gap < config.tol:
            status = "CONVERGED"
            break
    if records[-1].iter != last.iter:
        records.append(last)
    return RunResult(
        status=status,
        iters=engine.k,
        final_gap=last.optimality_gap,
        final_mse=last.mse,
        records=records,
    )


def step_dtac(engine: DtacEngine) -> DtacEngine:
    """Advance the per-node protocol one synchronous round."""
    engine.step()
    return engine


def step_augmented_oracle(engine: AugmentedEngine) -> AugmentedEngine:
    """Advance the matrix-form oracle one round."""
    engine.step()
    return engine


def step_addopt(engine: AddOptEngine) -> AddOptEngine:
    """Advance the delay-free baseline one round."""
    engine.step()
    return engine


class ContractionMonitor:
    """Accumulates the error-triple recursion t_k <= G t_{k-1} + H_{k-1} s_{k-1}
    along an augmented-engine run and logs the worst per-row tightness.

    Call observe() once per engine step; `worst_ratios` holds, per row, the
    largest observed t_k / rhs_k.  The G used here should carry the measured
    operator-norm contraction (sigma_norm2 of the spectral report): the
    one-step inequality needs a norm bound, not the asymptotic rate.
    """

    def __init__(self, G_builder, limit: np.ndarray, z_star: np.ndarray) -> None:
        self.G_builder = G_builder  # k -> ContractionMatrices
        self.limit = limit
        self.z_star = z_star
        self.worst_ratios = np.zeros(3)
        self._prev: tuple[np.ndarray, np.ndarray] | None = None
        self.rows: list[np.ndarray] = []

    def observe(self, engine: AugmentedEngine) -> None:
        t, s = tracking_triple(engine, self.limit, self.z_star)
        if self._prev is not None:
            t_prev, s_prev = self._prev
            GH = self.G_builder(engine.k)
            rhs = GH.G @ t_prev + GH.H_k @ s_prev
            ratios = t / np.maximum(rhs, 1e-300)
            self.worst_ratios = np.maximum(self.worst_ratios, ratios)
            self.rows.append(ratios)
        self._prev = (t, s)


def tracking_triple(
    engine: AugmentedEngine, limit: np.ndarray, z_star: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Measured error triple t_k (and driver s_k) for the comparison-matrix
    recursion t_k <= G t_{k-1} + H_{k-1} s_{k-1}:

    t = (||x_hat - limit @ x_hat||, ||stack(x_bar - z*)||, ||g_hat - limit @ g_hat||)
    s = (||x_hat||, 0, 0)

    where x_bar is the global mass average (valid because weight mass is n).
    """
    x_hat, g_hat = engine.x_hat, engine.g_hat
    n = engine.n
    reps = engine.tau_max + 1
    t1 = float(np.linalg.norm(x_hat - limit @ x_hat))
    x_bar = x_hat.sum(axis=0) / n
    t2 = float(np.sqrt(n * reps) * np.linalg.norm(x_bar - z_star))
    t3 = float(np.linalg.norm(g_hat - limit @ g_hat))
    s1 = float(np.linalg.norm(x_hat))
    return np.array([t1, t2, t3]), np.array([s1, 0.0, 0.0])
