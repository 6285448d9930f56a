"""Decentralized optimization loop: quantized gradient tracking and the
retraction-based tracking baseline.

Both algorithms keep, per agent, the decision variable x_i, a tracker s_i
that mixes over the network and accumulates gradient differences, and the
previous (quantized or exact) Riemannian gradient. One epoch is:

    x_i <- sum_j (W^t)_ij x_j - alpha * s_i          (quantized variant)
    g_i <- quantized Riemannian gradient at new x_i
    s_i <- sum_j (W^t)_ij s_j + g_i - g_i_prev

The retraction baseline instead moves along the tangent projection of the
consensus-plus-descent direction and retracts back onto the manifold, with
exact Riemannian gradients in the tracker.

All agents start from one shared on-manifold point, so the initial consensus
error is exactly zero, and the tracker is seeded with the first gradient so
that the tracker mean equals the gradient mean from epoch zero onward.

Per-agent work inside an epoch is order-independent (dither streams are
keyed by agent and epoch), so the optional thread-parallel path is
bit-identical to sequential execution; the two mixing applications act as
barriers.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metrics import evaluate
from .network import MixingMatrix, Topology, build_metropolis, mix
from .problems import ProblemInstance, estimate_smoothness, local_euclidean_grad
from .quantizers import (
    MODE_DITHERED,
    MODE_LANDING,
    QuantizerSpec,
    _sigmoid,
    quantize_dithered,
    quantize_landing,
)
from .stiefel import SmoothnessConstants, penalty_grad, random_stiefel, retract, tangent_project
from .streams import STREAM_INIT, dither_key, dither_rng, stream_rng

ALGO_QRGT = "qrgt"
ALGO_RGT = "rgt"

TERMINATION_MAX_EPOCHS = "MaxEpochs"
TERMINATION_DS = "DsTolerance"
TERMINATION_DIVERGED = "Diverged"

__all__ = [
    "ALGO_QRGT",
    "ALGO_RGT",
    "TERMINATION_MAX_EPOCHS",
    "TERMINATION_DS",
    "TERMINATION_DIVERGED",
    "AlgoConfig",
    "AgentState",
    "TraceRow",
    "RunDiagnostics",
    "RunTrace",
    "StepSizeWarning",
    "init_states",
    "qrgt_epoch",
    "rgt_epoch",
    "step_size_bounds",
    "safety_step_bound",
    "run",
]


class StepSizeWarning(UserWarning):
    """Configured step size exceeds the theoretical safety bound."""


@dataclass
class AlgoConfig:
    """Knobs of one decentralized run."""

    alpha: float
    t: int = 1
    bits: int = 8
    max_epochs: int = 1000
    ds_tolerance: float = 0.0
    seed: int = 0
    algorithm: str = ALGO_QRGT
    retraction: str = "qr"
    enforce_safety: bool = False
    dither: bool = True
    parallel: bool = False

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.algorithm not in (ALGO_QRGT, ALGO_RGT):
            raise ValueError(f"algorithm must be 'qrgt' or 'rgt', got {self.algorithm!r}")
        if self.retraction not in ("qr", "polar"):
            raise ValueError(f"retraction must be 'qr' or 'polar', got {self.retraction!r}")
        if self.ds_tolerance < 0:
            raise ValueError("ds_tolerance must be nonnegative")
        QuantizerSpec(bits=self.bits)  # range check


@dataclass
class AgentState:
    """Decision variable, tracker, and last gradient of one agent."""

    x: np.ndarray
    s: np.ndarray
    gamma_prev: np.ndarray


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    consensus_error: float
    grad_norm: float
    f_gap: float
    ds: float
    dist_mean: float
    wall_ms: float
    wire_bits_cum: int


@dataclass
class RunDiagnostics:
    """Per-epoch internals kept out of the CSV: used by invariant tests.

    Entry 0 describes the initial state, so each list holds one more entry
    than the trace has rows. ``tracker_residual`` is
    ||mean(s) - mean(g)|| / max(1, ||mean(g)||), ``landing_ratio`` the
    largest per-agent ratio of gradient scale to penalty-gradient scale (nan
    while every agent sits on the manifold), and ``max_dist`` (only when
    requested) the largest per-agent distance to the manifold.
    """

    tracker_residual: list[float] = field(default_factory=list)
    x_consensus_sq: list[float] = field(default_factory=list)
    s_consensus_sq: list[float] = field(default_factory=list)
    gamma_max: list[float] = field(default_factory=list)
    landing_ratio: list[float] = field(default_factory=list)
    max_dist: list[float] = field(default_factory=list)


@dataclass
class RunTrace:
    """One row per completed epoch plus the reason the loop stopped."""

    rows: list[TraceRow]
    termination: str
    sigma2: float
    diagnostics: RunDiagnostics

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]


def step_size_bounds(consts: SmoothnessConstants, sigma2: float, n: int) -> dict[str, float]:
    """All step-size bounds by name.

    ``descent``, ``consensus``, ``rate`` and ``consensus_rate`` jointly
    guarantee the O(1/K) rate; ``stability`` is the looser linear-system
    bound, reported for reference but never used as the guard.
    """
    if not (0.0 <= sigma2 < 1.0):
        raise ValueError(f"sigma2 must be in [0, 1), got {sigma2}")
    if n < 1:
        raise ValueError("n must be positive")
    lm = consts.L_m
    gap = 1.0 - sigma2
    return {
        "descent": 1.0 / (8.0 * lm),
        "consensus": gap**2 / (16.0 * lm),
        "stability": gap**2 / (4.0 * lm),
        "rate": np.sqrt(n * gap**3 / (2.0 * lm**2 + 1.0)) / (16.0 * lm),
        "consensus_rate": (n * gap**3) ** 0.25 / (16.0 * lm),
    }


def safety_step_bound(consts: SmoothnessConstants, sigma2: float, n: int) -> float:
    """Tightest step size under which every convergence guarantee holds."""
    bounds = step_size_bounds(consts, sigma2, n)
    return min(bounds["descent"], bounds["consensus"], bounds["rate"], bounds["consensus_rate"])


class _Engine:
    """Stacked-array implementation shared by the epoch functions and run()."""

    def __init__(self, inst: ProblemInstance, mixing: MixingMatrix | None, cfg: AlgoConfig):
        self.inst = inst
        self.mixing = mixing
        self.cfg = cfg
        self.n = inst.n_agents
        if all(g is not None for g in inst.grams):
            self.gram_stack = np.stack(inst.grams)
        else:
            self.gram_stack = None
        mode = MODE_DITHERED if cfg.dither else MODE_LANDING
        self.qspec = QuantizerSpec(bits=cfg.bits, mode=mode, dither_seed=cfg.seed)
        self.pool = ThreadPoolExecutor(max_workers=min(self.n, 8)) if cfg.parallel else None
        # one reusable generator per agent; the epoch is written into the
        # Philox counter before each use, reproducing dither_rng() exactly
        self._bitgens = [
            np.random.Philox(key=dither_key(cfg.seed, i)) for i in range(self.n)
        ]
        self._gens = [np.random.Generator(bg) for bg in self._bitgens]

    def _agent_rng(self, agent: int, epoch: int) -> np.random.Generator:
        bg = self._bitgens[agent]
        state = bg.state
        state["state"]["counter"][:] = (0, 0, 0, epoch)
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bg.state = state
        return self._gens[agent]

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()

    def local_grads(self, X: np.ndarray) -> np.ndarray:
        if self.gram_stack is not None:
            return -np.matmul(self.gram_stack, X)
        return np.stack(
            [local_euclidean_grad(self.inst, i, X[i]) for i in range(self.n)]
        )

    def _quantize_one(self, args):
        i, rg, pg, epoch = args
        if self.cfg.dither:
            rng = dither_rng(self.cfg.seed, i, epoch)
            return quantize_dithered(rg, pg, self.qspec, rng)
        return quantize_landing(rg, pg, self.qspec)

    def quantize_all(self, RG: np.ndarray, PG: np.ndarray, epoch: int):
        """Quantize every agent's gradient; returns (values, scales, ratios).

        The sequential path runs the per-agent quantizer arithmetic stacked
        across agents (same elementwise operations in the same order, so the
        results are bit-identical to per-agent calls); the thread-parallel
        path calls the public per-agent functions directly.
        """
        scales = 2.0 * np.abs(RG).reshape(self.n, -1).max(axis=1)
        if self.pool is not None:
            jobs = [(i, RG[i], PG[i], epoch) for i in range(self.n)]
            values = np.stack([q.value for q in self.pool.map(self._quantize_one, jobs)])
        else:
            levels = self.qspec.levels
            nonzero = scales > 0.0
            safe = np.where(nonzero, scales, 1.0)[:, None, None]
            shifted = RG / safe + 0.5
            if self.cfg.dither:
                half = 0.5 / levels
                shape = RG.shape[1:]
                shifted = shifted + np.stack(
                    [
                        self._agent_rng(i, epoch).uniform(-half, half, shape)
                        for i in range(self.n)
                    ]
                )
            codes = np.floor(shifted * levels) + np.rint(_sigmoid(PG))
            values = safe * (codes / levels - 0.5)
            values[~nonzero] = 0.0
        pscales = 2.0 * np.abs(PG).reshape(self.n, -1).max(axis=1)
        ratios = np.full(self.n, np.nan)
        mask = pscales > 0.0
        ratios[mask] = scales[mask] / pscales[mask]
        return values, scales, ratios

    def init_stacked(self):
        x0 = random_stiefel(self.inst.dims.d, self.inst.dims.r, stream_rng(self.cfg.seed, STREAM_INIT))
        X = np.broadcast_to(x0, (self.n, *x0.shape)).copy()
        RG = tangent_project(X, self.local_grads(X))
        if self.cfg.algorithm == ALGO_QRGT:
            G, scales, ratios = self.quantize_all(RG, penalty_grad(X), epoch=0)
            return X, G.copy(), G, float(scales.max()), _nanmax(ratios)
        return X, RG.copy(), RG, 0.0, float("nan")

    def qrgt_step(self, X, S, G, epoch: int):
        Xn = mix(self.mixing, X) - self.cfg.alpha * S
        RG = tangent_project(Xn, self.local_grads(Xn))
        Gn, scales, ratios = self.quantize_all(RG, penalty_grad(Xn), epoch)
        Sn = mix(self.mixing, S) + Gn - G
        return Xn, Sn, Gn, float(scales.max()), _nanmax(ratios)

    def rgt_step(self, X, S, G, epoch: int):
        direction = mix(self.mixing, X) - X - self.cfg.alpha * S
        Xi = tangent_project(X, direction)
        Xn = np.stack(
            [retract(X[i], Xi[i], self.cfg.retraction) for i in range(self.n)]
        )
        Gn = tangent_project(Xn, self.local_grads(Xn))
        Sn = mix(self.mixing, S) + Gn - G
        return Xn, Sn, Gn, 0.0, np.nan

    def step(self, X, S, G, epoch: int):
        if self.cfg.algorithm == ALGO_QRGT:
            return self.qrgt_step(X, S, G, epoch)
        return self.rgt_step(X, S, G, epoch)


def _nanmax(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    return float(finite.max()) if finite.size else float("nan")


def _stack(states: list[AgentState]):
    X = np.stack([st.x for st in states])
    S = np.stack([st.s for st in states])
    G = np.stack([st.gamma_prev for st in states])
    return X, S, G


def _unstack(X, S, G) -> list[AgentState]:
    return [AgentState(x=X[i].copy(), s=S[i].copy(), gamma_prev=G[i].copy()) for i in range(X.shape[0])]


def init_states(inst: ProblemInstance, cfg: AlgoConfig) -> list[AgentState]:
    """Shared random on-manifold start; trackers seeded with the first gradient."""
    eng = _Engine(inst, None, cfg)  # mixing is not used during init
    try:
        X, S, G, _, _ = eng.init_stacked()
        return _unstack(X, S, G)
    finally:
        eng.close()


def qrgt_epoch(
    states: list[AgentState],
    inst: ProblemInstance,
    mixing: MixingMatrix,
    cfg: AlgoConfig,
    epoch: int = 1,
) -> list[AgentState]:
    """One quantized tracking epoch; dither is keyed by (cfg.seed, agent, epoch)."""
    eng = _Engine(inst, mixing, cfg)
    try:
        X, S, G, _, _ = eng.qrgt_step(*_stack(states), epoch)
        return _unstack(X, S, G)
    finally:
        eng.close()


def rgt_epoch(
    states: list[AgentState],
    inst: ProblemInstance,
    mixing: MixingMatrix,
    cfg: AlgoConfig,
    epoch: int = 1,
) -> list[AgentState]:
    """One retraction-based tracking epoch with exact gradients."""
    eng = _Engine(inst, mixing, cfg)
    try:
        X, S, G, _, _ = eng.rgt_step(*_stack(states), epoch)
        return _unstack(X, S, G)
    finally:
        eng.close()


def _diverged(X: np.ndarray, r: int) -> bool:
    if not np.isfinite(X).all():
        return True
    norms = np.sqrt(np.sum(X.reshape(X.shape[0], -1) ** 2, axis=1))
    return bool(norms.max() > 1e3 * np.sqrt(r))


def run(
    inst: ProblemInstance,
    topology: Topology,
    cfg: AlgoConfig,
    full_diagnostics: bool = False,
) -> RunTrace:
    """Execute epochs until max_epochs, the early-stop threshold, or divergence.

    Emits one trace row per completed epoch. ``full_diagnostics`` additionally
    records every agent's distance to the manifold each epoch (one small SVD
    per agent per epoch).
    """
    mixing = build_metropolis(topology, cfg.t)
    if cfg.enforce_safety:
        bound = safety_step_bound(estimate_smoothness(inst), mixing.sigma2, inst.n_agents)
        if cfg.alpha > bound:
            warnings.warn(
                f"step size {cfg.alpha:.3g} exceeds the safety bound {bound:.3g}",
                StepSizeWarning,
                stacklevel=2,
            )
    eng = _Engine(inst, mixing, cfg)
    d, r = inst.dims.d, inst.dims.r
    wire_per_epoch = inst.n_agents * (d * r * cfg.bits + 64) if cfg.algorithm == ALGO_QRGT else 0
    rows: list[TraceRow] = []
    diag = RunDiagnostics()
    termination = TERMINATION_MAX_EPOCHS

    def record_diag(X, S, G, gamma_max, landing_ratio):
        sbar = S.mean(axis=0)
        gbar = G.mean(axis=0)
        diag.tracker_residual.append(
            float(np.linalg.norm(sbar - gbar)) / max(1.0, float(np.linalg.norm(gbar)))
        )
        diag.x_consensus_sq.append(float(np.sum((X - X.mean(axis=0)) ** 2)))
        diag.s_consensus_sq.append(float(np.sum((S - sbar) ** 2)))
        diag.gamma_max.append(gamma_max)
        diag.landing_ratio.append(landing_ratio)
        if full_diagnostics:
            sv = np.linalg.svd(X, compute_uv=False)
            diag.max_dist.append(float(np.sqrt(((sv - 1.0) ** 2).sum(axis=1)).max()))

    try:
        X, S, G, gamma_max, landing_ratio = eng.init_stacked()
        record_diag(X, S, G, gamma_max, landing_ratio)  # epoch-0 entry
        wire_cum = wire_per_epoch  # the initial gradient exchange is epoch 0's payload
        for epoch in range(1, cfg.max_epochs + 1):
            tic = time.perf_counter()
            X, S, G, gamma_max, landing_ratio = eng.step(X, S, G, epoch)
            wall_ms = (time.perf_counter() - tic) * 1e3
            if _diverged(X, r):
                termination = TERMINATION_DIVERGED
                break
            wire_cum += wire_per_epoch
            row = evaluate(X, inst)
            rows.append(
                TraceRow(
                    epoch=epoch,
                    consensus_error=row.consensus_error,
                    grad_norm=row.grad_norm,
                    f_gap=row.f_gap,
                    ds=row.ds,
                    dist_mean=row.dist_mean,
                    wall_ms=wall_ms,
                    wire_bits_cum=wire_cum,
                )
            )
            record_diag(X, S, G, gamma_max, landing_ratio)
            if row.ds <= cfg.ds_tolerance:
                termination = TERMINATION_DS
                break
    finally:
        eng.close()
    return RunTrace(rows=rows, termination=termination, sigma2=mixing.sigma2, diagnostics=diag)
