"""Non-predictive online baselines: static, OGD, FTL and FTP.

Every baseline reads traffic only through :class:`smooco.plan.OnlineStream`,
so the decision for step ``t`` can depend on nothing but the revealed
history and the previous decision.  Baselines have no planning windows; their
ledger rows carry window id and size 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MakespanCost, ParameterError
from .plan import OnlineStream, RunResult
from .solve import ENUMERATION_LIMIT, solve_subproblem


def _result(name: str, stream: OnlineStream) -> RunResult:
    n = len(stream.decisions)
    return RunResult(name, list(stream.decisions), [0] * n, [0] * n)


def static_run(stream: OnlineStream, model: MakespanCost, x0, name: str = "static") -> RunResult:
    """Keep the initial assignment for the whole horizon."""
    x0 = tuple(x0)
    while not stream.done:
        stream.commit(x0)
    return _result(name, stream)


def makespan_subgradient(X, theta) -> np.ndarray:
    """Subgradient of ``max_j sum_i X_ij theta_i`` with respect to ``X``.

    The column of the most loaded server (lowest index on ties) holds
    ``theta``; every other entry is zero.
    """
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(X)
    if not np.any(theta):
        return g
    g[:, int(np.argmax(theta @ X))] = theta
    return g


def project_row_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex.

    Sort in decreasing order, find the largest ``rho`` with
    ``u_rho > (sum_{j<=rho} u_j - 1) / rho`` and shift by that threshold.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
        raise ParameterError("projection needs a nonempty finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = int(np.nonzero(u - css / idx > 0)[0][-1]) + 1
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


@dataclass
class RelaxedAssignment:
    """Row-stochastic ``k x m`` matrix, the continuous iterate of OGD."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.ndim != 2:
            raise ParameterError("relaxed assignment must be a k x m matrix")
        if np.any(M < -1e-12) or np.any(M > 1 + 1e-12) or not np.allclose(M.sum(axis=1), 1.0, atol=1e-9):
            raise ParameterError("relaxed assignment rows must lie on the simplex")
        self.matrix = M

    @classmethod
    def from_assignment(cls, x, m: int) -> "RelaxedAssignment":
        M = np.zeros((len(x), m))
        M[np.arange(len(x)), list(x)] = 1.0
        return cls(M)

    def step(self, grad: np.ndarray, eta: float) -> "RelaxedAssignment":
        Y = self.matrix - eta * grad
        return RelaxedAssignment(np.vstack([project_row_simplex(r) for r in Y]))

    def decode(self) -> tuple[int, ...]:
        """Per-row argmax; ``np.argmax`` already returns the lowest index on ties."""
        return tuple(int(j) for j in np.argmax(self.matrix, axis=1))


def ogd_run(stream: OnlineStream, model: MakespanCost, x0, eta0: float | None = None,
            name: str = "ogd", on_step=None) -> RunResult:
    """Projected online (sub)gradient descent on the relaxed cost.

    Before online step ``t`` the iterate moves against the subgradient at the
    latest revealed traffic with ``eta_t = eta0 / sqrt(t)``.  ``eta0``
    defaults to ``0.1 m / mean(theta)`` over the history available at the
    first update.  The executed decision is the per-row argmax of the
    iterate; ``on_step(X)`` sees each iterate before it is decoded.
    """
    X = RelaxedAssignment.from_assignment(x0, model.m)
    while not stream.done:
        hist = stream.history()
        if len(hist):
            if eta0 is None:
                mean = float(np.mean(hist))
                eta0 = 0.1 * model.m / mean if mean > 0 else 0.0
            X = X.step(model.relaxed_subgradient(X.matrix, hist[-1]), eta0 / np.sqrt(stream.step))
        if on_step is not None:
            on_step(X)
        stream.commit(X.decode())
    return _result(name, stream)


def _history_for(stream: OnlineStream, use_warmup: bool) -> np.ndarray:
    hist = stream.history()
    return hist if use_warmup else hist[stream.warmup:]


def ftl_run(stream: OnlineStream, model: MakespanCost, x0, strategy: str = "local",
            use_warmup: bool = True, restarts: int = 5, rng=None,
            enumeration_limit: int = ENUMERATION_LIMIT, name: str = "ftl") -> RunResult:
    """Follow the leader: minimise the summed past makespans plus the switch from the last decision."""
    prev = tuple(x0)
    while not stream.done:
        past = _history_for(stream, use_warmup)
        if len(past):
            terms = [(1.0, th) for th in past]
            prev = solve_subproblem(terms, prev, None, 1.0, model, strategy, enumeration_limit, restarts, rng)
        stream.commit(prev)
    return _result(name, stream)


def ftp_run(stream: OnlineStream, model: MakespanCost, x0, strategy: str = "enumerate",
            use_warmup: bool = True, restarts: int = 5, rng=None,
            enumeration_limit: int = ENUMERATION_LIMIT, name: str = "ftp") -> RunResult:
    """Follow the previous: minimise the last revealed makespan plus the switch from the last decision."""
    prev = tuple(x0)
    while not stream.done:
        past = _history_for(stream, use_warmup)
        if len(past):
            prev = solve_subproblem([(1.0, past[-1])], prev, None, 1.0, model, strategy,
                                    enumeration_limit, restarts, rng)
        stream.commit(prev)
    return _result(name, stream)
