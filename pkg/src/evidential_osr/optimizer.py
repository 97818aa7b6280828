"""Primal-dual averaging for  min L(theta)  s.t.  g(theta) <= gamma.

One iteration, starting from (theta, lam):

1. primal step on  L(theta) + lam (g(theta) - gamma) - (delta/2) lam^2,
   either one Adam step (``primal_mode="adam"``) or an exact minimisation
   (``"exact"``, needs a closed-form ``argmin``);
2. append the new iterate to the buffer and refresh the running average;
3. optionally reset theta to that average (``reset=True``, the default);
4. lam <- max(lam + eta2 (g(average) - gamma - delta lam), 0).

Index convention: after m iterations the buffer holds theta^(0..m) and the
average is their plain mean.  ``average_mode="literal"`` instead keeps
theta^(0) out of the buffer and divides the sum of all but the newest
iterate by the buffer length.

The certificate checks at the bottom evaluate the averaged-sequence
recurrence and the three per-step bounds (constraint violation, upper and
lower loss bounds) on a recorded trace.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "DivergenceError",
    "NonFiniteError",
    "AdamState",
    "PrimalState",
    "DualState",
    "RunConfig",
    "ConvexProblem",
    "TraceReport",
    "Prop1Report",
    "Prop2Report",
    "adam_update",
    "init_primal",
    "commit_iterate",
    "dual_update",
    "lagrangian",
    "lagrangian_grad",
    "algorithm1_step",
    "run_constrained",
    "trace_from_iterates",
    "check_prop1",
    "check_prop2_bounds",
    "bound2_rhs",
    "trace_to_csv",
]

ValueGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class NonFiniteError(ArithmeticError):
    """A loss or constraint evaluation returned NaN/Inf."""


class DivergenceError(RuntimeError):
    """Iterates left the region |theta| <= 1e6 * initial scale."""


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class PrimalState:
    """Primal iterate, averaging buffer and Adam moments.

    ``count`` is the number of iterates folded into the average so far
    (theta^(0) included in proper mode), so ``count - 1`` primal steps have
    been taken.  ``buffer`` is ``None`` when history is not kept.
    """

    theta: np.ndarray
    average: np.ndarray
    count: int
    adam: AdamState
    buffer: Optional[list] = None
    average_mode: str = "proper"
    literal_sum: Optional[np.ndarray] = None
    last_iterate: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return self.count - 1 if self.average_mode == "proper" else self.count

    def copy(self) -> "PrimalState":
        return PrimalState(
            theta=self.theta.copy(),
            average=self.average.copy(),
            count=self.count,
            adam=replace(self.adam, m=self.adam.m.copy(), v=self.adam.v.copy()),
            buffer=None if self.buffer is None else list(self.buffer),
            average_mode=self.average_mode,
            literal_sum=None if self.literal_sum is None else self.literal_sum.copy(),
            last_iterate=None if self.last_iterate is None else self.last_iterate.copy(),
        )


@dataclass
class DualState:
    lam: float = 0.0
    eta2: float = 0.01
    delta: float = 0.01
    gamma: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"dual variable must be >= 0, got {self.lam}")
        if not self.eta2 > 0:
            raise ValueError(f"eta2 must be positive, got {self.eta2}")
        if self.delta < 0 or self.gamma < 0:
            raise ValueError("delta and gamma must be nonnegative")


def init_primal(
    theta0,
    keep_history: bool = True,
    average_mode: str = "proper",
    adam_betas: tuple[float, float] = (0.9, 0.999),
    adam_eps: float = 1e-8,
) -> PrimalState:
    theta0 = np.array(theta0, dtype=float).reshape(-1)
    if average_mode not in ("proper", "literal"):
        raise ValueError(f"unknown average_mode {average_mode!r}")
    adam = AdamState(np.zeros_like(theta0), np.zeros_like(theta0), 0, adam_betas[0], adam_betas[1], adam_eps)
    if average_mode == "proper":
        return PrimalState(
            theta=theta0.copy(),
            average=theta0.copy(),
            count=1,
            adam=adam,
            buffer=[theta0.copy()] if keep_history else None,
        )
    return PrimalState(
        theta=theta0.copy(),
        average=theta0.copy(),
        count=0,
        adam=adam,
        buffer=[] if keep_history else None,
        average_mode="literal",
        literal_sum=np.zeros_like(theta0),
    )


def adam_update(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected Adam step; mutates ``state`` and returns the new theta."""
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def commit_iterate(primal: PrimalState, reset: bool = True) -> None:
    """Fold ``primal.theta`` into the buffer and running average (in place)."""
    new = primal.theta.copy()
    primal.last_iterate = new
    if primal.buffer is not None:
        primal.buffer.append(new)
    if primal.average_mode == "proper":
        primal.count += 1
        primal.average = primal.average + (new - primal.average) / primal.count
    else:
        primal.count += 1
        primal.average = primal.literal_sum / primal.count
        primal.literal_sum = primal.literal_sum + new
    if reset:
        primal.theta = primal.average.copy()


def dual_update(dual: DualState, g_value: float) -> float:
    """Projected dual ascent step; updates ``dual.lam`` in place and returns it."""
    dual.lam = max(dual.lam + dual.eta2 * (g_value - dual.gamma - dual.delta * dual.lam), 0.0)
    return dual.lam


def _checked(value: float, what: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteError(f"{what} evaluated to {value}")
    return value


def lagrangian(theta, lam: float, loss_fn: ValueGrad, constraint_fn: ValueGrad, gamma: float, delta: float) -> float:
    """L(theta) + lam (g(theta) - gamma) - (delta / 2) lam^2."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    theta = np.asarray(theta, dtype=float)
    loss, _ = loss_fn(theta)
    g, _ = constraint_fn(theta)
    return float(loss) + lam * (float(g) - gamma) - 0.5 * delta * lam * lam


def lagrangian_grad(theta, lam: float, loss_fn: ValueGrad, constraint_fn: ValueGrad) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    _, dl = loss_fn(theta)
    _, dg = constraint_fn(theta)
    return np.asarray(dl, dtype=float) + lam * np.asarray(dg, dtype=float)


def algorithm1_step(
    primal: PrimalState,
    dual: DualState,
    loss_fn: ValueGrad,
    constraint_fn: ValueGrad,
    eta1: float = 1e-3,
    primal_mode: str = "adam",
    argmin: Optional[Callable[[float], np.ndarray]] = None,
    reset: bool = True,
    bounds: Optional[tuple] = None,
) -> tuple[PrimalState, DualState]:
    """One primal-dual averaging iteration; returns new states, inputs untouched.

    ``loss_fn`` and ``constraint_fn`` map theta to ``(value, gradient)``.
    In ``"exact"`` mode ``argmin(lam)`` must return the minimiser of the
    Lagrangian at multiplier ``lam``.  ``bounds=(lo, hi)`` projects Adam
    iterates onto a box.
    """
    primal = primal.copy()
    dual = replace(dual)
    lam_prev = dual.lam

    if primal_mode == "adam":
        grad = lagrangian_grad(primal.theta, lam_prev, loss_fn, constraint_fn)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("Lagrangian gradient is not finite")
        theta = adam_update(primal.theta, grad, primal.adam, eta1)
        if bounds is not None:
            theta = np.clip(theta, bounds[0], bounds[1])
        primal.theta = theta
    elif primal_mode == "exact":
        if argmin is None:
            raise ValueError("primal_mode='exact' needs an argmin callable")
        primal.theta = np.array(argmin(lam_prev), dtype=float).reshape(primal.theta.shape)
    else:
        raise ValueError(f"unknown primal_mode {primal_mode!r}")

    commit_iterate(primal, reset=reset)
    g_avg = _checked(constraint_fn(primal.average)[0], "constraint at the running average")
    dual_update(dual, g_avg)
    return primal, dual


# ---------------------------------------------------------------------------
# Convex oracle problems and traces


@dataclass
class ConvexProblem:
    """Convex test problem with analytically known solution.

    ``loss`` and ``constraint`` map theta to ``(value, gradient)``;
    ``constraint`` is nonnegative with infimum 0.  ``G`` bounds the norm of
    every point of the feasible box, ``L`` strictly bounds |g| on it.
    """

    name: str
    loss: ValueGrad
    constraint: ValueGrad
    f_star: float
    lambda_star: float
    G: float
    L: float
    theta0: np.ndarray
    argmin: Optional[Callable[[float], np.ndarray]] = None
    bounds: Optional[tuple] = None
    x_star: Optional[np.ndarray] = None


@dataclass
class RunConfig:
    eta1: float = 1e-3
    eta2: float = 0.01
    delta: float = 0.01
    gamma: float = 0.0
    max_steps: int = 1000
    primal_mode: str = "exact"
    average_mode: str = "proper"
    reset: bool = True
    lambda0: float = 0.0
    theta0: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ValueError("learning rates must be positive")
        if self.delta < 0 or self.gamma < 0 or self.lambda0 < 0:
            raise ValueError("delta, gamma and lambda0 must be nonnegative")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass
class TraceReport:
    """Per-step history of a constrained run; row 0 is the initial state."""

    theta: np.ndarray  # (M+1, p) primal iterates before any reset
    average: np.ndarray  # (M+1, p) running averages
    lam: np.ndarray  # (M+1,)
    loss_avg: np.ndarray  # (M+1,) loss at the running average
    constraint_avg: np.ndarray  # (M+1,) constraint at the running average
    eta2: float = float("nan")
    gamma: float = 0.0
    average_mode: str = "proper"
    name: str = ""

    def __len__(self) -> int:
        return self.lam.size

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.lam.size)


def run_constrained(problem: ConvexProblem, config: RunConfig = RunConfig()) -> TraceReport:
    """Run ``config.max_steps`` iterations and record the full trace."""
    theta0 = np.array(problem.theta0 if config.theta0 is None else config.theta0, dtype=float).reshape(-1)
    primal = init_primal(theta0, keep_history=False, average_mode=config.average_mode)
    dual = DualState(lam=config.lambda0, eta2=config.eta2, delta=config.delta, gamma=config.gamma)
    scale = max(1.0, float(np.linalg.norm(theta0)))

    thetas = [theta0.copy()]
    avgs = [primal.average.copy()]
    lams = [dual.lam]
    losses = [_checked(problem.loss(primal.average)[0], "loss")]
    cons = [_checked(problem.constraint(primal.average)[0], "constraint")]
    for m in range(1, config.max_steps + 1):
        primal, dual = algorithm1_step(
            primal,
            dual,
            problem.loss,
            problem.constraint,
            eta1=config.eta1,
            primal_mode=config.primal_mode,
            argmin=problem.argmin,
            reset=config.reset,
            bounds=problem.bounds,
        )
        thetas.append(primal.last_iterate.copy())
        avgs.append(primal.average.copy())
        lams.append(dual.lam)
        losses.append(_checked(problem.loss(primal.average)[0], "loss"))
        cons.append(_checked(problem.constraint(primal.average)[0], "constraint"))
        if np.linalg.norm(thetas[-1]) > 1e6 * scale:
            raise DivergenceError(f"{problem.name}: |theta| exceeded 1e6 x initial scale at step {m}")
    return TraceReport(
        theta=np.array(thetas),
        average=np.array(avgs),
        lam=np.array(lams),
        loss_avg=np.array(losses),
        constraint_avg=np.array(cons),
        eta2=config.eta2,
        gamma=config.gamma,
        average_mode=config.average_mode,
        name=problem.name,
    )


def trace_from_iterates(iterates, average_mode: str = "proper") -> TraceReport:
    """Build a trace from a given primal sequence theta^(0), theta^(1), ...

    Only the averaging is replayed; dual and loss columns are NaN.  Useful
    for checking the averaging recurrence on hand-made sequences.
    """
    its = [np.atleast_1d(np.asarray(t, dtype=float)) for t in iterates]
    primal = init_primal(its[0], keep_history=False, average_mode=average_mode)
    avgs = [primal.average.copy()]
    for t in its[1:]:
        primal.theta = t.copy()
        commit_iterate(primal, reset=False)
        avgs.append(primal.average.copy())
    nan = np.full(len(its), np.nan)
    return TraceReport(np.array(its), np.array(avgs), nan.copy(), nan.copy(), nan.copy(), average_mode=average_mode)


@dataclass
class Prop1Report:
    """Averaged-sequence certificate.

    For every step m >= 1 with a = running average,
        a_m - a_{m-1} = (theta_m - a_{m-1}) / (m + 1)           (recurrence)
        |a_m - a_{m-1}| <= (|theta_m| + |a_{m-1}|)/(m+1) <= 2G/(m+1)
    """

    recurrence_max_error: float
    step_norms: np.ndarray
    triangle_bounds: np.ndarray
    g_bounds: np.ndarray
    max_slack: float
    passed: bool
    first_violation: Optional[int]


def check_prop1(trace: TraceReport, G: float, tol: float = 1e-12) -> Prop1Report:
    if len(trace) < 3:
        raise ValueError("need a trace with at least 3 rows")
    a = trace.average
    th = trace.theta
    m = np.arange(1, len(trace))[:, None]
    diff = a[1:] - a[:-1]
    predicted = (th[1:] - a[:-1]) / (m + 1)
    rec_err = float(np.max(np.abs(diff - predicted)))
    step_norms = np.linalg.norm(diff, axis=1)
    tri = (np.linalg.norm(th[1:], axis=1) + np.linalg.norm(a[:-1], axis=1)) / (m[:, 0] + 1)
    gb = 2.0 * G / (m[:, 0] + 1)
    ok = (step_norms <= tri + tol) & (tri <= gb + tol)
    if trace.average_mode == "proper":
        ok &= np.abs(diff - predicted).max(axis=1) <= tol
    bad = np.flatnonzero(~ok)
    return Prop1Report(
        recurrence_max_error=rec_err,
        step_norms=step_norms,
        triangle_bounds=tri,
        g_bounds=gb,
        max_slack=float(np.max(step_norms - gb)),
        passed=bad.size == 0,
        first_violation=None if bad.size == 0 else int(bad[0]) + 1,
    )


def bound2_rhs(f_star: float, lambda0: float, m, eta2: float, L: float):
    """Upper bound on the loss at the running average after m steps."""
    m = np.asarray(m, dtype=float)
    return f_star + lambda0**2 / (2.0 * m * eta2) + eta2 * L**2 / 2.0


@dataclass
class Prop2Report:
    """Per-step constraint-violation and loss certificates for steps 1..M.

    bound1: [g(a_m) - gamma]_+ <= lam_m / (m eta2)
    bound2: L(a_m) <= f* + lam_0^2 / (2 m eta2) + eta2 L^2 / 2
    bound3: L(a_m) >= f* - lam* [g(a_m) - gamma]_+
    """

    violation: np.ndarray
    bound1_rhs: np.ndarray
    bound2_rhs: np.ndarray
    bound3_rhs: np.ndarray
    loss: np.ndarray
    holds: dict
    first_violation: Optional[dict]

    @property
    def passed(self) -> bool:
        return all(bool(np.all(v)) for v in self.holds.values())


def check_prop2_bounds(trace: TraceReport, problem: ConvexProblem, tol: float = 1e-12) -> Prop2Report:
    if len(trace) < 2:
        raise ValueError("need at least one step")
    m = np.arange(1, len(trace), dtype=float)
    lam = trace.lam[1:]
    loss = trace.loss_avg[1:]
    viol = np.maximum(trace.constraint_avg[1:] - trace.gamma, 0.0)
    if np.any(np.abs(trace.constraint_avg) >= problem.L):
        raise ValueError(f"{problem.name}: |g| reached L={problem.L}; L must bound the constraint strictly")
    b1 = lam / (m * trace.eta2)
    b2 = bound2_rhs(problem.f_star, trace.lam[0], m, trace.eta2, problem.L)
    b3 = problem.f_star - problem.lambda_star * viol
    holds = {
        "bound1": viol <= b1 + tol,
        "bound2": loss <= b2 + tol,
        "bound3": loss >= b3 - tol,
    }
    first = None
    for key, ok in holds.items():
        bad = np.flatnonzero(~ok)
        if bad.size:
            i = int(bad[0])
            first = {
                "bound": key,
                "step": i + 1,
                "violation": float(viol[i]),
                "loss": float(loss[i]),
                "lambda": float(lam[i]),
                "rhs": float({"bound1": b1, "bound2": b2, "bound3": b3}[key][i]),
            }
            break
    return Prop2Report(viol, b1, b2, b3, loss, holds, first)


TRACE_COLUMNS = (
    "step",
    "loss_avg",
    "constraint_avg",
    "lambda",
    "bound1_lhs",
    "bound1_rhs",
    "bound2_rhs",
    "bound3_rhs",
)


def _fmt(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def trace_to_csv(trace: TraceReport, problem: Optional[ConvexProblem] = None, header_lines: Sequence[str] = ()) -> str:
    """Serialise a trace as CSV text.

    Bound columns are filled when ``problem`` is given and left empty
    otherwise (and always for step 0).  ``header_lines`` are written first
    as ``#`` comments.
    """
    n = len(trace)
    b1l = b1r = b2r = b3r = np.full(n, np.nan)
    if problem is not None and n >= 2:
        rep = check_prop2_bounds(trace, problem)
        pad = lambda v: np.concatenate([[np.nan], v])  # noqa: E731
        b1l, b1r, b2r, b3r = pad(rep.violation), pad(rep.bound1_rhs), pad(rep.bound2_rhs), pad(rep.bound3_rhs)
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for i in range(n):
        w.writerow(
            [i]
            + [_fmt(v) for v in (trace.loss_avg[i], trace.constraint_avg[i], trace.lam[i], b1l[i], b1r[i], b2r[i], b3r[i])]
        )
    return buf.getvalue()
