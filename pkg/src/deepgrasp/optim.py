"""Full-batch minimizers with an objective trace and a windowed stopping rule."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .errors import NumericalError

METHODS = ("lbfgs", "gd")


@dataclass
class OptResult:
    x: np.ndarray
    fun: float
    trace: list = field(default_factory=list)
    records: list = field(default_factory=list)
    n_iter: int = 0
    n_evals: int = 0
    converged: bool = False
    message: str = ""


class _Tracker:
    def __init__(self, fun, log, window, tol):
        self.fun, self.log, self.window, self.tol = fun, log, window, tol
        self.trace, self.records = [], []
        self.n_evals = 0
        self.last = None
        self.t0 = time.perf_counter()

    def __call__(self, x):
        f, g = self.fun(x)
        self.n_evals += 1
        gnorm = float(np.linalg.norm(g))
        if not (np.isfinite(f) and np.isfinite(gnorm)):
            raise NumericalError(
                f"non-finite objective at iteration {len(self.trace)} (f={f}, |grad|={gnorm})",
                iteration=len(self.trace), grad_norm=gnorm)
        self.last = (x.copy(), float(f), gnorm)
        return float(f), np.asarray(g, dtype=float)

    def accept(self, x, f):
        gnorm = self.last[2] if self.last is not None and np.array_equal(self.last[0], x) else float("nan")
        self.trace.append(float(f))
        rec = {"iteration": len(self.trace), "objective": float(f), "grad_norm": gnorm,
               "wall_time": round(time.perf_counter() - self.t0, 6)}
        self.records.append(rec)
        if self.log is not None:
            self.log.write(json.dumps(rec) + "\n")

    def stalled(self):
        w = self.window
        if len(self.trace) <= w:
            return False
        old, new = self.trace[-w - 1], self.trace[-1]
        return abs(old - new) <= self.tol * max(abs(old), 1e-12)


def minimize(fun, x0, method="lbfgs", max_iters=400, tol=1e-6, window=5, log=None, memory=10):
    """Minimize ``fun(x) -> (f, grad)`` starting at ``x0``.

    Stops when the objective changes by at most ``tol`` (relative) over
    ``window`` accepted iterations, or after ``max_iters`` iterations.  The
    trace holds the objective after every accepted step, starting with f(x0).
    ``log`` is an optional text stream receiving one JSON record per step.
    """
    if method not in METHODS:
        raise ValueError(f"unknown optimizer {method!r}; choose from {METHODS}")
    if max_iters <= 0 or tol <= 0:
        raise ValueError("max_iters and tol must be positive")
    x0 = np.asarray(x0, dtype=float).copy()
    tr = _Tracker(fun, log, window, tol)
    f0, g0 = tr(x0)
    tr.accept(x0, f0)
    if method == "gd":
        return _gradient_descent(tr, x0, f0, g0, max_iters)

    state = {"converged": False}

    def callback(intermediate_result):
        tr.accept(intermediate_result.x, intermediate_result.fun)
        if tr.stalled():
            state["converged"] = True
            raise StopIteration

    res = _scipy_minimize(tr, x0, jac=True, method="L-BFGS-B", callback=callback,
                          options={"maxiter": max_iters, "maxcor": memory, "ftol": 0.0,
                                   "gtol": 1e-12, "maxfun": 20 * max_iters + 50})
    converged = state["converged"] or res.status == 0
    return OptResult(res.x, float(res.fun), tr.trace, tr.records, len(tr.trace) - 1, tr.n_evals,
                     converged, str(res.message))


def _gradient_descent(tr, x, f, g, max_iters, shrink=0.5, c1=1e-4):
    step = 1.0 / max(np.linalg.norm(g), 1.0)
    converged, message = False, "max_iters reached"
    for _ in range(max_iters):
        gg = float(g @ g)
        if gg == 0:
            converged, message = True, "zero gradient"
            break
        for _ in range(60):
            xn = x - step * g
            fn, gn = tr(xn)
            if fn <= f - c1 * step * gg:
                break
            step *= shrink
        else:
            converged, message = True, "line search failed to decrease"
            break
        x, f, g = xn, fn, gn
        tr.accept(x, f)
        step *= 2.0
        if tr.stalled():
            converged, message = True, "relative change below tol"
            break
    return OptResult(x, f, tr.trace, tr.records, len(tr.trace) - 1, tr.n_evals, converged, message)
