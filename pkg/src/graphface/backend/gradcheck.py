"""Central finite-difference verification of reverse-mode gradients."""
from dataclasses import dataclass

import numpy as np


class GradientCheckError(RuntimeError):
    """Raised when the function under test produces a non-finite value."""


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list
    tol: float

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def __str__(self):
        lines = [f"gradient check (tol={self.tol:g})"]
        for e in self.entries:
            status = "ok" if e.passed else "FAIL"
            lines.append(f"  {status:4s} {e.name}: max rel err {e.max_rel_err:.3e}")
        return "\n".join(lines)


def gradient_check(fn, params, eps=1e-5, tol=1e-6):
    """Compare reverse-mode gradients of scalar fn() against (f(x+e)-f(x-e))/2e.

    ``fn`` must be deterministic and must read parameter values at call time.
    Every element of every parameter is perturbed. Relative error uses a unit
    floor: |a - n| / max(|a|, |n|, 1).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)

    for p in params:
        p.grad = None
    out = fn()
    if out.size != 1:
        raise ValueError(f"gradient_check needs a scalar function, got output shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise GradientCheckError("function value is non-finite at the base point")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    def eval_scalar(pname):
        val = float(fn().item())
        if not np.isfinite(val):
            raise GradientCheckError(
                f"function value became non-finite while perturbing parameter {pname}")
        return val

    entries = []
    for p, a in zip(params, analytic):
        name = getattr(p, "name", "") or "<unnamed>"
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        max_rel = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = eval_scalar(name)
            flat[i] = orig - eps
            f_minus = eval_scalar(name)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(float(a_flat[i])), abs(numeric), 1.0)
            rel = abs(float(a_flat[i]) - numeric) / denom
            if rel > max_rel:
                max_rel = rel
        entries.append(ParamCheck(name=name, max_rel_err=max_rel, passed=max_rel <= tol))
    return GradCheckReport(entries=entries, tol=tol)
