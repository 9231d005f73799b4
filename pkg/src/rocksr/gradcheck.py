"""Finite-difference verification of reverse-mode gradients.

The check compares analytic gradients against central differences of a
reference loss function.  Because float32 arithmetic alone cannot support
tight relative tolerances, the reference is usually a float64 twin of the
network under test (same weights, cast up); the harness only requires
that ``oracle_wrt[i]`` mirrors ``wrt[i]`` elementwise.

Piecewise-linear activations put kinks inside the difference stencil.
Those coordinates are detected by comparing the forward and backward
one-sided differences: on a smooth or locally linear function they agree
to O(h * f''), while a kink between x-h and x+h leaves an O(1) fraction
of the slope jump between them.  Inconsistent coordinates are skipped
and counted rather than failed, and the report exposes the skip count so
a test can bound it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tape, Tensor


@dataclass
class TensorReport:
    name: str
    n_checked: int = 0
    n_skipped: int = 0
    max_rel_error: float = 0.0
    worst_coord: tuple | None = None


@dataclass
class GradCheckReport:
    """Outcome of one gradient check.

    failures lists (tensor name, flat index, analytic, finite-difference,
    relative error) for every sampled coordinate whose relative error
    exceeded rel_tol.
    """

    rel_tol: float
    loss_value: float
    tensors: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    @property
    def n_checked(self) -> int:
        return sum(t.n_checked for t in self.tensors)

    @property
    def n_skipped(self) -> int:
        return sum(t.n_skipped for t in self.tensors)

    @property
    def passed(self) -> bool:
        return not self.failures and np.isfinite(self.loss_value)

    def summary(self) -> str:
        lines = [
            f"loss={self.loss_value:.6g} checked={self.n_checked} "
            f"skipped={self.n_skipped} max_rel_error={self.max_rel_error:.3g} "
            f"tol={self.rel_tol:g} -> {'PASS' if self.passed else 'FAIL'}"
        ]
        for t in self.tensors:
            lines.append(
                f"  {t.name}: checked={t.n_checked} skipped={t.n_skipped} "
                f"max_rel={t.max_rel_error:.3g}"
            )
        for name, idx, ana, fd, rel in self.failures[:10]:
            lines.append(f"  FAIL {name}[{idx}] analytic={ana:.6g} fd={fd:.6g} rel={rel:.3g}")
        if len(self.failures) > 10:
            lines.append(f"  ... {len(self.failures) - 10} more failures")
        return "\n".join(lines)


def _loss_value(fn) -> float:
    out = fn()
    if isinstance(out, Tensor):
        return float(out.data)
    return float(out)


def grad_check(
    loss_fn,
    wrt,
    *,
    oracle_fn=None,
    oracle_wrt=None,
    rel_tol: float = 1e-3,
    floor_frac: float = 1e-2,
    h_scale: float = 1e-6,
    samples_per_tensor: int | None = 32,
    rng: np.random.Generator | None = None,
    names=None,
) -> GradCheckReport:
    """Check d(loss_fn)/d(wrt) against central differences of oracle_fn.

    loss_fn is called once under a fresh tape; gradients land on the
    tensors in ``wrt``.  oracle_fn (default: loss_fn itself) is then
    evaluated repeatedly outside any tape while coordinates of
    ``oracle_wrt`` (default: wrt) are perturbed in place.  Pass a float64
    twin as the oracle to verify a float32 network tightly.

    Relative error uses a per-tensor denominator floor of
    floor_frac * max(|analytic|, |fd|) over the sampled coordinates, so
    near-zero entries of an otherwise healthy gradient do not dominate.
    samples_per_tensor=None checks every coordinate.
    """
    if oracle_fn is None:
        oracle_fn = loss_fn
    if oracle_wrt is None:
        oracle_wrt = wrt
    wrt = list(wrt)
    oracle_wrt = list(oracle_wrt)
    if len(wrt) != len(oracle_wrt):
        raise ValueError("wrt and oracle_wrt must pair up one-to-one")
    if names is None:
        names = [
            t.name if isinstance(t, Parameter) else f"tensor{i}" for i, t in enumerate(wrt)
        ]
    rng = rng or np.random.default_rng(0)

    for t in wrt:
        if isinstance(t, Parameter):
            t.zero_grad()
        else:
            t.grad = None
        if not t.requires_grad:
            raise ValueError("every tensor in wrt must have requires_grad=True")

    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    report = GradCheckReport(rel_tol=rel_tol, loss_value=float(loss.data))
    oracle_base = _loss_value(oracle_fn)

    for name, t, ot in zip(names, wrt, oracle_wrt):
        if t.data.shape != ot.data.shape:
            raise ValueError(
                f"oracle twin for {name} has shape {ot.data.shape}, expected {t.data.shape}"
            )
        analytic = np.zeros_like(t.data) if t.grad is None else np.array(t.grad, dtype=np.float64)
        flat_analytic = analytic.reshape(-1)
        n = flat_analytic.size
        if samples_per_tensor is None or samples_per_tensor >= n:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=samples_per_tensor, replace=False))

        target = ot.data.reshape(-1)
        # FD noise amplitude is ~eps * |f| / h; one-sided differences that
        # disagree by less than a generous multiple of it are roundoff,
        # not evidence of a kink.
        eps_o = float(np.finfo(ot.data.dtype).eps)
        fd_vals = np.empty(len(coords))
        consistent = np.empty(len(coords), dtype=bool)
        for j, c in enumerate(coords):
            orig = target[c]
            h = h_scale * max(1.0, abs(float(orig)))
            target[c] = orig + h
            f_plus = _loss_value(oracle_fn)
            target[c] = orig - h
            f_minus = _loss_value(oracle_fn)
            target[c] = orig
            fd_vals[j] = (f_plus - f_minus) / (2 * h)
            fwd = (f_plus - oracle_base) / h
            bwd = (oracle_base - f_minus) / h
            noise = 1e3 * eps_o * max(1.0, abs(oracle_base)) / h
            tol_gap = max(2e-2 * max(abs(fwd), abs(bwd)), noise)
            consistent[j] = abs(fwd - bwd) <= tol_gap

        sampled_analytic = flat_analytic[coords].astype(np.float64)
        floor = floor_frac * max(
            float(np.abs(sampled_analytic).max(initial=0.0)),
            float(np.abs(fd_vals).max(initial=0.0)),
            1e-30,
        )
        tr = TensorReport(name=name)
        for j, c in enumerate(coords):
            if not consistent[j]:
                tr.n_skipped += 1
                continue
            ana = sampled_analytic[j]
            fd = fd_vals[j]
            rel = abs(ana - fd) / max(abs(ana), abs(fd), floor)
            tr.n_checked += 1
            if rel > tr.max_rel_error:
                tr.max_rel_error = rel
                tr.worst_coord = (int(c), float(ana), float(fd))
            if rel > rel_tol:
                report.failures.append((name, int(c), float(ana), float(fd), float(rel)))
        report.tensors.append(tr)

    return report
