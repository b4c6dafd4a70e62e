"""Damped least-squares solver over typed parameter blocks.

The problem holds Euclidean blocks (plain vectors) and SO(3) blocks
(rotation matrices updated right-multiplicatively, ``R <- R @ exp([d]x)``,
with Jacobians taken w.r.t. the tangent increment ``d``). Residuals are
registered as *families*: one vectorized callback evaluates N stacked
measurements of equal dimension, with per-slot index arrays mapping each
measurement to its parameter blocks. A single measurement is just a family
of size one (see ``add_residual``); batching is what keeps the per-iteration
cost in numpy rather than in a Python loop over thousands of factors.

Costs follow the robust form: per measurement, ``s = ||L r||^2`` with
``L`` the square-root information of the noise covariance, and the total
objective is ``sum Omega(s)`` with ``Omega`` the Huber cost for robust
families and the identity otherwise. Rejected steps raise the damping by a
fixed factor, accepted steps lower it (Marquardt diagonal scaling). The
accepted-cost trace is strictly decreasing by construction.

A residual callback may raise EvaluationRejected to veto a candidate state
(e.g. a landmark crossing the camera plane); the solver treats that like a
cost increase. Non-finite values at an *accepted* state are a hard
NumericalFailure instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalFailure
from .geometry import exact_rotation

DIAG_FLOOR = 1e-12


class EvaluationRejected(Exception):
    """Raised by residual callbacks to veto a candidate state."""


@dataclass
class LmConfig:
    max_iterations: int = 100
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    cost_tol_rel: float = 1e-8
    cost_tol_abs: float = 1e-16
    gradient_tol: float = 1e-10
    huber_kappa: float = 1.345  # pixels, on the whitened residual norm
    max_lambda: float = 1e32
    min_lambda: float = 1e-15


@dataclass
class SolveReport:
    initial_cost: float
    final_cost: float
    iterations: int
    termination_reason: str  # converged-cost | converged-gradient | max-iterations | diverged
    cost_trace: list = field(default_factory=list)  # accepted costs, initial first
    gradient_norm: float = np.nan
    final_lambda: float = np.nan
    n_residuals: int = 0
    n_free_parameters: int = 0

    @property
    def converged(self) -> bool:
        return self.termination_reason in ("converged-cost", "converged-gradient")


def huber_cost(s, kappa: float):
    """Robust cost of a squared whitened norm s."""
    s = np.asarray(s, dtype=float)
    e = np.sqrt(s)
    out = np.where(e <= kappa, s, 2.0 * kappa * e - kappa * kappa)
    return out if out.ndim else float(out)


def huber_weight(s, kappa: float):
    """IRLS weight d Omega / d s, used to scale residuals and Jacobians."""
    s = np.asarray(s, dtype=float)
    e = np.sqrt(np.maximum(s, 1e-300))
    out = np.where(e <= kappa, 1.0, kappa / e)
    return out if out.ndim else float(out)


class _Block:
    __slots__ = ("value", "so3", "constant", "local_dim")

    def __init__(self, value, so3, constant):
        self.value = np.array(value, dtype=float)
        self.so3 = so3
        self.constant = constant
        self.local_dim = 3 if so3 else self.value.size


class _Family:
    def __init__(self, slots, indices, fn, dim, sqrt_info, robust):
        self.slots = [list(s) for s in slots]
        self.indices = [np.asarray(ix, dtype=int) for ix in indices]
        self.fn = fn
        self.dim = dim
        self.sqrt_info = sqrt_info
        self.robust = robust
        self.n = self.indices[0].shape[0]


class Problem:
    """Container for parameter blocks and residual families."""

    def __init__(self):
        self.blocks: list[_Block] = []
        self.families: list[_Family] = []

    def add_parameter(self, value, so3: bool = False, constant: bool = False) -> int:
        value = np.asarray(value, dtype=float)
        if so3 and value.shape != (3, 3):
            raise ValueError("SO(3) blocks take a 3x3 rotation matrix")
        self.blocks.append(_Block(value, so3, constant))
        return len(self.blocks) - 1

    def add_residual_family(self, slots, indices, fn, dim: int = 2, sigma=None, robust: bool = False):
        """Register N measurements sharing one vectorized callback.

        slots: per slot, the list of candidate block ids.
        indices: per slot, an (N,) index array into that list.
        fn(values, want_jac): values[s] is the gathered (N, ...) array for
        slot s; returns (res (N, dim), jacs) with jacs[s] of shape
        (N, dim, local_dim) or None for slots without derivatives.
        """
        sqrt_info = None
        if sigma is not None:
            sigma = np.asarray(sigma, dtype=float)
            sqrt_info = np.linalg.inv(np.linalg.cholesky(sigma))
        fam = _Family(slots, indices, fn, dim, sqrt_info, robust)
        if len({ix.shape[0] for ix in fam.indices}) != 1:
            raise ValueError("slot index arrays disagree on measurement count")
        self.families.append(fam)

    def add_residual(self, block_ids, fn, dim: int = 2, sigma=None, robust: bool = False):
        """Single measurement: fn(*values) -> (res (dim,), [jac (dim, local)])."""

        def batched(values, want_jac):
            res, jacs = fn(*[v[0] for v in values])
            res = np.asarray(res, dtype=float).reshape(1, dim)
            if not want_jac:
                return res, None
            out = []
            for J in jacs:
                out.append(None if J is None else np.asarray(J, dtype=float)[None, ...])
            return res, out

        slots = [[b] for b in block_ids]
        indices = [np.zeros(1, dtype=int) for _ in block_ids]
        self.add_residual_family(slots, indices, batched, dim=dim, sigma=sigma, robust=robust)

    @property
    def n_residuals(self) -> int:
        return sum(f.n * f.dim for f in self.families)

    def block_value(self, block_id: int) -> np.ndarray:
        return self.blocks[block_id].value.copy()

    def set_block_value(self, block_id: int, value) -> None:
        self.blocks[block_id].value = np.array(value, dtype=float)


def _gather(values, fam: _Family):
    out = []
    for slot_blocks, idx in zip(fam.slots, fam.indices):
        stacked = np.stack([values[b] for b in slot_blocks])
        out.append(stacked[idx])
    return out


def _family_cost(fam: _Family, values, kappa, want_jac=False):
    res, jacs = fam.fn(_gather(values, fam), want_jac)
    if fam.sqrt_info is not None:
        res = res @ fam.sqrt_info.T
        if want_jac and jacs is not None:
            jacs = [None if J is None else np.einsum("ab,kbc->kac", fam.sqrt_info, J) for J in jacs]
    s = np.sum(res * res, axis=1)
    cost = float(np.sum(huber_cost(s, kappa))) if fam.robust else float(np.sum(s))
    return cost, res, jacs, s


def _total_cost(problem, values, kappa):
    total = 0.0
    for fam in problem.families:
        c, *_ = _family_cost(fam, values, kappa)
        total += c
    return total


def _retract(problem, values, delta, offsets):
    new_values = []
    for b_id, block in enumerate(problem.blocks):
        off = offsets[b_id]
        if off is None:
            new_values.append(values[b_id])
            continue
        d = delta[off : off + block.local_dim]
        if block.so3:
            new_values.append(values[b_id] @ exact_rotation(d))
        else:
            new_values.append(values[b_id] + d)
    return new_values


def solve(problem: Problem, cfg: LmConfig = LmConfig(), on_accept=None) -> SolveReport:
    """Minimize the robust total cost; returns the solve report.

    Final block values are written back into the problem. ``on_accept`` is
    called as on_accept(values, iteration, cost) after every accepted step.
    """
    offsets: list = []
    p = 0
    for block in problem.blocks:
        if block.constant:
            offsets.append(None)
        else:
            offsets.append(p)
            p += block.local_dim
    if p == 0:
        raise ValueError("no free parameters")

    # static scatter indices per family
    scatter = []
    for fam in problem.families:
        rows = []
        for slot_blocks, idx in zip(fam.slots, fam.indices):
            block_off = np.array(
                [-1 if offsets[b] is None else offsets[b] for b in slot_blocks], dtype=int
            )
            off = block_off[idx]  # (N,)
            if np.any(off < 0) and not np.all(off < 0):
                # mixed free/constant inside one slot: handled per-measurement mask
                pass
            dims = problem.blocks[slot_blocks[0]].local_dim
            rows.append((off, dims))
        scatter.append(rows)

    values = [b.value.copy() for b in problem.blocks]
    try:
        cost = _total_cost(problem, values, cfg.huber_kappa)
    except EvaluationRejected as exc:
        raise NumericalFailure(f"initial state not evaluable: {exc}") from exc
    if not np.isfinite(cost):
        raise NumericalFailure("non-finite cost at the initial state")

    trace = [cost]
    lam = cfg.initial_lambda
    reason = "max-iterations"
    gnorm = np.nan
    iterations = 0

    for it in range(1, cfg.max_iterations + 1):
        iterations = it
        H = np.zeros((p, p))
        g = np.zeros(p)
        Hflat = H.ravel()
        for fam, rows in zip(problem.families, scatter):
            _, res, jacs, s = _family_cost(fam, values, cfg.huber_kappa, want_jac=True)
            if jacs is None:
                raise NumericalFailure("family returned no Jacobians")
            w = huber_weight(s, cfg.huber_kappa) if fam.robust else np.ones_like(s)
            sw = np.sqrt(w)
            res_w = res * sw[:, None]
            for si, (off_s, ds) in enumerate(rows):
                J_s = jacs[si]
                if J_s is None:
                    continue
                if not np.all(np.isfinite(J_s)):
                    raise NumericalFailure("non-finite Jacobian at an accepted state")
                J_s = J_s * sw[:, None, None]
                free = off_s >= 0
                if not np.any(free):
                    continue
                rows_s = off_s[:, None] + np.arange(ds)[None, :]  # (N, ds)
                gi = np.einsum("kai,ka->ki", J_s, res_w)
                np.add.at(g, rows_s[free], gi[free])
                for ti, (off_t, dt) in enumerate(rows):
                    J_t = jacs[ti]
                    if J_t is None:
                        continue
                    both = free & (off_t >= 0)
                    if not np.any(both):
                        continue
                    J_t = J_t * sw[:, None, None]
                    rows_t = off_t[:, None] + np.arange(dt)[None, :]
                    Hblk = np.einsum("kai,kaj->kij", J_s, J_t)
                    flat = rows_s[both][:, :, None] * p + rows_t[both][:, None, :]
                    np.add.at(Hflat, flat, Hblk[both])

        if not np.all(np.isfinite(g)):
            raise NumericalFailure("non-finite gradient")
        gnorm = float(np.abs(g).max())
        if gnorm <= cfg.gradient_tol:
            reason = "converged-gradient"
            iterations = it - 1  # no step taken in this pass
            break

        D = np.maximum(np.diag(H), DIAG_FLOOR)
        accepted = False
        stop = None
        while True:
            Hd = H + np.diag(lam * D)
            try:
                chol = scipy.linalg.cho_factor(Hd, check_finite=False)
                delta = scipy.linalg.cho_solve(chol, -g, check_finite=False)
                solved = bool(np.all(np.isfinite(delta)))
            except scipy.linalg.LinAlgError:
                solved = False
            if solved:
                candidate = _retract(problem, values, delta, offsets)
                try:
                    new_cost = _total_cost(problem, candidate, cfg.huber_kappa)
                except EvaluationRejected:
                    new_cost = np.inf
                if np.isfinite(new_cost) and new_cost < cost:
                    prev = cost
                    values = candidate
                    cost = new_cost
                    lam = max(lam * cfg.lambda_down, cfg.min_lambda)
                    trace.append(cost)
                    if on_accept is not None:
                        on_accept(values, it, cost)
                    if prev - cost <= cfg.cost_tol_abs + cfg.cost_tol_rel * prev:
                        stop = "converged-cost"
                    accepted = True
                    break
            lam *= cfg.lambda_up
            if lam > cfg.max_lambda:
                stop = "diverged"
                break
        if stop is not None:
            reason = stop
            break
        if not accepted:
            reason = "diverged"
            break

    for b_id, block in enumerate(problem.blocks):
        block.value = values[b_id]

    return SolveReport(
        initial_cost=trace[0],
        final_cost=cost,
        iterations=iterations,
        termination_reason=reason,
        cost_trace=trace,
        gradient_norm=gnorm,
        final_lambda=lam,
        n_residuals=problem.n_residuals,
        n_free_parameters=p,
    )


def gauss_newton_matrix(problem: Problem, kappa: float = np.inf) -> np.ndarray:
    """Undamped normal-equations matrix J^T W J at the current state.

    Diagnostic helper: near-null eigenvectors of the returned matrix expose
    gauge freedoms (directions the residuals leave unconstrained). Rows and
    columns cover free blocks in id order, SO(3) blocks contributing their
    3-dim tangent. ``kappa`` applies Huber IRLS weights to robust families;
    the default leaves every measurement at full weight.
    """
    offsets: list = []
    p = 0
    for block in problem.blocks:
        if block.constant:
            offsets.append(None)
        else:
            offsets.append(p)
            p += block.local_dim
    H = np.zeros((p, p))
    Hflat = H.ravel()
    values = [b.value.copy() for b in problem.blocks]
    for fam in problem.families:
        _, res, jacs, s = _family_cost(fam, values, kappa, want_jac=True)
        w = huber_weight(s, kappa) if fam.robust else np.ones_like(s)
        sw = np.sqrt(w)
        rows = []
        for slot_blocks, idx in zip(fam.slots, fam.indices):
            block_off = np.array(
                [-1 if offsets[b] is None else offsets[b] for b in slot_blocks], dtype=int
            )
            rows.append((block_off[idx], problem.blocks[slot_blocks[0]].local_dim))
        for si, (off_s, ds) in enumerate(rows):
            if jacs[si] is None:
                continue
            J_s = jacs[si] * sw[:, None, None]
            free = off_s >= 0
            if not np.any(free):
                continue
            rows_s = off_s[:, None] + np.arange(ds)[None, :]
            for ti, (off_t, dt) in enumerate(rows):
                if jacs[ti] is None:
                    continue
                both = free & (off_t >= 0)
                if not np.any(both):
                    continue
                J_t = jacs[ti] * sw[:, None, None]
                rows_t = off_t[:, None] + np.arange(dt)[None, :]
                Hblk = np.einsum("kai,kaj->kij", J_s, J_t)
                flat = rows_s[both][:, :, None] * p + rows_t[both][:, None, :]
                np.add.at(Hflat, flat, Hblk[both])
    return H


def check_jacobians(problem: Problem, eps: float = 1e-6) -> dict:
    """Max relative error between analytic and central-difference Jacobians.

    Returns {block_id: error} over all families touching each block. SO(3)
    blocks are perturbed on the manifold through the retraction, matching
    the tangent-space convention of the analytic Jacobians.
    """
    values = [b.value.copy() for b in problem.blocks]
    errors: dict = {}

    for fam in problem.families:
        _, jacs = fam.fn(_gather(values, fam), True)
        for si, slot_blocks in enumerate(fam.slots):
            J_an = jacs[si]
            if J_an is None:
                continue
            dims = problem.blocks[slot_blocks[0]].local_dim
            J_fd = np.empty_like(np.asarray(J_an, dtype=float))
            for c in range(dims):
                step = np.zeros(dims)
                step[c] = eps
                plus = list(values)
                minus = list(values)
                for b in slot_blocks:
                    if problem.blocks[b].so3:
                        plus[b] = values[b] @ exact_rotation(step)
                        minus[b] = values[b] @ exact_rotation(-step)
                    else:
                        plus[b] = values[b] + step
                        minus[b] = values[b] - step
                r_p, _ = fam.fn(_gather(plus, fam), False)
                r_m, _ = fam.fn(_gather(minus, fam), False)
                J_fd[:, :, c] = (r_p - r_m) / (2.0 * eps)
            scale = max(1.0, float(np.abs(J_an).max()), float(np.abs(J_fd).max()))
            err_k = np.abs(J_an - J_fd).max(axis=(1, 2)) / scale  # (N,)
            for b_local, b in enumerate(slot_blocks):
                mask = fam.indices[si] == b_local
                if np.any(mask):
                    e = float(err_k[mask].max())
                    errors[b] = max(errors.get(b, 0.0), e)
    return errors
