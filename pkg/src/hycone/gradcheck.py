"""Gradient verification suites: per-primitive checks against central
finite differences, and end-to-end checks of the training objective.

End-to-end sample points whose forward pass runs within a margin of any
clamp or hinge boundary are skipped (the analytic subgradient and the
two-sided difference legitimately disagree there); replacement seeds are
drawn from a deterministic stream.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import PRIMITIVES, GradReport, Tape, boundary_monitor, finite_diff, make_report
from .losses import SimilarityMode, objective

BOUNDARY_MARGIN = 1e-3
END_TO_END_RTOL = 1e-4
END_TO_END_ATOL = 1e-6
PRIMITIVE_RTOL = 1e-6
PRIMITIVE_ATOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    report: GradReport


# ---------------------------------------------------------------------------
# Per-primitive checks
# ---------------------------------------------------------------------------

def _flatten(arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays]) if arrays else np.zeros(0)


def _unflatten(flat: np.ndarray, like: list[np.ndarray]) -> list[np.ndarray]:
    out, off = [], 0
    for a in like:
        out.append(flat[off:off + a.size].reshape(a.shape))
        off += a.size
    return out


def check_primitive(name: str, points: int = 100, seed: int = 0,
                    rtol: float = PRIMITIVE_RTOL, atol: float = PRIMITIVE_ATOL) -> CheckResult:
    """Check one registered primitive at `points` random sample points."""
    prim = PRIMITIVES[name]
    rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
    worst: GradReport | None = None
    ok = True
    for _ in range(points):
        inputs, params = prim.sample(rng)
        inputs = [np.asarray(a, dtype=np.float64) for a in inputs]

        def f(flat):
            args = _unflatten(flat, inputs)
            return float(np.sum(prim.forward(*args, **params)))

        # analytic path: one var per input on a fresh tape
        tape = Tape()
        nodes = [tape.var(a) for a in inputs]
        out = ad.sum(ad.apply_op(name, *nodes, **params))
        grads = tape.backward(out)
        analytic = _flatten([grads[n.idx] for n in nodes])
        numeric = finite_diff(f, _flatten(inputs))
        rep = make_report(analytic, numeric)
        if worst is None or rep.max_abs_err > worst.max_abs_err:
            worst = rep
        if not rep.within(rtol, atol):
            ok = False
    assert worst is not None
    return CheckResult(name=f"primitive/{name}", passed=ok, report=worst)


def check_all_primitives(points: int = 100, seed: int = 0) -> list[CheckResult]:
    return [check_primitive(name, points=points, seed=seed) for name in sorted(PRIMITIVES)]


# ---------------------------------------------------------------------------
# End-to-end objective checks
# ---------------------------------------------------------------------------

def _sample_case(seed: int, batch: int, dim: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    imgs = rng.standard_normal((batch, dim))
    txts = rng.standard_normal((batch, dim))
    scalars = np.array(
        [
            np.log(1.0 / 0.07) + 0.1 * rng.standard_normal(),
            0.1 * rng.standard_normal(),                        # log c near 0
            np.log(1.0 / np.sqrt(dim)) + 0.1 * rng.standard_normal(),
            np.log(1.0 / np.sqrt(dim)) + 0.1 * rng.standard_normal(),
        ]
    )
    return imgs, txts, scalars


def total_loss_report(seed: int, mode: SimilarityMode, entail_weight: float,
                      batch: int = 4, dim: int = 8, h: float = 1e-5) -> GradReport | None:
    """Gradient report of the objective w.r.t. encoder outputs and the four
    log scalars; None if the point lies within the boundary margin."""
    imgs, txts, scalars = _sample_case(seed, batch, dim)

    def run(img_rows, txt_rows, sc):
        total, _, _ = objective(
            img_rows, txt_rows, sc[0], sc[1], sc[2], sc[3],
            mode=mode, entail_weight=entail_weight, cone_boundary=0.1,
        )
        return total

    with boundary_monitor() as rec:
        run(imgs, txts, scalars)
    if rec.min_margin < BOUNDARY_MARGIN:
        return None

    tape = Tape()
    vi, vt = tape.var(imgs), tape.var(txts)
    vs = [tape.var(s) for s in scalars]
    out = run(vi, vt, vs)
    grads = tape.backward(out)
    analytic = np.concatenate(
        [grads[vi.idx].ravel(), grads[vt.idx].ravel()]
        + [np.atleast_1d(grads[v.idx]) for v in vs]
    )

    sizes = (imgs.size, txts.size)

    def f(flat):
        fi = flat[: sizes[0]].reshape(imgs.shape)
        ft = flat[sizes[0]: sizes[0] + sizes[1]].reshape(txts.shape)
        sc = flat[sizes[0] + sizes[1]:]
        return float(np.asarray(run(fi, ft, sc)))

    numeric = finite_diff(f, np.concatenate([imgs.ravel(), txts.ravel(), scalars]), h=h)
    return make_report(analytic, numeric)


def check_total_loss(seeds: int = 20, batch: int = 4, dim: int = 8,
                     rtol: float = END_TO_END_RTOL, atol: float = END_TO_END_ATOL,
                     ) -> list[CheckResult]:
    """Objective gradcheck over both hyperbolic similarity modes and
    entailment weights {0, 0.2}, at `seeds` admissible random points each."""
    results = []
    for mode in (SimilarityMode.NEG_LORENTZ_DISTANCE, SimilarityMode.LORENTZ_INNER):
        for lam in (0.0, 0.2):
            collected = 0
            candidate = 0
            worst: GradReport | None = None
            ok = True
            while collected < seeds:
                rep = total_loss_report(candidate, mode, lam, batch=batch, dim=dim)
                candidate += 1
                if candidate > 50 * seeds:
                    raise RuntimeError("could not find enough admissible gradcheck points")
                if rep is None:
                    continue
                collected += 1
                if worst is None or rep.max_abs_err > worst.max_abs_err:
                    worst = rep
                if not rep.within(rtol, atol):
                    ok = False
            assert worst is not None
            results.append(
                CheckResult(
                    name=f"total_loss/{mode.value}/entail_weight={lam}",
                    passed=ok,
                    report=worst,
                )
            )
    return results


def run_suite(points: int = 100, seeds: int = 20, verbose: bool = True) -> bool:
    """Full gradient suite; returns True when every check passes."""
    results = check_all_primitives(points=points) + check_total_loss(seeds=seeds)
    all_ok = True
    for r in results:
        all_ok &= r.passed
        if verbose:
            status = "ok" if r.passed else "FAIL"
            print(
                f"[{status}] {r.name}: max_abs_err={r.report.max_abs_err:.3e} "
                f"max_rel_err={r.report.max_rel_err:.3e}"
            )
    return all_ok
