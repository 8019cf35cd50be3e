"""Micro-benchmark comparing the compiled and NumPy kernel backends.

Runs an identical contact-rich workload through each available backend,
times it, and cross-checks that both produce the same trajectory bit for bit
(reported as a checksum of the final state arrays).
"""

import hashlib
import time

import numpy as np

from . import _kernels
from .config import SimConfig
from .morphology import build_morphology
from .simcore import SimBatch, nominal_state
from .terrain import build_arena

__all__ = ["run_benchmark", "format_table"]


def _state_checksum(batch: SimBatch) -> str:
    h = hashlib.sha256()
    for name in ("pos", "quat", "linvel", "angvel", "q", "qd",
                 "foot_contact", "foot_air", "anchor"):
        h.update(np.ascontiguousarray(getattr(batch, name)).tobytes())
    return h.hexdigest()[:16]


def run_benchmark(n_envs: int = 64, n_control: int = 50,
                  variant: str = "conventional", terrain_kind: str = "rough_slope",
                  level: int = 6, repeat: int = 3) -> dict:
    """Time `n_control` control periods (20 substeps each) per backend."""
    spec = build_morphology(variant)
    arena = build_arena([[(terrain_kind, level)]], seeds=21)
    sim_cfg = SimConfig()
    rng = np.random.default_rng(0)
    init_states = []
    for i in range(n_envs):
        s = nominal_state(spec, arena, xy=(2.0 + 4.0 * (i % 2), 4.0))
        s.base_lin_vel = rng.uniform(-0.5, 0.5, 3)
        init_states.append(s)
    target_seq = spec.nominal_q[None, None, :] + 0.2 * np.sin(
        0.3 * np.arange(n_control)[:, None, None] + np.arange(spec.dof)[None, None, :]
    ) * np.ones((1, n_envs, 1))

    results = []
    for name in _kernels.available_backends():
        step_fn, _ = _kernels.get_backend(name)
        best = np.inf
        checksum = None
        for _ in range(repeat):
            batch = SimBatch(spec, arena, n_envs, sim_cfg=sim_cfg)
            batch._kernel = step_fn
            for i, s in enumerate(init_states):
                batch.write_state(i, s)
            t0 = time.perf_counter()
            for k in range(n_control):
                batch.step_control(target_seq[k])
            elapsed = time.perf_counter() - t0
            best = min(best, elapsed)
            checksum = _state_checksum(batch)
        results.append({
            "backend": name,
            "seconds": best,
            "control_steps_per_s": n_control * n_envs / best,
            "substeps_per_s": n_control * n_envs * sim_cfg.control_decimation / best,
            "state_checksum": checksum,
        })

    report = {
        "workload": {
            "n_envs": n_envs,
            "n_control_steps": n_control,
            "substeps_per_control": sim_cfg.control_decimation,
            "variant": variant,
            "terrain": f"{terrain_kind} L{level}",
            "repeat": repeat,
        },
        "results": results,
    }
    if len(results) == 2:
        slow = max(r["seconds"] for r in results)
        fast = min(r["seconds"] for r in results)
        report["speedup"] = slow / fast
        report["bit_identical"] = len({r["state_checksum"] for r in results}) == 1
    return report


def format_table(report: dict) -> str:
    w = report["workload"]
    lines = [
        f"workload: {w['n_envs']} envs x {w['n_control_steps']} control steps "
        f"x {w['substeps_per_control']} substeps, {w['variant']} on {w['terrain']}",
        f"{'backend':<10} {'seconds':>10} {'env-steps/s':>14} {'substeps/s':>14} {'checksum':>18}",
    ]
    for r in report["results"]:
        lines.append(
            f"{r['backend']:<10} {r['seconds']:>10.4f} {r['control_steps_per_s']:>14.0f} "
            f"{r['substeps_per_s']:>14.0f} {r['state_checksum']:>18}"
        )
    if "speedup" in report:
        lines.append(f"speedup: {report['speedup']:.1f}x   "
                     f"bit-identical: {report['bit_identical']}")
    return "\n".join(lines)
