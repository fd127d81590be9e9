"""Randomized IDA vs. conjugate-gradient comparison on spring systems."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .springs import generate_random_system, solve_cgd, solve_ida

SOLVERS = ("IDA", "CGD")
TABLE_COLUMNS = (
    "size",
    "solver",
    "mean_iters",
    "std_iters",
    "mean_time_s",
    "mean_final_energy",
    "degenerate_count",
)


@dataclass
class TrialRecord:
    size: int
    trial: int
    ida: object
    cgd: object
    degenerate: bool

    @property
    def relative_gap(self):
        """|E_IDA - E_CGD| / max(E_CGD, 1e-12)."""
        return abs(self.ida.final_energy - self.cgd.final_energy) / max(self.cgd.final_energy, 1e-12)


@dataclass
class BenchmarkResult:
    records: list = field(default_factory=list)
    degenerate_factor: float = 10.0

    def for_size(self, size, include_degenerate=False):
        return [r for r in self.records if r.size == size and (include_degenerate or not r.degenerate)]

    @property
    def sizes(self):
        return sorted({r.size for r in self.records})

    def iterations(self, size, solver):
        return np.array([getattr(r, solver.lower()).iterations for r in self.for_size(size)])

    def wall_times(self, size, solver):
        return np.array([getattr(r, solver.lower()).wall_time for r in self.for_size(size)])

    def table(self):
        """One row per (size, solver); statistics exclude degenerate trials."""
        rows = []
        for size in self.sizes:
            kept = self.for_size(size)
            n_deg = len(self.for_size(size, include_degenerate=True)) - len(kept)
            for solver in SOLVERS:
                reports = [getattr(r, solver.lower()) for r in kept]
                iters = np.array([rep.iterations for rep in reports], dtype=float)
                rows.append(
                    {
                        "size": size,
                        "solver": solver,
                        "mean_iters": float(iters.mean()) if len(iters) else float("nan"),
                        "std_iters": float(iters.std()) if len(iters) else float("nan"),
                        "mean_time_s": float(np.mean([rep.wall_time for rep in reports])) if reports else float("nan"),
                        "mean_final_energy": float(np.mean([rep.final_energy for rep in reports])) if reports else float("nan"),
                        "degenerate_count": n_deg,
                    }
                )
        return rows

    def mean_trace(self, size, solver):
        """Per-iteration energy averaged over non-degenerate trials.

        Runs that stopped early are padded with their final energy.
        """
        traces = [getattr(r, solver.lower()).energy_trace for r in self.for_size(size)]
        if not traces:
            return np.array([])
        length = max(len(t) for t in traces)
        padded = np.array([np.pad(t, (0, length - len(t)), mode="edge") for t in traces])
        return padded.mean(axis=0)

    def write_table(self, fh):
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, delimiter="\t", lineterminator="\n")
        writer.writeheader()
        for row in self.table():
            writer.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})

    def write_trace(self, fh, size, solver):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "energy"])
        for i, e in enumerate(self.mean_trace(size, solver)):
            writer.writerow([i, f"{e:.10g}"])


def trial_seed(seed, size, trial):
    # one independent stream per (seed, size, trial): results do not depend on run order
    return np.random.SeedSequence([seed, size, trial])


def run_trial(size, trial, seed, tol=1e-3, ida_max_iter=100, cgd_max_iter=5000, degenerate_factor=10.0):
    system = generate_random_system(size, trial_seed(seed, size, trial))
    ida = solve_ida(system, tol=tol, max_iter=ida_max_iter)
    cgd = solve_cgd(system, tol=tol, max_iter=cgd_max_iter)
    degenerate = cgd.final_energy > degenerate_factor * ida.final_energy
    return TrialRecord(size, trial, ida, cgd, degenerate)


def convergence_experiment(
    sizes,
    trials,
    seed=0,
    tol=1e-3,
    ida_max_iter=100,
    cgd_max_iter=5000,
    degenerate_factor=10.0,
):
    """Run both solvers on ``trials`` random systems for every size in ``sizes``.

    A trial is flagged degenerate when CGD ends with more than
    ``degenerate_factor`` times the IDA energy; flagged trials stay in
    ``records`` but are left out of the summary statistics.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    result = BenchmarkResult(degenerate_factor=degenerate_factor)
    for size in sizes:
        for trial in range(trials):
            result.records.append(
                run_trial(size, trial, seed, tol, ida_max_iter, cgd_max_iter, degenerate_factor)
            )
    return result
