"""
Placing parts with a spring system
==================================

Four parts sit at the corners of a square. Each part is tied to the spot
where its own detector fired (a static spring) and to the other parts
(dynamic springs with a preferred length). Minimizing the total spring
energy gives the most plausible placement.
"""

import numpy as np

from dptrack import SpringSystem, energy, solve_cgd, solve_ida

# parts start on a 10 px square
start = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])

# three detectors agree with a 2 px shift to the right; part 3 is fooled
anchors = start + [2.0, 0.0]
anchors[3] += [6.0, 5.0]

links = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
mu = np.linalg.norm(start[links[:, 0]] - start[links[:, 1]], axis=1)

system = SpringSystem(
    dynamic_positions=start,
    anchor_positions=anchors,
    dynamic_springs=links,
    dynamic_stiffness=np.full(len(links), 0.5),
    nominal_lengths=mu,
    static_springs=np.column_stack([np.arange(4), np.arange(4)]),
    # the fooled detector had a weak, spread-out response
    static_stiffness=[1.0, 1.0, 1.0, 0.1],
)

print("energy at the start:", round(energy(system), 3))

ida = solve_ida(system, tol=1e-6, max_iter=500)
cgd = solve_cgd(system, tol=1e-6)
print("IDA:", ida.iterations, "iterations, energy", round(ida.final_energy, 4))
print("CGD:", cgd.iterations, "iterations, energy", round(cgd.final_energy, 4))

# the springs pull part 3 most of the way back toward the square
np.set_printoptions(precision=2, suppress=True)
print("IDA placement:\n", ida.final_positions)
print("part 3 moved", np.round(ida.final_positions[3] - start[3], 2), "instead of", anchors[3] - start[3])

# IDA front-loads its progress: the first few steps do most of the work
trace = np.array(ida.energy_trace)
print("IDA energy over the first 5 steps:", np.round(trace[:5], 3))
