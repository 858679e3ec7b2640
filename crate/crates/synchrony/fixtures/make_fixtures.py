#!/usr/bin/env python3
"""Offline generator for the grid fixtures shipped with this crate.

ieee39.grid conversion choices (see also fixtures/NOTES.md):
  - topology and branch reactances follow the 39-bus New England case
    (46 branches); couplings are k_ij = 1/x_ij on a 100 MVA base with
    flat voltage profile |V| = 1.
  - net injections are generator dispatch minus bus load in per unit;
    the bus-31 machine balances the lossless system exactly.
  - the fixture is shipped in normalized form (alpha, power, k), with a
    uniform effective inertia absorbed into the couplings; damping is
    0.25 1/s at generator buses and 0.8 1/s at the rest.
"""
import json
from pathlib import Path

HERE = Path(__file__).parent


def write(name, doc):
    text = json.dumps(doc, indent=2) + "\n"
    (HERE / name).write_text(text)
    print(name, "nodes:", len(doc["nodes"]), "edges:", len(doc["edges"]))


def node(i, alpha, power, label=None):
    d = {"id": i, "alpha": alpha, "power": power}
    d["label"] = label if label is not None else str(i)
    return d


# --- two_node -------------------------------------------------------------
write("two_node.grid", {
    "version": 1,
    "name": "two_node",
    "omega_syn": 1.0,
    "nodes": [node(0, 0.5, 0.5), node(1, 0.5, -0.5)],
    "edges": [{"from": 0, "to": 1, "k": 1.0}],
})

# --- ten_node synthetic ---------------------------------------------------
# Ring of ten machines with two chords; alternating generator/load pattern.
edges = [(i, (i + 1) % 10) for i in range(10)] + [(0, 5), (2, 7)]
write("ten_node.grid", {
    "version": 1,
    "name": "ten_node",
    "omega_syn": 1.0,
    "nodes": [node(i, 0.2, 0.5 if i % 2 == 0 else -0.5) for i in range(10)],
    "edges": [{"from": a, "to": b, "k": 2.0} for a, b in sorted(set(map(lambda e: tuple(sorted(e)), edges)))],
})

# --- ieee39 ---------------------------------------------------------------
# Branches: (from_bus, to_bus, x) with 1-based bus numbers.
branches = [
    (1, 2, 0.0411), (1, 39, 0.0250), (2, 3, 0.0151), (2, 25, 0.0086),
    (2, 30, 0.0181), (3, 4, 0.0213), (3, 18, 0.0133), (4, 5, 0.0128),
    (4, 14, 0.0129), (5, 6, 0.0026), (5, 8, 0.0112), (6, 7, 0.0092),
    (6, 11, 0.0082), (6, 31, 0.0250), (7, 8, 0.0046), (8, 9, 0.0363),
    (9, 39, 0.0250), (10, 11, 0.0043), (10, 13, 0.0043), (10, 32, 0.0200),
    (11, 12, 0.0435), (12, 13, 0.0435), (13, 14, 0.0101), (14, 15, 0.0217),
    (15, 16, 0.0094), (16, 17, 0.0089), (16, 19, 0.0195), (16, 21, 0.0135),
    (16, 24, 0.0059), (17, 18, 0.0082), (17, 27, 0.0173), (19, 20, 0.0138),
    (19, 33, 0.0142), (20, 34, 0.0180), (21, 22, 0.0140), (22, 23, 0.0096),
    (22, 35, 0.0143), (23, 24, 0.0350), (23, 36, 0.0272), (25, 26, 0.0323),
    (25, 37, 0.0232), (26, 27, 0.0147), (26, 28, 0.0474), (26, 29, 0.0625),
    (28, 29, 0.0151), (29, 38, 0.0156),
]
assert len(branches) == 46

loads = {  # MW
    3: 322.0, 4: 500.0, 7: 233.8, 8: 522.0, 12: 8.5, 15: 320.0,
    16: 329.4, 18: 158.0, 20: 680.0, 21: 274.0, 23: 247.5, 24: 308.6,
    25: 224.0, 26: 139.0, 27: 281.0, 28: 206.0, 29: 283.5, 31: 9.2,
    39: 1104.0,
}
gens = {  # MW, bus 31 filled in below to balance the lossless system
    30: 250.0, 32: 650.0, 33: 632.0, 34: 508.0, 35: 650.0,
    36: 560.0, 37: 540.0, 38: 830.0, 39: 1000.0,
}
gens[31] = sum(loads.values()) - sum(gens.values())
assert gens[31] > 0

COUPLING_SCALE = 1.0  # k = 1/x, 100 MVA base
nodes = []
for bus in range(1, 40):
    p = (gens.get(bus, 0.0) - loads.get(bus, 0.0)) / 100.0
    alpha = 0.25 if bus in gens else 0.8
    nodes.append(node(bus - 1, alpha, round(p, 12), f"bus{bus}"))

write("ieee39.grid", {
    "version": 1,
    "name": "ieee39",
    "omega_syn": 376.9911184307752,
    "nodes": nodes,
    "edges": [
        {"from": a - 1, "to": b - 1, "k": round(COUPLING_SCALE / x, 10)}
        for a, b, x in branches
    ],
})
