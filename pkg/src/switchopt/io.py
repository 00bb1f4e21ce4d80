"""JSON and CSV serialization for models, certificates, and results.

Matrices are row-major nested arrays of finite doubles; mode indices in
files are 1-based.  Plant files carry the two-port blocks, system files
the flat quadruples; ``load_model`` tells them apart by their keys and
also resolves names of bundled benchmark models.
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .analysis import RateCertificate, RegulationWitness
from .errors import InvalidModelError
from .model import (
    ModeRealization,
    PlantMode,
    SwitchedPlant,
    SwitchedSystem,
    SwitchingGraph,
)
from .transforms import FilterCoefficients

__all__ = [
    "graph_to_dict",
    "graph_from_dict",
    "save_system",
    "load_system",
    "save_plant",
    "load_plant",
    "load_model",
    "save_certificate",
    "load_certificate",
    "save_synthesis_result",
    "load_controller",
    "write_csv",
    "bundled_model_names",
]

_PLANT_FIELDS = ["A", "B1", "B2", "C1", "C2", "D11", "D12", "D21", "D22"]


def _mat(M) -> list:
    return np.asarray(M, dtype=float).tolist()


def graph_to_dict(g: SwitchingGraph) -> dict:
    out = {"num_modes": g.num_modes, "edges": [[a, b] for a, b in g.sorted_edges()]}
    if g.labels is not None:
        out["labels"] = list(g.labels)
    return out


def graph_from_dict(d: dict) -> SwitchingGraph:
    labels = d.get("labels")
    return SwitchingGraph(int(d["num_modes"]),
                          frozenset((int(a), int(b)) for a, b in d["edges"]),
                          labels=tuple(labels) if labels is not None else None)


def save_system(sys: SwitchedSystem, path) -> None:
    doc = {
        "kind": "switched_system",
        "modes": [{"A": _mat(m.A), "B": _mat(m.B), "C": _mat(m.C), "D": _mat(m.D)}
                  for m in sys.modes],
        "graph": graph_to_dict(sys.graph),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def system_from_dict(doc: dict) -> SwitchedSystem:
    modes = tuple(ModeRealization(m["A"], m["B"], m["C"], m["D"])
                  for m in doc["modes"])
    return SwitchedSystem(modes, graph_from_dict(doc["graph"]))


def load_system(path) -> SwitchedSystem:
    return system_from_dict(json.loads(Path(path).read_text()))


def save_plant(plant: SwitchedPlant, path) -> None:
    doc = {
        "kind": "switched_plant",
        "modes": [{f: _mat(getattr(m, f)) for f in _PLANT_FIELDS}
                  for m in plant.modes],
        "graph": graph_to_dict(plant.graph),
        "dims": {"n": plant.n, "d": plant.d, "nu": plant.n_u, "ny": plant.n_y},
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def plant_from_dict(doc: dict) -> SwitchedPlant:
    modes = tuple(PlantMode(*[m[f] for f in _PLANT_FIELDS]) for m in doc["modes"])
    plant = SwitchedPlant(modes, graph_from_dict(doc["graph"]))
    dims = doc.get("dims")
    if dims and (plant.n, plant.d, plant.n_u, plant.n_y) != (
            dims["n"], dims["d"], dims["nu"], dims["ny"]):
        raise InvalidModelError("declared dims disagree with the blocks")
    return plant


def load_plant(path) -> SwitchedPlant:
    return plant_from_dict(json.loads(Path(path).read_text()))


def bundled_model_names() -> list:
    files = resources.files("switchopt").joinpath("data")
    return sorted(p.name[: -len(".json")] for p in files.iterdir()
                  if p.name.endswith(".json"))


def load_model(spec: str):
    """Load a plant or system from a path or a bundled model name."""
    path = Path(spec)
    if not path.exists():
        candidate = resources.files("switchopt").joinpath(f"data/{spec}.json")
        if candidate.is_file():
            doc = json.loads(candidate.read_text())
            return (plant_from_dict(doc) if doc.get("kind") == "switched_plant"
                    else system_from_dict(doc))
        raise InvalidModelError(
            f"no file {spec!r} and no bundled model of that name "
            f"(available: {', '.join(bundled_model_names())})")
    doc = json.loads(path.read_text())
    kind = doc.get("kind", "switched_plant" if "dims" in doc else "switched_system")
    if kind == "switched_plant":
        return plant_from_dict(doc)
    return system_from_dict(doc)


def save_certificate(cert: RateCertificate, path) -> None:
    doc = {
        "kind": "rate_certificate",
        "rho": cert.rho,
        "lambda": list(map(float, cert.lam.lam)),
        "storages": [_mat(M) for M in cert.storages],
        "witness": [_mat(t) for t in cert.witness.theta],
        "witness_residual": cert.witness.residual,
        "margin": cert.margin,
        "common_storage": cert.common_storage,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_certificate(path) -> RateCertificate:
    doc = json.loads(Path(path).read_text())
    witness = RegulationWitness(tuple(np.asarray(t) for t in doc["witness"]),
                                doc["witness_residual"])
    return RateCertificate(doc["rho"], FilterCoefficients(doc["lambda"]),
                           tuple(np.asarray(M) for M in doc["storages"]),
                           witness, doc["margin"], doc["common_storage"])


def save_synthesis_result(result, path) -> None:
    doc = {
        "kind": "synthesized_controller",
        "rho": result.rho,
        "lambda": list(map(float, result.lam.lam)),
        "margin": result.margin,
        "common_storage": result.common_storage,
        "controller": {
            "modes": [{"A": _mat(m.A), "B": _mat(m.B), "C": _mat(m.C),
                       "D": _mat(m.D)} for m in result.controller.modes],
            "graph": graph_to_dict(result.controller.graph),
        },
        "subcontroller": [
            {"A": _mat(m.A), "B": _mat(m.B), "C1": _mat(m.C1), "D1": _mat(m.D1),
             "C2": _mat(m.C2), "D2": _mat(m.D2)}
            for m in result.subcontroller.modes
        ],
        "regulator": {
            "Pi": [_mat(P) for P in result.regulator.Pi],
            "Gamma": [_mat(G) for G in result.regulator.Gamma],
            "Phi": [_mat(F) for F in result.regulator.Phi],
            "residual": result.regulator.residual,
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_controller(path) -> SwitchedSystem:
    doc = json.loads(Path(path).read_text())
    return system_from_dict(doc["controller"] if "controller" in doc else doc)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
