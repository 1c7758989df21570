"""Candidate-set evaluation: validity, uniqueness, internal diversity over
circular-neighborhood fingerprints, and the multi-property success gate.

Binding-affinity and drug-likeness scores themselves come from external
tools; this module owns the thresholds and the aggregation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

from . import smiles_kit
from .smiles_kit import MolGraph


class MetricsError(ValueError):
    pass


class TooFewMolecules(MetricsError):
    def __init__(self, n: int):
        super().__init__(f"internal diversity needs at least 2 molecules, got {n}")


class MissingProperty(MetricsError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing property {name!r}")


MAX_VALENCE = {
    "B": 3, "C": 4, "N": 3, "O": 2, "F": 1,
    "P": 5, "S": 6, "Cl": 1, "Br": 1, "I": 1,
}


def validity(smiles: str) -> bool:
    """Parseable and within the valence table (aromatic bonds count 1.5,
    rounded half-up; allowed valence shifts with formal charge)."""
    try:
        graph = smiles_kit.parse(smiles)
    except smiles_kit.SmilesError:
        return False
    for i, atom in enumerate(graph.atoms):
        if atom.element not in MAX_VALENCE:
            return False
        order_sum = sum(b.order.numeric for _, b in graph.neighbors(i))
        rounded = math.floor(order_sum + 0.5)
        if rounded > max(0, MAX_VALENCE[atom.element] + atom.charge):
            return False
    return True


@dataclass(frozen=True)
class Fingerprint:
    bits: frozenset[int]
    n_bits: int = 2048


def _hash_env(payload: tuple) -> int:
    digest = hashlib.blake2b(repr(payload).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def fingerprint(graph: MolGraph, radius: int = 2, n_bits: int = 2048) -> Fingerprint:
    """Circular fingerprint by iterative neighborhood hashing.

    Initial atom invariant: element, degree, charge, aromatic flag, explicit
    H count.  Each refinement round folds in sorted (bond order, neighbor
    hash) pairs; every environment at every radius sets one bit.
    """
    env = [
        _hash_env(
            (a.element, graph.degree(i), a.charge, a.aromatic, -1 if a.h_count is None else a.h_count)
        )
        for i, a in enumerate(graph.atoms)
    ]
    bits = {h % n_bits for h in env}
    for _ in range(radius):
        nxt = []
        for i in range(len(graph.atoms)):
            nbrs = sorted((b.order.value, env[j]) for j, b in graph.neighbors(i))
            nxt.append(_hash_env((env[i], tuple(nbrs))))
        env = nxt
        bits.update(h % n_bits for h in env)
    return Fingerprint(frozenset(bits), n_bits)


def tanimoto_distance(a: Fingerprint, b: Fingerprint) -> float:
    """1 - |A & B| / |A | B|; two empty fingerprints count as distance 0."""
    union = a.bits | b.bits
    if not union:
        return 0.0
    return 1.0 - len(a.bits & b.bits) / len(union)


def internal_diversity(mols: list[MolGraph], radius: int = 2, n_bits: int = 2048) -> float:
    """Mean pairwise Tanimoto distance over the set's fingerprints."""
    if len(mols) < 2:
        raise TooFewMolecules(len(mols))
    fps = [fingerprint(m, radius, n_bits) for m in mols]
    total = 0.0
    pairs = 0
    for i in range(len(fps)):
        for j in range(i + 1, len(fps)):
            total += tanimoto_distance(fps[i], fps[j])
            pairs += 1
    return total / pairs


@dataclass
class SuccessThresholds:
    vina_dock_max: float = -8.18  # kcal/mol; success needs a strictly lower score
    qed_min: float = 0.25
    sa_min: float = 0.59


REQUIRED_PROPERTIES = ("vina_dock", "qed", "sa")


def mpo_success(props: dict[str, float], thr: SuccessThresholds | None = None) -> bool:
    """Strict multi-property gate on externally supplied scores."""
    thr = thr or SuccessThresholds()
    for name in REQUIRED_PROPERTIES:
        if name not in props:
            raise MissingProperty(name)
    return (
        props["vina_dock"] < thr.vina_dock_max
        and props["qed"] > thr.qed_min
        and props["sa"] > thr.sa_min
    )


@dataclass
class GenerationReport:
    n_candidates: int
    valid_fraction: float
    unique_fraction: float | None
    diversity: float | None
    diversity_note: str
    success_rate: float | None
    rows: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "n_candidates": self.n_candidates,
            "valid_fraction": self.valid_fraction,
            "unique_fraction": self.unique_fraction,
            "diversity": self.diversity,
            "diversity_note": self.diversity_note,
            "success_rate": self.success_rate,
        }

    def to_text(self) -> str:
        lines = [json.dumps({"index": r["index"], "smiles": r["smiles"],
                             "valid": r["valid"], "success": r.get("success")})
                 for r in self.rows]
        lines.append(json.dumps({"summary": self.summary()}))
        return "\n".join(lines) + "\n"


def report(
    candidates: list,
    props: dict[int, dict[str, float]] | None = None,
    thr: SuccessThresholds | None = None,
) -> GenerationReport:
    """Aggregate a candidate set (items need .smiles; sampler ligands do).

    Validity uses the valence-checked gate; uniqueness is by canonical form
    over valid molecules; diversity is over valid molecules; success rate is
    computed only when per-candidate properties are supplied.
    """
    rows = []
    graphs: list[MolGraph] = []
    canon: list[str] = []
    n_success = 0
    n_scored = 0
    for index, cand in enumerate(candidates):
        smiles = cand.smiles if hasattr(cand, "smiles") else str(cand)
        ok = validity(smiles)
        row = {"index": index, "smiles": smiles, "valid": ok}
        if ok:
            graph = smiles_kit.parse(smiles)
            graphs.append(graph)
            canon.append(smiles_kit.canonical_form(graph))
        if props is not None and index in props:
            row["success"] = mpo_success(props[index], thr)
            n_scored += 1
            n_success += bool(row["success"])
        rows.append(row)

    n = len(candidates)
    valid_fraction = len(graphs) / n if n else 0.0
    if graphs:
        unique_fraction = len(set(canon)) / len(graphs)
    else:
        unique_fraction = None
    if len(graphs) >= 2:
        diversity = internal_diversity(graphs)
        note = f"over {len(graphs)} valid molecules"
    else:
        diversity = None
        note = "omitted: fewer than 2 valid molecules"
    success_rate = (n_success / n) if (props is not None and n) else None
    return GenerationReport(
        n_candidates=n,
        valid_fraction=valid_fraction,
        unique_fraction=unique_fraction,
        diversity=diversity,
        diversity_note=note,
        success_rate=success_rate,
        rows=rows,
    )


def read_properties(path: str) -> dict[int, dict[str, float]]:
    """Property file: one "index<TAB>vina_dock<TAB>qed<TAB>sa" line per row."""
    out: dict[int, dict[str, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise MetricsError(f"bad property line: {line!r}")
            out[int(fields[0])] = {
                "vina_dock": float(fields[1]),
                "qed": float(fields[2]),
                "sa": float(fields[3]),
            }
    return out
