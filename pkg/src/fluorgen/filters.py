"""Post-generation screening: staged property filters, Tanimoto-space
clustering, and novelty against a reference set."""

from __future__ import annotations

import concurrent.futures
import random
from dataclasses import dataclass

import numpy as np

from fluorgen.fingerprints import Fingerprint, SolventFeatures, tanimoto
from fluorgen.molgraph import sp2_network_size
from fluorgen.scorers import ScorerKind, score_property
from fluorgen.smiles import parse_smiles

NOVELTY_THRESHOLD = 0.5


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class FilterThresholds:
    sp2_min: int = 12
    plqy_min: float = 0.5
    window_min_nm: float = 420.0
    window_max_nm: float = 750.0


@dataclass(frozen=True)
class FilterReport:
    """Counts per stage. remaining[i] is the population after stage i."""

    stages: tuple[str, ...]
    total: int
    remaining: tuple[int, ...]
    rejected: tuple[int, ...]

    def __post_init__(self):
        if len(self.remaining) != len(self.stages) or len(self.rejected) != len(self.stages):
            raise FilterError("one count per stage required")
        previous = self.total
        for kept, dropped in zip(self.remaining, self.rejected):
            if kept + dropped != previous or dropped < 0:
                raise FilterError("stage counts must be monotone non-increasing")
            previous = kept


FILTER_STAGES = ("sp2_network", "plqy_probability", "absorption_window", "emission_window")


def run_filters(smiles_list, scorers, solvent: SolventFeatures,
                thresholds: FilterThresholds = FilterThresholds()):
    """Apply the four stages in order; a molecule is charged to the first
    stage it fails. Returns (surviving smiles, FilterReport)."""
    survivors = list(smiles_list)
    graphs = {s: parse_smiles(s) for s in survivors}

    def sp2_ok(s):
        return sp2_network_size(graphs[s]) >= thresholds.sp2_min

    def plqy_ok(s):
        prob = score_property(scorers[ScorerKind.PLQY_PROB], graphs[s], solvent)
        return prob >= thresholds.plqy_min

    def absorption_ok(s):
        nm = score_property(scorers[ScorerKind.ABS_NM], graphs[s], solvent)
        return thresholds.window_min_nm <= nm <= thresholds.window_max_nm

    def emission_ok(s):
        nm = score_property(scorers[ScorerKind.EM_NM], graphs[s], solvent)
        return thresholds.window_min_nm <= nm <= thresholds.window_max_nm

    checks = (sp2_ok, plqy_ok, absorption_ok, emission_ok)
    total = len(survivors)
    remaining = []
    rejected = []
    for check in checks:
        kept = [s for s in survivors if check(s)]
        rejected.append(len(survivors) - len(kept))
        remaining.append(len(kept))
        survivors = kept
    report = FilterReport(
        stages=FILTER_STAGES,
        total=total,
        remaining=tuple(remaining),
        rejected=tuple(rejected),
    )
    return tuple(survivors), report


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    labels: tuple[int, ...]
    medoids: tuple[int, ...]  # medoids[c] indexes the clustered sequence
    objective_trace: tuple[float, ...]  # summed point-to-medoid distance per iteration

    def __post_init__(self):
        if len(self.medoids) != self.k:
            raise FilterError("one medoid per cluster required")
        if any(not 0 <= label < self.k for label in self.labels):
            raise FilterError("cluster label out of range")
        for cluster, medoid in enumerate(self.medoids):
            if self.labels[medoid] != cluster:
                raise FilterError("medoid must belong to its own cluster")


def _distance_rows(fingerprints, rows):
    n = len(fingerprints)
    out = np.zeros((len(rows), n))
    for row_pos, i in enumerate(rows):
        for j in range(n):
            if i != j:
                out[row_pos, j] = 1.0 - tanimoto(fingerprints[i], fingerprints[j])
    return out


def distance_matrix(fingerprints, workers: int = 1) -> np.ndarray:
    """Pairwise Jaccard distances 1 - tanimoto. Row blocks may be computed
    on worker threads; assembly by row index keeps the result identical
    for any worker count."""
    n = len(fingerprints)
    if workers <= 1 or n < 2 * workers:
        return _distance_rows(fingerprints, range(n))
    chunks = [list(range(start, n, workers)) for start in range(workers)]
    out = np.zeros((n, n))
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_distance_rows, fingerprints, chunk) for chunk in chunks]
        for chunk, future in zip(chunks, futures):
            out[chunk, :] = future.result()
    return out


def _farthest_point_seeds(distances: np.ndarray, k: int, seed: int) -> list[int]:
    n = distances.shape[0]
    rng = random.Random(seed)
    seeds = [rng.randrange(n)]
    while len(seeds) < k:
        nearest = distances[:, seeds].min(axis=1)
        nearest[seeds] = -1.0  # never reselect
        seeds.append(int(np.argmax(nearest)))  # argmax ties break to lowest index
    return seeds


def cluster_tanimoto(fingerprints, k: int = 100, seed: int = 0,
                     workers: int = 1, max_iterations: int = 100) -> ClusterAssignment:
    """K-medoids in Tanimoto space: assign to the nearest medoid, then
    move each medoid to the member minimizing summed intra-cluster
    distance, until assignments stop changing."""
    n = len(fingerprints)
    if n < k:
        raise FilterError(f"cannot form {k} clusters from {n} molecules")
    if k < 1:
        raise FilterError("k must be positive")
    distances = distance_matrix(fingerprints, workers=workers)
    medoids = _farthest_point_seeds(distances, k, seed)
    labels = None
    trace = []
    for _ in range(max_iterations):
        new_labels = np.argmin(distances[:, medoids], axis=1)
        for cluster, medoid in enumerate(medoids):
            new_labels[medoid] = cluster  # a medoid stays home on distance ties
        trace.append(float(distances[np.arange(n), [medoids[c] for c in new_labels]].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for cluster in range(k):
            members = np.flatnonzero(labels == cluster)
            within = distances[np.ix_(members, members)].sum(axis=1)
            medoids[cluster] = int(members[np.argmin(within)])
    return ClusterAssignment(
        k=k,
        labels=tuple(int(c) for c in labels),
        medoids=tuple(medoids),
        objective_trace=tuple(trace),
    )


def cluster_similarity_histogram(assignment: ClusterAssignment, fingerprints):
    """All pairwise similarities split into within-cluster and
    across-cluster sets."""
    n = len(fingerprints)
    if len(assignment.labels) != n:
        raise FilterError("assignment does not match the fingerprint list")
    intra = []
    inter = []
    for i in range(n):
        for j in range(i + 1, n):
            similarity = tanimoto(fingerprints[i], fingerprints[j])
            if assignment.labels[i] == assignment.labels[j]:
                intra.append(similarity)
            else:
                inter.append(similarity)
    return tuple(intra), tuple(inter)


def select_representatives(assignment: ClusterAssignment, fingerprints):
    """Per cluster: members ranked by distance to the medoid, medoid
    first. Input for the human picking one molecule per cluster."""
    ranked = []
    for cluster in range(assignment.k):
        medoid = assignment.medoids[cluster]
        members = [i for i, label in enumerate(assignment.labels) if label == cluster]
        members.sort(key=lambda i: (1.0 - tanimoto(fingerprints[medoid], fingerprints[i]), i))
        ranked.append((medoid, tuple(members)))
    return tuple(ranked)


def novelty(fingerprints, references) -> tuple[float, ...]:
    """Per molecule, the maximum Tanimoto similarity to any reference."""
    references = list(references)
    if not references:
        raise FilterError("reference set is empty")
    return tuple(
        max(tanimoto(fp, ref) for ref in references) for fp in fingerprints
    )


def is_novel(score: float) -> bool:
    return score < NOVELTY_THRESHOLD


def write_filter_report(report: FilterReport, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("stage\tremaining\trejected\n")
        handle.write(f"input\t{report.total}\t0\n")
        for stage, kept, dropped in zip(report.stages, report.remaining, report.rejected):
            handle.write(f"{stage}\t{kept}\t{dropped}\n")


def write_cluster_assignment(assignment: ClusterAssignment, names, path):
    if len(names) != len(assignment.labels):
        raise FilterError("one name per clustered molecule required")
    medoid_set = set(assignment.medoids)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("molecule\tcluster\tis_medoid\n")
        for index, (name, label) in enumerate(zip(names, assignment.labels)):
            flag = 1 if index in medoid_set else 0
            handle.write(f"{name}\t{label}\t{flag}\n")


def write_similarity_histogram(intra, inter, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("kind\tsimilarity\n")
        for value in intra:
            handle.write(f"intra\t{format(value, '.6g')}\n")
        for value in inter:
            handle.write(f"inter\t{format(value, '.6g')}\n")
