"""Fluorescence dataset ingestion, curation, and cross-validation splits.

The input is delimited text (comma or tab, sniffed from the header) with
one measurement row per molecule-solvent pair: SMILES, the four Catalan
solvent descriptors, and up to three measured properties. Rows that fail
to parse are reported, duplicate pairs are averaged, and task curation
turns the surviving records into feature/label arrays.
"""

from __future__ import annotations

import csv
import enum
import random
from dataclasses import dataclass

import numpy as np

from fluorgen.fingerprints import SolventFeatures, build_feature_vector, morgan_fingerprint
from fluorgen.smiles import SmilesError, parse_smiles, write_canonical_smiles


class DatasetError(ValueError):
    pass


class Task(enum.Enum):
    PLQY_CLASS = "plqy_class"
    ABS_REG = "abs_reg"
    EM_REG = "em_reg"


# logical name -> default header
_COLUMNS = {
    "smiles": "SMILES",
    "sp": "SP",
    "sdp": "SdP",
    "sa": "SA",
    "sb": "SB",
    "plqy": "PLQY",
    "absorption": "Absorption",
    "emission": "Emission",
}


@dataclass(frozen=True)
class ChemFluorRecord:
    smiles: str  # canonical form
    solvent: SolventFeatures | None
    plqy: float | None
    absorption_nm: float | None
    emission_nm: float | None

    def __post_init__(self):
        if self.plqy is None and self.absorption_nm is None and self.emission_nm is None:
            raise DatasetError(f"{self.smiles}: no measurement present")
        if self.plqy is not None and not 0.0 <= self.plqy <= 1.0:
            raise DatasetError(f"{self.smiles}: PLQY {self.plqy} outside [0,1]")
        for value in (self.absorption_nm, self.emission_nm):
            if value is not None and value <= 0:
                raise DatasetError(f"{self.smiles}: wavelength {value} not positive")


@dataclass(frozen=True)
class IngestResult:
    records: tuple[ChemFluorRecord, ...]
    rejected: tuple[str, ...]


def ingest_chemfluor(path: str, column_map: dict[str, str] | None = None) -> IngestResult:
    """Read a measurement file and collapse duplicate molecule-solvent pairs.

    Duplicates are keyed by canonical SMILES plus the exact solvent
    four-tuple; each measurement is averaged over the entries where it is
    present. Records come back sorted by that key, so ingestion does not
    depend on row order. ``column_map`` renames logical columns
    (keys from: smiles, sp, sdp, sa, sb, plqy, absorption, emission).
    """
    headers = dict(_COLUMNS)
    if column_map:
        unknown = set(column_map) - set(headers)
        if unknown:
            raise DatasetError(f"unknown column mapping keys: {sorted(unknown)}")
        headers.update(column_map)

    with open(path, encoding="utf-8", newline="") as handle:
        first = handle.readline()
        if not first.strip():
            raise DatasetError(f"{path}: empty file")
        delimiter = "\t" if "\t" in first else ","
        handle.seek(0)
        reader = csv.DictReader(handle, delimiter=delimiter)
        field_lookup = {name.strip().lower(): name for name in reader.fieldnames or []}
        resolved = {}
        missing = []
        for logical, header in headers.items():
            actual = field_lookup.get(header.strip().lower())
            if actual is None:
                missing.append(header)
            else:
                resolved[logical] = actual
        if missing:
            raise DatasetError(f"{path}: missing columns {missing}")
        rows = list(reader)

    rejected: list[str] = []
    groups: dict[tuple, dict[str, list[float]]] = {}
    originals: dict[tuple, str] = {}
    for lineno, row in enumerate(rows, start=2):  # header is line 1
        def cell(logical):
            value = row.get(resolved[logical])
            return value.strip() if value is not None else ""

        raw_smiles = cell("smiles")
        try:
            graph = parse_smiles(raw_smiles)
        except SmilesError as exc:
            rejected.append(f"line {lineno}: bad SMILES {raw_smiles!r}: {exc}")
            continue
        smiles = write_canonical_smiles(graph)

        try:
            solvent_values = [_parse_float(cell(k), k) for k in ("sp", "sdp", "sa", "sb")]
            plqy = _parse_float(cell("plqy"), "plqy")
            absorption = _parse_float(cell("absorption"), "absorption")
            emission = _parse_float(cell("emission"), "emission")
        except DatasetError as exc:
            rejected.append(f"line {lineno}: {exc}")
            continue

        if all(v is not None for v in solvent_values):
            solvent = SolventFeatures(*solvent_values)
        elif all(v is None for v in solvent_values):
            solvent = None
        else:
            rejected.append(f"line {lineno}: partial solvent features")
            continue

        if plqy is None and absorption is None and emission is None:
            rejected.append(f"line {lineno}: no measurement present")
            continue
        if plqy is not None and not 0.0 <= plqy <= 1.0:
            rejected.append(f"line {lineno}: PLQY {plqy} outside [0,1]")
            continue
        if any(v is not None and v <= 0 for v in (absorption, emission)):
            rejected.append(f"line {lineno}: non-positive wavelength")
            continue

        key = (smiles, solvent.as_tuple() if solvent is not None else None)
        bucket = groups.setdefault(key, {"plqy": [], "absorption": [], "emission": []})
        originals.setdefault(key, smiles)
        if plqy is not None:
            bucket["plqy"].append(plqy)
        if absorption is not None:
            bucket["absorption"].append(absorption)
        if emission is not None:
            bucket["emission"].append(emission)

    records = []
    for key in sorted(groups, key=lambda k: (k[0], k[1] is not None, k[1] or ())):
        smiles, solvent_tuple = key
        bucket = groups[key]
        records.append(
            ChemFluorRecord(
                smiles=smiles,
                solvent=SolventFeatures(*solvent_tuple) if solvent_tuple else None,
                plqy=_mean(bucket["plqy"]),
                absorption_nm=_mean(bucket["absorption"]),
                emission_nm=_mean(bucket["emission"]),
            )
        )
    if not records:
        raise DatasetError(f"{path}: zero valid rows")
    return IngestResult(records=tuple(records), rejected=tuple(rejected))


def _parse_float(text: str, name: str) -> float | None:
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"bad {name} value {text!r}") from None
    if not np.isfinite(value):
        raise DatasetError(f"non-finite {name} value {text!r}")
    return value


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


@dataclass(frozen=True)
class TaskDataset:
    task: Task
    features: np.ndarray  # (n, 2052)
    labels: np.ndarray  # (n,)
    smiles: tuple[str, ...]
    solvents: tuple[SolventFeatures, ...]

    def __len__(self) -> int:
        return len(self.smiles)


def curate_task(records, task: Task) -> TaskDataset:
    """Keep records complete for the task and build the training arrays.

    A record qualifies when the solvent features and the task's
    measurement are present. PLQY classification labels are 1 only for
    PLQY strictly above 0.5; the regression tasks use nm values as-is.
    """
    value_of = {
        Task.PLQY_CLASS: lambda r: r.plqy,
        Task.ABS_REG: lambda r: r.absorption_nm,
        Task.EM_REG: lambda r: r.emission_nm,
    }[task]
    rows = []
    labels = []
    smiles = []
    solvents = []
    for record in records:
        value = value_of(record)
        if value is None or record.solvent is None:
            continue
        fingerprint = morgan_fingerprint(parse_smiles(record.smiles))
        rows.append(build_feature_vector(fingerprint, record.solvent))
        if task is Task.PLQY_CLASS:
            labels.append(1.0 if value > 0.5 else 0.0)
        else:
            labels.append(value)
        smiles.append(record.smiles)
        solvents.append(record.solvent)
    if not rows:
        raise DatasetError(f"no records usable for task {task.value}")
    return TaskDataset(
        task=task,
        features=np.asarray(rows, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.float64),
        smiles=tuple(smiles),
        solvents=tuple(solvents),
    )


@dataclass(frozen=True)
class CvSplit:
    fold_id: int
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


def split_cv(n_examples: int, folds: int = 10, seed: int = 0) -> tuple[CvSplit, ...]:
    """Shuffle indices once, then rotate contiguous test blocks.

    Fold i tests on block i and validates on block i+1 (cyclically), so
    every index lands in exactly one test set and the sizes follow the
    80/10/10 pattern as closely as integer block sizes allow.
    """
    if folds < 3:
        raise DatasetError("need at least 3 folds for train/val/test")
    if n_examples < folds:
        raise DatasetError(f"{n_examples} examples cannot fill {folds} folds")
    indices = list(range(n_examples))
    random.Random(seed).shuffle(indices)
    base = n_examples // folds
    extra = n_examples % folds
    blocks = []
    start = 0
    for i in range(folds):
        size = base + (1 if i < extra else 0)
        blocks.append(tuple(indices[start : start + size]))
        start += size
    splits = []
    for i in range(folds):
        test = blocks[i]
        val = blocks[(i + 1) % folds]
        train = tuple(
            idx
            for j, block in enumerate(blocks)
            if j != i and j != (i + 1) % folds
            for idx in block
        )
        splits.append(CvSplit(fold_id=i, train=train, val=val, test=test))
    return tuple(splits)


def write_curated_cache(records, path: str):
    """Write records back out as tab-delimited text with canonical SMILES."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("SMILES\tSP\tSdP\tSA\tSB\tPLQY\tAbsorption\tEmission\n")
        for record in records:
            solvent = record.solvent.as_tuple() if record.solvent else (None,) * 4
            fields = [record.smiles]
            for value in (*solvent, record.plqy, record.absorption_nm, record.emission_nm):
                fields.append("" if value is None else repr(value))
            handle.write("\t".join(fields) + "\n")


def write_rejection_report(rejected, path: str):
    with open(path, "w", encoding="utf-8") as handle:
        for line in rejected:
            handle.write(line + "\n")
        handle.write(f"# {len(rejected)} rows rejected\n")
