"""Brand-partitioned labeled image manifests.

A manifest is a CSV with the header ``image_id,path,grade,brand,split``. Relative
paths are resolved against the manifest's directory when images are loaded.
"""

import logging
from collections.abc import Iterable
from pathlib import Path
from typing import Any

import pandas as pd
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from camadapt.types import (
    REFERABLE_GRADE,
    DatasetIOError,
    DomainId,
    ManifestError,
    Split,
    Task,
    UnknownBrandError,
)
from camadapt.utils.audit import record_grade_read

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("image_id", "path", "grade", "brand", "split")
BRAND_LABEL_COLUMNS = ("image_id", "brand")


class ImageRecord(BaseModel):
    """A labeled, brand-tagged, split-tagged image reference.

    Every read of ``grade`` is counted in the active audit (see
    `camadapt.utils.audit`), which is how unsupervised training proves it never
    looks at target labels.

    Attributes:
        image_id (str): Unique image identifier.
        path (Path): Image file path, absolute or relative to the manifest.
        grade (int): Class label of the manifest's task.
        brand (DomainId): Camera brand token.
        split (Split): Dataset split.
    """

    image_id: str = Field(min_length=1)
    path: Path
    grade: int = Field(ge=0)
    brand: DomainId = Field(min_length=1)
    split: Split

    model_config = ConfigDict(frozen=True)

    @field_validator("brand", "image_id", mode="after")
    @classmethod
    def _token(cls, v: str) -> str:
        if v != v.strip() or "," in v:
            msg = f"{v!r} is not a valid token"
            raise ValueError(msg)
        return v

    def __getattribute__(self, name: str) -> Any:  # noqa: ANN401
        """Count reads of the grade field."""
        if name == "grade":
            record_grade_read(object.__getattribute__(self, "__dict__")["brand"])
        return super().__getattribute__(name)


class Manifest(BaseModel):
    """An immutable, validated collection of image records.

    Attributes:
        records (tuple[ImageRecord, ...]): The records in file order.
        task (Task): The classification task the grades belong to.
        declared_brands (frozenset[DomainId]): All brands of the dataset.
        root (Path | None): Directory relative record paths are resolved against.
    """

    records: tuple[ImageRecord, ...] = ()
    task: Task = Task.grading5
    declared_brands: frozenset[DomainId] = frozenset()
    root: Path | None = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_records(self) -> "Manifest":
        """Validate cross-record invariants."""
        seen: set[str] = set()
        for i, record in enumerate(self.records):
            if record.brand not in self.declared_brands:
                msg = f"record {record.image_id!r} has undeclared brand {record.brand}"
                raise ValueError(msg)
            if record.image_id in seen:
                msg = f"duplicate image_id {record.image_id!r} (record {i})"
                raise ValueError(msg)
            seen.add(record.image_id)
            grade = record.__dict__["grade"]
            if grade >= self.task.num_classes:
                msg = f"grade out of range: {grade} for task {self.task.value}"
                raise ValueError(msg)
        return self

    @property
    def brands(self) -> list[DomainId]:
        """Declared brands in sorted order."""
        return sorted(self.declared_brands)

    def __len__(self) -> int:
        """Number of records."""
        return len(self.records)

    def select(self, brand: DomainId, split: Split | str) -> list[ImageRecord]:
        """Return the records of one brand and split in manifest order.

        Args:
            brand: The camera brand.
            split: The dataset split.

        Returns:
            list[ImageRecord]: The matching records.

        Raises:
            UnknownBrandError: If the brand is not declared.
        """
        if brand not in self.declared_brands:
            msg = f"Unknown brand {brand!r}, declared brands: {self.brands}"
            raise UnknownBrandError(msg)
        split = Split(split)
        return [r for r in self.records if r.brand == brand and r.split is split]

    def cross_tab(self) -> pd.Series:
        """Count records per (brand, grade, split).

        Returns:
            pd.Series: Counts indexed by the full product of declared brands,
                task grades and splits, zeros included.
        """
        index = pd.MultiIndex.from_product(
            [self.brands, range(self.task.num_classes), [s.value for s in Split]],
            names=["brand", "grade", "split"],
        )
        rows = [
            (r.brand, r.__dict__["grade"], r.split.value) for r in self.records
        ]
        if not rows:
            return pd.Series(0, index=index, dtype="int64", name="count")
        frame = pd.DataFrame(rows, columns=["brand", "grade", "split"])
        counts = frame.groupby(["brand", "grade", "split"]).size()
        return counts.reindex(index, fill_value=0).astype("int64").rename("count")

    def to_binary(self) -> "Manifest":
        """Return a copy relabeled for referable DR (grade >= 2 means 1).

        Returns:
            Manifest: The binary-task manifest.
        """
        if self.task is Task.binary:
            return self
        records = tuple(
            r.model_copy(update={"grade": int(r.__dict__["grade"] >= REFERABLE_GRADE)})
            for r in self.records
        )
        return self.model_copy(update={"records": records, "task": Task.binary})

    def resolve(self, record: ImageRecord) -> Path:
        """Return the absolute path of a record's image."""
        if record.path.is_absolute() or self.root is None:
            return record.path
        return self.root / record.path


def _read_csv(path: Path, columns: tuple[str, ...]) -> pd.DataFrame:
    """Read a CSV as strings and check its header row."""
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, encoding="utf-8", sep=","
        )
    except FileNotFoundError as e:
        msg = f"File not found: {path}"
        raise DatasetIOError(msg) from e
    except pd.errors.EmptyDataError as e:
        msg = f"{path} is empty, expected header {','.join(columns)}"
        raise ManifestError(msg, line=1) from e
    except pd.errors.ParserError as e:
        raise ManifestError(str(e)) from e

    missing = [c for c in columns if c not in frame.columns]
    if missing:
        msg = (
            f"header {','.join(frame.columns)} does not match "
            f"{','.join(columns)} (missing {','.join(missing)})"
        )
        raise ManifestError(msg, line=1)
    return frame


def _build_records(
    rows: Iterable[tuple[int, dict[str, str]]], task: Task
) -> list[ImageRecord]:
    records: list[ImageRecord] = []
    for line, row in rows:
        empty = [k for k, v in row.items() if not isinstance(v, str) or not v]
        if empty:
            msg = f"malformed row, missing value for {', '.join(empty)}"
            raise ManifestError(msg, line=line)
        try:
            split = Split(row["split"])
        except ValueError as e:
            msg = f"unknown split {row['split']!r}"
            raise ManifestError(msg, line=line) from e
        try:
            grade = int(row["grade"])
        except ValueError as e:
            msg = f"grade {row['grade']!r} is not an integer"
            raise ManifestError(msg, line=line) from e
        if not 0 <= grade < task.num_classes:
            msg = f"grade out of range: {grade} for task {task.value}"
            raise ManifestError(msg, line=line)
        try:
            record = ImageRecord(
                image_id=row["image_id"],
                path=Path(row["path"]),
                grade=grade,
                brand=row["brand"],
                split=split,
            )
        except ValidationError as e:
            msg = "; ".join(f"{err['loc'][0]}: {err['msg']}" for err in e.errors())
            raise ManifestError(msg, line=line) from e
        records.append(record)
    return records


def _make_manifest(
    records: list[ImageRecord],
    task: Task,
    declared_brands: Iterable[DomainId] | None,
    root: Path | None,
    lines: list[int],
) -> Manifest:
    seen: dict[str, int] = {}
    for record, line in zip(records, lines, strict=True):
        image_id = record.image_id
        if image_id in seen:
            msg = f"duplicate image_id {image_id!r} (first on line {seen[image_id]})"
            raise ManifestError(msg, line=line)
        seen[image_id] = line

    brands = frozenset(declared_brands or ()) | {r.brand for r in records}
    return Manifest(
        records=tuple(records), task=task, declared_brands=brands, root=root
    )


def load_manifest(
    path: Path,
    task: Task | str = Task.grading5,
    declared_brands: Iterable[DomainId] | None = None,
) -> Manifest:
    """Load and validate a manifest CSV.

    Args:
        path: The manifest file (header ``image_id,path,grade,brand,split``).
        task: The task the grades belong to.
        declared_brands: Additional brands to declare even without records.

    Returns:
        Manifest: The validated manifest, rooted at the file's directory.

    Raises:
        ManifestError: If the header or a row is malformed; row errors report the
            1-based line number.
        DatasetIOError: If the file does not exist.
    """
    task = Task(task)
    frame = _read_csv(path, MANIFEST_COLUMNS)
    rows = [(i + 2, row) for i, row in enumerate(frame.to_dict("records"))]
    records = _build_records(rows, task)
    manifest = _make_manifest(
        records, task, declared_brands, path.parent, [line for line, _ in rows]
    )
    logger.info(
        "Loaded manifest %s: %d records, brands %s, task %s",
        path,
        len(manifest),
        manifest.brands,
        task.value,
    )
    return manifest


def save_manifest(manifest: Manifest, path: Path) -> None:
    """Write a manifest CSV with the fixed schema.

    Args:
        manifest: The manifest to write.
        path: The destination file.
    """
    frame = pd.DataFrame(
        [
            {
                "image_id": r.image_id,
                "path": r.path.as_posix(),
                "grade": r.__dict__["grade"],
                "brand": r.brand,
                "split": r.split.value,
            }
            for r in manifest.records
        ],
        columns=list(MANIFEST_COLUMNS),
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    except OSError as e:
        msg = f"Cannot write manifest {path}: {e}"
        raise DatasetIOError(msg) from e
    logger.info("Wrote manifest %s (%d records)", path, len(manifest))


def join_brand_labels(  # noqa: PLR0913
    brand_labels: Path,
    grades: Path,
    image_root: Path,
    *,
    task: Task | str = Task.grading5,
    default_split: Split | str | None = None,
    suffix: str = ".jpeg",
) -> Manifest:
    """Build a manifest from a brand-label CSV joined with a grade CSV.

    The brand-label CSV has the header ``image_id,brand``. The grade CSV has the
    header ``image_id,grade`` and optionally ``split``; without a split column
    every record gets ``default_split``.

    Args:
        brand_labels: The ``image_id,brand`` CSV.
        grades: The ``image_id,grade[,split]`` CSV.
        image_root: Directory holding ``<image_id><suffix>`` files.
        task: The task the grades belong to.
        default_split: The split for grade CSVs without a split column.
        suffix: Image file suffix.

    Returns:
        Manifest: The joined manifest, in grade CSV order.

    Raises:
        ManifestError: If ids do not match between the files or a split is missing.
    """
    task = Task(task)
    brand_frame = _read_csv(brand_labels, BRAND_LABEL_COLUMNS)
    grade_frame = _read_csv(grades, ("image_id", "grade"))

    if "split" not in grade_frame.columns:
        if default_split is None:
            msg = f"{grades} has no split column and no default split was given"
            raise ManifestError(msg, line=1)
        grade_frame["split"] = Split(default_split).value

    duplicated = brand_frame["image_id"].duplicated()
    if duplicated.any():
        first = int(duplicated.to_numpy().argmax())
        msg = f"duplicate image_id {brand_frame['image_id'].iloc[first]!r}"
        raise ManifestError(msg, line=first + 2)

    brand_of = dict(zip(brand_frame["image_id"], brand_frame["brand"], strict=True))
    unlabeled = sorted(set(grade_frame["image_id"]) - set(brand_of))
    if unlabeled:
        msg = (
            f"{len(unlabeled)} graded image ids have no brand label in "
            f"{brand_labels.name}: {', '.join(unlabeled[:5])}"
        )
        raise ManifestError(msg)
    ungraded = len(set(brand_of) - set(grade_frame["image_id"]))
    if ungraded:
        logger.warning(
            "%d brand-labeled images have no grade in %s and are not included",
            ungraded,
            grades.name,
        )

    rows = [
        (
            i + 2,
            {
                "image_id": row["image_id"],
                "path": (image_root / f"{row['image_id']}{suffix}").as_posix(),
                "grade": row["grade"],
                "brand": brand_of[row["image_id"]],
                "split": row["split"],
            },
        )
        for i, row in enumerate(grade_frame.to_dict("records"))
    ]
    records = _build_records(rows, task)
    manifest = _make_manifest(records, task, None, None, [line for line, _ in rows])
    logger.info(
        "Joined %d brand labels with %s: brands %s",
        len(manifest),
        grades.name,
        manifest.brands,
    )
    return manifest


def export_cross_tab(manifest: Manifest, path: Path) -> pd.DataFrame:
    """Write the brand/grade distribution as a per-brand table.

    Rows are brands; columns are ``<split>_<grade>`` counts followed by one
    ``<split>_total`` column per split.

    Args:
        manifest: The manifest to tabulate.
        path: The destination CSV.

    Returns:
        pd.DataFrame: The written table.
    """
    counts = manifest.cross_tab()
    grades = range(manifest.task.num_classes)
    table = pd.DataFrame(index=pd.Index(manifest.brands, name="brand"))
    for split in Split:
        for grade in grades:
            table[f"{split.value}_{grade}"] = [
                int(counts[(brand, grade, split.value)]) for brand in manifest.brands
            ]
        table[f"{split.value}_total"] = table[
            [f"{split.value}_{g}" for g in grades]
        ].sum(axis=1)
    try:
        table.to_csv(path, lineterminator="\n")
    except OSError as e:
        msg = f"Cannot write cross tab {path}: {e}"
        raise DatasetIOError(msg) from e
    return table
