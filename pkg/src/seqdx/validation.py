"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

from typing import Optional, Sequence

from .env import ConfigurationError, PatientRecord, TestCatalog
from .io import record_from_obj


def check_catalog(catalog) -> TestCatalog:
    if catalog is None:
        return TestCatalog()
    if isinstance(catalog, TestCatalog):
        return catalog
    try:
        tests, classes = catalog
    except (TypeError, ValueError):
        raise ConfigurationError("catalog must be a TestCatalog or a (tests, classes) pair") from None
    return TestCatalog(tuple(tests), tuple(classes))


def check_records(X, catalog: Optional[TestCatalog] = None, y: Optional[Sequence] = None, min_records: int = 1) -> list:
    """Coerce ``X`` to validated :class:`PatientRecord` objects.

    Items may be records or dicts in the JSONL schema. When ``y`` is given it
    must have one label per record and replaces the stored diagnoses.
    """
    catalog = check_catalog(catalog)
    if isinstance(X, (str, bytes, dict)):
        raise ConfigurationError("expected a sequence of patient records")
    try:
        items = list(X)
    except TypeError:
        raise ConfigurationError("expected a sequence of patient records") from None
    if len(items) < min_records:
        raise ConfigurationError(f"expected at least {min_records} records, got {len(items)}")
    records = []
    for i, item in enumerate(items):
        if isinstance(item, PatientRecord):
            record = item
        else:
            try:
                record = record_from_obj(item)
            except ValueError as exc:
                raise ConfigurationError(f"item {i}: {exc}") from exc
        records.append(record)
    if y is not None:
        labels = list(y)
        if len(labels) != len(records):
            raise ConfigurationError(f"{len(labels)} labels for {len(records)} records")
        records = [PatientRecord(r.id, str(lab), r.history, dict(r.tests)) for r, lab in zip(records, labels)]
    for record in records:
        record.validate(catalog)
    return records
