"""Fixed-length per-query result rows and their CSV form.

CSV layout: a header ``query_id,id1,...,idN`` followed by one row per query,
``query_id,img,img,...,#,#`` with pad tokens only as a suffix.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Iterator, Mapping, Sequence
from pathlib import Path

from .errors import SubmissionError

DEFAULT_PAD = "#"


class SubmissionTable:
    """Ordered mapping ``query_id -> [image ids]`` with exactly ``output_len`` slots per row."""

    def __init__(
        self,
        rows: Mapping[str, Sequence[str]] | Iterable[tuple[str, Sequence[str]]] = (),
        *,
        output_len: int = 10,
        pad_token: str = DEFAULT_PAD,
    ):
        if output_len < 1:
            raise SubmissionError("output_len must be >= 1")
        self.output_len = output_len
        self.pad_token = pad_token
        self._rows: dict[str, list[str]] = {}
        items = rows.items() if isinstance(rows, Mapping) else rows
        for qid, ids in items:
            self.add(qid, ids)

    def add(self, query_id: str, ids: Sequence[str]) -> None:
        """Add a row, padding short rows. Rows longer than ``output_len`` are rejected."""
        if query_id in self._rows:
            raise SubmissionError(f"duplicate query id {query_id!r}")
        row = list(ids)
        if len(row) > self.output_len:
            raise SubmissionError(f"query {query_id!r}: {len(row)} ids exceed output_len {self.output_len}")
        row.extend([self.pad_token] * (self.output_len - len(row)))
        self._validate(query_id, row)
        self._rows[query_id] = row

    def _validate(self, query_id: str, row: list[str]) -> None:
        seen: set[str] = set()
        padding = False
        for item in row:
            if item == self.pad_token:
                padding = True
                continue
            if padding:
                raise SubmissionError(f"query {query_id!r}: id {item!r} after a pad token")
            if not item:
                raise SubmissionError(f"query {query_id!r}: empty id")
            if item in seen:
                raise SubmissionError(f"query {query_id!r}: duplicate id {item!r}")
            seen.add(item)

    def row(self, query_id: str) -> list[str]:
        return list(self._rows[query_id])

    def ranked(self, query_id: str) -> list[str]:
        """Row without pad tokens."""
        return [i for i in self._rows[query_id] if i != self.pad_token]

    @property
    def query_ids(self) -> list[str]:
        return list(self._rows)

    def __contains__(self, query_id: object) -> bool:
        return query_id in self._rows

    def __iter__(self) -> Iterator[str]:
        return iter(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SubmissionTable):
            return NotImplemented
        return self._rows == other._rows and list(self._rows) == list(other._rows)

    def items(self) -> Iterator[tuple[str, list[str]]]:
        for qid, row in self._rows.items():
            yield qid, list(row)

    # -- CSV ----------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["query_id", *(f"id{i}" for i in range(1, self.output_len + 1))])
        for qid, row in self._rows.items():
            writer.writerow([qid, *row])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_csv().encode("utf-8"))

    @classmethod
    def from_csv(cls, text: str, *, pad_token: str = DEFAULT_PAD, output_len: int | None = None) -> SubmissionTable:
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows and rows[0][0] == "query_id":
            rows = rows[1:]
        if output_len is None:
            output_len = max((len(r) - 1 for r in rows), default=10)
        return cls(((r[0], r[1:]) for r in rows), output_len=output_len, pad_token=pad_token)

    @classmethod
    def read(cls, path: str | Path, **kwargs) -> SubmissionTable:
        return cls.from_csv(Path(path).read_text(encoding="utf-8"), **kwargs)
