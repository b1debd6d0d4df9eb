"""Plain-text I/O for matrices, source sets, configs and result tables"""

import math
import os
import sys
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple

import numpy as np

from ..exceptions import ValidationError


class TsvHandler:
    """Reads and writes the flat text formats used by passcan"""

    @staticmethod
    def _require_file(path: str) -> None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"File not found: {path}")

    @staticmethod
    def _is_code(text: str) -> bool:
        """True for a non-empty run of ASCII digits"""
        return bool(text) and text.isascii() and text.isdigit()

    @staticmethod
    def _parse_cell(cell: str, line_no: int, col_no: int) -> int:
        text = cell.strip()
        if not TsvHandler._is_code(text):
            raise ValidationError(
                f"Line {line_no}, column {col_no}: '{cell}' is not a non-negative integer"
            )
        return int(text)

    @staticmethod
    def read_matrix(path: str) -> Tuple[np.ndarray, Optional[List[str]]]:
        """
        Read a TSV marker matrix

        Args:
            path: UTF-8 TSV file; the first row is a header of column ids
                  when any of its cells is not an integer

        Returns:
            Tuple of (marker array, header or None)

        Raises:
            FileNotFoundError: if the file does not exist
            ValidationError: on malformed cells, ragged rows or too few rows
        """
        TsvHandler._require_file(path)
        with open(path, 'r', encoding='utf-8') as fh:
            lines = [line.rstrip('\r\n') for line in fh]
        lines = [(no, line) for no, line in enumerate(lines, 1) if line.strip()]
        if not lines:
            raise ValidationError(f"{path} holds no data")

        header = None
        first_cells = lines[0][1].split('\t')
        if any(not TsvHandler._is_code(cell.strip()) for cell in first_cells):
            header = [cell.strip() for cell in first_cells]
            lines = lines[1:]

        width = len(header) if header else len(first_cells)
        rows = []
        for line_no, line in lines:
            cells = line.split('\t')
            if len(cells) != width:
                raise ValidationError(
                    f"Line {line_no} has {len(cells)} cells, expected {width}"
                )
            rows.append([TsvHandler._parse_cell(c, line_no, k + 1) for k, c in enumerate(cells)])
        if len(rows) < 2:
            raise ValidationError(f"{path} holds {len(rows)} data row(s), at least 2 are needed")
        return np.array(rows, dtype=np.int64), header

    @staticmethod
    def write_matrix(dm, stream: TextIO, header: bool = True) -> None:
        """Write a DataMatrix as TSV, header row first"""
        if header:
            stream.write('\t'.join(dm.column_ids) + '\n')
        for row in dm.markers:
            stream.write('\t'.join(str(int(v)) for v in row) + '\n')

    @staticmethod
    def read_source(path: str) -> np.ndarray:
        """
        Read a source set: one sequence per line of contiguous digits

        Raises:
            ValidationError: on non-digit characters or unequal lengths
        """
        TsvHandler._require_file(path)
        sequences = []
        with open(path, 'r', encoding='utf-8') as fh:
            for line_no, line in enumerate(fh, 1):
                text = line.strip()
                if not text:
                    continue
                if not TsvHandler._is_code(text):
                    raise ValidationError(f"Line {line_no}: sequences may hold digits only")
                if sequences and len(text) != len(sequences[0]):
                    raise ValidationError(
                        f"Line {line_no}: length {len(text)} differs from {len(sequences[0])}"
                    )
                sequences.append([int(c) for c in text])
        if not sequences:
            raise ValidationError(f"{path} holds no sequences")
        return np.array(sequences, dtype=np.int64)

    @staticmethod
    def write_source(sequences: np.ndarray, stream: TextIO) -> None:
        for row in np.asarray(sequences):
            stream.write(''.join(str(int(v)) for v in row) + '\n')

    @staticmethod
    def read_config(path: str) -> Dict[str, str]:
        """
        Read a flat key=value file

        Blank lines and lines starting with '#' are skipped; keys are
        normalized to use underscores.

        Raises:
            ValidationError: on lines without '='
        """
        TsvHandler._require_file(path)
        config = {}
        with open(path, 'r', encoding='utf-8') as fh:
            for line_no, line in enumerate(fh, 1):
                text = line.strip()
                if not text or text.startswith('#'):
                    continue
                if '=' not in text:
                    raise ValidationError(f"{path}, line {line_no}: expected key=value")
                key, value = text.split('=', 1)
                config[key.strip().replace('-', '_')] = value.strip()
        return config

    @staticmethod
    def write_metadata(path: str, metadata: Mapping[str, Any]) -> None:
        with open(path, 'w', encoding='utf-8') as fh:
            for key, value in metadata.items():
                if isinstance(value, (list, tuple)):
                    value = ','.join(TsvHandler.format_value(v) for v in value)
                fh.write(f"{key}={TsvHandler.format_value(value)}\n")

    @staticmethod
    def format_float(value: float) -> str:
        """Six significant digits; NaN prints as 'NA'"""
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return 'NA'
        return f"{float(value):.6g}"

    @staticmethod
    def format_value(value: Any) -> str:
        if isinstance(value, (float, np.floating)):
            return TsvHandler.format_float(float(value))
        if value is None:
            return 'NA'
        return str(value)

    @staticmethod
    def write_rows(rows: Iterable[Sequence[Any]], header: Optional[Sequence[str]] = None,
                   stream: Optional[TextIO] = None) -> None:
        """Write a table of values as TSV with uniform float formatting"""
        stream = stream or sys.stdout
        if header:
            stream.write('\t'.join(header) + '\n')
        for row in rows:
            stream.write('\t'.join(TsvHandler.format_value(v) for v in row) + '\n')
