"""
utils.py
Miscellaneous utility functions: errors, seeding, provenance and file helpers.
"""
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

import config


class TagNoiseError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class ParseError(TagNoiseError):
    """Malformed input file, with the offending line when known."""

    def __init__(self, message, path=None, lineNumber=None):
        self.path = path
        self.lineNumber = lineNumber
        location = ""
        if path is not None:
            location = f"{path}:"
            if lineNumber is not None:
                location += f"{lineNumber}:"
            location += " "
        elif lineNumber is not None:
            location = f"line {lineNumber}: "
        super().__init__(f"{location}{message}")


class SamplingError(TagNoiseError):
    """Not enough items to draw the requested subset."""


class UndefinedStatisticError(TagNoiseError):
    """A statistic cannot be computed on the given data."""


class ShapeError(TagNoiseError):
    """Input array does not match the expected shape."""


class NonFiniteActivationError(TagNoiseError):
    """A network block produced NaN or infinite activations."""

    def __init__(self, block):
        self.block = block
        super().__init__(f"non-finite activation in block {block}")


class TrainingDivergedError(TagNoiseError):
    """Training produced a non-finite loss; carries the last finite parameters."""

    def __init__(self, message, lastParams=None, trainLog=None):
        self.lastParams = lastParams
        self.trainLog = trainLog or []
        super().__init__(message)


class ReportError(TagNoiseError):
    """Report output could not be produced."""


class JournalError(TagNoiseError):
    """Annotation journal is unreadable."""


def get_thread_count():
    """Get the worker count for parallel sections."""
    return config._threadCount

def set_thread_count(value):
    """Set the worker count for parallel sections."""
    if int(value) < 1:
        raise ValueError("thread count must be at least 1")
    config._threadCount = int(value)

def get_command_line():
    """Get the command line recorded in artifact provenance."""
    return config._commandLine

def set_command_line(value):
    """Set the command line recorded in artifact provenance."""
    config._commandLine = value

def make_rng(seed, *keys):
    """
    Derive an independent generator from a seed and integer keys.
    Args:
        seed: Base integer seed
        keys: Extra integers (resample index, tag index, ...) mixed into the seed
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))

def new_seed():
    """Draw a fresh seed for commands run without --seed."""
    return int(np.random.SeedSequence().entropy % (2 ** 31))

def config_hash(text):
    """
    Short stable hash of a configuration text.
    Args:
        text: Canonical configuration string
    """
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

def provenance(seed=None, extra=None):
    """
    Build the provenance fields embedded in every artifact.
    Args:
        seed: Seed used to produce the artifact (None when not randomized)
        extra: Additional key/value pairs
    """
    fields = {
        "tool": f"{config.TOOL_NAME} {config.TOOL_VERSION}",
        "command": get_command_line(),
        "seed": seed,
    }
    if extra:
        fields.update(extra)
    return fields

def provenance_lines(seed=None, extra=None):
    """
    Provenance as '#'-prefixed header lines for tabular files.
    Args:
        seed: Seed used to produce the artifact
        extra: Additional key/value pairs
    """
    fields = provenance(seed, extra)
    return [f"# {key}: {'' if value is None else value}" for key, value in fields.items()]

def write_sidecar(path, seed=None, extra=None):
    """
    Write the JSON provenance sidecar of a binary artifact.
    Args:
        path: Path of the binary artifact
        seed: Seed used to produce the artifact
        extra: Additional key/value pairs
    """
    sidecar = Path(f"{path}.meta.json")
    sidecar.write_text(json.dumps(provenance(seed, extra), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar

def data_lines(path):
    """
    Yield (line number, line) for non-comment lines of a UTF-8 text file.
    Args:
        path: Text file path
    """
    with open(path, "r", encoding="utf-8") as handle:
        for lineNumber, raw in enumerate(handle, 1):
            line = raw.rstrip("\r\n")
            if config.COMMENT_PATTERN.match(line):
                continue
            yield lineNumber, line

def parse_key_value_file(path):
    """
    Parse a plain-text 'key = value' file into an ordered dict of strings.
    Args:
        path: File path
    """
    values = {}
    for lineNumber, line in data_lines(path):
        match = config.KEY_VALUE_PATTERN.match(line)
        if not match:
            raise ParseError("expected 'key = value'", path, lineNumber)
        key, value = match.groups()
        if key in values:
            raise ParseError(f"duplicate key '{key}'", path, lineNumber)
        values[key] = value
    return values

def write_table(path, header, rows, seed=None, extra=None, delimiter=","):
    """
    Write a delimited table preceded by provenance header lines.
    Args:
        path: Output path
        header: Column names (None for no header row)
        rows: Iterable of row sequences (already formatted as strings)
        seed: Seed recorded in the provenance header
        extra: Additional provenance fields
        delimiter: Field separator
    """
    lines = provenance_lines(seed, extra)
    if header is not None:
        lines.append(delimiter.join(header))
    for row in rows:
        lines.append(delimiter.join(str(value) for value in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)

def pack_string(text):
    """UTF-8 string prefixed with its u32 byte length."""
    encoded = text.encode("utf-8")
    return struct.pack("<I", len(encoded)) + encoded


class BinaryReader:
    """Sequential little-endian reader over a bytes buffer with truncation checks."""

    def __init__(self, data, path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size):
        if self.offset + size > len(self.data):
            raise ParseError("file is truncated", self.path)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("invalid UTF-8 string", self.path)

    def array(self, dtype, count):
        itemSize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemSize * count), dtype=dtype).copy()
