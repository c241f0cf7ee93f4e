"""
checkpoint.py
CCNN checkpoint files: header, architecture block, tag names and named tensors.
"""
import json
import struct
from pathlib import Path

import numpy as np

from config import CCNN_MAGIC, CCNN_VERSION, DTYPE_CODES, DTYPE_NAMES
from logger import log_artifact
from utils import ParseError, BinaryReader, pack_string, provenance, write_sidecar
from analysis.lvs import LabelVectorMatrix
from .convnet import ArchSpec, ModelParams, tensor_names


def _arch_block(arch):
    values = [arch.nBlocks, *arch.channels, *arch.kernel]
    for ph, pw in arch.pools:
        values += [ph, pw]
    values += [arch.nOutputs, *arch.inputShape]
    return struct.pack(f"<{len(values)}I", *values)

def _read_arch(reader):
    nBlocks = reader.u32()
    channels = tuple(reader.u32() for _ in range(nBlocks))
    kernel = (reader.u32(), reader.u32())
    pools = tuple((reader.u32(), reader.u32()) for _ in range(nBlocks))
    nOutputs = reader.u32()
    inputShape = (reader.u32(), reader.u32(), reader.u32())
    return ArchSpec(
        nBlocks=nBlocks,
        channels=channels,
        kernel=kernel,
        pools=pools,
        nOutputs=nOutputs,
        inputShape=inputShape
    )

def save_checkpoint(params, path, seed=None):
    """
    Write ModelParams to a little-endian CCNN file plus a JSON sidecar.
    Args:
        params: ModelParams
        path: Output path
        seed: Seed recorded in the header and sidecar
    """
    header = provenance(seed, params.meta)
    headerBytes = json.dumps(header, sort_keys=True, default=str).encode("utf-8")
    chunks = [CCNN_MAGIC, struct.pack("<I", CCNN_VERSION), struct.pack("<I", len(headerBytes)), headerBytes]
    chunks.append(_arch_block(params.arch))

    chunks.append(struct.pack("<I", len(params.tags)))
    chunks.extend(pack_string(tag) for tag in params.tags)

    names = tensor_names(params.arch)
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        tensor = params.tensors[name]
        dtypeName = np.dtype(tensor.dtype).name
        if dtypeName not in DTYPE_CODES:
            raise ValueError(f"tensor '{name}' has unsupported dtype {dtypeName}")
        chunks.append(pack_string(name))
        chunks.append(struct.pack("<BB", DTYPE_CODES[dtypeName], tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype=tensor.dtype.newbyteorder("<")).tobytes())

    with open(path, "wb") as handle:
        handle.write(b"".join(chunks))
    write_sidecar(path, seed, params.meta)
    log_artifact(path, "checkpoint")
    return path

def load_checkpoint(path):
    """
    Read a CCNN checkpoint.
    Args:
        path: Checkpoint path
    """
    reader = BinaryReader(Path(path).read_bytes(), path)
    if reader.take(4) != CCNN_MAGIC:
        raise ParseError("not a CCNN checkpoint (bad magic)", path)
    version = reader.u32()
    if version != CCNN_VERSION:
        raise ParseError(f"unsupported CCNN version {version}", path)
    try:
        header = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except ValueError as e:
        raise ParseError(f"unreadable checkpoint header ({e})", path)
    arch = _read_arch(reader)
    tags = tuple(reader.string() for _ in range(reader.u32()))

    tensors = {}
    for _ in range(reader.u32()):
        name = reader.string()
        code, rank = struct.unpack("<BB", reader.take(2))
        if code not in DTYPE_NAMES:
            raise ParseError(f"tensor '{name}' has unknown dtype code {code}", path)
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        dtype = np.dtype(DTYPE_NAMES[code]).newbyteorder("<")
        count = int(np.prod(shape)) if rank else 1
        tensors[name] = reader.array(dtype, count).reshape(shape).astype(DTYPE_NAMES[code])
    if reader.offset != len(reader.data):
        raise ParseError("trailing bytes after tensors", path)

    meta = {key: value for key, value in header.items() if key not in ("tool", "command", "seed")}
    return ModelParams(arch=arch, tensors=tensors, tags=tags, meta=meta)

def extract_label_vectors(params, sourceId=""):
    """
    Final dense weights W (channels x n_outputs) with tag names; bias excluded.
    Args:
        params: ModelParams
        sourceId: Checkpoint id recorded with the vectors
    """
    tags = params.tags or tuple(f"tag{k}" for k in range(params.arch.nOutputs))
    return LabelVectorMatrix(weights=params.tensors["dense.w"].copy(), tags=tags, sourceId=sourceId)
