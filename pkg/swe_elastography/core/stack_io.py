"""Binary stack files.

Layout (little-endian): magic ``SWF1``, u32 version (1), u32 n_frames,
u32 n_lateral, u32 n_axial, then float32 samples ordered frame, lateral,
axial (axial fastest). The header is 20 bytes.
"""

import logging
import os
import struct
from typing import Optional, Tuple, Union

import numpy as np

from swe_elastography.exceptions import DataValidationError, StackFormatError
from swe_elastography.types import DisplacementStack, FrameStack, ScanGeometry

logger = logging.getLogger(__name__)

MAGIC = b"SWF1"
VERSION = 1
HEADER = struct.Struct("<4sIIII")
PAYLOAD_DTYPE = np.dtype("<f4")
U32_MAX = 2 ** 32 - 1

Stack = Union[FrameStack, DisplacementStack]


def stack_file_size(n_frames: int, n_lateral: int, n_axial: int) -> int:
    return HEADER.size + n_frames * n_lateral * n_axial * PAYLOAD_DTYPE.itemsize


def write_stack(stack: Stack, path: str) -> int:
    """Write a frame or displacement stack.

    Args:
        stack: FrameStack (RF samples) or DisplacementStack (axial metres)
        path: Destination file

    Returns:
        Total bytes written

    Raises:
        StackFormatError: If the path is unusable or a dimension overflows u32
    """
    if not path:
        raise StackFormatError("empty output path")
    data = stack.data if isinstance(stack, FrameStack) else stack.axial
    dims = data.shape
    if len(dims) != 3:
        raise StackFormatError(f"stack must be 3D, got shape {dims}")
    if any(d > U32_MAX for d in dims):
        raise StackFormatError(f"dimension overflow for 32-bit header: {dims}")

    payload = np.ascontiguousarray(data, dtype=PAYLOAD_DTYPE)
    header = HEADER.pack(MAGIC, VERSION, *dims)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload.tobytes(order="C"))
    except OSError as e:
        raise StackFormatError(f"cannot write stack to {path}: {e}") from e

    size = len(header) + payload.nbytes
    logger.debug(f"Wrote stack {dims} to {path} ({size} bytes)")
    return size


def _parse_header(raw: bytes, path: str) -> Tuple[int, int, int]:
    if len(raw) < HEADER.size:
        raise StackFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, n_frames, n_lateral, n_axial = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise StackFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise StackFormatError(f"{path}: unsupported version {version}")
    return n_frames, n_lateral, n_axial


def read_stack_header(path: str) -> Tuple[int, int, int]:
    """(n_frames, n_lateral, n_axial) declared by a stack file header."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Stack file not found: {path}")
    with open(path, "rb") as f:
        return _parse_header(f.read(HEADER.size), path)


def read_stack_array(path: str) -> np.ndarray:
    """Read the raw float32 payload of a stack file as a [frame][lateral][axial] array."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Stack file not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()
    n_frames, n_lateral, n_axial = _parse_header(raw, path)
    expected = stack_file_size(n_frames, n_lateral, n_axial)
    if len(raw) != expected:
        raise StackFormatError(
            f"{path}: truncated payload, header declares {expected} bytes, file has {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=PAYLOAD_DTYPE, offset=HEADER.size)
    data = data.reshape(n_frames, n_lateral, n_axial)
    if not np.all(np.isfinite(data)):
        raise StackFormatError(f"{path}: payload contains non-finite values")
    return data


def read_stack(path: str, kind: str = "frames", geometry: Optional[ScanGeometry] = None) -> Stack:
    """Read a stack file written by ``write_stack``.

    Args:
        path: Stack file
        kind: ``"frames"`` for a FrameStack, ``"displacement"`` for a DisplacementStack
        geometry: Acquisition geometry; defaults are resized to the header dims when omitted

    Returns:
        FrameStack or DisplacementStack holding the float32 payload

    Raises:
        StackFormatError: On bad magic, version, truncation, non-finite data or a
            geometry that disagrees with the header
    """
    if kind not in ("frames", "displacement"):
        raise StackFormatError(f"unknown stack kind {kind!r}")
    data = read_stack_array(path)
    n_frames, n_lateral, n_axial = data.shape
    if geometry is None:
        geometry = ScanGeometry().with_dims(n_frames, n_lateral, n_axial)
    elif geometry.shape != data.shape:
        raise StackFormatError(
            f"{path}: header dims {data.shape} do not match geometry {geometry.shape}"
        )
    try:
        if kind == "frames":
            return FrameStack(geometry=geometry, data=data)
        return DisplacementStack(geometry=geometry, axial=data)
    except DataValidationError as e:
        raise StackFormatError(f"{path}: {e}") from e
