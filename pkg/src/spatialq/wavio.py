"""Minimal float32 RIFF/WAVE writer and a reader built on scipy.

scipy's writer never emits WAVE_FORMAT_EXTENSIBLE, which multichannel
ambisonic tooling expects beyond two channels, so writing is done here.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError

WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE
# KSDATAFORMAT_SUBTYPE_IEEE_FLOAT
_FLOAT_GUID = struct.pack("<IHH", 0x00000003, 0x0000, 0x0010) + bytes(
    [0x80, 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71]
)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write ``samples`` shaped [channel][sample] as 32-bit IEEE float."""
    data = np.asarray(samples)
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2:
        raise DataError("expected a [channel][sample] array")
    n_ch, n_frames = data.shape
    payload = np.ascontiguousarray(data.T, dtype="<f4").tobytes()
    block_align = 4 * n_ch
    if n_ch > 2:
        fmt = struct.pack(
            "<HHIIHHHHI16s",
            WAVE_FORMAT_EXTENSIBLE,
            n_ch,
            int(sample_rate),
            int(sample_rate) * block_align,
            block_align,
            32,
            22,
            32,
            0,  # no speaker mask: ambisonic channels are not speaker feeds
            _FLOAT_GUID,
        )
    else:
        fmt = struct.pack(
            "<HHIIHHH",
            WAVE_FORMAT_IEEE_FLOAT,
            n_ch,
            int(sample_rate),
            int(sample_rate) * block_align,
            block_align,
            32,
            0,
        )
    chunks = (
        b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"fact" + struct.pack("<II", 4, n_frames)
        + b"data" + struct.pack("<I", len(payload)) + payload
    )
    with open(Path(path), "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file as float64 [channel][sample] plus its sample rate.

    Integer PCM is scaled to ±1 full scale.
    """
    try:
        rate, data = wavfile.read(Path(path))
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype.kind == "i":
        data = data / float(-np.iinfo(data.dtype).min)
    elif data.dtype.kind == "u":
        data = (data.astype(np.float64) - 128.0) / 128.0
    return np.ascontiguousarray(data.T, dtype=np.float64), int(rate)
