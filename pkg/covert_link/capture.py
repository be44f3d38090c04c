"""IQ capture files: little-endian float32 I/Q pairs plus a JSON sidecar."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, LengthError

logger = logging.getLogger(__name__)

SIDECAR_KEYS = ('sample_count', 'seed', 'scenario', 'snr_db', 'modulation', 'undetectable')


def sidecar_path(path) -> Path:
    return Path(str(path) + '.json')


def write_capture(path, symbols: np.ndarray, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write symbols as interleaved <f4 I/Q pairs and the sidecar next to them."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    symbols = np.asarray(symbols)
    interleaved = np.empty(2 * symbols.size, dtype='<f4')
    interleaved[0::2] = symbols.real
    interleaved[1::2] = symbols.imag
    interleaved.tofile(path)

    sidecar = {key: None for key in SIDECAR_KEYS}
    sidecar.update(metadata or {})
    sidecar['sample_count'] = int(symbols.size)
    with open(sidecar_path(path), 'w', encoding='utf-8') as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
    logger.debug(f"Wrote {symbols.size} samples to {path}")
    return path


def read_capture(path) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Read a capture; the sidecar is optional.

    Raises:
        ConfigError: If the capture cannot be read
        LengthError: If the file holds an odd number of floats
    """
    try:
        raw = np.fromfile(path, dtype='<f4')
    except OSError as e:
        raise ConfigError(f"cannot read capture {path}: {e}")
    if raw.size % 2:
        raise LengthError(f"{path} holds {raw.size} floats, not I/Q pairs")
    symbols = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    metadata: Dict[str, Any] = {}
    sidecar = sidecar_path(path)
    if sidecar.exists():
        with open(sidecar, encoding='utf-8') as f:
            metadata = json.load(f)
        if metadata.get('sample_count') not in (None, symbols.size):
            logger.warning(f"{path}: sidecar announces {metadata['sample_count']} samples, "
                           f"file holds {symbols.size}")
    return symbols, metadata
