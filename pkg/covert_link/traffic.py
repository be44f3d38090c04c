"""Primary traffic: per-subframe symbol budgets and the primary bits they carry."""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import config
from .codec import bytes_to_bits
from .constellation import qpsk_modulate
from .errors import ConfigError, EndOfTrace, ValidationError
from .stego import Direction, TransmissionOpportunity

logger = logging.getLogger(__name__)


class TrafficKind(str, Enum):
    CONSTANT = 'constant'
    BURSTY = 'bursty'
    TRACE = 'trace'


class PrimarySource(str, Enum):
    RANDOM_BITS = 'random_bits'
    FILE_STREAM = 'file_stream'


@dataclass(frozen=True)
class TrafficModel:
    kind: TrafficKind = TrafficKind.CONSTANT
    symbols: int = config.DEFAULT_OPPORTUNITY_SYMBOLS
    on_prob: float = 1.0
    trace_path: Optional[str] = None
    primary_source: PrimarySource = PrimarySource.RANDOM_BITS
    primary_path: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', TrafficKind(self.kind))
        object.__setattr__(self, 'primary_source', PrimarySource(self.primary_source))
        if self.symbols < 0:
            raise ValidationError("opportunity symbol count must be non-negative")
        if not 0.0 <= self.on_prob <= 1.0:
            raise ValidationError(f"on_prob {self.on_prob} outside [0, 1]")
        if self.kind is TrafficKind.TRACE and not self.trace_path:
            raise ValidationError("trace traffic needs a trace_path")
        if self.primary_source is PrimarySource.FILE_STREAM and not self.primary_path:
            raise ValidationError("file_stream primary source needs a primary_path")


def load_trace(path: str) -> List[int]:
    """Read one decimal symbol count per line; blank lines are skipped.

    Raises:
        ConfigError: If the file is missing or a line is not a count
    """
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"cannot read trace file {path}: {e}")
    budgets = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if not (line.isascii() and line.isdigit()):
            raise ConfigError(f"{path}:{line_number}: not a symbol count: {line!r}")
        budgets.append(int(line))
    return budgets


class TrafficGenerator:
    """Produces one TransmissionOpportunity per subframe for one direction."""

    def __init__(self, model: TrafficModel, rng: np.random.Generator,
                 direction: Direction = Direction.DOWNLINK):
        self.model = model
        self.rng = rng
        self.direction = Direction(direction)
        self._trace = load_trace(model.trace_path) if model.kind is TrafficKind.TRACE else None
        self._trace_index = 0
        self._stream_bits = None
        self._stream_pos = 0
        if model.primary_source is PrimarySource.FILE_STREAM:
            try:
                data = Path(model.primary_path).read_bytes()
            except OSError as e:
                raise ConfigError(f"cannot read primary stream {model.primary_path}: {e}")
            if not data:
                raise ConfigError(f"primary stream {model.primary_path} is empty")
            self._stream_bits = bytes_to_bits(data)

    def _budget(self) -> int:
        if self.model.kind is TrafficKind.CONSTANT:
            return self.model.symbols
        if self.model.kind is TrafficKind.BURSTY:
            return self.model.symbols if self.rng.random() < self.model.on_prob else 0
        if self._trace_index >= len(self._trace):
            raise EndOfTrace(f"trace {self.model.trace_path} exhausted after {len(self._trace)} entries")
        budget = self._trace[self._trace_index]
        self._trace_index += 1
        return budget

    def _primary_bits(self, count: int) -> np.ndarray:
        if self._stream_bits is None:
            return self.rng.integers(0, 2, count, dtype=np.uint8)
        indices = (self._stream_pos + np.arange(count)) % self._stream_bits.size
        self._stream_pos = (self._stream_pos + count) % self._stream_bits.size
        return self._stream_bits[indices]

    def next_opportunity(self, subframe_index: int) -> TransmissionOpportunity:
        """Draw the next opportunity.

        Raises:
            EndOfTrace: When a trace model has no entries left
        """
        budget = self._budget()
        bits = self._primary_bits(2 * budget)
        return TransmissionOpportunity(qpsk_modulate(bits), self.direction, subframe_index, bits)


def next_opportunity(generator: TrafficGenerator, subframe_index: int) -> TransmissionOpportunity:
    return generator.next_opportunity(subframe_index)
