"""Block-fading baseband channel with AWGN, phase offset, opportunity loss and genie equalization."""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)


class Fading(str, Enum):
    NONE = 'none'
    RAYLEIGH_BLOCK = 'rayleigh_block'
    RICIAN_BLOCK = 'rician_block'


class PhaseOffset(str, Enum):
    NONE = 'none'
    UNIFORM_RANDOM_PER_BLOCK = 'uniform_random_per_block'


@dataclass(frozen=True)
class ChannelModel:
    """Impairment parameters. snr_db = inf disables noise.

    seed only seeds a standalone Channel(model); simulations hand each
    channel its own substream of the run seed.
    """
    snr_db: float = math.inf
    fading: Fading = Fading.NONE
    k_factor: float = 4.0
    phase_offset: PhaseOffset = PhaseOffset.NONE
    loss: float = 0.0
    estimation_error: float = 0.0
    track_phase: bool = True
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'fading', Fading(self.fading))
        object.__setattr__(self, 'phase_offset', PhaseOffset(self.phase_offset))
        object.__setattr__(self, 'snr_db', math.inf if self.snr_db is None else float(self.snr_db))
        if not 0.0 <= self.loss <= 1.0:
            raise ValidationError(f"loss probability {self.loss} outside [0, 1]")
        if self.k_factor < 0.0:
            raise ValidationError("k_factor must be non-negative")
        if self.estimation_error <= -1.0:
            raise ValidationError("estimation_error must be greater than -1")

    @property
    def noise_variance(self) -> float:
        """Complex noise variance relative to unit symbol energy."""
        if math.isinf(self.snr_db) and self.snr_db > 0:
            return 0.0
        return 10.0 ** (-self.snr_db / 10.0)


def draw_coefficient(model: ChannelModel, rng: np.random.Generator) -> complex:
    """Draw one block fading coefficient with unit mean power."""
    if model.fading is Fading.NONE:
        return 1.0 + 0.0j
    scatter = complex(rng.standard_normal(), rng.standard_normal()) / math.sqrt(2.0)
    if model.fading is Fading.RAYLEIGH_BLOCK:
        return scatter
    k = model.k_factor
    return math.sqrt(k / (k + 1.0)) + math.sqrt(1.0 / (k + 1.0)) * scatter


def transmit(block: np.ndarray, model: ChannelModel,
             rng: np.random.Generator) -> Optional[np.ndarray]:
    """Pass one opportunity through the channel.

    Random draws happen in a fixed order (drop, fading, phase, noise) so two
    channels built from the same seed impair equal-length blocks identically.

    Args:
        block: Transmitted symbols
        model: Impairment parameters
        rng: Random generator owned by this channel

    Returns:
        The equalized received block y / (h * rotation) * (1 + eps), or None if
        the opportunity was dropped. With track_phase off the rotation is
        left in the output.
    """
    if model.loss > 0.0 and rng.random() < model.loss:
        return None
    block = np.asarray(block, dtype=np.complex128)
    h = draw_coefficient(model, rng)
    if model.phase_offset is PhaseOffset.UNIFORM_RANDOM_PER_BLOCK:
        rotation = np.exp(1j * rng.uniform(-math.pi, math.pi))
    else:
        rotation = 1.0
    received = h * rotation * block
    variance = model.noise_variance
    if variance > 0.0:
        scale = math.sqrt(variance / 2.0)
        received = received + scale * (rng.standard_normal(block.size) + 1j * rng.standard_normal(block.size))
    equalized = received / (h * rotation) if model.track_phase else received / h
    if model.estimation_error:
        equalized = equalized * (1.0 + model.estimation_error)
    return equalized


class Channel:
    """A ChannelModel bound to its own random stream, with drop accounting."""

    def __init__(self, model: ChannelModel, rng: Optional[np.random.Generator] = None):
        self.model = model
        self.rng = rng if rng is not None else np.random.default_rng(model.seed)
        self.blocks = 0
        self.dropped = 0

    def transmit(self, block: np.ndarray) -> Optional[np.ndarray]:
        self.blocks += 1
        received = transmit(block, self.model, self.rng)
        if received is None:
            self.dropped += 1
        return received
