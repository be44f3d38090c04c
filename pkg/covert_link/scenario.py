"""Scenario configuration, presets and the end-to-end covert link simulation."""

import copy
import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import config
from .analysis import RunMetrics, aggregate_metrics, ks_distance, write_metrics_csv
from .capture import write_capture
from .channel import Channel, ChannelModel
from .constellation import qpsk_demodulate, qpsk_modulate
from .errors import ConfigError, EndOfTrace, ValidationError
from .link import (AuthState, LinkConfig, LinkEvent, LinkSession, NodeRole, on_opportunity, on_receive,
                   tick)
from .packet import HEADER_LEN, Modulation, PacketType, build_packet, parse_header
from .stego import Direction, EmbedPolicy, capacity, embed_packet
from .traffic import TrafficGenerator, TrafficModel

logger = logging.getLogger(__name__)

STREAM_NAMES = ('traffic_dl', 'traffic_ul', 'channel_dl', 'channel_ul', 'flags_bs', 'flags_ue',
                'challenge_bs', 'challenge_ue', 'payload')

STATUS_SUCCESS = 'success'
STATUS_TRANSFER_FAILED = 'transfer_failed'
STATUS_AUTH_FAILED = 'auth_failed'


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named component of a run."""
    return np.random.default_rng([seed, STREAM_NAMES.index(name)])


def _snr_from_json(value) -> float:
    if value is None:
        return math.inf
    if isinstance(value, str):
        if value.strip().lower() in ('inf', 'infinity', '+inf'):
            return math.inf
        return float(value)
    return float(value)


def _snr_to_json(value: float):
    return 'inf' if math.isinf(value) else value


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = 'custom'
    channel: ChannelModel = field(default_factory=ChannelModel)
    traffic: TrafficModel = field(default_factory=TrafficModel)
    policy: EmbedPolicy = field(default_factory=EmbedPolicy)
    link: LinkConfig = field(default_factory=LinkConfig)
    psk: str = config.DEFAULT_PSK
    peer_psk: Optional[str] = None
    covert_input: Optional[str] = None
    covert_size: int = 10000
    duration: int = config.DEFAULT_DURATION_SUBFRAMES
    outputs: str = str(config.OUTPUT_DIR)
    capture: bool = False
    capture_symbols: int = config.CAPTURE_SYMBOLS
    transfer_direction: Direction = Direction.DOWNLINK
    modulations: Optional[List[int]] = None

    def validate(self) -> 'ScenarioConfig':
        """Check cross-field constraints and referenced files.

        Raises:
            ConfigError: On the first violated constraint
        """
        if self.duration < 1:
            raise ConfigError(f"duration must be at least 1 subframe, got {self.duration}")
        if self.covert_size < 0:
            raise ConfigError("covert_size must be non-negative")
        for label, key in (('psk', self.psk), ('peer_psk', self.peer_psk)):
            if key is None:
                continue
            try:
                raw = bytes.fromhex(key)
            except ValueError:
                raise ConfigError(f"{label} is not a hex string")
            if len(raw) < config.MIN_PSK_LEN:
                raise ConfigError(f"{label} must be at least {config.MIN_PSK_LEN} bytes")
        for path in (self.covert_input, self.traffic.trace_path, self.traffic.primary_path):
            if path and not Path(path).is_file():
                raise ConfigError(f"referenced file does not exist: {path}")
        for order in self.modulations or ():
            if order not in (2, 4):
                raise ConfigError(f"unsupported covert modulation order {order}")
        return self

    @property
    def psk_bytes(self) -> bytes:
        return bytes.fromhex(self.psk)

    @property
    def peer_psk_bytes(self) -> bytes:
        return bytes.fromhex(self.peer_psk) if self.peer_psk else self.psk_bytes

    def with_modulation(self, order: int) -> 'ScenarioConfig':
        policy = dataclasses.replace(self.policy, payload_modulation=Modulation.from_order(order))
        return dataclasses.replace(self, policy=policy, modulations=None)

    def with_snr(self, snr_db: float) -> 'ScenarioConfig':
        return dataclasses.replace(self, channel=dataclasses.replace(self.channel, snr_db=snr_db))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenarioConfig':
        """Build a config from its JSON form.

        Raises:
            ConfigError: On unknown keys or invalid values
        """
        data = copy.deepcopy(data)
        data.pop('description', None)
        try:
            channel = dict(data.pop('channel', {}))
            if 'seed' in channel:
                raise ConfigError("channel.seed is not a scenario setting; runs draw channel noise from the run seed")
            channel['snr_db'] = _snr_from_json(channel.get('snr_db'))
            policy = dict(data.pop('policy', {}))
            if 'payload_modulation' in policy:
                policy['payload_modulation'] = Modulation.from_order(int(policy['payload_modulation']))
            if 'transfer_direction' in data:
                data['transfer_direction'] = Direction(data['transfer_direction'])
            scenario = cls(channel=ChannelModel(**channel),
                           traffic=TrafficModel(**data.pop('traffic', {})),
                           policy=EmbedPolicy(**policy),
                           link=LinkConfig(**data.pop('link', {})),
                           **data)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid scenario: {e}")
        return scenario.validate()

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        del data['channel']['seed']
        data['channel']['snr_db'] = _snr_to_json(self.channel.snr_db)
        data['channel']['fading'] = self.channel.fading.value
        data['channel']['phase_offset'] = self.channel.phase_offset.value
        data['traffic']['kind'] = self.traffic.kind.value
        data['traffic']['primary_source'] = self.traffic.primary_source.value
        data['policy']['payload_modulation'] = self.policy.payload_modulation.order
        data['transfer_direction'] = self.transfer_direction.value
        return data


def load_scenario(path) -> ScenarioConfig:
    """Read a JSON scenario file.

    Raises:
        ConfigError: If the file is missing, not JSON, or invalid
    """
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read scenario {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"scenario {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"scenario {path} must be a JSON object")
    return ScenarioConfig.from_dict(data)


PRESETS: Dict[str, Dict[str, Any]] = {
    'noiseless-smoke': {
        'description': '10 kB over a noiseless channel, fixed 4-ASK',
        'channel': {'snr_db': 'inf'},
        'policy': {'payload_modulation': 4},
        'covert_size': 10000,
        'duration': 2000,
    },
    'modulation-compare': {
        'description': 'Constant 1200-symbol traffic at 30 dB, 2-ASK and 4-ASK side by side',
        'channel': {'snr_db': 30.0},
        'policy': {'payload_modulation': 4},
        'covert_size': 30000,
        'duration': 6000,
        'modulations': [2, 4],
    },
    'mismatched-psk': {
        'description': 'UE holds a different key; authentication must fail',
        'channel': {'snr_db': 'inf'},
        'peer_psk': 'ff' * 32,
        'covert_size': 1000,
        'duration': 400,
    },
    'lossy-arq': {
        'description': '30% opportunity loss, 16 retries',
        'channel': {'snr_db': 'inf', 'loss': 0.3},
        'link': {'max_retries': 16, 'auth_max_attempts': 16},
        'covert_size': 20000,
        'duration': 20000,
    },
    'bursty-dummy': {
        'description': 'Bursty primary traffic with dummy primary fill, randomized distances',
        'channel': {'snr_db': 45.0},
        'traffic': {'kind': 'bursty', 'on_prob': 0.3},
        'policy': {'payload_modulation': 4, 'undetectable': True, 'dummy_primary': True},
        'covert_size': 10000,
        'duration': 6000,
    },
    'static': {
        'description': 'Static indoor link, randomized distances, captures enabled',
        'channel': {'snr_db': 45.0},
        'policy': {'payload_modulation': 4, 'undetectable': True},
        'covert_size': 20000,
        'duration': 6000,
        'capture': True,
    },
    'pccaas': {
        'description': 'Shared-infrastructure slice: Rician block fading, uplink transfer',
        'channel': {'snr_db': 45.0, 'fading': 'rician_block', 'k_factor': 4.0},
        'policy': {'payload_modulation': 4, 'undetectable': True},
        'link': {'max_retries': 16},
        'transfer_direction': 'uplink',
        'covert_size': 10000,
        'duration': 10000,
    },
    'outdoor': {
        'description': 'Rayleigh block fading with per-block phase offset, 2-ASK',
        'channel': {'snr_db': 36.0, 'fading': 'rayleigh_block',
                    'phase_offset': 'uniform_random_per_block'},
        'policy': {'payload_modulation': 2},
        'link': {'max_retries': 16, 'auth_max_attempts': 16},
        'covert_size': 10000,
        'duration': 15000,
    },
}


def preset(name: str) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (known: {', '.join(PRESETS)})")
    data = copy.deepcopy(PRESETS[name])
    data.pop('description', None)
    return ScenarioConfig.from_dict({'name': name, **data})


@dataclass
class RunResult:
    status: str
    metrics: RunMetrics
    csv_row: Dict[str, Any]
    events: List[LinkEvent]
    delivered: bytes
    covert_input: bytes
    metadata: Dict[str, Any]
    captures: Dict[str, np.ndarray] = field(default_factory=dict)
    diagnostic: str = ''

    @property
    def event_lines(self) -> List[str]:
        return [event.to_line() for event in self.events]


class CovertLinkSimulation:
    """Drives a BS and a UE session over two independent channels, one subframe at a time."""

    def __init__(self, scenario: ScenarioConfig, seed: int = config.DEFAULT_SEED):
        self.scenario = scenario
        self.seed = seed
        self.policy = scenario.policy
        self.bs = LinkSession(NodeRole.BS, scenario.psk_bytes, scenario.link,
                              substream(seed, 'challenge_bs'))
        self.ue = LinkSession(NodeRole.UE, scenario.peer_psk_bytes, scenario.link,
                              substream(seed, 'challenge_ue'))
        self.dl_traffic = TrafficGenerator(scenario.traffic, substream(seed, 'traffic_dl'), Direction.DOWNLINK)
        self.ul_traffic = TrafficGenerator(scenario.traffic, substream(seed, 'traffic_ul'), Direction.UPLINK)
        self.dl_channel = Channel(scenario.channel, substream(seed, 'channel_dl'))
        self.ul_channel = Channel(scenario.channel, substream(seed, 'channel_ul'))
        # Same stream as the downlink channel so the clean reference sees identical impairments.
        self.reference_channel = Channel(scenario.channel, substream(seed, 'channel_dl'))
        self.flag_rngs = {NodeRole.BS: substream(seed, 'flags_bs'), NodeRole.UE: substream(seed, 'flags_ue')}
        self.covert_input = self._load_covert_input()
        self.primary_opportunities = 0
        self.primary_errored = 0
        self.primary_bits_ok = 0
        self._stego_capture: List[np.ndarray] = []
        self._clean_capture: List[np.ndarray] = []
        self._captured = 0

    def _load_covert_input(self) -> bytes:
        if self.scenario.covert_input:
            return Path(self.scenario.covert_input).read_bytes()
        return substream(self.seed, 'payload').bytes(self.scenario.covert_size)

    def _account_primary(self, opportunity, block, received):
        if block.dummy or opportunity.num_symbols == 0:
            return
        self.primary_opportunities += 1
        if received is None:
            self.primary_errored += 1
            return
        bits = qpsk_demodulate(received)
        if np.any(bits != opportunity.primary_bits):
            self.primary_errored += 1
        else:
            self.primary_bits_ok += bits.size

    def _capture(self, stego_symbols: np.ndarray, received: Optional[np.ndarray]):
        # Paired draw keeps the reference channel in step even when not capturing.
        clean = qpsk_modulate(qpsk_demodulate(stego_symbols)) if stego_symbols.size else stego_symbols
        reference = self.reference_channel.transmit(clean)
        if not self.scenario.capture or received is None or self._captured >= self.scenario.capture_symbols:
            return
        take = min(received.size, self.scenario.capture_symbols - self._captured)
        self._stego_capture.append(received[:take])
        self._clean_capture.append(reference[:take])
        self._captured += take

    def run(self) -> RunResult:
        scenario = self.scenario
        sender, receiver = ((self.bs, self.ue) if scenario.transfer_direction is Direction.DOWNLINK
                            else (self.ue, self.bs))
        sender.send(self.covert_input)
        logger.info(f"Running scenario '{scenario.name}' seed {self.seed}: {len(self.covert_input)} covert bytes "
                    f"{scenario.transfer_direction.value}, {scenario.policy.payload_modulation.order}-ASK")

        events: List[LinkEvent] = []
        elapsed = 0
        for subframe in range(scenario.duration):
            tick(self.bs, subframe)
            tick(self.ue, subframe)
            try:
                dl_opportunity = self.dl_traffic.next_opportunity(subframe)
                ul_opportunity = self.ul_traffic.next_opportunity(subframe)
            except EndOfTrace as e:
                logger.info(f"Stopping at subframe {subframe}: {e}")
                break
            elapsed = subframe + 1

            dl_block = on_opportunity(self.bs, dl_opportunity, self.policy, self.flag_rngs[NodeRole.BS])
            ul_block = on_opportunity(self.ue, ul_opportunity, self.policy, self.flag_rngs[NodeRole.UE])
            dl_received = self.dl_channel.transmit(dl_block.symbols)
            ul_received = self.ul_channel.transmit(ul_block.symbols)
            self._capture(dl_block.symbols, dl_received)
            self._account_primary(dl_opportunity, dl_block, dl_received)
            self._account_primary(ul_opportunity, ul_block, ul_received)

            events.extend(on_receive(self.ue, dl_received, self.policy))
            events.extend(on_receive(self.bs, ul_received, self.policy))

            if AuthState.FAILED in (self.bs.auth_state, self.ue.auth_state):
                break
            if sender.transfer_failed:
                break
            if receiver.completed and sender.idle:
                break

        status, diagnostic = self._status(sender, receiver, elapsed)
        delivered = receiver.completed[0] if receiver.completed else bytes(receiver.delivered)
        ks = None
        captures: Dict[str, np.ndarray] = {}
        if self._stego_capture:
            captures['stego'] = np.concatenate(self._stego_capture)
            captures['clean'] = np.concatenate(self._clean_capture)
            ks = ks_distance(np.abs(captures['stego']), np.abs(captures['clean']))
        metadata = {
            'scenario': scenario.name,
            'seed': self.seed,
            'snr_db': _snr_to_json(scenario.channel.snr_db),
            'modulation': scenario.policy.payload_modulation.order,
            'undetectable': scenario.policy.undetectable,
            'subframes': elapsed,
            'primary_opportunities': self.primary_opportunities,
            'primary_errored': self.primary_errored,
            'primary_bits_ok': self.primary_bits_ok,
            'ks_vs_clean': ks,
        }
        metrics, row = aggregate_metrics((event.to_line() for event in events), metadata)
        logger.info(f"Scenario '{scenario.name}' seed {self.seed} finished: {status} after {elapsed} subframes")
        return RunResult(status, metrics, row, events, delivered, self.covert_input, metadata, captures, diagnostic)

    def _status(self, sender: LinkSession, receiver: LinkSession, elapsed: int):
        if AuthState.FAILED in (self.bs.auth_state, self.ue.auth_state):
            return STATUS_AUTH_FAILED, 'mutual authentication failed'
        if receiver.completed:
            if receiver.completed[0] != self.covert_input:
                return STATUS_TRANSFER_FAILED, 'delivered bytes differ from the covert input'
            return STATUS_SUCCESS, ''
        if sender.transfer_failed:
            return STATUS_TRANSFER_FAILED, 'retransmission limit exceeded'
        if not (self.bs.is_mutual and self.ue.is_mutual):
            return STATUS_AUTH_FAILED, f"authentication incomplete after {elapsed} subframes"
        return STATUS_TRANSFER_FAILED, f"transfer incomplete after {elapsed} subframes"


def run_scenario(scenario: ScenarioConfig, seed: int = config.DEFAULT_SEED) -> List[RunResult]:
    """Run a scenario once per listed modulation (or once with its policy)."""
    if not scenario.modulations:
        return [CovertLinkSimulation(scenario, seed).run()]
    return [CovertLinkSimulation(scenario.with_modulation(order), seed).run()
            for order in scenario.modulations]


def write_artifacts(result: RunResult, out_dir) -> Path:
    """Write delivered.bin, events.log, metrics.csv and any captures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / 'delivered.bin').write_bytes(result.delivered)
    (out_dir / 'events.log').write_text(''.join(line + '\n' for line in result.event_lines), encoding='utf-8')
    write_metrics_csv(out_dir / 'metrics.csv', [result.csv_row])
    sidecar = {key: result.metadata[key] for key in ('seed', 'scenario', 'snr_db', 'modulation', 'undetectable')}
    for name, symbols in result.captures.items():
        write_capture(out_dir / f"capture_{name}.iq", symbols,
                      {**sidecar, 'undetectable': result.metadata['undetectable'] if name == 'stego' else False})
    return out_dir


def _sweep_task(task) -> Dict[str, Any]:
    scenario, seed = task
    return CovertLinkSimulation(scenario, seed).run().csv_row


def sweep(scenario: ScenarioConfig, snrs: Sequence[float], modulations: Sequence[int],
          trials: int = 1, base_seed: int = config.DEFAULT_SEED, jobs: int = 1) -> List[Dict[str, Any]]:
    """Run every (trial, snr, modulation) combination.

    Rows come back ordered by (trial, snr, mod) whatever the completion order.
    """
    if trials < 1:
        raise ValidationError("trials must be at least 1")
    tasks = [(scenario.with_snr(snr).with_modulation(order), base_seed + trial)
             for trial in range(trials) for snr in snrs for order in modulations]
    logger.info(f"Sweeping {len(tasks)} runs with {jobs} worker(s)")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_task, tasks))
    return [_sweep_task(task) for task in tasks]


def parse_range(text: str) -> List[float]:
    """Parse 'start:stop:step' (inclusive stop) or a single value.

    Raises:
        ConfigError: If the range is malformed
    """
    try:
        parts = [float(p) for p in text.split(':')]
    except ValueError:
        raise ConfigError(f"invalid range '{text}'")
    if len(parts) == 1:
        return parts
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise ConfigError(f"range must be start:stop:step with step > 0, got '{text}'")
    start, stop, step = parts
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 9) for i in range(count)]


@dataclass
class SteganalysisResult:
    clean: np.ndarray
    stego: np.ndarray
    ks: float
    clean_per: float
    stego_per: float
    blocks: int

    @property
    def primary_throughput_loss(self) -> float:
        """Relative drop in error-free primary opportunities caused by embedding."""
        if self.clean_per >= 1.0:
            return 0.0
        return max(0.0, (self.stego_per - self.clean_per) / (1.0 - self.clean_per))


def run_steganalysis(snr_db: float, modulation: int = 4, undetectable: bool = False,
                     flag_table: str = config.DEFAULT_FLAG_TABLE,
                     n_symbols: int = config.CAPTURE_SYMBOLS, seed: int = config.DEFAULT_SEED,
                     header_distance: float = config.HEADER_DISTANCE,
                     opportunity_symbols: int = config.DEFAULT_OPPORTUNITY_SYMBOLS) -> SteganalysisResult:
    """Capture received symbols with and without saturated covert embedding.

    Every opportunity carries one type-2 packet filled to capacity. The clean
    and stego blocks go through paired channels with the same seed.
    """
    policy = EmbedPolicy(payload_modulation=Modulation.from_order(modulation), undetectable=undetectable,
                         flag_table=flag_table, header_distance=header_distance)
    payload_len = capacity(opportunity_symbols, modulation)
    if payload_len is None:
        raise ValidationError(f"{opportunity_symbols} symbols cannot carry a covert packet")
    channel = ChannelModel(snr_db=snr_db)
    clean_channel = Channel(channel, substream(seed, 'channel_dl'))
    stego_channel = Channel(channel, substream(seed, 'channel_dl'))
    traffic_rng = substream(seed, 'traffic_dl')
    flag_rng = substream(seed, 'flags_bs')
    payload_rng = substream(seed, 'payload')

    clean_blocks, stego_blocks = [], []
    clean_errors = stego_errors = blocks = 0
    collected = 0
    while collected < n_symbols:
        bits = traffic_rng.integers(0, 2, 2 * opportunity_symbols, dtype=np.uint8)
        symbols = qpsk_modulate(bits)
        flag = int(flag_rng.integers(0, 4)) if undetectable else 0
        wire = build_packet(PacketType.DATA, payload_rng.bytes(payload_len), blocks % 1024,
                            policy.payload_modulation, flag)
        header = parse_header(wire[:HEADER_LEN])
        stego = embed_packet(symbols, wire, header, policy)
        received_clean = clean_channel.transmit(symbols)
        received_stego = stego_channel.transmit(stego)
        clean_errors += int(np.any(qpsk_demodulate(received_clean) != bits))
        stego_errors += int(np.any(qpsk_demodulate(received_stego) != bits))
        take = min(opportunity_symbols, n_symbols - collected)
        clean_blocks.append(received_clean[:take])
        stego_blocks.append(received_stego[:take])
        collected += take
        blocks += 1

    clean = np.concatenate(clean_blocks)
    stego = np.concatenate(stego_blocks)
    ks = ks_distance(np.abs(stego), np.abs(clean))
    logger.info(f"Steganalysis at {snr_db} dB, {modulation}-ASK, undetectable={undetectable}: KS {ks:.4f}")
    return SteganalysisResult(clean, stego, ks, clean_errors / blocks, stego_errors / blocks, blocks)
