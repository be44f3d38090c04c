import logging
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Deque, Dict, List, Optional, Tuple

import networkx as nx
import numpy as np

from . import config
from .codec import hmac_sha256, verify_hmac
from .errors import ValidationError
from .packet import (CHALLENGE_LEN, RELIABLE_TYPES, SEQ_MODULUS, AddressInfo, CovertHeader,
                     Modulation, PacketType, build_packet, build_typed_payload,
                     parse_typed_payload)
from . import stego
from .stego import EmbedPolicy, StegoBlock, TransmissionOpportunity, TransmitRecord

logger = logging.getLogger(__name__)

# Reliable types confirmed by a type-0 ACK; a challenge is confirmed by its response.
ACKED_TYPES = frozenset({PacketType.DATA, PacketType.ADDRESS, PacketType.AUTH_ACK})
DATA_TYPES = frozenset({PacketType.DATA, PacketType.ADDRESS})
ADDRESS_PAYLOAD_LEN = 12


class NodeRole(str, Enum):
    BS = 'bs'
    UE = 'ue'


class AuthState(str, Enum):
    IDLE = 'idle'
    CHALLENGE_SENT = 'challenge_sent'
    PEER_AUTHENTICATED = 'peer_authenticated'
    SELF_AUTHENTICATED = 'self_authenticated'
    MUTUAL = 'mutual'
    FAILED = 'failed'


def _build_auth_graph() -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_edges_from([
        (AuthState.IDLE, AuthState.CHALLENGE_SENT),
        (AuthState.IDLE, AuthState.SELF_AUTHENTICATED),
        (AuthState.SELF_AUTHENTICATED, AuthState.CHALLENGE_SENT),
        (AuthState.CHALLENGE_SENT, AuthState.PEER_AUTHENTICATED),
        (AuthState.CHALLENGE_SENT, AuthState.MUTUAL),
        (AuthState.PEER_AUTHENTICATED, AuthState.MUTUAL),
    ])
    # A final auth ACK that is never confirmed fails an already mutual session.
    for state in (AuthState.IDLE, AuthState.CHALLENGE_SENT, AuthState.PEER_AUTHENTICATED,
                  AuthState.SELF_AUTHENTICATED, AuthState.MUTUAL):
        graph.add_edge(state, AuthState.FAILED)
    return graph


AUTH_TRANSITIONS = _build_auth_graph()


@dataclass(frozen=True)
class LinkConfig:
    """ARQ and authentication parameters of a session."""
    timeout_subframes: int = config.DEFAULT_TIMEOUT_SUBFRAMES
    max_retries: int = config.DEFAULT_MAX_RETRIES
    window: int = config.DEFAULT_WINDOW
    auth_max_attempts: int = config.DEFAULT_AUTH_ATTEMPTS
    ack_repeats: int = config.DEFAULT_ACK_REPEATS

    def __post_init__(self):
        if not 1 <= self.window <= config.MAX_WINDOW:
            raise ValidationError(f"window must be in [1, {config.MAX_WINDOW}], got {self.window}")
        if self.timeout_subframes < 1:
            raise ValidationError("timeout_subframes must be at least 1")
        if self.max_retries < 1 or self.auth_max_attempts < 1:
            raise ValidationError("retry limits must be at least 1")
        if self.ack_repeats < 0:
            raise ValidationError("ack_repeats must be non-negative")


@dataclass(frozen=True)
class LinkEvent:
    """A protocol event, rendered as one key=value log line."""
    kind: str
    subframe: int
    node: str
    fields: Tuple[Tuple[str, Any], ...] = ()
    data: Optional[bytes] = field(default=None, compare=False, repr=False)

    def get(self, key: str, default: Any = None) -> Any:
        return dict(self.fields).get(key, default)

    def to_line(self) -> str:
        parts = [f"subframe={self.subframe}", f"node={self.node}", f"event={self.kind}"]
        parts.extend(f"{key}={value}" for key, value in self.fields)
        return ' '.join(parts)


@dataclass
class OutgoingTransfer:
    transfer_id: int
    data: bytes
    destination: int
    segments: Optional[List[bytes]] = None
    next_segment: int = 0
    address_sent: bool = False
    outstanding: set = field(default_factory=set)

    @property
    def fully_sent(self) -> bool:
        return self.segments is not None and self.next_segment >= len(self.segments)


@dataclass
class PendingEntry:
    wire: bytes
    header: CovertHeader
    limit: int
    deadline: int
    retries: int = 0
    eligible: bool = False
    transfer: Optional[OutgoingTransfer] = None
    payload: bytes = b''


@dataclass
class IncomingTransfer:
    info: AddressInfo
    received: int = 0
    data: bytearray = field(default_factory=bytearray)


class LinkSession:
    """Per-node protocol state: authentication, ARQ sender and receiver.

    The base station challenges first; the UE challenges back once it has
    been authenticated. Data (types 2 and 3) flows only in the mutual state.
    """

    def __init__(self, role: NodeRole, psk: bytes, link_config: Optional[LinkConfig] = None,
                 challenge_rng: Optional[np.random.Generator] = None,
                 msin: Optional[int] = None, max_payload_len: int = config.MAX_PAYLOAD_LEN):
        if len(psk) < config.MIN_PSK_LEN:
            raise ValidationError(f"pre-shared key must be at least {config.MIN_PSK_LEN} bytes")
        self.role = NodeRole(role)
        self.psk = bytes(psk)
        self.link_config = link_config or LinkConfig()
        self.challenge_rng = challenge_rng or np.random.default_rng()
        self.msin = msin if msin is not None else (config.BS_MSIN if self.role is NodeRole.BS
                                                   else config.UE_MSIN)
        self.max_payload_len = max_payload_len
        self.now = 0

        self.auth_state = AuthState.IDLE
        self._peer_ok = False
        self._self_ok = False
        self._challenge: Optional[bytes] = None
        self._challenge_outstanding = False
        self._responded = False

        self.seq_counter = 0
        self.pending: "OrderedDict[int, PendingEntry]" = OrderedDict()
        self._control_queue: Deque[Tuple[PacketType, int]] = deque()
        self._auth_outbox: Deque[Tuple[PacketType, bytes, int]] = deque()
        self._reliable_outbox: Deque[Tuple[PacketType, bytes]] = deque()
        self._ack_repeats: "OrderedDict[int, int]" = OrderedDict()
        self._transfers: Deque[OutgoingTransfer] = deque()
        self._transfer_ids = 0

        self.rx_expected = 0
        self._rx_buffer: Dict[int, Tuple[CovertHeader, Any]] = {}
        self._rx_transfer: Optional[IncomingTransfer] = None
        self.delivered = bytearray()
        self.completed: List[bytes] = []
        self.transfer_failed = False
        self._events: List[LinkEvent] = []

    # ----- state -----

    @property
    def name(self) -> str:
        return self.role.value

    @property
    def is_mutual(self) -> bool:
        return self.auth_state is AuthState.MUTUAL

    @property
    def idle(self) -> bool:
        """True when every queued transfer has been acknowledged."""
        return not self._transfers and not self.pending

    def _derive_state(self) -> AuthState:
        if self.auth_state is AuthState.FAILED:
            return AuthState.FAILED
        if self._peer_ok and self._self_ok:
            return AuthState.MUTUAL
        if self._peer_ok:
            return AuthState.PEER_AUTHENTICATED
        if self._challenge_outstanding:
            return AuthState.CHALLENGE_SENT
        if self._self_ok:
            return AuthState.SELF_AUTHENTICATED
        return AuthState.IDLE

    def _set_state(self, new_state: AuthState):
        if new_state is self.auth_state:
            return
        if not AUTH_TRANSITIONS.has_edge(self.auth_state, new_state):
            raise ValidationError(f"illegal auth transition {self.auth_state.value} -> {new_state.value}")
        logger.debug(f"[{self.name}] auth {self.auth_state.value} -> {new_state.value}")
        self.auth_state = new_state
        if new_state is AuthState.MUTUAL:
            logger.info(f"[{self.name}] Mutual authentication reached at subframe {self.now}")
            self._emit('authenticated', state='mutual')

    def _update_state(self):
        self._set_state(self._derive_state())

    def _fail_auth(self, reason: str):
        if self.auth_state is AuthState.FAILED:
            return
        logger.warning(f"[{self.name}] Authentication failed: {reason}")
        self._set_state(AuthState.FAILED)
        self._emit('auth_failed', reason=reason)
        self.pending.clear()
        self._reliable_outbox.clear()
        self._auth_outbox.clear()
        self._transfers.clear()

    def _emit(self, kind: str, data: Optional[bytes] = None, **fields):
        cleaned = tuple((key, value.replace(" ", "_") if isinstance(value, str) else value)
                        for key, value in fields.items())
        self._events.append(LinkEvent(kind, self.now, self.name, cleaned, data))

    def drain_events(self) -> List[LinkEvent]:
        events, self._events = self._events, []
        return events

    # ----- sender -----

    def send(self, data: bytes, destination: Optional[int] = None) -> int:
        """Queue a covert transfer; returns its transfer id."""
        destination = destination if destination is not None else (
            config.UE_MSIN if self.role is NodeRole.BS else config.BS_MSIN)
        self._transfer_ids += 1
        self._transfers.append(OutgoingTransfer(self._transfer_ids, bytes(data), destination))
        logger.info(f"[{self.name}] Queued transfer {self._transfer_ids} of {len(data)} bytes")
        return self._transfer_ids

    def _window_open(self) -> bool:
        if not self.pending:
            return True
        if len(self.pending) >= self.link_config.window:
            return False
        oldest = next(iter(self.pending))
        return (self.seq_counter - oldest) % SEQ_MODULUS < self.link_config.window

    def _needs_challenge(self) -> bool:
        if self.auth_state is AuthState.FAILED or self._challenge is not None:
            return False
        if self.role is NodeRole.BS:
            return True
        return self._self_ok

    def _next_transfer(self) -> Optional[OutgoingTransfer]:
        for transfer in self._transfers:
            if not transfer.fully_sent:
                return transfer
        return None

    def wants_to_send(self) -> bool:
        """True when an opportunity would carry something other than an ACK repeat."""
        if self._control_queue or self._auth_outbox:
            return True
        if any(entry.eligible for entry in self.pending.values()):
            return True
        if self._window_open() and (self._reliable_outbox or self._needs_challenge()):
            return True
        return self.is_mutual and self._window_open() and self._next_transfer() is not None

    def next_packet(self, num_symbols: int, modulation: Modulation,
                    threshold_flag: int) -> Optional[TransmitRecord]:
        """Pick the packet for an opportunity of num_symbols symbols.

        Priority: ACK/NACK, auth responses and new auth packets, eligible
        retransmissions, new data, then ACK repeats.
        """
        modulation = Modulation(modulation)
        order = modulation.order

        def fits(payload_len: int, packet_order: int = order) -> bool:
            return stego.symbols_needed(payload_len, packet_order) <= num_symbols

        if self._control_queue and fits(2):
            packet_type, number = self._control_queue.popleft()
            if packet_type is PacketType.ACK and self.link_config.ack_repeats:
                self._ack_repeats[number] = self.link_config.ack_repeats
                self._ack_repeats.move_to_end(number)
            return self._emit_unreliable(packet_type, build_typed_payload(packet_type, number),
                                         number, modulation, threshold_flag)

        if self._auth_outbox and fits(CHALLENGE_LEN):
            packet_type, payload, number = self._auth_outbox.popleft()
            return self._emit_unreliable(packet_type, payload, number, modulation, threshold_flag)

        if self._window_open():
            if not self._reliable_outbox and self._needs_challenge():
                self._challenge = self.challenge_rng.bytes(CHALLENGE_LEN)
                self._challenge_outstanding = True
                self._reliable_outbox.append((PacketType.CHALLENGE, self._challenge))
                self._update_state()
            if self._reliable_outbox and fits(len(self._reliable_outbox[0][1])):
                packet_type, payload = self._reliable_outbox.popleft()
                return self._emit_reliable(packet_type, payload, modulation, threshold_flag,
                                           self.link_config.auth_max_attempts)

        for number, entry in self.pending.items():
            if entry.eligible and fits(entry.header.payload_len, entry.header.modulation.order):
                entry.eligible = False
                entry.deadline = self.now + self.link_config.timeout_subframes
                self._emit('packet_sent', pkt=number, type=int(entry.header.packet_type),
                           bytes=entry.header.payload_len, flag=entry.header.threshold_flag,
                           retx=1, repeat=0)
                logger.debug(f"[{self.name}] Retransmitting pkt {number} (retry {entry.retries})")
                return TransmitRecord(entry.header, entry.wire, retransmission=True)

        if self.is_mutual and self._window_open():
            record = self._next_data_packet(num_symbols, modulation, threshold_flag)
            if record is not None:
                return record

        if self._ack_repeats and fits(2):
            number, remaining = next(iter(self._ack_repeats.items()))
            del self._ack_repeats[number]
            if remaining > 1:
                self._ack_repeats[number] = remaining - 1
            return self._emit_unreliable(PacketType.ACK, build_typed_payload(PacketType.ACK, number),
                                         number, modulation, threshold_flag, repeat=True)
        return None

    def _next_data_packet(self, num_symbols: int, modulation: Modulation,
                          threshold_flag: int) -> Optional[TransmitRecord]:
        transfer = self._next_transfer()
        if transfer is None:
            return None
        budget = stego.capacity(num_symbols, modulation.order)
        if budget is None:
            return None
        if not transfer.address_sent:
            if budget < ADDRESS_PAYLOAD_LEN:
                return None
            segment_size = max(1, min(budget, self.max_payload_len))
            segments = [transfer.data[i:i + segment_size]
                        for i in range(0, len(transfer.data), segment_size)]
            if len(segments) > 0xFFFF:
                self._fail_transfer(transfer, f"{len(segments)} segments exceed the address field")
                return None
            transfer.segments = segments
            transfer.address_sent = True
            info = AddressInfo(self.msin, transfer.destination, len(segments))
            logger.info(f"[{self.name}] Transfer {transfer.transfer_id}: {len(segments)} segments "
                        f"of up to {segment_size} bytes")
            return self._emit_reliable(PacketType.ADDRESS, build_typed_payload(PacketType.ADDRESS, info),
                                       modulation, threshold_flag, self.link_config.max_retries, transfer)
        segment = transfer.segments[transfer.next_segment]
        if len(segment) > budget:
            return None
        transfer.next_segment += 1
        return self._emit_reliable(PacketType.DATA, segment, modulation, threshold_flag,
                                   self.link_config.max_retries, transfer)

    def _emit_unreliable(self, packet_type: PacketType, payload: bytes, number: int,
                         modulation: Modulation, threshold_flag: int,
                         repeat: bool = False) -> TransmitRecord:
        header = CovertHeader(len(payload), number, modulation, threshold_flag, packet_type)
        wire = build_packet(packet_type, payload, number, modulation, threshold_flag)
        self._emit('packet_sent', pkt=number, type=int(packet_type), bytes=len(payload),
                   flag=threshold_flag, retx=0, repeat=int(repeat))
        return TransmitRecord(header, wire, repeat=repeat)

    def _emit_reliable(self, packet_type: PacketType, payload: bytes, modulation: Modulation,
                       threshold_flag: int, limit: int,
                       transfer: Optional[OutgoingTransfer] = None) -> TransmitRecord:
        number = self.seq_counter
        self.seq_counter = (self.seq_counter + 1) % SEQ_MODULUS
        header = CovertHeader(len(payload), number, modulation, threshold_flag, packet_type)
        wire = build_packet(packet_type, payload, number, modulation, threshold_flag)
        self.pending[number] = PendingEntry(wire, header, limit,
                                            self.now + self.link_config.timeout_subframes,
                                            transfer=transfer, payload=payload)
        if transfer is not None:
            transfer.outstanding.add(number)
        self._emit('packet_sent', pkt=number, type=int(packet_type), bytes=len(payload),
                   flag=threshold_flag, retx=0, repeat=0)
        return TransmitRecord(header, wire)

    # ----- timers -----

    def tick(self, subframe: int):
        """Advance the clock; expired entries become eligible or fail."""
        self.now = subframe
        for number, entry in list(self.pending.items()):
            if number in self.pending and not entry.eligible and entry.deadline <= subframe:
                self._schedule_retransmission(number, entry, 'timeout')

    def _schedule_retransmission(self, number: int, entry: PendingEntry, cause: str):
        entry.retries += 1
        if entry.retries >= entry.limit:
            self._give_up(number, entry)
            return
        entry.eligible = True
        logger.debug(f"[{self.name}] pkt {number} eligible for retransmission ({cause})")

    def _give_up(self, number: int, entry: PendingEntry):
        if entry.header.packet_type in DATA_TYPES:
            self._fail_transfer(entry.transfer, f"pkt {number} unacknowledged after {entry.retries} retries")
        else:
            self._fail_auth(f"{entry.header.packet_type.name.lower()} pkt {number} unanswered "
                            f"after {entry.retries} attempts")

    def _fail_transfer(self, transfer: Optional[OutgoingTransfer], reason: str):
        logger.warning(f"[{self.name}] Transfer failed: {reason}")
        self.transfer_failed = True
        self._emit('transfer_failed', transfer=transfer.transfer_id if transfer else 0,
                   reason=reason)
        if transfer is not None:
            for number in list(transfer.outstanding):
                self.pending.pop(number, None)
            if transfer in self._transfers:
                self._transfers.remove(transfer)

    # ----- receiver -----

    def receive(self, block: Optional[np.ndarray], policy: EmbedPolicy):
        """Detect, extract and dispatch the covert packet of a received block."""
        if block is None:
            return
        header = stego.detect(block, policy, self.max_payload_len)
        if header is None:
            return
        payload = stego.extract(block, header, policy)
        if payload is None:
            logger.debug(f"[{self.name}] CRC32 failure on pkt {header.packet_number}")
            if header.packet_type in RELIABLE_TYPES:
                self._queue_control(PacketType.NACK, header.packet_number)
                self._emit('nack_sent', pkt=header.packet_number)
            return
        try:
            value = parse_typed_payload(header.packet_type, payload)
        except ValidationError as e:
            logger.warning(f"[{self.name}] Discarding malformed {header.packet_type.name}: {e}")
            return

        if header.packet_type is PacketType.ACK:
            self._on_ack(value)
        elif header.packet_type is PacketType.NACK:
            entry = self.pending.get(value)
            if entry is not None and not entry.eligible:
                self._schedule_retransmission(value, entry, 'nack')
        elif header.packet_type is PacketType.RESPONSE:
            self._on_response(header.packet_number, value)
        else:
            self._receive_reliable(header, value)

    def _queue_control(self, packet_type: PacketType, number: int):
        if (packet_type, number) not in self._control_queue:
            self._control_queue.append((packet_type, number))

    def _on_ack(self, number: int):
        entry = self.pending.get(number)
        if entry is None or entry.header.packet_type not in ACKED_TYPES:
            return
        del self.pending[number]
        transfer = entry.transfer
        if transfer is None:
            return
        transfer.outstanding.discard(number)
        if transfer.fully_sent and not transfer.outstanding and transfer in self._transfers:
            self._transfers.remove(transfer)
            logger.info(f"[{self.name}] Transfer {transfer.transfer_id} acknowledged "
                        f"({len(transfer.data)} bytes)")
            self._emit('transfer_acked', transfer=transfer.transfer_id, bytes=len(transfer.data))

    def _on_response(self, number: int, digest: bytes):
        entry = self.pending.get(number)
        if entry is None or entry.header.packet_type is not PacketType.CHALLENGE:
            return
        del self.pending[number]
        self._challenge_outstanding = False
        if not verify_hmac(self.psk, entry.payload, digest):
            self._fail_auth('hmac_mismatch')
            return
        logger.info(f"[{self.name}] Peer authenticated at subframe {self.now}")
        self._peer_ok = True
        self._emit('authenticated', state='peer')
        self._reliable_outbox.append((PacketType.AUTH_ACK, build_typed_payload(PacketType.AUTH_ACK)))
        self._update_state()

    def _receive_reliable(self, header: CovertHeader, value: Any):
        if self.auth_state is AuthState.FAILED:
            return
        if header.packet_type in DATA_TYPES and not self.is_mutual:
            logger.warning(f"[{self.name}] Refusing {header.packet_type.name} pkt "
                           f"{header.packet_number} before mutual authentication")
            self._emit('data_refused', pkt=header.packet_number, type=int(header.packet_type))
            return

        number = header.packet_number
        window = self.link_config.window
        offset = (number - self.rx_expected) % SEQ_MODULUS
        if offset < window:
            if header.packet_type in ACKED_TYPES:
                self._acknowledge(number)
            if offset == 0:
                self._process(header, value)
                self.rx_expected = (self.rx_expected + 1) % SEQ_MODULUS
                while self.rx_expected in self._rx_buffer:
                    self._process(*self._rx_buffer.pop(self.rx_expected))
                    self.rx_expected = (self.rx_expected + 1) % SEQ_MODULUS
            elif number in self._rx_buffer:
                self._emit('duplicate_discarded', pkt=number)
            else:
                self._rx_buffer[number] = (header, value)
        elif offset >= SEQ_MODULUS - window:
            if header.packet_type in ACKED_TYPES:
                self._acknowledge(number)
            elif header.packet_type is PacketType.CHALLENGE:
                self._respond(number, value)
            self._emit('duplicate_discarded', pkt=number)
        else:
            logger.debug(f"[{self.name}] pkt {number} outside receive window at {self.rx_expected}")

    def _acknowledge(self, number: int):
        self._queue_control(PacketType.ACK, number)
        self._emit('ack_sent', pkt=number)

    def _respond(self, number: int, challenge: bytes):
        response = (PacketType.RESPONSE, hmac_sha256(self.psk, challenge), number)
        if response not in self._auth_outbox:
            self._auth_outbox.append(response)
        self._responded = True

    def _process(self, header: CovertHeader, value: Any):
        packet_type = header.packet_type
        if self._peer_ok:
            # Any new reliable packet from an authenticated peer implies it got our auth ACK.
            for number in [n for n, e in self.pending.items() if e.header.packet_type is PacketType.AUTH_ACK]:
                del self.pending[number]
        if packet_type is PacketType.CHALLENGE:
            self._respond(header.packet_number, value)
        elif packet_type is PacketType.AUTH_ACK:
            if self._responded and not self._self_ok:
                logger.info(f"[{self.name}] Authenticated by peer at subframe {self.now}")
                self._self_ok = True
                self._emit('authenticated', state='self')
                self._update_state()
        elif packet_type is PacketType.ADDRESS:
            if self._rx_transfer is not None and self._rx_transfer.received < self._rx_transfer.info.total_packets:
                logger.warning(f"[{self.name}] New transfer announced before the previous one completed")
            if value.destination_msin != self.msin:
                logger.warning(f"[{self.name}] Transfer addressed to MSIN {value.destination_msin}, "
                               f"local MSIN is {self.msin}")
            self._rx_transfer = IncomingTransfer(value)
            self._emit('transfer_started', source=value.source_msin, packets=value.total_packets)
            self._check_complete()
        elif packet_type is PacketType.DATA:
            self.delivered.extend(value)
            self._emit('data_delivered', data=value, pkt=header.packet_number, bytes=len(value))
            if self._rx_transfer is None:
                logger.warning(f"[{self.name}] Data pkt {header.packet_number} without a transfer")
                return
            self._rx_transfer.received += 1
            self._rx_transfer.data.extend(value)
            self._check_complete()

    def _check_complete(self):
        transfer = self._rx_transfer
        if transfer is not None and transfer.received == transfer.info.total_packets:
            data = bytes(transfer.data)
            self.completed.append(data)
            self._rx_transfer = None
            logger.info(f"[{self.name}] Transfer complete: {len(data)} bytes")
            self._emit('transfer_complete', data=data, bytes=len(data), packets=transfer.info.total_packets)


def on_opportunity(session: LinkSession, opportunity: TransmissionOpportunity,
                   policy: EmbedPolicy, rng: np.random.Generator) -> StegoBlock:
    """Embed the session's highest-priority packet, or pass the block through."""
    return stego.generate_and_embed(opportunity, session, policy, rng)


def on_receive(session: LinkSession, block: Optional[np.ndarray], policy: EmbedPolicy) -> List[LinkEvent]:
    """Process a received (equalized) block; returns all events since the last drain."""
    session.receive(block, policy)
    return session.drain_events()


def tick(session: LinkSession, subframe: int):
    session.tick(subframe)
