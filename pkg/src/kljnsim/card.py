"""Card/terminal/server session protocol over the KLJN channel.

A card carries a persistent authentication key C (segment-consumed, one
segment per session attempt) whose twin lives on the server, addressed by
the public identity.  A session runs:

    identity lookup -> server key retrieval -> KLJN exchange producing the
    one-time encryption key B -> both sides tag their monitor data with the
    next unconsumed C segment and cross-verify -> OTP transaction ->
    KLJN refresh of C (eightfold raw material, XOR-amplified).

A tag mismatch breaks the session and counts toward cancellation; after
``m_max`` broken sessions the card is dead.  A channel alarm during refresh
aborts without counting, leaving the old C in place.

Segment indices are synchronized to max(card cursor, server cursor) at
lookup time, so wrong-key fraud attempts (which burn server-side segments
with the real card absent) cannot permanently desynchronize the legitimate
card; C carries exactly enough segments for M-1 broken sessions plus one
more attempt.

State machine (one session):

    idle -> identified -> key_located -> kljn_running -> authenticated
         -> transacting -> refreshing -> closed

with ``broken`` reachable from kljn_running and authenticated, and an
abort edge transacting -> closed (failed transaction, no refresh).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from .exchange import (
    AdversaryHook,
    BitExchangeRecord,
    ChannelCompromisedError,
    exchange_key,
)
from .noise import NoiseConfig
from .privacy import BitString, amplify
from .tags import poly_tag, segment_to_key, tag_hex

MIN_SEGMENT_BITS = 64  # tag key size; floor for the per-session segment

PHASES = ("idle", "identified", "key_located", "kljn_running",
          "authenticated", "transacting", "refreshing", "closed", "broken")

_ALLOWED_TRANSITIONS = {
    "idle": {"identified"},
    "identified": {"key_located"},
    "key_located": {"kljn_running"},
    "kljn_running": {"authenticated", "broken"},
    "authenticated": {"transacting", "broken"},
    "transacting": {"refreshing", "closed"},
    "refreshing": {"closed"},
    "closed": set(),
    "broken": set(),
}


class CardRefusedError(RuntimeError):
    """Canceled card or unknown identity; no session is started."""


class KeyExhaustedError(RuntimeError):
    """Key material over-consumed (one-time property would be violated)."""


class DuplicateCardError(ValueError):
    """Card number already provisioned in this keystore."""


@dataclass(frozen=True)
class CardIdentity:
    card_number: str
    holder_name: str
    expiry: str  # "MM/YY"

    def __post_init__(self):
        if not self.card_number:
            raise ValueError("card_number must be nonempty")


def key_length_required(m: int, n_d: int) -> int:
    """Minimum C length: ceil(m * log2(n_d)) bits."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if n_d < 2:
        raise ValueError(f"n_d must be >= 2, got {n_d}")
    return math.ceil(m * math.log2(n_d))


def segment_length(n_d: int) -> int:
    """Per-session segment size: the log2(n_d) information floor, raised
    to the 64-bit tag-key minimum so a random-key forgery stays at
    ~2^-64."""
    if n_d < 2:
        raise ValueError(f"n_d must be >= 2, got {n_d}")
    return max(MIN_SEGMENT_BITS, math.ceil(math.log2(n_d)))


@dataclass
class KeyC:
    """Segmented authentication key; one segment consumed per session."""

    bits: BitString
    segment_len: int
    cursor: int
    m_max: int

    def __post_init__(self):
        if len(self.bits) < self.m_max * self.segment_len:
            raise ValueError(
                f"key C holds {len(self.bits)} bits, needs at least "
                f"{self.m_max} x {self.segment_len}")
        if not 0 <= self.cursor <= self.m_max:
            raise ValueError(f"cursor {self.cursor} out of range")

    def segment(self, index: int) -> BitString:
        if not 0 <= index < self.m_max:
            raise KeyExhaustedError(
                f"segment index {index} outside 0..{self.m_max - 1}")
        s = self.bits.bits[index * self.segment_len:
                           (index + 1) * self.segment_len]
        return BitString(bits=s.copy(), provenance="key_c")

    def consume_through(self, index: int) -> None:
        """Advance the cursor past ``index``; never moves backward."""
        if index < self.cursor:
            raise KeyExhaustedError(
                f"segment {index} already consumed (cursor {self.cursor})")
        self.cursor = index + 1

    def zeroize(self) -> None:
        self.bits.bits[:] = 0
        self.cursor = self.m_max

    def copy(self) -> "KeyC":
        return KeyC(bits=BitString(self.bits.bits.copy(), "key_c"),
                    segment_len=self.segment_len, cursor=self.cursor,
                    m_max=self.m_max)


@dataclass
class KeyB:
    """One-session OTP key.  Every bit is emitted at most once."""

    bits: BitString
    consumed_offset: int = 0
    zeroized: bool = False

    def take(self, n_bits: int) -> np.ndarray:
        if self.zeroized:
            raise KeyExhaustedError("key B already deleted")
        if self.consumed_offset + n_bits > len(self.bits):
            raise KeyExhaustedError(
                f"key B exhausted: need {n_bits} bits at offset "
                f"{self.consumed_offset}, have {len(self.bits)}")
        out = self.bits.bits[self.consumed_offset:
                             self.consumed_offset + n_bits].copy()
        self.consumed_offset += n_bits
        return out

    def zeroize(self) -> None:
        self.bits.bits[:] = 0
        self.zeroized = True


@dataclass
class SessionLedger:
    """One session's state trail: phase path, transcript, audit fields."""

    phase: str = "idle"
    broken_count: int = 0
    canceled: bool = False
    transcript: list = dc_field(default_factory=list)
    consumed_segment: Optional[tuple[int, int]] = None  # (generation, index)
    key_b_bits_used: int = 0
    refreshed: bool = False
    monitor_samples: int = 0

    def advance(self, new_phase: str) -> None:
        if new_phase not in _ALLOWED_TRANSITIONS[self.phase]:
            raise RuntimeError(
                f"illegal phase transition {self.phase} -> {new_phase}")
        self.phase = new_phase
        self.log("phase", new_phase)

    def log(self, kind: str, detail) -> None:
        self.transcript.append((kind, detail))


@dataclass
class CardState:
    """State held in the card's tamper-proof memory."""

    identity: CardIdentity
    key_c: KeyC
    broken_count: int = 0
    canceled: bool = False
    generation: int = 0


@dataclass
class ServerRecord:
    """Server-side twin of a card's secrets and counters."""

    identity: CardIdentity
    key_c: KeyC
    broken_count_mirror: int = 0
    canceled: bool = False
    generation: int = 0


class Keystore:
    """Per-card server records backed by an append-only journal.

    Journal lines are JSON objects with a fixed field order; on load the
    latest line per card number wins.  ``path=None`` keeps the store
    memory-only.
    """

    def __init__(self, path: Optional[str | Path] = None):
        self.path = Path(path) if path is not None else None
        self.records: dict[str, ServerRecord] = {}

    def lookup(self, card_number: str) -> Optional[ServerRecord]:
        return self.records.get(card_number)

    def register(self, record: ServerRecord) -> None:
        num = record.identity.card_number
        if num in self.records:
            raise DuplicateCardError(f"card {num!r} already provisioned")
        self.records[num] = record
        self.journal(record)

    def journal(self, record: ServerRecord) -> None:
        """Append the record's current state to the journal file."""
        if self.path is None:
            return
        obj = {
            "schema": "kljn.card_record",
            "version": 1,
            "card_number": record.identity.card_number,
            "holder_name": record.identity.holder_name,
            "expiry": record.identity.expiry,
            "c_hex": record.key_c.bits.to_hex(),
            "c_len": len(record.key_c.bits),
            "segment_len": record.key_c.segment_len,
            "cursor": record.key_c.cursor,
            "m_max": record.key_c.m_max,
            "broken_count": record.broken_count_mirror,
            "canceled": record.canceled,
            "generation": record.generation,
        }
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(obj) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Keystore":
        store = cls(path=None)
        p = Path(path)
        if p.exists():
            with open(p, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    identity = CardIdentity(obj["card_number"],
                                            obj["holder_name"],
                                            obj["expiry"])
                    key_c = KeyC(
                        bits=BitString.from_hex(obj["c_hex"], obj["c_len"],
                                                "key_c"),
                        segment_len=obj["segment_len"],
                        cursor=obj["cursor"],
                        m_max=obj["m_max"],
                    )
                    store.records[obj["card_number"]] = ServerRecord(
                        identity=identity,
                        key_c=key_c,
                        broken_count_mirror=obj["broken_count"],
                        canceled=obj["canceled"],
                        generation=obj["generation"],
                    )
        store.path = p
        return store


def initialize_card(identity: CardIdentity, m_max: int, n_d: int, rng,
                    keystore: Optional[Keystore] = None,
                    ) -> tuple[CardState, ServerRecord]:
    """Provision a card: generate C, store twin copies, leave key B empty.

    C is drawn from the supplied generator (the true-RNG stand-in) with
    m_max segments of segment_length(n_d) bits each, at least
    key_length_required(m_max, n_d) bits in total.
    """
    if m_max < 1:
        raise ValueError(f"m_max must be >= 1, got {m_max}")
    seg = segment_length(n_d)
    n_c = m_max * seg
    assert n_c >= key_length_required(m_max, n_d)
    rng = np.random.default_rng(rng)
    raw = rng.integers(0, 2, n_c, dtype=np.uint8)
    card = CardState(
        identity=identity,
        key_c=KeyC(bits=BitString(raw.copy(), "key_c"), segment_len=seg,
                   cursor=0, m_max=m_max),
    )
    server = ServerRecord(
        identity=identity,
        key_c=KeyC(bits=BitString(raw.copy(), "key_c"), segment_len=seg,
                   cursor=0, m_max=m_max),
    )
    if keystore is not None:
        keystore.register(server)
    return card, server


def authenticate_tag(data: bytes, key_segment: BitString,
                     segment_len: Optional[int] = None) -> int:
    """64-bit keyed tag of the monitoring data.

    The segment keys a polynomial universal hash (see ``tags``);
    identical (data, segment) always give identical tags.
    """
    expected = segment_len if segment_len is not None else len(key_segment)
    if len(key_segment) != expected:
        raise ValueError(
            f"segment length {len(key_segment)} != expected {expected}")
    return poly_tag(data, segment_to_key(key_segment))


@dataclass
class Terminal:
    """Terminal-side session context (transient; server link assumed secure)."""

    key_b_bits: int = 256
    server_key_c: Optional[KeyC] = None
    key_b: Optional[KeyB] = None


@dataclass
class AuthResult:
    status: str  # "success" | "broken"
    ledger: SessionLedger
    key_b_card: Optional[KeyB] = None
    key_b_terminal: Optional[KeyB] = None
    reason: str = ""


def _monitor_bytes(records: list[BitExchangeRecord], end: str) -> bytes:
    """Serialize one end's per-period instantaneous data for tagging."""
    chunks = []
    for rec in records:
        view = rec.trace if end == "a" or rec.bob_trace is None \
            else rec.bob_trace
        chunks.append(view.voltage.tobytes())
        chunks.append(view.current.tobytes())
    return b"".join(chunks)


def authenticate_session(card: CardState, terminal: Terminal,
                         server: Keystore, cfg: NoiseConfig, seed,
                         adversary: Optional[AdversaryHook] = None,
                         ) -> AuthResult:
    """Steps (i)-(iv): lookup, key retrieval, KLJN exchange, tag verify.

    Success leaves the session authenticated with twin copies of a fresh
    key B; a tag mismatch (wrong C, or monitor data tampered below the
    alarm threshold) or an in-exchange channel alarm breaks the session
    and counts toward cancellation.  The adopted C segment is burned on
    both sides in every outcome that reaches the exchange.
    """
    ledger = SessionLedger()

    # (i) identity presentation
    ledger.advance("identified")
    ledger.log("card->terminal", {"identity": card.identity.card_number})
    record = server.lookup(card.identity.card_number)
    if record is None:
        ledger.log("refused", "unknown identity")
        raise CardRefusedError(
            f"unknown card {card.identity.card_number!r}")
    if record.canceled:
        ledger.log("refused", "card canceled")
        raise CardRefusedError(
            f"card {card.identity.card_number!r} is canceled")

    # (ii) server key retrieval; adopt the later of the two cursors so a
    # fraud-burned server segment cannot desync the real card.
    ledger.advance("key_located")
    terminal.server_key_c = record.key_c
    segment_index = max(card.key_c.cursor, record.key_c.cursor)
    if segment_index >= record.key_c.m_max:
        ledger.log("refused", "key C exhausted")
        raise CardRefusedError("key C exhausted; card unusable")
    ledger.log("segment_index", segment_index)

    def burn_segment():
        card.key_c.consume_through(segment_index)
        record.key_c.consume_through(segment_index)
        ledger.consumed_segment = (record.generation, segment_index)

    def mark_broken(reason: str):
        burn_segment()
        record.broken_count_mirror += 1
        card.broken_count += 1
        if record.broken_count_mirror >= record.key_c.m_max:
            record.canceled = True
            card.canceled = True
        ledger.broken_count = record.broken_count_mirror
        ledger.canceled = record.canceled
        ledger.log("attack_recorded", reason)
        ledger.advance("broken")
        server.journal(record)

    # (iii) KLJN exchange for key B
    ledger.advance("kljn_running")
    exchange_records: list[BitExchangeRecord] = []
    try:
        card_key, term_key, stats = exchange_key(
            terminal.key_b_bits, cfg, seed, adversary=adversary,
            record_sink=exchange_records.append)
    except ChannelCompromisedError as err:
        mark_broken(f"channel alarm during authentication: {err}")
        return AuthResult(status="broken", ledger=ledger,
                          reason="channel_alarm")
    ledger.monitor_samples = 2 * cfg.samples_per_bit * stats.periods_run
    ledger.log("exchange", {"periods": stats.periods_run,
                            "alarms": stats.alarms})

    # (iv) both ends tag their own view of the instantaneous data with
    # their own copy of the segment, then cross-verify.  A card that cannot
    # produce a segment for the adopted index (e.g. a clone with a smaller
    # key) simply fails to authenticate.
    try:
        card_segment = card.key_c.segment(segment_index)
    except KeyExhaustedError:
        mark_broken("card produced no tag for the adopted segment index")
        return AuthResult(status="broken", ledger=ledger,
                          reason="tag_mismatch")
    server_segment = record.key_c.segment(segment_index)
    card_tag = authenticate_tag(_monitor_bytes(exchange_records, "a"),
                                card_segment)
    term_tag = authenticate_tag(_monitor_bytes(exchange_records, "b"),
                                server_segment)
    ledger.log("tags", {"card": tag_hex(card_tag),
                        "terminal": tag_hex(term_tag)})
    if card_tag != term_tag:
        mark_broken("authentication tag mismatch")
        return AuthResult(status="broken", ledger=ledger,
                          reason="tag_mismatch")

    burn_segment()
    ledger.broken_count = record.broken_count_mirror
    ledger.advance("authenticated")
    server.journal(record)
    key_b_card = KeyB(bits=BitString(card_key.bits, "key_b"))
    key_b_term = KeyB(bits=BitString(term_key.bits, "key_b"))
    terminal.key_b = key_b_term
    return AuthResult(status="success", ledger=ledger,
                      key_b_card=key_b_card, key_b_terminal=key_b_term)


@dataclass
class TransactionResult:
    ok: bool
    ciphertext: bytes
    decrypted_matches: bool
    bits_consumed: int


def run_transaction(card: CardState, terminal: Terminal, key_b: KeyB,
                    payload: bytes, ledger: SessionLedger,
                    ) -> TransactionResult:
    """OTP-encrypt the payload card->terminal and verify the round trip.

    Consumes exactly len(payload)*8 bits from both key-B copies; both are
    zeroized afterwards regardless of outcome.
    """
    if card.canceled:
        raise CardRefusedError("canceled card cannot transact")
    if ledger.phase != "authenticated":
        raise RuntimeError(
            f"transaction requires authenticated phase, got {ledger.phase}")
    ledger.advance("transacting")
    payload_bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    n_bits = payload_bits.size
    try:
        pad_card = key_b.take(n_bits)
        cipher_bits = payload_bits ^ pad_card
        ciphertext = np.packbits(cipher_bits).tobytes()
        ledger.log("card->terminal", {"ciphertext_bytes": len(ciphertext)})
        pad_term = terminal.key_b.take(n_bits)
        plain_bits = np.unpackbits(
            np.frombuffer(ciphertext, dtype=np.uint8))[:n_bits] ^ pad_term
        decrypted = np.packbits(plain_bits).tobytes()
        matches = decrypted == payload
        ledger.key_b_bits_used = n_bits
        ledger.log("terminal_verify", {"matches": matches})
        ledger.advance("refreshing")
        return TransactionResult(ok=True, ciphertext=ciphertext,
                                 decrypted_matches=matches,
                                 bits_consumed=n_bits)
    except KeyExhaustedError:
        ledger.log("transaction_abort", "key B exhausted")
        ledger.advance("closed")
        raise
    finally:
        key_b.zeroize()
        if terminal.key_b is not None:
            terminal.key_b.zeroize()


def refresh_key_c(card: CardState, terminal: Terminal, server: Keystore,
                  cfg: NoiseConfig, seed,
                  adversary: Optional[AdversaryHook] = None,
                  ledger: Optional[SessionLedger] = None) -> bool:
    """Replace C with fresh amplified KLJN material on both sides.

    Exchanges 8x the C length in raw secure bits, applies the three-stage
    XOR amplification, installs the result card-side and (over the secure
    terminal-server link) server-side, and resets the cursor.  A channel
    alarm aborts without key replacement and without counting as broken.
    Returns True on success, False on abort.
    """
    if ledger is not None and ledger.phase != "refreshing":
        raise RuntimeError(
            f"refresh requires refreshing phase, got {ledger.phase}")
    record = server.lookup(card.identity.card_number)
    n_c = card.key_c.m_max * card.key_c.segment_len
    try:
        card_raw, term_raw, stats = exchange_key(8 * n_c, cfg, seed,
                                                 adversary=adversary)
    except ChannelCompromisedError as err:
        if ledger is not None:
            ledger.log("refresh_abort", str(err))
            ledger.advance("closed")
        return False
    card_new = amplify(card_raw)
    term_new = amplify(term_raw)
    assert len(card_new) == n_c

    card.key_c.zeroize()
    record.key_c.zeroize()
    card.key_c = KeyC(bits=BitString(card_new.bits, "key_c"),
                      segment_len=card.key_c.segment_len,
                      cursor=0, m_max=card.key_c.m_max)
    record.key_c = KeyC(bits=BitString(term_new.bits, "key_c"),
                        segment_len=record.key_c.segment_len,
                        cursor=0, m_max=record.key_c.m_max)
    card.generation += 1
    record.generation += 1
    server.journal(record)
    if ledger is not None:
        ledger.refreshed = True
        ledger.log("refresh", {"periods": stats.periods_run,
                               "new_generation": record.generation})
        ledger.advance("closed")
    return True


def run_session(card: CardState, terminal: Terminal, server: Keystore,
                cfg: NoiseConfig, seed, payload: bytes,
                auth_adversary: Optional[AdversaryHook] = None,
                refresh_adversary: Optional[AdversaryHook] = None,
                ) -> SessionLedger:
    """One complete session: authenticate, transact, refresh."""
    ss = np.random.SeedSequence(seed) \
        if not isinstance(seed, np.random.SeedSequence) else seed
    auth_seed, refresh_seed = ss.spawn(2)
    result = authenticate_session(card, terminal, server, cfg, auth_seed,
                                  adversary=auth_adversary)
    ledger = result.ledger
    if result.status != "success":
        return ledger
    try:
        run_transaction(card, terminal, result.key_b_card, payload, ledger)
    except KeyExhaustedError:
        return ledger
    refresh_key_c(card, terminal, server, cfg, refresh_seed,
                  adversary=refresh_adversary, ledger=ledger)
    return ledger
