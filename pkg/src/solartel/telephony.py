"""Simulated cellular network: handsets, calls, ring lines, billing, audio.

Calls move RINGING -> ACTIVE -> ENDED on the scenario clock. A handset's
ring-interrupt line is asserted exactly while a call is ringing it. DTMF
keys pressed during an active call append tone audio to that direction of
the channel; the far party receives the whole recording when the call
ends, with white noise applied at its configured SNR. The originating
party is billed a minimum of one minute the moment a call is answered,
then one more per started minute.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from . import dtmf
from .dtmf import AudioBuffer, ToneTiming

OFF = "OFF"
BOOTING = "BOOTING"
READY = "READY"

RINGING = "RINGING"
ACTIVE = "ACTIVE"
ENDED = "ENDED"

RING_TIMEOUT_S = 30.0
POWER_HOLD_THRESHOLD_S = 4.0
BOOT_DURATION_S = 20.0


class TelephonyError(Exception):
    pass


class CalleeUnknown(TelephonyError):
    pass


class CalleeBusy(TelephonyError):
    pass


class NoIncomingCall(TelephonyError):
    pass


class UnknownCall(TelephonyError):
    pass


def validate_number(number: str) -> str:
    if not (3 <= len(number) <= 15 and number.isdigit()):
        raise TelephonyError(f"phone number {number!r} must be 3..15 digits")
    return number


@dataclass
class CallRecord:
    id: int
    from_number: str
    to_number: str
    placed_at: float
    answered_at: float | None
    ended_at: float
    billed_minutes: int
    billed_party: str


@dataclass
class _Call:
    id: int
    from_number: str
    to_number: str
    placed_at: float
    state: str = RINGING
    answered_at: float | None = None
    drop_at: float | None = None
    # audio appended by each side while ACTIVE
    to_callee: list[np.ndarray] = field(default_factory=list)
    to_caller: list[np.ndarray] = field(default_factory=list)


class Party:
    """Anything with a number on the network; handsets and the server sink."""

    number: str
    noise_snr_db: float | None = None

    def engaged(self) -> bool:
        raise NotImplementedError

    def ringable(self) -> bool:
        raise NotImplementedError

    def ring_started(self, call_id: int) -> None:
        pass

    def ring_stopped(self) -> None:
        pass

    def call_connected(self, call_id: int) -> None:
        pass

    def call_finished(self, record: CallRecord, received: AudioBuffer) -> None:
        pass


class Handset(Party):
    """The field unit's phone: power key, 12 DTMF keys, TALK, ring line."""

    def __init__(self, number: str, noise_snr_db: float | None = None):
        self.number = validate_number(number)
        self.noise_snr_db = noise_snr_db
        self.power_state = OFF
        self.ring_interrupt = False
        self.active_call: int | None = None
        self.ringing_call: int | None = None
        self._ready_at: float | None = None

    def hold_power_key(self, duration: float, now: float) -> None:
        """Holds below 4 s are ignored; otherwise READY lands 20 s after the hold."""
        if self.power_state != OFF or duration < POWER_HOLD_THRESHOLD_S:
            return
        self.power_state = BOOTING
        self._ready_at = now + duration + BOOT_DURATION_S

    def tick(self, now: float) -> None:
        if self.power_state == BOOTING and self._ready_at is not None and now >= self._ready_at:
            self.power_state = READY

    def engaged(self) -> bool:
        return self.active_call is not None or self.ringing_call is not None

    def ringable(self) -> bool:
        return self.power_state == READY and not self.engaged()

    def ring_started(self, call_id: int) -> None:
        self.ringing_call = call_id
        self.ring_interrupt = True

    def ring_stopped(self) -> None:
        self.ringing_call = None
        self.ring_interrupt = False

    def call_connected(self, call_id: int) -> None:
        self.active_call = call_id

    def call_finished(self, record: CallRecord, received: AudioBuffer) -> None:
        self.active_call = None


class Network:
    """Event-ordered registry of parties, calls and finished-call records."""

    def __init__(self, seed: int = 0, call_drop_probability: float = 0.0):
        self.parties: dict[str, Party] = {}
        self.calls: dict[int, _Call] = {}
        self.records: list[CallRecord] = []
        self.call_drop_probability = call_drop_probability
        self._next_call_id = 1
        self._drop_rng = random.Random(seed ^ 0x5A5A)
        self._noise_seed = seed

    def register(self, party: Party) -> None:
        validate_number(party.number)
        if party.number in self.parties:
            raise TelephonyError(f"number {party.number} already registered")
        self.parties[party.number] = party

    def place_call(self, from_number: str, to_number: str, now: float) -> int:
        callee = self.parties.get(to_number)
        if callee is None:
            raise CalleeUnknown(to_number)
        if callee.engaged():
            raise CalleeBusy(to_number)
        caller = self.parties.get(from_number)
        if caller is not None and caller.engaged():
            raise TelephonyError(f"caller {from_number} already in a call")
        call = _Call(self._next_call_id, from_number, to_number, placed_at=now)
        self._next_call_id += 1
        self.calls[call.id] = call
        if caller is not None:
            # dialing occupies the caller's line until the call ends
            caller.call_connected(call.id)
        if callee.ringable():
            callee.ring_started(call.id)
        return call.id

    def press_talk(self, handset: Handset, now: float) -> int:
        if not handset.ring_interrupt or handset.ringing_call is None:
            raise NoIncomingCall(handset.number)
        call = self.calls[handset.ringing_call]
        return self._answer(call, now)

    def _answer(self, call: _Call, now: float) -> int:
        call.state = ACTIVE
        call.answered_at = now
        callee = self.parties.get(call.to_number)
        if callee is not None:
            callee.ring_stopped()
            callee.call_connected(call.id)
        if self.call_drop_probability and self._drop_rng.random() < self.call_drop_probability:
            call.drop_at = now + self._drop_rng.uniform(2.0, 20.0)
        return call.id

    def answer(self, call_id: int, now: float) -> int:
        """Answer on behalf of a non-handset party (the server sink)."""
        call = self.calls.get(call_id)
        if call is None or call.state != RINGING:
            raise UnknownCall(call_id)
        return self._answer(call, now)

    def press_dtmf(
        self, party: Party, symbol: str, timing: ToneTiming = ToneTiming(), now: float = 0.0
    ) -> None:
        """Append one key's tone to the party's outgoing call audio; idle presses vanish."""
        call_id = getattr(party, "active_call", None)
        if call_id is None:
            return
        call = self.calls.get(call_id)
        if call is None or call.state != ACTIVE:
            return
        tone = dtmf.symbol_tone(symbol, timing)
        if party.number == call.from_number:
            call.to_callee.append(tone)
        else:
            call.to_caller.append(tone)

    def hang_up(self, call_id: int, by: str, now: float) -> CallRecord:
        call = self.calls.get(call_id)
        if call is None or call.state == ENDED:
            raise UnknownCall(call_id)
        return self._finalize(call, now)

    def tick(self, now: float) -> None:
        """Ring timeouts and scheduled mid-call drops."""
        for call in list(self.calls.values()):
            if call.state == RINGING and now - call.placed_at >= RING_TIMEOUT_S:
                self._finalize(call, now)
            elif call.state == ACTIVE and call.drop_at is not None and now >= call.drop_at:
                self._finalize(call, now)

    def _finalize(self, call: _Call, now: float) -> CallRecord:
        call.state = ENDED
        if call.answered_at is None:
            billed = 0
        else:
            seconds = max(0.0, now - call.answered_at)
            billed = max(1, math.ceil(seconds / 60.0))
        record = CallRecord(
            id=call.id,
            from_number=call.from_number,
            to_number=call.to_number,
            placed_at=call.placed_at,
            answered_at=call.answered_at,
            ended_at=now,
            billed_minutes=billed,
            billed_party=call.from_number,
        )
        self.records.append(record)
        del self.calls[call.id]

        caller = self.parties.get(call.from_number)
        callee = self.parties.get(call.to_number)
        if callee is not None:
            callee.ring_stopped()
        caller_audio = self._mix(call.to_caller, caller, call.id)
        callee_audio = self._mix(call.to_callee, callee, call.id)
        if caller is not None:
            caller.call_finished(record, caller_audio)
        if callee is not None:
            callee.call_finished(record, callee_audio)
        return record

    def _mix(self, segments: list[np.ndarray], receiver: Party | None, call_id: int) -> AudioBuffer:
        if not segments:
            return AudioBuffer(np.zeros(0), 8000)
        audio = AudioBuffer(np.concatenate(segments), 8000)
        if receiver is not None and receiver.noise_snr_db is not None:
            rng = np.random.default_rng(np.random.SeedSequence([self._noise_seed, call_id]))
            audio = dtmf.awgn(audio, receiver.noise_snr_db, rng)
        return audio

    def total_billed_minutes(self) -> int:
        return sum(r.billed_minutes for r in self.records)


CALL_CSV_HEADER = "id,from,to,placed_at,answered_at,ended_at,billed_minutes"


def call_csv_row(r: CallRecord) -> str:
    answered = f"{r.answered_at:.2f}" if r.answered_at is not None else ""
    return (
        f"{r.id},{r.from_number},{r.to_number},{r.placed_at:.2f},"
        f"{answered},{r.ended_at:.2f},{r.billed_minutes}"
    )
