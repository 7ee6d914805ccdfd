"""Field unit firmware against the simulated handset and controller link.

One strictly single-threaded loop advanced by scenario ticks. Each tick
performs at most one action, and a started process runs to completion
before the other may begin: polling never interrupts a transmission and
vice versa. The ring interrupt is a latched flag on the handset, consumed
at tick boundaries; when a poll falls due on the same tick the ring is
seen, the poll runs first and the call is answered on the next tick, so
transmitted data is as fresh as the queue allows.

Low battery voltage at poll time flags the frame, and every completed poll
below the threshold places one alarm call of its own to the configured
number, carrying that frame. The sag is re-reported until the voltage
recovers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import dtmf, protocol
from .dtmf import DataFrame, ToneTiming
from .protocol import ControllerLink, ControllerReading, LinkConfig, LinkError
from .telephony import ACTIVE, Handset, Network, READY, TelephonyError

BOOTING = "BOOTING"
IDLE = "IDLE"
POLLING = "POLLING"
TRANSMITTING = "TRANSMITTING"
ALARM_CALLING = "ALARM_CALLING"

UNIT_LOG_HEADER = "t,event,seq,call_id,detail"


@dataclass(frozen=True)
class FieldUnitConfig:
    alarm_number: str
    own_number: str
    poll_period: float = 30.0
    loop_tick: float = 0.25
    lv_threshold: float = 11.50
    max_frames_per_call: int = 3
    stored_queue_capacity: int = 2

    def __post_init__(self) -> None:
        if self.poll_period <= 0:
            raise ValueError("poll_period must be positive")
        if self.loop_tick >= self.poll_period:
            raise ValueError("loop_tick must be below poll_period")
        if self.lv_threshold <= 0:
            raise ValueError("lv_threshold must be positive")


@dataclass
class UnitEvent:
    t: float
    event: str
    seq: int | None = None
    call_id: int | None = None
    detail: str = ""

    def csv_row(self) -> str:
        seq = "" if self.seq is None else str(self.seq)
        call = "" if self.call_id is None else str(self.call_id)
        return f"{self.t:.2f},{self.event},{seq},{call},{self.detail}"


def reading_to_frame(reading: ControllerReading, seq: int, alarm: bool) -> DataFrame:
    return DataFrame(
        alarm_flag=1 if alarm else 0,
        seq=seq,
        battery_cv=round(reading.battery_voltage * 100),
        source_cv=round(reading.source_voltage * 100),
        charge_ca=round(reading.charge_current * 100),
        load_ca=round(reading.load_current * 100),
        energy_dkwh=round(reading.total_energy * 10),
    )


class FieldUnit:
    def __init__(
        self,
        cfg: FieldUnitConfig,
        handset: Handset,
        network: Network,
        link: ControllerLink,
        link_cfg: LinkConfig = LinkConfig(),
        timing: ToneTiming = ToneTiming(),
    ):
        self.cfg = cfg
        self.handset = handset
        self.network = network
        self.link = link
        self.link_cfg = link_cfg
        self.timing = timing

        self.mode = BOOTING
        self.stored: list[DataFrame] = []
        self.current: DataFrame | None = None
        self.next_seq = 0
        self.last_poll_at: float | None = None
        self.alarm_active = False
        self.fault_count = 0
        self.events: list[UnitEvent] = []

        self._pending_alarm: DataFrame | None = None
        self._call_id: int | None = None
        self._symbols = ""
        self._frame_bounds: list[tuple[DataFrame, int]] = []  # (frame, end index)
        self._pressed = 0
        self._audio_epoch = 0.0

    # -- logging ------------------------------------------------------------

    def _log(self, t: float, event: str, seq=None, call_id=None, detail=""):
        self.events.append(UnitEvent(t, event, seq, call_id, detail))

    def poll_times(self) -> list[float]:
        return [e.t for e in self.events if e.event in ("poll_ok", "poll_fail")]

    def transmitted_seqs(self) -> list[int]:
        return [e.seq for e in self.events if e.event == "transmit_frame"]

    # -- lifecycle ----------------------------------------------------------

    def boot(self, now: float) -> None:
        self._log(now, "boot_start")
        self.handset.hold_power_key(4.0, now)
        self.mode = BOOTING

    def tick(self, now: float) -> None:
        if self.mode == BOOTING:
            if self.handset.power_state != READY:
                return
            self.mode = IDLE
            self._log(now, "boot_ready")
        if self.mode == TRANSMITTING:
            self._transfer_tick(now)
            return
        if self.mode == ALARM_CALLING:
            self._alarm_tick(now)
            return
        # idle: poll wins a same-tick tie with the ring latch, so the call
        # answered next tick carries data polled this tick
        if self.last_poll_at is None or now - self.last_poll_at >= self.cfg.poll_period:
            self._poll(now)
            return
        if self.handset.ring_interrupt:
            self._begin_transfer(now)
            return
        if self._pending_alarm is not None:
            self._begin_alarm_call(now)

    # -- polling ------------------------------------------------------------

    def _poll(self, now: float) -> None:
        self.mode = POLLING
        self.last_poll_at = now
        try:
            reading = protocol.poll(self.link, self.link_cfg, now)
        except LinkError as exc:
            self.fault_count += 1
            self._log(now, "poll_fail", detail=type(exc).__name__)
            self.mode = IDLE
            return
        alarm = reading.battery_voltage < self.cfg.lv_threshold
        frame = reading_to_frame(reading, self.next_seq, alarm)
        self.next_seq = (self.next_seq + 1) % 1000
        if self.current is not None:
            self.stored.append(self.current)
            self._log(now, "enqueue", seq=self.current.seq)
            while len(self.stored) > self.cfg.stored_queue_capacity:
                evicted = self.stored.pop(0)
                self._log(now, "evict", seq=evicted.seq)
        self.current = frame
        self.alarm_active = alarm
        self._log(now, "poll_ok", seq=frame.seq, detail=f"battery_cv={frame.battery_cv}")
        if alarm:
            self._pending_alarm = frame
            self._log(now, "alarm_flagged", seq=frame.seq)
        self.mode = IDLE

    # -- answering and transmitting ------------------------------------------

    def _queue_oldest_first(self) -> list[DataFrame]:
        frames = list(self.stored)
        if self.current is not None:
            frames.append(self.current)
        return frames[: self.cfg.max_frames_per_call]

    def _begin_transfer(self, now: float) -> None:
        try:
            self._call_id = self.network.press_talk(self.handset, now)
        except TelephonyError:
            return
        self._log(now, "answer", call_id=self._call_id)
        frames = self._queue_oldest_first()
        self._symbols = ""
        self._frame_bounds = []
        for frame in frames:
            self._symbols += dtmf.encode_frame(frame)
            self._frame_bounds.append((frame, len(self._symbols)))
        self._pressed = 0
        self._audio_epoch = now
        self.mode = TRANSMITTING
        self._transfer_tick(now)

    def _press_due(self, now: float) -> None:
        total = len(self._symbols)
        due = min(total, int((now - self._audio_epoch) / self.timing.symbol_seconds) + 1)
        while self._pressed < due:
            self.network.press_dtmf(self.handset, self._symbols[self._pressed], self.timing, now)
            self._pressed += 1

    def _transfer_tick(self, now: float) -> None:
        if self.handset.active_call is None:
            # network dropped the call mid-stream
            self._finish_transfer(now, dropped=True)
            return
        self._press_due(now)
        done_at = self._audio_epoch + len(self._symbols) * self.timing.symbol_seconds
        if self._pressed == len(self._symbols) and now >= done_at:
            self.network.hang_up(self._call_id, by=self.cfg.own_number, now=now)
            self._log(now, "hangup", call_id=self._call_id)
            self._finish_transfer(now, dropped=False)

    def _finish_transfer(self, now: float, dropped: bool) -> None:
        for frame, end in self._frame_bounds:
            if self._pressed >= end:
                if frame in self.stored:
                    self.stored.remove(frame)
                elif frame is self.current:
                    self.current = None
                self._log(now, "transmit_frame", seq=frame.seq, call_id=self._call_id)
        if dropped:
            self._log(now, "transfer_aborted", call_id=self._call_id)
        self._call_id = None
        self._symbols = ""
        self._frame_bounds = []
        self.mode = IDLE

    # -- alarm calls ----------------------------------------------------------

    def _begin_alarm_call(self, now: float) -> None:
        frame = self._pending_alarm
        try:
            self._call_id = self.network.place_call(
                self.cfg.own_number, self.cfg.alarm_number, now
            )
        except TelephonyError as exc:
            self._log(now, "alarm_call_failed", seq=frame.seq, detail=type(exc).__name__)
            self._pending_alarm = None
            return
        self._log(now, "alarm_call_placed", seq=frame.seq, call_id=self._call_id)
        self._symbols = dtmf.encode_frame(frame)
        self._frame_bounds = [(frame, len(self._symbols))]
        self._pressed = 0
        self._audio_epoch = -1.0  # set when the far end answers
        self.mode = ALARM_CALLING

    def _alarm_tick(self, now: float) -> None:
        frame = self._pending_alarm
        call = self.network.calls.get(self._call_id)
        if call is None:
            # rang out or dropped; the sag will be re-flagged on the next poll
            self._log(now, "alarm_call_unanswered", seq=frame.seq, call_id=self._call_id)
            self._pending_alarm = None
            self._call_id = None
            self.mode = IDLE
            return
        if call.state != ACTIVE:
            return
        if self._audio_epoch < 0:
            self._audio_epoch = now
        self._press_due(now)
        done_at = self._audio_epoch + len(self._symbols) * self.timing.symbol_seconds
        if self._pressed == len(self._symbols) and now >= done_at:
            self.network.hang_up(self._call_id, by=self.cfg.own_number, now=now)
            self._log(now, "transmit_frame", seq=frame.seq, call_id=self._call_id)
            self._log(now, "alarm_call_done", seq=frame.seq, call_id=self._call_id)
            self._pending_alarm = None
            self._call_id = None
            self.mode = IDLE
