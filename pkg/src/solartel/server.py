"""The collecting server: scheduled billed calls, decode, store, alert.

Calls the field unit on a period, records the DTMF audio until the far end
hangs up, splits the detected symbols into frames and persists whatever
survives the frame checks. Frames carry no clock, so timestamps are
rebuilt backwards from the answer time using the sequence numbers and the
unit's known poll period. Alarm calls placed BY the unit land on the same
number and feed the same pipeline (flagged frames raise alarms; the unit
pays for those calls, so they never touch this side's airtime ledger).

An alarm stays open until an operator acknowledges it; repeats of the same
ongoing condition coalesce into the open alarm. Once the condition clears
(or the alarm is acknowledged), the next occurrence opens a fresh one.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import asdict, dataclass, field

from . import dtmf, telephony
from .dtmf import AudioBuffer, DataFrame
from .storage import ReadingLog
from .telephony import CallRecord, Network, TelephonyError

FRAME_FLAG = "FRAME_FLAG"
SERVER_THRESHOLD = "SERVER_THRESHOLD"
MISSED_CALL = "MISSED_CALL"

# same seq re-delivered inside this window is the same frame (alarm call
# followed by the scheduled batch); the 1000-step seq wrap takes far longer
DEDUP_WINDOW_S = 3600.0

# a seq gap above this is treated as reordering, not lost cycles
MAX_PLAUSIBLE_SEQ_GAP = 500

NOTIFY_ATTEMPTS = 4  # first try plus three retries

READINGS_CSV_HEADER = "timestamp,seq,battery_v,source_v,charge_a,load_a,energy_kwh,alarm,call_id"
ALARM_CSV_HEADER = "id,raised_at,source,reading_ref,count,acknowledged,cleared"


class PollInProgress(Exception):
    pass


@dataclass(frozen=True)
class StoredReading:
    timestamp: float
    seq: int
    battery_voltage: float
    source_voltage: float
    charge_current: float
    load_current: float
    total_energy: float
    alarm: bool
    call_id: int
    suspect: bool = False

    def csv_row(self) -> str:
        return (
            f"{self.timestamp:.2f},{self.seq},{self.battery_voltage:.2f},"
            f"{self.source_voltage:.2f},{self.charge_current:.2f},"
            f"{self.load_current:.2f},{self.total_energy:.1f},"
            f"{1 if self.alarm else 0},{self.call_id}"
        )


@dataclass
class ScheduleConfig:
    field_number: str
    call_period: float = 3600.0
    alert_threshold: float = 11.50
    # scheduled calls fire at first_call_offset + k * call_period; aligning
    # the offset with the unit's poll grid keeps collected data fresh
    first_call_offset: float = 24.0
    unit_poll_period: float = 30.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.call_period < 60:
            raise ValueError("call_period must be at least 60 s")
        if self.alert_threshold <= 0:
            raise ValueError("alert_threshold must be positive")
        if self.unit_poll_period <= 0:
            raise ValueError("unit_poll_period must be positive")


@dataclass
class AlarmEvent:
    id: int
    raised_at: float
    source: str
    reading_ref: float | None = None
    acknowledged: bool = False
    acknowledged_by: str | None = None
    count: int = 1
    last_seen: float = 0.0
    cleared: bool = False

    def csv_row(self) -> str:
        ref = "" if self.reading_ref is None else f"{self.reading_ref:.2f}"
        return (
            f"{self.id},{self.raised_at:.2f},{self.source},{ref},"
            f"{self.count},{int(self.acknowledged)},{int(self.cleared)}"
        )


@dataclass
class LedgerEntry:
    call_id: int
    placed_at: float
    billed_minutes: int


def reconstruct_timestamps(
    seqs: list[int], answered_at: float, poll_period: float
) -> tuple[list[float], bool]:
    """Timestamps for frames received oldest-first, anchored at the answer.

    The newest frame gets answered_at; each earlier one sits a seq-gap
    multiple of poll_period before its successor. A non-increasing or
    implausibly large gap falls back to plain arrival-order spacing and
    marks the batch suspect.
    """
    n = len(seqs)
    if n == 0:
        return [], False
    deltas = []
    suspect = False
    for prev, nxt in zip(seqs, seqs[1:]):
        gap = (nxt - prev) % 1000
        if gap == 0 or gap > MAX_PLAUSIBLE_SEQ_GAP:
            suspect = True
            break
        deltas.append(gap)
    if suspect:
        return [answered_at - (n - 1 - i) * poll_period for i in range(n)], True
    ts = [answered_at]
    for gap in reversed(deltas):
        ts.insert(0, ts[0] - gap * poll_period)
    return ts, False


class ServerEndpoint(telephony.Party):
    """The server's presence on the phone network; answers one tick after ring."""

    def __init__(self, server: "MonitorServer", number: str, noise_snr_db: float | None):
        self.server = server
        self.number = number
        self.noise_snr_db = noise_snr_db
        self._ringing: int | None = None
        self._active = 0

    def engaged(self) -> bool:
        return self._active > 0

    def ringable(self) -> bool:
        return not self.engaged()

    def ring_started(self, call_id: int) -> None:
        self._ringing = call_id

    def ring_stopped(self) -> None:
        self._ringing = None

    def call_connected(self, call_id: int) -> None:
        self._active += 1

    def call_finished(self, record: CallRecord, received: AudioBuffer) -> None:
        self._active = max(0, self._active - 1)
        self.server._call_finished(record, received)

    def tick(self, now: float) -> None:
        if self._ringing is not None:
            call_id = self._ringing
            self._ringing = None
            self.server.network.answer(call_id, now)


class MonitorServer:
    def __init__(
        self,
        cfg: ScheduleConfig,
        network: Network | None = None,
        own_number: str = "5550100",
        noise_snr_db: float | None = None,
        store_path=None,
        notify_transport=None,
    ):
        self.cfg = cfg
        self.network = network
        self.own_number = own_number
        self.notify_transport = notify_transport

        self.readings: list[StoredReading] = []
        self.alarms: list[AlarmEvent] = []
        self.ledger: list[LedgerEntry] = []
        self.events: list[dict] = []
        self.notifications: list[dict] = []

        self.frames_rejected = 0
        self.frames_duplicate = 0
        self.decode_failures = 0
        self.scheduled_calls = 0
        self.missed_calls = 0

        self._seq_last_stored: dict[int, float] = {}
        self._open_by_source: dict[str, AlarmEvent] = {}
        self._next_alarm_id = 1
        self._next_event_id = 1
        self._next_attempt_id = 1
        self._next_call_at = cfg.first_call_offset
        self._poll_call_id: int | None = None
        self._pending_trigger: int | None = None

        self._log = ReadingLog(store_path) if store_path else None
        if self._log:
            for record in self._log.replay():
                reading = StoredReading(**record)
                self._insert_reading(reading, persist=False)

        self.endpoint = ServerEndpoint(self, own_number, noise_snr_db)
        if network is not None:
            network.register(self.endpoint)

    # -- events ---------------------------------------------------------------

    def _emit(self, t: float, type_: str, **data) -> None:
        self.events.append({"id": self._next_event_id, "t": t, "type": type_, **data})
        self._next_event_id += 1

    # -- scheduling -----------------------------------------------------------

    def next_scheduled_at(self) -> float:
        return self._next_call_at

    def tick(self, now: float) -> None:
        self.endpoint.tick(now)
        if self._pending_trigger is not None and self._poll_call_id is None:
            attempt = self._pending_trigger
            self._pending_trigger = None
            self._place_poll_call(now, attempt=attempt)
        if now >= self._next_call_at:
            self._next_call_at += self.cfg.call_period
            self.scheduled_calls += 1
            if self._poll_call_id is None:
                self._place_poll_call(now, attempt=None)
            else:
                self._emit(now, "call_skipped", reason="poll in progress")

    def _place_poll_call(self, now: float, attempt: int | None) -> None:
        try:
            call_id = self.network.place_call(self.own_number, self.cfg.field_number, now)
        except TelephonyError as exc:
            self.missed_calls += 1
            self._raise_alarm(MISSED_CALL, now, None)
            self._emit(now, "call_failed", reason=type(exc).__name__)
            return
        self._poll_call_id = call_id
        self._emit(now, "call_started", call_id=call_id, attempt=attempt)

    def trigger_poll(self, now: float) -> int:
        """Operator-initiated retrieval; one at a time."""
        if self._poll_call_id is not None or self._pending_trigger is not None:
            raise PollInProgress()
        attempt = self._next_attempt_id
        self._next_attempt_id += 1
        self._pending_trigger = attempt
        return attempt

    # -- call completion pipeline ----------------------------------------------

    def _call_finished(self, record: CallRecord, received: AudioBuffer) -> None:
        ours = record.from_number == self.own_number
        now = record.ended_at
        if ours:
            self._poll_call_id = None
            self.ledger.append(LedgerEntry(record.id, record.placed_at, record.billed_minutes))
            if record.answered_at is None:
                self.missed_calls += 1
                self._raise_alarm(MISSED_CALL, now, None)
                self._emit(now, "call_ended", call_id=record.id, answered=False,
                           billed_minutes=record.billed_minutes)
                return
            self._clear_alarm(MISSED_CALL)
        accepted = self._decode(record, received, now)
        self._emit(now, "call_ended", call_id=record.id, answered=record.answered_at is not None,
                   billed_minutes=record.billed_minutes, frames=len(accepted))
        if ours and record.answered_at is not None and not accepted:
            self.decode_failures += 1
            self._emit(now, "decode_failure", call_id=record.id)

    def _decode(self, record: CallRecord, received: AudioBuffer, now: float) -> list[DataFrame]:
        if record.answered_at is None:
            return []
        symbols = dtmf.detect(received)
        parts = symbols.split(dtmf.FRAME_TERMINATOR)
        fragments = [p + dtmf.FRAME_TERMINATOR for p in parts[:-1] if p]
        if parts[-1]:
            fragments.append(parts[-1])  # unterminated tail, will be rejected
        accepted: list[DataFrame] = []
        for fragment in fragments:
            try:
                accepted.append(dtmf.decode_frame(fragment))
            except dtmf.FrameError as exc:
                self.frames_rejected += 1
                self._emit(now, "decode_reject", call_id=record.id, reason=type(exc).__name__)
        timestamps, suspect = reconstruct_timestamps(
            [f.seq for f in accepted], record.answered_at, self.cfg.unit_poll_period
        )
        for frame, ts in zip(accepted, timestamps):
            last = self._seq_last_stored.get(frame.seq)
            if last is not None and abs(ts - last) < DEDUP_WINDOW_S:
                self.frames_duplicate += 1
                self._emit(now, "duplicate_frame", call_id=record.id, seq=frame.seq)
                continue
            reading = StoredReading(
                timestamp=ts,
                seq=frame.seq,
                battery_voltage=frame.battery_cv / 100.0,
                source_voltage=frame.source_cv / 100.0,
                charge_current=frame.charge_ca / 100.0,
                load_current=frame.load_ca / 100.0,
                total_energy=frame.energy_dkwh / 10.0,
                alarm=bool(frame.alarm_flag),
                call_id=record.id,
                suspect=suspect,
            )
            self._insert_reading(reading, persist=True)
            self._emit(now, "new_reading", timestamp=ts, seq=frame.seq,
                       battery_voltage=reading.battery_voltage, alarm=reading.alarm)
            self.evaluate_alerts(reading, now)
        return accepted

    def _insert_reading(self, reading: StoredReading, persist: bool) -> None:
        keys = [r.timestamp for r in self.readings]
        pos = bisect.bisect_right(keys, reading.timestamp)
        self.readings.insert(pos, reading)
        self._seq_last_stored[reading.seq] = reading.timestamp
        if persist and self._log:
            self._log.append(asdict(reading))

    # -- alarms -----------------------------------------------------------------

    def evaluate_alerts(self, reading: StoredReading, now: float) -> None:
        if reading.alarm:
            self._raise_alarm(FRAME_FLAG, now, reading.timestamp)
        else:
            self._clear_alarm(FRAME_FLAG)
        if reading.battery_voltage < self.cfg.alert_threshold:
            self._raise_alarm(SERVER_THRESHOLD, now, reading.timestamp)
        else:
            self._clear_alarm(SERVER_THRESHOLD)

    def _raise_alarm(self, source: str, now: float, reading_ref: float | None) -> AlarmEvent:
        open_alarm = self._open_by_source.get(source)
        if open_alarm is not None:
            open_alarm.count += 1
            open_alarm.last_seen = now
            return open_alarm
        alarm = AlarmEvent(
            id=self._next_alarm_id, raised_at=now, source=source,
            reading_ref=reading_ref, last_seen=now,
        )
        self._next_alarm_id += 1
        self.alarms.append(alarm)
        self._open_by_source[source] = alarm
        self._emit(now, "alarm_raised", alarm_id=alarm.id, source=source)
        self._notify(alarm, now)
        return alarm

    def _clear_alarm(self, source: str) -> None:
        alarm = self._open_by_source.pop(source, None)
        if alarm is not None:
            alarm.cleared = True

    def ack_alarm(self, alarm_id: int, by: str, now: float) -> AlarmEvent:
        for alarm in self.alarms:
            if alarm.id == alarm_id:
                if not alarm.acknowledged:
                    alarm.acknowledged = True
                    alarm.acknowledged_by = by
                    if self._open_by_source.get(alarm.source) is alarm:
                        del self._open_by_source[alarm.source]
                    self._emit(now, "alarm_acked", alarm_id=alarm.id, by=by)
                return alarm
        raise KeyError(alarm_id)

    def open_alarms(self) -> list[AlarmEvent]:
        return [a for a in self.alarms if not a.acknowledged]

    def _notify(self, alarm: AlarmEvent, now: float) -> None:
        entry = {
            "t": now, "alarm_id": alarm.id, "source": alarm.source,
            "status": "logged",
        }
        if self.notify_transport is not None:
            delivered = False
            for _ in range(NOTIFY_ATTEMPTS):
                try:
                    self.notify_transport({"alarm_id": alarm.id, "source": alarm.source, "t": now})
                    delivered = True
                    break
                except Exception:
                    continue
            entry["status"] = "delivered" if delivered else "failed"
        self.notifications.append(entry)
        self._emit(now, "notification", alarm_id=alarm.id, status=entry["status"])

    # -- queries ------------------------------------------------------------------

    def query_range(self, lo: float, hi: float) -> list[StoredReading]:
        if lo > hi:
            raise ValueError("range start after end")
        return [r for r in self.readings if lo <= r.timestamp <= hi]

    def daily_aggregates(self, day: int) -> dict:
        lo = day * 86400.0
        readings = [r for r in self.readings if lo <= r.timestamp < lo + 86400.0]
        report = {
            "day": day,
            "reading_count": len(readings),
            "charge_curve": [(r.timestamp, r.battery_voltage) for r in readings],
            "insolation": [(r.timestamp, r.charge_current) for r in readings],
            "insufficient": len(readings) < 2,
            "average_charge_power_w": None,
            "energy_delta_kwh": None,
        }
        if len(readings) >= 2:
            total = 0.0
            for a, b in zip(readings, readings[1:]):
                pa = a.battery_voltage * a.charge_current
                pb = b.battery_voltage * b.charge_current
                total += (pa + pb) / 2.0 * (b.timestamp - a.timestamp)
            span = readings[-1].timestamp - readings[0].timestamp
            report["average_charge_power_w"] = total / span if span > 0 else None
            report["energy_delta_kwh"] = readings[-1].total_energy - readings[0].total_energy
        return report

    def ledger_summary(self) -> dict:
        return {
            "total_billed_minutes": sum(e.billed_minutes for e in self.ledger),
            "calls": len(self.ledger),
            "entries": [asdict(e) for e in self.ledger],
        }

    def update_config(self, call_period=None, alert_threshold=None) -> ScheduleConfig:
        candidate = ScheduleConfig(
            field_number=self.cfg.field_number,
            call_period=self.cfg.call_period if call_period is None else call_period,
            alert_threshold=self.cfg.alert_threshold if alert_threshold is None else alert_threshold,
            first_call_offset=self.cfg.first_call_offset,
            unit_poll_period=self.cfg.unit_poll_period,
        )
        # keep the schedule phase: future calls continue on the new period
        self.cfg = candidate
        return self.cfg

    def close(self) -> None:
        if self._log:
            self._log.close()

    def summary(self) -> dict:
        return {
            "readings_stored": len(self.readings),
            "frames_rejected": self.frames_rejected,
            "frames_duplicate": self.frames_duplicate,
            "decode_failures": self.decode_failures,
            "scheduled_calls": self.scheduled_calls,
            "missed_calls": self.missed_calls,
            "alarms_raised": len(self.alarms),
            "billed_minutes": sum(e.billed_minutes for e in self.ledger),
        }
