import numpy as np
import pytest

from solartel import dtmf, server
from solartel.dtmf import AudioBuffer, DataFrame
from solartel.server import (
    FRAME_FLAG,
    MISSED_CALL,
    SERVER_THRESHOLD,
    MonitorServer,
    PollInProgress,
    ScheduleConfig,
    StoredReading,
    reconstruct_timestamps,
)
from solartel.telephony import CallRecord


def make_cfg(**kw):
    kw.setdefault("field_number", "5550101")
    return ScheduleConfig(**kw)


def call_record(call_id=1, answered=1000.0, ended=1010.0):
    return CallRecord(
        id=call_id, from_number="5550100", to_number="5550101",
        placed_at=answered - 1 if answered else 990.0,
        answered_at=answered, ended_at=ended, billed_minutes=1,
        billed_party="5550100",
    )


def frames_audio(*frames):
    symbols = "".join(dtmf.encode_frame(f) for f in frames)
    return dtmf.synthesize(symbols)


def frame(seq, battery_cv=1264, alarm=0, energy_dkwh=34):
    return DataFrame(alarm, seq, battery_cv, 1721, 450, 120, energy_dkwh)


class TestReconstructTimestamps:
    def test_consecutive_seqs(self):
        ts, suspect = reconstruct_timestamps([41, 42, 43], 1000.0, 30.0)
        assert ts == [940.0, 970.0, 1000.0]
        assert suspect is False

    def test_single_frame(self):
        assert reconstruct_timestamps([7], 55.0, 30.0) == ([55.0], False)

    def test_gap_aware(self):
        ts, suspect = reconstruct_timestamps([41, 43], 1000.0, 30.0)
        assert ts == [940.0, 1000.0]
        assert suspect is False

    def test_wraparound(self):
        ts, suspect = reconstruct_timestamps([999, 0], 100.0, 30.0)
        assert ts == [70.0, 100.0]
        assert suspect is False

    def test_non_increasing_marks_suspect(self):
        ts, suspect = reconstruct_timestamps([43, 41], 1000.0, 30.0)
        assert suspect is True
        assert ts == [970.0, 1000.0]

    def test_empty(self):
        assert reconstruct_timestamps([], 0.0, 30.0) == ([], False)


class TestDecodePipeline:
    def setup_method(self):
        self.srv = MonitorServer(make_cfg())

    def test_stores_three_frames_with_reconstructed_times(self):
        audio = frames_audio(frame(41), frame(42), frame(43))
        self.srv._call_finished(call_record(answered=1000.0, ended=1020.0), audio)
        assert [r.seq for r in self.srv.readings] == [41, 42, 43]
        assert [r.timestamp for r in self.srv.readings] == [940.0, 970.0, 1000.0]
        assert self.srv.readings[0].battery_voltage == pytest.approx(12.64)
        assert self.srv.readings[0].total_energy == pytest.approx(3.4)

    def test_corrupted_middle_frame_rejected_and_gap_respected(self):
        good1, bad, good2 = frame(41), dtmf.encode_frame(frame(42)), frame(43)
        # corrupt one digit of the middle frame's battery field
        bad = bad.replace("1264", "1265", 1)
        symbols = dtmf.encode_frame(good1) + bad + dtmf.encode_frame(good2)
        self.srv._call_finished(call_record(answered=1000.0, ended=1020.0),
                                dtmf.synthesize(symbols))
        assert [r.seq for r in self.srv.readings] == [41, 43]
        assert [r.timestamp for r in self.srv.readings] == [940.0, 1000.0]
        assert self.srv.frames_rejected == 1

    def test_duplicate_seq_skipped(self):
        self.srv._call_finished(call_record(call_id=1, answered=1000.0, ended=1010.0),
                                frames_audio(frame(41)))
        self.srv._call_finished(call_record(call_id=2, answered=1030.0, ended=1040.0),
                                frames_audio(frame(41), frame(42)))
        assert [r.seq for r in self.srv.readings] == [41, 42]
        assert self.srv.frames_duplicate == 1

    def test_unanswered_call_raises_missed_alarm(self):
        self.srv._call_finished(call_record(answered=None, ended=1030.0),
                                AudioBuffer(np.zeros(0), 8000))
        assert self.srv.missed_calls == 1
        open_alarms = self.srv.open_alarms()
        assert len(open_alarms) == 1
        assert open_alarms[0].source == MISSED_CALL

    def test_zero_accepted_frames_counts_decode_failure(self):
        self.srv._call_finished(call_record(), AudioBuffer(np.zeros(0), 8000))
        assert self.srv.decode_failures == 1

    def test_partial_tail_fragment_rejected(self):
        symbols = dtmf.encode_frame(frame(41)) + "0#7#12"  # dropped mid-frame
        self.srv._call_finished(call_record(), dtmf.synthesize(symbols))
        assert [r.seq for r in self.srv.readings] == [41]
        assert self.srv.frames_rejected == 1


class TestAlarms:
    def setup_method(self):
        self.srv = MonitorServer(make_cfg(alert_threshold=11.5))

    def feed(self, call_id, answered, *frames_):
        self.srv._call_finished(
            call_record(call_id=call_id, answered=answered, ended=answered + 10),
            frames_audio(*frames_),
        )

    def test_frame_flag_raises_alarm_and_notification(self):
        self.feed(1, 1000.0, frame(1, battery_cv=1130, alarm=1))
        alarms = self.srv.open_alarms()
        assert {a.source for a in alarms} >= {FRAME_FLAG}
        assert any(n["source"] == FRAME_FLAG for n in self.srv.notifications)

    def test_server_threshold_alarm(self):
        self.feed(1, 1000.0, frame(1, battery_cv=1130, alarm=0))
        assert {a.source for a in self.srv.open_alarms()} == {SERVER_THRESHOLD}

    def test_coalescing_until_ack(self):
        for i, t in enumerate((1000.0, 1030.0, 1060.0)):
            self.feed(i + 1, t, frame(i + 1, battery_cv=1130, alarm=1))
        flag_alarms = [a for a in self.srv.alarms if a.source == FRAME_FLAG]
        assert len(flag_alarms) == 1
        assert flag_alarms[0].count == 3
        notif = [n for n in self.srv.notifications if n["source"] == FRAME_FLAG]
        assert len(notif) == 1

    def test_ack_then_new_condition_raises_fresh_alarm(self):
        self.feed(1, 1000.0, frame(1, battery_cv=1130, alarm=1))
        alarm = self.srv.open_alarms()[0]
        acked = self.srv.ack_alarm(alarm.id, by="operator", now=1005.0)
        assert acked.acknowledged is True
        self.feed(2, 1030.0, frame(2, battery_cv=1130, alarm=1))
        sources = [a for a in self.srv.alarms if a.source == alarm.source]
        assert len(sources) == 2

    def test_condition_clear_then_reoccurrence_is_new_alarm(self):
        self.feed(1, 1000.0, frame(1, battery_cv=1130, alarm=1))
        self.feed(2, 1030.0, frame(2, battery_cv=1264, alarm=0))  # recovers
        self.feed(3, 1060.0, frame(3, battery_cv=1130, alarm=1))
        flag_alarms = [a for a in self.srv.alarms if a.source == FRAME_FLAG]
        assert len(flag_alarms) == 2

    def test_ack_unknown_alarm(self):
        with pytest.raises(KeyError):
            self.srv.ack_alarm(404, by="x", now=0.0)

    def test_ack_is_monotone(self):
        self.feed(1, 1000.0, frame(1, battery_cv=1130, alarm=1))
        alarm = self.srv.open_alarms()[0]
        self.srv.ack_alarm(alarm.id, by="a", now=1001.0)
        again = self.srv.ack_alarm(alarm.id, by="b", now=1002.0)
        assert again.acknowledged_by == "a"  # second ack is a no-op

    def test_notification_retries_then_failure(self):
        calls = []

        def flaky(payload):
            calls.append(payload)
            raise ConnectionError("sink down")

        srv = MonitorServer(make_cfg(), notify_transport=flaky)
        # healthy voltage with the frame flag set: exactly one alarm source
        srv._call_finished(call_record(), frames_audio(frame(1, alarm=1)))
        assert len(calls) == server.NOTIFY_ATTEMPTS
        assert srv.notifications[-1]["status"] == "failed"
        assert srv.open_alarms()  # alarm stored regardless

    def test_notification_delivered(self):
        seen = []
        srv = MonitorServer(make_cfg(), notify_transport=seen.append)
        srv._call_finished(call_record(), frames_audio(frame(1, alarm=1)))
        assert seen and srv.notifications[-1]["status"] == "delivered"


class TestQueries:
    def setup_method(self):
        self.srv = MonitorServer(make_cfg())

    def test_empty_store(self):
        assert self.srv.query_range(0.0, 1e9) == []

    def test_closed_interval_boundaries(self):
        self.srv._call_finished(call_record(answered=1000.0, ended=1020.0),
                                frames_audio(frame(41), frame(42), frame(43)))
        got = self.srv.query_range(940.0, 1000.0)
        assert [r.seq for r in got] == [41, 42, 43]
        got = self.srv.query_range(940.1, 999.9)
        assert [r.seq for r in got] == [42]

    def test_bad_range(self):
        with pytest.raises(ValueError):
            self.srv.query_range(10.0, 5.0)

    def test_daily_aggregates_hand_trapezoid(self):
        # two readings spanning a day: powers 48 W and 78 W -> mean 63 W
        r1 = StoredReading(timestamp=0.0, seq=1, battery_voltage=12.0, source_voltage=0,
                           charge_current=4.0, load_current=0, total_energy=10.0,
                           alarm=False, call_id=1)
        r2 = StoredReading(timestamp=86399.0, seq=2, battery_voltage=13.0, source_voltage=0,
                           charge_current=6.0, load_current=0, total_energy=12.5,
                           alarm=False, call_id=2)
        self.srv._insert_reading(r1, persist=False)
        self.srv._insert_reading(r2, persist=False)
        report = self.srv.daily_aggregates(0)
        assert report["insufficient"] is False
        assert report["average_charge_power_w"] == pytest.approx(63.0)
        assert report["energy_delta_kwh"] == pytest.approx(2.5)

    def test_insufficient_day(self):
        report = self.srv.daily_aggregates(0)
        assert report["insufficient"] is True
        assert report["average_charge_power_w"] is None


class TestPersistence:
    def test_replay_after_restart(self, tmp_path):
        path = tmp_path / "readings.jsonl"
        srv = MonitorServer(make_cfg(), store_path=path)
        srv._call_finished(call_record(answered=1000.0, ended=1020.0),
                           frames_audio(frame(41), frame(42), frame(43)))
        before = srv.query_range(0, 1e9)
        srv.close()

        srv2 = MonitorServer(make_cfg(), store_path=path)
        after = srv2.query_range(0, 1e9)
        assert after == before

    def test_replayed_seqs_still_dedup(self, tmp_path):
        path = tmp_path / "readings.jsonl"
        srv = MonitorServer(make_cfg(), store_path=path)
        srv._call_finished(call_record(call_id=1), frames_audio(frame(41)))
        srv.close()
        srv2 = MonitorServer(make_cfg(), store_path=path)
        srv2._call_finished(call_record(call_id=2, answered=1030.0, ended=1040.0),
                            frames_audio(frame(41)))
        assert len(srv2.readings) == 1
        assert srv2.frames_duplicate == 1


class TestTriggerAndConfig:
    def test_trigger_conflict(self):
        srv = MonitorServer(make_cfg())
        srv.trigger_poll(now=0.0)
        with pytest.raises(PollInProgress):
            srv.trigger_poll(now=0.1)

    def test_config_validation(self):
        srv = MonitorServer(make_cfg())
        with pytest.raises(ValueError):
            srv.update_config(call_period=59)
        cfg = srv.update_config(call_period=7200, alert_threshold=11.8)
        assert cfg.call_period == 7200
        assert cfg.alert_threshold == 11.8

    def test_ledger_tracks_served_calls(self):
        srv = MonitorServer(make_cfg())
        srv._call_finished(call_record(call_id=5), frames_audio(frame(1)))
        summary = srv.ledger_summary()
        assert summary["total_billed_minutes"] == 1
        assert summary["calls"] == 1
