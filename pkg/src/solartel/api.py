"""HTTP+JSON surface over a MonitorServer, plus the server-push event stream.

All mutations (ack, config, poll trigger) go through the core under one
lock; readers take the same lock briefly. Timestamps in JSON responses are
integer simulated seconds; the CSV export keeps sub-second precision.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse

from .server import MonitorServer, PollInProgress, READINGS_CSV_HEADER, StoredReading


class ServerHandle:
    """What the API needs from whoever owns the simulation."""

    def __init__(self, server: MonitorServer, now_fn=None, lock=None):
        self.server = server
        self.lock = lock if lock is not None else threading.RLock()
        self._now_fn = now_fn

    def now(self) -> float:
        if self._now_fn is not None:
            return self._now_fn()
        events = self.server.events
        return events[-1]["t"] if events else 0.0


def _reading_json(r: StoredReading) -> dict:
    d = asdict(r)
    d["timestamp"] = int(round(r.timestamp))
    return d


def _alarm_json(a) -> dict:
    return asdict(a)


def create_app(handle: ServerHandle) -> FastAPI:
    app = FastAPI(title="solartel monitor", docs_url=None, redoc_url=None)
    app.state.handle = handle

    @app.get("/api/readings")
    def readings(from_: float = Query(0.0, alias="from"),
                 to: float = Query(float("inf"))):
        with handle.lock:
            rows = handle.server.query_range(from_, to)
            return [_reading_json(r) for r in rows]

    @app.get("/api/readings.csv")
    def readings_csv(from_: float = Query(0.0, alias="from"),
                     to: float = Query(float("inf"))):
        with handle.lock:
            rows = handle.server.query_range(from_, to)
            body = READINGS_CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in rows)
        return PlainTextResponse(body, media_type="text/csv")

    @app.get("/api/aggregates/daily")
    def aggregates(day: int = Query(...)):
        with handle.lock:
            return handle.server.daily_aggregates(day)

    @app.get("/api/alarms")
    def alarms(open: bool | None = Query(None)):
        with handle.lock:
            items = handle.server.alarms
            if open is True:
                items = [a for a in items if not a.acknowledged]
            elif open is False:
                items = [a for a in items if a.acknowledged]
            return [_alarm_json(a) for a in items]

    @app.post("/api/alarms/{alarm_id}/ack")
    def ack(alarm_id: int, request: Request):
        by = request.headers.get("x-operator", "console")
        with handle.lock:
            try:
                alarm = handle.server.ack_alarm(alarm_id, by=by, now=handle.now())
            except KeyError:
                raise HTTPException(status_code=404, detail="unknown alarm")
            return _alarm_json(alarm)

    @app.post("/api/poll")
    def trigger_poll():
        with handle.lock:
            try:
                attempt = handle.server.trigger_poll(handle.now())
            except PollInProgress:
                raise HTTPException(status_code=409, detail="poll already in progress")
        return JSONResponse({"attempt_id": attempt}, status_code=202)

    @app.get("/api/ledger")
    def ledger():
        with handle.lock:
            return handle.server.ledger_summary()

    @app.get("/api/config")
    def get_config():
        with handle.lock:
            cfg = handle.server.cfg
            return {
                "field_number": cfg.field_number,
                "call_period": cfg.call_period,
                "alert_threshold": cfg.alert_threshold,
                "first_call_offset": cfg.first_call_offset,
                "unit_poll_period": cfg.unit_poll_period,
            }

    @app.put("/api/config")
    async def put_config(request: Request):
        body = await request.json()
        unknown = set(body) - {"call_period", "alert_threshold"}
        if unknown:
            raise HTTPException(status_code=422, detail=f"unknown fields: {sorted(unknown)}")
        with handle.lock:
            try:
                cfg = handle.server.update_config(
                    call_period=body.get("call_period"),
                    alert_threshold=body.get("alert_threshold"),
                )
            except (ValueError, TypeError) as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            return {
                "field_number": cfg.field_number,
                "call_period": cfg.call_period,
                "alert_threshold": cfg.alert_threshold,
            }

    @app.get("/api/events")
    def events(after: int = Query(0), once: bool = Query(False)):
        def stream():
            cursor = after
            idle = 0.0
            while True:
                with handle.lock:
                    pending = [e for e in handle.server.events if e["id"] > cursor]
                for event in pending:
                    cursor = event["id"]
                    payload = json.dumps(event, sort_keys=True)
                    yield f"id: {event['id']}\nevent: {event['type']}\ndata: {payload}\n\n"
                if once:
                    return
                if pending:
                    idle = 0.0
                else:
                    time.sleep(0.2)
                    idle += 0.2
                    if idle >= 2.0:
                        idle = 0.0
                        yield ": hb\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
