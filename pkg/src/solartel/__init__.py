"""Remote solar monitoring, simulated end to end.

A field unit polls a charge controller over Modbus RTU and answers billed
telephone calls with its readings as DTMF tones; a server places the calls,
decodes the audio, stores history and raises alarms. Everything here runs
against simulated hardware on one deterministic clock.
"""

__version__ = "0.1.0"
