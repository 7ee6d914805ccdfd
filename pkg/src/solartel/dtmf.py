"""DTMF data link: telemetry frame codec, tone synthesis, Goertzel detection.

A telemetry frame is keyed on a 12-key pad as decimal digit runs separated
by '#', closed by a mod-10 check digit and a '*' terminator:

    alarm '#' seq '#' battery_cv '#' source_cv '#' charge_ca '#' load_ca
          '#' energy_dkwh '#' chk '*'

Voltages travel as centivolts, currents as centiamps, energy as tenths of a
kWh, so every field is a small non-negative integer pressed verbatim. The
check digit is the sum of all preceding digit symbols mod 10; '#' and '*'
do not count. Together with the field-count and terminator checks it makes
every single-digit substitution detectable on the lossy audio path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_FREQS = (697.0, 770.0, 852.0, 941.0)
COL_FREQS = (1209.0, 1336.0, 1477.0)

# standard 12-key layout, row-major
_KEYPAD = (
    ("1", "2", "3"),
    ("4", "5", "6"),
    ("7", "8", "9"),
    ("*", "0", "#"),
)

SYMBOL_TO_PAIR: dict[str, tuple[float, float]] = {
    _KEYPAD[r][c]: (ROW_FREQS[r], COL_FREQS[c])
    for r in range(4)
    for c in range(3)
}
PAIR_TO_SYMBOL = {pair: sym for sym, pair in SYMBOL_TO_PAIR.items()}

FRAME_TERMINATOR = "*"
FIELD_SEPARATOR = "#"
MAX_FIELD_DIGITS = 6
FIELDS_PER_FRAME = 8  # 7 data fields + check digit

# Goertzel detector parameters. Block size 205 puts the 8 DTMF tones close
# to integer bins at 8 kHz; a symbol must dominate by DOMINANCE_RATIO for
# MIN_TONE_BLOCKS consecutive blocks and be followed by at least one
# non-tone block before another symbol can be emitted.
GOERTZEL_BLOCK = 205
DOMINANCE_RATIO = 4.0
MIN_TONE_BLOCKS = 2
# Energy floor: tone amplitude a at an on-bin frequency scores about
# (a*N/2)^2; 105 corresponds to a ~0.1 amplitude, well above channel noise
# at the SNRs we accept and far below the 0.45 synthesis amplitude.
ENERGY_FLOOR = 105.0

# Mean-square power of the nominal dual tone (two 0.45 sines); the channel
# noise generator is calibrated against this.
REFERENCE_TONE_POWER = 0.2025


class FrameError(Exception):
    """Base class for frame codec failures."""


class FieldOverflow(FrameError):
    pass


class BadFieldCount(FrameError):
    pass


class BadCheckDigit(FrameError):
    pass


class BadTerminator(FrameError):
    pass


class NonCanonicalDigits(FrameError):
    pass


class FieldRange(FrameError):
    """Structurally valid digits that decode outside a field's legal range."""


@dataclass(frozen=True)
class DataFrame:
    """One transmitted telemetry record."""

    alarm_flag: int
    seq: int
    battery_cv: int
    source_cv: int
    charge_ca: int
    load_ca: int
    energy_dkwh: int

    def __post_init__(self) -> None:
        if self.alarm_flag not in (0, 1):
            raise FieldRange(f"alarm_flag {self.alarm_flag} not 0 or 1")
        if not 0 <= self.seq <= 999:
            raise FieldRange(f"seq {self.seq} outside 0..999")
        for name in ("battery_cv", "source_cv", "charge_ca", "load_ca", "energy_dkwh"):
            if getattr(self, name) < 0:
                raise FieldRange(f"{name} negative")

    def fields(self) -> tuple[int, ...]:
        return (
            self.alarm_flag,
            self.seq,
            self.battery_cv,
            self.source_cv,
            self.charge_ca,
            self.load_ca,
            self.energy_dkwh,
        )


@dataclass(frozen=True)
class ToneTiming:
    tone_ms: int = 100
    gap_ms: int = 100
    sample_rate: int = 8000

    def __post_init__(self) -> None:
        if self.tone_ms < 40 or self.gap_ms < 40:
            raise ValueError("tone and gap must be at least 40 ms for reliable detection")

    @property
    def symbol_seconds(self) -> float:
        return (self.tone_ms + self.gap_ms) / 1000.0


@dataclass
class AudioBuffer:
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rate: int = 8000

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


def encode_frame(frame: DataFrame) -> str:
    """Render a frame as its DTMF symbol sequence (as a string)."""
    parts = []
    for value in frame.fields():
        digits = str(value)
        if len(digits) > MAX_FIELD_DIGITS:
            raise FieldOverflow(f"field value {value} needs more than {MAX_FIELD_DIGITS} digits")
        parts.append(digits)
    digit_sum = sum(int(d) for part in parts for d in part)
    chk = digit_sum % 10
    return FIELD_SEPARATOR.join(parts + [str(chk)]) + FRAME_TERMINATOR


def decode_frame(symbols: str) -> DataFrame:
    """Inverse of encode_frame, validating structure and check digit."""
    if not symbols or symbols[-1] != FRAME_TERMINATOR:
        raise BadTerminator("frame must end with '*'")
    body = symbols[:-1]
    if FRAME_TERMINATOR in body:
        raise BadTerminator("terminator inside frame body")
    fields_ = body.split(FIELD_SEPARATOR)
    if len(fields_) != FIELDS_PER_FRAME:
        raise BadFieldCount(f"{len(fields_)} fields, expected {FIELDS_PER_FRAME}")
    for part in fields_:
        if not part or not part.isdigit():
            raise NonCanonicalDigits(f"field {part!r} is not a digit run")
        if len(part) > 1 and part[0] == "0":
            raise NonCanonicalDigits(f"field {part!r} has a leading zero")
        if len(part) > MAX_FIELD_DIGITS:
            raise NonCanonicalDigits(f"field {part!r} longer than {MAX_FIELD_DIGITS} digits")
    *data_parts, chk_part = fields_
    digit_sum = sum(int(d) for part in data_parts for d in part)
    if digit_sum % 10 != int(chk_part):
        raise BadCheckDigit(f"check digit {chk_part}, expected {digit_sum % 10}")
    values = [int(part) for part in data_parts]
    return DataFrame(*values)


def frame_duration(frame: DataFrame, timing: ToneTiming = ToneTiming()) -> float:
    """Seconds of audio one frame occupies at the given timing."""
    return len(encode_frame(frame)) * timing.symbol_seconds


_tone_cache: dict[tuple[str, ToneTiming], np.ndarray] = {}


def symbol_tone(symbol: str, timing: ToneTiming = ToneTiming()) -> np.ndarray:
    """Tone-plus-gap samples for one symbol, peak-normalized to 0.9."""
    key = (symbol, timing)
    cached = _tone_cache.get(key)
    if cached is not None:
        return cached
    f_row, f_col = SYMBOL_TO_PAIR[symbol]
    n_tone = round(timing.tone_ms * timing.sample_rate / 1000)
    n_gap = round(timing.gap_ms * timing.sample_rate / 1000)
    t = np.arange(n_tone) / timing.sample_rate
    raw = 0.5 * (np.sin(2 * np.pi * f_row * t) + np.sin(2 * np.pi * f_col * t))
    tone = raw * (0.9 / np.max(np.abs(raw)))
    samples = np.concatenate([tone, np.zeros(n_gap)])
    _tone_cache[key] = samples
    return samples


def synthesize(symbols: str, timing: ToneTiming = ToneTiming()) -> AudioBuffer:
    """Audio for a symbol sequence: tone_ms of dual tone then gap_ms of silence each."""
    if not symbols:
        return AudioBuffer(np.zeros(0), timing.sample_rate)
    chunks = [symbol_tone(s, timing) for s in symbols]
    return AudioBuffer(np.concatenate(chunks), timing.sample_rate)


def awgn(audio: AudioBuffer, snr_db: float, rng: np.random.Generator) -> AudioBuffer:
    """Additive white gaussian noise at snr_db relative to the nominal tone power.

    The result is hard-clipped to [-1, 1], as a telephone channel would.
    """
    noise_power = REFERENCE_TONE_POWER * 10.0 ** (-snr_db / 10.0)
    noise = rng.normal(0.0, np.sqrt(noise_power), size=len(audio.samples))
    return AudioBuffer(np.clip(audio.samples + noise, -1.0, 1.0), audio.rate)


def _goertzel_energies(blocks: np.ndarray, rate: int) -> np.ndarray:
    """Goertzel energy per block at the 7 DTMF frequencies.

    blocks has shape (n_blocks, GOERTZEL_BLOCK); returns (n_blocks, 7) with
    rows first (4 row freqs) then columns (3 col freqs).
    """
    n = blocks.shape[1]
    freqs = ROW_FREQS + COL_FREQS
    energies = np.empty((blocks.shape[0], len(freqs)))
    for i, freq in enumerate(freqs):
        k = round(n * freq / rate)
        coeff = 2.0 * np.cos(2.0 * np.pi * k / n)
        q1 = np.zeros(blocks.shape[0])
        q2 = np.zeros(blocks.shape[0])
        for j in range(n):
            q0 = coeff * q1 - q2 + blocks[:, j]
            q2 = q1
            q1 = q0
        energies[:, i] = q1 * q1 + q2 * q2 - coeff * q1 * q2
    return energies


def _classify_blocks(energies: np.ndarray) -> list[str | None]:
    """Per-block symbol decision: exactly one dominant row and column pair."""
    out: list[str | None] = []
    rows = energies[:, :4]
    cols = energies[:, 4:]
    for i in range(energies.shape[0]):
        r = int(np.argmax(rows[i]))
        c = int(np.argmax(cols[i]))
        pair_min = min(rows[i, r], cols[i, c])
        if pair_min < ENERGY_FLOOR:
            out.append(None)
            continue
        others = [rows[i, j] for j in range(4) if j != r]
        others += [cols[i, j] for j in range(3) if j != c]
        if pair_min >= DOMINANCE_RATIO * max(others):
            out.append(PAIR_TO_SYMBOL[(ROW_FREQS[r], COL_FREQS[c])])
        else:
            out.append(None)
    return out


def detect(audio: AudioBuffer) -> str:
    """Recover the symbol sequence from audio.

    A symbol is emitted once its classification holds for MIN_TONE_BLOCKS
    consecutive blocks; at least one non-tone block must pass before the
    next emission, which keeps a long tone from repeating. Undetectable
    audio simply yields fewer symbols; framing problems are left to
    decode_frame.
    """
    if audio.rate != 8000:
        raise ValueError(f"detector requires 8000 samples/s, got {audio.rate}")
    n_blocks = len(audio.samples) // GOERTZEL_BLOCK
    if n_blocks == 0:
        return ""
    blocks = audio.samples[: n_blocks * GOERTZEL_BLOCK].reshape(n_blocks, GOERTZEL_BLOCK)
    labels = _classify_blocks(_goertzel_energies(blocks, audio.rate))

    symbols = []
    run_symbol: str | None = None
    run_length = 0
    armed = True
    for label in labels:
        if label is None:
            run_symbol = None
            run_length = 0
            armed = True
            continue
        if label == run_symbol:
            run_length += 1
        else:
            run_symbol = label
            run_length = 1
        if run_length >= MIN_TONE_BLOCKS and armed:
            symbols.append(label)
            armed = False
    return "".join(symbols)


def write_wav(path, audio: AudioBuffer) -> None:
    """Write audio as 16-bit mono WAV for manual inspection."""
    import wave

    scaled = np.clip(audio.samples, -1.0, 1.0)
    pcm = (scaled * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(audio.rate)
        wav.writeframes(pcm.tobytes())
