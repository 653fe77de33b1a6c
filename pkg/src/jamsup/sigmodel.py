"""Synchronous spread-spectrum uplink with a fast frequency-hopping jammer.

Generates spreading codes, user activity, precoded symbols, the clean user
mixture, the jammer, AWGN, and labeled examples for training/evaluation.

Power levels in :class:`ScenarioConfig` are in dB relative to the per-chip
power of a unit-power active user.  With unit-norm codes that per-chip power
is ``1/S``, so a 20 dB jammer has per-chip power ``100/S`` and a -10 dB noise
floor has per-chip variance ``0.1/S``.  Set ``power_reference="absolute"`` to
interpret the dB values directly as per-chip power.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import BinaryIO, Iterator, NamedTuple

import numpy as np
from scipy.linalg import hadamard

__all__ = [
    "SpreadingMatrix",
    "SymbolAlphabet",
    "QPSK",
    "ActiveSet",
    "ChannelRealization",
    "JammerConfig",
    "JammerRealization",
    "ScenarioConfig",
    "ScenarioRealization",
    "Example",
    "hadamard_codes",
    "precode_symbol",
    "draw_channel",
    "draw_active_set",
    "clean_mixture",
    "draw_jammer",
    "draw_awgn",
    "generate_scenario",
    "generate_dataset",
    "scenario_rng",
    "write_dataset",
    "read_dataset",
]

# Stream tags keep per-example seeds of different consumers disjoint.
STREAM_DATASET = 0
STREAM_EVAL = 1
STREAM_HOLDOUT = 2


@dataclass(frozen=True)
class SpreadingMatrix:
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries)
        if entries.ndim != 2:
            raise ValueError(f"spreading matrix must be 2-D, got shape {entries.shape}")
        norms = np.linalg.norm(entries, axis=0)
        if not np.allclose(norms, 1.0, rtol=1e-12, atol=0):
            raise ValueError("spreading codes must have unit Euclidean norm")
        object.__setattr__(self, "entries", entries.astype(np.complex128))

    @property
    def spreading_factor(self) -> int:
        return self.entries.shape[0]

    @property
    def num_users(self) -> int:
        return self.entries.shape[1]

    def code(self, i: int) -> np.ndarray:
        return self.entries[:, i]


@dataclass(frozen=True)
class SymbolAlphabet:
    points: tuple
    name: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.complex128)
        if len(np.unique(pts)) != len(pts):
            raise ValueError("alphabet points must be distinct")
        object.__setattr__(self, "points", tuple(complex(p) for p in pts))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.complex128)

    def __len__(self):
        return len(self.points)


QPSK = SymbolAlphabet(
    points=tuple(np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2)),
    name="qpsk",
)


@dataclass(frozen=True)
class ActiveSet:
    indices: np.ndarray
    symbols: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        sym = np.asarray(self.symbols, dtype=np.complex128)
        if idx.shape != sym.shape:
            raise ValueError("indices and symbols must have the same length")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("active indices must be distinct")
        order = np.argsort(idx, kind="stable")
        object.__setattr__(self, "indices", idx[order])
        object.__setattr__(self, "symbols", sym[order])

    def __len__(self):
        return len(self.indices)

    def as_vector(self, num_users: int) -> np.ndarray:
        """Symbol vector with exact zeros for inactive users."""
        b = np.zeros(num_users, dtype=np.complex128)
        b[self.indices] = self.symbols
        return b


@dataclass(frozen=True)
class ChannelRealization:
    magnitudes: np.ndarray
    phases: np.ndarray

    @property
    def complex_gains(self) -> np.ndarray:
        return self.magnitudes * np.exp(1j * self.phases)


@dataclass(frozen=True)
class JammerConfig:
    amplitude: float
    num_segments: int = 100
    enabled: bool = True


@dataclass(frozen=True)
class JammerRealization:
    chips: np.ndarray
    segment_boundaries: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray


@dataclass(frozen=True)
class ScenarioConfig:
    spreading_factor: int = 128
    num_users: int = 128
    num_active: int = 2
    jammer_power_db: float = 20.0
    noise_power_db: float = -10.0
    channel_mag_low: float = 0.5
    channel_mag_high: float = 1.5
    num_segments: int = 100
    jammer_enabled: bool = True
    power_reference: str = "chip"
    seed: int = 0

    def __post_init__(self):
        if self.channel_mag_low > self.channel_mag_high:
            raise ValueError("channel_mag_low must not exceed channel_mag_high")
        if self.channel_mag_low < 0:
            raise ValueError("channel magnitudes must be nonnegative")
        if not 0 <= self.num_active <= self.num_users:
            raise ValueError(
                f"num_active={self.num_active} must lie in [0, num_users={self.num_users}]"
            )
        if self.spreading_factor < 1 or self.num_users < 1:
            raise ValueError("spreading_factor and num_users must be positive")
        if not 1 <= self.num_segments <= self.spreading_factor:
            raise ValueError(
                f"num_segments={self.num_segments} must lie in [1, S={self.spreading_factor}]"
            )
        if self.power_reference not in ("chip", "absolute"):
            raise ValueError("power_reference must be 'chip' or 'absolute'")

    @property
    def _ref_db(self) -> float:
        # per-chip power of a unit-power user spread over S unit-norm chips
        if self.power_reference == "chip":
            return -10 * np.log10(self.spreading_factor)
        return 0.0

    @property
    def noise_chip_db(self) -> float:
        return self.noise_power_db + self._ref_db

    @property
    def noise_variance(self) -> float:
        return 10 ** (self.noise_chip_db / 10)

    @property
    def jammer_amplitude(self) -> float:
        return 10 ** ((self.jammer_power_db + self._ref_db) / 20)

    @property
    def jammer(self) -> JammerConfig:
        return JammerConfig(self.jammer_amplitude, self.num_segments, self.jammer_enabled)

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class ScenarioRealization:
    active: ActiveSet
    channel: ChannelRealization
    clean: np.ndarray
    jammer: JammerRealization
    noise: np.ndarray
    received: np.ndarray


class Example(NamedTuple):
    received: np.ndarray
    clean: np.ndarray
    active: ActiveSet


def hadamard_codes(spreading_factor: int) -> SpreadingMatrix:
    """Sylvester Walsh-Hadamard codes scaled to unit norm (N = S)."""
    s = int(spreading_factor)
    if s != spreading_factor or s < 1 or s & (s - 1):
        raise ValueError(f"spreading factor must be a power of two, got {spreading_factor!r}")
    return SpreadingMatrix(hadamard(s).astype(np.float64) / np.sqrt(s))


def precode_symbol(symbol: complex, channel: complex) -> complex:
    """Normalized zero-forcing precoding ``b * conj(h) / |h|``."""
    mag = abs(channel)
    if mag == 0:
        raise ValueError("zero channel gain: normalized ZF precoder is undefined")
    return symbol * np.conj(channel) / mag


def draw_channel(config: ScenarioConfig, rng: np.random.Generator) -> ChannelRealization:
    mags = rng.uniform(config.channel_mag_low, config.channel_mag_high, config.num_users)
    phases = rng.uniform(0.0, 2 * np.pi, config.num_users)
    return ChannelRealization(mags, phases)


def draw_active_set(
    config: ScenarioConfig, alphabet: SymbolAlphabet, rng: np.random.Generator
) -> ActiveSet:
    k = config.num_active
    if k > config.num_users:
        raise ValueError(f"num_active={k} exceeds num_users={config.num_users}")
    idx = rng.choice(config.num_users, size=k, replace=False)
    sym = alphabet.array[rng.integers(0, len(alphabet), size=k)]
    return ActiveSet(idx, sym)


def clean_mixture(
    codes: SpreadingMatrix, channel: ChannelRealization, active: ActiveSet
) -> np.ndarray:
    idx = active.indices
    gains = channel.magnitudes[idx] * active.symbols
    return codes.entries[:, idx] @ gains


def draw_jammer(
    config: JammerConfig, spreading_factor: int, rng: np.random.Generator
) -> JammerRealization:
    s, m = spreading_factor, config.num_segments
    if not 1 <= m <= s:
        raise ValueError(f"num_segments={m} must lie in [1, S={s}]")
    if not config.enabled:
        return JammerRealization(
            np.zeros(s, dtype=np.complex128),
            np.zeros(0, dtype=np.int64),
            np.zeros(0),
            np.zeros(0),
        )
    bounds = np.sort(rng.choice(np.arange(1, s), size=m - 1, replace=False))
    freqs = rng.uniform(0.0, 1.0, m)
    phases = rng.uniform(0.0, 2 * np.pi, m)
    seg = np.zeros(s, dtype=np.int64)
    seg[bounds] = 1
    seg = np.cumsum(seg)
    k = np.arange(s)
    # phase sits inside the exponent so every chip has modulus exactly A
    chips = config.amplitude * np.exp(1j * (2 * np.pi * freqs[seg] * k + phases[seg]))
    return JammerRealization(chips, bounds, freqs, phases)


def draw_awgn(noise_power_db: float, length: int, rng: np.random.Generator) -> np.ndarray:
    """Circularly symmetric complex Gaussian with per-chip variance 10**(dB/10)."""
    std = np.sqrt(10 ** (noise_power_db / 10) / 2)
    return std * (rng.standard_normal(length) + 1j * rng.standard_normal(length))


def generate_scenario(
    config: ScenarioConfig,
    codes: SpreadingMatrix,
    alphabet: SymbolAlphabet,
    rng: np.random.Generator,
) -> ScenarioRealization:
    if codes.spreading_factor != config.spreading_factor or codes.num_users != config.num_users:
        raise ValueError(
            f"codes are {codes.spreading_factor}x{codes.num_users}, config expects "
            f"{config.spreading_factor}x{config.num_users}"
        )
    channel = draw_channel(config, rng)
    active = draw_active_set(config, alphabet, rng)
    clean = clean_mixture(codes, channel, active)
    jammer = draw_jammer(config.jammer, config.spreading_factor, rng)
    noise = draw_awgn(config.noise_chip_db, config.spreading_factor, rng)
    received = clean + jammer.chips + noise
    return ScenarioRealization(active, channel, clean, jammer, noise, received)


def scenario_rng(seed: int, index: int, stream: int = STREAM_DATASET) -> np.random.Generator:
    """Generator for example ``index`` of a stream, independent of generation order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, stream, index])


def iter_scenarios(
    config: ScenarioConfig,
    codes: SpreadingMatrix,
    alphabet: SymbolAlphabet,
    count: int,
    seed: int | None = None,
    stream: int = STREAM_DATASET,
    start: int = 0,
) -> Iterator[ScenarioRealization]:
    seed = config.seed if seed is None else seed
    for i in range(start, start + count):
        yield generate_scenario(config, codes, alphabet, scenario_rng(seed, i, stream))


def generate_dataset(
    config: ScenarioConfig,
    codes: SpreadingMatrix,
    alphabet: SymbolAlphabet,
    count: int,
    seed: int | None = None,
    stream: int = STREAM_DATASET,
) -> list[Example]:
    """``count`` labeled examples; example i depends only on (seed, stream, i)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    return [
        Example(sc.received, sc.clean, sc.active)
        for sc in iter_scenarios(config, codes, alphabet, count, seed, stream)
    ]


# ---------------------------------------------------------------------------
# flat binary record stream, little-endian float32

def _write_complex(fh: BinaryIO, z: np.ndarray) -> None:
    buf = np.empty((len(z), 2), dtype="<f4")
    buf[:, 0] = z.real
    buf[:, 1] = z.imag
    fh.write(buf.tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"truncated dataset record: wanted {n} bytes, got {len(data)}")
    return data


def _read_complex(fh: BinaryIO, n: int) -> np.ndarray:
    buf = np.frombuffer(_read_exact(fh, 8 * n), dtype="<f4").reshape(n, 2)
    return buf[:, 0].astype(np.float64) + 1j * buf[:, 1].astype(np.float64)


def write_dataset(examples, fh: BinaryIO) -> int:
    n = 0
    for ex in examples:
        r = np.asarray(ex.received)
        fh.write(struct.pack("<I", len(r)))
        _write_complex(fh, r)
        _write_complex(fh, np.asarray(ex.clean))
        fh.write(struct.pack("<H", len(ex.active)))
        for i, b in zip(ex.active.indices, ex.active.symbols):
            fh.write(struct.pack("<Iff", int(i), b.real, b.imag))
        n += 1
    return n


def read_dataset(fh: BinaryIO) -> list[Example]:
    out = []
    while True:
        head = fh.read(4)
        if not head:
            return out
        if len(head) != 4:
            raise ValueError("truncated dataset record header")
        (s,) = struct.unpack("<I", head)
        r = _read_complex(fh, s)
        y = _read_complex(fh, s)
        (k,) = struct.unpack("<H", _read_exact(fh, 2))
        idx = np.empty(k, dtype=np.int64)
        sym = np.empty(k, dtype=np.complex128)
        for j in range(k):
            i, re, im = struct.unpack("<Iff", _read_exact(fh, 12))
            idx[j], sym[j] = i, complex(re, im)
        out.append(Example(r, y, ActiveSet(idx, sym)))
