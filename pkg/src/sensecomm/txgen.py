"""Waveform synthesis: dual-pol coherent data channel, BPSK-coded probe, MUX.

The simulation grid is complex baseband centered between the two carriers
(193.45 THz); the data channel sits at +50 GHz and the probe at -50 GHz by
convention. Field amplitudes are in sqrt(W), so mean(|x|^2 + |y|^2) is the
average optical power in watts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft
import scipy.signal

from .codes import ShapedSequence
from .util import FFT_WORKERS, dbm_to_watt

DATA_OFFSET_HZ = +50e9
PROBE_OFFSET_HZ = -50e9


class TxError(ValueError):
    pass


class BitCountMismatch(TxError):
    pass


class RepetitionTooShort(TxError):
    pass


class AliasingRisk(TxError):
    pass


@dataclass
class OpticalField:
    """Dual-polarization complex baseband sample stream.

    grid_offset is the carrier offset (Hz) this envelope rides on relative to
    the simulation center frequency; a muxed multi-channel field uses offset 0.
    """

    pol_x: np.ndarray
    pol_y: np.ndarray
    sample_rate: float
    grid_offset: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        self.pol_x = np.asarray(self.pol_x)
        self.pol_y = np.asarray(self.pol_y)
        if self.pol_x.shape != self.pol_y.shape:
            raise TxError("pol_x and pol_y must have equal length")
        if self.sample_rate <= 0:
            raise TxError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.pol_x)

    @property
    def duration(self) -> float:
        return len(self.pol_x) / self.sample_rate

    def power(self) -> float:
        """Average power in W over both polarizations."""
        return float(np.mean(np.abs(self.pol_x) ** 2 + np.abs(self.pol_y) ** 2))

    def copy(self) -> "OpticalField":
        return OpticalField(
            self.pol_x.copy(), self.pol_y.copy(), self.sample_rate, self.grid_offset, self.t0
        )


@dataclass
class TxConfig:
    symbol_rate: float = 33e9
    format: str = "qpsk"  # 'qpsk' | 'qam16'
    rolloff: float = 0.1
    sps: int = 2
    launch_power_dbm: float = 0.0

    def __post_init__(self):
        self.format = self.format.lower()
        if self.format not in ("qpsk", "qam16"):
            raise TxError(f"unknown format {self.format!r}")
        if self.sps < 2:
            raise TxError("need at least 2 samples per symbol")
        if not 0.0 < self.rolloff <= 1.0:
            raise TxError("rolloff must be in (0, 1]")

    @property
    def bits_per_symbol(self) -> int:
        return 2 if self.format == "qpsk" else 4

    @property
    def sample_rate(self) -> float:
        return self.sps * self.symbol_rate


@dataclass
class ProbeConfig:
    chip_rate: float = 1e8
    peak_power_dbm: float = 7.8
    repetition_period: float = 500e-6
    sequence: ShapedSequence | None = None
    chip_shape: str = "rectangular"  # 'rectangular' | 'rrc'

    @property
    def sequence_duration(self) -> float:
        if self.sequence is None:
            return 0.0
        return len(self.sequence) / self.chip_rate


_QPSK_LUT = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / np.sqrt(2)
# index = 2*b0 + b1 with Gray axis map 00->-3, 01->-1, 11->+1, 10->+3
_PAM4_LUT = np.array([-3.0, -1.0, +3.0, +1.0])


def map_symbols(bits: np.ndarray, fmt: str) -> np.ndarray:
    """Gray-map a bit stream to unit-average-energy constellation symbols.

    QPSK pairs (b0, b1): 00 -> (1+i)/sqrt2, 01 -> (-1+i)/sqrt2,
    11 -> (-1-i)/sqrt2, 10 -> (1-i)/sqrt2. 16-QAM quads (b0..b3): (b0, b1)
    select the I level and (b2, b3) the Q level through the per-axis Gray map
    {00: -3, 01: -1, 11: +1, 10: +3} / sqrt(10).
    """
    fmt = fmt.lower()
    bits = np.asarray(bits, dtype=np.uint8)
    if fmt == "qpsk":
        if bits.size % 2:
            raise BitCountMismatch("QPSK needs an even number of bits")
        b = bits.reshape(-1, 2)
        re = 1.0 - 2.0 * b[:, 1]
        im = 1.0 - 2.0 * b[:, 0]
        return (re + 1j * im) / np.sqrt(2)
    if fmt == "qam16":
        if bits.size % 4:
            raise BitCountMismatch("16-QAM needs a multiple of 4 bits")
        b = bits.reshape(-1, 4)
        i_lvl = _PAM4_LUT[2 * b[:, 0] + b[:, 1]]
        q_lvl = _PAM4_LUT[2 * b[:, 2] + b[:, 3]]
        return (i_lvl + 1j * q_lvl) / np.sqrt(10)
    raise TxError(f"unknown format {fmt!r}")


def hard_decide(symbols: np.ndarray, fmt: str) -> np.ndarray:
    """Nearest constellation point (unit-average-energy grid)."""
    fmt = fmt.lower()
    if fmt == "qpsk":
        return (np.sign(symbols.real) + 1j * np.sign(symbols.imag)) / np.sqrt(2)
    if fmt == "qam16":
        s = symbols * np.sqrt(10)
        i_lvl = np.clip(2 * np.round((s.real + 3) / 2) - 3, -3, 3)
        q_lvl = np.clip(2 * np.round((s.imag + 3) / 2) - 3, -3, 3)
        return (i_lvl + 1j * q_lvl) / np.sqrt(10)
    raise TxError(f"unknown format {fmt!r}")


def demap_symbols(symbols: np.ndarray, fmt: str) -> np.ndarray:
    """Hard-decision inverse of map_symbols."""
    fmt = fmt.lower()
    if fmt == "qpsk":
        b0 = (symbols.imag < 0).astype(np.uint8)
        b1 = (symbols.real < 0).astype(np.uint8)
        return np.column_stack([b0, b1]).reshape(-1)
    if fmt == "qam16":
        s = symbols * np.sqrt(10)

        def axis_bits(v):
            lvl = np.clip(np.round((v + 3) / 2), 0, 3).astype(np.int64)  # 0..3 -> -3,-1,1,3
            first = (lvl >= 2).astype(np.uint8)  # -3,-1 -> 0 ; +1,+3 -> 1
            second = ((lvl == 1) | (lvl == 2)).astype(np.uint8)  # inner levels -> 1
            return first, second

        i0, i1 = axis_bits(s.real)
        q0, q1 = axis_bits(s.imag)
        return np.column_stack([i0, i1, q0, q1]).reshape(-1)
    raise TxError(f"unknown format {fmt!r}")


def rrc_spectrum(n: int, sample_rate: float, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Root-raised-cosine spectral mask on the FFT frequency grid, H(0) = 1."""
    f = np.abs(sfft.fftfreq(n, 1.0 / sample_rate))
    f1 = 0.5 * (1.0 - rolloff) * symbol_rate
    f2 = 0.5 * (1.0 + rolloff) * symbol_rate
    rc = np.zeros(n)  # raised-cosine power response
    rc[f <= f1] = 1.0
    mid = (f > f1) & (f < f2)
    rc[mid] = 0.5 * (1.0 + np.cos(np.pi / (rolloff * symbol_rate) * (f[mid] - f1)))
    return np.sqrt(rc)


def shape_symbols(symbols: np.ndarray, sps: int, sample_rate: float, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Upsample by sps and apply circular RRC pulse shaping (exact in frequency)."""
    n_sym = len(symbols)
    n = n_sym * sps
    spec = np.tile(sfft.fft(symbols), sps)  # zero-insertion upsampling spectrum
    spec *= rrc_spectrum(n, sample_rate, symbol_rate, rolloff)
    return sfft.ifft(spec, workers=FFT_WORKERS)


def synth_data(bits: np.ndarray | None, cfg: TxConfig, seed: int = 0, n_symbols: int | None = None,
               grid_offset: float = DATA_OFFSET_HZ) -> tuple[OpticalField, np.ndarray]:
    """Synthesize the dual-polarization data field.

    `bits` holds both polarizations back to back (first half pol X); if None,
    2 * bits_per_symbol * n_symbols random bits are drawn from `seed`. Returns
    the field and the bits actually used. Average power is scaled to the
    configured launch power exactly.
    """
    bps = cfg.bits_per_symbol
    if bits is None:
        if n_symbols is None:
            raise TxError("need bits or n_symbols")
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7D617461]))
        bits = rng.integers(0, 2, size=2 * bps * n_symbols, dtype=np.uint8)
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % (2 * bps):
        raise BitCountMismatch(f"bit count must divide 2*{bps}")
    half = bits.size // 2
    sym_x = map_symbols(bits[:half], cfg.format)
    sym_y = map_symbols(bits[half:], cfg.format)
    x = shape_symbols(sym_x, cfg.sps, cfg.sample_rate, cfg.symbol_rate, cfg.rolloff)
    y = shape_symbols(sym_y, cfg.sps, cfg.sample_rate, cfg.symbol_rate, cfg.rolloff)
    p = np.mean(np.abs(x) ** 2 + np.abs(y) ** 2)
    scale = np.sqrt(dbm_to_watt(cfg.launch_power_dbm) / p)
    return OpticalField(x * scale, y * scale, cfg.sample_rate, grid_offset), bits


def synth_probe(cfg: ProbeConfig, sample_rate: float, grid_offset: float = PROBE_OFFSET_HZ,
                include_silence: bool = True, start_time: float = 0.0) -> OpticalField:
    """Synthesize the single-polarization BPSK probe field.

    Chips are sample-and-hold rectangles by default (chip boundaries follow
    floor(t * chip_rate), so any sample rate works); plateau power equals the
    configured peak power. The sequence starts at `start_time` and the field
    is silent until `repetition_period` when include_silence is set.
    """
    if cfg.sequence is None:
        raise TxError("probe config has no sequence")
    seq_dur = cfg.sequence_duration
    if include_silence and cfg.repetition_period < start_time + seq_dur:
        raise RepetitionTooShort(
            f"repetition {cfg.repetition_period:.3e}s < sequence end {start_time + seq_dur:.3e}s"
        )
    total_dur = cfg.repetition_period if include_silence else start_time + seq_dur
    n = int(round(total_dur * sample_rate))
    t = np.arange(n) / sample_rate
    chip_idx = np.floor((t - start_time) * cfg.chip_rate).astype(np.int64)
    valid = (chip_idx >= 0) & (chip_idx < len(cfg.sequence))
    amp = np.zeros(n)
    amp[valid] = cfg.sequence.chips[chip_idx[valid]]
    if cfg.chip_shape == "rrc":
        spec = sfft.fft(amp)
        spec *= rrc_spectrum(n, sample_rate, cfg.chip_rate, 0.5)
        amp = sfft.ifft(spec).real
    elif cfg.chip_shape != "rectangular":
        raise TxError(f"unknown chip shape {cfg.chip_shape!r}")
    x = amp.astype(np.complex128) * np.sqrt(dbm_to_watt(cfg.peak_power_dbm))
    return OpticalField(x, np.zeros_like(x), sample_rate, grid_offset)


def occupied_bandwidth(f: OpticalField, fraction: float = 0.98) -> float:
    """Two-sided bandwidth holding `fraction` of the power, grown from center."""
    spec = np.abs(sfft.fft(f.pol_x)) ** 2 + np.abs(sfft.fft(f.pol_y)) ** 2
    freqs = sfft.fftfreq(len(f), 1.0 / f.sample_rate)
    order = np.argsort(np.abs(freqs), kind="stable")
    cum = np.cumsum(spec[order])
    k = int(np.searchsorted(cum, fraction * cum[-1]))
    return 2.0 * float(np.abs(freqs[order[min(k, len(order) - 1)]]))


def resample_field(f: OpticalField, new_rate: float) -> OpticalField:
    if new_rate == f.sample_rate:
        return f
    m = f.duration * new_rate
    if abs(m - round(m)) > 1e-6:
        raise TxError(f"duration {f.duration} not representable at {new_rate} Hz")
    m = int(round(m))
    x = scipy.signal.resample(f.pol_x, m)
    y = scipy.signal.resample(f.pol_y, m)
    return OpticalField(x, y, new_rate, f.grid_offset, f.t0)


def mux(fields: list[OpticalField], common_rate: float) -> OpticalField:
    """Combine channels on one grid: resample, shift to grid offsets, sum."""
    if not fields:
        raise TxError("nothing to mux")
    for f in fields:
        bw = occupied_bandwidth(f)
        need = 2.0 * (abs(f.grid_offset) + 0.5 * bw)
        if need > common_rate:
            raise AliasingRisk(
                f"channel at {f.grid_offset / 1e9:+.1f} GHz with ~{bw / 1e9:.1f} GHz "
                f"bandwidth needs >= {need / 1e9:.1f} GHz grid, have {common_rate / 1e9:.1f}"
            )
    res = [resample_field(f, common_rate) for f in fields]
    n = len(res[0])
    if any(len(f) != n for f in res):
        raise TxError("fields must share a common duration")
    t = np.arange(n) / common_rate
    x = np.zeros(n, dtype=np.complex128)
    y = np.zeros(n, dtype=np.complex128)
    for f in res:
        ph = np.exp(2j * np.pi * f.grid_offset * t)
        x += f.pol_x * ph
        y += f.pol_y * ph
    return OpticalField(x, y, common_rate, 0.0, res[0].t0)


_HEADER = struct.Struct("<ddQ")


def write_field(f: OpticalField, path: str) -> None:
    """Binary dump: little-endian (sample_rate f64, grid_offset f64, n u64) then
    interleaved (x_re, x_im, y_re, y_im) float32 per sample."""
    n = len(f)
    inter = np.empty((n, 4), dtype="<f4")
    inter[:, 0] = f.pol_x.real
    inter[:, 1] = f.pol_x.imag
    inter[:, 2] = f.pol_y.real
    inter[:, 3] = f.pol_y.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(f.sample_rate, f.grid_offset, n))
        inter.tofile(fh)


def read_field(path: str) -> OpticalField:
    with open(path, "rb") as fh:
        rate, offset, n = _HEADER.unpack(fh.read(_HEADER.size))
        inter = np.fromfile(fh, dtype="<f4", count=4 * n).reshape(n, 4)
    x = inter[:, 0].astype(np.float64) + 1j * inter[:, 1].astype(np.float64)
    y = inter[:, 2].astype(np.float64) + 1j * inter[:, 3].astype(np.float64)
    return OpticalField(x, y, rate, offset)
