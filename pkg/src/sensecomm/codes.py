"""Probe code construction: maximal-length PRBS, balancing, power-envelope shaping.

The probe is a bipolar chip sequence. A maximal-length LFSR sequence is
balanced by appending one -1 chip, then embedded in a power envelope that is
either rectangular (abrupt on/off) or trapezoidal (linear power ramps on both
sides). Circular correlation utilities double as the sensing matched-filter
oracle and as code-quality checks.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .util import atomic_write_bytes


class CodeError(ValueError):
    pass


class ZeroSeed(CodeError):
    """All-zero LFSR state is absorbing and generates nothing."""


class NonPrimitiveTaps(CodeError):
    """Feedback taps do not yield a maximal-length sequence."""


class AlreadyBalanced(CodeError):
    pass


class UnexpectedImbalance(CodeError):
    pass


class LengthMismatch(CodeError):
    pass


class DegenerateProfile(CodeError):
    pass


# Maximal-length feedback taps (tap positions are polynomial degrees, the
# feedback is the XOR of the tapped register bits). One known-good entry per
# order; gen_prbs also verifies the period at run time, so a wrong entry
# cannot slip through silently.
PRIMITIVE_TAPS: dict[int, frozenset[int]] = {
    2: frozenset({2, 1}),
    3: frozenset({3, 2}),
    4: frozenset({4, 3}),
    5: frozenset({5, 3}),
    6: frozenset({6, 5}),
    7: frozenset({7, 6}),
    8: frozenset({8, 6, 5, 4}),
    9: frozenset({9, 5}),
    10: frozenset({10, 7}),
    11: frozenset({11, 9}),
    12: frozenset({12, 11, 10, 4}),
    13: frozenset({13, 12, 11, 8}),
    14: frozenset({14, 13, 12, 2}),
    15: frozenset({15, 14}),
    16: frozenset({16, 14, 13, 11}),
}

RampFill = str  # 'cyclic' | 'ones' | 'alternating'


@dataclass(frozen=True)
class CodeSequence:
    """Bipolar (+1/-1) code with its LFSR provenance."""

    symbols: np.ndarray
    order: int
    taps: frozenset[int]
    seed: int
    balanced: bool = False

    def __post_init__(self):
        object.__setattr__(self, "symbols", np.asarray(self.symbols, dtype=np.int8))
        if not np.all(np.abs(self.symbols) == 1):
            raise CodeError("code symbols must be exactly +1 or -1")

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass(frozen=True)
class ShapedSequence:
    """Real chip amplitudes: a core code inside a (possibly trapezoidal) envelope.

    Plateau amplitude is normalized to 1; the power envelope |chip|^2 ramps
    linearly over `ramp_len` chips on each side for the trapezoidal profile.
    """

    chips: np.ndarray
    core: CodeSequence
    ramp_len: int
    profile: str
    core_offset: int

    def __post_init__(self):
        object.__setattr__(self, "chips", np.asarray(self.chips, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.chips)

    @property
    def envelope(self) -> np.ndarray:
        """Power envelope |chip|^2."""
        return self.chips**2

    def strip(self) -> np.ndarray:
        """Recover the core symbol signs from the plateau region."""
        lo = self.core_offset
        hi = self.core_offset + len(self.core)
        return np.sign(self.chips[lo:hi]).astype(np.int8)


def gen_prbs(order: int, taps: frozenset[int] | set[int] | None = None, seed: int | None = None) -> CodeSequence:
    """Generate a maximal-length +/-1 sequence from a Fibonacci LFSR.

    Bit 1 maps to +1 and bit 0 to -1, so the 2^order - 1 chips sum to +1.
    The period is checked during generation: any early return to the initial
    state raises NonPrimitiveTaps.
    """
    if order < 2:
        raise CodeError(f"order must be >= 2, got {order}")
    if taps is None:
        if order not in PRIMITIVE_TAPS:
            raise CodeError(f"no built-in taps for order {order}; pass taps explicitly")
        taps = PRIMITIVE_TAPS[order]
    taps = frozenset(int(t) for t in taps)
    if not taps or max(taps) > order or min(taps) < 1 or order not in taps:
        raise NonPrimitiveTaps(f"taps {sorted(taps)} invalid for order {order}")

    mask = (1 << order) - 1
    if seed is None:
        seed = mask
    state = int(seed) & mask
    if state == 0:
        raise ZeroSeed("LFSR seed must be a nonzero bit vector")

    length = mask  # 2^order - 1
    init = state
    bits = np.empty(length, dtype=np.uint8)
    for i in range(length):
        bits[i] = (state >> (order - 1)) & 1
        fb = 0
        for t in taps:
            fb ^= state >> (t - 1)
        state = ((state << 1) & mask) | (fb & 1)
        if state == init and i < length - 1:
            raise NonPrimitiveTaps(
                f"taps {sorted(taps)} repeat after {i + 1} states; need {length}"
            )
    if state != init:
        raise NonPrimitiveTaps(f"taps {sorted(taps)} are not maximal for order {order}")

    symbols = bits.astype(np.int8) * 2 - 1
    return CodeSequence(symbols=symbols, order=order, taps=taps, seed=int(seed))


def balance(code: CodeSequence) -> CodeSequence:
    """Append one -1 chip so the sequence sums to zero."""
    s = int(code.symbols.sum())
    if s == 0:
        raise AlreadyBalanced("sequence already sums to zero")
    if abs(s) != 1:
        raise UnexpectedImbalance(f"expected sum +-1 for an m-sequence, got {s}")
    extra = np.int8(-s)
    symbols = np.append(code.symbols, extra)
    return CodeSequence(
        symbols=symbols, order=code.order, taps=code.taps, seed=code.seed, balanced=True
    )


def _ramp_fill_symbols(core: np.ndarray, total: int, core_offset: int, fill: RampFill) -> np.ndarray:
    n = len(core)
    idx = np.arange(total) - core_offset
    if fill == "cyclic":
        return core[np.mod(idx, n)]
    if fill == "ones":
        out = np.ones(total, dtype=np.int8)
        out[core_offset : core_offset + n] = core
        return out
    if fill == "alternating":
        out = np.where(np.arange(total) % 2 == 0, 1, -1).astype(np.int8)
        out[core_offset : core_offset + n] = core
        return out
    raise CodeError(f"unknown ramp fill policy {fill!r}")


def shape(
    code: CodeSequence,
    profile: str = "trapezoidal",
    ramp_len: int = 2048,
    ramp_fill: RampFill = "cyclic",
    power_linear: bool = True,
) -> ShapedSequence:
    """Embed `code` in a power envelope.

    trapezoidal: |chip|^2 rises linearly 0 -> 1 over `ramp_len` chips, holds at
    1 for the core, and falls back symmetrically. Ramp chip signs come from the
    fill policy (default: cyclic continuation of the core, which keeps the ramp
    spectrum code-like). `power_linear=False` ramps the amplitude instead of
    the power, for comparison runs.

    rectangular: the chips are the core symbols verbatim (ramp_len must be 0).
    """
    if profile == "rectangular":
        if ramp_len != 0:
            raise CodeError("rectangular profile requires ramp_len == 0")
        return ShapedSequence(
            chips=code.symbols.astype(np.float64),
            core=code,
            ramp_len=0,
            profile="rectangular",
            core_offset=0,
        )
    if profile != "trapezoidal":
        raise CodeError(f"unknown profile {profile!r}")
    if ramp_len < 0:
        raise CodeError("ramp_len must be >= 0")

    n = len(code)
    total = n + 2 * ramp_len
    env = np.ones(total, dtype=np.float64)
    if ramp_len > 0:
        # midpoint-sampled linear power ramp: chip energy integrates exactly
        # to ramp_len/2 plateau-chip equivalents per ramp
        up = (np.arange(ramp_len) + 0.5) / ramp_len
        env[:ramp_len] = up
        env[total - ramp_len :] = up[::-1]
    amp = np.sqrt(env) if power_linear else env
    amp[ramp_len : ramp_len + n] = 1.0  # plateau is exact regardless of profile math
    signs = _ramp_fill_symbols(code.symbols, total, ramp_len, ramp_fill)
    return ShapedSequence(
        chips=amp * signs,
        core=code,
        ramp_len=int(ramp_len),
        profile="trapezoidal",
        core_offset=int(ramp_len),
    )


def correlate_circular(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Circular cross-correlation at every lag.

    profile[k] = sum_n a[n] * conj(b[(n - k) mod N]); the zero lag of (x, x)
    is the energy of x. Real inputs give a real profile.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"sequences must be equal-length 1-D, got {a.shape} vs {b.shape}")
    prof = np.fft.ifft(np.fft.fft(a) * np.conj(np.fft.fft(b)))
    if not (np.iscomplexobj(a) or np.iscomplexobj(b)):
        return prof.real
    return prof


class SidelobeReport(NamedTuple):
    ratio_db: float
    peak_lag: int
    sidelobe_lag: int


def peak_to_sidelobe(profile: np.ndarray) -> SidelobeReport:
    """Peak-to-maximum-sidelobe ratio of a correlation profile, in dB."""
    mag = np.abs(np.asarray(profile, dtype=np.complex128))
    if np.allclose(mag, mag[0]):
        raise DegenerateProfile("all correlation values are equal")
    peak_lag = int(np.argmax(mag))
    side = mag.copy()
    side[peak_lag] = -1.0
    sidelobe_lag = int(np.argmax(side))
    if mag[sidelobe_lag] == 0.0:
        return SidelobeReport(float("inf"), peak_lag, sidelobe_lag)
    ratio = 20.0 * np.log10(mag[peak_lag] / mag[sidelobe_lag])
    return SidelobeReport(float(ratio), peak_lag, sidelobe_lag)


def write_chips_csv(seq: ShapedSequence | CodeSequence, path: str) -> None:
    """Export chip amplitudes as a single-column CSV."""
    chips = seq.chips if isinstance(seq, ShapedSequence) else seq.symbols
    buf = io.StringIO()
    buf.write("chip\n")
    for c in chips:
        buf.write(f"{float(c)!r}\n")
    atomic_write_bytes(path, buf.getvalue().encode())
