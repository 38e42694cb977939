"""Coherent receiver DSP and error statistics.

Receiver chain: downconvert, matched RRC filter, optional exact chromatic
dispersion compensation, symbol-rate decimation at the max-energy timing
phase, blind-phase-search carrier recovery, pilot-based quadrant/gain
resolution, hard demapping. Statistics: BER, error bursts, and FEC-block
accounting against a pre-FEC block error-rate threshold (a stand-in for a
real decoder).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft
from scipy.special import erfc

from . import codes
from .channel import FiberSpec, NoiseSpec, bandpass, load_ase, propagate_coupled
from .txgen import (
    DATA_OFFSET_HZ,
    PROBE_OFFSET_HZ,
    OpticalField,
    ProbeConfig,
    TxConfig,
    map_symbols,
    demap_symbols,
    hard_decide,
    resample_field,
    rrc_spectrum,
    synth_data,
    synth_probe,
)
from .util import FFT_WORKERS, REF_BANDWIDTH, spawn_rng

CONDITIONS = ("probe_off", "probe_rect", "probe_shaped")


class RxError(ValueError):
    pass


class TimingMetricFlat(RxError):
    pass


class AlignmentFailed(RxError):
    pass


class NotBracketed(RxError):
    pass


@dataclass
class CprConfig:
    algorithm: str = "bps"
    window: int = 64
    test_phases: int = 32

    def __post_init__(self):
        if self.window < 1:
            raise RxError("cpr window must be >= 1")
        if self.test_phases < 4:
            raise RxError("need at least 4 test phases")


@dataclass
class RxConfig:
    """Receiver DSP knobs.

    Quadrant ambiguity is resolved against the 64-symbol known pilot header;
    with pilot_interval > 0 the reference additionally re-anchors the quadrant
    on the first pilot_anchor_len symbols of every pilot_interval-symbol
    segment (grid offset pilot_phase), which localizes a carrier-recovery
    cycle slip to less than one segment instead of letting it run to the end
    of the frame. pilot_interval=0 restores header-only operation.
    """

    cd_compensation: bool = True
    cpr: CprConfig = dc_field(default_factory=CprConfig)
    fec_block_bits: int = 10_000
    fec_ber_threshold: float = 2.0e-2
    pilot_symbols: int = 64
    pilot_interval: int = 128
    pilot_phase: int = 120
    pilot_anchor_len: int = 16
    burst_gap: int = 16
    obf_bandwidth: float = 50e9

    def __post_init__(self):
        if not 0.0 < self.fec_ber_threshold < 0.5:
            raise RxError("fec_ber_threshold must be in (0, 0.5)")
        if self.pilot_interval:
            if not 0 <= self.pilot_phase < self.pilot_interval:
                raise RxError("pilot_phase must lie in [0, pilot_interval)")
            if self.pilot_anchor_len > self.pilot_interval:
                raise RxError("pilot_anchor_len must fit in one segment")


@dataclass
class BerPoint:
    osnr_db: float
    bits: int
    errors: int
    burst_count: int
    max_burst_len: int
    uncorrected_blocks: int
    condition: str
    edge_error_fraction: float | None = None

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else math.nan


@dataclass
class BerCurve:
    condition: str
    points: list[BerPoint]

    CSV_HEADER = "condition,osnr_db,bits,errors,ber,burst_count,max_burst_len,uncorrected_blocks"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for p in sorted(self.points, key=lambda q: q.osnr_db):
            osnr = "inf" if math.isinf(p.osnr_db) else f"{p.osnr_db:.6g}"
            lines.append(
                f"{p.condition},{osnr},{p.bits},{p.errors},{p.ber:.6e},"
                f"{p.burst_count},{p.max_burst_len},{p.uncorrected_blocks}"
            )
        return "\n".join(lines) + "\n"


def q_function(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def theoretical_ber(fmt: str, esn0_db) -> np.ndarray | float:
    """Analytic Gray-coded BER over AWGN at the given Es/N0 (dB, per pol).

    QPSK: Q(sqrt(Es/N0)). 16-QAM (per-axis Gray 4-PAM): exact expression
    (3/8) erfc(u) + (1/4) erfc(3u) - (1/8) erfc(5u) with u = sqrt(Es/N0 / 10);
    the first term is the usual leading-order approximation.
    """
    esn0 = 10.0 ** (np.asarray(esn0_db, dtype=float) / 10.0)
    fmt = fmt.lower()
    if fmt == "qpsk":
        out = q_function(np.sqrt(esn0))
    elif fmt == "qam16":
        u = np.sqrt(esn0 / 10.0)
        out = 0.375 * erfc(u) + 0.25 * erfc(3 * u) - 0.125 * erfc(5 * u)
    else:
        raise RxError(f"unknown format {fmt!r}")
    return float(out) if np.isscalar(esn0_db) else out


def osnr_to_esn0(osnr_db: float, symbol_rate: float, ref_bandwidth: float = REF_BANDWIDTH) -> float:
    """Per-polarization Es/N0 implied by an OSNR (both-pol, 0.1 nm) figure."""
    return osnr_db + 10.0 * math.log10(ref_bandwidth / symbol_rate)


def esn0_to_osnr(esn0_db: float, symbol_rate: float, ref_bandwidth: float = REF_BANDWIDTH) -> float:
    return esn0_db - 10.0 * math.log10(ref_bandwidth / symbol_rate)


def rx_frontend(
    field: OpticalField,
    grid_offset: float,
    tx: TxConfig,
    rx: RxConfig,
    fiber: FiberSpec | None = None,
) -> np.ndarray:
    """Downconvert, matched-filter, optionally CD-compensate, and decimate.

    Returns symbol-rate samples, shape (2, n_symbols). Timing is chosen by an
    energy search over the sps decimation offsets.
    """
    sps_f = field.sample_rate / tx.symbol_rate
    if abs(sps_f - round(sps_f)) > 1e-9:
        field = resample_field(field, tx.sample_rate)
    sps = int(round(field.sample_rate / tx.symbol_rate))
    x = np.asarray(field.pol_x, dtype=np.complex128)
    y = np.asarray(field.pol_y, dtype=np.complex128)
    df = grid_offset - field.grid_offset
    if df:
        t = np.arange(len(x)) / field.sample_rate
        rot = np.exp(-2j * np.pi * df * t)
        x = x * rot
        y = y * rot

    h = rrc_spectrum(len(x), field.sample_rate, tx.symbol_rate, tx.rolloff)
    if rx.cd_compensation and fiber is not None and fiber.length > 0:
        omega = 2.0 * np.pi * sfft.fftfreq(len(x), 1.0 / field.sample_rate)
        h = h * np.exp(+0.5j * fiber.beta2 * omega**2 * fiber.length)
    x = sfft.ifft(sfft.fft(x, workers=FFT_WORKERS) * h, workers=FFT_WORKERS)
    y = sfft.ifft(sfft.fft(y, workers=FFT_WORKERS) * h, workers=FFT_WORKERS)

    if fiber is not None and fiber.jones_angle:
        c, s = math.cos(-fiber.jones_angle), math.sin(-fiber.jones_angle)
        x, y = c * x - s * y, s * x + c * y

    metrics = [float(np.mean(np.abs(x[o::sps]) ** 2 + np.abs(y[o::sps]) ** 2)) for o in range(sps)]
    lo, hi = min(metrics), max(metrics)
    if hi <= 0 or (hi - lo) / hi < 1e-6:
        raise TimingMetricFlat("no distinguishable symbol timing phase")
    o = int(np.argmax(metrics))
    return np.stack([x[o::sps], y[o::sps]])


def _decision_distance_sq(r: np.ndarray, fmt: str) -> np.ndarray:
    if fmt == "qpsk":
        c = 1.0 / math.sqrt(2.0)
        dr = np.abs(r.real) - c
        di = np.abs(r.imag) - c
        return dr * dr + di * di
    # 16-QAM: fold each axis and measure against the nearer of |1|, |3| levels
    s10 = math.sqrt(10.0)
    ar = np.abs(r.real) * s10
    ai = np.abs(r.imag) * s10
    dr = (ar - np.where(ar < 2.0, 1.0, 3.0)) / s10
    di = (ai - np.where(ai < 2.0, 1.0, 3.0)) / s10
    return dr * dr + di * di


def carrier_phase_recover(
    symbols: np.ndarray, fmt: str, cpr: CprConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Blind phase search over [0, pi/2) with sliding-window decision metric.

    Returns (derotated symbols, unwrapped phase track). The output retains a
    quadrant ambiguity (and the grid quantization residual); both are resolved
    downstream against the pilot header.
    """
    fmt = fmt.lower()
    n = len(symbols)
    b = cpr.test_phases
    w = cpr.window
    # normalize to unit average power for the decision grid
    p = float(np.mean(np.abs(symbols) ** 2))
    norm = symbols / math.sqrt(p) if p > 0 else symbols
    phases = np.arange(b) * (0.5 * math.pi / b)
    half = w // 2
    idx_lo = np.clip(np.arange(n) - half, 0, n)
    idx_hi = np.clip(np.arange(n) + half + 1, 0, n)
    best = np.full(n, np.inf)
    best_idx = np.zeros(n, dtype=np.int32)
    for i, ph in enumerate(phases):
        e = _decision_distance_sq(norm * np.exp(-1j * ph), fmt)
        c = np.concatenate([[0.0], np.cumsum(e)])
        s = c[idx_hi] - c[idx_lo]
        upd = s < best
        best[upd] = s[upd]
        best_idx[upd] = i
    raw = phases[best_idx]
    d = np.diff(raw)
    d = np.mod(d + math.pi / 4.0, math.pi / 2.0) - math.pi / 4.0
    track = np.empty(n)
    track[0] = raw[0]
    np.cumsum(d, out=track[1:])
    track[1:] += raw[0]
    return symbols * np.exp(-1j * track), track


def pilot_resolve(
    rx_syms: np.ndarray, ref_syms: np.ndarray, n_pilot: int
) -> tuple[np.ndarray, complex]:
    """Fix the absolute rotation (quadrant plus BPS grid residual) and scale
    by a least-squares complex gain over the pilot header."""
    pr = rx_syms[:n_pilot]
    pt = ref_syms[:n_pilot]
    e_rx = np.vdot(pr, pr).real
    e_ref = np.vdot(pt, pt).real
    if e_rx == 0 or e_ref == 0:
        raise AlignmentFailed("pilot header has no energy")
    xc = np.vdot(pr, pt)  # sum conj(pr) * pt
    coherence = abs(xc) ** 2 / (e_rx * e_ref)
    # an aligned header is strongly coherent at any workable SNR; a wrong
    # reference or symbol shift decorrelates it to ~1/n_pilot
    if coherence < 0.1:
        raise AlignmentFailed(f"pilot coherence {coherence:.3f}; header misaligned?")
    g = xc / e_rx
    return g * rx_syms, g


_QUAD_ROTS = np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j])


def _anchor_rotation(anchor: np.ndarray, ref: np.ndarray) -> complex:
    errs = np.abs(_QUAD_ROTS[:, None] * anchor[None, :] - ref[None, :]) ** 2
    return _QUAD_ROTS[int(np.argmin(errs.sum(axis=1)))]


def _segment_requadrant(aligned: np.ndarray, ref_syms: np.ndarray, rx: RxConfig) -> np.ndarray:
    """Re-resolve the pi/2 ambiguity per pilot segment (see RxConfig)."""
    n = len(aligned)
    k = rx.pilot_interval
    if not k or n <= rx.pilot_phase:
        return aligned
    out = aligned.copy()
    p = rx.pilot_phase
    a_len = rx.pilot_anchor_len
    if p:
        out[:p] = _anchor_rotation(aligned[:p][:a_len], ref_syms[:p][:a_len]) * aligned[:p]
    n_mid = (n - p) // k
    if n_mid:
        mid = aligned[p : p + n_mid * k].reshape(n_mid, k)
        refm = ref_syms[p : p + n_mid * k].reshape(n_mid, k)
        diffs = _QUAD_ROTS[:, None, None] * mid[None, :, :a_len] - refm[None, :, :a_len]
        pick = np.argmin(np.sum(np.abs(diffs) ** 2, axis=2), axis=0)
        out[p : p + n_mid * k] = (mid * _QUAD_ROTS[pick][:, None]).reshape(-1)
    tail = p + n_mid * k
    if tail < n:
        out[tail:] = _anchor_rotation(aligned[tail : tail + a_len], ref_syms[tail : tail + a_len]) * aligned[tail:]
    return out


def _merge_bursts(err_idx: np.ndarray, gap: int) -> tuple[int, int]:
    """Count error bursts (runs of errored symbols with gaps < `gap`) and the
    longest burst span in symbols."""
    if err_idx.size == 0:
        return 0, 0
    splits = np.where(np.diff(err_idx) >= gap)[0]
    starts = np.concatenate([[0], splits + 1])
    ends = np.concatenate([splits, [err_idx.size - 1]])
    spans = err_idx[ends] - err_idx[starts] + 1
    return len(starts), int(spans.max())


def demap_count(
    symbols: np.ndarray,
    ref_bits: np.ndarray,
    fmt: str,
    rx: RxConfig,
    osnr_db: float = math.nan,
    condition: str = "",
    collect_positions: bool = False,
):
    """Hard-decide, demap, and count errors against the reference bit stream.

    `symbols` is (2, n) after carrier recovery; `ref_bits` holds both
    polarizations back to back. The pilot header (first pilot_symbols per pol)
    anchors quadrant/gain and is excluded from the statistics. FEC blocks are
    whole blocks of fec_block_bits within each polarization's payload.
    """
    fmt = fmt.lower()
    symbols = np.atleast_2d(symbols)
    n_pol = symbols.shape[0]
    bps = 2 if fmt == "qpsk" else 4
    n_sym = symbols.shape[1]
    half = ref_bits.size // n_pol
    if half != n_sym * bps:
        raise AlignmentFailed(
            f"reference holds {half} bits/pol for {n_sym} symbols of {bps} bits"
        )
    n_pilot = min(rx.pilot_symbols, n_sym)
    errors = 0
    bits_counted = 0
    bursts = 0
    max_burst = 0
    uncorrected = 0
    positions = []
    for pol in range(n_pol):
        ref = np.asarray(ref_bits[pol * half : (pol + 1) * half], dtype=np.uint8)
        ref_syms = map_symbols(ref, fmt)
        aligned, _ = pilot_resolve(symbols[pol], ref_syms, n_pilot)
        aligned = _segment_requadrant(aligned, ref_syms, rx)
        rx_bits = demap_symbols(hard_decide(aligned, fmt), fmt)
        err = (rx_bits != ref).astype(np.uint8)
        per_sym = err.reshape(-1, bps).sum(axis=1)
        per_sym[:n_pilot] = 0  # pilot excluded
        payload_err = per_sym[n_pilot:]
        errors += int(payload_err.sum())
        bits_counted += payload_err.size * bps
        err_idx = np.nonzero(payload_err)[0]
        nb, mb = _merge_bursts(err_idx, rx.burst_gap)
        bursts += nb
        max_burst = max(max_burst, mb)
        block_bits = rx.fec_block_bits
        payload_bits = err[n_pilot * bps :]
        n_blocks = payload_bits.size // block_bits
        if n_blocks:
            blk = payload_bits[: n_blocks * block_bits].reshape(n_blocks, block_bits)
            uncorrected += int(np.count_nonzero(blk.sum(axis=1) > rx.fec_ber_threshold * block_bits))
        if collect_positions:
            positions.append((err_idx + n_pilot, payload_err[err_idx]))
    point = BerPoint(
        osnr_db=osnr_db,
        bits=bits_counted,
        errors=errors,
        burst_count=bursts,
        max_burst_len=max_burst,
        uncorrected_blocks=uncorrected,
        condition=condition,
    )
    if collect_positions:
        return point, positions
    return point


# ---------------------------------------------------------------------------
# Scenario sweep engine


def build_sequence(probe_scn, condition: str) -> codes.ShapedSequence | None:
    if condition == "probe_off":
        return None
    core = codes.balance(codes.gen_prbs(probe_scn.code_order))
    if condition == "probe_rect":
        return codes.shape(core, "rectangular", 0)
    if condition == "probe_shaped":
        return codes.shape(core, "trapezoidal", probe_scn.ramp_len, probe_scn.ramp_fill)
    raise RxError(f"unknown condition {condition!r}")


@dataclass
class WindowResult:
    field: OpticalField
    bits: np.ndarray
    n_symbols: int
    edge_times: tuple[float, ...]


class SweepEngine:
    """Synthesizes and propagates observation windows, cached per condition.

    One window spans the shaped sequence plus the configured lead-in/out
    margins; all conditions share the window geometry, data bits, and noise
    seeds so their statistics differ only through the probe.
    """

    def __init__(self, scenario):
        self.scn = scenario
        self._cache: dict[tuple, WindowResult] = {}
        self._lock = threading.Lock()

    # window geometry -------------------------------------------------------
    @property
    def window_chips(self) -> int:
        p = self.scn.probe
        core_chips = 2**p.code_order  # balanced length
        return core_chips + 2 * p.ramp_len + 2 * self.scn.sim.window_margin_chips

    @property
    def window_duration(self) -> float:
        return self.window_chips / self.scn.probe.chip_rate

    @property
    def window_symbols(self) -> int:
        return int(round(self.window_duration * self.scn.tx.symbol_rate))

    @property
    def window_bits(self) -> int:
        return 2 * self.scn.tx.bits_per_symbol * (self.window_symbols - self.scn.rx.pilot_symbols)

    def _probe_start(self, seq: codes.ShapedSequence) -> float:
        # center the active sequence in the window
        pad_chips = (self.window_chips - len(seq)) // 2
        return pad_chips / self.scn.probe.chip_rate

    def edge_times(self, condition: str) -> tuple[float, ...]:
        """Times (s, in the window frame) where the probe power envelope has a
        step or a ramp corner."""
        seq = build_sequence(self.scn.probe, condition)
        if seq is None:
            return ()
        t0 = self._probe_start(seq)
        tc = 1.0 / self.scn.probe.chip_rate
        if seq.profile == "rectangular":
            return (t0, t0 + len(seq) * tc)
        r = seq.ramp_len * tc
        dur = len(seq) * tc
        return (t0, t0 + r, t0 + dur - r, t0 + dur)

    # window synthesis ------------------------------------------------------
    def window(self, condition: str, index: int) -> WindowResult:
        key = (condition, index)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        result = self._build_window(condition, index)
        with self._lock:
            self._cache[key] = result
            # keep the cache bounded; windows rebuild deterministically
            while len(self._cache) > self.scn.sim.cache_windows:
                self._cache.pop(next(iter(self._cache)))
        return result

    def _build_window(self, condition: str, index: int) -> WindowResult:
        scn = self.scn
        n_sym = self.window_symbols
        data, bits = synth_data(
            None,
            scn.tx,
            seed=spawn_rng(scn.sim.seed, "bits", scn.tx.format, index).integers(2**63),
            n_symbols=n_sym,
            grid_offset=DATA_OFFSET_HZ,
        )
        probe_field = None
        seq = build_sequence(scn.probe, condition)
        if seq is not None:
            pcfg = ProbeConfig(
                chip_rate=scn.probe.chip_rate,
                peak_power_dbm=scn.probe.peak_power_dbm,
                repetition_period=scn.probe.repetition_period,
                sequence=seq,
                chip_shape=scn.probe.chip_shape,
            )
            probe_field = synth_probe(
                pcfg,
                sample_rate=scn.tx.sample_rate,
                grid_offset=PROBE_OFFSET_HZ,
                include_silence=False,
                start_time=self._probe_start(seq),
            )
            pad = len(data) - len(probe_field)
            if pad < 0:
                raise RxError("probe sequence does not fit the window")
            probe_field = OpticalField(
                np.pad(probe_field.pol_x, (0, pad)),
                np.pad(probe_field.pol_y, (0, pad)),
                probe_field.sample_rate,
                probe_field.grid_offset,
            )
        if scn.fiber.length > 0:
            data, _ = propagate_coupled(
                data,
                probe_field,
                scn.fiber,
                step=scn.sim.step,
                max_step=scn.sim.step,
                refine=True,
                precision=scn.sim.precision,
            )
        return WindowResult(
            field=data, bits=bits, n_symbols=n_sym, edge_times=self.edge_times(condition)
        )

    # receive path ----------------------------------------------------------
    def receive(self, win: WindowResult, osnr_db: float, condition: str, index: int,
                collect_positions: bool = False):
        scn = self.scn
        noisy = load_ase(
            win.field,
            NoiseSpec(osnr_db),
            seed=spawn_rng(scn.sim.seed, "ase", scn.tx.format, index, osnr_db).integers(2**63),
        )
        if scn.rx.obf_bandwidth and scn.rx.obf_bandwidth < noisy.sample_rate:
            noisy = bandpass(noisy, DATA_OFFSET_HZ, scn.rx.obf_bandwidth)
        syms = rx_frontend(noisy, DATA_OFFSET_HZ, scn.tx, scn.rx, scn.fiber)
        tracks = []
        out = np.empty_like(syms)
        for pol in range(2):
            out[pol], tr = carrier_phase_recover(syms[pol], scn.tx.format, scn.rx.cpr)
            tracks.append(tr)
        res = demap_count(
            out,
            win.bits,
            scn.tx.format,
            scn.rx,
            osnr_db=osnr_db,
            condition=condition,
            collect_positions=collect_positions,
        )
        if collect_positions:
            point, positions = res
            return point, positions, tracks
        return res

    def edge_locality_window_symbols(self) -> int:
        scn = self.scn
        smear_s = abs(scn.fiber.walkoff_s_per_m(PROBE_OFFSET_HZ, DATA_OFFSET_HZ)) * scn.fiber.length
        return int(math.ceil(2 * scn.rx.cpr.window + smear_s * scn.tx.symbol_rate))

    def edge_fraction(self, positions, edge_times: tuple[float, ...]) -> float | None:
        """Fraction of errored bits lying within the locality window of an edge."""
        if not edge_times:
            return None
        w = self.edge_locality_window_symbols()
        edges = np.array([round(t * self.scn.tx.symbol_rate) for t in edge_times])
        near = 0
        total = 0
        for idx, weights in positions:
            total += int(weights.sum())
            if idx.size:
                dmin = np.min(np.abs(idx[:, None] - edges[None, :]), axis=1)
                near += int(weights[dmin <= w].sum())
        return near / total if total else None


def run_ber_sweep(scenario, osnr_list, condition: str, seeds=None, engine: SweepEngine | None = None,
                  collect_positions: bool = False) -> BerCurve:
    """Measure BER vs OSNR for one probe condition.

    Each OSNR point accumulates windows until the configured minimum error
    count or the bit budget is reached. Windows, data bits, and ASE seeds are
    shared across conditions so curves are directly comparable.
    """
    if condition not in CONDITIONS:
        raise RxError(f"condition must be one of {CONDITIONS}")
    eng = engine or SweepEngine(scenario)
    sim = scenario.sim
    points = []
    for osnr in osnr_list:
        bits = errors = bursts = blocks = 0
        max_burst = 0
        near = tot = 0
        w_idx = 0
        while True:
            windex = seeds[w_idx] if seeds is not None else w_idx
            win = eng.window(condition, windex)
            if collect_positions:
                p, positions, _ = eng.receive(win, osnr, condition, windex, True)
                frac = eng.edge_fraction(positions, win.edge_times)
                if frac is not None:
                    tot += p.errors
                    near += round(frac * p.errors)
            else:
                p = eng.receive(win, osnr, condition, windex)
            bits += p.bits
            errors += p.errors
            bursts += p.burst_count
            blocks += p.uncorrected_blocks
            max_burst = max(max_burst, p.max_burst_len)
            w_idx += 1
            if seeds is not None and w_idx >= len(seeds):
                break
            if bits >= sim.bit_budget or errors >= sim.min_errors:
                break
        points.append(
            BerPoint(
                osnr_db=osnr,
                bits=bits,
                errors=errors,
                burst_count=bursts,
                max_burst_len=max_burst,
                uncorrected_blocks=blocks,
                condition=condition,
                edge_error_fraction=(near / tot if tot else None),
            )
        )
    return BerCurve(condition=condition, points=points)


def _passes_block_budget(eng: SweepEngine, condition: str, osnr_db: float) -> bool:
    """True when a full bit budget shows zero uncorrected blocks; bails out on
    the first failed block."""
    sim = eng.scn.sim
    bits = 0
    w_idx = 0
    while bits < sim.bit_budget:
        win = eng.window(condition, w_idx)
        p = eng.receive(win, osnr_db, condition, w_idx)
        if p.uncorrected_blocks > 0:
            return False
        bits += p.bits
        w_idx += 1
    return True


def required_osnr(scenario, condition: str, engine: SweepEngine | None = None,
                  lo_db: float | None = None, hi_db: float | None = None) -> float:
    """Smallest OSNR (on the configured grid) with zero uncorrected blocks over
    the bit budget; math.inf marks the `uncorrectable` sentinel."""
    eng = engine or SweepEngine(scenario)
    sim = scenario.sim
    res = sim.osnr_resolution_db
    hi = hi_db if hi_db is not None else sim.max_osnr_db
    lo = lo_db if lo_db is not None else sim.min_osnr_db
    if not _passes_block_budget(eng, condition, hi):
        return math.inf
    if _passes_block_budget(eng, condition, lo):
        raise NotBracketed(f"already error-free at {lo} dB; lower the bracket")
    lo_k, hi_k = 0, int(round((hi - lo) / res))
    while hi_k - lo_k > 1:
        mid = (lo_k + hi_k) // 2
        if _passes_block_budget(eng, condition, lo + mid * res):
            hi_k = mid
        else:
            lo_k = mid
    return round(lo + hi_k * res, 9)


def required_osnr_from_curve(curve: BerCurve) -> float:
    """Table variant of required_osnr on an already-swept curve."""
    pts = sorted(curve.points, key=lambda p: p.osnr_db)
    passing = [p.osnr_db for p in pts if p.uncorrected_blocks == 0]
    if not passing:
        return math.inf
    failing = [p.osnr_db for p in pts if p.uncorrected_blocks > 0]
    if not failing:
        raise NotBracketed("sweep does not cover the block-error threshold crossing")
    above = [o for o in passing if o > max(failing)]
    if not above:
        raise NotBracketed("no error-free point above the last failing point")
    return min(above)
