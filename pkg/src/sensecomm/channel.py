"""Fiber propagation and impairments.

Comm path: the two channels are carried as separate baseband envelopes on a
common time grid (two-envelope model). Each symmetric split step applies, per
channel, a linear half-step (attenuation, group-velocity dispersion, and the
inter-channel walk-off delay on the probe frame), a full nonlinear step
(self- and cross-phase modulation, powers summed over polarizations, XPM
factor 2), and another linear half-step. Energy decays exactly per the
attenuation setting because the nonlinearity is phase-only.

Sensing path: linear Rayleigh backscatter from i.i.d. circular-Gaussian
scatterer cells, with a dynamic strain event adding a common two-way phase to
every cell beyond the event position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.signal

from .txgen import OpticalField
from .util import C_LIGHT, CENTER_FREQUENCY, FFT_WORKERS, REF_BANDWIDTH, spawn_rng

MAX_NL_PHASE_PER_STEP = 0.05  # rad


class ChannelError(ValueError):
    pass


class StepTooLarge(ChannelError):
    pass


class SampleRateMismatch(ChannelError):
    pass


class WindowTooShort(ChannelError):
    pass


@dataclass
class FiberSpec:
    length: float = 50e3  # m
    attenuation_db_km: float = 0.2
    dispersion_ps_nm_km: float = 17.0
    gamma_w_km: float = 1.3  # 1/(W km)
    group_velocity: float = 2.0e8  # m/s
    jones_angle: float = 0.0  # static polarization rotation, rad

    def __post_init__(self):
        if self.length < 0:
            raise ChannelError("fiber length must be >= 0")
        for name in ("attenuation_db_km", "dispersion_ps_nm_km", "gamma_w_km", "group_velocity"):
            if getattr(self, name) < 0:
                raise ChannelError(f"{name} must be >= 0")

    @property
    def alpha_per_m(self) -> float:
        """Linear power attenuation coefficient, 1/m."""
        return self.attenuation_db_km * math.log(10.0) / 10.0 / 1e3

    @property
    def gamma_w_m(self) -> float:
        return self.gamma_w_km / 1e3

    @property
    def beta2(self) -> float:
        """GVD parameter in s^2/m, from D at the grid center frequency.

        Dispersion slope is not modeled, so both channels share this value.
        """
        lam = C_LIGHT / CENTER_FREQUENCY
        d_si = self.dispersion_ps_nm_km * 1e-6  # s/m^2
        return -d_si * lam**2 / (2.0 * math.pi * C_LIGHT)

    def walkoff_s_per_m(self, offset_a: float, offset_b: float) -> float:
        """Group delay per meter of channel a relative to channel b (positive:
        a arrives later). Longer wavelengths are slower for D > 0."""
        lam = C_LIGHT / CENTER_FREQUENCY
        dlam = -(lam**2 / C_LIGHT) * (offset_a - offset_b)  # lower freq -> longer wavelength
        return self.dispersion_ps_nm_km * 1e-6 * dlam


@dataclass
class StrainEvent:
    position: float  # m
    frequency: float = 115.0  # Hz
    phase_pkpk: float = 3.9  # rad, two-way
    waveform: str = "sinusoid"

    def phase_at(self, t: float) -> float:
        return 0.5 * self.phase_pkpk * math.sin(2.0 * math.pi * self.frequency * t)


@dataclass
class ScattererField:
    """One realization of the distributed Rayleigh reflectors."""

    cell_len: float
    reflectivities: np.ndarray  # complex, one per cell
    seed: int

    @property
    def n_cells(self) -> int:
        return len(self.reflectivities)

    def positions(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.cell_len


def make_scatterers(
    fiber: FiberSpec,
    cell_len: float,
    seed: int,
    backscatter_db_per_m: float = -82.0,
    chip_rate: float | None = None,
) -> ScattererField:
    """Draw i.i.d. circular-Gaussian cell reflectivities (phase-OTDR fading model)."""
    if chip_rate is not None and cell_len > fiber.group_velocity / (2.0 * chip_rate):
        raise ChannelError("cell_len must be <= one spatial resolution element")
    n = int(math.floor(fiber.length / cell_len))
    var = 10.0 ** (backscatter_db_per_m / 10.0) * cell_len
    rng = spawn_rng(seed, "scatterers")
    r = rng.normal(size=n, scale=math.sqrt(var / 2.0)) + 1j * rng.normal(
        size=n, scale=math.sqrt(var / 2.0)
    )
    return ScattererField(cell_len=cell_len, reflectivities=r, seed=int(seed))


@dataclass
class NoiseSpec:
    target_osnr_db: float
    ref_bandwidth: float = REF_BANDWIDTH


@dataclass
class ShotTrace:
    samples: np.ndarray
    sample_rate: float
    shot_index: int
    t_shot: float


def xpm_phase_analytic(gamma_w_m: float, p_pump_w: float, alpha_db_km: float, length_m: float) -> float:
    """Closed-form XPM phase 2*gamma*P*L_eff with L_eff = (1 - e^(-aL))/a."""
    if min(gamma_w_m, p_pump_w, alpha_db_km, length_m) < 0:
        raise ChannelError("arguments must be non-negative")
    alpha_m = alpha_db_km * math.log(10.0) / 10.0 / 1e3
    if alpha_m == 0.0:
        l_eff = length_m
    else:
        l_eff = (1.0 - math.exp(-alpha_m * length_m)) / alpha_m
    return 2.0 * gamma_w_m * p_pump_w * l_eff


def _jones_rotate(x: np.ndarray, y: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
    c, s = math.cos(theta), math.sin(theta)
    return c * x - s * y, s * x + c * y


def propagate_coupled(
    data: OpticalField,
    probe: OpticalField | None,
    fiber: FiberSpec,
    step: float = 100.0,
    max_step: float | None = None,
    refine: bool = True,
    precision: str = "double",
) -> tuple[OpticalField, OpticalField | None]:
    """Symmetric split-step propagation of the coupled data + probe envelopes.

    The step is refined automatically whenever the peak nonlinear phase per
    step would exceed 0.05 rad (or StepTooLarge is raised with refine=False).
    """
    if max_step is not None and step > max_step:
        raise StepTooLarge(f"step {step} m exceeds configured max {max_step} m")
    if probe is not None:
        if probe.sample_rate != data.sample_rate:
            raise SampleRateMismatch(
                f"data at {data.sample_rate} Hz, probe at {probe.sample_rate} Hz"
            )
        if len(probe) != len(data):
            raise ChannelError("data and probe durations differ")

    cdtype = np.complex64 if precision == "single" else np.complex128
    arrays = [np.ascontiguousarray(data.pol_x, dtype=cdtype),
              np.ascontiguousarray(data.pol_y, dtype=cdtype)]
    probe_has_y = probe is not None and np.any(probe.pol_y)
    if probe is not None:
        arrays.append(np.ascontiguousarray(probe.pol_x, dtype=cdtype))
        if probe_has_y:
            arrays.append(np.ascontiguousarray(probe.pol_y, dtype=cdtype))
    fields = np.stack(arrays)
    n_data_rows = 2

    length = fiber.length
    if length == 0.0:
        d_out = OpticalField(fields[0].copy(), fields[1].copy(), data.sample_rate, data.grid_offset)
        return d_out, (probe.copy() if probe is not None else None)

    gamma = fiber.gamma_w_m
    if gamma > 0:
        p_data = np.abs(fields[0]) ** 2 + np.abs(fields[1]) ** 2
        worst = float(np.max(p_data))
        if probe is not None:
            p_probe = np.abs(fields[2]) ** 2
            if probe_has_y:
                p_probe = p_probe + np.abs(fields[3]) ** 2
            worst = max(
                float(np.max(p_data + 2.0 * p_probe)),
                float(np.max(p_probe + 2.0 * p_data)),
            )
        h_nl = MAX_NL_PHASE_PER_STEP / (gamma * worst) if worst > 0 else math.inf
    else:
        h_nl = math.inf
    h_req = min(step, h_nl)
    if h_nl < step and not refine:
        raise StepTooLarge(
            f"nonlinear phase per {step} m step exceeds {MAX_NL_PHASE_PER_STEP} rad; "
            f"need <= {h_nl:.1f} m"
        )
    n_steps = max(1, int(math.ceil(length / h_req)))
    h = length / n_steps

    fs = data.sample_rate
    n = fields.shape[1]
    omega = 2.0 * np.pi * sfft.fftfreq(n, 1.0 / fs)
    alpha = fiber.alpha_per_m
    beta2 = fiber.beta2

    # Linear half-step operator per channel row; walk-off delay rides on the probe.
    disp_half = np.exp((-alpha / 4.0) * h - 0.5j * beta2 * omega**2 * (h / 2.0))
    ops = [disp_half, disp_half]
    if probe is not None:
        tau_half = fiber.walkoff_s_per_m(probe.grid_offset, data.grid_offset) * (h / 2.0)
        freq = omega / (2.0 * np.pi)
        probe_half = disp_half * np.exp(-2j * np.pi * freq * tau_half)
        ops.append(probe_half)
        if probe_has_y:
            ops.append(probe_half)
    lin_half = np.stack(ops).astype(cdtype)
    lin_full = (lin_half**2).astype(cdtype)

    h_eff = 2.0 * math.sinh(alpha * h / 2.0) / alpha if alpha > 0 else h

    def nonlinear_rotate(f):
        if gamma == 0.0:
            return
        p_d = np.abs(f[0]) ** 2
        p_d += np.abs(f[1]) ** 2
        if probe is None:
            rot = np.exp(1j * (gamma * h_eff) * p_d).astype(cdtype)
            f[0] *= rot
            f[1] *= rot
            return
        p_p = np.abs(f[2]) ** 2
        if probe_has_y:
            p_p = p_p + np.abs(f[3]) ** 2
        rot_d = np.exp(1j * (gamma * h_eff) * (p_d + 2.0 * p_p)).astype(cdtype)
        rot_p = np.exp(1j * (gamma * h_eff) * (p_p + 2.0 * p_d)).astype(cdtype)
        f[0] *= rot_d
        f[1] *= rot_d
        f[2] *= rot_p
        if probe_has_y:
            f[3] *= rot_p

    spec = sfft.fft(fields, axis=1, workers=FFT_WORKERS)
    spec *= lin_half
    fields = sfft.ifft(spec, axis=1, workers=FFT_WORKERS)
    for k in range(n_steps):
        nonlinear_rotate(fields)
        spec = sfft.fft(fields, axis=1, workers=FFT_WORKERS)
        spec *= lin_full if k < n_steps - 1 else lin_half
        fields = sfft.ifft(spec, axis=1, workers=FFT_WORKERS)

    dx, dy = fields[0], fields[1]
    if fiber.jones_angle:
        dx, dy = _jones_rotate(dx, dy, fiber.jones_angle)
    data_out = OpticalField(dx, dy, fs, data.grid_offset, data.t0)
    probe_out = None
    if probe is not None:
        py = fields[3] if probe_has_y else np.zeros_like(fields[2])
        probe_out = OpticalField(fields[2], py, fs, probe.grid_offset, probe.t0)
    return data_out, probe_out


def load_ase(field: OpticalField, noise: NoiseSpec, seed: int = 0) -> OpticalField:
    """Add flat circular-Gaussian noise to both polarizations so the OSNR
    (total signal power over ASE power in the reference bandwidth, both
    polarizations) hits the target. An infinite target returns a copy."""
    if math.isinf(noise.target_osnr_db):
        return field.copy()
    p_sig = field.power()
    if p_sig <= 0:
        raise ChannelError("field has no power to reference the OSNR against")
    osnr = 10.0 ** (noise.target_osnr_db / 10.0)
    # per-pol per-sample complex noise variance; PSD per pol = var / sample_rate
    var = p_sig * field.sample_rate / (2.0 * noise.ref_bandwidth * osnr)
    rng = spawn_rng(seed, "ase")
    n = len(field)
    sigma = math.sqrt(var / 2.0)
    nx = rng.normal(size=n, scale=sigma) + 1j * rng.normal(size=n, scale=sigma)
    ny = rng.normal(size=n, scale=sigma) + 1j * rng.normal(size=n, scale=sigma)
    return OpticalField(
        field.pol_x + nx, field.pol_y + ny, field.sample_rate, field.grid_offset, field.t0
    )


def bandpass(field: OpticalField, center_offset: float, bandwidth: float) -> OpticalField:
    """Brick-wall bandpass; also serves as the DEMUX channel selector."""
    if bandwidth >= field.sample_rate:
        raise ChannelError("bandwidth must be below the sample rate")
    f = sfft.fftfreq(len(field), 1.0 / field.sample_rate)
    mask = np.abs(f - (center_offset - field.grid_offset)) <= bandwidth / 2.0
    x = sfft.ifft(sfft.fft(field.pol_x, workers=FFT_WORKERS) * mask, workers=FFT_WORKERS)
    y = sfft.ifft(sfft.fft(field.pol_y, workers=FFT_WORKERS) * mask, workers=FFT_WORKERS)
    return OpticalField(x, y, field.sample_rate, field.grid_offset, field.t0)


def impulse_response_parts(
    fiber: FiberSpec,
    scatterers: ScattererField,
    event: StrainEvent | None,
    sample_rate: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Round-trip reflectivity impulse response split at the event position.

    Returns (h_pre, h_post) on the trace delay grid; the full response for a
    shot is h_pre + exp(i * phi_event(t_shot)) * h_post.
    """
    z = scatterers.positions()
    # floor, not round: cells sit at half-integer multiples of the resolution
    # cell, and round-half-to-even would fold adjacent cells into one bin
    delay_bins = np.floor(2.0 * z / fiber.group_velocity * sample_rate).astype(np.int64)
    amp = scatterers.reflectivities * 10.0 ** (-2.0 * fiber.attenuation_db_km * (z / 1e3) / 20.0)
    n_bins = int(math.ceil(2.0 * fiber.length / fiber.group_velocity * sample_rate)) + 1
    h_pre = np.zeros(n_bins, dtype=np.complex128)
    h_post = np.zeros(n_bins, dtype=np.complex128)
    if event is None:
        np.add.at(h_pre, delay_bins, amp)
    else:
        post = z > event.position
        np.add.at(h_pre, delay_bins[~post], amp[~post])
        np.add.at(h_post, delay_bins[post], amp[post])
    return h_pre, h_post


def backscatter(
    probe_tx: OpticalField,
    fiber: FiberSpec,
    scatterers: ScattererField,
    event: StrainEvent | None,
    shot_index: int,
    shot_period: float,
    window_duration: float | None = None,
) -> ShotTrace:
    """Linear backscatter trace for one probe shot.

    trace(t) = sum_k r_k s(t - 2 z_k / v_g) 10^(-2 alpha z_k / 20) e^(i phi_k),
    with phi_k the event phase for cells beyond the event position, evaluated
    at this shot's launch time.
    """
    fs = probe_tx.sample_rate
    min_dur = 2.0 * fiber.length / fiber.group_velocity + probe_tx.duration
    if window_duration is None:
        window_duration = min_dur
    elif window_duration < min_dur:
        raise WindowTooShort(f"need >= {min_dur:.3e}s, got {window_duration:.3e}s")
    h_pre, h_post = impulse_response_parts(fiber, scatterers, event, fs)
    t_shot = shot_index * shot_period
    h = h_pre
    if event is not None:
        h = h_pre + np.exp(1j * event.phase_at(t_shot)) * h_post
    trace = scipy.signal.fftconvolve(probe_tx.pol_x, h)
    n = int(round(window_duration * fs))
    if len(trace) < n:
        trace = np.pad(trace, (0, n - len(trace)))
    return ShotTrace(samples=trace[:n], sample_rate=fs, shot_index=shot_index, t_shot=t_shot)
