import math

import numpy as np
import pytest
import scipy.fft as sfft

from sensecomm import channel, codes, txgen
from sensecomm.channel import (
    FiberSpec,
    NoiseSpec,
    ScattererField,
    StrainEvent,
    StepTooLarge,
    SampleRateMismatch,
    WindowTooShort,
    backscatter,
    bandpass,
    load_ase,
    make_scatterers,
    propagate_coupled,
    xpm_phase_analytic,
)
from sensecomm.txgen import OpticalField, TxConfig, synth_data
from sensecomm.util import REF_BANDWIDTH, dbm_to_watt


def cw_field(power_w, n, fs, offset=0.0):
    x = np.full(n, math.sqrt(power_w), dtype=np.complex128)
    return OpticalField(x, np.zeros(n, dtype=np.complex128), fs, offset)


class TestXpmAnalytic:
    def test_paper_operating_point(self):
        # 2 * 1.3e-3 * 6.0256e-3 * L_eff(50 km, 0.2 dB/km); L_eff ~ 19.54 km
        phi = xpm_phase_analytic(1.3e-3, dbm_to_watt(7.8), 0.2, 50e3)
        assert phi == pytest.approx(0.3062, abs=2e-3)

    def test_lossless_limit(self):
        phi = xpm_phase_analytic(1.3e-3, 1e-3, 1e-9, 10e3)
        assert phi == pytest.approx(2 * 1.3e-3 * 1e-3 * 10e3, rel=1e-6)

    def test_zero_pump(self):
        assert xpm_phase_analytic(1.3e-3, 0.0, 0.2, 50e3) == 0.0


class TestPropagateLinear:
    def test_pure_attenuation(self):
        fs = 1e9
        fiber = FiberSpec(length=10e3, attenuation_db_km=0.2, dispersion_ps_nm_km=0.0, gamma_w_km=0.0)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(512) + 1j * rng.standard_normal(512)
        f = OpticalField(x, x[::-1].copy(), fs, 0.0)
        out, _ = propagate_coupled(f, None, fiber, step=1000.0, max_step=1000.0)
        expect = x * 10 ** (-0.2 * 10 / 20)
        assert np.allclose(out.pol_x, expect, rtol=1e-12, atol=1e-14)

    def test_matches_closed_form_transfer_function(self):
        fs = 66e9
        n = 8192
        fiber = FiberSpec(length=30e3, gamma_w_km=0.0)
        rng = np.random.default_rng(1)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        f = OpticalField(x, np.zeros(n, complex), fs, 0.0)
        out, _ = propagate_coupled(f, None, fiber, step=100.0)
        omega = 2 * np.pi * sfft.fftfreq(n, 1 / fs)
        h = np.exp(-fiber.alpha_per_m / 2 * fiber.length - 0.5j * fiber.beta2 * omega**2 * fiber.length)
        expect = sfft.ifft(sfft.fft(x) * h)
        err = np.abs(out.pol_x - expect) / np.max(np.abs(expect))
        assert np.max(err) < 1e-9

    def test_dispersion_inverse_round_trip(self):
        fs = 66e9
        n = 4096
        fwd = FiberSpec(length=50e3, attenuation_db_km=0.0, gamma_w_km=0.0, dispersion_ps_nm_km=17.0)
        bwd = FiberSpec(length=50e3, attenuation_db_km=0.0, gamma_w_km=0.0, dispersion_ps_nm_km=17.0)
        cfg = TxConfig(sps=2)
        f, _ = synth_data(None, cfg, seed=3, n_symbols=n // 2, grid_offset=0.0)
        mid, _ = propagate_coupled(f, None, fwd, step=1000.0, max_step=1e4)
        # invert by conjugating the spectrum through the same fiber
        inv = OpticalField(np.conj(mid.pol_x), np.conj(mid.pol_y), fs, 0.0)
        back, _ = propagate_coupled(inv, None, bwd, step=1000.0, max_step=1e4)
        rms = np.sqrt(np.mean(np.abs(np.conj(back.pol_x) - f.pol_x) ** 2))
        assert rms / np.sqrt(np.mean(np.abs(f.pol_x) ** 2)) < 1e-6

    def test_in_band_group_delay_sign_matches_walkoff(self):
        # a +10 GHz in-band packet must arrive earlier (D > 0), by D*dlam*L
        fs = 66e9
        n = 1 << 14
        fiber = FiberSpec(length=50e3, attenuation_db_km=0.0, gamma_w_km=0.0)
        t = np.arange(n) / fs
        t0 = n / fs / 2
        env = np.exp(-((t - t0) ** 2) / (2 * (1e-9) ** 2))
        x = env * np.exp(2j * np.pi * 10e9 * (t - t0))
        f = OpticalField(x, np.zeros(n, complex), fs, 0.0)
        out, _ = propagate_coupled(f, None, fiber, step=5000.0, max_step=1e4)
        p_in = np.abs(f.pol_x) ** 2
        p_out = np.abs(out.pol_x) ** 2
        delay = (np.sum(t * p_out) / np.sum(p_out)) - (np.sum(t * p_in) / np.sum(p_in))
        expect = fiber.walkoff_s_per_m(10e9, 0.0) * fiber.length  # negative
        assert expect < 0
        assert delay == pytest.approx(expect, rel=0.05)


class TestPropagateNonlinear:
    def test_cw_xpm_matches_analytic(self):
        fs = 1e9
        n = 2048
        fiber = FiberSpec(length=50e3, dispersion_ps_nm_km=0.0)
        data = cw_field(1e-6, n, fs, +50e9)
        probe = cw_field(dbm_to_watt(7.8), n, fs, -50e9)
        out, _ = propagate_coupled(data, probe, fiber, step=100.0)
        phi = np.angle(out.pol_x / data.pol_x)
        expect = xpm_phase_analytic(fiber.gamma_w_m, dbm_to_watt(7.8), 0.2, 50e3)
        assert np.mean(phi) == pytest.approx(expect, rel=0.05)
        # and much tighter in practice
        assert np.mean(phi) == pytest.approx(expect, rel=1e-3)

    def test_probe_sees_xpm_from_data(self):
        fs = 1e9
        n = 1024
        fiber = FiberSpec(length=10e3, dispersion_ps_nm_km=0.0)
        data = cw_field(2e-3, n, fs, +50e9)
        probe = cw_field(1e-6, n, fs, -50e9)
        _, probe_out = propagate_coupled(data, probe, fiber, step=100.0)
        phi = float(np.mean(np.angle(probe_out.pol_x / probe.pol_x)))
        expect = xpm_phase_analytic(fiber.gamma_w_m, 2e-3, 0.2, 10e3)
        assert phi == pytest.approx(expect, rel=5e-3)

    def test_walkoff_smears_xpm_transition(self):
        fs = 66e9
        n = 1 << 15
        fiber = FiberSpec(length=50e3)
        data = cw_field(1e-6, n, fs, +50e9)
        px = np.zeros(n, dtype=np.complex128)
        n0 = n // 2
        px[n0:] = math.sqrt(dbm_to_watt(7.8))
        probe = OpticalField(px, np.zeros(n, complex), fs, -50e9)
        out, _ = propagate_coupled(data, probe, fiber, step=500.0, max_step=1000.0)
        phi = np.unwrap(np.angle(out.pol_x / data.pol_x))
        expect = xpm_phase_analytic(fiber.gamma_w_m, dbm_to_watt(7.8), 0.2, 50e3)
        smear_s = fiber.walkoff_s_per_m(-50e9, +50e9) * fiber.length
        assert smear_s == pytest.approx(680e-12, rel=0.02)
        smear_n = int(round(smear_s * fs))
        # settled phase beyond the smear matches the analytic value
        assert np.mean(phi[n0 + 2 * smear_n : n0 + 6 * smear_n]) == pytest.approx(expect, rel=0.02)
        # before the edge: no phase
        assert abs(np.mean(phi[n0 - 4000 : n0 - 2000])) < 0.01 * expect
        # the transition is spread over roughly the walk-off window, not abrupt
        i10 = np.argmax(phi[n0 - 100 :] > 0.1 * expect) + n0 - 100
        i90 = np.argmax(phi[n0 - 100 :] > 0.9 * expect) + n0 - 100
        assert 0.3 * smear_n < (i90 - i10) <= 1.2 * smear_n

    def test_step_halving_convergence(self):
        fs = 66e9
        cfg = TxConfig(sps=2)
        data, _ = synth_data(None, cfg, seed=9, n_symbols=2048, grid_offset=+50e9)
        probe = cw_field(dbm_to_watt(7.8), len(data), fs, -50e9)
        fiber = FiberSpec(length=10e3)
        a, _ = propagate_coupled(data, probe, fiber, step=200.0, max_step=200.0)
        b, _ = propagate_coupled(data, probe, fiber, step=100.0, max_step=100.0)
        rms = np.sqrt(np.mean(np.abs(a.pol_x - b.pol_x) ** 2))
        ref = np.sqrt(np.mean(np.abs(b.pol_x) ** 2))
        assert rms / ref < 1e-4

    def test_energy_decays_exactly(self):
        fs = 1e9
        data = cw_field(1e-3, 1024, fs, +50e9)
        probe = cw_field(5e-3, 1024, fs, -50e9)
        fiber = FiberSpec(length=25e3, dispersion_ps_nm_km=0.0)
        d, p = propagate_coupled(data, probe, fiber, step=100.0)
        loss = 10 ** (-0.2 * 25 / 10)
        assert d.power() == pytest.approx(1e-3 * loss, rel=1e-9)
        assert p.power() == pytest.approx(5e-3 * loss, rel=1e-9)

    def test_step_too_large_raises_without_refine(self):
        fs = 1e9
        data = cw_field(1e-9, 256, fs, +50e9)  # negligible SPM
        probe = cw_field(0.2, 256, fs, -50e9)  # huge pump
        fiber = FiberSpec(length=10e3, dispersion_ps_nm_km=0.0)
        with pytest.raises(StepTooLarge):
            propagate_coupled(data, probe, fiber, step=1000.0, max_step=1000.0, refine=False)
        # with refinement the analytic answer still comes out (2pi-wrapped)
        out, _ = propagate_coupled(data, probe, fiber, step=1000.0, max_step=1000.0)
        phi = np.mean(np.angle(out.pol_x / data.pol_x))
        expect = xpm_phase_analytic(fiber.gamma_w_m, 0.2, 0.2, 10e3) - 2 * np.pi
        assert phi == pytest.approx(expect, rel=1e-3)

    def test_step_exceeding_max_rejected(self):
        data = cw_field(1e-3, 64, 1e9)
        with pytest.raises(StepTooLarge):
            propagate_coupled(data, None, FiberSpec(length=1e3), step=200.0, max_step=100.0)

    def test_sample_rate_mismatch(self):
        d = cw_field(1e-3, 64, 1e9)
        p = cw_field(1e-3, 64, 2e9)
        with pytest.raises(SampleRateMismatch):
            propagate_coupled(d, p, FiberSpec(length=1e3), step=100.0)


class TestLoadAse:
    def test_target_osnr_hit(self):
        fs = 66e9
        f = cw_field(1e-3, 200_000, fs)
        noisy = load_ase(f, NoiseSpec(15.0), seed=4)
        noise = noisy.pol_x - f.pol_x
        psd_per_pol = np.var(noise) / fs
        p_ase_ref = 2 * psd_per_pol * REF_BANDWIDTH
        osnr_db = 10 * np.log10(1e-3 / p_ase_ref)
        assert osnr_db == pytest.approx(15.0, abs=0.1)

    def test_infinite_target_is_identity(self):
        f = cw_field(1e-3, 128, 1e9)
        out = load_ase(f, NoiseSpec(float("inf")), seed=1)
        assert np.array_equal(out.pol_x, f.pol_x)

    def test_deterministic(self):
        f = cw_field(1e-3, 256, 1e9)
        a = load_ase(f, NoiseSpec(20.0), seed=7)
        b = load_ase(f, NoiseSpec(20.0), seed=7)
        assert np.array_equal(a.pol_x, b.pol_x)

    def test_esn0_contract_after_matched_filter(self):
        # Es/N0 per pol (dB) == OSNR(dB) + 10 log10(ref_bw / symbol_rate)
        cfg = TxConfig(format="qpsk", sps=2)
        n_sym = 1 << 17
        f, bits = synth_data(None, cfg, seed=11, n_symbols=n_sym, grid_offset=0.0)
        osnr_db = 12.0
        noisy = load_ase(f, NoiseSpec(osnr_db), seed=12)
        mask = txgen.rrc_spectrum(len(f), cfg.sample_rate, cfg.symbol_rate, cfg.rolloff)
        rx = sfft.ifft(sfft.fft(noisy.pol_x) * mask)[:: cfg.sps]
        ref = txgen.map_symbols(bits[: bits.size // 2], "qpsk")
        g = np.vdot(ref, rx) / np.vdot(ref, ref)
        noise_var = np.mean(np.abs(rx - g * ref) ** 2)
        es = np.abs(g) ** 2 * np.mean(np.abs(ref) ** 2)
        esn0_meas = 10 * np.log10(es / noise_var)
        expect = osnr_db + 10 * np.log10(REF_BANDWIDTH / cfg.symbol_rate)
        assert esn0_meas == pytest.approx(expect, abs=0.1)


class TestBandpass:
    def test_demux_rejection(self):
        fs = 160e9
        n = 16000
        t = np.arange(n) / fs
        x = np.exp(2j * np.pi * 50e9 * t) + np.exp(-2j * np.pi * 50e9 * t)
        f = OpticalField(x, np.zeros(n, complex), fs, 0.0)
        sel = bandpass(f, +50e9, 50e9)
        spec = np.abs(sfft.fft(sel.pol_x)) ** 2
        freqs = sfft.fftfreq(n, 1 / fs)
        p_want = spec[np.argmin(np.abs(freqs - 50e9))]
        p_leak = spec[np.argmin(np.abs(freqs + 50e9))]
        assert p_leak < p_want * 1e-6  # >= 60 dB

    def test_full_band_identity(self):
        # band-limited signal, filter wider than its content
        rng = np.random.default_rng(2)
        spec = np.zeros(1024, dtype=np.complex128)
        spec[:300] = rng.standard_normal(300) + 1j * rng.standard_normal(300)
        spec[-300:] = rng.standard_normal(300) + 1j * rng.standard_normal(300)
        x = sfft.ifft(spec)
        f = OpticalField(x, x.copy(), 1e9, 0.0)
        out = bandpass(f, 0.0, 0.999e9)
        assert np.allclose(out.pol_x, x, atol=1e-12)

    def test_zero_in_zero_out(self):
        f = OpticalField(np.zeros(64, complex), np.zeros(64, complex), 1e9, 0.0)
        assert bandpass(f, 0.0, 0.5e9).power() == 0.0


def single_reflector(fiber, z, amp=1e-4):
    n = int(fiber.length // 1.0)
    r = np.zeros(n, dtype=np.complex128)
    r[int(z / 1.0)] = amp
    return ScattererField(cell_len=1.0, reflectivities=r, seed=0)


def chip_probe(order=6, fs=1e8, peak_dbm=0.0):
    seq = codes.shape(codes.balance(codes.gen_prbs(order)), "rectangular", 0)
    cfg = txgen.ProbeConfig(chip_rate=1e8, peak_power_dbm=peak_dbm, repetition_period=1.0, sequence=seq)
    return txgen.synth_probe(cfg, fs, include_silence=False)


class TestBackscatter:
    def test_single_scatterer_delay_and_attenuation(self):
        fiber = FiberSpec(length=10e3)
        z = 4000.0
        sc = single_reflector(fiber, z)
        probe = chip_probe()
        tr = backscatter(probe, fiber, sc, None, 0, 1e-3)
        d0 = int(round(2 * (z + 0.5) / fiber.group_velocity * probe.sample_rate))
        seg = tr.samples[d0 : d0 + len(probe)]
        expect = 1e-4 * 10 ** (-2 * 0.2 * (z + 0.5) / 1e3 / 20) * probe.pol_x
        assert np.allclose(seg, expect, rtol=1e-9, atol=1e-12)
        assert np.allclose(tr.samples[:d0], 0.0)

    def test_event_phase_quarter_period(self):
        fiber = FiberSpec(length=10e3)
        ev = StrainEvent(position=5e3, frequency=115.0, phase_pkpk=3.9)
        assert ev.phase_at(0.0) == 0.0
        assert ev.phase_at(1 / (4 * 115.0)) == pytest.approx(1.95)
        sc = single_reflector(fiber, 8000.0)  # beyond the event
        probe = chip_probe()
        shot_period = 1 / (4 * 115.0)
        t0 = backscatter(probe, fiber, sc, ev, 0, shot_period)
        t1 = backscatter(probe, fiber, sc, ev, 1, shot_period)
        k = np.argmax(np.abs(t0.samples))
        dphi = np.angle(t1.samples[k] / t0.samples[k])
        assert dphi == pytest.approx(1.95, abs=1e-9)

    def test_linearity_in_probe_amplitude(self):
        fiber = FiberSpec(length=5e3)
        sc = make_scatterers(fiber, 1.0, seed=5)
        p1 = chip_probe(peak_dbm=0.0)
        p2 = OpticalField(3.0 * p1.pol_x, p1.pol_y.copy(), p1.sample_rate, p1.grid_offset)
        t1 = backscatter(p1, fiber, sc, None, 0, 1e-3)
        t2 = backscatter(p2, fiber, sc, None, 0, 1e-3)
        assert np.allclose(t2.samples, 3.0 * t1.samples, rtol=1e-12, atol=1e-15)

    def test_mean_power_slope_2alpha(self):
        fiber = FiberSpec(length=5e3)
        fs = 1e8
        # delta probe: trace is the round-trip impulse response itself
        probe = OpticalField(np.array([1.0 + 0j]), np.array([0j]), fs, 0.0)
        acc = None
        seeds = range(24)
        for s in seeds:
            sc = make_scatterers(fiber, 1.0, seed=s)
            tr = backscatter(probe, fiber, sc, None, 0, 1e-3)
            p = np.abs(tr.samples) ** 2
            acc = p if acc is None else acc + p
        acc /= len(list(seeds))
        n_fiber = int(2 * fiber.length / fiber.group_velocity * fs)
        z_km = np.arange(n_fiber) * fiber.group_velocity / (2 * fs) / 1e3
        # bin into 100 m cells and regress in dB
        nb = 50
        zb = z_km.reshape(nb, -1).mean(axis=1)
        pb = 10 * np.log10(acc[:n_fiber].reshape(nb, -1).mean(axis=1))
        slope = np.polyfit(zb, pb, 1)[0]
        assert slope == pytest.approx(-2 * fiber.attenuation_db_km, rel=0.1)

    def test_window_too_short(self):
        fiber = FiberSpec(length=10e3)
        sc = single_reflector(fiber, 100.0)
        with pytest.raises(WindowTooShort):
            backscatter(chip_probe(), fiber, sc, None, 0, 1e-3, window_duration=1e-6)
