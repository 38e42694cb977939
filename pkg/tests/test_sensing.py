import numpy as np
import pytest

from sensecomm import codes, sensing
from sensecomm.channel import (
    FiberSpec,
    ScattererField,
    StrainEvent,
    backscatter,
    make_scatterers,
)
from sensecomm.sensing import (
    InsufficientShots,
    NoToneFound,
    RangeProfile,
    ReplicaMismatch,
    acquire_waterfall,
    build_waterfall,
    compress,
    extract_tone,
)
from sensecomm.txgen import OpticalField, ProbeConfig, synth_probe


def probe_field(order=10, ramp=512, profile="trapezoidal", fs=1e8):
    core = codes.balance(codes.gen_prbs(order))
    seq = codes.shape(core, profile, ramp if profile == "trapezoidal" else 0)
    cfg = ProbeConfig(chip_rate=1e8, peak_power_dbm=7.8, repetition_period=1.0, sequence=seq)
    return synth_probe(cfg, fs, include_silence=False)


def one_reflector(fiber, z, amp=1e-4):
    n = int(fiber.length // 1.0)
    r = np.zeros(n, dtype=np.complex128)
    r[int(z)] = amp
    return ScattererField(cell_len=1.0, reflectivities=r, seed=0)


class TestCompress:
    def test_single_scatterer_peak_position(self):
        fiber = FiberSpec(length=50e3)
        z = 25_000.0
        probe = probe_field()
        tr = backscatter(probe, fiber, one_reflector(fiber, z), None, 0, 1.0)
        prof = compress(tr, probe, fiber.group_velocity)
        zpk = prof.z[np.argmax(np.abs(prof.values))]
        assert abs(zpk - z) <= 2 * prof.dz

    def test_delay_to_distance_arithmetic(self):
        # tau = 500 us -> z = 50 km at v_g = 2e8 m/s
        fs = 1e8
        tr_len = int(600e-6 * fs)
        samples = np.zeros(tr_len, dtype=complex)
        d = int(round(500e-6 * fs))
        samples[d] = 1.0
        from sensecomm.channel import ShotTrace

        trace = ShotTrace(samples=samples, sample_rate=fs, shot_index=0, t_shot=0.0)
        replica = OpticalField(np.array([1.0 + 0j]), np.array([0j]), fs, 0.0)
        prof = compress(trace, replica, 2.0e8)
        assert prof.z[np.argmax(np.abs(prof.values))] == pytest.approx(50e3)

    def test_two_equal_scatterers(self):
        fiber = FiberSpec(length=5e3, attenuation_db_km=0.0)
        n = int(fiber.length)
        r = np.zeros(n, dtype=np.complex128)
        r[2000] = 1e-4
        r[2020] = 1e-4  # 10 resolution cells apart at 2 m/cell... 20 m apart
        sc = ScattererField(cell_len=1.0, reflectivities=r, seed=0)
        probe = probe_field(order=8, ramp=0, profile="rectangular")
        tr = backscatter(probe, fiber, sc, None, 0, 1.0)
        prof = compress(tr, probe, fiber.group_velocity)
        mags = np.abs(prof.values)
        i1 = int(np.argmin(np.abs(prof.z - 2000.5)))
        i2 = int(np.argmin(np.abs(prof.z - 2020.5)))
        peak = mags[i1]
        assert mags[i2] == pytest.approx(peak, rel=0.15)  # equal up to sidelobes
        # everything away from the echoes stays at sidelobe level
        far = np.delete(mags, np.r_[i1 - 2 : i1 + 3, i2 - 2 : i2 + 3])
        assert np.max(far) < 0.2 * peak

    def test_replica_rate_mismatch(self):
        fiber = FiberSpec(length=2e3)
        probe = probe_field(order=6, ramp=8)
        tr = backscatter(probe, fiber, one_reflector(fiber, 1000.0), None, 0, 1.0)
        other = OpticalField(probe.pol_x, probe.pol_y, 2e8, probe.grid_offset)
        with pytest.raises(ReplicaMismatch):
            compress(tr, other, fiber.group_velocity)

    def test_compression_gain(self):
        # correlation-peak SNR gain ~ 10 log10(sequence length) on one echo
        fiber = FiberSpec(length=5e3, attenuation_db_km=0.0)
        probe = probe_field(order=10, ramp=0, profile="rectangular")
        n_chips = 1024
        tr = backscatter(probe, fiber, one_reflector(fiber, 2000.0, amp=1e-3), None, 0, 1.0)
        rng = np.random.default_rng(0)
        sigma = 1e-5
        noise = (rng.normal(size=len(tr.samples)) + 1j * rng.normal(size=len(tr.samples))) * sigma
        peak_in = np.max(np.abs(tr.samples))
        snr_in = peak_in**2 / (2 * sigma**2)
        tr.samples = tr.samples + noise
        prof = compress(tr, probe, fiber.group_velocity)
        peak_out = np.max(np.abs(prof.values))
        # measure output noise on a signal-free stretch
        quiet = np.abs(prof.values[3500:4500]) ** 2
        snr_out = peak_out**2 / np.mean(quiet)
        gain_db = 10 * np.log10(snr_out / snr_in)
        assert gain_db == pytest.approx(10 * np.log10(n_chips), abs=1.0)


class TestWaterfall:
    def test_static_fiber_zero_phase(self):
        fiber = FiberSpec(length=2e3)
        sc = make_scatterers(fiber, 1.0, seed=1)
        probe = probe_field(order=8, ramp=64)
        profiles = [
            compress(backscatter(probe, fiber, sc, None, n, 1e-3), probe, fiber.group_velocity)
            for n in range(4)
        ]
        wf = build_waterfall(profiles, 2.0, fiber.length, 1e-3)
        assert np.max(np.abs(wf.phase)) < 1e-9

    def test_step_event_phase_columns(self):
        fiber = FiberSpec(length=2e3)
        sc = make_scatterers(fiber, 1.0, seed=2)
        probe = probe_field(order=8, ramp=64)
        # pi/2-per-shot event: constant pi/2 at shot 1 relative to shot 0
        ev = StrainEvent(position=1.2e3, frequency=500.0, phase_pkpk=np.pi)
        shot_period = 1 / 2000.0
        profiles = [
            compress(backscatter(probe, fiber, sc, ev, n, shot_period), probe, fiber.group_velocity)
            for n in range(2)
        ]
        wf = build_waterfall(profiles, 2.0, fiber.length, shot_period)
        z = wf.gauge_z()
        post = (z > 1.25e3) & ~wf.mask
        pre = (z < 1.15e3) & ~wf.mask
        expect = 0.5 * np.pi * np.sin(2 * np.pi * 500.0 * shot_period)
        assert np.median(np.abs(wf.phase[1, post])) == pytest.approx(abs(expect), rel=0.05)
        assert np.median(np.abs(wf.phase[1, pre])) < 0.05

    def test_insufficient_shots(self):
        with pytest.raises(InsufficientShots):
            build_waterfall([RangeProfile(np.ones(10, complex), 1.0)], 2.0, 10.0, 1e-3)

    def test_fast_path_matches_per_shot_pipeline(self):
        fiber = FiberSpec(length=2e3)
        ev = StrainEvent(position=1.2e3, frequency=115.0, phase_pkpk=1.0)
        sc = make_scatterers(fiber, 1.0, seed=3)
        probe = probe_field(order=6, ramp=16)
        wf_fast = acquire_waterfall(probe, fiber, sc, ev, 32, 5e-4, 2.0)
        profiles = [
            compress(backscatter(probe, fiber, sc, ev, n, 5e-4), probe, fiber.group_velocity)
            for n in range(32)
        ]
        wf_slow = build_waterfall(profiles, 2.0, fiber.length, 5e-4)
        assert np.allclose(wf_fast.phase, wf_slow.phase, atol=1e-12)
        assert np.array_equal(wf_fast.mask, wf_slow.mask)


class TestExtractTone:
    def make_waterfall(self, seed=0, f0=115.0, pkpk=3.9, pos=7.5e3, shots=1024):
        fiber = FiberSpec(length=10e3)
        ev = StrainEvent(position=pos, frequency=f0, phase_pkpk=pkpk)
        sc = make_scatterers(fiber, 1.0, seed=seed)
        probe = probe_field()
        return acquire_waterfall(probe, fiber, sc, ev, shots, 5e-4, 2.0)

    def test_closure_frequency_amplitude_position(self):
        wf = self.make_waterfall(seed=5)
        t = extract_tone(wf, (20.0, 400.0))
        assert t.frequency == pytest.approx(115.0, abs=1.0)
        assert t.amplitude_pkpk == pytest.approx(3.9, rel=0.10)
        assert abs(t.position - 7.5e3) <= 2 * wf.gauge_len

    def test_silent_fiber_no_tone(self):
        fiber = FiberSpec(length=5e3)
        sc = make_scatterers(fiber, 1.0, seed=6)
        probe = probe_field()
        wf = acquire_waterfall(probe, fiber, sc, None, 512, 5e-4, 2.0)
        with pytest.raises(NoToneFound):
            extract_tone(wf, (20.0, 400.0))

    def test_amplitude_linearity(self):
        t1 = extract_tone(self.make_waterfall(seed=7, pkpk=3.0), (20.0, 400.0))
        t2 = extract_tone(self.make_waterfall(seed=7, pkpk=1.5), (20.0, 400.0))
        assert t2.amplitude_pkpk == pytest.approx(0.5 * t1.amplitude_pkpk, rel=0.05)

    def test_span_precondition(self):
        wf = self.make_waterfall(seed=8, shots=16)
        with pytest.raises(sensing.SensingError):
            extract_tone(wf, (115.0, 400.0))

    def test_pre_event_gauges_carry_no_tone(self):
        wf = self.make_waterfall(seed=9)
        n = wf.n_shots
        win = np.hanning(n)
        spec = np.fft.rfft((wf.phase - wf.phase.mean(0)) * win[:, None], axis=0)
        freqs = np.fft.rfftfreq(n, wf.shot_period)
        k = int(np.argmin(np.abs(freqs - 115.0)))
        p = np.abs(spec[k]) ** 2
        z = wf.gauge_z()
        post = (z > 7.6e3) & ~wf.mask
        pre = (z < 7.4e3) & ~wf.mask
        # median pre-event tone power at least 20 dB below post-event
        assert np.median(p[post]) / np.median(p[pre]) > 100.0

    def test_shaped_and_rect_replicas_both_close(self):
        for profile in ("trapezoidal", "rectangular"):
            fiber = FiberSpec(length=10e3)
            ev = StrainEvent(position=7.5e3, frequency=115.0, phase_pkpk=3.9)
            sc = make_scatterers(fiber, 1.0, seed=10)
            probe = probe_field(profile=profile, ramp=512 if profile == "trapezoidal" else 0)
            wf = acquire_waterfall(probe, fiber, sc, ev, 1024, 5e-4, 2.0)
            t = extract_tone(wf, (20.0, 400.0))
            assert t.frequency == pytest.approx(115.0, abs=1.0)
            assert t.amplitude_pkpk == pytest.approx(3.9, rel=0.10)
            assert abs(t.position - 7.5e3) <= 2 * wf.gauge_len


def test_waterfall_csv_window():
    phase = np.zeros((4, 10))
    phase[2, 5] = 1.25
    wf = sensing.Waterfall(
        phase=phase, gauge_len=2.0, shot_period=1e-3, z0=0.0,
        mask=np.zeros(10, bool), magnitude=np.ones(10),
    )
    text = sensing.waterfall_to_csv(wf, 4.0, 16.0)
    lines = text.strip().splitlines()
    assert lines[0].startswith("z5.0")
    assert len(lines) == 5
    assert "1.250000" in lines[3]
