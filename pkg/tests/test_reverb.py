import numpy as np
import pytest

from clearwave.audio import AudioBuffer
from clearwave.reverb import (
    ReverbMixParams,
    Rir,
    RoomSpec,
    SPEED_OF_SOUND,
    UndecayableError,
    augment_rir,
    estimate_rt60,
    generate_rir_library,
    image_method_rir,
    load_rir_library,
    make_partial_dereverb_target,
    normalize_first_tap,
    reverberant_mix,
    sample_room,
)

FS = 16000


def brute_force_images(room: RoomSpec, fs, length_s, max_order):
    """Independent oracle: enumerate every image source with plain loops."""
    lx, ly, lz = room.dimensions_m
    sx, sy, sz = room.source_pos_m
    mic = np.array(room.mic_pos_m)
    beta = room.synthesis_reflection
    n = int(round(fs * length_s))
    h = np.zeros(n)
    r = max_order + 1
    for nx in range(-r, r + 1):
        for ny in range(-r, r + 1):
            for nz in range(-r, r + 1):
                for px in (0, 1):
                    for py in (0, 1):
                        for pz in (0, 1):
                            order = (
                                abs(nx - px) + abs(nx)
                                + abs(ny - py) + abs(ny)
                                + abs(nz - pz) + abs(nz)
                            )
                            if order > max_order:
                                continue
                            pos = np.array(
                                [
                                    (1 - 2 * px) * sx + 2 * nx * lx,
                                    (1 - 2 * py) * sy + 2 * ny * ly,
                                    (1 - 2 * pz) * sz + 2 * nz * lz,
                                ]
                            )
                            dist = float(np.linalg.norm(pos - mic))
                            delay = int(np.floor(fs * dist / SPEED_OF_SOUND))
                            if delay < n:
                                h[delay] += beta**order / dist
    return h


def synthetic_decay(tau_s, duration_s=1.5, seed=0, fs=FS):
    """Noise shaped by exp(-6.908 t/tau): 20*log10(e^-6.908) = -60 dB at tau."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(duration_s * fs)) / fs
    env = np.exp(-6.908 * t / tau_s)
    taps = rng.normal(size=t.size) * env
    taps[0] = 1.0
    return Rir(AudioBuffer(taps, fs))


class TestRoomSpec:
    def test_degenerate_room_rejected(self):
        with pytest.raises(ValueError):
            RoomSpec((0.0, 5, 3), (1, 1, 1), (2, 2, 2), 0.8)

    def test_positions_inside(self):
        with pytest.raises(ValueError):
            RoomSpec((4, 5, 3), (4.5, 1, 1), (2, 2, 2), 0.8)

    def test_reflection_clamped_for_synthesis(self):
        room = RoomSpec((4, 5, 3), (1, 1, 1), (2, 2, 2), 1.4)
        assert room.reflection_coeff == 1.4
        assert room.synthesis_reflection == 0.99


class TestImageMethod:
    def test_direct_path_only(self):
        room = RoomSpec((6, 4, 3), (1.0, 2.0, 1.5), (4.0, 1.0, 1.2), 0.9, max_order=0)
        h = image_method_rir(room, FS, 0.1).taps.samples
        dist = np.linalg.norm(np.array(room.source_pos_m) - np.array(room.mic_pos_m))
        delay = int(np.floor(FS * dist / SPEED_OF_SOUND))
        assert np.argmax(np.abs(h)) == delay
        assert h[delay] == pytest.approx(1.0 / dist, rel=1e-12)
        h_zeroed = h.copy()
        h_zeroed[delay] = 0
        assert np.all(h_zeroed == 0)

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(0)
        for trial in range(3):
            dims = rng.uniform(3.0, 7.0, size=3)
            src = rng.uniform(0.5, dims - 0.5)
            mic = rng.uniform(0.5, dims - 0.5)
            room = RoomSpec(tuple(dims), tuple(src), tuple(mic),
                            float(rng.uniform(0.5, 0.95)), max_order=2)
            got = image_method_rir(room, FS, 0.15).taps.samples
            want = brute_force_images(room, FS, 0.15, 2)
            assert np.max(np.abs(got - want)) < 1e-6

    def test_rt60_monotone_in_reflection(self):
        dims, src, mic = (5.0, 4.0, 3.0), (1.0, 1.0, 1.0), (3.5, 2.5, 2.0)
        rts = []
        for refl in (0.6, 0.9):
            room = RoomSpec(dims, src, mic, refl, max_order=40)
            h = normalize_first_tap(image_method_rir(room, FS, 0.6))
            rts.append(estimate_rt60(h))
        assert rts[1] > rts[0]


class TestNormalizeFirstTap:
    def test_unit_impulse_shift(self):
        taps = np.zeros(100)
        taps[37] = 1.0
        out = normalize_first_tap(Rir(AudioBuffer(taps, FS)))
        assert out.taps.samples[0] == 1.0
        assert len(out.taps) == 63
        assert np.count_nonzero(out.taps.samples) == 1

    def test_two_tap_arithmetic(self):
        taps = np.zeros(100)
        taps[10], taps[50] = 0.5, 0.1
        out = normalize_first_tap(Rir(AudioBuffer(taps, FS))).taps.samples
        assert out[0] == pytest.approx(1.0)
        assert out[40] == pytest.approx(0.2)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        taps = rng.normal(size=200) * np.exp(-np.arange(200) / 40)
        once = normalize_first_tap(Rir(AudioBuffer(taps, FS)))
        twice = normalize_first_tap(once)
        assert np.array_equal(once.taps.samples, twice.taps.samples)

    def test_sub_threshold_head_skipped(self):
        # taps more than 40 dB below the peak do not count as the first tap
        taps = np.zeros(100)
        taps[2] = 1e-5
        taps[20] = 1.0
        out = normalize_first_tap(Rir(AudioBuffer(taps, FS)))
        assert out.taps.samples[0] == 1.0
        assert len(out.taps) == 80

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            normalize_first_tap(Rir(AudioBuffer(np.zeros(100), FS)))


class TestRt60:
    @pytest.mark.parametrize("tau", [0.2, 0.5])
    def test_recovers_synthetic_decay(self, tau):
        est = estimate_rt60(synthetic_decay(tau))
        assert abs(est - tau) <= 0.1 * tau

    def test_single_tap_undecayable(self):
        taps = np.zeros(FS)
        taps[0] = 1.0
        with pytest.raises(UndecayableError):
            estimate_rt60(Rir(AudioBuffer(taps, FS)))

    def test_too_short_rejected(self):
        with pytest.raises(UndecayableError):
            estimate_rt60(Rir(AudioBuffer(np.ones(100), FS)))


class TestAugmentRir:
    def test_identity(self):
        h = normalize_first_tap(synthetic_decay(0.4, seed=3))
        out = augment_rir(h, 1.0, np.inf)
        assert out.taps.samples[0] == 1.0
        interior = slice(1, len(h.taps) - 64)
        assert np.max(np.abs(out.taps.samples[interior] - h.taps.samples[interior])) < 1e-5

    def test_extra_decay_shortens_rt60(self):
        h = normalize_first_tap(synthetic_decay(0.6, seed=4))
        base = estimate_rt60(h)
        shorter = estimate_rt60(augment_rir(h, 1.0, 0.05))
        assert shorter < base

    def test_resampling_scales_echo_delay(self):
        taps = np.zeros(2000)
        taps[0] = 1.0
        taps[1000] = 0.5
        h = Rir(AudioBuffer(taps, FS))
        out = augment_rir(h, 1.1, np.inf).taps.samples
        echo = np.argmax(np.abs(out[100:])) + 100
        assert abs(echo - 1100) <= 2


class TestPartialDereverb:
    def test_already_short_unchanged(self):
        h = normalize_first_tap(synthetic_decay(0.15, seed=5))
        out = make_partial_dereverb_target(h)
        assert out is h

    def test_long_tail_shortened(self):
        h = normalize_first_tap(synthetic_decay(0.6, seed=6))
        out = make_partial_dereverb_target(h)
        assert estimate_rt60(out) < 0.2

    def test_head_bitwise_identical(self):
        h = normalize_first_tap(synthetic_decay(0.6, seed=7))
        out = make_partial_dereverb_target(h)
        keep = int(0.020 * FS)
        assert np.array_equal(out.taps.samples[:keep], h.taps.samples[:keep])


class TestReverberantMix:
    def _signals(self, seed=0, n=FS):
        rng = np.random.default_rng(seed)
        s = AudioBuffer(rng.normal(size=n) * 0.1)
        noise = AudioBuffer(rng.normal(size=n) * 0.05)
        return s, noise

    def _rir(self, seed=1):
        return normalize_first_tap(synthetic_decay(0.3, seed=seed, duration_s=0.5))

    def test_zeroed_tail_degenerates_to_dry_mix(self):
        s, n = self._signals()
        h = self._rir()
        params = ReverbMixParams(alpha_db=-np.inf, beta_db=-np.inf, reverb_noise_prob=0.0)
        x, fg, bg, _ = reverberant_mix(s, n, h, params, np.random.default_rng(0))
        assert np.max(np.abs(x.samples - (s.samples + n.samples))) < 1e-12
        assert np.max(np.abs(fg.samples - s.samples)) < 1e-12

    def test_unit_impulse_rir(self):
        s, n = self._signals(seed=2)
        h = Rir(AudioBuffer(np.array([1.0]), FS))
        params = ReverbMixParams(alpha_db=-3.0, beta_db=-6.0, reverb_noise_prob=1.0)
        x, fg, bg, _ = reverberant_mix(s, n, h, params, np.random.default_rng(0))
        assert np.array_equal(x.samples, s.samples + n.samples)

    def test_labels_additive(self):
        s, n = self._signals(seed=3)
        h = self._rir(seed=4)
        params = ReverbMixParams(alpha_db=-8.0, beta_db=-12.0, reverb_noise_prob=1.0)
        for mode in ("no-dereverb", "partial"):
            x, fg, bg, _ = reverberant_mix(s, n, h, params, np.random.default_rng(1), mode)
            assert np.max(np.abs(fg.samples + bg.samples - x.samples)) < 1e-9

    def test_linear_in_speech(self):
        s, n = self._signals(seed=5)
        h = self._rir(seed=6)
        params = ReverbMixParams(alpha_db=-5.0, beta_db=-5.0, reverb_noise_prob=0.0)
        x1, _, _, _ = reverberant_mix(s, n, h, params, np.random.default_rng(2))
        s2 = AudioBuffer(2.0 * s.samples)
        x2, _, _, _ = reverberant_mix(s2, n, h, params, np.random.default_rng(2))
        lhs = x2.samples - n.samples
        rhs = 2.0 * (x1.samples - n.samples)
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_partial_mode_keeps_direct_path_alignment(self):
        s, n = self._signals(seed=7)
        h = self._rir(seed=8)
        params = ReverbMixParams(alpha_db=-3.0, beta_db=-3.0, reverb_noise_prob=0.0)
        _, fg_full, _, _ = reverberant_mix(s, n, h, params, np.random.default_rng(3),
                                           "no-dereverb")
        _, fg_partial, _, _ = reverberant_mix(s, n, h, params, np.random.default_rng(3),
                                              "partial")

        def peak_lag(a, b):
            corr = np.correlate(a[:4000], b[:4000], mode="full")
            return np.argmax(corr)

        assert peak_lag(fg_full.samples, s.samples) == peak_lag(fg_partial.samples, s.samples)

    def test_rir_longer_than_signal_rejected(self):
        s = AudioBuffer(np.zeros(100))
        n = AudioBuffer(np.zeros(100))
        h = Rir(AudioBuffer(np.concatenate([[1.0], np.zeros(500)]), FS))
        with pytest.raises(ValueError, match="longer"):
            reverberant_mix(s, n, h, ReverbMixParams(-5, -5), np.random.default_rng(0))

    def test_noise_reverb_branch_probability(self):
        s, n = self._signals(seed=9)
        h = self._rir(seed=10)
        params = ReverbMixParams(alpha_db=-5.0, beta_db=-20.0, reverb_noise_prob=0.6)
        rng = np.random.default_rng(11)
        wet = 0
        for _ in range(200):
            x, fg, bg, _ = reverberant_mix(s, n, h, params, rng)
            # the dry branch leaves bg equal to n up to label arithmetic
            if np.max(np.abs(bg.samples - n.samples)) > 1e-9:
                wet += 1
        assert 90 <= wet <= 150  # 0.6 +/- generous binomial slack


class TestLibrary:
    def test_generate_and_load(self, tmp_path):
        records = generate_rir_library(tmp_path, count=3, seed=1, length_s=0.4)
        assert len(records) == 3
        assert all(r["rt60_s"] < 0.8 for r in records)
        rirs = load_rir_library(tmp_path)
        assert len(rirs) == 3
        for rir in rirs:
            assert rir.taps.samples[0] == pytest.approx(1.0, abs=1e-6)

    def test_sample_room_ranges(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            room = sample_room(rng)
            assert all(2.0 <= d <= 10.0 for d in room.dimensions_m)
            assert 0.5 <= room.reflection_coeff <= 1.5
