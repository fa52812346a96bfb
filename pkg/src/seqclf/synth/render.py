"""Source-filter rendering of the three clinical tasks with injectable attributes.

A :class:`Take` is the symbolic description of one recording: task, speaker,
duration, render seed and the parameters of every injected attribute.
``inject_attribute`` only draws parameters; ``render`` turns a take into
samples.  Amplitude-type attributes become gain tracks that multiply in the
time domain, source-type attributes change the pulse train, and syllable-type
attributes edit the syllable event list before layout.

Every random gain track is linearly detrended (in dB) before use so that
only ``loudness_decay`` changes the overall level slope.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from ..audio import Waveform
from ..checksum import fnv1a64
from ..errors import ConfigurationError
from .labels import APPLICABLE, EXCLUSIVE, TaskKind, check_label

SR = 16000
DURATION_RANGE = {TaskKind.VP: (4.0, 12.0), TaskKind.AMR: (4.0, 10.0), TaskKind.SMR: (4.0, 10.0)}
BASE_RATE_HZ = {TaskKind.AMR: 4.0, TaskKind.SMR: 3.5}
RATE_FACTOR = {"rapid_rate": 1.5, "slow_rate": 0.6}
CLOSURE_S = 0.06  # silent closure between syllables; the vowel absorbs rate changes
REF_RMS = 0.05
FLOOR_DB = -65.0

VOWEL_FORMANTS = {  # (centre Hz, bandwidth Hz)
    TaskKind.VP: ((730, 120), (1090, 150), (2440, 220)),
    TaskKind.AMR: ((640, 120), (1190, 150), (2390, 220)),
}
BURST_BANDS = ((400, 1500), (3000, 5500), (1500, 2800))  # puh, tuh, kuh
FRICATION_BAND = (3000, 6000)
BREATH_BAND = (3500, 7500)


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    base_f0_hz: float
    source_pole: float  # one-pole glottal tilt; larger means darker voice
    loudness_db: float
    rate_factor: float
    formant_scale: float
    burst_ms: float

    @classmethod
    def from_id(cls, speaker_id):
        rng = np.random.default_rng(fnv1a64(str(speaker_id).encode("utf-8")))
        return cls(
            speaker_id=str(speaker_id),
            base_f0_hz=float(np.exp(rng.uniform(np.log(80.0), np.log(250.0)))),
            source_pole=float(rng.uniform(0.88, 0.95)),
            loudness_db=float(rng.uniform(-3.0, 3.0)),
            rate_factor=float(rng.uniform(0.9, 1.1)),
            formant_scale=float(rng.uniform(0.97, 1.03)),
            burst_ms=float(rng.uniform(10.0, 15.0)),
        )


@dataclass(frozen=True)
class Take:
    task: TaskKind
    profile: SpeakerProfile
    duration_s: float
    seed: int
    effects: dict = field(default_factory=dict)

    @property
    def labels(self):
        return frozenset(self.effects)


def _check_duration(task, duration):
    lo, hi = DURATION_RANGE[task]
    if not lo <= duration <= hi:
        raise ConfigurationError(f"{task.value} duration must lie in [{lo}, {hi}] s, got {duration}")


def new_take(task, profile, duration_s, seed):
    task = TaskKind.parse(task)
    _check_duration(task, float(duration_s))
    return Take(task, profile, float(duration_s), int(seed), {})


# parameter draws, one per attribute


def _draw(attr, rng):
    u = rng.uniform
    if attr == "loudness_decay":
        return {"drop_db": u(15.0, 20.0)}
    if attr == "tremor":
        return {"freq_hz": u(4.5, 6.5), "depth": u(0.35, 0.45), "phase": u(0, 2 * np.pi)}
    if attr == "flutter":
        return {"freq_hz": u(8.5, 11.5), "depth": u(0.25, 0.30), "phase": u(0, 2 * np.pi)}
    if attr == "unsteady":
        return {"rms_db": u(2.5, 3.5), "freqs": u(0.2, 0.5, 3).tolist(), "phases": u(0, 2 * np.pi, 3).tolist(),
                "weights": u(0.5, 1.0, 3).tolist()}
    if attr == "abnormal_loudness_variability":
        return {"rms_db": u(3.0, 4.5), "noise_seed": int(rng.integers(2**31))}
    if attr == "abnormal_pitch_variability":
        return {"sigma": u(0.07, 0.10), "noise_seed": int(rng.integers(2**31))}
    if attr == "hoarse_harsh":
        return {"jitter": u(0.04, 0.05), "shimmer_db": u(1.5, 2.0), "noise_seed": int(rng.integers(2**31))}
    if attr == "breathy":
        return {"level_db": u(-18.0, -14.0), "noise_seed": int(rng.integers(2**31))}
    if attr == "strained":
        return {"preemph": u(0.92, 0.95), "h1_cut": u(1.5, 1.8)}
    if attr in RATE_FACTOR:
        return {"factor": RATE_FACTOR[attr]}
    if attr == "syllable_segmentation":
        return {"gap_lo_s": 0.15, "gap_hi_s": 0.22, "noise_seed": int(rng.integers(2**31))}
    if attr == "irregular_articulatory_breakdowns":
        return {"fraction": u(0.3, 0.4), "noise_seed": int(rng.integers(2**31))}
    if attr == "distortions":
        return {"lo_s": 0.04, "hi_s": 0.08, "level_db": -6.0, "noise_seed": int(rng.integers(2**31))}
    raise ConfigurationError(f"no generator for attribute {attr!r}")  # pragma: no cover


def inject_attribute(take: Take, attr, seed):
    """Return a copy of ``take`` with ``attr`` injected; parameters come from ``seed``."""
    check_label(attr)
    if attr not in APPLICABLE[take.task]:
        raise ConfigurationError(f"attribute {attr!r} does not apply to task {take.task.value}")
    for group in EXCLUSIVE:
        if attr in group and any(other in take.effects for other in group if other != attr):
            raise ConfigurationError(f"attributes {group} are mutually exclusive")
    params = _draw(attr, np.random.default_rng(seed))
    return dataclasses.replace(take, effects={**take.effects, attr: params})


# DSP helpers


def _band_noise(rng, n, band, order=6):
    sos = signal.butter(order, band, btype="bandpass", fs=SR, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n + 2048))[2048:]
    return x / np.sqrt(np.mean(x * x))


def _smooth_noise(rng, n_out, band_hz, rate_hz):
    """Band-limited unit-RMS noise sampled at ``rate_hz``, linearly detrended."""
    m = max(int(n_out), 8)
    spec = np.fft.rfft(rng.standard_normal(4 * m))
    f = np.fft.rfftfreq(4 * m, 1.0 / rate_hz)
    spec[(f < band_hz[0]) | (f > band_hz[1])] = 0
    x = np.fft.irfft(spec, 4 * m)[:m]
    return _unit_rms(_detrend(x))


def _detrend(x):
    t = np.arange(len(x), dtype=np.float64)
    return x - np.polyval(np.polyfit(t, x, 1), t)


def _unit_rms(x):
    r = np.sqrt(np.mean(x * x))
    return x / r if r > 0 else x


def _upsample(track, n):
    return np.interp(np.linspace(0, len(track) - 1, n), np.arange(len(track)), track)


def _pulse_train(times, amps, n, cutoff=3900.0, half=32):
    """Band-limited impulses at fractional sample positions (windowed sinc)."""
    y = np.zeros(n + 2 * half + 2)
    base = np.floor(times).astype(np.int64)
    taps = np.arange(-half, half + 1)
    idx = base[:, None] + taps[None, :]
    d = idx - times[:, None]
    w = np.kaiser(2 * half + 1, 8.0)[None, :]
    k = 2 * cutoff / SR
    vals = k * np.sinc(k * d) * w * amps[:, None]
    np.add.at(y, idx + half, vals)
    return y[half : half + n]


def _voiced(take, f0_track, jitter=None, shimmer=None):
    """Normalized (unit smoothed RMS) voiced signal following ``f0_track`` (per sample)."""
    n = f0_track.size
    cycles = np.cumsum(f0_track) / SR
    k = np.arange(1, int(np.floor(cycles[-1])) + 1)
    times = np.interp(k, cycles, np.arange(n, dtype=np.float64))
    amps = np.ones(times.size)
    if jitter is not None:
        rng, sigma = jitter
        periods = np.diff(times)
        periods = periods * (1.0 + sigma * np.clip(rng.standard_normal(periods.size), -2.5, 2.5))
        times = np.concatenate([times[:1], times[0] + np.cumsum(periods)])
        times = times[times < n - 1]
        amps = amps[: times.size]
    if shimmer is not None:
        rng, sigma_db = shimmer
        amps = amps * 10 ** (sigma_db * np.clip(rng.standard_normal(amps.size), -2.5, 2.5) / 20)
    x = _pulse_train(times, amps, n)
    p = take.profile
    x = signal.lfilter([1.0], [1.0, -p.source_pole], x)
    x = signal.sosfilt(signal.butter(2, 50.0, btype="highpass", fs=SR, output="sos"), x)
    if "strained" in take.effects:
        st = take.effects["strained"]
        # second-order pre-emphasis: a steep tilt boost toward the F2/F3 region
        x = signal.lfilter(np.convolve([1.0, -st["preemph"]], [1.0, -st["preemph"]]), [1.0], x)
        cut = st["h1_cut"] * float(np.median(f0_track))
        x = signal.sosfilt(signal.butter(2, cut, btype="highpass", fs=SR, output="sos"), x)
    vowel = VOWEL_FORMANTS[TaskKind.VP if take.task == TaskKind.VP else TaskKind.AMR]
    for fc, bw in vowel:
        r = np.exp(-np.pi * bw / SR)
        theta = 2 * np.pi * fc * p.formant_scale / SR
        a = [1.0, -2 * r * np.cos(theta), r * r]
        x = signal.lfilter([sum(a)], a, x)
    x = signal.sosfilt(signal.butter(8, 3900.0, fs=SR, output="sos"), x)
    return x / _smoothed_rms(x, int(0.05 * SR))


def _smoothed_rms(x, win):
    c = np.concatenate([[0.0], np.cumsum(x * x)])
    half = win // 2
    lo = np.clip(np.arange(x.size) - half, 0, x.size)
    hi = np.clip(np.arange(x.size) + half + 1, 0, x.size)
    return np.sqrt((c[hi] - c[lo]) / (hi - lo) + 1e-12)


def _raised_cosine_gate(n, on, off):
    g = np.ones(n)
    on, off = min(on, n // 2), min(off, n // 2)
    if on:
        g[:on] = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, on))
    if off:
        g[n - off :] = 0.5 + 0.5 * np.cos(np.linspace(0, np.pi, off))
    return g


def _f0_track(take, n, rng):
    t = np.arange(n) / SR
    p = take.profile
    f0 = p.base_f0_hz * (1 + 0.003 * np.sin(2 * np.pi * rng.uniform(1.0, 2.0) * t + rng.uniform(0, 2 * np.pi)))
    pv = take.effects.get("abnormal_pitch_variability")
    if pv is not None:
        walk = _smooth_noise(np.random.default_rng(pv["noise_seed"]), int(take.duration_s * 100) + 1, (0.3, 1.5), 100.0)
        # scale by the robust spread so heavy-tailed draws still move the bulk of the track
        walk = walk / (1.4826 * np.median(np.abs(walk - np.median(walk))))
        f0 = f0 * np.exp(pv["sigma"] * _upsample(walk, n))
    return f0


def _source_options(take):
    h = take.effects.get("hoarse_harsh")
    if h is None:
        return {}
    rng = np.random.default_rng(h["noise_seed"])
    return {"jitter": (rng, h["jitter"]), "shimmer": (rng, h["shimmer_db"])}


# task renderers


def _render_vp(take, rng):
    n = int(round(take.duration_s * SR))
    t = np.arange(n) / SR
    x = _voiced(take, _f0_track(take, n, rng), **_source_options(take))
    fx = take.effects
    gain_db = np.zeros(n)
    if "loudness_decay" in fx:
        gain_db -= fx["loudness_decay"]["drop_db"] * t / take.duration_s
    if "unsteady" in fx:
        u = fx["unsteady"]
        env_t = np.arange(int(take.duration_s * 100) + 1) / 100.0
        wander = sum(w * np.sin(2 * np.pi * f * env_t + ph) for f, ph, w in zip(u["freqs"], u["phases"], u["weights"]))
        gain_db += u["rms_db"] * _upsample(_unit_rms(_detrend(wander)), n)
    if "abnormal_loudness_variability" in fx:
        v = fx["abnormal_loudness_variability"]
        wobble = _smooth_noise(np.random.default_rng(v["noise_seed"]), int(take.duration_s * 100) + 1, (1.8, 3.5), 100.0)
        gain_db += v["rms_db"] * _upsample(wobble, n)
    gain = 10 ** (gain_db / 20)
    for name in ("tremor", "flutter"):
        if name in fx:
            m = fx[name]
            gain = gain * (1 + m["depth"] * np.sin(2 * np.pi * m["freq_hz"] * t + m["phase"]))
    ramp = int(0.05 * SR)
    envelope = gain * _raised_cosine_gate(n, ramp, ramp)
    out = x * envelope
    if "breathy" in fx:
        b = fx["breathy"]
        out = out + 10 ** (b["level_db"] / 20) * _band_noise(np.random.default_rng(b["noise_seed"]), n, BREATH_BAND) * envelope
    return out


def syllable_layout(take):
    """Syllable events [(onset_s, active_s, kind)] that fit inside the clip."""
    fx = take.effects
    rate = BASE_RATE_HZ[take.task] * take.profile.rate_factor
    for name in RATE_FACTOR:
        if name in fx:
            rate *= fx[name]["factor"]
    period = 1.0 / rate
    active, gap = period - CLOSURE_S, CLOSURE_S
    cap = int(np.ceil(take.duration_s / (active * 0.4 + gap))) + 2
    actives = np.full(cap, active)
    gaps = np.full(cap, gap)
    seg = fx.get("syllable_segmentation")
    if seg is not None:
        gaps = gaps + np.random.default_rng(seg["noise_seed"]).uniform(seg["gap_lo_s"], seg["gap_hi_s"], cap)

    def fit(actives):
        onsets, t = [], gap / 2
        for a, g in zip(actives, gaps):
            if t + a > take.duration_s - gap / 2:
                break
            onsets.append(t)
            t += a + g
        return onsets

    bd = fx.get("irregular_articulatory_breakdowns")
    if bd is not None:
        rng = np.random.default_rng(bd["noise_seed"])
        n_fit = len(fit(actives))
        count = min(max(1, int(round(bd["fraction"] * n_fit))), max(1, (n_fit - 1) // 2))
        chosen = rng.choice(np.arange(1, max(n_fit - 1, 2)), size=count, replace=False)
        for i in chosen:
            actives[i] *= rng.uniform(0.45, 0.6) if rng.random() < 0.6 else rng.uniform(1.45, 1.7)
        # a lengthened syllable can push later ones out; shorten until every chosen one still fits
        while sum(i < len(fit(actives)) for i in chosen) < count:
            longest = max(chosen, key=lambda i: actives[i])
            actives[longest] = active * rng.uniform(0.45, 0.6)
    onsets = fit(actives)
    kinds = [(i % 3) if take.task == TaskKind.SMR else 0 for i in range(len(onsets))]
    return [(o, float(actives[i]), kinds[i]) for i, o in enumerate(onsets)]


def _render_syllables(take, rng):
    n = int(round(take.duration_s * SR))
    t = np.arange(n) / SR
    fx = take.effects
    events = syllable_layout(take)
    x = _voiced(take, _f0_track(take, n, rng))
    burst_s = take.profile.burst_ms / 1000
    bursts = [_band_noise(np.random.default_rng([take.seed, 7, k]), n, band) for k, band in enumerate(BURST_BANDS)]
    dist = fx.get("distortions")
    fric_noise = None
    if dist is not None:
        d_rng = np.random.default_rng(dist["noise_seed"])
        fric_noise = _band_noise(d_rng, n, FRICATION_BAND)
    levels = np.zeros(len(events))
    lv = fx.get("abnormal_loudness_variability")
    if lv is not None and len(events) > 2:
        g = np.random.default_rng(lv["noise_seed"]).standard_normal(len(events))
        levels = lv["rms_db"] * _unit_rms(_detrend(g))
    bd = fx.get("irregular_articulatory_breakdowns")
    burst_jitter = np.zeros(len(events))
    if bd is not None:
        burst_jitter = np.random.default_rng([bd["noise_seed"], 1]).uniform(-6, 6, len(events))

    vowel_gate = np.zeros(n)
    noise = np.zeros(n)
    r8 = int(0.008 * SR)
    for i, (onset, active, kind) in enumerate(events):
        a = int(round(onset * SR))
        e = int(round((onset + active) * SR))
        b = a + int(round(burst_s * SR))
        fric = 0
        if dist is not None:
            fric = int(round(min(d_rng.uniform(dist["lo_s"], dist["hi_s"]), 0.5 * (active - burst_s)) * SR))
        v0 = b + fric
        level = 10 ** (levels[i] / 20)
        vowel_gate[v0:e] = level * _raised_cosine_gate(e - v0, r8, r8)
        seg = np.arange(b - a)
        benv = np.exp(-2.0 * seg / max(b - a, 1)) * _raised_cosine_gate(b - a, 16, 16)
        noise[a:b] += level * 10 ** ((-3.0 + burst_jitter[i]) / 20) * benv * bursts[kind][a:b]
        if fric:
            fenv = _raised_cosine_gate(fric, 80, 80)
            noise[b:v0] += level * 10 ** (dist["level_db"] / 20) * fenv * fric_noise[b:v0]
    out = x * vowel_gate
    if "breathy" in fx:
        br = fx["breathy"]
        out = out + 10 ** (br["level_db"] / 20) * _band_noise(np.random.default_rng(br["noise_seed"]), n, BREATH_BAND) * vowel_gate
    out = out + noise
    if "loudness_decay" in fx:
        out = out * 10 ** (-fx["loudness_decay"]["drop_db"] * t / take.duration_s / 20)
    return out


def render(take: Take) -> Waveform:
    rng = np.random.default_rng([take.seed, 0])
    body = _render_vp(take, rng) if take.task == TaskKind.VP else _render_syllables(take, rng)
    ref = REF_RMS * 10 ** (take.profile.loudness_db / 20)
    out = ref * body + ref * 10 ** (FLOOR_DB / 20) * np.random.default_rng([take.seed, 1]).standard_normal(body.size)
    peak = np.abs(out).max()
    if peak > 0.95:
        out *= 0.95 / peak
    return Waveform(out, SR)


def render_base(task, profile, duration_s, seed):
    return render(new_take(task, profile, duration_s, seed))
