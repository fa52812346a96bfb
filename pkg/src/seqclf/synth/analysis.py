"""Signal measurements that certify attribute presence in a rendered clip.

Nothing here reads generator parameters; every decision comes from the
samples plus the task kind.  Shared code is limited to generic DSP (framing,
filters, FFT).
"""

from __future__ import annotations

import numpy as np
from scipy import signal

from ..audio import frame_signal
from .labels import APPLICABLE, LABELS, TaskKind, check_label

_EPS = 1e-20

# decision thresholds, fixed from clean and injected calibration clips
THRESHOLDS = {
    "vp_decay_db": 8.0,
    "unsteady_db": 0.9,
    "vp_loudness_var_db": 1.2,
    "tremor_db": 1.0,
    "flutter_db": 0.9,
    "pitch_spread": 0.032,
    "hoarse_ncc": 0.93,
    "breathy_db": -38.0,
    "strained_vp_db": -20.5,
    "strained_syl_db": -14.5,
    "syl_decay_db": 8.0,
    "syl_loudness_var_db": 1.4,
    "breakdown_dev": 0.3,
    "segmentation_gap_s": 0.12,
    "distortion_s": 0.025,
}
# median active syllable duration (s): below first -> rapid, above second -> slow
RATE_BOUNDS = {TaskKind.AMR: (0.165, 0.285), TaskKind.SMR: (0.19, 0.33)}


def _frame_db(x, sr, win_s, hop_s):
    frames = frame_signal(x, int(win_s * sr), int(hop_s * sr))
    return 10 * np.log10(np.mean(frames * frames, axis=1) + _EPS)


def _band_energies(x, sr, win_s, hop_s, bands):
    win, hop = int(win_s * sr), int(hop_s * sr)
    frames = frame_signal(x, win, hop) * np.hanning(win)
    nfft = 1 << int(np.ceil(np.log2(win)))
    p = np.abs(np.fft.rfft(frames, nfft, axis=1)) ** 2
    f = np.fft.rfftfreq(nfft, 1.0 / sr)
    return [p[:, (f >= lo) & (f < hi)].sum(axis=1) + _EPS for lo, hi in bands]


def _linear_fit(t, y):
    slope, icpt = np.polyfit(t, y, 1)
    return slope, y - (slope * t + icpt)


def envelope_band_rms(env_db, rate_hz, band):
    """RMS (dB) of the detrended level contour restricted to ``band`` (Hz)."""
    t = np.arange(env_db.size) / rate_hz
    _, resid = _linear_fit(t, env_db)
    w = np.hanning(resid.size)
    nfft = 1 << int(np.ceil(np.log2(resid.size * 4)))
    spec = np.abs(np.fft.rfft(resid * w, nfft)) ** 2
    f = np.fft.rfftfreq(nfft, 1.0 / rate_hz)
    sel = (f >= band[0]) & (f <= band[1])
    # Parseval on the windowed signal, zero padding compensated by nfft
    ms = 2.0 * spec[sel].sum() / (nfft * np.sum(w * w))
    return float(np.sqrt(ms))


def envelope_peak_ratio(env_db, rate_hz, band, reference=(0.5, 20.0)):
    """Peak envelope power in ``band`` over the median power in ``reference``."""
    t = np.arange(env_db.size) / rate_hz
    _, resid = _linear_fit(t, env_db)
    f, p = signal.periodogram(resid, fs=rate_hz, window="hann", nfft=1 << int(np.ceil(np.log2(resid.size * 4))))
    ref = p[(f >= reference[0]) & (f <= reference[1])]
    return float(p[(f >= band[0]) & (f <= band[1])].max() / (np.median(ref) + _EPS))


def _pitch_track(x, sr, frame_s=0.04, hop_s=0.02, fmin=60.0, fmax=400.0):
    """Per-frame (f0, normalized cross-correlation at the chosen lag); NaN where unvoiced."""
    lp = signal.sosfiltfilt(signal.butter(6, 1000.0, fs=sr, output="sos"), x)
    m = int(frame_s * sr)
    hop = int(hop_s * sr)
    lag_lo, lag_hi = int(sr / fmax), int(sr / fmin)
    n_frames = (lp.size - m - lag_hi) // hop
    f0 = np.full(max(n_frames, 0), np.nan)
    ncc = np.full(max(n_frames, 0), np.nan)
    level = 10 * np.log10(np.mean(lp * lp) + _EPS)
    lags = np.arange(lag_lo, lag_hi + 1)
    for i in range(n_frames):
        s = i * hop
        seg = lp[s : s + m]
        e0 = np.dot(seg, seg)
        if 10 * np.log10(e0 / m + _EPS) < level - 20:
            continue
        win = np.lib.stride_tricks.sliding_window_view(lp[s + lag_lo : s + lag_hi + m], m)
        num = win @ seg
        e1 = np.einsum("ij,ij->i", win, win)
        r = num / np.sqrt(e0 * e1 + _EPS)
        best = int(np.argmax(r))
        # the shortest lag that is nearly as good avoids octave-down errors
        cand = np.nonzero(r >= 0.9 * r[best])[0]
        peaks = [c for c in cand if 0 < c < r.size - 1 and r[c] >= r[c - 1] and r[c] >= r[c + 1]]
        k = peaks[0] if peaks else best
        lag = float(lags[k])
        if 0 < k < r.size - 1:
            den = r[k - 1] - 2 * r[k] + r[k + 1]
            if den < 0:
                lag += 0.5 * (r[k - 1] - r[k + 1]) / den
        if r[k] > 0.3:
            f0[i] = sr / lag
            ncc[i] = r[k]
    return f0, ncc


def _syllables(x, sr, hop_s=0.005, win_s=0.01):
    """Active runs [(start_s, end_s)] of the level contour, short dips merged."""
    env = _frame_db(x, sr, win_s, hop_s)
    thr = np.percentile(env, 99) - 45.0
    active = env > thr
    runs = []
    i = 0
    while i < active.size:
        if active[i]:
            j = i
            while j < active.size and active[j]:
                j += 1
            runs.append([i, j])
            i = j
        else:
            i += 1
    merged = []
    for r in runs:
        if merged and (r[0] - merged[-1][1]) * hop_s < 0.02:
            merged[-1][1] = r[1]
        else:
            merged.append(r)
    out = [(a * hop_s, b * hop_s + win_s) for a, b in merged if (b - a) * hop_s >= 0.02]
    return out, env


def measure(w, task):
    """All scalar measurements used by :func:`verify_attribute`."""
    task = TaskKind.parse(task)
    x = np.asarray(w.samples, dtype=np.float64)
    sr = w.sample_rate_hz
    m = {}
    lo, mid, hi, low_only = _band_energies(
        x, sr, 0.02, 0.005, [(80, 1000), (1300, 3100), (4500, 7500), (0, 1300)]
    )
    tot = _frame_db(x, sr, 0.02, 0.005)
    high_all = _band_energies(x, sr, 0.02, 0.005, [(2500, 7500)])[0]
    voiced = (tot > np.percentile(tot, 95) - 30) & (lo > 4 * high_all)
    if voiced.sum() < 10:
        voiced = tot > np.percentile(tot, 95) - 30
    m["breathy_db"] = float(np.median(10 * np.log10(hi[voiced] / (lo[voiced] + low_only[voiced]))))
    m["strained_db"] = float(np.median(10 * np.log10(mid[voiced] / low_only[voiced])))

    if task == TaskKind.VP:
        rate = 100.0
        env = _frame_db(x, sr, 0.025, 0.01)
        trim = int(0.2 * rate)
        env = env[trim:-trim]
        t = np.arange(env.size) / rate
        slope, _ = _linear_fit(t, env)
        m["decay_db"] = float(-slope * w.duration_s)
        m["unsteady_db"] = envelope_band_rms(env, rate, (0.05, 0.85))
        m["loudness_var_db"] = envelope_band_rms(env, rate, (1.4, 3.9))
        m["tremor_db"] = envelope_band_rms(env, rate, (4.2, 7.5))
        m["flutter_db"] = envelope_band_rms(env, rate, (7.8, 12.5))
        f0, ncc = _pitch_track(x, sr)
        ok = np.isfinite(f0)
        if ok.sum() >= 25:
            # octave errors fall outside +-30% of the clip median and are dropped
            centre = np.median(f0[ok])
            ok &= (f0 > 0.75 * centre) & (f0 < 1.33 * centre)
        if ok.sum() >= 25:
            lf = signal.medfilt(np.log(f0[ok]), 11)
            lf = lf[5:-5]
            m["pitch_spread"] = float(1.4826 * np.median(np.abs(lf - np.median(lf))))
            m["hoarse_ncc"] = float(np.median(ncc[ok]))
        else:
            m["pitch_spread"], m["hoarse_ncc"] = 0.0, 1.0
        return m

    syl, env = _syllables(x, sr)
    m["n_syllables"] = len(syl)
    if len(syl) < 3:
        m.update(active_s=np.nan, gap_s=np.nan, gap_ratio=np.nan, max_dev=0.0, decay_db=0.0,
                 loudness_var_db=0.0, onset_noise_s=0.0)
        return m
    d = np.array([b - a for a, b in syl])
    g = np.array([syl[i + 1][0] - syl[i][1] for i in range(len(syl) - 1)])
    med = float(np.median(d))
    m["active_s"] = med
    m["gap_s"] = float(np.median(g))
    m["gap_ratio"] = float(np.median(g) / med)
    m["max_dev"] = float(np.max(np.abs(d / med - 1)))

    # level of each syllable: plateau of its second half, past any burst or frication
    hop = 0.005
    # short frames for frication: 4-7.5 kHz at least 10 dB over 80-1000 Hz
    fine_hop = 0.00125
    f_lo, f_hi = _band_energies(x, sr, 0.005, fine_hop, [(80, 1000), (4000, 7500)])
    f_db = 10 * np.log10(f_lo + f_hi)
    noisy = f_hi > 10 * f_lo
    levels, centres, onset_noise = [], [], []
    for a, b in syl:
        s = int((a + 0.5 * (b - a)) / hop)
        e = max(int((b - 0.01) / hop), s + 1)
        levels.append(np.max(env[s:e]))
        centres.append(0.5 * (a + b))
        i0, i1 = int(a / fine_hop), int(b / fine_hop)
        # edge frames near the noise floor look noisy too; require real energy
        loud = f_db[i0:i1] > f_db[i0:i1].max() - 25
        onset_noise.append(np.count_nonzero(noisy[i0:i1] & loud) * fine_hop)
    levels, centres = np.array(levels), np.array(centres)
    slope, resid = _linear_fit(centres, levels)
    m["decay_db"] = float(-slope * w.duration_s)
    # trimmed spread: one very short syllable must not read as variability
    keep = np.sort(np.abs(resid))[: resid.size - max(1, resid.size // 10)]
    m["loudness_var_db"] = float(np.sqrt(np.mean(keep**2)))
    m["onset_noise_s"] = float(np.median(onset_noise))
    return m


def decide(m, task):
    """Map measurements to a {label: bool} dict over all 14 labels."""
    task = TaskKind.parse(task)
    T = THRESHOLDS
    out = dict.fromkeys(LABELS, False)
    out["breathy"] = m["breathy_db"] > T["breathy_db"]
    out["strained"] = m["strained_db"] > T["strained_vp_db" if task == TaskKind.VP else "strained_syl_db"]
    if task == TaskKind.VP:
        out["loudness_decay"] = m["decay_db"] > T["vp_decay_db"]
        out["unsteady"] = m["unsteady_db"] > T["unsteady_db"]
        out["abnormal_loudness_variability"] = m["loudness_var_db"] > T["vp_loudness_var_db"]
        out["tremor"] = m["tremor_db"] > T["tremor_db"]
        out["flutter"] = m["flutter_db"] > T["flutter_db"]
        out["abnormal_pitch_variability"] = m["pitch_spread"] > T["pitch_spread"]
        out["hoarse_harsh"] = m["hoarse_ncc"] < T["hoarse_ncc"]
    elif m["n_syllables"] >= 3:
        fast, slow = RATE_BOUNDS[task]
        out["rapid_rate"] = m["active_s"] < fast
        out["slow_rate"] = m["active_s"] > slow
        out["syllable_segmentation"] = m["gap_s"] >= T["segmentation_gap_s"]
        out["irregular_articulatory_breakdowns"] = m["max_dev"] > T["breakdown_dev"]
        out["loudness_decay"] = m["decay_db"] > T["syl_decay_db"]
        out["abnormal_loudness_variability"] = m["loudness_var_db"] > T["syl_loudness_var_db"]
        out["distortions"] = m["onset_noise_s"] > T["distortion_s"]
    allowed = APPLICABLE[task]
    return {k: bool(v) and k in allowed for k, v in out.items()}


def analyze(w, task):
    return decide(measure(w, task), task)


def verify_attribute(w, attr, task):
    """True when ``attr`` is acoustically present in ``w`` (always False if inapplicable)."""
    check_label(attr)
    return analyze(w, task)[attr]
