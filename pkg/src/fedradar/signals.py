"""Waveform synthesis and spectrogram tooling for the shared 10 MHz channel.

Two emitter families are modelled at complex baseband:

* pulsed radar: bursts of unmodulated rectangular pulses whose width,
  repetition rate, burst length and peak power are drawn from a profile
  (two stock profiles mirror the short-pulse and long-pulse emitter
  classes used throughout the experiments);
* commercial traffic: band-limited Gaussian "OFDM-like" noise occupying
  a 5 MHz slice of the channel, gated by a per-slot on/off duty mask.

Power levels are kept on a relative scale where the additive noise
power is the reference; the mixer rescales the radar waveform so the
peak-power-to-interference-plus-noise ratio hits a requested target.
Spectrograms are magnitude STFTs, optionally log-compressed, area-resized
to the model input grid and min-max normalized per frame. A signal's
time-frequency support is the set of resized cells within a fixed dB
threshold of that signal's own peak cell.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RadarType",
    "CommTech",
    "RadarProfile",
    "CommProfile",
    "TYPE1_RADAR",
    "TYPE2_RADAR",
    "RadarDraw",
    "draw_radar_params",
    "radar_pulse_train",
    "gen_radar_waveform",
    "gen_comm_waveform",
    "mix_at_sinr",
    "stft_magnitude",
    "area_resize",
    "spectrogram_image",
    "support_from_magnitude",
    "label_overlap",
]


class RadarType(enum.Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"


class CommTech(enum.Enum):
    LTE = "lte"
    FIVE_G = "5g"


@dataclass(frozen=True)
class RadarProfile:
    """Draw ranges for a pulsed, unmodulated radar emitter."""

    radar_type: RadarType
    pulse_width_us: tuple[float, float]
    prf_pps: tuple[float, float]
    pulses_per_burst: tuple[int, int]
    peak_power_dbm_per_mhz: tuple[float, float] = (-89.0, -85.0)


# Short pulses (wide spectrum) vs long pulses (narrow spectrum).
TYPE1_RADAR = RadarProfile(RadarType.TYPE1, (0.5, 2.5), (1000.0, 1100.0), (15, 20))
TYPE2_RADAR = RadarProfile(RadarType.TYPE2, (13.0, 52.0), (1000.0, 2000.0), (10, 20))


# Fraction of the channel bandwidth actually occupied by subcarriers;
# the rest is guard band at both edges (a 5 MHz carrier transmits 4.5 MHz).
OCCUPIED_FRACTION = 0.9


@dataclass(frozen=True)
class CommProfile:
    """One commercial carrier: a 5 MHz band plus a slotted duty mask."""

    tech: CommTech
    bandwidth_mhz: float
    center_offset_mhz: float
    power_dbm: float
    slot_ms: float
    duty_mask: tuple[bool, ...]

    def band_hz(self) -> tuple[float, float]:
        """Channel edges (guard bands included)."""
        half = self.bandwidth_mhz * 1e6 / 2.0
        center = self.center_offset_mhz * 1e6
        return center - half, center + half

    def occupied_hz(self) -> tuple[float, float]:
        """Edges of the transmitted (subcarrier-bearing) band."""
        half = self.bandwidth_mhz * 1e6 * OCCUPIED_FRACTION / 2.0
        center = self.center_offset_mhz * 1e6
        return center - half, center + half


@dataclass(frozen=True)
class RadarDraw:
    """Concrete radar burst parameters after sampling a profile."""

    radar_type: RadarType
    pulse_width_s: float
    prf_pps: float
    num_pulses: int
    peak_power_dbm: float
    carrier_offset_hz: float
    burst_start_s: float
    phase_rad: float

    @property
    def burst_span_s(self) -> float:
        return (self.num_pulses - 1) / self.prf_pps + self.pulse_width_s

    def pulse_starts_s(self) -> np.ndarray:
        return self.burst_start_s + np.arange(self.num_pulses) / self.prf_pps


def draw_radar_params(
    profile: RadarProfile,
    duration_s: float,
    rng: np.random.Generator,
    *,
    carrier_bounds_hz: tuple[float, float],
    pulse_width_bounds_us: tuple[float, float] | None = None,
    max_burst_s: float | None = None,
    burst_window_s: tuple[float, float] | None = None,
) -> RadarDraw:
    """Sample burst parameters from a profile under placement constraints.

    ``max_burst_s`` caps the burst span by trimming the pulse count once
    width and PRF are drawn (at least one pulse always remains);
    ``burst_window_s`` confines the whole burst to a time window.
    """
    wlo, whi = pulse_width_bounds_us or profile.pulse_width_us
    wlo = max(wlo, profile.pulse_width_us[0])
    whi = min(whi, profile.pulse_width_us[1])
    width = rng.uniform(wlo, whi) * 1e-6
    prf = rng.uniform(*profile.prf_pps)
    if width >= 1.0 / prf:
        raise ValueError(f"pulse width {width * 1e6:.2f} us >= pulse repetition interval {1e6 / prf:.2f} us")
    n = int(rng.integers(profile.pulses_per_burst[0], profile.pulses_per_burst[1] + 1))

    window = burst_window_s or (0.0, duration_s)
    avail = min(window[1] - window[0], max_burst_s if max_burst_s is not None else duration_s)
    if avail < width:
        raise ValueError("burst window shorter than one pulse")
    n_fit = int(np.floor((avail - width) * prf)) + 1
    n = max(1, min(n, n_fit))
    span = (n - 1) / prf + width
    start = rng.uniform(window[0], window[1] - span)

    return RadarDraw(
        radar_type=profile.radar_type,
        pulse_width_s=width,
        prf_pps=prf,
        num_pulses=n,
        peak_power_dbm=rng.uniform(*profile.peak_power_dbm_per_mhz),
        carrier_offset_hz=rng.uniform(*carrier_bounds_hz),
        burst_start_s=start,
        phase_rad=rng.uniform(0.0, 2.0 * np.pi),
    )


def radar_pulse_train(draw: RadarDraw, duration_s: float, sample_rate_hz: float) -> np.ndarray:
    """Render a burst as complex baseband; envelope is exactly {0, A}."""
    num = int(round(duration_s * sample_rate_hz))
    y = np.zeros(num, dtype=np.complex128)
    amplitude = np.sqrt(10.0 ** (draw.peak_power_dbm / 10.0))
    width_samps = max(1, int(round(draw.pulse_width_s * sample_rate_hz)))
    for t0 in draw.pulse_starts_s():
        i0 = int(round(t0 * sample_rate_hz))
        i1 = min(i0 + width_samps, num)
        if i0 >= num:
            break
        t = np.arange(i0, i1) / sample_rate_hz
        y[i0:i1] = amplitude * np.exp(1j * (2.0 * np.pi * draw.carrier_offset_hz * t + draw.phase_rad))
    return y


def gen_radar_waveform(
    profile: RadarProfile,
    duration_ms: float,
    sample_rate_hz: float,
    rng: np.random.Generator,
    *,
    carrier_bounds_hz: tuple[float, float] | None = None,
) -> np.ndarray:
    """Draw a burst from the profile and render it over the whole capture."""
    duration_s = duration_ms * 1e-3
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    if duration_s < 1.0 / profile.prf_pps[0]:
        raise ValueError("duration shorter than one pulse repetition interval")
    bounds = carrier_bounds_hz or (-0.4 * sample_rate_hz, 0.4 * sample_rate_hz)
    draw = draw_radar_params(profile, duration_s, rng, carrier_bounds_hz=bounds)
    return radar_pulse_train(draw, duration_s, sample_rate_hz)


def gen_comm_waveform(
    profile: CommProfile,
    duration_ms: float,
    sample_rate_hz: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Band-limited Gaussian carrier gated by the profile's duty mask.

    The spectrum is filled directly: in-band FFT bins get iid complex
    Gaussian weights, everything else stays zero, so out-of-band energy
    comes only from the slot gating edges. Mean power over the ON
    samples is set to the profile's power level; an all-off mask yields
    an exactly zero waveform.
    """
    duration_s = duration_ms * 1e-3
    num = int(round(duration_s * sample_rate_hz))
    if num < 2:
        raise ValueError("duration too short")
    edge_lo, edge_hi = profile.band_hz()
    if edge_lo < -sample_rate_hz / 2 or edge_hi > sample_rate_hz / 2:
        raise ValueError(f"band [{edge_lo / 1e6:.1f}, {edge_hi / 1e6:.1f}] MHz exceeds Nyquist")
    lo, hi = profile.occupied_hz()

    freqs = np.fft.fftfreq(num, d=1.0 / sample_rate_hz)
    in_band = (freqs >= lo) & (freqs <= hi)
    spectrum = np.zeros(num, dtype=np.complex128)
    k = int(in_band.sum())
    spectrum[in_band] = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    y = np.fft.ifft(spectrum)

    mask = np.zeros(num, dtype=bool)
    slot_samps = int(round(profile.slot_ms * 1e-3 * sample_rate_hz))
    for s, on in enumerate(profile.duty_mask):
        if on:
            mask[s * slot_samps : min((s + 1) * slot_samps, num)] = True
    y = np.where(mask, y, 0.0)

    on_power = np.mean(np.abs(y[mask]) ** 2) if mask.any() else 0.0
    if on_power > 0:
        y *= np.sqrt(10.0 ** (profile.power_dbm / 10.0) / on_power)
    return y


def measure_sinr_db(radar: np.ndarray, comm: np.ndarray | None, noise_power: float) -> float:
    """Peak radar power over time-averaged interference-plus-noise power."""
    peak = np.max(np.abs(radar) ** 2)
    denom = noise_power + (np.mean(np.abs(comm) ** 2) if comm is not None else 0.0)
    return 10.0 * np.log10(peak / denom)


def mix_at_sinr(
    radar: np.ndarray,
    comm: np.ndarray | None,
    noise_power: float,
    sinr_db: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Scale the radar to a target SINR, add noise and sum the channel.

    SINR is defined as peak radar power over mean commercial power plus
    noise power (commercial power averaged over the full capture). The
    returned value is re-measured after scaling and lands within 0.1 dB
    of the target by construction.
    """
    comm_power = float(np.mean(np.abs(comm) ** 2)) if comm is not None else 0.0
    denom = comm_power + noise_power
    if denom <= 0:
        raise ValueError("cannot target a finite SINR against zero interference-plus-noise power")
    peak = float(np.max(np.abs(radar) ** 2))
    if peak <= 0:
        raise ValueError("radar waveform has zero peak power")
    scale = np.sqrt(10.0 ** (sinr_db / 10.0) * denom / peak)
    scaled = radar * scale
    n = radar.shape[0]
    noise = np.sqrt(noise_power / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    y = scaled + (comm if comm is not None else 0.0) + noise
    achieved = measure_sinr_db(scaled, comm, noise_power)
    return y, achieved


# ---------------------------------------------------------------------------
# Spectrograms
# ---------------------------------------------------------------------------


def stft_magnitude(y: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Hann-windowed magnitude STFT, rows = FFT bins 0..fft_size-1.

    Returns an [F, T] array; frame t covers samples [t*hop, t*hop+fft_size).
    Windows that contain only zeros are skipped (their magnitude is
    exactly zero), which makes sparse pulse trains cheap to transform.
    """
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if not (1 <= hop <= fft_size):
        raise ValueError(f"hop must lie in [1, fft_size], got {hop}")
    if y.shape[0] < fft_size:
        raise ValueError(f"signal length {y.shape[0]} shorter than one window ({fft_size})")
    window = np.hanning(fft_size)
    frames = np.lib.stride_tricks.sliding_window_view(y, fft_size)[::hop]
    n_frames = frames.shape[0]

    live = np.flatnonzero(frames.any(axis=1))
    if live.size == n_frames:
        return np.abs(np.fft.fft(frames * window, axis=1)).T
    out = np.zeros((n_frames, fft_size))
    if live.size:
        out[live] = np.abs(np.fft.fft(frames[live] * window, axis=1))
    return out.T


def _half_swap_rows(mag: np.ndarray) -> np.ndarray:
    """fftshift along axis 0 for even-length bins, via one concatenate."""
    half = mag.shape[0] // 2
    return np.concatenate((mag[half:], mag[:half]), axis=0)


def area_resize(a: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Downsample by averaging rectangular blocks (uneven blocks allowed)."""
    oh, ow = out_shape
    h, w = a.shape
    if h < oh or w < ow:
        raise ValueError(f"area_resize only downsamples: {a.shape} -> {out_shape}")
    rb = (np.arange(oh + 1) * h) // oh
    cb = (np.arange(ow + 1) * w) // ow
    summed = np.add.reduceat(np.add.reduceat(a, rb[:-1], axis=0), cb[:-1], axis=1)
    counts = np.outer(np.diff(rb), np.diff(cb))
    return summed / counts


def spectrogram_image(
    mag: np.ndarray,
    out_shape: tuple[int, int],
    db_range: float | None = 60.0,
) -> np.ndarray:
    """Resized, normalized [0, 1] image from a magnitude STFT.

    Rows are fftshifted so frequency ascends from -fs/2 to +fs/2, the
    grid is area-averaged down to ``out_shape``, optionally compressed
    to a fixed dB dynamic range, and min-max normalized. An all-zero
    input maps to an all-zero image.
    """
    shifted = _half_swap_rows(mag)
    resized = area_resize(shifted, out_shape)
    peak = resized.max()
    if peak <= 0:
        return np.zeros(out_shape)
    if db_range is not None:
        floor = peak * 10.0 ** (-db_range / 20.0)
        img = 20.0 * np.log10(np.maximum(resized, floor) / peak) + db_range
    else:
        img = resized
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros(out_shape)
    return (img - lo) / (hi - lo)


def support_from_magnitude(
    mag: np.ndarray,
    out_shape: tuple[int, int],
    threshold_db: float = 20.0,
) -> np.ndarray:
    """Time-frequency support: resized cells within threshold_db of the peak.

    Computed on the same fftshifted, area-resized grid as the image so
    overlap tests and pixels line up. A zero signal has empty support.
    """
    shifted = _half_swap_rows(mag)
    resized = area_resize(shifted, out_shape)
    peak = resized.max()
    if peak <= 0:
        return np.zeros(out_shape, dtype=bool)
    return resized >= peak * 10.0 ** (-threshold_db / 20.0)


def label_overlap(radar_support: np.ndarray, comm_support: np.ndarray) -> int:
    """1 iff the two supports share at least one cell, else 0."""
    if radar_support.shape != comm_support.shape:
        raise ValueError(f"support shapes differ: {radar_support.shape} vs {comm_support.shape}")
    return int(bool(np.logical_and(radar_support, comm_support).any()))
