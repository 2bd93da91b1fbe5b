"""Labeled spectrogram frame construction for all nine channel scenarios.

A frame is one 20 ms capture of the 10 MHz channel rendered to a
normalized spectrogram image plus the time-frequency supports of the
radar and commercial signals. The label is 1 exactly when the two
supports share at least one cell (harmful overlap) and 0 otherwise.

Scenarios are drawn constructively so the realized supports match the
requested subcategory:

* overlap frames put the radar carrier inside a commercial band and
  force the duty slots around at least two pulses on;
* time-disjoint frames fit the whole burst inside a gap of the duty
  mask with a guard slot on each side;
* frequency-disjoint frames push the carrier into the unused half of
  the channel, constraining the pulse width so the -20 dB spectral
  skirt cannot reach the commercial band or wrap past Nyquist.

After rendering, the label recomputed from the supports must equal the
subcategory's hypothesis class; if a draw lands badly (for example a
sidelobe crosses the support threshold) the frame is redrawn with a
derived seed, keeping generation fully deterministic per spec.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .signals import (
    CommProfile,
    CommTech,
    RadarDraw,
    RadarType,
    TYPE1_RADAR,
    TYPE2_RADAR,
    draw_radar_params,
    gen_comm_waveform,
    label_overlap,
    mix_at_sinr,
    radar_pulse_train,
    spectrogram_image,
    stft_magnitude,
    support_from_magnitude,
)

__all__ = [
    "Subcategory",
    "H1_SUBCATEGORIES",
    "H0_SUBCATEGORIES",
    "ALL_SUBCATEGORIES",
    "ChannelParams",
    "FrameSpec",
    "Frame",
    "FrameGenerationError",
    "gen_frame",
    "radar_profile_for",
]


class Subcategory(enum.Enum):
    """The three harmful-overlap and six no-overlap channel scenarios."""

    RADAR_5G_OVERLAP = "radar_5g_overlap"
    RADAR_LTE_OVERLAP = "radar_lte_overlap"
    RADAR_BOTH_OVERLAP = "radar_both_overlap"
    RADAR_ONLY = "radar_only"
    FIVE_G_ONLY = "5g_only"
    LTE_ONLY = "lte_only"
    LTE_5G = "lte_5g"
    RADAR_5G_DISJOINT = "radar_5g_disjoint"
    RADAR_LTE_DISJOINT = "radar_lte_disjoint"

    @property
    def hypothesis(self) -> int:
        return 1 if self in H1_SUBCATEGORIES else 0

    @property
    def has_radar(self) -> bool:
        return self not in (Subcategory.FIVE_G_ONLY, Subcategory.LTE_ONLY, Subcategory.LTE_5G)

    @property
    def comm_techs(self) -> tuple[CommTech, ...]:
        return _COMM_TECHS[self]


H1_SUBCATEGORIES = (
    Subcategory.RADAR_5G_OVERLAP,
    Subcategory.RADAR_LTE_OVERLAP,
    Subcategory.RADAR_BOTH_OVERLAP,
)
H0_SUBCATEGORIES = (
    Subcategory.RADAR_ONLY,
    Subcategory.FIVE_G_ONLY,
    Subcategory.LTE_ONLY,
    Subcategory.LTE_5G,
    Subcategory.RADAR_5G_DISJOINT,
    Subcategory.RADAR_LTE_DISJOINT,
)
ALL_SUBCATEGORIES = H1_SUBCATEGORIES + H0_SUBCATEGORIES

_COMM_TECHS = {
    Subcategory.RADAR_5G_OVERLAP: (CommTech.FIVE_G,),
    Subcategory.RADAR_LTE_OVERLAP: (CommTech.LTE,),
    Subcategory.RADAR_BOTH_OVERLAP: (CommTech.LTE, CommTech.FIVE_G),
    Subcategory.RADAR_ONLY: (),
    Subcategory.FIVE_G_ONLY: (CommTech.FIVE_G,),
    Subcategory.LTE_ONLY: (CommTech.LTE,),
    Subcategory.LTE_5G: (CommTech.LTE, CommTech.FIVE_G),
    Subcategory.RADAR_5G_DISJOINT: (CommTech.FIVE_G,),
    Subcategory.RADAR_LTE_DISJOINT: (CommTech.LTE,),
}


def radar_profile_for(radar_type: RadarType):
    return TYPE1_RADAR if radar_type == RadarType.TYPE1 else TYPE2_RADAR


@dataclass(frozen=True)
class ChannelParams:
    """Capture, rendering and placement parameters shared by all frames."""

    sample_rate_hz: float = 10e6
    duration_ms: float = 20.0
    fft_size: int = 256
    hop: int = 128
    image_size: tuple[int, int] = (64, 64)
    noise_power: float = 1.0
    comm_power_db_range: tuple[float, float] = (10.0, 18.0)
    comm_bandwidth_mhz: float = 5.0
    slot_ms: float = 1.0
    support_threshold_db: float = 20.0
    image_db_range: float | None = 60.0
    guard_slots: int = 1
    max_attempts: int = 25

    @property
    def duration_s(self) -> float:
        return self.duration_ms * 1e-3

    @property
    def num_slots(self) -> int:
        return int(round(self.duration_ms / self.slot_ms))

    @property
    def half_band_hz(self) -> float:
        return self.sample_rate_hz / 2.0


@dataclass(frozen=True)
class FrameSpec:
    """Everything needed to rebuild one frame byte for byte."""

    subcategory: Subcategory
    radar_type: RadarType | None
    esc_id: int
    sinr_db: float
    seed: int
    comm_power_offset_db: float = 0.0

    def validate(self) -> None:
        if self.subcategory.has_radar and self.radar_type is None:
            raise ValueError(f"subcategory {self.subcategory.value} requires a radar type")
        if not self.subcategory.has_radar and self.radar_type is not None:
            raise ValueError(f"subcategory {self.subcategory.value} must not carry a radar type")
        if self.subcategory.has_radar and self.subcategory.comm_techs and self.sinr_db < 20.0:
            raise ValueError(
                f"impossible combination: {self.subcategory.value} with SINR {self.sinr_db:.1f} dB < 20 dB"
            )


@dataclass
class Frame:
    """One labeled sample: image, supports and generation metadata."""

    spectrogram: np.ndarray  # [3, H, W] float64 in [0, 1]
    label: int
    spec: FrameSpec
    radar_support: np.ndarray  # [H, W] bool
    comm_support: np.ndarray  # [H, W] bool
    achieved_sinr_db: float | None


class FrameGenerationError(RuntimeError):
    pass


# -20 dB spectral extent of a rectangular pulse is roughly 3.2 / width;
# used to keep frequency-disjoint carriers clear of the commercial band
# and of the Nyquist edges.
_SKIRT_FACTOR_HZ_S = 3.2
_FREQ_GUARD_HZ = 0.8e6
_NYQUIST_MARGIN_HZ = 0.2e6
_OVERLAP_BAND_MARGIN_HZ = 0.5e6


def _skirt_hz(width_s: float) -> float:
    return _SKIRT_FACTOR_HZ_S / width_s


def _comm_centers(
    subcat: Subcategory, disjoint_freq: bool, rng: np.random.Generator, channel: ChannelParams
) -> dict[CommTech, float]:
    """Place each present carrier's center offset (Hz)."""
    techs = subcat.comm_techs
    half_bw = channel.comm_bandwidth_mhz * 1e6 / 2.0
    if len(techs) == 2:
        return {CommTech.LTE: -half_bw, CommTech.FIVE_G: +half_bw}
    if not techs:
        return {}
    if disjoint_freq:
        side = rng.choice([-1.0, 1.0])
        return {techs[0]: side * half_bw}
    lo = -channel.half_band_hz + half_bw
    hi = channel.half_band_hz - half_bw
    return {techs[0]: rng.uniform(lo, hi)}


def _slots_for_span(t0: float, t1: float, channel: ChannelParams) -> range:
    slot_s = channel.slot_ms * 1e-3
    first = max(0, int(np.floor(t0 / slot_s)))
    last = min(channel.num_slots - 1, int(np.floor(t1 / slot_s)))
    return range(first, last + 1)


def _render(spec: FrameSpec, channel: ChannelParams, rng: np.random.Generator) -> Frame | None:
    subcat = spec.subcategory
    techs = subcat.comm_techs
    duration_s = channel.duration_s
    n_slots = channel.num_slots

    disjoint_kind = None
    if subcat in (Subcategory.RADAR_5G_DISJOINT, Subcategory.RADAR_LTE_DISJOINT):
        disjoint_kind = rng.choice(["time", "freq"])

    centers = _comm_centers(subcat, disjoint_kind == "freq", rng, channel)

    # Independent base duty masks, one per carrier.
    masks = {}
    for tech in techs:
        p_on = rng.uniform(0.55, 0.9)
        masks[tech] = rng.random(n_slots) < p_on

    radar_draw: RadarDraw | None = None
    if subcat.has_radar:
        profile = radar_profile_for(spec.radar_type)
        width_bounds = None
        max_burst_s = None
        if disjoint_kind == "freq":
            # Compact spectrum: constrain the width draw, then place the
            # carrier in the free half with skirt + guard clearance.
            width_lo_us = max(profile.pulse_width_us[0], 2.0)
            width_bounds = (width_lo_us, profile.pulse_width_us[1])
            skirt = _skirt_hz(width_lo_us * 1e-6)
            (tech,) = techs
            band_lo, band_hi = _band_for(centers[tech], channel)
            if centers[tech] < 0:
                c_lo = band_hi + skirt + _FREQ_GUARD_HZ
                c_hi = channel.half_band_hz - skirt - _NYQUIST_MARGIN_HZ
            else:
                c_hi = band_lo - skirt - _FREQ_GUARD_HZ
                c_lo = -channel.half_band_hz + skirt + _NYQUIST_MARGIN_HZ
            if c_lo >= c_hi:
                return None
            carrier_bounds = (c_lo, c_hi)
        elif disjoint_kind == "time":
            # The burst and a guard slot either side must leave room for
            # at least two commercial slots.
            max_burst_s = duration_s - (2 * channel.guard_slots + 2) * channel.slot_ms * 1e-3
            skirt = _skirt_hz(profile.pulse_width_us[0] * 1e-6)
            lim = channel.half_band_hz - min(skirt, 2e6) - _NYQUIST_MARGIN_HZ
            carrier_bounds = (-lim, lim)
        elif subcat.hypothesis == 1:
            target = techs[rng.integers(len(techs))] if len(techs) > 1 else techs[0]
            band_lo, band_hi = _band_for(centers[target], channel)
            carrier_bounds = (band_lo + _OVERLAP_BAND_MARGIN_HZ, band_hi - _OVERLAP_BAND_MARGIN_HZ)
        else:  # radar only
            skirt = _skirt_hz(profile.pulse_width_us[0] * 1e-6)
            lim = channel.half_band_hz - min(skirt, 2e6) - _NYQUIST_MARGIN_HZ
            carrier_bounds = (-lim, lim)

        radar_draw = draw_radar_params(
            profile,
            duration_s,
            rng,
            carrier_bounds_hz=carrier_bounds,
            pulse_width_bounds_us=width_bounds,
            max_burst_s=max_burst_s,
        )

        if disjoint_kind == "time":
            t0 = radar_draw.burst_start_s - channel.guard_slots * channel.slot_ms * 1e-3
            t1 = radar_draw.burst_start_s + radar_draw.burst_span_s + channel.guard_slots * channel.slot_ms * 1e-3
            blocked = _slots_for_span(t0, t1, channel)
            free = [s for s in range(n_slots) if s not in blocked]
            if not free:
                return None
            for tech in techs:
                masks[tech][list(blocked)] = False
                if not masks[tech][free].any():
                    masks[tech][rng.choice(free)] = True
        elif subcat.hypothesis == 1:
            # Force the duty slots around two pulses of the target carrier on.
            starts = radar_draw.pulse_starts_s()
            picks = rng.choice(radar_draw.num_pulses, size=min(2, radar_draw.num_pulses), replace=False)
            for j in picks:
                span = _slots_for_span(starts[j], starts[j] + radar_draw.pulse_width_s, channel)
                masks[target][list(span)] = True

    # Synthesize the constituent waveforms.
    comm_waves = {}
    for tech in techs:
        profile_c = CommProfile(
            tech=tech,
            bandwidth_mhz=channel.comm_bandwidth_mhz,
            center_offset_mhz=centers[tech] / 1e6,
            power_dbm=rng.uniform(*channel.comm_power_db_range) + spec.comm_power_offset_db,
            slot_ms=channel.slot_ms,
            duty_mask=tuple(bool(b) for b in masks[tech]),
        )
        comm_waves[tech] = gen_comm_waveform(profile_c, channel.duration_ms, channel.sample_rate_hz, rng)

    comm_sum = sum(comm_waves.values()) if comm_waves else None
    achieved = None
    if radar_draw is not None:
        radar_wave = radar_pulse_train(radar_draw, duration_s, channel.sample_rate_hz)
        y, achieved = mix_at_sinr(radar_wave, comm_sum, channel.noise_power, spec.sinr_db, rng)
    else:
        radar_wave = None
        num = int(round(duration_s * channel.sample_rate_hz))
        noise = np.sqrt(channel.noise_power / 2.0) * (rng.standard_normal(num) + 1j * rng.standard_normal(num))
        y = comm_sum + noise

    # Image from the mixture; supports from the clean per-signal renders.
    out = channel.image_size
    image = spectrogram_image(stft_magnitude(y, channel.fft_size, channel.hop), out, channel.image_db_range)

    if radar_wave is not None:
        radar_support = support_from_magnitude(
            stft_magnitude(radar_wave, channel.fft_size, channel.hop), out, channel.support_threshold_db
        )
        if not radar_support.any():
            return None
    else:
        radar_support = np.zeros(out, dtype=bool)

    comm_support = np.zeros(out, dtype=bool)
    for tech, wave in comm_waves.items():
        comm_support |= support_from_magnitude(
            stft_magnitude(wave, channel.fft_size, channel.hop), out, channel.support_threshold_db
        )
    if techs and not comm_support.any():
        return None

    label = label_overlap(radar_support, comm_support)
    if label != subcat.hypothesis:
        return None

    return Frame(
        spectrogram=np.repeat(image[None, :, :], 3, axis=0),
        label=label,
        spec=spec,
        radar_support=radar_support,
        comm_support=comm_support,
        achieved_sinr_db=achieved,
    )


def _band_for(center_hz: float, channel: ChannelParams) -> tuple[float, float]:
    half = channel.comm_bandwidth_mhz * 1e6 / 2.0
    return center_hz - half, center_hz + half


def gen_frame(spec: FrameSpec, channel: ChannelParams) -> Frame:
    """Render a frame deterministically from its spec.

    Draws that violate the requested scenario (an unlucky sidelobe
    crossing the support threshold, or no room left for commercial
    slots) are retried with a seed derived from (spec.seed, attempt),
    so the result is a pure function of the spec and channel.
    """
    spec.validate()
    for attempt in range(channel.max_attempts):
        rng = np.random.default_rng([spec.seed, attempt])
        frame = _render(spec, channel, rng)
        if frame is not None:
            return frame
    raise FrameGenerationError(
        f"could not realize {spec.subcategory.value} (seed {spec.seed}) in {channel.max_attempts} attempts"
    )
