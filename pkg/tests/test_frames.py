"""Scenario rendering: label soundness per subcategory, determinism,
and SINR enforcement."""

import numpy as np
import pytest

from fedradar.frames import (
    ALL_SUBCATEGORIES,
    H0_SUBCATEGORIES,
    H1_SUBCATEGORIES,
    ChannelParams,
    FrameSpec,
    Subcategory,
    gen_frame,
)
from fedradar.signals import RadarType, label_overlap

# Small images and a coarser hop keep these tests quick; scenario
# construction is resolution-independent.
CHANNEL = ChannelParams(image_size=(32, 32))


def spec_for(subcat, seed, radar_type=RadarType.TYPE1, sinr=21.0):
    return FrameSpec(
        subcategory=subcat,
        radar_type=radar_type if subcat.has_radar else None,
        esc_id=0,
        sinr_db=sinr,
        seed=seed,
    )


class TestTaxonomy:
    def test_nine_subcategories(self):
        assert len(ALL_SUBCATEGORIES) == 9
        assert len(H1_SUBCATEGORIES) == 3
        assert len(H0_SUBCATEGORIES) == 6

    def test_hypothesis_classes(self):
        for s in H1_SUBCATEGORIES:
            assert s.hypothesis == 1
        for s in H0_SUBCATEGORIES:
            assert s.hypothesis == 0


class TestGenFrame:
    @pytest.mark.parametrize("subcat", ALL_SUBCATEGORIES, ids=lambda s: s.value)
    @pytest.mark.parametrize("radar_type", [RadarType.TYPE1, RadarType.TYPE2], ids=["t1", "t2"])
    def test_label_matches_hypothesis(self, subcat, radar_type):
        if not subcat.has_radar and radar_type == RadarType.TYPE2:
            pytest.skip("radar type irrelevant without radar")
        for seed in (100, 101, 102):
            frame = gen_frame(spec_for(subcat, seed, radar_type), CHANNEL)
            assert frame.label == subcat.hypothesis
            assert frame.label == label_overlap(frame.radar_support, frame.comm_support)

    def test_5g_only_no_radar_support(self):
        frame = gen_frame(spec_for(Subcategory.FIVE_G_ONLY, 200), CHANNEL)
        assert frame.label == 0
        assert not frame.radar_support.any()
        assert frame.comm_support.any()

    def test_radar_only_no_comm_support(self):
        frame = gen_frame(spec_for(Subcategory.RADAR_ONLY, 201), CHANNEL)
        assert frame.label == 0
        assert frame.radar_support.any()
        assert not frame.comm_support.any()

    def test_overlap_case_labeled_one(self):
        frame = gen_frame(spec_for(Subcategory.RADAR_5G_OVERLAP, 202), CHANNEL)
        assert frame.label == 1

    def test_deterministic_generation(self):
        spec = spec_for(Subcategory.RADAR_LTE_OVERLAP, 303)
        a = gen_frame(spec, CHANNEL)
        b = gen_frame(spec, CHANNEL)
        assert np.array_equal(a.spectrogram, b.spectrogram)
        assert np.array_equal(a.radar_support, b.radar_support)
        assert np.array_equal(a.comm_support, b.comm_support)
        assert a.label == b.label and a.achieved_sinr_db == b.achieved_sinr_db

    def test_image_properties(self):
        frame = gen_frame(spec_for(Subcategory.RADAR_BOTH_OVERLAP, 404, RadarType.TYPE2), CHANNEL)
        assert frame.spectrogram.shape == (3, 32, 32)
        assert frame.spectrogram.min() >= 0.0 and frame.spectrogram.max() <= 1.0
        # three channels are replicas of one plane
        assert np.array_equal(frame.spectrogram[0], frame.spectrogram[1])
        assert np.array_equal(frame.spectrogram[0], frame.spectrogram[2])

    def test_sinr_enforced_for_radar_with_comm(self):
        for subcat in (Subcategory.RADAR_5G_OVERLAP, Subcategory.RADAR_LTE_DISJOINT):
            frame = gen_frame(spec_for(subcat, 505, RadarType.TYPE2, sinr=22.0), CHANNEL)
            assert frame.achieved_sinr_db == pytest.approx(22.0, abs=0.1)

    def test_low_sinr_with_comm_rejected(self):
        spec = FrameSpec(Subcategory.RADAR_5G_OVERLAP, RadarType.TYPE1, 0, sinr_db=10.0, seed=1)
        with pytest.raises(ValueError, match="impossible combination"):
            gen_frame(spec, CHANNEL)

    def test_radar_subcat_requires_type(self):
        spec = FrameSpec(Subcategory.RADAR_ONLY, None, 0, sinr_db=21.0, seed=1)
        with pytest.raises(ValueError, match="requires a radar type"):
            gen_frame(spec, CHANNEL)

    def test_comm_subcat_rejects_type(self):
        spec = FrameSpec(Subcategory.LTE_ONLY, RadarType.TYPE1, 0, sinr_db=21.0, seed=1)
        with pytest.raises(ValueError, match="must not carry"):
            gen_frame(spec, CHANNEL)
