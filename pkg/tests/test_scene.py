import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathtracker.errors import ConfigError, GenerationError
from pathtracker.scene import (
    CONTAIN_RADIUS,
    EXCLUSION_RADIUS,
    NEGATIVE_MARGIN,
    Label,
    Marker,
    MarkerKind,
    VideoSample,
    check_sample,
    chebyshev,
    compose,
    compose_negative,
    crossing_stats,
    derive_seed,
    generate_fold,
    label_for_index,
    render_frame,
    render_video,
    sample_seed_for,
)
from pathtracker.trajgen import GenConfig, Trajectory, valid_combos


def _still(p, n=3):
    base = np.repeat(np.asarray([p], dtype=float), n, axis=0)
    return Trajectory(base, np.zeros(n - 1, dtype=bool))


def test_label_parse_and_str():
    assert Label.parse("Positive") is Label.POSITIVE
    assert str(Label.NEGATIVE) == "negative"
    with pytest.raises(ValueError):
        Label.parse("maybe")


def test_marker_clamps_to_canvas():
    m = Marker.at((0.4, 31.2), MarkerKind.START)
    assert m.center == (2, 30)
    rs, cs = m.pixel_slices()
    assert (rs.start, rs.stop, cs.start, cs.stop) == (28, 32, 0, 4)


@pytest.mark.parametrize("layout", ["mixed", "engineered"])
def test_render_pixel_counts(layout):
    start = Marker((5, 5), MarkerKind.START)
    finish = Marker((25, 25), MarkerKind.FINISH)
    f = render_frame([(12.3, 17.9)], (start, finish), layout)
    assert f.shape == (32, 32, 3) and f.dtype == np.uint8
    dot = f[..., 1] > 0
    assert dot.sum() == 4
    assert dot[17:19, 12:14].all()
    extra = 4 if layout == "mixed" else 0
    assert (f[..., 0] > 0).sum() == 16 + extra
    assert (f[..., 2] > 0).sum() == 16 + extra
    assert (f[3:7, 3:7, 0] == 255).all() and (f[23:27, 23:27, 2] == 255).all()
    if layout == "engineered":
        assert not (f[..., 1] & f[..., 0]).any()


def test_mixed_layout_dot_is_white():
    f = render_frame([(10.0, 10.0)], (None, None), "mixed")
    assert (f[10, 10] == 255).all()


def test_render_rejects_out_of_canvas():
    with pytest.raises(ValueError):
        render_frame([(31.2, 3.0)], (None, None), "mixed")


def test_render_video_matches_frames():
    cfg = GenConfig(distractors=6, speed=2)
    s = next(generate_fold(cfg, "train", 1))
    for t in (0, 7, 31):
        frame = render_frame([d.positions[t] for d in s.dots], (s.start, s.finish), s.layout)
        assert np.array_equal(frame, s.frames[t])


def _sample_with(target, others):
    start = Marker.at(target.start, MarkerKind.START)
    finish = Marker.at(target.end, MarkerKind.FINISH)
    frames = render_video([target, *others], start, finish, "mixed")
    return VideoSample(frames, Label.POSITIVE, target, others, start, finish, 0, 0, "mixed")


def test_crossing_counts_overlap_frames():
    # squares overlap when their anchors differ by < 2 on both axes
    target = Trajectory(np.array([[5.0, 5.0], [7.0, 5.0], [9.0, 5.0], [11.0, 5.0]]), np.zeros(3, bool))
    near = Trajectory(np.array([[6.9, 6.9], [20.0, 20.0], [10.5, 5.2], [20.0, 20.0]]), np.zeros(3, bool))
    assert crossing_stats(_sample_with(target, [near])) == 2
    far = _still((25.0, 25.0), 4)
    assert crossing_stats(_sample_with(target, [far])) == 0
    assert crossing_stats(_sample_with(target, [])) == 0


def test_crossing_touching_is_not_overlap():
    target = _still((5.0, 5.0), 2)
    adjacent = _still((7.0, 5.0), 2)
    assert crossing_stats(_sample_with(target, [adjacent])) == 0


def test_seed_derivation_distinct():
    seeds = {sample_seed_for(1, fold, i) for fold in ("train", "test") for i in range(500)}
    assert len(seeds) == 1000
    assert derive_seed(1, 0, 3) == derive_seed(1, 0, 3) != derive_seed(2, 0, 3)


def test_labels_alternate():
    assert [label_for_index(i) for i in range(4)] == [Label.POSITIVE, Label.NEGATIVE] * 2
    labels = [s.label for s in generate_fold(GenConfig(distractors=2), "test", 10)]
    assert labels == [label_for_index(i) for i in range(10)]


def test_generation_deterministic():
    cfg = GenConfig(distractors=6, master_seed=99)
    a = list(generate_fold(cfg, "train", 6))
    b = list(generate_fold(cfg, "train", 6))
    for x, y in zip(a, b):
        assert np.array_equal(x.frames, y.frames)
        assert x.sample_seed == y.sample_seed and x.finisher_index == y.finisher_index


def test_fold_offset_matches_prefix():
    cfg = GenConfig(distractors=3)
    full = list(generate_fold(cfg, "test", 6))
    tail = list(generate_fold(cfg, "test", 3, start=3))
    for x, y in zip(full[3:], tail):
        assert np.array_equal(x.frames, y.frames)


def test_negative_needs_distractor():
    with pytest.raises(ConfigError, match="negative impossible without distractors"):
        compose_negative(1, GenConfig(distractors=0))
    # positives remain possible
    assert compose(1, GenConfig(distractors=0), Label.POSITIVE).label == Label.POSITIVE


def test_resample_budget_exhaustion_reports_params():
    cfg = GenConfig(distractors=26, max_resample_attempts=1)
    with pytest.raises(GenerationError, match="distractors=26"):
        for s in generate_fold(cfg, "train", 200):
            pass


def test_unknown_fold():
    with pytest.raises(ConfigError):
        next(generate_fold(GenConfig(), "valid", 1))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), combo=st.sampled_from(valid_combos()),
       distractors=st.sampled_from([1, 6, 15, 26]), label=st.sampled_from(list(Label)),
       layout=st.sampled_from(["mixed", "engineered"]))
def test_generated_sample_semantics(seed, combo, distractors, label, layout):
    frames, k = combo
    cfg = GenConfig(frames=frames, speed=k, distractors=distractors, layout=layout)
    s = compose(seed, cfg, label)
    assert s.label == label
    assert s.frames.shape == (frames, 32, 32, 3)
    fc = s.finish.center
    assert chebyshev(s.finisher.end, fc) <= CONTAIN_RADIUS
    if label == Label.POSITIVE:
        assert s.finisher_index == 0
    else:
        assert s.finisher_index >= 1
        assert chebyshev(s.target.end, fc) >= NEGATIVE_MARGIN
    for i, d in enumerate(s.dots):
        if i != s.finisher_index:
            assert chebyshev(d.end, fc) > EXCLUSION_RADIUS
    assert chebyshev(s.target.start, s.start.center) <= CONTAIN_RADIUS
    assert check_sample(s, cfg) == []


def test_check_sample_catches_tampering():
    cfg = GenConfig(distractors=3)
    pos, neg = list(generate_fold(cfg, "train", 2))
    pos.label = Label.NEGATIVE
    assert "label disagrees with finisher index" in check_sample(pos)
    neg.finish = Marker.at(neg.target.end, MarkerKind.FINISH)
    assert check_sample(neg)
