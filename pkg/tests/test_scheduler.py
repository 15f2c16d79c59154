import json

import pytest
from hypothesis import given, strategies as st

from rolling_align.errors import InvalidSchedule
from rolling_align.scheduler import SnippetSchedule, build_schedule, load_schedule, save_schedule


def index_sets(sched):
    return [s.frame_indices for s in sched.snippets]


def test_seven_frames_dilation_one():
    sched = build_schedule(7, 3, [1], 1)
    assert index_sets(sched) == [(0, 1, 2), (1, 2, 3), (2, 3, 4), (3, 4, 5), (4, 5, 6)]
    assert sched.frame_coverage_counts() == [1, 2, 3, 3, 3, 2, 1]


def test_boundary_rule_appends_trailing_snippet():
    sched = build_schedule(8, 3, [2], 2)
    assert index_sets(sched) == [(0, 2, 4), (2, 4, 6), (3, 5, 7)]
    # the stated example leaves frame 1 to no snippet
    assert sched.uncovered_frames == [1]
    with pytest.raises(InvalidSchedule):
        sched.require_full_coverage()


def test_single_frame_video():
    sched = build_schedule(1, 1, [1], 1)
    assert index_sets(sched) == [(0,)]
    assert sched.coverage == (((0, 0),),)


def test_default_inference_config():
    sched = build_schedule(250)
    assert sched.snippet_len == 3 and sched.stride == 1
    assert sched.dilations == (1, 10, 25)
    assert sched.skipped_dilations == ()
    assert {s.dilation for s in sched.snippets} == {1, 10, 25}


def test_long_dilation_skipped_on_short_video():
    sched = build_schedule(40, 3, [1, 25], 1)
    assert sched.skipped_dilations == (25,)
    assert {s.dilation for s in sched.snippets} == {1}


def test_nothing_fits():
    with pytest.raises(InvalidSchedule):
        build_schedule(2, 3, [1], 1)


@pytest.mark.parametrize("args", [(0, 3, [1], 1), (5, 0, [1], 1), (5, 3, [0], 1), (5, 3, [1], 0), (5, 3, [], 1)])
def test_invalid_arguments(args):
    with pytest.raises(InvalidSchedule):
        build_schedule(*args)


def test_json_round_trip(tmp_path):
    sched = build_schedule(30, 3, [1, 10], 2)
    path = tmp_path / "s.json"
    save_schedule(sched, path)
    again = load_schedule(path)
    assert again == sched
    assert again.digest() == sched.digest()
    assert SnippetSchedule.from_json(sched.to_json()) == sched


def test_from_dict_rejects_tampered_coverage():
    data = json.loads(build_schedule(10, 3, [1], 1).to_json())
    data["snippets"][0]["frame_indices"] = [0, 2, 4]
    with pytest.raises(InvalidSchedule):
        SnippetSchedule.from_dict(data)


def test_determinism_is_byte_level():
    assert build_schedule(120).to_json() == build_schedule(120).to_json()


@given(
    n_frames=st.integers(1, 80),
    n=st.integers(1, 5),
    dilations=st.lists(st.integers(1, 30), min_size=1, max_size=4),
    stride=st.integers(1, 6),
)
def test_schedule_properties(n_frames, n, dilations, stride):
    try:
        sched = build_schedule(n_frames, n, dilations, stride)
    except InvalidSchedule:
        assert all((n - 1) * g > n_frames - 1 for g in dilations)
        return
    # coverage is exactly the inverse of the index sets
    assert sum(sched.frame_coverage_counts()) == sum(s.n for s in sched.snippets)
    for i, cov in enumerate(sched.coverage):
        for k, j in cov:
            assert sched.snippets[k].frame_indices[j] == i
    for spec in sched.snippets:
        idx = spec.frame_indices
        assert all(b - a == spec.dilation for a, b in zip(idx, idx[1:]))
        assert 0 <= idx[0] and idx[-1] <= n_frames - 1
    assert [s.snippet_id for s in sched.snippets] == list(range(sched.n_snippets))
    # every fitting dilation reaches the last frame
    for g in set(dilations) - set(sched.skipped_dilations):
        assert any(s.dilation == g and s.frame_indices[-1] == n_frames - 1 for s in sched.snippets)
    if stride == 1:
        assert sched.uncovered_frames == []


@given(st.integers(5, 200))
def test_interior_frames_triple_covered(n_frames):
    counts = build_schedule(n_frames, 3, [1], 1).frame_coverage_counts()
    assert all(c == 3 for c in counts[2:-2])
    assert counts[1] == counts[-2] == 2
