import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gvrlab.curation import (
    CurationConfig,
    curate,
    curate_batch,
    curate_path,
    laplacian_variance,
    sample_indices,
    write_verdicts,
)
from gvrlab.media import Clip, read_report, write_clip


def naive_laplacian_variance(gray):
    h, w = gray.shape
    vals = []
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            vals.append(gray[y - 1, x] + gray[y + 1, x] + gray[y, x - 1] + gray[y, x + 1] - 4 * gray[y, x])
    vals = np.array(vals)
    return float(np.mean((vals - vals.mean()) ** 2))


def checkerboard(frames=12, size=24, cell=4):
    yy, xx = np.mgrid[0:size, 0:size]
    board = (((yy // cell) + (xx // cell)) % 2).astype(np.float32)
    return Clip(np.repeat(np.repeat(board[None, ..., None], frames, 0), 3, -1))


def test_black_clip_rejected_for_brightness():
    v = curate(Clip(np.zeros((12, 16, 16, 3), np.float32)))
    assert not v.accepted and v.reason == "brightness"
    assert v.brightness == 0.0


def test_flat_gray_rejected_for_detail():
    v = curate(Clip(np.full((12, 16, 16, 3), 0.5, np.float32)))
    assert v.laplacian_variance == 0.0
    assert not v.accepted and v.reason == "laplacian"


def test_checkerboard_accepted_and_matches_naive_oracle():
    clip = checkerboard()
    v = curate(clip)
    idx = sample_indices(clip.num_frames)
    gray = clip.frames[idx] @ np.array([0.299, 0.587, 0.114]) * 255.0
    expected = np.mean([naive_laplacian_variance(g) for g in gray])
    assert v.laplacian_variance == pytest.approx(expected, abs=1e-4)
    assert v.laplacian_variance > 30
    assert v.accepted and v.reason == ""


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 9), st.integers(3, 9))
def test_laplacian_matches_naive_on_random_frames(seed, h, w):
    gray = np.random.default_rng(seed).uniform(0, 255, (h, w))
    assert laplacian_variance(gray) == pytest.approx(naive_laplacian_variance(gray), rel=1e-9, abs=1e-6)


def test_sample_indices():
    assert list(sample_indices(7)) == list(range(7))
    idx = sample_indices(100)
    assert len(idx) == 10 and idx[0] == 0 and idx[-1] == 99
    assert np.all(np.diff(idx) > 0)


def test_brightness_uses_rec601_weights():
    frames = np.zeros((10, 8, 8, 3), np.float32)
    frames[..., 1] = 1.0
    assert curate(Clip(frames)).brightness == pytest.approx(0.587, abs=1e-6)


def test_thresholds_are_configurable():
    clip = checkerboard()
    assert not curate(clip, CurationConfig(laplacian_min=1e9)).accepted
    assert not curate(clip, CurationConfig(brightness_max=0.3)).accepted


def test_external_scorer_hook(tmp_path):
    clip_dir = write_clip(checkerboard(), tmp_path / "c1")
    script = tmp_path / "score.py"
    script.write_text("import sys\nprint(12.5)\n")
    cmd = f"{sys.executable} {script}"
    v = curate_path(clip_dir, CurationConfig(musiq_command=cmd))
    assert v.musiq == 12.5 and v.reason == "musiq"
    assert curate_path(clip_dir).musiq is None


def test_unreadable_clip_gives_error_verdict(tmp_path):
    (tmp_path / "empty").mkdir()
    v = curate_path(tmp_path / "empty")
    assert not v.accepted and v.reason.startswith("error")


def test_batch_independent_of_workers_and_order(tmp_path):
    paths = []
    for i, val in enumerate([0.0, 0.5, None, 0.95]):
        clip = checkerboard(frames=10) if val is None else Clip(np.full((10, 8, 8, 3), val, np.float32))
        paths.append(write_clip(clip, tmp_path / f"clip{i}"))
    one = curate_batch(paths, workers=1)
    four = curate_batch(list(reversed(paths)), workers=4)
    assert one == four
    assert [v.accepted for v in one] == [False, False, True, False]
    out = write_verdicts(one, tmp_path / "report.csv")
    rows = read_report(out)
    assert rows["clip_id"] == ["clip0", "clip1", "clip2", "clip3"]
    assert rows["accepted"] == ["false", "false", "true", "false"]


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        CurationConfig.from_dict({"blur": 1})
