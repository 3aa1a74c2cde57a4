import numpy as np

from highlight_stgcn.keypoint_data import FACE2D, POSE3D, build_modality_tensor, dump_tracks, observability_weight, video_segments
from highlight_stgcn.synthetic import generate_video


def test_same_seed_same_file():
    a, b = generate_video(1), generate_video(1)
    assert dump_tracks(a.tracks, a.meta) == dump_tracks(b.tracks, b.meta)
    assert a.annotation_json() == b.annotation_json()
    assert dump_tracks(a.tracks, a.meta) != dump_tracks(*(lambda v: (v.tracks, v.meta))(generate_video(2)))


def test_planted_annotation():
    v = generate_video(5, T=150, planted_len=30)
    assert v.positives.sum() == 30
    (start, end), = v.annotation_dict()["positive_intervals"]
    assert end - start + 1 == 30


def test_planted_variance_exceeds_background():
    for seed in range(5):
        v = generate_video(seed)
        for mod in ("pose3d", "face2d"):
            pts = np.stack([v.tracks[0].frames[t][mod].points for t in range(150)])
            speed = np.linalg.norm(np.diff(pts, axis=0), axis=-1).mean(axis=1)
            pos = v.positives[1:]
            assert speed[pos].mean() > speed[~pos].mean()
            # coordinate variance over time, inside vs outside the planted frames
            assert pts[v.positives].var(axis=0).mean() > pts[~v.positives].var(axis=0).mean()


def test_single_modality_and_face_hiding():
    v = generate_video(3, modalities=("pose3d",))
    assert all(set(m) == {"pose3d"} for m in v.tracks[0].frames.values())
    v = generate_video(3, face_visible_fraction=0.5)
    seg = video_segments(v.tracks, v.meta, 30, 5, 2)[0]
    assert observability_weight(build_modality_tensor(seg, POSE3D, 150, 2)) == 1.0
    assert observability_weight(build_modality_tensor(seg, FACE2D, 150, 2)) == 0.5
