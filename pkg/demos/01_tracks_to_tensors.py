"""Turn a synthetic track file into graph operators and node tensors."""

from highlight_stgcn.graph import build_spatial_adjacency, edge_count, factorized_adjacency
from highlight_stgcn.keypoint_data import (
    DEFAULT_TOPOLOGIES,
    build_modality_tensor,
    dump_tracks,
    observability_weight,
    parse_tracks,
    video_segments,
)
from highlight_stgcn.synthetic import generate_video

video = generate_video(seed=4, persons=3, face_visible_fraction=0.6)
raw = dump_tracks(video.tracks, video.meta)
print("track file:", len(raw), "bytes, planted frames", video.planted)

tracks, meta = parse_tracks(raw)
segments = video_segments(tracks, meta, seconds=30, f=5, P=3)
seg = segments[0]

for name, topo in DEFAULT_TOPOLOGIES.items():
    mt = build_modality_tensor(seg, topo, T=150, P=3)
    adj = factorized_adjacency(topo, T=150, P=3, w_h=75)
    print(f"{name}: tensor {mt.shape}, observable in {observability_weight(mt):.2f} of frames")
    print(f"  spatial operator {adj.spatial.shape}, temporal operator {adj.temporal.shape}")

# the operators are never combined into one (N*T*P)^2 matrix
A = build_spatial_adjacency(DEFAULT_TOPOLOGIES["pose3d"], P=20)
print("pose graph at P=20:", edge_count(A), "spatial edges per frame")
