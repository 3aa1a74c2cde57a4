"""Highlight detection on human keypoint tracks with a spatial-temporal graph autoencoder.

Typical flow::

    tracks, meta = parse_tracks(raw)
    segments = video_segments(tracks, meta, P=config.P)
    result = train(segments, config)
    curve = score_video(tracks, meta, result.params, config)
    excerpts = stitch_excerpts(curve, 0.5)
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .evaluation import Annotation, average_precision, f_score, mean_ap, representativeness
from .graph import FactorizedAdjacency, factorized_adjacency
from .inference import Excerpt, FrameScoreCurve, score_video, stitch_excerpts, threshold_sweep
from .keypoint_data import (
    DEFAULT_TOPOLOGIES,
    FACE2D,
    POSE3D,
    ModalityTensor,
    ModalityTopology,
    PersonTrack,
    VideoSegment,
    parse_tracks,
    video_segments,
)
from .model import ModelParams, forward, init_params
from .synthetic import generate_video
from .training import compute_loss, train

__version__ = "0.1.0"
