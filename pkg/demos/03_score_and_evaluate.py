"""Score held-out synthetic videos with the demo checkpoint and report AP.

Run 02_train_on_synthetic.py first.
"""

import numpy as np

from highlight_stgcn.checkpoint import load_checkpoint
from highlight_stgcn.config import TrainConfig
from highlight_stgcn.evaluation import evaluate_video
from highlight_stgcn.inference import score_video, stitch_excerpts, threshold_sweep
from highlight_stgcn.synthetic import generate_video

ck = load_checkpoint("demo_ckpt/best.ckpt")
config = TrainConfig.from_dict(ck.header["hyperparameters"])

aps = []
for seed in range(3):
    v = generate_video(seed)
    curve = score_video(v.tracks, v.meta, ck.params, config)
    res = evaluate_video(v.meta.source_id, curve.scores, v.positives, h_thres=0.5)
    aps.append(res.ap)
    inside = curve.scores[v.positives].mean()
    outside = curve.scores[~v.positives].mean()
    print(f"{v.meta.source_id}: AP {res.ap:.3f}, mean score inside {inside:.3f} / outside {outside:.3f}")

    # thresholds are relative to where this model's scores sit
    thr = float(np.quantile(curve.scores, 0.8))
    top = stitch_excerpts(curve, thr)[:2]
    print("  top excerpts:", [(e.start_frame, e.end_frame, round(e.score, 3)) for e in top], "planted", v.planted)

print("mAP", np.mean(aps))
for thr, ap, n in threshold_sweep(curve, v.positives, [0.0, 0.2, 0.4, 0.6]):
    print(f"  h_thres {thr:.1f}: AP {ap:.3f} from {n} excerpts")
