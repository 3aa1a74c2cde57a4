"""Train a small pose+face model on synthetic videos and watch the loss.

Takes a couple of minutes on one core.
"""

from highlight_stgcn.config import TrainConfig
from highlight_stgcn.keypoint_data import video_segments
from highlight_stgcn.synthetic import generate_video
from highlight_stgcn.training import train, write_loss_csv

config = TrainConfig(P=2, w_h=2, epochs=30, seed=0)

segments = []
for seed in range(100, 106):
    v = generate_video(seed)
    segments += video_segments(v.tracks, v.meta, config.segment_seconds, config.f, config.P)


def progress(epoch, params):
    if epoch % 10 == 9:
        print("epoch", epoch + 1)


result = train(segments, config, checkpoint_dir="demo_ckpt", on_epoch_end=progress)
first, last = result.history[0], result.history[-1]
print(f"loss {first['total']:.1f} -> {last['total']:.1f} over {len(result.history)} steps")
print("best validation epoch:", result.best_epoch)
write_loss_csv(result.history, "demo_ckpt/loss.csv")
