"""Train the volumetric regressor on a small synthetic set and evaluate on a held-out one.

    python3 demos/train_small.py [epochs]
"""
import sys

from kinemetric.learn import TrainConfig, train
from kinemetric.synth import SynthSpec, generate

JOINTS = ("R.Hip", "R.Knee", "L.Hip", "L.Knee")


def main(epochs=40):
    train_set = generate(SynthSpec(joints=JOINTS, duration_s=6.4, rate_hz=10, seed=1))
    val_set = generate(SynthSpec(joints=JOINTS, duration_s=3.2, rate_hz=10, seed=2))
    cfg = TrainConfig(kind="6d", supervision="so3", epochs=epochs, anneal_epoch=int(epochs * 0.8), B=8, hidden=128)
    res = train(train_set, cfg, val=val_set)
    step = max(1, epochs // 10)
    rows = res.metrics[::step]
    if rows[-1] is not res.final:
        rows.append(res.final)
    for row in rows:
        print(f"epoch {row['epoch']:4d}  loss {row['loss']:.5f}  train {row['mpjae_train']:.3f}  val {row['mpjae_val']:.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 40)
