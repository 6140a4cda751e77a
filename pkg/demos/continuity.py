"""Loss of a fixed prediction as the target rotates through the Euler wrap.

Prints the direct Euler loss (raw components) next to the loss after mapping
to rotation matrices. Only the first jumps.
"""
import numpy as np

from kinemetric import rotmath
from kinemetric.learn import trainer


def main():
    path = np.arange(176.0, 184.001, 0.5)
    targets = rotmath.euler_to_matrix(np.stack([np.full_like(path, 20.0), np.full_like(path, -10.0), path], 1))[:, None]
    pred = np.array([[20.0, -10.0, 178.0]])
    direct = trainer.loss_along_path(pred, targets, "direct", "euler", align=False)
    so3 = trainer.loss_along_path(pred, targets, "so3", "euler")
    print(" z target   direct-Euler        SO(3)")
    for z, d, s in zip(path, direct, so3):
        print(f"{z:9.1f} {d:14.3f} {s:12.6f}")


if __name__ == "__main__":
    main()
