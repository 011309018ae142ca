"""Trains the small digits CNN shipped in fixtures/ and exports it.

Outputs (all little-endian):
  digits.manifest      layer description
  digits.weights       f32 tensors in manifest order
  digits_test.dataset  held-out labeled samples
  digits_calib.f32     training-set inputs for calibration

Run from the crate root: python3 scripts/train_fixture.py
"""

import struct
from pathlib import Path

import numpy as np
import torch
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split
from torch import nn

OUT = Path(__file__).resolve().parent.parent / "fixtures"
SEED = 0

MANIFEST = """\
# 8x8 handwritten digits, 10 classes
input c=1 h=8 w=8
conv ic=1 oc=8 k=3x3 stride=1 pad=1 w=conv1.w id=conv1
bn gamma=bn1.gamma beta=bn1.beta mean=bn1.mean var=bn1.var eps=1e-5 act=relu id=bn1
conv ic=8 oc=16 k=3x3 stride=1 pad=1 act=relu w=conv2.w b=conv2.b id=conv2
maxpool k=2 stride=2 id=pool1
conv ic=16 oc=16 k=3x3 stride=1 pad=1 w=conv3.w b=conv3.b id=conv3
add src=conv3,pool1 act=relu id=res
avgpool k=2 stride=2 id=pool2
fc ic=64 oc=10 w=fc.w b=fc.b id=fc
"""


class Net(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 8, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(8, eps=1e-5)
        self.conv2 = nn.Conv2d(8, 16, 3, padding=1)
        self.conv3 = nn.Conv2d(16, 16, 3, padding=1)
        self.fc = nn.Linear(64, 10)

    def forward(self, x):
        x = torch.relu(self.bn1(self.conv1(x)))
        x = torch.relu(self.conv2(x))
        p = nn.functional.max_pool2d(x, 2)
        x = torch.relu(self.conv3(p) + p)
        x = nn.functional.avg_pool2d(x, 2)
        return self.fc(x.flatten(1))


def main():
    torch.manual_seed(SEED)
    digits = load_digits()
    x = (digits.images / 16.0).astype(np.float32)[:, None]
    y = digits.target.astype(np.int64)
    x_tr, x_te, y_tr, y_te = train_test_split(
        x, y, test_size=450, random_state=SEED, stratify=y
    )

    net = Net()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3, weight_decay=1e-4)
    xt, yt = torch.from_numpy(x_tr), torch.from_numpy(y_tr)
    for epoch in range(60):
        net.train()
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), 64):
            idx = perm[i : i + 64]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(net(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
    net.eval()
    with torch.no_grad():
        acc = (net(torch.from_numpy(x_te)).argmax(1).numpy() == y_te).mean()
    print(f"test accuracy {acc:.4f}")

    tensors = [
        net.conv1.weight,
        net.bn1.weight,
        net.bn1.bias,
        net.bn1.running_mean,
        net.bn1.running_var,
        net.conv2.weight,
        net.conv2.bias,
        net.conv3.weight,
        net.conv3.bias,
        net.fc.weight,
        net.fc.bias,
    ]
    blob = np.concatenate([t.detach().numpy().astype("<f4").ravel() for t in tensors])

    OUT.mkdir(exist_ok=True)
    (OUT / "digits.manifest").write_text(MANIFEST)
    (OUT / "digits.weights").write_bytes(blob.tobytes())
    with open(OUT / "digits_test.dataset", "wb") as f:
        f.write(struct.pack("<4I", len(x_te), 1, 8, 8))
        for xi, yi in zip(x_te, y_te):
            f.write(struct.pack("<I", int(yi)))
            f.write(xi.astype("<f4").tobytes())
    (OUT / "digits_calib.f32").write_bytes(x_tr[:64].astype("<f4").tobytes())


if __name__ == "__main__":
    main()
