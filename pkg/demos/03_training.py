"""About a hundred descent steps on the joint loss with confusable negatives.

    python3 demos/03_training.py
"""

import numpy as np

from polarplace import (LossConfig, ScanEncoder, TrainingTuple, generate_benchmark,
                        generate_world, train)
from polarplace.learn import _encode, n_way_augment, write_telemetry

world = generate_world(seed=7, n_landmarks=150, extent_m=240.0)
# tightly packed places and 5 m revisit offsets make negatives hard to tell apart
bench = generate_benchmark(world, n_places=30, n_queries=12, range_noise_sigma_m=0.05,
                           dropout_prob=0.1, position_perturbation_m=5.0,
                           place_spacing_m=2.0, seed=3)
enc = ScanEncoder.default()
cfg = LossConfig(learning_rate=1e-4, optimizer="adam")

db = [enc.bev(pc) for pc in bench.db_scans]
sigs = np.stack([_encode(b, enc.params, cfg)[3] for b in db])

tuples = []
for i, (pc, a) in enumerate(zip(bench.query_scans, bench.associations)):
    q = enc.bev(pc)
    d = np.linalg.norm(sigs - _encode(q, enc.params, cfg)[3], axis=1)
    d[a] = np.inf
    negs = tuple(db[j] for j in np.argsort(d)[:2])  # nearest wrong places
    yaw = (bench.db_poses[a, 2] - bench.query_poses[i, 2]) % 360
    tuples.append(TrainingTuple(q, db[a], negs, yaw, int(a)))
print(len(tuples), "tuples")

result = train(tuples, enc.params, cfg, epochs=8)
for s in result.history:
    print(f"epoch {s.epoch}  quad {s.quad_loss:10.2f}  rot {s.rot_loss:6.3f}  |g| {s.grad_norm:9.2f}")
print(f"softmax W {result.W:.4g}  b {result.b:.4g}")
write_telemetry(result.history, "training_telemetry.csv")
print("telemetry written to training_telemetry.csv")

# N-way augmentation: rotated copies of one grid with their yaw labels
for bev, yaw in n_way_augment(db[0], 4, seed=0):
    print("augmented copy at", yaw, "deg; cells", int(bev.cells.sum()))
