"""Build a small map database and look up revisits and never-seen places.

    python3 demos/02_place_retrieval.py
"""

import numpy as np

from polarplace import (PlaceDatabase, PlaceRecord, ScanEncoder, evaluate_retrieval,
                        generate_benchmark, generate_world)
from polarplace.retrieve import rejection_curve, unseen_place_score

world = generate_world(seed=3, n_landmarks=260, extent_m=320.0)
bench = generate_benchmark(world, n_places=60, n_queries=40, revisit_fraction=0.5,
                           range_noise_sigma_m=0.03, dropout_prob=0.05, seed=1)
enc = ScanEncoder.default()

db = PlaceDatabase(enc.signature_length)
for i, pc in enumerate(bench.db_scans):
    db.insert(PlaceRecord(i, enc.encode(pc).signature, tuple(bench.db_poses[i])))
print(len(db), "places in the database")

q = [enc.encode(pc) for pc in bench.query_scans]
known = bench.associations >= 0
revisits = [(e.signature, p) for e, p, k in zip(q, bench.query_poses, known) if k]
rep = evaluate_retrieval(db, revisits, success_radius_m=1.5, k=10)
print(f"recall@1 {rep.recall_at_1:.3f}  recall@1% {rep.recall_at_1pct:.3f}  auc {rep.auc:.3f}")
print("recall@N:", np.round(rep.recall_curve, 3))

# the first revisit: top candidates and the yaw between query and match
i = int(np.flatnonzero(known)[0])
res = db.query_top_k(q[i].signature, k=3)
print("query", i, "true place", bench.associations[i], "top-3", res.place_ids,
      np.round(res.distances, 3))
match = enc.encode(bench.db_scans[res.place_ids[0]])
est = enc.yaw(q[i], match, "expectation").yaw_deg
truth = (bench.db_poses[res.place_ids[0], 2] - bench.query_poses[i, 2]) % 360
print(f"yaw estimate {est:.2f}, truth {truth:.2f}")

# novel places sit far away in signature space too
nearest = np.array([db.query_top_k(e.signature, 1).distances[0] for e in q])
print("rank-1 distance, revisits:", np.round(np.median(nearest[known]), 3),
      " novel:", np.round(np.median(nearest[~known]), 3))
thr, prec, rec, auc = rejection_curve(nearest, known)
print(f"unseen-place precision/recall AUC {auc:.3f}")
cut = float(np.max(nearest[known]))
calls = [unseen_place_score(db.query_top_k(e.signature, 1), cut) for e in q]
print("novel flagged:", sum(c == "unseen" for c, k in zip(calls, known) if not k), "of",
      int((~known).sum()))
