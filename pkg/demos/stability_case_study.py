"""How stability picks pseudo labels, on six hand-written prediction tracks.

Each column below is one target sample; each row is the adapting model's
prediction after 0, 3, ..., 15 epochs of contrastive adaptation. A sample
whose prediction barely moves between checkpoints is considered
trustworthy, and its pseudo label is the average over all checkpoints.

Run:  python demos/stability_case_study.py
"""

import numpy as np

from casp.adaptation import SnapshotMatrix
from casp.pseudo_labels import make_report

EPOCHS = [0, 3, 6, 9, 12, 15]
GROUND_TRUTH = [-3.0, 2.4, -0.8, -1.8, 3.0, -0.8]
TRACKS = np.array(
    [
        [-2.38, +0.83, +2.12, -1.21, +1.98, +1.68],
        [-2.39, +0.32, +1.17, -1.21, +1.99, +1.74],
        [-2.40, -0.17, +0.85, -1.22, +1.95, +1.20],
        [-2.41, +0.08, +1.25, -1.23, +2.11, +1.27],
        [-2.41, +1.02, -0.01, -1.23, +2.12, +1.01],
        [-2.42, +1.14, +0.18, -1.23, +2.11, +0.84],
    ]
)


def main():
    snap = SnapshotMatrix(EPOCHS, [f"case {i}" for i in range(1, 7)], TRACKS)

    # A fixed threshold of 0.012 keeps the two flattest tracks.
    report = make_report(snap, lam=None, threshold=0.012)
    print(f"{'sample':8} {'s':>7} {'pseudo':>8} {'truth':>7}  kept")
    for i, sid in enumerate(report.ids):
        print(
            f"{sid:8} {report.s[i]:7.3f} {report.pseudo[i]:8.2f} {GROUND_TRUTH[i]:7.2f}  "
            f"{'yes' if report.selected[i] else 'no'}"
        )

    # With λ the threshold is a percentile of s instead: λ=50 keeps the
    # flatter half of the samples.
    half = make_report(snap, lam=50)
    print(f"\nλ=50 -> threshold {half.threshold:.3f}, kept {half.n_selected} of {len(half.ids)}")

    # The kept samples are also the ones whose pseudo labels are closest
    # to the truth.
    err = np.abs(report.pseudo - np.array(GROUND_TRUTH))
    print(f"pseudo-label error, kept {err[report.selected].mean():.2f} vs dropped {err[~report.selected].mean():.2f}")


if __name__ == "__main__":
    main()
