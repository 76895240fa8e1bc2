"""Reference per-scan counting results from a 34-branch field trial.

Each row is (ground_truth, predicted, tp, fp, fn, precision, recall, f1)
with the metrics as published at 3 decimals; the trailing averages are the
published unweighted means. Used to pin compute_metrics and aggregate.
"""

FIELD_ROWS = [
    (66, 66, 60, 6, 6, 0.909, 0.909, 0.909),
    (38, 36, 34, 2, 4, 0.944, 0.895, 0.919),
    (34, 32, 28, 4, 6, 0.875, 0.824, 0.849),
    (39, 39, 35, 4, 4, 0.897, 0.897, 0.897),
    (36, 42, 35, 7, 1, 0.833, 0.972, 0.897),
    (62, 65, 55, 10, 7, 0.846, 0.887, 0.866),
    (35, 44, 34, 10, 1, 0.773, 0.971, 0.861),
    (40, 46, 39, 7, 1, 0.848, 0.975, 0.907),
    (52, 56, 45, 11, 7, 0.804, 0.865, 0.833),
    (34, 23, 21, 2, 13, 0.913, 0.618, 0.737),
    (28, 22, 20, 2, 8, 0.909, 0.714, 0.800),
    (52, 47, 41, 6, 11, 0.872, 0.788, 0.828),
    (39, 27, 26, 1, 13, 0.963, 0.667, 0.788),
    (39, 45, 38, 7, 1, 0.844, 0.974, 0.904),
    (66, 62, 53, 9, 13, 0.855, 0.803, 0.828),
    (50, 35, 33, 2, 17, 0.943, 0.660, 0.777),
    (21, 20, 19, 1, 2, 0.950, 0.905, 0.927),
    (37, 38, 35, 3, 2, 0.921, 0.946, 0.933),
    (32, 40, 32, 8, 0, 0.800, 1.000, 0.889),
    (51, 46, 39, 7, 12, 0.848, 0.765, 0.804),
    (30, 28, 24, 4, 6, 0.857, 0.800, 0.828),
    (45, 48, 41, 7, 4, 0.854, 0.911, 0.882),
    (28, 23, 22, 1, 6, 0.957, 0.786, 0.863),
    (60, 70, 59, 11, 1, 0.843, 0.983, 0.908),
    (37, 31, 27, 4, 10, 0.871, 0.730, 0.794),
    (65, 70, 64, 6, 1, 0.914, 0.985, 0.948),
    (47, 38, 33, 5, 14, 0.868, 0.702, 0.776),
    (61, 84, 61, 23, 0, 0.726, 1.000, 0.841),
    (40, 48, 40, 8, 0, 0.833, 1.000, 0.909),
    (40, 33, 24, 9, 16, 0.727, 0.600, 0.657),
    (38, 24, 20, 4, 18, 0.833, 0.526, 0.645),
    (40, 39, 35, 4, 5, 0.897, 0.875, 0.886),
    (34, 26, 25, 1, 9, 0.962, 0.735, 0.833),
    (44, 30, 29, 1, 15, 0.967, 0.659, 0.784),
]

FIELD_AVERAGES = (0.872, 0.833, 0.844)
