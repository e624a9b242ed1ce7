"""Reference values used as test fixtures."""
import numpy as np

# Confusion matrix of the LL-trained ResNet on the 4-class foreign set, over labels 1..8.
FOREIGN_CONFUSION = np.zeros((8, 8), dtype=np.int64)
FOREIGN_CONFUSION[:4] = [
    [56, 655, 47, 1, 35, 238, 4, 164],
    [0, 1091, 2, 0, 19, 15, 0, 73],
    [0, 945, 173, 12, 0, 69, 0, 1],
    [0, 13, 0, 0, 0, 0, 1187, 0],
]

# Reported two-decimal metrics for that matrix (classes 1..8).
FOREIGN_PRECISION = [1.0, 0.4, 0.78, 0.0, 0.0, 0.0, 0.0, 0.0]
FOREIGN_RECALL = [0.05, 0.91, 0.14, 0.0, 0.0, 0.0, 0.0, 0.0]
FOREIGN_F1 = [0.09, 0.56, 0.24, 0.0, 0.0, 0.0, 0.0, 0.0]
FOREIGN_ACCURACY = 0.28
FOREIGN_WEIGHTED = {"precision": 0.55, "recall": 0.28, "f1": 0.22}

# Weighted metrics of the 4-class-trained ResNet in-domain and on the 8-class set, and the reported drops.
HOME_WEIGHTED = {"weighted_precision": 0.7928, "weighted_recall": 0.7794, "weighted_f1": 0.7833}
AWAY_WEIGHTED = {"weighted_precision": 0.491, "weighted_recall": 0.3133, "weighted_f1": 0.2339}
REPORTED_DROP = {"weighted_precision": 0.30, "weighted_recall": 0.47, "weighted_f1": 0.55}

# Equal-support per-class precision (4 classes) whose mean is the weighted value above.
EQUAL_SUPPORT_PRECISION = [0.93, 0.59, 0.67, 0.99]

# Per-class f1 of the LL-trained ResNet on its own test split, and the reported macro f1.
RESNET_F1 = [0.981, 0.970, 0.934, 0.971, 0.991, 0.944, 1.000, 0.971]
RESNET_MACRO_F1 = 0.970

# Paired in-domain / foreign weighted metrics for the LL-trained ResNet.
RESNET_HOME = {"weighted_precision": 0.91, "weighted_recall": 0.88, "weighted_f1": 0.89}
RESNET_FOREIGN = {"weighted_precision": 0.55, "weighted_recall": 0.28, "weighted_f1": 0.22}
RESNET_DROP = {"weighted_precision": 0.36, "weighted_recall": 0.61, "weighted_f1": 0.67}

# Frames available per class (1..8) in the source video corpus.
FRAMES_PER_CLASS = [19173, 24101, 14030, 33063, 46303, 16282, 15094, 6393]

# Stage-2 trainable-parameter budgets.
TRAINABLE_BUDGET = {"resnet101": 24.8e6, "vit_b32": 21.3e6, "mobilenet_v2": 0.7e6, "nasnet_mobile": 1.6e6}

TRAINING_COLUMNS = ["Model", "Input Image Size", "Training Batch Size", "Epochs",
                    "Total training time (h:mm)", "Training Time Per Epoch (s)"]
INFERENCE_COLUMNS = ["Model", "Input Image Size", "Inference Batch Size", "Memory usage (model only, MB)",
                     "Peak memory usage during inference (MB)", "Average inference throughput (images/s)"]


def within(value, expected, tol):
    """Inclusive tolerance check; reference values are rounded, so some sit exactly on the bound."""
    return abs(float(value) - float(expected)) <= tol + 1e-9
