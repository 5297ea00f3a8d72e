"""
FPR at 95% TPR and AUROC
========================

Both metrics treat the uncertainty as "higher means more OOD". FPR95 is
the fraction of OOD objects accepted at the threshold keeping 95% of ID
objects; AUROC is the chance that a random OOD object scores above a
random ID object, ties counted as one half.
"""

import numpy as np

from objood.metrics import auroc, format_table, fpr_at_tpr, summarize

# tiny worked example: one of the four (OOD, ID) pairs is mis-ordered
print("AUROC", auroc([1.0, 2.0], [1.5, 3.0]))  # 0.75

# with ID scores 1..100 the threshold is 95, so OOD scores 90, 94 and 95
# are accepted as ID
print("FPR95", fpr_at_tpr(np.arange(1, 101), [90, 94, 95, 96, 200], q=0.95))  # 0.6

# two overlapping score distributions
rng = np.random.default_rng(0)
id_scores = rng.normal(-8.0, 0.5, size=2000)
reports = [
    summarize(id_scores, rng.normal(-8.0 + shift, 0.5, size=2000), name=f"shift {shift}")
    for shift in (0.0, 0.5, 1.0, 2.0)
]
print(format_table(reports, row_header="OOD scores"))
