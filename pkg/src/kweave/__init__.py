"""kweave: two-stage multiple kernel learning over pairwise K-space.

Stage one learns a non-negative linear combination of base kernels by
training a linear classifier on pairs of instances (the K-space), stage
two trains a kernel SVM with the combined kernel.
"""

__version__ = "0.1.0"
