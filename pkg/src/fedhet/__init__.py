"""Federated-learning simulation under breast-density-style heterogeneity.

Subpackages: ``synthdata`` (cohorts, splits, partitions), ``nnet`` (toy
CNNs with exact gradients), ``fedcore`` (FedAvg/FedProx/SCAFFOLD plus
baselines), ``evalstats`` (AUC, paired bootstrap, exact Wilcoxon), and
``experiment``/``cli`` (the config-driven runner).
"""

__version__ = "0.1.0"
