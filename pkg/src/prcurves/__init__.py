"""Precision and recall of autoregressive models under temperature and reweighted training.

Modules:

* :mod:`prcurves.dist`: categorical and factorized sequence distributions;
* :mod:`prcurves.prmetrics`: exact PR-curves, the sparsity bound, k-NN and pass@k estimators;
* :mod:`prcurves.artcase`: the two-defect toy model with closed-form PR-curves;
* :mod:`prcurves.losses`: token weights of the reweighted NLL family;
* :mod:`prcurves.nn`: a tiny transformer with hand-written gradients;
* :mod:`prcurves.multask`: the multiplication-mod-97 task;
* :mod:`prcurves.cli`: the ``prcurves`` command.
"""
__version__ = "0.1.0"
