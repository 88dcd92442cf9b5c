"""
ECNN Toolkit

Error-correcting neural network ensembles: code-matrix design by simulated
annealing, end-to-end training with a diversity regulariser, a white-box
attack suite and numeric checks of the supporting lemmas.
"""

__version__ = "0.1.0"
