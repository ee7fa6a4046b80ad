"""Desk-scale voice conversion toolkit.

Submodules:
  features  audio ingest, mel-cepstral analysis, the feature container
  align     dynamic time warping and target-onto-source warping
  stats     speaker statistics, F0 conversion, mel-cepstral distortion
  gmm       Gaussian mixture conversion baseline
  graph     minimal reverse-mode autodiff core
  ssvc      semi-supervised shared-latent sequence model
  harness   manifests, synthetic corpus, experiment sweeps
  cli       command-line entry point
"""

from . import align, features, gmm, graph, harness, ssvc, stats

__all__ = ["align", "features", "gmm", "graph", "harness", "ssvc", "stats"]
__version__ = "0.1.0"
