"""lgdemux: Laguerre-Gaussian mode demultiplexing at desk scale.

Physically correct LG beam/superposition synthesis, the dataset and
augmentation protocol, a synthetic optical-aberration model, the Histogram
Weighted Loss, and a calibration -> classifier neural flow with evaluation
tooling and a CLI.
"""

__version__ = "0.1.0"
