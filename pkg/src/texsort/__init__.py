"""texsort: textile material classification and contaminant segmentation
pipeline for recycling automation.

Subpackages: `dataset` (manifests and fold plans), `preprocess` (spatial
normalization and augmentation), `backbones`/`training` (two-phase transfer
learning), `zeroshot`/`backends` (detect-then-segment contaminant pipeline),
`metrics` (classification and instance-segmentation evaluation), `synthgen`
(deterministic synthetic data), `cli` (command-line entry points).
"""

__version__ = "0.1.0"
