"""One-shot viewgrid reconstruction from a single view, with a NumPy-only network stack.

Submodules:

* ``ndtensor``   conv / transposed conv / dense layers, MSE, SGD with momentum, gradient checks
* ``shapeforge`` procedural SDF shape families, sphere-tracing renderer, dataset generation
* ``viewgrid``   view-sphere sampling, azimuth alignment, losses, PGM montages
* ``network``    the encoder-decoder and its feature taps
* ``training``   minibatch training with early stopping and a learning-rate sweep
* ``evaluation`` averaging baselines, reconstruction scoring, k-NN recognition, heatmaps
* ``formats``    VGDS dataset and SCPT checkpoint containers
* ``cli``        the ``shapecodes`` command
"""

__version__ = "0.1.0"
