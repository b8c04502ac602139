"""Image quality assessment from frozen encoder features with a spatial/frequency refiner.

Modules:
    tensor    reverse-mode autodiff on numpy arrays
    spectral  radix-2 real FFTs and the Fourier-conv layer
    encoder   toy frozen patch encoder and the .siqf feature format
    sfem      multi-scale spatial + frequency feature extraction
    distance  per-channel feature distances
    heads     FR / NR regression heads
    model     parameter bundle and forward pass
    optim     L1 loss, Adam, checkpoints, training loop
    evalm     SRCC, PLCC, PSNR baseline, report records
    data      synthetic distortion corpus
    cli       ``sfiqa`` command line
"""

__version__ = "0.1.0"
