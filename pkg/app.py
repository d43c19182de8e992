"""
GAN Filter Transfer - Main Application

Command-line entry point of the GAN filter-transfer toolkit. Pretrains a
source GAN on a large, diverse corpus and transfers its low-level filters to
small target corpora: the general part stays frozen (optionally modulated by
AdaFM, filter selection or weight demodulation) while a small specific part
is trained on the target images.

Usage:
    python app.py synth-data --domain source_shapes --out runs/source_data
    python app.py pretrain --out runs/source --iters 6000
    python app.py transfer --source-ckpt runs/source/final.ckpt --mode adafm \\
        --gm 4 --dn 2 --limit-n 500 --out runs/flowers_adafm
    python app.py analyze --ckpt runs/flowers_adafm/final.ckpt --out runs/analysis

Version: 1.0.0
License: MIT License
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
