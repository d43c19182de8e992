#!/usr/bin/env python3
"""
Setup script for GAN Filter Transfer
Handles installation, a smoke test and a sample configuration
"""

import os
import platform
import subprocess
import sys
from pathlib import Path


def print_banner():
    """Print application banner"""
    print("""
==========================================
    GAN FILTER TRANSFER - SETUP
==========================================

Pretrain a GAN on a diverse source corpus, then transfer its
frozen low-level filters to small target datasets.

""")


def check_python_version():
    """Check if Python version is compatible"""
    print("Checking Python version...")

    major, minor = sys.version_info[:2]
    if major < 3 or (major == 3 and minor < 9):
        print("Error: Python 3.9 or higher is required")
        print(f"   Current version: {major}.{minor}")
        sys.exit(1)

    print(f"Python {major}.{minor} is compatible")
    return True


def install_dependencies():
    """Install required Python packages"""
    print("\nInstalling Python dependencies...")

    try:
        subprocess.run([
            sys.executable, "-m", "pip", "install", "-r", "requirements.txt"
        ], check=True, capture_output=True)
        print("Dependencies installed successfully")
    except subprocess.CalledProcessError as e:
        print(f"Error installing dependencies: {e}")
        print("   Please run: pip install -r requirements.txt")
        return False

    return True


def create_directories():
    """Create run and data directories"""
    print("\nCreating working directories...")

    for directory in ["runs", "data"]:
        Path(directory).mkdir(exist_ok=True)
        print(f"Created directory: {directory}")
    return True


def test_installation():
    """Build a tiny model pair and run one forward pass"""
    print("\nTesting installation...")

    try:
        import numpy as np

        from src.architecture import configure_models
        from src.config import RunConfig
        from src.tensor_core import Tensor, no_grad

        cfg = RunConfig(resolution=16, channels=[16, 8, 8], mapping_depth=2,
                        style_dim=8, latent_dim=8, mode="adafm", gm=2, dn=1)
        generator, discriminator, _ = configure_models(cfg)
        with no_grad():
            images = generator(Tensor(np.zeros((2, cfg.latent_dim))))
            logits = discriminator(images)
        print(f"Generated {images.shape} images, logits {logits.shape}")
        print("Installation test completed successfully")
        return True

    except Exception as e:
        print(f"Installation test failed: {e}")
        return False


def create_startup_script():
    """Create a script running the desk-scale pipeline end to end"""
    print("\nCreating pipeline script...")

    script_content = """#!/bin/bash
# GAN Filter Transfer - desk-scale pipeline

set -e

if [ -d "venv" ]; then
    source venv/bin/activate
fi

python app.py pretrain --out runs/source
python app.py transfer --source-ckpt runs/source/final.ckpt --mode adafm --limit-n 500 --out runs/target_adafm
python app.py transfer --mode scratch --limit-n 500 --out runs/target_scratch
python app.py analyze --ckpt runs/target_adafm/final.ckpt --out runs/target_adafm/analysis
"""

    with open("run_pipeline.sh", "w") as f:
        f.write(script_content)

    if platform.system() != "Windows":
        os.chmod("run_pipeline.sh", 0o755)

    print("Created run_pipeline.sh script")
    return True


def create_sample_config():
    """Create sample configuration files"""
    print("\nCreating sample configuration...")

    run_config = """# GAN Filter Transfer - run configuration (key=value)

seed=0
mode=adafm
gm=4
dn=2
resolution=32
total_iters=6000
batch=16
lr=0.0001
r1_gamma=10.0
limit_n=500
"""
    with open("run.conf.example", "w") as f:
        f.write(run_config)

    env_content = """# Process settings
GANXFER_LOG_LEVEL=INFO
GANXFER_LOG_FORMAT=console
"""
    with open(".env.example", "w") as f:
        f.write(env_content)

    print("Created run.conf.example and .env.example")
    return True


def print_next_steps():
    """Print next steps for the user"""
    print("""
=======================================
   INSTALLATION COMPLETED SUCCESSFULLY!
=======================================

NEXT STEPS:

1. Run the desk-scale pipeline:
   ./run_pipeline.sh

2. Or run single commands:
   python app.py --help
   python app.py transfer --config run.conf.example --source-ckpt runs/source/final.ckpt --out runs/my_run

3. Run the test suite:
   pytest            (add --runslow for the long reproductions)
""")


def main():
    """Main setup function"""
    print_banner()

    check_python_version()

    response = input("Proceed with installation? (y/N): ").lower().strip()
    if response not in ['y', 'yes']:
        print("Installation cancelled")
        sys.exit(0)

    steps = [
        ("Installing dependencies", install_dependencies),
        ("Creating directories", create_directories),
        ("Testing installation", test_installation),
        ("Creating pipeline script", create_startup_script),
        ("Creating sample config", create_sample_config),
    ]

    for step_name, step_func in steps:
        print(f"\n{step_name}...")
        if not step_func():
            print(f"Setup failed at: {step_name}")
            sys.exit(1)

    print_next_steps()


if __name__ == "__main__":
    main()
