"""Shared fixtures: a cached trained toy model and a fixed 20-pair benchmark.

Training the toy denoiser takes a while on CPU, so the checkpoint is cached
under the system temp dir keyed by the training configuration and architecture
hash. Delete the cache dir to force a retrain.
"""

import hashlib
import json
import tempfile
from dataclasses import asdict
from pathlib import Path

import pytest

from restyle import data, denoiser
from restyle.data import DatasetSpec, generate, load_dataset
from restyle.denoiser import TrainConfig, build_toy_unet, load_checkpoint, \
    save_checkpoint, train
from restyle.numerics import SeededRng

TRAIN_IMAGES = 1000          # per family
TRAIN_CONFIG = TrainConfig(epochs=200, batch_size=32, lr=2e-4, seed=0, max_steps=3000)

CACHE = Path(tempfile.gettempdir()) / "restyle_test_cache"


def _cache_tag():
    blob = json.dumps([TRAIN_IMAGES, asdict(TRAIN_CONFIG), denoiser.arch_hash()],
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@pytest.fixture(scope="session")
def trained_model():
    root = CACHE / _cache_tag()
    ckpt = root / "checkpoint"
    if (ckpt / "manifest.json").exists():
        try:
            return load_checkpoint(ckpt)
        except Exception:
            pass
    datadir = root / "data"
    if not (datadir / "manifest.json").exists():
        generate(DatasetSpec(count=TRAIN_IMAGES, seed=0), datadir)
    dataset = load_dataset(datadir)
    model = build_toy_unet(TRAIN_CONFIG.seed)
    model, _ = train(model, TRAIN_CONFIG, dataset)
    save_checkpoint(model, ckpt)
    return model


@pytest.fixture(scope="session")
def benchmark_pairs():
    """20 fixed content/style pairs, disjoint from the training streams."""
    root = SeededRng(777)
    pairs = []
    for i in range(20):
        c = data.make_content_image(data.CONTENT_KINDS[i % 4], root.spawn(2 * i))
        s = data.make_style_image(data.STYLE_KINDS[(i // 4) % 4], root.spawn(2 * i + 1))
        pairs.append((c, s))
    return pairs


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call":
                continue
            if "test_acceptance.py" in rep.nodeid:
                name = rep.nodeid.split("::")[-1]
                lines.append((name, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"  {status}  {name}")
