"""Shared fixtures and the acceptance-criteria result banner.

Thread caps are set before numpy ever loads so the timed checks run
single-threaded and the suite behaves the same on any host.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import time

import numpy as np
import pytest

from lexdiff.corpus import SynthConfig, generate_synthetic
from lexdiff.denoiser import DenoiserConfig, init_denoiser
from lexdiff.diffusion import build_schedule
from lexdiff.training import TrainConfig, train


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(n, desc): acceptance criterion; reported PASS/FAIL in the summary"
    )
    config._criterion_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, desc = mark.args
    results = item.config._criterion_results
    if report.when == "call":
        results[n] = (report.passed, desc)
    elif report.when == "setup" and not report.passed:
        results[n] = (False, desc)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criterion_results", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, desc = results[n]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {n}: {desc}")


@pytest.fixture(scope="session")
def toy_task():
    """Two-mode 2-D conditional task with a model trained for 2000 Adam steps.

    Trained once per session; the training-efficacy and guidance checks and the
    loss-trend check all read from here so the suite pays the cost once.
    """
    synth = SynthConfig(
        n_classes=2,
        dataset_per_class=120,
        web_per_class=0,
        dim_image=2,
        dim_text=2,
        class_std=1.0,
        separation=5.0,
        captions_per_record=1,
        seed=11,
    )
    dataset, _ = generate_synthetic(synth)
    dn_cfg = DenoiserConfig(
        n_tokens=1,
        d_latent=2,
        d_model=64,
        n_layers=4,
        layers_per_rat=4,
        d_text=2,
        d_time=16,
        d_hidden=64,
        seed=0,
    )
    sched = build_schedule(50, 4e-3, 0.18)
    train_cfg = TrainConfig(lr=1e-4, batch_size=24, max_epochs=400, max_steps=2000, seed=0)
    started = time.monotonic()
    params, history = train(dataset, init_denoiser(dn_cfg), sched, train_cfg)
    train_seconds = time.monotonic() - started
    return {
        "dataset": dataset,
        "denoiser_config": dn_cfg,
        "sched": sched,
        "params": params,
        "history": history,
        "train_seconds": train_seconds,
    }


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
