import json
import os
import time

import pytest
import torch

import ratenet as rn
import ratenet.trainer as trainer_mod
from ratenet.config import CycleConfig, DataConfig, OptimizerConfig, RunConfig
from ratenet.discriminators import DiscriminatorConfig
from ratenet.generator import GeneratorConfig

torch.manual_seed(0)


def read_log(out_dir):
    with open(os.path.join(str(out_dir), "train_log.jsonl"), "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def strip_wall(records):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in records]


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "tiny"
    rn.make_synthetic_dataset(str(root), 2, 2, 64, 64, seed=11)
    return str(root)


@pytest.fixture(scope="session")
def tiny_index(tiny_root):
    return rn.load_dataset(tiny_root, "train")


@pytest.fixture(scope="session")
def tiny_batch(tiny_index):
    return rn.collate([rn.load_pair(e) for e in tiny_index.pairs])


@pytest.fixture(scope="session")
def micro_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "micro"
    rn.make_synthetic_dataset(str(root), 2, 2, 32, 32, seed=5)
    return str(root)


def micro_config(root, total_cycles=2, **cycle_kw):
    """Dollhouse-sized run config for fast full-loop tests."""
    cycle_kw.setdefault("batch_size", 2)
    cycle_kw.setdefault("seed", 3)
    cycle_kw.setdefault("checkpoint_every", 2)
    return RunConfig(
        data=DataConfig(root=str(root), height=32, width=32),
        generator=GeneratorConfig(base_channels=8, max_channels=16, n_patn_blocks=2,
                                  n_adain_blocks=2, texture_code_dim=16),
        discriminator=DiscriminatorConfig(base_channels=8),
        optimizer=OptimizerConfig(base_lr=1e-3, hold_cycles=total_cycles),
        cycle=CycleConfig(total_cycles=total_cycles, **cycle_kw),
    )


@pytest.fixture
def make_micro_config(micro_root):
    def _make(total_cycles=2, **cycle_kw):
        return micro_config(micro_root, total_cycles, **cycle_kw)
    return _make


@pytest.fixture(scope="session")
def overfit_run(tiny_root, tmp_path_factory):
    """The 300-cycle smoke-training run; shared by acceptance and metric tests."""
    out_dir = tmp_path_factory.mktemp("overfit")
    config = rn.overfit_preset(tiny_root)
    started = time.monotonic()
    final_ckpt = rn.train(config, str(out_dir))
    duration = time.monotonic() - started
    return {
        "config": config,
        "root": tiny_root,
        "out_dir": str(out_dir),
        "final_ckpt": final_ckpt,
        "records": read_log(out_dir),
        "duration": duration,
    }


class _Interrupt(Exception):
    pass


@pytest.fixture(scope="session")
def determinism_runs(micro_root, tmp_path_factory):
    """Three 8-cycle traces: two fresh runs and one interrupted-and-resumed."""
    config = micro_config(micro_root, total_cycles=8)
    base = tmp_path_factory.mktemp("determinism")

    dirs = {name: str(base / name) for name in ("a", "b", "resumed")}
    rn.train(config, dirs["a"])
    rn.train(config, dirs["b"])

    calls = {"n": 0}
    real_run_cycle = trainer_mod.run_cycle

    def interrupting(state, batch, lr):
        if calls["n"] == 5:
            raise _Interrupt
        calls["n"] += 1
        return real_run_cycle(state, batch, lr)

    trainer_mod.run_cycle = interrupting
    try:
        with pytest.raises(_Interrupt):
            rn.train(config, dirs["resumed"])
    finally:
        trainer_mod.run_cycle = real_run_cycle
    rn.train(config, dirs["resumed"], resume=True)

    return {name: read_log(path) for name, path in dirs.items()}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    verdicts = {}
    for status in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if status == "passed":
                verdicts.setdefault(name, "PASS")
            else:
                verdicts[name] = "FAIL"
    if verdicts:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(verdicts):
            terminalreporter.write_line(f"{verdicts[name]}  {name}")
