import dataclasses
import json

import numpy as np
import pytest

from esihdr.config import DataConfig, NetworkConfig, RunConfig
from esihdr.mhdr import HdrNet
from esihdr.train import Divergence, build_pool, jsonable, train_toy


def tiny(**kw):
    return RunConfig(network=NetworkConfig(channels=4), data=DataConfig(pool=4, batch=2),
                     steps=3, metrics_every=2, **kw)


@pytest.fixture(scope="module")
def report():
    return train_toy(tiny())


class TestTrainToy:
    def test_rejects_zero_steps(self):
        with pytest.raises(ValueError, match="steps"):
            train_toy(tiny(), steps=0)

    def test_one_step(self):
        rep = train_toy(tiny(), steps=1)
        assert len(rep.records) == 1
        assert rep.records[0]["step"] == 1
        assert [m["step"] for m in rep.metrics] == [1]

    def test_records(self, report):
        assert [r["step"] for r in report.records] == [1, 2, 3]
        assert [m["step"] for m in report.metrics] == [2, 3]
        loss = report.records[0]["loss"]
        assert loss["lam"] == 0.5 and set(loss["m"]) == {"total", "re", "ssim", "gradient"}
        assert report.records[0]["lr"] == 2e-4

    def test_deterministic(self, report):
        again = train_toy(tiny())
        assert again.records == report.records
        assert again.metrics == report.metrics
        assert again.config_hash == report.config_hash
        for (_, a), (_, b) in zip(report.model.store, again.model.store):
            np.testing.assert_array_equal(a.data, b.data)

    def test_seed_changes_run(self, report):
        other = train_toy(tiny(), seed=1)
        assert other.records[0]["loss"] != report.records[0]["loss"]
        assert other.config["network"]["seed"] == 1

    def test_write(self, report, tmp_path):
        report.write(tmp_path)
        lines = (tmp_path / "records.jsonl").read_text().splitlines()
        assert [json.loads(x)["step"] for x in lines] == [1, 2, 3]
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["steps"] == 3 and summary["config_hash"] == report.config_hash
        assert summary["ratio"] == pytest.approx(report.final_loss / report.initial_loss)

    def test_nan_aborts_with_step(self):
        cfg = tiny()
        model = HdrNet(dataclasses.replace(cfg.network, seed=cfg.seed))
        model.store["mhdr.recon.out.bias"].data[...] = np.nan
        with pytest.raises(Divergence, match="step 1") as info:
            train_toy(cfg, model=model)
        assert info.value.step == 1


class TestHelpers:
    def test_jsonable(self):
        doc = jsonable({"a": [float("inf"), 1.0], "b": (float("-inf"), float("nan"))})
        assert doc == {"a": ["inf", 1.0], "b": ["-inf", "nan"]}
        json.dumps(doc, allow_nan=False)

    def test_pool_motion_bounded(self):
        data = DataConfig(pool=6, max_motion=2)
        pool = build_pool(data, 0)
        assert len(pool) == 6
        assert all(s.stack.shape == (32, 32) for s in pool)
