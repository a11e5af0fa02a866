import json

import numpy as np
import pytest

from taskgrasp import container
from taskgrasp.cli import main
from taskgrasp.geometry import meshes_collide
from taskgrasp.hand import HAND_MODEL_ENV
from taskgrasp.pipeline import (
    ConfigInvalid,
    PipelineConfig,
    derive_seed,
    read_dataset,
    section_digest,
    split_configs,
)
from taskgrasp.scenegen import TaskKind, hand_collides, hand_in_scene

TINY_NET = {"feature_dim": 16, "width": 16, "heads": 2, "layers": 1, "neighbors": 8, "mlp": [16, 16],
            "pooled_tokens": 4}
SMALL = {
    "n_objects": 2,
    "configs_per_object": 10,
    "priors_per_object": 2,
    "prior_rounds": 3,
    "grasps_per_config": 2,
    "n_object_points": 64,
    "n_scene_points": 500,
    "samples_per_config": 2,
    "contact_train": {"steps": 3, "batch_size": 4, "network": TINY_NET},
    "grasp_train": {"steps": 3, "batch_size": 4, "network": TINY_NET},
}


def run(out, stage, cfg_path, *extra):
    return main([stage, "--config", str(cfg_path), "--out", str(out), *extra])


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory, small_cfg):
    out = tmp_path_factory.mktemp("run")
    for stage in ("gen-dataset", "compute-maps"):
        assert run(out, stage, small_cfg, "--seed", "1") == 0
    assert run(out, "evaluate", small_cfg, "--seed", "1", "--source", "ground-truth") == 0
    return out


# ---------------------------------------------------------------- config


def test_config_defaults_validate():
    cfg = PipelineConfig().validate()
    assert cfg.grasps_per_config == 16 and cfg.configs_per_object == 10
    assert cfg.contact_train.task == cfg.task


def test_config_roundtrip_and_task_sync():
    cfg = PipelineConfig(task="stacking", seed=3)
    again = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert again.grasp_train.task == "stacking"
    assert cfg.with_overrides(task="shelving").contact_train.task == "shelving"


@pytest.mark.parametrize("bad", [{"task": "juggling"}, {"configs_per_object": 0}, {"holdout_fraction": 1.0},
                                 {"contact_alpha": -1.0}, {"no_such_key": 1}])
def test_config_invalid(bad):
    with pytest.raises(ConfigInvalid):
        PipelineConfig.from_dict(bad).validate()


def test_section_digest_tracks_fields():
    a, b = PipelineConfig(), PipelineConfig(eval_pv=2.5)
    assert section_digest(a, "maps") == section_digest(b, "maps")
    assert section_digest(a, "evaluate") != section_digest(b, "evaluate")


def test_derive_seed_independent():
    seeds = {derive_seed(0, 1, i, j) for i in range(10) for j in range(10)}
    assert len(seeds) == 100
    assert derive_seed(7, 2, 3) == derive_seed(7, 2, 3)


def test_split_is_config_level():
    ids = [f"c{i}" for i in range(20)]
    train, held = split_configs(ids, 0, 0.2)
    assert len(held) == 4 and not set(train) & set(held)
    assert sorted(train + held) == sorted(ids)
    assert split_configs(ids, 0, 0.2) == (train, held)


# ---------------------------------------------------------------- exit statuses


def test_invalid_config_exit(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"configs_per_object": 0}))
    assert run(tmp_path / "out", "gen-dataset", cfg) == 4
    rec = json.loads((tmp_path / "out" / "error.json").read_text())
    assert rec["error"] == "invalid config" and rec["stage"] == "gen-dataset"


def test_unreadable_config_exit(tmp_path):
    cfg = tmp_path / "broken.json"
    cfg.write_text("{not json")
    assert run(tmp_path / "out", "gen-dataset", cfg) == 4


def test_dependency_missing_exit(tmp_path, small_cfg):
    assert run(tmp_path, "compute-maps", small_cfg) == 2
    rec = json.loads((tmp_path / "error.json").read_text())
    assert rec["error"] == "stage dependency missing"


def test_missing_hand_model_exit(tmp_path, small_cfg, monkeypatch):
    monkeypatch.setenv(HAND_MODEL_ENV, str(tmp_path / "absent.bin"))
    assert run(tmp_path / "out", "gen-dataset", small_cfg) == 1
    assert (tmp_path / "out" / "error.json").is_file()


def test_config_drift_exit(pipeline_dir, small_cfg):
    # a different root seed changes the dataset section recorded by upstream stages
    assert run(pipeline_dir, "train-contact", small_cfg, "--seed", "2") == 3
    rec = json.loads((pipeline_dir / "error.json").read_text())
    assert rec["error"] == "config drift"


# ---------------------------------------------------------------- artifacts


def test_gen_dataset_manifest_and_revalidation(pipeline_dir, catalog, hand_model):
    manifest = json.loads((pipeline_dir / "dataset" / "manifest.json").read_text())
    assert len(manifest["configs"]) == 20
    ds = read_dataset(pipeline_dir / "dataset")
    assert len(ds.configs) == 20
    assert sum(len(r) for r in ds.records.values()) > 0
    for tc in ds.configs:
        assert tc.kind is TaskKind.PLACING
        for scene in (tc.init, tc.goal):
            tgt = scene.world_mesh(scene.target, catalog)
            for obs in scene.obstacles:
                assert not meshes_collide(scene.world_mesh(obs, catalog), None, tgt, None)
        for g in ds.records[tc.id]:
            for scene in (tc.init, tc.goal):
                assert not hand_collides(hand_in_scene(hand_model, g.params, scene.target.pose), scene, catalog)


def test_stored_config_next_to_outputs(pipeline_dir, small_cfg):
    stored = json.loads((pipeline_dir / "dataset" / "config.json").read_text())
    expected = PipelineConfig.from_dict(json.loads(small_cfg.read_text())).with_overrides(seed=1)
    assert stored == expected.to_dict()


def test_ground_truth_evaluation(pipeline_dir):
    row = json.loads((pipeline_dir / "eval" / "ground-truth.json").read_text())["row"]
    assert row["qr"] == 100.0
    assert row["ts"] == pytest.approx((1 - row["init_opp"]) * (1 - row["goal_opp"]), abs=1e-12)


def test_report_byte_identical(pipeline_dir, small_cfg):
    assert run(pipeline_dir, "report", small_cfg, "--seed", "1") == 0
    first = (pipeline_dir / "report" / "table.csv").read_bytes()
    assert run(pipeline_dir, "report", small_cfg, "--seed", "1") == 0
    assert (pipeline_dir / "report" / "table.csv").read_bytes() == first
    assert not (pipeline_dir / "error.json").exists()
    meta = json.loads((pipeline_dir / "report" / "table.json").read_text())
    assert meta["rows"][0]["method"] == "ground-truth"


def test_training_sampling_and_evaluation(pipeline_dir, small_cfg):
    for stage in ("train-contact", "train-grasp", "sample"):
        assert run(pipeline_dir, stage, small_cfg, "--seed", "1") == 0
    split = json.loads((pipeline_dir / "maps" / "split.json").read_text())
    for cid in split["heldout"]:
        tensors, _ = container.load(pipeline_dir / "samples" / f"{cid}.bin")
        assert tensors["contact"].shape == (2, 64)
        assert tensors["theta"].shape == (2, 51)
    assert run(pipeline_dir, "evaluate", small_cfg, "--seed", "1") == 0
    assert (pipeline_dir / "eval" / "ours.json").is_file()
    assert run(pipeline_dir, "report", small_cfg, "--seed", "1") == 0
    csv_rows = (pipeline_dir / "report" / "table.csv").read_text().splitlines()
    assert len(csv_rows) == 3


def test_dataset_regenerates_identically(pipeline_dir, small_cfg, tmp_path):
    assert run(tmp_path, "gen-dataset", small_cfg, "--seed", "1") == 0
    for sub in ("manifest.json", "configs/obj_00_c03.json", "records/obj_00_c03.bin", "priors/obj_00.bin"):
        assert (tmp_path / "dataset" / sub).read_bytes() == (pipeline_dir / "dataset" / sub).read_bytes()


def test_maps_shapes(pipeline_dir):
    for cid in json.loads((pipeline_dir / "maps" / "split.json").read_text())["train"][:3]:
        path = next((pipeline_dir / "maps").glob(f"**/{cid}*.bin"))
        tensors, _ = container.load(path)
        for v in tensors.values():
            assert v.shape[-1] == 64
            assert np.all(np.isfinite(v))
