"""Pipeline stages: dataset generation, maps, training, sampling, evaluation and reporting.

Each stage reads its inputs from an output directory, writes its artifacts atomically and
records the digests of the config sections it depends on in ``manifest.json``. Downstream
stages refuse to run on artifacts built from a different config ("config drift").
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import container
from .container import atomic_write_text
from .diffusion import (
    ContactDataset,
    GraspDataset,
    NetworkConfig,
    TrainConfig,
    history_csv,
    load_weights,
    sample_contact,
    sample_grasps,
    save_weights,
    train_contact,
    train_grasp,
)
from .hand import HandModel, HandParams, default_hand_model, forward_hand
from .maps import compute_contact_map, compute_distance_map
from .meshio import save_obj
from .metrics import (
    GraspEvaluation,
    ReportRow,
    Thresholds,
    aggregate,
    evaluate_record,
    report_csv,
    report_json,
    report_metadata,
)
from .scenegen import (
    AnnotatedGrasp,
    SceneError,
    TaskConfig,
    TaskKind,
    annotate_grasp,
    default_catalog,
    filter_grasps,
    hand_collides,
    hand_in_scene,
    object_cloud,
    sample_prior_grasps,
    scene_cloud,
    generate_config,
)

STAGES = ("gen-dataset", "compute-maps", "train-contact", "train-grasp", "sample", "evaluate", "report")
FREE_FALL_CM = 0.5 * 9.81 * 100.0  # one second of free fall, used when a simulation blows up


class PipelineError(RuntimeError):
    code = "pipeline error"
    exit_status = 1


class DependencyMissing(PipelineError):
    code = "stage dependency missing"
    exit_status = 2


class ConfigDrift(PipelineError):
    code = "config drift"
    exit_status = 3


class ConfigInvalid(PipelineError):
    code = "invalid config"
    exit_status = 4


def _default_train(steps, lr) -> TrainConfig:
    return TrainConfig(steps=steps, lr=lr, batch_size=16, network=NetworkConfig(feature_dim=64, width=64))


@dataclass(frozen=True)
class PipelineConfig:
    task: str = "placing"
    seed: int = 0
    objects: tuple = ()  # asset ids; empty selects from the task's category
    n_objects: int = 0  # 0 keeps every candidate object
    configs_per_object: int = 10
    grasps_per_config: int = 16
    priors_per_object: int = 16
    prior_rounds: int = 4  # candidate grasps per wanted prior
    n_object_points: int = 2048
    n_scene_points: int = 6000
    scene_alpha: float = 30.0
    scene_saturation: float = 0.2
    contact_alpha: float = 100.0
    contact_saturation: float = 1.0
    prior_pv: float = 4.0  # cm^3
    prior_sd: float = 3.0  # cm
    eval_pv: float = 3.0
    eval_sd: float = 2.0
    contact_threshold: float = 5e-3  # m
    holdout_fraction: float = 0.2
    samples_per_config: int = 16
    contact_train: TrainConfig = field(default_factory=lambda: _default_train(2000, 1e-3))
    grasp_train: TrainConfig = field(default_factory=lambda: _default_train(2000, 2e-4))

    def __post_init__(self):
        # loss weights follow the pipeline task
        for name in ("contact_train", "grasp_train"):
            tc = getattr(self, name)
            if tc.task != self.task:
                object.__setattr__(self, name, replace(tc, task=self.task))

    def validate(self) -> "PipelineConfig":
        problems = []
        try:
            TaskKind(self.task)
        except ValueError:
            problems.append(f"task must be one of {[k.value for k in TaskKind]}")
        for name in ("configs_per_object", "grasps_per_config", "priors_per_object", "prior_rounds",
                     "n_object_points", "n_scene_points", "samples_per_config"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be >= 1")
        if self.n_objects < 0:
            problems.append("n_objects must be >= 0")
        for name in ("scene_alpha", "scene_saturation", "contact_alpha", "contact_saturation", "prior_pv",
                     "prior_sd", "eval_pv", "eval_sd", "contact_threshold"):
            if not float(getattr(self, name)) > 0:
                problems.append(f"{name} must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            problems.append("holdout_fraction must lie in [0, 1)")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects"] = list(self.objects)
        d["contact_train"] = self.contact_train.to_dict()
        d["grasp_train"] = self.grasp_train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {unknown}")
        try:
            if "objects" in d:
                d["objects"] = tuple(d["objects"])
            for key in ("contact_train", "grasp_train"):
                if key in d:
                    d[key] = TrainConfig.from_dict(d[key])
            cfg = cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc

    def with_overrides(self, seed=None, task=None, deterministic=False) -> "PipelineConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if task is not None:
            cfg = replace(cfg, task=task)
        cfg = replace(
            cfg,
            contact_train=replace(cfg.contact_train, deterministic=cfg.contact_train.deterministic or deterministic),
            grasp_train=replace(cfg.grasp_train, deterministic=cfg.grasp_train.deterministic or deterministic),
        )
        return cfg

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.eval_pv, self.eval_sd, self.contact_threshold)


SECTIONS = {
    "dataset": ("task", "seed", "objects", "n_objects", "configs_per_object", "grasps_per_config",
                "priors_per_object", "prior_rounds", "prior_pv", "prior_sd", "eval_pv", "eval_sd"),
    "maps": ("n_object_points", "n_scene_points", "scene_alpha", "scene_saturation", "contact_alpha",
             "contact_saturation", "holdout_fraction"),
    "contact_train": ("contact_train",),
    "grasp_train": ("grasp_train",),
    "sample": ("samples_per_config",),
    "evaluate": ("eval_pv", "eval_sd", "contact_threshold"),
}

STAGE_SECTIONS = {
    "gen-dataset": ("dataset",),
    "compute-maps": ("dataset", "maps"),
    "train-contact": ("dataset", "maps", "contact_train"),
    "train-grasp": ("dataset", "maps", "grasp_train"),
    "sample": ("dataset", "maps", "contact_train", "grasp_train", "sample"),
    "evaluate": ("dataset", "evaluate"),
    "report": ("evaluate",),
}

STAGE_DEPS = {
    "gen-dataset": (),
    "compute-maps": ("gen-dataset",),
    "train-contact": ("compute-maps",),
    "train-grasp": ("compute-maps",),
    "sample": ("train-contact", "train-grasp"),
    "evaluate": ("gen-dataset",),
    "report": ("evaluate",),
}


def section_digest(cfg: PipelineConfig, section: str) -> str:
    d = cfg.to_dict()
    payload = json.dumps({k: d[k] for k in SECTIONS[section]}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def derive_seed(root: int, *keys: int) -> int:
    """Independent per-record seed split deterministically from the stage root seed."""
    return int(np.random.SeedSequence([int(root), *[int(k) for k in keys]]).generate_state(1)[0])


def quantize(params: HandParams) -> HandParams:
    """Round to the float32 values the dataset stores, so annotations match reloaded records."""
    return HandParams(params.beta.astype(np.float32), params.theta.astype(np.float32))


# ------------------------------------------------------------------------------ dataset


@dataclass
class Dataset:
    task: str
    objects: list
    configs: list  # TaskConfig, each with an id
    priors: dict  # asset id -> [AnnotatedGrasp]
    records: dict  # config id -> [AnnotatedGrasp]


def select_objects(cfg: PipelineConfig, catalog) -> list[str]:
    category = "brick" if TaskKind(cfg.task) is TaskKind.STACKING else "everyday-object"
    pool = sorted(k for k, a in catalog.items() if a.category == category)
    if cfg.objects:
        missing = [o for o in cfg.objects if o not in pool]
        if missing:
            raise ConfigInvalid(f"objects not in the {category} catalog: {missing}")
        return list(cfg.objects)
    return pool[: cfg.n_objects] if cfg.n_objects else pool


def generate_configs(cfg: PipelineConfig, catalog, objects) -> list[TaskConfig]:
    out = []
    for i, obj in enumerate(objects):
        for j in range(cfg.configs_per_object):
            tc = generate_config(cfg.task, catalog, derive_seed(cfg.seed, 1, i, j), target_id=obj)
            # round-trip through the stored form so later checks see the exact saved poses
            out.append(TaskConfig.from_dict(json.loads(json.dumps(replace(tc, id=f"{obj}_c{j:02d}").to_dict()))))
    return out


def collect_priors(asset, hand_model: HandModel, cfg: PipelineConfig, seed: int) -> list[AnnotatedGrasp]:
    """Sample candidates one at a time until enough pass the quality filter or the budget is spent."""
    pv = min(cfg.prior_pv, cfg.eval_pv)
    sd = min(cfg.prior_sd, cfg.eval_sd)
    kept = []
    for k in range(cfg.priors_per_object * cfg.prior_rounds):
        try:
            (g,) = sample_prior_grasps(asset, hand_model, 1, derive_seed(seed, k))
        except SceneError:
            continue
        kept += filter_grasps([annotate_grasp(quantize(g), asset, hand_model)], asset, pv, sd)
        if len(kept) == cfg.priors_per_object:
            break
    return kept


def select_records(configs, priors: dict, catalog, hand_model: HandModel, limit: int) -> dict:
    """Per config, the first ``limit`` priors whose hands are collision-free in both scenes."""
    out = {}
    for tc in configs:
        keep = []
        for g in priors.get(tc.init.target.asset_id, []):
            if hand_collides(hand_in_scene(hand_model, g.params, tc.init.target.pose), tc.init, catalog):
                continue
            if hand_collides(hand_in_scene(hand_model, g.params, tc.goal.target.pose), tc.goal, catalog):
                continue
            keep.append(g)
            if len(keep) == limit:
                break
        out[tc.id] = keep
    return out


def build_dataset(cfg: PipelineConfig, catalog=None, hand_model: HandModel | None = None, log=None) -> Dataset:
    catalog = catalog or default_catalog()
    hand_model = hand_model or default_hand_model()
    objects = select_objects(cfg, catalog)
    configs = generate_configs(cfg, catalog, objects)
    priors = {}
    for i, obj in enumerate(objects):
        priors[obj] = collect_priors(catalog[obj], hand_model, cfg, derive_seed(cfg.seed, 2, i))
        if log:
            log(f"{obj}: {len(priors[obj])} priors")
    records = select_records(configs, priors, catalog, hand_model, cfg.grasps_per_config)
    return Dataset(cfg.task, objects, configs, priors, records)


def _grasp_tensors(grasps) -> dict:
    if not grasps:
        return {"beta": np.zeros((0, 10)), "theta": np.zeros((0, 51)), "pv": np.zeros(0), "sd": np.zeros(0)}
    return {
        "beta": np.stack([g.params.beta for g in grasps]),
        "theta": np.stack([g.params.theta for g in grasps]),
        "pv": np.array([g.pv for g in grasps]),
        "sd": np.array([g.sd for g in grasps]),
    }


def _grasps_from(tensors) -> list[AnnotatedGrasp]:
    b, t = tensors["beta"].astype(np.float64), tensors["theta"].astype(np.float64)
    pv, sd = tensors["pv"].astype(np.float64), tensors["sd"].astype(np.float64)
    return [AnnotatedGrasp(HandParams(b[i], t[i]), float(pv[i]), float(sd[i])) for i in range(len(t))]


def write_dataset(ds: Dataset, root: Path, cfg: PipelineConfig, catalog) -> list[str]:
    root = Path(root)
    files = []
    used = sorted({p.asset_id for tc in ds.configs for p in (tc.init.support, *tc.init.obstacles, tc.init.target)})
    for a in used:
        save_obj(root / "assets" / f"{a}.obj", catalog[a].mesh)
        files.append(f"assets/{a}.obj")
    for obj in ds.objects:
        container.save(root / "priors" / f"{obj}.bin", _grasp_tensors(ds.priors[obj]), {"asset": obj})
        files.append(f"priors/{obj}.bin")
    for tc in ds.configs:
        atomic_write_text(root / "configs" / f"{tc.id}.json", json.dumps(tc.to_dict(), indent=1) + "\n")
        container.save(root / "records" / f"{tc.id}.bin", _grasp_tensors(ds.records[tc.id]),
                       {"config": tc.id, "asset": tc.init.target.asset_id})
        files += [f"configs/{tc.id}.json", f"records/{tc.id}.bin"]
    manifest = {
        "task": ds.task,
        "seed": cfg.seed,
        "catalog": "default",
        "assets": used,
        "objects": ds.objects,
        "configs": [{"id": tc.id, "seed": tc.seed, "asset": tc.init.target.asset_id,
                     "records": len(ds.records[tc.id])} for tc in ds.configs],
        "thresholds": {"prior_pv_cm3": min(cfg.prior_pv, cfg.eval_pv), "prior_sd_cm": min(cfg.prior_sd, cfg.eval_sd)},
        "maps": {"contact_alpha": cfg.contact_alpha, "contact_saturation": cfg.contact_saturation,
                 "scene_alpha": cfg.scene_alpha, "scene_saturation": cfg.scene_saturation},
    }
    atomic_write_text(root / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return files + ["manifest.json"]


def read_dataset(root: Path) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    configs, records = [], {}
    for entry in manifest["configs"]:
        tc = TaskConfig.from_dict(json.loads((root / "configs" / f"{entry['id']}.json").read_text()))
        configs.append(tc)
        records[tc.id] = _grasps_from(container.load(root / "records" / f"{tc.id}.bin")[0])
    priors = {o: _grasps_from(container.load(root / "priors" / f"{o}.bin")[0]) for o in manifest["objects"]}
    return Dataset(manifest["task"], manifest["objects"], configs, priors, records)


# --------------------------------------------------------------------------------- maps


def split_configs(ids, seed: int, fraction: float) -> tuple[list[str], list[str]]:
    """Config-level (train, held-out) split."""
    ids = list(ids)
    order = np.random.default_rng(derive_seed(seed, 3)).permutation(len(ids))
    n_out = int(round(fraction * len(ids)))
    held = sorted(ids[i] for i in order[:n_out])
    return [i for i in ids if i not in held], held


@dataclass
class MapSet:
    clouds: dict  # asset id -> (N, 3) object-frame points
    maps: dict  # config id -> {"d_init", "d_goal", "contact"}
    train: list
    heldout: list


def compute_maps(ds: Dataset, cfg: PipelineConfig, catalog, hand_model: HandModel) -> MapSet:
    clouds = {o: object_cloud(catalog[o], cfg.n_object_points) for o in ds.objects}
    maps = {}
    for ci, tc in enumerate(ds.configs):
        cloud = clouds[tc.init.target.asset_id]
        entry = {}
        for name, scene, k in (("d_init", tc.init, 0), ("d_goal", tc.goal, 1)):
            sc = scene_cloud(scene, catalog, cfg.n_scene_points, derive_seed(cfg.seed, 4, ci, k))
            world = scene.target.pose.apply(cloud)
            entry[name] = compute_distance_map(world, sc, cfg.scene_alpha, cfg.scene_saturation).values
        contact = [
            compute_contact_map(cloud, forward_hand(hand_model, g.params).vertices, cfg.contact_alpha,
                                cfg.contact_saturation).values
            for g in ds.records[tc.id]
        ]
        entry["contact"] = np.array(contact).reshape(len(contact), len(cloud))
        maps[tc.id] = entry
    train, held = split_configs([tc.id for tc in ds.configs], cfg.seed, cfg.holdout_fraction)
    return MapSet(clouds, maps, train, held)


def write_maps(ms: MapSet, root: Path) -> list[str]:
    root = Path(root)
    files = []
    for a, pts in ms.clouds.items():
        container.save(root / "objects" / f"{a}.bin", {"points": pts}, {"asset": a})
        files.append(f"objects/{a}.bin")
    for cid, entry in ms.maps.items():
        container.save(root / f"{cid}.bin", entry, {"config": cid})
        files.append(f"{cid}.bin")
    atomic_write_text(root / "split.json", json.dumps({"train": ms.train, "heldout": ms.heldout}, indent=1) + "\n")
    return files + ["split.json"]


def read_maps(root: Path, ds: Dataset) -> MapSet:
    root = Path(root)
    clouds = {o: container.load(root / "objects" / f"{o}.bin")[0]["points"].astype(np.float64) for o in ds.objects}
    maps = {tc.id: {k: v.astype(np.float64) for k, v in container.load(root / f"{tc.id}.bin")[0].items()}
            for tc in ds.configs}
    split = json.loads((root / "split.json").read_text())
    return MapSet(clouds, maps, split["train"], split["heldout"])


def contact_training_set(ds: Dataset, ms: MapSet, ids) -> ContactDataset:
    asset = {tc.id: tc.init.target.asset_id for tc in ds.configs}
    pts, di, dg, c = [], [], [], []
    for cid in ids:
        m = ms.maps[cid]
        for row in m["contact"]:
            pts.append(ms.clouds[asset[cid]])
            di.append(m["d_init"])
            dg.append(m["d_goal"])
            c.append(row)
    if not c:
        raise PipelineError("no grasp records in the training split")
    return ContactDataset(np.array(pts), np.array(di), np.array(dg), np.array(c))


def grasp_training_set(ds: Dataset, ms: MapSet, ids) -> GraspDataset:
    asset = {tc.id: tc.init.target.asset_id for tc in ds.configs}
    pts, c, beta, theta = [], [], [], []
    for cid in ids:
        for g, row in zip(ds.records[cid], ms.maps[cid]["contact"]):
            pts.append(ms.clouds[asset[cid]])
            c.append(row)
            beta.append(g.params.beta)
            theta.append(g.params.theta)
    if not c:
        raise PipelineError("no grasp records in the training split")
    return GraspDataset(np.array(pts), np.array(c), np.array(beta), np.array(theta))


# ------------------------------------------------------------------------- evaluation


def _evaluate(tc, params: HandParams, catalog, hand_model, thresholds) -> GraspEvaluation:
    # an exploding simulation means the grasp does not hold the object
    return evaluate_record(None, tc, catalog, hand_model, thresholds, params=params, blowup_sd=FREE_FALL_CM)


def evaluate_grasps(method: str, task: str, grasps_by_config: dict, configs, catalog, hand_model,
                    thresholds: Thresholds) -> dict:
    """Evaluate every grasp; returns a JSON-ready dict with per-grasp entries and the aggregated row."""
    by_id = {tc.id: tc for tc in configs}
    entries, evals, groups = [], [], []
    for cid in sorted(grasps_by_config):
        group = grasps_by_config[cid]
        for params in group:
            ev = _evaluate(by_id[cid], params, catalog, hand_model, thresholds)
            evals.append(ev)
            entries.append({"config": cid, "theta": params.theta.tolist(), "beta": params.beta.tolist(), **asdict(ev)})
        groups.append(list(group))
    if not evals:
        raise PipelineError(f"no grasps to evaluate for {method}")
    row = aggregate(task, method, evals, groups, thresholds)
    return {"method": method, "task": task, "grasps": entries, "row": asdict(row)}


# ----------------------------------------------------------------------------- runner


class Runner:
    def __init__(self, cfg: PipelineConfig, out, hand_model: HandModel | None = None, catalog=None, log=None):
        self.cfg = cfg.validate()
        self.out = Path(out)
        self._hand = hand_model
        self.catalog = catalog or default_catalog()
        self.log = log or (lambda msg: None)

    @property
    def hand(self) -> HandModel:
        if self._hand is None:
            self._hand = default_hand_model()
        return self._hand

    # manifest ----------------------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.out / "manifest.json"

    def manifest(self) -> dict:
        if self.manifest_path.is_file():
            return json.loads(self.manifest_path.read_text())
        return {"stages": {}}

    def check(self, stage: str, extra_deps=()) -> None:
        stages = self.manifest()["stages"]
        for dep in (*STAGE_DEPS[stage], *extra_deps):
            rec = stages.get(dep)
            if rec is None or not all((self.out / f).exists() for f in rec["artifacts"]):
                raise DependencyMissing(f"stage dependency missing: {stage} needs the outputs of {dep}")
            for section, digest in rec["digests"].items():
                if section_digest(self.cfg, section) != digest:
                    raise ConfigDrift(f"config drift: section '{section}' differs from the config used by {dep}")

    def record(self, stage: str, artifacts, sections=None) -> None:
        m = self.manifest()
        sections = sections or STAGE_SECTIONS[stage]
        m["stages"][stage] = {
            "digests": {s: section_digest(self.cfg, s) for s in sections},
            "seed": self.cfg.seed,
            "artifacts": sorted(artifacts),
        }
        atomic_write_text(self.manifest_path, json.dumps(m, indent=1, sort_keys=True) + "\n")

    def _save_config(self, subdir: str) -> str:
        rel = f"{subdir}/config.json"
        atomic_write_text(self.out / rel, json.dumps(self.cfg.to_dict(), indent=1, sort_keys=True) + "\n")
        return rel

    # stages ------------------------------------------------------------------------

    def run(self, stage: str, **kw) -> dict:
        if stage not in STAGES:
            raise PipelineError(f"unknown stage {stage!r}")
        return getattr(self, "stage_" + stage.replace("-", "_"))(**kw)

    def stage_gen_dataset(self) -> dict:
        ds = build_dataset(self.cfg, self.catalog, self.hand, self.log)
        files = [f"dataset/{f}" for f in write_dataset(ds, self.out / "dataset", self.cfg, self.catalog)]
        files.append(self._save_config("dataset"))
        self.record("gen-dataset", files)
        return {"configs": len(ds.configs), "records": sum(len(r) for r in ds.records.values())}

    def dataset(self) -> Dataset:
        return read_dataset(self.out / "dataset")

    def stage_compute_maps(self) -> dict:
        self.check("compute-maps")
        ds = self.dataset()
        ms = compute_maps(ds, self.cfg, self.catalog, self.hand)
        files = [f"maps/{f}" for f in write_maps(ms, self.out / "maps")]
        files.append(self._save_config("maps"))
        self.record("compute-maps", files)
        return {"train": len(ms.train), "heldout": len(ms.heldout)}

    def _train(self, kind: str) -> dict:
        stage = f"train-{kind}"
        self.check(stage)
        ds = self.dataset()
        ms = read_maps(self.out / "maps", ds)
        tcfg = self.cfg.contact_train if kind == "contact" else self.cfg.grasp_train
        if kind == "contact":
            model, history = train_contact(contact_training_set(ds, ms, ms.train), tcfg)
        else:
            model, history = train_grasp(grasp_training_set(ds, ms, ms.train), self.hand, tcfg)
        rel = f"models/{kind}"
        save_weights(self.out / f"{rel}.bin", model, kind, tcfg.seed, {"train_config": tcfg.to_dict()})
        atomic_write_text(self.out / f"{rel}_history.csv", history_csv(history))
        atomic_write_text(self.out / f"{rel}_train.json", json.dumps(tcfg.to_dict(), indent=1, sort_keys=True) + "\n")
        files = [f"{rel}.bin", f"{rel}_history.csv", f"{rel}_train.json"]
        self.record(stage, files)
        return {"steps": len(history), "final_loss": history[-1]["loss"] if history else None}

    def stage_train_contact(self) -> dict:
        return self._train("contact")

    def stage_train_grasp(self) -> dict:
        return self._train("grasp")

    def stage_sample(self) -> dict:
        self.check("sample")
        ds = self.dataset()
        ms = read_maps(self.out / "maps", ds)
        cmodel, _ = load_weights(self.out / "models/contact.bin")
        gmodel, _ = load_weights(self.out / "models/grasp.bin")
        csched = self.cfg.contact_train.schedule.build()
        gsched = self.cfg.grasp_train.schedule.build()
        asset = {tc.id: tc.init.target.asset_id for tc in ds.configs}
        files = []
        k = self.cfg.samples_per_config
        for ci, cid in enumerate(ms.heldout):
            pts = ms.clouds[asset[cid]]
            m = ms.maps[cid]
            contacts = sample_contact(cmodel, csched, pts, m["d_init"], m["d_goal"], derive_seed(self.cfg.seed, 5, ci), k)
            thetas = np.concatenate([
                sample_grasps(gmodel, gsched, pts, contacts[j], derive_seed(self.cfg.seed, 6, ci, j), 1)
                for j in range(k)
            ])
            container.save(self.out / "samples" / f"{cid}.bin", {"contact": contacts, "theta": thetas}, {"config": cid})
            files.append(f"samples/{cid}.bin")
            for j, th in enumerate(thetas.astype(np.float32).astype(np.float64)):
                if np.all(np.isfinite(th)):
                    rel = f"samples/obj/{cid}_{j:02d}.obj"
                    save_obj(self.out / rel, forward_hand(self.hand, HandParams(np.zeros(10), th)))
                    files.append(rel)
        files.append(self._save_config("samples"))
        self.record("sample", files)
        return {"configs": len(ms.heldout), "samples": len(ms.heldout) * k}

    def stage_evaluate(self, source: str = "samples") -> dict:
        if source not in ("samples", "ground-truth"):
            raise PipelineError(f"unknown evaluation source {source!r}")
        extra = ("sample",) if source == "samples" else ()
        self.check("evaluate", extra)
        ds = self.dataset()
        if source == "ground-truth":
            method = "ground-truth"
            grasps = {cid: [g.params for g in recs] for cid, recs in ds.records.items() if recs}
        else:
            method = "ours"
            split = json.loads((self.out / "maps" / "split.json").read_text())
            grasps = {}
            for cid in split["heldout"]:
                th = container.load(self.out / "samples" / f"{cid}.bin")[0]["theta"].astype(np.float64)
                grasps[cid] = [HandParams(np.zeros(10), t) for t in th if np.all(np.isfinite(t))]
        result = evaluate_grasps(method, ds.task, grasps, ds.configs, self.catalog, self.hand, self.cfg.thresholds)
        rel = f"eval/{method}.json"
        atomic_write_text(self.out / rel, json.dumps(result, indent=1, sort_keys=True) + "\n")
        sections = STAGE_SECTIONS["evaluate"] + (STAGE_SECTIONS["sample"] if source == "samples" else ())
        m = self.manifest()
        prev = m["stages"].get("evaluate", {}).get("artifacts", [])
        self.record("evaluate", sorted(set(prev) | {rel}), tuple(dict.fromkeys(sections)))
        return result["row"]

    def stage_report(self) -> dict:
        self.check("report")
        rows = []
        for path in sorted((self.out / "eval").glob("*.json")):
            rows.append(ReportRow(**json.loads(path.read_text())["row"]))
        if not rows:
            raise DependencyMissing("stage dependency missing: report needs evaluation results")
        atomic_write_text(self.out / "report" / "table.csv", report_csv(rows))
        atomic_write_text(self.out / "report" / "table.json", report_json(rows, report_metadata(self.cfg.thresholds)))
        files = ["report/table.csv", "report/table.json", self._save_config("report")]
        self.record("report", files)
        return {"rows": len(rows)}
