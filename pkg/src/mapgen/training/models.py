"""The four networks under their checkpoint prefixes, plus checkpoint/config I/O."""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..autodiff import CheckpointError, Module, Parameter, load_checkpoint, save_checkpoint
from ..autodiff.checkpoint import atomic_write
from ..boxreg import BoxRegressor
from ..pointgen import COORD_SCALE, PointGenerator
from ..segmentation import ImageSegNet, PointSegNet
from .config import ModelConfig, model_config_from_dict

STAGE_PREFIXES = {"seg": "seg.", "gen": "gen.", "box": "box."}
STAGE_ORDER = ("seg", "gen", "box")
META_COORD_SCALE = "meta.gen.coord_scale"


class StageDependencyError(RuntimeError):
    """A stage was started without the checkpoint of a stage it builds on."""

    def __init__(self, missing: str, path=None):
        self.missing = missing
        where = f" in {path}" if path else ""
        super().__init__(f"stage '{missing}' parameters not found{where}; train stage '{missing}' first")


def required_stages(stage: str, cfg: ModelConfig) -> tuple[str, ...]:
    if stage == "seg":
        return ()
    if stage == "gen":
        return ("seg",)
    return ("seg", "gen") if cfg.generation else ("seg",)


class MapGenModel:
    """Container for the segmentation, generation and box networks.

    Each network draws its initial weights from its own seeded stream, so a network's
    initialization does not depend on the others' sizes.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg

        def rng(k: int) -> np.random.Generator:
            return np.random.default_rng(np.random.SeedSequence([seed, 1000 + k]))

        self.seg_points = PointSegNet(rng(0), cfg.seg_point_widths, cfg.seg_point_head)
        self.seg_image = ImageSegNet(rng(1), cfg.seg_image_widths, pool_dim=cfg.seg_pool_dim,
                                     feat_dim=cfg.feat_dim)
        self.gen = PointGenerator(rng(2), cfg.gen_d_model, cfg.gen_heads, cfg.gen_ff, cfg.gen_layers,
                                  cfg.feat_dim, cfg.gen_pos_dim, cfg.pos_emb, cfg.fusion, cfg.asymmetric)
        self.box = BoxRegressor(rng(3), cfg.box_widths, cfg.feat_dim, cfg.box_hidden, cfg.priors,
                                cfg.box_frame, cfg.raw_direct)
        self.seg_points.assign_names("seg.points.")
        self.seg_image.assign_names("seg.image.")
        self.gen.assign_names("gen.")
        self.box.assign_names("box.")

    def modules(self, stage: str) -> list[Module]:
        return {"seg": [self.seg_points, self.seg_image], "gen": [self.gen], "box": [self.box]}[stage]

    def parameters(self, stage: str) -> list[Parameter]:
        return [p for m in self.modules(stage) for p in m.parameters()]

    def freeze_all_but(self, stage: str | None) -> None:
        """Only ``stage`` parameters require grad; frozen ones never get a buffer."""
        for s in STAGE_ORDER:
            for m in self.modules(s):
                m.requires_grad_(s == stage)
                for p in m.parameters():
                    p.grad = None

    def state_dict(self, stages=STAGE_ORDER) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for s in stages:
            for m in self.modules(s):
                out.update(m.state_dict())
        if "gen" in stages:
            out[META_COORD_SCALE] = np.array([COORD_SCALE])
        return out

    def load_state(self, state: dict[str, np.ndarray], stages=STAGE_ORDER) -> None:
        for s in stages:
            for m in self.modules(s):
                names = [p.name for p in m.parameters()]
                sub = {n: state[n] for n in names if n in state}
                if len(sub) != len(names):
                    raise StageDependencyError(s)
                m.load_state_dict(sub)
        if "gen" in stages and META_COORD_SCALE in state:
            if float(state[META_COORD_SCALE][0]) != COORD_SCALE:
                raise CheckpointError("checkpoint was trained with a different coordinate scale")

    def stages_in(self, state: dict[str, np.ndarray]) -> set[str]:
        present = set()
        for s in STAGE_ORDER:
            names = [p.name for p in self.parameters(s)]
            if names and all(n in state for n in names):
                present.add(s)
        return present


def sidecar_path(ckpt) -> Path:
    return Path(str(ckpt) + ".json")


def save_model(model: MapGenModel, path, stages, extra: dict | None = None) -> None:
    save_checkpoint(path, model.state_dict(stages))
    meta = {"model": asdict(model.cfg), "stages": list(stages), **(extra or {})}
    atomic_write(sidecar_path(path), (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())


def read_sidecar(path) -> dict | None:
    side = sidecar_path(path)
    if not side.exists():
        return None
    return json.loads(side.read_text(encoding="utf-8"))


def load_model(path, cfg: ModelConfig | None = None, seed: int = 0,
               need=STAGE_ORDER) -> MapGenModel:
    """Rebuild a model from a checkpoint (config from its sidecar unless given)."""
    if cfg is None:
        meta = read_sidecar(path)
        if meta is None:
            raise CheckpointError(f"no model config next to {path}; pass one explicitly")
        cfg = model_config_from_dict(meta["model"])
    model = MapGenModel(cfg, seed)
    state = load_checkpoint(path)
    have = model.stages_in(state)
    for s in need:
        if s not in have:
            raise StageDependencyError(s, path)
    model.load_state(state, [s for s in STAGE_ORDER if s in have])
    return model
