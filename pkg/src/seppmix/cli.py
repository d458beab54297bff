"""Command-line driver: pretrain, train, eval, mix-preview, compare-mixers, make-synthetic.

Settings come from one flat namespace. A ``--config`` JSON file sets any key;
explicit flags override it. Exit codes: 0 ok, 2 config error, 3 ingestion
error, 4 output conflict, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import datakit
from .errors import (ConfigError, IngestionError, InputDomainError, NumericalError,
                     OutputConflictError)
from .fewshot import EvalReport, evaluate
from .mixkit import MIXERS, make_rng, mix_pair
from .nettrain import (TrainConfig, TrainResult, checkpoint_id, load_checkpoint,
                       pretrain_for_cams, save_checkpoint, train)
from .nettrain.loop import semantic_maps

log = logging.getLogger("seppmix")

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_CONFLICT, EXIT_NUMERIC = 0, 2, 3, 4, 5
HEATMAP_COLORMAP = "jet"


@dataclass(frozen=True)
class RunConfig(TrainConfig):
    """Training settings plus data source, evaluation and output options."""

    data_root: Optional[str] = None
    manifest: Optional[str] = None
    synthetic_classes: int = 24
    synthetic_per_class: int = 100
    image_size: int = 32
    synthetic_seed: Optional[int] = None
    base_fraction: float = 2 / 3
    n_way: int = 5
    k_shot: int = 1
    h_query: int = 15
    episodes: int = 600
    l2: float = 1.0
    normalize: bool = True
    compare_shots: Tuple[int, ...] = (1, 5)
    count: int = 4
    workers: int = 1
    pretrained: Optional[str] = None
    out: Optional[str] = None
    overwrite: bool = False

    def validate(self) -> None:
        super().validate()
        if (self.data_root is None) != (self.manifest is None):
            raise ConfigError("data_root and manifest must be given together")
        if min(self.n_way, self.k_shot, self.episodes, self.count, self.workers) < 1:
            raise ConfigError("n_way, k_shot, episodes, count and workers must be >= 1")
        if self.h_query < 1 or self.l2 < 0:
            raise ConfigError("h_query must be >= 1 and l2 >= 0")
        if not 0 < self.base_fraction < 1:
            raise ConfigError("base_fraction must be in (0, 1)")

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in TrainConfig.field_names()})

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    kind = str(_TYPES[key])
    try:
        if value is None:
            if "Optional" not in kind:
                raise TypeError("null not allowed")
            return None
        if kind.startswith("Tuple"):
            if not isinstance(value, (list, tuple)):
                raise TypeError("expected a list")
            return tuple(int(v) for v in value)
        if kind == "bool":
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if "int" in kind:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError("expected an integer")
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise TypeError("expected a number")
            return float(value)
        if not isinstance(value, str):
            raise TypeError("expected a string")
        return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def build_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """JSON file values, then overrides; unknown keys are rejected."""
    values = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()})


# ---------------------------------------------------------------------------
# data and output helpers


def load_split(cfg: RunConfig, role: str) -> datakit.LabeledDataset:
    """``role`` is ``base`` (manifest train split) or ``novel`` (manifest test split)."""
    if cfg.data_root is not None:
        manifest = datakit.SplitManifest.load(cfg.manifest)
        return datakit.load_image_folder(cfg.data_root, manifest,
                                         "train" if role == "base" else "test")
    seed = cfg.seed if cfg.synthetic_seed is None else cfg.synthetic_seed
    ds = datakit.make_synthetic(cfg.synthetic_classes, cfg.synthetic_per_class,
                                cfg.image_size, seed)
    base, novel = datakit.split_base_novel(ds, cfg.base_fraction)
    return base if role == "base" else novel


def prepare_out(out: Optional[str], overwrite: bool) -> Path:
    if out is None:
        raise ConfigError("--out is required")
    path = Path(out)
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise OutputConflictError(f"{path} is not empty; pass --overwrite to replace it")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_metrics(path: Path, history) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_run(result: TrainResult, out: Path, cfg: RunConfig, stage: str) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.jsonl", result.history)
    return save_checkpoint(result.model, out, config=result.config.to_dict(),
                           epoch=len(result.history), metrics=result.history,
                           extra={"stage": stage, "run_config": _portable(cfg)})


def _portable(cfg: RunConfig) -> dict:
    d = cfg.to_dict()
    for k in ("out", "pretrained", "overwrite"):
        d.pop(k)
    return d


def _load_pretrained(cfg: RunConfig):
    if cfg.pretrained is None:
        return None
    try:
        model, _ = load_checkpoint(cfg.pretrained)
    except (OSError, KeyError, json.JSONDecodeError, RuntimeError) as exc:
        raise IngestionError(f"cannot load checkpoint {cfg.pretrained}: {exc}") from exc
    return model


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain(cfg: RunConfig) -> int:
    base = load_split(cfg, "base")
    out = prepare_out(cfg.out, cfg.overwrite)
    result = pretrain_for_cams(base, cfg.train_config())
    save_run(result, out, cfg, "pretrain")
    print(f"pretrained {len(result.history)} epochs -> {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    if cfg.mixer == "seppmix" and cfg.pretrained is None:
        raise ConfigError("mixer 'seppmix' requires --pretrained (the CAM source)")
    base = load_split(cfg, "base")
    pretrained = _load_pretrained(cfg)
    out = prepare_out(cfg.out, cfg.overwrite)
    result = train(base, cfg.train_config(), pretrained)
    save_run(result, out, cfg, "train")
    print(f"trained {len(result.history)} epochs with mixer={cfg.mixer} -> {out}")
    return EXIT_OK


def run_eval(model, novel, cfg: RunConfig, k_shot: int, ckpt: str) -> EvalReport:
    return evaluate(model, novel, n_way=cfg.n_way, k_shot=k_shot, h_query=cfg.h_query,
                    num_episodes=cfg.episodes, l2=cfg.l2, seed=cfg.seed,
                    normalize=cfg.normalize, workers=cfg.workers, checkpoint_id=ckpt)


def cmd_eval(cfg: RunConfig, checkpoint: str) -> int:
    try:
        model, manifest = load_checkpoint(checkpoint)
    except (OSError, KeyError, json.JSONDecodeError, RuntimeError) as exc:
        raise IngestionError(f"cannot load checkpoint {checkpoint}: {exc}") from exc
    novel = load_split(cfg, "novel")
    out = prepare_out(cfg.out, cfg.overwrite) if cfg.out is not None else None
    report = run_eval(model, novel, cfg, cfg.k_shot, manifest["checkpoint_id"])
    if out is not None:
        (out / "report.json").write_text(report.to_json())
        (out / "episodes.json").write_text(json.dumps(report.accuracies) + "\n")
    print(report.to_json(), end="")
    print(f"acc {100 * report.mean_accuracy:.2f} ± {100 * report.ci95_halfwidth:.2f}")
    return EXIT_OK


def _to_png(path: Path, image: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(image).transpose(1, 2, 0) * 255), 0, 255)
    Image.fromarray(arr.astype(np.uint8)).save(path)


def heatmap(values: np.ndarray) -> np.ndarray:
    """Map a 2-D array to RGB ``(3, H, W)`` with the fixed ``jet`` colormap, scaled by its max."""
    from matplotlib import colormaps

    v = np.asarray(values, dtype=np.float64)
    top = v.max()
    scaled = v / top if top > 0 else np.zeros_like(v)
    return colormaps[HEATMAP_COLORMAP](scaled)[..., :3].transpose(2, 0, 1)


def cmd_mix_preview(cfg: RunConfig) -> int:
    if cfg.mixer == "seppmix" and cfg.pretrained is None:
        raise ConfigError("mixer 'seppmix' requires --pretrained (the CAM source)")
    if cfg.mixer == "none":
        raise ConfigError("mix-preview needs a mixer other than 'none'")
    base = load_split(cfg, "base")
    model = _load_pretrained(cfg)
    out = prepare_out(cfg.out, cfg.overwrite)
    rng = make_rng(cfg.seed)
    n = min(cfg.count, len(base))
    pick = rng.choice(len(base), size=2 * n, replace=len(base) < 2 * n)
    for i in range(n):
        ia, ib = int(pick[2 * i]), int(pick[2 * i + 1])
        images = base.images[[ia, ib]].astype(np.float64)
        labels = base.labels[[ia, ib]]
        maps = semantic_maps(model, images, labels) if cfg.mixer == "seppmix" else None
        sample = mix_pair(cfg.mixer, (images[0], int(labels[0])), (images[1], int(labels[1])),
                          rng, num_classes=base.num_classes, grid_n=cfg.grid_n,
                          semantic_maps=maps, beta_alpha=cfg.mix_beta_alpha)
        prov = sample.provenance
        d = out / f"preview_{i:02d}"
        d.mkdir()
        _to_png(d / "x_a.png", images[0])
        _to_png(d / "x_b.png", images[1])
        _to_png(d / "mixed.png", sample.image)
        info = {
            "mixer": cfg.mixer, "source_a": base.instance_ids[ia],
            "source_b": base.instance_ids[ib], "class_a": prov.class_a,
            "class_b": prov.class_b, "rho_a": prov.rho_a, "rho_b": prov.rho_b,
            "mask": None if prov.mask is None else prov.mask.astype(int).tolist(),
            "box": None if prov.box is None else list(prov.box), "lam": prov.lam,
            "label": sample.label.tolist(), "colormap": HEATMAP_COLORMAP,
        }
        if maps is not None:
            for tag, img, s in (("a", images[0], maps[0]), ("b", images[1], maps[1])):
                np.save(d / f"s_{tag}.npy", s)
                hm = heatmap(s)
                _to_png(d / f"cam_{tag}.png", hm)
                _to_png(d / f"overlay_{tag}.png", 0.5 * img + 0.5 * hm)
        (d / "label.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(f"wrote {n} previews -> {out}")
    return EXIT_OK


COMPARE_ROWS = (
    ("baseline", "none", False),
    ("Mixup", "mixup", False),
    ("Cutmix", "cutmix", False),
    ("Patchmix", "patchmix", False),
    ("SePPMix (w/o r)", "seppmix", False),
    ("SePPMix (w/ r)", "seppmix", True),
)


def row_config(cfg: TrainConfig, mixer: str, with_rotation: bool) -> TrainConfig:
    if with_rotation:
        rot = cfg.rotations if cfg.rotations != "none" else "all"
        return replace(cfg, mixer=mixer, rotations=rot)
    return replace(cfg, mixer=mixer, rotations="none", beta=0.0)


def compare_table(rows) -> str:
    shots = [k for k, _ in rows[0]["results"]]
    head = "| Method | " + " | ".join(f"{k}-shot" for k in shots) + " |"
    lines = [head, "|" + "---|" * (len(shots) + 1)]
    base = {k: acc for k, acc in rows[0]["results"]}
    for r in rows:
        cells = []
        for k, acc in r["results"]:
            cell = f"{100 * acc['mean_accuracy']:.2f}±{100 * acc['ci95_halfwidth']:.2f}"
            if r is not rows[0]:
                delta = 100 * (acc["mean_accuracy"] - base[k]["mean_accuracy"])
                cell += f" ({delta:+.2f})"
            cells.append(cell)
        lines.append(f"| {r['method']} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_compare_mixers(cfg: RunConfig) -> int:
    base = load_split(cfg, "base")
    novel = load_split(cfg, "novel")
    out = prepare_out(cfg.out, cfg.overwrite)
    tcfg = cfg.train_config()
    pre = pretrain_for_cams(base, tcfg)
    save_run(pre, out / "pretrain", cfg, "pretrain")
    rows = []
    for method, mixer, with_rot in COMPARE_ROWS:
        if mixer == "none":
            # the baseline is the plainly trained network itself
            model, slug = pre.model, "pretrain"
        else:
            result = train(base, row_config(tcfg, mixer, with_rot), pre.model)
            slug = method.lower().replace(" ", "").replace("(", "_").replace(")", "")
            slug = slug.replace("/", "")
            save_run(result, out / slug, cfg, f"train:{method}")
            model = result.model
        ckpt = checkpoint_id(model)
        results = [(k, run_eval(model, novel, cfg, k, ckpt).to_dict())
                   for k in cfg.compare_shots]
        rows.append({"method": method, "mixer": mixer, "rotation": with_rot,
                     "checkpoint": slug, "results": results})
        log.info("%s done", method)
    table = compare_table(rows)
    payload = [{"method": r["method"], "mixer": r["mixer"], "rotation": r["rotation"],
                "checkpoint": r["checkpoint"],
                "results": {f"{k}-shot": res for k, res in r["results"]}} for r in rows]
    (out / "compare.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / "compare.md").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_make_synthetic(cfg: RunConfig) -> int:
    out = prepare_out(cfg.out, cfg.overwrite)
    seed = cfg.seed if cfg.synthetic_seed is None else cfg.synthetic_seed
    ds = datakit.make_synthetic(cfg.synthetic_classes, cfg.synthetic_per_class,
                                cfg.image_size, seed)
    base, novel = datakit.split_base_novel(ds, cfg.base_fraction)
    n_val = max(1, novel.num_classes // 4)
    manifest = datakit.SplitManifest(
        name=f"synthetic-{seed}", image_size=cfg.image_size, train=base.class_names,
        val=novel.class_names[:n_val], test=novel.class_names[n_val:])
    datakit.write_image_folder(ds, out / "images")
    manifest.save(out / "manifest.json")
    print(f"wrote {len(ds)} images in {ds.num_classes} classes -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

_FLAG_KEYS = {"seed": "seed", "out": "out", "mixer": "mixer", "pretrained": "pretrained",
              "n_way": "n_way", "k_shot": "k_shot", "h_query": "h_query",
              "episodes": "episodes", "workers": "workers"}


def _epilog() -> str:
    defaults = RunConfig()
    keys = ", ".join(f"{f.name}={getattr(defaults, f.name)!r}" for f in fields(RunConfig))
    return "config keys (JSON, flat namespace; flags win): " + keys


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with config keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--mixer", choices=MIXERS)
    common.add_argument("--pretrained", help="checkpoint directory used as init / CAM source")
    common.add_argument("--n-way", dest="n_way", type=int)
    common.add_argument("--k-shot", dest="k_shot", type=int)
    common.add_argument("--h-query", dest="h_query", type=int)
    common.add_argument("--episodes", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--overwrite", action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="seppmix", description=__doc__.splitlines()[0],
                                     epilog=_epilog())
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common], help="plain supervised CAM-bootstrap training",
                   epilog=_epilog())
    sub.add_parser("train", parents=[common], help="mixed training with rotation loss",
                   epilog=_epilog())
    ev = sub.add_parser("eval", parents=[common], help="episodic evaluation of a checkpoint",
                        epilog=_epilog())
    ev.add_argument("checkpoint", help="checkpoint directory")
    mp = sub.add_parser("mix-preview", parents=[common], help="write mixed samples and CAMs",
                        epilog=_epilog())
    mp.add_argument("--count", type=int)
    sub.add_parser("compare-mixers", parents=[common], help="ablation table over mixers",
                   epilog=_epilog())
    sub.add_parser("make-synthetic", parents=[common], help="write the synthetic image folder",
                   epilog=_epilog())
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {key: getattr(args, attr) for attr, key in _FLAG_KEYS.items()}
    overrides["overwrite"] = args.overwrite
    overrides["count"] = getattr(args, "count", None)
    try:
        cfg = build_config(args.config, overrides)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "mix-preview":
            return cmd_mix_preview(cfg)
        if args.command == "compare-mixers":
            return cmd_compare_mixers(cfg)
        return cmd_make_synthetic(cfg)
    except (ConfigError, InputDomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except OutputConflictError as exc:
        print(f"output conflict: {exc}", file=sys.stderr)
        return EXIT_CONFLICT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
