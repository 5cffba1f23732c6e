"""Experiment commands behind the CLI.

Run directory layout::

    <output_dir>/config.json
    <output_dir>/checkpoints/   step_NNNNNN.npz, latest.npz, best.npz, final.npz, best.json
    <output_dir>/reports/       *.txt tables and *.kv key-value files
    <output_dir>/grids/         PNG image grids
    <output_dir>/log            append-only run log, one line per evaluation

Every report starts with the config hash and seed and contains nothing
else that depends on the machine or the clock.
"""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import torch

from ..core import RngStream, one_hot_encode
from ..data_io import DatasetError, load_dataset, save_dataset, save_image_grid, stack_dataset
from ..diagnostics import (
    collapse_score, format_ablation, generator_for, padding_kernel_ablation,
    per_block_std_probe, intra_class_std, single_class_layout,
)
from ..metrics import (
    FLOPS_CONVENTION, PaletteSegmenter, RandomEmbedder, count_params_flops, enumerate_params,
    fid_pipeline, intra_class_summary, miou_acc,
)
from ..networks import default_extractor
from ..noise_position import absolute_code, learnable_code_init, monotonicity_check, relative_code
from ..training import NonFiniteLossError, build_state, sample_batch, train_step
from ..vasis import VariantConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig

# RngStream ids for evaluation-time sampling; disjoint from the training streams.
STREAM_EVAL_LATENT = 201
STREAM_EVAL_NOISE = 202


class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    config = property(lambda self: self.root / "config.json")
    checkpoints = property(lambda self: self.root / "checkpoints")
    reports = property(lambda self: self.root / "reports")
    grids = property(lambda self: self.root / "grids")
    log = property(lambda self: self.root / "log")

    def create(self):
        for d in (self.checkpoints, self.reports, self.grids):
            d.mkdir(parents=True, exist_ok=True)
        return self

    def append_log(self, config, metric, value, step=None):
        where = "" if step is None else f" step={step}"
        with open(self.log, "a") as fh:
            fh.write(f"config={config.config_hash()} seed={config.seed}{where} {metric}={_fmt(value)}\n")


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def _header(config, title):
    return f"# {title}\n# config_hash={config.config_hash()} seed={config.seed}\n"


def write_report(path, config, title, text, values):
    """Write ``<path>.txt`` (human table) and ``<path>.kv`` (one ``key=value`` per line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = _header(config, title)
    path.with_suffix(".txt").write_text(head + text.rstrip("\n") + "\n")
    kv = [f"config_hash={config.config_hash()}", f"seed={config.seed}"]
    kv += [f"{k}={_fmt(v)}" for k, v in values.items()]
    path.with_suffix(".kv").write_text("\n".join(kv) + "\n")
    return path


def read_kv(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# data

def cmd_make_dataset(config, force=False):
    """Write the training split and the held-out split under ``config.data_root``."""
    root = config.data_root
    train = save_dataset(root / "train", config.dataset, force=force)
    heldout = save_dataset(root / "heldout", config.heldout_spec(), force=force)
    return train, heldout


def _load_split(config, split):
    path = config.data_root / split
    if not (path / "manifest.json").is_file():
        raise DatasetError(f"no dataset at {path}; run make-dataset first")
    spec, samples = load_dataset(path)
    labels, images = stack_dataset(samples)
    layouts = one_hot_encode(torch.from_numpy(labels), spec.num_classes)
    return layouts, torch.from_numpy(images), labels


def _generate(generator, layouts, seed, chunk=16):
    """Evaluation samples: fixed latents and noise from dedicated streams."""
    rng_z, rng_n = RngStream(seed, STREAM_EVAL_LATENT), RngStream(seed, STREAM_EVAL_NOISE)
    outs = []
    generator.eval()
    with torch.no_grad():
        for i in range(0, layouts.shape[0], chunk):
            lay = layouts[i:i + chunk]
            z = rng_z.normal((lay.shape[0], generator.spec.latent_dim), dtype=lay.dtype)
            outs.append(generator(z, lay, rng_n))
    generator.train()
    return torch.cat(outs)


# ---------------------------------------------------------------------------
# training

def _eval_fid(config, generator, heldout_layouts, train_images, embedder):
    fake = _generate(generator, heldout_layouts[: config.eval.num_samples], config.seed)
    return fid_pipeline(fake.numpy(), train_images.numpy(), embedder)


def cmd_train(config, resume=None, steps=None, log=print):
    """Train for ``steps`` (default ``recipe.steps``) total steps.

    Returns the final :class:`TrainState`. Evaluation every
    ``eval.every`` steps tracks the best checkpoint by FID against the
    training images.
    """
    run = RunDir(config.output_dir).create()
    layouts, images, _ = _load_split(config, "train")
    heldout_layouts, _, _ = _load_split(config, "heldout")
    if run.config.exists() and resume is None:
        existing = ExperimentConfig.load(run.config)
        if existing.config_hash() != config.config_hash():
            raise CheckpointError(f"{run.root} holds a run with a different config; use a new output_dir")
    config.save(run.config)

    if resume is not None:
        state, _ = load_checkpoint(resume, config)
    else:
        state = build_state(config.gspec(), config.dspec(), config.recipe, config.seed)
    total = steps if steps is not None else config.recipe.steps
    extractor, embedder = default_extractor(), RandomEmbedder()
    best = _read_best(run)

    while state.step < total:
        batch = sample_batch(state, layouts, images, config.recipe.batch_size)
        try:
            report = train_step(batch, state, config.recipe, extractor)
        except NonFiniteLossError as exc:
            bundle = _diagnostic_bundle(run, config, state, exc)
            raise NonFiniteLossError(exc.seed, exc.step, {**exc.parts, "bundle": str(bundle)}) from exc
        step = state.step
        if step % config.eval.log_every == 0:
            log(f"step {step} " + " ".join(f"{k}={v:.4f}" for k, v in sorted(report.losses.items())))
        if step % config.eval.every == 0 or step == total:
            fid = _eval_fid(config, state.generator, heldout_layouts, images, embedder)
            run.append_log(config, "fid_t", fid, step)
            save_checkpoint(run.checkpoints / "latest.npz", state, config)
            if best is None or fid < best["fid"]:
                save_checkpoint(run.checkpoints / "best.npz", state, config)
                best = {"step": step, "fid": fid}
                (run.checkpoints / "best.json").write_text(json.dumps(best, sort_keys=True) + "\n")
            log(f"step {step} fid_t={fid:.4f} best_step={best['step']}")
        if step % config.eval.checkpoint_every == 0:
            save_checkpoint(run.checkpoints / f"step_{step:06d}.npz", state, config)
    save_checkpoint(run.checkpoints / "final.npz", state, config)
    return state


def _read_best(run):
    path = run.checkpoints / "best.json"
    return json.loads(path.read_text()) if path.exists() else None


def _diagnostic_bundle(run, config, state, exc):
    path = run.reports / f"nonfinite_step{exc.step:06d}.json"
    params = {}
    for name, module in (("generator", state.generator), ("discriminator", state.discriminator)):
        for pname, p in module.named_parameters():
            params[f"{name}.{pname}"] = {
                "finite": bool(torch.isfinite(p).all()),
                "max_abs": float(p.detach().abs().max()),
            }
    bundle = {
        "config_hash": config.config_hash(), "seed": config.seed, "step": exc.step,
        "losses": {k: repr(v) for k, v in exc.parts.items()}, "parameters": params,
    }
    path.write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n")
    save_checkpoint(run.checkpoints / f"nonfinite_step{exc.step:06d}.npz", state, config)
    return path


# ---------------------------------------------------------------------------
# probe

def _generator_from(config, checkpoint):
    if checkpoint is None:
        return generator_for(config.gspec(), config.seed)
    state, _ = load_checkpoint(checkpoint, config)
    return state.generator


def baseline_variant(variant):
    return VariantConfig.baseline(variant.semantic_path, kernel_size=variant.kernel_size,
                                  padding_mode=variant.padding_mode, norm_mode=variant.norm_mode)


def _position_checks(config):
    """Monotonicity and construction of the three position codes."""
    r = config.dataset.resolution
    stripes = torch.zeros(1, r, r, dtype=torch.long)
    stripes[:, :, r // 2:] = 1
    layout = one_hot_encode(stripes, 2)
    codes = {
        "absolute": absolute_code(r, r),
        "learnable": learnable_code_init(r, r, RngStream(config.seed, 4)),
        "relative": relative_code(layout),
    }
    rows = []
    for name, code in codes.items():
        rows.append((name, monotonicity_check(code, "row"), monotonicity_check(code, "col"),
                     "fixed" if name == "absolute" else ("trained" if name == "learnable" else "per layout")))
    return rows


def cmd_probe(config, checkpoint=None):
    """Ablation table, per-block probes, position-code checks and collapse scores."""
    run = RunDir(config.output_dir).create()
    gspec = config.gspec()
    seed = config.seed
    values = {}
    sections = []

    base_spec = config.gspec(baseline_variant(config.variant))
    rows = padding_kernel_ablation(base_spec, seed=seed)
    sections.append("## padding x kernel ablation (untrained baseline, single-class layout)\n" + format_ablation(rows))
    for r in rows:
        key = f"ablation.{r.padding}.k{r.kernel}"
        for name, s in r.probe.block_stds:
            values[f"{key}.std.{name}"] = s
        values[f"{key}.collapse"] = r.collapse

    generator = _generator_from(config, checkpoint)
    r = config.dataset.resolution
    single = single_class_layout(gspec.num_classes, r)
    layouts, _, _ = _load_split(config, "heldout") if (config.data_root / "heldout").exists() else (None, None, None)
    probe_layouts = {"single_class": single}
    if layouts is not None:
        probe_layouts["heldout0"] = layouts[:1].double()
    lines = []
    for lname, lay in probe_layouts.items():
        for noise in (True, False):
            rep = per_block_std_probe(generator, lay, seed=seed, noise=noise)
            tag = f"probe.{lname}.{'noise' if noise else 'z0'}"
            lines.append(f"{lname:<13} {'noise' if noise else 'z=0':<6} " +
                         "  ".join(f"{n}={s:.3e}" for n, s in rep.block_stds))
            for n, s in rep.block_stds:
                values[f"{tag}.{n}"] = s
    sections.append("## per-block spatial std (configured model)\n" + "\n".join(lines))

    pos = _position_checks(config)
    sections.append("## position codes\nkind       row_monotone  col_monotone  source\n" + "\n".join(
        f"{k:<10} {str(a):<13} {str(b):<13} {src}" for k, a, b, src in pos))
    for k, a, b, _ in pos:
        values[f"position.{k}.row_monotone"] = a
        values[f"position.{k}.col_monotone"] = b

    baseline = generator_for(base_spec, seed)
    scores = [
        ("baseline", collapse_score(baseline, seed=seed, noise=False)),
        ("vasis", collapse_score(generator, seed=seed, noise=True)),
        ("vasis_z0", collapse_score(generator, seed=seed, noise=False)),
    ]
    sections.append("## collapse score (1.0 = identical patterns at every placement)\n" + "\n".join(
        f"{k:<10} {v:.6f}" for k, v in scores))
    for k, v in scores:
        values[f"collapse.{k}"] = v

    source = Path(checkpoint).name if checkpoint else "untrained"
    write_report(run.reports / "probe", config, f"probe ({source})", "\n\n".join(sections), values)

    grid_layouts = torch.cat([single.float()] + ([layouts[:3]] if layouts is not None else []))
    imgs = _generate(generator, grid_layouts.repeat(2, 1, 1, 1), seed)
    save_image_grid(imgs.numpy(), run.grids / "probe.png", columns=grid_layouts.shape[0])
    return values


# ---------------------------------------------------------------------------
# eval

def cmd_eval(config, checkpoint):
    if checkpoint is None or not Path(checkpoint).is_file():
        raise CheckpointError(f"checkpoint not found: {checkpoint}")
    run = RunDir(config.output_dir).create()
    state, _ = load_checkpoint(checkpoint, config)
    gen = state.generator
    _, train_images, _ = _load_split(config, "train")
    hl, h_images, h_labels = _load_split(config, "heldout")
    n = config.eval.num_samples
    fake = _generate(gen, hl[:n], config.seed).numpy()
    embedder = RandomEmbedder()
    fid_t = fid_pipeline(fake, train_images.numpy(), embedder)
    fid_v = fid_pipeline(fake, h_images.numpy(), embedder)
    nc = config.dataset.num_classes
    pred = PaletteSegmenter(config.dataset.colors)(fake)
    miou, acc, ious = miou_acc(pred, h_labels[:n], nc)
    stds = intra_class_std(fake, h_labels[:n], nc)
    ref_stds = intra_class_std(h_images.numpy()[:n], h_labels[:n], nc)
    g_cost = count_params_flops(config.gspec())
    d_cost = count_params_flops(config.dspec(), config.dataset.resolution)
    g_brute, d_brute = enumerate_params(gen), enumerate_params(state.discriminator)

    values = {"step": state.step, "fid_t": fid_t, "fid_v": fid_v, "miou": miou, "acc": acc}
    for c in range(nc):
        values[f"iou.{c}"] = float(ious[c])
        values[f"intra_class_std.{c}"] = float(stds[c]) if not np.ma.is_masked(stds[c]) else math.nan
        values[f"intra_class_std_ref.{c}"] = float(ref_stds[c]) if not np.ma.is_masked(ref_stds[c]) else math.nan
    values["intra_class_std.mean"] = intra_class_summary(stds)
    values.update({
        "g.params": g_cost.params, "g.params_enumerated": g_brute, "g.flops": g_cost.flops,
        "g.modulation_params": g_cost.modulation_params,
        "d.params": d_cost.params, "d.params_enumerated": d_brute, "d.flops": d_cost.flops,
    })
    if g_cost.params != g_brute or d_cost.params != d_brute:
        raise AssertionError(f"analytic parameter count disagrees with enumeration: {values}")

    text = "\n".join(f"{k:<28} {_fmt(v)}" for k, v in values.items())
    text = f"# {FLOPS_CONVENTION}\n" + text
    stem = Path(checkpoint).stem
    write_report(run.reports / f"eval_{stem}", config, f"eval ({stem})", text, values)
    for key in ("fid_t", "fid_v", "miou", "acc", "intra_class_std.mean"):
        run.append_log(config, key, values[key], state.step)
    save_image_grid(fake[:16], run.grids / f"eval_{stem}.png", columns=4)
    return values


# ---------------------------------------------------------------------------
# count

TOGGLES = [
    ("baseline", {}),
    ("noise_only", dict(noise_enabled=True, position_kind="none")),
    ("position_only", dict(noise_enabled=False, position_kind="learnable")),
    ("vasis", dict(noise_enabled=True, position_kind="learnable")),
]
VARIANTS = [
    ("concat", dict(combine_mode="concat")),
    ("plus", dict(combine_mode="plus")),
    ("one_channel", dict(combine_mode="one_channel")),
    ("rand", dict(combine_mode="rand")),
    ("absolute", dict(position_kind="absolute")),
    ("relative", dict(position_kind="relative")),
    ("learnable", dict(position_kind="learnable")),
]


def count_table(config):
    """Rows ``(group, name, semantic_path, variant, CostReport)`` for both semantic paths."""
    rows = []
    r = config.dataset.resolution
    for path in ("spade_conv", "clade_sample"):
        base = dataclasses.replace(config.variant, semantic_path=path)
        for name, kw in TOGGLES:
            v = VariantConfig.baseline(path, kernel_size=base.kernel_size, padding_mode=base.padding_mode) \
                if name == "baseline" else base.with_(combine_mode="concat", **kw)
            rows.append(("toggle", name, path, v, count_params_flops(config.gspec(v), r)))
        for name, kw in VARIANTS:
            v = base.with_(noise_enabled=True, **{"position_kind": "learnable", "combine_mode": "concat", **kw})
            rows.append(("variant", name, path, v, count_params_flops(config.gspec(v), r)))
    return rows


def cmd_count(config, verify=True):
    run = RunDir(config.output_dir).create()
    rows = count_table(config)
    lines = [f"# {FLOPS_CONVENTION}",
             f"{'group':<8} {'path':<13} {'variant':<14} {'params':>10} {'mod_params':>10} {'GFLOPs':>9}"]
    values = {}
    for group, name, path, variant, cost in rows:
        if verify:
            brute = enumerate_params(generator_for(config.gspec(variant), config.seed))
            if brute != cost.params:
                raise AssertionError(f"{path}/{name}: analytic {cost.params} != enumerated {brute}")
        lines.append(f"{group:<8} {path:<13} {name:<14} {cost.params:>10d} {cost.modulation_params:>10d} "
                     f"{cost.flops / 1e9:>9.4f}")
        key = f"{group}.{path}.{name}"
        values[f"{key}.params"] = cost.params
        values[f"{key}.modulation_params"] = cost.modulation_params
        values[f"{key}.flops"] = cost.flops
    d_cost = count_params_flops(config.dspec(), config.dataset.resolution)
    lines.append(f"{'disc':<8} {'-':<13} {config.dspec().kind:<14} {d_cost.params:>10d} {0:>10d} "
                 f"{d_cost.flops / 1e9:>9.4f}")
    values["disc.params"] = d_cost.params
    values["disc.flops"] = d_cost.flops
    write_report(run.reports / "count", config, "parameter and FLOP counts", "\n".join(lines), values)
    return rows


# ---------------------------------------------------------------------------
# generate

def cmd_generate(config, checkpoint=None, count=8, out=None):
    """Image grid of samples on held-out layouts: layouts in the top row, samples below."""
    run = RunDir(config.output_dir).create()
    gen = _generator_from(config, checkpoint)
    layouts, _, _ = _load_split(config, "heldout")
    lay = layouts[:count]
    fake = _generate(gen, lay, config.seed).numpy()
    colors = np.asarray(config.dataset.colors, dtype=np.float32)
    painted = colors[lay.argmax(1).numpy()].transpose(0, 3, 1, 2)
    path = Path(out) if out else run.grids / f"generate_{Path(checkpoint).stem if checkpoint else 'untrained'}.png"
    save_image_grid(np.concatenate([painted, fake]), path, columns=lay.shape[0])
    return path
