"""Command-line pipeline: prep, pretrain, finetune, sample, eval, gradcheck.

Configuration is a single JSON file; --set key.path=value flags override
individual entries (flags win).  Exit codes: 0 ok, 2 config error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import eval_metrics, hybrid_seq, rl_finetune, sampler, smiles_kit, struct_io, toy, trainer
from .backbone import BackboneConfig
from .data_pipeline import (
    AugmentConfig,
    DataPipelineError,
    augment_record,
    filter_rare_elements,
    make_batch,
    mix_seed,
)
from .diffusion_head import DiffusionError, build_schedule
from .hybrid_seq import HybridSeqError, Vocab, decode_complex
from .rl_finetune import AgentPair, RLConfig, RLError, make_reward
from .sampler import SampleConfig
from .struct_io import StructIOError, parse_ligand_record, parse_pocket_pdb
from .trainer import (
    CorruptFile,
    JointLossConfig,
    NonFiniteLoss,
    OptimConfig,
    VersionMismatch,
    grad_check,
    load_checkpoint,
    make_train_state,
    save_checkpoint,
    train_step,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

GRADCHECK_TOLERANCE = 1e-4


class ConfigError(ValueError):
    pass


@dataclass
class DataSettings:
    raw_dir: str = "data/raw"
    out_dir: str = "out"
    max_len: int = 1024


@dataclass
class BackboneSettings:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_positions: int = 1024


@dataclass
class ScheduleSettings:
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class LossSettings:
    lam: float = 1.0
    label_smoothing: float = 0.0


@dataclass
class OptimSettings:
    lr: float = 3e-4
    steps: int = 1000
    batch_size: int = 8
    weight_decay: float = 0.0


@dataclass
class AugmentSettings:
    scale: float = 5.0
    rotate: bool = True
    randomize_smiles: bool = True


@dataclass
class RLSettings:
    mu: float = 10.0
    steps: int = 200
    batch_size: int = 8
    temperature: float = 1.0
    max_smiles_tokens: int = 128
    lr: float = 3e-4
    reward: str = "atom_count"
    reward_params: dict = field(default_factory=lambda: {"element": "N", "cap": 5})


@dataclass
class SampleSettings:
    n: int = 100
    temperature: float = 1.0
    top_k: int | None = None
    max_smiles_tokens: int = 128


@dataclass
class EvalSettings:
    properties: str = ""  # optional TSV: index, vina_dock, qed, sa
    vina_dock_max: float = -8.18
    qed_min: float = 0.25
    sa_min: float = 0.59


@dataclass
class RunConfig:
    seed: int = 0
    dtype: str = "float32"
    pocket_pdb: str = ""  # target pocket for finetune/sample
    checkpoint: str = ""  # defaults to <out_dir>/pretrained.ckpt
    data: DataSettings = field(default_factory=DataSettings)
    augment: AugmentSettings = field(default_factory=AugmentSettings)
    backbone: BackboneSettings = field(default_factory=BackboneSettings)
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    loss: LossSettings = field(default_factory=LossSettings)
    optim: OptimSettings = field(default_factory=OptimSettings)
    rl: RLSettings = field(default_factory=RLSettings)
    sample: SampleSettings = field(default_factory=SampleSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)


_KEY_ALIASES = {"lambda": "lam"}


def _build_config(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"expected object at {path or 'config root'}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        key = _KEY_ALIASES.get(key, key)
        if key not in fields:
            raise ConfigError(f"unknown config key {path + key!r}")
        ftype = fields[key].type
        if dataclasses.is_dataclass(_resolve_type(ftype)):
            kwargs[key] = _build_config(_resolve_type(ftype), value, path + key + ".")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


_TYPE_MAP = {
    "DataSettings": DataSettings,
    "BackboneSettings": BackboneSettings,
    "ScheduleSettings": ScheduleSettings,
    "LossSettings": LossSettings,
    "OptimSettings": OptimSettings,
    "AugmentSettings": AugmentSettings,
    "RLSettings": RLSettings,
    "SampleSettings": SampleSettings,
    "EvalSettings": EvalSettings,
}


def _resolve_type(ftype):
    if isinstance(ftype, str):
        return _TYPE_MAP.get(ftype, str)
    return ftype


def _apply_overrides(data: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key.path=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override below scalar key {part!r}")
        node[parts[-1]] = value
    return data


def load_config(path: str | None, overrides: list[str]) -> RunConfig:
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON in {path}: {exc}") from exc
    data = _apply_overrides(data, overrides)
    cfg = _build_config(RunConfig, data)
    if cfg.dtype not in ("float32", "float64"):
        raise ConfigError(f"dtype must be float32 or float64, got {cfg.dtype!r}")
    return cfg


def _torch_dtype(cfg: RunConfig) -> torch.dtype:
    return torch.float64 if cfg.dtype == "float64" else torch.float32


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.data.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else _out(cfg) / "pretrained.ckpt"


def _load_pocket(cfg: RunConfig) -> struct_io.ProteinPocket:
    if not cfg.pocket_pdb:
        raise ConfigError("pocket_pdb must be set for this command")
    path = Path(cfg.pocket_pdb)
    return parse_pocket_pdb(path.read_text(), source_id=path.stem)


# ---------------------------------------------------------------------------
# Commands


def cmd_prep(cfg: RunConfig) -> int:
    raw = Path(cfg.data.raw_dir)
    pdb_files = sorted(raw.glob("*.pdb"))
    if not pdb_files:
        raise StructIOError(f"no .pdb files in {raw}")
    complexes = []
    dropped_rare = 0
    for pdb_path in pdb_files:
        lig_path = pdb_path.with_suffix(".lig")
        if not lig_path.exists():
            raise StructIOError(f"missing ligand record for {pdb_path.name}")
        pocket = parse_pocket_pdb(pdb_path.read_text(), source_id=pdb_path.stem)
        ligand = parse_ligand_record(lig_path.read_text())
        if not filter_rare_elements(ligand):
            dropped_rare += 1
            continue
        complexes.append((pocket, ligand))
    if not complexes:
        raise StructIOError("no complexes left after filtering")
    vocab = hybrid_seq.build_vocab(complexes)
    base = AugmentConfig(
        scale=cfg.augment.scale, rotate=False, randomize_smiles=False, seed=cfg.seed
    )
    records = []
    dropped_long = 0
    for k, (pocket, ligand) in enumerate(complexes):
        seq = augment_record(pocket, ligand, vocab, base, record_index=k)
        if len(seq) > cfg.data.max_len:
            print(f"warning: dropping record {k} ({len(seq)} elements)", file=sys.stderr)
            dropped_long += 1
            continue
        records.append(seq)
    out = _out(cfg)
    vocab.save(out / "vocab.json")
    hybrid_seq.write_records(out / "records.txt", records, vocab)
    print(json.dumps({"kept": len(records), "dropped_rare": dropped_rare, "dropped_long": dropped_long}))
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig) -> int:
    out = _out(cfg)
    vocab = Vocab.load(out / "vocab.json")
    records = list(hybrid_seq.read_records(out / "records.txt", vocab))
    if not records:
        raise HybridSeqError("records.txt is empty; run prep first")
    sched = build_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    bb_cfg = BackboneConfig(vocab_size=len(vocab), **dataclasses.asdict(cfg.backbone))
    optim_cfg = OptimConfig(**dataclasses.asdict(cfg.optim))
    state = make_train_state(bb_cfg, sched, optim_cfg, seed=cfg.seed, dtype=_torch_dtype(cfg))
    loss_cfg = JointLossConfig(lam=cfg.loss.lam, label_smoothing=cfg.loss.label_smoothing)

    augmenting = cfg.augment.rotate or cfg.augment.randomize_smiles
    complexes = (
        [decode_complex(r, vocab, cfg.augment.scale) for r in records] if augmenting else None
    )
    n = len(records)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as log:
        for step in range(optim_cfg.steps):
            idxs = [(step * optim_cfg.batch_size + j) % n for j in range(optim_cfg.batch_size)]
            if augmenting:
                aug = AugmentConfig(
                    scale=cfg.augment.scale,
                    rotate=cfg.augment.rotate,
                    randomize_smiles=cfg.augment.randomize_smiles,
                    seed=mix_seed(cfg.seed, "aug", step),
                )
                seqs = [augment_record(*complexes[i], vocab, aug, record_index=i) for i in idxs]
            else:
                seqs = [records[i] for i in idxs]
            batch = make_batch(seqs, cfg.data.max_len, dtype=_torch_dtype(cfg))
            metrics = train_step(batch, state, loss_cfg)
            log.write(json.dumps(metrics) + "\n")
    save_checkpoint(state, str(out / "pretrained.ckpt"))
    print(json.dumps({"steps": state.step, "checkpoint": str(out / "pretrained.ckpt")}))
    return EXIT_OK


def cmd_finetune(cfg: RunConfig) -> int:
    out = _out(cfg)
    state = load_checkpoint(str(_checkpoint_path(cfg)))
    vocab = Vocab.load(out / "vocab.json")
    pocket = _load_pocket(cfg)
    pair = AgentPair(state.backbone, state.head, state.sched, vocab)
    reward = make_reward(cfg.rl.reward, **cfg.rl.reward_params)
    rl_cfg = RLConfig(
        mu=cfg.rl.mu,
        batch_size=cfg.rl.batch_size,
        steps=cfg.rl.steps,
        temperature=cfg.rl.temperature,
        max_smiles_tokens=cfg.rl.max_smiles_tokens,
        lr=cfg.rl.lr,
        seed=mix_seed(cfg.seed, "rl"),
    )
    with open(out / "rl_log.jsonl", "w", encoding="utf-8") as log:
        rl_finetune.finetune(
            pocket,
            pair,
            reward,
            rl_cfg,
            scale=cfg.augment.scale,
            on_metrics=lambda m: log.write(json.dumps(m) + "\n"),
        )
    agent_state = make_train_state(
        pair.agent.cfg, state.sched, state.optim_cfg, seed=cfg.seed, dtype=_torch_dtype(cfg)
    )
    agent_state.backbone = pair.agent
    agent_state.head = pair.head
    agent_state.optimizer = torch.optim.AdamW(
        list(pair.agent.parameters()) + list(pair.head.parameters()),
        lr=state.optim_cfg.lr,
        weight_decay=state.optim_cfg.weight_decay,
    )
    save_checkpoint(agent_state, str(out / "agent.ckpt"))
    print(json.dumps({"steps": rl_cfg.steps, "checkpoint": str(out / "agent.ckpt")}))
    return EXIT_OK


def cmd_sample(cfg: RunConfig) -> int:
    out = _out(cfg)
    state = load_checkpoint(str(_checkpoint_path(cfg)))
    vocab = Vocab.load(out / "vocab.json")
    pocket = _load_pocket(cfg)
    sample_cfg = SampleConfig(
        temperature=cfg.sample.temperature,
        top_k=cfg.sample.top_k,
        max_smiles_tokens=cfg.sample.max_smiles_tokens,
        seed=mix_seed(cfg.seed, "sample"),
    )
    ligands = sampler.batch_generate(
        pocket,
        cfg.sample.n,
        state.backbone,
        state.head,
        state.sched,
        vocab,
        sample_cfg,
        scale=cfg.augment.scale,
    )
    samples_dir = out / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)
    n_valid = 0
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as manifest:
        for index, lig in enumerate(ligands):
            if lig.valid:
                n_valid += 1
                graph = smiles_kit.parse(lig.smiles)
                text = struct_io.write_ligand(graph, lig.coords)
                (samples_dir / f"ligand_{index:03d}.lig").write_text(text + "\n")
            else:
                raw = "\n".join(
                    [lig.smiles] + [f"{x:.3f} {y:.3f} {z:.3f}" for x, y, z in lig.coords]
                )
                (samples_dir / f"ligand_{index:03d}.invalid.lig").write_text(raw + "\n")
            manifest.write(
                json.dumps(
                    {
                        "index": index,
                        "smiles": lig.smiles,
                        "valid": lig.valid,
                        "token_log_prob": lig.token_log_prob,
                    }
                )
                + "\n"
            )
    print(json.dumps({"n": len(ligands), "valid": n_valid}))
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    out = _out(cfg)
    manifest_path = out / "manifest.jsonl"
    rows = [json.loads(line) for line in manifest_path.read_text().splitlines() if line.strip()]
    candidates = [row["smiles"] for row in rows]
    props = eval_metrics.read_properties(cfg.eval.properties) if cfg.eval.properties else None
    thr = eval_metrics.SuccessThresholds(
        vina_dock_max=cfg.eval.vina_dock_max, qed_min=cfg.eval.qed_min, sa_min=cfg.eval.sa_min
    )
    rep = eval_metrics.report(candidates, props, thr)
    (out / "report.txt").write_text(rep.to_text())
    (out / "report.json").write_text(json.dumps(rep.summary(), indent=2) + "\n")
    print(json.dumps(rep.summary()))
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    torch.set_grad_enabled(True)
    complexes = toy.toy_complexes(2, seed=cfg.seed)
    vocab = hybrid_seq.build_vocab(complexes)
    bb_cfg = BackboneConfig(
        vocab_size=len(vocab), d_model=16, n_layers=1, n_heads=2, d_ff=32, max_positions=128
    )
    sched = build_schedule(5, 1e-2, 0.1)
    state = make_train_state(
        bb_cfg, sched, OptimConfig(), seed=cfg.seed, dtype=torch.float64, d_time=16, d_hidden=32
    )
    seqs = [
        hybrid_seq.encode_complex(p, l, vocab, cfg.augment.scale) for p, l in complexes
    ]
    batch = make_batch(seqs, cfg.data.max_len, dtype=torch.float64)
    err_joint = grad_check(batch, state, JointLossConfig(lam=cfg.loss.lam), seed=cfg.seed)

    pair = AgentPair(state.backbone, state.head, state.sched, vocab)
    with torch.no_grad():
        for p in pair.agent.parameters():
            p.add_(0.01 * torch.randn(p.shape, generator=torch.Generator().manual_seed(1), dtype=p.dtype))
    pocket = complexes[0][0]
    token_ids = [
        el.token_id
        for el in seqs[0].elements[seqs[0].ligand_start + 1 :]
        if el.is_discrete and el.token_id != hybrid_seq.BOC_ID and el.token_id != hybrid_seq.EOC_ID
    ]
    rl_cfg = RLConfig(mu=2.0, batch_size=1, steps=1, seed=cfg.seed)

    def rl_loss_fn():
        return rl_finetune.rl_loss(token_ids, pair, pocket, 0.5, rl_cfg, scale=cfg.augment.scale)

    named = [(n, p) for n, p in pair.agent.named_parameters() if p.requires_grad]
    err_rl = trainer.finite_difference_check(rl_loss_fn, named, n_coords=200, seed=cfg.seed)

    print(json.dumps({"joint_max_rel_error": err_joint, "rl_max_rel_error": err_rl}))
    if max(err_joint, err_rl) > GRADCHECK_TOLERANCE:
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybmol", description="Pocket-conditioned 3D ligand generation pipeline."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("prep", "ingest PDB+ligand pairs, filter, build vocab, write records"),
        ("pretrain", "supervised training of the joint token/coordinate model"),
        ("finetune", "RL finetuning against a named reward for one pocket"),
        ("sample", "generate 3D ligand candidates for one pocket"),
        ("eval", "aggregate validity/uniqueness/diversity/success metrics"),
        ("gradcheck", "finite-difference check of the training losses"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config entry (dotted path; JSON value)",
        )
    return parser


_COMMANDS = {
    "prep": cmd_prep,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}

_DATA_ERRORS = (
    StructIOError,
    smiles_kit.SmilesError,
    HybridSeqError,
    DataPipelineError,
    DiffusionError,
    eval_metrics.MetricsError,
    RLError,
    VersionMismatch,
    CorruptFile,
    FileNotFoundError,
)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLoss as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
