"""Command-line entry point.

Subcommands: ``gen`` (synthetic dataset), ``train``, ``sample``, ``eval``,
``inspect``.  Every command is deterministic given ``--seed``.  Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import diffusion as dif
from . import metrics as met
from . import molecules as mol
from .errors import (CheckpointCorruptionError, ConfigError, DivergenceError, EquigenError)
from .rng import RandomSource
from .runconfig import (diffusion_config, net_config, optimizer_settings,
                        parse_config_text, resolve_run_config)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2; the contract is 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config_flags(args, flag_names) -> "RunConfig":
    file_values = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_values = parse_config_text(fh.read())
    flags = {name: getattr(args, name) for name in flag_names if getattr(args, name, None) is not None}
    return resolve_run_config(file_values, flags)


def _out_path(rc, filename, explicit):
    if explicit:
        return explicit
    os.makedirs(rc.out_dir, exist_ok=True)
    return os.path.join(rc.out_dir, filename)


# --- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    rc = _load_config_flags(args, ("seed", "elements", "out_dir"))
    if args.count < 1:
        raise _UsageError("--count must be a positive integer")
    templates = [t.strip() for t in args.templates.split(",") if t.strip()]
    vocab = mol.AtomVocabulary(rc.elements)
    rng = RandomSource(rc.seed).stream("synthetic")
    records = mol.gen_synthetic(templates, args.jitter, args.count, rng, vocab)
    path = _out_path(rc, "dataset.xyz", args.out)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(mol.write_xyz(records, vocab))
    dist = mol.empirical_size_distribution(records)
    print(f"wrote {len(records)} molecules to {path}")
    print("size distribution: " + ", ".join(
        f"p(N={int(s)})={p:.3f}" for s, p in zip(dist.sizes, dist.probs)))
    return EXIT_OK


_TRAIN_FLAGS = ("forward", "condition", "train_steps", "batch_size", "lr", "clip_norm",
                "seed", "elements", "delta", "g_kind", "g0", "layers", "hidden",
                "vector_hidden", "log_every", "out_dir")


def cmd_train(args) -> int:
    rc = _load_config_flags(args, _TRAIN_FLAGS)
    vocab = mol.AtomVocabulary(rc.elements)
    with open(args.data, "r", encoding="utf-8") as fh:
        records = mol.parse_xyz(fh.read(), vocab)
    if not records:
        raise EquigenError(f"no molecules in {args.data}")
    conditional = rc.condition == "composition"
    graphs = [mol.encode_graph(r, vocab, rc.feature_scale, condition=conditional)
              for r in records]
    source = RandomSource(rc.seed)
    model = dif.init_model(net_config(rc), diffusion_config(rc), source)
    dist = mol.empirical_size_distribution(records)
    model.extras["size_distribution"] = {"sizes": [int(s) for s in dist.sizes],
                                         "probs": [float(p) for p in dist.probs]}
    ckpt_path = _out_path(rc, "model.ckpt", args.out)
    csv_path = os.path.splitext(ckpt_path)[0] + "_loss.csv"

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "wall_ms"])

        def stream_row(row):
            writer.writerow([row.step, f"{row.loss:.10g}", f"{row.wall_ms:.3f}"])
            fh.flush()

        try:
            result = dif.train(graphs, model, source, optimizer_settings(rc),
                               invariant_check_every=rc.log_every, on_step=stream_row)
        except DivergenceError:
            ckpt.save_checkpoint(ckpt_path, model)  # params hold the last finite state
            print(f"divergence: last finite checkpoint written to {ckpt_path}", file=sys.stderr)
            raise
    ckpt.save_checkpoint(ckpt_path, result.model)
    print(f"trained {rc.train_steps} steps ({rc.forward}); checkpoint: {ckpt_path}")
    print(f"loss trace: {csv_path}")
    return EXIT_OK


def cmd_sample(args) -> int:
    rc = _load_config_flags(args, ("seed", "out_dir"))
    model = ckpt.load_checkpoint(args.checkpoint)
    vocab = mol.AtomVocabulary(model.diffusion.elements)
    condition = None
    if args.composition:
        condition = mol.parse_composition(args.composition, vocab)
        if not model.conditional:
            raise EquigenError("checkpoint was trained unconditionally; "
                               "it cannot honor --composition")
    elif model.conditional:
        raise EquigenError("conditional checkpoint requires --composition")
    size_dist = None
    if condition is None:
        meta = model.extras.get("size_distribution")
        if not meta:
            raise EquigenError("checkpoint carries no size distribution; retrain or "
                               "provide --composition")
        size_dist = mol.SizeDistribution(sizes=np.asarray(meta["sizes"], dtype=np.int64),
                                         probs=np.asarray(meta["probs"], dtype=np.float64))
    if args.count < 1:
        raise _UsageError("--count must be a positive integer")
    source = RandomSource(rc.seed)
    result = dif.sample(model, args.count, source, steps=args.steps,
                        size_distribution=size_dist, condition=condition)
    records = [mol.decode_graph(g.positions, g.features, vocab, tag=f"sample {i}")
               for i, g in enumerate(result.graphs)]
    path = _out_path(rc, "samples.xyz", args.out)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(mol.write_xyz(records, vocab))
    msg = f"wrote {len(records)} samples to {path}"
    if result.aborted:
        msg += f" ({len(result.aborted)} chains aborted: {result.aborted})"
    print(msg)
    return EXIT_OK


_METRIC_CHOICES = ("stability", "tv_atoms", "distance_tv", "mmd", "matching")


def cmd_eval(args) -> int:
    rc = _load_config_flags(args, ("seed", "elements", "out_dir"))
    vocab = mol.AtomVocabulary(rc.elements)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for name in metrics:
        if name not in _METRIC_CHOICES:
            raise _UsageError(f"unknown metric '{name}' (choose from {_METRIC_CHOICES})")
    if "matching" in metrics and not args.manifest:
        raise _UsageError("--metrics matching requires --manifest")
    with open(args.samples, "r", encoding="utf-8") as fh:
        samples = mol.parse_xyz(fh.read(), vocab)
    if not samples:
        raise EquigenError(f"no molecules in {args.samples}")
    reference = None
    if any(m in metrics for m in ("stability", "tv_atoms", "distance_tv", "mmd")):
        if not args.reference:
            raise _UsageError("these metrics require --reference")
        with open(args.reference, "r", encoding="utf-8") as fh:
            reference = mol.parse_xyz(fh.read(), vocab)
        if not reference:
            raise EquigenError(f"no molecules in {args.reference}")

    rows = []
    if "stability" in metrics:
        table, rules = met.load_default_bond_table(), met.load_default_valences()
        atom_frac, mol_rate = met.batch_stability(samples, table, rules, vocab)
        rows.append(("atom_stability", atom_frac, len(samples)))
        rows.append(("molecule_stability", mol_rate, len(samples)))
    if "tv_atoms" in metrics:
        rows.append(("tv_atoms", met.total_variation_atoms(samples, reference, vocab),
                     len(samples)))
    if "distance_tv" in metrics:
        pooled = np.concatenate([met.pooled_pairwise_distances(samples),
                                 met.pooled_pairwise_distances(reference)])
        bins = np.linspace(0.0, float(pooled.max()) + 1e-9, 61)
        rows.append(("distance_tv",
                     met.histogram_tv(met.pooled_pairwise_distances(samples),
                                      met.pooled_pairwise_distances(reference), bins),
                     len(samples)))
    if "mmd" in metrics:
        rows.append(("mmd_distances", met.mmd_pairwise_distances(samples, reference),
                     len(samples)))
    if "matching" in metrics:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            prompts = [line.strip() for line in fh if line.strip()]
        if len(prompts) != len(samples):
            raise EquigenError(f"manifest has {len(prompts)} prompts for {len(samples)} samples")
        conditions = [mol.parse_composition(p, vocab) for p in prompts]
        rows.append(("composition_matching", met.matching_rate(samples, conditions, vocab),
                     len(samples)))

    path = _out_path(rc, "metrics.csv", args.out)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value", "count"])
        for name, value, count in rows:
            writer.writerow([name, f"{value:.6g}", count])
    for name, value, count in rows:
        print(f"{name}: {value:.6g} (n={count})")
    print(f"metrics written to {path}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    print(ckpt.inspect_checkpoint(args.checkpoint))
    return EXIT_OK


# --- wiring -----------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="equigen",
                     description="Equivariant diffusion for 3D molecules with a "
                                 "learnable forward process")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic template dataset")
    p.add_argument("--templates", default="tetra,chain5",
                   help=f"comma list from {sorted(mol.TEMPLATES)}")
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.add_argument("--elements", type=str)
    p.add_argument("--out", help="output XYZ path")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on an XYZ dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--forward", help="learned | learned_mean | vp | vp_gamma "
                                     "(aliases: edm_star, edm_star_gamma, mu_only)")
    p.add_argument("--condition", choices=("none", "composition"))
    p.add_argument("--train-steps", dest="train_steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--vector-hidden", dest="vector_hidden", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--g-kind", dest="g_kind", choices=("constant", "learned"))
    p.add_argument("--g0", type=float)
    p.add_argument("--elements", type=str)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw molecules from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--steps", type=int, help="integration steps (default: checkpoint value)")
    p.add_argument("--composition", help="formula prompt such as C3H8O")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output XYZ path")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--config")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score samples against a reference set")
    p.add_argument("--samples", required=True)
    p.add_argument("--reference")
    p.add_argument("--metrics", default="stability,tv_atoms,distance_tv,mmd")
    p.add_argument("--manifest", help="per-sample composition prompts (for matching)")
    p.add_argument("--elements", type=str)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # raised by --help (0) and usage errors (1)
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"equigen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"equigen: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointCorruptionError, ConfigError, EquigenError, OSError) as exc:
        print(f"equigen: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
