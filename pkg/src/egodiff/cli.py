"""Command-line driver: ``egodiff <command> --config run.json [--set sec.key=value]``.

Every command resolves the JSON config against the defaults below, writes the
resolved document to ``<out_dir>/config.resolved.json`` and then produces its
artifacts. Exit codes: 0 ok, 1 usage/config, 2 data, 3 numerical failure.
"""
import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .ego import EgoConfig
from .errors import ContractError, DataError, NumericalError
from .io import (SynthConfig, generate_synthetic, load_bundle, read_score_csv, save_bundle,
                 write_breakdown_csv, write_energy_csv, write_eval_csv, write_score_csv,
                 write_solver_profile_csv)
from .metrics import evaluate
from .model import ModelConfig, load_checkpoint
from .scoring import (ScoringConfig, energy_records, score_all, solver_error_profile)
from .sde import VpSde
from .solvers import SOLVER_KINDS, SolverConfig
from .train import FeatureScaler, TrainConfig, draw_hyperparameters, standardize_features, train

log = logging.getLogger("egodiff")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

# (default, help) per key. Lists in model.hidden_dim, train.lr and scoring.alpha
# are grids sampled once per trial.
SCHEMA = {
    "sde": {
        "beta_min": (0.1, "noise schedule start"),
        "beta_max": (1.0, "noise schedule end"),
        "t_max": (1.0, "diffusion horizon T"),
        "t_eps": (1e-5, "smallest time used for training and SNR"),
    },
    "ego": {
        "hops": (1, "ego-graph radius k"),
        "max_nodes": (32, "truncation size M (center always kept)"),
    },
    "model": {
        "hidden_dim": ([8, 12, 16], "hidden width, or a grid drawn per trial"),
        "heads": (4, "attention heads"),
        "channels": (4, "attention output channels"),
        "adjacency_powers": (2, "adjacency channels [A, A^2, ...]"),
    },
    "train": {
        "epochs": (300, "training epochs"),
        "batch_size": (None, "ego-graphs per batch; null = full batch"),
        "lr": ([0.1, 0.05, 0.01], "Adam learning rate, or a grid drawn per trial"),
        "weight_decay": (0.01, "decoupled weight decay"),
        "trials": (1, "independent draw/train/score/eval runs"),
        "seed": (0, "master seed"),
    },
    "scoring": {
        "levels": (4, "reconstruction levels K"),
        "samples_per_level": (3, "samples S per level"),
        "alpha": ([0.8, 0.5, 0.2], "feature weight in the matrix distance, or a grid"),
        "penalty": ("snr", "time penalty: snr, sqrt_snr or none"),
        "dissimilarity": ("matrix", "matrix or energy"),
        "solver": ("em", "one of " + ", ".join(SOLVER_KINDS)),
        "steps_per_unit_time": (100, "predictor steps per unit time"),
        "corrector_snr": (0.16, "Langevin target signal-to-noise ratio"),
        "corrector_steps": (1, "Langevin steps per predictor step"),
        "corrector_order": ("after", "Langevin before or after the predictor"),
        "binarize_threshold": (0.5, "threshold applied before energy computations"),
        "batch_size": (64, "ego-graphs reconstructed together"),
        "seed": (0, "seed for truncation and reconstruction noise"),
    },
    "analysis": {
        "solvers": (list(SOLVER_KINDS), "solver kinds compared by solver-compare"),
        "taus": ([0.2, 0.4, 0.6, 0.8], "noise levels for solver-compare"),
        "num_nodes": (100, "nodes sampled for solver-compare and energy-hist; null = all"),
        "samples": (1, "reconstructions per node and level in solver-compare"),
    },
    "synth": {
        "num_nodes": (500, "nodes"),
        "num_features": (8, "feature columns"),
        "blocks": (4, "stochastic block model communities"),
        "p_in": (0.08, "edge probability inside a community"),
        "p_out": (0.004, "edge probability across communities"),
        "contextual_fraction": (0.025, "share of nodes with shifted features"),
        "structural_fraction": (0.025, "share of nodes wired into cliques"),
        "clique_size": (12, "nodes per planted clique"),
        "feature_shift": (15.0, "contextual shift in noise standard deviations"),
        "block_separation": (1.0, "spread of community feature means"),
        "seed": (0, "generator seed"),
    },
    "paths": {
        "bundle": ("data/bundle", "graph bundle directory (read, or written by synth)"),
        "checkpoint": (None, "checkpoint directory; null = the trial checkpoints in out_dir"),
        "out_dir": ("runs/out", "directory for every output of the command"),
        "scores": (None, "score CSV(s) for eval; null = the trial score files in out_dir"),
    },
}

GRID_KEYS = {("model", "hidden_dim"), ("train", "lr"), ("scoring", "alpha")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------

def defaults():
    return {sec: {k: copy.deepcopy(v[0]) for k, v in keys.items()}
            for sec, keys in SCHEMA.items()}


def _merge(base, doc, origin):
    if not isinstance(doc, dict):
        raise UsageError(f"{origin}: top level must be a JSON object")
    for sec, vals in doc.items():
        if sec not in SCHEMA:
            raise UsageError(f"{origin}: unknown section {sec!r}")
        if not isinstance(vals, dict):
            raise UsageError(f"{origin}: section {sec!r} must be an object")
        for k, v in vals.items():
            if k not in SCHEMA[sec]:
                raise UsageError(f"{origin}: unknown key {sec}.{k}")
            base[sec][k] = v
    return base


def _parse_override(text):
    key, sep, raw = text.partition("=")
    sec, dot, name = key.partition(".")
    if not sep or not dot:
        raise UsageError(f"--set expects section.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return {sec: {name: value}}


def resolve_config(path=None, overrides=()):
    cfg = defaults()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file {path!r} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        _merge(cfg, doc, path)
    for text in overrides:
        _merge(cfg, _parse_override(text), f"--set {text}")
    return cfg


def _grid(value, key):
    vals = value if isinstance(value, list) else [value]
    if not vals:
        raise UsageError(f"{key} grid is empty")
    return tuple(vals)


def _build(cfg):
    """Typed config objects from the resolved document."""
    try:
        sde = VpSde(**cfg["sde"])
        ego = EgoConfig(**cfg["ego"])
        tr = cfg["train"]
        train_cfg = TrainConfig(
            epochs=int(tr["epochs"]), batch_size=tr["batch_size"],
            lr=float(_grid(tr["lr"], "train.lr")[0]), weight_decay=float(tr["weight_decay"]),
            hidden_dim=int(_grid(cfg["model"]["hidden_dim"], "model.hidden_dim")[0]),
            hidden_dim_grid=_grid(cfg["model"]["hidden_dim"], "model.hidden_dim"),
            lr_grid=_grid(tr["lr"], "train.lr"),
            alpha_grid=_grid(cfg["scoring"]["alpha"], "scoring.alpha"),
            seed=int(tr["seed"]), ego=ego, sde=sde)
        sc = cfg["scoring"]
        solver = SolverConfig(kind=sc["solver"], steps_per_unit_time=sc["steps_per_unit_time"],
                              corrector_target_snr=sc["corrector_snr"],
                              corrector_steps=sc["corrector_steps"],
                              corrector_order=sc["corrector_order"])
        scoring = ScoringConfig(levels=sc["levels"], samples_per_level=sc["samples_per_level"],
                                alpha=float(_grid(sc["alpha"], "scoring.alpha")[0]),
                                penalty=sc["penalty"], dissimilarity=sc["dissimilarity"],
                                solver=solver, binarize_threshold=sc["binarize_threshold"],
                                batch_size=sc["batch_size"], seed=sc["seed"])
        synth = SynthConfig(**cfg["synth"])
    except TypeError as exc:
        raise UsageError(f"invalid config value: {exc}") from None
    if int(tr["trials"]) < 1:
        raise UsageError("train.trials must be >= 1")
    return sde, ego, train_cfg, scoring, synth


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(cfg):
    out = cfg["paths"]["out_dir"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "config.resolved.json"), cfg)
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(cfg, args):
    *_, synth = _build(cfg)
    target = args.out or cfg["paths"]["bundle"]
    _out_dir(cfg)
    save_bundle(generate_synthetic(synth), target)
    log.info("wrote bundle %s", target)


def _trial_file(out):
    return os.path.join(out, "trials.json")


def cmd_train(cfg, args):
    sde, ego, train_cfg, _, _ = _build(cfg)
    out = _out_dir(cfg)
    net, scaler = standardize_features(load_bundle(cfg["paths"]["bundle"]))
    trials = []
    for i in range(int(cfg["train"]["trials"])):
        hp = draw_hyperparameters(train_cfg, i)
        tc = replace(train_cfg, seed=train_cfg.seed + i)
        model_cfg = ModelConfig(net.num_features, hp.hidden_dim, cfg["model"]["heads"],
                                cfg["model"]["channels"], cfg["model"]["adjacency_powers"])
        res = train(net, tc, model_cfg, lr=hp.lr, out_dir=out, scaler=scaler, tag=f"_t{i}")
        trials.append({"trial": i, "lr": hp.lr, "hidden_dim": hp.hidden_dim,
                       "alpha": hp.alpha, "seed": tc.seed,
                       "checkpoint": os.path.basename(res.checkpoint),
                       "loss_csv": os.path.basename(res.loss_csv)})
        final = res.losses[-1] if res.losses else (0, float("nan"), float("nan"))
        log.info("trial %d lr=%g hidden=%d: loss_x=%.4f loss_a=%.4f", i, hp.lr,
                 hp.hidden_dim, final[1], final[2])
    _write_json(_trial_file(out), trials)


def _checkpoints(cfg):
    """``[(trial, checkpoint_dir, alpha_or_None)]`` for the scoring commands."""
    if cfg["paths"]["checkpoint"]:
        return [(0, cfg["paths"]["checkpoint"], None)]
    out = cfg["paths"]["out_dir"]
    path = _trial_file(out)
    if not os.path.isfile(path):
        raise DataError(f"{path} not found; run 'train' first or set paths.checkpoint")
    with open(path, encoding="utf-8") as fh:
        trials = json.load(fh)
    return [(t["trial"], os.path.join(out, t["checkpoint"]), t["alpha"]) for t in trials]


def _load_scaled(cfg, ckpt):
    model, sde, manifest = load_checkpoint(ckpt)
    net = load_bundle(cfg["paths"]["bundle"])
    std = manifest.get("scaler_std")
    if std is not None:
        if len(std) != net.num_features:
            raise DataError(f"{ckpt}: scaler has {len(std)} features, bundle has "
                            f"{net.num_features}")
        std = np.asarray(std, dtype=np.float64)
        net = FeatureScaler(std, std == 1.0).apply(net)
    if net.num_features != model.config.num_features:
        raise DataError(f"{ckpt}: model expects {model.config.num_features} features, bundle "
                        f"has {net.num_features}")
    return net, model, sde


def cmd_score(cfg, args):
    _, ego, _, scoring, _ = _build(cfg)
    out = _out_dir(cfg)
    for trial, ckpt, alpha in _checkpoints(cfg):
        net, model, sde = _load_scaled(cfg, ckpt)
        sc = scoring if alpha is None else replace(scoring, alpha=alpha)
        rep = score_all(net, model, sde, ego, sc)
        write_score_csv(rep, os.path.join(out, f"scores_t{trial}.csv"))
        write_breakdown_csv(rep, os.path.join(out, f"breakdown_t{trial}.csv"))
        log.info("trial %d scored %d nodes", trial, len(rep.node_ids))


def _score_files(cfg):
    given = cfg["paths"]["scores"]
    if given:
        return given if isinstance(given, list) else [given]
    out = cfg["paths"]["out_dir"]
    files = sorted((f for f in os.listdir(out) if f.startswith("scores_t") and
                    f.endswith(".csv")), key=lambda f: int(f[8:-4])) if os.path.isdir(out) else []
    if not files:
        raise DataError(f"no scores_t*.csv in {out!r}; run 'score' first or set paths.scores")
    return [os.path.join(out, f) for f in files]


def cmd_eval(cfg, args):
    files = _score_files(cfg)
    out = _out_dir(cfg)
    bundle_labels = None
    rows = []
    for path in files:
        ids, scores, labels = read_score_csv(path)
        if labels is None:
            if bundle_labels is None:
                bundle_labels = load_bundle(cfg["paths"]["bundle"]).labels
                if bundle_labels is None:
                    raise DataError(f"{path} has no labels and the bundle has no labels.tsv")
            labels = bundle_labels[ids]
        try:
            rows.append(evaluate(scores, labels))
        except ContractError as exc:
            raise DataError(f"{path}: {exc}") from None
    write_eval_csv(rows, os.path.join(out, "eval.csv"))
    for name in rows[0]:
        vals = [r[name] for r in rows]
        log.info("%s %.4f +- %.4f (max %.4f)", name, np.mean(vals), np.std(vals), max(vals))


def _sample_nodes(cfg, net):
    k = cfg["analysis"]["num_nodes"]
    if k is None or k >= net.num_nodes:
        return np.arange(net.num_nodes)
    rng = np.random.default_rng([cfg["scoring"]["seed"], 2])
    return np.sort(rng.choice(net.num_nodes, size=int(k), replace=False))


def cmd_solver_compare(cfg, args):
    _, ego, _, scoring, _ = _build(cfg)
    out = _out_dir(cfg)
    trial, ckpt, _ = _checkpoints(cfg)[0]
    net, model, sde = _load_scaled(cfg, ckpt)
    an = cfg["analysis"]
    rows = solver_error_profile(net, model, sde, ego, an["solvers"], an["taus"],
                                _sample_nodes(cfg, net), seed=scoring.seed,
                                samples=int(an["samples"]), base=scoring.solver,
                                batch_size=scoring.batch_size)
    write_solver_profile_csv(rows, os.path.join(out, "solver_profile.csv"))


def cmd_energy_hist(cfg, args):
    _, ego, _, scoring, _ = _build(cfg)
    out = _out_dir(cfg)
    trial, ckpt, _ = _checkpoints(cfg)[0]
    net, model, sde = _load_scaled(cfg, ckpt)
    rep = score_all(net, model, sde, ego, scoring, nodes=_sample_nodes(cfg, net))
    write_energy_csv(energy_records(rep), os.path.join(out, "energy.csv"))


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic anomaly network bundle"),
    "train": (cmd_train, "fit score networks, one checkpoint and loss CSV per trial"),
    "score": (cmd_score, "score every node with each trial checkpoint"),
    "eval": (cmd_eval, "ROC-AUC, AP and Recall@k per trial with mean/std/max rows"),
    "solver-compare": (cmd_solver_compare, "mean reconstruction error per solver and level"),
    "energy-hist": (cmd_energy_hist, "original vs reconstructed normalized energies"),
}


def _config_help():
    lines = ["config keys (section.key = default: meaning):"]
    for sec, keys in SCHEMA.items():
        for k, (dflt, text) in keys.items():
            lines.append(f"  {sec}.{k} = {json.dumps(dflt)}: {text}")
    return "\n".join(lines)


def build_parser():
    p = _Parser(prog="egodiff", description=__doc__.splitlines()[0],
                epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="command", required=True,
                           parser_class=_Parser)
    for name, (_, text) in COMMANDS.items():
        s = sub.add_parser(name, help=text, description=text, epilog=_config_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config key (value parsed as JSON when possible)")
        s.add_argument("--print-config", action="store_true",
                       help="print the resolved configuration and exit")
        if name == "synth":
            s.add_argument("--out", help="bundle directory (overrides paths.bundle)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.config, args.set)
        if args.print_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        COMMANDS[args.command][0](cfg, args)
    except (UsageError, ContractError) as exc:
        print(f"egodiff: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"egodiff: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"egodiff: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK
