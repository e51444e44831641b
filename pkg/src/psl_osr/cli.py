"""Command-line interface: ``psl-osr {gen,train,eval,sweep,analyze}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, formats
from .errors import ValidationError
from .losses import Mode
from .pipeline import (METHODS, PROTOCOLS, EvalConfig, RunConfig, evaluate_scored, make_data,
                       run, score, with_overrides)
from .synthgen import DatasetSplits, class_specs
from .trainer import train

log = logging.getLogger("psl_osr")

LOG_COLUMNS = ["epoch", "loss", "acc", "sim_proto", "sim_mean", "variance"]


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_dict(formats.read_json(path))


# -- gen ---------------------------------------------------------------------

def write_dataset(out: Path, cfg: RunConfig, data: DatasetSplits) -> None:
    for key, name in formats.DATASET_FILES.items():
        formats.write_samples(out / name, getattr(data, key))
    g = cfg.generator
    manifest = {
        "generator": g.to_dict(),
        "data": vars(cfg.data).copy(),
        "data_seed": g.seed,
        "frames_per_seq": g.frames_per_seq,
        "frame_dim": g.frame_dim,
        "num_ind_classes": g.num_ind_classes,
        "num_ood_classes": g.num_ood_classes,
        "classes": [s.to_dict() for s in class_specs(g)],
        "files": dict(formats.DATASET_FILES),
        "counts": {k: len(getattr(data, k)) for k in formats.DATASET_FILES},
    }
    formats.write_json(out / "manifest.json", manifest)


def read_dataset(data_dir) -> tuple[DatasetSplits, dict]:
    data_dir = Path(data_dir)
    manifest = formats.read_json(data_dir / "manifest.json")
    t, d = manifest["frames_per_seq"], manifest["frame_dim"]
    parts = {k: formats.read_samples(data_dir / manifest["files"][k], t, d)
             for k in formats.DATASET_FILES}
    return DatasetSplits(**parts), manifest


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_overrides(cfg, data_seed=args.seed)
    out = formats.ensure_dir(args.out)
    write_dataset(out, cfg, make_data(cfg))
    print(f"wrote dataset to {out}")
    return 0


# -- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.mode is not None:
        cfg = with_overrides(cfg, mode=Mode.parse(args.mode))
    if args.seed is not None:
        cfg = with_overrides(cfg, train_seed=args.seed)
    if args.epochs is not None:
        cfg = with_overrides(cfg, epochs=args.epochs)
    data, manifest = read_dataset(args.data or args.out)
    out = formats.ensure_dir(args.out)
    result = train(data.train, cfg.train, manifest["num_ind_classes"])
    doc = formats.checkpoint_dict(
        result.params, result.bank, cfg.train, result.log,
        extra={"seeds": {"data_seed": manifest["data_seed"], "train_seed": cfg.train.seed},
               "input_shape": [manifest["frames_per_seq"], manifest["frame_dim"]]})
    formats.write_json(out / "checkpoint.json", doc)
    formats.write_csv(out / "train_log.csv", LOG_COLUMNS,
                      ([row[c] for c in LOG_COLUMNS] for row in result.log))
    print(f"wrote checkpoint to {out / 'checkpoint.json'}")
    return 0


# -- eval --------------------------------------------------------------------

def _eval_config(args, base: EvalConfig) -> EvalConfig:
    return EvalConfig(
        method=args.method or base.method,
        protocol=args.protocol or base.protocol,
        splits=args.splits if args.splits is not None else base.splits,
        split_seed=args.seed if args.seed is not None else base.split_seed,
        ridge=base.ridge,
    ).validate()


def _load_run(args):
    params, bank, tcfg, doc = formats.load_checkpoint(args.checkpoint)
    data, manifest = read_dataset(args.data)
    width = manifest["frames_per_seq"] * manifest["frame_dim"]
    if width != params.input_dim:
        raise ValidationError(
            f"checkpoint expects {params.input_dim} input values per sample, "
            f"dataset provides {width}")
    return params, bank, tcfg, doc, data, manifest


def cmd_eval(args) -> int:
    base = load_config(args.config).eval
    ev = _eval_config(args, base)
    params, bank, tcfg, doc, data, manifest = _load_run(args)
    scored = score(params, bank, data, ev.method, tcfg.loss.tau, ev.ridge)
    report = evaluate_scored(scored, ev)
    out = formats.ensure_dir(args.out)
    formats.write_report(out / "report.json", report)
    formats.write_csv(out / "splits.csv", ["split", "auroc", "aupr", "fpr95"],
                      ([r["split"], r["auroc"], r["aupr"], r["fpr95"]] for r in report.per_split))
    formats.write_scores(out / "scores.csv", scored.scores)
    print(f"AUROC={report.auroc:.4f} AUPR={report.aupr:.4f} FPR95={report.fpr95:.4f} "
          f"Acc={report.closed_set_acc:.4f}")
    return 0


# -- sweep -------------------------------------------------------------------

SWEEP_KNOBS = {"s_values": "s", "d_values": "dim", "s_shuf_values": "s_shuf"}
SWEEP_HEADER = ["param", "value", "auroc", "aupr", "fpr95", "acc", "n_seeds", "status"]
SEED_HEADER = ["param", "value", "seed", "auroc", "aupr", "fpr95", "acc"]


def _parse_list(text, cast=float):
    if text is None:
        return None
    try:
        vals = [cast(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse value list {text!r}") from None
    if not vals:
        raise ValidationError("value list is empty")
    return vals


def sweep(cfg: RunConfig, param: str, values, seeds, data_by_seed=None):
    """Yield (value, seed, report) for one full train+eval per value and seed.

    The dataset for each seed is generated once and reused across values.
    """
    data_by_seed = dict(data_by_seed or {})
    for value in values:
        for seed in seeds:
            run_cfg = with_overrides(cfg, train_seed=seed, data_seed=seed, **{param: value})
            if seed not in data_by_seed:
                data_by_seed[seed] = make_data(run_cfg)
            yield value, seed, run(run_cfg, data_by_seed[seed]).report


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    chosen = [(flag, knob) for flag, knob in SWEEP_KNOBS.items() if getattr(args, flag)]
    if not chosen:
        raise ValidationError("sweep: give --s-values, --d-values or --s-shuf-values")
    seeds = _parse_list(args.seeds, int) if args.seeds else [cfg.train.seed]
    out = formats.ensure_dir(args.out)
    rows, seed_rows = [], []
    status = 0
    try:
        for flag, knob in chosen:
            cast = int if knob == "dim" else float
            values = _parse_list(getattr(args, flag), cast)
            per_value: dict = {}
            for value, seed, rep in sweep(cfg, knob, values, seeds):
                seed_rows.append([knob, value, seed, rep.auroc, rep.aupr, rep.fpr95,
                                  rep.closed_set_acc])
                per_value.setdefault(value, []).append(rep)
                if len(per_value[value]) == len(seeds):
                    reps = per_value[value]
                    rows.append([knob, value] + [float(np.mean([getattr(r, k) for r in reps]))
                                                 for k in ("auroc", "aupr", "fpr95", "closed_set_acc")]
                                + [len(reps), "ok"])
                    _write_sweep(out, rows, seed_rows)
    except Exception as exc:  # keep what finished, mark the failure
        rows.append(["", "", "", "", "", "", "", f"failed: {exc}"])
        _write_sweep(out, rows, seed_rows)
        print(f"error: sweep aborted: {exc}", file=sys.stderr)
        status = 1
    print(f"wrote {out / 'sweep.csv'}")
    return status


def _write_sweep(out, rows, seed_rows):
    formats.write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    formats.write_csv(out / "sweep_seeds.csv", SEED_HEADER, seed_rows)


# -- analyze -----------------------------------------------------------------

STATS_HEADER = ["population", "group", "count", "mean", "variance", "sim_proto"]


def cmd_analyze(args) -> int:
    if not (args.spectrum or args.stats or args.per_class or args.hist):
        raise ValidationError("analyze: choose at least one of --spectrum --stats --per-class --hist")
    base = load_config(args.config).eval
    method = args.method or base.method
    params, bank, tcfg, doc, data, manifest = _load_run(args)
    out = formats.ensure_dir(args.out)
    scored = score(params, bank, data, method, tcfg.loss.tau, base.ridge)
    sc = scored.scores
    if args.spectrum:
        source = scored.test_features[sc.is_ood] if args.spectrum_on == "ood" else (
            scored.train_features if args.spectrum_on == "train" else scored.test_features)
        spec = analysis.singular_spectrum(analysis.covariance_matrix(source), len(source))
        formats.write_csv(out / "spectrum.csv", ["rank", "value", "log_value"],
                          ([r["rank"], r["value"], r["log_value"]] for r in spec.rows()))
    if args.stats:
        stats = analysis.class_similarity_stats(
            scored.test_features, sc.true_label, sc.predicted_label, bank, sc.is_ood)
        rows = []
        for pop, groups in (("ind", stats.ind), ("ood", stats.ood)):
            rows += [[pop, g.group, g.count, g.sim_mean,
                      "" if g.variance is None else g.variance, g.sim_proto] for g in groups]
        summ = stats.summary()
        rows += [["ind", "all", int((~sc.is_ood).sum()), summ["ind_mean"], summ["ind_variance"],
                  summ["ind_sim_proto"]],
                 ["ood", "all", int(sc.is_ood.sum()), summ["ood_mean"], summ["ood_variance"], ""]]
        formats.write_csv(out / "stats.csv", STATS_HEADER, rows)
        formats.write_csv(out / "stats_table.csv",
                          ["ind_mean", "ind_variance", "ood_mean", "ood_variance"],
                          [[summ["ind_mean"], summ["ind_variance"], summ["ood_mean"],
                            summ["ood_variance"]]])
    if args.per_class:
        table = analysis.per_class_uncertainty(sc)
        cols = ["class", "is_ood", "count", "mean", "min", "q1", "median", "q3", "max"]
        formats.write_csv(out / "per_class.csv", cols, ([r[c] for c in cols] for r in table))
    if args.hist:
        hist = analysis.uncertainty_histogram(sc, args.bins)
        formats.write_csv(out / "histogram.csv", ["bin_low", "bin_high", "ind_count", "ood_count"],
                          ([r["bin_low"], r["bin_high"], r["ind_count"], r["ood_count"]]
                           for r in hist.rows()))
    print(f"wrote analysis to {out}")
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="psl-osr", description="Prototype similarity learning for open-set recognition.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int)
        if data:
            sp.add_argument("--data", help="dataset directory written by `gen`")

    g = sub.add_parser("gen", help="generate the synthetic dataset")
    common(g, data=False)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train an encoder and prototypes")
    common(t)
    t.add_argument("--mode", help="PL, PSL or PSL_CT (overrides config)")
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "score and evaluate a checkpoint"),
                                 ("analyze", cmd_analyze, "representation analytics")):
        e = sub.add_parser(name, help=helptext)
        common(e)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--method", choices=METHODS)
        if name == "eval":
            e.add_argument("--protocol", choices=PROTOCOLS)
            e.add_argument("--splits", type=int)
        else:
            e.add_argument("--spectrum", action="store_true")
            e.add_argument("--spectrum-on", choices=("test", "ood", "train"), default="ood")
            e.add_argument("--stats", action="store_true")
            e.add_argument("--per-class", action="store_true")
            e.add_argument("--hist", action="store_true")
            e.add_argument("--bins", type=int, default=20)
        e.set_defaults(func=func)

    s = sub.add_parser("sweep", help="train+eval per hyperparameter value")
    common(s, data=False)
    s.add_argument("--s-values")
    s.add_argument("--d-values")
    s.add_argument("--s-shuf-values")
    s.add_argument("--seeds", help="comma-separated seeds (data and train)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("eval", "analyze") and not args.data:
        parser.error(f"{args.command}: --data is required")
    try:
        return args.func(args)
    except (ValidationError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
