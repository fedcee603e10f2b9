"""Command-line entry point.

Every command writes its outputs (plain CSV, JSON per-seed reports) plus a
JSON run manifest that records the exact argv, the resolved configuration and
the seeds, so any run can be replayed bit-exactly with ``dropforge replay``.
Randomized per-sample work is fanned out over named sub-streams of the single
``--seed`` flag, which makes results independent of ``--jobs``.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .attacks import AttackConfig, run_attack
from .defenses import (LogitDetector, MutationDetector, SqueezeDetector,
                       calibrate_threshold, emit_defense_report, evaluate_defense,
                       score_set)
from .errors import ConfigError, DatasetError, DropforgeError, ModelFormatError
from .evaluation import (METRIC_NAMES, NEGATED_METRICS, ReportRow, auc_roc,
                         emit_report, read_report)
from .ga import GaConfig, describe_report, evolve, ga_config_to_dict, load_ga_config
from .modelio import (LabeledDataset, build_toy_convnet, fixture_models,
                      load_csv_dataset, load_idx, load_model, load_toy_digits,
                      save_csv_dataset, save_model)
from .network import Network, with_mc_dropout
from .rng import RngStream
from .train import accuracy, sgd_train
from .uncertainty import PatternThresholds, categorize_values, profile

_USAGE_ERROR_EXIT = 1
_RUNTIME_ERROR_EXIT = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_dataset(arg: str, image_shape: tuple[int, ...] | None) -> LabeledDataset:
    """``images.idx,labels.idx`` pair, or a single toy CSV path."""
    if "," in arg:
        images_path, labels_path = (p.strip() for p in arg.split(",", 1))
        return load_idx(images_path, labels_path)
    if arg.endswith(".csv"):
        return load_csv_dataset(arg, image_shape=image_shape)
    raise DatasetError(f"cannot infer dataset format of {arg!r}: "
                       "expected 'images.idx,labels.idx' or a .csv file")


def _parse_thresholds(text: str | None) -> PatternThresholds:
    if not text:
        return PatternThresholds()
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise ConfigError("--thresholds needs 'p_low,p_high,v_low,v_high'")
    return PatternThresholds(*parts)


def _prepare_model(path: str, auto_dropout: bool, dropout_rate: float,
                   need_mc: bool) -> Network:
    net = load_model(path)
    if need_mc and not net.has_dropout:
        if not auto_dropout:
            raise ConfigError(
                f"model {path} has no dropout layer; pass --auto-dropout to insert one"
            )
        net = with_mc_dropout(net, dropout_rate)
    return net


def _write_manifest(out_path: str, command: str, argv: list[str], config: dict,
                    inputs: dict, outputs: dict, started: float) -> str:
    manifest = {
        "tool": "dropforge",
        "version": __version__,
        "command": command,
        "argv": argv,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "duration_seconds": time.monotonic() - started,
    }
    tmp = out_path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, out_path)
    return out_path


def _manifest_path(args) -> str:
    out = args.out
    if os.path.splitext(out)[1]:  # file-style output
        return out + ".manifest.json"
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, "manifest.json")


# ------------------------------------------------------------------ commands

def cmd_train_toy(args, argv):
    if args.data:
        data = _load_dataset(args.data, image_shape=(8, 8, 1))
    else:
        data = load_toy_digits("train")
    net = build_toy_convnet(RngStream(args.seed, 0), dropout_rate=args.dropout_rate,
                            input_dropout_rate=args.input_dropout)
    trained, history = sgd_train(net, data.images, data.labels,
                                 epochs=args.epochs, lr=args.lr, lr_decay=args.lr_decay,
                                 batch_size=args.batch_size, momentum=args.momentum,
                                 adversarial_fraction=args.adv_fraction,
                                 adversarial_eps=args.adv_eps,
                                 rng=RngStream(args.seed, 1))
    save_model(trained, args.out)
    _log(f"final train accuracy {history.final_train_accuracy:.4f} "
         f"(loss {history.epoch_losses[0]:.4f} -> {history.epoch_losses[-1]:.4f})")
    if not args.data:
        test = load_toy_digits("test")
        _log(f"bundled test accuracy {accuracy(trained, test.images, test.labels):.4f}")
    config = {"epochs": args.epochs, "lr": args.lr, "lr_decay": args.lr_decay,
              "batch_size": args.batch_size, "momentum": args.momentum,
              "dropout_rate": args.dropout_rate, "input_dropout": args.input_dropout,
              "adv_fraction": args.adv_fraction, "adv_eps": args.adv_eps,
              "seed": args.seed,
              "final_train_accuracy": history.final_train_accuracy}
    return config, {"data": args.data or data.provenance}, {"model": args.out}


def cmd_attack(args, argv):
    net = load_model(args.model)
    data = _load_dataset(args.data, image_shape=net.input_shape)
    cfg = AttackConfig(method=args.method, epsilon=args.eps,
                       bim_steps=args.bim_steps, bim_step_size=args.bim_step_size)
    predicted = net.predict_label_batch(data.images)
    indices = [i for i in range(len(data))
               if args.include_misclassified or predicted[i] == data.labels[i]]
    if args.count is not None:
        indices = indices[:args.count]
    if not indices:
        raise DatasetError("no benign seeds to attack")

    results = _parallel_map(
        lambda i: run_attack(net, data.images[i], int(data.labels[i]), cfg, seed_index=i),
        indices, args.jobs)

    os.makedirs(args.out, exist_ok=True)
    perturbed_csv = os.path.join(args.out, "perturbed.csv")
    adversarial_csv = os.path.join(args.out, "adversarial.csv")
    results_csv = os.path.join(args.out, "results.csv")
    save_csv_dataset(perturbed_csv, np.stack([r.image for r in results]),
                     [r.original_label for r in results])
    wins = [r for r in results if r.success]
    if wins:
        save_csv_dataset(adversarial_csv, np.stack([r.image for r in wins]),
                         [r.original_label for r in wins])
    with open(results_csv + ".tmp", "w") as f:
        f.write("seed_index,original_label,adversarial_label,success,linf,iterations\n")
        for r in results:
            f.write(f"{r.seed_index},{r.original_label},{r.adversarial_label},"
                    f"{int(r.success)},{r.linf!r},{r.iterations}\n")
    os.replace(results_csv + ".tmp", results_csv)
    _log(f"{len(wins)}/{len(results)} attacks succeeded "
         f"(mean linf {np.mean([r.linf for r in results]):.4f})")

    config = {"method": cfg.method, "epsilon": cfg.epsilon, "bim_steps": cfg.bim_steps,
              "bim_step_size": cfg.step_size, "count": args.count,
              "include_misclassified": args.include_misclassified, "jobs": args.jobs}
    outputs = {"perturbed": perturbed_csv, "results": results_csv}
    if wins:
        outputs["adversarial"] = adversarial_csv
    return config, {"model": args.model, "data": args.data}, outputs


def cmd_metrics(args, argv):
    net = _prepare_model(args.model, args.auto_dropout, args.dropout_rate, need_mc=True)
    data = _load_dataset(args.data, image_shape=net.input_shape)
    thresholds = _parse_thresholds(args.thresholds)
    group = args.group or os.path.basename(args.data.split(",")[0])
    base = RngStream(args.seed)

    def one(i: int) -> ReportRow:
        prof = profile(net, data.images[i], args.passes, base.child(i))
        return ReportRow.from_profile(f"{group}-{i}", group, int(data.labels[i]),
                                      prof, thresholds)

    rows = _parallel_map(one, range(len(data)), args.jobs)
    emit_report(rows, args.out)
    _log(f"profiled {len(rows)} inputs with {args.passes} passes -> {args.out}")
    config = {"passes": args.passes, "seed": args.seed, "group": group,
              "jobs": args.jobs, "auto_dropout": args.auto_dropout,
              "dropout_rate": args.dropout_rate,
              "thresholds": dataclasses.asdict(thresholds)}
    return config, {"model": args.model, "data": args.data}, {"report": args.out}


def cmd_auc(args, argv):
    benign = read_report(args.benign)
    adv = read_report(args.adv)
    if not benign or not adv:
        raise DatasetError("both report files must contain rows")
    lines = []
    for metric in METRIC_NAMES:
        sign = -1.0 if metric in NEGATED_METRICS else 1.0
        value = auc_roc([sign * r[metric] for r in adv],
                        [sign * r[metric] for r in benign])
        orientation = "negated" if metric in NEGATED_METRICS else "raw"
        lines.append((metric, value, orientation))
        _log(f"AUC[{metric}] = {value:.4f} ({orientation})")
    with open(args.out + ".tmp", "w") as f:
        f.write("metric,auc,n_benign,n_adv,orientation\n")
        for metric, value, orientation in lines:
            f.write(f"{metric},{value!r},{len(benign)},{len(adv)},{orientation}\n")
    os.replace(args.out + ".tmp", args.out)
    return {}, {"benign": args.benign, "adv": args.adv}, {"auc": args.out}


def cmd_categorize(args, argv):
    thresholds = _parse_thresholds(args.thresholds)
    rows = read_report(args.infile)
    counts: dict[str, int] = {}
    with open(args.out + ".tmp", "w", newline="") as f:
        f.write("id,group,label_true,label_pred,is_adversarial,pcs,vr,vro,pe,mi,pattern\n")
        for r in rows:
            pattern = categorize_values(r["pcs"], r["vro"], thresholds).value
            counts[pattern] = counts.get(pattern, 0) + 1
            f.write(f"{r['id']},{r['group']},{r['label_true']},{r['label_pred']},"
                    f"{int(r['is_adversarial'])},{r['pcs']!r},{r['vr']!r},{r['vro']!r},"
                    f"{r['pe']!r},{r['mi']!r},{pattern}\n")
    os.replace(args.out + ".tmp", args.out)
    _log("pattern counts: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return ({"thresholds": dataclasses.asdict(thresholds)},
            {"report": args.infile}, {"categorized": args.out})


def cmd_generate(args, argv):
    net = _prepare_model(args.model, args.auto_dropout, args.dropout_rate, need_mc=True)
    data = _load_dataset(args.seeds, image_shape=net.input_shape)
    cfg = load_ga_config(args.config) if args.config else GaConfig()
    overrides = {"target_type": args.type}
    if args.ga_seed is not None:
        overrides["seed"] = args.ga_seed
    cfg = dataclasses.replace(cfg, **overrides)

    predicted = net.predict_label_batch(data.images)
    benign = [i for i in range(len(data)) if predicted[i] == data.labels[i]]
    benign = benign[:args.count]
    if not benign:
        raise DatasetError("no benign seeds available for generation")

    def one(task):
        position, index = task
        seed_cfg = dataclasses.replace(cfg, seed=cfg.seed + position)
        log = _log if args.verbose else None
        report = evolve(net, data.images[index], int(data.labels[index]), seed_cfg, log=log)
        return index, seed_cfg.seed, report

    runs = _parallel_map(one, list(enumerate(benign)), args.jobs)

    os.makedirs(args.out, exist_ok=True)
    generated_images, generated_labels, summary_lines, report_files = [], [], [], []
    for index, run_seed, report in runs:
        path = os.path.join(args.out, f"seed_{index:04d}.json")
        payload = describe_report(report)
        payload["seed_index"] = index
        payload["ga_seed"] = run_seed
        with open(path + ".tmp", "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(path + ".tmp", path)
        report_files.append(path)
        for ind in report.returned():
            generated_images.append(ind.image)
            generated_labels.append(report.seed_label)
        best = report.best
        summary_lines.append(
            f"{index},{report.seed_label},{int(report.objective_satisfied)},"
            f"{len(report.satisfied)},{report.generations_run},"
            f"{best.profile.pcs!r},{best.profile.vro!r},{int(best.is_adversarial)}")
        _log(f"seed {index}: satisfied={len(report.satisfied)} "
             f"generations={report.generations_run} best_pcs={best.profile.pcs:.3f} "
             f"best_vro={best.profile.vro:.3f}")

    generated_csv = os.path.join(args.out, "generated.csv")
    save_csv_dataset(generated_csv, np.stack(generated_images), generated_labels)
    summary_csv = os.path.join(args.out, "summary.csv")
    with open(summary_csv + ".tmp", "w") as f:
        f.write("seed_index,seed_label,objective_satisfied,satisfied_count,"
                "generations_run,best_pcs,best_vro,best_is_adversarial\n")
        f.write("\n".join(summary_lines) + "\n")
    os.replace(summary_csv + ".tmp", summary_csv)

    n_ok = sum(1 for _, _, r in runs if r.objective_satisfied)
    _log(f"{n_ok}/{len(runs)} seeds satisfied the {cfg.target_type} objective")
    config = ga_config_to_dict(cfg)
    config.update({"count": args.count, "jobs": args.jobs,
                   "auto_dropout": args.auto_dropout, "dropout_rate": args.dropout_rate})
    outputs = {"generated": generated_csv, "summary": summary_csv,
               "reports": report_files}
    return config, {"model": args.model, "seeds": args.seeds}, outputs


def cmd_defend(args, argv):
    net = load_model(args.model)
    benign = _load_dataset(args.benign, image_shape=net.input_shape)
    adv = _load_dataset(args.adv, image_shape=net.input_shape)

    def split(images):
        cut = max(1, int(round(args.calib_fraction * len(images))))
        if cut >= len(images):
            raise DatasetError("calibration split leaves no evaluation samples; "
                               "lower --calib-fraction or provide more data")
        return images[:cut], images[cut:]

    calib_ben, eval_ben = split(benign.images)
    calib_adv, eval_adv = split(adv.images)
    base = RngStream(args.seed)

    if args.detector == "mutation":
        detector = MutationDetector(net, args.n_mutations, args.noise_eps, threshold=0.0)
        ben_scores = score_set(detector, calib_ben, base.child(0), jobs=args.jobs)
        adv_scores = score_set(detector, calib_adv, base.child(1), jobs=args.jobs)
        detector.threshold = calibrate_threshold(ben_scores, adv_scores)
    elif args.detector == "squeeze":
        detector = SqueezeDetector(net, args.bit_depth, threshold=0.0)
        ben_scores = score_set(detector, calib_ben, base.child(0), jobs=args.jobs)
        adv_scores = score_set(detector, calib_adv, base.child(1), jobs=args.jobs)
        detector.threshold = calibrate_threshold(ben_scores, adv_scores)
    else:
        features = np.concatenate([net.logits_batch(calib_ben),
                                   net.logits_batch(calib_adv)])
        labels = np.concatenate([np.zeros(len(calib_ben), dtype=np.int64),
                                 np.ones(len(calib_adv), dtype=np.int64)])
        detector = LogitDetector.fit(net, features, labels, base.child(2))
        _log(f"logit detector held-out accuracy {detector.heldout_accuracy:.4f}")

    report, _ = evaluate_defense(detector, eval_ben, eval_adv, base.child(3),
                                 dataset=os.path.basename(args.adv), jobs=args.jobs)
    emit_defense_report([report], args.out)
    _log(f"{report.detector}: benign {report.success_rate_benign:.3f} "
         f"adv {report.success_rate_adversarial:.3f} "
         f"combined {report.success_rate_combined:.3f} "
         f"(threshold {report.threshold:.4f})")
    config = {"detector": args.detector, "seed": args.seed,
              "calib_fraction": args.calib_fraction, "n_mutations": args.n_mutations,
              "noise_eps": args.noise_eps, "bit_depth": args.bit_depth,
              "jobs": args.jobs, "threshold": detector.threshold}
    return config, {"model": args.model, "benign": args.benign, "adv": args.adv}, \
        {"report": args.out}


def cmd_export_fixtures(args, argv):
    os.makedirs(args.out, exist_ok=True)
    outputs = {}
    for name, net in fixture_models().items():
        path = os.path.join(args.out, f"fixture_{name}.pnf")
        save_model(net, path)
        outputs[name] = path
    _log(f"wrote {len(outputs)} fixture models to {args.out}")
    return {}, {}, outputs


def cmd_replay(args, argv):
    with open(args.manifest) as f:
        manifest = json.load(f)
    recorded = manifest.get("argv")
    if not recorded:
        raise ConfigError(f"{args.manifest} does not record an argv to replay")
    _log(f"replaying: dropforge {' '.join(recorded)}")
    return dispatch(recorded)


# -------------------------------------------------------------------- parser

def build_parser() -> _Parser:
    parser = _Parser(prog="dropforge", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train the bundled 8x8-digit conv net")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="images.idx,labels.idx (default: bundled train split)")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--lr-decay", type=float, default=0.995)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--dropout-rate", type=float, default=0.4)
    p.add_argument("--input-dropout", type=float, default=0.3)
    p.add_argument("--adv-fraction", type=float, default=0.25,
                   help="share of each batch replaced by gradient-sign examples")
    p.add_argument("--adv-eps", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("attack", help="generate gradient-sign adversarial examples")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["fgsm", "bim"], default="fgsm")
    p.add_argument("--eps", type=float, default=0.3)
    p.add_argument("--bim-steps", type=int, default=10)
    p.add_argument("--bim-step-size", type=float, default=None)
    p.add_argument("--count", type=int, default=None, help="attack at most N seeds")
    p.add_argument("--include-misclassified", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("metrics", help="per-input uncertainty report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--passes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--group", default=None)
    p.add_argument("--thresholds", default=None, help="p_low,p_high,v_low,v_high")
    p.add_argument("--auto-dropout", action="store_true")
    p.add_argument("--dropout-rate", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("auc", help="per-metric AUC between two metric reports")
    p.add_argument("--benign", required=True)
    p.add_argument("--adv", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("categorize", help="re-derive patterns under new thresholds")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--thresholds", default=None, help="p_low,p_high,v_low,v_high")
    p.add_argument("--out", required=True)

    p = sub.add_parser("generate", help="genetic search for uncommon inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--seeds", required=True)
    p.add_argument("--type", required=True, choices=["LL", "HH", "LH_BE", "HL_AE"])
    p.add_argument("--config", default=None, help="flat JSON GA config")
    p.add_argument("--count", type=int, default=20, help="number of benign seeds to use")
    p.add_argument("--seed", type=int, default=None, dest="ga_seed", help="override the config rng seed")
    p.add_argument("--auto-dropout", action="store_true")
    p.add_argument("--dropout-rate", type=float, default=0.5)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("defend", help="calibrate a detector and report success rates")
    p.add_argument("--model", required=True)
    p.add_argument("--detector", choices=["mutation", "logit", "squeeze"], required=True)
    p.add_argument("--benign", required=True)
    p.add_argument("--adv", required=True)
    p.add_argument("--calib-fraction", type=float, default=0.5)
    p.add_argument("--n-mutations", type=int, default=100)
    p.add_argument("--noise-eps", type=float, default=0.05)
    p.add_argument("--bit-depth", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-fixtures", help="write the built-in fixture models")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")

    return parser


_COMMANDS = {
    "train-toy": cmd_train_toy,
    "attack": cmd_attack,
    "metrics": cmd_metrics,
    "auc": cmd_auc,
    "categorize": cmd_categorize,
    "generate": cmd_generate,
    "defend": cmd_defend,
    "export-fixtures": cmd_export_fixtures,
}


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "replay":
            return cmd_replay(args, argv)
        started = time.monotonic()
        config, inputs, outputs = _COMMANDS[args.command](args, argv)
        _write_manifest(_manifest_path(args), args.command, argv, config, inputs,
                        outputs, started)
        return 0
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return _USAGE_ERROR_EXIT
    except (ConfigError, DatasetError, ModelFormatError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return _USAGE_ERROR_EXIT
    except DropforgeError as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return _RUNTIME_ERROR_EXIT
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return _RUNTIME_ERROR_EXIT


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
