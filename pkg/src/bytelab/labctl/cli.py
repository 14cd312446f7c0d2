"""Command-line front end.

Verbs: gen-corpus, train, attack, defend, curve, report. Exit code 0 on
success; nonzero with a violation summary on stderr otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from bytelab import attacks as atk
from bytelab import bytemodel as bm
from bytelab import fileforge as ff
from bytelab.labctl.config import SCENARIOS, ExperimentConfig
from bytelab.labctl.scenarios import ARCHES, Lab, latency_report, run, utility_report
from bytelab.windowing import AesConfig, WindowSpec


def _cmd_gen_corpus(args) -> int:
    rows = ff.write_corpus(
        args.out,
        per_class=args.per_class,
        seed=args.seed,
        labels=args.labels.split(",") if args.labels else None,
        sidecars=args.sidecars,
    )
    print(f"wrote {len(rows)} files under {args.out}")
    return 0


def _load_corpus_datasets(corpus: str, window: WindowSpec):
    pairs = ff.read_corpus(corpus)
    split = max(1, len(pairs) // 6)
    test = pairs[:split]
    train = pairs[split:]
    return bm.make_dataset(train, window), bm.make_dataset(test, window)


def _cmd_train(args) -> int:
    window = WindowSpec()
    aes = None
    if args.aes_rounds:
        key = ff.derive_rng("cli-key", args.key_seed).integers(0, 256, 16).astype(np.uint8).tobytes()
        aes = AesConfig(key=key, rounds=args.aes_rounds)
    if args.window_seed is not None:
        from bytelab.labctl.scenarios import sample_window_spec

        window = sample_window_spec(ff.derive_rng("cli-window", args.window_seed))
    train_ds, test_ds = _load_corpus_datasets(args.corpus, window)
    model = bm.build(ARCHES[args.arch], seed=args.seed, window=window, aes=aes)
    cfg = bm.TrainConfig(seed=args.seed, epochs=args.epochs, step_size=args.step_size)
    trained, log = bm.train(model, train_ds, test_ds, cfg)
    bm.save(trained, args.out)
    log_path = Path(args.out).with_suffix(".log.csv")
    with open(log_path, "w") as fh:
        fh.write("epoch,train_loss,test_accuracy,mean_cs\n")
        for row in log:
            fh.write(row.as_csv() + "\n")
    print(f"saved {args.out} (best accuracy {max(r.test_accuracy for r in log):.3f})")
    return 0


def _cmd_attack(args) -> int:
    models = [bm.load(p) for p in args.model]
    pairs = ff.read_corpus(args.corpus)
    if args.limit:
        pairs = pairs[: args.limit]
    cfg = atk.AttackConfig(
        budget=args.budget,
        iterations=args.iterations,
        neighbors=args.neighbors,
        scoring=args.scoring,
        seed=args.seed,
        enforce_format=not args.unconstrained,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    wins = 0
    with open(out, "w") as fh:
        for i, (data, label) in enumerate(pairs):
            sample = ff.FileSample(data=data, label=label, seed=i, size_hint=len(data))
            if args.unconstrained:
                bsmap = ff.BlindSpotMap([ff.BlindSpotRange(0, len(data), "full")])
            else:
                bsmap = ff.window_blindspots(label, data, models[0].window)
            try:
                r = atk.gcg_blindspot(models, sample, bsmap, cfg)
            except ValueError as exc:
                fh.write(json.dumps({"sample": i, "label": label, "error": str(exc)}) + "\n")
                continue
            wins += r.success
            fh.write(json.dumps(r.record(str(i), label), sort_keys=True) + "\n")
    print(f"attacked {len(pairs)} samples, {wins} successes -> {out}")
    return 0


def _cmd_defend(args) -> int:
    cfg = ExperimentConfig(
        scenario=args.scenario,
        out_dir=args.out,
        global_seed=args.seed,
        substitutes=args.substitutes,
        aes_rounds=args.aes_rounds,
    )
    paths = run(cfg)
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    return 0


def _cmd_curve(args) -> int:
    buckets: dict[int, tuple[int, int]] = {}
    with open(args.records) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    budgets = sorted({int(b) for r in rows for b in (r.get("hits") or {r.get("bytes_needed", 0) or 0: True})})
    out = Path(args.out)
    with open(out, "w") as fh:
        fh.write("budget,success_rate,n,scenario\n")
        for b in budgets:
            wins = 0
            for r in rows:
                if "hits" in r and r["hits"] is not None:
                    wins += any(int(k) <= b and v for k, v in r["hits"].items())
                else:
                    need = r.get("bytes_needed")
                    wins += need is not None and need <= b
            fh.write(f"{b},{wins / max(1, len(rows)):.6f},{len(rows)},{args.scenario}\n")
    print(f"wrote {out}")
    return 0


def _cmd_report(args) -> int:
    if args.utility:
        cfg = ExperimentConfig(out_dir=args.out, global_seed=args.seed)
        lab = Lab(cfg)
        rows = utility_report(cfg, lab)
        out = Path(args.out) / "utility.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            fh.write("model,accuracy\n")
            for r in rows:
                fh.write(f"{r['model']},{r['accuracy']:.6f}\n")
        print(f"wrote {out}")
        return 0
    if args.latency:
        key = ff.derive_rng("cli-key", args.seed).integers(0, 256, 16).astype(np.uint8).tobytes()
        model = bm.build(ARCHES["tiny"], seed=1, aes=AesConfig(key=key, rounds=args.aes_rounds))
        stats = latency_report(model, n_files=args.n_files)
        out = Path(args.out) / "latency.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(stats, sort_keys=True, indent=2))
        print(f"wrote {out}: median {stats['median_ms']:.4f} ms")
        return 0
    if args.config:
        cfg = ExperimentConfig.load(args.config).with_overrides(scenario=args.scenario, out_dir=args.out)
    else:
        cfg = ExperimentConfig(scenario=args.scenario, out_dir=args.out, global_seed=args.seed)
    paths = run(cfg)
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bytelab", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-corpus", help="generate a labeled synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--per-class", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--labels", default=None, help="comma-separated subset of labels")
    g.add_argument("--sidecars", action="store_true", help="write blind-spot sidecar files")
    g.set_defaults(fn=_cmd_gen_corpus)

    t = sub.add_parser("train", help="train a classifier checkpoint")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--arch", choices=sorted(ARCHES), default="default")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--step-size", type=float, default=0.3)
    t.add_argument("--aes-rounds", type=int, default=0)
    t.add_argument("--key-seed", type=int, default=0)
    t.add_argument("--window-seed", type=int, default=None)
    t.set_defaults(fn=_cmd_train)

    a = sub.add_parser("attack", help="run the blind-spot attack over a corpus")
    a.add_argument("--model", action="append", required=True, help="checkpoint path (repeatable)")
    a.add_argument("--corpus", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--budget", type=int, default=10)
    a.add_argument("--iterations", type=int, default=80)
    a.add_argument("--neighbors", type=int, default=128)
    a.add_argument("--scoring", choices=("onehot", "signed_range", "exhaustive"), default="onehot")
    a.add_argument("--seed", type=int, default=1)
    a.add_argument("--limit", type=int, default=0)
    a.add_argument("--unconstrained", action="store_true")
    a.set_defaults(fn=_cmd_attack)

    d = sub.add_parser("defend", help="run a defense scenario pipeline")
    d.add_argument("--scenario", choices=sorted(SCENARIOS), required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--substitutes", type=int, default=16)
    d.add_argument("--aes-rounds", type=int, default=1)
    d.set_defaults(fn=_cmd_defend)

    c = sub.add_parser("curve", help="recompute a success curve from records.jsonl")
    c.add_argument("--records", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--scenario", default="custom")
    c.set_defaults(fn=_cmd_curve)

    r = sub.add_parser("report", help="run a scenario end to end and emit reports")
    r.add_argument("--scenario", choices=sorted(SCENARIOS), default="whitebox")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--config", default=None, help="JSON ExperimentConfig to start from")
    r.add_argument("--utility", action="store_true", help="emit the clean-accuracy table instead")
    r.add_argument("--latency", action="store_true", help="emit preprocessing timings instead")
    r.add_argument("--aes-rounds", type=int, default=1)
    r.add_argument("--n-files", type=int, default=10_000)
    r.set_defaults(fn=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, ff.CapacityError, bm.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
