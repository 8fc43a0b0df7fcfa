"""Command-line front end: datagen / separate / bench / eval / init-study."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .audio_io import read_wav, write_wav
from .bench import (
    METHOD_NAMES,
    MODES,
    ProtocolConfig,
    canonical_method,
    format_init_study,
    init_study,
    load_config,
    run_benchmark,
    separate_mixture,
    write_init_study_csv,
    write_result_files,
)
from .bss_eval import bss_eval
from .datagen import gen_dataset, load_dataset, save_dataset


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmfsep",
        description="NMF-family audio source separation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic mixture dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-per-class", type=int, default=30)
    p.add_argument("--classes", nargs="+", default=["none", "forced"],
                   choices=["none", "forced", "any"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-sources", type=int, default=2)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--sample-rate", type=int, default=11025)
    p.add_argument("--noise-db", type=float, default=60.0)
    p.add_argument("--vibrato", action="store_true")

    p = sub.add_parser("separate", help="blind-separate one mixture WAV")
    p.add_argument("input", help="mixture WAV file")
    p.add_argument("--method", required=True,
                   help=f"one of {', '.join(METHOD_NAMES)}")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--n-sources", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON/TOML protocol config")
    p.add_argument("--encoding", default="float32",
                   choices=["pcm16", "float32"])

    p = sub.add_parser("bench", help="run the benchmark grid from a config")
    p.add_argument("--config", help="JSON/TOML protocol config")
    p.add_argument("--dataset", help="dataset manifest JSON (overrides config)")
    p.add_argument("--out-dir", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--methods", nargs="+", help="subset of methods to run")
    p.add_argument("--modes", nargs="+", choices=list(MODES))
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="score estimate WAVs against references")
    p.add_argument("--references", nargs="+", required=True)
    p.add_argument("--estimates", nargs="+", required=True)
    p.add_argument("--filter-length", type=int, default=512)
    p.add_argument("--out", help="optional CSV output path")

    p = sub.add_parser("init-study",
                       help="mixture-fit HRNMF under random/ISNMF/KLNMF inits")
    p.add_argument("--dataset", help="manifest of cases to use")
    p.add_argument("--n-cases", type=int, default=10,
                   help="cases to generate when no dataset is given")
    p.add_argument("--max-onset", type=float, default=0.3,
                   help="generated notes start anywhere in [0, this] seconds "
                            "so their activations differ")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--config", help="JSON/TOML protocol config")
    return parser


def _load_base_config(path) -> ProtocolConfig:
    return load_config(path) if path else ProtocolConfig()


def _cmd_datagen(args) -> int:
    cases = gen_dataset(
        n_per_class=args.n_per_class,
        classes=tuple(args.classes),
        seed=args.seed,
        n_sources=args.n_sources,
        duration=args.duration,
        sample_rate=args.sample_rate,
        noise_db=args.noise_db,
        vibrato=args.vibrato,
    )
    manifest = save_dataset(cases, args.out_dir)
    print(f"wrote {len(cases)} cases; manifest at {manifest}")
    return 0


def _cmd_separate(args) -> int:
    config = _load_base_config(args.config)
    mixture, rate = read_wav(args.input)
    estimates, _ = separate_mixture(mixture, args.method, config,
                                    n_sources=args.n_sources, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    method_tag = canonical_method(args.method).lower()
    for k, signal in enumerate(estimates.signals):
        path = out_dir / f"{stem}-{method_tag}-source{k}.wav"
        write_wav(path, signal, rate, encoding=args.encoding)
        print(path)
    return 0


def _cmd_bench(args) -> int:
    config = _load_base_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.methods is not None:
        overrides["methods"] = tuple(args.methods)
    if args.modes is not None:
        overrides["modes"] = tuple(args.modes)
    if args.dataset is not None:
        overrides["dataset"] = args.dataset
    if overrides:
        config = replace(config, **overrides)
    if not config.dataset:
        print("error: no dataset given (use --dataset or the config file)",
              file=sys.stderr)
        return 2
    cases = load_dataset(config.dataset)
    total = (len(cases) * len(config.methods) * len(config.modes)
             * config.repeats_per_case)
    done = [0]

    def progress(result):
        done[0] += 1
        if args.quiet:
            return
        if result.failed:
            tail = f"FAILED: {result.error}"
        else:
            tail = f"SDR {result.mean_score('sdr'):6.2f} dB in {result.seconds:.2f}s"
        print(f"[{done[0]:>4}/{total}] {result.method:<10} "
              f"{result.case_id:<12} {result.mode:<6} {tail}")

    results = run_benchmark(cases, config, progress=progress)
    paths = write_result_files(results, config.out_dir)
    failures = sum(1 for r in results if r.failed)
    print(f"{len(results)} runs ({failures} failed); results in {paths['results']}")
    return 0


def _cmd_eval(args) -> int:
    if len(args.references) != len(args.estimates):
        print("error: need as many estimates as references", file=sys.stderr)
        return 2
    refs, rates = zip(*(read_wav(p) for p in args.references))
    ests, est_rates = zip(*(read_wav(p) for p in args.estimates))
    if len(set(rates + est_rates)) != 1:
        print("error: sample rates differ across files", file=sys.stderr)
        return 2
    n = min(min(len(r) for r in refs), min(len(e) for e in ests))
    scores = bss_eval(np.stack([r[:n] for r in refs]),
                      np.stack([e[:n] for e in ests]),
                      filter_length=args.filter_length)
    header = f"{'reference':<12} {'SDR':>8} {'SIR':>8} {'SAR':>8}  estimate"
    print(header)
    rows = []
    for j in range(len(refs)):
        name = Path(args.references[j]).name
        est_name = Path(args.estimates[scores.permutation[j]]).name
        print(f"{name:<12} {scores.sdr[j]:8.2f} {scores.sir[j]:8.2f} "
              f"{scores.sar[j]:8.2f}  {est_name}")
        rows.append([name, scores.sdr[j], scores.sir[j], scores.sar[j], est_name])
    if args.out:
        import csv

        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["reference", "sdr", "sir", "sar", "estimate"])
            for name, sdr, sir, sar, est_name in rows:
                writer.writerow([name, format(sdr, ".6f"), format(sir, ".6f"),
                                 format(sar, ".6f"), est_name])
    return 0


def _cmd_init_study(args) -> int:
    config = _load_base_config(args.config)
    config = replace(config, seed=args.seed)
    if args.dataset:
        cases = load_dataset(args.dataset)
    else:
        cases = gen_dataset(n_per_class=args.n_cases, classes=("none",),
                            seed=args.seed,
                            onset_range=(0.0, args.max_onset))
    table, _ = init_study(cases, config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_init_study_csv(table, out_dir / "init_study.csv")
    text = format_init_study(table)
    (out_dir / "init_study.md").write_text(
        "# HRNMF initialization study\n\n" + text + "\n",
        encoding="utf-8")
    print(text)
    return 0


_COMMANDS = {
    "datagen": _cmd_datagen,
    "separate": _cmd_separate,
    "bench": _cmd_bench,
    "eval": _cmd_eval,
    "init-study": _cmd_init_study,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
