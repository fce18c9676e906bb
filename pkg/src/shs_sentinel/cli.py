"""``shs-sentinel`` command-line tool.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, experiments as ex
from .errors import SentinelError, ValidationError
from .knn import load_model, model_to_text

COMMANDS = ("build-catalog", "eigen-table", "gen-dataset", "train", "noise-sweep",
            "run-switching", "compare-identifiers", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p, sim=True):
    p.add_argument("--config", help="INI file with a [sim] section")
    p.add_argument("--seed", type=int, help="master seed (default: $SHS_SENTINEL_SEED or 0)")
    p.add_argument("--manifest", help="manifest JSON path (default: <out>.manifest.json)")
    if sim:
        p.add_argument("--grid", help="grid file or bundled name (default: ieee33)")
        p.add_argument("--t-s", type=float, dest="t_s")
        p.add_argument("--tau", type=float)
        p.add_argument("--tau0", type=float)
        p.add_argument("--tau1", type=float)
        p.add_argument("--noise-db", dest="noise_db", help="noise variance in dB, or -inf")
        p.add_argument("--mitigation", choices=("recovery", "nominal", "none"))
        p.add_argument("--probe-mode", dest="probe_mode", choices=("identification", "continuous"))


def build_parser():
    parser = _Parser(prog="shs-sentinel",
                     description="Contingency detection and classification on stochastic "
                                 "hybrid grid models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-catalog", help="list the contingency catalog")
    _common(p)
    p.add_argument("--out")

    p = sub.add_parser("eigen-table", help="closed-loop spectra of every scenario")
    _common(p)
    p.add_argument("--out")

    p = sub.add_parser("gen-dataset", help="labeled log-error feature dataset")
    _common(p)
    p.add_argument("--per-class", type=int, default=240)
    p.add_argument("--levels", help="comma-separated noise levels (default: --noise-db)")
    p.add_argument("--out")

    p = sub.add_parser("train", help="train and evaluate the KNN classifier")
    _common(p, sim=False)
    p.add_argument("--data", required=True)
    p.add_argument("--noise-db", dest="noise_db", help="train on this level only")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--model", help="write the trained model here")
    p.add_argument("--out", help="metrics CSV")

    p = sub.add_parser("noise-sweep", help="classifier accuracy across noise levels")
    _common(p)
    p.add_argument("--levels", default="-200,-150,-100,-50")
    p.add_argument("--per-class", type=int, default=240)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--out")

    for name, help_ in (("run-switching", "identify a random switching sequence"),
                        ("compare-identifiers", "SHS vs LSHS over several tau0")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--length" if name == "run-switching" else "--sequences", type=int,
                       default=500, dest="length")
        if name == "run-switching":
            p.add_argument("--method", choices=("shs", "lshs", "both"), default="both")
        else:
            p.add_argument("--tau0-list", dest="tau0_list", default="0.02,0.05,0.08")
            p.add_argument("--timing", help="per-window timing CSV")
            p.add_argument("--results", help="per-window results CSV")
        p.add_argument("--model", help="trained classifier (default: train in-line)")
        p.add_argument("--per-class", type=int, default=240,
                       help="rows per class when training in-line")
        p.add_argument("--channels", choices=("all", "y"), default="all")
        p.add_argument("--bank-cache", dest="bank_cache", help="directory for cached banks")
        p.add_argument("--repeats", type=int, default=1,
                       help="time each identification n times and keep the median")
        p.add_argument("--no-timing", action="store_true",
                       help="leave elapsed columns empty (byte-reproducible output)")
        p.add_argument("--out")

    p = sub.add_parser("report", help="plain-text summary of results CSVs")
    p.add_argument("results", nargs="+")
    p.add_argument("--out")
    return parser


# -- helpers ------------------------------------------------------------------


def _cfg(args):
    file_values = ex.read_config_file(args.config) if getattr(args, "config", None) else {}
    over = {k: getattr(args, k, None) for k in ("t_s", "tau", "tau0", "tau1", "mitigation",
                                                "probe_mode", "seed")}
    nd = getattr(args, "noise_db", None)
    over["noise_db"] = ex.parse_noise(nd) if nd is not None else None
    return ex.build_config(file_values, over)


def _emit(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _write_manifest(args, manifest):
    path = getattr(args, "manifest", None)
    if path is None and getattr(args, "out", None):
        path = f"{args.out}.manifest.json"
    if path:
        Path(path).write_text(manifest.finish().to_json(), encoding="utf-8")


def _classifier(args, setup, cfg):
    if args.model:
        try:
            with open(args.model, encoding="utf-8") as fh:
                return load_model(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read model {args.model}: {exc}") from exc
    data = ex.make_dataset(setup, cfg, args.per_class, [cfg.noise_db], cfg.seed)
    model, _ = ex.train_and_evaluate(data, cfg.seed)
    return model


# -- commands -----------------------------------------------------------------


def cmd_build_catalog(args):
    cfg = _cfg(args)
    setup = ex.build_setup(args.grid)
    m = ex.new_manifest("build-catalog", setup, cfg, {"seed": cfg.seed}, grid=args.grid or "ieee33")
    _emit(ex.with_header(m, ex.catalog_csv(setup)), args.out)
    counts = setup.catalog.class_counts()
    print(f"{setup.catalog.m} scenarios: "
          + ", ".join(f"{c.label}={n}" for c, n in counts.items()), file=sys.stderr)
    _write_manifest(args, m)


def cmd_eigen_table(args):
    cfg = _cfg(args)
    setup = ex.build_setup(args.grid)
    m = ex.new_manifest("eigen-table", setup, cfg, {"seed": cfg.seed}, grid=args.grid or "ieee33")
    _emit(ex.with_header(m, ex.eigen_csv(setup)), args.out)
    _write_manifest(args, m)


def _levels(args, cfg):
    return [ex.parse_noise(x) for x in args.levels.split(",")] if args.levels else [cfg.noise_db]


def cmd_gen_dataset(args):
    cfg = _cfg(args)
    setup = ex.build_setup(args.grid)
    levels = _levels(args, cfg)
    m = ex.new_manifest("gen-dataset", setup, cfg, {"seed": cfg.seed}, grid=args.grid or "ieee33",
                        per_class=args.per_class, levels=[str(x) for x in levels])
    data = ex.make_dataset(setup, cfg, args.per_class, levels, cfg.seed)
    _emit(data.to_csv(cfg.seed, m.header()), args.out)
    _write_manifest(args, m)


def cmd_train(args):
    seed = args.seed if args.seed is not None else ex.default_seed()
    data = ex.load_dataset(args.data)
    if args.noise_db is not None:
        data = data.at_noise(ex.parse_noise(args.noise_db))
    if len(data) == 0:
        raise ValidationError("no dataset rows at the requested noise level")
    model, rep = ex.train_and_evaluate(data, seed, args.k, args.standardize)
    m = ex.new_manifest("train", None, None, {"seed": seed}, data=str(args.data),
                        noise_db=args.noise_db, k=args.k, standardize=args.standardize)
    if args.model:
        Path(args.model).write_text(model_to_text(model), encoding="utf-8")
    _emit(ex.with_header(m, ex.train_report_csv([rep])), args.out)
    print(f"train accuracy {rep.train_accuracy:.4f}, held-out accuracy {rep.test_accuracy:.4f}",
          file=sys.stderr)
    _write_manifest(args, m)


def cmd_noise_sweep(args):
    cfg = _cfg(args)
    setup = ex.build_setup(args.grid)
    levels = _levels(args, cfg)
    m = ex.new_manifest("noise-sweep", setup, cfg, {"seed": cfg.seed}, grid=args.grid or "ieee33",
                        per_class=args.per_class, levels=[str(x) for x in levels], k=args.k)
    _, reports = ex.noise_sweep(setup, cfg, levels, args.per_class, cfg.seed, args.k)
    _emit(ex.with_header(m, ex.train_report_csv(reports)), args.out)
    _write_manifest(args, m)


def cmd_run_switching(args):
    cfg = _cfg(args)
    setup = ex.build_setup(args.grid)
    methods = ("shs", "lshs") if args.method == "both" else (args.method,)
    m = ex.new_manifest("run-switching", setup, cfg, {"seed": cfg.seed}, grid=args.grid or "ieee33",
                        length=args.length, methods=list(methods), channels=args.channels,
                        model=args.model, per_class=args.per_class)
    clf = _classifier(args, setup, cfg) if "lshs" in methods else None
    run = ex.run_switching(setup, cfg, args.length, cfg.seed, clf, methods, args.channels,
                           args.bank_cache, args.repeats)
    body = ex.switching_results_csv([run], setup.catalog, timing=not args.no_timing)
    _emit(ex.with_header(m, body), args.out)
    for method, met in run.metrics(setup.catalog).items():
        print(f"{method}: exact {met.exact_accuracy:.4f}, class {met.class_accuracy:.4f}, "
              f"mean {met.mean_elapsed * 1e6:.1f} us", file=sys.stderr)
    _write_manifest(args, m)


def cmd_compare_identifiers(args):
    cfg = _cfg(args)
    setup = ex.build_setup(args.grid)
    tau0s = ex.parse_float_list(args.tau0_list, "tau0")
    m = ex.new_manifest("compare-identifiers", setup, cfg, {"seed": cfg.seed},
                        grid=args.grid or "ieee33", sequences=args.length, tau0_list=tau0s,
                        channels=args.channels, model=args.model, per_class=args.per_class)
    clf = _classifier(args, setup, cfg)
    runs = ex.compare_identifiers(setup, cfg, tau0s, args.length, cfg.seed, clf,
                                  args.bank_cache, args.channels, args.repeats)
    _emit(ex.with_header(m, ex.accuracy_csv(runs, setup.catalog)), args.out)
    if args.timing:
        Path(args.timing).write_text(ex.with_header(m, ex.timing_csv(runs, setup.catalog)),
                                     encoding="utf-8")
    if args.results:
        body = ex.switching_results_csv(runs, setup.catalog, timing=not args.no_timing)
        Path(args.results).write_text(ex.with_header(m, body), encoding="utf-8")
    _write_manifest(args, m)


def cmd_report(args):
    parts = []
    for path in args.results:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read {path}: {exc}") from exc
        parts.append(f"== {path}\n{ex.summarize_results(text)}")
    _emit("\n".join(parts), args.out)


HANDLERS = {
    "build-catalog": cmd_build_catalog,
    "eigen-table": cmd_eigen_table,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "noise-sweep": cmd_noise_sweep,
    "run-switching": cmd_run_switching,
    "compare-identifiers": cmd_compare_identifiers,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    if not args.command:
        parser.print_help(sys.stderr)
        return 1
    try:
        HANDLERS[args.command](args)
    except ValidationError as exc:
        print(f"shs-sentinel: error: {exc}", file=sys.stderr)
        return 1
    except (SentinelError, OSError, ArithmeticError) as exc:
        print(f"shs-sentinel: runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the runtime exit code
        print(f"shs-sentinel: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
