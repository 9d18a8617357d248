"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or contract error (bad file,
bad config), 3 verdict SignallingSuspected.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, contextual, inference, io, protocol, reports
from .config import (ConfigError, config_digest, load_config, protocol_config_from,
                     run_config_from, run_config_to_dict, swap_pipeline_from)
from .core import ALICE, BOB, Setting, SettingPair
from .pairing import FIXED, NEAREST, CoincidenceConfig, bin_windows, pair_nearest, postselect
from .photon_sim import derive_seed, simulate_run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SIGNALLING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    return [int(v) for v in _floats(text)]


def _emit(report: dict, out: str | None):
    text = reports.dumps(report)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _version_tag() -> dict:
    return {"schema": protocol.REPORT_SCHEMA}


# --- subcommands -----------------------------------------------------------

def cmd_simulate(args) -> int:
    raw = load_config(args.config)
    if args.alice_deg is not None or args.bob_deg is not None:
        setting = dict(raw.get("setting", {}))
        if args.alice_deg is not None:
            setting["alice_deg"] = args.alice_deg
        if args.bob_deg is not None:
            setting["bob_deg"] = args.bob_deg
        raw = {**raw, "setting": setting}
    cfg = run_config_from(raw)
    a, b = simulate_run(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = {"config_digest": config_digest(run_config_to_dict(cfg)), "seed": cfg.seed}
    for series, side in ((a, ALICE), (b, BOB)):
        path = out / f"{args.prefix}_{side}.ttag"
        io.write_ttag(path, series, prov)
        print(f"{path}\t{len(series)} events")
    return EXIT_OK


def cmd_pair(args) -> int:
    a, b = io.read_ttag(args.alice), io.read_ttag(args.bob)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"method": args.method, "W_ns": args.width_ns, "delta_ns": args.shift_ns}
    if args.method == NEAREST:
        paired = pair_nearest(a, b, CoincidenceConfig(NEAREST, args.width_ns, args.shift_ns))
        io.write_paired(out / f"{args.prefix}.paired", paired)
        summary.update(pairs=len(paired), unmatched_A=paired.unmatched_A,
                       unmatched_B=paired.unmatched_B)
    else:
        wa, wb = bin_windows(a, b, CoincidenceConfig(FIXED, args.width_ns, args.shift_ns))
        io.write_windowed(out / f"{args.prefix}_A.win", wa)
        io.write_windowed(out / f"{args.prefix}_B.win", wb)
        paired = postselect(wa, wb)
        io.write_paired(out / f"{args.prefix}.paired", paired)
        summary.update(windows=wa.length, skipped_multicount=wa.skipped_multicount,
                       empty_windows=wa.empty_windows, pairs=len(paired))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .pairing import sweep, sweep_table

    pcfg = protocol_config_from(load_config(args.config))
    runs = {}
    for i, (x, y) in enumerate((x, y) for x in pcfg.alice_deg for y in pcfg.bob_deg):
        sp = SettingPair.from_degrees(x, y)
        rc = protocol.run_config_for(pcfg, sp, "full", derive_seed(pcfg.seed, 3, i))
        runs[sp] = simulate_run(rc)
    chsh = None
    if args.chsh:
        if len(args.chsh) != 4:
            raise UsageError("--chsh needs four angles x,x',y,y'")
        chsh = tuple(Setting(v) for v in args.chsh)
    elif len(pcfg.alice_deg) == 2 and len(pcfg.bob_deg) == 2:
        # minus sign on (alice[0], bob[1]): the maximal combination for -cos 2(a - b)
        chsh = (Setting(pcfg.alice_deg[1]), Setting(pcfg.alice_deg[0]),
                Setting(pcfg.bob_deg[0]), Setting(pcfg.bob_deg[1]))
    table = sweep_table(sweep(runs, args.widths_ns, args.shifts_ns, chsh))
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_nosignal(args) -> int:
    s1, s2 = io.read_windowed(args.first), io.read_windowed(args.second)
    rep = inference.test_nosignalling(s1, s2, args.alpha, args.method, args.blocks)
    _emit({**_version_tag(), "kind": "test", "report": rep.to_dict()}, args.out)
    return EXIT_SIGNALLING if rep.rejected else EXIT_OK


def cmd_cdmd(args) -> int:
    p1, p2 = io.read_paired(args.first), io.read_paired(args.second)
    rep = inference.test_cdmd(p1, p2, args.alpha, side=args.side, method=args.method)
    _emit({**_version_tag(), "kind": "test", "report": rep.to_dict()}, args.out)
    return EXIT_OK  # CDMD never signals


def cmd_chsh(args) -> int:
    paired = {}
    for path in args.paired:
        p = io.read_paired(path)
        paired[SettingPair.from_degrees(p.setting_pair.alice.angle, p.setting_pair.bob.angle)] = p
    S, se = inference.estimate_chsh(paired, *(Setting(v) for v in args.settings))
    _emit({**_version_tag(), "kind": "chsh", "settings_deg": args.settings, "S": S,
           "std_err": se, "pairs": {str(k): len(v) for k, v in paired.items()}}, args.out)
    return EXIT_OK


def cmd_protocol(args) -> int:
    raw = load_config(args.config)
    cfg = protocol_config_from(raw)
    if args.workers:
        cfg.workers = args.workers
    rep = protocol.run_protocol(cfg)
    _emit(rep.to_dict(), args.out)
    print(f"overall verdict: {rep.overall_verdict}", file=sys.stderr)
    return EXIT_SIGNALLING if rep.overall_verdict == protocol.SIGNALLING_SUSPECTED else EXIT_OK


def cmd_swap(args) -> int:
    cfg = swap_pipeline_from(load_config(args.config))
    rep = protocol.run_swap_pipeline(cfg)
    _emit(rep, args.out)
    print(f"overall verdict: {rep['overall_verdict']}", file=sys.stderr)
    return EXIT_SIGNALLING if rep["overall_verdict"] == protocol.SIGNALLING_SUSPECTED else EXIT_OK


def oracle_report(model: contextual.DiscreteContextualModel) -> dict:
    rows = []
    for x in model.p_x:
        for y in model.p_y:
            sa = contextual.singles_distribution(model, x, y, "A")
            sb = contextual.singles_distribution(model, y, x, "B")
            row = {"x": x, "y": y, "singles_A": sa, "singles_B": sb,
                   "E_contextual": contextual.expectation_contextual(model, x, y)}
            try:
                pa, pb, renorm = contextual.postselected_marginals(model, x, y)
                joint = contextual.postselected_joint(model, x, y)
                row.update(postselected_A=pa, postselected_B=pb, selected_probability=renorm,
                           E_postselected=sum(a * b * p for (a, b), p in joint.items()))
            except contextual.EmptySelectionError:
                row.update(postselected_A=None, postselected_B=None, selected_probability=0.0,
                           E_postselected=None)
            rows.append(row)
    return {**_version_tag(), "kind": "oracle", "rows": rows}


def _fmt_p(p):
    return "n/a" if p is None else f"{p:.6g}"


def cmd_oracle(args) -> int:
    model = contextual.load_model(args.model)
    rep = oracle_report(model)
    for r in rep["rows"]:
        pa, pb = r["postselected_A"], r["postselected_B"]
        print(f"x={r['x']} y={r['y']}: P(a=+1|x)={r['singles_A'][1]:.6g} "
              f"P(b=+1|y)={r['singles_B'][1]:.6g} E={r['E_contextual']:.6g} | post-selected "
              f"P(a=+1)={_fmt_p(pa and pa[1])} P(b=+1)={_fmt_p(pb and pb[1])} "
              f"E={_fmt_p(r['E_postselected'])}")
    if args.out:
        _emit(rep, args.out)
    return EXIT_OK


def counts_report(table) -> dict:
    rows, devs = [], []
    for sp in table.setting_pairs():
        for side in (ALICE, BOB):
            rows.append({"side": side, "own": str(sp.own(side)), "distant": str(sp.distant(side)),
                         "singles": table.get(sp, side)})
    for side in (ALICE, BOB):
        owns = list(dict.fromkeys(sp.own(side) for sp in table.setting_pairs()))
        for own in owns:
            try:
                found = inference.singles_deviation(table, side, own)
            except KeyError:
                continue
            for d in found:
                devs.append({"side": side, "own": str(own),
                             "first_distant": str(d.first.distant(side)),
                             "second_distant": str(d.second.distant(side)),
                             "n_first": d.n_first, "n_second": d.n_second,
                             "relative_deviation": d.relative_deviation, "z_score": d.z_score})
    return {**_version_tag(), "kind": "counts", "rows": rows, "deviations": devs}


def cmd_ingest_counts(args) -> int:
    rep = counts_report(io.read_counts_csv(args.counts))
    for d in rep["deviations"]:
        print(f"singles_{d['side']} own={d['own']}: {d['first_distant']} -> "
              f"{d['second_distant']}: {d['n_first']} -> {d['n_second']}  "
              f"rel={100 * d['relative_deviation']:+.3f}%  z={d['z_score']:+.2f}")
    if args.out:
        _emit(rep, args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    loaded = [reports.read_report(p) for p in args.reports]
    merged = reports.merge_reports(loaded, [Path(p).name for p in args.reports])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports.write_report(out / "merged.json", merged)
    for name, text in (("correlation_vs_angle.csv", reports.correlation_curve(merged)),
                       ("singles_vs_distant.csv", reports.singles_curve(merged)),
                       ("singles_counts.csv", reports.counts_table(merged))):
        (out / name).write_text(text, encoding="utf-8", newline="\n")
        print(out / name)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nosignal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate one run and write time-tag files")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--prefix", default="run")
    s.add_argument("--alice-deg", type=float)
    s.add_argument("--bob-deg", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("pair", help="pair or bin two time-tag files")
    s.add_argument("alice")
    s.add_argument("bob")
    s.add_argument("--method", choices=(NEAREST, FIXED), default=NEAREST)
    s.add_argument("--width-ns", type=int, default=10)
    s.add_argument("--shift-ns", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--prefix", default="pairs")
    s.set_defaults(func=cmd_pair)

    s = sub.add_parser("sweep", help="correlations and CHSH over a (W, delta) grid")
    s.add_argument("--config", required=True)
    s.add_argument("--widths-ns", type=_ints, default=[1, 2, 5, 10, 20, 50])
    s.add_argument("--shifts-ns", type=_ints, default=[0])
    s.add_argument("--chsh", type=_floats, help="x,x',y,y' in degrees")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("nosignal", help="no-signalling test on two windowed files")
    s.add_argument("first")
    s.add_argument("second")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--method", choices=("chi2", "g"), default="chi2")
    s.add_argument("--blocks", type=int, default=10, help="homogeneity blocks (0 = off)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_nosignal)

    s = sub.add_parser("cdmd", help="compare post-selected marginals of two paired files")
    s.add_argument("first")
    s.add_argument("second")
    s.add_argument("--side", choices=(ALICE, BOB), default=ALICE)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--method", choices=("chi2", "g"), default="chi2")
    s.add_argument("--out")
    s.set_defaults(func=cmd_cdmd)

    s = sub.add_parser("chsh", help="CHSH value from four paired files")
    s.add_argument("paired", nargs="+")
    s.add_argument("--settings", type=_floats, required=True, help="x,x',y,y' in degrees")
    s.add_argument("--out")
    s.set_defaults(func=cmd_chsh)

    s = sub.add_parser("protocol", help="run the five-step protocol")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_protocol)

    s = sub.add_parser("swap", help="full-sample test for an event-ready experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_swap)

    s = sub.add_parser("oracle", help="exact values for a contextual model file")
    s.add_argument("model")
    s.add_argument("--out")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("ingest-counts", help="singles deviations from a counts table")
    s.add_argument("counts")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ingest_counts)

    s = sub.add_parser("report", help="merge JSON reports and write plot tables")
    s.add_argument("reports", nargs="+")
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "chsh" and len(args.settings) != 4:
            raise UsageError("--settings needs four angles x,x',y,y'")
        return args.func(args)
    except UsageError as exc:
        print(f"nosignal {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, io.FileFormatError, contextual.ModelFormatError, ValueError, KeyError,
            OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"nosignal {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
