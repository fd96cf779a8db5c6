"""Command-line entry point.

::

    digisem train-converter --config run.cfg --output artifacts/
    digisem train-uan --config run.cfg --output artifacts/
    digisem sweep --config run.cfg --output results/ --set sweep.trials=50 --jobs 4
    digisem link --config run.cfg --set channel.snr_db=5
    digisem budget --config run.cfg
    digisem dump-ldpc
    digisem validate artifacts/

Numbers live in the config file; flags only pick files and override keys.
Exit status is 0 on success, 1 on a runtime error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import platform
import sys
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as _config
from . import container, pipeline
from .phy import ldpc
from .phy.amc import McsConfig, amc_select

VERBS = ("train-converter", "train-uan", "sweep", "link", "dump-ldpc", "validate", "budget")
MANIFEST = "manifest.txt"
CONFIG_FILE = "config.cfg"


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="digisem", description="Digital semantic link simulator.",
                                allow_abbrev=False)
    p.add_argument("verb", choices=VERBS)
    p.add_argument("target", nargs="?", help="directory to check (validate only)")
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--output", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: available CPUs)")
    return p


def parse_args(argv):
    """Parse ``argv`` and resolve the config; raises :class:`UsageError`."""
    args = _parser().parse_args(argv)
    if args.target is not None and args.verb != "validate":
        raise UsageError(f"{args.verb} takes no positional argument")
    if args.verb == "validate" and args.target is None:
        raise UsageError("validate needs a directory")
    if args.jobs is not None and args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    try:
        if args.config is not None:
            path = Path(args.config)
            if not path.is_file():
                raise UsageError(f"config file not found: {path}")
            cfg = _config.load(path)
        else:
            cfg = _config.Config()
        args.cfg = cfg.with_overrides(args.overrides)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    return args


# -- manifest ---------------------------------------------------------------------

def _versions() -> dict:
    try:
        own = metadata.version("digisem")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"digisem": own, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(out: Path, verb: str, cfg) -> Path:
    """Config dump, hashes and versions; lists every artifact present in ``out``."""
    (out / CONFIG_FILE).write_text(cfg.dumps())
    lines = [f"verb = {verb}", f"seed = {cfg['run.seed']}", f"config_sha256 = {cfg.digest()}"]
    lines += [f"version.{k} = {v}" for k, v in _versions().items()]
    for f in sorted(out.iterdir()):
        if f.is_file() and f.name != MANIFEST:
            lines.append(f"sha256.{f.name} = {container.sha256(f)}")
    lines += [f"config.{line}" for line in cfg.dumps().splitlines()]
    path = out / MANIFEST
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def validate_dir(directory: Path) -> list[str]:
    """Problems found in ``directory``; empty means every checksum matches."""
    mpath = directory / MANIFEST
    if not mpath.is_file():
        return [f"no {MANIFEST} in {directory}"]
    man = read_manifest(mpath)
    problems = []
    for key, want in man.items():
        if key.startswith("sha256."):
            f = directory / key[len("sha256."):]
            if not f.is_file():
                problems.append(f"missing {f.name}")
            elif container.sha256(f) != want:
                problems.append(f"checksum mismatch for {f.name}")
    dump = "".join(f"{k[len('config.'):]} = {v}\n" for k, v in man.items() if k.startswith("config."))
    try:
        if _config.loads(dump).digest() != man.get("config_sha256"):
            problems.append("config hash does not match the recorded config")
    except (KeyError, ValueError) as exc:
        problems.append(f"recorded config does not parse: {exc}")
    return problems


# -- verbs ------------------------------------------------------------------------

def _out(args) -> Path:
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _source(args, out: Path) -> Path:
    return Path(args.cfg["artifacts.dir"]) if args.cfg["artifacts.dir"] else out


def _write_dat(path: Path, header, rows):
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in rows:
            fh.write(" ".join(str(x) for x in row) + "\n")


def cmd_train_converter(args):
    out = _out(args)
    system, losses = pipeline.train_system(args.cfg)
    pipeline.save_system(system, out)
    _write_dat(out / "converter_loss.dat", ("step", "mse"), enumerate(losses))
    print(f"converter: {len(losses)} steps, final loss {losses[-1]:.6g}, wrote {out}")


def cmd_train_uan(args):
    out = _out(args)
    src = _source(args, out)
    system = pipeline.load_system(args.cfg, src, with_uan=False)
    model, losses = pipeline.train_gate(system)
    model.save(out / pipeline.UAN_FILE)
    _write_dat(out / "uan_loss.dat", ("epoch", "sw_bce"), enumerate(losses))
    print(f"uan: {len(losses)} epochs, final loss {losses[-1]:.6g}, wrote {out / pipeline.UAN_FILE}")


def cmd_sweep(args):
    out = _out(args)
    system = pipeline.build_system(args.cfg, _source(args, out))
    jobs = args.jobs or pipeline.default_jobs()
    points = pipeline.sweep(system, jobs=jobs)
    csv_path, err_path = pipeline.write_sweep(points, out / "sweep.csv")
    _write_dat(out / "sweep.dat", pipeline.CSV_HEADER, (pipeline.csv_row(p.mean) for p in points))
    print(pipeline.sweep_csv(points), end="")
    print(f"wrote {csv_path} and {err_path}", file=sys.stderr)


def cmd_link(args):
    out = _out(args)
    cfg = args.cfg
    system = pipeline.build_system(cfg, _source(args, out))
    rec = pipeline.run_link(system, cfg["channel.snr_db"], cfg["run.seed"])
    text = "".join(f"{k} = {v}\n" for k, v in asdict(rec).items())
    (out / "link.txt").write_text(text)
    print(text, end="")


def budget_numbers(cfg) -> dict:
    """Channel uses of the three schemes for the configured geometry and MCS."""
    H, W = cfg["frontend.height"], cfg["frontend.width"]
    C = cfg["frontend.channels"] // cfg["frontend.gamma_c"]
    q = cfg["converter.M"] * (cfg["converter.N"].bit_length() - 1)
    pinned = cfg["phy.mcs"]
    mcs = (McsConfig.parse(pinned) if pinned != "auto"
           else amc_select(cfg["channel.snr_db"], pipeline.parse_mcs_table(cfg["phy.mcs_table"])))
    g = cfg["frontend.gamma_s"]
    return {
        "mcs": str(mcs),
        "digital": pipeline.channel_uses_digital(H, W, C, q, g, mcs.rate, mcs.order),
        "traditional": pipeline.channel_uses_traditional(H, W, C, g, mcs.rate, mcs.order),
        "asc": pipeline.channel_uses_asc(H, W, C, g),
    }


def cmd_budget(args):
    for k, v in budget_numbers(args.cfg).items():
        print(f"{k} = {v}")


def cmd_dump_ldpc(args):
    print(ldpc.dump_prototypes(), end="")


def cmd_validate(args):
    directory = Path(args.target)
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    problems = validate_dir(directory)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        raise RuntimeError(f"{len(problems)} problem(s) in {directory}")
    print(f"{directory}: all checksums match")


COMMANDS = {
    "train-converter": cmd_train_converter,
    "train-uan": cmd_train_uan,
    "sweep": cmd_sweep,
    "link": cmd_link,
    "dump-ldpc": cmd_dump_ldpc,
    "validate": cmd_validate,
    "budget": cmd_budget,
}
WRITES_OUTPUT = ("train-converter", "train-uan", "sweep", "link")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:       # argparse already printed the usage message
        return 0 if exc.code == 0 else 2
    except UsageError as exc:
        print(f"digisem: error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.verb](args)
        if args.verb in WRITES_OUTPUT:
            write_manifest(_out(args), args.verb, args.cfg)
    except UsageError as exc:
        print(f"digisem: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:        # any module error is a runtime failure
        print(f"digisem: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
