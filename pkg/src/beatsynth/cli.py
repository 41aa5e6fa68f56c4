"""Command-line entry point: ``beatsynth <subcommand> ...``.

Outputs are stamped with a config hash. A command reading hashed inputs
passes their hash on, and refuses inputs that disagree with each other or
with an explicit ``--config``. Commands without hashed inputs stamp the hash
of the effective config (``--config`` or defaults, with ``--seed`` applied).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import diffusion as dm
from . import imaging, pipeline, plotting
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, NumericError
from .ingest import load_record, split_dataset
from .io import read_json, read_ndjson, single_hash, write_json, write_ndjson

log = logging.getLogger("beatsynth")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class Context:
    def __init__(self, args):
        self.explicit = getattr(args, "config", None)
        cfg = load_config(self.explicit) if self.explicit else RunConfig()
        if getattr(args, "seed", None) is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        self.cfg = cfg
        self.base = Path(self.explicit).parent if self.explicit else Path(".")

    @property
    def seed(self) -> int:
        return self.cfg.seed

    def lineage(self, *hashes: str | None) -> str:
        """Hash to stamp on outputs derived from inputs carrying ``hashes``."""
        found = {h for h in hashes if h}
        if len(found) > 1:
            raise ConfigError(f"inputs come from different configs: {sorted(h[:12] for h in found)}")
        if found:
            h = found.pop()
            if self.explicit and h != self.cfg.hash:
                raise ConfigError(f"inputs carry config hash {h[:12]}, but --config hashes to {self.cfg.hash[:12]}")
            return h
        return self.cfg.hash


def _ndjson_hash(path) -> str | None:
    return single_hash(read_ndjson(path), path)


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(args, ctx: Context):
    d = ctx.cfg.data
    rec = load_record(args.dat, args.ann, args.id, args.fs or d.fs, args.gain or d.gain)
    write_ndjson(args.out, [pipeline.record_row(rec, ctx.lineage())])
    log.info("ingested %s: %d samples, %d annotations", rec.record_id, len(rec.channels[0]), len(rec.annotations))


def cmd_segment(args, ctx: Context):
    rows = read_ndjson(args.inp)
    h = ctx.lineage(single_hash(rows, args.inp))
    s = ctx.cfg.segment
    labels = None if args.all_labels else ctx.cfg.data.labels
    beats = pipeline.segment_rows(rows, args.len or s.length, args.cutoff or s.cutoff, labels, h)
    write_ndjson(args.out, (pipeline.beat_row(b, h) for b in beats))
    log.info("wrote %d beats", len(beats))


def cmd_embed(args, ctx: Context):
    beats, h = pipeline.read_beats(args.inp)
    h = ctx.lineage(h)
    if not beats:
        raise DataError(f"{args.inp}: no beats")
    cfg = imaging.MtfConfig(args.bins or ctx.cfg.embed.bins)
    imaging.write_tsim(args.out, [imaging.embed(b, cfg) for b in beats], {"config_hash": h})


def cmd_deembed(args, ctx: Context):
    _, meta = imaging.read_tsim_array(args.inp)
    ctx.lineage(meta.get("config_hash"))
    flagged, _ = pipeline.deembed_file(args.inp, args.out)
    if flagged:
        log.warning("%d beats exceeded the diagonal tolerance %g", flagged, imaging.CLAMP_FLAG_TOL)


def cmd_train_ddpm(args, ctx: Context):
    _, meta = imaging.read_tsim_array(args.data)
    h = ctx.lineage(meta.get("config_hash"))
    steps = ctx.cfg.ddpm.steps if args.steps is None else args.steps
    trace = args.trace or str(Path(args.out).with_suffix("")) + "_trace.csv"
    pipeline.train_ddpm_file(args.data, args.case, pipeline.ddpm_train_config(ctx.cfg), steps, ctx.seed,
                             args.out, trace, stamp=h)


def cmd_sample_ddpm(args, ctx: Context):
    from .autodiff import load_checkpoint
    _, meta = load_checkpoint(args.ckpt)
    ctx.lineage(meta.get("config_hash"))
    pipeline.sample_ddpm_file(args.ckpt, args.n, ctx.seed, args.out)


def cmd_train_wgangp(args, ctx: Context):
    h = ctx.lineage(_ndjson_hash(args.data))
    steps = ctx.cfg.wgan.steps if args.steps is None else args.steps
    trace = args.trace or str(Path(args.out).with_suffix("")) + "_trace.csv"
    label = None if args.label == "any" else args.label
    pipeline.train_wgan_file(args.data, pipeline.wgan_config(ctx.cfg), steps, ctx.seed, args.out, trace,
                             label=label, stamp=h)


def cmd_sample_wgangp(args, ctx: Context):
    from .autodiff import load_checkpoint
    _, meta = load_checkpoint(args.ckpt)
    ctx.lineage(meta.get("config_hash"))
    pipeline.sample_wgan_file(args.ckpt, args.n, ctx.seed, args.out)


def cmd_evaluate(args, ctx: Context):
    real, h_real = pipeline.read_beats(args.real)
    synth, h_synth = pipeline.read_beats(args.synth)
    h = ctx.lineage(h_real, h_synth)
    train, test = split_dataset(real, ctx.seed, tuple(ctx.cfg.data.split))
    docs = pipeline.evaluate_beats(train, test, {args.case_id: synth}, ctx.cfg, ctx.seed, h)
    write_json(args.out, docs[args.case_id])
    r = docs[args.case_id]["report"]
    log.info("%s: dtw %.4g frechet %.4g mmd %.4g precision %.4g", args.case_id, r["avg_dtw"], r["avg_frechet"],
             r["mmd"], r["precision"])


def cmd_plot(args, ctx: Context):
    out = Path(args.out)
    for rep in args.report or []:
        for p in pipeline.plot_report(read_json(rep), out):
            log.info("wrote %s", p)
    for tr in args.trace or []:
        with open(tr, encoding="utf-8") as fh:
            first = fh.readline().strip()
        h = first.split("=", 1)[1] if first.startswith("# config_hash=") else ""
        log.info("wrote %s", plotting.plot_trace(tr, out / f"{Path(tr).stem}.svg", h))
    if not (args.report or args.trace):
        raise ConfigError("plot needs --report and/or --trace")


def cmd_run(args, ctx: Context):
    if not ctx.explicit:
        raise ConfigError("run needs --config")
    status = pipeline.run_pipeline(ctx.cfg, args.out, ctx.base, log=log.info)
    log.info("stages: %s", ", ".join(f"{k}={v}" for k, v in status.items()))


# ---------------------------------------------------------------------------
# parser

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=default, help="override the config seed")
    p.add_argument("--config", default=default, help="JSON run config")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beatsynth", description="ECG beat synthesis and evaluation")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("ingest", cmd_ingest, "format-212 record + annotation CSV -> record NDJSON")
    p.add_argument("--dat", required=True)
    p.add_argument("--ann", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--id", default=None, help="record id (default: file stem)")
    p.add_argument("--fs", type=int, default=None)
    p.add_argument("--gain", type=float, default=None)

    p = add("segment", cmd_segment, "record NDJSON -> beat NDJSON")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--len", type=int, default=None)
    p.add_argument("--cutoff", type=float, default=None)
    p.add_argument("--all-labels", action="store_true", help="keep every label, not only N and L")

    p = add("embed", cmd_embed, "beat NDJSON -> TSIM image tensor")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=None)

    p = add("deembed", cmd_deembed, "TSIM image tensor -> beat NDJSON")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = add("train-ddpm", cmd_train_ddpm, "train a diffusion model on a TSIM file")
    p.add_argument("--case", required=True, choices=sorted(dm.CASES))
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="loss trace CSV (default: next to the checkpoint)")

    p = add("sample-ddpm", cmd_sample_ddpm, "ancestral sampling from a diffusion checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("train-wgangp", cmd_train_wgangp, "train WGAN-GP on beat NDJSON")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None)
    p.add_argument("--label", default="N", help="train on this label only ('any' for all)")

    p = add("sample-wgangp", cmd_sample_wgangp, "draw beats from a WGAN-GP checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "distance metrics and classification harness -> report JSON")
    p.add_argument("--real", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--case-id", required=True)
    p.add_argument("--out", required=True)

    p = add("plot", cmd_plot, "SVG figures from reports and loss traces")
    p.add_argument("--report", action="append")
    p.add_argument("--trace", action="append")
    p.add_argument("--out", required=True)

    p = add("run", cmd_run, "full cached pipeline")
    p.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        stream=sys.stderr, force=True)
    try:
        args.func(args, Context(args))
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
