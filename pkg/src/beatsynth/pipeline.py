"""File-level stages and the cached end-to-end run.

Every artifact carries the config hash of the run that produced it: NDJSON
rows have a ``config_hash`` field, TSIM/TSNN files keep it in their metadata,
JSON reports at the top level, CSV traces in a leading ``#`` comment and SVGs
in their description metadata.
"""
from __future__ import annotations

import dataclasses
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import diffusion as dm
from . import imaging, metrics, plotting, wgan_gp
from .autodiff import load_checkpoint, save_checkpoint
from .classifier import ClassifierConfig
from .config import RunConfig, resolve
from .errors import ConfigError, DataError, NumericError
from .ingest import RawRecord, load_record, split_dataset
from .io import config_hash, read_json, read_ndjson, single_hash, write_json, write_ndjson
from .signal import BeatSeries, segment_record

FLAG_TOL = imaging.CLAMP_FLAG_TOL


# ---------------------------------------------------------------------------
# row conversions

def record_row(rec: RawRecord, h: str) -> dict:
    return {
        "record": rec.record_id,
        "fs": rec.sampling_rate_hz,
        "gain": rec.gain,
        "samples": rec.lead_mv(0),
        "r_peaks": [a.sample_index for a in rec.annotations],
        "labels": [a.label for a in rec.annotations],
        "config_hash": h,
    }


def row_to_record(row: dict) -> RawRecord:
    from .ingest import Annotation
    try:
        # rows hold millivolts, so the record is rebuilt with unit gain
        rec = RawRecord(row["record"], int(row["fs"]), [np.asarray(row["samples"], dtype=np.float64)], 1.0)
        rec.annotations = [Annotation(int(s), str(l)) for s, l in zip(row["r_peaks"], row["labels"])]
    except KeyError as exc:
        raise DataError(f"record row is missing field {exc}") from None
    return rec


def beat_row(beat: BeatSeries, h: str, **extra) -> dict:
    row = {"record": beat.record_id, "label": beat.label, "r_peak": int(beat.r_peak), "samples": beat.samples,
           "config_hash": h}
    row.update(extra)
    return row


def row_to_beat(row: dict) -> BeatSeries:
    try:
        return BeatSeries(np.asarray(row["samples"], dtype=np.float64), str(row["label"]), str(row["record"]),
                          int(row["r_peak"]), normalized=True)
    except KeyError as exc:
        raise DataError(f"beat row is missing field {exc}") from None


def read_beats(path, expect_hash: str | None = None) -> tuple[list[BeatSeries], str | None]:
    rows = read_ndjson(path)
    h = single_hash(rows, path)
    if expect_hash is not None and h is not None and h != expect_hash:
        raise ConfigError(f"{path}: config hash {h[:12]} does not match {expect_hash[:12]}")
    return [row_to_beat(r) for r in rows], h


# ---------------------------------------------------------------------------
# stage building blocks

def segment_rows(record_rows: Iterable[dict], length: int, cutoff: float, labels: Iterable[str] | None,
                 h: str) -> list[BeatSeries]:
    keep = set(labels) if labels is not None else None
    beats = []
    for row in record_rows:
        for b in segment_record(row_to_record(row), length, cutoff):
            if keep is None or b.label in keep:
                beats.append(b)
    return beats


def write_trace(path, header: list[str], rows: Iterable, h: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config_hash={h}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            vals = [getattr(r, k) for k in header]
            fh.write(",".join(format(v, ".17g") if isinstance(v, float) else str(v) for v in vals) + "\n")


def ddpm_train_config(cfg: RunConfig) -> dm.DdpmTrainConfig:
    d = cfg.ddpm
    return dm.DdpmTrainConfig(T=d.T, hidden=d.hidden, emb_dim=d.emb_dim, batch_size=d.batch_size, lr=d.lr)


def wgan_config(cfg: RunConfig) -> wgan_gp.WganConfig:
    w, L = cfg.wgan, cfg.segment.length
    return wgan_gp.WganConfig(
        generator=wgan_gp.GeneratorSpec(w.latent_dim, L, tuple(w.generator_widths)),
        critic=wgan_gp.CriticSpec(L, tuple(w.critic_widths)),
        gp=wgan_gp.GpConfig(w.lambda_gp), n_critic=w.n_critic, batch_size=w.batch_size,
        lr=w.lr, beta1=w.beta1, beta2=w.beta2)


def train_ddpm_file(tsim_path, case_id: str, tcfg: dm.DdpmTrainConfig, steps: int, seed: int, out, trace_path,
                    stamp: str | None = None) -> str:
    if case_id not in dm.CASES:
        raise ConfigError(f"unknown diffusion case {case_id!r}; expected one of {sorted(dm.CASES)}")
    arr, meta = imaging.read_tsim_array(tsim_path)
    h = meta.get("config_hash") or ""
    if stamp is not None:
        if h and h != stamp:
            raise ConfigError(f"{tsim_path}: config hash {h[:12]} does not match {stamp[:12]}")
        h = stamp
    case = dm.CASES[case_id]
    model, sched, trace = dm.train_ddpm(arr, case, tcfg, steps, seed)
    meta_out = dm.ddpm_meta(model, sched, case, arr.shape[-1])
    meta_out.update(case_id=case_id, config_hash=h, steps=steps, seed=seed)
    save_checkpoint(out, model.state_dict(), meta_out)
    write_trace(trace_path, ["step", "objective", "loss", "t_mean"], trace, h)
    return h


def sample_ddpm_file(ckpt, n: int, seed: int, out) -> str:
    state, meta = load_checkpoint(ckpt)
    model, sched, _ = dm.load_ddpm(state, meta)
    size, c = meta["image_size"], meta["denoiser"]["channels"]
    x = dm.ancestral_sample(model, sched, (n, c, size, size), seed)
    h = meta.get("config_hash", "")
    images = [imaging.ImagingTensor(img, label="N", record_id=f"ddpm-{meta.get('case_id', '')}", r_peak=i)
              for i, img in enumerate(x)]
    imaging.write_tsim(out, images, {"config_hash": h, "source": "ddpm", "case_id": meta.get("case_id", "")})
    return h


def deembed_file(tsim_path, out) -> tuple[int, str]:
    """De-embed every image; rows whose GASF diagonal strays past the tolerance are flagged."""
    images, meta = imaging.read_tsim(tsim_path)
    h = meta.get("config_hash", "")
    rows, flagged = [], 0
    for img in images:
        exc = imaging.diagonal_excursion(img)
        flag = exc > FLAG_TOL
        flagged += flag
        rows.append(beat_row(imaging.deembed(img), h, excursion=exc, flagged=bool(flag)))
    write_ndjson(out, rows)
    return flagged, h


def train_wgan_file(beats_path, wcfg: wgan_gp.WganConfig, steps: int, seed: int, out, trace_path,
                    label: str | None = "N", stamp: str | None = None) -> str:
    """Train on the ``label`` beats of an NDJSON file; ``stamp`` overrides the file's own hash."""
    beats, h = read_beats(beats_path, stamp)
    h = stamp if stamp is not None else h
    x = np.stack([b.samples for b in beats if label is None or b.label == label]) if beats else np.zeros((0, 0))
    if len(x) == 0:
        raise DataError(f"{beats_path}: no beats with label {label!r} to train on")
    gen, critic, trace = wgan_gp.train_wgan_gp(x, steps, seed, wcfg)
    state = OrderedDict([(f"gen.{k}", v) for k, v in gen.state_dict().items()])
    state.update((f"critic.{k}", v) for k, v in critic.state_dict().items())
    meta = wgan_gp.wgan_meta(wcfg)
    meta.update(config_hash=h or "", steps=steps, seed=seed)
    save_checkpoint(out, state, meta)
    write_trace(trace_path, ["step", "w_estimate", "d_loss", "g_loss"], trace, h or "")
    return h or ""


def sample_wgan_file(ckpt, n: int, seed: int, out) -> str:
    state, meta = load_checkpoint(ckpt)
    gen = wgan_gp.load_generator(state, meta)
    x = wgan_gp.sample_generator(gen, n, seed)
    h = meta.get("config_hash", "")
    write_ndjson(out, (beat_row(BeatSeries(b, "N", "wgan", i, True), h) for i, b in enumerate(x)))
    return h


# ---------------------------------------------------------------------------
# evaluation

def harness_config(cfg: RunConfig) -> metrics.HarnessConfig:
    hc = cfg.harness
    return metrics.HarnessConfig(
        hc.train_per_class, hc.minority, hc.test_per_class, hc.scale, hc.threshold,
        ClassifierConfig(tuple(hc.classifier_widths), epochs=hc.epochs, batch_size=hc.batch_size, lr=hc.lr))


def balanced_test(test: list[BeatSeries], n: int, seed: int) -> list[BeatSeries]:
    rng = np.random.default_rng(seed)
    out = []
    for label in (metrics.NEGATIVE, metrics.POSITIVE):
        pool = [b for b in test if b.label == label]
        if len(pool) < n:
            raise DataError(f"test split has {len(pool)} {label} beats, evaluation needs {n}")
        idx = sorted(rng.permutation(len(pool))[:n].tolist())
        out.extend(pool[i] for i in idx)
    return out


def _scenario_doc(res: metrics.ScenarioResult) -> dict:
    return {"precision": res.precision, "avg_precision": res.avg_precision, "pr_auc": res.pr_auc,
            "roc_auc": res.roc_auc, "confusion": res.confusion, "flags": res.flags,
            "pr_points": [list(res.pr_points[0]), list(res.pr_points[1])],
            "roc_points": [list(res.roc_points[0]), list(res.roc_points[1])]}


def evaluate_beats(train: list[BeatSeries], test: list[BeatSeries], synth_by_case: dict[str, list[BeatSeries]],
                   cfg: RunConfig, seed: int, h: str, flags_by_case: dict | None = None) -> dict[str, dict]:
    """Report documents keyed by case id, plus ``rl`` (real augmentation) as the reference case."""
    hcfg = harness_config(cfg)
    _, _, n_test = hcfg.counts()
    test_set = balanced_test(test, n_test, seed)
    train_n = [b for b in train if b.label == metrics.NEGATIVE]
    train_l = [b for b in train if b.label == metrics.POSITIVE]
    results = metrics.classification_harness(train_n, train_l, test_set, synth_by_case, hcfg, seed)
    test_n = [b for b in test_set if b.label == metrics.NEGATIVE]
    template_idx = int(np.random.default_rng(seed).integers(len(test_n)))
    template = test_n[template_idx]
    pools = dict(synth_by_case)
    pools["rl"] = train_n
    docs = {}
    for case_id in sorted(pools):
        key = "real_augmented" if case_id == "rl" else f"augmented:{case_id}"
        extra = (flags_by_case or {}).get(case_id, [])
        rep = metrics.evaluate_case(case_id, pools[case_id], test_n, results[key], template_idx, extra)
        scen = {"balanced": _scenario_doc(results["balanced"]), "imbalanced": _scenario_doc(results["imbalanced"]),
                key: _scenario_doc(results[key])}
        docs[case_id] = {
            "case_id": case_id,
            "config": cfg,
            "config_hash": h,
            "report": dataclasses.asdict(rep),
            "template": {"index": template_idx, "record": template.record_id, "r_peak": template.r_peak},
            "scenarios": scen,
            "overlay": {"template": template.samples, "synthetic": [b.samples for b in pools[case_id][:8]]},
        }
    return docs


def summary_doc(docs: dict[str, dict], cfg: RunConfig, h: str) -> dict:
    keys = ("avg_dtw", "avg_frechet", "mmd", "precision", "avg_precision", "pr_auc", "roc_auc")
    any_doc = next(iter(docs.values()))
    return {
        "config": cfg, "config_hash": h,
        "cases": {c: {k: d["report"][k] for k in keys} for c, d in sorted(docs.items())},
        "baselines": {k: {m: any_doc["scenarios"][k][m] for m in ("precision", "avg_precision", "pr_auc", "roc_auc")}
                      for k in ("balanced", "imbalanced")},
    }


def plot_report(doc: dict, out_dir) -> list[Path]:
    paths = plotting.plot_curves(doc, out_dir)
    beats = plotting.plot_beats(doc, out_dir)
    return paths + ([beats] if beats else [])


# ---------------------------------------------------------------------------
# end-to-end run with stage caching

STAGES = ("ingest", "segment", "embed", "train", "sample", "deembed", "evaluate", "plot")


class Run:
    def __init__(self, cfg: RunConfig, base: Path, out: Path, log: Callable[[str], None] = lambda s: None):
        self.cfg, self.base, self.out, self.log = cfg, Path(base), Path(out), log
        self.h = config_hash(cfg)
        self.stamps = self.out / ".stamps"

    def path(self, rel: str) -> Path:
        return self.out / rel

    def _stage(self, name: str, outputs: list[str], fn: Callable[[], None]) -> str:
        stamp = self.stamps / f"{name}.json"
        if stamp.exists():
            doc = read_json(stamp)
            if doc.get("config_hash") != self.h:
                raise ConfigError(f"stage {name}: {self.out} holds outputs of config {str(doc.get('config_hash'))[:12]}, "
                                  f"refusing to reuse them for config {self.h[:12]}")
            if all(self.path(o).exists() for o in doc.get("outputs", [])):
                self.log(f"[skip] {name}")
                return "skipped"
        self.log(f"[run]  {name}")
        try:
            fn()
        except (ConfigError, NumericError) as exc:
            raise type(exc)(f"stage {name}: {exc}") from exc
        except (DataError, ValueError, OSError, KeyError) as exc:
            raise DataError(f"stage {name}: {exc}") from exc
        missing = [o for o in outputs if not self.path(o).exists()]
        if missing:  # pragma: no cover - guards against a stage forgetting an output
            raise DataError(f"stage {name}: expected outputs missing: {missing}")
        write_json(stamp, {"stage": name, "config_hash": self.h, "outputs": outputs})
        return "ran"

    # --- stages

    def ingest(self):
        d = self.cfg.data
        if not d.records:
            raise ConfigError("data.records is empty")
        rows = []
        for spec in d.records:
            rec = load_record(resolve(spec.dat, self.base), resolve(spec.ann, self.base), spec.id or None, d.fs, d.gain)
            rows.append(record_row(rec, self.h))
        write_ndjson(self.path("records.ndjson"), rows)

    def segment(self):
        s, d = self.cfg.segment, self.cfg.data
        beats = segment_rows(read_ndjson(self.path("records.ndjson")), s.length, s.cutoff, d.labels, self.h)
        train, test = split_dataset(beats, self.cfg.seed, tuple(d.split))
        write_ndjson(self.path("beats/train.ndjson"), (beat_row(b, self.h) for b in train))
        write_ndjson(self.path("beats/test.ndjson"), (beat_row(b, self.h) for b in test))

    def train_normals(self) -> list[BeatSeries]:
        beats, _ = read_beats(self.path("beats/train.ndjson"), self.h)
        return [b for b in beats if b.label == metrics.NEGATIVE]

    def embed(self):
        images = [imaging.embed(b, imaging.MtfConfig(self.cfg.embed.bins)) for b in self.train_normals()]
        if not images:
            raise DataError("no N beats in the training split")
        imaging.write_tsim(self.path("embed/train_N.tsim"), images, {"config_hash": self.h})

    def train(self):
        seed = self.cfg.seed
        for case_id in self.cfg.ddpm.cases:
            train_ddpm_file(self.path("embed/train_N.tsim"), case_id, ddpm_train_config(self.cfg), self.cfg.ddpm.steps,
                            seed, self.path(f"ckpt/ddpm_{case_id}.tsnn"), self.path(f"ckpt/ddpm_{case_id}_trace.csv"),
                            stamp=self.h)
        train_wgan_file(self.path("beats/train.ndjson"), wgan_config(self.cfg), self.cfg.wgan.steps, seed,
                        self.path("ckpt/wgan.tsnn"), self.path("ckpt/wgan_trace.csv"), stamp=self.h)

    def n_synthetic(self) -> int:
        n_train, n_min, _ = harness_config(self.cfg).counts()
        return n_train - n_min

    def sample(self):
        n, seed = self.n_synthetic(), self.cfg.seed + 1
        for case_id in self.cfg.ddpm.cases:
            sample_ddpm_file(self.path(f"ckpt/ddpm_{case_id}.tsnn"), n, seed, self.path(f"samples/ddpm_{case_id}.tsim"))
        sample_wgan_file(self.path("ckpt/wgan.tsnn"), n, seed, self.path("samples/GAN.ndjson"))

    def deembed(self):
        for case_id in self.cfg.ddpm.cases:
            deembed_file(self.path(f"samples/ddpm_{case_id}.tsim"), self.path(f"samples/{case_id}.ndjson"))

    def case_ids(self) -> list[str]:
        return list(self.cfg.ddpm.cases) + ["GAN"]

    def evaluate(self):
        train, _ = read_beats(self.path("beats/train.ndjson"), self.h)
        test, _ = read_beats(self.path("beats/test.ndjson"), self.h)
        pools, flags = {}, {}
        for case_id in self.case_ids():
            rows = read_ndjson(self.path(f"samples/{case_id}.ndjson"))
            if single_hash(rows, case_id) != self.h:
                raise ConfigError(f"samples for case {case_id} come from a different config")
            pools[case_id] = [row_to_beat(r) for r in rows]
            n_flag = sum(bool(r.get("flagged")) for r in rows)
            if n_flag:
                flags[case_id] = [f"{n_flag} beats clamped beyond diagonal tolerance {FLAG_TOL}"]
        docs = evaluate_beats(train, test, pools, self.cfg, self.cfg.seed, self.h, flags)
        for case_id, doc in docs.items():
            write_json(self.path(f"reports/{case_id}.json"), doc)
        write_json(self.path("reports/summary.json"), summary_doc(docs, self.cfg, self.h))

    def plot(self):
        for case_id in self.case_ids() + ["rl"]:
            plot_report(read_json(self.path(f"reports/{case_id}.json")), self.path("plots"))
        for name in [f"ddpm_{c}" for c in self.cfg.ddpm.cases] + ["wgan"]:
            plotting.plot_trace(self.path(f"ckpt/{name}_trace.csv"), self.path(f"plots/{name}_trace.svg"), self.h)

    def outputs(self) -> dict[str, list[str]]:
        cases = self.cfg.ddpm.cases
        all_cases = self.case_ids() + ["rl"]
        return {
            "ingest": ["records.ndjson"],
            "segment": ["beats/train.ndjson", "beats/test.ndjson"],
            "embed": ["embed/train_N.tsim"],
            "train": [f"ckpt/ddpm_{c}{s}" for c in cases for s in (".tsnn", "_trace.csv")]
                     + ["ckpt/wgan.tsnn", "ckpt/wgan_trace.csv"],
            "sample": [f"samples/ddpm_{c}.tsim" for c in cases] + ["samples/GAN.ndjson"],
            "deembed": [f"samples/{c}.ndjson" for c in cases],
            "evaluate": [f"reports/{c}.json" for c in all_cases] + ["reports/summary.json"],
            "plot": [f"plots/{c}_{k}.svg" for c in all_cases for k in ("pr", "roc", "beats")]
                    + [f"plots/{n}_trace.svg" for n in [f"ddpm_{c}" for c in cases] + ["wgan"]],
        }

    def execute(self) -> dict[str, str]:
        self.out.mkdir(parents=True, exist_ok=True)
        outs = self.outputs()
        status = {}
        for name in STAGES:
            if name == "plot" and not self.cfg.plots:
                continue
            status[name] = self._stage(name, outs[name], getattr(self, name))
        return status


def run_pipeline(cfg: RunConfig, out_dir, base_dir=".", log: Callable[[str], None] = lambda s: None) -> dict[str, str]:
    """Run every stage in order, skipping those whose stamped outputs match this config."""
    return Run(cfg, Path(base_dir), Path(out_dir), log).execute()
