"""
Command-line entry points.

    dlen gen-data  --config C --out DIR
    dlen train     --config C --out DIR [--data TSV]
    dlen eval      --config C --out DIR --checkpoint F [--data TSV] [--baseline TSV] [--oracle]
    dlen gradcheck --config C [--out DIR]
    dlen bench     --config C --out DIR
    dlen rank-sim  --config C --out DIR --checkpoint F [--data TSV]

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 non-finite loss,
5 checkpoint mismatch, 6 gradient check failed, 7 mode misuse.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint, nn
from .bayes import AlphaPolicy, DecomposedPrediction, dlen_loss, task_loss
from .config import ConfigError, ExperimentConfig, load
from .data import DataFormatError, Dataset, load_tsv, split_indices, write_tsv
from .fusion import COMPOSED, LATENT, FusionWeights, sim_eval
from .metrics import (auc, auc_report, format_table, latent_auc, mtl_gain,
                      write_report_tsv)
from .models import CategoricalField, FeatureSchema, ModelConfig, ModelKind, MultiTaskModel
from .synth import (SyntheticData, expected_interactions, generate, habit_masks,
                    oracle_prediction, read_sidecar, write_sidecar)
from .train import TrainingDiverged, evaluate, predict, train

log = logging.getLogger("dlen")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_CHECKPOINT, EXIT_GRADCHECK, EXIT_MODE = 0, 2, 3, 4, 5, 6, 7


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


# ---------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig, artifacts: list[Path]) -> None:
    manifest = {
        "command": command,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "artifacts": {p.name: _sha256(p) for p in artifacts},
    }
    (out / f"manifest.{command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _outdir(args) -> Path:
    if args.out is None:
        raise CliError(EXIT_CONFIG, "--out is required for this command")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {out}: {exc}") from exc
    return out


def _train_path(args, cfg: ExperimentConfig) -> Path:
    path = Path(args.data) if getattr(args, "data", None) else cfg.train_file
    if path is None:
        raise CliError(EXIT_CONFIG, "no dataset: pass --data or set data.train_file")
    if not path.exists():
        raise CliError(EXIT_IO, f"dataset file not found: {path}")
    return path


def _load_dataset(args, cfg: ExperimentConfig) -> tuple[Dataset, np.ndarray | None, np.ndarray | None]:
    path = _train_path(args, cfg)
    try:
        ds = load_tsv(path, cfg.schema)
    except DataFormatError as exc:
        raise CliError(EXIT_IO, f"{path}: {exc}") from exc
    side = cfg.sidecar_file
    if side is None and (path.parent / "sidecar.tsv").exists():
        side = path.parent / "sidecar.tsv"
    latent_u = posterior = None
    if side is not None:
        try:
            latent_u, posterior = read_sidecar(side)
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_IO, f"sidecar {side}: {exc}") from exc
        if len(latent_u) != len(ds):
            raise CliError(EXIT_IO, f"sidecar has {len(latent_u)} rows, dataset {len(ds)}")
    return ds, latent_u, posterior


def _split(cfg: ExperimentConfig, n: int):
    return split_indices(n, cfg.evaluation.split_salt, cfg.evaluation.eval_fraction)


def _build(cfg: ExperimentConfig, ds: Dataset, train_idx, kind=None, seed=None) -> MultiTaskModel:
    mc = cfg.model_config(ds.base_rates(train_idx), kind=kind)
    return MultiTaskModel(mc, seed=cfg.seed if seed is None else seed)


def _metrics_rows(result, with_latent: bool):
    rows = []
    for epoch, task, loss, eval_auc, lat in result.log_rows():
        row = [str(epoch), task, format(loss, ".10g"), format(eval_auc, ".10g")]
        if with_latent:
            row.append(format(lat, ".10g") if lat is not None else "")
        rows.append(row)
    return rows


def _threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    if cfg.generator is None:
        raise CliError(EXIT_CONFIG, "config key 'data.generator': required for gen-data")
    out = _outdir(args)
    data = generate(cfg.generator, cfg.seed)
    train_p, side_p = out / "train.tsv", out / "sidecar.tsv"
    try:
        write_tsv(data.dataset, train_p)
        write_sidecar(side_p, data.latent_u, data.posterior)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    _write_manifest(out, "gen-data", cfg, [train_p, side_p])
    print(f"wrote {len(data.dataset)} rows to {train_p} and {side_p}")
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    out = _outdir(args)
    ds, latent_u, _ = _load_dataset(args, cfg)
    tr, ev = _split(cfg, len(ds))
    model = _build(cfg, ds, tr)
    truth = latent_u if cfg.evaluation.latent_metrics else None
    try:
        result = train(model, ds, tr, ev, cfg.training, latent_truth=truth)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    ckpt = out / "checkpoint.dlen1"
    checkpoint.save(ckpt, model.state_dict())
    is_dlen = model.kind == ModelKind.DLEN
    log_p = out / "metrics.tsv"
    header = ["epoch", "task", "train_loss", "eval_auc"] + (["latent_auc"] if is_dlen else [])
    with open(log_p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in _metrics_rows(result, is_dlen):
            fh.write("\t".join(row) + "\n")
    _write_manifest(out, "train", cfg, [ckpt, log_p])
    print(format_table(result.final.eval.rows()))
    return EXIT_OK


def _read_auc_tsv(path: Path) -> dict[str, float]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["task", "metric", "value"]:
            raise ValueError(f"{path}: not a metrics report")
        for line in fh:
            task, metric, value = line.rstrip("\n").split("\t")
            if metric == "auc":
                out[task] = float(value)
    return out


def _restore(cfg: ExperimentConfig, ds: Dataset, tr, path) -> MultiTaskModel:
    model = _build(cfg, ds, tr)
    try:
        state = checkpoint.load(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint: {exc}") from exc
    except checkpoint.CheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, str(exc)) from exc
    try:
        model.load_state_dict(state)
    except ValueError as exc:
        raise CliError(EXIT_CHECKPOINT, f"checkpoint does not match model config: {exc}") from exc
    return model


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    out = _outdir(args)
    ds, latent_u, posterior = _load_dataset(args, cfg)
    tr, ev = _split(cfg, len(ds))
    idx = {"eval": ev, "train": tr, "all": np.arange(len(ds))}[args.split]
    labels = ds.label_dict(idx)
    if args.oracle:
        if posterior is None:
            raise CliError(EXIT_IO, "--oracle needs the sidecar file")
        report = auc_report({t: posterior[idx] for t in cfg.tasks}, labels)
        report.latent_auc = latent_auc(posterior[idx], labels)
        report.latent_auc_truth = auc(posterior[idx], latent_u[idx])
    else:
        if not args.checkpoint:
            raise CliError(EXIT_CONFIG, "--checkpoint is required (or pass --oracle)")
        model = _restore(cfg, ds, tr, args.checkpoint)
        truth = latent_u if cfg.evaluation.latent_metrics else None
        report = evaluate(model, ds, idx, truth)
    rows = report.rows()
    rep_p = out / "eval_report.tsv"
    write_report_tsv(rows, rep_p)
    artifacts = [rep_p]
    print(format_table(rows))
    if args.baseline:
        try:
            base = _read_auc_tsv(Path(args.baseline))
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_IO, f"baseline report: {exc}") from exc
        try:
            gains = mtl_gain(report, base)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, str(exc)) from exc
        gain_p = out / "mtl_gain.tsv"
        write_report_tsv(gains.rows(), gain_p)
        artifacts.append(gain_p)
        print()
        print(format_table(gains.rows()))
    _write_manifest(out, "eval", cfg, artifacts)
    return EXIT_OK


def _tiny_config(cfg: ExperimentConfig, kind: str):
    schema = FeatureSchema(tuple(CategoricalField(n, min(v, 6), 3) for n, v in cfg.schema.categorical),
                           cfg.schema.numeric)
    return ModelConfig(kind, cfg.tasks, schema, n_shared_experts=2, n_task_experts=1,
                       expert_spec=nn.MlpSpec((8, 4)), tower_spec=nn.MlpSpec((4,)),
                       hidden_state_spec=nn.MlpSpec((8, 4)),
                       alpha_policy=AlphaPolicy.fixed({t: 0.3 for t in cfg.tasks}))


def run_gradcheck(cfg: ExperimentConfig, kind: str, seed: int, batch_size: int = 16):
    mc = _tiny_config(cfg, kind)
    model = MultiTaskModel(mc, seed=seed)
    rng = np.random.default_rng([seed, 99])
    cat = np.stack([rng.integers(0, c.vocab_size, batch_size) for c in mc.schema.categorical], axis=1) \
        if mc.schema.categorical else np.zeros((batch_size, 0), np.int64)
    num = rng.standard_normal((batch_size, len(mc.schema.numeric))).astype(np.float32)
    labels = {t: rng.integers(0, 2, batch_size) for t in cfg.tasks}

    def loss_fn(_):
        out = model.forward(cat, num)
        return dlen_loss(out, labels) if kind == "DLEN" else task_loss(out, labels)

    return nn.grad_check(loss_fn, model.parameters(), None)


def cmd_gradcheck(args, cfg: ExperimentConfig) -> int:
    kind = cfg.model.get("kind", "DLEN")
    n_seeds = int(cfg.gradcheck.get("n_seeds", 5))
    tol = float(cfg.gradcheck.get("tolerance", 1e-3))
    batch = int(cfg.gradcheck.get("batch_size", 16))
    worst = None
    for s in range(cfg.seed, cfg.seed + n_seeds):
        r = run_gradcheck(cfg, kind, s, batch)
        print(f"{kind}\tseed={s}\tmax_rel_error={r.max_rel_error:.3e}\tworst={r.worst_param}"
              f"{list(r.worst_index)}\tchecked={r.n_checked}\ton_kink={r.n_on_kink}")
        if worst is None or r.max_rel_error > worst.max_rel_error:
            worst = r
    ok = worst.max_rel_error < tol
    print(f"{'PASS' if ok else 'FAIL'} {kind}: max relative error {worst.max_rel_error:.3e} "
          f"(tolerance {tol:g}), worst parameter {worst.worst_param}")
    return EXIT_OK if ok else EXIT_GRADCHECK


def run_bench(cfg: ExperimentConfig, args=None, progress=None, on_trained=None) -> list[dict]:
    """Train every bench model on every seed; one record per (seed, model).

    A dataset file is shared by all seeds; without one, each seed draws its
    own synthetic dataset.  Within a seed all models see the same batches.
    ``on_trained(record, model, dataset, latent_u, eval_idx)`` lets callers
    inspect each trained model before it is discarded.
    """
    from_file = bool(getattr(args, "data", None)) or cfg.train_file is not None
    if from_file:
        shared = _load_dataset(args, cfg)
    elif cfg.generator is None:
        raise CliError(EXIT_CONFIG, "bench needs data.generator or a dataset file")
    records = []
    for seed in cfg.bench_seeds:
        if from_file:
            ds, latent_u, posterior = shared
        else:
            d = generate(cfg.generator, seed)
            ds, latent_u, posterior = d.dataset, d.latent_u, d.posterior
        tr, ev = _split(cfg, len(ds))
        bayes = auc(posterior[ev], latent_u[ev]) if latent_u is not None else None
        tcfg = replace(cfg.training, seed=seed)
        for kind in cfg.bench_models:
            model = _build(cfg, ds, tr, kind=kind, seed=seed)
            res = train(model, ds, tr, ev, tcfg, latent_truth=latent_u)
            rep = res.final.eval
            rec = {"seed": seed, "model": kind, "auc": rep.values(),
                   "latent_auc": rep.latent_auc, "latent_auc_truth": rep.latent_auc_truth,
                   "bayes_latent_auc": bayes}
            records.append(rec)
            if on_trained:
                on_trained(rec, model, ds, latent_u, ev)
            if progress:
                progress(rec)
    return records


def summarize_bench(records: list[dict], tasks, baseline: str = "MMOE"):
    models = list(dict.fromkeys(r["model"] for r in records))
    table = {}
    for m in models:
        aucs = np.array([[r["auc"][t] for t in tasks] for r in records if r["model"] == m])
        table[m] = (aucs.mean(axis=0), aucs.std(axis=0, ddof=1) if len(aucs) > 1 else np.zeros(len(tasks)))
    gains = {m: table[m][0] - table[baseline][0] for m in models} if baseline in table else {}
    return models, table, gains


def cmd_bench(args, cfg: ExperimentConfig) -> int:
    out = _outdir(args)
    try:
        records = run_bench(cfg, args, progress=lambda r: print(
            f"seed {r['seed']} {r['model']}: " + " ".join(f"{t}={v:.4f}" for t, v in r["auc"].items()),
            flush=True))
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    tasks = cfg.tasks
    models, table, gains = summarize_bench(records, tasks)
    runs_p, table_p = out / "bench_runs.tsv", out / "bench.tsv"
    with open(runs_p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["seed", "model"] + [f"auc:{t}" for t in tasks]
                           + ["latent_auc", "latent_auc_truth", "bayes_latent_auc"]) + "\n")
        for r in records:
            extra = [r["latent_auc"], r["latent_auc_truth"], r["bayes_latent_auc"]]
            fh.write("\t".join([str(r["seed"]), r["model"]] + [format(r["auc"][t], ".10g") for t in tasks]
                               + ["" if v is None else format(v, ".10g") for v in extra]) + "\n")
    with open(table_p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["model"] + [f"auc:{t}" for t in tasks] + [f"std:{t}" for t in tasks]
                           + [f"gain:{t}" for t in tasks]) + "\n")
        for m in models:
            mean, std = table[m]
            g = gains.get(m, np.full(len(tasks), np.nan))
            fh.write("\t".join([m] + [format(v, ".6f") for v in mean] + [format(v, ".6f") for v in std]
                               + [format(v, "+.6f") for v in g]) + "\n")
    print()
    print("model\t" + "\t".join(f"AUC {t}" for t in tasks))
    for m in models:
        mean, _ = table[m]
        g = gains.get(m)
        cells = [f"{v:.4f}" + (f"({gv:+.4f})" if g is not None and m != "MMOE" else "")
                 for v, gv in zip(mean, g if g is not None else mean)]
        print(m + "\t" + "\t".join(cells))
    _write_manifest(out, "bench", cfg, [runs_p, table_p])
    return EXIT_OK


def cmd_rank_sim(args, cfg: ExperimentConfig) -> int:
    out = _outdir(args)
    if not args.checkpoint:
        raise CliError(EXIT_CONFIG, "--checkpoint is required")
    ds, latent_u, posterior = _load_dataset(args, cfg)
    if latent_u is None:
        raise CliError(EXIT_IO, "rank-sim needs the ground-truth sidecar")
    tr, ev = _split(cfg, len(ds))
    model = _restore(cfg, ds, tr, args.checkpoint)
    w = cfg.fusion.weights
    if model.kind != ModelKind.DLEN and w.mode == LATENT:
        print("error: latent fusion mode needs a DLEN checkpoint", file=sys.stderr)
        return EXIT_MODE
    expected = None
    if cfg.generator is not None:
        gcfg = replace(cfg.generator, seed=cfg.seed)
        synth = SyntheticData(ds, latent_u, posterior, habit_masks(ds.cat_ids, gcfg), gcfg)
        expected = expected_interactions(synth)
    pred = predict(model, ds)
    modes = [(LATENT, w.gamma), (COMPOSED, w.gamma)] if model.kind == ModelKind.DLEN else [(COMPOSED, w.gamma)]
    rows = []
    for mode, gamma in modes:
        fw = FusionWeights(dict(w.task_weights), gamma=gamma, mode=mode)
        # baselines only have composed probabilities
        pred_d = pred if model.kind == ModelKind.DLEN else DecomposedPrediction(None, pred, pred, pred)
        rep = sim_eval(pred_d, latent_u, fw, cfg.fusion.k, cfg.fusion.set_size, expected, ev)
        rows.append((mode, rep.k, rep.detest_fraction, rep.expected_interactions))
    rep_p = out / "rank_sim.tsv"
    with open(rep_p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mode\tk\tdetest_fraction\texpected_interactions\n")
        for mode, k, det, inter in rows:
            fh.write(f"{mode}\t{k}\t{det:.10g}\t{inter:.10g}\n")
    artifacts = [rep_p]
    if cfg.generator is not None:
        oracle = oracle_prediction(synth)
        orc_p = out / "rank_sim_oracle.tsv"
        with open(orc_p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("mode\tk\tdetest_fraction\texpected_interactions\n")
            for mode in (LATENT, COMPOSED):
                fw = FusionWeights(dict(w.task_weights), gamma=w.gamma, mode=mode)
                rep = sim_eval(oracle, latent_u, fw, cfg.fusion.k, cfg.fusion.set_size, expected, ev)
                fh.write(f"{mode}\t{rep.k}\t{rep.detest_fraction:.10g}\t{rep.expected_interactions:.10g}\n")
        artifacts.append(orc_p)
    for mode, k, det, inter in rows:
        print(f"{mode:9s} k={k} detest_fraction={det:.4f} expected_interactions={inter:.4f}")
    _write_manifest(out, "rank-sim", cfg, artifacts)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "rank-sim": cmd_rank_sim,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment YAML file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dlen", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("train", "eval", "bench", "rank-sim"):
            p.add_argument("--data", help="dataset TSV (overrides data.train_file)")
        if name in ("eval", "rank-sim"):
            p.add_argument("--checkpoint", help="checkpoint written by train")
        if name == "eval":
            p.add_argument("--baseline", help="baseline eval_report.tsv for MTL gains")
            p.add_argument("--oracle", action="store_true",
                           help="score with the sidecar's true posterior instead of a model")
            p.add_argument("--split", choices=("eval", "train", "all"), default="eval")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.training = replace(cfg.training, seed=args.seed)
        if cfg.generator is not None:
            cfg.generator = replace(cfg.generator, seed=args.seed)
    limiter = _threads(args.threads)
    try:
        return COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
