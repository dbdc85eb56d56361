"""Command-line interface: ``stmlp <command> ...``.

Exit codes: 0 success, 2 bad configuration or arguments, 3 bad data,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import config as cf
from . import data as dt
from . import inference as inf
from . import metrics as mt
from . import model as md
from . import optim as op

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("stmlp")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# -- helpers ------------------------------------------------------------------

def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise cf.ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    for flag, key in (
        ("variant", "variant"), ("se", "se_mode"), ("ln_axis", "ln_axis"), ("se_semantics", "se_semantics"),
        ("optimizer", "optimizer"), ("lr", "lr"), ("epochs", "epochs"), ("batch_size", "batch_size"),
        ("seed", "seed"), ("num_classes", "n_classes"), ("root_joint", "root_joint"), ("data", "data"),
        ("split_key", "split_key"), ("held_out", "held_out"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = str(v)
    return out


def _load(path, cfg: md.ModelConfig):
    try:
        return dt.load_dataset(path, n_joints=cfg.n_joints, n_classes=cfg.n_classes)
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}", EXIT_IO) from None


def _preprocess(seqs, root_joint):
    if root_joint is None:
        return seqs
    return [dt.root_normalize(s, root_joint) for s in seqs]


def _select(seqs, split_key, held_out, part):
    if part == "all" or not split_key:
        return seqs
    split = dt.split_by(seqs, split_key, held_out)
    return split.test if part == "test" else split.train


def _read_checkpoint(path):
    try:
        return ck.load_checkpoint(path)
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}", EXIT_IO) from None
    except ck.CheckpointError as e:
        raise CliError(str(e), EXIT_IO) from None


# -- commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    run = cf.build(args.preset, args.config, _overrides(args))
    if not run.data:
        raise cf.ConfigError("field 'data': a dataset path is required")
    cfg = run.model
    seqs = _preprocess(_load(run.data, cfg), run.root_joint)
    train_seqs = _select(seqs, run.split_key, run.held_out, "train")
    X, y = dt.to_arrays(train_seqs, cfg.seq_len)
    params = md.init_params(cfg, run.seed)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log")
    with open(log_path, "w", encoding="utf-8") as fh:

        def on_epoch(entry):
            fh.write(entry.format() + "\n")
            fh.flush()
            if not args.quiet:
                print(entry.format(), flush=True)

        op.train(params, cfg, X, y, run.lr_schedule(), run.optimizer, run.batch_size, run.seed, on_epoch=on_epoch)
    meta = {"run": run.to_dict(), "train_samples": int(len(X))}
    ck.save_checkpoint(args.out, params, cfg, seed=run.seed, metadata=meta)
    return EXIT_OK


def evaluate(params, cfg, seqs) -> mt.ConfusionMatrix:
    X, y = dt.to_arrays(seqs, cfg.seq_len)
    pred = op.predict_arrays(params, cfg, X)
    return mt.ConfusionMatrix.from_labels(y, pred, cfg.n_classes)


def cmd_eval(args) -> int:
    params, cfg, header = _read_checkpoint(args.checkpoint)
    run = header.get("metadata", {}).get("run", {})
    data_path = args.data or run.get("data")
    if not data_path:
        raise cf.ConfigError("field 'data': no dataset given and none recorded in the checkpoint")
    seqs = _load_for_checkpoint(data_path, cfg)
    seqs = _preprocess(seqs, run.get("root_joint"))
    split_key = args.split_key if args.split_key is not None else run.get("split_key")
    held_out = tuple(args.held_out.split(",")) if args.held_out else tuple(run.get("held_out", ()))
    part = args.part
    cm = evaluate(params, cfg, _select(seqs, split_key, held_out, part))
    text = mt.report(cm)
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    return EXIT_OK


def _load_for_checkpoint(path, cfg):
    try:
        seqs = dt.load_dataset(path, n_classes=cfg.n_classes)
    except OSError as e:
        raise CliError(f"{path}: {e.strerror or e}", EXIT_IO) from None
    for i, s in enumerate(seqs):
        if s.n_joints != cfg.n_joints:
            raise dt.DataError(f"{path}: sequence {i} has K={s.n_joints} joints but the checkpoint expects K={cfg.n_joints}")
    return seqs


def _engine(args):
    if args.checkpoint:
        params, cfg, _ = _read_checkpoint(args.checkpoint)
    else:
        cfg = cf.build(args.preset, None, {}).model
        params = md.init_params(cfg, 0)
    return inf.InferenceEngine(params, cfg, np.float32 if args.dtype == "float32" else np.float64)


def cmd_bench(args) -> int:
    from threadpoolctl import threadpool_limits

    engine = _engine(args)
    with threadpool_limits(limits=args.threads):
        stats = inf.benchmark(engine, args.iterations, args.warmup, args.seed)
    cfg = engine.cfg
    print(f"model\tL={cfg.n_layers} S={cfg.width} T={cfg.seq_len} D_S={cfg.spatial_hidden} D_T={cfg.temporal_hidden} K={cfg.n_joints} C={cfg.n_classes}")
    print(f"dtype\t{engine.dtype.name}")
    print(f"threads\t{args.threads}")
    print(f"iterations\t{stats['iterations']}")
    for k in ("min_ms", "mean_ms", "p50_ms", "p99_ms"):
        print(f"{k}\t{stats[k]:#.4g}")
    return EXIT_OK


def parse_frame(line: str, n_joints: int) -> np.ndarray:
    rec = json.loads(line)
    if isinstance(rec, dict):
        rec = rec.get("joints", rec.get("frame"))
    frame = np.asarray(rec, dtype=np.float64)
    if frame.shape != (n_joints, 3):
        raise ValueError(f"expected {n_joints} x 3 joints, got shape {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise ValueError("non-finite coordinate")
    return frame


def cmd_predict(args, stdin=None, stdout=None, stderr=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    params, cfg, header = _read_checkpoint(args.checkpoint)
    root = header.get("metadata", {}).get("run", {}).get("root_joint")
    stream = inf.StreamPredictor(inf.InferenceEngine(params, cfg))
    n = 0
    for lineno, line in enumerate(stdin, start=1):
        if not line.strip():
            continue
        try:
            frame = parse_frame(line, cfg.n_joints)
        except (ValueError, TypeError) as e:
            stderr.write(f"line {lineno}: skipped malformed frame: {e}\n")
            stderr.flush()
            continue
        if root is not None:
            frame = frame - frame[root]
        cls = stream.push(frame)
        stdout.write(json.dumps({"frame": n, "class": cls}) + "\n")
        stdout.flush()
        n += 1
    return EXIT_OK


def cmd_synth(args) -> int:
    seqs = dt.synth_gestures(
        args.classes, args.samples, args.joints, args.frames, args.noise, args.seed, max_jitter=args.jitter
    )
    dt.save_dataset(args.out, seqs)
    return EXIT_OK


def _detect_format(path: Path) -> str:
    if path.suffix == ".npz":
        return "npz"
    if path.suffix == ".csv":
        return "csv"
    return "native"


def read_csv_sequences(path) -> list:
    """Rows ``sequence, label, x0, y0, z0, ..., [subject, view]``: one row per
    frame, grouped by ``sequence`` in file order, per-frame labels."""
    groups = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        coords = [c for c in reader.fieldnames or [] if c[:1] in "xyz" and c[1:].isdigit()]
        if not coords or "sequence" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise dt.DataError(f"{path}: need columns sequence, label, x0, y0, z0, ...")
        n_joints = len(coords) // 3
        order = [f"{a}{j}" for j in range(n_joints) for a in "xyz"]
        for lineno, row in enumerate(reader, start=2):
            try:
                xyz = [float(row[c]) for c in order]
                label = int(row["label"])
            except (KeyError, ValueError, TypeError) as e:
                raise dt.DataError(f"{path}:{lineno}: {e}") from None
            g = groups.setdefault(row["sequence"], {"frames": [], "labels": [], "meta": {}})
            g["frames"].append(np.reshape(xyz, (n_joints, 3)))
            g["labels"].append(label)
            for key in ("subject", "view"):
                if row.get(key):
                    g["meta"][key] = row[key]
    return [
        dt.SkeletonSequence(np.array(g["frames"]), labels=np.array(g["labels"]), meta={"sequence": sid, **g["meta"]})
        for sid, g in groups.items()
    ]


def read_npz_sequences(path) -> list:
    """``X`` (N, T, K, 3) plus ``y`` (N,) sequence labels or (N, T) frame labels;
    optional ``subject`` / ``view`` arrays of length N."""
    with np.load(path, allow_pickle=False) as z:
        X, y = z["X"], z["y"]
        extra = {k: z[k] for k in ("subject", "view") if k in z.files}
    out = []
    for i in range(len(X)):
        meta = {k: str(v[i]) for k, v in extra.items()}
        if y.ndim == 1:
            out.append(dt.SkeletonSequence(X[i], label=int(y[i]), meta=meta))
        else:
            out.append(dt.SkeletonSequence(X[i], labels=y[i], meta=meta))
    return out


def cmd_convert(args) -> int:
    src = Path(args.input)
    fmt = args.format if args.format != "auto" else _detect_format(src)
    try:
        if fmt == "native":
            seqs = dt.load_dataset(src)
        elif fmt == "csv":
            seqs = read_csv_sequences(src)
        else:
            seqs = read_npz_sequences(src)
        dt.save_dataset(args.output, seqs)
    except (OSError, KeyError) as e:
        raise CliError(f"{src}: {e}", EXIT_IO) from None
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        header = ck.read_header(args.checkpoint)
    except OSError as e:
        raise CliError(f"{args.checkpoint}: {e.strerror or e}", EXIT_IO) from None
    except ck.CheckpointError as e:
        raise CliError(str(e), EXIT_IO) from None
    cfg = md.ModelConfig.from_dict(header["config"])
    print(f"format_version\t{header['format_version']}")
    print(f"created\t{header['created']}")
    print(f"seed\t{header['seed']}")
    for k, v in cfg.to_dict().items():
        print(f"config.{k}\t{v}")
    print("")
    print("parameter\tshape\tcount")
    total = 0
    for e in header["parameters"]:
        n = int(np.prod(e["shape"]))
        total += n
        print(f"{e['name']}\t{'x'.join(map(str, e['shape']))}\t{n}")
    print(f"total\t\t{total}")
    print(f"analytic\t\t{md.parameter_count(cfg)}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _model_flags(p):
    p.add_argument("--variant", choices=["full", "spatial-only", "temporal-only", "two-stream"])
    p.add_argument("--se", choices=["shared", "separate", "off"])
    p.add_argument("--ln-axis", choices=["operand", "features"])
    p.add_argument("--se-semantics", choices=["scale", "additive"])
    p.add_argument("--num-classes", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stmlp", description="Spatio-temporal MLP gesture recognition")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--preset", choices=sorted(cf.PRESETS))
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--data")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log path (default: <out>.log)")
    p.add_argument("--optimizer", choices=["adam", "radam", "ranger"])
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--root-joint", type=int)
    p.add_argument("--split-key")
    p.add_argument("--held-out", help="comma-separated held-out values of --split-key")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field")
    p.add_argument("--quiet", action="store_true")
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split-key")
    p.add_argument("--held-out")
    p.add_argument("--part", choices=["train", "test", "all"], default="test")
    p.add_argument("--report", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="single-window inference latency")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--preset", choices=sorted(cf.PRESETS))
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--dtype", choices=["float64", "float32"], default="float64")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("predict", help="per-frame predictions over a JSON-lines frame stream on stdin")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="write a synthetic gesture corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--joints", type=int, default=5)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=np.pi / 8, help="max per-sample phase jitter (radians)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert csv / npz / native files to the native format")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--format", choices=["auto", "native", "csv", "npz"], default="auto")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("inspect", help="print a checkpoint header and parameter table")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "variant", None):
        args.variant = args.variant.replace("-", "_")
    try:
        return args.func(args)
    except cf.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (dt.DataError, md.ShapeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
