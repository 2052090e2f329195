"""``tmfuse`` command line.

Exit status: 0 on success, 1 on bad arguments or unreadable/invalid input,
2 on internal failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import _backend


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _g(x: float) -> str:
    return f"{x:.6g}"


def cmd_partition_plan(args) -> int:
    from .partition import plan_partition

    print(plan_partition(args.n, args.l, args.overlap).describe())
    return 0


def cmd_complexity(args) -> int:
    from .complexity import complexity_report, format_report
    from .model import load_config

    configs = [load_config(p) for p in args.config]
    sys.stdout.write(format_report(complexity_report(configs, args.frames)))
    return 0


def _model_for(args):
    from .model import build_model, load_config, load_model

    if getattr(args, "model", None):
        return load_model(args.model)
    if args.config is None:
        raise ValueError("either --model or --config is required")
    if args.seed is None:
        raise ValueError("--seed is required when building a model from --config")
    return build_model(load_config(args.config), seed=args.seed)


def cmd_forward(args) -> int:
    from . import ops
    from .fmat import read_matrix, write_fmat
    from .model import ConcatStage, FrameBlock, StatsPool, TmStage, frame_block_forward
    from .tensor import as_tensor
    from .tm import tm_apply

    model = _model_for(args)
    x = read_matrix(args.input)
    if x.shape[0] != model.config.n:
        raise ValueError(f"{args.input}: channels={x.shape[0]} but the model expects n={model.config.n}")
    dump = Path(args.dump_intermediates) if args.dump_intermediates else None
    if dump:
        dump.mkdir(parents=True, exist_ok=True)
    h = as_tensor(x)
    k = 0
    for stage in model.stages:
        if isinstance(stage, TmStage):
            k += 1
            if stage.merge_input:
                h = ops.merge_lanes(h)
            inter = tm_apply(h, stage.plan, stage.params)
            if dump:
                write_fmat(dump / f"tm{k}_V.fmat", inter.V.data)
                for name, t in (("F", inter.F), ("G", inter.G), ("P", inter.P), ("U", inter.U),
                                ("Z", inter.Z), ("Fprime", inter.out)):
                    for i in range(stage.plan.j):
                        write_fmat(dump / f"tm{k}_{name}_{i + 1}.fmat", t.data[i])
            h = inter.out
        elif isinstance(stage, FrameBlock):
            h = frame_block_forward(h, stage)
        elif isinstance(stage, ConcatStage):
            h = ops.splice_frames(h)
        elif isinstance(stage, StatsPool):
            h = ops.stats_pooling(h)
        else:
            h = ops.l2_normalize(ops.linear(h, stage.weight, stage.bias))
    emb = h.data
    if dump:
        write_fmat(dump / "embedding.fmat", emb[:, None])
    print("\t".join(_g(v) for v in emb))
    return 0


def cmd_gradcheck(args) -> int:
    from . import ops
    from .gradcheck import check_gradients
    from .model import build_model, load_config, model_forward
    from .tensor import parameter

    _backend.set_default_dtype(np.float64)
    cfg = load_config(args.config)
    model = build_model(cfg, seed=args.seed)
    rng = np.random.default_rng(args.seed + 1)
    x = parameter(rng.standard_normal((cfg.n, args.frames)), name="input")
    probe = rng.standard_normal(cfg.embedding_dim)
    tensors = [x] + model.parameters()
    errs = check_gradients(lambda: ops.weighted_sum(model_forward(model, x), probe), tensors)
    worst = max(errs)
    ok = worst <= args.tol
    print(f"tensors={len(tensors)}\tmax_rel_err={worst:.6g}\t{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_extract(args) -> int:
    from .features import load_audio_features
    from .fmat import write_csv, write_fmat

    feats = load_audio_features(args.input, cmvn=args.cmvn)
    if str(args.output).lower().endswith(".csv"):
        write_csv(args.output, feats)
    else:
        write_fmat(args.output, feats)
    print(f"channels={feats.shape[0]}\tframes={feats.shape[1]}")
    return 0


def cmd_train(args) -> int:
    from .complexity import count_params
    from .model import build_model, load_config, save_model
    from .train import AamConfig, TrainConfig, synth_dataset, train_toy

    cfg = load_config(args.config)
    model = build_model(cfg, seed=args.seed)
    data = synth_dataset(args.speakers, args.utts, cfg.n, args.frames, seed=args.seed, noise=args.noise)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, val_per_speaker=args.val_per_speaker,
                       seed=args.seed, aam=AamConfig(args.margin, args.scale), lr_max=args.lr_max)
    result = train_toy(model, data, tcfg)
    log = result.log_tsv()
    if args.log:
        Path(args.log).write_text(log)
    else:
        sys.stdout.write(log)
    if args.out:
        save_model(result.model, args.out)
    final = result.log[-1]
    print(f"pn={count_params(result.model)}\tfinal_loss={_g(final.loss)}\tfinal_val_eer={_g(final.val_eer)}")
    return 0


def _embedding_for(model, features_dir: Path, utt: str, cache: dict):
    from .fmat import read_matrix
    from .model import model_forward

    if utt not in cache:
        candidates = [features_dir / f"{utt}.fmat", features_dir / f"{utt}.csv", features_dir / utt]
        path = next((p for p in candidates if p.is_file()), None)
        if path is None:
            raise FileNotFoundError(f"no feature file for utterance {utt!r} under {features_dir}")
        cache[utt] = model_forward(model, read_matrix(path)).data
    return cache[utt]


def cmd_score(args) -> int:
    from .metrics import cosine_score, read_trials

    model = _model_for(args)
    rows = read_trials(args.trials)
    cache: dict = {}
    out = []
    for row in rows:
        if len(row) == 2:
            label, score = row
        else:
            label, enroll, test = row
            score = cosine_score(_embedding_for(model, Path(args.features), enroll, cache),
                                 _embedding_for(model, Path(args.features), test, cache))
        out.append(f"{'target' if label else 'nontarget'}\t{_g(score)}")
    text = "\n".join(out) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eer(args) -> int:
    from .metrics import compute_eer, read_trials, scored_trials

    res = compute_eer(scored_trials(read_trials(args.trials)))
    print(f"EER={res.eer:.6f}\tthreshold={_g(res.threshold)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tmfuse", description="Feature partition/fusion toolkit for lightweight speaker models")
    p.add_argument("--threads", type=int, default=None, help="cap internal parallelism")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("partition-plan", help="print J, stride and subset offsets")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--l", type=int, required=True)
    s.add_argument("--overlap", type=float, default=0.0)
    s.set_defaults(func=cmd_partition_plan)

    s = sub.add_parser("complexity", help="PN/MACs table for one or more configs")
    s.add_argument("--config", action="append", required=True)
    s.add_argument("--frames", type=int, default=800)
    s.set_defaults(func=cmd_complexity)

    s = sub.add_parser("forward", help="run a model on one feature matrix")
    s.add_argument("--config")
    s.add_argument("--model")
    s.add_argument("--input", required=True)
    s.add_argument("--dump-intermediates")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("gradcheck", help="finite-difference check of every model gradient")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--frames", type=int, default=6)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("extract-features", help="WAV -> log-Mel FMAT1 (or .csv)")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--cmvn", action="store_true")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train-toy", help="train on synthetic speakers")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--speakers", type=int, default=10)
    s.add_argument("--utts", type=int, default=26)
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--noise", type=float, default=3.0)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--val-per-speaker", type=int, default=6)
    s.add_argument("--lr-max", type=float, default=5e-3)
    s.add_argument("--margin", type=float, default=0.2)
    s.add_argument("--scale", type=float, default=30.0)
    s.add_argument("--out")
    s.add_argument("--log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="cosine-score a trial list")
    s.add_argument("--model", required=True)
    s.add_argument("--trials", required=True)
    s.add_argument("--features", default=".")
    s.add_argument("--out")
    s.set_defaults(func=cmd_score, config=None, seed=None)

    s = sub.add_parser("eer", help="equal error rate of a scored trial list")
    s.add_argument("--trials", required=True)
    s.set_defaults(func=cmd_eer)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _backend.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"tmfuse {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"tmfuse {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
