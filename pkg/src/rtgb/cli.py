"""Command line interface: ``rtgb <subcommand> [flags]``.

Every flag default can be overridden by an environment variable named
``RTGB_<FLAG>`` (upper case, dashes as underscores), e.g. ``RTGB_SEED=3``.
Each command prints one ``key=value`` summary line on success.
"""
import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dynamics_data as dd
from . import evaluation as ev
from . import rules as rl
from . import temporal as tp

log = logging.getLogger("rtgb")

ENV_PREFIX = "RTGB_"


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show the default of every option, including ones without help text."""

    def _get_help_string(self, action):
        help = action.help or ""
        if "%(default)" not in help and action.default is not argparse.SUPPRESS and action.option_strings:
            help += " (default: %(default)s)"
        return help.strip()


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0, help="run seed")
    g.add_argument("--threads", type=int, default=1, help="worker threads for generation and rule extraction")
    g.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return p


def _parser():
    common = _common()
    fmt = _Formatter
    parser = argparse.ArgumentParser(prog="rtgb", description="RTGB-RBM dynamics learning and rule extraction")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help):
        return sub.add_parser(name, help=help, parents=[common], formatter_class=fmt)

    p = cmd("generate-balls", "simulate bouncing-ball videos")
    p.add_argument("--out", required=True, help="output .rbmd dataset")
    p.add_argument("--balls", type=int, default=1)
    p.add_argument("--radius", type=float, default=0.12, help="ball radius (box is the unit square)")
    p.add_argument("--speed", type=float, default=0.05, help="distance per step")
    p.add_argument("--px", type=int, default=32, help="frame side in pixels")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--sequences", type=int, default=100)

    p = cmd("generate-sprites", "simulate moving-digit videos")
    p.add_argument("--out", required=True)
    p.add_argument("--sprites", type=int, default=2)
    p.add_argument("--digits", default="0123456789", help="glyphs to draw from")
    p.add_argument("--px", type=int, default=32)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--sequences", type=int, default=100)
    p.add_argument("--speed", type=float, default=0.04)
    p.add_argument("--threshold", type=float, default=0.1, help="binarization threshold")

    p = cmd("import", "convert a raw frame tensor to a dataset")
    p.add_argument("--input", required=True, help="headerless tensor or .npy file")
    p.add_argument("--dims", required=True, help="four sizes in file order, e.g. 20x10000x64x64")
    p.add_argument("--order", choices=["tshw", "sthw"], default="tshw")
    p.add_argument("--elem", choices=["u8", "f32"], default="u8")
    p.add_argument("--binarize", type=float, default=None, help="threshold pixels at this value")
    p.add_argument("--out", required=True)

    p = cmd("train", "train an RTGB-RBM (or RT-RBM with --binary)")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", type=int, default=10)
    p.add_argument("--cd", type=int, default=20, help="CD steps K")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--sigma", type=float, default=1.0, help="fixed visible standard deviation s")
    p.add_argument("--chains", type=int, default=1, help="negative-phase chains per sequence")
    p.add_argument("--init-scale", type=float, default=0.01)
    p.add_argument("--prefix", type=int, default=3, help="input frames T for the epoch loss")
    p.add_argument("--total", type=int, default=8, help="T': frames T..T'-1 are scored")
    p.add_argument("--holdout", action="store_true", help="score the last 10%% of sequences only")
    p.add_argument("--binary", action="store_true", help="binary visible units")
    p.add_argument("--init", default=None, help="start from this checkpoint")
    p.add_argument("--out", required=True, help="output .rtgb checkpoint")
    p.add_argument("--curve", default=None, help="learning curve CSV (epoch,loss)")

    p = cmd("predict", "model-based prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--prefix", type=int, default=3)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--sequence", type=int, default=0, help="sequence whose frames are exported")
    p.add_argument("--frames", default=None, help="directory for predicted PGM frames")

    p = cmd("extract-rules", "extract transition rules by Gibbs sampling")
    p.add_argument("--model", required=True)
    p.add_argument("--bodies", choices=["enumerate", "data"], default="enumerate")
    p.add_argument("--data", default=None, help="dataset for --bodies data")
    p.add_argument("--k", type=int, default=100, help="Gibbs sweeps per chain")
    p.add_argument("--chains", type=int, default=20000)
    p.add_argument("--out", required=True)

    p = cmd("rule-predict", "rule-based prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--prefix", type=int, default=3)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--sequence", type=int, default=0)
    p.add_argument("--frames", default=None)

    p = cmd("eval", "prediction loss of model, rules and the persistence baseline")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rules", default=None)
    p.add_argument("--prefix", type=int, default=3)
    p.add_argument("--total", type=int, default=8)

    p = cmd("feature-maps", "export one feature map image per hidden unit")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = cmd("rule-figure", "feature maps of one rule's body and head")
    p.add_argument("--model", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--head", type=int, default=None, help="restrict to rules with this head unit")
    p.add_argument("--body", type=int, default=None, help="body pattern (unit 0 = least significant bit)")
    p.add_argument("--out", required=True)

    for action in [a for sp in sub.choices.values() for a in sp._actions]:
        _apply_env_default(action)
        if not action.help:
            action.help = "(default: %(default)s)"
    return parser, sub


def _apply_env_default(action):
    if not action.option_strings or action.dest == "help":
        return
    value = os.environ.get(ENV_PREFIX + action.dest.upper())
    if value is None:
        return
    if isinstance(action, argparse._StoreTrueAction):
        action.default = value.lower() in ("1", "true", "yes")
    else:
        action.default = action.type(value) if action.type else value
        action.required = False


def _summary(**kv):
    print(" ".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in kv.items()))


def _check_window(ds, prefix, end):
    if not 1 <= prefix < end <= ds.steps:
        raise ValueError(f"need 1 <= prefix ({prefix}) < {end} <= sequence length ({ds.steps})")


def _cmd_generate_balls(a):
    cfg = dd.BallWorldConfig(a.balls, a.radius, a.speed, a.px, a.steps, a.sequences, a.seed)
    ds = dd.simulate_balls(cfg, threads=a.threads)
    dd.save_dataset(ds, a.out)
    _summary(command="generate-balls", sequences=ds.n_sequences, steps=ds.steps, px=ds.frame_px, path=a.out)


def _cmd_generate_sprites(a):
    cfg = dd.SpriteWorldConfig(
        a.sprites, tuple(int(d) for d in a.digits), a.px, a.steps, a.sequences, a.speed, a.seed, a.threshold
    )
    ds = dd.simulate_sprites(cfg, threads=a.threads)
    dd.save_dataset(ds, a.out)
    _summary(command="generate-sprites", sequences=ds.n_sequences, steps=ds.steps, px=ds.frame_px, path=a.out)


def _cmd_import(a):
    dims = tuple(int(x) for x in a.dims.lower().replace(",", "x").split("x"))
    ds = dd.import_raw_tensor(a.input, dd.RawLayout(dims, a.order, a.elem, a.binarize))
    dd.save_dataset(ds, a.out)
    _summary(command="import", sequences=ds.n_sequences, steps=ds.steps, px=ds.frame_px, path=a.out)


def _cmd_train(a):
    ds = dd.load_dataset(a.data)
    _check_window(ds, a.prefix, a.total)
    mode = tp.VisibleMode.BINARY if a.binary else tp.VisibleMode.CONTINUOUS
    if a.init:
        params = tp.load_rtgb(a.init)
    else:
        params = tp.RtgbParams.initial(
            ds.frame_px**2, a.hidden, np.random.default_rng([a.seed, 0]), scale=a.init_scale, s=a.sigma, mode=mode
        )
    cfg = tp.TrainConfig(a.cd, a.lr, a.epochs, a.seed, a.prefix, a.total, a.holdout, a.chains)
    params, curve = tp.train(params, ds.data, cfg, progress=lambda e, l: log.info("epoch %d loss %.6f", e, l))
    tp.save_rtgb(params, a.out)
    if a.curve:
        ev.write_curve_csv(a.curve, curve)
    _summary(command="train", loss=curve[-1], initial_loss=curve[0], epochs=a.epochs, path=a.out)


def _export(seq, out_dir, index, n):
    if out_dir is None:
        return ""
    if not 0 <= index < n:
        raise ValueError(f"--sequence {index} out of range [0, {n})")
    ev.export_frames(seq[index], out_dir)
    return out_dir


def _cmd_predict(a):
    params = tp.load_rtgb(a.model)
    ds = dd.load_dataset(a.data)
    if not 1 <= a.prefix < ds.steps or a.horizon < 1:
        raise ValueError("need 1 <= prefix < sequence length and horizon >= 1")
    data = ds.data.astype(np.float64)
    pred = tp.predict(params, data[:, : a.prefix], a.horizon, np.random.default_rng(a.seed))
    kv = dict(command="predict", sequences=len(data), horizon=a.horizon)
    end = a.prefix + a.horizon
    if end <= ds.steps:
        full = data.copy()
        full[:, a.prefix:end] = pred
        kv["loss"] = ev.prediction_loss(data, full, a.prefix, end).mean_loss
    kv["frames"] = _export(pred, a.frames, a.sequence, len(data))
    _summary(**kv)


def _cmd_extract_rules(a):
    params = tp.load_rtgb(a.model)
    if a.bodies == "enumerate":
        bodies = rl.enumerate_bodies(params.n_hidden)
    else:
        if not a.data:
            raise ValueError("--bodies data requires --data")
        bodies = rl.data_bodies(params, dd.load_dataset(a.data).data)
    rs = rl.extract_rules(params, bodies, rl.GibbsConfig(a.k, a.chains, a.seed), threads=a.threads)
    Path(a.out).write_text(rl.serialize_rules(rs), encoding="utf-8", newline="\n")
    _summary(command="extract-rules", bodies=len(rs.body_patterns()), rules_count=len(rs), path=a.out)


def _load_rules(path):
    return rl.parse_rules(Path(path).read_text(encoding="utf-8"))


def _cmd_rule_predict(a):
    params = tp.load_rtgb(a.model)
    rs = _load_rules(a.rules)
    ds = dd.load_dataset(a.data)
    if not 1 <= a.prefix < ds.steps or a.horizon < 1:
        raise ValueError("need 1 <= prefix < sequence length and horizon >= 1")
    data = ds.data.astype(np.float64)
    pred = rl.rule_predict(params, rs, data[:, : a.prefix], a.horizon, np.random.default_rng(a.seed))
    kv = dict(command="rule-predict", sequences=len(data), horizon=a.horizon)
    end = a.prefix + a.horizon
    if end <= ds.steps:
        full = data.copy()
        full[:, a.prefix:end] = pred
        kv["loss"] = ev.prediction_loss(data, full, a.prefix, end).mean_loss
    kv["frames"] = _export(pred, a.frames, a.sequence, len(data))
    _summary(**kv)


def _cmd_eval(a):
    params = tp.load_rtgb(a.model)
    ds = dd.load_dataset(a.data)
    _check_window(ds, a.prefix, a.total)
    data = ds.data.astype(np.float64)
    kv = dict(command="eval", sequences=len(data))
    kv["loss"] = tp.evaluate(params, data, a.prefix, a.total, np.random.default_rng(a.seed)).mean_loss
    if a.rules:
        rs = _load_rules(a.rules)
        full = data.copy()
        full[:, a.prefix:a.total] = rl.rule_predict(
            params, rs, data[:, : a.prefix], a.total - a.prefix, np.random.default_rng(a.seed)
        )
        kv["rule_loss"] = ev.prediction_loss(data, full, a.prefix, a.total).mean_loss
    persist = data.copy()
    persist[:, a.prefix:a.total] = data[:, a.prefix - 1: a.prefix]
    kv["persist_loss"] = ev.prediction_loss(data, persist, a.prefix, a.total).mean_loss
    _summary(**kv)


def _cmd_feature_maps(a):
    params = tp.load_rtgb(a.model)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for j in range(params.n_hidden):
        ev.write_pgm(out / f"feature_{j:03d}.pgm", ev.feature_map(params, j).pixels)
    _summary(command="feature-maps", units=params.n_hidden, path=a.out)


def _cmd_rule_figure(a):
    params = tp.load_rtgb(a.model)
    rs = _load_rules(a.rules)
    candidates = [
        r for r in rs
        if (a.head is None or r.head.unit == a.head) and (a.body is None or r.body_pattern == a.body)
    ]
    if not candidates:
        raise ValueError("no rule matches the given --head/--body")
    rule = max(candidates, key=lambda r: (r.prob, -r.body_pattern, -r.head.unit))
    files = ev.rule_figure(params, rule, a.out)
    _summary(command="rule-figure", prob=rule.prob, head=rule.head.unit, body=rule.body_pattern, files=len(files), path=a.out)


COMMANDS = {
    "generate-balls": _cmd_generate_balls,
    "generate-sprites": _cmd_generate_sprites,
    "import": _cmd_import,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "extract-rules": _cmd_extract_rules,
    "rule-predict": _cmd_rule_predict,
    "eval": _cmd_eval,
    "feature-maps": _cmd_feature_maps,
    "rule-figure": _cmd_rule_figure,
}


def run(argv=None):
    """Parse ``argv`` and run the command. Returns 0, 1 (runtime error) or 2 (usage error)."""
    parser, _ = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    if args.threads < 1:
        print("rtgb: error: --threads must be >= 1", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except Exception as e:  # noqa: BLE001 - every failure becomes a one-line diagnostic
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"rtgb {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())
