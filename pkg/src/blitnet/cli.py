"""Command-line entry point driving every experiment from flags or a
config file.

Subcommands: propagate, logic, mnist, sweep, oracle, reconstruct. Each
run writes report.json plus per-command CSV/PGM artifacts and a
manifest.json (config echo, seed, library versions, wall time) into the
output directory. Flags override config-file values; the config file is
flat INI with one section per subcommand. The MNIST data directory
defaults to $BLITNET_DATA_DIR.
"""

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    out: str = "results"
    options: dict = field(default_factory=dict)


def load_config_file(path, section):
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    out = {}
    for sec in ("run", section):
        if parser.has_section(sec):
            out.update(dict(parser.items(sec)))
    return out


def validate_config(cfg: RunConfig):
    """Collect every violation rather than stopping at the first."""
    errors = []
    opt = cfg.options
    if cfg.command not in ("propagate", "logic", "mnist", "sweep", "oracle", "reconstruct"):
        errors.append(f"unknown command {cfg.command!r}")

    def check_prob(name):
        if name in opt and opt[name] is not None:
            p = float(opt[name])
            if not (0.0 < p <= 1.0):
                errors.append(f"{name}={p} outside (0, 1]")

    for name in ("p_exc", "p_inh_in", "p_exc_out", "p_inh_out"):
        check_prob(name)
    if "features" in opt and int(opt["features"]) <= 0:
        errors.append("features must be positive")
    if "outputs" in opt and int(opt["outputs"]) % 10 != 0:
        errors.append(f"outputs={opt['outputs']} not divisible by 10")
    if "variant" in opt and str(opt["variant"]).upper() not in ("A", "B", "C", "D"):
        errors.append(f"variant {opt['variant']!r} not one of A|B|C|D")
    if "gate" in opt and str(opt["gate"]).upper() not in ("AND", "OR", "XOR", "NOT", "ALL"):
        errors.append(f"gate {opt['gate']!r} unknown")
    if "figure" in opt:
        from .lif import PRESET_CURVES
        if opt["figure"] not in PRESET_CURVES:
            errors.append(f"figure {opt['figure']!r} not one of {sorted(PRESET_CURVES)}")
    if "inhibition" in opt and opt["inhibition"] not in ("none", "fixed", "plastic"):
        errors.append(f"inhibition {opt['inhibition']!r} not none|fixed|plastic")
    for name in ("train_images", "train_labels", "test_images", "test_labels", "snapshot"):
        if name in opt and opt[name] and not Path(opt[name]).exists():
            errors.append(f"{name} path does not exist: {opt[name]}")
    return errors


def _data_paths(args):
    base = args.data_dir or os.environ.get("BLITNET_DATA_DIR", "")
    def pick(flag, default_name):
        if flag:
            return flag
        if base:
            for suffix in ("", ".gz"):
                cand = Path(base) / (default_name + suffix)
                if cand.exists():
                    return str(cand)
        return None
    return {
        "train_images": pick(args.train_images, "train-images-idx3-ubyte"),
        "train_labels": pick(args.train_labels, "train-labels-idx1-ubyte"),
        "test_images": pick(args.test_images, "t10k-images-idx3-ubyte"),
        "test_labels": pick(args.test_labels, "t10k-labels-idx1-ubyte"),
    }


def _streams(opt):
    from .mnist_data import load_streams
    missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels")
               if not opt.get(k)]
    if missing:
        raise FileNotFoundError(
            f"MNIST files not found ({', '.join(missing)}); pass --data-dir, the "
            f"individual path flags, or set BLITNET_DATA_DIR")
    return load_streams(opt["train_images"], opt["train_labels"],
                        opt["test_images"], opt["test_labels"])


# -- subcommand runners --------------------------------------------------------

def cmd_propagate(cfg, out_dir):
    from .experiments.propagation import run_propagation
    from .experiments.reports import write_csv, write_json
    opt = cfg.options
    report = run_propagation(opt.get("variant", "D"), seed=cfg.seed,
                             train_steps=int(opt.get("train_steps", 10000)),
                             test_steps=int(opt.get("test_steps", 1000)))
    rows = [[t] + counts.tolist() for t, counts in enumerate(report.counts)]
    n_layers = report.counts.shape[1]
    write_csv(out_dir / "counts.csv", ["step"] + [f"layer{i + 1}" for i in range(n_layers)], rows)
    write_json(out_dir / "report.json", report.summary())
    print(f"variant {report.variant}: pooled r = {report.r:.3f}, "
          f"vanish {report.vanish_fraction:.1%}, avalanche {report.avalanche_fraction:.1%}")
    return 0


def cmd_logic(cfg, out_dir):
    from .experiments.logic import run_logic
    from .experiments.reports import write_csv, write_json
    gate = cfg.options.get("gate", "XOR").upper()
    report = run_logic(gate, seed=cfg.seed,
                       train_steps=int(cfg.options.get("train_steps", 10000)))
    write_json(out_dir / "report.json", report.summary())
    if report.table:
        rows = [["".join(map(str, k)), v] for k, v in sorted(report.table.items())]
        write_csv(out_dir / "table.csv", ["inputs", "output"], rows)
    print(f"{gate}: {'learned' if report.passed else 'NOT learned'} "
          f"({report.summary()['table'] or report.gates_found})")
    return 0 if report.passed else 1


def cmd_mnist(cfg, out_dir):
    from .experiments.mnist import run_mnist
    from .experiments.reports import write_csv, write_json, write_pgm
    from .topology import preset_mnist
    opt = cfg.options
    train, test = _streams(opt)
    preset = preset_mnist(n_features=int(opt.get("features", 400)),
                          n_outputs=int(opt.get("outputs", 100)),
                          exc_kind=opt.get("connectivity", "sparse"),
                          p_exc=float(opt.get("p_exc", 0.015625)),
                          p_inh_in=float(opt.get("p_inh_in", 0.015)),
                          p_exc_out=float(opt.get("p_exc_out", 0.25)),
                          p_inh_out=float(opt.get("p_inh_out", 0.9)),
                          inhibition=opt.get("inhibition", "plastic"))
    steps = int(opt.get("steps", 0)) or None
    if steps and len(train) < steps:
        train = train.tiled(steps, seed=cfg.seed)
    if steps:
        preset.horizon = steps
    report, net = run_mnist(preset, train, test, seed=cfg.seed,
                            feature_steps=steps, readout_steps=steps)
    net.save(out_dir / "network.npz")
    write_json(out_dir / "report.json", report.summary())
    write_csv(out_dir / "confusion.csv", ["true\\pred"] + list(range(10)),
              [[d] + row.tolist() for d, row in enumerate(report.confusion)])
    n_show = min(int(opt.get("feature_images", 25)), report.feature_images.shape[0])
    for j in range(n_show):
        write_pgm(out_dir / "features" / f"feature{j:04d}.pgm",
                  report.feature_images[j].reshape(28, 28))
    print(f"decoder accuracy {report.decoder_accuracy:.4f}, "
          f"spike-count accuracy {report.spike_accuracy if report.spike_accuracy is None else round(report.spike_accuracy, 4)}")
    return 0


def cmd_sweep(cfg, out_dir):
    from .experiments.mnist import sweep_connectivity
    from .experiments.reports import write_csv, write_json
    opt = cfg.options
    train, test = _streams(opt)
    p_exc_grid = [float(v) for v in str(opt.get("p_exc_grid", "0.0078,0.0156,0.0312,0.0625")).split(",")]
    p_inh_grid = [float(v) for v in str(opt.get("p_inh_grid", "0.0078,0.0156,0.0312,0.0625")).split(",")]
    steps = int(opt.get("steps", 10000))
    test_digits = int(opt.get("test_digits", 2000))
    test.images = test.images[:test_digits]
    test.labels = test.labels[:test_digits]
    surface = sweep_connectivity(p_exc_grid, p_inh_grid,
                                 n_features=int(opt.get("features", 400)),
                                 train_stream=train, test_stream=test,
                                 seed=cfg.seed, steps=steps,
                                 n_jobs=int(opt.get("jobs", 1)))
    rows = [[pe] + surface[i].tolist() for i, pe in enumerate(p_exc_grid)]
    write_csv(out_dir / "error_surface.csv", ["p_exc\\p_inh"] + p_inh_grid, rows)
    write_json(out_dir / "report.json",
               {"p_exc_grid": p_exc_grid, "p_inh_grid": p_inh_grid,
                "log10_error": surface.tolist()})
    best = np.unravel_index(np.argmin(surface), surface.shape)
    print(f"best cell: p_exc={p_exc_grid[best[0]]}, p_inh={p_inh_grid[best[1]]}, "
          f"log10 err {surface[best]:.3f}")
    return 0


def cmd_oracle(cfg, out_dir):
    from . import lif
    from .experiments.reports import write_csv, write_json
    opt = cfg.options
    name = opt.get("figure", "A4-left")
    syn, neuron = lif.PRESET_CURVES[name]
    fit = lif.fit_gamma_min(syn, neuron)
    lam_c = lif.cutoff_frequency(syn)
    lam_min = lif.min_input_rate(syn, neuron)
    points = int(opt.get("points", 12))
    sim_seconds = float(opt.get("sim_seconds", 100.0))
    hi = float(opt.get("max_rate", 5.0 * lam_min))
    grid = sorted(set(
        [round(f * lam_c, 6) for f in (0.88, 0.92, 0.96, 1.0)] +
        list(np.linspace(1.05 * lam_c, hi, max(points - 4, 4)))))
    rows = []
    for lam in grid:
        analytic_p = lif.output_rate_poisson(lam, syn, neuron, fit=fit)
        analytic_r = lif.output_rate_regular(lam, syn, neuron)
        sim_p = lif.simulated_rate(None, syn, neuron, sim_seconds * 1000.0, lam,
                                   "poisson", seed=cfg.seed)
        sim_r = lif.simulated_rate(None, syn, neuron, sim_seconds * 1000.0, lam,
                                   "regular")
        rows.append([lam, analytic_p, sim_p, analytic_r, sim_r])
    write_csv(out_dir / "curves.csv",
              ["lambda_in_hz", "poisson_analytic_hz", "poisson_simulated_hz",
               "regular_analytic_hz", "regular_simulated_hz"], rows)
    write_json(out_dir / "report.json",
               {"figure": name, "cutoff_hz": lam_c, "lambda_min_hz": lam_min,
                "gamma_min": fit.gamma, "sim_seconds": sim_seconds,
                "grid": [r[0] for r in rows]})
    print(f"{name}: cutoff {lam_c:.2f} Hz, lambda_min {lam_min:.2f} Hz, "
          f"{len(rows)} grid points written")
    return 0


def cmd_reconstruct(cfg, out_dir):
    from .core import Network
    from .experiments.mnist import layer_response, reconstruct_input
    from .experiments.reports import write_json, write_pgm
    from .mnist_data import binarize, load_idx_images, load_idx_labels
    opt = cfg.options
    net = Network.load(opt["snapshot"])
    images = binarize(load_idx_images(opt["test_images"]))
    labels = load_idx_labels(opt["test_labels"])
    index = int(opt.get("index", 0))
    img = images[index].reshape(-1)
    response = layer_response(net, img[None, :], layer=1)[0]
    recon = reconstruct_input(net, response)
    write_pgm(out_dir / "input.pgm", img.reshape(28, 28) * 255.0)
    write_pgm(out_dir / "reconstruction.pgm", recon)
    mse = float(((recon - img.reshape(28, 28)) ** 2).mean())
    write_json(out_dir / "report.json",
               {"index": index, "label": int(labels[index]),
                "active_features": int((response > 0).sum()), "pixel_mse": mse})
    print(f"digit {labels[index]} at index {index}: "
          f"{int((response > 0).sum())} active features, pixel MSE {mse:.4f}")
    return 0


RUNNERS = {"propagate": cmd_propagate, "logic": cmd_logic, "mnist": cmd_mnist,
           "sweep": cmd_sweep, "oracle": cmd_oracle, "reconstruct": cmd_reconstruct}


def build_parser():
    parser = argparse.ArgumentParser(prog="blitnet",
                                     description="spiking-network experiments and LIF gain-curve oracles")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--config", default=None, help="INI config file")

    p = sub.add_parser("propagate", help="signal propagation chain experiment")
    common(p)
    p.add_argument("--variant", default="D", help="A|B|C|D")
    p.add_argument("--train-steps", type=int, default=None)
    p.add_argument("--test-steps", type=int, default=None)

    p = sub.add_parser("logic", help="logic gate learning")
    common(p)
    p.add_argument("--gate", default="XOR", help="AND|OR|XOR|NOT|ALL")
    p.add_argument("--train-steps", type=int, default=None)

    p = sub.add_parser("mnist", help="digit classification pipeline")
    common(p)
    p.add_argument("--features", type=int, default=None)
    p.add_argument("--outputs", type=int, default=None)
    p.add_argument("--connectivity", default=None, help="full|local|sparse")
    p.add_argument("--p-exc", type=float, default=None)
    p.add_argument("--p-inh-in", type=float, default=None)
    p.add_argument("--p-exc-out", type=float, default=None)
    p.add_argument("--p-inh-out", type=float, default=None)
    p.add_argument("--inhibition", default=None, help="none|fixed|plastic")
    p.add_argument("--steps", type=int, default=None,
                   help="presentations per phase (tiles the stream if needed)")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--train-images", default=None)
    p.add_argument("--train-labels", default=None)
    p.add_argument("--test-images", default=None)
    p.add_argument("--test-labels", default=None)

    p = sub.add_parser("sweep", help="connectivity sweep over (p_exc, p_inh)")
    common(p)
    p.add_argument("--features", type=int, default=None)
    p.add_argument("--p-exc-grid", dest="p_exc_grid", default=None)
    p.add_argument("--p-inh-grid", dest="p_inh_grid", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--test-digits", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--train-images", default=None)
    p.add_argument("--train-labels", default=None)
    p.add_argument("--test-images", default=None)
    p.add_argument("--test-labels", default=None)

    p = sub.add_parser("oracle", help="LIF gain curves: analytic vs simulated")
    common(p)
    p.add_argument("--figure", default="A4-left",
                   help="A4-left|A4-right|A5-left|A5-right")
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--sim-seconds", type=float, default=None)
    p.add_argument("--max-rate", type=float, default=None)

    p = sub.add_parser("reconstruct", help="reconstruct an input from firing features")
    common(p)
    p.add_argument("--snapshot", required=True, help="trained network .npz")
    p.add_argument("--index", type=int, default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--test-images", default=None)
    p.add_argument("--test-labels", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    options = {}
    if args.config:
        options.update(load_config_file(args.config, args.command))
    for key, val in vars(args).items():
        if key in ("command", "config") or val is None:
            continue
        options[key] = val
    if args.command in ("mnist", "sweep", "reconstruct"):
        for key, val in _data_paths(args).items():
            options.setdefault(key, val)
            if options.get(key) is None and val is not None:
                options[key] = val

    seed = int(options.pop("seed", 0))
    out = options.pop("out", None) or f"results/{args.command}"
    cfg = RunConfig(command=args.command, seed=seed, out=str(out), options=options)

    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .experiments.reports import Manifest
    manifest = Manifest(cfg.command, {k: str(v) for k, v in options.items()}, seed)
    try:
        code = RUNNERS[cfg.command](cfg, out_dir)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    manifest.write(out_dir)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
