"""``inverse-obstacle`` command line.

Exit status is 0 on success, 2 for usage errors and 1 for numerical
failures.
"""

import argparse
import json
import logging
import sys

import numpy as np

from ..forward import ScatterConfig, solve_forward
from ..geometry import InvalidCurveError, StarCoeffs, relative_error
from ..inverse_classical import NoLevelFoundError
from ..neural import CnnArch, ModelFormatError, TrainConfig, load_model, normalize, predict, save_model, train
from . import experiments as ex
from .datasets import Dataset, DatasetFormatError, NoiseParams, add_noise, derive_rng, generate_dataset, sample_coeffs

log = logging.getLogger("inverse_obstacle")


def _common(p, *names):
    opts = {
        "k": dict(type=float, default=5.0, help="wavenumber"),
        "M": dict(type=int, default=5, help="Fourier content of the radius function"),
        "nt": dict(type=int, default=48, help="number of receivers"),
        "nd": dict(type=int, default=48, help="number of incident directions"),
        "seed": dict(type=int, default=0, help="master seed"),
        "aperture": dict(choices=("full", "half"), default="full"),
        "noise-sigma": dict(type=float, default=0.0, help="mean multiplicative noise amplitude"),
        "out": dict(required=True, help="output path"),
        "model": dict(help="model file"),
        "dataset": dict(help="dataset file"),
    }
    for name in names:
        p.add_argument(f"--{name}", **opts[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inverse-obstacle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample shapes and write a dataset file")
    _common(p, "k", "M", "nt", "nd", "seed", "aperture", "out")
    p.add_argument("--count", type=int, required=True)

    p = sub.add_parser("train", help="train a network on a dataset file")
    _common(p, "dataset", "seed", "out")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--channels", type=int, help="convolution channels (default M)")
    p.add_argument("--padding", type=int, help="kernel half-width (default 2, or 4 when M >= 20)")
    p.add_argument("--widths", type=int, nargs="+", help="hidden layer widths (default 50M 10M)")

    p = sub.add_parser("predict", help="apply a model to every sample of a dataset")
    _common(p, "model", "dataset", "out")

    p = sub.add_parser("reconstruct", help="recover one random shape")
    _common(p, "k", "M", "nt", "nd", "seed", "aperture", "noise-sigma", "out", "model", "dataset")
    p.add_argument("--method", choices=ex.METHODS, required=True)
    p.add_argument("--index", type=int, default=0, help="sample of --dataset to use")

    p = sub.add_parser("benchmark", help="compare all methods on fresh random shapes")
    _common(p, "k", "M", "seed", "aperture", "noise-sigma", "out", "model")
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--classical-n", type=int, default=200)

    p = sub.add_parser("frechet-decay", help="Frechet derivative norm along cos(jt)")
    _common(p, "k", "nt", "nd", "out")
    p.add_argument("--jmax", type=int, default=40)
    p.set_defaults(nt=200, nd=200)

    p = sub.add_parser("landscape", help="misfit on a random two-dimensional slice")
    _common(p, "k", "nt", "nd", "seed", "out")
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--extent", type=float, default=0.3)
    p.set_defaults(nt=64, nd=64)

    p = sub.add_parser("scaling", help="training-set size needed per Fourier content")
    _common(p, "seed", "out")
    p.add_argument("--k-list", type=float, nargs="+", default=[11.0, 12.0])
    p.add_argument("--eps-v", type=float, default=0.05)
    p.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128, 256, 512])
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--val", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.02, help="learning rate, halved for the final epochs")
    return parser


def _need(args, name):
    if getattr(args, name) is None:
        raise ex.UsageError(f"--{name} is required for {args.command}")
    return getattr(args, name)


def cmd_gen_data(args):
    cfg = ScatterConfig.make(args.k, args.nt, args.nd, args.aperture)
    ds = generate_dataset(args.k, args.M, args.count, cfg, args.seed, args.out)
    log.info("wrote %d samples to %s", len(ds), args.out)


def cmd_train(args):
    ds = Dataset.load(_need(args, "dataset"))
    M = ds.M
    widths = tuple(args.widths) if args.widths else (50 * max(M, 1), 10 * max(M, 1))
    arch = CnnArch(ds.n_t, ds.n_d, M, n_c=args.channels or max(M, 1),
                   p=(4 if M >= 20 else 2) if args.padding is None else args.padding, fc_widths=widths,
                   pad_mode="periodic" if ds.aperture == "full" else "zero")
    X, mu, sigma0 = normalize(ds.data.real)
    tc = TrainConfig(epochs=args.epochs, batch_size=min(args.batch_size, len(ds)), seed=args.seed)
    result = train(X, ds.coeffs, arch, tc, mu, sigma0)
    save_model(result.model, args.out)
    log.info("final training loss %.4e", result.loss_history[-1])


def cmd_predict(args):
    model = load_model(_need(args, "model"))
    ds = Dataset.load(_need(args, "dataset"))
    if (ds.n_t, ds.n_d, ds.M) != (model.arch.n_t, model.arch.n_d, model.arch.M):
        raise ex.UsageError("dataset dimensions do not match the model")
    rows = []
    for i in range(len(ds)):
        c = predict(model, ds.data[i]).c
        rows.append([i, relative_error(c, ds.coeffs[i]), *c])
    header = ["index", "relative_error"] + [f"c{j}" for j in range(2 * ds.M + 1)]
    ex.write_rows(args.out, header, rows)


def cmd_reconstruct(args):
    model = load_model(args.model) if args.model else None
    if args.method.startswith("dl") and model is None:
        raise ex.UsageError(f"method {args.method} needs --model")
    if args.dataset:
        ds = Dataset.load(args.dataset)
        c_true = StarCoeffs(ds.coeffs[args.index])
        k, M, aperture = ds.k, ds.M, ds.aperture
        n_t, n_d = ds.n_t, ds.n_d
    else:
        c_true = sample_coeffs(args.M, derive_rng(args.seed, "reconstruct-shape"))
        k, M, aperture, n_t, n_d = args.k, args.M, args.aperture, args.nt, args.nd
    cfg = ScatterConfig.make(k, n_t, n_d, aperture)
    rng = derive_rng(args.seed, "noise")
    u = add_noise(solve_forward(c_true, cfg)[0], args.noise_sigma, rng)
    nn_data = None
    if model is not None and (model.arch.n_t, model.arch.n_d) != (n_t, n_d):
        cfg_nn = ScatterConfig.make(k, model.arch.n_t, model.arch.n_d, aperture)
        nn_data = add_noise(solve_forward(c_true, cfg_nn)[0], args.noise_sigma, rng)
    c_est, report = ex.reconstruct(args.method, u, cfg, M, model, nn_data=nn_data)
    report.update(c_true=c_true.c.tolist(), c_est=c_est.c.tolist(),
                  relative_error=relative_error(c_est, c_true))
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=1)
    print(f"relative error {report['relative_error']:.3e}")


def cmd_benchmark(args):
    model = load_model(args.model) if args.model else None
    noise = NoiseParams(args.noise_sigma, args.seed) if args.noise_sigma > 0 else None
    report = ex.benchmark(args.k, args.M, args.cases, model, args.seed, noise, args.aperture, args.classical_n)
    report.write(args.out)
    print(report.summary_csv(), end="")


def cmd_frechet_decay(args):
    rows = ex.study_frechet_decay(args.k, args.jmax, args.nt, args.nd)
    ex.write_rows(args.out, ["j", "scaled_norm"], [(int(j), v) for j, v in rows])


def cmd_landscape(args):
    a, b, F = ex.study_landscape(args.k, args.grid, args.extent, args.seed, args.nt, args.nd)
    rows = [(x, y, F[i, j]) for i, x in enumerate(a) for j, y in enumerate(b)]
    ex.write_rows(args.out, ["alpha", "beta", "misfit"], rows)
    print(f"local minima: {ex.count_local_minima(F)}")


def cmd_scaling(args):
    rows = ex.study_scaling(args.k_list, args.eps_v, args.sizes, args.epochs, args.val, args.seed, lr=args.lr)
    out = []
    for r in rows:
        out.append((r.k, r.M, "budget_exceeded" if r.budget_exceeded else r.threshold,
                    json.dumps(dict(zip(r.sizes, r.errors)))))
    ex.write_rows(args.out, ["k", "M", "n_train", "validation_errors"], out)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "predict": cmd_predict,
    "reconstruct": cmd_reconstruct,
    "benchmark": cmd_benchmark,
    "frechet-decay": cmd_frechet_decay,
    "landscape": cmd_landscape,
    "scaling": cmd_scaling,
}

NUMERICAL_ERRORS = (np.linalg.LinAlgError, FloatingPointError, InvalidCurveError, NoLevelFoundError, RuntimeError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ex.UsageError, DatasetFormatError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
